//! Self-describing checkpoint files: a text header and JSON manifest
//! (architecture, tensor table, normalization statistics) followed by the
//! tensor blobs as little-endian 32-bit floats in manifest order. Complex
//! tensors are stored as interleaved (re, im) float pairs.

use super::model::{FnoCore, FnoParams};
use super::{FnoConfig, NormStats};
use crate::error::{FimError, Result};
use num_complex::Complex64;
use std::io::Write;
use std::path::Path;

const MAGIC: &str = "FIMCKPT v1";

#[derive(serde::Serialize, serde::Deserialize)]
struct Manifest {
    fno_config: FnoConfig,
    norm: NormStats,
    tensors: Vec<TensorEntry>,
}

#[derive(serde::Serialize, serde::Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    /// "f32" for real tensors, "c32" for interleaved complex pairs.
    dtype: String,
    /// Byte offset into the blob section.
    offset: usize,
    /// Byte length.
    len: usize,
}

enum TensorData {
    Real(Vec<f64>, Vec<usize>),
    Cplx(Vec<Complex64>, Vec<usize>),
}

fn collect_tensors(core: &FnoCore) -> Vec<(String, TensorData)> {
    let mut out: Vec<(String, TensorData)> = Vec::new();
    let names = core.tensor_names();
    let push_real1 = |out: &mut Vec<_>, name: &str, a: &ndarray::Array1<f64>| {
        out.push((name.to_string(), TensorData::Real(a.to_vec(), vec![a.len()])));
    };
    let push_real2 = |out: &mut Vec<_>, name: &str, a: &ndarray::Array2<f64>| {
        out.push((
            name.to_string(),
            TensorData::Real(a.iter().copied().collect(), a.shape().to_vec()),
        ));
    };
    let push_cplx = |out: &mut Vec<_>, name: &str, a: &ndarray::Array3<Complex64>| {
        out.push((
            name.to_string(),
            TensorData::Cplx(a.iter().copied().collect(), a.shape().to_vec()),
        ));
    };

    let mut it = names.iter();
    push_real2(&mut out, it.next().unwrap(), &core.lifting_weight);
    push_real1(&mut out, it.next().unwrap(), &core.lifting_bias);
    for b in core.encoder.iter().chain([&core.bottleneck]).chain(&core.decoder) {
        push_cplx(&mut out, it.next().unwrap(), &b.spectral);
        push_real2(&mut out, it.next().unwrap(), &b.weight);
        push_real1(&mut out, it.next().unwrap(), &b.bias);
    }
    push_real2(&mut out, it.next().unwrap(), &core.proj_hidden_weight);
    push_real1(&mut out, it.next().unwrap(), &core.proj_hidden_bias);
    push_real2(&mut out, it.next().unwrap(), &core.proj_out_weight);
    push_real1(&mut out, it.next().unwrap(), &core.proj_out_bias);
    out
}

/// Serialize parameters and their architecture to a checkpoint file.
pub fn save_checkpoint(path: &Path, params: &FnoParams, cfg: &FnoConfig) -> Result<()> {
    cfg.validate()?;
    let tensors = collect_tensors(&params.core);
    let mut blob: Vec<u8> = Vec::new();
    let mut entries = Vec::with_capacity(tensors.len());
    for (name, data) in &tensors {
        let offset = blob.len();
        let (dtype, shape) = match data {
            TensorData::Real(values, shape) => {
                for v in values {
                    blob.extend_from_slice(&(*v as f32).to_le_bytes());
                }
                ("f32", shape.clone())
            }
            TensorData::Cplx(values, shape) => {
                for v in values {
                    blob.extend_from_slice(&(v.re as f32).to_le_bytes());
                    blob.extend_from_slice(&(v.im as f32).to_le_bytes());
                }
                ("c32", shape.clone())
            }
        };
        entries.push(TensorEntry {
            name: name.clone(),
            shape,
            dtype: dtype.into(),
            offset,
            len: blob.len() - offset,
        });
    }
    let manifest = Manifest {
        fno_config: cfg.clone(),
        norm: params.norm.clone(),
        tensors: entries,
    };
    let manifest_json = serde_json::to_string(&manifest)
        .map_err(|e| FimError::Format(format!("manifest encode: {e}")))?;
    let mut file = std::fs::File::create(path)?;
    writeln!(file, "{MAGIC}")?;
    writeln!(file, "{manifest_json}")?;
    file.write_all(&blob)?;
    Ok(())
}

fn read_f32(bytes: &[u8], idx: usize) -> f64 {
    let arr: [u8; 4] = bytes[4 * idx..4 * idx + 4].try_into().unwrap();
    f32::from_le_bytes(arr) as f64
}

/// Load a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint(path: &Path) -> Result<(FnoParams, FnoConfig)> {
    let raw = std::fs::read(path)?;
    let head_end = raw
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| FimError::Format("missing header line".into()))?;
    if &raw[..head_end] != MAGIC.as_bytes() {
        return Err(FimError::Format("not a checkpoint file".into()));
    }
    let manifest_end = raw[head_end + 1..]
        .iter()
        .position(|&b| b == b'\n')
        .map(|p| head_end + 1 + p)
        .ok_or_else(|| FimError::Format("missing manifest line".into()))?;
    let manifest: Manifest = serde_json::from_slice(&raw[head_end + 1..manifest_end])
        .map_err(|e| FimError::Format(format!("manifest decode: {e}")))?;
    let cfg = manifest.fno_config;
    cfg.validate()?;
    if manifest.norm.input_mean.len() != cfg.input_channels {
        return Err(FimError::Format("norm stats do not match input channels".into()));
    }
    let blob = &raw[manifest_end + 1..];

    let mut core = FnoCore::zeros(&cfg);
    let names = core.tensor_names();
    if names.len() != manifest.tensors.len() {
        return Err(FimError::Format(format!(
            "checkpoint has {} tensors, model expects {}",
            manifest.tensors.len(),
            names.len()
        )));
    }
    let expected = collect_tensors(&core);
    for ((entry, name), (_, proto)) in manifest.tensors.iter().zip(&names).zip(&expected) {
        if &entry.name != name {
            return Err(FimError::Format(format!(
                "tensor order mismatch: {} vs expected {name}",
                entry.name
            )));
        }
        let (proto_shape, is_cplx) = match proto {
            TensorData::Real(_, s) => (s.clone(), false),
            TensorData::Cplx(_, s) => (s.clone(), true),
        };
        if entry.shape != proto_shape || entry.dtype != if is_cplx { "c32" } else { "f32" } {
            return Err(FimError::Format(format!("tensor {} shape/dtype mismatch", entry.name)));
        }
        if entry.offset + entry.len > blob.len() {
            return Err(FimError::Format(format!("tensor {} overruns blob", entry.name)));
        }
    }

    // fill the flat parameter vector in canonical order and rebuild
    let mut flat = Vec::with_capacity(core.param_count());
    for entry in &manifest.tensors {
        let bytes = &blob[entry.offset..entry.offset + entry.len];
        let count = entry.len / 4;
        for i in 0..count {
            flat.push(read_f32(bytes, i));
        }
    }
    core.unflatten_from(&flat)?;
    Ok((FnoParams { core, norm: manifest.norm }, cfg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fno::Activation;

    fn tiny_cfg() -> FnoConfig {
        FnoConfig {
            latent_width: 3,
            encoder_levels: 1,
            modes_per_resolution: vec![3, 2],
            input_channels: 7,
            output_channels: 2,
            activation: Activation::Gelu,
        }
    }

    #[test]
    fn checkpoint_round_trip_preserves_params_to_f32() {
        let cfg = tiny_cfg();
        let mut params = FnoParams::init_seeded(&cfg, 40);
        params.norm.input_mean[2] = 0.123;
        params.norm.output_scale = [0.7, 0.9];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&path, &params, &cfg).unwrap();
        let (loaded, loaded_cfg) = load_checkpoint(&path).unwrap();
        assert_eq!(loaded_cfg, cfg);
        assert_eq!(loaded.norm.input_mean[2], 0.123);
        let a = params.core.flatten();
        let b = loaded.core.flatten();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= x.abs().max(1.0) * 1e-6, "{x} vs {y}");
        }
        // a second save of the loaded params is byte-identical
        let path2 = dir.path().join("model2.ckpt");
        save_checkpoint(&path2, &loaded, &loaded_cfg).unwrap();
        let (reloaded, _) = load_checkpoint(&path2).unwrap();
        assert_eq!(reloaded.core.flatten(), loaded.core.flatten());
    }

    #[test]
    fn serialized_size_is_resolution_independent() {
        // the checkpoint layout depends only on the architecture
        let cfg = tiny_cfg();
        let params = FnoParams::init_seeded(&cfg, 41);
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.ckpt");
        save_checkpoint(&p1, &params, &cfg).unwrap();
        let expected = 4 * params.core.param_count();
        let blob_len = std::fs::metadata(&p1).unwrap().len() as usize;
        assert!(blob_len > expected, "file must include header + manifest");
        let (loaded, _) = load_checkpoint(&p1).unwrap();
        assert_eq!(loaded.core.param_count(), params.core.param_count());
    }

    #[test]
    fn malformed_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let bad = dir.path().join("bad.ckpt");
        std::fs::write(&bad, b"NOT A CHECKPOINT\n{}\n").unwrap();
        assert!(load_checkpoint(&bad).is_err());

        let cfg = tiny_cfg();
        let params = FnoParams::init_seeded(&cfg, 42);
        let good = dir.path().join("good.ckpt");
        save_checkpoint(&good, &params, &cfg).unwrap();
        let mut bytes = std::fs::read(&good).unwrap();
        bytes.truncate(bytes.len() - 10);
        let truncated = dir.path().join("trunc.ckpt");
        std::fs::write(&truncated, &bytes).unwrap();
        assert!(load_checkpoint(&truncated).is_err());
    }
}
