//! Dataset container: a text manifest followed by fixed-stride binary
//! records, so readers can seek (or memory-map) straight to any record.
//!
//! Per record: pilot measurements and the true target channel as
//! interleaved (re, im) little-endian f32, deformation shapes as f64, and
//! the SNR the record was observed at as one f64. Shapes come last in each
//! record group so the complex payloads stay 4-byte aligned.

use super::config::ExperimentConfig;
use crate::channel::{
    observe_pilots, sample_channel_realization, synthesize_channel, ChannelVector, PilotSet,
};
use crate::error::{FimError, Result};
use crate::fno::{build_input_features, TrainSample};
use crate::geometry::DeformationShape;
use crate::sparse::pilot_shape_set;
use ndarray::Array1;
use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::io::{BufWriter, Write};
use std::path::Path;

const MAGIC: &str = "FIMDATA v1";

/// Which split a dataset was generated for; train and validation records
/// draw a fresh integer SNR per record, test records use a fixed SNR.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for Split {
    type Err = FimError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(FimError::InvalidConfig(format!("unknown split {other}"))),
        }
    }
}

/// One supervised record: what was measured, where, and the answer.
#[derive(Debug, Clone)]
pub struct DatasetRecord {
    pub pilots: PilotSet,
    pub target_shape: DeformationShape,
    pub true_channel: ChannelVector,
    pub snr_db: f64,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct DatasetHeader {
    pub split: Split,
    pub count: usize,
    pub nx: usize,
    pub nz: usize,
    pub m_pilots: usize,
    /// Deformation bound in meters (shapes validate against it on load).
    pub bound: f64,
    pub seed: u64,
    pub record_bytes: usize,
    /// Fixed SNR for test splits, `null` for per-record sampling.
    pub fixed_snr_db: Option<f64>,
    /// Integer SNR sampling range for train/val splits.
    pub snr_range_db: (i64, i64),
    /// The generating configuration, echoed for provenance.
    pub config: serde_json::Value,
}

fn record_bytes(m: usize, n: usize) -> usize {
    // measurements (m*n c32) + truth (n c32) + shapes ((m+1)*n f64) + snr f64
    m * n * 8 + n * 8 + (m + 1) * n * 8 + 8
}

/// Deterministic per-record RNG stream.
pub fn record_rng(seed: u64, index: u64) -> ChaCha8Rng {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(1));
    rng
}

/// Generate `count` records: a fresh channel realization and a fresh
/// uniform-random target shape per record, with pilot measurements at the
/// record's SNR. Pilot shapes are the fixed configured set.
pub fn generate_records(
    cfg: &ExperimentConfig,
    split: Split,
    count: usize,
    seed: u64,
    fixed_snr_db: Option<f64>,
) -> Result<Vec<DatasetRecord>> {
    let geom = cfg.geometry()?;
    let bound = cfg.bound();
    let m = *cfg.pilots.counts.first().expect("validated config");
    let shapes = pilot_shape_set(m, cfg.pilots.kind, &geom, bound, cfg.seed)?;
    let (lo, hi) = cfg.training.snr_range_db;
    if split == Split::Test && fixed_snr_db.is_none() {
        return Err(FimError::InvalidConfig("test split needs a fixed SNR".into()));
    }
    let n = geom.n_elements();
    let records = crate::parallel::par_map(count, |i| -> Result<DatasetRecord> {
        let mut rng = record_rng(seed, i as u64);
        let snr_db = match (split, fixed_snr_db) {
            (_, Some(snr)) => snr,
            (Split::Train | Split::Val, None) => rng.random_range(lo..=hi) as f64,
            (Split::Test, None) => unreachable!("checked above"),
        };
        let realization = sample_channel_realization(&cfg.channel, &mut rng);
        let target_values: Vec<f64> = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
        let target_shape = DeformationShape::new(target_values, bound)?;
        let true_channel = synthesize_channel(&realization, &target_shape, &geom)?;
        let pilots = observe_pilots(&realization, &shapes, snr_db, &geom, &mut rng)?;
        Ok(DatasetRecord { pilots, target_shape, true_channel, snr_db })
    });
    records.into_iter().collect()
}

/// Generate and write a dataset file.
pub fn generate_dataset(
    cfg: &ExperimentConfig,
    split: Split,
    count: usize,
    seed: u64,
    fixed_snr_db: Option<f64>,
    path: &Path,
) -> Result<DatasetHeader> {
    let records = generate_records(cfg, split, count, seed, fixed_snr_db)?;
    let geom = cfg.geometry()?;
    let m = *cfg.pilots.counts.first().expect("validated config");
    let header = DatasetHeader {
        split,
        count,
        nx: geom.nx,
        nz: geom.nz,
        m_pilots: m,
        bound: cfg.bound(),
        seed,
        record_bytes: record_bytes(m, geom.n_elements()),
        fixed_snr_db,
        snr_range_db: cfg.training.snr_range_db,
        config: serde_json::to_value(cfg).expect("config serializes"),
    };
    write_dataset(path, &header, &records)?;
    Ok(header)
}

fn push_c32(buf: &mut Vec<u8>, v: &ChannelVector) {
    for z in v {
        buf.extend_from_slice(&(z.re as f32).to_le_bytes());
        buf.extend_from_slice(&(z.im as f32).to_le_bytes());
    }
}

fn push_f64(buf: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn write_dataset(path: &Path, header: &DatasetHeader, records: &[DatasetRecord]) -> Result<()> {
    if records.len() != header.count {
        return Err(FimError::DimensionMismatch("record count vs header".into()));
    }
    let mut file = BufWriter::new(std::fs::File::create(path)?);
    writeln!(file, "{MAGIC}")?;
    let manifest = serde_json::to_string(header)
        .map_err(|e| FimError::Format(format!("manifest encode: {e}")))?;
    writeln!(file, "{manifest}")?;
    let mut buf = Vec::with_capacity(header.record_bytes);
    for rec in records {
        buf.clear();
        for meas in &rec.pilots.measurements {
            push_c32(&mut buf, meas);
        }
        push_c32(&mut buf, &rec.true_channel);
        for shape in &rec.pilots.shapes {
            push_f64(&mut buf, shape.values());
        }
        push_f64(&mut buf, rec.target_shape.values());
        buf.extend_from_slice(&rec.snr_db.to_le_bytes());
        if buf.len() != header.record_bytes {
            return Err(FimError::Format(format!(
                "record stride {} != declared {}",
                buf.len(),
                header.record_bytes
            )));
        }
        file.write_all(&buf)?;
    }
    Ok(())
}

fn take_f32(bytes: &[u8], pos: &mut usize) -> f64 {
    let v = f32::from_le_bytes(bytes[*pos..*pos + 4].try_into().unwrap()) as f64;
    *pos += 4;
    v
}

fn take_f64(bytes: &[u8], pos: &mut usize) -> f64 {
    let v = f64::from_le_bytes(bytes[*pos..*pos + 8].try_into().unwrap());
    *pos += 8;
    v
}

pub fn read_dataset(path: &Path) -> Result<(DatasetHeader, Vec<DatasetRecord>)> {
    let raw = std::fs::read(path)?;
    let head_end = raw
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| FimError::Format("missing header".into()))?;
    if &raw[..head_end] != MAGIC.as_bytes() {
        return Err(FimError::Format("not a dataset file".into()));
    }
    let manifest_end = raw[head_end + 1..]
        .iter()
        .position(|&b| b == b'\n')
        .map(|p| head_end + 1 + p)
        .ok_or_else(|| FimError::Format("missing manifest".into()))?;
    let header: DatasetHeader = serde_json::from_slice(&raw[head_end + 1..manifest_end])
        .map_err(|e| FimError::Format(format!("manifest decode: {e}")))?;
    let blob = &raw[manifest_end + 1..];
    let n = header.nx * header.nz;
    let m = header.m_pilots;
    let expected = record_bytes(m, n);
    if expected != header.record_bytes {
        return Err(FimError::Format("record stride disagrees with dimensions".into()));
    }
    if blob.len() != header.count * expected {
        return Err(FimError::Format(format!(
            "blob holds {} bytes, expected {}",
            blob.len(),
            header.count * expected
        )));
    }
    let mut records = Vec::with_capacity(header.count);
    for r in 0..header.count {
        let bytes = &blob[r * expected..(r + 1) * expected];
        let mut pos = 0usize;
        let mut measurements = Vec::with_capacity(m);
        for _ in 0..m {
            let v: ChannelVector = (0..n)
                .map(|_| {
                    let re = take_f32(bytes, &mut pos);
                    let im = take_f32(bytes, &mut pos);
                    Complex64::new(re, im)
                })
                .collect();
            measurements.push(v);
        }
        let true_channel: ChannelVector = (0..n)
            .map(|_| {
                let re = take_f32(bytes, &mut pos);
                let im = take_f32(bytes, &mut pos);
                Complex64::new(re, im)
            })
            .collect();
        let mut shapes = Vec::with_capacity(m);
        for _ in 0..m {
            let values: Vec<f64> = (0..n).map(|_| take_f64(bytes, &mut pos)).collect();
            shapes.push(DeformationShape::new(values, header.bound)?);
        }
        let target_values: Vec<f64> = (0..n).map(|_| take_f64(bytes, &mut pos)).collect();
        let target_shape = DeformationShape::new(target_values, header.bound)?;
        let snr_db = take_f64(bytes, &mut pos);
        let noise_variance = 10f64.powf(-snr_db / 10.0);
        records.push(DatasetRecord {
            pilots: PilotSet::new(shapes, measurements, noise_variance)?,
            target_shape,
            true_channel,
            snr_db,
        });
    }
    Ok((header, records))
}

/// Convert records to supervised training samples (features + truth).
pub fn to_train_samples(records: &[DatasetRecord]) -> Result<Vec<TrainSample>> {
    records
        .iter()
        .map(|rec| {
            let features = build_input_features(&rec.pilots, &rec.target_shape)?;
            Ok(TrainSample { features, truth: rec.true_channel.clone() })
        })
        .collect()
}

/// The noisy measurement of the target would be the trivial estimator; the
/// training truth is the noise-free channel, so keep a helper to check
/// record consistency in tests and diagnostics.
pub fn record_noise_nmse(rec: &DatasetRecord) -> Result<f64> {
    let den: f64 = rec.true_channel.iter().map(|v| v.norm_sqr()).sum();
    if den <= 0.0 {
        return Err(FimError::InvalidConfig("zero-power record".into()));
    }
    let zeros: ChannelVector = Array1::zeros(rec.true_channel.len());
    crate::channel::nmse(&zeros, &rec.true_channel)
}
