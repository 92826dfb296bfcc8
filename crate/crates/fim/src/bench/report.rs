//! Report rows and CSV serialization. Formatting goes through Rust's
//! shortest-round-trip float display, so identical runs produce identical
//! bytes. Each written output gets a sidecar `<name>.config.json` carrying
//! the effective configuration.

use super::config::ExperimentConfig;
use crate::error::Result;
use std::path::Path;

/// One benchmark cell: an estimator evaluated at one (SNR, M) point.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub estimator: String,
    pub snr_db: f64,
    pub m_pilots: usize,
    pub n_elements: usize,
    pub clusters: usize,
    pub trials: usize,
    pub nmse_mean: f64,
    pub nmse_db: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub const CSV_HEADER: &'static str =
        "estimator,snr_db,M,N,L,trials,nmse_mean,nmse_db,stderr";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                r.estimator,
                r.snr_db,
                r.m_pilots,
                r.n_elements,
                r.clusters,
                r.trials,
                r.nmse_mean,
                r.nmse_db,
                r.stderr
            ));
        }
        out
    }

    /// Row for an estimator at a given cell, if present.
    pub fn find(&self, estimator: &str, snr_db: f64, m_pilots: usize) -> Option<&BenchRow> {
        self.rows
            .iter()
            .find(|r| r.estimator == estimator && r.snr_db == snr_db && r.m_pilots == m_pilots)
    }
}

/// Aggregate a set of per-trial NMSE values into (mean, dB, stderr).
pub fn aggregate(values: &[f64]) -> (f64, f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, 10.0 * mean.log10(), (var / n).sqrt())
}

/// One generalization cell (mesh-transfer or deformation-range transfer).
#[derive(Debug, Clone, PartialEq)]
pub struct GeneralizationRow {
    /// "size" or "bound".
    pub axis: String,
    /// N for the size axis, the bound in wavelengths for the bound axis.
    pub value: f64,
    /// "zero_shot", "fine_tuned" or "baseline".
    pub mode: String,
    pub estimator: String,
    pub snr_db: f64,
    pub trials: usize,
    pub nmse_mean: f64,
    pub nmse_db: f64,
    pub stderr: f64,
}

pub fn generalization_csv(rows: &[GeneralizationRow]) -> String {
    let mut out = String::from("axis,value,mode,estimator,snr_db,trials,nmse_mean,nmse_db,stderr\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.axis, r.value, r.mode, r.estimator, r.snr_db, r.trials, r.nmse_mean, r.nmse_db, r.stderr
        ));
    }
    out
}

/// Mutual coherence of one pilot design.
#[derive(Debug, Clone, PartialEq)]
pub struct CoherenceRow {
    pub design: String,
    pub m_pilots: usize,
    pub atoms: usize,
    pub draws: usize,
    pub mu_mean: f64,
    pub mu_std: f64,
}

pub fn coherence_csv(rows: &[CoherenceRow]) -> String {
    let mut out = String::from("design,M,D,draws,mu_mean,mu_std\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.design, r.m_pilots, r.atoms, r.draws, r.mu_mean, r.mu_std
        ));
    }
    out
}

/// Per-mode spectral weight magnitude of one block.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralRow {
    pub block: String,
    pub mode: usize,
    pub mean_magnitude: f64,
}

pub fn spectral_csv(rows: &[SpectralRow]) -> String {
    let mut out = String::from("block,mode,mean_magnitude\n");
    for r in rows {
        out.push_str(&format!("{},{},{}\n", r.block, r.mode, r.mean_magnitude));
    }
    out
}

/// One feature activation sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationRow {
    pub block: String,
    pub channel: usize,
    pub position: usize,
    pub value: f64,
}

pub fn activation_csv(rows: &[ActivationRow]) -> String {
    let mut out = String::from("block,channel,position,value\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{}\n", r.block, r.channel, r.position, r.value));
    }
    out
}

/// One point of a per-element gain sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct GainCurveRow {
    pub clusters: usize,
    /// "truth", "hfno" or "omp".
    pub method: String,
    pub element: usize,
    pub delta: f64,
    pub gain: f64,
}

pub fn gain_curve_csv(rows: &[GainCurveRow]) -> String {
    let mut out = String::from("L,method,element,delta,gain\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.clusters, r.method, r.element, r.delta, r.gain
        ));
    }
    out
}

/// Write a CSV output plus its `<name>.config.json` provenance sidecar.
pub fn write_output(path: &Path, csv: &str, cfg: &ExperimentConfig) -> Result<()> {
    std::fs::write(path, csv)?;
    let sidecar = path.with_extension(match path.extension().and_then(|e| e.to_str()) {
        Some(ext) => format!("{ext}.config.json"),
        None => "config.json".to_string(),
    });
    std::fs::write(sidecar, cfg.to_json_pretty())?;
    Ok(())
}
