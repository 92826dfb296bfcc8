//! Experiment configuration: JSON-serializable, every field defaulted to
//! the standard evaluation setup so that a config file only has to name
//! what it overrides.

use crate::channel::ChannelParams;
use crate::error::{FimError, Result};
use crate::fno::{FnoConfig, TrainConfig};
use crate::geometry::ArrayGeometry;
use crate::interp::KnnConfig;
use crate::sparse::PilotKind;
use std::path::Path;

/// Array layout plus the deformation bound, in wavelength units.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct GeometryConfig {
    pub nx: usize,
    pub nz: usize,
    /// Element spacing in wavelengths.
    pub dx_wl: f64,
    pub dz_wl: f64,
    /// Maximum displacement in wavelengths.
    pub bound_wl: f64,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        Self { nx: 8, nz: 8, dx_wl: 0.5, dz_wl: 0.5, bound_wl: 0.5 }
    }
}

impl GeometryConfig {
    pub fn build(&self, wavelength: f64) -> Result<ArrayGeometry> {
        ArrayGeometry::new(
            self.nx,
            self.nz,
            self.dx_wl,
            self.dz_wl,
            crate::geometry::Orientation::CANONICAL,
            [0.0; 3],
            wavelength,
        )
    }

    pub fn bound_meters(&self, wavelength: f64) -> f64 {
        self.bound_wl * wavelength
    }
}

/// Pilot design: which generator and which overhead values to sweep.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct PilotConfig {
    pub kind: PilotKind,
    /// Pilot counts `M` evaluated by the benchmark.
    pub counts: Vec<usize>,
}

impl Default for PilotConfig {
    fn default() -> Self {
        Self { kind: PilotKind::Fourier, counts: vec![16] }
    }
}

/// Which estimators run and their hyperparameters.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct EstimatorSettings {
    pub estimators: Vec<EstimatorKind>,
    pub knn: KnnConfig,
    /// RBF bandwidth; `null` selects the median-distance heuristic.
    pub krr_gamma: Option<f64>,
    pub krr_lambda: f64,
    pub grid_theta: usize,
    pub grid_phi: usize,
    /// OMP atom budget; `null` defaults to the generator's path count.
    pub omp_max_atoms: Option<usize>,
    /// Scale on the noise-floor stopping threshold
    /// `sqrt(noise_var * M * N) / ||y||`.
    pub omp_residual_scale: f64,
}

impl Default for EstimatorSettings {
    fn default() -> Self {
        Self {
            estimators: vec![
                EstimatorKind::Nn,
                EstimatorKind::Knn,
                EstimatorKind::Krr,
                EstimatorKind::Omp,
                EstimatorKind::Hfno,
            ],
            knn: KnnConfig::default(),
            krr_gamma: None,
            krr_lambda: 1e-2,
            grid_theta: 16,
            grid_phi: 16,
            omp_max_atoms: None,
            omp_residual_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    Nn,
    Knn,
    Krr,
    Omp,
    Hfno,
}

impl std::fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            EstimatorKind::Nn => "nn",
            EstimatorKind::Knn => "knn",
            EstimatorKind::Krr => "krr",
            EstimatorKind::Omp => "omp",
            EstimatorKind::Hfno => "hfno",
        };
        write!(f, "{s}")
    }
}

/// Sizes and deformation ranges probed by the generalization runs.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct GeneralizationConfig {
    /// Array sizes for zero-shot mesh transfer.
    pub sizes: Vec<[usize; 2]>,
    /// Deformation bounds (wavelengths) for range transfer.
    pub bounds_wl: Vec<f64>,
    pub fine_tune_samples: usize,
    pub fine_tune_epochs: usize,
    pub snr_db: f64,
    /// Trials per evaluation point (0 falls back to the top-level count).
    pub trials: usize,
}

impl Default for GeneralizationConfig {
    fn default() -> Self {
        Self {
            sizes: vec![[10, 10], [12, 12], [14, 14]],
            bounds_wl: vec![0.25, 1.0],
            fine_tune_samples: 500,
            fine_tune_epochs: 10,
            snr_db: 10.0,
            trials: 200,
        }
    }
}

/// Per-element gain sweep settings (channel-gain tracking curves).
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct CurvesConfig {
    /// Cluster counts compared (sparse vs rich scattering).
    pub cluster_counts: Vec<usize>,
    pub n_delta: usize,
    pub snr_db: f64,
}

impl Default for CurvesConfig {
    fn default() -> Self {
        Self { cluster_counts: vec![5, 20], n_delta: 41, snr_db: 10.0 }
    }
}

/// A trained model checkpoint associated with a pilot count.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ModelEntry {
    pub pilots: usize,
    pub path: String,
}

/// Top-level experiment description.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub geometry: GeometryConfig,
    pub channel: ChannelParams,
    pub pilots: PilotConfig,
    pub estimators: EstimatorSettings,
    pub fno: FnoConfig,
    pub training: TrainConfig,
    pub generalization: GeneralizationConfig,
    pub curves: CurvesConfig,
    /// Evaluation SNR grid, dB.
    pub snr_db: Vec<f64>,
    /// Monte Carlo trials per benchmark cell.
    pub trials: usize,
    /// Users sharing the uplink frame.
    pub users: usize,
    /// Pilot slots per subframe (0 means the minimum, `users`).
    pub slots: usize,
    /// Checkpoint used when only one pilot count is configured.
    pub model_path: Option<String>,
    /// Checkpoints keyed by pilot count, for overhead sweeps.
    pub models: Vec<ModelEntry>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            geometry: GeometryConfig::default(),
            channel: ChannelParams::default(),
            pilots: PilotConfig::default(),
            estimators: EstimatorSettings::default(),
            fno: FnoConfig::standard(16),
            training: TrainConfig::default(),
            generalization: GeneralizationConfig::default(),
            curves: CurvesConfig::default(),
            snr_db: vec![0.0, 5.0, 10.0, 15.0, 20.0],
            trials: 500,
            users: 4,
            slots: 0,
            model_path: None,
            models: Vec::new(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| FimError::Format(format!("config parse: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.channel.validate()?;
        self.fno.validate()?;
        self.training.validate()?;
        if self.trials == 0 || self.pilots.counts.is_empty() || self.snr_db.is_empty() {
            return Err(FimError::InvalidConfig(
                "trials, pilot counts and snr list must be nonempty".into(),
            ));
        }
        if self.users == 0 {
            return Err(FimError::InvalidConfig("need at least one user".into()));
        }
        Ok(())
    }

    pub fn wavelength(&self) -> f64 {
        self.channel.wavelength()
    }

    pub fn geometry(&self) -> Result<ArrayGeometry> {
        self.geometry.build(self.wavelength())
    }

    pub fn bound(&self) -> f64 {
        self.geometry.bound_meters(self.wavelength())
    }

    /// Pilot slots per subframe, resolving the 0 = minimum convention.
    pub fn slots(&self) -> usize {
        if self.slots == 0 {
            self.users
        } else {
            self.slots
        }
    }

    /// Architecture for a given pilot count (the input width follows `M`).
    pub fn fno_for_pilots(&self, m: usize) -> FnoConfig {
        FnoConfig { input_channels: 3 * m + 1, ..self.fno.clone() }
    }

    /// Default OMP atom budget: the channel generator's path count.
    pub fn omp_max_atoms(&self) -> usize {
        self.estimators
            .omp_max_atoms
            .unwrap_or(self.channel.clusters * self.channel.paths_per_cluster)
    }

    /// Checkpoint path for a pilot count, if configured.
    pub fn model_path_for(&self, m: usize) -> Option<&str> {
        self.models
            .iter()
            .find(|e| e.pilots == m)
            .map(|e| e.path.as_str())
            .or(self.model_path.as_deref())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_the_standard_setup() {
        let cfg = ExperimentConfig::default();
        assert_eq!(cfg.geometry.nx * cfg.geometry.nz, 64);
        assert_eq!(cfg.pilots.counts, vec![16]);
        assert_eq!(cfg.channel.clusters, 5);
        assert_eq!(cfg.channel.paths_per_cluster, 6);
        assert_eq!(cfg.trials, 500);
        assert_eq!(cfg.users, 4);
        assert_eq!(cfg.slots(), 4);
        assert_eq!(cfg.fno.latent_width, 64);
        assert_eq!(cfg.fno.modes_per_resolution, vec![16, 8, 4]);
        assert_eq!(cfg.training.n_train, 20_000);
        assert_eq!(cfg.training.epochs, 50);
        assert_eq!(cfg.omp_max_atoms(), 30);
        assert!((cfg.wavelength() - 299_792_458.0 / 28e9).abs() < 1e-12);
        cfg.validate().unwrap();
    }

    #[test]
    fn partial_json_overrides_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        std::fs::write(&path, r#"{"trials": 7, "channel": {"clusters": 20}}"#).unwrap();
        let cfg = ExperimentConfig::from_json_file(&path).unwrap();
        assert_eq!(cfg.trials, 7);
        assert_eq!(cfg.channel.clusters, 20);
        // untouched fields keep their defaults
        assert_eq!(cfg.channel.paths_per_cluster, 6);
        assert_eq!(cfg.omp_max_atoms(), 120);
    }

    #[test]
    fn round_trip_through_json() {
        let cfg = ExperimentConfig::default();
        let text = cfg.to_json_pretty();
        let back: ExperimentConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn model_path_resolution() {
        let mut cfg = ExperimentConfig::default();
        assert!(cfg.model_path_for(16).is_none());
        cfg.model_path = Some("base.ckpt".into());
        cfg.models.push(ModelEntry { pilots: 8, path: "m8.ckpt".into() });
        assert_eq!(cfg.model_path_for(8), Some("m8.ckpt"));
        assert_eq!(cfg.model_path_for(16), Some("base.ckpt"));
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut cfg = ExperimentConfig::default();
        cfg.trials = 0;
        assert!(cfg.validate().is_err());
        let mut cfg2 = ExperimentConfig::default();
        cfg2.snr_db.clear();
        assert!(cfg2.validate().is_err());
    }
}
