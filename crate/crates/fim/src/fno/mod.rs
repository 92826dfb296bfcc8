//! Learning-based channel estimation with a hierarchical Fourier neural
//! operator: input feature construction, spectral layers, the U-shaped
//! multi-scale architecture, exact-gradient training, and checkpoint I/O.

pub mod checkpoint;
pub mod model;
pub mod ops;
pub mod train;

pub use model::{
    export_spectral_weights, fourier_layer, hfno_backward, hfno_forward, hfno_forward_cached,
    FnoBlockParams, FnoCore, FnoGrads, FnoParams,
};
pub use ops::{Activation, Field, PlanCache};
pub use train::{fine_tune, loss_gradients, mse_loss, train, TrainConfig, TrainLog, TrainSample};

use crate::channel::PilotSet;
use crate::error::{FimError, Result};
use crate::geometry::DeformationShape;
use ndarray::{Array1, Array2};

/// Real per-element feature matrix, one row per channel.
pub type FeatureField = Field;

/// Architecture of the hierarchical FNO.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FnoConfig {
    /// Latent width `d_v`.
    pub latent_width: usize,
    /// Number of encoder levels (pooling steps).
    pub encoder_levels: usize,
    /// Kept Fourier modes per resolution, full resolution first; length
    /// `encoder_levels + 1` (the last entry is the bottleneck).
    pub modes_per_resolution: Vec<usize>,
    /// Input channels: `3 M + 1` for `M` pilot shapes.
    pub input_channels: usize,
    /// Output channels (real and imaginary part of the channel).
    pub output_channels: usize,
    pub activation: Activation,
}

impl FnoConfig {
    /// The default architecture: width 64, two encoder levels, modes
    /// (16, 8, 4), GELU activation.
    pub fn standard(m_pilots: usize) -> Self {
        Self {
            latent_width: 64,
            encoder_levels: 2,
            modes_per_resolution: vec![16, 8, 4],
            input_channels: 3 * m_pilots + 1,
            output_channels: 2,
            activation: Activation::Gelu,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.latent_width == 0 || self.input_channels == 0 {
            return Err(FimError::InvalidConfig("zero model width".into()));
        }
        if self.output_channels != 2 {
            return Err(FimError::InvalidConfig(
                "output must be the 2 channels (re, im)".into(),
            ));
        }
        if self.modes_per_resolution.len() != self.encoder_levels + 1 {
            return Err(FimError::InvalidConfig(format!(
                "need {} mode counts, got {}",
                self.encoder_levels + 1,
                self.modes_per_resolution.len()
            )));
        }
        if self.modes_per_resolution.iter().any(|&m| m == 0) {
            return Err(FimError::InvalidConfig("zero spectral modes".into()));
        }
        Ok(())
    }

    /// Number of pilot shapes this configuration was built for.
    pub fn pilot_count(&self) -> usize {
        (self.input_channels - 1) / 3
    }
}

/// Frozen per-channel standardization statistics, computed once from the
/// training split and stored with the checkpoint.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NormStats {
    pub input_mean: Array1<f64>,
    pub input_scale: Array1<f64>,
    pub output_mean: [f64; 2],
    pub output_scale: [f64; 2],
}

impl NormStats {
    /// No-op statistics (zero means, unit scales).
    pub fn identity(input_channels: usize) -> Self {
        Self {
            input_mean: Array1::zeros(input_channels),
            input_scale: Array1::from_elem(input_channels, 1.0),
            output_mean: [0.0, 0.0],
            output_scale: [1.0, 1.0],
        }
    }

    /// Standardize a raw feature field channel by channel.
    pub fn standardize(&self, field: &FeatureField) -> FeatureField {
        let mut out = field.clone();
        for (c, mut row) in out.rows_mut().into_iter().enumerate() {
            let mean = self.input_mean[c];
            let inv = 1.0 / self.input_scale[c];
            row.mapv_inplace(|x| (x - mean) * inv);
        }
        out
    }

    /// Map the two raw output channels back to a complex channel vector.
    pub fn denormalize_output(&self, y: &Array2<f64>) -> crate::channel::ChannelVector {
        (0..y.ncols())
            .map(|i| {
                num_complex::Complex64::new(
                    y[[0, i]] * self.output_scale[0] + self.output_mean[0],
                    y[[1, i]] * self.output_scale[1] + self.output_mean[1],
                )
            })
            .collect()
    }
}

/// Assemble the raw per-element input features in the fixed channel order:
/// interleaved (re, im) of each pilot measurement, then each pilot shape,
/// then the target shape. Standardization happens inside the model.
pub fn build_input_features(pilots: &PilotSet, target: &DeformationShape) -> Result<FeatureField> {
    let m = pilots.len();
    let n = target.len();
    for (i, (shape, meas)) in pilots.shapes.iter().zip(&pilots.measurements).enumerate() {
        if shape.len() != n || meas.len() != n {
            return Err(FimError::DimensionMismatch(format!(
                "pilot {i} length differs from target length {n}"
            )));
        }
    }
    let mut field = Array2::zeros((3 * m + 1, n));
    for (i, meas) in pilots.measurements.iter().enumerate() {
        for (j, v) in meas.iter().enumerate() {
            field[[2 * i, j]] = v.re;
            field[[2 * i + 1, j]] = v.im;
        }
    }
    for (i, shape) in pilots.shapes.iter().enumerate() {
        for (j, &z) in shape.values().iter().enumerate() {
            field[[2 * m + i, j]] = z;
        }
    }
    for (j, &z) in target.values().iter().enumerate() {
        field[[3 * m, j]] = z;
    }
    Ok(field)
}
