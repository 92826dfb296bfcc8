//! Mini-batch training of the H-FNO with exact gradients and an
//! adaptive-moment optimizer. Fully reproducible: the seed determines the
//! initialization, the shuffles, and (through fixed-size gradient chunks
//! reduced in index order) every floating-point sum, independent of the
//! worker thread count.

use super::model::{
    hfno_backward_into, hfno_forward, hfno_forward_cached, FnoCore, FnoGrads, FnoParams,
};
use super::{FeatureField, FnoConfig, NormStats, PlanCache};
use crate::channel::{nmse, ChannelVector};
use crate::error::{FimError, Result};
use crate::parallel::par_map;
use ndarray::Array1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// One supervised sample: raw input features and the noise-free target
/// channel.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub features: FeatureField,
    pub truth: ChannelVector,
}

/// Optimization schedule and dataset sizing.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Halve the learning rate every this many epochs (0 disables decay).
    pub lr_halve_every: usize,
    pub seed: u64,
    /// Integer SNR range (dB, inclusive) sampled per training record.
    pub snr_range_db: (i64, i64),
    pub n_train: usize,
    pub n_val: usize,
    /// Print per-epoch progress to stderr.
    pub verbose: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 64,
            learning_rate: 1e-3,
            lr_halve_every: 10,
            seed: 0,
            snr_range_db: (0, 20),
            n_train: 20_000,
            n_val: 1000,
            verbose: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.learning_rate <= 0.0 {
            return Err(FimError::InvalidConfig("bad optimizer settings".into()));
        }
        if self.snr_range_db.0 > self.snr_range_db.1 {
            return Err(FimError::InvalidConfig("empty SNR range".into()));
        }
        Ok(())
    }

    fn lr_at_epoch(&self, epoch: usize) -> f64 {
        if self.lr_halve_every == 0 {
            self.learning_rate
        } else {
            self.learning_rate * 0.5_f64.powi((epoch / self.lr_halve_every) as i32)
        }
    }
}

/// Per-epoch training record.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_nmse: f64,
    pub learning_rate: f64,
}

/// Full training history plus which epoch supplied the returned parameters.
#[derive(Debug, Clone, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainLog {
    pub initial_val_nmse: f64,
    pub epochs: Vec<EpochStats>,
    /// `None` when the initialization was never improved upon.
    pub best_epoch: Option<usize>,
}

/// Batch loss `(1/B) * sum ||pred - target||^2`.
pub fn mse_loss(predictions: &[ChannelVector], targets: &[ChannelVector]) -> Result<f64> {
    if predictions.len() != targets.len() || predictions.is_empty() {
        return Err(FimError::DimensionMismatch("batch size mismatch".into()));
    }
    let mut acc = 0.0;
    for (p, t) in predictions.iter().zip(targets) {
        if p.len() != t.len() {
            return Err(FimError::DimensionMismatch("prediction length mismatch".into()));
        }
        acc += p.iter().zip(t).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>();
    }
    Ok(acc / predictions.len() as f64)
}

/// Samples processed serially per gradient chunk; chunks run in parallel
/// and reduce in index order, keeping sums bit-stable for any thread count.
const GRAD_CHUNK: usize = 8;

/// Batch loss and exact gradients of it with respect to every parameter.
pub fn loss_gradients(
    params: &FnoParams,
    cfg: &FnoConfig,
    batch: &[(&FeatureField, &ChannelVector)],
    plans: &PlanCache,
) -> Result<(f64, FnoGrads)> {
    if batch.is_empty() {
        return Err(FimError::InvalidConfig("empty batch".into()));
    }
    let b = batch.len();
    let scale = 2.0 / b as f64;
    let n_chunks = b.div_ceil(GRAD_CHUNK);
    let partials = par_map(n_chunks, |ci| -> Result<(f64, FnoGrads)> {
        let mut grads = FnoCore::zeros(cfg);
        let mut loss = 0.0;
        for s in ci * GRAD_CHUNK..((ci + 1) * GRAD_CHUNK).min(b) {
            let (x, truth) = batch[s];
            let (out, cache) = hfno_forward_cached(params, cfg, x, plans)?;
            if out.len() != truth.len() {
                return Err(FimError::DimensionMismatch(format!(
                    "prediction length {} vs target {}",
                    out.len(),
                    truth.len()
                )));
            }
            let mut g_out: ChannelVector = Array1::zeros(out.len());
            for i in 0..out.len() {
                let e = out[i] - truth[i];
                loss += e.norm_sqr();
                g_out[i] = e * scale;
            }
            hfno_backward_into(params, cfg, &cache, &g_out, plans, &mut grads);
        }
        Ok((loss, grads))
    });
    let mut total = FnoCore::zeros(cfg);
    let mut loss = 0.0;
    for part in partials {
        let (l, g) = part?;
        loss += l;
        total.add_assign(&g);
    }
    Ok((loss / b as f64, total))
}

/// Adam optimizer over the flattened parameter vector.
struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(dim: usize) -> Self {
        Self { m: vec![0.0; dim], v: vec![0.0; dim], t: 0 }
    }

    fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - Self::BETA1.powi(self.t);
        let bc2 = 1.0 - Self::BETA2.powi(self.t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * g;
            self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + Self::EPS);
        }
    }
}

/// Mean NMSE of the model over a sample set.
pub fn validation_nmse(
    params: &FnoParams,
    cfg: &FnoConfig,
    samples: &[TrainSample],
    plans: &PlanCache,
) -> Result<f64> {
    if samples.is_empty() {
        return Err(FimError::InvalidConfig("empty validation set".into()));
    }
    let scores = par_map(samples.len(), |i| -> Result<f64> {
        let out = hfno_forward(params, cfg, &samples[i].features, plans)?;
        nmse(&out, &samples[i].truth)
    });
    let mut acc = 0.0;
    for s in scores {
        acc += s?;
    }
    Ok(acc / samples.len() as f64)
}

/// Per-channel standardization statistics of a training split.
pub fn compute_norm_stats(samples: &[TrainSample]) -> Result<NormStats> {
    let first = samples
        .first()
        .ok_or_else(|| FimError::InvalidConfig("empty training set".into()))?;
    let channels = first.features.nrows();
    let mut mean = Array1::<f64>::zeros(channels);
    let mut sq = Array1::<f64>::zeros(channels);
    let mut count = 0.0f64;
    for s in samples {
        for (c, row) in s.features.rows().into_iter().enumerate() {
            for &x in row {
                mean[c] += x;
                sq[c] += x * x;
            }
        }
        count += s.features.ncols() as f64;
    }
    let mut scale = Array1::zeros(channels);
    for c in 0..channels {
        mean[c] /= count;
        let var: f64 = (sq[c] / count - mean[c] * mean[c]).max(0.0);
        scale[c] = var.sqrt().max(1e-8);
    }

    let mut omean = [0.0f64; 2];
    let mut osq = [0.0f64; 2];
    let mut ocount = 0.0f64;
    for s in samples {
        for v in &s.truth {
            omean[0] += v.re;
            omean[1] += v.im;
            osq[0] += v.re * v.re;
            osq[1] += v.im * v.im;
        }
        ocount += s.truth.len() as f64;
    }
    let mut oscale = [0.0f64; 2];
    for c in 0..2 {
        omean[c] /= ocount;
        oscale[c] = ((osq[c] / ocount - omean[c] * omean[c]).max(0.0)).sqrt().max(1e-8);
    }
    Ok(NormStats { input_mean: mean, input_scale: scale, output_mean: omean, output_scale: oscale })
}

fn check_samples(cfg: &FnoConfig, samples: &[TrainSample]) -> Result<()> {
    for (i, s) in samples.iter().enumerate() {
        if s.features.nrows() != cfg.input_channels {
            return Err(FimError::DimensionMismatch(format!(
                "sample {i} has {} channels, model expects {}",
                s.features.nrows(),
                cfg.input_channels
            )));
        }
        if s.features.ncols() != s.truth.len() {
            return Err(FimError::DimensionMismatch(format!(
                "sample {i}: {} positions vs truth {}",
                s.features.ncols(),
                s.truth.len()
            )));
        }
    }
    Ok(())
}

/// Train from scratch: seeded init, normalization statistics from the
/// training split, mini-batch Adam with the configured decay, per-epoch
/// validation, best-validation checkpoint returned.
pub fn train(
    train_set: &[TrainSample],
    val_set: &[TrainSample],
    fno_cfg: &FnoConfig,
    cfg: &TrainConfig,
) -> Result<(FnoParams, TrainLog)> {
    fno_cfg.validate()?;
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(FimError::InvalidConfig("empty training set".into()));
    }
    check_samples(fno_cfg, train_set)?;
    check_samples(fno_cfg, val_set)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = FnoParams {
        core: FnoCore::init(fno_cfg, &mut rng),
        norm: compute_norm_stats(train_set)?,
    };
    optimize(&mut params, train_set, val_set, fno_cfg, cfg, &mut rng, true)
}

/// Continue optimization of pretrained parameters on a new dataset for a
/// fixed number of epochs. Normalization statistics stay frozen. When the
/// dataset is large enough a 10% tail is held out for validation and the
/// best-validation parameters (including the unmodified input) are
/// returned; tiny datasets just run the epochs.
pub fn fine_tune(
    params: &FnoParams,
    samples: &[TrainSample],
    epochs: usize,
    fno_cfg: &FnoConfig,
    cfg: &TrainConfig,
) -> Result<(FnoParams, TrainLog)> {
    fno_cfg.validate()?;
    check_samples(fno_cfg, samples)?;
    if epochs == 0 {
        return Ok((params.clone(), TrainLog::default()));
    }
    if samples.is_empty() {
        return Err(FimError::InvalidConfig("empty fine-tune set".into()));
    }
    let tune_cfg = TrainConfig { epochs, ..cfg.clone() };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut tuned = params.clone();
    if samples.len() >= 20 {
        let split = samples.len() - samples.len() / 10;
        let (tr, val) = samples.split_at(split);
        optimize(&mut tuned, tr, val, fno_cfg, &tune_cfg, &mut rng, true)
    } else {
        optimize(&mut tuned, samples, samples, fno_cfg, &tune_cfg, &mut rng, false)
    }
}

fn optimize(
    params: &mut FnoParams,
    train_set: &[TrainSample],
    val_set: &[TrainSample],
    fno_cfg: &FnoConfig,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
    keep_best: bool,
) -> Result<(FnoParams, TrainLog)> {
    let plans = PlanCache::new();
    let n = train_set.len();
    let initial_val = validation_nmse(params, fno_cfg, val_set, &plans)?;
    let mut best = params.clone();
    let mut best_val = initial_val;
    let mut log = TrainLog { initial_val_nmse: initial_val, ..Default::default() };

    let mut flat = params.core.flatten();
    let mut adam = Adam::new(flat.len());
    let mut order: Vec<usize> = (0..n).collect();

    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at_epoch(epoch);
        // Fisher-Yates shuffle from the run rng
        for i in (1..n).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        let mut epoch_loss = 0.0;
        for batch_idx in order.chunks(cfg.batch_size) {
            let batch: Vec<(&FeatureField, &ChannelVector)> = batch_idx
                .iter()
                .map(|&i| (&train_set[i].features, &train_set[i].truth))
                .collect();
            let (loss, grads) = loss_gradients(params, fno_cfg, &batch, &plans)?;
            if !loss.is_finite() {
                return Err(FimError::NonFinite(format!(
                    "training loss diverged at epoch {epoch} (loss = {loss})"
                )));
            }
            let grads_flat = grads.flatten();
            adam.step(&mut flat, &grads_flat, lr);
            params.core.unflatten_from(&flat)?;
            epoch_loss += loss * batch_idx.len() as f64;
        }
        epoch_loss /= n as f64;
        let val = validation_nmse(params, fno_cfg, val_set, &plans)?;
        if keep_best && val < best_val {
            best_val = val;
            best = params.clone();
            log.best_epoch = Some(epoch);
        }
        if cfg.verbose {
            eprintln!(
                "epoch {epoch}: train loss {epoch_loss:.6} | val NMSE {:.3} dB | lr {lr:.2e}",
                10.0 * val.log10()
            );
        }
        log.epochs.push(EpochStats { epoch, train_loss: epoch_loss, val_nmse: val, learning_rate: lr });
    }
    if keep_best {
        Ok((best, log))
    } else {
        Ok((params.clone(), log))
    }
}

/// Convenience wrapper: batched forward passes.
pub fn forward_batch(
    params: &FnoParams,
    cfg: &FnoConfig,
    inputs: &[FeatureField],
    plans: &PlanCache,
) -> Result<Vec<ChannelVector>> {
    par_map(inputs.len(), |i| hfno_forward(params, cfg, &inputs[i], plans))
        .into_iter()
        .collect()
}

/// Construct features/truth pairs directly from a closure, used by tests.
pub fn synthetic_samples<F>(count: usize, channels: usize, n: usize, mut gen: F) -> Vec<TrainSample>
where
    F: FnMut(usize) -> (FeatureField, ChannelVector),
{
    (0..count)
        .map(|i| {
            let (features, truth) = gen(i);
            debug_assert_eq!(features.dim(), (channels, n));
            TrainSample { features, truth }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fno::Activation;
    use num_complex::Complex64;
    use ndarray::Array2;

    fn tiny_cfg() -> FnoConfig {
        FnoConfig {
            latent_width: 4,
            encoder_levels: 2,
            modes_per_resolution: vec![3, 2, 2],
            input_channels: 7,
            output_channels: 2,
            activation: Activation::Gelu,
        }
    }

    /// Learnable toy task: truth is a fixed linear mix of the features.
    fn toy_samples(count: usize, n: usize, seed: u64) -> Vec<TrainSample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        synthetic_samples(count, 7, n, |_| {
            let features = Array2::from_shape_fn((7, n), |_| rng.random_range(-1.0..1.0));
            let truth: ChannelVector = (0..n)
                .map(|j| {
                    Complex64::new(
                        0.6 * features[[0, j]] - 0.3 * features[[2, j]],
                        0.5 * features[[1, j]] + 0.2 * features[[6, j]],
                    )
                })
                .collect();
            (features, truth)
        })
    }

    #[test]
    fn mse_loss_trivial_cases() {
        let a: ChannelVector = (0..4).map(|i| Complex64::new(i as f64, -1.0)).collect();
        let b = a.clone();
        assert_eq!(mse_loss(&[a.clone()], &[b.clone()]).unwrap(), 0.0);
        let zero: ChannelVector = Array1::zeros(4);
        let base = mse_loss(&[a.clone()], &[zero.clone()]).unwrap();
        let doubled = mse_loss(&[a.mapv(|v| v * 2.0)], &[zero]).unwrap();
        assert!((doubled - 4.0 * base).abs() < 1e-12);
        assert!(mse_loss(&[a], &[]).is_err());
    }

    #[test]
    fn loss_gradients_deterministic_and_batch_scaled() {
        let cfg = tiny_cfg();
        let params = FnoParams::init_seeded(&cfg, 3);
        let plans = PlanCache::new();
        let samples = toy_samples(12, 8, 4);
        let batch: Vec<(&FeatureField, &ChannelVector)> =
            samples.iter().map(|s| (&s.features, &s.truth)).collect();
        let (l1, g1) = loss_gradients(&params, &cfg, &batch, &plans).unwrap();
        let (l2, g2) = loss_gradients(&params, &cfg, &batch, &plans).unwrap();
        assert_eq!(l1, l2);
        assert_eq!(g1.flatten(), g2.flatten());

        // loss equals the mean of per-sample losses
        let mut acc = 0.0;
        for s in &samples {
            let out = hfno_forward(&params, &cfg, &s.features, &plans).unwrap();
            acc += out.iter().zip(&s.truth).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>();
        }
        assert!((l1 - acc / 12.0).abs() < 1e-12);
    }

    #[test]
    fn smoke_training_halves_the_loss() {
        let cfg = tiny_cfg();
        let train_set = toy_samples(200, 8, 5);
        let val_set = toy_samples(32, 8, 6);
        let tcfg = TrainConfig {
            epochs: 20,
            batch_size: 32,
            learning_rate: 1e-2,
            lr_halve_every: 10,
            seed: 1,
            ..Default::default()
        };
        let (_, log) = train(&train_set, &val_set, &cfg, &tcfg).unwrap();
        let first = log.epochs.first().unwrap().train_loss;
        let last = log.epochs.last().unwrap().train_loss;
        assert!(last < 0.5 * first, "loss {first} -> {last}");
    }

    #[test]
    fn training_is_reproducible_from_seed() {
        let cfg = tiny_cfg();
        let train_set = toy_samples(48, 8, 7);
        let val_set = toy_samples(16, 8, 8);
        let tcfg = TrainConfig {
            epochs: 3,
            batch_size: 16,
            learning_rate: 1e-2,
            seed: 9,
            ..Default::default()
        };
        let (p1, log1) = train(&train_set, &val_set, &cfg, &tcfg).unwrap();
        let (p2, log2) = train(&train_set, &val_set, &cfg, &tcfg).unwrap();
        assert_eq!(log1, log2);
        assert_eq!(p1.core.flatten(), p2.core.flatten());
    }

    #[test]
    fn returned_model_is_no_worse_than_initialization() {
        let cfg = tiny_cfg();
        let train_set = toy_samples(64, 8, 10);
        let val_set = toy_samples(24, 8, 11);
        let tcfg = TrainConfig {
            epochs: 4,
            batch_size: 16,
            learning_rate: 5e-3,
            seed: 12,
            ..Default::default()
        };
        let (best, log) = train(&train_set, &val_set, &cfg, &tcfg).unwrap();
        let plans = PlanCache::new();
        let final_val = validation_nmse(&best, &cfg, &val_set, &plans).unwrap();
        assert!(final_val <= log.initial_val_nmse + 1e-12);
    }

    #[test]
    fn fine_tune_zero_epochs_is_identity() {
        let cfg = tiny_cfg();
        let params = FnoParams::init_seeded(&cfg, 13);
        let samples = toy_samples(8, 8, 14);
        let (tuned, log) = fine_tune(&params, &samples, 0, &cfg, &TrainConfig::default()).unwrap();
        assert_eq!(tuned.core.flatten(), params.core.flatten());
        assert!(log.epochs.is_empty());
    }

    #[test]
    fn fine_tune_is_reproducible_and_keeps_norm_stats() {
        let cfg = tiny_cfg();
        let mut params = FnoParams::init_seeded(&cfg, 15);
        params.norm.input_mean[0] = 0.37;
        let samples = toy_samples(40, 8, 16);
        let tcfg = TrainConfig { batch_size: 8, learning_rate: 1e-3, seed: 17, ..Default::default() };
        let (a, _) = fine_tune(&params, &samples, 2, &cfg, &tcfg).unwrap();
        let (b, _) = fine_tune(&params, &samples, 2, &cfg, &tcfg).unwrap();
        assert_eq!(a.core.flatten(), b.core.flatten());
        assert_eq!(a.norm.input_mean[0], 0.37);
    }

    #[test]
    fn divergence_is_reported() {
        let cfg = tiny_cfg();
        let mut train_set = toy_samples(16, 8, 18);
        // poison a sample with a non-finite feature
        train_set[0].features[[0, 0]] = f64::NAN;
        let val_set = toy_samples(8, 8, 19);
        let tcfg = TrainConfig { epochs: 1, batch_size: 16, seed: 20, ..Default::default() };
        let err = train(&train_set, &val_set, &cfg, &tcfg);
        assert!(matches!(err, Err(FimError::NonFinite(_))));
    }
}
