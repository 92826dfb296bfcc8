//! Experiment drivers: Monte Carlo benchmark sweeps, generalization runs,
//! coherence comparisons, interpretability exports, and config-driven
//! training. Every trial derives its own RNG stream from
//! `(seed, cell, trial)`, so trial order and thread count never change
//! results.

use super::config::{EstimatorKind, ExperimentConfig};
use super::dataset::{generate_records, to_train_samples, Split};
use super::report::{
    aggregate, ActivationRow, BenchReport, BenchRow, CoherenceRow, GainCurveRow,
    GeneralizationRow, SpectralRow,
};
use crate::channel::{
    nmse, observe_pilots, sample_channel_realization, synthesize_channel, ChannelVector, PilotSet,
};
use crate::error::{FimError, Result};
use crate::fno::{
    build_input_features, checkpoint, export_spectral_weights, fine_tune, hfno_forward, train,
    FnoConfig, FnoParams, PlanCache, TrainConfig, TrainLog,
};
use crate::geometry::{random_pilot_shapes, ArrayGeometry, DeformationShape};
use crate::interp::{
    knn_estimate, krr_estimate, krr_fit, median_heuristic_gamma, nearest_neighbor_estimate,
};
use crate::parallel::par_map;
use crate::sparse::{
    angular_grid, mutual_coherence, omp, omp_estimate, pilot_shape_set, stack_measurements,
    stack_sensing_matrix, AngularGrid, SensingMatrix,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

/// A loaded H-FNO checkpoint plus its FFT plan cache.
pub struct ModelHandle {
    pub params: FnoParams,
    pub cfg: FnoConfig,
    pub plans: PlanCache,
}

impl ModelHandle {
    pub fn new(params: FnoParams, cfg: FnoConfig) -> Self {
        Self { params, cfg, plans: PlanCache::new() }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (params, cfg) = checkpoint::load_checkpoint(path)?;
        Ok(Self::new(params, cfg))
    }

    pub fn estimate(&self, pilots: &PilotSet, target: &DeformationShape) -> Result<ChannelVector> {
        let features = build_input_features(pilots, target)?;
        hfno_forward(&self.params, &self.cfg, &features, &self.plans)
    }
}

/// Trained models keyed by the pilot count they expect.
#[derive(Default)]
pub struct ModelSet {
    by_pilots: BTreeMap<usize, Arc<ModelHandle>>,
}

impl ModelSet {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, m: usize, handle: ModelHandle) {
        self.by_pilots.insert(m, Arc::new(handle));
    }

    pub fn get(&self, m: usize) -> Option<&Arc<ModelHandle>> {
        self.by_pilots.get(&m)
    }

    /// Load every checkpoint the configuration references.
    pub fn from_config(cfg: &ExperimentConfig) -> Result<Self> {
        let mut set = Self::empty();
        if !cfg.estimators.estimators.contains(&EstimatorKind::Hfno) {
            return Ok(set);
        }
        for &m in &cfg.pilots.counts {
            let path = cfg.model_path_for(m).ok_or_else(|| {
                FimError::InvalidConfig(format!("no model configured for M = {m} pilots"))
            })?;
            let handle = ModelHandle::load(Path::new(path))?;
            if handle.cfg.pilot_count() != m {
                return Err(FimError::InvalidConfig(format!(
                    "checkpoint {path} was trained for M = {}, requested M = {m}",
                    handle.cfg.pilot_count()
                )));
            }
            set.insert(m, handle);
        }
        Ok(set)
    }
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stable combination of experiment coordinates into one stream id.
pub fn mix_ids(parts: &[u64]) -> u64 {
    let mut h = 0x51_7C_C1_B7_27_22_0A_95u64;
    for &p in parts {
        h = splitmix(h ^ p);
    }
    h
}

/// Independent RNG stream for one Monte Carlo trial.
pub fn trial_rng(seed: u64, cell: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(mix_ids(&[cell, trial]));
    rng
}

/// Everything one Monte Carlo trial observes.
pub struct TrialScene {
    pub pilots: PilotSet,
    pub target: DeformationShape,
    pub truth: ChannelVector,
}

/// Draw one trial: fresh channel realization, fresh uniform target shape,
/// fresh pilot noise, all from the given stream.
pub fn draw_trial(
    cfg: &ExperimentConfig,
    geom: &ArrayGeometry,
    bound: f64,
    shapes: &[DeformationShape],
    snr_db: f64,
    rng: &mut ChaCha8Rng,
) -> Result<TrialScene> {
    let realization = sample_channel_realization(&cfg.channel, rng);
    let values: Vec<f64> = (0..geom.n_elements())
        .map(|_| rng.random_range(-bound..=bound))
        .collect();
    let target = DeformationShape::new(values, bound)?;
    let truth = synthesize_channel(&realization, &target, geom)?;
    let pilots = observe_pilots(&realization, shapes, snr_db, geom, rng)?;
    Ok(TrialScene { pilots, target, truth })
}

/// Per-cell estimator context: everything that is fixed across trials.
pub struct CellContext<'a> {
    pub cfg: &'a ExperimentConfig,
    pub geom: &'a ArrayGeometry,
    pub grid: &'a AngularGrid,
    pub krr_gamma: f64,
    pub sensing: Option<&'a SensingMatrix>,
    pub model: Option<&'a ModelHandle>,
}

impl CellContext<'_> {
    /// NMSE of every configured estimator on one scene, in configuration
    /// order.
    pub fn evaluate(&self, scene: &TrialScene) -> Result<Vec<f64>> {
        let est = &self.cfg.estimators;
        let mut out = Vec::with_capacity(est.estimators.len());
        for kind in &est.estimators {
            let estimate = match kind {
                EstimatorKind::Nn => nearest_neighbor_estimate(&scene.pilots, &scene.target)?,
                EstimatorKind::Knn => knn_estimate(&scene.pilots, &scene.target, &est.knn)?,
                EstimatorKind::Krr => {
                    let model = krr_fit(&scene.pilots, Some(self.krr_gamma), est.krr_lambda)?;
                    krr_estimate(&model, &scene.target)
                }
                EstimatorKind::Omp => {
                    let sensing = self.sensing.ok_or_else(|| {
                        FimError::InvalidConfig("OMP requested without a sensing matrix".into())
                    })?;
                    let y = stack_measurements(&scene.pilots.measurements);
                    let norm_y = y.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
                    let rows = y.len() as f64;
                    let tol = if norm_y > 0.0 {
                        est.omp_residual_scale * (scene.pilots.noise_variance * rows).sqrt()
                            / norm_y
                    } else {
                        0.0
                    };
                    let max_atoms = self
                        .cfg
                        .omp_max_atoms()
                        .min(sensing.phi.ncols())
                        .min(sensing.phi.nrows());
                    let sol = omp(&y, sensing, max_atoms, tol)?;
                    omp_estimate(&sol, &scene.target, self.grid, self.geom)?
                }
                EstimatorKind::Hfno => {
                    let model = self.model.ok_or_else(|| {
                        FimError::InvalidConfig("H-FNO requested without a model".into())
                    })?;
                    model.estimate(&scene.pilots, &scene.target)?
                }
            };
            out.push(nmse(&estimate, &scene.truth)?);
        }
        Ok(out)
    }
}

const CELL_BENCH: u64 = 1;
const CELL_GENERALIZE: u64 = 2;
const CELL_INSPECT: u64 = 3;
const CELL_CURVES: u64 = 4;
const CELL_TRAIN_DATA: u64 = 5;

/// Run the full benchmark sweep: for every pilot count and SNR, average
/// estimator NMSE over fresh Monte Carlo trials.
pub fn run_benchmark(cfg: &ExperimentConfig, models: &ModelSet) -> Result<BenchReport> {
    cfg.validate()?;
    let geom = cfg.geometry()?;
    let bound = cfg.bound();
    let grid = angular_grid(cfg.estimators.grid_theta, cfg.estimators.grid_phi)?;
    let wants_omp = cfg.estimators.estimators.contains(&EstimatorKind::Omp);
    let wants_hfno = cfg.estimators.estimators.contains(&EstimatorKind::Hfno);
    let mut report = BenchReport::default();

    for (mi, &m) in cfg.pilots.counts.iter().enumerate() {
        let shapes = pilot_shape_set(m, cfg.pilots.kind, &geom, bound, cfg.seed)?;
        let krr_gamma = cfg
            .estimators
            .krr_gamma
            .unwrap_or_else(|| median_heuristic_gamma(&shapes));
        let sensing = if wants_omp {
            Some(stack_sensing_matrix(&shapes, &grid, &geom)?)
        } else {
            None
        };
        let model = if wants_hfno {
            let handle = models.get(m).ok_or_else(|| {
                FimError::InvalidConfig(format!("no trained model available for M = {m}"))
            })?;
            if handle.cfg.pilot_count() != m {
                return Err(FimError::InvalidConfig(format!(
                    "model expects M = {}, cell uses M = {m}",
                    handle.cfg.pilot_count()
                )));
            }
            Some(Arc::clone(handle))
        } else {
            None
        };

        for (si, &snr_db) in cfg.snr_db.iter().enumerate() {
            let cell = mix_ids(&[CELL_BENCH, mi as u64, si as u64]);
            let ctx = CellContext {
                cfg,
                geom: &geom,
                grid: &grid,
                krr_gamma,
                sensing: sensing.as_ref(),
                model: model.as_deref(),
            };
            let per_trial = par_map(cfg.trials, |u| -> Result<Vec<f64>> {
                let mut rng = trial_rng(cfg.seed, cell, u as u64);
                let scene = draw_trial(cfg, &geom, bound, &shapes, snr_db, &mut rng)?;
                ctx.evaluate(&scene)
            });
            let mut columns: Vec<Vec<f64>> =
                vec![Vec::with_capacity(cfg.trials); cfg.estimators.estimators.len()];
            for trial in per_trial {
                for (e, v) in trial?.into_iter().enumerate() {
                    columns[e].push(v);
                }
            }
            for (kind, values) in cfg.estimators.estimators.iter().zip(&columns) {
                let (mean, db, se) = aggregate(values);
                report.rows.push(BenchRow {
                    estimator: kind.to_string(),
                    snr_db,
                    m_pilots: m,
                    n_elements: geom.n_elements(),
                    clusters: cfg.channel.clusters,
                    trials: cfg.trials,
                    nmse_mean: mean,
                    nmse_db: db,
                    stderr: se,
                });
            }
        }
    }
    Ok(report)
}

/// Mean H-FNO NMSE over fresh trials at one configuration point.
fn eval_model_nmse(
    cfg: &ExperimentConfig,
    geom: &ArrayGeometry,
    bound: f64,
    shapes: &[DeformationShape],
    model: &ModelHandle,
    snr_db: f64,
    trials: usize,
    cell: u64,
) -> Result<(f64, f64, f64)> {
    let values = par_map(trials, |u| -> Result<f64> {
        let mut rng = trial_rng(cfg.seed, cell, u as u64);
        let scene = draw_trial(cfg, geom, bound, shapes, snr_db, &mut rng)?;
        let est = model.estimate(&scene.pilots, &scene.target)?;
        nmse(&est, &scene.truth)
    })
    .into_iter()
    .collect::<Result<Vec<f64>>>()?;
    Ok(aggregate(&values))
}

/// Zero-shot and fine-tuned evaluation of a trained model across array
/// sizes, plus zero-shot evaluation across deformation bounds with a KNN
/// baseline.
pub fn run_generalization(
    cfg: &ExperimentConfig,
    model: &ModelHandle,
) -> Result<Vec<GeneralizationRow>> {
    cfg.validate()?;
    let gen = &cfg.generalization;
    let trials = if gen.trials == 0 { cfg.trials } else { gen.trials };
    let m = model.cfg.pilot_count();
    let snr_db = gen.snr_db;
    let mut rows = Vec::new();

    for (gi, &[nx, nz]) in gen.sizes.iter().enumerate() {
        let mut size_cfg = cfg.clone();
        size_cfg.geometry.nx = nx;
        size_cfg.geometry.nz = nz;
        size_cfg.pilots.counts = vec![m];
        let geom = size_cfg.geometry()?;
        let bound = size_cfg.bound();
        let shapes = pilot_shape_set(m, size_cfg.pilots.kind, &geom, bound, cfg.seed)?;
        let n = geom.n_elements();

        let cell = mix_ids(&[CELL_GENERALIZE, 1, gi as u64]);
        let (mean, db, se) =
            eval_model_nmse(&size_cfg, &geom, bound, &shapes, model, snr_db, trials, cell)?;
        rows.push(GeneralizationRow {
            axis: "size".into(),
            value: n as f64,
            mode: "zero_shot".into(),
            estimator: "hfno".into(),
            snr_db,
            trials,
            nmse_mean: mean,
            nmse_db: db,
            stderr: se,
        });

        if gen.fine_tune_samples > 0 && gen.fine_tune_epochs > 0 {
            let ft_seed = mix_ids(&[CELL_GENERALIZE, 2, gi as u64, cfg.seed]);
            let records =
                generate_records(&size_cfg, Split::Train, gen.fine_tune_samples, ft_seed, None)?;
            let samples = to_train_samples(&records)?;
            let tcfg = TrainConfig { seed: ft_seed, ..cfg.training.clone() };
            let (tuned, _) =
                fine_tune(&model.params, &samples, gen.fine_tune_epochs, &model.cfg, &tcfg)?;
            let tuned_handle = ModelHandle::new(tuned, model.cfg.clone());
            let cell_ft = mix_ids(&[CELL_GENERALIZE, 3, gi as u64]);
            let (mean, db, se) = eval_model_nmse(
                &size_cfg, &geom, bound, &shapes, &tuned_handle, snr_db, trials, cell_ft,
            )?;
            rows.push(GeneralizationRow {
                axis: "size".into(),
                value: n as f64,
                mode: "fine_tuned".into(),
                estimator: "hfno".into(),
                snr_db,
                trials,
                nmse_mean: mean,
                nmse_db: db,
                stderr: se,
            });
        }
    }

    for (bi, &bound_wl) in gen.bounds_wl.iter().enumerate() {
        let mut bound_cfg = cfg.clone();
        bound_cfg.geometry.bound_wl = bound_wl;
        bound_cfg.pilots.counts = vec![m];
        let geom = bound_cfg.geometry()?;
        let bound = bound_cfg.bound();
        let shapes = pilot_shape_set(m, bound_cfg.pilots.kind, &geom, bound, cfg.seed)?;
        let cell = mix_ids(&[CELL_GENERALIZE, 4, bi as u64]);
        let (mean, db, se) =
            eval_model_nmse(&bound_cfg, &geom, bound, &shapes, model, snr_db, trials, cell)?;
        rows.push(GeneralizationRow {
            axis: "bound".into(),
            value: bound_wl,
            mode: "zero_shot".into(),
            estimator: "hfno".into(),
            snr_db,
            trials,
            nmse_mean: mean,
            nmse_db: db,
            stderr: se,
        });

        // KNN baseline on the same trial streams
        let knn_vals = par_map(trials, |u| -> Result<f64> {
            let mut rng = trial_rng(cfg.seed, cell, u as u64);
            let scene = draw_trial(&bound_cfg, &geom, bound, &shapes, snr_db, &mut rng)?;
            let est = knn_estimate(&scene.pilots, &scene.target, &cfg.estimators.knn)?;
            nmse(&est, &scene.truth)
        })
        .into_iter()
        .collect::<Result<Vec<f64>>>()?;
        let (mean, db, se) = aggregate(&knn_vals);
        rows.push(GeneralizationRow {
            axis: "bound".into(),
            value: bound_wl,
            mode: "baseline".into(),
            estimator: "knn".into(),
            snr_db,
            trials,
            nmse_mean: mean,
            nmse_db: db,
            stderr: se,
        });
    }
    Ok(rows)
}

/// Mutual coherence of the fourier, random (mean over draws), and greedy
/// pilot designs at the configured overhead and grid.
pub fn run_coherence(cfg: &ExperimentConfig) -> Result<Vec<CoherenceRow>> {
    cfg.validate()?;
    let geom = cfg.geometry()?;
    let bound = cfg.bound();
    let grid = angular_grid(cfg.estimators.grid_theta, cfg.estimators.grid_phi)?;
    let m = *cfg.pilots.counts.first().expect("validated");
    let d = grid.len();
    let mut rows = Vec::new();

    let fourier = pilot_shape_set(m, crate::sparse::PilotKind::Fourier, &geom, bound, cfg.seed)?;
    let mu_f = mutual_coherence(&stack_sensing_matrix(&fourier, &grid, &geom)?)?;
    rows.push(CoherenceRow {
        design: "fourier".into(),
        m_pilots: m,
        atoms: d,
        draws: 1,
        mu_mean: mu_f,
        mu_std: 0.0,
    });

    let draws = 100;
    let mus = par_map(draws, |i| -> Result<f64> {
        let mut rng = trial_rng(cfg.seed, mix_ids(&[6, i as u64]), 0);
        let shapes = random_pilot_shapes(m, &geom, bound, &mut rng)?;
        mutual_coherence(&stack_sensing_matrix(&shapes, &grid, &geom)?)
    })
    .into_iter()
    .collect::<Result<Vec<f64>>>()?;
    let mean = mus.iter().sum::<f64>() / draws as f64;
    let var = mus.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (draws as f64 - 1.0);
    rows.push(CoherenceRow {
        design: "random".into(),
        m_pilots: m,
        atoms: d,
        draws,
        mu_mean: mean,
        mu_std: var.sqrt(),
    });

    let greedy = pilot_shape_set(m, crate::sparse::PilotKind::Greedy, &geom, bound, cfg.seed)?;
    let mu_g = mutual_coherence(&stack_sensing_matrix(&greedy, &grid, &geom)?)?;
    rows.push(CoherenceRow {
        design: "greedy".into(),
        m_pilots: m,
        atoms: d,
        draws: 1,
        mu_mean: mu_g,
        mu_std: 0.0,
    });
    Ok(rows)
}

/// Spectral-weight magnitudes and feature activations of a trained model.
pub fn run_inspect(
    cfg: &ExperimentConfig,
    model: &ModelHandle,
) -> Result<(Vec<SpectralRow>, Vec<ActivationRow>)> {
    cfg.validate()?;
    let mut spectral = Vec::new();
    for (block, mags) in export_spectral_weights(&model.params) {
        for (mode, mag) in mags.into_iter().enumerate() {
            spectral.push(SpectralRow { block: block.clone(), mode, mean_magnitude: mag });
        }
    }

    let geom = cfg.geometry()?;
    let bound = cfg.bound();
    let m = model.cfg.pilot_count();
    let shapes = pilot_shape_set(m, cfg.pilots.kind, &geom, bound, cfg.seed)?;
    let mut rng = trial_rng(cfg.seed, mix_ids(&[CELL_INSPECT]), 0);
    let scene = draw_trial(cfg, &geom, bound, &shapes, cfg.curves.snr_db, &mut rng)?;
    let features = build_input_features(&scene.pilots, &scene.target)?;
    let acts = crate::fno::model::hfno_activations(&model.params, &model.cfg, &features, &model.plans)?;
    let mut activations = Vec::new();
    for (block, field) in acts {
        for channel in 0..field.nrows().min(3) {
            for position in 0..field.ncols() {
                activations.push(ActivationRow {
                    block: block.clone(),
                    channel,
                    position,
                    value: field[[channel, position]],
                });
            }
        }
    }
    Ok((spectral, activations))
}

/// Per-element channel-gain sweeps: one element displaced at a time, truth
/// vs H-FNO vs OMP, at each configured scattering richness.
pub fn run_curves(cfg: &ExperimentConfig, model: &ModelHandle) -> Result<Vec<GainCurveRow>> {
    cfg.validate()?;
    let geom = cfg.geometry()?;
    let bound = cfg.bound();
    let grid = angular_grid(cfg.estimators.grid_theta, cfg.estimators.grid_phi)?;
    let m = model.cfg.pilot_count();
    let shapes = pilot_shape_set(m, cfg.pilots.kind, &geom, bound, cfg.seed)?;
    let sensing = stack_sensing_matrix(&shapes, &grid, &geom)?;
    let n = geom.n_elements();
    let n_delta = cfg.curves.n_delta.max(2);
    let deltas: Vec<f64> = (0..n_delta)
        .map(|k| bound * (2.0 * k as f64 / (n_delta as f64 - 1.0) - 1.0))
        .collect();
    let mut rows = Vec::new();

    for (li, &clusters) in cfg.curves.cluster_counts.iter().enumerate() {
        let mut scen_cfg = cfg.clone();
        scen_cfg.channel.clusters = clusters;
        let mut rng = trial_rng(cfg.seed, mix_ids(&[CELL_CURVES, li as u64]), 0);
        let realization = sample_channel_realization(&scen_cfg.channel, &mut rng);
        let pilots = observe_pilots(&realization, &shapes, cfg.curves.snr_db, &geom, &mut rng)?;

        // one OMP fit per scenario; synthesis then tracks the swept shape
        let y = stack_measurements(&pilots.measurements);
        let norm_y = y.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        let tol = if norm_y > 0.0 {
            cfg.estimators.omp_residual_scale * (pilots.noise_variance * y.len() as f64).sqrt()
                / norm_y
        } else {
            0.0
        };
        let max_atoms = (clusters * scen_cfg.channel.paths_per_cluster)
            .min(sensing.phi.ncols())
            .min(sensing.phi.nrows());
        let sol = omp(&y, &sensing, max_atoms, tol)?;

        let per_element = par_map(n, |elem| -> Result<Vec<GainCurveRow>> {
            let mut local = Vec::with_capacity(3 * n_delta);
            for &delta in &deltas {
                let shape = crate::geometry::single_element_shape(n, elem, delta, bound)?;
                let truth = synthesize_channel(&realization, &shape, &geom)?;
                local.push(GainCurveRow {
                    clusters,
                    method: "truth".into(),
                    element: elem,
                    delta,
                    gain: truth[elem].norm(),
                });
                let est = model.estimate(&pilots, &shape)?;
                local.push(GainCurveRow {
                    clusters,
                    method: "hfno".into(),
                    element: elem,
                    delta,
                    gain: est[elem].norm(),
                });
                let omp_est = omp_estimate(&sol, &shape, &grid, &geom)?;
                local.push(GainCurveRow {
                    clusters,
                    method: "omp".into(),
                    element: elem,
                    delta,
                    gain: omp_est[elem].norm(),
                });
            }
            Ok(local)
        });
        for chunk in per_element {
            rows.extend(chunk?);
        }
    }
    Ok(rows)
}

/// Outcome of a config-driven training run.
pub struct TrainOutcome {
    pub params: FnoParams,
    pub fno_cfg: FnoConfig,
    pub log: TrainLog,
}

/// Train a model per the configuration, generating the train/validation
/// splits deterministically when no dataset files are supplied.
pub fn train_from_config(
    cfg: &ExperimentConfig,
    train_samples: Option<Vec<crate::fno::TrainSample>>,
    val_samples: Option<Vec<crate::fno::TrainSample>>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let m = *cfg.pilots.counts.first().expect("validated");
    let fno_cfg = cfg.fno_for_pilots(m);
    let train_set = match train_samples {
        Some(s) => s,
        None => {
            let seed = mix_ids(&[CELL_TRAIN_DATA, 1, cfg.seed]);
            let records = generate_records(cfg, Split::Train, cfg.training.n_train, seed, None)?;
            to_train_samples(&records)?
        }
    };
    let val_set = match val_samples {
        Some(s) => s,
        None => {
            let seed = mix_ids(&[CELL_TRAIN_DATA, 2, cfg.seed]);
            let records = generate_records(cfg, Split::Val, cfg.training.n_val, seed, None)?;
            to_train_samples(&records)?
        }
    };
    let tcfg = TrainConfig { seed: cfg.seed, ..cfg.training.clone() };
    let (params, log) = train(&train_set, &val_set, &fno_cfg, &tcfg)?;
    Ok(TrainOutcome { params, fno_cfg, log })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fast_cfg() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.geometry.nx = 4;
        cfg.geometry.nz = 4;
        cfg.pilots.counts = vec![4];
        cfg.snr_db = vec![10.0, f64::INFINITY];
        cfg.trials = 6;
        cfg.estimators.grid_theta = 6;
        cfg.estimators.grid_phi = 6;
        cfg.estimators.estimators = vec![
            EstimatorKind::Nn,
            EstimatorKind::Knn,
            EstimatorKind::Krr,
            EstimatorKind::Omp,
        ];
        cfg.estimators.knn.neighbors = 3;
        cfg
    }

    #[test]
    fn benchmark_produces_one_row_per_cell_and_estimator() {
        let cfg = fast_cfg();
        let report = run_benchmark(&cfg, &ModelSet::empty()).unwrap();
        assert_eq!(report.rows.len(), 2 * 4);
        for row in &report.rows {
            assert!(row.nmse_mean >= 0.0);
            assert!((row.nmse_db - 10.0 * row.nmse_mean.log10()).abs() < 1e-12);
            assert_eq!(row.trials, 6);
            assert_eq!(row.n_elements, 16);
        }
    }

    #[test]
    fn benchmark_is_reproducible() {
        let cfg = fast_cfg();
        let a = run_benchmark(&cfg, &ModelSet::empty()).unwrap();
        let b = run_benchmark(&cfg, &ModelSet::empty()).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
    }

    #[test]
    fn hfno_without_model_is_an_error() {
        let mut cfg = fast_cfg();
        cfg.estimators.estimators = vec![EstimatorKind::Hfno];
        assert!(run_benchmark(&cfg, &ModelSet::empty()).is_err());
    }

    #[test]
    fn coherence_rows_cover_three_designs() {
        let mut cfg = fast_cfg();
        cfg.estimators.grid_theta = 4;
        cfg.estimators.grid_phi = 4;
        let rows = run_coherence(&cfg).unwrap();
        assert_eq!(rows.len(), 3);
        let designs: Vec<&str> = rows.iter().map(|r| r.design.as_str()).collect();
        assert_eq!(designs, vec!["fourier", "random", "greedy"]);
        for r in &rows {
            assert!((0.0..=1.0).contains(&r.mu_mean), "mu {}", r.mu_mean);
        }
    }

    #[test]
    fn trial_streams_are_independent_of_order() {
        let cfg = fast_cfg();
        let geom = cfg.geometry().unwrap();
        let bound = cfg.bound();
        let shapes = pilot_shape_set(4, cfg.pilots.kind, &geom, bound, cfg.seed).unwrap();
        let scene_a = {
            let mut rng = trial_rng(cfg.seed, 9, 3);
            draw_trial(&cfg, &geom, bound, &shapes, 10.0, &mut rng).unwrap()
        };
        // drawing other trials first must not change trial 3
        let _ = {
            let mut rng = trial_rng(cfg.seed, 9, 0);
            draw_trial(&cfg, &geom, bound, &shapes, 10.0, &mut rng).unwrap()
        };
        let scene_b = {
            let mut rng = trial_rng(cfg.seed, 9, 3);
            draw_trial(&cfg, &geom, bound, &shapes, 10.0, &mut rng).unwrap()
        };
        assert_eq!(scene_a.target, scene_b.target);
        assert_eq!(scene_a.truth, scene_b.truth);
    }
}
