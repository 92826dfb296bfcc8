//! Dataset generation, Monte Carlo evaluation, experiment drivers, and the
//! report formats behind the command-line interface.

pub mod config;
pub mod dataset;
pub mod report;
pub mod runner;

pub use config::{
    CurvesConfig, EstimatorKind, EstimatorSettings, ExperimentConfig, GeneralizationConfig,
    GeometryConfig, ModelEntry, PilotConfig,
};
pub use dataset::{
    generate_dataset, generate_records, read_dataset, to_train_samples, DatasetHeader,
    DatasetRecord, Split,
};
pub use report::{
    activation_csv, aggregate, coherence_csv, gain_curve_csv, generalization_csv, spectral_csv,
    write_output, ActivationRow, BenchReport, BenchRow, CoherenceRow, GainCurveRow,
    GeneralizationRow, SpectralRow,
};
pub use runner::{
    draw_trial, mix_ids, run_benchmark, run_coherence, run_curves, run_generalization,
    run_inspect, train_from_config, trial_rng, CellContext, ModelHandle, ModelSet, TrainOutcome,
    TrialScene,
};
