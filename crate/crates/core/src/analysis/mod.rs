//! Instruments for checking how noise-injected quantization behaves:
//! Hessian traces, the two convergence probes, boundary-scaling sweeps,
//! landscape slices and the truncation vs min-max comparison.

pub mod compare;
pub mod hessian;
pub mod probes;
pub mod sensitivity;
pub mod stats;
pub mod sweep;

pub use compare::{compare_truncation_minmax, CompareConfig, CompareRow, CompareSummary, CompareTable, FULL_PRECISION, MINMAX, TRUNCATION};
pub use hessian::{hessian_trace, layer_weight_groups, network_traces, GroupTrace, ParamGroup, TraceReport};
pub use probes::{
    clip_growth_instance, clip_growth_probe, noise_shrink_probe, ClipGrowthConfig, ClipGrowthReport, NoiseShrinkConfig, NoiseShrinkReport,
    Quadratic,
};
pub use sensitivity::{sensitivity_report, verified_sensitivity_pair, LayerSensitivity, PairTraces, SensitivityReport};
pub use stats::{spearman, trapezoid};
pub use sweep::{check_factors, landscape_slice, robustness_sweep, sweep_variants, LandscapeGrid, SweepResult, SweepTarget};
