//! Ground-truth data generators and the benchmark harness.

mod bench;
mod illustrative;
mod scenario;

pub use crate::estimation::{PotentialOutcomes, TruthRecord};
pub use bench::{derive_seed, run_benchmark, summarize, BenchConfig, BenchOutput, BenchReport, BenchRow, RunRecord, ORACLE};
pub use illustrative::{
    illustrative_example, illustrative_truth, IllustrativeSample, IllustrativeTruth, RESPONSE_RATE, SHARE_HIGH_SUPPORT,
    TREAT_PROB,
};
pub use scenario::{
    generate_scenario, Heterogeneity, Nonlinearity, Overlap, Scenario, ScenarioSpec, TypeMix, PROPENSITY_FLOOR,
};
