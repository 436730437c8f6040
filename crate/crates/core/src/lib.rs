//! Iterative conditional replacement for conditionally specified models.
//!
//! Compatibility checks, joint synthesis from partial models, ensemble
//! mixtures, and power-method and Gibbs baselines over dense discrete tables.

pub mod baselines;
pub mod cycles;
pub mod engine;
pub mod ensemble;
pub mod error;
pub mod model;
pub mod synthesis;
pub mod tensor;

pub use baselines::{
    compare_report, gibbs_batches, gibbs_sample, power_iterate, transition_matrix, CompareConfig, CompareReport,
    PowerResult, SampleTrace, TransitionMatrix,
};
pub use cycles::{check_edge, enumerate_cycles, has_cycle_through_all, validate_cycle, EdgeCheck, UpdateCycle};
pub use engine::{
    check_compatibility, project, run_first_cycle, run_icr, stationary_set, IcrConfig, IcrRun, InitSpec, StationarySet,
    Verdict,
};
pub use ensemble::{
    collect_ensemble, grid_search_mixture, model_deviance, optimize_mixture, Ensemble, Measure, MixtureResult,
};
pub use error::{IcrError, Result};
pub use model::{
    derive_csm_from_joint, distribution_from_json, distribution_to_json, parse_model, serialize_model, BlockPattern,
    ConditionalBlock, CsmModel, ModelClass, Variable,
};
pub use synthesis::{
    compose_auto, ipf_fit, run_plan, validate_sufficiency, Assumption, Flag, FlagKind, Intermediate, Phase, PhaseMode,
    SufficiencyReport, SynthesisPlan,
};
pub use tensor::{compose, kl, total_variation, Axis, Distribution, DivergenceReport, Scope, VarId};
