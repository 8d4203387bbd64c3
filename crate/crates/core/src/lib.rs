//! Design-stage tooling for matched observational studies.
//!
//! The crate covers the full design/analysis loop:
//!
//! * [`dataset`]: typed CSV ingestion with one-hot expansion of categoricals.
//! * [`pilot`]: construction of a control-only pilot sample disjoint from the
//!   analysis sample.
//! * [`balance`]: pooled and omitted-variable-bias standardized mean
//!   differences, pilot outcome correlations and the normalized bias product.
//! * [`scores`]: L1-penalized propensity and prognostic score models.
//! * [`matchopt`]: optimal pair matching with exact blocks, calipers and
//!   refined (tiered) covariate balance.
//! * [`inference`]: McNemar's test and a Gamma sensitivity analysis.
//! * [`viz`]: deterministic SVG jointVIP and Love plots.
//!
//! Data-parallel loops go through [`exec::Execution`]; with the `parallel`
//! feature disabled every operation runs sequentially with identical output.

pub mod balance;
pub mod dataset;
pub mod exec;
pub mod inference;
pub mod linalg;
pub mod matchopt;
pub mod pilot;
pub mod rng;
pub mod scores;
pub mod stats;
pub mod viz;

pub use balance::{bias_table, BalanceRow, RowFlag, ScoreColumn};
pub use dataset::{CsvLayout, DesignView, Role, StudyData, VariableKind, VariableSpec};
pub use exec::Execution;
pub use inference::{gamma_threshold, mcnemar, sensitivity_p, McNemarResult, PairedOutcomes};
pub use matchopt::{MatchResult, MatchSpec};
pub use pilot::{build_pilot, PilotMode, PilotStrategy};
pub use scores::{fit_lasso, Family, ScoreModel};

/// Crate version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
