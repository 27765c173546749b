//! Regression-tree ensembles for predicting concrete porosity from mixture
//! composition: CART trees, random forests with out-of-bag diagnostics,
//! least-squares boosting, Bayesian hyperparameter tuning, permutation
//! importance and partial dependence, plus a closed-form chemo-mechanical
//! porosity model for fly-ash concrete.

pub mod cart;
pub mod chemomech;
pub mod dataset;
pub mod ensemble;
pub mod error;
pub mod interpret;
pub mod metrics;
pub mod model;
pub mod samples;
pub mod tuning;

pub use cart::{RegressionTree, SplitCandidate, SplitRule, TreeParams};
pub use chemomech::{ChemoMixInput, ChemoResult, Composition, GypsumBranch, OxideComposition};
pub use dataset::{ColumnStats, CuringCondition, Dataset, Feature, MixRecord, SplitAssignment};
pub use ensemble::{BoostParams, BoostedModel, ForestModel, ForestParams, ImportanceReport};
pub use error::{Error, Result};
pub use interpret::{PdpCurve, PdpSurface};
pub use metrics::EvalReport;
pub use model::Model;
pub use samples::{FeatureKind, Predictor, Samples};
pub use tuning::{HyperparamPoint, HyperparamSpace, TuneResult};
