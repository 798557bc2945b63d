//! Interpretable multi-step forecasting with a hierarchy of prototypes.
//!
//! A window of the target series and its exogenous covariates is embedded
//! per channel, fused by bottleneck mixer blocks and pooled into a query
//! vector. The forecast is a similarity-weighted mix of period-long prototype
//! patterns arranged in a tree whose leaves can be refined by splitting.

pub mod checkpoint;
pub mod data;
pub mod encoder;
pub mod error;
pub mod evaluation;
pub mod io;
pub mod model;
pub mod prototypes;
pub mod seed;
pub mod tensor;
pub mod trainer;

pub use checkpoint::ModelCheckpoint;
pub use data::{DatasetBundle, Normalizer, Split, VariableSchema, WindowInstance};
pub use error::{Error, Result};
pub use evaluation::{activation_report, evaluate, explain, ActivationTimeline, Explanation, MetricReport};
pub use model::{ModelConfig, ProtoTsModel};
pub use prototypes::{NodeId, PrototypeTree};
pub use trainer::{staged_train, TrainConfig, TrainData, TrainReport};
