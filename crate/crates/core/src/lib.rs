//! Contextual factor selection for linear ranking functions.
//!
//! Given a black-box ranking function, per-factor compute costs and a
//! context per request, learn which factors each request can skip while
//! keeping the induced ranking close to the full-factor ranking.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`). The aliases
//! at the crate root fix the scalar to `f64`, which is what the command
//! line and the on-disk formats use.

pub mod baselines;
pub mod env;
pub mod error;
pub mod eval;
pub mod oracle;
pub mod policy;
pub mod ranking;
pub mod scalar;
pub mod synth;

pub use error::{CfsError, Result};
pub use ranking::{FactorMask, Permutation, RequestId};
pub use scalar::Scalar;

pub type FactorMatrix = ranking::FactorMatrix<f64>;
pub type CostVector = ranking::CostVector<f64>;
pub type LinearRankingModel = ranking::LinearRankingModel<f64>;
pub type LossParts = ranking::LossParts<f64>;
pub type CfsLossParams = ranking::CfsLossParams<f64>;
pub type PageView = synth::PageView<f64>;
pub type Dataset = synth::Dataset<f64>;
pub type EnvParams = env::EnvParams<f64>;
pub type Episode = env::Episode<f64>;
pub type Actor = policy::Actor<f64>;
pub type Critic = policy::Critic<f64>;

pub type Trainer = policy::Trainer<f64>;
pub type Checkpoint = policy::Checkpoint<f64>;
pub type OracleResult = oracle::OracleResult<f64>;
