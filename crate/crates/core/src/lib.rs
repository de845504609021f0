//! Unbiased gradient estimators for objectives of factorial Bernoulli
//! latents, with the toy and subset-selection objectives, optimizers and a
//! Monte Carlo variance lab.

pub mod error;
pub mod estimators;
pub mod objectives;
pub mod optim;
pub mod rng;
pub mod types;
pub mod variance;

pub use error::{Error, Result};
pub use estimators::{EndpointPolicy, EstimatorKind};
pub use objectives::Objective;
pub use rng::{Purpose, RngStream};
pub use types::{BinaryVec, CoupledDraw, GradEstimate, LogitVec, ThetaVec};
