//! Desk-scale flow-matching toolkit: a small velocity network with exact
//! reverse-mode gradients, the flow-matching objective and Euler sampler,
//! rectified-flow distillation and preference tuning, forward-only
//! video-latent kernels, a FLOPs/memory/parallelism planner with a DP load
//! balancer, and loss-trajectory analysis.

pub mod align;
pub mod checkpoint;
pub mod dataset;
pub mod dynamics;
pub mod error;
pub mod flow;
pub mod kernels;
pub mod nnet;
pub mod parallel;
pub mod plan;
pub mod rng;
pub mod stats;
pub mod svg;
pub mod train;
pub mod tensor;

pub use error::{Error, Result};
