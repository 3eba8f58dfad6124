//! Bayesian alignment of two unlabelled point configurations.
//!
//! The model treats both configurations as noisy, partial observations of a
//! Poisson process of hidden locations, related by an affine map `y ↦ A y + τ`.
//! Inference runs by MCMC over the matching, translation, noise scale and
//! (optionally) rotation; the matching is reported through a loss-optimal
//! point estimate.

pub mod diagnostics;
pub mod em;
pub mod estimation;
pub mod geometry;
pub mod io;
pub mod model;
pub mod sampler;
pub mod synthetic;

pub use model::{
    Configuration, Hyperparams, LossSpec, Losses, MatchingMatrix, Matrix, Point, PoseParams,
    TransformMode,
};
pub use sampler::{run_chain, Chain, ChainState, Sampler, SweepSchedule, Trace};
pub use estimation::{
    expected_loss, match_probabilities, optimal_matching, summarize, EstimationError,
    MatchProbabilityTable, PosteriorSummary,
};
