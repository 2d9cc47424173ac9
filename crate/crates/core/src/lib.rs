//! Extended Kalman filtering for ODE models observed through channels with
//! detection limits.
//!
//! Censored measurements get zero gain in a naive EKF chain; their naive
//! moments are kept in a [`CensoredHistory`] and the state is conditioned on
//! all of them lying inside their intervals through truncated-Gaussian
//! moments. The numerical core is generic over [`Scalar`] (`f32`/`f64`);
//! the aliases below fix it to `f64`.

pub mod censored;
pub mod error;
pub mod filter;
pub mod history;
pub mod integrate;
pub mod linalg;
pub mod models;
pub mod scalar;
pub mod scenario;
pub mod truncated;

pub use censored::{
    conditioned_correction, filter_run, naive_step, predict_about, step_seed, Correction, FilterConfig, FilterMode, NaiveStep,
    ObservationFrame, StepRecord,
};
pub use error::{FilterError, Result};
pub use filter::{
    kalman_update, predict, update_uncensored, DynamicsModel, GaussianBelief, LinearDynamics, LinearObservation,
    Linearization, ObservationModel, UpdateTerms,
};
pub use history::{prune_history, propagate_cross_covariance, retained_entries, ChannelObservation, CensoredHistory, PrunePolicy};
pub use integrate::{rk4, IntegratorSettings};
pub use linalg::{finite_difference_jacobian, repair_covariance};
pub use scalar::Scalar;
pub use truncated::{
    truncated_mvn_moments, truncated_mvn_moments_split, truncated_mvn_moments_with, truncated_normal_moments, CensorRegion, MomentMethod,
    TruncationResult, TruncationSettings,
};

pub type Belief = GaussianBelief<f64>;
pub type History = CensoredHistory<f64>;
pub type Region = CensorRegion<f64>;
pub type Frame = ObservationFrame<f64>;
pub type Channel = ChannelObservation<f64>;
pub type Step = StepRecord<f64>;
pub type Truncation = TruncationResult<f64>;
