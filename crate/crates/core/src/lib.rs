//! Policy gradient for reinforcement learning with general utilities.
//!
//! The utility `F` is a function of the discounted state-action occupancy
//! `lambda`. Each iteration estimates `lambda` with a critic, turns
//! `grad_lambda F` into a pseudo-reward, and takes a REINFORCE step on it.
//! The default critic fits a softmax density to states drawn from the
//! discounted visitation distribution by maximum likelihood.

pub mod envs;
pub mod error;
pub mod experiment;
mod jsonpos;
pub mod mdp;
pub mod occupancy;
pub mod oracle;
pub mod pgoma;
pub mod policy;
pub mod rng;
pub mod utility;

pub use error::{Error, Result};
pub use mdp::{exact_occupancy, TabularMdp, Trajectory};
pub use occupancy::{DensityModel, MleConfig, OccupancyDistribution};
pub use pgoma::{run_pgoma, PgomaConfig, RunTrace};
pub use policy::SoftmaxPolicy;
pub use rng::RngSeed;
pub use utility::Utility;
