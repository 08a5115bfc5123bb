//! Compliant catching for a mobile manipulator.
//!
//! The pipeline turns a handful of noisy ball observations into a catch:
//!
//! 1. [`ballistics`] filters the observations with an EKF under a drag
//!    model and predicts the remaining flight as a queryable trajectory.
//! 2. [`capture`] scans the predicted flight for a capture pose that the
//!    whole body (planar base + arm) can reach, solved by damped least
//!    squares over the extended kinematic chain in [`model`].
//! 3. [`prc`] drives the robot to the capture pose with a quintic
//!    reaching trajectory sized by per-joint minimum-time bounds.
//! 4. [`plstm`] produces a cushioning velocity sequence from a recurrent
//!    network trained on decaying-velocity demonstrations.
//! 5. [`poc`] tracks that sequence with a per-tick QP whose barrier
//!    constraints keep the container away from the ground and the base.
//! 6. [`sim`] closes the loop: sampled throws, the full pipeline, and
//!    Monte-Carlo statistics over the outcome classes.
//!
//! Everything is deterministic given a seed; the CLI in `softcatch`
//! exposes the stages as subcommands.

pub mod ballistics;
pub mod capture;
pub mod cli;
pub mod config;
pub mod error;
pub mod model;
pub mod optim;
pub mod plstm;
pub mod poc;
pub mod prc;
pub mod sim;

pub use error::{Error, Result};
