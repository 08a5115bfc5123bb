//! Shared numerical solvers: a dense convex QP solver for small
//! problems and a damped least-squares pose solver for the capture
//! planner.

mod pose;
mod qp;

pub use pose::{damped_pose_solve, PoseSolve};
pub use qp::{solve_qp, QpProblem, QpSolution, QpStatus};
