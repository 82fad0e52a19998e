//! Reduced-order walking and push-recovery control.
//!
//! The crate combines a single-rigid-body (SRB) model predictive controller
//! that schedules contact wrenches for the feet and one bracing hand with a
//! hybrid linear inverted pendulum (HLIP) step planner. A mode supervisor
//! detects pushes from the MPC prediction and, when a wall is within arm
//! reach, braces against it while stepping faster. A nonlinear SRB plant
//! with wall geometry and a failure classifier closes the loop.
//!
//! Everything here is `no_std` with `alloc`; file formats, the sweep harness
//! and the command line live in the companion `wallbrace` crate.

#![cfg_attr(not(any(feature = "std", test)), no_std)]

extern crate alloc;

pub mod controller;
pub mod discretize;
pub mod error;
pub mod geometry;
pub mod hlip;
pub mod mpc;
pub mod plant;
pub mod qp;
pub mod sim;
pub mod srb;
pub mod supervisor;

pub use error::Error;
pub use nalgebra;

/// Convenience alias used across the crate.
pub type Result<T> = core::result::Result<T, Error>;
