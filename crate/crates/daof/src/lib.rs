//! Desk-scale state-estimation laboratory.
//!
//! Builds and benchmarks a learned closed-loop filter ("DAOF") that maps a
//! sliding window of past estimates and measurements to the next state
//! estimate, trained with a twin-critic deterministic actor-critic loop.
//! Classical baselines (Kalman, unscented Kalman, bootstrap particle,
//! supervised-regression filters) run against the same stochastic vehicle
//! systems with Gaussian-mixture process noise and Laplace measurement noise.

pub mod bench;
pub mod core;
pub mod noise;
pub mod nn;
pub mod filters;
pub mod rl;
pub mod systems;
