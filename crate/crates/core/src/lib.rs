//! Numerical laboratory for two wave equations coupled by velocities with a
//! localized damping acting on one equation.
//!
//! The crate simulates the damped and conservative systems, checks the
//! geometric hypotheses behind their stability (cutoff coefficients, sampled
//! geometric control condition, piecewise multiplier condition), certifies
//! exponential decay through resolvent scans and spectral computations, and
//! synthesizes exact controls by inverting the observability Gramian with
//! conjugate gradients.

pub mod control;
pub mod discretization;
pub mod dynamics;
pub mod geometry;
pub mod scenario;
pub mod spectral;

pub mod cli;
