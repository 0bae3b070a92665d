//! Spectral-Galerkin laboratory for fractional stochastic evolution equations
//! on a bounded interval, driven by a cylindrical Wiener process and a
//! compensated Poisson random measure.
//!
//! ```text
//! du + A u dt + F(u) dt = g(u) dW + ∫_E h(u(t−), ξ) Ñ(dt, dξ),   A = δ + (−Δ)^γ
//! ```
//!
//! Modules, bottom-up: [`spectral`] (eigenbasis of `A`), [`model`] (drift and
//! noise coefficients with certified constants), [`noise`] (sampling),
//! [`solver`] (time stepping and convergence studies), [`dynamics`]
//! (Monte Carlo long-time estimates), [`ldp`] (controlled skeleton equation
//! and its cost) and [`harness`] (config-driven runs).

pub mod dynamics;
pub mod error;
pub mod harness;
pub mod ldp;
pub mod model;
pub mod noise;
pub mod solver;
pub mod spectral;

pub use error::{Error, Result};
