//! Periodic orbits of prescribed energy for natural mechanical systems.
//!
//! A periodic solution of `q̈ = grad U` with `½|q̇|² = U(q)` is found as a
//! critical point of the free-period action
//!
//! ```text
//! L_ε(x, τ) = e^{-τ} E(x) + e^{τ} U(x) + ε (e^{-τ} + e^{τ/2})
//! ```
//!
//! over 1-periodic loops `x` and the log-period `τ = ln T`. The crate is
//! organised bottom-up:
//!
//! * [`geometry`] – configuration space charts (Euclidean, flat torus,
//!   conformal plane).
//! * [`potential`] – the shifted potential `U = E - V` and sampled checks of
//!   the hypotheses on `U`.
//! * [`homology`] – mod-2 relative cubical homology of the negative set.
//! * [`loops`] – truncated Fourier loops, quadrature and the H¹ structure.
//! * [`action`] – the penalized action, its gradient and residuals.
//! * [`linking`] – the linking geometry and the initial minimax family.
//! * [`solver`] – minimax deformation, Newton refinement, depenalization.
//! * [`verify`] – physical orbit reconstruction and independent checks.

pub mod action;
pub mod error;
pub mod geometry;
pub mod grid;
pub mod homology;
pub mod linking;
pub mod loops;
pub mod ode;
pub mod potential;
pub mod solver;
pub mod verify;

pub use error::{Error, Result};
