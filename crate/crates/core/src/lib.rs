//! Numerical laboratory for weight decay at the edge of stability.
//!
//! The crate has three layers:
//!
//! - **Dynamical models**: [`oscillator`] iterates the exact two-variable
//!   damped map for sharpness dynamics (plus its continuous envelope ODE and
//!   closed-form steady states); [`toyloss`] is a three-variable loss with
//!   exact derivatives that reproduces the same dynamics end to end.
//! - **Instrumented training**: [`netfwd`] implements MLP forward/backward
//!   passes and the matrix-free second-order products (Hessian-vector,
//!   Jacobian-vector, vector-Jacobian); [`curvature`] measures sharpness,
//!   its gradient, and the interaction scalars along a trajectory;
//!   [`trainer`] runs full-batch gradient descent with decoupled weight
//!   decay, onset detection, and γ-sweeps.
//! - **Spectrum consequences**: [`ntk`] evaluates the normalized Gram matrix
//!   Θ̂ = (1/N)·J·Jᵀ matrix-free, checks the Weyl bound
//!   |λmax(H) − λmax(Θ̂)| ≤ ‖R‖₂, and analyzes the rank-one alignment-shift
//!   model A(α) = diag(λ) + α·bbᵀ.
//!
//! [`linalg`] provides the shared eigensolvers (dense oracle, Lanczos with
//! full reorthogonalization, power iteration), [`data`] the CIFAR-10 binary
//! loader and synthetic datasets, [`cli`] the command-line front end, and
//! [`parallel`] data-parallel helpers with a bit-identical sequential
//! fallback (feature `parallel`, on by default).

pub mod cli;
pub mod curvature;
pub mod data;
pub mod error;
pub mod linalg;
pub mod netfwd;
pub mod ntk;
pub mod oscillator;
pub mod parallel;
pub mod toyloss;
pub mod trainer;

pub use error::{Error, Result};
