//! Numerical laboratory for finite-range elliptic diffusions on torus lattices.
//!
//! The crate discretizes generators `L = Σ_i (a_i/2 ∂_i² + b_i ∂_i)` on a box of
//! circles, computes stationary measures and spectral gaps, expands the
//! stationary density of `L + εA` in powers of `ε`, and runs semigroup decay
//! experiments, both through matrix exponentials and Euler-Maruyama paths.

pub mod dynamics;
pub mod error;
pub mod fit;
pub mod lattice;
pub mod linalg;
pub mod measure;
pub mod model;
pub mod observables;
pub mod operators;
pub mod perturbation;
pub mod sparse;
pub mod stationary;

pub use error::{Error, Result};
