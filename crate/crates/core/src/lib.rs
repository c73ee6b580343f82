//! Unsupervised phase-diagram mapping from iPEPS wave functions.
//!
//! The crate is layered bottom-up:
//!
//! * [`tensor`]: dense real tensors, contraction, truncated SVD, `expm`.
//! * [`model`]: the frustrated bilayer Heisenberg model in the dimer basis
//!   and its imaginary-time gates.
//! * [`ipeps`]: the two-tensor checkerboard iPEPS and its simple-update
//!   evolution; bond weights double as machine-learning features.
//! * [`ctm`]: corner transfer matrix environments, energies, two-site
//!   reduced density matrices and energy-based post-selection.
//! * [`autoencoder`]: a small fully connected autoencoder trained with ADAM.
//! * [`mapper`]: the iterative anomaly-detection loop over a parameter grid.

pub mod autoencoder;
pub mod ctm;
pub mod ipeps;
pub mod mapper;
pub mod model;
pub mod tensor;

#[cfg(test)]
pub(crate) mod testutil;

pub use tensor::{contract, expm_hermitian, permute, svd_truncated, SvdResult, Tensor, TensorError};
