//! Block-based compressed sensing of grayscale images with a learned
//! sampling operator and a Laplacian-pyramid reconstruction network.
//!
//! An image is split into non-overlapping `B x B` blocks; a learned
//! strided convolution projects each block to a short measurement vector.
//! Reconstruction starts from a small linear estimate at `1/S` scale and
//! progressively doubles it, adding a predicted residual at each level,
//! until the full resolution is reached. Sampling and reconstruction
//! parameters are trained jointly against a multi-level Charbonnier loss.
//!
//! The crate is self-contained: it ships its own differentiable tensor
//! engine ([`tensor`]), image handling ([`image_io`]), the sampling and
//! reconstruction operators ([`sampling`], [`model`]), the training loop
//! ([`train`]) and PSNR/SSIM evaluation ([`metrics`]). The `lapcs` binary
//! in `src/bin` is a thin wrapper over [`cli`].
//!
//! See the `examples/` directory for one runnable program per capability.

pub mod error;
pub mod image_io;
pub mod sampling;
pub mod gradcheck;
pub mod tensor;

pub use error::{Error, Result};
