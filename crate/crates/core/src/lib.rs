//! Sign-split low-rank representation codec and intent-driven bandwidth
//! admission.
//!
//! The crate has two halves:
//!
//! * a rate-controllable codec: a representation matrix `Z` is split into its
//!   elementwise sign and a truncated SVD of `|Z|` ([`svid`]), the factors are
//!   quantized and Huffman coded ([`codec`]), and [`rda`] measures the
//!   resulting rate/distortion per control parameter `(rank, qbits)`;
//! * an admission planner ([`ida`]) that maps user requests onto codec
//!   settings and bandwidth using an experience table, with a pre-allocation
//!   stage, empirical verification and slack reclamation, driven at scale by
//!   the scenario runner in [`sim`].
//!
//! Numeric kernels are generic over [`Scalar`] (`f32` / `f64`); the planning
//! side works in `f64` through the aliases below.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod codec;
pub mod error;
pub mod ida;
pub mod link;
pub mod matrix;
pub mod rda;
pub mod scalar;
pub mod sim;
pub mod svid;

pub use error::{Error, Result};
pub use matrix::Matrix;
pub use scalar::Scalar;

/// Double-precision representation matrix.
pub type Matrix64 = matrix::Matrix<f64>;
/// Single-precision representation matrix.
pub type Matrix32 = matrix::Matrix<f32>;
/// Double-precision sign/low-rank factors.
pub type SvidFactors64 = svid::SvidFactors<f64>;
/// Single-precision sign/low-rank factors.
pub type SvidFactors32 = svid::SvidFactors<f32>;
/// Double-precision truncated SVD factors.
pub type LowRankFactors64 = svid::LowRankFactors<f64>;
/// Double-precision feature source, the one the admission simulator uses.
pub type FeatureSource64 = rda::FeatureSource<f64>;
/// Single-precision feature source.
pub type FeatureSource32 = rda::FeatureSource<f32>;
