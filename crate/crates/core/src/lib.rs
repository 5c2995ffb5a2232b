//! Hyperspectral pixel classification with online (test-time) and offline
//! data augmentation.
//!
//! The crate is organised by pipeline stage:
//!
//! * [`hsio`] raw cube / label / split / sample file formats, per-band
//!   normalization and a synthetic scene generator.
//! * [`splits`] balanced, imbalanced and patched train/validation/test splits
//!   and Monte-Carlo resampling.
//! * [`pca`] principal component model (cyclic Jacobi eigensolver).
//! * [`augment`] PCA-based and noise-injection sample synthesis, plus the
//!   offline set-enlargement policy.
//! * [`cnn`] the 1D spectral CNN with hand-written backpropagation and ADAM.
//! * [`tta`] test-time augmentation with majority / soft voting.
//! * [`eval`] confusion matrices, OA/AA, the Wilcoxon signed-rank test and
//!   timing helpers.
//! * [`experiment`] the end-to-end Monte-Carlo experiment driver used by the
//!   command-line tool.

pub mod augment;
pub mod cnn;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod hsio;
pub mod pca;
pub mod seed;
pub mod splits;
pub mod tta;

pub use error::{Error, Result};
pub use hsio::{HsiCube, LabelMap, Spectrum};
