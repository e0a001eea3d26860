//! Streaming principal-subspace learning: an online subspace tracker with a
//! fading running mean and periodic symmetric re-orthonormalization, embedded
//! as a stop-gradient projection bottleneck inside a small, manually
//! backpropagated autoencoder. Includes an exact batch oracle, image quality
//! metrics, bit-budget accounting and synthetic datasets with known spectra.

pub mod autoencoder;
pub mod bottleneck;
pub mod datasets;
pub mod error;
pub mod linalg;
pub mod metrics;
pub mod oja;
pub mod oracle;
pub mod stats;

pub use error::{CoreError, PgmError, Result};
pub use linalg::DenseMatrix;
