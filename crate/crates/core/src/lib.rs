//! Low-rank structure of attention on synthetic, seeded instances.
//!
//! The crate covers embedding spectra and their decay bounds, attention
//! compression onto the vocabulary subspace, sparse head-wise sketching,
//! the flow of ranks through residual attention layers, truncated-SVD model
//! compression with a layer-dependent rank schedule, and a small experiment
//! harness that writes CSV tables and SVG plots.

pub mod attention;
pub mod compressor;
pub mod embeddings;
pub mod error;
pub mod flow;
pub mod harness;
pub mod linalg;
pub mod rng;

pub use error::{Error, Result};
pub use linalg::{DenseMatrix, SpectrumSpec, SvdResult};
pub use rng::Rng;
