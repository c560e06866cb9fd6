//! Canonical shape space learning for category-level 6D object pose and
//! size estimation, at desk scale.

pub mod error;
pub mod eval;
pub mod geom;
pub mod nets;
pub mod pipeline;
pub(crate) mod io;
pub mod seed;
pub mod shapegen;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use io::{file_sha256, sha256_hex};
pub use seed::derive_seed;
