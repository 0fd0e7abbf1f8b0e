//! Command implementations shared by the `derender` binary and the HTTP
//! service. Each operation has exactly one code path; the CLI only adds file
//! handling around it.

pub mod derender;
pub mod error;
pub mod eval;
pub mod ops;
pub mod service;

pub use error::StageError;
