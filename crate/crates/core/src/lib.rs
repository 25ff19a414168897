#![no_std]
//! Minimax robust designs for regression with responses missing completely
//! at random.
//!
//! The crate is `no_std` + `alloc`. Parallel execution and file formats live
//! in the `robdesign` binary crate.

extern crate alloc;

pub mod apportion;
pub mod criterion;
pub mod error;
pub mod exec;
pub mod model;
pub mod numerics;
pub mod optimizer;
pub mod simulate;
mod stats;

pub use error::{Error, Result};
pub use exec::{Executor, Sequential};

/// Version of this crate, recorded in run metadata.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
