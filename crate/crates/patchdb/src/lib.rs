//! Storage layouts, materialized patch collections, plan execution, the
//! benchmark harness and the command-line driver for the patch engine.

pub mod bench;
pub mod collection;
pub mod error;
pub mod pipeline;
pub mod planfile;
pub mod ppm;
pub mod query;
pub mod recstore;
pub mod storage;

pub use error::{Error, Result};
