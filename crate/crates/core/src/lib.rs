//! Core of the patch engine: the patch data model and lineage descriptors,
//! the canonical wire format, the sequential-decode clip codec, the index
//! suite (hash, ordered, R-tree, Ball-tree), the synthetic vision stages and
//! the seeded scene generator.
//!
//! Everything here is pure computation over owned values. The crate is
//! `no_std` and only needs `alloc`; file IO, query execution and the command
//! line live in the `patchdb` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod codec;
pub mod digest;
pub mod error;
pub mod etl;
pub mod index;
pub mod metric;
pub mod patch;
pub mod scene;
pub mod schema;
pub mod wire;

pub use error::{Error, Result};
pub use patch::{
    base_frames_of, derive_patch, make_patch, make_patch_with, BoundingBox, Frame, LineageRef,
    LineageStep, MetaValue, Metadata, Patch, PatchId, SourceKind, SourceRef, Tag,
};
pub use schema::{check_schema, DataShape, Dim, LabelDomain, PatchSchema};
