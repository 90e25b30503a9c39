//! Transaction-level simulator of a relational memory engine that serves
//! projected column groups of row-major tables out of an ephemeral
//! address range, plus the benchmark queries that exercise it.

pub mod cache;
pub mod engine;
pub mod geometry;
pub mod memsim;
pub mod registry;
pub mod system;
pub mod tables;
pub mod bench;
pub mod verify;
