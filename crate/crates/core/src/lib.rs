//! Base noun-phrase chunking workbench core.
//!
//! Everything here is `no_std` with `alloc`: the corpus model, chunk
//! metrics, the transformation-based chunker, query-by-committee active
//! learning, the bracketing rule language, cost accounting and the
//! event-sourced session state machine. File IO, HTTP and the command
//! line live in the `npchunk` crate.
#![no_std]

extern crate alloc;

pub mod al;
pub mod corpus;
pub mod cost;
pub mod dsl;
pub mod metrics;
pub mod session;
pub mod synth;
pub mod tbl;
