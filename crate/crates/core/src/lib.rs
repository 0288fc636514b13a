//! Next point-of-interest recommendation with recency-aware popularity.
//!
//! The crate is `no_std` (it needs `alloc`) and holds every algorithmic
//! piece of the pipeline: trajectory segmentation and splitting, the
//! popularity score, the trajectory flow map, a small reverse-mode tensor
//! kernel, the graph-enhanced transformer, training, ranking metrics and the
//! alpha/beta sweep. File formats, parsing of raw logs and the command line
//! live in the `poirec` crate.
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod error;
pub mod flowmap;
pub mod ingest;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod popularity;
pub mod sweep;
pub mod synthetic;
pub mod train;

pub use error::{Error, Result};

/// Seconds in the 24 hour trajectory window and in a day.
pub const SECONDS_PER_DAY: i64 = 86_400;
