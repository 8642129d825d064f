//! Interpretable video action recognition through a concept bottleneck
//! partitioned into motion, object and scene concepts.

pub mod concepts;
pub mod context;
pub mod error;
pub mod explain;
pub mod ingest;
pub mod intervene;
pub mod keyclip;
pub mod motion;
pub mod pipeline;
pub mod train;

pub use error::{Error, Result};
