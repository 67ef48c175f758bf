//! Dynamic salient region graph networks, end to end: a small reverse-mode
//! tape, region prediction with triangular-kernel pooling, spatio-temporal
//! graph message passing, a procedural synchronous-motion video task, and
//! the training/evaluation loop that ties them together.

pub mod cli;
pub mod config;
pub mod diffcore;
pub mod error;
pub mod metrics;
pub mod model;
pub mod node_pool;
pub mod region_gen;
pub mod st_gnn;
pub mod syncshapes;
pub mod trainkit;

pub use diffcore::{Real, Tensor};
pub use error::{Error, Result};
