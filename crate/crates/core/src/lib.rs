//! Adaptive relational transformer for multi-agent trajectory prediction.
//!
//! Pipeline, per scene:
//!
//! 1. [`targ`] embeds observed tracks and builds a temporal-aware relation
//!    graph: per-pair attention over time steps, aggregated relation
//!    features, and sigmoid edge weights.
//! 2. [`aip`] prunes each agent's neighbor row with top-p filtering.
//! 3. [`rt`] refines node and edge features with edge-aware attention over
//!    the pruned neighborhoods.
//! 4. [`head`] decodes K candidate futures and scores them with best-of-K
//!    losses and minADE/minFDE.
//!
//! [`model`] wires the stages together; [`harness`] holds training,
//! evaluation, sweeps, MAC accounting and the file formats the CLI uses.

pub mod aip;
pub mod data;
pub mod error;
pub mod harness;
pub mod head;
pub mod model;
pub mod rt;
pub mod targ;
pub mod tensor;

pub use error::{ArtError, Result};
