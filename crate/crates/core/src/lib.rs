//! Routed low-rank adapters with a shared down-projection and token-level
//! soft gating over several up-projection heads, together with the geometry
//! that turns segmentation masks into box-and-point prompts and a synthetic
//! multi-task harness for comparing adapter variants.
//!
//! Modules, bottom-up:
//!
//! * [`numkit`]: matrices, seeded RNG, finite differences.
//! * [`adapter`]: the layer, its exact backward pass, head ablation, checkpoints.
//! * [`analysis`]: head similarity, routing activation statistics, trace export.
//! * [`maskgeom`]: bounding box, exact distance transform, inscribed-circle prompts.
//! * [`harness`]: synthetic tasks, training arms, synergy scoring.

pub mod adapter;
pub mod analysis;
pub mod error;
pub mod harness;
pub mod maskgeom;
pub mod numkit;

pub use error::{Error, ErrorKind, Result};
