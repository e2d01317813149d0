//! Staged removal of skip connections from small residual networks, plus an
//! analytical cost model of what the removal buys on a streaming FPGA dataflow
//! implementation.
//!
//! The crate is organised around five pieces:
//!
//! - [`nn`]: a deterministic tensor + reverse-mode differentiation engine with
//!   exactly the layer primitives the residual topologies need.
//! - [`topology`]: ResNet-family graph construction parameterised by a
//!   per-block skip kind, and exact weight transfer between topologies that
//!   differ only in their skip wiring.
//! - [`distill`]: the staged-removal training pipeline (train a short-skip
//!   teacher, then repeatedly rebuild with more skips removed, inherit
//!   weights, retrain) and its negative baselines.
//! - [`hwmodel`]: a streaming-dataflow resource/throughput model for residual
//!   vs. plain blocks, with a token-level pipeline simulator as oracle.
//! - [`harness`]: dataset ingestion, synthetic data, experiment configs,
//!   reports, and the `deskip` CLI entry points.

pub mod distill;
pub mod harness;
pub mod hwmodel;
pub mod nn;
pub mod topology;
