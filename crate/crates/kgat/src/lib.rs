//! Kernel graph attention for claim verification.
//!
//! A claim and its retrieved evidence sentences form a small fully
//! connected graph. Every node encodes the claim paired with one
//! evidence sentence; kernel-pooled token attention propagates
//! information along the edges, and a second kernel readout over
//! claim/evidence similarities decides which node's verdict to trust.
//! The joint prediction marginalizes per-node label distributions
//! under that selection weighting.
//!
//! Everything is built on a small tape-based reverse-mode autodiff
//! engine over dense `f64` matrices — no external ML framework — so
//! each run is bit-reproducible given a seed. The crate ships:
//!
//! - [`tensor`], [`tape`], [`params`], [`optim`]: the differentiable
//!   core (dense matrices, recorded ops, Adam with warmup/decay).
//! - [`kernels`]: the Gaussian kernel bank shared by every attention
//!   head.
//! - [`data`], [`encoder`]: a synthetic corpus generator, JSONL
//!   loading, vocabulary handling, and claim/evidence sequence
//!   assembly.
//! - [`model`]: the graph network itself, with ablation switches for
//!   node-side and edge-side kernels.
//! - [`train`], [`metrics`], [`checkpoint`]: batched training with
//!   gradient accumulation, evaluation scores, and exact-round-trip
//!   checkpoints.
//! - [`ranker`]: a standalone kernel reranker that reorders candidate
//!   evidence by pairwise hinge training.
//! - [`gradcheck`]: finite-difference validation of every recorded
//!   gradient.
//! - [`cli`]: the `kgat` command-line front-end tying it all together.
//!
//! See the `examples/` directory for runnable walkthroughs of each
//! capability.

pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod encoder;
pub mod error;
pub mod fsio;
pub mod gradcheck;
pub mod kernels;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod params;
pub mod ranker;
pub mod tape;
pub mod tensor;
pub mod train;
