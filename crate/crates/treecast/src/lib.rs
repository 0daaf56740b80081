//! Broadcast processes on finite trees with noisy leaf observations.
//!
//! A state is drawn at the root of a tree and propagated along edges by a
//! fixed row-stochastic channel; observations are taken on an antichain of
//! the tree after passing each hidden state through a leaf-noise model
//! (extra chain steps, state mixing, or erasure). The crate computes the
//! conditional leaf measures exactly (as weighted likelihood atoms), plus
//! Monte Carlo estimates of total variation, reconstruction error, and
//! census separation, and it certifies geometric decay of a quadratic
//! discrepancy functional whenever the branching factor times the squared
//! second eigenvalue of the channel is below one.
//!
//! Entry points:
//! - [`channel::Channel`] / [`channel::NoiseChannel`]: transition matrices,
//!   stationary vectors, second eigenvalues, noise models.
//! - [`tree::Tree`] / [`tree::Antichain`]: tree shapes, cutset validation,
//!   minimal-sum antichains by dynamic programming.
//! - [`exact::AtomSet`]: exact conditional measures and their recursion.
//! - [`inference`]: likelihood vectors, posteriors, Monte Carlo estimators.
//! - [`discrepancy`]: the contraction norm, discrepancy values, constants.
//! - [`certify`]: machine-checkable decay certificates and re-verification.
//! - [`config`] / [`runner`]: the experiment config format and the CLI
//!   subcommands built on it.
//!
//! Each major capability has a runnable demo under `examples/`.

pub mod broadcast;
pub mod certify;
pub mod channel;
pub mod config;
pub mod discrepancy;
pub mod exact;
pub mod inference;
mod numfmt;
pub mod runner;
pub mod tree;

pub use channel::{Channel, ChannelError, NoiseChannel, NoiseKind};
pub use discrepancy::{ContractionNorm, DiscrepancyConstants};
pub use exact::AtomSet;
pub use tree::{Antichain, Tree, TreeSpec};
