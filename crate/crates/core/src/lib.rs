//! Beam alignment over hierarchical mmWave codebooks with successive subtree
//! elimination (SSE), a fixed-confidence best-arm identification policy that
//! plays one bandit game per selected codebook level.
//!
//! The crate is organised bottom-up:
//!
//! - [`array`]: uniform linear array physics, multipath channels, fading and
//!   stochastic received-signal-strength rewards.
//! - [`codebook`]: the binary tree of beamforming vectors, noiseless reward
//!   profiles and structural checks.
//! - [`sse`]: the bandit policy itself.
//! - [`complexity`]: closed-form sample-complexity predictions and the offline
//!   pruning-vector optimiser.
//! - [`harness`]: seeded Monte Carlo campaigns with Wilson-score stopping.
//! - [`config`]: layered TOML/flag configuration used by the CLI and the C ABI.

pub mod array;
pub mod codebook;
pub mod complexity;
pub mod config;
pub mod csvfmt;
pub mod error;
pub mod harness;
pub mod sse;

pub use error::{Error, Result};
