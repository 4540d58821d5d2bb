//! Multi-layer risk detection for multi-turn financial agent dialogues.
//!
//! Four complementary layers feed one calibrated decision:
//!
//! 1. [`pattern`] — suspicious-behavior pattern matching over sliding
//!    windows (keyword hits, semantic similarity, order consistency).
//! 2. [`deferred`] — deferred-risk estimation from profile and behavior
//!    history, plus adversarial scenario generation with a generative
//!    rollout over hypothetical future turns.
//! 3. [`judge`] — two-stage LLM semantic audit: free-form rationale, then a
//!    forced Safe/Unsafe verdict.
//! 4. [`fusion`] — adaptive weight selection and linear risk fusion into a
//!    block/allow decision.
//!
//! [`eval`] adds a corpus harness with structured AUPRC, hierarchical attack
//! success rate, and composite scoring. Everything runs offline by default:
//! the bundled scripted chat provider and the hashing embedder need no
//! network or model weights.

pub mod backend;
pub mod embedding;
pub mod error;
pub mod model;
pub mod deferred;
pub mod pattern;

pub use error::{Error, Result};
