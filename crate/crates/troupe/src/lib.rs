//! troupe: a deterministic multi-agent coding assistant library.
//!
//! The pieces, roughly in the order a run touches them: agent profiles come
//! from [`registry`], a free-form request becomes a structured spec and
//! layered prompt via [`context`], repository code is found through
//! [`retrieval`], and background documents through [`knowledge`]. Model
//! calls go through [`provider`] (scriptable and replayable), file and
//! command access through [`sandbox`] guarded by [`locks`], and the whole
//! plan/edit/test/review loop lives in [`orchestrator`], leaving a
//! [`transcript`] that can be replayed byte-for-byte.

pub mod context;
pub mod diff;
pub mod knowledge;
pub mod locks;
pub mod orchestrator;
pub mod provider;
pub mod registry;
pub mod retrieval;
pub mod scenario;
pub mod sandbox;
pub mod snapshot;
pub mod transcript;
