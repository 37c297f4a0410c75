//! Runs every fenced Rust snippet in the book as a doc-test, so the guide
//! can never drift from the library it documents. Each module below wraps
//! one chapter from `book/src/`.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/agents.md")]
pub mod agents {}

#[doc = include_str!("../../../book/src/context.md")]
pub mod context {}

#[doc = include_str!("../../../book/src/planning.md")]
pub mod planning {}

#[doc = include_str!("../../../book/src/providers.md")]
pub mod providers {}

#[doc = include_str!("../../../book/src/sandbox.md")]
pub mod sandbox {}

#[doc = include_str!("../../../book/src/retrieval.md")]
pub mod retrieval {}

#[doc = include_str!("../../../book/src/knowledge.md")]
pub mod knowledge {}

#[doc = include_str!("../../../book/src/diffs.md")]
pub mod diffs {}

#[doc = include_str!("../../../book/src/orchestration.md")]
pub mod orchestration {}

#[doc = include_str!("../../../book/src/transcripts.md")]
pub mod transcripts {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
