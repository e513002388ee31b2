//! Curation service: pending mentions, candidate slates computed against
//! the current working ontology, and accept/skip decisions recorded in an
//! append-only log.

pub mod api;
pub mod session;

pub use api::{router, serve, Registry};
pub use session::{
    mention_keys, replay, AcceptRequest, Action, CurationSession, Decision, Replayed, SessionError, SharedEmbedder,
    VersionedSlate,
};
