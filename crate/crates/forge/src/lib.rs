//! Corpus construction for speech role-play: character profiles from seed facts,
//! two-agent dialogues, speech for every turn, and a chain of quality filters.
//! External models sit behind client traits with deterministic stubs and a
//! record/replay layer.

pub mod clients;
pub mod dialogue;
pub mod error;
pub mod filters;
pub mod fixture;
pub mod pipeline;
pub mod profile;
pub mod speech;
pub mod verify;

pub use error::{ForgeError, Result};
