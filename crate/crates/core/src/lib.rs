//! Streaming analysis of bot-bot identity reverts in MediaWiki revision
//! histories: ingest, bot roster, revert detection, conflict metrics,
//! edit-summary classification, the reciprocated-revert screen, and a
//! synthetic history generator with ground truth.

pub mod classify;
pub mod detect;
pub mod error;
pub mod ingest;
pub mod metrics;
pub mod pipeline;
pub mod report;
pub mod revision;
pub mod roster;
pub mod screen;
pub mod synth;

pub use error::{Error, Result};
