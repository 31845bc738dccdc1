//! Checkpoints, the completion API model, and user-study session logging.

pub mod checkpoint;
pub mod completion;
pub mod sessions;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta, EncoderSpec, FORMAT_VERSION};
pub use completion::{CompletionRequest, CompletionResponse, KeywordsInput, Model, Suggestion};
pub use sessions::{
    analyze_sessions, JsonlSessionStore, MemorySessionStore, SessionFilters, SessionRecord, SessionStore, SessionSummary,
    TaskKind,
};
