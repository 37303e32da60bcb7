//! Measurement tools: speaker-similarity matrices, voice matching, corpus statistics
//! and pooled ASR/TTS error rates.

pub mod error;
pub mod fixture;
pub mod run;
pub mod similarity;
pub mod stats;
pub mod wer;

pub use error::{EvalError, Result};
pub use similarity::{similarity_matrix, voice_match, SimilarityMatrix, VOICE_MATCH_THRESHOLD};
pub use stats::{corpus_stats, CorpusStats};
pub use wer::{eval_asr_wer, eval_tts_wer, WerReport};
