//! Role-aware speech synthesis: codebook, flow matching, vocoder and speaker embedding.

pub mod codebook;
pub mod flow;
pub mod speaker;
pub mod vocoder;

pub use codebook::{fit_codebook, pool_frames, upsample_frames, Codebook};
pub use flow::{
    cfm_loss, cfm_loss_with, cfm_path, cfm_target, initial_noise, masked_distance, mel_denorm, mel_norm, sample_mel, FlowConditions,
    FlowConfig, FlowNet, OracleField, VectorField,
};
pub use speaker::{cosine, speaker_embedding, SpeakerEmbedder, SpeakerEmbedding, SPEAKER_DIM};
pub use vocoder::Vocoder;
