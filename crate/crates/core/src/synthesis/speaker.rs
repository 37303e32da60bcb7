//! Speaker embedding: per-bin statistics of normalised log-mel frames.

use crate::dsp::{remove_dc, MelAnalyzer, MelConfig};
use crate::error::{CoreError, Result};
use crate::types::AudioAsset;

pub const SPEAKER_DIM: usize = 160;
const MIN_SECS: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerEmbedding {
    pub vector: Vec<f64>,
}

impl SpeakerEmbedding {
    pub fn cosine(&self, other: &Self) -> f64 {
        cosine(&self.vector, &other.vector)
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na * nb)).clamp(-1.0, 1.0)
    }
}

pub struct SpeakerEmbedder {
    analyzer: MelAnalyzer,
}

impl Default for SpeakerEmbedder {
    fn default() -> Self {
        Self::new()
    }
}

impl SpeakerEmbedder {
    pub fn new() -> Self {
        Self {
            analyzer: MelAnalyzer::new(MelConfig::frontend()),
        }
    }

    pub fn embed(&self, audio: &AudioAsset) -> Result<SpeakerEmbedding> {
        audio.validate()?;
        if audio.duration_secs() < MIN_SECS {
            return Err(CoreError::Audio(format!(
                "{} is {:.3} s long; speaker embedding needs at least {MIN_SECS} s",
                audio.asset_id,
                audio.duration_secs()
            )));
        }
        let signal = remove_dc(&audio.samples);
        // log10 with an 80 dB dynamic range below the clip maximum, centred on the
        // clip's mean level so the statistics describe spectral shape rather than loudness.
        let amp = self.analyzer.mel_amplitude(&signal);
        let log = amp.map(|v| v.max(1e-10).log10());
        let top = log.as_slice().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let log = log.map(|v| v.max(top - 8.0));
        let level = log.sum() / log.len() as f64;
        let log = log.map(|v| v - level);
        let frames = log.rows() as f64;
        let bins = log.cols();
        let mut v = Vec::with_capacity(2 * bins);
        let mut means = vec![0.0; bins];
        for r in log.iter_rows() {
            for (m, x) in means.iter_mut().zip(r) {
                *m += x / frames;
            }
        }
        let mut stds = vec![0.0; bins];
        for r in log.iter_rows() {
            for ((s, x), m) in stds.iter_mut().zip(r).zip(&means) {
                *s += (x - m) * (x - m) / frames;
            }
        }
        v.extend_from_slice(&means);
        v.extend(stds.iter().map(|s| s.sqrt()));
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(CoreError::NonFinite("speaker statistics".into()));
        }
        v.iter_mut().for_each(|x| *x /= norm);
        Ok(SpeakerEmbedding { vector: v })
    }
}

pub fn speaker_embedding(audio: &AudioAsset) -> Result<SpeakerEmbedding> {
    SpeakerEmbedder::new().embed(audio)
}
