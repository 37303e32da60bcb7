//! Pairwise speaker-similarity matrices and voice matching.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rolespeak_core::synthesis::{cosine, SpeakerEmbedder, SpeakerEmbedding};
use rolespeak_core::types::AudioAsset;
use serde::{Deserialize, Serialize};

use crate::error::{EvalError, Result};

/// Clips scoring strictly above this cosine belong to the same character.
pub const VOICE_MATCH_THRESHOLD: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityMatrix {
    pub labels: Vec<String>,
    /// Row-major, `labels.len()` rows.
    pub values: Vec<Vec<f64>>,
}

impl SimilarityMatrix {
    /// Cosine matrix of `vectors`; the lower triangle mirrors the upper one.
    pub fn from_vectors(labels: Vec<String>, vectors: &[Vec<f64>]) -> Result<Self> {
        if labels.len() != vectors.len() {
            return Err(EvalError::Input(format!(
                "{} labels for {} vectors",
                labels.len(),
                vectors.len()
            )));
        }
        for (l, v) in labels.iter().zip(vectors) {
            if v.iter().map(|x| x * x).sum::<f64>() <= 0.0 {
                return Err(EvalError::Input(format!("{l}: zero embedding")));
            }
        }
        let n = vectors.len();
        let mut values = vec![vec![0.0; n]; n];
        for i in 0..n {
            values[i][i] = 1.0;
            for j in i + 1..n {
                let c = cosine(&vectors[i], &vectors[j]);
                values[i][j] = c;
                values[j][i] = c;
            }
        }
        Ok(Self { labels, values })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i][j]
    }

    /// Tab-separated text with a label header row and a label column.
    pub fn to_text(&self) -> String {
        let mut s = String::from("speaker");
        for l in &self.labels {
            s.push('\t');
            s.push_str(l);
        }
        s.push('\n');
        for (l, row) in self.labels.iter().zip(&self.values) {
            s.push_str(l);
            for v in row {
                let _ = write!(s, "\t{v:.4}");
            }
            s.push('\n');
        }
        s
    }

    pub fn write_text(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| EvalError::io(path, e))
    }

    /// Heatmap with `cell` pixels per entry; cosine −1 is blue, 0 white, 1 red.
    pub fn heatmap(&self, cell: u32) -> RgbImage {
        let n = self.len() as u32;
        let cell = cell.max(1);
        RgbImage::from_fn(n * cell, n * cell, |x, y| {
            let v = self.values[(y / cell) as usize][(x / cell) as usize].clamp(-1.0, 1.0);
            let fade = |t: f64| (255.0 * (1.0 - t)).round() as u8;
            if v >= 0.0 {
                Rgb([255, fade(v), fade(v)])
            } else {
                Rgb([fade(-v), fade(-v), 255])
            }
        })
    }

    pub fn write_png(&self, path: impl AsRef<Path>) -> Result<()> {
        self.heatmap(24).save(path.as_ref())?;
        Ok(())
    }
}

/// Clips (as embeddings) of one speaker.
#[derive(Debug, Clone)]
pub struct SpeakerSet {
    pub label: String,
    pub embeddings: Vec<SpeakerEmbedding>,
}

pub fn embed_speakers(speakers: &[(String, Vec<AudioAsset>)], embedder: &SpeakerEmbedder) -> Result<Vec<SpeakerSet>> {
    speakers
        .iter()
        .map(|(label, clips)| {
            Ok(SpeakerSet {
                label: label.clone(),
                embeddings: clips.iter().map(|c| embedder.embed(c)).collect::<rolespeak_core::Result<_>>()?,
            })
        })
        .collect()
}

/// For each of `n_sets` seeded draws, one clip per speaker chosen uniformly, then the
/// pairwise cosine matrix.
pub fn similarity_matrix(speakers: &[SpeakerSet], n_sets: usize, seed: u64) -> Result<Vec<SimilarityMatrix>> {
    if let Some(s) = speakers.iter().find(|s| s.embeddings.is_empty()) {
        return Err(EvalError::Input(format!("speaker {} has no clips", s.label)));
    }
    let labels: Vec<String> = speakers.iter().map(|s| s.label.clone()).collect();
    (0..n_sets as u64)
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(k));
            let picks: Vec<Vec<f64>> = speakers
                .iter()
                .map(|s| s.embeddings[rng.random_range(0..s.embeddings.len())].vector.clone())
                .collect();
            SimilarityMatrix::from_vectors(labels.clone(), &picks)
        })
        .collect()
}

pub fn is_voice_match(cosine: f64) -> bool {
    cosine > VOICE_MATCH_THRESHOLD
}

pub fn voice_match_embeddings(a: &SpeakerEmbedding, b: &SpeakerEmbedding) -> bool {
    is_voice_match(a.cosine(b))
}

pub fn voice_match(a: &AudioAsset, b: &AudioAsset, embedder: &SpeakerEmbedder) -> Result<bool> {
    Ok(voice_match_embeddings(&embedder.embed(a)?, &embedder.embed(b)?))
}
