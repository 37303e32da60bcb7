//! Corpus statistics in the shape of a dataset summary table.

use std::collections::BTreeSet;

use rolespeak_core::audio::AssetSource;
use rolespeak_core::types::{DialogueRecord, SAMPLE_RATE};
use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Additive accumulator; the table columns are derived from it.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub characters: BTreeSet<String>,
    pub n_samples: usize,
    pub total_turns: usize,
    pub user_samples: u64,
    pub character_samples: u64,
}

/// One row of the summary table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsRow {
    pub n_characters: usize,
    pub n_samples: usize,
    pub avg_turns: f64,
    pub speech_hours_user: f64,
    pub speech_hours_character: f64,
}

fn hours(samples: u64) -> f64 {
    samples as f64 / (SAMPLE_RATE as f64 * 3600.0)
}

impl CorpusStats {
    pub fn n_characters(&self) -> usize {
        self.characters.len()
    }

    pub fn avg_turns(&self) -> f64 {
        if self.n_samples == 0 {
            0.0
        } else {
            self.total_turns as f64 / self.n_samples as f64
        }
    }

    pub fn speech_hours_user(&self) -> f64 {
        hours(self.user_samples)
    }

    pub fn speech_hours_character(&self) -> f64 {
        hours(self.character_samples)
    }

    pub fn speech_hours(&self) -> f64 {
        hours(self.user_samples + self.character_samples)
    }

    pub fn row(&self) -> StatsRow {
        StatsRow {
            n_characters: self.n_characters(),
            n_samples: self.n_samples,
            avg_turns: self.avg_turns(),
            speech_hours_user: self.speech_hours_user(),
            speech_hours_character: self.speech_hours_character(),
        }
    }

    pub fn combine(&self, other: &Self) -> Self {
        Self {
            characters: self.characters.union(&other.characters).cloned().collect(),
            n_samples: self.n_samples + other.n_samples,
            total_turns: self.total_turns + other.total_turns,
            user_samples: self.user_samples + other.user_samples,
            character_samples: self.character_samples + other.character_samples,
        }
    }

    /// Tab-separated summary; speech hours read total (user/character).
    pub fn to_text(&self) -> String {
        format!(
            "characters\t{}\nsamples\t{}\navg_turns\t{:.2}\nspeech_hours\t{:.4} ({:.4}/{:.4})\n",
            self.n_characters(),
            self.n_samples,
            self.avg_turns(),
            self.speech_hours(),
            self.speech_hours_user(),
            self.speech_hours_character(),
        )
    }
}

/// Exact counts; speech time is summed per side from each turn's clip.
pub fn corpus_stats(records: &[DialogueRecord], assets: &dyn AssetSource) -> Result<CorpusStats> {
    let mut s = CorpusStats::default();
    for r in records {
        s.n_samples += 1;
        s.total_turns += r.turns.len();
        s.characters.extend(r.profile_refs.iter().cloned());
        for t in &r.turns {
            let Some(id) = t.payload.audio_ref() else { continue };
            let n = assets.load(id)?.samples.len() as u64;
            if r.is_character(&t.speaker_id) {
                s.character_samples += n;
            } else {
                s.user_samples += n;
            }
        }
    }
    Ok(s)
}
