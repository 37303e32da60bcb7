//! Corpus quality filters and the WER metric.

use std::collections::{BTreeSet, HashMap};

use regex::Regex;
use rolespeak_core::audio::AssetSource;
use rolespeak_core::types::{AudioAsset, DialogueRecord, Language, RoleProfile};
use serde::{Deserialize, Serialize};

use crate::clients::{AsrClient, SimilarityClient};
use crate::error::{ForgeError, Result};

/// True iff exactly two speakers take part and consecutive turns never share one.
/// Odd turn counts are accepted.
pub fn filter_pattern(record: &DialogueRecord) -> bool {
    let speakers: BTreeSet<&str> = record.turns.iter().map(|t| t.speaker_id.as_str()).collect();
    speakers.len() == 2 && record.turns.windows(2).all(|w| w[0].speaker_id != w[1].speaker_id)
}

pub const MIN_TURNS_EXCLUSIVE: usize = 3;

/// True iff the dialogue is longer than three turns.
pub fn filter_length(record: &DialogueRecord) -> bool {
    record.turns.len() > MIN_TURNS_EXCLUSIVE
}

/// Assistant-style phrases (plain substrings) and preface/postface regexes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StyleList {
    pub phrases: Vec<String>,
    #[serde(default)]
    pub patterns: Vec<String>,
}

impl Default for StyleList {
    fn default() -> Self {
        Self {
            phrases: [
                "I am a helpful AI assistant",
                "I'm a helpful AI assistant",
                "as an AI language model",
                "as an AI assistant",
                "I am an AI assistant",
                "I am just a language model",
                "how can I assist you today",
            ]
            .map(String::from)
            .to_vec(),
            patterns: [
                r"^(sure|certainly|of course)[,!.]?\s+here('s| is)\b",
                r"\b(let me know|feel free to ask) if you (have|need) (any )?(more|other|further) (questions|help)\b",
                r"\bi hope this helps\b",
            ]
            .map(String::from)
            .to_vec(),
        }
    }
}

fn normalize_phrase(s: &str) -> String {
    s.replace('\u{2019}', "'")
        .to_lowercase()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

/// Compiled [`StyleList`]; matching is case-insensitive.
#[derive(Debug, Clone)]
pub struct StyleFilter {
    phrases: Vec<String>,
    patterns: Vec<Regex>,
}

impl StyleFilter {
    pub fn new(list: &StyleList) -> Result<Self> {
        let patterns = list
            .patterns
            .iter()
            .map(|p| {
                Regex::new(&format!("(?i){p}"))
                    .map_err(|e| ForgeError::Config(format!("style pattern {p:?}: {e}")))
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            phrases: list.phrases.iter().map(|p| normalize_phrase(p)).filter(|p| !p.is_empty()).collect(),
            patterns,
        })
    }

    /// The first listed phrase or pattern found in `text`.
    pub fn find(&self, text: &str) -> Option<&str> {
        let norm = normalize_phrase(text);
        if let Some(p) = self.phrases.iter().find(|p| norm.contains(p.as_str())) {
            return Some(p);
        }
        self.patterns.iter().find(|r| r.is_match(&norm)).map(Regex::as_str)
    }
}

/// False iff any turn text contains an assistant-style phrase or pattern.
pub fn filter_style(record: &DialogueRecord, style: &StyleFilter) -> bool {
    record
        .turns
        .iter()
        .filter_map(|t| t.payload.text_content())
        .all(|t| style.find(t).is_none())
}

/// Lowercased tokens with punctuation removed: words for English, characters for Chinese.
pub fn wer_tokens(text: &str, lang: Language) -> Vec<String> {
    let cleaned: String = text
        .to_lowercase()
        .chars()
        .map(|c| if c.is_alphanumeric() || c == '\'' { c } else { ' ' })
        .collect();
    match lang {
        Language::En => cleaned
            .split_whitespace()
            .map(|w| w.trim_matches('\'').to_owned())
            .filter(|w| !w.is_empty())
            .collect(),
        Language::Zh => cleaned
            .chars()
            .filter(|c| c.is_alphanumeric())
            .map(String::from)
            .collect(),
    }
}

/// Unit-cost Levenshtein distance.
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Word (or, for Chinese, character) error rate in percent.
pub fn wer(reference: &str, hypothesis: &str, lang: Language) -> Result<f64> {
    let r = wer_tokens(reference, lang);
    if r.is_empty() {
        return Err(ForgeError::validation("reference", "WER needs a non-empty reference"));
    }
    let h = wer_tokens(hypothesis, lang);
    Ok(100.0 * edit_distance(&r, &h) as f64 / r.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AudioThresholds {
    /// Reject when a turn's WER (percent) is strictly greater.
    pub max_wer: f64,
    /// Reject when a turn's speaker similarity is strictly smaller.
    pub min_similarity: f64,
}

impl Default for AudioThresholds {
    fn default() -> Self {
        Self {
            max_wer: 10.0,
            min_similarity: 0.8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AudioCheck {
    Wer,
    SpeakerSim,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnFailure {
    pub turn: usize,
    pub check: AudioCheck,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AudioVerdict {
    pub keep: bool,
    pub failures: Vec<TurnFailure>,
}

/// Reference clips per character id.
pub type ReferenceClips = HashMap<String, Vec<AudioAsset>>;

pub fn reference_clips(profiles: &[RoleProfile], assets: &dyn AssetSource) -> Result<ReferenceClips> {
    let mut out = ReferenceClips::new();
    for p in profiles {
        let clips = p
            .reference_audio_ids
            .iter()
            .map(|id| assets.load(id))
            .collect::<rolespeak_core::Result<Vec<_>>>()?;
        out.insert(p.role_id.clone(), clips);
    }
    Ok(out)
}

/// Transcribes every turn and compares it against the turn text, and scores every
/// turn of a speaker with references by its mean similarity to them. Speakers
/// without reference clips are not scored.
pub fn filter_audio_quality(
    record: &DialogueRecord,
    assets: &dyn AssetSource,
    asr: &dyn AsrClient,
    sim: &dyn SimilarityClient,
    refs: &ReferenceClips,
    lang: Language,
    thresholds: AudioThresholds,
) -> Result<AudioVerdict> {
    let mut failures = Vec::new();
    let mut clips = Vec::with_capacity(record.turns.len());
    for t in &record.turns {
        let (Some(text), Some(id)) = (t.payload.text_content(), t.payload.audio_ref()) else {
            return Err(ForgeError::validation(
                "turns",
                format!("{} turn {} needs both text and audio", record.dialogue_id, t.index),
            ));
        };
        let audio = assets.load(id)?;
        let w = wer(text, &asr.transcribe(&audio)?, lang)?;
        if w > thresholds.max_wer {
            failures.push(TurnFailure {
                turn: t.index,
                check: AudioCheck::Wer,
                value: w,
            });
        }
        clips.push(audio);
    }
    for (t, audio) in record.turns.iter().zip(&clips) {
        let Some(rs) = refs.get(&t.speaker_id).filter(|r| !r.is_empty()) else {
            continue;
        };
        let mut total = 0.0;
        for r in rs {
            total += sim.similarity(audio, r)?;
        }
        let s = total / rs.len() as f64;
        if s < thresholds.min_similarity {
            failures.push(TurnFailure {
                turn: t.index,
                check: AudioCheck::SpeakerSim,
                value: s,
            });
        }
    }
    Ok(AudioVerdict {
        keep: failures.is_empty(),
        failures,
    })
}
