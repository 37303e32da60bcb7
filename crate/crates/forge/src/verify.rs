//! Corpus verification: filters applied cheapest first, first failure decides.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rolespeak_core::audio::AssetSource;
use rolespeak_core::types::{DialogueRecord, Language};
use serde::{Deserialize, Serialize};

use crate::clients::{AsrClient, SimilarityClient};
use crate::error::{ForgeError, Result};
use crate::filters::{
    filter_audio_quality, filter_length, filter_pattern, filter_style, AudioCheck, AudioThresholds, ReferenceClips,
    StyleFilter, StyleList,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reason {
    Pattern,
    TooShort,
    AssistantStyle,
    Wer,
    SpeakerSim,
}

impl Reason {
    pub const ALL: [Reason; 5] = [
        Reason::Pattern,
        Reason::TooShort,
        Reason::AssistantStyle,
        Reason::Wer,
        Reason::SpeakerSim,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", content = "reason", rename_all = "snake_case")]
pub enum Verdict {
    Keep,
    Reject(Reason),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordVerdict {
    pub dialogue_id: String,
    #[serde(flatten)]
    pub verdict: Verdict,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub details: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub total: usize,
    pub kept: usize,
    /// Rejections per reason; every reason is listed.
    pub rejected: BTreeMap<Reason, usize>,
    /// Kept dialogues with an odd number of turns.
    pub odd_length_kept: usize,
    pub parity_note: String,
    pub verdicts: Vec<RecordVerdict>,
}

impl VerificationReport {
    pub fn kept_ids(&self) -> impl Iterator<Item = &str> {
        self.verdicts
            .iter()
            .filter(|v| v.verdict == Verdict::Keep)
            .map(|v| v.dialogue_id.as_str())
    }

    /// Summary without per-record verdicts.
    pub fn summary(&self) -> serde_json::Value {
        serde_json::json!({
            "total": self.total,
            "kept": self.kept,
            "rejected": self.rejected,
            "odd_length_kept": self.odd_length_kept,
            "parity_note": self.parity_note,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    #[serde(default = "default_language")]
    pub language: Language,
    #[serde(default)]
    pub thresholds: AudioThresholds,
    #[serde(default)]
    pub style: StyleList,
}

fn default_language() -> Language {
    Language::En
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            language: Language::En,
            thresholds: AudioThresholds::default(),
            style: StyleList::default(),
        }
    }
}

pub struct VerifyClients<'a> {
    pub asr: &'a dyn AsrClient,
    pub sim: &'a dyn SimilarityClient,
    pub assets: &'a dyn AssetSource,
    pub refs: &'a ReferenceClips,
}

pub fn verify_record(
    record: &DialogueRecord,
    clients: &VerifyClients<'_>,
    style: &StyleFilter,
    cfg: &VerifyConfig,
) -> Result<RecordVerdict> {
    let reject = |reason, details| RecordVerdict {
        dialogue_id: record.dialogue_id.clone(),
        verdict: Verdict::Reject(reason),
        details,
    };
    if !filter_pattern(record) {
        return Ok(reject(Reason::Pattern, Vec::new()));
    }
    if !filter_length(record) {
        return Ok(reject(Reason::TooShort, vec![format!("{} turns", record.turns.len())]));
    }
    if !filter_style(record, style) {
        let hits = record
            .turns
            .iter()
            .filter_map(|t| Some((t.index, style.find(t.payload.text_content()?)?)))
            .map(|(i, p)| format!("turn {i}: {p}"))
            .collect();
        return Ok(reject(Reason::AssistantStyle, hits));
    }
    let audio = filter_audio_quality(
        record,
        clients.assets,
        clients.asr,
        clients.sim,
        clients.refs,
        cfg.language,
        cfg.thresholds,
    )?;
    if !audio.keep {
        let reason = if audio.failures.iter().any(|f| f.check == AudioCheck::Wer) {
            Reason::Wer
        } else {
            Reason::SpeakerSim
        };
        let details = audio
            .failures
            .iter()
            .map(|f| format!("turn {}: {:?} {:.3}", f.turn, f.check, f.value))
            .collect();
        return Ok(reject(reason, details));
    }
    Ok(RecordVerdict {
        dialogue_id: record.dialogue_id.clone(),
        verdict: Verdict::Keep,
        details: Vec::new(),
    })
}

/// Order: pattern, length, style, WER, speaker similarity.
pub fn verify_corpus(
    records: &[DialogueRecord],
    clients: &VerifyClients<'_>,
    cfg: &VerifyConfig,
) -> Result<VerificationReport> {
    let style = StyleFilter::new(&cfg.style)?;
    let mut rejected: BTreeMap<Reason, usize> = Reason::ALL.iter().map(|r| (*r, 0)).collect();
    let mut verdicts = Vec::with_capacity(records.len());
    let mut odd = 0;
    for r in records {
        let v = verify_record(r, clients, &style, cfg)?;
        match v.verdict {
            Verdict::Keep => odd += r.turns.len() % 2,
            Verdict::Reject(reason) => *rejected.entry(reason).or_default() += 1,
        }
        verdicts.push(v);
    }
    let kept = verdicts.iter().filter(|v| v.verdict == Verdict::Keep).count();
    Ok(VerificationReport {
        total: records.len(),
        kept,
        rejected,
        odd_length_kept: odd,
        parity_note: format!(
            "pattern filter checks strict alternation only; {odd} kept dialogue(s) have an odd number of turns"
        ),
        verdicts,
    })
}

/// Writes `summary.json` and `verdicts.jsonl` into `dir`.
pub fn write_report(dir: impl AsRef<Path>, report: &VerificationReport) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| ForgeError::io(dir, e))?;
    let summary = dir.join("summary.json");
    fs::write(&summary, serde_json::to_string_pretty(&report.summary())?).map_err(|e| ForgeError::io(&summary, e))?;
    let mut lines = String::new();
    for v in &report.verdicts {
        lines.push_str(&serde_json::to_string(v)?);
        lines.push('\n');
    }
    let path = dir.join("verdicts.jsonl");
    fs::write(&path, lines).map_err(|e| ForgeError::io(&path, e))
}
