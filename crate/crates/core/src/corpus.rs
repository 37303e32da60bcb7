//! Line-delimited JSON dialogue corpus.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, CorpusIssue, Result};
use crate::types::{DialogueRecord, ModalityKind, ModalityPayload, Turn};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecord {
    dialogue_id: String,
    participants: Vec<String>,
    profile_refs: Vec<String>,
    turns: Vec<RawTurn>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTurn {
    speaker_id: String,
    kind: ModalityKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    audio_ref: Option<String>,
}

fn record_from_raw(raw: RawRecord) -> Result<DialogueRecord> {
    let participants: [String; 2] = raw.participants.try_into().map_err(|p: Vec<String>| {
        CoreError::validation(
            "participants",
            format!("expected exactly two participants, found {}", p.len()),
        )
    })?;
    let turns = raw
        .turns
        .into_iter()
        .enumerate()
        .map(|(i, t)| {
            let payload = ModalityPayload::new(t.kind, t.text, t.audio_ref)?;
            Ok(Turn::new(i, t.speaker_id, payload))
        })
        .collect::<Result<Vec<_>>>()?;
    let record = DialogueRecord {
        dialogue_id: raw.dialogue_id,
        participants,
        turns,
        profile_refs: raw.profile_refs,
    };
    record.validate()?;
    Ok(record)
}

fn record_to_raw(r: &DialogueRecord) -> RawRecord {
    RawRecord {
        dialogue_id: r.dialogue_id.clone(),
        participants: r.participants.to_vec(),
        profile_refs: r.profile_refs.clone(),
        turns: r
            .turns
            .iter()
            .map(|t| RawTurn {
                speaker_id: t.speaker_id.clone(),
                kind: t.payload.kind(),
                text: t.payload.text_content().map(str::to_owned),
                audio_ref: t.payload.audio_ref().map(str::to_owned),
            })
            .collect(),
    }
}

/// Parses corpus text; every offending line is reported.
pub fn parse_corpus(text: &str) -> Result<Vec<DialogueRecord>> {
    let mut records = Vec::new();
    let mut issues = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str::<RawRecord>(line)
            .map_err(CoreError::from)
            .and_then(record_from_raw);
        match parsed {
            Ok(r) => records.push(r),
            Err(e) => {
                let dialogue_id = serde_json::from_str::<serde_json::Value>(line)
                    .ok()
                    .and_then(|v| v.get("dialogue_id")?.as_str().map(str::to_owned));
                issues.push(CorpusIssue {
                    line: i + 1,
                    dialogue_id,
                    message: e.to_string(),
                });
            }
        }
    }
    if issues.is_empty() {
        Ok(records)
    } else {
        Err(CoreError::Corpus(issues))
    }
}

pub fn render_corpus(records: &[DialogueRecord]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        r.validate()?;
        out.push_str(&serde_json::to_string(&record_to_raw(r))?);
        out.push('\n');
    }
    Ok(out)
}

pub fn read_corpus(path: impl AsRef<Path>) -> Result<Vec<DialogueRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
    parse_corpus(&text)
}

pub fn write_corpus(records: &[DialogueRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = render_corpus(records)?;
    let mut f = fs::File::create(path).map_err(|e| CoreError::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| CoreError::io(path, e))
}

/// Reads one JSON object per line (profiles, seed files).
pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(CoreError::from))
        .collect()
}

pub fn write_jsonl<T: Serialize>(items: &[T], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for it in items {
        out.push_str(&serde_json::to_string(it)?);
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| CoreError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_is_empty_corpus() {
        assert!(parse_corpus("").unwrap().is_empty());
    }

    #[test]
    fn unknown_speaker_reports_line_and_id() {
        let text = concat!(
            r#"{"dialogue_id":"ok","participants":["user","r"],"profile_refs":["r"],"turns":[{"speaker_id":"user","kind":"text_only","text":"hi"}]}"#,
            "\n",
            r#"{"dialogue_id":"bad","participants":["user","r"],"profile_refs":["r"],"turns":[{"speaker_id":"ghost","kind":"text_only","text":"hi"}]}"#,
            "\n"
        );
        match parse_corpus(text) {
            Err(CoreError::Corpus(issues)) => {
                assert_eq!(issues.len(), 1);
                assert_eq!(issues[0].line, 2);
                assert_eq!(issues[0].dialogue_id.as_deref(), Some("bad"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn payload_violation_is_rejected() {
        let text = r#"{"dialogue_id":"p","participants":["user","r"],"profile_refs":["r"],"turns":[{"speaker_id":"user","kind":"speech_only","text":"hi"}]}"#;
        assert!(matches!(parse_corpus(text), Err(CoreError::Corpus(_))));
    }
}
