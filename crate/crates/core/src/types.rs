//! Shared domain records: role profiles, modality-typed turns, dialogues and audio assets.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

pub const SAMPLE_RATE: u32 = 16_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Language {
    Zh,
    En,
}

impl Language {
    pub fn code(self) -> &'static str {
        match self {
            Language::Zh => "zh",
            Language::En => "en",
        }
    }
}

/// Persona document that conditions every response of a character.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoleProfile {
    pub role_id: String,
    pub name: String,
    pub persona_text: String,
    pub voice_style_text: String,
    pub language: Language,
    #[serde(default)]
    pub reference_audio_ids: Vec<String>,
    /// Set on generated profiles until a person has signed off on them.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub needs_review: bool,
}

impl RoleProfile {
    pub fn validate(&self) -> Result<()> {
        if self.role_id.trim().is_empty() {
            return Err(CoreError::validation("role_id", "must not be empty"));
        }
        if self.name.trim().is_empty() {
            return Err(CoreError::validation("name", "must not be empty"));
        }
        if self.persona_text.trim().is_empty() {
            return Err(CoreError::validation("persona_text", "must not be empty"));
        }
        if self.voice_style_text.trim().is_empty() {
            return Err(CoreError::validation("voice_style_text", "must not be empty"));
        }
        Ok(())
    }
}

/// Ensures role ids are unique across a profile collection.
pub fn validate_profiles(profiles: &[RoleProfile]) -> Result<()> {
    let mut seen = BTreeSet::new();
    for p in profiles {
        p.validate()?;
        if !seen.insert(p.role_id.as_str()) {
            return Err(CoreError::validation(
                "role_id",
                format!("duplicate role id {}", p.role_id),
            ));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModalityKind {
    SpeechOnly,
    TextOnly,
    SpeechAndText,
}

/// Content of one turn. The kind/field combination is checked at construction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawPayload", into = "RawPayload")]
pub struct ModalityPayload {
    kind: ModalityKind,
    text: Option<String>,
    audio_ref: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct RawPayload {
    kind: ModalityKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    audio_ref: Option<String>,
}

impl TryFrom<RawPayload> for ModalityPayload {
    type Error = CoreError;

    fn try_from(raw: RawPayload) -> Result<Self> {
        ModalityPayload::new(raw.kind, raw.text, raw.audio_ref)
    }
}

impl From<ModalityPayload> for RawPayload {
    fn from(p: ModalityPayload) -> Self {
        RawPayload {
            kind: p.kind,
            text: p.text,
            audio_ref: p.audio_ref,
        }
    }
}

impl ModalityPayload {
    pub fn new(kind: ModalityKind, text: Option<String>, audio_ref: Option<String>) -> Result<Self> {
        match (kind, &text, &audio_ref) {
            (ModalityKind::SpeechOnly, None, Some(_))
            | (ModalityKind::TextOnly, Some(_), None)
            | (ModalityKind::SpeechAndText, Some(_), Some(_)) => Ok(Self {
                kind,
                text,
                audio_ref,
            }),
            (ModalityKind::SpeechOnly, _, _) => Err(CoreError::validation(
                "payload",
                "speech_only requires audio_ref and no text",
            )),
            (ModalityKind::TextOnly, _, _) => Err(CoreError::validation(
                "payload",
                "text_only requires text and no audio_ref",
            )),
            (ModalityKind::SpeechAndText, _, _) => Err(CoreError::validation(
                "payload",
                "speech_and_text requires both text and audio_ref",
            )),
        }
    }

    pub fn text(text: impl Into<String>) -> Self {
        Self {
            kind: ModalityKind::TextOnly,
            text: Some(text.into()),
            audio_ref: None,
        }
    }

    pub fn speech(audio_ref: impl Into<String>) -> Self {
        Self {
            kind: ModalityKind::SpeechOnly,
            text: None,
            audio_ref: Some(audio_ref.into()),
        }
    }

    pub fn speech_and_text(text: impl Into<String>, audio_ref: impl Into<String>) -> Self {
        Self {
            kind: ModalityKind::SpeechAndText,
            text: Some(text.into()),
            audio_ref: Some(audio_ref.into()),
        }
    }

    pub fn kind(&self) -> ModalityKind {
        self.kind
    }

    pub fn text_content(&self) -> Option<&str> {
        self.text.as_deref()
    }

    pub fn audio_ref(&self) -> Option<&str> {
        self.audio_ref.as_deref()
    }

    pub fn has_speech(&self) -> bool {
        self.audio_ref.is_some()
    }

    /// Same text with an attached audio reference.
    pub fn with_audio(&self, audio_ref: impl Into<String>) -> Self {
        match &self.text {
            Some(t) => Self::speech_and_text(t.clone(), audio_ref),
            None => Self::speech(audio_ref),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Turn {
    pub speaker_id: String,
    pub payload: ModalityPayload,
    pub index: usize,
}

impl Turn {
    pub fn new(index: usize, speaker_id: impl Into<String>, payload: ModalityPayload) -> Self {
        Self {
            speaker_id: speaker_id.into(),
            payload,
            index,
        }
    }
}

/// An ordered two-party dialogue.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DialogueRecord {
    pub dialogue_id: String,
    pub participants: [String; 2],
    pub turns: Vec<Turn>,
    pub profile_refs: Vec<String>,
}

impl DialogueRecord {
    /// Structural invariants: at least one turn, increasing indices, known speakers.
    pub fn validate(&self) -> Result<()> {
        if self.dialogue_id.trim().is_empty() {
            return Err(CoreError::validation("dialogue_id", "must not be empty"));
        }
        if self.turns.is_empty() {
            return Err(CoreError::validation("turns", "dialogue has no turns"));
        }
        for w in self.turns.windows(2) {
            if w[1].index <= w[0].index {
                return Err(CoreError::validation(
                    "turns",
                    format!("turn index {} does not follow {}", w[1].index, w[0].index),
                ));
            }
        }
        for t in &self.turns {
            if t.speaker_id.trim().is_empty() {
                return Err(CoreError::validation("speaker_id", "must not be empty"));
            }
            if !self.participants.contains(&t.speaker_id) {
                return Err(CoreError::validation(
                    "speaker_id",
                    format!(
                        "turn {} speaker {} is not a participant",
                        t.index, t.speaker_id
                    ),
                ));
            }
        }
        Ok(())
    }

    /// Strict two-party alternation of consecutive turns.
    pub fn check_alternation(&self) -> Result<()> {
        check_alternation(&self.turns)
    }

    pub fn is_character(&self, speaker_id: &str) -> bool {
        self.profile_refs.iter().any(|r| r == speaker_id)
    }
}

pub fn check_alternation(turns: &[Turn]) -> Result<()> {
    for w in turns.windows(2) {
        if w[0].speaker_id == w[1].speaker_id {
            return Err(CoreError::validation(
                "turns",
                format!(
                    "turns {} and {} are both by {}",
                    w[0].index, w[1].index, w[0].speaker_id
                ),
            ));
        }
    }
    Ok(())
}

/// Mono 16 kHz audio clip.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioAsset {
    pub asset_id: String,
    pub sample_rate: u32,
    pub samples: Vec<f32>,
}

impl AudioAsset {
    pub fn new(asset_id: impl Into<String>, samples: Vec<f32>) -> Result<Self> {
        let a = Self {
            asset_id: asset_id.into(),
            sample_rate: SAMPLE_RATE,
            samples,
        };
        a.validate()?;
        Ok(a)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_rate != SAMPLE_RATE {
            return Err(CoreError::Audio(format!(
                "{}: sample rate {} (expected {SAMPLE_RATE})",
                self.asset_id, self.sample_rate
            )));
        }
        if self.samples.is_empty() {
            return Err(CoreError::Audio(format!("{}: empty audio", self.asset_id)));
        }
        if let Some(i) = self.samples.iter().position(|s| !s.is_finite()) {
            return Err(CoreError::Audio(format!(
                "{}: non-finite sample at {i}",
                self.asset_id
            )));
        }
        Ok(())
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn payload_rejects_every_invalid_combination() {
        let t = || Some("hi".to_string());
        let a = || Some("a1".to_string());
        assert!(ModalityPayload::new(ModalityKind::SpeechOnly, t(), a()).is_err());
        assert!(ModalityPayload::new(ModalityKind::SpeechOnly, None, None).is_err());
        assert!(ModalityPayload::new(ModalityKind::TextOnly, t(), a()).is_err());
        assert!(ModalityPayload::new(ModalityKind::TextOnly, None, None).is_err());
        assert!(ModalityPayload::new(ModalityKind::SpeechAndText, t(), None).is_err());
        assert!(ModalityPayload::new(ModalityKind::SpeechAndText, None, a()).is_err());
        assert!(ModalityPayload::new(ModalityKind::SpeechOnly, None, a()).is_ok());
        assert!(ModalityPayload::new(ModalityKind::TextOnly, t(), None).is_ok());
        assert!(ModalityPayload::new(ModalityKind::SpeechAndText, t(), a()).is_ok());
    }

    #[test]
    fn payload_deserialization_enforces_invariants() {
        let bad = r#"{"kind":"speech_only","text":"x"}"#;
        assert!(serde_json::from_str::<ModalityPayload>(bad).is_err());
        let good = r#"{"kind":"text_only","text":"x"}"#;
        assert_eq!(
            serde_json::from_str::<ModalityPayload>(good).unwrap(),
            ModalityPayload::text("x")
        );
    }

    #[test]
    fn profile_validation_names_field() {
        let mut p = RoleProfile {
            role_id: "r".into(),
            name: "R".into(),
            persona_text: "".into(),
            voice_style_text: "calm".into(),
            language: Language::En,
            reference_audio_ids: vec![],
            needs_review: false,
        };
        match p.validate() {
            Err(CoreError::Validation { field, .. }) => assert_eq!(field, "persona_text"),
            other => panic!("unexpected {other:?}"),
        }
        p.persona_text = "kind".into();
        assert!(p.validate().is_ok());
        assert!(validate_profiles(&[p.clone(), p]).is_err());
    }

    #[test]
    fn audio_asset_invariants() {
        assert!(AudioAsset::new("a", vec![]).is_err());
        assert!(AudioAsset::new("a", vec![0.0, f32::NAN]).is_err());
        assert!(AudioAsset::new("a", vec![0.0; 16]).is_ok());
    }
}
