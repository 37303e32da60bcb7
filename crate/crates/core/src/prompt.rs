//! Prompt layout: persona as the system section, then dialogue history, then the query.

use crate::error::{CoreError, Result};
use crate::types::{check_alternation, ModalityKind, ModalityPayload, RoleProfile, Turn};

/// Reserved marker standing in for one spliced speech segment.
pub const SPEECH_MARKER: &str = "<speech>";
pub const SYSTEM_HEADER: &str = "<|system|>";
pub const HISTORY_HEADER: &str = "<|history|>";
pub const QUERY_HEADER: &str = "<|query|>";

const USER_LABEL: &str = "User";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptText {
    pub text: String,
    /// Audio references in the order their markers appear in `text`.
    pub speech_refs: Vec<String>,
}

fn speaker_label<'a>(profile: &'a RoleProfile, speaker_id: &'a str) -> &'a str {
    if speaker_id == profile.role_id {
        &profile.name
    } else if speaker_id.starts_with("user") {
        USER_LABEL
    } else {
        speaker_id
    }
}

fn render_payload(payload: &ModalityPayload, refs: &mut Vec<String>) -> String {
    if let Some(a) = payload.audio_ref() {
        refs.push(a.to_owned());
    }
    match payload.kind() {
        ModalityKind::SpeechOnly => SPEECH_MARKER.to_owned(),
        ModalityKind::TextOnly => payload.text_content().unwrap_or_default().to_owned(),
        ModalityKind::SpeechAndText => format!(
            "{SPEECH_MARKER} {}",
            payload.text_content().unwrap_or_default()
        ),
    }
}

/// The system section alone; also used as the system text for persona-driven agents.
pub fn system_section(profile: &RoleProfile) -> Result<String> {
    profile.validate()?;
    Ok(format!(
        "{SYSTEM_HEADER}\nYou are {name}. Stay in character in every reply.\nPersona: {persona}\nVoice: {voice}\nLanguage: {lang}\n",
        name = profile.name,
        persona = profile.persona_text.trim(),
        voice = profile.voice_style_text.trim(),
        lang = profile.language.code(),
    ))
}

/// Renders `profile`, the dialogue so far and the current query, ending with the
/// character's response cue.
pub fn assemble_prompt(
    profile: &RoleProfile,
    context: &[Turn],
    query: &ModalityPayload,
) -> Result<PromptText> {
    let mut text = system_section(profile)?;
    check_alternation(context)?;
    for w in context.windows(2) {
        if w[1].index <= w[0].index {
            return Err(CoreError::validation("context", "turn indices must increase"));
        }
    }
    let mut refs = Vec::new();
    if !context.is_empty() {
        text.push_str(HISTORY_HEADER);
        text.push('\n');
        for t in context {
            let body = render_payload(&t.payload, &mut refs);
            text.push_str(speaker_label(profile, &t.speaker_id));
            text.push_str(": ");
            text.push_str(&body);
            text.push('\n');
        }
    }
    let asker = context
        .iter()
        .rev()
        .find(|t| t.speaker_id != profile.role_id)
        .map_or(USER_LABEL, |t| speaker_label(profile, &t.speaker_id));
    text.push_str(QUERY_HEADER);
    text.push('\n');
    let body = render_payload(query, &mut refs);
    text.push_str(asker);
    text.push_str(": ");
    text.push_str(&body);
    text.push('\n');
    text.push_str(&profile.name);
    text.push(':');
    Ok(PromptText {
        text,
        speech_refs: refs,
    })
}
