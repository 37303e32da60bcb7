//! Character profiles expanded from a few seed facts by a chat model.

use rolespeak_core::types::{Language, RoleProfile};
use serde::{Deserialize, Serialize};

use crate::clients::{ChatMessage, ChatModelClient, PROFILE_WRITER};
use crate::error::{ForgeError, Result};

pub const MIN_PERSONA_CHARS: usize = 50;

/// Hand-written starting point for one character.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedInfo {
    pub role_id: String,
    pub name: String,
    pub traits: Vec<String>,
    #[serde(default = "default_language")]
    pub language: Language,
    #[serde(default)]
    pub reference_audio_ids: Vec<String>,
}

fn default_language() -> Language {
    Language::En
}

impl SeedInfo {
    pub fn validate(&self) -> Result<()> {
        if self.role_id.trim().is_empty() {
            return Err(ForgeError::validation("role_id", "must not be empty"));
        }
        if self.name.trim().is_empty() {
            return Err(ForgeError::validation("name", "must not be empty"));
        }
        if self.traits.iter().all(|t| t.trim().is_empty()) {
            return Err(ForgeError::validation("traits", "at least one trait keyword is required"));
        }
        Ok(())
    }
}

pub fn profile_request(seed: &SeedInfo) -> (String, Vec<ChatMessage>) {
    let system = format!(
        "{PROFILE_WRITER}\nExpand the seed into a character profile. Answer with one line \
         `Persona: ...` (at least {MIN_PERSONA_CHARS} characters) and one line `Voice: ...`."
    );
    let traits: Vec<&str> = seed.traits.iter().map(|t| t.trim()).filter(|t| !t.is_empty()).collect();
    let msg = format!(
        "Name: {}\nTraits: {}\nLanguage: {}",
        seed.name.trim(),
        traits.join(", "),
        seed.language.code()
    );
    (system, vec![ChatMessage::user(msg)])
}

fn bad_reply(message: String) -> ForgeError {
    ForgeError::Client {
        client: "chat",
        message,
        retriable: true,
    }
}

/// Asks `client` to expand `seed`. The result is flagged for human review.
pub fn create_profile(seed: &SeedInfo, client: &dyn ChatModelClient) -> Result<RoleProfile> {
    seed.validate()?;
    let (system, messages) = profile_request(seed);
    let reply = client.complete(&system, &messages)?;
    let line = |key: &str| {
        reply
            .lines()
            .find_map(|l| l.trim().strip_prefix(key))
            .map(|v| v.trim().to_owned())
            .filter(|v| !v.is_empty())
    };
    let persona = line("Persona:").ok_or_else(|| bad_reply("reply has no Persona line".into()))?;
    if persona.chars().count() < MIN_PERSONA_CHARS {
        return Err(bad_reply(format!(
            "persona has {} characters, need {MIN_PERSONA_CHARS}",
            persona.chars().count()
        )));
    }
    let voice = line("Voice:").unwrap_or_else(|| seed.traits.join(", "));
    let profile = RoleProfile {
        role_id: seed.role_id.trim().to_owned(),
        name: seed.name.trim().to_owned(),
        persona_text: persona,
        voice_style_text: voice,
        language: seed.language,
        reference_audio_ids: seed.reference_audio_ids.clone(),
        needs_review: true,
    };
    profile.validate()?;
    Ok(profile)
}
