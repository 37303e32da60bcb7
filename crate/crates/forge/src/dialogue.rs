//! Two-agent dialogue generation: each side is driven by its own persona.

use rolespeak_core::prompt::system_section;
use rolespeak_core::types::{DialogueRecord, ModalityPayload, RoleProfile, Turn};

use crate::clients::{ChatMessage, ChatModelClient};
use crate::error::{ForgeError, Result};

pub const MIN_TURN_BUDGET: usize = 4;
/// A reply ending in this marker ends the conversation after that reply.
pub const STOP_SIGNAL: &str = "[END]";
const KICKOFF: &str = "(The conversation begins. Say your first line.)";

/// One side of a generated conversation.
#[derive(Debug, Clone, PartialEq)]
pub enum Speaker {
    Character(RoleProfile),
    User { user_id: String, persona: String },
}

impl Speaker {
    pub fn id(&self) -> &str {
        match self {
            Speaker::Character(p) => &p.role_id,
            Speaker::User { user_id, .. } => user_id,
        }
    }

    pub fn system_text(&self) -> Result<String> {
        match self {
            Speaker::Character(p) => Ok(system_section(p)?),
            Speaker::User { persona, .. } => Ok(format!(
                "You are a person chatting with a character. {persona}\nKeep each message short."
            )),
        }
    }
}

/// History as seen by `speaker`: its own lines are assistant messages.
fn history_for(speaker: &str, turns: &[Turn]) -> Vec<ChatMessage> {
    let mut out: Vec<ChatMessage> = turns
        .iter()
        .map(|t| {
            let text = t.payload.text_content().unwrap_or_default();
            if t.speaker_id == speaker {
                ChatMessage::assistant(text)
            } else {
                ChatMessage::user(text)
            }
        })
        .collect();
    if out.first().is_none_or(|m| m.role == crate::clients::ChatRole::Assistant) {
        out.insert(0, ChatMessage::user(KICKOFF));
    }
    out
}

/// Alternates `a` and `b` (a first) for up to `turn_budget` turns. Empty replies are
/// retried once; a second empty reply aborts the dialogue.
pub fn generate_dialogue(
    dialogue_id: &str,
    a: &Speaker,
    b: &Speaker,
    client: &dyn ChatModelClient,
    turn_budget: usize,
) -> Result<DialogueRecord> {
    if turn_budget < MIN_TURN_BUDGET {
        return Err(ForgeError::validation(
            "turn_budget",
            format!("{turn_budget} is below the minimum of {MIN_TURN_BUDGET}"),
        ));
    }
    if a.id() == b.id() {
        return Err(ForgeError::validation("speakers", "both sides have the same id"));
    }
    let systems = [a.system_text()?, b.system_text()?];
    let speakers = [a, b];
    let mut turns: Vec<Turn> = Vec::with_capacity(turn_budget);
    for k in 0..turn_budget {
        let who = speakers[k % 2];
        let messages = history_for(who.id(), &turns);
        let mut reply = client.complete(&systems[k % 2], &messages)?;
        if reply.trim().is_empty() {
            reply = client.complete(&systems[k % 2], &messages)?;
        }
        let mut text = reply.trim();
        let stop = text.ends_with(STOP_SIGNAL);
        if stop {
            text = text.trim_end_matches(STOP_SIGNAL).trim();
        }
        if text.is_empty() && !stop {
            return Err(ForgeError::Aborted {
                dialogue_id: dialogue_id.to_owned(),
                reason: format!("empty reply for turn {k} after one retry"),
            });
        }
        if !text.is_empty() {
            turns.push(Turn::new(k, who.id(), ModalityPayload::text(text)));
        }
        if stop {
            break;
        }
    }
    let profile_refs = speakers
        .iter()
        .filter(|s| matches!(s, Speaker::Character(_)))
        .map(|s| s.id().to_owned())
        .collect();
    let record = DialogueRecord {
        dialogue_id: dialogue_id.to_owned(),
        participants: [a.id().to_owned(), b.id().to_owned()],
        turns,
        profile_refs,
    };
    if record.turns.is_empty() {
        return Err(ForgeError::Aborted {
            dialogue_id: dialogue_id.to_owned(),
            reason: "stopped before the first turn".into(),
        });
    }
    record.validate()?;
    Ok(record)
}
