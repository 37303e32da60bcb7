//! Voices every turn of a text dialogue.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rolespeak_core::types::{AudioAsset, DialogueRecord, ModalityPayload};
use serde::{Deserialize, Serialize};

use crate::clients::{TtsClient, FEMALE_VOICE, MALE_VOICE};
use crate::error::{ForgeError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UserVoice {
    Male,
    Female,
}

impl UserVoice {
    /// Male or female with probability 1/2 each.
    pub fn draw(seed: u64) -> Self {
        if ChaCha8Rng::seed_from_u64(seed).random_bool(0.5) {
            UserVoice::Male
        } else {
            UserVoice::Female
        }
    }

    pub fn speaker(self) -> &'static str {
        match self {
            UserVoice::Male => MALE_VOICE,
            UserVoice::Female => FEMALE_VOICE,
        }
    }
}

#[derive(Debug, Clone)]
pub struct VoicedDialogue {
    pub record: DialogueRecord,
    pub user_voice: UserVoice,
    /// One clip per turn, ids matching the turns' audio references.
    pub assets: Vec<AudioAsset>,
}

pub fn turn_asset_id(dialogue_id: &str, index: usize) -> String {
    format!("{dialogue_id}-t{index}")
}

/// Character turns use `role_tts` with the role id as speaker; user turns use
/// `user_tts` with a voice drawn once per dialogue. Nothing is returned unless
/// every turn was synthesized.
pub fn synthesize_dialogue_speech(
    record: &DialogueRecord,
    role_tts: &dyn TtsClient,
    user_tts: &dyn TtsClient,
    seed: u64,
) -> Result<VoicedDialogue> {
    record.validate()?;
    let user_voice = UserVoice::draw(seed);
    let mut out = record.clone();
    let mut assets = Vec::with_capacity(record.turns.len());
    for turn in &mut out.turns {
        let incomplete = |reason: String| ForgeError::Incomplete {
            dialogue_id: record.dialogue_id.clone(),
            turn: turn.index,
            reason,
        };
        let text = turn
            .payload
            .text_content()
            .filter(|t| !t.trim().is_empty())
            .ok_or_else(|| ForgeError::validation("turns", format!("turn {} has no text", turn.index)))?
            .to_owned();
        let clip = if record.is_character(&turn.speaker_id) {
            role_tts.synthesize(&text, &turn.speaker_id)
        } else {
            user_tts.synthesize(&text, user_voice.speaker())
        }
        .map_err(|e| incomplete(e.to_string()))?;
        let id = turn_asset_id(&record.dialogue_id, turn.index);
        let clip = AudioAsset::new(id.clone(), clip.samples).map_err(|e| incomplete(e.to_string()))?;
        turn.payload = ModalityPayload::speech_and_text(text, id);
        assets.push(clip);
    }
    Ok(VoicedDialogue {
        record: out,
        user_voice,
        assets,
    })
}
