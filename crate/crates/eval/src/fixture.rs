//! Synthetic multi-speaker clip sets.

use rolespeak_core::synth::{synthesize_voice, VoiceParams};
use rolespeak_core::types::AudioAsset;

use crate::error::Result;

const TEXTS: [&str; 6] = [
    "the quick brown fox jumps",
    "I keep the lamp burning bright",
    "stew and a hard crust",
    "once a ship sailed through fog and rain",
    "hello there friend",
    "what did you eat today",
];

/// Four clearly separated voices.
pub const FIXTURE_VOICES: [(&str, VoiceParams); 4] = [
    ("high", voice(230.0, 1.2, 1.0, 0.02)),
    ("low", voice(105.0, 0.85, 1.0, 0.02)),
    ("dark", voice(170.0, 1.0, 1.6, 0.03)),
    ("bright", voice(300.0, 0.95, 0.8, 0.015)),
];

const fn voice(f0: f64, tract: f64, tilt: f64, breath: f64) -> VoiceParams {
    VoiceParams {
        f0,
        tract,
        tilt,
        breath,
        char_secs: 0.07,
    }
}

/// `clips` utterances (up to six) for each fixture voice.
pub fn speaker_fixture(clips: usize, seed: u64) -> Result<Vec<(String, Vec<AudioAsset>)>> {
    FIXTURE_VOICES
        .iter()
        .map(|(label, v)| {
            let audio = TEXTS
                .iter()
                .take(clips)
                .enumerate()
                .map(|(i, t)| synthesize_voice(format!("{label}-{i}"), t, v, seed.wrapping_add(7 * i as u64 + 1)))
                .collect::<rolespeak_core::Result<Vec<_>>>()?;
            Ok((label.to_string(), audio))
        })
        .collect()
}
