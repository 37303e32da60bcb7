//! Deterministic formant voice generator.
//!
//! Produces speech-like harmonic audio whose pitch and formant placement identify a
//! "speaker" and whose vowel sequence follows the input text. Used as the offline
//! text-to-speech backend for fixtures, stubs and demos.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::Result;
use crate::types::{AudioAsset, SAMPLE_RATE};

/// Base vowel formants (F1, F2, F3) in Hz for an average adult tract.
const VOWELS: [[f64; 3]; 5] = [
    [730.0, 1090.0, 2440.0], // a
    [530.0, 1840.0, 2480.0], // e
    [270.0, 2290.0, 3010.0], // i
    [570.0, 840.0, 2410.0],  // o
    [300.0, 870.0, 2240.0],  // u
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoiceParams {
    /// Fundamental frequency in Hz.
    pub f0: f64,
    /// Multiplier applied to every formant (vocal tract length).
    pub tract: f64,
    /// Spectral tilt exponent; larger is darker.
    pub tilt: f64,
    /// Relative level of aspiration noise.
    pub breath: f64,
    /// Seconds per text character.
    pub char_secs: f64,
}

impl VoiceParams {
    pub const fn new(f0: f64, tract: f64) -> Self {
        Self {
            f0,
            tract,
            tilt: 1.0,
            breath: 0.02,
            char_secs: 0.07,
        }
    }

    /// Stable voice for an arbitrary speaker id.
    pub fn for_speaker(speaker_id: &str) -> Self {
        let h = Sha256::digest(speaker_id.as_bytes());
        let u = |i: usize| h[i] as f64 / 255.0;
        Self {
            f0: 90.0 + 180.0 * u(0),
            tract: 0.8 + 0.45 * u(1),
            tilt: 0.7 + 0.8 * u(2),
            breath: 0.01 + 0.03 * u(3),
            char_secs: 0.06 + 0.02 * u(4),
        }
    }

    pub const fn generic_male() -> Self {
        Self::new(115.0, 0.9)
    }

    pub const fn generic_female() -> Self {
        Self::new(215.0, 1.15)
    }
}

fn vowel_for(c: char) -> usize {
    let v = c.to_ascii_lowercase() as u32;
    (v.wrapping_mul(2_654_435_761) >> 7) as usize % VOWELS.len()
}

fn resonance(f: f64, centre: f64, bandwidth: f64) -> f64 {
    let d = (f - centre) / bandwidth;
    1.0 / (1.0 + d * d)
}

/// Renders `text` in the given voice. Duration is `char_secs` per character,
/// clamped to [0.5 s, 4 s].
pub fn synthesize_voice(
    asset_id: impl Into<String>,
    text: &str,
    voice: &VoiceParams,
    seed: u64,
) -> Result<AudioAsset> {
    let chars: Vec<char> = text.chars().filter(|c| !c.is_whitespace()).collect();
    let chars = if chars.is_empty() { vec!['a'] } else { chars };
    let secs = (chars.len() as f64 * voice.char_secs).clamp(0.5, 4.0);
    let n = (secs * SAMPLE_RATE as f64) as usize;
    let seg = n as f64 / chars.len() as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let max_h = ((7000.0 / voice.f0) as usize).max(1);
    let mut phases: Vec<f64> = (0..max_h).map(|_| rng.random::<f64>() * 2.0 * PI).collect();
    let sr = SAMPLE_RATE as f64;
    let mut out = Vec::with_capacity(n);
    let mut amps = vec![0.0; max_h];
    for i in 0..n {
        let pos = i as f64 / seg;
        let k = (pos.floor() as usize).min(chars.len() - 1);
        let next = (k + 1).min(chars.len() - 1);
        let frac = (pos - k as f64).clamp(0.0, 1.0);
        // Smooth transition across the last 30% of each segment.
        let w = ((frac - 0.7) / 0.3).clamp(0.0, 1.0);
        let va = VOWELS[vowel_for(chars[k])];
        let vb = VOWELS[vowel_for(chars[next])];
        let f0 = voice.f0 * (1.0 + 0.03 * (2.0 * PI * 3.0 * i as f64 / sr).sin());
        if i % 64 == 0 {
            for (h, a) in amps.iter_mut().enumerate() {
                let f = (h + 1) as f64 * f0;
                let mut g = 0.0;
                for j in 0..3 {
                    let centre = voice.tract * (va[j] * (1.0 - w) + vb[j] * w);
                    g += resonance(f, centre, 60.0 + 0.05 * centre) / (j + 1) as f64;
                }
                *a = g / ((h + 1) as f64).powf(voice.tilt * 0.5);
            }
        }
        let mut s = 0.0;
        for (h, ph) in phases.iter_mut().enumerate() {
            let f = (h + 1) as f64 * f0;
            if f >= 7800.0 {
                break;
            }
            *ph += 2.0 * PI * f / sr;
            s += amps[h] * ph.sin();
        }
        let env = (i as f64 / 400.0).min(1.0) * ((n - i) as f64 / 400.0).min(1.0);
        let noise = voice.breath * (rng.random::<f64>() * 2.0 - 1.0);
        out.push((0.25 * env * s + noise * env) as f32);
    }
    let peak = out.iter().fold(0.0f32, |m, v| m.max(v.abs()));
    if peak > 0.95 {
        for v in &mut out {
            *v *= 0.95 / peak;
        }
    }
    AudioAsset::new(asset_id, out)
}
