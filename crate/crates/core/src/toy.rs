//! Small deterministic worlds (profiles, dialogues, synthetic audio) and matching
//! toy-scale model configurations for tests, demos and benchmarks.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::audio::AssetDir;
use crate::config::{CodebookSection, DataSection, RespondSection, RunConfig, TokenizerSection, TrainSection};
use crate::corpus::{write_corpus, write_jsonl};
use crate::decode::DecodeConfig;
use crate::error::{CoreError, Result};
use crate::frontend::EncoderConfig;
use crate::language::LanguageConfig;
use crate::model::ModelConfig;
use crate::prompt::assemble_prompt;
use crate::speech_decoder::SpeechLmConfig;
use crate::synth::{synthesize_voice, VoiceParams};
use crate::synthesis::FlowConfig;
use crate::tokenizer::Tokenizer;
use crate::training::TrainConfig;
use crate::types::{AudioAsset, DialogueRecord, Language, ModalityPayload, RoleProfile, Turn};

const CHARACTERS: [(&str, &str, &str, &str); 2] = [
    (
        "mira",
        "Mira",
        "A cheerful lighthouse keeper who talks about storms, ships and the sea with great warmth.",
        "bright, quick and high",
    ),
    (
        "bram",
        "Bram",
        "A gruff old blacksmith who speaks slowly about iron, fire and honest work at the forge.",
        "deep, slow and gravelly",
    ),
];

const USER_LINES: [&str; 8] = [
    "hello there",
    "what do you do all day",
    "is the weather bad today",
    "tell me a story",
    "are you tired",
    "what did you eat",
    "do you like music",
    "good night",
];

const MIRA_LINES: [&str; 8] = [
    "Ahoy! Welcome to my tower.",
    "I keep the lamp burning bright.",
    "A storm rolls in from the west.",
    "Once a ship sailed through fog.",
    "Never while the light turns.",
    "Fresh fish and warm bread.",
    "I sing to the gulls.",
    "Sleep well, sailor.",
];

const BRAM_LINES: [&str; 8] = [
    "Hm. Mind the sparks.",
    "I hammer iron till dusk.",
    "Rain cools the coals.",
    "My father forged a sword once.",
    "Aye, my arms ache.",
    "Stew and a hard crust.",
    "The anvil is my drum.",
    "Bank the fire first.",
];

/// Profiles, dialogue records and every referenced clip.
#[derive(Debug, Clone)]
pub struct ToyWorld {
    pub profiles: Vec<RoleProfile>,
    pub records: Vec<DialogueRecord>,
    pub assets: HashMap<String, AudioAsset>,
}

pub fn character_voice(role_id: &str) -> VoiceParams {
    match role_id {
        "mira" => VoiceParams::new(230.0, 1.2),
        "bram" => VoiceParams::new(105.0, 0.85),
        other => VoiceParams::for_speaker(other),
    }
}

/// Two characters with one reference clip each.
pub fn toy_profiles() -> Vec<RoleProfile> {
    CHARACTERS
        .iter()
        .map(|&(id, name, persona, voice)| RoleProfile {
            role_id: id.into(),
            name: name.into(),
            persona_text: persona.into(),
            voice_style_text: voice.into(),
            language: Language::En,
            reference_audio_ids: vec![format!("{id}-ref")],
            needs_review: false,
        })
        .collect()
}

fn lines_for(role_id: &str) -> &'static [&'static str; 8] {
    if role_id == "mira" {
        &MIRA_LINES
    } else {
        &BRAM_LINES
    }
}

impl ToyWorld {
    /// `n_records` four-turn dialogues (user, character, user, character), alternating
    /// characters. Every other user turn carries speech as well as text.
    pub fn build(n_records: usize, seed: u64) -> Result<Self> {
        let profiles = toy_profiles();
        let mut assets = HashMap::new();
        for p in &profiles {
            let id = format!("{}-ref", p.role_id);
            let clip = synthesize_voice(&id, "the quick brown fox jumps", &character_voice(&p.role_id), seed ^ 0xabc)?;
            assets.insert(id, clip);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut records = Vec::with_capacity(n_records);
        for r in 0..n_records {
            let role = &profiles[r % profiles.len()];
            let user = format!("user{}", r % 3);
            let user_voice = if rng.random::<bool>() {
                VoiceParams::generic_male()
            } else {
                VoiceParams::generic_female()
            };
            let mut turns = Vec::new();
            for k in 0..4 {
                let line = (r / profiles.len() + k / 2 * 3) % 8;
                let aid = format!("d{r:03}-t{k}");
                let (speaker, text, voice) = if k % 2 == 0 {
                    (user.clone(), USER_LINES[(line + r) % 8].to_owned(), user_voice)
                } else {
                    (role.role_id.clone(), lines_for(&role.role_id)[line].to_owned(), character_voice(&role.role_id))
                };
                let clip = synthesize_voice(&aid, &text, &voice, seed.wrapping_add((r * 4 + k) as u64))?;
                assets.insert(aid.clone(), clip);
                let payload = if k % 2 == 0 && (r + k / 2) % 2 == 1 {
                    ModalityPayload::speech(aid)
                } else {
                    ModalityPayload::speech_and_text(text, aid)
                };
                turns.push(Turn::new(k, speaker, payload));
            }
            records.push(DialogueRecord {
                dialogue_id: format!("toy-{r:03}"),
                participants: [user, role.role_id.clone()],
                turns,
                profile_refs: vec![role.role_id.clone()],
            });
        }
        Ok(Self {
            profiles,
            records,
            assets,
        })
    }

    /// Texts a tokenizer should be trained on: every rendered prompt plus responses.
    pub fn tokenizer_texts(&self) -> Result<Vec<String>> {
        let mut out = Vec::new();
        for r in &self.records {
            let profile = self
                .profiles
                .iter()
                .find(|p| r.profile_refs.contains(&p.role_id))
                .ok_or_else(|| CoreError::Data(format!("{}: unknown character", r.dialogue_id)))?;
            for i in 1..r.turns.len() {
                out.push(assemble_prompt(profile, &r.turns[..i - 1], &r.turns[i - 1].payload)?.text);
                if let Some(t) = r.turns[i].payload.text_content() {
                    out.push(format!(" {t}"));
                }
            }
        }
        Ok(out)
    }

    pub fn train_tokenizer(&self, merges: usize) -> Result<Tokenizer> {
        let texts = self.tokenizer_texts()?;
        Ok(Tokenizer::train(texts.iter().map(String::as_str), merges))
    }
}

/// A model small enough to train in seconds.
pub fn toy_model(text_vocab: usize, speech_vocab: usize) -> ModelConfig {
    let d = 32;
    ModelConfig {
        seed: 17,
        encoder: EncoderConfig {
            d_enc: 16,
            layers: 1,
            heads: 2,
            conv_kernel: 3,
            conv_stride: 2,
            group_size: 4,
            seed: 7,
        },
        adapter_hidden: 32,
        language: LanguageConfig {
            layers: 2,
            d_model: d,
            heads: 2,
            ff_mult: 2,
            vocab: text_vocab,
        },
        speech_lm: SpeechLmConfig {
            layers: 2,
            d_model: d,
            heads: 2,
            ff_mult: 2,
            vocab: speech_vocab,
            context_dim: d,
        },
        flow: FlowConfig {
            mel_bins: 80,
            hidden: 32,
            layers: 2,
            kernel: 3,
            time_dim: 8,
            speaker_dim: 160,
            context_dim: d,
            token_ratio: 2,
            sigma_min: 1e-4,
            steps: 10,
        },
    }
}

/// Toy-scale schedules: higher learning rates and batch 8 so the fixture overfits
/// within the step budget.
pub fn toy_train(steps: usize) -> TrainSection {
    let mut s1 = TrainConfig::stage1();
    s1.peak_lr = 3e-3;
    s1.batch_size = 8;
    s1.max_steps = steps;
    let mut s2 = TrainConfig::stage2();
    s2.peak_lr = 3e-3;
    s2.batch_size = 8;
    s2.max_steps = steps;
    let mut c = TrainConfig::cfm();
    c.peak_lr = 2e-3;
    c.batch_size = 8;
    c.max_steps = steps;
    TrainSection {
        stage1: s1,
        stage2: s2,
        cfm: c,
    }
}

/// Paths of an on-disk fixture written by [`write_fixture`].
#[derive(Debug, Clone)]
pub struct FixturePaths {
    pub root: PathBuf,
    pub config: PathBuf,
    pub corpus: PathBuf,
}

/// Writes profiles, corpus, WAV assets, tokenizer and a run config under `root`.
/// The codebook path is configured but the file is left to `codebook fit`.
pub fn write_fixture(root: &Path, world: &ToyWorld, merges: usize, speech_vocab: usize, steps: usize) -> Result<FixturePaths> {
    fs::create_dir_all(root).map_err(|e| CoreError::io(root, e))?;
    let tok = world.train_tokenizer(merges)?;
    tok.save(root.join("tokenizer.txt"))?;
    write_jsonl(&world.profiles, root.join("profiles.jsonl"))?;
    let assets = AssetDir::new(root.join("assets"));
    let mut ids: Vec<&String> = world.assets.keys().collect();
    ids.sort();
    for id in ids {
        assets.save(&world.assets[id])?;
    }
    let corpus = root.join("corpus.jsonl");
    write_corpus(&world.records, &corpus)?;
    let cfg = RunConfig {
        model: toy_model(tok.vocab_size(), speech_vocab),
        tokenizer: TokenizerSection {
            path: "tokenizer.txt".into(),
            hash: Some(tok.content_hash()),
            merges,
        },
        codebook: CodebookSection {
            path: "codebook.bin".into(),
            hash: None,
            iters: 25,
            seed: 3,
        },
        data: DataSection {
            profiles: "profiles.jsonl".into(),
            assets: "assets".into(),
            history_turns: 2,
        },
        train: toy_train(steps),
        decode: DecodeConfig::greedy(24),
        respond: RespondSection {
            max_speech_tokens: 80,
            vocoder_iterations: 16,
            ..RespondSection::default()
        },
    };
    let config = root.join("config.toml");
    fs::write(&config, cfg.to_toml()?).map_err(|e| CoreError::io(&config, e))?;
    Ok(FixturePaths {
        root: root.to_path_buf(),
        config,
        corpus,
    })
}
