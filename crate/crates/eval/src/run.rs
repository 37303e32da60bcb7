//! Config-driven evaluation commands writing text, JSON and PNG outputs.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rolespeak_core::audio::{AssetDir, AssetSource};
use rolespeak_core::corpus::{read_corpus, read_jsonl};
use rolespeak_core::synthesis::SpeakerEmbedder;
use rolespeak_core::types::{AudioAsset, Language};
use rolespeak_forge::clients::{AsrClient, RecordReplay, StubAsr, TranscriptLedger};
use serde::{Deserialize, Serialize};

use crate::error::{EvalError, Result};
use crate::similarity::{embed_speakers, similarity_matrix, SimilarityMatrix, VOICE_MATCH_THRESHOLD};
use crate::stats::{corpus_stats, CorpusStats};
use crate::wer::{eval_asr_wer, eval_tts_wer, WerReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AsrMode {
    /// Transcript ledger written by the stub TTS.
    Stub,
    /// Recorded exchanges under `fixtures`.
    Replay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    #[serde(default)]
    pub corpus: Option<PathBuf>,
    #[serde(default)]
    pub assets: Option<PathBuf>,
    #[serde(default = "default_language")]
    pub language: Language,
    #[serde(default = "default_sets")]
    pub n_sets: usize,
    #[serde(default)]
    pub seed: u64,
    /// Asset id pairs for `voice-match`.
    #[serde(default)]
    pub voice_pairs: Vec<[String; 2]>,
    /// JSONL of `{reference, hypothesis}` for `asr-wer`.
    #[serde(default)]
    pub asr_pairs: Option<PathBuf>,
    /// JSONL of `{audio, text}` for `tts-wer`.
    #[serde(default)]
    pub tts_items: Option<PathBuf>,
    #[serde(default = "default_asr")]
    pub asr: AsrMode,
    #[serde(default)]
    pub transcripts: Option<PathBuf>,
    #[serde(default)]
    pub fixtures: Option<PathBuf>,
}

fn default_language() -> Language {
    Language::En
}

fn default_sets() -> usize {
    3
}

fn default_asr() -> AsrMode {
    AsrMode::Stub
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsrPair {
    pub reference: String,
    pub hypothesis: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TtsItem {
    pub audio: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoiceMatchResult {
    pub a: String,
    pub b: String,
    pub cosine: f64,
    pub matched: bool,
}

fn required<'a>(v: &'a Option<PathBuf>, name: &str) -> Result<&'a Path> {
    v.as_deref().ok_or_else(|| EvalError::Config(format!("`{name}` is required for this command")))
}

impl EvalConfig {
    /// Reads a TOML config; relative paths resolve against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| EvalError::io(path, e))?;
        let mut cfg: Self = toml::from_str(&text).map_err(|e| EvalError::Config(e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [
            &mut cfg.corpus,
            &mut cfg.assets,
            &mut cfg.asr_pairs,
            &mut cfg.tts_items,
            &mut cfg.transcripts,
            &mut cfg.fixtures,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&p);
            }
        }
        Ok(cfg)
    }

    fn assets(&self) -> Result<AssetDir> {
        Ok(AssetDir::new(required(&self.assets, "assets")?))
    }

    fn asr(&self) -> Result<Box<dyn AsrClient>> {
        Ok(match self.asr {
            AsrMode::Stub => {
                let ledger = match &self.transcripts {
                    Some(p) => TranscriptLedger::load(p)?,
                    None => TranscriptLedger::default(),
                };
                Box::new(StubAsr { ledger })
            }
            AsrMode::Replay => Box::new(RecordReplay::<StubAsr>::replay(required(&self.fixtures, "fixtures")?)),
        })
    }
}

fn ensure(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| EvalError::io(dir, e))
}

fn write_json<T: Serialize>(path: PathBuf, value: &T) -> Result<()> {
    fs::write(&path, serde_json::to_string_pretty(value)?).map_err(|e| EvalError::io(path, e))
}

/// Every speaker's turn clips, speakers in id order.
pub fn clips_by_speaker(cfg: &EvalConfig) -> Result<Vec<(String, Vec<AudioAsset>)>> {
    let records = read_corpus(required(&cfg.corpus, "corpus")?)?;
    let assets = cfg.assets()?;
    let mut by: BTreeMap<String, Vec<AudioAsset>> = BTreeMap::new();
    for r in &records {
        for t in &r.turns {
            if let Some(id) = t.payload.audio_ref() {
                by.entry(t.speaker_id.clone()).or_default().push(assets.load(id)?);
            }
        }
    }
    Ok(by.into_iter().collect())
}

/// Writes `sim_matrix_<k>.txt` and `.png` for each sampled set.
pub fn run_sim_matrix(cfg: &EvalConfig, out: &Path) -> Result<Vec<SimilarityMatrix>> {
    ensure(out)?;
    let sets = embed_speakers(&clips_by_speaker(cfg)?, &SpeakerEmbedder::new())?;
    let mats = similarity_matrix(&sets, cfg.n_sets, cfg.seed)?;
    for (k, m) in mats.iter().enumerate() {
        m.write_text(out.join(format!("sim_matrix_{k}.txt")))?;
        m.write_png(out.join(format!("sim_matrix_{k}.png")))?;
    }
    Ok(mats)
}

pub fn run_voice_match(cfg: &EvalConfig, out: &Path) -> Result<Vec<VoiceMatchResult>> {
    ensure(out)?;
    if cfg.voice_pairs.is_empty() {
        return Err(EvalError::Config("`voice_pairs` is empty".into()));
    }
    let assets = cfg.assets()?;
    let embedder = SpeakerEmbedder::new();
    let results = cfg
        .voice_pairs
        .iter()
        .map(|[a, b]| {
            let ea = embedder.embed(&assets.load(a)?)?;
            let eb = embedder.embed(&assets.load(b)?)?;
            let cosine = ea.cosine(&eb);
            Ok(VoiceMatchResult {
                a: a.clone(),
                b: b.clone(),
                cosine,
                matched: cosine > VOICE_MATCH_THRESHOLD,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    write_json(out.join("voice_match.json"), &results)?;
    Ok(results)
}

pub fn run_stats(cfg: &EvalConfig, out: &Path) -> Result<CorpusStats> {
    ensure(out)?;
    let records = read_corpus(required(&cfg.corpus, "corpus")?)?;
    let stats = corpus_stats(&records, &cfg.assets()?)?;
    write_json(out.join("stats.json"), &stats.row())?;
    let path = out.join("stats.txt");
    fs::write(&path, stats.to_text()).map_err(|e| EvalError::io(path, e))?;
    Ok(stats)
}

pub fn run_asr_wer(cfg: &EvalConfig, out: &Path) -> Result<WerReport> {
    ensure(out)?;
    let pairs: Vec<AsrPair> = read_jsonl(required(&cfg.asr_pairs, "asr_pairs")?)?;
    let pairs: Vec<(&str, &str)> = pairs.iter().map(|p| (p.reference.as_str(), p.hypothesis.as_str())).collect();
    let report = eval_asr_wer(&pairs, cfg.language)?;
    write_json(out.join("asr_wer.json"), &report)?;
    Ok(report)
}

pub fn run_tts_wer(cfg: &EvalConfig, out: &Path) -> Result<WerReport> {
    ensure(out)?;
    let items: Vec<TtsItem> = read_jsonl(required(&cfg.tts_items, "tts_items")?)?;
    let assets = cfg.assets()?;
    let audio = items.iter().map(|i| assets.load(&i.audio)).collect::<rolespeak_core::Result<Vec<_>>>()?;
    let texts: Vec<String> = items.into_iter().map(|i| i.text).collect();
    let report = eval_tts_wer(&audio, &texts, cfg.asr()?.as_ref(), cfg.language)?;
    write_json(out.join("tts_wer.json"), &report)?;
    Ok(report)
}
