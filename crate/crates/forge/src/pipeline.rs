//! Config-driven stages: profiles, dialogues, speech and verification.

use std::fs;
use std::path::{Path, PathBuf};

use rolespeak_core::audio::AssetDir;
use rolespeak_core::corpus::{read_corpus, read_jsonl, write_corpus, write_jsonl};
use rolespeak_core::types::{DialogueRecord, RoleProfile};
use serde::{Deserialize, Serialize};

use crate::clients::{
    AsrClient, ChatModelClient, RecordReplay, SimilarityClient, StubAsr, StubChat, StubSimilarity, StubTts,
    TranscriptLedger, TtsClient,
};
use crate::dialogue::{generate_dialogue, Speaker};
use crate::error::{ForgeError, Result};
use crate::filters::reference_clips;
use crate::profile::{create_profile, SeedInfo};
use crate::speech::{synthesize_dialogue_speech, UserVoice};
use crate::verify::{verify_corpus, write_report, VerificationReport, VerifyClients, VerifyConfig};

pub const PROFILES_FILE: &str = "profiles.jsonl";
pub const DIALOGUES_FILE: &str = "dialogues.jsonl";
pub const CORPUS_FILE: &str = "corpus.jsonl";
pub const KEPT_FILE: &str = "kept.jsonl";
pub const ASSETS_DIR: &str = "assets";
pub const REPORT_DIR: &str = "report";
pub const TRANSCRIPTS_FILE: &str = "transcripts.json";
const REFERENCE_TEXT: &str = "the north wind and the sun were arguing";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClientMode {
    /// Built-in deterministic stubs.
    Stub,
    /// Stubs, with every exchange written under the fixture directory.
    Record,
    /// Recorded exchanges only.
    Replay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DialogueSection {
    pub count: usize,
    pub turn_budget: usize,
    /// One persona line per simulated user.
    pub users: Vec<String>,
}

impl Default for DialogueSection {
    fn default() -> Self {
        Self {
            count: 8,
            turn_budget: 6,
            users: vec![
                "You are curious and ask short questions.".into(),
                "You are a tired traveller who wants advice.".into(),
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForgeConfig {
    pub seeds: PathBuf,
    pub out: PathBuf,
    #[serde(default = "default_mode")]
    pub clients: ClientMode,
    #[serde(default = "default_fixtures")]
    pub fixtures: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub dialogues: DialogueSection,
    #[serde(default)]
    pub verify: VerifyConfig,
}

fn default_mode() -> ClientMode {
    ClientMode::Stub
}

fn default_fixtures() -> PathBuf {
    PathBuf::from("fixtures/clients")
}

impl ForgeConfig {
    /// Reads a TOML config; relative paths resolve against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| ForgeError::io(path, e))?;
        let mut cfg: Self = toml::from_str(&text).map_err(|e| ForgeError::Config(e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.seeds, &mut cfg.out, &mut cfg.fixtures] {
            if p.is_relative() {
                *p = base.join(&p);
            }
        }
        if cfg.dialogues.users.is_empty() {
            return Err(ForgeError::Config("dialogues.users must not be empty".into()));
        }
        Ok(cfg)
    }

    fn file(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

/// The four external clients selected by [`ClientMode`].
pub struct Clients {
    pub chat: Box<dyn ChatModelClient>,
    pub tts: Box<dyn TtsClient>,
    pub asr: Box<dyn AsrClient>,
    pub sim: Box<dyn SimilarityClient>,
    /// Transcripts known to the stub ASR.
    pub ledger: TranscriptLedger,
}

impl Clients {
    pub fn new(cfg: &ForgeConfig) -> Result<Self> {
        let ledger = match TranscriptLedger::load(cfg.file(TRANSCRIPTS_FILE)) {
            Ok(l) => l,
            Err(ForgeError::Io { .. }) => TranscriptLedger::default(),
            Err(e) => return Err(e),
        };
        let tts = StubTts::new(ledger.clone());
        let asr = StubAsr { ledger: ledger.clone() };
        let fx = &cfg.fixtures;
        Ok(match cfg.clients {
            ClientMode::Stub => Self {
                chat: Box::new(StubChat),
                tts: Box::new(tts),
                asr: Box::new(asr),
                sim: Box::new(StubSimilarity::default()),
                ledger,
            },
            ClientMode::Record => Self {
                chat: Box::new(RecordReplay::record(fx, StubChat)),
                tts: Box::new(RecordReplay::record(fx, tts)),
                asr: Box::new(RecordReplay::record(fx, asr)),
                sim: Box::new(RecordReplay::record(fx, StubSimilarity::default())),
                ledger,
            },
            ClientMode::Replay => Self {
                chat: Box::new(RecordReplay::<StubChat>::replay(fx)),
                tts: Box::new(RecordReplay::<StubTts>::replay(fx)),
                asr: Box::new(RecordReplay::<StubAsr>::replay(fx)),
                sim: Box::new(RecordReplay::<StubSimilarity>::replay(fx)),
                ledger,
            },
        })
    }
}

fn ensure_out(cfg: &ForgeConfig) -> Result<()> {
    fs::create_dir_all(&cfg.out).map_err(|e| ForgeError::io(&cfg.out, e))
}

/// Expands every seed into a profile and gives characters without reference
/// audio a synthesized reference clip.
pub fn run_profiles(cfg: &ForgeConfig, clients: &Clients) -> Result<Vec<RoleProfile>> {
    ensure_out(cfg)?;
    let seeds: Vec<SeedInfo> = read_jsonl(&cfg.seeds)?;
    let assets = AssetDir::new(cfg.file(ASSETS_DIR));
    let mut profiles = Vec::with_capacity(seeds.len());
    for s in &seeds {
        let mut p = create_profile(s, clients.chat.as_ref())?;
        if p.reference_audio_ids.is_empty() {
            let id = format!("{}-ref", p.role_id);
            let clip = clients.tts.synthesize(REFERENCE_TEXT, &p.role_id)?;
            assets.save(&rolespeak_core::types::AudioAsset::new(id.clone(), clip.samples)?)?;
            p.reference_audio_ids.push(id);
        }
        profiles.push(p);
    }
    rolespeak_core::types::validate_profiles(&profiles)?;
    write_jsonl(&profiles, cfg.file(PROFILES_FILE))?;
    clients.ledger.save(cfg.file(TRANSCRIPTS_FILE))?;
    Ok(profiles)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct StageSummary {
    pub written: usize,
    pub failed: Vec<String>,
}

/// Dialogue `i` pairs user `i mod users` (speaking first) with character `i mod profiles`.
pub fn run_dialogues(cfg: &ForgeConfig, clients: &Clients) -> Result<StageSummary> {
    ensure_out(cfg)?;
    let profiles: Vec<RoleProfile> = read_jsonl(cfg.file(PROFILES_FILE))?;
    if profiles.is_empty() {
        return Err(ForgeError::Config("no profiles; run the profiles stage first".into()));
    }
    let mut records = Vec::new();
    let mut summary = StageSummary::default();
    for i in 0..cfg.dialogues.count {
        let u = i % cfg.dialogues.users.len();
        let user = Speaker::User {
            user_id: format!("user{u}"),
            persona: cfg.dialogues.users[u].clone(),
        };
        let character = Speaker::Character(profiles[i % profiles.len()].clone());
        let id = format!("dlg-{i:05}");
        match generate_dialogue(&id, &user, &character, clients.chat.as_ref(), cfg.dialogues.turn_budget) {
            Ok(r) => records.push(r),
            Err(e @ ForgeError::Aborted { .. }) => summary.failed.push(e.to_string()),
            Err(e) => return Err(e),
        }
    }
    write_corpus(&records, cfg.file(DIALOGUES_FILE))?;
    summary.written = records.len();
    Ok(summary)
}

/// Voices every generated dialogue; incomplete dialogues are left out entirely.
pub fn run_speech(cfg: &ForgeConfig, clients: &Clients) -> Result<StageSummary> {
    let records = read_corpus(cfg.file(DIALOGUES_FILE))?;
    let assets = AssetDir::new(cfg.file(ASSETS_DIR));
    let mut voiced: Vec<DialogueRecord> = Vec::new();
    let mut summary = StageSummary::default();
    for (i, r) in records.iter().enumerate() {
        let seed = cfg.seed.wrapping_add(i as u64);
        match synthesize_dialogue_speech(r, clients.tts.as_ref(), clients.tts.as_ref(), seed) {
            Ok(v) => {
                for a in &v.assets {
                    assets.save(a)?;
                }
                voiced.push(v.record);
            }
            Err(e @ ForgeError::Incomplete { .. }) => summary.failed.push(e.to_string()),
            Err(e) => return Err(e),
        }
    }
    write_corpus(&voiced, cfg.file(CORPUS_FILE))?;
    clients.ledger.save(cfg.file(TRANSCRIPTS_FILE))?;
    summary.written = voiced.len();
    Ok(summary)
}

/// Verifies the voiced corpus, writes the report and the kept subset.
pub fn run_verify(cfg: &ForgeConfig, clients: &Clients) -> Result<VerificationReport> {
    let records = read_corpus(cfg.file(CORPUS_FILE))?;
    let profiles: Vec<RoleProfile> = read_jsonl(cfg.file(PROFILES_FILE))?;
    let assets = AssetDir::new(cfg.file(ASSETS_DIR));
    let refs = reference_clips(&profiles, &assets)?;
    let vc = VerifyClients {
        asr: clients.asr.as_ref(),
        sim: clients.sim.as_ref(),
        assets: &assets,
        refs: &refs,
    };
    let report = verify_corpus(&records, &vc, &cfg.verify)?;
    write_report(cfg.file(REPORT_DIR), &report)?;
    let kept: Vec<DialogueRecord> = records
        .into_iter()
        .zip(&report.verdicts)
        .filter(|(_, v)| v.verdict == crate::verify::Verdict::Keep)
        .map(|(r, _)| r)
        .collect();
    write_corpus(&kept, cfg.file(KEPT_FILE))?;
    Ok(report)
}

/// Fraction of male user voices over `n` seeds starting at `seed`.
pub fn male_fraction(seed: u64, n: usize) -> f64 {
    let male = (0..n as u64)
        .filter(|i| UserVoice::draw(seed.wrapping_add(*i)) == UserVoice::Male)
        .count();
    male as f64 / n.max(1) as f64
}
