//! External-model interfaces, deterministic stubs and a record/replay layer.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use rolespeak_core::audio::to_pcm16;
use rolespeak_core::synth::{synthesize_voice, VoiceParams};
use rolespeak_core::synthesis::SpeakerEmbedder;
use rolespeak_core::types::AudioAsset;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{ForgeError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChatRole {
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: ChatRole,
    pub content: String,
}

impl ChatMessage {
    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: ChatRole::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: ChatRole::Assistant,
            content: content.into(),
        }
    }
}

pub trait ChatModelClient {
    fn complete(&self, system: &str, messages: &[ChatMessage]) -> Result<String>;
}

pub trait TtsClient {
    /// Speech for `text` in the voice named `speaker`.
    fn synthesize(&self, text: &str, speaker: &str) -> Result<AudioAsset>;
}

pub trait AsrClient {
    fn transcribe(&self, audio: &AudioAsset) -> Result<String>;
}

pub trait SimilarityClient {
    /// Speaker similarity in [0, 1].
    fn similarity(&self, a: &AudioAsset, b: &AudioAsset) -> Result<f64>;
}

impl<C: ChatModelClient + ?Sized> ChatModelClient for &C {
    fn complete(&self, system: &str, messages: &[ChatMessage]) -> Result<String> {
        (**self).complete(system, messages)
    }
}

impl<C: TtsClient + ?Sized> TtsClient for &C {
    fn synthesize(&self, text: &str, speaker: &str) -> Result<AudioAsset> {
        (**self).synthesize(text, speaker)
    }
}

impl<C: AsrClient + ?Sized> AsrClient for &C {
    fn transcribe(&self, audio: &AudioAsset) -> Result<String> {
        (**self).transcribe(audio)
    }
}

impl<C: SimilarityClient + ?Sized> SimilarityClient for &C {
    fn similarity(&self, a: &AudioAsset, b: &AudioAsset) -> Result<f64> {
        (**self).similarity(a, b)
    }
}

/// Chat client backed by a closure, handy for scripted tests.
pub struct FnChat<F>(pub F);

impl<F: Fn(&str, &[ChatMessage]) -> Result<String>> ChatModelClient for FnChat<F> {
    fn complete(&self, system: &str, messages: &[ChatMessage]) -> Result<String> {
        (self.0)(system, messages)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Content hash of a clip at 16-bit PCM resolution, so WAV storage keeps it stable.
pub fn audio_hash(audio: &AudioAsset) -> String {
    let mut h = Sha256::new();
    h.update(audio.sample_rate.to_le_bytes());
    for s in &audio.samples {
        h.update(to_pcm16(*s).to_le_bytes());
    }
    hex::encode(h.finalize())
}

fn digest_u64(parts: &[&str]) -> u64 {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest is 32 bytes"))
}

/// Marks the system text of a profile-expansion request.
pub const PROFILE_WRITER: &str = "<|profile-writer|>";

const OPENERS: [&str; 6] = ["Well,", "Hm,", "Listen,", "Ah,", "Truly,", "Look,"];
const SUBJECTS: [&str; 8] = [
    "the tide",
    "the old road",
    "my work",
    "the weather",
    "a stranger",
    "the market",
    "the night",
    "this town",
];
const PREDICATES: [&str; 8] = [
    "keeps me busy",
    "has changed again",
    "reminds me of home",
    "is full of surprises",
    "never waits for anyone",
    "tells a long story",
    "sounds louder today",
    "brings good news",
];

/// Deterministic chat model: every reply is a pure function of the request.
///
/// Profile requests (system text starting with [`PROFILE_WRITER`]) are answered by
/// echoing the seed fields into `Persona:` and `Voice:` lines; everything else gets a
/// short in-character sentence.
#[derive(Debug, Clone, Copy, Default)]
pub struct StubChat;

fn field<'a>(text: &'a str, key: &str) -> Option<&'a str> {
    text.lines().find_map(|l| l.strip_prefix(key)).map(str::trim)
}

impl ChatModelClient for StubChat {
    fn complete(&self, system: &str, messages: &[ChatMessage]) -> Result<String> {
        let last = messages.last().map(|m| m.content.as_str()).unwrap_or_default();
        if system.starts_with(PROFILE_WRITER) {
            let name = field(last, "Name:").unwrap_or("Someone");
            let traits = field(last, "Traits:").unwrap_or_default();
            return Ok(format!(
                "Persona: {name} is {traits} by nature, and every story {name} tells returns to those roots.\nVoice: {traits}, steady"
            ));
        }
        let mut parts = vec![system];
        parts.extend(messages.iter().map(|m| m.content.as_str()));
        let h = digest_u64(&parts);
        Ok(format!(
            "{} {} {}.",
            OPENERS[(h % 6) as usize],
            SUBJECTS[(h >> 8) as usize % 8],
            PREDICATES[(h >> 16) as usize % 8]
        ))
    }
}

/// Transcripts of clips produced by a [`StubTts`], shared with [`StubAsr`].
#[derive(Debug, Clone, Default)]
pub struct TranscriptLedger(Arc<Mutex<HashMap<String, String>>>);

impl TranscriptLedger {
    pub fn insert(&self, audio: &AudioAsset, text: &str) {
        self.0
            .lock()
            .expect("ledger lock")
            .insert(audio_hash(audio), text.to_owned());
    }

    pub fn get(&self, audio: &AudioAsset) -> Option<String> {
        self.0.lock().expect("ledger lock").get(&audio_hash(audio)).cloned()
    }

    pub fn len(&self) -> usize {
        self.0.lock().expect("ledger lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Stores the ledger as JSON, sorted by audio hash.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let map: std::collections::BTreeMap<_, _> = self.0.lock().expect("ledger lock").clone().into_iter().collect();
        fs::write(path, serde_json::to_string_pretty(&map)?).map_err(|e| ForgeError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| ForgeError::io(path, e))?;
        let map: HashMap<String, String> = serde_json::from_str(&text)?;
        Ok(Self(Arc::new(Mutex::new(map))))
    }
}

pub const MALE_VOICE: &str = "male";
pub const FEMALE_VOICE: &str = "female";

/// Formant synthesizer TTS. Named voices override the hash-derived default;
/// [`MALE_VOICE`] and [`FEMALE_VOICE`] are the generic user voices.
#[derive(Debug, Clone, Default)]
pub struct StubTts {
    pub voices: HashMap<String, VoiceParams>,
    pub ledger: TranscriptLedger,
}

impl StubTts {
    pub fn new(ledger: TranscriptLedger) -> Self {
        Self {
            voices: HashMap::new(),
            ledger,
        }
    }

    pub fn with_voice(mut self, speaker: &str, voice: VoiceParams) -> Self {
        self.voices.insert(speaker.to_owned(), voice);
        self
    }

    pub fn voice(&self, speaker: &str) -> VoiceParams {
        match (self.voices.get(speaker), speaker) {
            (Some(v), _) => *v,
            (None, MALE_VOICE) => VoiceParams::generic_male(),
            (None, FEMALE_VOICE) => VoiceParams::generic_female(),
            (None, other) => VoiceParams::for_speaker(other),
        }
    }
}

impl TtsClient for StubTts {
    fn synthesize(&self, text: &str, speaker: &str) -> Result<AudioAsset> {
        if text.trim().is_empty() {
            return Err(ForgeError::Client {
                client: "tts",
                message: "empty text".into(),
                retriable: false,
            });
        }
        let seed = digest_u64(&[speaker, text]);
        let audio = synthesize_voice(format!("tts-{seed:016x}"), text, &self.voice(speaker), seed)?;
        self.ledger.insert(&audio, text);
        Ok(audio)
    }
}

/// Looks transcripts up in a [`TranscriptLedger`]; unknown audio transcribes to "".
#[derive(Debug, Clone, Default)]
pub struct StubAsr {
    pub ledger: TranscriptLedger,
}

impl AsrClient for StubAsr {
    fn transcribe(&self, audio: &AudioAsset) -> Result<String> {
        Ok(self.ledger.get(audio).unwrap_or_default())
    }
}

/// Cosine of the built-in speaker embeddings, clamped to [0, 1].
#[derive(Default)]
pub struct StubSimilarity {
    embedder: SpeakerEmbedder,
}

impl SimilarityClient for StubSimilarity {
    fn similarity(&self, a: &AudioAsset, b: &AudioAsset) -> Result<f64> {
        let ea = self.embedder.embed(a)?;
        let eb = self.embedder.embed(b)?;
        Ok(ea.cosine(&eb).clamp(0.0, 1.0))
    }
}

#[derive(Serialize, Deserialize)]
struct Exchange<Q, R> {
    request: Q,
    response: R,
}

#[derive(Serialize, Deserialize)]
struct RecordedAudio {
    asset_id: String,
    sample_rate: u32,
    samples: Vec<f32>,
}

/// Records live client responses under `dir/<kind>/<sha256 of request>.json`,
/// or replays them without a live client.
pub struct RecordReplay<C> {
    dir: PathBuf,
    live: Option<C>,
}

impl<C> RecordReplay<C> {
    pub fn record(dir: impl Into<PathBuf>, live: C) -> Self {
        Self {
            dir: dir.into(),
            live: Some(live),
        }
    }

    pub fn replay(dir: impl Into<PathBuf>) -> Self {
        Self {
            dir: dir.into(),
            live: None,
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn exchange<Q, R>(&self, kind: &'static str, request: Q, call: impl FnOnce(&C) -> Result<R>) -> Result<R>
    where
        Q: Serialize,
        R: Serialize + DeserializeOwned,
    {
        let key = request_key(kind, &request)?;
        let path = self.dir.join(kind).join(format!("{key}.json"));
        match &self.live {
            Some(live) => {
                let response = call(live)?;
                let parent = path.parent().expect("fixture path has a parent");
                fs::create_dir_all(parent).map_err(|e| ForgeError::io(parent, e))?;
                let json = serde_json::to_string_pretty(&Exchange {
                    request: &request,
                    response: &response,
                })?;
                fs::write(&path, json).map_err(|e| ForgeError::io(&path, e))?;
                Ok(response)
            }
            None => {
                let text = fs::read_to_string(&path).map_err(|_| ForgeError::MissingFixture { kind, key })?;
                let ex: Exchange<serde_json::Value, R> = serde_json::from_str(&text)?;
                Ok(ex.response)
            }
        }
    }
}

/// Fixture key: sha256 of the canonical JSON of kind and request.
pub fn request_key<Q: Serialize>(kind: &str, request: &Q) -> Result<String> {
    let v = serde_json::json!({ "kind": kind, "request": request });
    Ok(sha256_hex(&serde_json::to_vec(&v)?))
}

impl<C: ChatModelClient> ChatModelClient for RecordReplay<C> {
    fn complete(&self, system: &str, messages: &[ChatMessage]) -> Result<String> {
        let req = serde_json::json!({ "system": system, "messages": messages });
        self.exchange("chat", req, |c| c.complete(system, messages))
    }
}

impl<C: TtsClient> TtsClient for RecordReplay<C> {
    fn synthesize(&self, text: &str, speaker: &str) -> Result<AudioAsset> {
        let req = serde_json::json!({ "text": text, "speaker": speaker });
        let r: RecordedAudio = self.exchange("tts", req, |c| {
            let a = c.synthesize(text, speaker)?;
            Ok(RecordedAudio {
                asset_id: a.asset_id,
                sample_rate: a.sample_rate,
                samples: a.samples,
            })
        })?;
        let audio = AudioAsset {
            asset_id: r.asset_id,
            sample_rate: r.sample_rate,
            samples: r.samples,
        };
        audio.validate()?;
        Ok(audio)
    }
}

impl<C: AsrClient> AsrClient for RecordReplay<C> {
    fn transcribe(&self, audio: &AudioAsset) -> Result<String> {
        let req = serde_json::json!({ "audio_sha256": audio_hash(audio) });
        self.exchange("asr", req, |c| c.transcribe(audio))
    }
}

impl<C: SimilarityClient> SimilarityClient for RecordReplay<C> {
    fn similarity(&self, a: &AudioAsset, b: &AudioAsset) -> Result<f64> {
        let req = serde_json::json!({ "a_sha256": audio_hash(a), "b_sha256": audio_hash(b) });
        self.exchange("similarity", req, |c| c.similarity(a, b))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stub_chat_is_pure() {
        let m = [ChatMessage::user("hi")];
        assert_eq!(StubChat.complete("s", &m).unwrap(), StubChat.complete("s", &m).unwrap());
        assert_ne!(StubChat.complete("s", &m).unwrap(), StubChat.complete("t", &m).unwrap());
    }

    #[test]
    fn loopback_asr_recovers_tts_text() {
        let ledger = TranscriptLedger::default();
        let tts = StubTts::new(ledger.clone());
        let a = tts.synthesize("good morning", "mira").unwrap();
        assert_eq!(StubAsr { ledger }.transcribe(&a).unwrap(), "good morning");
    }

    #[test]
    fn stub_similarity_is_symmetric() {
        let tts = StubTts::default();
        let a = tts.synthesize("one two", "mira").unwrap();
        let b = tts.synthesize("three four", "bram").unwrap();
        let s = StubSimilarity::default();
        assert_eq!(s.similarity(&a, &b).unwrap(), s.similarity(&b, &a).unwrap());
        assert!((s.similarity(&a, &a).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn replay_returns_what_was_recorded() {
        let dir = tempfile::tempdir().unwrap();
        let m = [ChatMessage::user("hello")];
        let rec = RecordReplay::record(dir.path(), StubChat);
        let live = rec.complete("sys", &m).unwrap();
        let rep = RecordReplay::<StubChat>::replay(dir.path());
        assert_eq!(rep.complete("sys", &m).unwrap(), live);
        assert!(matches!(
            rep.complete("other", &m),
            Err(ForgeError::MissingFixture { kind: "chat", .. })
        ));
        let tts = RecordReplay::record(dir.path(), StubTts::default());
        let a = tts.synthesize("hi there", "bram").unwrap();
        let back = RecordReplay::<StubTts>::replay(dir.path()).synthesize("hi there", "bram").unwrap();
        assert_eq!(a, back);
    }
}
