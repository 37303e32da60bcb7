//! Small hand-built corpora for exercising the filters.

use std::collections::HashMap;

use rolespeak_core::synth::VoiceParams;
use rolespeak_core::types::{AudioAsset, DialogueRecord, ModalityPayload, Turn};

use crate::clients::{StubTts, TranscriptLedger, TtsClient};
use crate::error::Result;
use crate::filters::ReferenceClips;

pub const CHARACTER: &str = "mira";
pub const IMPOSTOR: &str = "bram";
pub const USER: &str = "user0";

const LINES: [&str; 6] = [
    "good evening keeper",
    "welcome in the storm is coming",
    "can I stay until morning",
    "of course the lamp will keep us warm",
    "thank you for the shelter",
    "rest now the sea is loud tonight",
];

/// Voiced records plus the clips, references and transcripts they need.
pub struct FilterFixture {
    pub records: Vec<DialogueRecord>,
    pub assets: HashMap<String, AudioAsset>,
    pub refs: ReferenceClips,
    pub ledger: TranscriptLedger,
}

struct Builder {
    tts: StubTts,
    assets: HashMap<String, AudioAsset>,
}

impl Builder {
    fn new(ledger: TranscriptLedger) -> Self {
        Self {
            tts: StubTts::new(ledger)
                .with_voice(CHARACTER, VoiceParams::new(230.0, 1.2))
                .with_voice(IMPOSTOR, VoiceParams::new(105.0, 0.85)),
            assets: HashMap::new(),
        }
    }

    fn clip(&mut self, id: &str, text: &str, voice: &str) -> Result<AudioAsset> {
        let a = self.tts.synthesize(text, voice)?;
        let a = AudioAsset::new(id, a.samples)?;
        self.tts.ledger.insert(&a, text);
        self.assets.insert(id.to_owned(), a.clone());
        Ok(a)
    }

    /// `speakers[k]` says `texts[k]`, voiced by `voices[k]`.
    fn record(&mut self, id: &str, speakers: &[&str], texts: &[&str], voices: &[&str]) -> Result<DialogueRecord> {
        let mut turns = Vec::new();
        for (k, ((s, t), v)) in speakers.iter().zip(texts).zip(voices).enumerate() {
            let aid = format!("{id}-t{k}");
            self.clip(&aid, t, v)?;
            turns.push(Turn::new(k, *s, ModalityPayload::speech_and_text(*t, aid)));
        }
        Ok(DialogueRecord {
            dialogue_id: id.into(),
            participants: [USER.into(), CHARACTER.into()],
            turns,
            profile_refs: vec![CHARACTER.into()],
        })
    }

    fn clean(&mut self, id: &str, n: usize) -> Result<DialogueRecord> {
        let speakers: Vec<&str> = (0..n).map(|k| if k % 2 == 0 { USER } else { CHARACTER }).collect();
        let texts: Vec<&str> = (0..n).map(|k| LINES[k % LINES.len()]).collect();
        self.record(id, &speakers, &texts, &speakers)
    }
}

fn finish(b: Builder, records: Vec<DialogueRecord>, refs_clip: AudioAsset) -> FilterFixture {
    let mut refs = ReferenceClips::new();
    refs.insert(CHARACTER.into(), vec![refs_clip]);
    FilterFixture {
        records,
        ledger: b.tts.ledger.clone(),
        assets: b.assets,
        refs,
    }
}

/// `n` clean four-to-six turn dialogues that pass every filter.
pub fn clean_fixture(n: usize) -> Result<FilterFixture> {
    let mut b = Builder::new(TranscriptLedger::default());
    let reference = b.clip("mira-ref", "the north wind and the sun were arguing", CHARACTER)?;
    let records = (0..n)
        .map(|i| b.clean(&format!("clean-{i}"), 4 + i % 3))
        .collect::<Result<Vec<_>>>()?;
    Ok(finish(b, records, reference))
}

/// Five records, each breaking exactly one filter, in filter order:
/// `v-pattern` repeats a speaker, `v-short` has three turns, `v-style` contains an
/// assistant phrase, `v-wer` has one mistranscribed turn, `v-sim` voices the
/// character with another speaker's voice.
pub fn violation_fixture() -> Result<FilterFixture> {
    let mut b = Builder::new(TranscriptLedger::default());
    let reference = b.clip("mira-ref", "the north wind and the sun were arguing", CHARACTER)?;
    let mut records = Vec::new();
    let pattern_speakers = [USER, USER, CHARACTER, USER];
    records.push(b.record("v-pattern", &pattern_speakers, &LINES[..4], &pattern_speakers)?);
    records.push(b.clean("v-short", 3)?);
    let style_texts = [LINES[0], "I am a helpful AI assistant, how may I help", LINES[2], LINES[3]];
    let speakers = [USER, CHARACTER, USER, CHARACTER];
    records.push(b.record("v-style", &speakers, &style_texts, &speakers)?);
    let wer = b.clean("v-wer", 4)?;
    let bad = &b.assets["v-wer-t1"];
    b.tts.ledger.insert(bad, "welcome in the swarm is humming");
    records.push(wer);
    let voices = [USER, IMPOSTOR, USER, IMPOSTOR];
    records.push(b.record("v-sim", &speakers, &LINES[..4], &voices)?);
    Ok(finish(b, records, reference))
}
