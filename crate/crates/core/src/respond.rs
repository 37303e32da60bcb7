//! Streaming response loop: text tokens as they are generated, then speech tokens
//! synthesised into audio every `chunk_tokens` tokens.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::audio::AssetSource;
use crate::config::RespondSection;
use crate::data::DataBuilder;
use crate::decode::{DecodeConfig, StopReason};
use crate::dsp::MelConfig;
use crate::error::{CoreError, Result};
use crate::frontend::{self, GroupedFrames, SpeechEncoder};
use crate::language::{self, placeholder_positions, EmbeddingSequence};
use crate::scalar::Scalar;
use crate::speech_decoder::{self, SpeechTokenSequence};
use crate::synthesis::{mel_denorm, sample_mel, Codebook, FlowConditions, FlowNet, Vocoder};
use crate::tensor::Matrix;
use crate::tokenizer::Tokenizer;
use crate::training::Checkpoint;
use crate::types::{AudioAsset, ModalityPayload, RoleProfile, Turn};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stream {
    Text,
    Speech,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum ResponseEvent {
    TextToken {
        token: u32,
        piece: String,
    },
    AudioChunk {
        index: usize,
        tokens: Vec<u32>,
        #[serde(skip)]
        audio: Option<AudioAsset>,
        samples: usize,
    },
    /// A stream hit its length limit before EOS.
    Truncated {
        stream: Stream,
    },
    Final {
        text: String,
        tokens: Vec<u32>,
        speech_tokens: Vec<u32>,
        #[serde(skip)]
        audio: Option<AudioAsset>,
    },
}

impl ResponseEvent {
    pub fn is_audio(&self) -> bool {
        matches!(self, ResponseEvent::AudioChunk { .. })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RespondRequest {
    pub profile: RoleProfile,
    pub context: Vec<Turn>,
    pub input: ModalityPayload,
    /// Audio for the input's `audio_ref` when it is not in the asset store.
    pub input_audio: Option<AudioAsset>,
}

pub trait Responder {
    fn chunk_tokens(&self) -> usize;

    /// Streams events into `sink`; the last event is always `Final`.
    fn respond(&mut self, req: &RespondRequest, sink: &mut dyn FnMut(ResponseEvent)) -> Result<()>;
}

/// Collects every event of one response.
pub fn collect_events(r: &mut dyn Responder, req: &RespondRequest) -> Result<Vec<ResponseEvent>> {
    let mut out = Vec::new();
    r.respond(req, &mut |e| out.push(e))?;
    Ok(out)
}

/// Concatenation of the streamed text pieces.
pub fn transcript(events: &[ResponseEvent]) -> String {
    events
        .iter()
        .filter_map(|e| match e {
            ResponseEvent::TextToken { piece, .. } => Some(piece.as_str()),
            _ => None,
        })
        .collect()
}

/// The trained model behind a streaming session.
pub struct RoleEngine<'a, T> {
    ckpt: &'a Checkpoint<T>,
    codebook: &'a Codebook,
    builder: DataBuilder<'a, T>,
    vocoder: Vocoder,
    pub text_decode: DecodeConfig,
    pub speech_decode: DecodeConfig,
    pub respond: RespondSection,
}

impl<'a, T: Scalar> RoleEngine<'a, T> {
    pub fn new(
        ckpt: &'a Checkpoint<T>,
        tokenizer: &'a Tokenizer,
        codebook: &'a Codebook,
        assets: &'a dyn AssetSource,
        text_decode: DecodeConfig,
        respond: RespondSection,
    ) -> Result<Self> {
        if respond.chunk_tokens == 0 {
            return Err(CoreError::Config("chunk_tokens must be positive".into()));
        }
        let model = ckpt.model;
        let encoder = SpeechEncoder::with_params(model.encoder, ckpt.params.encoder.clone())?;
        let mut vocoder = Vocoder::new(MelConfig::synthesis())?;
        vocoder.iterations = respond.vocoder_iterations;
        let mut speech_decode = text_decode;
        speech_decode.max_len = respond.max_speech_tokens;
        speech_decode.min_len = 0;
        Ok(Self {
            ckpt,
            codebook,
            builder: DataBuilder::new(model, encoder, tokenizer, assets),
            vocoder,
            text_decode,
            speech_decode,
            respond,
        })
    }

    pub fn set_chunk_tokens(&mut self, n: usize) {
        self.respond.chunk_tokens = n.max(1);
    }

    fn prompt_embeddings(&mut self, req: &RespondRequest) -> Result<EmbeddingSequence<T>> {
        let (tokens, speech) = self
            .builder
            .prompt_input(&req.profile, &req.context, &req.input, req.input_audio.as_ref())?;
        let p = &self.ckpt.params;
        let mut adapted = Vec::with_capacity(speech.len());
        for g in speech {
            let grouped = GroupedFrames {
                frames: g,
                group_size: self.ckpt.model.encoder.group_size,
            };
            adapted.push(frontend::adapt(&grouped, &p.adapter)?.embeddings);
        }
        let text = language::embed_tokens(&p.language, &tokens)?;
        language::splice(&text, &adapted, &placeholder_positions(&tokens))
    }

    fn synthesize(&self, tokens: &[u32], speaker: &[T], context: &[T], seed: u64) -> Result<AudioAsset> {
        let flow = &self.ckpt.model.flow;
        let cond = FlowConditions::from_tokens(self.codebook, tokens, flow.token_ratio, speaker.to_vec(), context.to_vec())?;
        let net = FlowNet {
            params: &self.ckpt.params.flow,
            cfg: *flow,
        };
        let x = sample_mel(&net, &cond, flow.mel_bins, flow.steps, seed)?;
        let mel: Matrix<f64> = mel_denorm(&x).cast();
        self.vocoder.vocode(&mel, seed)
    }
}

impl<T: Scalar> Responder for RoleEngine<'_, T> {
    fn chunk_tokens(&self) -> usize {
        self.respond.chunk_tokens
    }

    fn respond(&mut self, req: &RespondRequest, sink: &mut dyn FnMut(ResponseEvent)) -> Result<()> {
        let prompt = self.prompt_embeddings(req)?;
        let tokenizer = self.builder.tokenizer;
        let model = self.ckpt.model;
        let gen = language::generate_text(&prompt, &self.ckpt.params.language, &model.language, &self.text_decode, |tok, _| {
            sink(ResponseEvent::TextToken {
                token: tok,
                piece: tokenizer.decode(&[tok]),
            })
        })?;
        if gen.stop == StopReason::MaxLen {
            sink(ResponseEvent::Truncated { stream: Stream::Text });
        }
        let text = tokenizer.decode(&gen.tokens.tokens);
        let speech_wanted = self.respond.speech_output && !gen.tokens.tokens.is_empty();
        if !speech_wanted {
            sink(ResponseEvent::Final {
                text,
                tokens: gen.tokens.tokens,
                speech_tokens: Vec::new(),
                audio: None,
            });
            return Ok(());
        }
        let speaker: Vec<T> = self
            .builder
            .speaker_vector(&req.profile, None)?
            .into_iter()
            .map(T::of)
            .collect();
        let pooled = gen.states.pooled();
        let prefix = speech_decoder::project_context(&gen.states, &self.ckpt.params.projection)?;
        let chunk = self.respond.chunk_tokens;
        let seed = self.respond.seed;
        let mut pending: Vec<u32> = Vec::new();
        let mut samples: Vec<f32> = Vec::new();
        let mut index = 0;
        let mut failure: Option<CoreError> = None;
        let flush = |toks: &[u32], index: &mut usize, samples: &mut Vec<f32>, sink: &mut dyn FnMut(ResponseEvent)| -> Result<()> {
            let audio = self.synthesize(toks, &speaker, &pooled, seed.wrapping_add(*index as u64))?;
            samples.extend_from_slice(&audio.samples);
            sink(ResponseEvent::AudioChunk {
                index: *index,
                tokens: toks.to_vec(),
                samples: audio.samples.len(),
                audio: Some(audio),
            });
            *index += 1;
            Ok(())
        };
        let sgen = speech_decoder::predict_speech_tokens(
            &prefix,
            &SpeechTokenSequence { tokens: Vec::new() },
            &self.ckpt.params.speech_lm,
            &model.speech_lm,
            &self.speech_decode,
            |tok| {
                pending.push(tok);
                if pending.len() == chunk && failure.is_none() {
                    if let Err(e) = flush(&pending, &mut index, &mut samples, sink) {
                        failure = Some(e);
                    }
                    pending.clear();
                }
            },
        )?;
        if let Some(e) = failure {
            return Err(e);
        }
        if !pending.is_empty() {
            flush(&pending, &mut index, &mut samples, sink)?;
        }
        if sgen.stop == StopReason::MaxLen {
            sink(ResponseEvent::Truncated { stream: Stream::Speech });
        }
        let audio = if samples.is_empty() {
            None
        } else {
            Some(AudioAsset::new("response", samples)?)
        };
        sink(ResponseEvent::Final {
            text,
            tokens: gen.tokens.tokens,
            speech_tokens: sgen.tokens.tokens,
            audio,
        });
        Ok(())
    }
}

/// Fixed-reply responder that emits audio as soon as each chunk of placeholder
/// speech tokens is complete, with no model work in between.
pub struct StubResponder {
    pub reply: Vec<String>,
    pub speech_tokens: usize,
    pub chunk_tokens: usize,
    pub samples_per_token: usize,
}

impl Default for StubResponder {
    fn default() -> Self {
        Self {
            reply: ["Ahoy", ",", " traveller", "!"].map(String::from).to_vec(),
            speech_tokens: 60,
            chunk_tokens: 25,
            samples_per_token: 512,
        }
    }
}

impl Responder for StubResponder {
    fn chunk_tokens(&self) -> usize {
        self.chunk_tokens
    }

    fn respond(&mut self, req: &RespondRequest, sink: &mut dyn FnMut(ResponseEvent)) -> Result<()> {
        req.profile.validate()?;
        for (i, p) in self.reply.iter().enumerate() {
            sink(ResponseEvent::TextToken {
                token: 100 + i as u32,
                piece: p.clone(),
            });
        }
        let tokens: Vec<u32> = (0..self.speech_tokens as u32).map(|t| t % 7).collect();
        let mut all = Vec::new();
        for (index, c) in tokens.chunks(self.chunk_tokens.max(1)).enumerate() {
            let n = c.len() * self.samples_per_token;
            let samples: Vec<f32> = (0..n).map(|i| (i as f32 * 0.05).sin() * 0.1).collect();
            all.extend_from_slice(&samples);
            sink(ResponseEvent::AudioChunk {
                index,
                tokens: c.to_vec(),
                samples: n,
                audio: Some(AudioAsset::new(format!("stub-{index}"), samples)?),
            });
        }
        sink(ResponseEvent::Final {
            text: self.reply.concat(),
            tokens: (0..self.reply.len() as u32).map(|i| 100 + i).collect(),
            speech_tokens: tokens,
            audio: if all.is_empty() { None } else { Some(AudioAsset::new("stub", all)?) },
        });
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MachineBaseline {
    pub logical_cpus: usize,
    /// Wall time of a fixed 128×128 f64 matrix product repeated 20 times.
    pub gemm_ms: f64,
}

impl MachineBaseline {
    pub fn measure() -> Self {
        let a = Matrix::from_fn(128, 128, |r, c| ((r * 31 + c * 17) % 13) as f64 * 0.01);
        let start = Instant::now();
        let mut acc = 0.0;
        for _ in 0..20 {
            acc += a.matmul(&a).sum();
        }
        std::hint::black_box(acc);
        Self {
            logical_cpus: std::thread::available_parallelism().map_or(1, |n| n.get()),
            gemm_ms: start.elapsed().as_secs_f64() * 1e3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub median_ms: f64,
    pub trials: usize,
    pub chunk_tokens: usize,
    pub samples_ms: Vec<f64>,
    pub baseline: MachineBaseline,
}

/// Milliseconds from submission to the first audio chunk for one call.
pub fn time_to_first_audio(r: &mut dyn Responder, req: &RespondRequest) -> Result<f64> {
    let start = Instant::now();
    let mut first: Option<f64> = None;
    r.respond(req, &mut |e| {
        if first.is_none() && e.is_audio() {
            first = Some(start.elapsed().as_secs_f64() * 1e3);
        }
    })?;
    first.ok_or_else(|| CoreError::Generation("response produced no audio".into()))
}

/// One discarded warm-up call, then the median over `trials` timed calls.
pub fn measure_latency(r: &mut dyn Responder, req: &RespondRequest, trials: usize) -> Result<LatencyReport> {
    if trials < 5 {
        return Err(CoreError::validation("trials", "at least 5 trials are required"));
    }
    time_to_first_audio(r, req)?;
    let mut samples = Vec::with_capacity(trials);
    for _ in 0..trials {
        samples.push(time_to_first_audio(r, req)?);
    }
    let mut sorted = samples.clone();
    sorted.sort_by(f64::total_cmp);
    let median = if trials % 2 == 1 {
        sorted[trials / 2]
    } else {
        0.5 * (sorted[trials / 2 - 1] + sorted[trials / 2])
    };
    Ok(LatencyReport {
        median_ms: median,
        trials,
        chunk_tokens: r.chunk_tokens(),
        samples_ms: samples,
        baseline: MachineBaseline::measure(),
    })
}
