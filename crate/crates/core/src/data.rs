//! Turns dialogue records into per-stage training examples.

use std::collections::HashMap;

use crate::audio::AssetSource;
use crate::dsp::{remove_dc, MelAnalyzer, MelConfig};
use crate::error::{CoreError, Result};
use crate::frontend::{self, SpeechEncoder};
use crate::model::{self, FlowExample, ModelConfig, ModelParams, SpeechExample, TextExample};
use crate::prompt::assemble_prompt;
use crate::scalar::Scalar;
use crate::synthesis::{mel_norm, pool_frames, Codebook, FlowConditions, SpeakerEmbedder};
use crate::tensor::Matrix;
use crate::tokenizer::{Tokenizer, BOS_ID, EOS_ID};
use crate::types::{AudioAsset, DialogueRecord, ModalityPayload, RoleProfile, Turn};

/// A character response together with everything that precedes it.
#[derive(Debug, Clone, Copy)]
pub struct ResponsePair<'a> {
    pub dialogue_id: &'a str,
    pub profile: &'a RoleProfile,
    pub context: &'a [Turn],
    pub query: &'a Turn,
    pub response: &'a Turn,
}

/// Every character turn that answers another speaker. Records must alternate and
/// every character must have a profile. At most `history_turns` earlier turns are kept.
pub fn response_pairs<'a>(
    records: &'a [DialogueRecord],
    profiles: &'a [RoleProfile],
    history_turns: usize,
) -> Result<Vec<ResponsePair<'a>>> {
    let mut out = Vec::new();
    for r in records {
        r.validate()?;
        r.check_alternation()?;
        for i in 1..r.turns.len() {
            let resp = &r.turns[i];
            if !r.is_character(&resp.speaker_id) || resp.payload.text_content().is_none() {
                continue;
            }
            let profile = profiles.iter().find(|p| p.role_id == resp.speaker_id).ok_or_else(|| {
                CoreError::Data(format!("{}: no profile for character {}", r.dialogue_id, resp.speaker_id))
            })?;
            let start = (i - 1).saturating_sub(history_turns);
            out.push(ResponsePair {
                dialogue_id: &r.dialogue_id,
                profile,
                context: &r.turns[start..i - 1],
                query: &r.turns[i - 1],
                response: resp,
            });
        }
    }
    if out.is_empty() {
        return Err(CoreError::Data("corpus contains no character responses".into()));
    }
    Ok(out)
}

/// Natural-log mel spectrogram at the synthesis hop.
pub fn speech_mel(audio: &AudioAsset) -> Result<Matrix<f64>> {
    audio.validate()?;
    let a = MelAnalyzer::new(MelConfig::synthesis());
    Ok(a.log_mel(&remove_dc(&audio.samples)))
}

/// Caching front end shared by every stage's example builder.
pub struct DataBuilder<'a, T> {
    pub model: ModelConfig,
    pub tokenizer: &'a Tokenizer,
    pub assets: &'a dyn AssetSource,
    encoder: SpeechEncoder<T>,
    embedder: SpeakerEmbedder,
    grouped: HashMap<String, Matrix<T>>,
}

impl<'a, T: Scalar> DataBuilder<'a, T> {
    pub fn new(model: ModelConfig, encoder: SpeechEncoder<T>, tokenizer: &'a Tokenizer, assets: &'a dyn AssetSource) -> Self {
        Self {
            model,
            tokenizer,
            assets,
            encoder,
            embedder: SpeakerEmbedder::new(),
            grouped: HashMap::new(),
        }
    }

    pub fn encoder(&self) -> &SpeechEncoder<T> {
        &self.encoder
    }

    /// Grouped encoder frames for one clip.
    pub fn segment(&mut self, audio: &AudioAsset) -> Result<Matrix<T>> {
        if let Some(m) = self.grouped.get(&audio.asset_id) {
            return Ok(m.clone());
        }
        let enc = self.encoder.encode(audio)?;
        let g = frontend::group_frames(&enc.frames, self.model.encoder.group_size)?.frames;
        self.grouped.insert(audio.asset_id.clone(), g.clone());
        Ok(g)
    }

    /// `[BOS] + prompt` tokens and the speech segments for its placeholders.
    /// `extra` supplies clips not present in the asset source (live input).
    pub fn prompt_input(
        &mut self,
        profile: &RoleProfile,
        context: &[Turn],
        query: &ModalityPayload,
        extra: Option<&AudioAsset>,
    ) -> Result<(Vec<u32>, Vec<Matrix<T>>)> {
        let prompt = assemble_prompt(profile, context, query)?;
        let mut tokens = vec![BOS_ID];
        tokens.extend(self.tokenizer.encode(&prompt.text).tokens);
        let mut speech = Vec::with_capacity(prompt.speech_refs.len());
        for id in &prompt.speech_refs {
            let clip = match extra {
                Some(a) if &a.asset_id == id => a.clone(),
                _ => self.assets.load(id)?,
            };
            speech.push(self.segment(&clip)?);
        }
        Ok((tokens, speech))
    }

    /// Response tokens as they follow the prompt's trailing cue.
    pub fn response_tokens(&self, text: &str) -> Vec<u32> {
        self.tokenizer.encode(&format!(" {}", text.trim())).tokens
    }

    pub fn text_example(&mut self, pair: &ResponsePair<'_>) -> Result<TextExample<T>> {
        let (mut tokens, speech) = self.prompt_input(pair.profile, pair.context, &pair.query.payload, None)?;
        let response_start = tokens.len();
        let text = pair.response.payload.text_content().unwrap_or_default();
        tokens.extend(self.response_tokens(text));
        tokens.push(EOS_ID);
        Ok(TextExample {
            tokens,
            speech,
            response_start,
        })
    }

    pub fn text_examples(&mut self, pairs: &[ResponsePair<'_>]) -> Result<Vec<TextExample<T>>> {
        pairs.iter().map(|p| self.text_example(p)).collect()
    }

    /// `H` over prompt plus response text, as the speech decoder sees it at inference.
    pub fn context(&mut self, pair: &ResponsePair<'_>, params: &ModelParams<T>) -> Result<Matrix<T>> {
        let mut ex = self.text_example(pair)?;
        ex.tokens.pop();
        model::context_states(params, &self.model, &ex.tokens, &ex.speech)
    }

    fn response_audio(&self, pair: &ResponsePair<'_>) -> Result<AudioAsset> {
        let id = pair.response.payload.audio_ref().ok_or_else(|| {
            CoreError::Data(format!("{}: turn {} has no audio", pair.dialogue_id, pair.response.index))
        })?;
        self.assets.load(id)
    }

    /// Speech tokens of the response audio (synthesis mel pooled by the token ratio).
    pub fn speech_tokens(&self, pair: &ResponsePair<'_>, codebook: &Codebook) -> Result<Vec<u32>> {
        let mel = speech_mel(&self.response_audio(pair)?)?;
        let pooled = pool_frames(&mel, self.model.flow.token_ratio);
        Ok(codebook.tokenize(&pooled)?.tokens)
    }

    pub fn speech_example(
        &mut self,
        pair: &ResponsePair<'_>,
        params: &ModelParams<T>,
        codebook: &Codebook,
    ) -> Result<SpeechExample<T>> {
        Ok(SpeechExample {
            context: self.context(pair, params)?,
            targets: self.speech_tokens(pair, codebook)?,
        })
    }

    pub fn speech_examples(
        &mut self,
        pairs: &[ResponsePair<'_>],
        params: &ModelParams<T>,
        codebook: &Codebook,
    ) -> Result<Vec<SpeechExample<T>>> {
        pairs.iter().map(|p| self.speech_example(p, params, codebook)).collect()
    }

    /// Speaker embedding `v` of a character: mean over its reference clips, falling
    /// back to `fallback` when it has none.
    pub fn speaker_vector(&self, profile: &RoleProfile, fallback: Option<&AudioAsset>) -> Result<Vec<f64>> {
        let mut clips = Vec::new();
        for id in &profile.reference_audio_ids {
            clips.push(self.assets.load(id)?);
        }
        if clips.is_empty() {
            clips.extend(fallback.cloned());
        }
        if clips.is_empty() {
            return Err(CoreError::Data(format!("no reference audio for {}", profile.role_id)));
        }
        let mut acc = vec![0.0; crate::synthesis::SPEAKER_DIM];
        for c in &clips {
            for (a, v) in acc.iter_mut().zip(self.embedder.embed(c)?.vector) {
                *a += v;
            }
        }
        let n = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
        Ok(acc.into_iter().map(|v| v / n.max(1e-12)).collect())
    }

    pub fn flow_example(
        &mut self,
        pair: &ResponsePair<'_>,
        params: &ModelParams<T>,
        codebook: &Codebook,
    ) -> Result<FlowExample<T>> {
        let audio = self.response_audio(pair)?;
        let mel = speech_mel(&audio)?;
        let ratio = self.model.flow.token_ratio;
        let tokens = codebook.tokenize(&pool_frames(&mel, ratio))?.tokens;
        if tokens.is_empty() {
            return Err(CoreError::Data(format!("{}: response audio too short", pair.dialogue_id)));
        }
        let x1 = mel_norm(&mel.slice_rows(0, tokens.len() * ratio).cast::<T>());
        let speaker: Vec<T> = self.speaker_vector(pair.profile, Some(&audio))?.into_iter().map(T::of).collect();
        let h = self.context(pair, params)?;
        let cond = FlowConditions::from_tokens(codebook, &tokens, ratio, speaker, h.mean_rows().into_vec())?;
        Ok(FlowExample { x1, cond })
    }

    pub fn flow_examples(
        &mut self,
        pairs: &[ResponsePair<'_>],
        params: &ModelParams<T>,
        codebook: &Codebook,
    ) -> Result<Vec<FlowExample<T>>> {
        pairs.iter().map(|p| self.flow_example(p, params, codebook)).collect()
    }
}

/// Pooled synthesis mels of every response clip, the codebook's training data.
pub fn codebook_frames(pairs: &[ResponsePair<'_>], assets: &dyn AssetSource, ratio: usize) -> Result<Vec<Matrix<f64>>> {
    let mut out = Vec::new();
    for p in pairs {
        if let Some(id) = p.response.payload.audio_ref() {
            let mel = speech_mel(&assets.load(id)?)?;
            let pooled = pool_frames(&mel, ratio);
            if pooled.rows() > 0 {
                out.push(pooled);
            }
        }
    }
    if out.is_empty() {
        return Err(CoreError::Data("no response audio to fit a codebook on".into()));
    }
    Ok(out)
}
