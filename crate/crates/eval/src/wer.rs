//! Corpus-level error rates pooled over utterances.

use rolespeak_core::types::{AudioAsset, Language};
use rolespeak_forge::clients::AsrClient;
use rolespeak_forge::filters::{edit_distance, wer_tokens};
use serde::{Deserialize, Serialize};

use crate::error::{EvalError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WerReport {
    pub language: Language,
    pub utterances: usize,
    pub edits: usize,
    pub reference_tokens: usize,
    /// 100 × total edits / total reference tokens.
    pub pooled: f64,
    /// Mean of per-utterance rates, for comparison only.
    pub utterance_mean: f64,
}

impl WerReport {
    /// "WER" for word tokens, "CER" for character tokens.
    pub fn metric(&self) -> &'static str {
        match self.language {
            Language::En => "WER",
            Language::Zh => "CER",
        }
    }
}

/// Pooled error rate of `(reference, hypothesis)` pairs.
pub fn eval_asr_wer<R: AsRef<str>, H: AsRef<str>>(pairs: &[(R, H)], lang: Language) -> Result<WerReport> {
    if pairs.is_empty() {
        return Err(EvalError::Input("no utterances".into()));
    }
    let (mut edits, mut total, mut rate_sum) = (0, 0, 0.0);
    for (i, (r, h)) in pairs.iter().enumerate() {
        let rt = wer_tokens(r.as_ref(), lang);
        if rt.is_empty() {
            return Err(EvalError::Input(format!("utterance {i} has an empty reference")));
        }
        let e = edit_distance(&rt, &wer_tokens(h.as_ref(), lang));
        edits += e;
        total += rt.len();
        rate_sum += 100.0 * e as f64 / rt.len() as f64;
    }
    Ok(WerReport {
        language: lang,
        utterances: pairs.len(),
        edits,
        reference_tokens: total,
        pooled: 100.0 * edits as f64 / total as f64,
        utterance_mean: rate_sum / pairs.len() as f64,
    })
}

/// Transcribes synthesized clips and scores them against the texts they voice.
pub fn eval_tts_wer(audio: &[AudioAsset], texts: &[String], asr: &dyn AsrClient, lang: Language) -> Result<WerReport> {
    if audio.len() != texts.len() {
        return Err(EvalError::Input(format!("{} clips for {} texts", audio.len(), texts.len())));
    }
    let pairs = audio
        .iter()
        .zip(texts)
        .map(|(a, t)| Ok((t.clone(), asr.transcribe(a)?)))
        .collect::<Result<Vec<_>>>()?;
    eval_asr_wer(&pairs, lang)
}
