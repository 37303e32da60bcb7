//! Role-context guided speech token prediction.
//!
//! The context states `H` are projected by φ into a continuous prefix that precedes
//! the speech-token embeddings of a small causal LM. Sequence layout:
//! `[φ(H) rows | BOS | o_0 .. o_{n-1}]`; row `prefix_len + i` predicts `o_i`
//! (and row `prefix_len + n` predicts EOS during training).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::decode::{DecodeConfig, StopReason, TokenPicker};
use crate::error::{CoreError, Result};
use crate::language::ContextRepresentations;
use crate::nn::{self, KvCache, TransformerConfig};
use crate::params::{Binding, ParamSet};
use crate::scalar::Scalar;
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeechLmConfig {
    pub layers: usize,
    pub d_model: usize,
    pub heads: usize,
    pub ff_mult: usize,
    /// Codebook size; BOS and EOS take the two ids after it.
    pub vocab: usize,
    /// Width of the language-core states fed through φ.
    pub context_dim: usize,
}

impl Default for SpeechLmConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            d_model: 192,
            heads: 4,
            ff_mult: 4,
            vocab: 256,
            context_dim: 256,
        }
    }
}

impl SpeechLmConfig {
    pub fn transformer(&self) -> TransformerConfig {
        TransformerConfig {
            layers: self.layers,
            d_model: self.d_model,
            heads: self.heads,
            ff_mult: self.ff_mult,
        }
    }

    pub fn bos(&self) -> u32 {
        self.vocab as u32
    }

    pub fn eos(&self) -> u32 {
        self.vocab as u32 + 1
    }

    /// Output width of the head (codebook ids plus BOS and EOS).
    pub fn head_width(&self) -> usize {
        self.vocab + 2
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpeechTokenSequence {
    pub tokens: Vec<u32>,
}

impl SpeechTokenSequence {
    pub fn validate(&self, vocab: usize) -> Result<()> {
        match self.tokens.iter().find(|&&t| t as usize >= vocab) {
            Some(&t) => Err(CoreError::TokenRange {
                id: t as usize,
                vocab,
            }),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditioningPrefix<T> {
    pub rows: Matrix<T>,
}

/// φ parameters (`proj.*`).
pub fn init_projection<T: Scalar>(cfg: &SpeechLmConfig, seed: u64) -> ParamSet<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ps = ParamSet::new();
    nn::init_linear(&mut ps, "proj", cfg.context_dim, cfg.d_model, 1.0, &mut rng);
    ps
}

/// Speech LM parameters (`slm.*`).
pub fn init_speech_lm<T: Scalar>(cfg: &SpeechLmConfig, seed: u64) -> ParamSet<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ps = ParamSet::new();
    ps.insert("slm.embed", Matrix::randn(cfg.head_width(), cfg.d_model, 1.0, &mut rng));
    nn::init_transformer(&mut ps, "slm.tf", &cfg.transformer(), &mut rng);
    nn::init_linear(&mut ps, "slm.head", cfg.d_model, cfg.head_width(), 1.0, &mut rng);
    ps
}

pub fn project_context<T: Scalar>(h: &ContextRepresentations<T>, proj: &ParamSet<T>) -> Result<ConditioningPrefix<T>> {
    let w = proj.get("proj.w")?;
    if h.states.cols() != w.rows() {
        return Err(CoreError::Shape(format!(
            "projection expects width {}, got {}",
            w.rows(),
            h.states.cols()
        )));
    }
    if !h.states.is_finite() {
        return Err(CoreError::NonFinite("context representations".into()));
    }
    let mut rows = h.states.matmul(w);
    let b = proj.get("proj.b")?;
    for r in 0..rows.rows() {
        for (v, &bv) in rows.row_mut(r).iter_mut().zip(b.as_slice()) {
            *v += bv;
        }
    }
    Ok(ConditioningPrefix { rows })
}

/// Teacher-forced logits on the tape for `[prefix | BOS | tokens]`.
pub fn speech_lm_tape<T: Scalar>(
    t: &mut Tape<T>,
    b: &Binding,
    prefix: Var,
    tokens: &[u32],
    cfg: &SpeechLmConfig,
) -> Var {
    let mut ids = Vec::with_capacity(tokens.len() + 1);
    ids.push(cfg.bos() as usize);
    ids.extend(tokens.iter().map(|&v| v as usize));
    let emb = t.gather_rows(b.var("slm.embed"), &ids);
    let x = t.concat_rows(&[prefix, emb]);
    let (rows, d) = t.shape(x);
    let pos = t.constant(nn::sinusoid_table(rows, d));
    let x = t.add(x, pos);
    let h = nn::transformer(t, b, x, "slm.tf", &cfg.transformer(), true);
    nn::linear(t, b, h, "slm.head")
}

/// φ on the tape.
pub fn project_tape<T: Scalar>(t: &mut Tape<T>, b: &Binding, h: Var) -> Var {
    nn::linear(t, b, h, "proj")
}

pub fn speech_loss_tape<T: Scalar>(t: &mut Tape<T>, logits: Var, prefix_len: usize, targets: &[u32]) -> Result<Var> {
    if targets.is_empty() {
        return Err(CoreError::validation("targets", "must not be empty"));
    }
    let (rows, v) = t.shape(logits);
    if prefix_len + targets.len() > rows {
        return Err(CoreError::Shape(format!(
            "{rows} logit rows cannot hold prefix {prefix_len} + {} targets",
            targets.len()
        )));
    }
    let mut tg = vec![None; rows];
    for (i, &id) in targets.iter().enumerate() {
        if id as usize >= v {
            return Err(CoreError::TokenRange { id: id as usize, vocab: v });
        }
        tg[prefix_len + i] = Some(id as usize);
    }
    Ok(t.cross_entropy(logits, &tg))
}

/// Mean negative log-likelihood over token positions; prefix rows are ignored.
pub fn speech_loss<T: Scalar>(logits: &Matrix<T>, prefix_len: usize, targets: &[u32]) -> Result<T> {
    let mut t = Tape::new();
    let l = t.constant(logits.clone());
    let loss = speech_loss_tape(&mut t, l, prefix_len, targets)?;
    Ok(t.scalar(loss))
}

/// Teacher-forced logits without recording gradients.
pub fn speech_logits<T: Scalar>(
    prefix: &ConditioningPrefix<T>,
    tokens: &[u32],
    slm: &ParamSet<T>,
    cfg: &SpeechLmConfig,
) -> Result<Matrix<T>> {
    if prefix.rows.rows() == 0 {
        return Err(CoreError::validation("prefix", "must not be empty"));
    }
    SpeechTokenSequence { tokens: tokens.to_vec() }.validate(cfg.vocab)?;
    let mut t = Tape::new();
    let b = slm.bind(&mut t, false);
    let p = t.constant(prefix.rows.clone());
    let logits = speech_lm_tape(&mut t, &b, p, tokens, cfg);
    Ok(t.value(logits).clone())
}

struct SlmSession<'a, T> {
    ps: &'a ParamSet<T>,
    cfg: SpeechLmConfig,
    cache: KvCache<T>,
}

impl<T: Scalar> SlmSession<'_, T> {
    fn feed(&mut self, row: &[T]) -> Result<Vec<T>> {
        let pos = nn::sinusoid_row::<T>(self.cache.len(), self.cfg.d_model);
        let x: Vec<T> = row.iter().zip(&pos).map(|(&a, &p)| a + p).collect();
        let h = self.cache.step(self.ps, "slm.tf", &self.cfg.transformer(), &x)?;
        let mut logits = h.matmul(self.ps.get("slm.head.w")?);
        logits.add_assign(self.ps.get("slm.head.b")?);
        Ok(logits.into_vec())
    }

    fn feed_token(&mut self, id: u32) -> Result<Vec<T>> {
        let row = self.ps.get("slm.embed")?.row(id as usize).to_vec();
        self.feed(&row)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpeechGeneration {
    pub tokens: SpeechTokenSequence,
    pub stop: StopReason,
}

/// Continues `prev` autoregressively; `on_token` sees each new token as it is chosen.
pub fn predict_speech_tokens<T: Scalar>(
    prefix: &ConditioningPrefix<T>,
    prev: &SpeechTokenSequence,
    slm: &ParamSet<T>,
    cfg: &SpeechLmConfig,
    decode: &DecodeConfig,
    mut on_token: impl FnMut(u32),
) -> Result<SpeechGeneration> {
    decode.validate()?;
    if prefix.rows.rows() == 0 {
        return Err(CoreError::validation("prefix", "must not be empty"));
    }
    if prefix.rows.cols() != cfg.d_model {
        return Err(CoreError::Shape(format!(
            "prefix width {} != speech LM width {}",
            prefix.rows.cols(),
            cfg.d_model
        )));
    }
    prev.validate(cfg.vocab)?;
    let mut s = SlmSession {
        ps: slm,
        cfg: *cfg,
        cache: KvCache::new(&cfg.transformer()),
    };
    for r in 0..prefix.rows.rows() {
        s.feed(prefix.rows.row(r))?;
    }
    let mut logits = s.feed_token(cfg.bos())?;
    for &p in &prev.tokens {
        logits = s.feed_token(p)?;
    }
    let mut picker = TokenPicker::new(*decode);
    let mut out = Vec::new();
    let mut stop = StopReason::MaxLen;
    while out.len() < decode.max_len {
        let mut banned = vec![cfg.bos() as usize];
        if out.len() < decode.min_len {
            banned.push(cfg.eos() as usize);
        }
        let tok = picker.pick(&logits, &banned)?;
        if tok == cfg.eos() {
            stop = StopReason::Eos;
            break;
        }
        on_token(tok);
        out.push(tok);
        if out.len() < decode.max_len {
            logits = s.feed_token(tok)?;
        }
    }
    Ok(SpeechGeneration {
        tokens: SpeechTokenSequence { tokens: out },
        stop,
    })
}

/// Fraction of n-grams that repeat an earlier n-gram of the same sequence.
pub fn repetition_rate(tokens: &[u32], n: usize) -> Result<f64> {
    if n == 0 {
        return Err(CoreError::validation("n", "must be positive"));
    }
    if tokens.len() < n {
        return Err(CoreError::validation("tokens", format!("length {} < n = {n}", tokens.len())));
    }
    let grams: Vec<&[u32]> = tokens.windows(n).collect();
    let mut seen = std::collections::HashSet::new();
    let dups = grams.iter().filter(|g| !seen.insert(**g)).count();
    Ok(dups as f64 / grams.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> SpeechLmConfig {
        SpeechLmConfig {
            layers: 2,
            d_model: 12,
            heads: 2,
            ff_mult: 2,
            vocab: 10,
            context_dim: 8,
        }
    }

    #[test]
    fn repetition_examples() {
        assert_eq!(repetition_rate(&[7, 7, 7, 7], 1).unwrap(), 0.75);
        assert_eq!(repetition_rate(&[1, 2, 3, 4], 2).unwrap(), 0.0);
        assert_eq!(repetition_rate(&[1, 2, 1, 2, 3], 2).unwrap(), 0.25);
        assert!(repetition_rate(&[1], 2).is_err());
    }

    #[test]
    fn zero_context_zero_prefix() {
        let cfg = toy();
        let mut proj: ParamSet<f64> = init_projection(&cfg, 1);
        proj.get_mut("proj.b").unwrap().scale_assign(0.0);
        let h = ContextRepresentations {
            states: Matrix::zeros(17, 8),
        };
        let p = project_context(&h, &proj).unwrap();
        assert_eq!(p.rows.shape(), (17, 12));
        assert_eq!(p.rows.sum_squares(), 0.0);
    }

    #[test]
    fn cached_decoding_agrees_with_teacher_forcing() {
        let cfg = toy();
        let slm: ParamSet<f64> = init_speech_lm(&cfg, 2);
        let prefix = ConditioningPrefix {
            rows: Matrix::from_fn(3, 12, |r, c| ((r * 7 + c) as f64 * 0.3).sin()),
        };
        let gen = predict_speech_tokens(
            &prefix,
            &SpeechTokenSequence { tokens: vec![] },
            &slm,
            &cfg,
            &DecodeConfig::greedy(6),
            |_| {},
        )
        .unwrap();
        let logits = speech_logits(&prefix, &gen.tokens.tokens, &slm, &cfg).unwrap();
        for (i, &tok) in gen.tokens.tokens.iter().enumerate() {
            let row = logits.row(3 + i);
            let best = (0..cfg.vocab + 2)
                .filter(|&j| j != cfg.bos() as usize)
                .max_by(|&a, &b| row[a].partial_cmp(&row[b]).unwrap().then(b.cmp(&a)))
                .unwrap();
            assert_eq!(best as u32, tok);
        }
        assert!(predict_speech_tokens(
            &ConditioningPrefix { rows: Matrix::zeros(0, 12) },
            &SpeechTokenSequence { tokens: vec![] },
            &slm,
            &cfg,
            &DecodeConfig::greedy(2),
            |_| {},
        )
        .is_err());
    }
}
