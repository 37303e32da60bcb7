//! Causal language core: token embedding, speech splicing, forward pass, text loss
//! and incremental generation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::decode::{DecodeConfig, StopReason, TokenPicker};
use crate::error::{CoreError, Result};
use crate::nn::{self, KvCache, TransformerConfig};
use crate::params::{Binding, ParamSet};
use crate::scalar::Scalar;
use crate::tensor::Matrix;
use crate::tokenizer::{TextTokenSequence, BOS_ID, EOS_ID, PAD_ID, SPEECH_ID, UNK_ID};

pub const PREFIX: &str = "lm";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LanguageConfig {
    pub layers: usize,
    pub d_model: usize,
    pub heads: usize,
    pub ff_mult: usize,
    /// Text vocabulary size, including special tokens.
    pub vocab: usize,
}

impl Default for LanguageConfig {
    fn default() -> Self {
        Self {
            layers: 4,
            d_model: 256,
            heads: 4,
            ff_mult: 4,
            vocab: 2048,
        }
    }
}

impl LanguageConfig {
    pub fn transformer(&self) -> TransformerConfig {
        TransformerConfig {
            layers: self.layers,
            d_model: self.d_model,
            heads: self.heads,
            ff_mult: self.ff_mult,
        }
    }
}

pub fn init_language<T: Scalar>(cfg: &LanguageConfig, seed: u64) -> ParamSet<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ps = ParamSet::new();
    ps.insert("lm.embed", Matrix::randn(cfg.vocab, cfg.d_model, 1.0, &mut rng));
    nn::init_transformer(&mut ps, "lm.tf", &cfg.transformer(), &mut rng);
    nn::init_linear(&mut ps, "lm.head", cfg.d_model, cfg.vocab, 1.0, &mut rng);
    ps
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Text,
    Speech,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSequence<T> {
    pub embeddings: Matrix<T>,
    pub modality_mask: Vec<Modality>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContextRepresentations<T> {
    pub states: Matrix<T>,
}

impl<T: Scalar> ContextRepresentations<T> {
    pub fn pooled(&self) -> Vec<T> {
        self.states.mean_rows().into_vec()
    }
}

/// Where each row of a spliced sequence comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    Token(usize),
    Speech { segment: usize, row: usize },
}

/// Row layout after replacing each placeholder with its speech segment.
pub fn splice_layout(placeholders: &[usize], n_text: usize, segment_lens: &[usize]) -> Result<Vec<Slot>> {
    if placeholders.len() != segment_lens.len() {
        return Err(CoreError::Shape(format!(
            "{} placeholders for {} speech segments",
            placeholders.len(),
            segment_lens.len()
        )));
    }
    if placeholders.windows(2).any(|w| w[1] <= w[0]) || placeholders.last().is_some_and(|&p| p >= n_text) {
        return Err(CoreError::validation("placeholder_positions", "must be increasing and in range"));
    }
    let mut slots = Vec::with_capacity(n_text + segment_lens.iter().sum::<usize>());
    let mut seg = 0;
    for i in 0..n_text {
        if seg < placeholders.len() && placeholders[seg] == i {
            slots.extend((0..segment_lens[seg]).map(|row| Slot::Speech { segment: seg, row }));
            seg += 1;
        } else {
            slots.push(Slot::Token(i));
        }
    }
    Ok(slots)
}

pub fn placeholder_positions(tokens: &[u32]) -> Vec<usize> {
    tokens
        .iter()
        .enumerate()
        .filter_map(|(i, &t)| (t == SPEECH_ID).then_some(i))
        .collect()
}

fn check_tokens(tokens: &[u32], vocab: usize) -> Result<()> {
    match tokens.iter().find(|&&t| t as usize >= vocab) {
        Some(&t) => Err(CoreError::TokenRange {
            id: t as usize,
            vocab,
        }),
        None => Ok(()),
    }
}

pub fn embed_tokens<T: Scalar>(ps: &ParamSet<T>, tokens: &[u32]) -> Result<Matrix<T>> {
    let table = ps.get("lm.embed")?;
    check_tokens(tokens, table.rows())?;
    let d = table.cols();
    let mut out = Matrix::zeros(tokens.len(), d);
    for (r, &t) in tokens.iter().enumerate() {
        out.row_mut(r).copy_from_slice(table.row(t as usize));
    }
    Ok(out)
}

/// Replaces the row at each placeholder position with the rows of its speech segment.
pub fn splice<T: Scalar>(
    text_embeddings: &Matrix<T>,
    speech: &[Matrix<T>],
    placeholder_positions: &[usize],
) -> Result<EmbeddingSequence<T>> {
    let lens: Vec<usize> = speech.iter().map(Matrix::rows).collect();
    let slots = splice_layout(placeholder_positions, text_embeddings.rows(), &lens)?;
    let d = text_embeddings.cols();
    if let Some(s) = speech.iter().find(|s| s.cols() != d) {
        return Err(CoreError::Shape(format!("speech width {} != text width {d}", s.cols())));
    }
    let mut emb = Matrix::zeros(slots.len(), d);
    let mut mask = Vec::with_capacity(slots.len());
    for (r, slot) in slots.iter().enumerate() {
        match *slot {
            Slot::Token(i) => {
                emb.row_mut(r).copy_from_slice(text_embeddings.row(i));
                mask.push(Modality::Text);
            }
            Slot::Speech { segment, row } => {
                emb.row_mut(r).copy_from_slice(speech[segment].row(row));
                mask.push(Modality::Speech);
            }
        }
    }
    Ok(EmbeddingSequence {
        embeddings: emb,
        modality_mask: mask,
    })
}

/// Tape counterpart of [`embed_tokens`] + [`splice`]: gathers token rows from the bound
/// embedding table and interleaves the given speech segment variables.
pub fn splice_tape<T: Scalar>(t: &mut Tape<T>, b: &Binding, tokens: &[u32], speech: &[Var]) -> Result<Var> {
    let lens: Vec<usize> = speech.iter().map(|&v| t.shape(v).0).collect();
    let places = placeholder_positions(tokens);
    let slots = splice_layout(&places, tokens.len(), &lens)?;
    let table = b.var("lm.embed");
    let mut parts = Vec::new();
    let mut run: Vec<usize> = Vec::new();
    let mut seg_done = usize::MAX;
    for slot in slots {
        match slot {
            Slot::Token(i) => run.push(tokens[i] as usize),
            Slot::Speech { segment, .. } => {
                if !run.is_empty() {
                    parts.push(t.gather_rows(table, &run));
                    run.clear();
                }
                if seg_done != segment {
                    parts.push(speech[segment]);
                    seg_done = segment;
                }
            }
        }
    }
    if !run.is_empty() {
        parts.push(t.gather_rows(table, &run));
    }
    Ok(if parts.len() == 1 { parts[0] } else { t.concat_rows(&parts) })
}

/// Causal forward on the tape; returns `(logits, H)`.
pub fn forward_tape<T: Scalar>(t: &mut Tape<T>, b: &Binding, x: Var, cfg: &LanguageConfig) -> (Var, Var) {
    let (rows, d) = t.shape(x);
    let pos = t.constant(nn::sinusoid_table(rows, d));
    let x = t.add(x, pos);
    let h = nn::transformer(t, b, x, "lm.tf", &cfg.transformer(), true);
    let logits = nn::linear(t, b, h, "lm.head");
    (logits, h)
}

pub fn forward<T: Scalar>(
    seq: &EmbeddingSequence<T>,
    ps: &ParamSet<T>,
    cfg: &LanguageConfig,
) -> Result<(Matrix<T>, ContextRepresentations<T>)> {
    if seq.embeddings.rows() == 0 {
        return Err(CoreError::validation("sequence", "must contain at least one row"));
    }
    if seq.embeddings.cols() != cfg.d_model {
        return Err(CoreError::Shape(format!(
            "embedding width {} != d_model {}",
            seq.embeddings.cols(),
            cfg.d_model
        )));
    }
    if !seq.embeddings.is_finite() {
        return Err(CoreError::NonFinite("language core input".into()));
    }
    let mut t = Tape::new();
    let b = ps.bind(&mut t, false);
    let x = t.constant(seq.embeddings.clone());
    let (logits, h) = forward_tape(&mut t, &b, x, cfg);
    Ok((
        t.value(logits).clone(),
        ContextRepresentations {
            states: t.value(h).clone(),
        },
    ))
}

/// Row `t` is scored against `targets[t + 1]` wherever `loss_mask[t + 1]` is set.
pub fn shifted_targets(targets: &[u32], loss_mask: &[bool]) -> Result<Vec<Option<usize>>> {
    if targets.len() != loss_mask.len() {
        return Err(CoreError::Shape(format!(
            "{} targets vs {} mask entries",
            targets.len(),
            loss_mask.len()
        )));
    }
    let n = targets.len();
    let out: Vec<Option<usize>> = (0..n)
        .map(|t| (t + 1 < n && loss_mask[t + 1]).then(|| targets[t + 1] as usize))
        .collect();
    if out.iter().all(Option::is_none) {
        return Err(CoreError::validation("loss_mask", "no supervised positions"));
    }
    Ok(out)
}

pub fn language_loss_tape<T: Scalar>(t: &mut Tape<T>, logits: Var, targets: &[u32], loss_mask: &[bool]) -> Result<Var> {
    let (rows, v) = t.shape(logits);
    if rows != targets.len() {
        return Err(CoreError::Shape(format!("{rows} logit rows vs {} targets", targets.len())));
    }
    let tg = shifted_targets(targets, loss_mask)?;
    if let Some(&bad) = tg.iter().flatten().find(|&&id| id >= v) {
        return Err(CoreError::TokenRange { id: bad, vocab: v });
    }
    Ok(t.cross_entropy(logits, &tg))
}

/// Mean next-token negative log-likelihood over the masked response positions.
pub fn language_loss<T: Scalar>(logits: &Matrix<T>, targets: &[u32], loss_mask: &[bool]) -> Result<T> {
    let mut t = Tape::new();
    let l = t.constant(logits.clone());
    let loss = language_loss_tape(&mut t, l, targets, loss_mask)?;
    Ok(t.scalar(loss))
}

/// Single-owner incremental decoding state.
pub struct LmSession<'a, T> {
    ps: &'a ParamSet<T>,
    cfg: LanguageConfig,
    cache: KvCache<T>,
}

impl<'a, T: Scalar> LmSession<'a, T> {
    pub fn new(ps: &'a ParamSet<T>, cfg: &LanguageConfig) -> Self {
        Self {
            ps,
            cfg: *cfg,
            cache: KvCache::new(&cfg.transformer()),
        }
    }

    pub fn len(&self) -> usize {
        self.cache.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cache.is_empty()
    }

    /// Consumes one embedding row; returns `(logits, state)` for that position.
    pub fn feed(&mut self, row: &[T]) -> Result<(Vec<T>, Vec<T>)> {
        let pos = nn::sinusoid_row::<T>(self.cache.len(), self.cfg.d_model);
        let x: Vec<T> = row.iter().zip(&pos).map(|(&a, &p)| a + p).collect();
        let h = self.cache.step(self.ps, "lm.tf", &self.cfg.transformer(), &x)?;
        let w = self.ps.get("lm.head.w")?;
        let bias = self.ps.get("lm.head.b")?;
        let mut logits = h.matmul(w);
        logits.add_assign(bias);
        Ok((logits.into_vec(), h.into_vec()))
    }

    pub fn feed_token(&mut self, token: u32) -> Result<(Vec<T>, Vec<T>)> {
        let table = self.ps.get("lm.embed")?;
        check_tokens(&[token], table.rows())?;
        let row = table.row(token as usize).to_vec();
        self.feed(&row)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TextGeneration<T> {
    /// Generated tokens, EOS excluded.
    pub tokens: TextTokenSequence,
    /// States for the prompt rows followed by one row per generated token.
    pub states: ContextRepresentations<T>,
    pub stop: StopReason,
}

/// Greedy or sampled continuation. `on_token` receives each token together with
/// the state row of the position that produced it.
pub fn generate_text<T: Scalar>(
    prompt: &EmbeddingSequence<T>,
    ps: &ParamSet<T>,
    cfg: &LanguageConfig,
    decode: &DecodeConfig,
    mut on_token: impl FnMut(u32, &[T]),
) -> Result<TextGeneration<T>> {
    decode.validate()?;
    if prompt.embeddings.rows() == 0 {
        return Err(CoreError::validation("prompt", "must contain at least one row"));
    }
    let mut session = LmSession::new(ps, cfg);
    let d = cfg.d_model;
    let mut states: Vec<T> = Vec::new();
    let mut last = (Vec::new(), Vec::new());
    for r in 0..prompt.embeddings.rows() {
        last = session.feed(prompt.embeddings.row(r))?;
        states.extend_from_slice(&last.1);
    }
    let mut picker = TokenPicker::new(*decode);
    let never = [PAD_ID as usize, UNK_ID as usize, BOS_ID as usize, SPEECH_ID as usize];
    let mut tokens = Vec::new();
    let mut stop = StopReason::MaxLen;
    while tokens.len() < decode.max_len {
        let mut banned = never.to_vec();
        if tokens.len() < decode.min_len {
            banned.push(EOS_ID as usize);
        }
        let tok = picker.pick(&last.0, &banned)?;
        if tok == EOS_ID {
            stop = StopReason::Eos;
            break;
        }
        on_token(tok, &last.1);
        tokens.push(tok);
        last = session.feed_token(tok)?;
        states.extend_from_slice(&last.1);
    }
    let rows = states.len() / d;
    Ok(TextGeneration {
        tokens: TextTokenSequence { tokens },
        states: ContextRepresentations {
            states: Matrix::from_vec(rows, d, states)?,
        },
        stop,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> LanguageConfig {
        LanguageConfig {
            layers: 2,
            d_model: 16,
            heads: 2,
            ff_mult: 2,
            vocab: 24,
        }
    }

    #[test]
    fn splice_counts_and_mask() {
        let text = Matrix::from_fn(4, 3, |r, _| r as f64);
        let sp = Matrix::filled(3, 3, 9.0);
        let out = splice(&text, &[sp], &[1]).unwrap();
        assert_eq!(out.embeddings.rows(), 4 - 1 + 3);
        assert_eq!(
            out.modality_mask,
            [Modality::Text, Modality::Speech, Modality::Speech, Modality::Speech, Modality::Text, Modality::Text]
        );
        assert!(splice(&text, &[], &[1]).is_err());
        let plain = splice(&text, &[], &[]).unwrap();
        assert_eq!(plain.embeddings, text);
    }

    #[test]
    fn uniform_logits_give_log_vocab() {
        let logits = Matrix::<f64>::zeros(5, 64);
        let loss = language_loss(&logits, &[0, 1, 2, 3, 4], &[false, false, true, true, true]).unwrap();
        assert!((loss - 64f64.ln()).abs() < 1e-6);
        assert!(language_loss(&logits, &[0, 1, 2, 3, 4], &[true, false, false, false, false]).is_err());
    }

    #[test]
    fn generation_states_match_full_forward() {
        let cfg = toy();
        let ps: ParamSet<f64> = init_language(&cfg, 3);
        let prompt_tokens = [BOS_ID, 9, 10, 11];
        let emb = embed_tokens(&ps, &prompt_tokens).unwrap();
        let seq = EmbeddingSequence {
            embeddings: emb,
            modality_mask: vec![Modality::Text; 4],
        };
        let (_, h) = forward(&seq, &ps, &cfg).unwrap();
        let mut seen = 0;
        let gen = generate_text(&seq, &ps, &cfg, &DecodeConfig::greedy(5), |_, _| seen += 1).unwrap();
        assert_eq!(seen, gen.tokens.tokens.len());
        assert_eq!(gen.states.states.rows(), 4 + gen.tokens.tokens.len());
        let prompt_rows = gen.states.states.slice_rows(0, 4);
        assert!(prompt_rows.max_abs_diff(&h.states) < 1e-9);
        let again = generate_text(&seq, &ps, &cfg, &DecodeConfig::greedy(5), |_, _| {}).unwrap();
        assert_eq!(again.tokens, gen.tokens);
    }
}
