//! Whole-model configuration, parameter groups and the per-example training losses.

use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::error::{CoreError, Result};
use crate::frontend::{self, AdapterConfig, EncoderConfig, SpeechEncoder};
use crate::language::{self, LanguageConfig, Modality};
use crate::params::{Binding, ParamSet};
use crate::scalar::Scalar;
use crate::speech_decoder::{self, SpeechLmConfig};
use crate::synthesis::flow::{self, FlowConditions, FlowConfig};
use crate::synthesis::SPEAKER_DIM;
use crate::tensor::Matrix;
use crate::tokenizer::PAD_ID;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub seed: u64,
    pub encoder: EncoderConfig,
    pub adapter_hidden: usize,
    pub language: LanguageConfig,
    pub speech_lm: SpeechLmConfig,
    pub flow: FlowConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            seed: 17,
            encoder: EncoderConfig::default(),
            adapter_hidden: 256,
            language: LanguageConfig::default(),
            speech_lm: SpeechLmConfig::default(),
            flow: FlowConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn adapter(&self) -> AdapterConfig {
        AdapterConfig {
            input_dim: self.encoder.group_size * self.encoder.d_enc,
            hidden: self.adapter_hidden,
            output_dim: self.language.d_model,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let l = &self.language;
        if l.heads == 0 || !l.d_model.is_multiple_of(l.heads) {
            return Err(CoreError::Config("language d_model must be a multiple of heads".into()));
        }
        let s = &self.speech_lm;
        if s.heads == 0 || !s.d_model.is_multiple_of(s.heads) {
            return Err(CoreError::Config("speech_lm d_model must be a multiple of heads".into()));
        }
        if s.context_dim != l.d_model {
            return Err(CoreError::Config(format!(
                "speech_lm.context_dim {} must equal language.d_model {}",
                s.context_dim, l.d_model
            )));
        }
        if self.flow.context_dim != l.d_model {
            return Err(CoreError::Config("flow.context_dim must equal language.d_model".into()));
        }
        if self.flow.speaker_dim != SPEAKER_DIM {
            return Err(CoreError::Config(format!("flow.speaker_dim must be {SPEAKER_DIM}")));
        }
        if self.encoder.group_size == 0 {
            return Err(CoreError::Config("encoder.group_size must be positive".into()));
        }
        if s.vocab < 2 {
            return Err(CoreError::Config("speech_lm.vocab must be at least 2".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Module {
    Encoder,
    Adapter,
    Language,
    Projection,
    SpeechLm,
    Flow,
}

impl Module {
    pub const ALL: [Module; 6] = [
        Module::Encoder,
        Module::Adapter,
        Module::Language,
        Module::Projection,
        Module::SpeechLm,
        Module::Flow,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Module::Encoder => "encoder",
            Module::Adapter => "adapter",
            Module::Language => "language",
            Module::Projection => "projection",
            Module::SpeechLm => "speech_lm",
            Module::Flow => "flow",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub encoder: ParamSet<T>,
    pub adapter: ParamSet<T>,
    pub language: ParamSet<T>,
    pub projection: ParamSet<T>,
    pub speech_lm: ParamSet<T>,
    pub flow: ParamSet<T>,
}

impl<T: Scalar> ModelParams<T> {
    pub fn init(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let s = cfg.seed;
        Ok(Self {
            encoder: SpeechEncoder::<T>::new(cfg.encoder)?.params().clone(),
            adapter: frontend::init_adapter(&cfg.adapter(), s.wrapping_add(1)),
            language: language::init_language(&cfg.language, s.wrapping_add(2)),
            projection: speech_decoder::init_projection(&cfg.speech_lm, s.wrapping_add(3)),
            speech_lm: speech_decoder::init_speech_lm(&cfg.speech_lm, s.wrapping_add(4)),
            flow: flow::init_flow(&cfg.flow, s.wrapping_add(5)),
        })
    }

    pub fn get(&self, m: Module) -> &ParamSet<T> {
        match m {
            Module::Encoder => &self.encoder,
            Module::Adapter => &self.adapter,
            Module::Language => &self.language,
            Module::Projection => &self.projection,
            Module::SpeechLm => &self.speech_lm,
            Module::Flow => &self.flow,
        }
    }

    pub fn get_mut(&mut self, m: Module) -> &mut ParamSet<T> {
        match m {
            Module::Encoder => &mut self.encoder,
            Module::Adapter => &mut self.adapter,
            Module::Language => &mut self.language,
            Module::Projection => &mut self.projection,
            Module::SpeechLm => &mut self.speech_lm,
            Module::Flow => &mut self.flow,
        }
    }

    pub fn hashes(&self) -> Vec<(Module, String)> {
        Module::ALL.iter().map(|&m| (m, self.get(m).content_hash())).collect()
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams {
            encoder: self.encoder.cast(),
            adapter: self.adapter.cast(),
            language: self.language.cast(),
            projection: self.projection.cast(),
            speech_lm: self.speech_lm.cast(),
            flow: self.flow.cast(),
        }
    }

    /// Binds the listed modules onto one tape.
    pub fn bind(&self, tape: &mut Tape<T>, modules: &[(Module, bool)]) -> Binding {
        let mut b = Binding::default();
        for &(m, trainable) in modules {
            b.extend(self.get(m).bind(tape, trainable));
        }
        b
    }
}

/// One stage-1 example: prompt tokens followed by the response and EOS.
#[derive(Debug, Clone, PartialEq)]
pub struct TextExample<T> {
    pub tokens: Vec<u32>,
    /// Grouped encoder frames, one matrix per placeholder in `tokens`.
    pub speech: Vec<Matrix<T>>,
    /// Index in `tokens` of the first response token.
    pub response_start: usize,
}

impl<T: Scalar> TextExample<T> {
    /// Row-aligned targets and loss mask for the spliced sequence.
    pub fn targets(&self) -> Result<(Vec<u32>, Vec<bool>)> {
        let lens: Vec<usize> = self.speech.iter().map(Matrix::rows).collect();
        let slots = language::splice_layout(&language::placeholder_positions(&self.tokens), self.tokens.len(), &lens)?;
        let mut targets = Vec::with_capacity(slots.len());
        let mut mask = Vec::with_capacity(slots.len());
        for s in slots {
            match s {
                language::Slot::Token(i) => {
                    targets.push(self.tokens[i]);
                    mask.push(i >= self.response_start);
                }
                language::Slot::Speech { .. } => {
                    targets.push(PAD_ID);
                    mask.push(false);
                }
            }
        }
        Ok((targets, mask))
    }

    pub fn modality_mask(&self) -> Result<Vec<Modality>> {
        let lens: Vec<usize> = self.speech.iter().map(Matrix::rows).collect();
        let slots = language::splice_layout(&language::placeholder_positions(&self.tokens), self.tokens.len(), &lens)?;
        Ok(slots
            .iter()
            .map(|s| match s {
                language::Slot::Token(_) => Modality::Text,
                language::Slot::Speech { .. } => Modality::Speech,
            })
            .collect())
    }
}

/// Builds the spliced input (adapter applied to every speech segment) and runs the
/// language core. Needs `Adapter` and `Language` bound.
pub fn text_forward_tape<T: Scalar>(
    tape: &mut Tape<T>,
    b: &Binding,
    ex: &TextExample<T>,
    cfg: &ModelConfig,
) -> Result<(Var, Var)> {
    let mut speech = Vec::with_capacity(ex.speech.len());
    for g in &ex.speech {
        let x = tape.constant(g.clone());
        speech.push(frontend::adapter_tape(tape, b, x));
    }
    let x = language::splice_tape(tape, b, &ex.tokens, &speech)?;
    Ok(language::forward_tape(tape, b, x, &cfg.language))
}

pub fn text_example_loss<T: Scalar>(tape: &mut Tape<T>, b: &Binding, ex: &TextExample<T>, cfg: &ModelConfig) -> Result<Var> {
    let (logits, _) = text_forward_tape(tape, b, ex, cfg)?;
    let (targets, mask) = ex.targets()?;
    language::language_loss_tape(tape, logits, &targets, &mask)
}

/// Language-core states `H` over a spliced token sequence, using frozen weights.
pub fn context_states<T: Scalar>(
    params: &ModelParams<T>,
    cfg: &ModelConfig,
    tokens: &[u32],
    speech: &[Matrix<T>],
) -> Result<Matrix<T>> {
    let ex = TextExample {
        tokens: tokens.to_vec(),
        speech: speech.to_vec(),
        response_start: tokens.len(),
    };
    let mut tape = Tape::new();
    let b = params.bind(&mut tape, &[(Module::Adapter, false), (Module::Language, false)]);
    let (_, h) = text_forward_tape(&mut tape, &b, &ex, cfg)?;
    Ok(tape.value(h).clone())
}

/// One stage-2 example: context states and the speech tokens they should produce.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeechExample<T> {
    pub context: Matrix<T>,
    pub targets: Vec<u32>,
}

/// Needs `Projection` and `SpeechLm` bound. Targets are followed by EOS.
pub fn speech_example_loss<T: Scalar>(
    tape: &mut Tape<T>,
    b: &Binding,
    ex: &SpeechExample<T>,
    cfg: &ModelConfig,
) -> Result<Var> {
    let s = &cfg.speech_lm;
    if ex.context.rows() == 0 {
        return Err(CoreError::validation("context", "must not be empty"));
    }
    let h = tape.constant(ex.context.clone());
    let prefix = speech_decoder::project_tape(tape, b, h);
    let logits = speech_decoder::speech_lm_tape(tape, b, prefix, &ex.targets, s);
    let mut tg = ex.targets.clone();
    tg.push(s.eos());
    speech_decoder::speech_loss_tape(tape, logits, ex.context.rows(), &tg)
}

/// One flow-matching example in normalised mel space.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowExample<T> {
    pub x1: Matrix<T>,
    pub cond: FlowConditions<T>,
}

pub fn flow_example_loss<T: Scalar>(
    tape: &mut Tape<T>,
    b: &Binding,
    ex: &FlowExample<T>,
    t: T,
    x0: &Matrix<T>,
    cfg: &ModelConfig,
) -> Result<Var> {
    flow::cfm_loss_tape(tape, b, &ex.x1, &ex.cond, t, x0, cfg.flow.sigma_min, &cfg.flow)
}
