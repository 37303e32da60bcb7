//! Speech frontend: frozen reference encoder, frame grouping and the adapter τ.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::dsp::{remove_dc, MelAnalyzer, MelConfig};
use crate::error::{CoreError, Result};
use crate::nn::{self, TransformerConfig};
use crate::params::{Binding, ParamSet};
use crate::scalar::Scalar;
use crate::tensor::Matrix;
use crate::types::AudioAsset;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub d_enc: usize,
    pub layers: usize,
    pub heads: usize,
    pub conv_kernel: usize,
    pub conv_stride: usize,
    /// Frames concatenated per speech embedding.
    pub group_size: usize,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            d_enc: 64,
            layers: 2,
            heads: 4,
            conv_kernel: 3,
            conv_stride: 2,
            group_size: 4,
            seed: 7,
        }
    }
}

impl EncoderConfig {
    fn transformer(&self) -> TransformerConfig {
        TransformerConfig {
            layers: self.layers,
            d_model: self.d_enc,
            heads: self.heads,
            ff_mult: 2,
        }
    }

    /// Encoder output rate in frames per second.
    pub fn frame_rate(&self) -> f64 {
        let mel = MelConfig::frontend();
        mel.sample_rate as f64 / (mel.hop * self.conv_stride) as f64
    }

    pub fn frames_for(&self, samples: usize) -> usize {
        let mel_frames = MelConfig::frontend().frames_for(samples).max(1);
        let pad = self.conv_kernel / 2;
        crate::autograd::conv_out_len(mel_frames, self.conv_kernel, self.conv_stride, pad)
            .unwrap_or(1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodedFrames<T> {
    pub frames: Matrix<T>,
    pub frame_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupedFrames<T> {
    pub frames: Matrix<T>,
    pub group_size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpeechEmbeddingSequence<T> {
    pub embeddings: Matrix<T>,
}

/// Log-mel frontend, one strided convolution and a small non-causal attention stack.
/// Weights are drawn from the configured seed and never trained.
pub struct SpeechEncoder<T> {
    cfg: EncoderConfig,
    analyzer: MelAnalyzer,
    params: ParamSet<T>,
}

impl<T: Scalar> SpeechEncoder<T> {
    pub fn new(cfg: EncoderConfig) -> Result<Self> {
        if cfg.d_enc == 0 || cfg.heads == 0 || !cfg.d_enc.is_multiple_of(cfg.heads) {
            return Err(CoreError::Config("d_enc must be a positive multiple of heads".into()));
        }
        if cfg.conv_kernel == 0 || cfg.conv_stride == 0 {
            return Err(CoreError::Config("conv kernel and stride must be positive".into()));
        }
        let mel = MelConfig::frontend();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut params = ParamSet::new();
        nn::init_linear(
            &mut params,
            "encoder.conv",
            cfg.conv_kernel * mel.n_mels,
            cfg.d_enc,
            1.0,
            &mut rng,
        );
        nn::init_transformer(&mut params, "encoder.tf", &cfg.transformer(), &mut rng);
        Ok(Self {
            cfg,
            analyzer: MelAnalyzer::new(mel),
            params,
        })
    }

    /// Rebuilds an encoder around previously saved weights.
    pub fn with_params(cfg: EncoderConfig, params: ParamSet<T>) -> Result<Self> {
        let mut enc = Self::new(cfg)?;
        for (name, m) in enc.params.iter() {
            if params.get(name)?.shape() != m.shape() {
                return Err(CoreError::Checkpoint(format!("encoder parameter {name} has the wrong shape")));
            }
        }
        enc.params = params;
        Ok(enc)
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    /// Scaled log-mel features, `max(1, samples / 160) × 80`.
    pub fn features(&self, audio: &AudioAsset) -> Result<Matrix<f64>> {
        audio.validate()?;
        let mut signal = remove_dc(&audio.samples);
        let hop = self.analyzer.cfg.hop;
        if signal.len() < hop {
            signal.resize(hop, 0.0);
        }
        Ok(self.analyzer.log_mel(&signal).map(|v| (v + 5.0) / 5.0))
    }

    pub fn encode(&self, audio: &AudioAsset) -> Result<EncodedFrames<T>> {
        let feats: Matrix<T> = self.features(audio)?.cast();
        let mut tape = Tape::new();
        let b = self.params.bind(&mut tape, false);
        let x = tape.constant(feats);
        let pad = self.cfg.conv_kernel / 2;
        let cols = tape.unfold(x, self.cfg.conv_kernel, self.cfg.conv_stride, pad);
        let h = nn::linear(&mut tape, &b, cols, "encoder.conv");
        let h = tape.gelu(h);
        let (rows, d) = tape.shape(h);
        let pos = tape.constant(nn::sinusoid_table(rows, d));
        let h = tape.add(h, pos);
        let y = nn::transformer(&mut tape, &b, h, "encoder.tf", &self.cfg.transformer(), false);
        let frames = tape.value(y).clone();
        if !frames.is_finite() {
            return Err(CoreError::NonFinite("encoder output".into()));
        }
        Ok(EncodedFrames {
            frames,
            frame_rate: self.cfg.frame_rate(),
        })
    }
}

/// Runs the frozen encoder over `audio`.
pub fn encode_speech<T: Scalar>(audio: &AudioAsset, encoder: &SpeechEncoder<T>) -> Result<EncodedFrames<T>> {
    encoder.encode(audio)
}

/// Concatenates every `k` consecutive frames; trailing remainder frames are dropped.
pub fn group_frames<T: Scalar>(frames: &Matrix<T>, k: usize) -> Result<GroupedFrames<T>> {
    if k == 0 {
        return Err(CoreError::validation("k", "group size must be positive"));
    }
    let (n, d) = frames.shape();
    if n < k {
        return Err(CoreError::Shape(format!("{n} frames cannot fill a group of {k}")));
    }
    let rows = n / k;
    // Row-major storage makes each group a contiguous run of k·d values.
    let data = frames.as_slice()[..rows * k * d].to_vec();
    Ok(GroupedFrames {
        frames: Matrix::from_vec(rows, k * d, data)?,
        group_size: k,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdapterConfig {
    pub input_dim: usize,
    pub hidden: usize,
    pub output_dim: usize,
}

pub fn init_adapter<T: Scalar>(cfg: &AdapterConfig, seed: u64) -> ParamSet<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ps = ParamSet::new();
    nn::init_linear(&mut ps, "adapter.l1", cfg.input_dim, cfg.hidden, 1.0, &mut rng);
    nn::init_linear(&mut ps, "adapter.l2", cfg.hidden, cfg.output_dim, 1.0, &mut rng);
    ps
}

/// τ on the tape: `Linear → GELU → Linear`.
pub fn adapter_tape<T: Scalar>(t: &mut Tape<T>, b: &Binding, x: Var) -> Var {
    let h = nn::linear(t, b, x, "adapter.l1");
    let h = t.gelu(h);
    nn::linear(t, b, h, "adapter.l2")
}

fn adapter_dims<T: Scalar>(params: &ParamSet<T>) -> Result<(usize, usize)> {
    let w1 = params.get("adapter.l1.w")?;
    let w2 = params.get("adapter.l2.w")?;
    Ok((w1.rows(), w2.cols()))
}

pub fn adapt<T: Scalar>(grouped: &GroupedFrames<T>, params: &ParamSet<T>) -> Result<SpeechEmbeddingSequence<T>> {
    let (din, _) = adapter_dims(params)?;
    if grouped.frames.cols() != din {
        return Err(CoreError::Shape(format!(
            "adapter expects input width {din}, got {}",
            grouped.frames.cols()
        )));
    }
    let mut tape = Tape::new();
    let b = params.bind(&mut tape, false);
    let x = tape.constant(grouped.frames.clone());
    let y = adapter_tape(&mut tape, &b, x);
    Ok(SpeechEmbeddingSequence {
        embeddings: tape.value(y).clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(secs: f64) -> AudioAsset {
        let n = (secs * 16_000.0) as usize;
        AudioAsset::new("t", (0..n).map(|i| (i as f32 * 0.07).sin() * 0.3).collect()).unwrap()
    }

    #[test]
    fn one_second_gives_fifty_frames() {
        let enc: SpeechEncoder<f32> = SpeechEncoder::new(EncoderConfig::default()).unwrap();
        let out = encode_speech(&tone(1.0), &enc).unwrap();
        assert_eq!(out.frames.shape(), (50, 64));
        assert_eq!(out.frame_rate, 50.0);
    }

    #[test]
    fn silence_is_finite_and_deterministic() {
        let enc: SpeechEncoder<f64> = SpeechEncoder::new(EncoderConfig::default()).unwrap();
        let z = AudioAsset::new("z", vec![0.0; 8000]).unwrap();
        let a = enc.encode(&z).unwrap();
        assert!(a.frames.is_finite());
        assert_eq!(a, enc.encode(&z).unwrap());
    }

    #[test]
    fn group_examples() {
        let m = Matrix::from_fn(5, 2, |r, c| (r * 10 + c) as f64);
        let g = group_frames(&m, 2).unwrap();
        assert_eq!(g.frames.shape(), (2, 4));
        assert_eq!(g.frames.row(1), &[20.0, 21.0, 30.0, 31.0]);
        assert_eq!(group_frames(&m, 1).unwrap().frames, m);
        assert!(group_frames(&m, 0).is_err());
        assert!(group_frames(&m, 6).is_err());
    }

    #[test]
    fn adapter_preserves_rows_and_checks_width() {
        let cfg = AdapterConfig {
            input_dim: 8,
            hidden: 6,
            output_dim: 5,
        };
        let ps: ParamSet<f64> = init_adapter(&cfg, 1);
        let g = GroupedFrames {
            frames: Matrix::filled(7, 8, 0.5),
            group_size: 2,
        };
        assert_eq!(adapt(&g, &ps).unwrap().embeddings.shape(), (7, 5));
        let bad = GroupedFrames {
            frames: Matrix::filled(7, 9, 0.5),
            group_size: 3,
        };
        assert!(matches!(adapt(&bad, &ps), Err(CoreError::Shape(_))));
    }
}
