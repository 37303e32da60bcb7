//! Optimal-transport conditional flow matching over mel spectrograms.
//!
//! Path: `x_t = (1 - (1 - σ) t) x0 + t x1`, target field `u = x1 - (1 - σ) x0`.
//! Sampling integrates the field with fixed-step Euler from seeded noise at `t = 0`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::error::{CoreError, Result};
use crate::nn;
use crate::params::{Binding, ParamSet};
use crate::scalar::Scalar;
use crate::tensor::Matrix;

use super::codebook::{upsample_frames, Codebook};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowConfig {
    pub mel_bins: usize,
    pub hidden: usize,
    pub layers: usize,
    pub kernel: usize,
    pub time_dim: usize,
    pub speaker_dim: usize,
    pub context_dim: usize,
    /// Mel frames per speech token.
    pub token_ratio: usize,
    pub sigma_min: f64,
    pub steps: usize,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            mel_bins: 80,
            hidden: 64,
            layers: 2,
            kernel: 3,
            time_dim: 16,
            speaker_dim: 160,
            context_dim: 256,
            token_ratio: 2,
            sigma_min: 1e-4,
            steps: 10,
        }
    }
}

impl FlowConfig {
    fn cond_dim(&self) -> usize {
        self.mel_bins + self.speaker_dim + self.context_dim
    }
}

/// Synthesis conditions: frame-aligned token centroids, speaker embedding `v` and pooled `H`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowConditions<T> {
    pub token_frames: Matrix<T>,
    pub speaker: Vec<T>,
    pub context: Vec<T>,
}

const MEL_SHIFT: f64 = 5.0;
const MEL_SCALE: f64 = 2.5;

/// Maps natural-log mel values into the roughly unit-scale space the field works in.
pub fn mel_norm<T: Scalar>(mel: &Matrix<T>) -> Matrix<T> {
    let (s, k) = (T::of(MEL_SHIFT), T::of(MEL_SCALE));
    mel.map(|v| (v + s) / k)
}

pub fn mel_denorm<T: Scalar>(x: &Matrix<T>) -> Matrix<T> {
    let (s, k) = (T::of(MEL_SHIFT), T::of(MEL_SCALE));
    x.map(|v| v * k - s)
}

impl<T: Scalar> FlowConditions<T> {
    /// Token centroids are upsampled by `ratio` and normalised with [`mel_norm`].
    pub fn from_tokens(
        codebook: &Codebook,
        tokens: &[u32],
        ratio: usize,
        speaker: Vec<T>,
        context: Vec<T>,
    ) -> Result<Self> {
        let frames = mel_norm(&upsample_frames(&codebook.detokenize(tokens)?.cast::<T>(), ratio));
        Ok(Self {
            token_frames: frames,
            speaker,
            context,
        })
    }

    pub fn frames(&self) -> usize {
        self.token_frames.rows()
    }

    /// Per-frame condition rows: `[token frame | v | pooled H]`.
    pub fn matrix(&self) -> Result<Matrix<T>> {
        let f = self.frames();
        let s = Matrix::broadcast_row(&self.speaker, f);
        let c = Matrix::broadcast_row(&self.context, f);
        Matrix::hstack(&[&self.token_frames, &s, &c])
    }

    pub fn with_speaker(&self, speaker: Vec<T>) -> Self {
        Self {
            speaker,
            ..self.clone()
        }
    }
}

/// Anything that predicts the flow velocity; the learned network and analytic oracles
/// are interchangeable.
pub trait VectorField<T: Scalar> {
    fn velocity(&self, x_t: &Matrix<T>, t: T, cond: &FlowConditions<T>) -> Result<Matrix<T>>;
}

/// The straight-path field between fixed endpoints; constant in `x` and `t`.
pub struct OracleField<T> {
    pub x0: Matrix<T>,
    pub x1: Matrix<T>,
    pub sigma_min: f64,
}

impl<T: Scalar> VectorField<T> for OracleField<T> {
    fn velocity(&self, _x: &Matrix<T>, _t: T, _c: &FlowConditions<T>) -> Result<Matrix<T>> {
        Ok(cfm_target(&self.x0, &self.x1, self.sigma_min))
    }
}

pub fn cfm_path<T: Scalar>(x0: &Matrix<T>, x1: &Matrix<T>, t: T, sigma_min: f64) -> Matrix<T> {
    let a = T::one() - (T::one() - T::of(sigma_min)) * t;
    x0.zip_map(x1, |p, q| a * p + t * q)
}

pub fn cfm_target<T: Scalar>(x0: &Matrix<T>, x1: &Matrix<T>, sigma_min: f64) -> Matrix<T> {
    let c = T::one() - T::of(sigma_min);
    x0.zip_map(x1, |p, q| q - c * p)
}

/// Standard normal noise with a fixed seed, `frames × bins`.
pub fn initial_noise<T: Scalar>(frames: usize, bins: usize, seed: u64) -> Matrix<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Matrix::randn(frames, bins, 1.0, &mut rng)
}

pub fn init_flow<T: Scalar>(cfg: &FlowConfig, seed: u64) -> ParamSet<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ps = ParamSet::new();
    let k = cfg.kernel;
    nn::init_linear(&mut ps, "cfm.in", k * (cfg.mel_bins + cfg.cond_dim()), cfg.hidden, 1.0, &mut rng);
    nn::init_linear(&mut ps, "cfm.time", cfg.time_dim, cfg.hidden, 1.0, &mut rng);
    for l in 0..cfg.layers {
        nn::init_linear(&mut ps, &format!("cfm.film.{l}"), cfg.hidden, 2 * cfg.hidden, 0.5, &mut rng);
        nn::init_linear(&mut ps, &format!("cfm.conv.{l}"), k * cfg.hidden, cfg.hidden, 0.7, &mut rng);
    }
    nn::init_linear(&mut ps, "cfm.out", cfg.hidden, cfg.mel_bins, 0.5, &mut rng);
    ps
}

fn time_features<T: Scalar>(t: T, dim: usize) -> Matrix<T> {
    let half = (dim / 2).max(1);
    Matrix::from_fn(1, dim, |_, i| {
        let freq = 100f64.powf((i % half) as f64 / half as f64);
        let a = t.as_f64() * freq;
        T::of(if i < half { a.sin() } else { a.cos() })
    })
}

/// Field network on the tape: conv stack with FiLM modulation from the time embedding.
pub fn flow_tape<T: Scalar>(
    tape: &mut Tape<T>,
    b: &Binding,
    x: Var,
    t: T,
    cond: &FlowConditions<T>,
    cfg: &FlowConfig,
) -> Result<Var> {
    let (frames, bins) = tape.shape(x);
    if bins != cfg.mel_bins || frames != cond.frames() {
        return Err(CoreError::Shape(format!(
            "flow input {frames}×{bins} vs conditions {}×{}",
            cond.frames(),
            cfg.mel_bins
        )));
    }
    let cm = cond.matrix()?;
    if cm.cols() != cfg.cond_dim() {
        return Err(CoreError::Shape(format!("condition width {} != {}", cm.cols(), cfg.cond_dim())));
    }
    let pad = cfg.kernel / 2;
    let c = tape.constant(cm);
    let inp = tape.concat_cols(&[x, c]);
    let cols = tape.unfold(inp, cfg.kernel, 1, pad);
    let mut h = nn::linear(tape, b, cols, "cfm.in");
    let tf = tape.constant(time_features(t, cfg.time_dim));
    let temb = nn::linear(tape, b, tf, "cfm.time");
    let temb = tape.gelu(temb);
    let ones = tape.constant(Matrix::filled(1, cfg.hidden, T::one()));
    for l in 0..cfg.layers {
        let film = nn::linear(tape, b, temb, &format!("cfm.film.{l}"));
        let gamma = tape.slice_cols(film, 0, cfg.hidden);
        let gamma = tape.add(gamma, ones);
        let beta = tape.slice_cols(film, cfg.hidden, cfg.hidden);
        let z = tape.gelu(h);
        let z = tape.mul_row(z, gamma);
        let z = tape.add_row(z, beta);
        let z = tape.unfold(z, cfg.kernel, 1, pad);
        let z = nn::linear(tape, b, z, &format!("cfm.conv.{l}"));
        h = tape.add(h, z);
    }
    let h = tape.gelu(h);
    Ok(nn::linear(tape, b, h, "cfm.out"))
}

/// The learned field.
pub struct FlowNet<'a, T> {
    pub params: &'a ParamSet<T>,
    pub cfg: FlowConfig,
}

impl<T: Scalar> VectorField<T> for FlowNet<'_, T> {
    fn velocity(&self, x_t: &Matrix<T>, t: T, cond: &FlowConditions<T>) -> Result<Matrix<T>> {
        let mut tape = Tape::new();
        let b = self.params.bind(&mut tape, false);
        let x = tape.constant(x_t.clone());
        let y = flow_tape(&mut tape, &b, x, t, cond, &self.cfg)?;
        Ok(tape.value(y).clone())
    }
}

fn check_flow_inputs<T: Scalar>(x1: &Matrix<T>, x0: &Matrix<T>, t: T) -> Result<()> {
    if x1.shape() != x0.shape() {
        return Err(CoreError::Shape(format!("x0 {:?} vs x1 {:?}", x0.shape(), x1.shape())));
    }
    if !(t >= T::zero() && t <= T::one()) {
        return Err(CoreError::validation("t", "must lie in [0, 1]"));
    }
    Ok(())
}

/// Mean squared error between `field(x_t, t)` and the straight-path target.
pub fn cfm_loss_with<T: Scalar>(
    field: &dyn VectorField<T>,
    x1: &Matrix<T>,
    cond: &FlowConditions<T>,
    t: T,
    x0: &Matrix<T>,
    sigma_min: f64,
) -> Result<T> {
    check_flow_inputs(x1, x0, t)?;
    let xt = cfm_path(x0, x1, t, sigma_min);
    let pred = field.velocity(&xt, t, cond)?;
    let u = cfm_target(x0, x1, sigma_min);
    if pred.shape() != u.shape() {
        return Err(CoreError::Shape("field output shape differs from target".into()));
    }
    Ok(pred.zip_map(&u, |a, b| (a - b) * (a - b)).sum() / T::of(u.len() as f64))
}

#[allow(clippy::too_many_arguments)]
pub fn cfm_loss_tape<T: Scalar>(
    tape: &mut Tape<T>,
    b: &Binding,
    x1: &Matrix<T>,
    cond: &FlowConditions<T>,
    t: T,
    x0: &Matrix<T>,
    sigma_min: f64,
    cfg: &FlowConfig,
) -> Result<Var> {
    check_flow_inputs(x1, x0, t)?;
    let xt = tape.constant(cfm_path(x0, x1, t, sigma_min));
    let pred = flow_tape(tape, b, xt, t, cond, cfg)?;
    let u = tape.constant(cfm_target(x0, x1, sigma_min));
    Ok(tape.mse(pred, u))
}

pub fn cfm_loss<T: Scalar>(
    x1: &Matrix<T>,
    cond: &FlowConditions<T>,
    params: &ParamSet<T>,
    cfg: &FlowConfig,
    t: T,
    x0: &Matrix<T>,
) -> Result<T> {
    cfm_loss_with(&FlowNet { params, cfg: *cfg }, x1, cond, t, x0, cfg.sigma_min)
}

/// Euler integration from `initial_noise(frames, bins, seed)` at `t = 0` to `t = 1`.
pub fn sample_mel<T: Scalar>(
    field: &dyn VectorField<T>,
    cond: &FlowConditions<T>,
    bins: usize,
    steps: usize,
    seed: u64,
) -> Result<Matrix<T>> {
    if steps == 0 {
        return Err(CoreError::validation("steps", "must be at least 1"));
    }
    let mut x = initial_noise(cond.frames(), bins, seed);
    let dt = T::one() / T::of(steps as f64);
    for i in 0..steps {
        let t = T::of(i as f64) * dt;
        let v = field.velocity(&x, t, cond)?;
        if !v.is_finite() {
            return Err(CoreError::NonFinite(format!("flow field at step {i}")));
        }
        x = x.zip_map(&v, |a, b| a + dt * b);
    }
    Ok(x)
}

/// Mean squared distance over the rows where `mask` is set (all rows when `None`).
pub fn masked_distance<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>, mask: Option<&[bool]>) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(CoreError::Shape(format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for r in 0..a.rows() {
        if mask.is_none_or(|m| m.get(r).copied().unwrap_or(false)) {
            for (x, y) in a.row(r).iter().zip(b.row(r)) {
                sum += (*x - *y).as_f64().powi(2);
            }
            n += a.cols();
        }
    }
    if n == 0 {
        return Err(CoreError::validation("mask", "selects no frames"));
    }
    Ok(sum / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cond(frames: usize) -> FlowConditions<f64> {
        FlowConditions {
            token_frames: Matrix::zeros(frames, 4),
            speaker: vec![0.0; 2],
            context: vec![0.0; 3],
        }
    }

    #[test]
    fn endpoints_and_oracle_loss() {
        let x0 = initial_noise::<f64>(5, 4, 1);
        let x1 = initial_noise::<f64>(5, 4, 2);
        assert_eq!(cfm_path(&x0, &x1, 0.0, 0.0), x0);
        assert_eq!(cfm_path(&x0, &x1, 1.0, 0.0), x1);
        let oracle = OracleField {
            x0: x0.clone(),
            x1: x1.clone(),
            sigma_min: 0.0,
        };
        let l = cfm_loss_with(&oracle, &x1, &cond(5), 0.37, &x0, 0.0).unwrap();
        assert!(l < 1e-10);
    }

    #[test]
    fn oracle_sampling_is_exact_for_any_step_count() {
        let x0 = initial_noise::<f64>(6, 4, 11);
        let x1 = Matrix::from_fn(6, 4, |r, c| (r + c) as f64 * 0.1 - 1.0);
        let oracle = OracleField {
            x0,
            x1: x1.clone(),
            sigma_min: 0.0,
        };
        for steps in [1, 2, 10] {
            let m = sample_mel(&oracle, &cond(6), 4, steps, 11).unwrap();
            assert!(m.max_abs_diff(&x1) < 1e-6);
        }
        assert!(sample_mel(&oracle, &cond(6), 4, 0, 11).is_err());
    }

    #[test]
    fn network_shapes_and_determinism() {
        let cfg = FlowConfig {
            mel_bins: 4,
            hidden: 6,
            layers: 2,
            kernel: 3,
            time_dim: 4,
            speaker_dim: 2,
            context_dim: 3,
            token_ratio: 2,
            sigma_min: 1e-4,
            steps: 3,
        };
        let ps: ParamSet<f64> = init_flow(&cfg, 5);
        let net = FlowNet { params: &ps, cfg };
        let a = sample_mel(&net, &cond(7), 4, 3, 9).unwrap();
        assert_eq!(a.shape(), (7, 4));
        assert_eq!(a, sample_mel(&net, &cond(7), 4, 3, 9).unwrap());
        let x = initial_noise::<f64>(6, 4, 0);
        assert!(cfm_loss(&x, &cond(7), &ps, &cfg, 0.5, &x).is_err());
    }
}
