//! Building blocks shared by the encoder, the language core and the speech LM:
//! affine layers, layer norm, multi-head attention and pre-norm transformer stacks,
//! in a recorded (tape) form for training and an incremental cached form for decoding.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{gelu, layer_norm_rows, softmax_rows, Tape, Var};
use crate::params::{Binding, ParamSet};
use crate::scalar::Scalar;
use crate::tensor::Matrix;
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransformerConfig {
    pub layers: usize,
    pub d_model: usize,
    pub heads: usize,
    pub ff_mult: usize,
}

impl TransformerConfig {
    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }
}

pub fn init_linear<T: Scalar, R: Rng + ?Sized>(
    ps: &mut ParamSet<T>,
    prefix: &str,
    fan_in: usize,
    fan_out: usize,
    gain: f64,
    rng: &mut R,
) {
    let std = gain / (fan_in as f64).sqrt();
    ps.insert(format!("{prefix}.w"), Matrix::randn(fan_in, fan_out, std, rng));
    ps.insert(format!("{prefix}.b"), Matrix::zeros(1, fan_out));
}

pub fn init_layer_norm<T: Scalar>(ps: &mut ParamSet<T>, prefix: &str, dim: usize) {
    ps.insert(format!("{prefix}.g"), Matrix::filled(1, dim, T::one()));
    ps.insert(format!("{prefix}.b"), Matrix::zeros(1, dim));
}

pub fn init_transformer<T: Scalar, R: Rng + ?Sized>(
    ps: &mut ParamSet<T>,
    prefix: &str,
    cfg: &TransformerConfig,
    rng: &mut R,
) {
    let d = cfg.d_model;
    let ff = d * cfg.ff_mult;
    let out_gain = 1.0 / (2.0 * cfg.layers as f64).sqrt();
    for i in 0..cfg.layers {
        let b = format!("{prefix}.blocks.{i}");
        init_layer_norm(ps, &format!("{b}.ln1"), d);
        for name in ["wq", "wk", "wv"] {
            ps.insert(
                format!("{b}.attn.{name}"),
                Matrix::randn(d, d, 1.0 / (d as f64).sqrt(), rng),
            );
        }
        init_linear(ps, &format!("{b}.attn.out"), d, d, out_gain, rng);
        init_layer_norm(ps, &format!("{b}.ln2"), d);
        init_linear(ps, &format!("{b}.mlp.up"), d, ff, 1.0, rng);
        init_linear(ps, &format!("{b}.mlp.down"), ff, d, out_gain, rng);
    }
    init_layer_norm(ps, &format!("{prefix}.ln_f"), d);
}

/// `x · W + b` on the tape.
pub fn linear<T: Scalar>(t: &mut Tape<T>, b: &Binding, x: Var, prefix: &str) -> Var {
    let w = b.var(&format!("{prefix}.w"));
    let bias = b.var(&format!("{prefix}.b"));
    let y = t.matmul(x, w);
    t.add_row(y, bias)
}

pub fn layer_norm<T: Scalar>(t: &mut Tape<T>, b: &Binding, x: Var, prefix: &str) -> Var {
    let n = t.layer_norm(x);
    let g = t.mul_row(n, b.var(&format!("{prefix}.g")));
    t.add_row(g, b.var(&format!("{prefix}.b")))
}

fn attention<T: Scalar>(
    t: &mut Tape<T>,
    b: &Binding,
    x: Var,
    prefix: &str,
    cfg: &TransformerConfig,
    causal: bool,
) -> Var {
    let q = t.matmul(x, b.var(&format!("{prefix}.wq")));
    let k = t.matmul(x, b.var(&format!("{prefix}.wk")));
    let v = t.matmul(x, b.var(&format!("{prefix}.wv")));
    let dh = cfg.head_dim();
    let scale = T::one() / T::of(dh as f64).sqrt();
    let mut heads = Vec::with_capacity(cfg.heads);
    for h in 0..cfg.heads {
        let qh = t.slice_cols(q, h * dh, dh);
        let kh = t.slice_cols(k, h * dh, dh);
        let vh = t.slice_cols(v, h * dh, dh);
        let s = t.matmul_t(qh, kh);
        let s = t.scale(s, scale);
        let p = t.softmax(s, causal);
        heads.push(t.matmul(p, vh));
    }
    let cat = if heads.len() == 1 { heads[0] } else { t.concat_cols(&heads) };
    linear(t, b, cat, &format!("{prefix}.out"))
}

/// Pre-norm transformer stack followed by the final layer norm.
pub fn transformer<T: Scalar>(
    t: &mut Tape<T>,
    b: &Binding,
    x: Var,
    prefix: &str,
    cfg: &TransformerConfig,
    causal: bool,
) -> Var {
    let mut x = x;
    for i in 0..cfg.layers {
        let p = format!("{prefix}.blocks.{i}");
        let h = layer_norm(t, b, x, &format!("{p}.ln1"));
        let a = attention(t, b, h, &format!("{p}.attn"), cfg, causal);
        x = t.add(x, a);
        let h = layer_norm(t, b, x, &format!("{p}.ln2"));
        let u = linear(t, b, h, &format!("{p}.mlp.up"));
        let u = t.gelu(u);
        let dn = linear(t, b, u, &format!("{p}.mlp.down"));
        x = t.add(x, dn);
    }
    layer_norm(t, b, x, &format!("{prefix}.ln_f"))
}

/// Fixed sinusoidal position table, `len × dim`.
pub fn sinusoid_table<T: Scalar>(len: usize, dim: usize) -> Matrix<T> {
    Matrix::from_fn(len, dim, |pos, i| {
        let pair = (i / 2) as f64;
        let freq = 1.0 / 10000f64.powf(2.0 * pair / dim as f64);
        let angle = pos as f64 * freq;
        T::of(if i % 2 == 0 { angle.sin() } else { angle.cos() })
    })
}

/// Sinusoidal position row for a single index (same values as [`sinusoid_table`]).
pub fn sinusoid_row<T: Scalar>(pos: usize, dim: usize) -> Vec<T> {
    (0..dim)
        .map(|i| {
            let pair = (i / 2) as f64;
            let freq = 1.0 / 10000f64.powf(2.0 * pair / dim as f64);
            let angle = pos as f64 * freq;
            T::of(if i % 2 == 0 { angle.sin() } else { angle.cos() })
        })
        .collect()
}

fn affine_rows<T: Scalar>(x: &Matrix<T>, ps: &ParamSet<T>, prefix: &str) -> Result<Matrix<T>> {
    let mut y = x.matmul(ps.get(&format!("{prefix}.w"))?);
    let bias = ps.get(&format!("{prefix}.b"))?.as_slice();
    for r in 0..y.rows() {
        for (v, &bv) in y.row_mut(r).iter_mut().zip(bias) {
            *v += bv;
        }
    }
    Ok(y)
}

fn norm_rows<T: Scalar>(x: &Matrix<T>, ps: &ParamSet<T>, prefix: &str) -> Result<Matrix<T>> {
    let mut y = layer_norm_rows(x);
    let g = ps.get(&format!("{prefix}.g"))?.as_slice();
    let b = ps.get(&format!("{prefix}.b"))?.as_slice();
    for r in 0..y.rows() {
        for ((v, &gv), &bv) in y.row_mut(r).iter_mut().zip(g).zip(b) {
            *v = *v * gv + bv;
        }
    }
    Ok(y)
}

/// Key/value cache for incremental causal decoding with a stack initialised by
/// [`init_transformer`].
#[derive(Debug, Clone)]
pub struct KvCache<T> {
    keys: Vec<Matrix<T>>,
    values: Vec<Matrix<T>>,
}

impl<T: Scalar> KvCache<T> {
    pub fn new(cfg: &TransformerConfig) -> Self {
        Self {
            keys: (0..cfg.layers).map(|_| Matrix::zeros(0, cfg.d_model)).collect(),
            values: (0..cfg.layers).map(|_| Matrix::zeros(0, cfg.d_model)).collect(),
        }
    }

    /// Number of positions already consumed.
    pub fn len(&self) -> usize {
        self.keys.first().map_or(0, Matrix::rows)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Runs one input row through the stack; returns the final-norm output row.
    pub fn step(
        &mut self,
        ps: &ParamSet<T>,
        prefix: &str,
        cfg: &TransformerConfig,
        row: &[T],
    ) -> Result<Matrix<T>> {
        let mut x = Matrix::row_vector(row);
        let dh = cfg.head_dim();
        let scale = T::one() / T::of(dh as f64).sqrt();
        for i in 0..cfg.layers {
            let p = format!("{prefix}.blocks.{i}");
            let h = norm_rows(&x, ps, &format!("{p}.ln1"))?;
            let q = h.matmul(ps.get(&format!("{p}.attn.wq"))?);
            let k = h.matmul(ps.get(&format!("{p}.attn.wk"))?);
            let v = h.matmul(ps.get(&format!("{p}.attn.wv"))?);
            self.keys[i] = Matrix::vstack(&[&self.keys[i], &k])?;
            self.values[i] = Matrix::vstack(&[&self.values[i], &v])?;
            let keys = &self.keys[i];
            let values = &self.values[i];
            let mut cat = Matrix::zeros(1, cfg.d_model);
            for hd in 0..cfg.heads {
                let qh = q.slice_cols(hd * dh, dh);
                let kh = keys.slice_cols(hd * dh, dh);
                let vh = values.slice_cols(hd * dh, dh);
                let s = qh.matmul_t(&kh).map(|v| v * scale);
                let pr = softmax_rows(&s, false);
                let o = pr.matmul(&vh);
                cat.row_mut(0)[hd * dh..(hd + 1) * dh].copy_from_slice(o.row(0));
            }
            let a = affine_rows(&cat, ps, &format!("{p}.attn.out"))?;
            x.add_assign(&a);
            let h = norm_rows(&x, ps, &format!("{p}.ln2"))?;
            let u = affine_rows(&h, ps, &format!("{p}.mlp.up"))?.map(gelu);
            let dn = affine_rows(&u, ps, &format!("{p}.mlp.down"))?;
            x.add_assign(&dn);
        }
        norm_rows(&x, ps, &format!("{prefix}.ln_f"))
    }
}
