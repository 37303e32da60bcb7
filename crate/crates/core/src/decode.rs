//! Token selection shared by the text and speech decoders.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig {
    pub max_len: usize,
    /// `0.0` selects greedy decoding.
    pub temperature: f64,
    pub seed: u64,
    /// EOS is suppressed until this many tokens have been produced.
    #[serde(default)]
    pub min_len: usize,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            max_len: 64,
            temperature: 0.0,
            seed: 0,
            min_len: 0,
        }
    }
}

impl DecodeConfig {
    pub fn greedy(max_len: usize) -> Self {
        Self {
            max_len,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_len == 0 {
            return Err(CoreError::validation("max_len", "must be positive"));
        }
        if !(self.temperature >= 0.0) || !self.temperature.is_finite() {
            return Err(CoreError::validation("temperature", "must be finite and >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Eos,
    MaxLen,
}

/// Stateful picker; `banned` ids are never selected.
pub struct TokenPicker {
    cfg: DecodeConfig,
    rng: ChaCha8Rng,
}

impl TokenPicker {
    pub fn new(cfg: DecodeConfig) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            cfg,
        }
    }

    pub fn pick<T: Scalar>(&mut self, logits: &[T], banned: &[usize]) -> Result<u32> {
        let allowed = |i: usize| !banned.contains(&i);
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::NonFinite("decoder logits".into()));
        }
        let mut best = None;
        for (i, &v) in logits.iter().enumerate() {
            if allowed(i) && best.is_none_or(|(_, b): (usize, T)| v > b) {
                best = Some((i, v));
            }
        }
        let (argmax, maxv) = best.ok_or_else(|| CoreError::Generation("every token is banned".into()))?;
        if self.cfg.temperature == 0.0 {
            return Ok(argmax as u32);
        }
        let inv_t = 1.0 / self.cfg.temperature;
        let weights: Vec<f64> = logits
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                if allowed(i) {
                    ((v - maxv).as_f64() * inv_t).exp()
                } else {
                    0.0
                }
            })
            .collect();
        let total: f64 = weights.iter().sum();
        let mut u = self.rng.random::<f64>() * total;
        for (i, w) in weights.iter().enumerate() {
            if *w > 0.0 {
                if u < *w {
                    return Ok(i as u32);
                }
                u -= w;
            }
        }
        Ok(argmax as u32)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn greedy_prefers_lowest_index_on_ties() {
        let mut p = TokenPicker::new(DecodeConfig::greedy(4));
        assert_eq!(p.pick(&[1.0f64, 3.0, 3.0], &[]).unwrap(), 1);
        assert_eq!(p.pick(&[1.0f64, 3.0, 3.0], &[1]).unwrap(), 2);
    }

    #[test]
    fn sampling_is_seeded() {
        let cfg = DecodeConfig {
            temperature: 1.0,
            seed: 5,
            ..DecodeConfig::default()
        };
        let draw = || {
            let mut p = TokenPicker::new(cfg);
            (0..20).map(|_| p.pick(&[0.0f32, 0.1, 0.2, 0.3], &[]).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(draw(), draw());
    }
}
