//! Short-time Fourier analysis/synthesis and mel filterbanks (f64 throughout).

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MelConfig {
    pub sample_rate: u32,
    pub n_fft: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub fmin: f64,
    pub fmax: f64,
    pub log_floor: f64,
}

impl MelConfig {
    /// 25 ms / 10 ms analysis used by the speech encoder and the speaker embedder.
    pub fn frontend() -> Self {
        Self {
            sample_rate: 16_000,
            n_fft: 400,
            hop: 160,
            n_mels: 80,
            fmin: 0.0,
            fmax: 8_000.0,
            log_floor: 1e-5,
        }
    }

    /// Hop-256 analysis for synthesis targets and the vocoder.
    pub fn synthesis() -> Self {
        Self {
            sample_rate: 16_000,
            n_fft: 1024,
            hop: 256,
            n_mels: 80,
            fmin: 0.0,
            fmax: 8_000.0,
            log_floor: 1e-5,
        }
    }

    pub fn n_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    /// Frame count for `samples` input samples (centered, trailing partial hop dropped).
    pub fn frames_for(&self, samples: usize) -> usize {
        samples / self.hop
    }
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Area-normalised triangular filters, `n_mels × n_bins`.
pub fn mel_filterbank(cfg: &MelConfig) -> Matrix<f64> {
    let n_bins = cfg.n_bins();
    let lo = hz_to_mel(cfg.fmin);
    let hi = hz_to_mel(cfg.fmax);
    let edges: Vec<f64> = (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.n_mels + 1) as f64))
        .collect();
    let bin_hz: Vec<f64> = (0..n_bins)
        .map(|k| k as f64 * cfg.sample_rate as f64 / cfg.n_fft as f64)
        .collect();
    Matrix::from_fn(cfg.n_mels, n_bins, |m, k| {
        let (l, c, r) = (edges[m], edges[m + 1], edges[m + 2]);
        let f = bin_hz[k];
        let w = if f > l && f <= c {
            (f - l) / (c - l)
        } else if f > c && f < r {
            (r - f) / (r - c)
        } else {
            0.0
        };
        w * 2.0 / (r - l)
    })
}

fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

/// Centered STFT with a periodic Hann window; frames = `len / hop`.
pub struct Stft {
    n_fft: usize,
    hop: usize,
    window: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl Stft {
    pub fn new(n_fft: usize, hop: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            n_fft,
            hop,
            window: hann(n_fft),
            forward: planner.plan_fft_forward(n_fft),
            inverse: planner.plan_fft_inverse(n_fft),
        }
    }

    pub fn n_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    /// Complex spectrum per frame, `frames × n_bins`.
    pub fn analyze(&self, signal: &[f64]) -> Vec<Vec<Complex<f64>>> {
        let frames = signal.len() / self.hop;
        let half = self.n_fft / 2;
        let mut buf = vec![Complex::new(0.0, 0.0); self.n_fft];
        let mut out = Vec::with_capacity(frames);
        for t in 0..frames {
            let start = (t * self.hop) as isize - half as isize;
            for (i, b) in buf.iter_mut().enumerate() {
                let idx = start + i as isize;
                let s = if idx >= 0 && (idx as usize) < signal.len() {
                    signal[idx as usize]
                } else {
                    0.0
                };
                *b = Complex::new(s * self.window[i], 0.0);
            }
            self.forward.process(&mut buf);
            out.push(buf[..self.n_bins()].to_vec());
        }
        out
    }

    /// Weighted overlap-add inverse of [`Self::analyze`], returning `len` samples.
    pub fn synthesize(&self, spectrum: &[Vec<Complex<f64>>], len: usize) -> Vec<f64> {
        let half = self.n_fft / 2;
        let total = spectrum.len() * self.hop + self.n_fft;
        let mut acc = vec![0.0; total];
        let mut norm = vec![0.0; total];
        let mut buf = vec![Complex::new(0.0, 0.0); self.n_fft];
        let scale = 1.0 / self.n_fft as f64;
        for (t, frame) in spectrum.iter().enumerate() {
            for k in 0..self.n_fft {
                buf[k] = if k < frame.len() {
                    frame[k]
                } else {
                    frame[self.n_fft - k].conj()
                };
            }
            self.inverse.process(&mut buf);
            let start = t * self.hop;
            for i in 0..self.n_fft {
                acc[start + i] += buf[i].re * scale * self.window[i];
                norm[start + i] += self.window[i] * self.window[i];
            }
        }
        (0..len)
            .map(|i| {
                let j = i + half;
                if j < total && norm[j] > 1e-8 {
                    acc[j] / norm[j]
                } else {
                    0.0
                }
            })
            .collect()
    }
}

/// Log-amplitude mel analysis, `frames × n_mels`.
pub struct MelAnalyzer {
    pub cfg: MelConfig,
    stft: Stft,
    filters: Matrix<f64>,
}

impl MelAnalyzer {
    pub fn new(cfg: MelConfig) -> Self {
        Self {
            stft: Stft::new(cfg.n_fft, cfg.hop),
            filters: mel_filterbank(&cfg),
            cfg,
        }
    }

    pub fn filters(&self) -> &Matrix<f64> {
        &self.filters
    }

    pub fn stft(&self) -> &Stft {
        &self.stft
    }

    /// Linear-amplitude mel energies, `frames × n_mels`.
    pub fn mel_amplitude(&self, signal: &[f64]) -> Matrix<f64> {
        let spec = self.stft.analyze(signal);
        let mags = Matrix::from_fn(spec.len(), self.stft.n_bins(), |t, k| spec[t][k].norm());
        mags.matmul_t(&self.filters)
    }

    pub fn log_mel(&self, signal: &[f64]) -> Matrix<f64> {
        let floor = self.cfg.log_floor;
        self.mel_amplitude(signal).map(|v| v.max(floor).ln())
    }
}

/// Removes the mean (DC) of a signal.
pub fn remove_dc(samples: &[f32]) -> Vec<f64> {
    if samples.is_empty() {
        return Vec::new();
    }
    let mean = samples.iter().map(|&s| s as f64).sum::<f64>() / samples.len() as f64;
    samples.iter().map(|&s| s as f64 - mean).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_counts_follow_hop() {
        let a = MelAnalyzer::new(MelConfig::frontend());
        let sig = vec![0.0; 16_000];
        assert_eq!(a.log_mel(&sig).shape(), (100, 80));
        let s = MelAnalyzer::new(MelConfig::synthesis());
        assert_eq!(s.log_mel(&vec![0.0; 2560]).rows(), 10);
    }

    #[test]
    fn stft_inverse_reconstructs_interior() {
        let stft = Stft::new(1024, 256);
        let sig: Vec<f64> = (0..8192)
            .map(|i| (i as f64 * 0.03).sin() + 0.3 * (i as f64 * 0.11).cos())
            .collect();
        let spec = stft.analyze(&sig);
        let back = stft.synthesize(&spec, sig.len());
        let err = sig[1024..7000]
            .iter()
            .zip(&back[1024..7000])
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn filterbank_peaks_increase() {
        let fb = mel_filterbank(&MelConfig::synthesis());
        let argmax = |m: usize| {
            (0..fb.cols())
                .max_by(|&a, &b| fb.get(m, a).partial_cmp(&fb.get(m, b)).unwrap())
                .unwrap()
        };
        assert!(argmax(10) < argmax(40));
        assert!(argmax(40) < argmax(79));
        for m in 0..fb.rows() {
            assert!(fb.row(m).iter().any(|&v| v > 0.0), "empty filter {m}");
        }
    }
}
