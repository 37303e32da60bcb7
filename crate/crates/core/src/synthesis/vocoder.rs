//! Griffin-Lim vocoder for log-amplitude mel spectrograms.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;

use crate::dsp::{MelAnalyzer, MelConfig};
use crate::error::{CoreError, Result};
use crate::tensor::Matrix;
use crate::types::AudioAsset;

pub struct Vocoder {
    analyzer: MelAnalyzer,
    /// Mel-to-linear pseudo-inverse, `n_bins × n_mels`.
    inverse: Matrix<f64>,
    pub iterations: usize,
    pub momentum: f64,
}

impl Vocoder {
    pub fn new(cfg: MelConfig) -> Result<Self> {
        let analyzer = MelAnalyzer::new(cfg);
        let fb = analyzer.filters();
        let m = DMatrix::from_row_slice(fb.rows(), fb.cols(), fb.as_slice());
        let pinv = m
            .pseudo_inverse(1e-10)
            .map_err(|e| CoreError::Config(format!("mel pseudo-inverse: {e}")))?;
        let inverse = Matrix::from_fn(pinv.nrows(), pinv.ncols(), |r, c| pinv[(r, c)]);
        Ok(Self {
            analyzer,
            inverse,
            iterations: 60,
            momentum: 0.99,
        })
    }

    pub fn config(&self) -> &MelConfig {
        &self.analyzer.cfg
    }

    /// Linear magnitudes implied by a log-mel spectrogram (negative values clamped).
    fn magnitudes(&self, mel: &Matrix<f64>) -> Matrix<f64> {
        mel.map(f64::exp).matmul_t(&self.inverse).map(|v| v.max(0.0))
    }

    /// Waveform of `frames × hop` samples; phase initialised from `seed`.
    pub fn vocode(&self, mel: &Matrix<f64>, seed: u64) -> Result<AudioAsset> {
        let cfg = self.analyzer.cfg;
        if mel.rows() == 0 || mel.cols() != cfg.n_mels {
            return Err(CoreError::Shape(format!("mel must be F×{} with F ≥ 1", cfg.n_mels)));
        }
        if !mel.is_finite() {
            return Err(CoreError::NonFinite("vocoder input".into()));
        }
        let mags = self.magnitudes(mel);
        let len = mel.rows() * cfg.hop;
        let stft = self.analyzer.stft();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut angles: Vec<Vec<Complex<f64>>> = (0..mel.rows())
            .map(|_| {
                (0..mags.cols())
                    .map(|_| Complex::from_polar(1.0, rng.random::<f64>() * std::f64::consts::TAU))
                    .collect()
            })
            .collect();
        let build = |angles: &[Vec<Complex<f64>>]| -> Vec<Vec<Complex<f64>>> {
            angles
                .iter()
                .enumerate()
                .map(|(t, row)| row.iter().zip(mags.row(t)).map(|(a, &m)| a * m).collect())
                .collect()
        };
        let alpha = self.momentum / (1.0 + self.momentum);
        let mut prev: Option<Vec<Vec<Complex<f64>>>> = None;
        for _ in 0..self.iterations {
            let signal = stft.synthesize(&build(&angles), len);
            let rebuilt = stft.analyze(&signal);
            for (t, row) in angles.iter_mut().enumerate() {
                for (k, a) in row.iter_mut().enumerate() {
                    let mut z = rebuilt[t][k];
                    if let Some(p) = &prev {
                        z -= p[t][k] * alpha;
                    }
                    let n = z.norm();
                    *a = if n > 1e-16 { z / n } else { Complex::new(1.0, 0.0) };
                }
            }
            prev = Some(rebuilt);
        }
        let signal = stft.synthesize(&build(&angles), len);
        let samples = signal.iter().map(|&v| v.clamp(-1.0, 1.0) as f32).collect();
        AudioAsset::new("vocoded", samples)
    }
}
