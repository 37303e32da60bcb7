//! WAV ingestion (mono, 16 kHz) and asset lookup.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{CoreError, Result};
use crate::types::{AudioAsset, SAMPLE_RATE};

/// Linear-interpolation resampling to `to` Hz.
pub fn resample_linear(samples: &[f32], from: u32, to: u32) -> Vec<f32> {
    if from == to || samples.is_empty() {
        return samples.to_vec();
    }
    let out_len = ((samples.len() as u64 * to as u64) / from as u64).max(1) as usize;
    let ratio = from as f64 / to as f64;
    (0..out_len)
        .map(|i| {
            let pos = i as f64 * ratio;
            let j = pos.floor() as usize;
            let frac = (pos - j as f64) as f32;
            let a = samples[j.min(samples.len() - 1)];
            let b = samples[(j + 1).min(samples.len() - 1)];
            a + (b - a) * frac
        })
        .collect()
}

/// Reads any PCM/float WAV, downmixes to mono and resamples to 16 kHz.
pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioAsset> {
    let path = path.as_ref();
    let mut reader = hound::WavReader::open(path)?;
    let spec = reader.spec();
    let channels = spec.channels.max(1) as usize;
    let interleaved: Vec<f32> = match spec.sample_format {
        hound::SampleFormat::Float => reader.samples::<f32>().collect::<Result<_, _>>()?,
        hound::SampleFormat::Int => {
            let scale = 1.0 / (1u64 << (spec.bits_per_sample - 1)) as f32;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f32 * scale))
                .collect::<Result<_, _>>()?
        }
    };
    let mono: Vec<f32> = interleaved
        .chunks(channels)
        .map(|c| c.iter().sum::<f32>() / c.len() as f32)
        .collect();
    let samples = resample_linear(&mono, spec.sample_rate, SAMPLE_RATE);
    let asset_id = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("audio")
        .to_owned();
    AudioAsset::new(asset_id, samples)
}

/// 16-bit PCM value of a sample; reading it back and re-quantizing is lossless.
pub fn to_pcm16(s: f32) -> i16 {
    (s * 32768.0).round().clamp(i16::MIN as f32, i16::MAX as f32) as i16
}

/// Writes 16-bit PCM mono at the asset's rate.
pub fn write_wav(asset: &AudioAsset, path: impl AsRef<Path>) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: asset.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path.as_ref(), spec)?;
    for &s in &asset.samples {
        w.write_sample(to_pcm16(s))?;
    }
    w.finalize()?;
    Ok(())
}

/// Anything that can resolve an asset id to audio.
pub trait AssetSource {
    fn load(&self, asset_id: &str) -> Result<AudioAsset>;
}

impl AssetSource for HashMap<String, AudioAsset> {
    fn load(&self, asset_id: &str) -> Result<AudioAsset> {
        self.get(asset_id)
            .cloned()
            .ok_or_else(|| CoreError::Audio(format!("unknown asset {asset_id}")))
    }
}

/// Directory of `<asset_id>.wav` files.
#[derive(Debug, Clone)]
pub struct AssetDir {
    root: PathBuf,
}

impl AssetDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn path_of(&self, asset_id: &str) -> PathBuf {
        self.root.join(format!("{asset_id}.wav"))
    }

    pub fn save(&self, asset: &AudioAsset) -> Result<()> {
        fs::create_dir_all(&self.root).map_err(|e| CoreError::io(&self.root, e))?;
        write_wav(asset, self.path_of(&asset.asset_id))
    }
}

impl AssetSource for AssetDir {
    fn load(&self, asset_id: &str) -> Result<AudioAsset> {
        let mut a = read_wav(self.path_of(asset_id))?;
        a.asset_id = asset_id.to_owned();
        Ok(a)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wav_round_trip_and_resample() {
        let dir = tempfile::tempdir().unwrap();
        let samples: Vec<f32> = (0..1600).map(|i| (i as f32 * 0.05).sin() * 0.5).collect();
        let a = AudioAsset::new("tone", samples.clone()).unwrap();
        let store = AssetDir::new(dir.path());
        store.save(&a).unwrap();
        let b = store.load("tone").unwrap();
        assert_eq!(b.samples.len(), samples.len());
        let err = b
            .samples
            .iter()
            .zip(&samples)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f32::max);
        assert!(err < 1e-4);
        assert_eq!(resample_linear(&samples, 32_000, 16_000).len(), 800);
    }
}
