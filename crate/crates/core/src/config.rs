//! The single declarative run configuration (TOML) with content-hash pins for the
//! tokenizer and codebook artifacts.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::decode::DecodeConfig;
use crate::error::{CoreError, Result};
use crate::model::ModelConfig;
use crate::params::sha256_hex;
use crate::synthesis::Codebook;
use crate::tokenizer::Tokenizer;
use crate::training::{Stage, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenizerSection {
    pub path: PathBuf,
    /// Expected SHA-256 of the vocabulary file.
    #[serde(default)]
    pub hash: Option<String>,
    #[serde(default = "default_merges")]
    pub merges: usize,
}

fn default_merges() -> usize {
    2000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodebookSection {
    pub path: PathBuf,
    #[serde(default)]
    pub hash: Option<String>,
    #[serde(default = "default_iters")]
    pub iters: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_iters() -> usize {
    25
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub profiles: PathBuf,
    pub assets: PathBuf,
    /// Earlier turns kept in front of each query.
    #[serde(default = "default_history")]
    pub history_turns: usize,
}

fn default_history() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub stage1: TrainConfig,
    pub stage2: TrainConfig,
    pub cfm: TrainConfig,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            stage1: TrainConfig::stage1(),
            stage2: TrainConfig::stage2(),
            cfm: TrainConfig::cfm(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RespondSection {
    /// Speech tokens per synthesized audio chunk.
    pub chunk_tokens: usize,
    pub speech_output: bool,
    pub vocoder_iterations: usize,
    pub seed: u64,
    /// Upper bound on speech tokens per response.
    pub max_speech_tokens: usize,
}

impl Default for RespondSection {
    fn default() -> Self {
        Self {
            chunk_tokens: 25,
            speech_output: true,
            vocoder_iterations: 60,
            seed: 0,
            max_speech_tokens: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub tokenizer: TokenizerSection,
    pub codebook: CodebookSection,
    pub data: DataSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub decode: DecodeConfig,
    #[serde(default)]
    pub respond: RespondSection,
}

/// A parsed config together with the raw text hash and the directory relative paths
/// resolve against.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub text: String,
    pub hash: String,
    pub base_dir: PathBuf,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.stage1.validate()?;
        self.train.stage2.validate()?;
        self.train.cfm.validate()?;
        for (cfg, stage) in [
            (&self.train.stage1, Stage::One),
            (&self.train.stage2, Stage::Two),
            (&self.train.cfm, Stage::Cfm),
        ] {
            if cfg.stage != stage {
                return Err(CoreError::Config(format!("train section for {stage:?} declares stage {:?}", cfg.stage)));
            }
        }
        self.decode.validate()?;
        if self.respond.chunk_tokens == 0 {
            return Err(CoreError::Config("respond.chunk_tokens must be positive".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| CoreError::Config(e.to_string()))
    }
}

pub fn parse_config(text: &str) -> Result<RunConfig> {
    let cfg: RunConfig = toml::from_str(text).map_err(|e| CoreError::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: impl AsRef<Path>) -> Result<LoadedConfig> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
    let config = parse_config(&text)?;
    Ok(LoadedConfig {
        hash: sha256_hex(text.as_bytes()),
        base_dir: path.parent().map(Path::to_path_buf).unwrap_or_default(),
        config,
        text,
    })
}

impl LoadedConfig {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Loads the tokenizer, enforcing the pinned hash and the configured vocabulary size.
    pub fn tokenizer(&self) -> Result<Tokenizer> {
        let sec = &self.config.tokenizer;
        let tok = Tokenizer::load(self.resolve(&sec.path), sec.hash.as_deref())?;
        if tok.vocab_size() != self.config.model.language.vocab {
            return Err(CoreError::Config(format!(
                "tokenizer has {} entries but model.language.vocab is {}",
                tok.vocab_size(),
                self.config.model.language.vocab
            )));
        }
        Ok(tok)
    }

    /// Loads the codebook; a missing file is an error.
    pub fn codebook(&self) -> Result<Codebook> {
        let sec = &self.config.codebook;
        let path = self.resolve(&sec.path);
        if !path.exists() {
            return Err(CoreError::Config(format!("codebook {} not found", path.display())));
        }
        let cb = Codebook::load(&path)?;
        if let Some(h) = &sec.hash {
            if &cb.content_hash() != h {
                return Err(CoreError::Config(format!(
                    "codebook hash mismatch: expected {h}, found {}",
                    cb.content_hash()
                )));
            }
        }
        if cb.size() != self.config.model.speech_lm.vocab {
            return Err(CoreError::Config(format!(
                "codebook has {} entries but model.speech_lm.vocab is {}",
                cb.size(),
                self.config.model.speech_lm.vocab
            )));
        }
        Ok(cb)
    }
}
