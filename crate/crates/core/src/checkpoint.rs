//! Checkpoint directories: one parameter blob per module plus a JSON manifest of
//! content hashes that is verified on load.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{parse_config, RunConfig};
use crate::error::{CoreError, Result};
use crate::model::{ModelParams, Module};
use crate::params::{sha256_hex, ParamSet};
use crate::scalar::Scalar;
use crate::synthesis::Codebook;
use crate::tokenizer::Tokenizer;
use crate::training::{Checkpoint, StageRecord};

pub const MANIFEST: &str = "manifest.json";
pub const CONFIG_FILE: &str = "config.toml";
pub const TOKENIZER_FILE: &str = "tokenizer.txt";
pub const CODEBOOK_FILE: &str = "codebook.bin";
const FORMAT: &str = "rolespeak-checkpoint v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModuleEntry {
    pub module: Module,
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub history: Vec<StageRecord>,
    pub step_count: usize,
    pub checkpoint_hash: String,
    pub config_hash: String,
    pub tokenizer_hash: String,
    #[serde(default)]
    pub codebook_hash: Option<String>,
    pub modules: Vec<ModuleEntry>,
}

/// Everything a checkpoint directory holds besides parameters.
#[derive(Debug, Clone)]
pub struct Artifacts {
    pub config_text: String,
    pub config: RunConfig,
    pub tokenizer: Tokenizer,
    pub codebook: Option<Codebook>,
}

impl Artifacts {
    pub fn new(config_text: String, tokenizer: Tokenizer, codebook: Option<Codebook>) -> Result<Self> {
        Ok(Self {
            config: parse_config(&config_text)?,
            config_text,
            tokenizer,
            codebook,
        })
    }
}

fn write(path: PathBuf, bytes: &[u8]) -> Result<()> {
    fs::write(&path, bytes).map_err(|e| CoreError::io(path, e))
}

fn read(path: PathBuf) -> Result<Vec<u8>> {
    fs::read(&path).map_err(|e| CoreError::io(path, e))
}

pub fn save_checkpoint<T: Scalar>(dir: impl AsRef<Path>, ckpt: &Checkpoint<T>, art: &Artifacts) -> Result<Manifest> {
    let dir = dir.as_ref();
    if art.config.model != ckpt.model {
        return Err(CoreError::Checkpoint("config model section differs from the checkpoint model".into()));
    }
    fs::create_dir_all(dir).map_err(|e| CoreError::io(dir, e))?;
    let mut modules = Vec::new();
    for m in Module::ALL {
        let bytes = ckpt.params.get(m).to_bytes();
        let file = format!("{}.bin", m.name());
        write(dir.join(&file), &bytes)?;
        modules.push(ModuleEntry {
            module: m,
            file,
            sha256: sha256_hex(&bytes),
        });
    }
    write(dir.join(CONFIG_FILE), art.config_text.as_bytes())?;
    art.tokenizer.save(dir.join(TOKENIZER_FILE))?;
    if let Some(cb) = &art.codebook {
        cb.save(dir.join(CODEBOOK_FILE))?;
    }
    let manifest = Manifest {
        format: FORMAT.into(),
        history: ckpt.history.clone(),
        step_count: ckpt.total_steps(),
        checkpoint_hash: ckpt.content_hash(),
        config_hash: sha256_hex(art.config_text.as_bytes()),
        tokenizer_hash: art.tokenizer.content_hash(),
        codebook_hash: art.codebook.as_ref().map(Codebook::content_hash),
        modules,
    };
    let json = serde_json::to_string_pretty(&manifest)?;
    write(dir.join(MANIFEST), json.as_bytes())?;
    Ok(manifest)
}

pub fn read_manifest(dir: impl AsRef<Path>) -> Result<Manifest> {
    let bytes = read(dir.as_ref().join(MANIFEST))?;
    let m: Manifest = serde_json::from_slice(&bytes)?;
    if m.format != FORMAT {
        return Err(CoreError::Checkpoint(format!("unsupported checkpoint format {:?}", m.format)));
    }
    Ok(m)
}

/// Loads and verifies every blob against the manifest.
pub fn load_checkpoint<T: Scalar>(dir: impl AsRef<Path>) -> Result<(Checkpoint<T>, Artifacts, Manifest)> {
    let dir = dir.as_ref();
    let manifest = read_manifest(dir)?;
    let config_text = String::from_utf8(read(dir.join(CONFIG_FILE))?)
        .map_err(|_| CoreError::Checkpoint("config is not UTF-8".into()))?;
    if sha256_hex(config_text.as_bytes()) != manifest.config_hash {
        return Err(CoreError::Checkpoint("config hash mismatch".into()));
    }
    let tokenizer = Tokenizer::load(dir.join(TOKENIZER_FILE), Some(&manifest.tokenizer_hash))?;
    let codebook = match &manifest.codebook_hash {
        Some(h) => {
            let cb = Codebook::load(dir.join(CODEBOOK_FILE))?;
            if &cb.content_hash() != h {
                return Err(CoreError::Checkpoint("codebook hash mismatch".into()));
            }
            Some(cb)
        }
        None => None,
    };
    let art = Artifacts::new(config_text, tokenizer, codebook)?;
    let mut sets: Vec<(Module, ParamSet<T>)> = Vec::new();
    for m in Module::ALL {
        let entry = manifest
            .modules
            .iter()
            .find(|e| e.module == m)
            .ok_or_else(|| CoreError::Checkpoint(format!("manifest lacks module {}", m.name())))?;
        let bytes = read(dir.join(&entry.file))?;
        if sha256_hex(&bytes) != entry.sha256 {
            return Err(CoreError::Checkpoint(format!("hash mismatch for module {}", m.name())));
        }
        sets.push((m, ParamSet::from_bytes(&bytes)?));
    }
    let mut init = ModelParams::<T>::init(&art.config.model)?;
    for (m, ps) in sets {
        let slot = init.get_mut(m);
        for (name, mat) in slot.iter() {
            if ps.get(name)?.shape() != mat.shape() {
                return Err(CoreError::Checkpoint(format!("parameter {name} has the wrong shape")));
            }
        }
        if ps.len() != slot.len() {
            return Err(CoreError::Checkpoint(format!("module {} has unexpected parameters", m.name())));
        }
        *slot = ps;
    }
    let ckpt = Checkpoint {
        model: art.config.model,
        params: init,
        history: manifest.history.clone(),
    };
    let joined: String = manifest
        .modules
        .iter()
        .map(|e| format!("{}={}\n", e.module.name(), e.sha256))
        .collect();
    if sha256_hex(joined.as_bytes()) != manifest.checkpoint_hash {
        return Err(CoreError::Checkpoint("checkpoint hash mismatch".into()));
    }
    Ok((ckpt, art, manifest))
}
