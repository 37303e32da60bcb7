use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use rolespeak_core::audio::{read_wav, write_wav, AssetDir, AssetSource};
use rolespeak_core::checkpoint::{load_checkpoint, save_checkpoint, Artifacts};
use rolespeak_core::config::{load_config, LoadedConfig};
use rolespeak_core::corpus::{read_corpus, read_jsonl, write_jsonl};
use rolespeak_core::data::{codebook_frames, response_pairs, DataBuilder};
use rolespeak_core::frontend::SpeechEncoder;
use rolespeak_core::prompt::assemble_prompt;
use rolespeak_core::respond::{measure_latency, RespondRequest, Responder, ResponseEvent, RoleEngine, StubResponder};
use rolespeak_core::synthesis::fit_codebook;
use rolespeak_core::tokenizer::Tokenizer;
use rolespeak_core::toy::toy_profiles;
use rolespeak_core::training::{train_cfm, train_stage1, train_stage2, Checkpoint, Stage};
use rolespeak_core::types::{ModalityPayload, RoleProfile};
use rolespeak_core::Scalar;

pub const PROFILES_FILE: &str = "profiles.jsonl";
pub const REFS_DIR: &str = "refs";

struct Inputs {
    loaded: LoadedConfig,
    records: Vec<rolespeak_core::types::DialogueRecord>,
    profiles: Vec<RoleProfile>,
    assets: AssetDir,
}

fn inputs(config: &Path, corpus: &Path) -> Result<Inputs> {
    let loaded = load_config(config).with_context(|| format!("loading {}", config.display()))?;
    let records = read_corpus(corpus).with_context(|| format!("reading {}", corpus.display()))?;
    let profiles = read_jsonl(loaded.resolve(&loaded.config.data.profiles))?;
    let assets = AssetDir::new(loaded.resolve(&loaded.config.data.assets));
    Ok(Inputs {
        loaded,
        records,
        profiles,
        assets,
    })
}

pub fn train<T: Scalar>(stage: &str, config: &Path, corpus: &Path, out: &Path, init: Option<&Path>) -> Result<()> {
    let stage = Stage::parse(stage)?;
    let inp = inputs(config, corpus)?;
    let cfg = &inp.loaded.config;
    let tokenizer = inp.loaded.tokenizer()?;
    let codebook = if inp.loaded.resolve(&cfg.codebook.path).exists() {
        Some(inp.loaded.codebook()?)
    } else {
        None
    };
    let mut ckpt = match init {
        Some(dir) => {
            let (c, _, _) = load_checkpoint::<T>(dir).with_context(|| format!("loading {}", dir.display()))?;
            ensure!(c.model == cfg.model, "--init checkpoint model differs from the config model section");
            c
        }
        None => Checkpoint::<T>::init(cfg.model)?,
    };
    let pairs = response_pairs(&inp.records, &inp.profiles, cfg.data.history_turns)?;
    let encoder = SpeechEncoder::with_params(cfg.model.encoder, ckpt.params.encoder.clone())?;
    let mut builder = DataBuilder::new(cfg.model, encoder, &tokenizer, &inp.assets);
    let need_codebook = || codebook.as_ref().context("this stage needs a codebook; run `rolespeak codebook` first");
    let report = match stage {
        Stage::One => {
            let ex = builder.text_examples(&pairs)?;
            train_stage1(&mut ckpt, &ex, &cfg.train.stage1)?
        }
        Stage::Two => {
            let ex = builder.speech_examples(&pairs, &ckpt.params, need_codebook()?)?;
            train_stage2(&mut ckpt, &ex, &cfg.train.stage2)?
        }
        Stage::Cfm => {
            let ex = builder.flow_examples(&pairs, &ckpt.params, need_codebook()?)?;
            train_cfm(&mut ckpt, &ex, &cfg.train.cfm)?
        }
    };
    let art = Artifacts::new(inp.loaded.text.clone(), tokenizer.clone(), codebook.clone())?;
    let manifest = save_checkpoint(out, &ckpt, &art)?;
    write_jsonl(&inp.profiles, out.join(PROFILES_FILE))?;
    let refs = AssetDir::new(out.join(REFS_DIR));
    for p in &inp.profiles {
        for id in &p.reference_audio_ids {
            refs.save(&inp.assets.load(id)?)?;
        }
    }
    let path = out.join(format!("train_{}.json", stage.name()));
    fs::write(&path, serde_json::to_string_pretty(&report)?)?;
    println!(
        "{}",
        serde_json::json!({
            "stage": stage.name(),
            "steps": report.steps,
            "initial_eval": report.initial_eval,
            "final_eval": report.final_eval,
            "loss_ratio": report.loss_ratio(),
            "elapsed_secs": report.elapsed_secs,
            "checkpoint_hash": manifest.checkpoint_hash,
        })
    );
    Ok(())
}

fn ckpt_profile(dir: &Path, role_id: &str) -> Result<RoleProfile> {
    let profiles: Vec<RoleProfile> = read_jsonl(dir.join(PROFILES_FILE))?;
    profiles
        .into_iter()
        .find(|p| p.role_id == role_id)
        .with_context(|| format!("no profile {role_id:?} in {}", dir.display()))
}

fn request(profile: RoleProfile, text: Option<String>, wav: Option<PathBuf>) -> Result<RespondRequest> {
    let audio = match &wav {
        Some(p) => {
            let mut a = read_wav(p).with_context(|| format!("reading {}", p.display()))?;
            a.asset_id = "input".into();
            Some(a)
        }
        None => None,
    };
    let input = match (text, &audio) {
        (Some(t), Some(a)) => ModalityPayload::speech_and_text(t, a.asset_id.clone()),
        (Some(t), None) => ModalityPayload::text(t),
        (None, Some(a)) => ModalityPayload::speech(a.asset_id.clone()),
        (None, None) => bail!("give --text, --wav or both"),
    };
    Ok(RespondRequest {
        profile,
        context: Vec::new(),
        input,
        input_audio: audio,
    })
}

pub fn chat(
    dir: &Path,
    role_id: &str,
    text: Option<String>,
    wav: Option<PathBuf>,
    emit_audio: Option<PathBuf>,
    text_only: bool,
) -> Result<()> {
    let (ckpt, art, _) = load_checkpoint::<f32>(dir)?;
    let codebook = art
        .codebook
        .as_ref()
        .context("checkpoint has no codebook; train stage 2 and cfm first")?;
    let req = request(ckpt_profile(dir, role_id)?, text, wav)?;
    let refs = AssetDir::new(dir.join(REFS_DIR));
    let mut respond = art.config.respond;
    respond.speech_output &= !text_only;
    let mut engine = RoleEngine::new(&ckpt, &art.tokenizer, codebook, &refs, art.config.decode, respond)?;
    let mut final_audio = None;
    engine.respond(&req, &mut |e| {
        if let ResponseEvent::Final { audio, .. } = &e {
            final_audio.clone_from(audio);
        }
        println!("{}", serde_json::to_string(&e).expect("events serialize"));
    })?;
    if let Some(path) = emit_audio {
        let audio = final_audio.context("the response has no audio")?;
        write_wav(&audio, &path)?;
    }
    Ok(())
}

pub fn bench_latency(
    dir: Option<&Path>,
    trials: usize,
    chunk_tokens: Option<usize>,
    role_id: Option<String>,
    text: &str,
    stub: bool,
    out: Option<PathBuf>,
) -> Result<()> {
    let report = if stub {
        let mut r = StubResponder::default();
        if let Some(n) = chunk_tokens {
            r.chunk_tokens = n;
        }
        let profile = toy_profiles().remove(0);
        measure_latency(&mut r, &request(profile, Some(text.to_owned()), None)?, trials)?
    } else {
        let dir = dir.context("--ckpt-dir is required without --stub")?;
        let (ckpt, art, _) = load_checkpoint::<f32>(dir)?;
        let codebook = art.codebook.as_ref().context("checkpoint has no codebook")?;
        let profile = match role_id {
            Some(id) => ckpt_profile(dir, &id)?,
            None => read_jsonl::<RoleProfile>(dir.join(PROFILES_FILE))?
                .into_iter()
                .next()
                .context("checkpoint has no profiles")?,
        };
        let refs = AssetDir::new(dir.join(REFS_DIR));
        let mut engine = RoleEngine::new(&ckpt, &art.tokenizer, codebook, &refs, art.config.decode, art.config.respond)?;
        if let Some(n) = chunk_tokens {
            engine.set_chunk_tokens(n);
        }
        let req = request(profile, Some(text.to_owned()), None)?;
        measure_latency(&mut engine as &mut dyn Responder, &req, trials)?
    };
    let json = serde_json::to_string_pretty(&report)?;
    if let Some(p) = out {
        fs::write(&p, &json)?;
    }
    println!("{json}");
    Ok(())
}

pub fn tokenizer(config: &Path, corpus: &Path, out: &Path) -> Result<()> {
    let inp = inputs(config, corpus)?;
    let pairs = response_pairs(&inp.records, &inp.profiles, inp.loaded.config.data.history_turns)?;
    let mut texts = Vec::with_capacity(2 * pairs.len());
    for p in &pairs {
        texts.push(assemble_prompt(p.profile, p.context, &p.query.payload)?.text);
        texts.push(format!(" {}", p.response.payload.text_content().unwrap_or_default().trim()));
    }
    let tok = Tokenizer::train(texts.iter().map(String::as_str), inp.loaded.config.tokenizer.merges);
    tok.save(out)?;
    println!(
        "{}",
        serde_json::json!({ "path": out, "vocab_size": tok.vocab_size(), "hash": tok.content_hash() })
    );
    Ok(())
}

pub fn codebook(config: &Path, corpus: &Path) -> Result<()> {
    let inp = inputs(config, corpus)?;
    let cfg = &inp.loaded.config;
    let pairs = response_pairs(&inp.records, &inp.profiles, cfg.data.history_turns)?;
    let frames = codebook_frames(&pairs, &inp.assets, cfg.model.flow.token_ratio)?;
    let cb = fit_codebook(&frames, cfg.model.speech_lm.vocab, cfg.codebook.seed, cfg.codebook.iters)?;
    let path = inp.loaded.resolve(&cfg.codebook.path);
    if let Some(h) = &cfg.codebook.hash {
        ensure!(&cb.content_hash() == h, "fitted codebook hash {} differs from the pinned {h}", cb.content_hash());
    }
    cb.save(&path)?;
    println!(
        "{}",
        serde_json::json!({ "path": path, "size": cb.size(), "hash": cb.content_hash() })
    );
    Ok(())
}
