//! Acceptance suite. Runs every criterion in order, prints one PASS/FAIL line per
//! criterion and exits non-zero if any failed.

use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rolespeak_core::autograd::{Tape, Var};
use rolespeak_core::checkpoint::{load_checkpoint, save_checkpoint, Artifacts};
use rolespeak_core::config::{load_config, RespondSection};
use rolespeak_core::data::{codebook_frames, response_pairs, DataBuilder};
use rolespeak_core::decode::DecodeConfig;
use rolespeak_core::frontend::{self, adapter_tape, init_adapter, AdapterConfig, SpeechEncoder};
use rolespeak_core::language::{self, init_language, EmbeddingSequence, LanguageConfig, Modality};
use rolespeak_core::model::{Module, SpeechExample};
use rolespeak_core::params::{Binding, ParamSet};
use rolespeak_core::respond::{collect_events, RespondRequest, ResponseEvent, RoleEngine};
use rolespeak_core::speech_decoder::{
    self, init_projection, init_speech_lm, predict_speech_tokens, project_context, repetition_rate, ConditioningPrefix,
    SpeechLmConfig, SpeechTokenSequence,
};
use rolespeak_core::synthesis::flow::{cfm_loss_tape, cfm_path, init_flow, initial_noise, sample_mel, OracleField};
use rolespeak_core::synthesis::{fit_codebook, Codebook, FlowConditions, FlowConfig, SpeakerEmbedder};
use rolespeak_core::tokenizer::Tokenizer;
use rolespeak_core::toy::{toy_model, toy_train, write_fixture, ToyWorld};
use rolespeak_core::training::{train_stage1, train_stage2, train_stage2_unchecked, Checkpoint, TrainReport};
use rolespeak_core::types::{AudioAsset, DialogueRecord, Language, ModalityPayload};
use rolespeak_core::Matrix;
use rolespeak_eval::fixture::speaker_fixture;
use rolespeak_eval::similarity::{embed_speakers, is_voice_match, similarity_matrix, voice_match};
use rolespeak_forge::clients::{SimilarityClient, StubAsr, StubSimilarity};
use rolespeak_forge::filters::{edit_distance, filter_audio_quality, wer, AudioThresholds};
use rolespeak_forge::fixture::{clean_fixture, violation_fixture, FilterFixture};
use rolespeak_forge::verify::{verify_corpus, Reason, Verdict, VerifyClients, VerifyConfig};

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

// ---------------------------------------------------------------- 1

fn group_oracle(frames: &Matrix<f64>, k: usize) -> Option<Vec<Vec<f64>>> {
    let (n, _) = frames.shape();
    if k == 0 || n < k {
        return None;
    }
    let mut out = Vec::new();
    for g in 0..n / k {
        let mut row = Vec::new();
        for j in 0..k {
            row.extend_from_slice(frames.row(g * k + j));
        }
        out.push(row);
    }
    Some(out)
}

fn c1_group_frames() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut errors = 0;
    for trial in 0..200 {
        let n = rng.random_range(1..=64);
        let d = rng.random_range(1..=16);
        let k = rng.random_range(1..=8);
        let frames = Matrix::<f64>::randn(n, d, 1.0, &mut rng);
        let got = frontend::group_frames(&frames, k);
        match (group_oracle(&frames, k), got) {
            (None, Err(_)) => errors += 1,
            (Some(rows), Ok(g)) => {
                check(g.frames.rows() == rows.len(), format!("trial {trial}: row count"))?;
                for (r, want) in rows.iter().enumerate() {
                    let bits: Vec<u64> = g.frames.row(r).iter().map(|v| v.to_bits()).collect();
                    let wbits: Vec<u64> = want.iter().map(|v| v.to_bits()).collect();
                    check(bits == wbits, format!("trial {trial} (N_f={n}, d={d}, k={k}) row {r} differs"))?;
                }
            }
            (want, got) => return Err(format!("trial {trial}: oracle {:?} vs {:?}", want.is_some(), got.is_ok())),
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(secs < 5.0, format!("took {secs:.2}s"))?;
    Ok(format!("200 triples bit-exact ({errors} short inputs rejected), {secs:.3}s < 5s"))
}

// ---------------------------------------------------------------- 2

fn c2_uniform_loss() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    let mut worst_hot: f64 = 0.0;
    for v in [16usize, 64, 256] {
        let n = 12;
        let targets: Vec<u32> = (0..n).map(|_| rng.random_range(0..v as u32)).collect();
        let mask: Vec<bool> = (0..n).map(|i| i >= 3).collect();
        let zero = Matrix::<f64>::zeros(n, v);
        let ll = language::language_loss(&zero, &targets, &mask).map_err(err)?;
        let prefix = 4;
        let st: Vec<u32> = targets[..7].to_vec();
        let sz = Matrix::<f64>::zeros(prefix + 1 + st.len(), v);
        let sl = speech_decoder::speech_loss(&sz, prefix, &st).map_err(err)?;
        let ln_v = (v as f64).ln();
        worst = worst.max((ll - ln_v).abs()).max((sl - ln_v).abs());

        // One-hot logits on the scored class.
        let mut hot = Matrix::<f64>::zeros(n, v);
        for t in 0..n - 1 {
            hot.set(t, targets[t + 1] as usize, 60.0);
        }
        let mut shot = Matrix::<f64>::zeros(prefix + 1 + st.len(), v);
        for (i, &id) in st.iter().enumerate() {
            shot.set(prefix + i, id as usize, 60.0);
        }
        let lh = language::language_loss(&hot, &targets, &mask).map_err(err)?;
        let sh = speech_decoder::speech_loss(&shot, prefix, &st).map_err(err)?;
        worst_hot = worst_hot.max(lh).max(sh);
    }
    check(worst <= 1e-6, format!("uniform loss off ln V by {worst:e}"))?;
    check(worst_hot < 1e-6, format!("one-hot loss {worst_hot:e}"))?;
    Ok(format!("|loss - ln V| <= {worst:.1e} (tol 1e-6), one-hot loss {worst_hot:.1e} < 1e-6"))
}

// ---------------------------------------------------------------- 3

fn lm_cfg() -> LanguageConfig {
    LanguageConfig {
        layers: 2,
        d_model: 16,
        heads: 2,
        ff_mult: 2,
        vocab: 24,
    }
}

fn slm_cfg() -> SpeechLmConfig {
    SpeechLmConfig {
        layers: 2,
        d_model: 16,
        heads: 2,
        ff_mult: 2,
        vocab: 20,
        context_dim: 16,
    }
}

fn c3_causality() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let lcfg = lm_cfg();
    let lm = init_language::<f64>(&lcfg, 5);
    let scfg = slm_cfg();
    let slm = init_speech_lm::<f64>(&scfg, 6);
    let mut worst: f64 = 0.0;
    for trial in 0..50 {
        let n = rng.random_range(3..=14);
        let emb = Matrix::<f64>::randn(n, lcfg.d_model, 1.0, &mut rng);
        let j = rng.random_range(1..n);
        let mut pert = emb.clone();
        for v in pert.row_mut(j) {
            *v += rng.random_range(-2.0..2.0);
        }
        let seq = |m: &Matrix<f64>| EmbeddingSequence {
            embeddings: m.clone(),
            modality_mask: vec![Modality::Text; n],
        };
        let (a, _) = language::forward(&seq(&emb), &lm, &lcfg).map_err(err)?;
        let (b, _) = language::forward(&seq(&pert), &lm, &lcfg).map_err(err)?;
        let d = a.slice_rows(0, j).max_abs_diff(&b.slice_rows(0, j));
        worst = worst.max(d);
        check(d == 0.0, format!("language trial {trial}: rows < {j} moved by {d:e}"))?;
        check(a.slice_rows(j, 1).max_abs_diff(&b.slice_rows(j, 1)) > 0.0, "perturbation had no effect")?;

        let p = rng.random_range(1..=4);
        let len = rng.random_range(2..=10);
        let prefix = ConditioningPrefix {
            rows: Matrix::<f64>::randn(p, scfg.d_model, 1.0, &mut rng),
        };
        let toks: Vec<u32> = (0..len).map(|_| rng.random_range(0..scfg.vocab as u32)).collect();
        let j = rng.random_range(0..len);
        let mut pt = toks.clone();
        pt[j] = (pt[j] + 1 + rng.random_range(0..scfg.vocab as u32 - 1)) % scfg.vocab as u32;
        let a = speech_decoder::speech_logits(&prefix, &toks, &slm, &scfg).map_err(err)?;
        let b = speech_decoder::speech_logits(&prefix, &pt, &slm, &scfg).map_err(err)?;
        // Token j sits at row p + 1 + j.
        let keep = p + 1 + j;
        let d = a.slice_rows(0, keep).max_abs_diff(&b.slice_rows(0, keep));
        worst = worst.max(d);
        check(d == 0.0, format!("speech trial {trial}: rows < {keep} moved by {d:e}"))?;
    }
    Ok(format!("50 inputs per model, earlier logits bit-identical (max diff {worst:e})"))
}

// ---------------------------------------------------------------- 4

const FD_H: f64 = 1e-5;
const GRAD_RTOL: f64 = 1e-4;
const GRAD_FLOOR: f64 = 1e-5;
const FD_SAMPLES: usize = 24;

type LossBuilder<'a> = dyn Fn(&mut Tape<f64>, &[Binding]) -> Var + 'a;

fn loss_value(sets: &[ParamSet<f64>], build: &LossBuilder<'_>) -> f64 {
    let mut tape = Tape::new();
    let b: Vec<Binding> = sets.iter().map(|s| s.bind(&mut tape, false)).collect();
    let l = build(&mut tape, &b);
    tape.scalar(l)
}

/// Largest relative error between tape gradients and central differences.
fn grad_check(sets: &mut [ParamSet<f64>], build: &LossBuilder<'_>, seed: u64) -> (f64, usize) {
    let mut tape = Tape::new();
    let b: Vec<Binding> = sets.iter().map(|s| s.bind(&mut tape, true)).collect();
    let l = build(&mut tape, &b);
    let mut grads = tape.backward(l);
    let analytic: Vec<ParamSet<f64>> = b.iter().zip(sets.iter()).map(|(bi, s)| bi.gradients(s, &mut grads)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for i in 0..sets.len() {
        let names: Vec<String> = sets[i].iter().map(|(n, _)| n.clone()).collect();
        for name in names {
            let len = sets[i].get(&name).unwrap().len();
            let idx: Vec<usize> = if len <= FD_SAMPLES {
                (0..len).collect()
            } else {
                (0..FD_SAMPLES).map(|_| rng.random_range(0..len)).collect()
            };
            for k in idx {
                let orig = sets[i].get(&name).unwrap().as_slice()[k];
                sets[i].get_mut(&name).unwrap().as_mut_slice()[k] = orig + FD_H;
                let lp = loss_value(sets, build);
                sets[i].get_mut(&name).unwrap().as_mut_slice()[k] = orig - FD_H;
                let lm = loss_value(sets, build);
                sets[i].get_mut(&name).unwrap().as_mut_slice()[k] = orig;
                let num = (lp - lm) / (2.0 * FD_H);
                let ana = analytic[i].get(&name).unwrap().as_slice()[k];
                let rel = (ana - num).abs() / ana.abs().max(num.abs()).max(GRAD_FLOOR);
                worst = worst.max(rel);
                count += 1;
            }
        }
    }
    (worst, count)
}

fn c4_gradients() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut lines = Vec::new();

    let lcfg = LanguageConfig {
        layers: 2,
        d_model: 8,
        heads: 2,
        ff_mult: 2,
        vocab: 14,
    };
    let tokens: Vec<u32> = (0..7).map(|_| rng.random_range(5..lcfg.vocab as u32)).collect();
    let mask: Vec<bool> = (0..7).map(|i| i >= 2).collect();
    let build = |t: &mut Tape<f64>, b: &[Binding]| {
        let x = language::splice_tape(t, &b[0], &tokens, &[]).unwrap();
        let (logits, _) = language::forward_tape(t, &b[0], x, &lcfg);
        language::language_loss_tape(t, logits, &tokens, &mask).unwrap()
    };
    let mut sets = vec![init_language::<f64>(&lcfg, 11)];
    lines.push(("language_loss", grad_check(&mut sets, &build, 40)));

    let scfg = SpeechLmConfig {
        layers: 2,
        d_model: 8,
        heads: 2,
        ff_mult: 2,
        vocab: 10,
        context_dim: 6,
    };
    let ctx = Matrix::<f64>::randn(3, scfg.context_dim, 1.0, &mut rng);
    let st: Vec<u32> = (0..5).map(|_| rng.random_range(0..scfg.vocab as u32)).collect();
    let build = |t: &mut Tape<f64>, b: &[Binding]| {
        let h = t.constant(ctx.clone());
        let prefix = speech_decoder::project_tape(t, &b[0], h);
        let logits = speech_decoder::speech_lm_tape(t, &b[1], prefix, &st, &scfg);
        let mut tg = st.clone();
        tg.push(scfg.eos());
        speech_decoder::speech_loss_tape(t, logits, ctx.rows(), &tg).unwrap()
    };
    let mut sets = vec![init_projection::<f64>(&scfg, 12), init_speech_lm::<f64>(&scfg, 13)];
    lines.push(("speech_loss", grad_check(&mut sets, &build, 41)));

    let fcfg = FlowConfig {
        mel_bins: 6,
        hidden: 8,
        layers: 2,
        kernel: 3,
        time_dim: 4,
        speaker_dim: 4,
        context_dim: 3,
        token_ratio: 2,
        sigma_min: 1e-4,
        steps: 4,
    };
    let frames = 5;
    let x1 = Matrix::<f64>::randn(frames, fcfg.mel_bins, 1.0, &mut rng);
    let x0 = Matrix::<f64>::randn(frames, fcfg.mel_bins, 1.0, &mut rng);
    let cond = FlowConditions {
        token_frames: Matrix::randn(frames, fcfg.mel_bins, 1.0, &mut rng),
        speaker: (0..fcfg.speaker_dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
        context: (0..fcfg.context_dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
    };
    let build = |t: &mut Tape<f64>, b: &[Binding]| cfm_loss_tape(t, &b[0], &x1, &cond, 0.37, &x0, fcfg.sigma_min, &fcfg).unwrap();
    let mut sets = vec![init_flow::<f64>(&fcfg, 14)];
    lines.push(("cfm_loss", grad_check(&mut sets, &build, 42)));

    let acfg = AdapterConfig {
        input_dim: 12,
        hidden: 10,
        output_dim: 8,
    };
    let xin = Matrix::<f64>::randn(4, acfg.input_dim, 1.0, &mut rng);
    let target = Matrix::<f64>::randn(4, acfg.output_dim, 1.0, &mut rng);
    let build = |t: &mut Tape<f64>, b: &[Binding]| {
        let x = t.constant(xin.clone());
        let y = adapter_tape(t, &b[0], x);
        let tg = t.constant(target.clone());
        t.mse(y, tg)
    };
    let mut sets = vec![init_adapter::<f64>(&acfg, 15)];
    lines.push(("adapter probe", grad_check(&mut sets, &build, 43)));

    let secs = start.elapsed().as_secs_f64();
    let summary: Vec<String> = lines.iter().map(|(n, (r, c))| format!("{n} {r:.1e} over {c}")).collect();
    for (n, (r, _)) in &lines {
        check(*r <= GRAD_RTOL, format!("{n}: rel error {r:e} > {GRAD_RTOL:e}"))?;
    }
    check(secs < 120.0, format!("took {secs:.1}s"))?;
    Ok(format!("max rel error (tol 1e-4): {}; {secs:.1}s < 120s", summary.join(", ")))
}

// ---------------------------------------------------------------- 5

fn c5_ot_cfm() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (frames, bins, seed) = (9, 80, 77);
    let x1 = Matrix::<f64>::randn(frames, bins, 1.0, &mut rng);
    let x0 = initial_noise::<f64>(frames, bins, seed);
    let cond = FlowConditions {
        token_frames: Matrix::zeros(frames, bins),
        speaker: Vec::new(),
        context: Vec::new(),
    };
    let field = OracleField {
        x0: x0.clone(),
        x1: x1.clone(),
        sigma_min: 0.0,
    };
    let mut worst: f64 = 0.0;
    for steps in [1, 2, 10] {
        let out = sample_mel(&field, &cond, bins, steps, seed).map_err(err)?;
        let d = out.max_abs_diff(&x1);
        check(d <= 1e-6, format!("steps {steps}: {d:e}"))?;
        worst = worst.max(d);
    }
    let bits = |m: &Matrix<f64>| m.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    check(bits(&cfm_path(&x0, &x1, 0.0, 0.0)) == bits(&x0), "x_{t=0} != x0")?;
    check(bits(&cfm_path(&x0, &x1, 1.0, 0.0)) == bits(&x1), "x_{t=1} != x1")?;
    Ok(format!("steps {{1,2,10}} reach x1 within {worst:.1e} (tol 1e-6); endpoints exact"))
}

// ---------------------------------------------------------------- 6 and 8

struct Trained {
    world: ToyWorld,
    tok: Tokenizer,
    codebook: Codebook,
    ckpt: Checkpoint<f64>,
    stage1: TrainReport,
    stage2: TrainReport,
    freeze: Result<(), String>,
}

const TOY_STEPS: usize = 300;

fn train_toy(dir: &std::path::Path) -> Result<Trained, String> {
    let world = ToyWorld::build(8, 4).map_err(err)?;
    let tok = world.train_tokenizer(120).map_err(err)?;
    let model = toy_model(tok.vocab_size(), 16);
    let pairs = response_pairs(&world.records, &world.profiles, 2).map_err(err)?;
    let codebook = fit_codebook(&codebook_frames(&pairs, &world.assets, 2).map_err(err)?, 16, 3, 20).map_err(err)?;
    let tr = toy_train(TOY_STEPS);
    let mut ckpt = Checkpoint::<f64>::init(model).map_err(err)?;
    let enc = SpeechEncoder::new(model.encoder).map_err(err)?;
    let mut b = DataBuilder::new(model, enc, &tok, &world.assets);
    let tx = b.text_examples(&pairs).map_err(err)?;
    let stage1 = train_stage1(&mut ckpt, &tx, &tr.stage1).map_err(err)?;

    let fix = write_fixture(&dir.join("fixture"), &world, 120, 16, TOY_STEPS).map_err(err)?;
    let mut cfg = load_config(&fix.config).map_err(err)?.config;
    cfg.model = model;
    let art = Artifacts::new(cfg.to_toml().map_err(err)?, tok.clone(), Some(codebook.clone())).map_err(err)?;
    let m1 = save_checkpoint(dir.join("stage1"), &ckpt, &art).map_err(err)?;
    let (reloaded, _, _) = load_checkpoint::<f64>(dir.join("stage1")).map_err(err)?;

    let sx = b.speech_examples(&pairs, &reloaded.params, &codebook).map_err(err)?;
    let mut ckpt = reloaded;
    let stage2 = train_stage2(&mut ckpt, &sx, &tr.stage2).map_err(err)?;
    let m2 = save_checkpoint(dir.join("stage2"), &ckpt, &art).map_err(err)?;

    let hash = |m: &rolespeak_core::checkpoint::Manifest, module: Module| {
        m.modules.iter().find(|e| e.module == module).map(|e| e.sha256.clone())
    };
    let mut freeze = Ok(());
    for module in [Module::Adapter, Module::Language] {
        if hash(&m1, module).is_none() || hash(&m1, module) != hash(&m2, module) {
            freeze = Err(format!("{} changed during stage 2", module.name()));
        }
    }
    for module in [Module::Projection, Module::SpeechLm] {
        if hash(&m1, module) == hash(&m2, module) {
            freeze = Err(format!("{} did not train in stage 2", module.name()));
        }
    }
    Ok(Trained {
        world,
        tok,
        codebook,
        ckpt,
        stage1,
        stage2,
        freeze,
    })
}

fn c6_freeze(t: &Trained) -> Outcome {
    t.freeze.clone()?;
    Ok("adapter and language-core hashes after stage 2 equal the stage-1 checkpoint".into())
}

fn c8_convergence(first: &Trained, second: &Trained, secs: f64) -> Outcome {
    let (r1, r2) = (first.stage1.loss_ratio(), first.stage2.loss_ratio());
    check(first.stage1.steps <= 2000 && first.stage2.steps <= 2000, "step budget exceeded")?;
    check(first.stage1.batch_size == 8 && first.stage2.batch_size == 8, "batch size is not 8")?;
    check(r1 <= 0.5, format!("stage 1 loss ratio {r1:.3}"))?;
    check(r2 <= 0.5, format!("stage 2 loss ratio {r2:.3}"))?;
    let (h1, h2) = (first.ckpt.content_hash(), second.ckpt.content_hash());
    check(h1 == h2, format!("rerun hash {h2} != {h1}"))?;
    check(secs < 900.0, format!("took {secs:.0}s"))?;
    Ok(format!(
        "{TOY_STEPS} steps, batch 8: stage 1 {:.3} -> {:.3} (x{r1:.2}), stage 2 {:.3} -> {:.3} (x{r2:.2}); rerun hash {}; {secs:.0}s < 900s",
        first.stage1.initial_eval,
        first.stage1.final_eval,
        first.stage2.initial_eval,
        first.stage2.final_eval,
        &h1[..12]
    ))
}

// ---------------------------------------------------------------- 7

const SYN_CLASSES: usize = 8;
const SYN_LEN: usize = 20;
const SYN_VOCAB: usize = 32;
const SYN_PREFIX: usize = 4;

fn syn_context(base: &Matrix<f64>, rng: &mut ChaCha8Rng) -> Matrix<f64> {
    let noise = Matrix::<f64>::randn(base.rows(), base.cols(), 0.1, rng);
    base.zip_map(&noise, |a, b| a + b)
}

fn token_error_rate(pred: &[u32], target: &[u32]) -> f64 {
    edit_distance(pred, target) as f64 / target.len() as f64
}

fn c7_prefix_corpus() -> Outcome {
    let model = toy_model(16, SYN_VOCAB);
    let d = model.speech_lm.context_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut classes = Vec::new();
    for _ in 0..SYN_CLASSES {
        let base = Matrix::<f64>::randn(SYN_PREFIX, d, 1.0, &mut rng);
        let mut pool: Vec<u32> = (0..SYN_VOCAB as u32).collect();
        let mut seq = Vec::with_capacity(SYN_LEN);
        for _ in 0..SYN_LEN {
            seq.push(pool.swap_remove(rng.random_range(0..pool.len())));
        }
        classes.push((base, seq));
    }
    let mut train = Vec::new();
    for _ in 0..4 {
        for (base, seq) in &classes {
            train.push(SpeechExample {
                context: syn_context(base, &mut rng),
                targets: seq.clone(),
            });
        }
    }
    let mut ckpt = Checkpoint::<f64>::init(model).map_err(err)?;
    let mut cfg = toy_train(600).stage2;
    cfg.seed = 7;
    let report = train_stage2_unchecked(&mut ckpt, &train, &cfg).map_err(err)?;

    let decode = DecodeConfig::greedy(SYN_LEN + 4);
    let run = |ctx: Matrix<f64>| -> Result<Vec<u32>, String> {
        let h = language::ContextRepresentations { states: ctx };
        let prefix = project_context(&h, &ckpt.params.projection).map_err(err)?;
        let g = predict_speech_tokens(
            &prefix,
            &SpeechTokenSequence { tokens: Vec::new() },
            &ckpt.params.speech_lm,
            &model.speech_lm,
            &decode,
            |_| {},
        )
        .map_err(err)?;
        Ok(g.tokens.tokens)
    };
    let (mut ter_c, mut ter_z, mut rep_c, mut rep_z) = (0.0, 0.0, 0.0, 0.0);
    for (base, seq) in &classes {
        let with = run(syn_context(base, &mut rng))?;
        let zero = run(Matrix::zeros(SYN_PREFIX, d))?;
        ter_c += token_error_rate(&with, seq);
        ter_z += token_error_rate(&zero, seq);
        rep_c += if with.is_empty() { 1.0 } else { repetition_rate(&with, 1).map_err(err)? };
        rep_z += if zero.is_empty() { 1.0 } else { repetition_rate(&zero, 1).map_err(err)? };
    }
    let n = SYN_CLASSES as f64;
    let (ter_c, ter_z, rep_c, rep_z) = (ter_c / n, ter_z / n, rep_c / n, rep_z / n);
    let msg = format!(
        "TER {:.1}% with prefix (< 5%), {:.1}% zeroed (> 50%); 1-gram repetition {rep_c:.3} <= {rep_z:.3}; train loss x{:.3}",
        ter_c * 100.0,
        ter_z * 100.0,
        report.loss_ratio()
    );
    check(ter_c < 0.05 && ter_z > 0.5 && rep_c <= rep_z, msg.clone())?;
    Ok(msg)
}

// ---------------------------------------------------------------- 9

/// Minimum over every edit path, enumerated recursively without memoisation.
fn exhaustive_edits(a: &[u8], b: &[u8]) -> usize {
    match (a, b) {
        ([], _) => b.len(),
        (_, []) => a.len(),
        ([x, ra @ ..], [y, rb @ ..]) => {
            let diag = exhaustive_edits(ra, rb) + usize::from(x != y);
            let del = exhaustive_edits(ra, b) + 1;
            let ins = exhaustive_edits(a, rb) + 1;
            diag.min(del).min(ins)
        }
    }
}

struct ConstSim(f64);

impl SimilarityClient for ConstSim {
    fn similarity(&self, _: &AudioAsset, _: &AudioAsset) -> rolespeak_forge::Result<f64> {
        Ok(self.0)
    }
}

fn audio_keep(fx: &FilterFixture, r: &DialogueRecord, sim: &dyn SimilarityClient) -> Result<bool, String> {
    let asr = StubAsr { ledger: fx.ledger.clone() };
    Ok(filter_audio_quality(r, &fx.assets, &asr, sim, &fx.refs, Language::En, AudioThresholds::default())
        .map_err(err)?
        .keep)
}

fn c9_forge_filters() -> Outcome {
    let fx = violation_fixture().map_err(err)?;
    let asr = StubAsr { ledger: fx.ledger.clone() };
    let sim = StubSimilarity::default();
    let clients = VerifyClients {
        asr: &asr,
        sim: &sim,
        assets: &fx.assets,
        refs: &fx.refs,
    };
    let report = verify_corpus(&fx.records, &clients, &VerifyConfig::default()).map_err(err)?;
    let got: Vec<(String, Verdict)> = report.verdicts.iter().map(|v| (v.dialogue_id.clone(), v.verdict)).collect();
    let want = [
        ("v-pattern", Reason::Pattern),
        ("v-short", Reason::TooShort),
        ("v-style", Reason::AssistantStyle),
        ("v-wer", Reason::Wer),
        ("v-sim", Reason::SpeakerSim),
    ];
    let want: Vec<(String, Verdict)> = want.iter().map(|(id, r)| (id.to_string(), Verdict::Reject(*r))).collect();
    check(got == want, format!("verdicts {got:?}"))?;

    // Boundary values keep.
    let clean = clean_fixture(1).map_err(err)?;
    let r = &clean.records[0];
    check(audio_keep(&clean, r, &ConstSim(0.8))?, "similarity 0.8 rejected")?;
    let mut r10 = r.clone();
    let aid = r.turns[0].payload.audio_ref().unwrap().to_owned();
    r10.turns[0].payload = ModalityPayload::speech_and_text("one two three four five six seven eight nine ten", aid.clone());
    clean.ledger.insert(&clean.assets[&aid], "one two three four five six seven eight nine tan");
    let w = wer("one two three four five six seven eight nine ten", "one two three four five six seven eight nine tan", Language::En)
        .map_err(err)?;
    check(w == 10.0, format!("WER {w}"))?;
    check(audio_keep(&clean, &r10, &ConstSim(1.0))?, "WER 10.0 rejected")?;

    // DP against every edit path.
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut pairs = 0;
    for la in 0..=6 {
        for lb in 0..=6 {
            for _ in 0..20 {
                let a: Vec<u8> = (0..la).map(|_| rng.random_range(0..3)).collect();
                let b: Vec<u8> = (0..lb).map(|_| rng.random_range(0..3)).collect();
                let (dp, ex) = (edit_distance(&a, &b), exhaustive_edits(&a, &b));
                check(dp == ex, format!("{a:?} vs {b:?}: dp {dp}, exhaustive {ex}"))?;
                pairs += 1;
            }
        }
    }
    Ok(format!("5 fixture verdicts exact; WER 10.0 and sim 0.8 keep; DP == exhaustive on {pairs} pairs (len <= 6)"))
}

// ---------------------------------------------------------------- 10

fn c10_streaming(t: &Trained) -> Outcome {
    let chunk = 5;
    let respond = RespondSection {
        chunk_tokens: chunk,
        vocoder_iterations: 4,
        max_speech_tokens: 24,
        ..RespondSection::default()
    };
    let mut text = DecodeConfig::greedy(12);
    text.min_len = 3;
    let mut engine = RoleEngine::new(&t.ckpt, &t.tok, &t.codebook, &t.world.assets, text, respond).map_err(err)?;
    engine.speech_decode.min_len = 3 * chunk;
    let req = RespondRequest {
        profile: t.world.profiles[0].clone(),
        context: Vec::new(),
        input: ModalityPayload::text("hello there"),
        input_audio: None,
    };
    let events = collect_events(&mut engine, &req).map_err(err)?;
    let first_audio = events.iter().position(ResponseEvent::is_audio).ok_or("no audio chunk")?;
    let fin = events
        .iter()
        .position(|e| matches!(e, ResponseEvent::Final { .. }))
        .ok_or("no final event")?;
    let ResponseEvent::Final { speech_tokens, .. } = &events[fin] else { unreachable!() };
    check(speech_tokens.len() > chunk, "response not longer than chunk_tokens")?;
    check(first_audio < fin, "first audio chunk after final text")?;

    let out = Command::new(env!("CARGO_BIN_EXE_rolespeak"))
        .args(["bench-latency", "--stub", "--trials", "5"])
        .output()
        .map_err(err)?;
    check(out.status.success(), String::from_utf8_lossy(&out.stderr).to_string())?;
    let json: serde_json::Value = serde_json::from_slice(&out.stdout).map_err(err)?;
    let mut samples: Vec<f64> = json["samples_ms"]
        .as_array()
        .ok_or("no samples")?
        .iter()
        .filter_map(|v| v.as_f64())
        .collect();
    check(json["trials"].as_u64() == Some(5) && samples.len() >= 5, "fewer than 5 trials")?;
    samples.sort_by(|a, b| a.total_cmp(b));
    let n = samples.len();
    let median = if n % 2 == 1 { samples[n / 2] } else { (samples[n / 2 - 1] + samples[n / 2]) / 2.0 };
    let reported = json["median_ms"].as_f64().ok_or("no median")?;
    check((reported - median).abs() < 1e-9, format!("median {reported} != {median}"))?;
    check(reported < 50.0, format!("stub latency {reported} ms"))?;
    let base = &json["baseline"];
    Ok(format!(
        "audio chunk at event {first_audio} < final at {fin} ({} speech tokens, chunk {chunk}); stub median {reported:.3} ms over {n} trials < 50 ms; baseline {} cpus, gemm {:.2} ms",
        speech_tokens.len(),
        base["logical_cpus"],
        base["gemm_ms"].as_f64().unwrap_or(f64::NAN)
    ))
}

// ---------------------------------------------------------------- 11 and 12

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

fn c11_speaker_similarity() -> Outcome {
    let fixture = speaker_fixture(4, 11).map_err(err)?;
    check(fixture.len() == 4, "fixture must have 4 speakers")?;
    let sets = embed_speakers(&fixture, &SpeakerEmbedder::new()).map_err(err)?;
    let (mut intra, mut inter) = (f64::INFINITY, f64::NEG_INFINITY);
    for (i, a) in sets.iter().enumerate() {
        for (j, b) in sets.iter().enumerate() {
            for (p, ea) in a.embeddings.iter().enumerate() {
                for (q, eb) in b.embeddings.iter().enumerate() {
                    let c = cosine(&ea.vector, &eb.vector);
                    if i == j && p != q {
                        intra = intra.min(c);
                    } else if i != j {
                        inter = inter.max(c);
                    }
                }
            }
        }
    }
    let margin = intra - inter;
    check(margin >= 0.05, format!("min intra {intra:.4} - max inter {inter:.4} = {margin:.4}"))?;
    for m in similarity_matrix(&sets, 3, 11).map_err(err)? {
        for i in 0..m.len() {
            check(m.get(i, i) == 1.0, "diagonal is not 1")?;
            for j in 0..m.len() {
                check(m.get(i, j) == m.get(j, i), "matrix is not symmetric")?;
            }
        }
    }
    Ok(format!("min intra {intra:.4} - max inter {inter:.4} = {margin:.4} >= 0.05; 3 matrices symmetric, unit diagonal"))
}

fn c12_voice_match() -> Outcome {
    check(!is_voice_match(0.9), "cosine 0.9 matched")?;
    check(is_voice_match(0.9 + 1e-9), "cosine above 0.9 did not match")?;
    let fixture = speaker_fixture(1, 12).map_err(err)?;
    let clip = &fixture[0].1[0];
    let copy = AudioAsset {
        asset_id: format!("{}-copy", clip.asset_id),
        ..clip.clone()
    };
    check(voice_match(clip, &copy, &SpeakerEmbedder::new()).map_err(err)?, "identical clips did not match")?;
    Ok("cosine 0.9 -> no match; identical clips -> match".into())
}

// ----------------------------------------------------------------

fn report(id: usize, name: &str, outcome: Outcome, failures: &mut Vec<usize>) {
    match outcome {
        Ok(detail) => println!("PASS  {id:>2} {name}: {detail}"),
        Err(detail) => {
            println!("FAIL  {id:>2} {name}: {detail}");
            failures.push(id);
        }
    }
}

fn main() {
    let mut failures = Vec::new();
    report(1, "group_frames oracle", c1_group_frames(), &mut failures);
    report(2, "uniform-logit loss", c2_uniform_loss(), &mut failures);
    report(3, "causality", c3_causality(), &mut failures);
    report(4, "gradient checks", c4_gradients(), &mut failures);
    report(5, "OT-CFM oracle", c5_ot_cfm(), &mut failures);

    let start = Instant::now();
    let dirs = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = train_toy(dirs.0.path());
    let second = train_toy(dirs.1.path());
    let secs = start.elapsed().as_secs_f64();
    match (&first, &second) {
        (Ok(a), Ok(b)) => {
            report(6, "freeze contract", c6_freeze(a), &mut failures);
            report(7, "prefix-conditioned tokens", c7_prefix_corpus(), &mut failures);
            report(8, "convergence", c8_convergence(a, b, secs), &mut failures);
            report(9, "forge filters", c9_forge_filters(), &mut failures);
            report(10, "streaming", c10_streaming(a), &mut failures);
        }
        (a, b) => {
            let e = a.as_ref().err().or(b.as_ref().err()).cloned().unwrap_or_default();
            report(6, "freeze contract", Err(e.clone()), &mut failures);
            report(7, "prefix-conditioned tokens", c7_prefix_corpus(), &mut failures);
            report(8, "convergence", Err(e.clone()), &mut failures);
            report(9, "forge filters", c9_forge_filters(), &mut failures);
            report(10, "streaming", Err(e), &mut failures);
        }
    }
    report(11, "speaker similarity", c11_speaker_similarity(), &mut failures);
    report(12, "voice match", c12_voice_match(), &mut failures);

    if failures.is_empty() {
        println!("acceptance: 12/12 criteria passed");
    } else {
        println!("acceptance: {} of 12 criteria failed: {failures:?}", failures.len());
        std::process::exit(1);
    }
}
