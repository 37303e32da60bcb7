//! Two-stage training plus the independent flow-matching stage: AdamW with linear
//! warmup and decay, global-norm clipping and per-stage freezing.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::error::{CoreError, Result};
use crate::model::{self, FlowExample, ModelConfig, ModelParams, Module, SpeechExample, TextExample};
use crate::params::{Binding, ParamSet};
use crate::scalar::Scalar;
use crate::synthesis::flow::initial_noise;
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Stage {
    #[serde(rename = "1")]
    One,
    #[serde(rename = "2")]
    Two,
    #[serde(rename = "cfm")]
    Cfm,
}

impl Stage {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "1" => Ok(Stage::One),
            "2" => Ok(Stage::Two),
            "cfm" => Ok(Stage::Cfm),
            other => Err(CoreError::Config(format!("unknown stage {other:?}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Stage::One => "1",
            Stage::Two => "2",
            Stage::Cfm => "cfm",
        }
    }

    /// Parameter groups updated by this stage.
    pub fn trainable(self) -> &'static [Module] {
        match self {
            Stage::One => &[Module::Adapter, Module::Language],
            Stage::Two => &[Module::Projection, Module::SpeechLm],
            Stage::Cfm => &[Module::Flow],
        }
    }

    /// Every group that must stay bit-identical during this stage.
    pub fn frozen(self) -> Vec<Module> {
        Module::ALL.into_iter().filter(|m| !self.trainable().contains(m)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub stage: Stage,
    pub peak_lr: f64,
    pub warmup_ratio: f64,
    pub betas: (f64, f64),
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default)]
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_steps: usize,
    pub seed: u64,
    #[serde(default = "default_clip")]
    pub grad_clip: f64,
}

fn default_eps() -> f64 {
    1e-8
}

fn default_clip() -> f64 {
    1.0
}

impl TrainConfig {
    fn base(stage: Stage, peak_lr: f64) -> Self {
        Self {
            stage,
            peak_lr,
            warmup_ratio: 0.3,
            betas: (0.9, 0.999),
            eps: 1e-8,
            weight_decay: 0.0,
            batch_size: 32,
            max_steps: 2000,
            seed: 0,
            grad_clip: 1.0,
        }
    }

    pub fn stage1() -> Self {
        Self::base(Stage::One, 5e-4)
    }

    pub fn stage2() -> Self {
        Self::base(Stage::Two, 5e-5)
    }

    pub fn cfm() -> Self {
        Self::base(Stage::Cfm, 1e-3)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.warmup_ratio) {
            return Err(CoreError::validation("warmup_ratio", "must lie in [0, 1)"));
        }
        if !(self.peak_lr > 0.0 && self.peak_lr.is_finite()) {
            return Err(CoreError::validation("peak_lr", "must be positive"));
        }
        let (b1, b2) = self.betas;
        if !(0.0..1.0).contains(&b1) || !(0.0..1.0).contains(&b2) {
            return Err(CoreError::validation("betas", "must lie in [0, 1)"));
        }
        if self.eps <= 0.0 || self.weight_decay < 0.0 {
            return Err(CoreError::validation("eps", "eps must be positive and weight_decay nonnegative"));
        }
        if self.batch_size == 0 || self.max_steps == 0 {
            return Err(CoreError::validation("batch_size", "batch_size and max_steps must be positive"));
        }
        if self.grad_clip <= 0.0 {
            return Err(CoreError::validation("grad_clip", "must be positive"));
        }
        Ok(())
    }

    /// Last warmup step, `ceil(warmup_ratio · max_steps)` kept below `max_steps`.
    pub fn warmup_steps(&self) -> usize {
        let w = (self.warmup_ratio * self.max_steps as f64).ceil() as usize;
        w.min(self.max_steps.saturating_sub(1))
    }

    /// Learning rate at `step` ∈ [0, max_steps]: rises linearly to the peak at the
    /// warmup boundary, then falls linearly to zero.
    pub fn lr_at(&self, step: usize) -> f64 {
        let step = step.min(self.max_steps);
        let w = self.warmup_steps();
        if w > 0 && step <= w {
            self.peak_lr * step as f64 / w as f64
        } else {
            self.peak_lr * (self.max_steps - step) as f64 / (self.max_steps - w) as f64
        }
    }
}

/// AdamW moments for one parameter group.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    m: ParamSet<T>,
    v: ParamSet<T>,
    t: u32,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(like: &ParamSet<T>) -> Self {
        let zeros = |ps: &ParamSet<T>| {
            let mut z = ParamSet::new();
            for (k, m) in ps.iter() {
                z.insert(k.clone(), Matrix::zeros(m.rows(), m.cols()));
            }
            z
        };
        Self {
            m: zeros(like),
            v: zeros(like),
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut ParamSet<T>, grads: &ParamSet<T>, lr: f64, cfg: &TrainConfig) -> Result<()> {
        self.t += 1;
        let (b1, b2) = cfg.betas;
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        for (name, p) in params.iter_mut() {
            let g = grads.get(name)?;
            let m = self.m.get_mut(name).expect("moment shapes follow params");
            let v = self.v.get_mut(name).expect("moment shapes follow params");
            let (tb1, tb2) = (T::of(b1), T::of(b2));
            for i in 0..p.len() {
                let gi = g.as_slice()[i];
                let mi = tb1 * m.as_slice()[i] + (T::one() - tb1) * gi;
                let vi = tb2 * v.as_slice()[i] + (T::one() - tb2) * gi * gi;
                m.as_mut_slice()[i] = mi;
                v.as_mut_slice()[i] = vi;
                let mh = mi.as_f64() / c1;
                let vh = vi.as_f64() / c2;
                let pi = p.as_slice()[i].as_f64();
                let upd = mh / (vh.sqrt() + cfg.eps) + cfg.weight_decay * pi;
                p.as_mut_slice()[i] = T::of(pi - lr * upd);
            }
        }
        Ok(())
    }
}

/// Scales every gradient so the joint L2 norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_global_norm<T: Scalar>(grads: &mut [ParamSet<T>], max_norm: f64) -> f64 {
    let sq: f64 = grads
        .iter()
        .flat_map(|g| g.iter().map(|(_, m)| m.sum_squares().as_f64()))
        .sum();
    let norm = sq.sqrt();
    if norm > max_norm {
        let s = T::of(max_norm / norm);
        for g in grads.iter_mut() {
            for (_, m) in g.iter_mut() {
                m.scale_assign(s);
            }
        }
    }
    norm
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    pub steps: usize,
    pub final_loss: f64,
}

/// A complete model state with its training history.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub model: ModelConfig,
    pub params: ModelParams<T>,
    pub history: Vec<StageRecord>,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn init(model: ModelConfig) -> Result<Self> {
        Ok(Self {
            params: ModelParams::init(&model)?,
            model,
            history: Vec::new(),
        })
    }

    pub fn has_stage(&self, stage: Stage) -> bool {
        self.history.iter().any(|r| r.stage == stage)
    }

    pub fn total_steps(&self) -> usize {
        self.history.iter().map(|r| r.steps).sum()
    }

    /// Hash over every module hash in canonical order.
    pub fn content_hash(&self) -> String {
        let joined: String = self
            .params
            .hashes()
            .iter()
            .map(|(m, h)| format!("{}={h}\n", m.name()))
            .collect();
        crate::params::sha256_hex(joined.as_bytes())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub stage: Stage,
    pub steps: usize,
    pub batch_size: usize,
    /// Mean batch loss at every step.
    pub losses: Vec<f64>,
    /// Mean loss over all examples before the first update.
    pub initial_eval: f64,
    pub final_eval: f64,
    pub frozen_hashes: Vec<(Module, String)>,
    pub elapsed_secs: f64,
}

impl TrainReport {
    /// `final_eval / initial_eval`.
    pub fn loss_ratio(&self) -> f64 {
        self.final_eval / self.initial_eval
    }
}

fn bind_modules<T: Scalar>(
    tape: &mut Tape<T>,
    params: &ModelParams<T>,
    trainable: &[Module],
    frozen: &[Module],
) -> Binding {
    let mut spec: Vec<(Module, bool)> = trainable.iter().map(|&m| (m, true)).collect();
    spec.extend(frozen.iter().map(|&m| (m, false)));
    params.bind(tape, &spec)
}

type LossFn<'a, T, E> = dyn Fn(&mut Tape<T>, &Binding, &E, &mut ChaCha8Rng) -> Result<Var> + 'a;

fn eval_loss<T: Scalar, E>(
    params: &ModelParams<T>,
    needed: &[Module],
    examples: &[E],
    seed: u64,
    loss: &LossFn<'_, T, E>,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_e7a1);
    let mut total = 0.0;
    for ex in examples {
        let mut tape = Tape::new();
        let b = bind_modules(&mut tape, params, &[], needed);
        let l = loss(&mut tape, &b, ex, &mut rng)?;
        total += tape.scalar(l).as_f64();
    }
    Ok(total / examples.len() as f64)
}

fn train_loop<T: Scalar, E>(
    ckpt: &mut Checkpoint<T>,
    cfg: &TrainConfig,
    examples: &[E],
    uses: &[Module],
    loss: &LossFn<'_, T, E>,
) -> Result<TrainReport> {
    cfg.validate()?;
    if examples.is_empty() {
        return Err(CoreError::Training("training corpus produced no examples".into()));
    }
    let start = Instant::now();
    let trainable = cfg.stage.trainable();
    let frozen_used: Vec<Module> = uses.iter().copied().filter(|m| !trainable.contains(m)).collect();
    let all_used: Vec<Module> = trainable.iter().chain(frozen_used.iter()).copied().collect();
    let frozen = cfg.stage.frozen();
    let before: Vec<(Module, String)> = frozen.iter().map(|&m| (m, ckpt.params.get(m).content_hash())).collect();

    let initial_eval = eval_loss(&ckpt.params, &all_used, examples, cfg.seed, loss)?;
    let mut states: Vec<AdamState<T>> = trainable.iter().map(|&m| AdamState::new(ckpt.params.get(m))).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    order.shuffle(&mut rng);
    let mut cursor = 0;
    let mut losses = Vec::with_capacity(cfg.max_steps);
    let scale = T::of(1.0 / cfg.batch_size as f64);

    for step in 1..=cfg.max_steps {
        let mut acc: Vec<ParamSet<T>> = Vec::new();
        let mut batch_loss = 0.0;
        for _ in 0..cfg.batch_size {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            let ex = &examples[order[cursor]];
            cursor += 1;
            let mut tape = Tape::new();
            let b = bind_modules(&mut tape, &ckpt.params, trainable, &frozen_used);
            let l = loss(&mut tape, &b, ex, &mut rng)?;
            let lv = tape.scalar(l).as_f64();
            if !lv.is_finite() {
                return Err(CoreError::NonFinite(format!("loss at step {step}")));
            }
            batch_loss += lv;
            let l = tape.scale(l, scale);
            let mut grads = tape.backward(l);
            for (i, &m) in trainable.iter().enumerate() {
                let g = b.gradients(ckpt.params.get(m), &mut grads);
                if acc.len() <= i {
                    acc.push(g);
                } else {
                    for (name, gm) in acc[i].iter_mut() {
                        gm.add_assign(g.get(name)?);
                    }
                }
            }
        }
        clip_global_norm(&mut acc, cfg.grad_clip);
        let lr = cfg.lr_at(step);
        for (i, &m) in trainable.iter().enumerate() {
            states[i].step(ckpt.params.get_mut(m), &acc[i], lr, cfg)?;
        }
        losses.push(batch_loss / cfg.batch_size as f64);
    }

    for (m, h) in &before {
        if &ckpt.params.get(*m).content_hash() != h {
            return Err(CoreError::Training(format!("frozen module {} changed", m.name())));
        }
    }
    let final_eval = eval_loss(&ckpt.params, &all_used, examples, cfg.seed, loss)?;
    ckpt.history.push(StageRecord {
        stage: cfg.stage,
        steps: cfg.max_steps,
        final_loss: final_eval,
    });
    Ok(TrainReport {
        stage: cfg.stage,
        steps: cfg.max_steps,
        batch_size: cfg.batch_size,
        losses,
        initial_eval,
        final_eval,
        frozen_hashes: before,
        elapsed_secs: start.elapsed().as_secs_f64(),
    })
}

fn expect_stage(cfg: &TrainConfig, stage: Stage) -> Result<()> {
    if cfg.stage != stage {
        return Err(CoreError::Config(format!(
            "config is for stage {} but stage {} was requested",
            cfg.stage.name(),
            stage.name()
        )));
    }
    Ok(())
}

/// Trains the adapter and language core on text targets.
pub fn train_stage1<T: Scalar>(
    ckpt: &mut Checkpoint<T>,
    examples: &[TextExample<T>],
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    expect_stage(cfg, Stage::One)?;
    let model = ckpt.model;
    let loss = move |t: &mut Tape<T>, b: &Binding, ex: &TextExample<T>, _: &mut ChaCha8Rng| {
        model::text_example_loss(t, b, ex, &model)
    };
    train_loop(ckpt, cfg, examples, Stage::One.trainable(), &loss)
}

/// Trains the projection and speech LM; needs a checkpoint that finished stage 1.
pub fn train_stage2<T: Scalar>(
    ckpt: &mut Checkpoint<T>,
    examples: &[SpeechExample<T>],
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    expect_stage(cfg, Stage::Two)?;
    if !ckpt.has_stage(Stage::One) {
        return Err(CoreError::Training("stage 2 requires a stage-1 checkpoint".into()));
    }
    train_stage2_unchecked(ckpt, examples, cfg)
}

/// Stage 2 without the stage-ordering check, for isolated decoder experiments.
pub fn train_stage2_unchecked<T: Scalar>(
    ckpt: &mut Checkpoint<T>,
    examples: &[SpeechExample<T>],
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    expect_stage(cfg, Stage::Two)?;
    let model = ckpt.model;
    for ex in examples {
        if ex.targets.iter().any(|&t| t as usize >= model.speech_lm.vocab) {
            return Err(CoreError::TokenRange {
                id: *ex.targets.iter().max().unwrap_or(&0) as usize,
                vocab: model.speech_lm.vocab,
            });
        }
    }
    let loss = move |t: &mut Tape<T>, b: &Binding, ex: &SpeechExample<T>, _: &mut ChaCha8Rng| {
        model::speech_example_loss(t, b, ex, &model)
    };
    train_loop(ckpt, cfg, examples, Stage::Two.trainable(), &loss)
}

/// Trains the flow-matching field; `t` and `x0` are drawn per example from the run RNG.
pub fn train_cfm<T: Scalar>(ckpt: &mut Checkpoint<T>, examples: &[FlowExample<T>], cfg: &TrainConfig) -> Result<TrainReport> {
    expect_stage(cfg, Stage::Cfm)?;
    let model = ckpt.model;
    let loss = move |tape: &mut Tape<T>, b: &Binding, ex: &FlowExample<T>, rng: &mut ChaCha8Rng| {
        let t = T::of(rng.random::<f64>());
        let x0 = initial_noise::<T>(ex.x1.rows(), ex.x1.cols(), rng.random());
        model::flow_example_loss(tape, b, ex, t, &x0, &model)
    };
    train_loop(ckpt, cfg, examples, Stage::Cfm.trainable(), &loss)
}

/// Mean flow-matching loss over `examples` with a fixed evaluation draw of `t` and `x0`.
pub fn eval_cfm<T: Scalar>(params: &ModelParams<T>, model: &ModelConfig, examples: &[FlowExample<T>], seed: u64) -> Result<f64> {
    if examples.is_empty() {
        return Err(CoreError::Training("no examples".into()));
    }
    let model = *model;
    let loss = move |tape: &mut Tape<T>, b: &Binding, ex: &FlowExample<T>, rng: &mut ChaCha8Rng| {
        let t = T::of(rng.random::<f64>());
        let x0 = initial_noise::<T>(ex.x1.rows(), ex.x1.cols(), rng.random());
        model::flow_example_loss(tape, b, ex, t, &x0, &model)
    };
    eval_loss(params, &[Module::Flow], examples, seed, &loss)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_shape() {
        let mut c = TrainConfig::stage1();
        c.max_steps = 100;
        assert_eq!(c.warmup_steps(), 30);
        assert_eq!(c.lr_at(0), 0.0);
        assert!((c.lr_at(30) - 5e-4).abs() < 1e-12);
        assert_eq!(c.lr_at(100), 0.0);
        assert!((c.lr_at(15) - 2.5e-4).abs() < 1e-12);
        assert!((c.lr_at(65) - 2.5e-4).abs() < 1e-12);
    }

    #[test]
    fn warmup_ratio_bounds() {
        let mut c = TrainConfig::stage2();
        c.warmup_ratio = 1.0;
        assert!(c.validate().is_err());
        c.warmup_ratio = 0.0;
        c.validate().unwrap();
        assert_eq!(c.lr_at(0), c.peak_lr);
    }

    #[test]
    fn clipping_caps_norm() {
        let mut g: ParamSet<f64> = ParamSet::new();
        g.insert("a", Matrix::filled(1, 4, 3.0));
        let mut gs = vec![g];
        let n = clip_global_norm(&mut gs, 1.0);
        assert!((n - 6.0).abs() < 1e-12);
        let after = gs[0].get("a").unwrap().sum_squares().sqrt();
        assert!((after - 1.0).abs() < 1e-12);
    }

    #[test]
    fn stage_sets_partition_modules() {
        for s in [Stage::One, Stage::Two, Stage::Cfm] {
            assert_eq!(s.trainable().len() + s.frozen().len(), Module::ALL.len());
        }
        assert_eq!(Stage::parse("cfm").unwrap(), Stage::Cfm);
        assert!(Stage::parse("3").is_err());
    }
}
