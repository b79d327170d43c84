//! Two-stage training: SGD pre-training of the encoder and top-down path,
//! then end-to-end Adam training of every enabled head.

mod optim;
pub mod weights;

use std::fmt::Write as _;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use optim::{adam_step, lr_schedule, sgd_step, OptimState};
pub use weights::{decode, encode, export_weights, import_weights, load_into};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::fmt::g6;
use crate::losses::{self, Head, LossWeights};
use crate::model::{forward_heads, param_specs, ModelConfig, ModelParams};
use crate::tensor::{Element, Graph, Mode, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Stage {
    /// Encoder + top-down decoder, BCE on `y_td`, SGD.
    Pretrain,
    /// All enabled heads, combined objective, Adam.
    E2e,
}

impl FromStr for Stage {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pretrain" => Ok(Stage::Pretrain),
            "e2e" => Ok(Stage::E2e),
            other => Err(Error::Config(format!("unknown stage `{other}` (pretrain|e2e)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub stage: Stage,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    /// SGD momentum, or Adam's first-moment decay.
    pub momentum: f64,
    pub beta2: f64,
    pub eps: f64,
    pub decay_rate: f64,
    /// Epochs between learning-rate drops; 0 keeps the rate constant.
    pub decay_every: usize,
    pub seed: u64,
    pub weights: LossWeights,
}

impl TrainConfig {
    pub fn pretrain() -> Self {
        TrainConfig {
            stage: Stage::Pretrain,
            batch_size: 4,
            epochs: 90,
            lr: 1e-2,
            momentum: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            decay_rate: 0.5,
            decay_every: 8,
            seed: 0,
            weights: LossWeights::default(),
        }
    }

    pub fn e2e() -> Self {
        TrainConfig {
            stage: Stage::E2e,
            epochs: 50,
            lr: 3e-4,
            momentum: 0.5,
            decay_every: 0,
            ..TrainConfig::pretrain()
        }
    }

    pub fn for_stage(stage: Stage) -> Self {
        match stage {
            Stage::Pretrain => TrainConfig::pretrain(),
            Stage::E2e => TrainConfig::e2e(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        let finite_nonneg = [("lr", self.lr), ("decay_rate", self.decay_rate), ("eps", self.eps)];
        for (name, v) in finite_nonneg {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be finite and nonnegative, got {v}")));
            }
        }
        for (name, v) in [("momentum", self.momentum), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {v}")));
            }
        }
        self.weights.validate()
    }

    /// The network configuration this stage trains.
    pub fn stage_model(&self, model: &ModelConfig) -> ModelConfig {
        match self.stage {
            Stage::Pretrain => model.pretrain_view(),
            Stage::E2e => model.clone(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub steps: Vec<StepRecord>,
    pub epoch_means: Vec<f64>,
}

impl TrainLog {
    pub fn final_lr(&self) -> Option<f64> {
        self.steps.last().map(|s| s.lr)
    }

    /// `step,epoch,lr,loss` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,epoch,lr,loss\n");
        for s in &self.steps {
            let _ = writeln!(out, "{},{},{},{}", s.step, s.epoch, g6(s.lr), g6(s.loss));
        }
        out
    }
}

/// Loss of one batch, with the weighted per-head terms of the combined
/// objective. Pre-training reports only `total`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLoss {
    pub total: f64,
    pub terms: [(Head, Option<f64>); 4],
}

fn record_loss<T: Element>(
    g: &mut Graph<'_, T>,
    stage: Stage,
    model: &ModelConfig,
    x: &Tensor<T>,
    y: &Tensor<T>,
    w: &LossWeights,
) -> Result<(Var, [(Head, Option<Var>); 4])> {
    let xv = g.constant(x.clone());
    let heads = forward_heads(g, model, xv)?;
    match stage {
        Stage::Pretrain => {
            let y_td = heads
                .y_td
                .ok_or_else(|| Error::Config("pre-training needs the top-down head".into()))?;
            let l = losses::pretrain_loss_var(g, y_td, y)?;
            Ok((l, Head::ALL.map(|h| (h, None))))
        }
        Stage::E2e => {
            let l = losses::combined_e2e_var(g, &heads, y, w)?;
            Ok((l.total, l.terms))
        }
    }
}

/// Evaluates the stage objective on one batch without updating anything.
pub fn evaluate_loss<T: Element>(
    params: &ModelParams<T>,
    model: &ModelConfig,
    cfg: &TrainConfig,
    x: &Tensor<T>,
    y: &Tensor<T>,
    mode: Mode,
) -> Result<StepLoss> {
    let stage_model = cfg.stage_model(model);
    let mut g = Graph::with_params(params, mode);
    let (total, terms) = record_loss(&mut g, cfg.stage, &stage_model, x, y, &cfg.weights)?;
    let val = |v: Var| g.value(v).item().expect("scalar").to_f64();
    Ok(StepLoss {
        total: val(total),
        terms: terms.map(|(h, v)| (h, v.map(val))),
    })
}

/// Optimizer state plus the list of parameters a stage updates.
pub struct Trainer<T: Element> {
    cfg: TrainConfig,
    model: ModelConfig,
    names: Vec<String>,
    state: OptimState<T>,
    step: usize,
}

impl<T: Element> Trainer<T> {
    pub fn new(model: &ModelConfig, cfg: &TrainConfig, params: &ModelParams<T>) -> Result<Self> {
        cfg.validate()?;
        let stage_model = cfg.stage_model(model);
        stage_model.validate()?;
        let specs = param_specs(&stage_model);
        if let Some(missing) = specs.iter().find(|s| !params.contains(&s.name)) {
            return Err(Error::UnknownParameter(missing.name.clone()));
        }
        let names = specs.into_iter().filter(|s| s.kind.trainable()).map(|s| s.name).collect();
        let state = match cfg.stage {
            Stage::Pretrain => OptimState::sgd(),
            Stage::E2e => OptimState::adam(),
        };
        Ok(Trainer {
            cfg: cfg.clone(),
            model: stage_model,
            names,
            state,
            step: 0,
        })
    }

    /// Names updated by the optimizer.
    pub fn trainable(&self) -> &[String] {
        &self.names
    }

    /// One forward/backward/update on a batch. Returns the pre-update loss.
    pub fn step(&mut self, params: &mut ModelParams<T>, x: &Tensor<T>, y: &Tensor<T>, lr: f64) -> Result<f64> {
        let (loss, grads, running) = {
            let mut g = Graph::with_params(&*params, Mode::Train);
            let (total, _) = record_loss(&mut g, self.cfg.stage, &self.model, x, y, &self.cfg.weights)?;
            let loss = g.value(total).item().expect("scalar").to_f64();
            if !loss.is_finite() {
                return Err(Error::NonFinite { step: self.step, loss });
            }
            let grads = g.backward(total)?.into_params();
            (loss, grads, g.take_running_updates())
        };
        match self.cfg.stage {
            Stage::Pretrain => sgd_step(params, &self.names, &grads, &mut self.state, lr, self.cfg.momentum)?,
            Stage::E2e => adam_step(
                params,
                &self.names,
                &grads,
                &mut self.state,
                lr,
                self.cfg.momentum,
                self.cfg.beta2,
                self.cfg.eps,
            )?,
        }
        for (name, t) in running {
            params.insert(name, t);
        }
        self.step += 1;
        Ok(loss)
    }
}

/// Per-epoch sample order: a permutation drawn from a ChaCha stream keyed
/// by `(seed, epoch)`.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

/// Runs one training stage from `params`. Parameters outside the stage's
/// modules are carried through unchanged.
pub fn run_stage<T: Element>(
    params: &ModelParams<T>,
    model: &ModelConfig,
    data: &Dataset,
    cfg: &TrainConfig,
) -> Result<(ModelParams<T>, TrainLog)> {
    if data.is_empty() {
        return Err(Error::Dataset("dataset is empty".into()));
    }
    if data.size() != model.input_size {
        return Err(Error::Config(format!(
            "dataset size {} does not match input_size {}",
            data.size(),
            model.input_size
        )));
    }
    let mut params = params.clone();
    let mut trainer = Trainer::new(model, cfg, &params)?;
    let mut log = TrainLog::default();
    for epoch in 0..cfg.epochs {
        let lr = lr_schedule(epoch, cfg.lr, cfg.decay_rate, cfg.decay_every);
        let order = epoch_order(data.len(), cfg.seed, epoch);
        let mut sum = 0.0;
        let mut count = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let (x, y) = data.batch::<T>(chunk)?;
            let loss = trainer.step(&mut params, &x, &y, lr)?;
            log.steps.push(StepRecord {
                step: log.steps.len(),
                epoch,
                lr,
                loss,
            });
            log::debug!("epoch {epoch} step {} loss {loss:.6}", log.steps.len() - 1);
            sum += loss;
            count += 1;
        }
        let mean = sum / count as f64;
        log::info!("epoch {epoch}: mean loss {mean:.6} (lr {lr})");
        log.epoch_means.push(mean);
    }
    Ok((params, log))
}
