//! The minimizing player: SGD on adversarial batches with optional weight
//! averaging, BoAT regularization and distillation from a standard-trained
//! teacher.
//!
//! Run directory layout:
//!
//! ```text
//! config.json                  resolved training config
//! metrics.csv                  one row per epoch
//! checkpoints/epoch_NNNN.ckpt  state after NNNN completed epochs
//! best.ckpt                    best epoch by validation robustness
//! final.ckpt                   state at the end of training
//! last_good.ckpt               written only when a run aborts
//! ```

pub mod checkpoint;
pub mod loss;
pub mod metrics;
pub mod optim;
pub mod schedule;

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attack::{pgd_attack, AttackConfig, AttackSchedule};
use crate::autodiff::Tape;
use crate::data::{augment, Dataset};
use crate::diagnostics::eval::evaluate_robust;
use crate::error::{Error, Result};
use crate::io;
use crate::kernels;
use crate::model::{Model, ModelSpec, ParamVector};
use crate::rng::{self, stream};
use crate::tensor::Real;

pub use checkpoint::{Checkpoint, TrainingState};
pub use loss::{boat_loss, rebat_kd_loss};
pub use metrics::{read_metrics_csv, robust_gap, write_metrics_csv, EpochMetrics, RobustGap};
pub use optim::{ema_update, Sgd};
pub use schedule::{LrKind, LrSchedule};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaConfig {
    pub enabled: bool,
    /// Defaults to the first milestone plus 5 (or 0 without milestones).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start_epoch: Option<usize>,
    #[serde(default = "gamma_default")]
    pub gamma: f64,
}

fn gamma_default() -> f64 {
    0.999
}

impl Default for WaConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            start_epoch: None,
            gamma: gamma_default(),
        }
    }
}

/// BoAT coefficient: `lambda` from WA start, switching to `lambda2` at the
/// second milestone when given.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoatConfig {
    pub lambda: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KdConfig {
    pub lambda_st: f64,
    /// Checkpoint of the standard-trained teacher.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub teacher: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    #[serde(default = "momentum_default")]
    pub momentum: f64,
    #[serde(default = "wd_default")]
    pub weight_decay: f64,
    pub lr: LrSchedule,
    #[serde(default)]
    pub wa: WaConfig,
    #[serde(default)]
    pub boat: BoatConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kd: Option<KdConfig>,
    pub attack: AttackSchedule,
    #[serde(default = "AttackConfig::eval_default")]
    pub eval_attack: AttackConfig,
    #[serde(default)]
    pub seed: u64,
    /// Save `checkpoints/epoch_NNNN.ckpt` every this many epochs; 0 disables.
    #[serde(default)]
    pub checkpoint_every: usize,
    /// Validation cadence before WA start; every epoch afterwards.
    #[serde(default = "val_every_default")]
    pub val_every: usize,
    #[serde(default)]
    pub augment: bool,
}

fn momentum_default() -> f64 {
    0.9
}
fn wd_default() -> f64 {
    5e-4
}
fn val_every_default() -> usize {
    5
}

impl TrainConfig {
    /// PGD-AT baseline: lr 0.1 decayed by `decay_factor` at `milestones`,
    /// momentum 0.9, weight decay 5e-4, PGD-10 at 8/255 with step 2/255.
    pub fn pgd_at(epochs: usize, milestones: Vec<usize>, decay_factor: f64) -> Self {
        Self {
            epochs,
            batch_size: 128,
            momentum: 0.9,
            weight_decay: 5e-4,
            lr: LrSchedule::piecewise(0.1, milestones, decay_factor),
            wa: WaConfig::default(),
            boat: BoatConfig::default(),
            kd: None,
            attack: AttackSchedule::constant(AttackConfig::pgd(8.0 / 255.0, 2.0 / 255.0, 10)),
            eval_attack: AttackConfig::eval_default(),
            seed: 0,
            checkpoint_every: 0,
            val_every: 5,
            augment: false,
        }
    }

    pub fn wa_start(&self) -> usize {
        self.wa
            .start_epoch
            .unwrap_or_else(|| self.lr.first_milestone().map_or(0, |m| m + 5))
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) || !(self.weight_decay >= 0.0) {
            return Err(Error::invalid("momentum must lie in [0, 1) and weight_decay be >= 0"));
        }
        self.lr.validate()?;
        self.attack.validate()?;
        self.eval_attack.validate()?;
        if !(0.0..=1.0).contains(&self.wa.gamma) {
            return Err(Error::invalid(format!("wa.gamma must lie in [0, 1], got {}", self.wa.gamma)));
        }
        if self.wa.enabled && self.wa_start() > self.epochs {
            return Err(Error::invalid("wa start epoch exceeds epochs"));
        }
        if !(self.boat.lambda >= 0.0) || self.boat.lambda2.is_some_and(|l| !(l >= 0.0)) {
            return Err(Error::invalid("boat lambda must be >= 0"));
        }
        if self.boat.lambda > 0.0 && !self.wa.enabled {
            return Err(Error::invalid("boat lambda > 0 needs weight averaging enabled"));
        }
        if let Some(kd) = &self.kd {
            if !(0.0..=1.0).contains(&kd.lambda_st) {
                return Err(Error::invalid(format!("kd.lambda_st must lie in [0, 1], got {}", kd.lambda_st)));
            }
        }
        if self.val_every == 0 {
            return Err(Error::invalid("val_every must be positive"));
        }
        Ok(())
    }

    /// BoAT coefficient active during `epoch`.
    pub fn lambda_at(&self, epoch: usize) -> f64 {
        if !self.wa.enabled || epoch < self.wa_start() {
            return 0.0;
        }
        match (self.boat.lambda2, self.lr.milestones.get(1)) {
            (Some(l2), Some(&m2)) if epoch >= m2 => l2,
            _ => self.boat.lambda,
        }
    }

    /// The same run with CE-only training on clean inputs.
    pub fn standard(&self) -> Self {
        Self {
            attack: AttackSchedule::constant(AttackConfig::none()),
            boat: BoatConfig::default(),
            kd: None,
            ..self.clone()
        }
    }
}

/// Short stable hash of any serializable config.
pub fn config_hash<C: Serialize>(cfg: &C) -> String {
    let bytes = serde_json::to_vec(cfg).expect("config serializes");
    hex::encode(&Sha256::digest(&bytes)[..8])
}

/// Train, validation and test data for one run.
pub struct Splits<'a, T> {
    pub train: &'a Dataset<T>,
    pub val: Option<&'a Dataset<T>>,
    pub test: &'a Dataset<T>,
}

pub trait TrainHook<T> {
    fn on_epoch_end(&mut self, state: &TrainingState<T>, metrics: &EpochMetrics) -> Result<()>;
}

impl<T, F> TrainHook<T> for F
where
    F: FnMut(&TrainingState<T>, &EpochMetrics) -> Result<()>,
{
    fn on_epoch_end(&mut self, state: &TrainingState<T>, metrics: &EpochMetrics) -> Result<()> {
        self(state, metrics)
    }
}

pub enum Init<T> {
    /// Seeded initialization from the model spec.
    Fresh,
    /// New run starting from these parameters (zero momentum, φ = θ).
    Params(ParamVector<T>),
    /// Continue a previous run where it stopped.
    Resume(TrainingState<T>),
}

pub struct RunResult<T> {
    pub state: TrainingState<T>,
    /// Epoch index of the best checkpoint, if any epoch was trained.
    pub best_epoch: Option<usize>,
    pub best: Option<TrainingState<T>>,
    pub config_hash: String,
}

impl<T: Real> RunResult<T> {
    pub fn history(&self) -> &[EpochMetrics] {
        &self.state.history
    }
}

/// Builder for one training run.
pub struct Trainer<'a, T> {
    cfg: &'a TrainConfig,
    spec: &'a ModelSpec,
    run_dir: Option<PathBuf>,
    init: Init<T>,
    teacher: Option<&'a Model<T>>,
    hooks: Vec<&'a mut dyn TrainHook<T>>,
}

impl<'a, T: Real> Trainer<'a, T> {
    pub fn new(cfg: &'a TrainConfig, spec: &'a ModelSpec) -> Self {
        Self {
            cfg,
            spec,
            run_dir: None,
            init: Init::Fresh,
            teacher: None,
            hooks: Vec::new(),
        }
    }

    pub fn run_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.run_dir = Some(dir.into());
        self
    }

    pub fn init(mut self, init: Init<T>) -> Self {
        self.init = init;
        self
    }

    pub fn teacher(mut self, teacher: &'a Model<T>) -> Self {
        self.teacher = Some(teacher);
        self
    }

    pub fn hook(mut self, hook: &'a mut dyn TrainHook<T>) -> Self {
        self.hooks.push(hook);
        self
    }

    pub fn run(mut self, data: &Splits<'_, T>) -> Result<RunResult<T>> {
        let cfg = self.cfg;
        cfg.validate()?;
        data.train.non_empty("training")?;
        data.test.non_empty("test")?;
        if data.train.image_shape() != self.spec.input_shape || data.train.classes() != self.spec.classes {
            return Err(Error::invalid("dataset shape or class count does not match model spec"));
        }
        if cfg.kd.as_ref().is_some_and(|k| k.lambda_st > 0.0) && self.teacher.is_none() {
            return Err(Error::invalid("kd configured but no teacher model supplied"));
        }
        let hash = config_hash(cfg);
        let mut state = match std::mem::replace(&mut self.init, Init::Fresh) {
            Init::Fresh => {
                let m = Model::init(self.spec.clone(), rng::derive(cfg.seed, &[stream::INIT]))?;
                TrainingState::fresh(m.params().clone(), cfg.seed)
            }
            Init::Params(p) => {
                Model::from_params(self.spec.clone(), p.clone())?;
                TrainingState::fresh(p, cfg.seed)
            }
            Init::Resume(s) => s,
        };
        let ckpt = |state: &TrainingState<T>| Checkpoint {
            spec: self.spec.clone(),
            state: state.clone(),
            schedule: Some(cfg.lr.clone()),
            config_hash: hash.clone(),
        };
        if let Some(dir) = &self.run_dir {
            std::fs::create_dir_all(dir.join("checkpoints")).map_err(|e| Error::io(dir, e))?;
            io::write_atomic(&dir.join("config.json"), &serde_json::to_vec_pretty(cfg)?)?;
            write_metrics_csv(&dir.join("metrics.csv"), &hash, &state.history)?;
            if state.epoch == 0 {
                ckpt(&state).save(&epoch_path(dir, 0))?;
            }
        }

        let mut model = Model::from_params(self.spec.clone(), state.theta.clone())?;
        let mut wa = Model::from_params(self.spec.clone(), state.phi.clone())?;
        let sgd = Sgd {
            momentum: cfg.momentum,
            weight_decay: cfg.weight_decay,
        };
        let mut best: Option<(f64, usize, TrainingState<T>)> = None;

        for epoch in state.epoch..cfg.epochs {
            let outcome = self.train_epoch(epoch, data.train, &sgd, &mut model, &mut wa, &mut state.velocity);
            let (train_nat, train_rob, mean_ce, mean_kl) = match outcome {
                Ok(v) => v,
                Err(e) => {
                    if let Some(dir) = &self.run_dir {
                        ckpt(&state).save(&dir.join("last_good.ckpt"))?;
                    }
                    return Err(Error::Aborted {
                        epoch,
                        reason: e.to_string(),
                    });
                }
            };
            let wa_active = cfg.wa.enabled && epoch >= cfg.wa_start();
            let eval_seed = rng::derive(cfg.seed, &[stream::EVAL, epoch as u64]);
            let (test_nat, test_rob) = evaluate_robust(&model, data.test, &cfg.eval_attack, eval_seed)?;
            let (wa_nat, wa_rob) = if wa_active {
                evaluate_robust(&wa, data.test, &cfg.eval_attack, eval_seed)?
            } else {
                (test_nat, test_rob)
            };
            let val_due = epoch >= cfg.wa_start() || (epoch + 1) % cfg.val_every == 0 || epoch + 1 == cfg.epochs;
            let (val_rob, wa_val_rob) = match data.val {
                Some(v) if val_due && !v.is_empty() => {
                    let r = evaluate_robust(&model, v, &cfg.eval_attack, eval_seed)?.1;
                    let w = if wa_active {
                        evaluate_robust(&wa, v, &cfg.eval_attack, eval_seed)?.1
                    } else {
                        r
                    };
                    (Some(r), Some(w))
                }
                _ => (None, None),
            };
            let metrics = EpochMetrics {
                epoch,
                lr: cfg.lr.lr_at(epoch, cfg.epochs),
                eps_train: cfg.attack.at(epoch)?.epsilon,
                lambda: cfg.lambda_at(epoch),
                train_nat_acc: train_nat,
                train_rob_acc: train_rob,
                test_nat_acc: test_nat,
                test_rob_acc: test_rob,
                wa_test_nat_acc: wa_nat,
                wa_test_rob_acc: wa_rob,
                mean_ce,
                mean_kl,
                val_rob_acc: val_rob,
                wa_val_rob_acc: wa_val_rob,
            };
            state.theta = model.params().clone();
            state.phi = wa.params().clone();
            state.epoch = epoch + 1;
            state.history.push(metrics.clone());

            // selection follows the reported model: WA when enabled
            let score = match data.val {
                Some(v) if !v.is_empty() => {
                    if cfg.wa.enabled {
                        wa_val_rob
                    } else {
                        val_rob
                    }
                }
                _ => Some(if cfg.wa.enabled { wa_rob } else { test_rob }),
            };
            let improved = score.is_some_and(|s| best.as_ref().is_none_or(|(b, _, _)| s > *b));
            if improved {
                best = Some((score.expect("checked"), epoch, state.clone()));
            }
            if let Some(dir) = &self.run_dir {
                write_metrics_csv(&dir.join("metrics.csv"), &hash, &state.history)?;
                if cfg.checkpoint_every > 0 && state.epoch % cfg.checkpoint_every == 0 {
                    ckpt(&state).save(&epoch_path(dir, state.epoch))?;
                }
                if improved {
                    ckpt(&state).save(&dir.join("best.ckpt"))?;
                }
            }
            log::info!(
                "epoch {epoch} lr {:.5} train rob {:.3} test nat {:.3} rob {:.3} wa rob {:.3}",
                metrics.lr,
                train_rob,
                test_nat,
                test_rob,
                wa_rob
            );
            for h in self.hooks.iter_mut() {
                h.on_epoch_end(&state, &metrics)?;
            }
        }
        if let Some(dir) = &self.run_dir {
            ckpt(&state).save(&dir.join("final.ckpt"))?;
        }
        Ok(RunResult {
            best_epoch: best.as_ref().map(|b| b.1),
            best: best.map(|b| b.2),
            state,
            config_hash: hash,
        })
    }

    /// One pass over the shuffled training set. Returns running
    /// `(train_nat_acc, train_rob_acc, mean_ce, mean_kl)`.
    fn train_epoch(
        &self,
        epoch: usize,
        train: &Dataset<T>,
        sgd: &Sgd,
        model: &mut Model<T>,
        wa: &mut Model<T>,
        velocity: &mut [T],
    ) -> Result<(f64, f64, f64, f64)> {
        let cfg = self.cfg;
        let e = epoch as u64;
        let lr = cfg.lr.lr_at(epoch, cfg.epochs);
        let attack = *cfg.attack.at(epoch)?;
        let wa_active = cfg.wa.enabled && epoch >= cfg.wa_start();
        let lambda = cfg.lambda_at(epoch);
        let kd = cfg.kd.as_ref().filter(|k| k.lambda_st > 0.0);
        let classes = self.spec.classes;

        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(rng::derive(cfg.seed, &[stream::SHUFFLE, e])));

        let (mut nat_hits, mut rob_hits) = (0usize, 0usize);
        let (mut ce_sum, mut kl_sum, mut batches) = (0.0, 0.0, 0usize);
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let b = b as u64;
            let (mut x, y) = train.batch(idx);
            if cfg.augment {
                x = augment(&x, rng::derive(cfg.seed, &[stream::AUGMENT, e, b]));
            }
            let x_adv = pgd_attack(model, &x, &y, &attack, rng::derive(cfg.seed, &[stream::TRAIN_ATTACK, e, b]))?;

            let mut tape = Tape::new();
            let xv = tape.constant(x_adv.clone());
            let (logits, params) = model.forward(&mut tape, xv, true)?;
            let ce = tape.softmax_cross_entropy(logits, &y)?;
            let mut loss = ce;
            let mut kl_value = 0.0;
            if lambda > 0.0 || kd.is_some() {
                let q = if lambda > 0.0 {
                    let q = tape.constant(wa.logits(&x_adv)?);
                    let kl = tape.kl_divergence(logits, q)?;
                    kl_value = tape.value(kl).item()?.as_f64();
                    Some(q)
                } else {
                    None
                };
                loss = match (kd, self.teacher) {
                    (Some(k), Some(t)) => {
                        let tl = tape.constant(t.logits(&x_adv)?);
                        loss::kd_objective(&mut tape, logits, q, tl, &y, lambda, k.lambda_st)?
                    }
                    _ => loss::boat_objective(&mut tape, logits, q, &y, lambda)?,
                };
            }
            let ce_value = tape.value(ce).item()?.as_f64();
            let loss_value = tape.value(loss).item()?.as_f64();
            if !loss_value.is_finite() {
                return Err(Error::NonFinite(format!("training loss at epoch {epoch} batch {b}")));
            }
            let adv_pred = kernels::argmax_rows(tape.value(logits).data(), classes);
            rob_hits += adv_pred.iter().zip(&y).filter(|(p, l)| p == l).count();
            nat_hits += if attack.is_identity() {
                adv_pred.iter().zip(&y).filter(|(p, l)| p == l).count()
            } else {
                model.predict(&x)?.iter().zip(&y).filter(|(p, l)| p == l).count()
            };
            tape.backward(loss)?;
            let grads = model.gather_grads(&tape, &params);
            drop(tape);
            sgd.step(model.params_mut().values_mut(), velocity, &grads, lr)?;
            if wa_active {
                ema_update(wa.params_mut(), model.params(), cfg.wa.gamma)?;
            } else {
                wa.set_params(model.params().clone())?;
            }
            ce_sum += ce_value;
            kl_sum += kl_value;
            batches += 1;
        }
        let n = train.len() as f64;
        Ok((
            nat_hits as f64 / n,
            rob_hits as f64 / n,
            ce_sum / batches as f64,
            kl_sum / batches as f64,
        ))
    }
}

pub fn epoch_path(dir: &Path, completed: usize) -> PathBuf {
    dir.join("checkpoints").join(format!("epoch_{completed:04}.ckpt"))
}

/// Adversarial training run (see [`Trainer`] for more options).
pub fn train_adversarial<T: Real>(
    cfg: &TrainConfig,
    spec: &ModelSpec,
    data: &Splits<'_, T>,
    run_dir: Option<&Path>,
) -> Result<RunResult<T>> {
    let mut t = Trainer::new(cfg, spec);
    if let Some(d) = run_dir {
        t = t.run_dir(d);
    }
    t.run(data)
}

/// CE-only training on clean inputs, optionally starting from given
/// parameters.
pub fn train_standard<T: Real>(
    cfg: &TrainConfig,
    spec: &ModelSpec,
    data: &Splits<'_, T>,
    init: Option<ParamVector<T>>,
    run_dir: Option<&Path>,
) -> Result<RunResult<T>> {
    let std_cfg = cfg.standard();
    let mut t = Trainer::new(&std_cfg, spec);
    if let Some(p) = init {
        t = t.init(Init::Params(p));
    }
    if let Some(d) = run_dir {
        t = t.run_dir(d);
    }
    t.run(data)
}
