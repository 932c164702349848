//! The maximizing player: ℓ∞ PGD with projection onto the ε-ball
//! intersected with the image box, plus the loss-minimizing variant used to
//! plant features.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::kernels;
use crate::model::Model;
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepRule {
    #[default]
    Sign,
    /// Raw gradient of the per-example loss.
    Raw,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    #[default]
    Maximize,
    Minimize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackConfig {
    pub epsilon: f64,
    pub alpha: f64,
    pub steps: usize,
    #[serde(default = "yes")]
    pub random_start: bool,
    #[serde(default)]
    pub step_rule: StepRule,
    #[serde(default)]
    pub direction: Direction,
    /// Report the iterate with the most extreme loss per example instead of
    /// the last one.
    #[serde(default)]
    pub best_of_iterates: bool,
}

fn yes() -> bool {
    true
}

/// Step count following `k ≈ 10·ε/(8/255)`.
pub fn steps_for_epsilon(epsilon: f64) -> usize {
    (10.0 * epsilon / (8.0 / 255.0) + 1e-9).floor() as usize
}

impl AttackConfig {
    /// Training-style PGD: random start, sign steps, last iterate.
    pub fn pgd(epsilon: f64, alpha: f64, steps: usize) -> Self {
        Self {
            epsilon,
            alpha,
            steps,
            random_start: true,
            step_rule: StepRule::Sign,
            direction: Direction::Maximize,
            best_of_iterates: false,
        }
    }

    /// PGD-k at ε = 8/255 scaled, α = 2/255, with step count from the ε rule.
    pub fn pgd_scaled(epsilon: f64) -> Self {
        Self::pgd(epsilon, 2.0 / 255.0, steps_for_epsilon(epsilon))
    }

    /// Evaluation default: PGD-20, ε = 8/255, α = 2/255, best of iterates.
    pub fn eval_default() -> Self {
        Self::pgd(8.0 / 255.0, 2.0 / 255.0, 20).best()
    }

    pub fn none() -> Self {
        Self::pgd(0.0, 2.0 / 255.0, 0)
    }

    pub fn best(mut self) -> Self {
        self.best_of_iterates = true;
        self
    }

    pub fn minimize(mut self) -> Self {
        self.direction = Direction::Minimize;
        self
    }

    pub fn deterministic(mut self) -> Self {
        self.random_start = false;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::invalid(format!("epsilon must be >= 0, got {}", self.epsilon)));
        }
        if self.steps > 0 && !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::invalid(format!("alpha must be > 0 when steps > 0, got {}", self.alpha)));
        }
        Ok(())
    }

    /// True when the attack always returns the clean input.
    pub fn is_identity(&self) -> bool {
        self.epsilon == 0.0 || (self.steps == 0 && !self.random_start)
    }
}

/// Clamp `x` componentwise into `[x̄ − ε, x̄ + ε] ∩ [0, 1]`.
pub fn project_linf<T: Real>(x: &Tensor<T>, x_bar: &Tensor<T>, epsilon: f64) -> Result<Tensor<T>> {
    if x.shape() != x_bar.shape() {
        return Err(Error::ShapeMismatch {
            op: "project_linf",
            left: x.shape().to_vec(),
            right: x_bar.shape().to_vec(),
        });
    }
    if !(epsilon >= 0.0) {
        return Err(Error::invalid(format!("epsilon must be >= 0, got {epsilon}")));
    }
    let mut out = x.clone();
    out.clear_grad();
    project_in_place(out.data_mut(), x_bar.data(), T::of(epsilon));
    Ok(out)
}

fn project_in_place<T: Real>(x: &mut [T], x_bar: &[T], eps: T) {
    for (v, &c) in x.iter_mut().zip(x_bar) {
        let lo = (c - eps).max(T::zero());
        let hi = (c + eps).min(T::one());
        *v = v.max(lo).min(hi);
    }
}

/// `x̄ + U[−ε, ε]` per coordinate, projected into the feasible region.
pub fn uniform_noise<T: Real>(x_bar: &Tensor<T>, epsilon: f64, seed: u64) -> Result<Tensor<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = x_bar.clone();
    x.clear_grad();
    if epsilon > 0.0 {
        for v in x.data_mut() {
            *v += T::of(rng.random_range(-epsilon..=epsilon));
        }
    }
    project_linf(&x, x_bar, epsilon)
}

/// Per-example CE losses and the gradient of their sum w.r.t. the input.
fn loss_and_grad<T: Real>(model: &Model<T>, x: &Tensor<T>, y: &[usize]) -> Result<(Vec<T>, Vec<T>)> {
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone(), true);
    let (logits, _) = model.forward(&mut tape, xv, false)?;
    let losses = per_example_ce(tape.value(logits).data(), y, model.spec().classes);
    let loss = tape.softmax_cross_entropy(logits, y)?;
    tape.backward(loss)?;
    // mean → sum so the step does not depend on batch size
    let n = T::of(y.len() as f64);
    let grad: Vec<T> = tape.grad(xv).expect("input requires grad").iter().map(|&g| g * n).collect();
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("attack input gradient".into()));
    }
    Ok((losses, grad))
}

pub(crate) fn per_example_ce<T: Real>(logits: &[T], y: &[usize], classes: usize) -> Vec<T> {
    kernels::log_softmax_rows(logits, classes)
        .chunks_exact(classes)
        .zip(y)
        .map(|(row, &label)| -row[label])
        .collect()
}

/// Projected gradient attack on a batch `x̄` with labels `y`.
///
/// Runs `K` steps of `x ← Π(x ± α·step(∇ₓ CE))` from `x̄` (plus uniform
/// noise when `random_start`). The model is only read.
pub fn pgd_attack<T: Real>(
    model: &Model<T>,
    x_bar: &Tensor<T>,
    y: &[usize],
    cfg: &AttackConfig,
    seed: u64,
) -> Result<Tensor<T>> {
    cfg.validate()?;
    if x_bar.shape().first() != Some(&y.len()) {
        return Err(Error::ShapeMismatch {
            op: "pgd_attack",
            left: x_bar.shape().to_vec(),
            right: vec![y.len()],
        });
    }
    if cfg.epsilon == 0.0 {
        let mut out = x_bar.clone();
        out.clear_grad();
        return Ok(out);
    }
    let mut x = if cfg.random_start {
        uniform_noise(x_bar, cfg.epsilon, seed)?
    } else {
        let mut out = x_bar.clone();
        out.clear_grad();
        out
    };
    let eps = T::of(cfg.epsilon);
    let alpha = T::of(cfg.alpha);
    let sign = match cfg.direction {
        Direction::Maximize => T::one(),
        Direction::Minimize => -T::one(),
    };
    let row = x_bar.row_len();
    let better = |new: T, old: T| match cfg.direction {
        Direction::Maximize => new > old,
        Direction::Minimize => new < old,
    };
    let mut best: Option<(Tensor<T>, Vec<T>)> = None;
    for _ in 0..cfg.steps {
        let (losses, grad) = loss_and_grad(model, &x, y)?;
        if cfg.best_of_iterates {
            track_best(&mut best, &x, losses, row, &better);
        }
        let data = x.data_mut();
        match cfg.step_rule {
            StepRule::Sign => {
                for (v, &g) in data.iter_mut().zip(&grad) {
                    let s = if g > T::zero() {
                        T::one()
                    } else if g < T::zero() {
                        -T::one()
                    } else {
                        T::zero()
                    };
                    *v += sign * alpha * s;
                }
            }
            StepRule::Raw => {
                for (v, &g) in data.iter_mut().zip(&grad) {
                    *v += sign * alpha * g;
                }
            }
        }
        project_in_place(data, x_bar.data(), eps);
    }
    if cfg.best_of_iterates && cfg.steps > 0 {
        let logits = model.logits(&x)?;
        let losses = per_example_ce(logits.data(), y, model.spec().classes);
        track_best(&mut best, &x, losses, row, &better);
        return Ok(best.expect("at least one iterate").0);
    }
    Ok(x)
}

fn track_best<T: Real>(
    best: &mut Option<(Tensor<T>, Vec<T>)>,
    x: &Tensor<T>,
    losses: Vec<T>,
    row: usize,
    better: &impl Fn(T, T) -> bool,
) {
    match best {
        None => *best = Some((x.clone(), losses)),
        Some((bx, bl)) => {
            for (i, &l) in losses.iter().enumerate() {
                if better(l, bl[i]) {
                    bl[i] = l;
                    bx.data_mut()[i * row..(i + 1) * row].copy_from_slice(&x.data()[i * row..(i + 1) * row]);
                }
            }
        }
    }
}

/// Descent-direction PGD that plants features of strength ε; always keeps
/// the lowest-loss iterate.
pub fn feature_inject<T: Real>(
    model: &Model<T>,
    x_bar: &Tensor<T>,
    y: &[usize],
    cfg: &AttackConfig,
    seed: u64,
) -> Result<Tensor<T>> {
    let cfg = cfg.minimize().best();
    pgd_attack(model, x_bar, y, &cfg, seed)
}

/// Attack per epoch range. Each phase is active from its `from_epoch` until
/// the next phase starts; `until` bounds the domain when set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSchedule {
    pub phases: Vec<AttackPhase>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub until: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackPhase {
    pub from_epoch: usize,
    pub attack: AttackConfig,
}

impl AttackSchedule {
    pub fn constant(attack: AttackConfig) -> Self {
        Self {
            phases: vec![AttackPhase { from_epoch: 0, attack }],
            until: None,
        }
    }

    /// `before` until `epoch`, then `after`.
    pub fn switch_at(before: AttackConfig, epoch: usize, after: AttackConfig) -> Self {
        Self {
            phases: vec![
                AttackPhase {
                    from_epoch: 0,
                    attack: before,
                },
                AttackPhase {
                    from_epoch: epoch,
                    attack: after,
                },
            ],
            until: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.phases.first().map(|p| p.from_epoch) != Some(0) {
            return Err(Error::invalid("attack schedule must start at epoch 0"));
        }
        if self.phases.windows(2).any(|w| w[0].from_epoch >= w[1].from_epoch) {
            return Err(Error::invalid("attack schedule phases must be strictly increasing"));
        }
        self.phases.iter().try_for_each(|p| p.attack.validate())
    }

    /// The attacker active at `epoch`.
    pub fn at(&self, epoch: usize) -> Result<&AttackConfig> {
        if self.until.is_some_and(|u| epoch >= u) {
            return Err(Error::invalid(format!("epoch {epoch} outside attack schedule")));
        }
        self.phases
            .iter()
            .rev()
            .find(|p| p.from_epoch <= epoch)
            .map(|p| &p.attack)
            .ok_or_else(|| Error::invalid(format!("epoch {epoch} outside attack schedule")))
    }
}
