//! Synthetic images with planted robust and non-robust features.
//!
//! Each class `c` owns a random sign pattern over two disjoint coordinate
//! sets. An example of class `y` is
//!
//! ```text
//! x = clip(0.5 + a·(s_rob[y]·r on robust coords, s_nr[y]·n on non-robust coords) + σ·z, 0, 1)
//! ```
//!
//! with amplitude `a ~ U[amp_lo, amp_hi]` per example and `z` standard
//! normal. The robust strength `r` exceeds the attack budget by a margin,
//! so those coordinates survive an ε-perturbation; the non-robust strength
//! `n` is below it, so the attacker can flip them. An `ambiguous` fraction of
//! examples carries the robust pattern of class `y + 1`, leaving only the
//! non-robust coordinates pointing at their true label.
//!
//! For coordinate `k` the binary label of class `c` is the sign `s[c][k]`,
//! and the feature is `f_k(x) = x_k − 0.5`.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub classes: usize,
    /// Images are `1 × side × side`.
    pub side: usize,
    pub robust_count: usize,
    pub robust_strength: f64,
    pub nonrobust_count: usize,
    pub nonrobust_strength: f64,
    pub noise: f64,
    #[serde(default = "one")]
    pub amp_lo: f64,
    #[serde(default = "one")]
    pub amp_hi: f64,
    #[serde(default)]
    pub ambiguous: f64,
    /// Usefulness threshold ρ.
    pub rho: f64,
    /// Robustness threshold γ.
    pub gamma_feat: f64,
    pub epsilon_target: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            classes: 10,
            side: 8,
            robust_count: 8,
            robust_strength: 0.2,
            nonrobust_count: 16,
            nonrobust_strength: 0.02,
            noise: 0.15,
            amp_lo: 1.0,
            amp_hi: 1.0,
            ambiguous: 0.0,
            rho: 0.01,
            gamma_feat: 0.1,
            epsilon_target: 8.0 / 255.0,
        }
    }
}

impl SyntheticSpec {
    pub fn dimension(&self) -> usize {
        self.side * self.side
    }

    fn mean_amp(&self) -> f64 {
        0.5 * (self.amp_lo + self.amp_hi)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::invalid(format!("unsatisfiable synthetic spec: {m}")));
        if self.classes < 2 {
            return fail("need at least 2 classes".into());
        }
        if self.robust_count == 0 || self.robust_count + self.nonrobust_count > self.dimension() {
            return fail(format!(
                "{} robust + {} non-robust coordinates in dimension {}",
                self.robust_count,
                self.nonrobust_count,
                self.dimension()
            ));
        }
        if !(self.amp_lo > 0.0 && self.amp_lo <= self.amp_hi) {
            return fail("amplitude range must satisfy 0 < lo <= hi".into());
        }
        if !(0.0..1.0).contains(&self.ambiguous) || !(self.noise >= 0.0) || !(self.epsilon_target > 0.0) {
            return fail("ambiguous in [0,1), noise >= 0 and epsilon_target > 0 required".into());
        }
        if self.nonrobust_strength >= self.epsilon_target {
            return fail(format!(
                "non-robust strength {} must be below epsilon {}",
                self.nonrobust_strength, self.epsilon_target
            ));
        }
        if self.robust_strength * self.amp_lo <= self.gamma_feat + self.epsilon_target {
            return fail(format!(
                "robust strength {} (times min amplitude) must exceed gamma + epsilon = {}",
                self.robust_strength,
                self.gamma_feat + self.epsilon_target
            ));
        }
        let useful_r = (1.0 - self.ambiguous) * self.robust_strength * self.mean_amp();
        if useful_r < self.rho {
            return fail(format!("robust usefulness {useful_r} below rho {}", self.rho));
        }
        if self.nonrobust_count > 0 && self.nonrobust_strength * self.mean_amp() < self.rho {
            return fail(format!(
                "non-robust usefulness {} below rho {}",
                self.nonrobust_strength * self.mean_amp(),
                self.rho
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureKind {
    Robust,
    NonRobust,
}

/// Ground truth: which coordinates carry which features, and each class's signs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    pub robust: Vec<usize>,
    pub nonrobust: Vec<usize>,
    /// `[class][k]`, entries ±1
    pub robust_signs: Vec<Vec<i8>>,
    pub nonrobust_signs: Vec<Vec<i8>>,
}

impl FeatureMap {
    fn coords(&self, kind: FeatureKind) -> (&[usize], &[Vec<i8>]) {
        match kind {
            FeatureKind::Robust => (&self.robust, &self.robust_signs),
            FeatureKind::NonRobust => (&self.nonrobust, &self.nonrobust_signs),
        }
    }

    /// `E[y·f_k(x)]` over `ds`, with `y = s[label][k]`.
    pub fn usefulness<T: Real>(&self, ds: &Dataset<T>, kind: FeatureKind, k: usize) -> f64 {
        let (coords, signs) = self.coords(kind);
        let row = ds.images().row_len();
        let data = ds.images().data();
        let total: f64 = ds
            .labels()
            .iter()
            .enumerate()
            .map(|(i, &l)| signs[l][k] as f64 * (data[i * row + coords[k]].as_f64() - 0.5))
            .sum();
        total / ds.len() as f64
    }

    /// `E[inf_{x' ∈ ball} y·f_k(x')]`: the worst case moves the coordinate
    /// by ε against its label, stopping at the image box.
    pub fn worst_case<T: Real>(&self, ds: &Dataset<T>, kind: FeatureKind, k: usize, epsilon: f64) -> f64 {
        let (coords, signs) = self.coords(kind);
        let row = ds.images().row_len();
        let data = ds.images().data();
        let total: f64 = ds
            .labels()
            .iter()
            .enumerate()
            .map(|(i, &l)| {
                let s = signs[l][k] as f64;
                let v = data[i * row + coords[k]].as_f64();
                let moved = if s > 0.0 { (v - epsilon).max(0.0) } else { (v + epsilon).min(1.0) };
                s * (moved - 0.5)
            })
            .sum();
        total / ds.len() as f64
    }

    /// Worst-case margin of the linear template classifier restricted to one
    /// feature kind, at the noise-free class prototypes of unit amplitude:
    /// `min_c min_{c'≠c} (w_c − w_c')·μ_c − ε·‖w_c − w_c'‖₁`. A positive
    /// value means every prototype stays correctly classified inside the ball.
    pub fn prototype_margin(&self, spec: &SyntheticSpec, kind: FeatureKind, epsilon: f64) -> f64 {
        let (_, signs) = self.coords(kind);
        let strength = match kind {
            FeatureKind::Robust => spec.robust_strength,
            FeatureKind::NonRobust => spec.nonrobust_strength,
        };
        let mut worst = f64::INFINITY;
        for c in 0..signs.len() {
            for c2 in 0..signs.len() {
                if c2 == c {
                    continue;
                }
                let (mut clean, mut l1) = (0.0, 0.0);
                for k in 0..signs[c].len() {
                    let w = (signs[c][k] - signs[c2][k]) as f64;
                    clean += w * signs[c][k] as f64 * strength;
                    l1 += w.abs();
                }
                if l1 > 0.0 {
                    worst = worst.min(clean - epsilon * l1);
                }
            }
        }
        worst
    }
}

fn random_signs(rng: &mut ChaCha8Rng, classes: usize, count: usize) -> Vec<Vec<i8>> {
    (0..classes)
        .map(|_| (0..count).map(|_| if rng.random_bool(0.5) { 1 } else { -1 }).collect())
        .collect()
}

fn draw<T: Real>(spec: &SyntheticSpec, map: &FeatureMap, n: usize, seed: u64, tag: &str) -> Result<Dataset<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = spec.dimension();
    let mut labels: Vec<usize> = (0..n).map(|i| i % spec.classes).collect();
    labels.shuffle(&mut rng);
    let mut data = Vec::with_capacity(n * d);
    let mut x = vec![0.0f64; d];
    for &y in &labels {
        let a = if spec.amp_hi > spec.amp_lo {
            rng.random_range(spec.amp_lo..spec.amp_hi)
        } else {
            spec.amp_lo
        };
        let src = if rng.random::<f64>() < spec.ambiguous {
            (y + 1) % spec.classes
        } else {
            y
        };
        x.iter_mut().for_each(|v| *v = 0.5);
        for (k, &c) in map.robust.iter().enumerate() {
            x[c] += a * spec.robust_strength * map.robust_signs[src][k] as f64;
        }
        for (k, &c) in map.nonrobust.iter().enumerate() {
            x[c] += a * spec.nonrobust_strength * map.nonrobust_signs[y][k] as f64;
        }
        for v in x.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            data.push(T::of((*v + spec.noise * z).clamp(0.0, 1.0)));
        }
    }
    Dataset::new(Tensor::new(vec![n, 1, spec.side, spec.side], data)?, labels, spec.classes, tag)
}

/// Generate `(train, test, ground truth)`; deterministic in `seed`.
pub fn generate_synthetic<T: Real>(
    spec: &SyntheticSpec,
    n_train: usize,
    n_test: usize,
    seed: u64,
) -> Result<(Dataset<T>, Dataset<T>, FeatureMap)> {
    spec.validate()?;
    if n_train == 0 || n_test == 0 {
        return Err(Error::Empty("synthetic split".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut perm: Vec<usize> = (0..spec.dimension()).collect();
    perm.shuffle(&mut rng);
    let map = FeatureMap {
        robust: perm[..spec.robust_count].to_vec(),
        nonrobust: perm[spec.robust_count..spec.robust_count + spec.nonrobust_count].to_vec(),
        robust_signs: random_signs(&mut rng, spec.classes, spec.robust_count),
        nonrobust_signs: random_signs(&mut rng, spec.classes, spec.nonrobust_count),
    };
    let train = draw(spec, &map, n_train, seed.wrapping_add(1), "synthetic-train")?;
    let test = draw(spec, &map, n_test, seed.wrapping_add(2), "synthetic-test")?;
    Ok((train, test, map))
}
