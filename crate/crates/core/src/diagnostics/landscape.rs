use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::attack::{pgd_attack, AttackConfig};
use crate::autodiff::Tape;
use crate::data::Dataset;
use crate::diagnostics::eval::EVAL_BATCH;
use crate::error::{Error, Result};
use crate::model::{Model, ParamKind, ParamVector};
use crate::rng;
use crate::tensor::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LandscapePoint {
    pub t: f64,
    /// `None` when the loss was not finite.
    pub loss: Option<f64>,
}

/// Gaussian direction rescaled filter by filter to the norm of the matching
/// filter of `theta` (conv: one output channel; linear: one output unit).
/// Bias entries are zero.
pub fn filter_normalized_direction<T: Real>(theta: &ParamVector<T>, seed: u64) -> ParamVector<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dir = ParamVector::zeros_like(theta);
    for slot in theta.layout() {
        let base = slot.offset;
        let groups: Vec<Vec<usize>> = match slot.kind {
            ParamKind::Bias => continue,
            ParamKind::ConvWeight => {
                let per = slot.len() / slot.shape[0];
                (0..slot.shape[0]).map(|f| (base + f * per..base + (f + 1) * per).collect()).collect()
            }
            ParamKind::LinearWeight => {
                let (fan_in, fan_out) = (slot.shape[0], slot.shape[1]);
                (0..fan_out).map(|j| (0..fan_in).map(|i| base + i * fan_out + j).collect()).collect()
            }
        };
        let d = dir.values_mut();
        for g in &groups {
            for &k in g {
                d[k] = T::of(StandardNormal.sample(&mut rng));
            }
        }
        for g in groups {
            let dn = g.iter().map(|&k| d[k].as_f64().powi(2)).sum::<f64>().sqrt();
            let tn = g.iter().map(|&k| theta.values()[k].as_f64().powi(2)).sum::<f64>().sqrt();
            let s = if dn > 0.0 { tn / dn } else { 0.0 };
            for k in g {
                d[k] = T::of(d[k].as_f64() * s);
            }
        }
    }
    dir
}

/// Evenly spaced `t` values on `[−radius, radius]`.
pub fn t_grid(n_points: usize, radius: f64) -> Result<Vec<f64>> {
    if n_points < 3 || !(radius > 0.0) {
        return Err(Error::invalid("landscape needs n_points >= 3 and radius > 0"));
    }
    Ok((0..n_points)
        .map(|i| -radius + 2.0 * radius * i as f64 / (n_points - 1) as f64)
        .collect())
}

/// Evaluate `f(θ + t·dir)` along the grid.
pub fn landscape_along<T: Real, F>(theta: &ParamVector<T>, dir: &ParamVector<T>, ts: &[f64], mut f: F) -> Result<Vec<LandscapePoint>>
where
    F: FnMut(&ParamVector<T>) -> Result<f64>,
{
    ts.iter()
        .map(|&t| {
            let p = theta.interpolate(dir, t)?;
            let v = match f(&p) {
                Ok(v) if v.is_finite() => Some(v),
                Ok(_) | Err(Error::NonFinite(_)) => None,
                Err(e) => return Err(e),
            };
            Ok(LandscapePoint { t, loss: v })
        })
        .collect()
}

/// Mean adversarial CE of `model` on `ds`, attacking with fixed seeds.
pub fn adversarial_loss<T: Real>(model: &Model<T>, ds: &Dataset<T>, attack: &AttackConfig, seed: u64) -> Result<f64> {
    ds.non_empty("landscape")?;
    let mut total = 0.0;
    for (chunk, start) in (0..ds.len()).step_by(EVAL_BATCH).enumerate() {
        let end = (start + EVAL_BATCH).min(ds.len());
        let x = ds.images().slice_rows(start, end);
        let y = &ds.labels()[start..end];
        let adv = pgd_attack(model, &x, y, attack, rng::derive(seed, &[chunk as u64]))?;
        let mut tape = Tape::new();
        let xv = tape.constant(adv);
        let (logits, _) = model.forward(&mut tape, xv, false)?;
        let l = tape.softmax_cross_entropy(logits, y)?;
        total += tape.value(l).item()?.as_f64() * (end - start) as f64;
    }
    Ok(total / ds.len() as f64)
}

/// 1-D adversarial loss landscape around `model` along a filter-normalized
/// random direction drawn from `seed`.
pub fn loss_landscape_1d<T: Real>(
    model: &Model<T>,
    ds: &Dataset<T>,
    attack: &AttackConfig,
    n_points: usize,
    radius: f64,
    seed: u64,
) -> Result<Vec<LandscapePoint>> {
    let ts = t_grid(n_points, radius)?;
    let dir = filter_normalized_direction(model.params(), seed);
    let attack_seed = rng::derive(seed, &[rng::stream::EVAL]);
    landscape_along(model.params(), &dir, &ts, |p| {
        let m = Model::from_params(model.spec().clone(), p.clone())?;
        adversarial_loss(&m, ds, attack, attack_seed)
    })
}

/// `max − min` of the finite losses on a curve.
pub fn sharpness(curve: &[LandscapePoint]) -> Option<f64> {
    let vals: Vec<f64> = curve.iter().filter_map(|p| p.loss).collect();
    if vals.is_empty() {
        return None;
    }
    let max = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = vals.iter().cloned().fold(f64::INFINITY, f64::min);
    Some(max - min)
}
