use crate::attack::{pgd_attack, AttackConfig};
use crate::data::Dataset;
use crate::error::Result;
use crate::model::Model;
use crate::rng;
use crate::tensor::{Real, Tensor};

/// Examples per attack/forward chunk during evaluation.
pub const EVAL_BATCH: usize = 256;

/// Clean and adversarial predictions for every example, plus the
/// adversarial inputs. Chunk `i` is attacked with seed `derive(seed, [i])`.
pub struct AdversarialOutcome<T> {
    pub clean_pred: Vec<usize>,
    pub adv_pred: Vec<usize>,
    pub adv: Tensor<T>,
}

pub fn attack_dataset<T: Real>(
    model: &Model<T>,
    ds: &Dataset<T>,
    attack: &AttackConfig,
    seed: u64,
) -> Result<AdversarialOutcome<T>> {
    ds.non_empty("evaluation")?;
    let n = ds.len();
    let mut clean_pred = Vec::with_capacity(n);
    let mut adv_pred = Vec::with_capacity(n);
    let mut adv_data = Vec::with_capacity(ds.images().len());
    for (chunk, start) in (0..n).step_by(EVAL_BATCH).enumerate() {
        let end = (start + EVAL_BATCH).min(n);
        let x = ds.images().slice_rows(start, end);
        let y = &ds.labels()[start..end];
        let clean = model.predict(&x)?;
        let (adv, pred) = if attack.is_identity() {
            (x, clean.clone())
        } else {
            let a = pgd_attack(model, &x, y, attack, rng::derive(seed, &[chunk as u64]))?;
            let p = model.predict(&a)?;
            (a, p)
        };
        clean_pred.extend(clean);
        adv_pred.extend(pred);
        adv_data.extend_from_slice(adv.data());
    }
    Ok(AdversarialOutcome {
        clean_pred,
        adv_pred,
        adv: Tensor::new(ds.images().shape().to_vec(), adv_data)?,
    })
}

/// `(natural accuracy, robust accuracy)` under `attack`.
pub fn evaluate_robust<T: Real>(model: &Model<T>, ds: &Dataset<T>, attack: &AttackConfig, seed: u64) -> Result<(f64, f64)> {
    let out = attack_dataset(model, ds, attack, seed)?;
    Ok((accuracy(&out.clean_pred, ds.labels()), accuracy(&out.adv_pred, ds.labels())))
}

pub fn accuracy(pred: &[usize], labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    pred.iter().zip(labels).filter(|(p, l)| p == l).count() as f64 / labels.len() as f64
}
