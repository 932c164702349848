use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attack::{feature_inject, uniform_noise, AttackConfig};
use crate::data::Dataset;
use crate::diagnostics::eval::{attack_dataset, evaluate_robust, EVAL_BATCH};
use crate::error::{Error, Result};
use crate::model::{Model, ModelSpec};
use crate::rng;
use crate::tensor::{Real, Tensor};
use crate::train::{Init, Splits, TrainConfig, Trainer};

/// Misclassified adversarial examples relabeled with their predicted class.
pub struct NonRobustDataset<T> {
    pub dataset: Dataset<T>,
    /// Misclassified fraction before subsampling.
    pub success_rate: f64,
    pub attacked: usize,
}

/// Untargeted attack on `model` over `ds`; keeps the misclassified
/// `(x̂, ŷ)` pairs, optionally subsampled to `subsample` of them.
pub fn build_nonrobust_dataset<T: Real>(
    model: &Model<T>,
    ds: &Dataset<T>,
    attack: &AttackConfig,
    seed: u64,
    min_success_rate: f64,
    subsample: Option<usize>,
) -> Result<NonRobustDataset<T>> {
    let out = attack_dataset(model, ds, attack, seed)?;
    let mut keep: Vec<usize> = (0..ds.len()).filter(|&i| out.adv_pred[i] != ds.labels()[i]).collect();
    let success_rate = keep.len() as f64 / ds.len() as f64;
    if success_rate < min_success_rate {
        return Err(Error::invalid(format!(
            "attack success rate {success_rate:.4} below floor {min_success_rate}"
        )));
    }
    if let Some(n) = subsample {
        if n > keep.len() {
            return Err(Error::invalid(format!("cannot subsample {n} from {} examples", keep.len())));
        }
        keep.shuffle(&mut ChaCha8Rng::seed_from_u64(rng::derive(seed, &[rng::stream::LABELS])));
        keep.truncate(n);
        keep.sort_unstable();
    }
    let images = out.adv.gather_rows(&keep);
    let labels = keep.iter().map(|&i| out.adv_pred[i]).collect();
    Ok(NonRobustDataset {
        dataset: Dataset::new(images, labels, ds.classes(), format!("nonrobust:{}", ds.provenance()))?,
        success_rate,
        attacked: ds.len(),
    })
}

/// Minimize-direction perturbation of the whole dataset.
pub fn inject_dataset<T: Real>(model: &Model<T>, ds: &Dataset<T>, attack: &AttackConfig, seed: u64) -> Result<Dataset<T>> {
    let n = ds.len();
    let mut data = Vec::with_capacity(ds.images().len());
    for (chunk, start) in (0..n).step_by(EVAL_BATCH).enumerate() {
        let end = (start + EVAL_BATCH).min(n);
        let x = ds.images().slice_rows(start, end);
        let adv = feature_inject(model, &x, &ds.labels()[start..end], attack, rng::derive(seed, &[chunk as u64]))?;
        data.extend_from_slice(adv.data());
    }
    Dataset::new(
        Tensor::new(ds.images().shape().to_vec(), data)?,
        ds.labels().to_vec(),
        ds.classes(),
        format!("injected:{}", ds.provenance()),
    )
}

/// Uniform `U[−ε, ε]` noise on every example, projected into the box.
pub fn noise_dataset<T: Real>(ds: &Dataset<T>, epsilon: f64, seed: u64) -> Result<Dataset<T>> {
    let x = uniform_noise(ds.images(), epsilon, seed)?;
    Dataset::new(x, ds.labels().to_vec(), ds.classes(), format!("noise:{}", ds.provenance()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectRow {
    pub epsilon: f64,
    pub injected_nat: f64,
    pub injected_rob: f64,
    pub control_nat: f64,
    pub control_rob: f64,
}

/// For each ε: plant features of strength ε on the training set with
/// descent PGD (`steps` steps of size ε/4) from the base parameters, build
/// the matched uniform-noise control, continue training each arm from the
/// base parameters under `cfg`, and evaluate both on clean test data with
/// `cfg.eval_attack`. Both arms share every seed.
pub fn inject_experiment<T: Real>(
    spec: &ModelSpec,
    base: &Model<T>,
    cfg: &TrainConfig,
    train: &Dataset<T>,
    test: &Dataset<T>,
    eps_list: &[f64],
    steps: usize,
    seed: u64,
) -> Result<Vec<InjectRow>> {
    if eps_list.is_empty() {
        return Err(Error::invalid("empty epsilon list"));
    }
    let mut rows = Vec::with_capacity(eps_list.len());
    for &eps in eps_list {
        let attack = AttackConfig::pgd(eps, (eps / 4.0).max(f64::MIN_POSITIVE), steps).deterministic();
        let injected = inject_dataset(base, train, &attack, seed)?;
        let control = noise_dataset(train, eps, rng::derive(seed, &[rng::stream::AUGMENT]))?;
        let arm = |ds: &Dataset<T>| -> Result<(f64, f64)> {
            let r = Trainer::new(cfg, spec).init(Init::Params(base.params().clone())).run(&Splits {
                train: ds,
                val: None,
                test,
            })?;
            let m = Model::from_params(spec.clone(), r.state.theta)?;
            evaluate_robust(&m, test, &cfg.eval_attack, seed)
        };
        let (injected_nat, injected_rob) = arm(&injected)?;
        let (control_nat, control_rob) = arm(&control)?;
        rows.push(InjectRow {
            epsilon: eps,
            injected_nat,
            injected_rob,
            control_nat,
            control_rob,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attack::AttackSchedule;
    use crate::data::{generate_synthetic, SyntheticSpec};

    fn setup() -> (ModelSpec, Model<f32>, Dataset<f32>, Dataset<f32>) {
        let s = SyntheticSpec {
            classes: 3,
            side: 4,
            robust_count: 4,
            nonrobust_count: 4,
            ..SyntheticSpec::default()
        };
        let (train, test, _) = generate_synthetic::<f32>(&s, 48, 24, 0).unwrap();
        let spec = ModelSpec::mlp([1, 4, 4], vec![6], 3);
        (spec.clone(), Model::init(spec, 3).unwrap(), train, test)
    }

    #[test]
    fn nonrobust_labels_differ_and_rate_recounts() {
        let (_, m, train, _) = setup();
        let atk = AttackConfig::pgd(16.0 / 255.0, 2.0 / 255.0, 20);
        let nr = build_nonrobust_dataset(&m, &train, &atk, 4, 0.0, None).unwrap();
        let out = attack_dataset(&m, &train, &atk, 4).unwrap();
        let wrong = (0..train.len()).filter(|&i| out.adv_pred[i] != train.labels()[i]).count();
        assert_eq!(nr.success_rate, wrong as f64 / train.len() as f64);
        assert_eq!(nr.dataset.len(), wrong);
        assert!(build_nonrobust_dataset(&m, &train, &atk, 4, 1.1, None).is_err());
    }

    #[test]
    fn zero_epsilon_arms_match() {
        let (spec, m, train, test) = setup();
        let mut cfg = TrainConfig::pgd_at(1, vec![], 1.0);
        cfg.batch_size = 16;
        cfg.attack = AttackSchedule::constant(AttackConfig::pgd(8.0 / 255.0, 2.0 / 255.0, 1));
        cfg.eval_attack = AttackConfig::pgd(8.0 / 255.0, 2.0 / 255.0, 2);
        let injected = inject_dataset(&m, &train, &AttackConfig::pgd(0.0, 1.0, 5), 0).unwrap();
        assert_eq!(injected.images(), train.images());
        let rows = inject_experiment(&spec, &m, &cfg, &train, &test, &[0.0], 3, 1).unwrap();
        assert_eq!(rows[0].injected_rob, rows[0].control_rob);
        assert_eq!(rows[0].injected_nat, rows[0].control_nat);
    }
}
