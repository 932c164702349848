use serde::{Deserialize, Serialize};

use crate::attack::AttackConfig;
use crate::data::Dataset;
use crate::diagnostics::eval::{accuracy, attack_dataset};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::tensor::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelMode {
    TrueLabel,
    MisclassifiedLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub source: String,
    pub target: String,
    pub attack: AttackConfig,
    pub samples: usize,
    pub accuracy: f64,
    pub label_mode: LabelMode,
}

impl ProbeResult {
    pub fn with_ids(mut self, source: impl Into<String>, target: impl Into<String>) -> Self {
        self.source = source.into();
        self.target = target.into();
        self
    }
}

/// Attack `source` on `ds`, keep the misclassified adversarial examples, and
/// score `target` on them against either the true or the misclassified labels.
fn probe<T: Real>(
    source: &Model<T>,
    target: &Model<T>,
    ds: &Dataset<T>,
    attack: &AttackConfig,
    seed: u64,
    min_samples: usize,
    mode: LabelMode,
) -> Result<ProbeResult> {
    let out = attack_dataset(source, ds, attack, seed)?;
    let keep: Vec<usize> = (0..ds.len()).filter(|&i| out.adv_pred[i] != ds.labels()[i]).collect();
    if keep.is_empty() || keep.len() < min_samples {
        return Err(Error::Empty(format!(
            "{} misclassified adversarial examples, need at least {}",
            keep.len(),
            min_samples.max(1)
        )));
    }
    let x = out.adv.gather_rows(&keep);
    let labels: Vec<usize> = match mode {
        LabelMode::TrueLabel => keep.iter().map(|&i| ds.labels()[i]).collect(),
        LabelMode::MisclassifiedLabel => keep.iter().map(|&i| out.adv_pred[i]).collect(),
    };
    let pred = target.predict(&x)?;
    Ok(ProbeResult {
        source: String::new(),
        target: String::new(),
        attack: *attack,
        samples: keep.len(),
        accuracy: accuracy(&pred, &labels),
        label_mode: mode,
    })
}

/// Adversarial examples crafted on `early` over the training split that it
/// misclassifies, scored on `late` against their true labels.
pub fn memorization_probe<T: Real>(
    early: &Model<T>,
    late: &Model<T>,
    train: &Dataset<T>,
    attack: &AttackConfig,
    seed: u64,
    min_samples: usize,
) -> Result<ProbeResult> {
    probe(early, late, train, attack, seed, min_samples, LabelMode::TrueLabel)
}

/// Adversarial examples crafted on `late` over the test split that it
/// misclassifies, scored on `reference` against the misclassified labels.
pub fn target_class_probe<T: Real>(
    reference: &Model<T>,
    late: &Model<T>,
    test: &Dataset<T>,
    attack: &AttackConfig,
    seed: u64,
    min_samples: usize,
) -> Result<ProbeResult> {
    probe(late, reference, test, attack, seed, min_samples, LabelMode::MisclassifiedLabel)
}

/// Probe attack: PGD-20, ε = 16/255, α = 2/255.
pub fn probe_attack() -> AttackConfig {
    AttackConfig::pgd(16.0 / 255.0, 2.0 / 255.0, 20)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticSpec};
    use crate::model::ModelSpec;

    fn setup() -> (Model<f64>, Model<f64>, Dataset<f64>) {
        let spec = SyntheticSpec {
            classes: 3,
            side: 4,
            robust_count: 4,
            nonrobust_count: 4,
            ..SyntheticSpec::default()
        };
        let (train, _, _) = generate_synthetic::<f64>(&spec, 60, 10, 2).unwrap();
        let m = ModelSpec::mlp([1, 4, 4], vec![6], 3);
        (Model::init(m.clone(), 1).unwrap(), Model::init(m, 2).unwrap(), train)
    }

    #[test]
    fn forced_values_on_identical_checkpoints() {
        let (a, _, ds) = setup();
        let atk = probe_attack();
        let m = memorization_probe(&a, &a, &ds, &atk, 0, 1).unwrap();
        assert_eq!(m.accuracy, 0.0);
        assert_eq!(m.label_mode, LabelMode::TrueLabel);
        let t = target_class_probe(&a, &a, &ds, &atk, 0, 1).unwrap();
        assert_eq!(t.accuracy, 1.0);
        assert!(t.samples > 0);
    }

    #[test]
    fn min_sample_floor() {
        let (a, b, ds) = setup();
        assert!(memorization_probe(&a, &b, &ds, &probe_attack(), 0, 10_000).is_err());
    }
}
