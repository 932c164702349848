use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attack::AttackConfig;
use crate::data::Dataset;
use crate::diagnostics::eval::attack_dataset;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::tensor::Real;

/// Adversarial confusion matrix: entry `(i, j)` of `rates` is the fraction
/// of class-`i` examples whose adversarial version is predicted as `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: usize,
    /// Row-major raw counts.
    pub counts: Vec<u64>,
    /// Row-major row-normalized rates.
    pub rates: Vec<f64>,
    pub checkpoint: String,
    pub split: String,
    pub attack: Option<AttackConfig>,
}

impl ConfusionMatrix {
    /// Tally `(label, prediction)` pairs. Every class needs at least one example.
    pub fn from_predictions(labels: &[usize], preds: &[usize], classes: usize) -> Result<Self> {
        if labels.len() != preds.len() {
            return Err(Error::ShapeMismatch {
                op: "confusion",
                left: vec![labels.len()],
                right: vec![preds.len()],
            });
        }
        let mut counts = vec![0u64; classes * classes];
        for (&l, &p) in labels.iter().zip(preds) {
            if l >= classes || p >= classes {
                return Err(Error::LabelOutOfRange {
                    label: l.max(p),
                    classes,
                });
            }
            counts[l * classes + p] += 1;
        }
        let mut rates = vec![0.0; classes * classes];
        for i in 0..classes {
            let row = &counts[i * classes..(i + 1) * classes];
            let total: u64 = row.iter().sum();
            if total == 0 {
                return Err(Error::Empty(format!("class {i} has no examples")));
            }
            for j in 0..classes {
                rates[i * classes + j] = row[j] as f64 / total as f64;
            }
        }
        Ok(Self {
            classes,
            counts,
            rates,
            checkpoint: String::new(),
            split: String::new(),
            attack: None,
        })
    }

    pub fn with_meta(mut self, checkpoint: impl Into<String>, split: impl Into<String>, attack: AttackConfig) -> Self {
        self.checkpoint = checkpoint.into();
        self.split = split.into();
        self.attack = Some(attack);
        self
    }

    pub fn rate(&self, i: usize, j: usize) -> f64 {
        self.rates[i * self.classes + j]
    }

    pub fn counts_f64(&self) -> Vec<f64> {
        self.counts.iter().map(|&c| c as f64).collect()
    }

    /// Rows as CSV lines of rates (or counts).
    pub fn to_csv(&self, counts: bool) -> String {
        let mut s = String::new();
        for i in 0..self.classes {
            let row: Vec<String> = (0..self.classes)
                .map(|j| {
                    if counts {
                        self.counts[i * self.classes + j].to_string()
                    } else {
                        format!("{:.6}", self.rate(i, j))
                    }
                })
                .collect();
            s.push_str(&row.join(","));
            s.push('\n');
        }
        s
    }
}

/// Confusion matrix of adversarial predictions of `model` on `ds`.
pub fn confusion<T: Real>(model: &Model<T>, ds: &Dataset<T>, attack: &AttackConfig, seed: u64) -> Result<ConfusionMatrix> {
    let out = attack_dataset(model, ds, attack, seed)?;
    Ok(ConfusionMatrix::from_predictions(ds.labels(), &out.adv_pred, ds.classes())?.with_meta("", ds.provenance(), *attack))
}

/// Uniformly random labels in `[0, classes)`, for random-label controls.
pub fn random_labels(n: usize, classes: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(0..classes)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions_give_identity() {
        let labels = vec![0, 1, 2, 2, 1, 0];
        let cm = ConfusionMatrix::from_predictions(&labels, &labels, 3).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(cm.rate(i, j), if i == j { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn rows_sum_to_one_and_empty_class_errors() {
        let cm = ConfusionMatrix::from_predictions(&[0, 0, 0, 1, 1], &[0, 1, 1, 0, 1], 2).unwrap();
        assert_eq!(cm.counts, vec![1, 2, 1, 1]);
        for i in 0..2 {
            assert!(((0..2).map(|j| cm.rate(i, j)).sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!(ConfusionMatrix::from_predictions(&[0, 0], &[0, 1], 2).is_err());
        assert_eq!(cm.to_csv(true), "1,2\n1,1\n");
    }

    #[test]
    fn random_labels_in_range() {
        let l = random_labels(200, 7, 3);
        assert!(l.iter().all(|&v| v < 7));
        assert_eq!(l, random_labels(200, 7, 3));
    }
}
