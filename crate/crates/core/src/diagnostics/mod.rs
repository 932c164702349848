//! Post-hoc analyses of trained checkpoints.

pub mod confusion;
pub mod eval;
pub mod landscape;
pub mod nonrobust;
pub mod probes;
pub mod stats;

pub use confusion::{confusion, random_labels, ConfusionMatrix};
pub use eval::{accuracy, attack_dataset, evaluate_robust, AdversarialOutcome, EVAL_BATCH};
pub use landscape::{filter_normalized_direction, landscape_along, loss_landscape_1d, sharpness, LandscapePoint};
pub use nonrobust::{build_nonrobust_dataset, inject_dataset, inject_experiment, noise_dataset, InjectRow, NonRobustDataset};
pub use probes::{memorization_probe, probe_attack, target_class_probe, LabelMode, ProbeResult};
pub use stats::{bilateral_correlation, bilateral_pairs, pearson, spectral_norm, symmetry_metric};
