//! Degenerate settings that must collapse exactly onto simpler training.

use rebat_core::attack::{AttackConfig, AttackSchedule};
use rebat_core::autodiff::Tape;
use rebat_core::data::{generate_synthetic, SyntheticSpec};
use rebat_core::train::loss::boat_loss;
use rebat_core::train::{ema_update, Init, Splits, TrainingState};
use rebat_core::train::metrics::CSV_COLUMNS;
use rebat_core::train::{LrSchedule, RunResult};
use rebat_core::{Dataset, Model, ModelSpec, TrainConfig, Trainer};

fn data() -> (Dataset<f32>, Dataset<f32>, Dataset<f32>, ModelSpec) {
    let spec = SyntheticSpec {
        classes: 4,
        side: 6,
        robust_count: 4,
        nonrobust_count: 6,
        ..SyntheticSpec::default()
    };
    let (train, test, _) = generate_synthetic::<f32>(&spec, 160, 60, 2).unwrap();
    let (val, _, _) = generate_synthetic::<f32>(&spec, 40, 4, 3).unwrap();
    (train, val, test, ModelSpec::small_cnn_with([1, 6, 6], vec![4, 8], 4))
}

fn config() -> TrainConfig {
    let mut cfg = TrainConfig::pgd_at(4, vec![2, 3], 10.0);
    cfg.batch_size = 32;
    cfg.seed = 21;
    cfg.attack = AttackSchedule::constant(AttackConfig::pgd(8.0 / 255.0, 2.0 / 255.0, 2));
    cfg.eval_attack = AttackConfig::pgd(8.0 / 255.0, 2.0 / 255.0, 2);
    cfg.val_every = 1;
    cfg
}

fn run(cfg: &TrainConfig) -> RunResult<f32> {
    let (train, val, test, spec) = data();
    let splits = Splits {
        train: &train,
        val: Some(&val),
        test: &test,
    };
    Trainer::new(cfg, &spec).run(&splits).unwrap()
}

/// Parameters and every logged metric agree bitwise. The `eps_train` column
/// only echoes the configured budget, so it is left out.
fn assert_same_run(a: &TrainingState<f32>, b: &TrainingState<f32>) {
    assert_eq!(a.theta.values(), b.theta.values());
    assert_eq!(a.phi.values(), b.phi.values());
    let skip = CSV_COLUMNS.iter().position(|c| *c == "eps_train").unwrap();
    let rows = |s: &TrainingState<f32>| {
        s.history
            .iter()
            .map(|m| m.csv_row().split(',').enumerate().filter(|(i, _)| *i != skip).map(|(_, v)| v.to_string()).collect::<Vec<_>>())
            .collect::<Vec<_>>()
    };
    assert_eq!(rows(a), rows(b));
}

pub fn boat_with_zero_lambda_is_cross_entropy_bitwise() {
    let (train, _, _, spec) = data();
    let model = Model::<f32>::init(spec.clone(), 1).unwrap();
    let wa = Model::<f32>::init(spec, 2).unwrap();
    let (x, y) = train.batch(&(0..32).collect::<Vec<_>>());
    let (value, grads) = boat_loss(&model, &wa, &x, &y, 0.0).unwrap();

    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let (logits, params) = model.forward(&mut tape, xv, true).unwrap();
    let ce = tape.softmax_cross_entropy(logits, &y).unwrap();
    let expected = tape.value(ce).item().unwrap();
    tape.backward(ce).unwrap();
    assert_eq!(value.to_bits(), (expected as f64).to_bits());
    assert_eq!(grads, model.gather_grads(&tape, &params));
}

pub fn ema_extremes_freeze_or_copy() {
    let spec = ModelSpec::small_cnn_with([1, 6, 6], vec![4, 8], 4);
    let theta = Model::<f32>::init(spec.clone(), 1).unwrap().params().clone();
    let phi0 = Model::<f32>::init(spec, 2).unwrap().params().clone();

    let mut phi = phi0.clone();
    ema_update(&mut phi, &theta, 1.0).unwrap();
    assert_eq!(phi.values(), phi0.values());

    let mut phi = phi0.clone();
    ema_update(&mut phi, &theta, 0.0).unwrap();
    assert_eq!(phi.values(), theta.values());
}

pub fn averaging_with_gamma_zero_tracks_online_weights() {
    let mut cfg = config();
    cfg.wa.enabled = true;
    cfg.wa.start_epoch = Some(1);
    cfg.wa.gamma = 0.0;
    let r = run(&cfg);
    assert_eq!(r.state.phi.values(), r.state.theta.values());
    for m in r.history() {
        assert_eq!(m.wa_test_rob_acc, m.test_rob_acc);
    }
}

pub fn averaging_with_gamma_one_freezes_at_start() {
    let mut cfg = config();
    cfg.wa.enabled = true;
    cfg.wa.start_epoch = Some(2);
    cfg.wa.gamma = 1.0;
    let frozen = {
        let mut c = cfg.clone();
        c.epochs = 2;
        run(&c).state.theta
    };
    let r = run(&cfg);
    assert_eq!(r.state.phi.values(), frozen.values());
    assert_ne!(r.state.theta.values(), frozen.values());
}

pub fn zero_step_pgd_training_is_standard_training() {
    let mut cfg = config();
    cfg.attack = AttackSchedule::constant(AttackConfig::pgd(8.0 / 255.0, 2.0 / 255.0, 0).deterministic());
    assert_same_run(&run(&cfg).state, &run(&config().standard()).state);
}

pub fn unit_decay_factor_is_no_decay() {
    let mut decayed = config();
    decayed.lr = LrSchedule::piecewise(0.1, vec![2, 3], 1.0);
    let mut flat = config();
    flat.lr = LrSchedule::constant(0.1);
    assert_same_run(&run(&decayed).state, &run(&flat).state);
}

/// Before the first milestone every preset trains identically, so a run may
/// branch from a shared PGD-AT prefix.
pub fn branching_from_shared_prefix_matches_fresh_runs() {
    let mut rebat = config();
    rebat.lr = LrSchedule::piecewise(0.1, vec![2, 3], 1.5);
    rebat.wa.enabled = true;
    rebat.wa.start_epoch = Some(3);
    rebat.boat.lambda = 1.0;
    let mut prefix = config();
    prefix.epochs = 2;
    let shared = run(&prefix).state;

    let (train, val, test, spec) = data();
    let splits = Splits {
        train: &train,
        val: Some(&val),
        test: &test,
    };
    for cfg in [rebat, config()] {
        let branched = Trainer::new(&cfg, &spec).init(Init::Resume(shared.clone())).run(&splits).unwrap();
        assert_same_run(&branched.state, &run(&cfg).state);
    }
}
