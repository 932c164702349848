//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.
//!
//! The desk runs share their first 30 epochs: every preset trains
//! identically until the first milestone, so each seed trains that prefix
//! once and branches from it (`identities::shared_prefix_branching` checks
//! that this is bitwise equal to fresh runs).

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use rebat_core::attack::{AttackConfig, AttackSchedule};
use rebat_core::data::SyntheticSpec;
use rebat_core::diagnostics::{
    bilateral_correlation, build_nonrobust_dataset, confusion, memorization_probe, probe_attack, random_labels,
    symmetry_metric,
};
use rebat_core::experiment::{DatasetConfig, DatasetKind, Preset};
use rebat_core::train::{robust_gap, train_standard, EpochMetrics, Init, LrSchedule, Splits, TrainingState};
use rebat_core::{Dataset, Model, ModelSpec, TrainConfig, Trainer};

type F = f32;

const SEEDS: [u64; 3] = [0, 1, 2];
const EPOCHS: usize = 60;
const MILESTONES: [usize; 2] = [30, 45];

/// Desk-scale hyperparameters shared by every run.
struct Desk;

impl Desk {
    fn dataset(seed: u64) -> DatasetConfig {
        let mut d = DatasetConfig::default_for(DatasetKind::Synthetic);
        d.train_size = 2000;
        d.test_size = 1000;
        d.val_size = 500;
        d.data_seed = seed;
        d.synthetic = Some(SyntheticSpec::default());
        d
    }

    fn model(d: &DatasetConfig) -> ModelSpec {
        ModelSpec::small_cnn(d.image_shape(), d.classes())
    }

    fn train(preset: Preset, seed: u64) -> TrainConfig {
        Self::with_decay(preset.config_for(EPOCHS, MILESTONES.to_vec()), preset.decay_factor(), seed)
    }

    fn with_decay(mut cfg: TrainConfig, d: f64, seed: u64) -> TrainConfig {
        let eps = 8.0 / 255.0;
        cfg.seed = seed;
        cfg.batch_size = 128;
        cfg.weight_decay = 5e-4;
        cfg.lr = LrSchedule::piecewise(0.1, MILESTONES.to_vec(), d);
        cfg.attack = AttackSchedule::constant(AttackConfig::pgd(eps, eps / 4.0, 5));
        cfg.eval_attack = AttackConfig::pgd(eps, eps / 4.0, 10);
        cfg.val_every = 1;
        cfg
    }
}

struct Outcome {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn check(name: &'static str, f: impl FnOnce() -> Result<String, String>) -> Outcome {
    let start = Instant::now();
    let (pass, detail) = match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(d)) => (true, d),
        Ok(Err(d)) => (false, d),
        Err(p) => (
            false,
            p.downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()),
        ),
    };
    let o = Outcome {
        name,
        pass,
        detail: format!("{detail} [{:.1}s]", start.elapsed().as_secs_f64()),
    };
    println!("{} {}: {}", if o.pass { "PASS" } else { "FAIL" }, o.name, o.detail);
    o
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    v[v.len() / 2]
}

fn pts(v: f64) -> String {
    format!("{:.2}", 100.0 * v)
}

fn list(v: &[f64]) -> String {
    v.iter().map(|x| pts(*x)).collect::<Vec<_>>().join("/")
}

/// Everything the desk criteria need from one seed.
struct SeedRuns {
    seed: u64,
    train: Dataset<F>,
    test: Dataset<F>,
    classes: usize,
    spec: ModelSpec,
    prefix: TrainingState<F>,
    no_decay: TrainingState<F>,
    mid_decay: TrainingState<F>,
    pgd_at: TrainingState<F>,
    rebat: TrainingState<F>,
}

fn gap(h: &[EpochMetrics], wa: bool) -> f64 {
    robust_gap(h, wa).expect("non-empty history").gap
}

impl SeedRuns {
    fn train(seed: u64) -> Self {
        let dc = Desk::dataset(seed);
        let (train, val, test) = dc.load::<F>().expect("synthetic data");
        let spec = Desk::model(&dc);
        let splits = Splits {
            train: &train,
            val: val.as_ref(),
            test: &test,
        };
        let mut head = Desk::train(Preset::PgdAt, seed);
        head.epochs = MILESTONES[0];
        let prefix = Trainer::new(&head, &spec).run(&splits).expect("prefix run").state;
        let branch = |cfg: &TrainConfig| {
            Trainer::new(cfg, &spec)
                .init(Init::Resume(prefix.clone()))
                .run(&splits)
                .expect("branch run")
                .state
        };
        let base = Preset::PgdAt.config_for(EPOCHS, MILESTONES.to_vec());
        let no_decay = branch(&Desk::with_decay(base.clone(), 1.0, seed));
        let mid_decay = branch(&Desk::with_decay(base, 2.0, seed));
        let pgd_at = branch(&Desk::train(Preset::PgdAt, seed));
        let rebat = branch(&Desk::train(Preset::Rebat, seed));
        Self {
            seed,
            classes: dc.classes(),
            train,
            test,
            spec,
            prefix,
            no_decay,
            mid_decay,
            pgd_at,
            rebat,
        }
    }

    fn model(&self, s: &TrainingState<F>) -> Model<F> {
        Model::from_params(self.spec.clone(), s.theta.clone()).unwrap()
    }
}

fn robust_overfitting(runs: &[SeedRuns]) -> Result<String, String> {
    let g = |f: fn(&SeedRuns) -> &TrainingState<F>| runs.iter().map(|r| gap(&f(r).history, false)).collect::<Vec<_>>();
    let (g1, g2, g10) = (g(|r| &r.no_decay), g(|r| &r.mid_decay), g(|r| &r.pgd_at));
    let (m1, m2, m10) = (median(g1.clone()), median(g2.clone()), median(g10.clone()));
    let detail = format!(
        "robust gap (points, median of {}) d=1 {} [{}], d=2 {} [{}], d=10 {} [{}]",
        runs.len(),
        pts(m1),
        list(&g1),
        pts(m2),
        list(&g2),
        pts(m10),
        list(&g10)
    );
    let mut failed = Vec::new();
    if m10 < 0.03 {
        failed.push("(a) d=10 gap < 3");
    }
    if m1 >= 0.02 {
        failed.push("(b) d=1 gap >= 2");
    }
    if !(m1 <= m2 && m2 <= m10) {
        failed.push("(c) gap not non-decreasing in d");
    }
    if failed.is_empty() {
        Ok(detail)
    } else {
        Err(format!("{}; {detail}", failed.join(", ")))
    }
}

fn rebat_efficacy(runs: &[SeedRuns]) -> Result<String, String> {
    let final_rob = |s: &TrainingState<F>, wa: bool| {
        let m = s.history.last().unwrap();
        if wa {
            m.wa_test_rob_acc
        } else {
            m.test_rob_acc
        }
    };
    let rebat_final = median(runs.iter().map(|r| final_rob(&r.rebat, true)).collect());
    let pgd_final = median(runs.iter().map(|r| final_rob(&r.pgd_at, false)).collect());
    let rebat_gap = median(runs.iter().map(|r| gap(&r.rebat.history, true)).collect());
    let pgd_gap = median(runs.iter().map(|r| gap(&r.pgd_at.history, false)).collect());
    let detail = format!(
        "final robust acc ReBAT(WA) {} vs PGD-AT {}; robust gap ReBAT {} vs PGD-AT {}",
        pts(rebat_final),
        pts(pgd_final),
        pts(rebat_gap),
        pts(pgd_gap)
    );
    if rebat_final >= pgd_final && pgd_gap - rebat_gap >= 0.02 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

struct Signatures {
    probe: (f64, f64),
    symmetry: (f64, f64),
    bilateral: (Option<f64>, Option<f64>),
}

fn signatures(r: &SeedRuns, eval: &AttackConfig) -> Signatures {
    let early = r.model(&r.prefix);
    let decayed = r.model(&r.pgd_at);
    let flat = r.model(&r.no_decay);
    let probe = |late: &Model<F>| {
        memorization_probe(&early, late, &r.train, &probe_attack(), r.seed, 1)
            .expect("probe")
            .accuracy
    };
    let test_cm = |m: &Model<F>| confusion(m, &r.test, eval, r.seed).expect("confusion").rates;
    let sym = |m: &Model<F>| symmetry_metric(&test_cm(m), r.classes).unwrap();
    let train_before = confusion(&early, &r.train, eval, r.seed).unwrap().rates;
    let test_before = test_cm(&early);
    let bilateral = |m: &Model<F>| bilateral_correlation(&train_before, &test_before, &test_cm(m), r.classes).unwrap();
    Signatures {
        probe: (probe(&decayed), probe(&flat)),
        symmetry: (sym(&decayed), sym(&flat)),
        bilateral: (bilateral(&decayed), bilateral(&flat)),
    }
}

/// Each signature is judged on the median over seeds of (decayed − no-decay).
fn verification(runs: &[SeedRuns]) -> Vec<Outcome> {
    let eval = Desk::train(Preset::PgdAt, 0).eval_attack;
    let sigs: Vec<Signatures> = runs.iter().map(|r| signatures(r, &eval)).collect();
    let fmt = |pairs: Vec<(f64, f64)>| {
        pairs
            .iter()
            .map(|(a, b)| format!("{a:.3} vs {b:.3}"))
            .collect::<Vec<_>>()
            .join(", ")
    };
    let probe: Vec<(f64, f64)> = sigs.iter().map(|s| s.probe).collect();
    let sym: Vec<(f64, f64)> = sigs.iter().map(|s| s.symmetry).collect();
    let bil: Vec<(f64, f64)> = sigs
        .iter()
        .map(|s| (s.bilateral.0.unwrap_or(f64::NAN), s.bilateral.1.unwrap_or(f64::NAN)))
        .collect();
    let diff = |v: &[(f64, f64)]| median(v.iter().map(|(a, b)| a - b).collect());
    vec![
        check("signature (i) memorization probe", || {
            let d = format!("decayed vs no-decay per seed: {}", fmt(probe.clone()));
            if diff(&probe) > 0.0 { Ok(d) } else { Err(d) }
        }),
        check("signature (ii) confusion symmetry", || {
            let d = format!("decayed vs no-decay per seed: {}", fmt(sym.clone()));
            if diff(&sym) < 0.0 { Ok(d) } else { Err(d) }
        }),
        check("signature (iii) bilateral correlation", || {
            let d = format!("decayed vs no-decay per seed: {}", fmt(bil.clone()));
            if bil.iter().any(|(a, b)| a.is_nan() || b.is_nan()) {
                return Err(format!("undefined correlation; {d}"));
            }
            if diff(&bil) > 0.0 { Ok(d) } else { Err(d) }
        }),
    ]
}

/// Standard retraining from the pre-decay checkpoint on its relabeled
/// adversarial examples, against the same images with random labels.
fn nonrobust_retraining(r: &SeedRuns) -> Result<String, String> {
    let early = r.model(&r.prefix);
    let attack = AttackConfig::pgd(16.0 / 255.0, 2.0 / 255.0, 20);
    let nr = build_nonrobust_dataset(&early, &r.train, &attack, r.seed, 0.0, None).map_err(|e| e.to_string())?;
    let mut cfg = TrainConfig::pgd_at(10, vec![7], 10.0);
    cfg.seed = r.seed;
    cfg.eval_attack = AttackConfig::none();
    let control = nr
        .dataset
        .with_labels(random_labels(nr.dataset.len(), r.classes, r.seed))
        .unwrap();
    let retrain = |ds: &Dataset<F>| {
        let splits = Splits {
            train: ds,
            val: None,
            test: &r.test,
        };
        let res = train_standard(&cfg, &r.spec, &splits, Some(r.prefix.theta.clone()), None).expect("retraining");
        res.history().last().unwrap().test_nat_acc
    };
    let (acc, ctrl) = (retrain(&nr.dataset), retrain(&control));
    let chance = 1.0 / r.classes as f64;
    let detail = format!(
        "{} relabeled examples (success rate {}); natural acc {} vs random-label control {} (chance {})",
        nr.dataset.len(),
        pts(nr.success_rate),
        pts(acc),
        pts(ctrl),
        pts(chance)
    );
    if acc >= 2.0 * ctrl && (ctrl - chance).abs() <= 0.05 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn main() {
    let start = Instant::now();
    let mut out = Vec::new();

    out.push(check("gradient oracle", || {
        let t = Instant::now();
        let d = common::oracles::autodiff_matches_finite_differences();
        if t.elapsed().as_secs() < 120 { Ok(d) } else { Err(format!("too slow; {d}")) }
    }));
    out.push(check("attack oracle", || {
        common::oracles::pgd_reaches_grid_maximum_on_linear_models();
        common::oracles::every_emitted_adversarial_example_respects_the_box();
        Ok("PGD-5 within 1e-3 of the 41x41 grid maximum; every example inside the box".into())
    }));
    out.push(check("identity ladder", || {
        use common::ladder::*;
        boat_with_zero_lambda_is_cross_entropy_bitwise();
        ema_extremes_freeze_or_copy();
        averaging_with_gamma_zero_tracks_online_weights();
        averaging_with_gamma_one_freezes_at_start();
        zero_step_pgd_training_is_standard_training();
        unit_decay_factor_is_no_decay();
        branching_from_shared_prefix_matches_fresh_runs();
        Ok("boat(λ=0) = CE, ema γ∈{0,1}, PGD-0 = standard, d=1 = no decay, all bitwise".into())
    }));
    out.push(check("diagnostic oracles", || {
        common::oracles::symmetry_metric_matches_dense_svd();
        common::oracles::pearson_matches_direct_formula();
        common::oracles::confusion_matches_recount();
        Ok("symmetry vs SVD within 1e-6, pearson within 1e-12, confusion recount exact".into())
    }));

    let runs: Vec<SeedRuns> = SEEDS
        .iter()
        .map(|&s| {
            let t = Instant::now();
            let r = SeedRuns::train(s);
            eprintln!("desk runs for seed {s}: {:.0}s", t.elapsed().as_secs_f64());
            r
        })
        .collect();
    out.push(check("robust overfitting", || robust_overfitting(&runs)));
    out.push(check("ReBAT efficacy", || rebat_efficacy(&runs)));
    out.extend(verification(&runs));
    out.push(check("non-robust dataset retraining", || nonrobust_retraining(&runs[0])));

    let failed = out.iter().filter(|o| !o.pass).count();
    println!(
        "acceptance: {} passed, {failed} failed in {:.0}s",
        out.len() - failed,
        start.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
