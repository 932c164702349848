//! Independent oracles for the hand-written numerics: finite differences for
//! gradients, exhaustive grid search for the attack, dense SVD and direct
//! formulas for the diagnostics.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rebat_core::attack::{pgd_attack, AttackConfig};
use rebat_core::autodiff::Tape;
use rebat_core::diagnostics::{confusion, pearson, symmetry_metric, EVAL_BATCH};
use rebat_core::gradcheck::{finite_diff_coords, relative_error};
use rebat_core::rng::derive;
use rebat_core::train::loss::{boat_loss, boat_objective};
use rebat_core::{Dataset, Model, ModelSpec, Tensor};

const GRAD_TOL: f64 = 1e-4;
const FD_STEP: f64 = 1e-6;

fn random_batch(rng: &mut ChaCha8Rng, spec: &ModelSpec, n: usize) -> (Tensor<f64>, Vec<usize>) {
    let shape = [n, spec.input_shape[0], spec.input_shape[1], spec.input_shape[2]];
    let len = shape.iter().product();
    let x = Tensor::new(shape.to_vec(), (0..len).map(|_| rng.random::<f64>()).collect()).unwrap();
    let y = (0..n).map(|_| rng.random_range(0..spec.classes)).collect();
    (x, y)
}

fn ce_of(model: &Model<f64>, x: &Tensor<f64>, y: &[usize]) -> f64 {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let (logits, _) = model.forward(&mut tape, xv, false).unwrap();
    let loss = boat_objective(&mut tape, logits, None, y, 0.0).unwrap();
    tape.value(loss).item().unwrap()
}

fn with_params(model: &Model<f64>, values: &Tensor<f64>) -> Model<f64> {
    let mut m = model.clone();
    m.params_mut().values_mut().copy_from_slice(values.data());
    m
}

struct Tally {
    graphs: usize,
    coords: usize,
    worst: f64,
}

impl Tally {
    fn check(&mut self, analytic: &[f64], numeric: &[f64], what: &str) {
        self.graphs += 1;
        for (a, n) in analytic.iter().zip(numeric) {
            self.coords += 1;
            let err = relative_error(*a, *n);
            self.worst = self.worst.max(err);
            assert!(err <= GRAD_TOL, "{what}: analytic {a} vs numeric {n} (rel {err})");
        }
    }
}

fn pick(rng: &mut ChaCha8Rng, len: usize, k: usize) -> Vec<usize> {
    (0..k).map(|_| rng.random_range(0..len)).collect()
}

/// Parameter and input gradients of one graph against central differences.
fn check_graph(spec: ModelSpec, seed: u64, lambda: f64, tally: &mut Tally) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = Model::<f64>::init(spec.clone(), seed).unwrap();
    let wa = Model::<f64>::init(spec.clone(), seed + 1000).unwrap();
    let (x, y) = random_batch(&mut rng, &spec, 3);

    let (_, grads) = boat_loss(&model, &wa, &x, &y, lambda).unwrap();
    let theta = Tensor::new(vec![model.param_count()], model.params().values().to_vec()).unwrap();
    let coords = pick(&mut rng, theta.len(), 8);
    let numeric = finite_diff_coords(
        |p| boat_loss(&with_params(&model, p), &wa, &x, &y, lambda).unwrap().0,
        &theta,
        &coords,
        FD_STEP,
    );
    let analytic: Vec<f64> = coords.iter().map(|&i| grads[i]).collect();
    tally.check(&analytic, &numeric, &format!("params {:?} seed {seed} λ {lambda}", spec.arch));

    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone(), true);
    let (logits, _) = model.forward(&mut tape, xv, false).unwrap();
    let loss = boat_objective(&mut tape, logits, None, &y, 0.0).unwrap();
    tape.backward(loss).unwrap();
    let gx = tape.grad(xv).unwrap().to_vec();
    let coords = pick(&mut rng, x.len(), 4);
    let numeric = finite_diff_coords(|xp| ce_of(&model, xp, &y), &x, &coords, FD_STEP);
    let analytic: Vec<f64> = coords.iter().map(|&i| gx[i]).collect();
    tally.check(&analytic, &numeric, &format!("input {:?} seed {seed}", spec.arch));
}

pub fn autodiff_matches_finite_differences() -> String {
    let start = std::time::Instant::now();
    let mut tally = Tally {
        graphs: 0,
        coords: 0,
        worst: 0.0,
    };
    for seed in 0..6 {
        check_graph(ModelSpec::mlp([1, 3, 3], vec![7, 5], 4), seed, 0.0, &mut tally);
        check_graph(ModelSpec::mlp([2, 2, 2], vec![6], 3), seed, 1.0, &mut tally);
        check_graph(ModelSpec::small_cnn_with([1, 6, 6], vec![3, 4], 3), seed, 0.0, &mut tally);
        check_graph(ModelSpec::small_cnn_with([2, 5, 5], vec![2, 3, 4], 4), seed, 0.5, &mut tally);
    }
    assert!(tally.graphs >= 20 && tally.coords >= 200, "{} graphs, {} coords", tally.graphs, tally.coords);
    assert!(start.elapsed().as_secs() < 120);
    format!("{} graphs, {} coordinates, worst relative error {:.2e}", tally.graphs, tally.coords, tally.worst)
}

fn softmax_ce(logits: &[f64], y: usize) -> f64 {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
    lse - logits[y]
}

fn check_box(adv: &[f64], clean: &[f64], eps: f64) {
    for (a, c) in adv.iter().zip(clean) {
        assert!((a - c).abs() <= eps + 1e-6, "outside ε-ball: {a} vs {c}");
        assert!((0.0..=1.0).contains(a), "outside [0,1]: {a}");
    }
}

pub fn pgd_reaches_grid_maximum_on_linear_models() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let spec = ModelSpec::mlp([1, 1, 2], vec![], 2);
    for trial in 0..50 {
        let model = Model::<f64>::init(spec.clone(), trial).unwrap();
        let eps = rng.random_range(0.02..0.3);
        let (x, y) = random_batch(&mut rng, &spec, 4);
        let cfg = AttackConfig::pgd(eps, 2.5 * eps / 5.0, 5);
        let adv = pgd_attack(&model, &x, &y, &cfg, trial).unwrap();
        check_box(adv.data(), x.data(), eps);
        let adv_logits = model.logits(&adv).unwrap();
        for i in 0..y.len() {
            let c = [x.data()[2 * i], x.data()[2 * i + 1]];
            let lo = [(c[0] - eps).max(0.0), (c[1] - eps).max(0.0)];
            let hi = [(c[0] + eps).min(1.0), (c[1] + eps).min(1.0)];
            let mut grid = Vec::with_capacity(41 * 41 * 2);
            for a in 0..41 {
                for b in 0..41 {
                    grid.push(lo[0] + (hi[0] - lo[0]) * a as f64 / 40.0);
                    grid.push(lo[1] + (hi[1] - lo[1]) * b as f64 / 40.0);
                }
            }
            let g = model.logits(&Tensor::new(vec![41 * 41, 1, 1, 2], grid).unwrap()).unwrap();
            let best = g.data().chunks(2).map(|l| softmax_ce(l, y[i])).fold(f64::NEG_INFINITY, f64::max);
            let got = softmax_ce(&adv_logits.data()[2 * i..2 * i + 2], y[i]);
            assert!(got >= best - 1e-3, "trial {trial} ex {i}: pgd {got} < grid {best}");
        }
    }
}

pub fn every_emitted_adversarial_example_respects_the_box() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let spec = ModelSpec::small_cnn_with([1, 6, 6], vec![4, 6], 3);
    for seed in 0..10 {
        let model = Model::<f64>::init(spec.clone(), seed).unwrap();
        let (x, y) = random_batch(&mut rng, &spec, 8);
        for cfg in [
            AttackConfig::pgd(8.0 / 255.0, 2.0 / 255.0, 10),
            AttackConfig::pgd(16.0 / 255.0, 4.0 / 255.0, 3).best(),
            AttackConfig::pgd(0.5, 0.2, 4).minimize(),
        ] {
            let adv = pgd_attack(&model, &x, &y, &cfg, seed).unwrap();
            check_box(adv.data(), x.data(), cfg.epsilon);
        }
    }
}

/// One-sided Jacobi SVD; returns all singular values.
fn jacobi_singular_values(m: &[f64], n: usize) -> Vec<f64> {
    let mut a = m.to_vec();
    for _sweep in 0..100 {
        let mut off = 0.0f64;
        for p in 0..n {
            for q in p + 1..n {
                let (mut alpha, mut beta, mut gamma) = (0.0, 0.0, 0.0);
                for i in 0..n {
                    let (x, y) = (a[i * n + p], a[i * n + q]);
                    alpha += x * x;
                    beta += y * y;
                    gamma += x * y;
                }
                if gamma == 0.0 {
                    continue;
                }
                off = off.max(gamma.abs() / (alpha * beta).sqrt());
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..n {
                    let (x, y) = (a[i * n + p], a[i * n + q]);
                    a[i * n + p] = c * x - s * y;
                    a[i * n + q] = s * x + c * y;
                }
            }
        }
        if off < 1e-15 {
            break;
        }
    }
    (0..n).map(|j| (0..n).map(|i| a[i * n + j].powi(2)).sum::<f64>().sqrt()).collect()
}

pub fn symmetry_metric_matches_dense_svd() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for trial in 0..40 {
        let n = rng.random_range(2..12);
        let a: Vec<f64> = (0..n * n).map(|_| rng.random::<f64>()).collect();
        let skew: Vec<f64> = (0..n * n).map(|k| a[k] - a[(k % n) * n + k / n]).collect();
        let oracle = jacobi_singular_values(&skew, n).into_iter().fold(0.0, f64::max);
        let got = symmetry_metric(&a, n).unwrap();
        assert!((got - oracle).abs() <= 1e-6, "trial {trial} n {n}: {got} vs {oracle}");
    }
}

pub fn pearson_matches_direct_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..100 {
        let n = rng.random_range(3..120);
        let xs: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 0.3 * x + rng.random::<f64>()).collect();
        let nf = n as f64;
        let (sx, sy) = (xs.iter().sum::<f64>(), ys.iter().sum::<f64>());
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| x * y).sum();
        let sxx: f64 = xs.iter().map(|x| x * x).sum();
        let syy: f64 = ys.iter().map(|y| y * y).sum();
        let direct = (nf * sxy - sx * sy) / ((nf * sxx - sx * sx).sqrt() * (nf * syy - sy * sy).sqrt());
        let got = pearson(&xs, &ys).unwrap();
        assert!((got - direct).abs() <= 1e-12, "{got} vs {direct}");
    }
}

pub fn confusion_matches_recount() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let spec = ModelSpec::small_cnn_with([1, 5, 5], vec![3, 4], 4);
    let model = Model::<f64>::init(spec.clone(), 2).unwrap();
    let (x, y) = random_batch(&mut rng, &spec, 600);
    let ds = Dataset::new(x.clone(), y.clone(), 4, "random").unwrap();
    let attack = AttackConfig::pgd(8.0 / 255.0, 2.0 / 255.0, 3);
    let cm = confusion(&model, &ds, &attack, 77).unwrap();

    let mut counts = vec![0u64; 16];
    for (chunk, start) in (0..600).step_by(EVAL_BATCH).enumerate() {
        let end = (start + EVAL_BATCH).min(600);
        let adv = pgd_attack(&model, &x.slice_rows(start, end), &y[start..end], &attack, derive(77, &[chunk as u64])).unwrap();
        for (p, &t) in model.predict(&adv).unwrap().into_iter().zip(&y[start..end]) {
            counts[t * 4 + p] += 1;
        }
    }
    assert_eq!(cm.counts, counts);
    for i in 0..4 {
        let row: u64 = counts[i * 4..i * 4 + 4].iter().sum();
        for j in 0..4 {
            assert_eq!(cm.rates[i * 4 + j], counts[i * 4 + j] as f64 / row as f64);
        }
    }
}
