use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Spectral norm `‖A − Aᵀ‖₂` of a row-major `n × n` matrix, by power
/// iteration on `MᵀM` with `M = A − Aᵀ`.
pub fn symmetry_metric(a: &[f64], n: usize) -> Result<f64> {
    if a.len() != n * n {
        return Err(Error::ShapeMismatch {
            op: "symmetry_metric",
            left: vec![a.len()],
            right: vec![n, n],
        });
    }
    let m: Vec<f64> = (0..n * n).map(|k| a[k] - a[(k % n) * n + k / n]).collect();
    spectral_norm(&m, n)
}

fn matvec(m: &[f64], v: &[f64], n: usize, transpose: bool) -> Vec<f64> {
    (0..n)
        .map(|i| (0..n).map(|j| if transpose { m[j * n + i] } else { m[i * n + j] } * v[j]).sum())
        .collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Largest singular value of a square matrix via power iteration.
pub fn spectral_norm(m: &[f64], n: usize) -> Result<f64> {
    if n == 0 {
        return Ok(0.0);
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("spectral norm input".into()));
    }
    let scale = m.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    if scale == 0.0 {
        return Ok(0.0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut v: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..1.5)).collect();
    let nv = norm(&v);
    v.iter_mut().for_each(|x| *x /= nv);
    let mut sigma = 0.0;
    for _ in 0..1_000_000 {
        let w = matvec(m, &v, n, false);
        let u = matvec(m, &w, n, true);
        let nu = norm(&u);
        if nu == 0.0 {
            return Ok(0.0);
        }
        let next = norm(&w);
        v = u.iter().map(|x| x / nu).collect();
        if (next - sigma).abs() <= 1e-13 * next {
            return Ok(next);
        }
        sigma = next;
    }
    Ok(sigma)
}

/// Sample Pearson correlation.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::invalid(format!(
            "pearson needs two equal-length samples of size >= 2, got {} and {}",
            xs.len(),
            ys.len()
        )));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&x, &y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Undefined("zero variance in pearson input".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Pearson ρ over off-diagonal pairs `((P_train_before)ᵢⱼ, ΔP_test_ⱼᵢ)` with
/// `ΔP_test = P_test_after − P_test_before`. `None` when either coordinate
/// has zero variance.
pub fn bilateral_correlation(
    p_train_before: &[f64],
    p_test_before: &[f64],
    p_test_after: &[f64],
    classes: usize,
) -> Result<Option<f64>> {
    let n2 = classes * classes;
    if [p_train_before.len(), p_test_before.len(), p_test_after.len()] != [n2; 3] {
        return Err(Error::ShapeMismatch {
            op: "bilateral_correlation",
            left: vec![p_train_before.len(), p_test_before.len(), p_test_after.len()],
            right: vec![n2],
        });
    }
    let (xs, ys) = bilateral_pairs(p_train_before, p_test_before, p_test_after, classes);
    match pearson(&xs, &ys) {
        Ok(r) => Ok(Some(r)),
        Err(Error::Undefined(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// The off-diagonal pairs that [`bilateral_correlation`] correlates.
pub fn bilateral_pairs(p_train_before: &[f64], p_test_before: &[f64], p_test_after: &[f64], c: usize) -> (Vec<f64>, Vec<f64>) {
    let mut xs = Vec::with_capacity(c * c.saturating_sub(1));
    let mut ys = Vec::with_capacity(xs.capacity());
    for i in 0..c {
        for j in 0..c {
            if i != j {
                xs.push(p_train_before[i * c + j]);
                ys.push(p_test_after[j * c + i] - p_test_before[j * c + i]);
            }
        }
    }
    (xs, ys)
}
