//! Central finite differences, used as the independent oracle for every
//! analytic gradient in the crate.

use crate::tensor::{Real, Tensor};

/// Central-difference gradient `(f(x + h·eᵢ) − f(x − h·eᵢ)) / 2h` per coordinate.
pub fn finite_diff_gradient<T, F>(mut f: F, x: &Tensor<T>, h: f64) -> Tensor<T>
where
    T: Real,
    F: FnMut(&Tensor<T>) -> f64,
{
    assert!(h > 0.0, "finite difference step must be positive");
    let mut probe = x.clone();
    probe.clear_grad();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = T::of(orig.as_f64() + h);
        let up = f(&probe);
        probe.data_mut()[i] = T::of(orig.as_f64() - h);
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        grad.push(T::of((up - down) / (2.0 * h)));
    }
    Tensor::new(x.shape().to_vec(), grad).expect("same shape")
}

/// Central difference along selected coordinates only.
pub fn finite_diff_coords<T, F>(mut f: F, x: &Tensor<T>, coords: &[usize], h: f64) -> Vec<f64>
where
    T: Real,
    F: FnMut(&Tensor<T>) -> f64,
{
    assert!(h > 0.0, "finite difference step must be positive");
    let mut probe = x.clone();
    probe.clear_grad();
    coords
        .iter()
        .map(|&i| {
            let orig = probe.data()[i];
            probe.data_mut()[i] = T::of(orig.as_f64() + h);
            let up = f(&probe);
            probe.data_mut()[i] = T::of(orig.as_f64() - h);
            let down = f(&probe);
            probe.data_mut()[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `|a − b| / max(|a|, |b|)`, or the absolute difference when both are tiny.
pub fn relative_error(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale < 1e-12 {
        (a - b).abs()
    } else {
        (a - b).abs() / scale
    }
}
