use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tensor::{Real, Tensor};

pub const AUGMENT_PADDING: usize = 4;

fn dims<T: Real>(batch: &Tensor<T>) -> (usize, usize, usize, usize) {
    let s = batch.shape();
    (s[0], s[1], s[2], s[3])
}

/// Mirror every image left to right.
pub fn hflip<T: Real>(batch: &Tensor<T>) -> Tensor<T> {
    let (_, _, _, w) = dims(batch);
    let mut out = batch.clone();
    for row in out.data_mut().chunks_exact_mut(w) {
        row.reverse();
    }
    out
}

fn crop_one<T: Real>(src: &[T], dst: &mut [T], c: usize, h: usize, w: usize, pad: usize, dy: usize, dx: usize) {
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                // position in the zero-padded image
                let (py, px) = (y + dy, x + dx);
                let v = if py < pad || px < pad || py - pad >= h || px - pad >= w {
                    T::zero()
                } else {
                    src[(ch * h + py - pad) * w + px - pad]
                };
                dst[(ch * h + y) * w + x] = v;
            }
        }
    }
}

/// Zero-pad every image by `pad` and take the window at offset `(dy, dx)`,
/// each in `0..=2·pad`. `dy = dx = pad` is the identity.
pub fn crop<T: Real>(batch: &Tensor<T>, pad: usize, dy: usize, dx: usize) -> Tensor<T> {
    assert!(dy <= 2 * pad && dx <= 2 * pad, "crop offset outside padded image");
    let (_, c, h, w) = dims(batch);
    let plane = c * h * w;
    let mut out = batch.clone();
    for (src, dst) in batch.data().chunks_exact(plane).zip(out.data_mut().chunks_exact_mut(plane)) {
        crop_one(src, dst, c, h, w, pad, dy, dx);
    }
    out
}

/// Random crop with [`AUGMENT_PADDING`] zero padding and random horizontal
/// flip, independently per image, deterministic in `seed`.
pub fn augment<T: Real>(batch: &Tensor<T>, seed: u64) -> Tensor<T> {
    let (_, c, h, w) = dims(batch);
    let plane = c * h * w;
    let pad = AUGMENT_PADDING;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = batch.clone();
    for (src, dst) in batch.data().chunks_exact(plane).zip(out.data_mut().chunks_exact_mut(plane)) {
        let dy = rng.random_range(0..=2 * pad);
        let dx = rng.random_range(0..=2 * pad);
        crop_one(src, dst, c, h, w, pad, dy, dx);
        if rng.random_bool(0.5) {
            for row in dst.chunks_exact_mut(w) {
                row.reverse();
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn batch() -> Tensor<f64> {
        let v: Vec<f64> = (0..2 * 3 * 5 * 5).map(|i| (i as f64) / 150.0).collect();
        Tensor::from_f64(&[2, 3, 5, 5], &v).unwrap()
    }

    #[test]
    fn double_flip_is_identity() {
        let b = batch();
        assert_eq!(hflip(&hflip(&b)), b);
        assert_ne!(hflip(&b), b);
    }

    #[test]
    fn centered_crop_is_identity() {
        let b = batch();
        assert_eq!(crop(&b, 4, 4, 4), b);
        let shifted = crop(&b, 1, 0, 1);
        // first row comes from the padding
        assert!(shifted.data()[..5].iter().all(|&v| v == 0.0));
        assert_eq!(shifted.data()[5], b.data()[0]);
    }

    #[test]
    fn augment_is_seeded_and_in_range() {
        let b = batch();
        let a1 = augment(&b, 9);
        assert_eq!(a1, augment(&b, 9));
        assert_eq!(a1.shape(), b.shape());
        assert!(a1.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}
