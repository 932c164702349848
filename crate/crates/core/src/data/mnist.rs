//! MNIST IDX files.
//!
//! Big-endian headers: images start with magic `0x00000803`, then `u32`
//! count, rows, cols, followed by one byte per pixel; labels start with
//! magic `0x00000801`, then `u32` count, followed by one byte per label.

use std::path::Path;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::io;
use crate::tensor::{Real, Tensor};

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

fn be32(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes(bytes[at..at + 4].try_into().expect("4 bytes"))
}

fn bad(path: &Path, message: String) -> Error {
    Error::Format {
        kind: "mnist idx",
        path: path.to_path_buf(),
        message,
    }
}

/// Returns `(count, rows, cols, pixels in [0, 1])`.
pub fn parse_idx_images<T: Real>(bytes: &[u8], path: &Path) -> Result<(usize, usize, usize, Vec<T>)> {
    if bytes.len() < 16 {
        return Err(bad(path, "truncated header".into()));
    }
    let magic = be32(bytes, 0);
    if magic != IMAGE_MAGIC {
        return Err(bad(path, format!("image magic {magic:#010x}")));
    }
    let (n, r, c) = (be32(bytes, 4) as usize, be32(bytes, 8) as usize, be32(bytes, 12) as usize);
    if bytes.len() != 16 + n * r * c {
        return Err(bad(path, format!("expected {} bytes, found {}", 16 + n * r * c, bytes.len())));
    }
    Ok((n, r, c, bytes[16..].iter().map(|&b| T::of(b as f64 / 255.0)).collect()))
}

pub fn parse_idx_labels(bytes: &[u8], path: &Path) -> Result<Vec<usize>> {
    if bytes.len() < 8 {
        return Err(bad(path, "truncated header".into()));
    }
    let magic = be32(bytes, 0);
    if magic != LABEL_MAGIC {
        return Err(bad(path, format!("label magic {magic:#010x}")));
    }
    let n = be32(bytes, 4) as usize;
    if bytes.len() != 8 + n {
        return Err(bad(path, format!("expected {} bytes, found {}", 8 + n, bytes.len())));
    }
    Ok(bytes[8..].iter().map(|&b| b as usize).collect())
}

fn load_pair<T: Real>(dir: &Path, images: &str, labels: &str, tag: &str) -> Result<Dataset<T>> {
    let ip = dir.join(images);
    let lp = dir.join(labels);
    let (n, r, c, px) = parse_idx_images(&io::read_file(&ip)?, &ip)?;
    let lab = parse_idx_labels(&io::read_file(&lp)?, &lp)?;
    if lab.len() != n {
        return Err(bad(&lp, format!("{} labels for {n} images", lab.len())));
    }
    if n == 0 {
        return Err(Error::Empty(tag.into()));
    }
    Dataset::new(Tensor::new(vec![n, 1, r, c], px)?, lab, 10, tag)
}

/// Load `train-*` and `t10k-*` IDX files from `dir`.
pub fn load_mnist<T: Real>(dir: &Path) -> Result<(Dataset<T>, Dataset<T>)> {
    Ok((
        load_pair(dir, "train-images-idx3-ubyte", "train-labels-idx1-ubyte", "mnist-train")?,
        load_pair(dir, "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte", "mnist-test")?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn images(n: u32, r: u32, c: u32) -> Vec<u8> {
        let mut b = Vec::new();
        for v in [IMAGE_MAGIC, n, r, c] {
            b.extend_from_slice(&v.to_be_bytes());
        }
        b.extend((0..n * r * c).map(|i| (i * 85 % 256) as u8));
        b
    }

    #[test]
    fn parses_header_and_scales() {
        let (n, r, c, px) = parse_idx_images::<f64>(&images(2, 2, 2), Path::new("x")).unwrap();
        assert_eq!((n, r, c), (2, 2, 2));
        assert_eq!(px[0], 0.0);
        assert_eq!(px[3], 1.0);
    }

    #[test]
    fn magic_and_length_checked() {
        let mut b = images(1, 2, 2);
        b[3] = 0x01;
        assert!(parse_idx_images::<f32>(&b, Path::new("x")).is_err());
        let b = images(1, 2, 2);
        assert!(parse_idx_images::<f32>(&b[..b.len() - 1], Path::new("x")).is_err());
        let mut l = LABEL_MAGIC.to_be_bytes().to_vec();
        l.extend_from_slice(&2u32.to_be_bytes());
        l.extend([3, 9]);
        assert_eq!(parse_idx_labels(&l, Path::new("x")).unwrap(), vec![3, 9]);
        assert!(parse_idx_labels(&l[..9], Path::new("x")).is_err());
    }

    #[test]
    fn reload_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let mut l = LABEL_MAGIC.to_be_bytes().to_vec();
        l.extend_from_slice(&3u32.to_be_bytes());
        l.extend([1, 2, 3]);
        for (i, lname) in [("train-images-idx3-ubyte", "train-labels-idx1-ubyte"), ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte")] {
            std::fs::write(dir.path().join(i), images(3, 4, 4)).unwrap();
            std::fs::write(dir.path().join(lname), &l).unwrap();
        }
        let a = load_mnist::<f32>(dir.path()).unwrap();
        let b = load_mnist::<f32>(dir.path()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.0.image_shape(), [1, 4, 4]);
    }
}
