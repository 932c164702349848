//! CIFAR-10 binary batches.
//!
//! Each file is a sequence of 3073-byte records: one label byte (0..=9)
//! followed by 3072 pixel bytes, the 32×32 red plane then green then blue,
//! each plane in row-major order. Training data is `data_batch_1.bin` ..
//! `data_batch_5.bin` (10,000 records each), test data is `test_batch.bin`.

use std::path::Path;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::io;
use crate::tensor::{Real, Tensor};

pub const CIFAR_RECORD_BYTES: usize = 1 + 3 * 32 * 32;
const RECORDS_PER_FILE: usize = 10_000;

/// Parse one batch file into pixels scaled to `[0, 1]` and labels.
pub fn parse_cifar_batch<T: Real>(bytes: &[u8], path: &Path) -> Result<(Vec<T>, Vec<usize>)> {
    if bytes.is_empty() || bytes.len() % CIFAR_RECORD_BYTES != 0 {
        return Err(Error::Format {
            kind: "cifar-10 batch",
            path: path.to_path_buf(),
            message: format!("length {} is not a multiple of {CIFAR_RECORD_BYTES}", bytes.len()),
        });
    }
    let n = bytes.len() / CIFAR_RECORD_BYTES;
    let mut pixels = Vec::with_capacity(n * (CIFAR_RECORD_BYTES - 1));
    let mut labels = Vec::with_capacity(n);
    for rec in bytes.chunks_exact(CIFAR_RECORD_BYTES) {
        if rec[0] >= 10 {
            return Err(Error::Format {
                kind: "cifar-10 batch",
                path: path.to_path_buf(),
                message: format!("label byte {}", rec[0]),
            });
        }
        labels.push(rec[0] as usize);
        pixels.extend(rec[1..].iter().map(|&b| T::of(b as f64 / 255.0)));
    }
    Ok((pixels, labels))
}

fn load_files<T: Real>(dir: &Path, names: &[&str], tag: &str) -> Result<Dataset<T>> {
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    for name in names {
        let path = dir.join(name);
        let bytes = io::read_file(&path)?;
        if bytes.len() != RECORDS_PER_FILE * CIFAR_RECORD_BYTES {
            return Err(Error::Format {
                kind: "cifar-10 batch",
                path,
                message: format!(
                    "expected {} bytes, found {}",
                    RECORDS_PER_FILE * CIFAR_RECORD_BYTES,
                    bytes.len()
                ),
            });
        }
        let (p, l) = parse_cifar_batch::<T>(&bytes, &path)?;
        pixels.extend(p);
        labels.extend(l);
    }
    let n = labels.len();
    Dataset::new(Tensor::new(vec![n, 3, 32, 32], pixels)?, labels, 10, tag)
}

/// Load the standard binary distribution from `dir`.
pub fn load_cifar10<T: Real>(dir: &Path) -> Result<(Dataset<T>, Dataset<T>)> {
    let train = load_files(
        dir,
        &[
            "data_batch_1.bin",
            "data_batch_2.bin",
            "data_batch_3.bin",
            "data_batch_4.bin",
            "data_batch_5.bin",
        ],
        "cifar10-train",
    )?;
    let test = load_files(dir, &["test_batch.bin"], "cifar10-test")?;
    Ok((train, test))
}
