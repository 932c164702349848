//! Datasets, splits, augmentation and loaders.

mod augment;
mod cifar;
mod mnist;
pub mod synthetic;

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::tensor::{Real, Tensor};

pub use augment::{augment, crop, hflip, AUGMENT_PADDING};
pub use cifar::{load_cifar10, parse_cifar_batch, CIFAR_RECORD_BYTES};
pub use mnist::{load_mnist, parse_idx_images, parse_idx_labels};
pub use synthetic::{generate_synthetic, FeatureMap, SyntheticSpec};

/// Images `[N, C, H, W]` in `[0, 1]` with labels in `[0, classes)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    images: Tensor<T>,
    labels: Vec<usize>,
    classes: usize,
    provenance: String,
}

impl<T: Real> Dataset<T> {
    /// An empty dataset is allowed (e.g. a filtered subset); loaders reject it.
    pub fn new(images: Tensor<T>, labels: Vec<usize>, classes: usize, provenance: impl Into<String>) -> Result<Self> {
        let s = images.shape();
        if s.len() != 4 || s[0] != labels.len() {
            return Err(Error::ShapeMismatch {
                op: "dataset",
                left: s.to_vec(),
                right: vec![labels.len()],
            });
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::LabelOutOfRange { label, classes });
        }
        if images.data().iter().any(|&v| !(v >= T::zero() && v <= T::one())) {
            return Err(Error::invalid("dataset images must lie in [0, 1]"));
        }
        Ok(Self {
            images,
            labels,
            classes,
            provenance: provenance.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn images(&self) -> &Tensor<T> {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    /// `[C, H, W]` of one image.
    pub fn image_shape(&self) -> [usize; 3] {
        let s = self.images.shape();
        [s[1], s[2], s[3]]
    }

    pub fn non_empty(&self, what: &str) -> Result<()> {
        if self.is_empty() {
            Err(Error::Empty(format!("{what} dataset")))
        } else {
            Ok(())
        }
    }

    /// Images and labels at `indices`, in that order.
    pub fn batch(&self, indices: &[usize]) -> (Tensor<T>, Vec<usize>) {
        (
            self.images.gather_rows(indices),
            indices.iter().map(|&i| self.labels[i]).collect(),
        )
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        let (images, labels) = self.batch(indices);
        Self {
            images,
            labels,
            classes: self.classes,
            provenance: self.provenance.clone(),
        }
    }

    pub fn with_labels(&self, labels: Vec<usize>) -> Result<Self> {
        Self::new(self.images.clone(), labels, self.classes, self.provenance.clone())
    }

    pub fn with_provenance(mut self, provenance: impl Into<String>) -> Self {
        self.provenance = provenance.into();
        self
    }

    /// Indices of each class, in dataset order.
    pub fn class_indices(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.classes];
        for (i, &l) in self.labels.iter().enumerate() {
            out[l].push(i);
        }
        out
    }

    /// Write as a versioned container: JSON header then `f32` pixels and
    /// `u32` labels.
    pub fn save(&self, path: &Path) -> Result<()> {
        let header = DatasetHeader {
            shape: self.images.shape().to_vec(),
            classes: self.classes,
            provenance: self.provenance.clone(),
        };
        let mut payload = Vec::with_capacity(self.images.len() * 4 + self.len() * 4);
        for &v in self.images.data() {
            payload.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
        for &l in &self.labels {
            payload.extend_from_slice(&(l as u32).to_le_bytes());
        }
        io::write_atomic(path, &io::encode_container(DATASET_MAGIC, DATASET_VERSION, &header, &payload)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = io::read_file(path)?;
        let (h, payload): (DatasetHeader, _) =
            io::decode_container(&bytes, DATASET_MAGIC, DATASET_VERSION, "dataset", path)?;
        let bad = |message: String| Error::Format {
            kind: "dataset",
            path: path.to_path_buf(),
            message,
        };
        if h.shape.len() != 4 {
            return Err(bad(format!("shape {:?} is not 4-d", h.shape)));
        }
        let n = h.shape[0];
        let pixels: usize = h.shape.iter().product();
        if payload.len() != 4 * (pixels + n) {
            return Err(bad(format!("payload is {} bytes, expected {}", payload.len(), 4 * (pixels + n))));
        }
        let (px, lb) = payload.split_at(4 * pixels);
        let data = px
            .chunks_exact(4)
            .map(|c| T::of(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64))
            .collect();
        let labels = lb
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")) as usize)
            .collect();
        Self::new(Tensor::new(h.shape, data)?, labels, h.classes, h.provenance)
    }
}

const DATASET_MAGIC: &[u8; 4] = b"RBDS";
const DATASET_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct DatasetHeader {
    shape: Vec<usize>,
    classes: usize,
    provenance: String,
}

/// Per-class counts for drawing `n` of `total` stratified by `counts`,
/// using largest remainders.
fn stratified_counts(counts: &[usize], n: usize) -> Vec<usize> {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return vec![0; counts.len()];
    }
    let mut take: Vec<usize> = counts.iter().map(|&c| c * n / total).collect();
    let mut rem: Vec<(usize, usize)> = counts.iter().enumerate().map(|(i, &c)| ((c * n) % total, i)).collect();
    rem.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let missing = n - take.iter().sum::<usize>();
    for &(_, i) in rem.iter().take(missing) {
        take[i] += 1;
    }
    take
}

/// Seeded, class-stratified split into `(train', validation)`.
pub fn split_holdout<T: Real>(train: &Dataset<T>, n_holdout: usize, seed: u64) -> Result<(Dataset<T>, Dataset<T>)> {
    if n_holdout >= train.len() && n_holdout > 0 {
        return Err(Error::invalid(format!(
            "holdout of {n_holdout} from {} examples",
            train.len()
        )));
    }
    let by_class = train.class_indices();
    let counts: Vec<usize> = by_class.iter().map(Vec::len).collect();
    let take = stratified_counts(&counts, n_holdout);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut val = Vec::with_capacity(n_holdout);
    let mut rest = Vec::with_capacity(train.len() - n_holdout);
    for (mut idx, k) in by_class.into_iter().zip(take) {
        if n_holdout > 0 && k >= idx.len() && !idx.is_empty() {
            return Err(Error::invalid("holdout too large to stratify: a class would be emptied"));
        }
        idx.shuffle(&mut rng);
        val.extend_from_slice(&idx[..k]);
        rest.extend_from_slice(&idx[k..]);
    }
    val.sort_unstable();
    rest.sort_unstable();
    Ok((train.subset(&rest), train.subset(&val)))
}

/// Seeded class-stratified subset of `n` examples.
pub fn stratified_subset<T: Real>(ds: &Dataset<T>, n: usize, seed: u64) -> Result<Dataset<T>> {
    if n > ds.len() {
        return Err(Error::invalid(format!("subset of {n} from {} examples", ds.len())));
    }
    let by_class = ds.class_indices();
    let counts: Vec<usize> = by_class.iter().map(Vec::len).collect();
    let take = stratified_counts(&counts, n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = Vec::with_capacity(n);
    for (mut idx, k) in by_class.into_iter().zip(take) {
        idx.shuffle(&mut rng);
        keep.extend_from_slice(&idx[..k]);
    }
    keep.sort_unstable();
    Ok(ds.subset(&keep))
}

/// Seeded random subset of `n` examples (no stratification).
pub fn random_subset<T: Real>(ds: &Dataset<T>, n: usize, seed: u64) -> Dataset<T> {
    let mut idx: Vec<usize> = (0..ds.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx.truncate(n.min(ds.len()));
    idx.sort_unstable();
    ds.subset(&idx)
}
