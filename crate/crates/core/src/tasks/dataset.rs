use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("dataset not found: {}", .0.display())]
    NotFound(PathBuf),
    #[error("failed to read {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: bad IDX magic 0x{found:08x}, expected 0x{expected:08x}", path.display())]
    BadMagic {
        path: PathBuf,
        expected: u32,
        found: u32,
    },
    #[error("{}: truncated IDX file ({got} bytes, header requires {expected})", path.display())]
    Truncated {
        path: PathBuf,
        expected: usize,
        got: usize,
    },
    #[error("image file holds {images} items but label file holds {labels}")]
    CountMismatch { images: usize, labels: usize },
    #[error("validation fraction must lie strictly between 0 and 1, got {0}")]
    BadFraction(f64),
    #[error("split of {n} examples with fraction {fraction} leaves an empty side")]
    EmptySplit { n: usize, fraction: f64 },
    #[error("imbalance factor must be at least 1, got {0}")]
    BadFactor(f64),
    #[error("imbalance factor {factor} empties class {class} (had {count}); use a smaller factor")]
    ClassEmptied {
        factor: f64,
        class: usize,
        count: usize,
    },
    #[error("invalid dataset: {0}")]
    Invalid(String),
}

/// Row-major inputs `n × d` with integer labels in `[0, C)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: Vec<f64>,
    labels: Vec<usize>,
    dim: usize,
    class_count: usize,
}

impl Dataset {
    pub fn new(
        inputs: Vec<f64>,
        labels: Vec<usize>,
        dim: usize,
        class_count: usize,
    ) -> Result<Self, DataError> {
        if labels.is_empty() || dim == 0 {
            return Err(DataError::Invalid("dataset must be non-empty".into()));
        }
        if inputs.len() != labels.len() * dim {
            return Err(DataError::Invalid(format!(
                "{} inputs for {} examples of dimension {dim}",
                inputs.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_count) {
            return Err(DataError::Invalid(format!(
                "label {bad} out of range for {class_count} classes"
            )));
        }
        if inputs.iter().any(|v| !v.is_finite()) {
            return Err(DataError::Invalid("non-finite input".into()));
        }
        Ok(Self {
            inputs,
            labels,
            dim,
            class_count,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.dim..(i + 1) * self.dim]
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_count];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// New dataset holding the given rows in the given order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        let mut inputs = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            inputs.extend_from_slice(self.row(i));
        }
        Dataset {
            inputs,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            dim: self.dim,
            class_count: self.class_count,
        }
    }

    /// For every class, its examples with in-class rank in `start..start + count`.
    /// Rows keep their original relative order.
    pub fn per_class_range(&self, start: usize, count: usize) -> Result<Dataset, DataError> {
        let mut seen = vec![0usize; self.class_count];
        let mut chosen = Vec::new();
        for (i, &l) in self.labels.iter().enumerate() {
            if (start..start + count).contains(&seen[l]) {
                chosen.push(i);
            }
            seen[l] += 1;
        }
        if let Some(c) = seen.iter().position(|&n| n < start + count) {
            return Err(DataError::Invalid(format!(
                "class {c} has {} examples, range needs {}",
                seen[c],
                start + count
            )));
        }
        Ok(self.select(&chosen))
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>, DataError> {
    if !path.exists() {
        return Err(DataError::NotFound(path.to_path_buf()));
    }
    fs::read(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn be_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]])
}

fn check_header(path: &Path, bytes: &[u8], magic: u32, header_len: usize) -> Result<(), DataError> {
    if bytes.len() < header_len {
        return Err(DataError::Truncated {
            path: path.to_path_buf(),
            expected: header_len,
            got: bytes.len(),
        });
    }
    let found = be_u32(bytes, 0);
    if found != magic {
        return Err(DataError::BadMagic {
            path: path.to_path_buf(),
            expected: magic,
            found,
        });
    }
    Ok(())
}

/// Load an IDX image/label pair, scaling pixels to `[0, 1]`. With `limit`,
/// only the first `limit` items are decoded.
pub fn load_idx(
    images_path: &Path,
    labels_path: &Path,
    limit: Option<usize>,
) -> Result<Dataset, DataError> {
    let images = read_file(images_path)?;
    let labels = read_file(labels_path)?;
    check_header(images_path, &images, IDX_IMAGES_MAGIC, 16)?;
    check_header(labels_path, &labels, IDX_LABELS_MAGIC, 8)?;

    let n_images = be_u32(&images, 4) as usize;
    let rows = be_u32(&images, 8) as usize;
    let cols = be_u32(&images, 12) as usize;
    let n_labels = be_u32(&labels, 4) as usize;
    if n_images != n_labels {
        return Err(DataError::CountMismatch {
            images: n_images,
            labels: n_labels,
        });
    }
    let dim = rows * cols;
    let image_bytes = 16 + n_images * dim;
    if images.len() < image_bytes {
        return Err(DataError::Truncated {
            path: images_path.to_path_buf(),
            expected: image_bytes,
            got: images.len(),
        });
    }
    if labels.len() < 8 + n_labels {
        return Err(DataError::Truncated {
            path: labels_path.to_path_buf(),
            expected: 8 + n_labels,
            got: labels.len(),
        });
    }

    let n = limit.map_or(n_images, |l| l.min(n_images));
    let inputs = images[16..16 + n * dim]
        .iter()
        .map(|&b| f64::from(b) / 255.0)
        .collect();
    let label_vec: Vec<usize> = labels[8..8 + n].iter().map(|&b| usize::from(b)).collect();
    let class_count = label_vec.iter().max().map_or(1, |&m| m + 1);
    Dataset::new(inputs, label_vec, dim, class_count)
}

/// Shuffled disjoint split; the validation side gets `round(n · val_fraction)` examples.
pub fn holdout_split(
    ds: &Dataset,
    val_fraction: f64,
    seed: u64,
) -> Result<(Dataset, Dataset), DataError> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(DataError::BadFraction(val_fraction));
    }
    let n = ds.len();
    let n_val = (n as f64 * val_fraction).round() as usize;
    if n_val == 0 || n_val == n {
        return Err(DataError::EmptySplit {
            n,
            fraction: val_fraction,
        });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (val_idx, train_idx) = order.split_at(n_val);
    Ok((ds.select(train_idx), ds.select(val_idx)))
}

/// Per-class retained count `floor(N_c · f^{−c/denominator})`.
pub fn imbalance_counts(counts: &[usize], factor: f64, denominator: usize) -> Vec<usize> {
    counts
        .iter()
        .enumerate()
        .map(|(c, &n)| {
            let keep = n as f64 * factor.powf(-(c as f64) / denominator as f64);
            // Absorb rounding when the exact value is an integer.
            (keep * (1.0 + 1e-12)).floor() as usize
        })
        .collect()
}

/// Subsample each class to [`imbalance_counts`], uniformly without replacement.
/// `denominator` defaults to the class count.
pub fn imbalance_subsample(
    ds: &Dataset,
    factor: f64,
    denominator: Option<usize>,
    seed: u64,
) -> Result<Dataset, DataError> {
    if !(factor >= 1.0) {
        return Err(DataError::BadFactor(factor));
    }
    let counts = ds.class_counts();
    let keep = imbalance_counts(&counts, factor, denominator.unwrap_or(ds.class_count()));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = Vec::new();
    for (c, (&have, &want)) in counts.iter().zip(&keep).enumerate() {
        if have > 0 && want == 0 {
            return Err(DataError::ClassEmptied {
                factor,
                class: c,
                count: have,
            });
        }
        let members: Vec<usize> = (0..ds.len()).filter(|&i| ds.labels[i] == c).collect();
        chosen.extend(index::sample(&mut rng, have, want).into_iter().map(|k| members[k]));
    }
    chosen.sort_unstable();
    Ok(ds.select(&chosen))
}

/// Isotropic Gaussian classes in `R^dim`. Class `c` is centred at
/// `separation/2 · (±1)` along a fixed random unit direction (two classes) or at
/// `separation` times a random unit vector (more classes).
pub fn gaussian_classes(
    per_class: &[usize],
    dim: usize,
    separation: f64,
    noise: f64,
    seed: u64,
) -> Result<Dataset, DataError> {
    let class_count = per_class.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = |rng: &mut ChaCha8Rng| {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.into_iter().map(|x| x / norm).collect::<Vec<f64>>()
    };
    let centres: Vec<Vec<f64>> = if class_count == 2 {
        let u = unit(&mut rng);
        vec![
            u.iter().map(|x| -0.5 * separation * x).collect(),
            u.iter().map(|x| 0.5 * separation * x).collect(),
        ]
    } else {
        (0..class_count)
            .map(|_| unit(&mut rng).into_iter().map(|x| separation * x).collect())
            .collect()
    };
    let mut inputs = Vec::new();
    let mut labels = Vec::new();
    for (c, &n) in per_class.iter().enumerate() {
        for _ in 0..n {
            for centre in &centres[c] {
                let z: f64 = StandardNormal.sample(&mut rng);
                inputs.push(centre + noise * z);
            }
            labels.push(c);
        }
    }
    Dataset::new(inputs, labels, dim, class_count)
}
