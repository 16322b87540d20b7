//! Datasets: deterministic toy generators, IDX/CSV ingestion, splits.
//!
//! Images are always `[n, c, h, w]` with values in `[0, 1]`. Flat vector
//! data (for MLP experiments) is carried as `[n, d, 1, 1]`.

use std::io::Read;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng::{standard_normal, substream};
use crate::tensor::Tensor;

/// Real training or test data.
#[derive(Debug, Clone)]
pub struct LabeledDataset {
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub class_count: usize,
}

impl LabeledDataset {
    pub fn new(images: Tensor, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        let ds = Self { images, labels, class_count };
        ds.validate()?;
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Elements per sample.
    pub fn sample_numel(&self) -> usize {
        self.images.shape()[1..].iter().product()
    }

    /// `[c, h, w]` (or `[d, 1, 1]` for vector data).
    pub fn sample_shape(&self) -> Vec<usize> {
        self.images.shape()[1..].to_vec()
    }

    pub fn validate(&self) -> Result<()> {
        let shape = self.images.shape();
        if shape.len() != 4 {
            return Err(Error::Dataset(format!("images must be [n,c,h,w], got {shape:?}")));
        }
        if shape[0] != self.labels.len() {
            return Err(Error::CountMismatch { images: shape[0], labels: self.labels.len() });
        }
        if self.class_count < 2 {
            return Err(Error::Dataset("need at least 2 classes".into()));
        }
        if let Some(&bad) = self.labels.iter().find(|&&l| l >= self.class_count) {
            return Err(Error::Dataset(format!(
                "label {bad} out of range for {} classes",
                self.class_count
            )));
        }
        let mut seen = vec![false; self.class_count];
        for &l in &self.labels {
            seen[l] = true;
        }
        if let Some(missing) = seen.iter().position(|&s| !s) {
            return Err(Error::Dataset(format!("class {missing} has no samples")));
        }
        if !self.images.all_finite() {
            return Err(Error::Dataset("images contain non-finite values".into()));
        }
        if self.images.data().iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::Dataset("image values outside [0, 1]".into()));
        }
        Ok(())
    }

    /// Indices of every sample of `class`.
    pub fn class_indices(&self, class: usize) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == class)
            .map(|(i, _)| i)
            .collect()
    }

    /// A new dataset holding `indices` in order (duplicates allowed).
    pub fn gather(&self, indices: &[usize]) -> Result<LabeledDataset> {
        let row = self.sample_numel();
        let mut data = Vec::with_capacity(indices.len() * row);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::Dataset(format!("index {i} out of range")));
            }
            data.extend_from_slice(&self.images.data()[i * row..(i + 1) * row]);
            labels.push(self.labels[i]);
        }
        let mut shape = self.images.shape().to_vec();
        shape[0] = indices.len();
        Ok(LabeledDataset {
            images: Tensor::new(shape, data)?,
            labels,
            class_count: self.class_count,
        })
    }

    /// SHA-256 over shape, labels, and raw pixel bytes; identifies the
    /// exact dataset a trajectory was trained on.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        for d in self.images.shape() {
            hasher.update((*d as u64).to_le_bytes());
        }
        hasher.update((self.class_count as u64).to_le_bytes());
        for &l in &self.labels {
            hasher.update((l as u64).to_le_bytes());
        }
        for &v in self.images.data() {
            hasher.update(v.to_le_bytes());
        }
        hex(&hasher.finalize())
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// The learnable artifact: a small image set with fixed labels and a
/// learnable inner-loop learning rate.
#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub alpha: f64,
}

impl SyntheticDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.images.shape().len() != 4 || self.images.shape()[0] != self.labels.len() {
            return Err(Error::CountMismatch {
                images: *self.images.shape().first().unwrap_or(&0),
                labels: self.labels.len(),
            });
        }
        if self.alpha <= 0.0 || !self.alpha.is_finite() {
            return Err(Error::Dataset(format!("alpha must be positive, got {}", self.alpha)));
        }
        Ok(())
    }
}

/// How blob samples are rendered.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlobShape {
    /// Raw `d`-dimensional vectors (stored as `[n, d, 1, 1]`).
    Vector(usize),
    /// `size × size` single-channel images of one Gaussian intensity bump.
    Image(usize),
}

/// Deterministic Gaussian-cluster toy data.
///
/// Vector mode draws per-class centers inside `[0.25, 0.75]^d` and scatters
/// samples around them; image mode places per-class bump centers evenly on a
/// circle and jitters the bump position. `spread` is the scatter scale in
/// both modes; `spread = 0` collapses each class to identical samples.
pub fn gen_blobs(
    classes: usize,
    per_class: usize,
    shape: BlobShape,
    spread: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    if classes < 2 || per_class == 0 {
        return Err(Error::InvalidConfig(format!(
            "blobs need >= 2 classes and >= 1 sample per class, got {classes}/{per_class}"
        )));
    }
    let mut rng = substream(seed, "blobs");
    let n = classes * per_class;
    let mut labels = Vec::with_capacity(n);
    match shape {
        BlobShape::Vector(d) => {
            if d == 0 {
                return Err(Error::InvalidConfig("vector blobs need dimension >= 1".into()));
            }
            let centers: Vec<Vec<f64>> = (0..classes)
                .map(|_| (0..d).map(|_| rng.gen_range(0.25..0.75)).collect())
                .collect();
            let mut data = Vec::with_capacity(n * d);
            for (c, center) in centers.iter().enumerate() {
                for _ in 0..per_class {
                    labels.push(c);
                    for &mu in center {
                        let v = mu + spread * standard_normal(&mut rng);
                        data.push(v.clamp(0.0, 1.0));
                    }
                }
            }
            LabeledDataset::new(Tensor::new(vec![n, d, 1, 1], data)?, labels, classes)
        }
        BlobShape::Image(size) => {
            if size < 2 {
                return Err(Error::InvalidConfig("image blobs need size >= 2".into()));
            }
            let s = size as f64;
            let (mid, radius, sigma) = ((s - 1.0) / 2.0, 0.3 * s, s / 6.0);
            let centers: Vec<(f64, f64)> = (0..classes)
                .map(|c| {
                    let angle = std::f64::consts::TAU * c as f64 / classes as f64;
                    (mid + radius * angle.sin(), mid + radius * angle.cos())
                })
                .collect();
            let mut data = Vec::with_capacity(n * size * size);
            for (c, &(cy, cx)) in centers.iter().enumerate() {
                for _ in 0..per_class {
                    labels.push(c);
                    let by = cy + spread * s * standard_normal(&mut rng);
                    let bx = cx + spread * s * standard_normal(&mut rng);
                    for y in 0..size {
                        for x in 0..size {
                            let d2 = (y as f64 - by).powi(2) + (x as f64 - bx).powi(2);
                            data.push((-d2 / (2.0 * sigma * sigma)).exp());
                        }
                    }
                }
            }
            LabeledDataset::new(Tensor::new(vec![n, 1, size, size], data)?, labels, classes)
        }
    }
}

/// Stratified train/test split; every class keeps at least one sample on
/// each side.
pub fn split(
    data: &LabeledDataset,
    test_fraction: f64,
    seed: u64,
) -> Result<(LabeledDataset, LabeledDataset)> {
    if !(0.0..1.0).contains(&test_fraction) || test_fraction <= 0.0 {
        return Err(Error::InvalidConfig(format!(
            "test fraction must be in (0, 1), got {test_fraction}"
        )));
    }
    let mut rng = substream(seed, "split");
    let mut train_idx = Vec::new();
    let mut test_idx = Vec::new();
    for class in 0..data.class_count {
        let mut idx = data.class_indices(class);
        if idx.len() < 2 {
            return Err(Error::Dataset(format!(
                "class {class} has {} sample(s); need >= 2 to split",
                idx.len()
            )));
        }
        idx.shuffle(&mut rng);
        let want = (test_fraction * idx.len() as f64).round() as usize;
        let take = want.clamp(1, idx.len() - 1);
        test_idx.extend_from_slice(&idx[..take]);
        train_idx.extend_from_slice(&idx[take..]);
    }
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    Ok((data.gather(&train_idx)?, data.gather(&test_idx)?))
}

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Loads the classic big-endian IDX image/label file pair; pixel bytes are
/// scaled into `[0, 1]`.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<LabeledDataset> {
    let image_bytes = read_file(images_path)?;
    let label_bytes = read_file(labels_path)?;

    let (magic, dims) = idx_header(&image_bytes, images_path, 3)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::BadMagic {
            path: images_path.display().to_string(),
            expected: IDX_IMAGES_MAGIC,
            got: magic,
        });
    }
    let [n, h, w] = [dims[0], dims[1], dims[2]];
    let payload = &image_bytes[16..];
    if payload.len() != n * h * w {
        return Err(Error::TruncatedPayload(format!(
            "{}: expected {} pixel bytes, got {}",
            images_path.display(),
            n * h * w,
            payload.len()
        )));
    }

    let (magic, ldims) = idx_header(&label_bytes, labels_path, 1)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::BadMagic {
            path: labels_path.display().to_string(),
            expected: IDX_LABELS_MAGIC,
            got: magic,
        });
    }
    let label_payload = &label_bytes[8..];
    if label_payload.len() != ldims[0] {
        return Err(Error::TruncatedPayload(format!(
            "{}: expected {} label bytes, got {}",
            labels_path.display(),
            ldims[0],
            label_payload.len()
        )));
    }
    if ldims[0] != n {
        return Err(Error::CountMismatch { images: n, labels: ldims[0] });
    }

    let data: Vec<f64> = payload.iter().map(|&b| f64::from(b) / 255.0).collect();
    let labels: Vec<usize> = label_payload.iter().map(|&b| b as usize).collect();
    let class_count = labels.iter().max().map_or(0, |&m| m + 1).max(2);
    LabeledDataset::new(Tensor::new(vec![n, 1, h, w], data)?, labels, class_count)
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(buf)
}

fn idx_header(bytes: &[u8], path: &Path, ndims: usize) -> Result<(u32, Vec<usize>)> {
    let header_len = 4 + 4 * ndims;
    if bytes.len() < header_len {
        return Err(Error::TruncatedHeader(format!(
            "{}: {} bytes is shorter than the {header_len}-byte header",
            path.display(),
            bytes.len()
        )));
    }
    let magic = u32::from_be_bytes(bytes[0..4].try_into().expect("4 bytes"));
    let dims = (0..ndims)
        .map(|i| {
            let at = 4 + 4 * i;
            u32::from_be_bytes(bytes[at..at + 4].try_into().expect("4 bytes")) as usize
        })
        .collect();
    Ok((magic, dims))
}

/// Loads `label, pixel, pixel, ...` rows. Values with max > 1 are assumed
/// to be byte-scaled and divided by 255; the returned flag records that.
pub fn load_csv(path: &Path, image_shape: Option<[usize; 3]>) -> Result<(LabeledDataset, bool)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut labels = Vec::new();
    let mut pixels: Vec<f64> = Vec::new();
    let mut row_len: Option<usize> = None;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(',').map(str::trim);
        let label: usize = fields
            .next()
            .ok_or_else(|| malformed(path, lineno, "empty row"))?
            .parse()
            .map_err(|_| malformed(path, lineno, "label is not a non-negative integer"))?;
        let row: Vec<f64> = fields
            .map(|f| f.parse::<f64>().map_err(|_| malformed(path, lineno, "non-numeric pixel")))
            .collect::<Result<_>>()?;
        if row.is_empty() {
            return Err(malformed(path, lineno, "row has no pixels"));
        }
        match row_len {
            None => row_len = Some(row.len()),
            Some(l) if l != row.len() => {
                return Err(malformed(path, lineno, "inconsistent pixel count"))
            }
            _ => {}
        }
        labels.push(label);
        pixels.extend(row);
    }
    let d = row_len.ok_or_else(|| Error::Malformed {
        path: path.display().to_string(),
        detail: "no data rows".into(),
    })?;
    let n = labels.len();
    let max = pixels.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let scaled = max > 1.0;
    if scaled {
        for p in &mut pixels {
            *p /= 255.0;
        }
    }
    let shape = match image_shape {
        Some([c, h, w]) => {
            if c * h * w != d {
                return Err(Error::Malformed {
                    path: path.display().to_string(),
                    detail: format!("rows have {d} pixels but shape {c}x{h}x{w} wants {}", c * h * w),
                });
            }
            vec![n, c, h, w]
        }
        None => vec![n, d, 1, 1],
    };
    let class_count = labels.iter().max().map_or(0, |&m| m + 1).max(2);
    Ok((LabeledDataset::new(Tensor::new(shape, pixels)?, labels, class_count)?, scaled))
}

fn malformed(path: &Path, lineno: usize, detail: &str) -> Error {
    Error::Malformed {
        path: path.display().to_string(),
        detail: format!("line {}: {detail}", lineno + 1),
    }
}
