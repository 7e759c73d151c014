//! Dataset ingestion, synthesis, and batching.
//!
//! Images are stored as flat rows of `f32` in `[0, 1]` — file loaders scale
//! raw bytes by 1/255 and nothing else, so first-layer input currents stay
//! non-negative. Supported sources: IDX image/label file pairs, the binary
//! CIFAR-10 batch format, and a seeded synthetic grating dataset for desk-scale
//! experiments.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// An immutable labeled image set.
#[derive(Debug, Clone)]
pub struct Dataset {
    images: Vec<f32>,
    dims: [usize; 3],
    labels: Vec<u8>,
    classes: usize,
    split: String,
}

impl Dataset {
    /// Bundle raw images and labels, enforcing the shape, label-range and
    /// pixel-range invariants.
    pub fn new(
        images: Vec<f32>,
        dims: [usize; 3],
        labels: Vec<u8>,
        classes: usize,
        split: impl Into<String>,
    ) -> Result<Self> {
        let sample = dims.iter().product::<usize>();
        if sample == 0 || images.len() != labels.len() * sample {
            return Err(Error::Data(format!(
                "expected {} pixel values for {} samples of {dims:?}, got {}",
                labels.len() * sample,
                labels.len(),
                images.len()
            )));
        }
        if classes < 2 {
            return Err(Error::Data(format!("need at least 2 classes, got {classes}")));
        }
        if let Some(l) = labels.iter().find(|&&l| l as usize >= classes) {
            return Err(Error::Data(format!("label {l} out of range for {classes} classes")));
        }
        if !images.iter().all(|v| (0.0..=1.0).contains(v)) {
            return Err(Error::Data("pixel values must lie in [0, 1]".into()));
        }
        Ok(Dataset { images, dims, labels, classes, split: split.into() })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Image shape as (channels, height, width).
    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn split(&self) -> &str {
        &self.split
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i] as usize
    }

    /// Extract one sample as a `[C, H, W]` tensor.
    pub fn image<S: Scalar>(&self, i: usize) -> Tensor<S> {
        let n = self.dims.iter().product::<usize>();
        let slice = &self.images[i * n..(i + 1) * n];
        Tensor::from_fn(&self.dims, |j| S::from_f64(slice[j] as f64))
    }

    /// One-hot target row for sample `i`.
    pub fn one_hot<S: Scalar>(&self, i: usize) -> Vec<S> {
        let mut y = vec![S::ZERO; self.classes];
        y[self.labels[i] as usize] = S::ONE;
        y
    }

    /// The same data under a different split name (metrics rows carry it).
    pub fn with_split(mut self, split: impl Into<String>) -> Dataset {
        self.split = split.into();
        self
    }

    /// The first `n` samples as a new dataset (deterministic subsetting for
    /// smoke runs and capped evaluations).
    pub fn take(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        let sample = self.dims.iter().product::<usize>();
        Dataset {
            images: self.images[..n * sample].to_vec(),
            dims: self.dims,
            labels: self.labels[..n].to_vec(),
            classes: self.classes,
            split: self.split.clone(),
        }
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))
}

fn be_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]])
}

/// Load an IDX image/label file pair (the Fashion-MNIST container format):
/// big-endian headers with magic 0x00000803 for images and 0x00000801 for
/// labels, then raw bytes. Pixels are scaled by 1/255.
pub fn load_idx(
    images_path: &Path,
    labels_path: &Path,
    classes: usize,
    split: &str,
) -> Result<Dataset> {
    let img = read_file(images_path)?;
    if img.len() < 16 || be_u32(&img, 0) != 0x0000_0803 {
        return Err(Error::Data(format!(
            "{}: not an IDX image file (magic 0x00000803 missing)",
            images_path.display()
        )));
    }
    let n = be_u32(&img, 4) as usize;
    let rows = be_u32(&img, 8) as usize;
    let cols = be_u32(&img, 12) as usize;
    let expected = 16 + n * rows * cols;
    if img.len() != expected {
        return Err(Error::Data(format!(
            "{}: expected {expected} bytes for {n} images of {rows}x{cols}, got {}",
            images_path.display(),
            img.len()
        )));
    }

    let lab = read_file(labels_path)?;
    if lab.len() < 8 || be_u32(&lab, 0) != 0x0000_0801 {
        return Err(Error::Data(format!(
            "{}: not an IDX label file (magic 0x00000801 missing)",
            labels_path.display()
        )));
    }
    let n_lab = be_u32(&lab, 4) as usize;
    let expected = 8 + n_lab;
    if lab.len() != expected {
        return Err(Error::Data(format!(
            "{}: expected {expected} bytes for {n_lab} labels, got {}",
            labels_path.display(),
            lab.len()
        )));
    }
    if n != n_lab {
        return Err(Error::Data(format!(
            "{n} images but {n_lab} labels ({} / {})",
            images_path.display(),
            labels_path.display()
        )));
    }

    let images = img[16..].iter().map(|&b| b as f32 / 255.0).collect();
    Dataset::new(images, [1, rows, cols], lab[8..].to_vec(), classes, split)
}

const CIFAR_RECORD: usize = 1 + 3 * 32 * 32;

fn decode_cifar_file(path: &Path, images: &mut Vec<f32>, labels: &mut Vec<u8>) -> Result<()> {
    let bytes = read_file(path)?;
    if bytes.is_empty() || bytes.len() % CIFAR_RECORD != 0 {
        return Err(Error::Data(format!(
            "{}: size {} is not a multiple of the {CIFAR_RECORD}-byte record",
            path.display(),
            bytes.len()
        )));
    }
    for record in bytes.chunks_exact(CIFAR_RECORD) {
        labels.push(record[0]);
        images.extend(record[1..].iter().map(|&b| b as f32 / 255.0));
    }
    Ok(())
}

/// Load one split of the binary CIFAR-10 batches: `data_batch_1..5.bin`
/// for train, `test_batch.bin` for test. Records are a label byte followed
/// by 3072 pixel bytes in R, G, B planes.
pub fn load_cifar10(dir: &Path, split: &str) -> Result<Dataset> {
    let files: Vec<String> = match split {
        "train" => (1..=5).map(|i| format!("data_batch_{i}.bin")).collect(),
        "test" => vec!["test_batch.bin".to_string()],
        other => return Err(Error::Data(format!("unknown cifar10 split {other:?}"))),
    };
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for name in files {
        decode_cifar_file(&dir.join(name), &mut images, &mut labels)?;
    }
    Dataset::new(images, [3, 32, 32], labels, 10, split)
}

/// Recipe for the deterministic synthetic grating dataset.
#[derive(Debug, Clone, Copy)]
pub struct SyntheticSpec {
    pub classes: usize,
    /// Square image side length (single channel).
    pub size: usize,
    pub per_class: usize,
    /// Uniform pixel noise amplitude; 0 gives clean, separable templates.
    pub noise: f64,
    pub seed: u64,
}

/// Generate a labeled set of localized oriented gratings. A class is a
/// (quadrant, orientation) pair — the patch sits in one of four image
/// quadrants and its carrier runs at one of `ceil(K/4)` angles — and every
/// sample draws its own center jitter and carrier phase before clamped
/// uniform pixel noise goes on top. A pixel is the rectified-squared wave
/// `max(0, cos)²` under a tight Gaussian envelope, so each image is a small
/// set of bright oriented ridges on a dark background — sparse and
/// localized like handwritten digits. Jitter and phase give each class
/// genuine within-class diversity (the network reads position and texture,
/// it cannot match one fixed template), and samples concentrating their
/// energy in different regions keep hidden activations sign-diverse from
/// the first epoch on. Bit-identical for a fixed spec.
pub fn make_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    if spec.classes < 2 || spec.size < 2 || spec.per_class == 0 {
        return Err(Error::Data(format!("degenerate synthetic spec {spec:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.size;
    let nf = n as f64;
    // Wave number for 2.5 cycles across the image; 3x3 kernels resolve this
    // wavelength at every desk-scale size.
    let freq = 2.5 * std::f64::consts::TAU / nf;
    // Quadrant centers, envelope width, and center jitter, all scaled to
    // the image. A tight envelope in a quadrant concentrates each sample's
    // energy in a class-specific region.
    let quadrant = [(0.25, 0.25), (0.25, 0.75), (0.75, 0.25), (0.75, 0.75)];
    let sigma_w = nf / 6.4;
    let jitter = nf / 8.0;
    let orientations = spec.classes.div_ceil(quadrant.len());

    let mut images = Vec::with_capacity(spec.classes * spec.per_class * n * n);
    let mut labels = Vec::with_capacity(spec.classes * spec.per_class);
    for k in 0..spec.classes {
        let angle = std::f64::consts::PI * (k / quadrant.len()) as f64 / orientations as f64;
        let (s, c) = angle.sin_cos();
        let (qy, qx) = quadrant[k % quadrant.len()];
        for _ in 0..spec.per_class {
            labels.push(k as u8);
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            let cy = qy * (nf - 1.0) + rng.random_range(-jitter..=jitter);
            let cx = qx * (nf - 1.0) + rng.random_range(-jitter..=jitter);
            images.extend((0..n * n).map(|i| {
                let (y, x) = ((i / n) as f64 - cy, (i % n) as f64 - cx);
                let env = (-(x * x + y * y) / (2.0 * sigma_w * sigma_w)).exp();
                let wave = (freq * (x * c + y * s) + phase).cos().max(0.0);
                let noisy = env * wave * wave + rng.random_range(-spec.noise..=spec.noise);
                noisy.clamp(0.0, 1.0) as f32
            }));
        }
    }
    Dataset::new(images, [1, n, n], labels, spec.classes, "synthetic")
}

/// Matched synthetic train/test splits: same grating orientations, disjoint
/// position, phase, and noise streams (seeds `seed` and `seed + 1`), split
/// names stamped for metrics.
pub fn make_synthetic_pair(
    classes: usize,
    size: usize,
    train_per_class: usize,
    test_per_class: usize,
    noise: f64,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    let base = SyntheticSpec { classes, size, per_class: train_per_class, noise, seed };
    let train = make_synthetic(&base)?.with_split("train");
    let test = make_synthetic(&SyntheticSpec {
        per_class: test_per_class,
        seed: seed.wrapping_add(1),
        ..base
    })?
    .with_split("test");
    Ok((train, test))
}

/// Mini-batch index lists for one epoch: a seeded permutation (or the
/// natural order) chopped into `batch_size` groups, final short batch kept.
pub fn batches(n_samples: usize, batch_size: usize, seed: u64, shuffle: bool) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n_samples).collect();
    if shuffle {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    order.chunks(batch_size.max(1)).map(|c| c.to_vec()).collect()
}
