//! CIFAR-10/100 binary ingestion, a synthetic frequency-band dataset and
//! seeded batching.
//!
//! Expected files: CIFAR-10 reads `data_batch_1.bin` .. `data_batch_5.bin`
//! and `test_batch.bin` (from `cifar-10-batches-bin/`), CIFAR-100 reads
//! `train.bin` and `test.bin` (from `cifar-100-binary/`). Pixels are kept as
//! bytes; batches are scaled to [0, 1] and standardized per channel with
//! statistics computed on the train split.

use std::f64::consts::PI;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const CIFAR_SIDE: usize = 32;
pub const CIFAR_CHANNELS: usize = 3;
pub const CIFAR_PIXELS: usize = CIFAR_CHANNELS * CIFAR_SIDE * CIFAR_SIDE;
pub const CIFAR_RECORDS_PER_FILE: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CifarVariant {
    C10,
    C100,
}

impl CifarVariant {
    pub fn label_bytes(self) -> usize {
        match self {
            CifarVariant::C10 => 1,
            CifarVariant::C100 => 2,
        }
    }

    pub fn record_len(self) -> usize {
        self.label_bytes() + CIFAR_PIXELS
    }

    pub fn class_count(self) -> usize {
        match self {
            CifarVariant::C10 => 10,
            CifarVariant::C100 => 100,
        }
    }

    /// File names and record counts of a split.
    pub fn files(self, split: Split) -> Vec<(&'static str, usize)> {
        match (self, split) {
            (CifarVariant::C10, Split::Train) => vec![
                ("data_batch_1.bin", 10_000),
                ("data_batch_2.bin", 10_000),
                ("data_batch_3.bin", 10_000),
                ("data_batch_4.bin", 10_000),
                ("data_batch_5.bin", 10_000),
            ],
            (CifarVariant::C10, Split::Validation) => vec![("test_batch.bin", 10_000)],
            (CifarVariant::C100, Split::Train) => vec![("train.bin", 50_000)],
            (CifarVariant::C100, Split::Validation) => vec![("test.bin", 10_000)],
        }
    }

    fn subdir(self) -> &'static str {
        match self {
            CifarVariant::C10 => "cifar-10-batches-bin",
            CifarVariant::C100 => "cifar-100-binary",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Validation,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Validation => "validation",
        })
    }
}

/// Dataset selection of a training run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    Cifar10,
    Cifar100,
    Synthetic,
}

impl DatasetKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DatasetKind::Cifar10 => "cifar10",
            DatasetKind::Cifar100 => "cifar100",
            DatasetKind::Synthetic => "synthetic",
        }
    }
}

impl FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cifar10" => Ok(DatasetKind::Cifar10),
            "cifar100" => Ok(DatasetKind::Cifar100),
            "synthetic" => Ok(DatasetKind::Synthetic),
            _ => Err(Error::config(
                "dataset",
                format!("unknown dataset `{s}` (cifar10, cifar100, synthetic)"),
            )),
        }
    }
}

/// Per-channel mean and standard deviation of pixels scaled to [0, 1],
/// tagged with the split they were computed on.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub source: Split,
}

impl ChannelStats {
    /// Population statistics over every pixel of each channel.
    pub fn compute(pixels: &[u8], channels: usize, plane: usize, source: Split) -> Self {
        let n = pixels.len() / (channels * plane).max(1);
        let mut mean = vec![0.0; channels];
        let mut std = vec![0.0; channels];
        for c in 0..channels {
            let (mut s, mut s2) = (0.0f64, 0.0f64);
            for i in 0..n {
                let start = (i * channels + c) * plane;
                for &p in &pixels[start..start + plane] {
                    let v = p as f64 / 255.0;
                    s += v;
                    s2 += v * v;
                }
            }
            let count = (n * plane).max(1) as f64;
            mean[c] = s / count;
            let var = (s2 / count - mean[c] * mean[c]).max(0.0);
            // a constant channel is left unscaled
            std[c] = if var > 1e-12 { var.sqrt() } else { 1.0 };
        }
        ChannelStats { mean, std, source }
    }
}

impl fmt::Display for ChannelStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let join = |v: &[f64]| v.iter().map(|x| format!("{x:.6}")).collect::<Vec<_>>().join("/");
        write!(
            f,
            "mean={} std={} from={}",
            join(&self.mean),
            join(&self.std),
            self.source
        )
    }
}

/// Images stored as bytes `[N, C, H, W]` with integer labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pixels: Vec<u8>,
    labels: Vec<usize>,
    channels: usize,
    side: usize,
    class_count: usize,
    split: Split,
    stats: ChannelStats,
}

impl Dataset {
    /// Builds a dataset; `stats` of `None` computes them from these pixels,
    /// which is only allowed for a train split.
    pub fn new(
        pixels: Vec<u8>,
        labels: Vec<usize>,
        channels: usize,
        side: usize,
        class_count: usize,
        split: Split,
        stats: Option<ChannelStats>,
    ) -> Result<Self> {
        let per = channels * side * side;
        if per == 0 || pixels.len() != labels.len() * per {
            return Err(Error::Data(format!(
                "{} pixel bytes do not match {} images of {channels}x{side}x{side}",
                pixels.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::Data(format!("label {bad} outside [0, {class_count})")));
        }
        let stats = match stats {
            Some(s) => s,
            None if split == Split::Train => ChannelStats::compute(&pixels, channels, side * side, Split::Train),
            None => return Err(Error::Contract("validation data must reuse train statistics".into())),
        };
        if stats.source != Split::Train || stats.mean.len() != channels {
            return Err(Error::Contract(
                "standardization statistics must come from the train split".into(),
            ));
        }
        Ok(Dataset {
            pixels,
            labels,
            channels,
            side,
            class_count,
            split,
            stats,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn stats(&self) -> &ChannelStats {
        &self.stats
    }

    fn image_len(&self) -> usize {
        self.channels * self.side * self.side
    }

    /// Raw bytes of image `i`.
    pub fn raw_image(&self, i: usize) -> &[u8] {
        let n = self.image_len();
        &self.pixels[i * n..(i + 1) * n]
    }

    pub fn class_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.class_count];
        for &l in &self.labels {
            h[l] += 1;
        }
        h
    }

    /// First `n` images, keeping the original statistics.
    pub fn head(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        Dataset {
            pixels: self.pixels[..n * self.image_len()].to_vec(),
            labels: self.labels[..n].to_vec(),
            ..self.clone()
        }
    }

    /// Standardized value of every pixel, `[N, C, H, W]`.
    pub fn standardized(&self) -> Tensor<f64> {
        let all: Vec<usize> = (0..self.len()).collect();
        self.batch::<f64>(&all, None).0
    }

    /// Standardized images and labels at `indices`. With an rng, each image
    /// gets a random crop from a 4-pixel zero padding and a random
    /// horizontal flip.
    pub fn batch<T: Scalar>(&self, indices: &[usize], mut augment: Option<&mut ChaCha8Rng>) -> (Tensor<T>, Vec<usize>) {
        let (c, s) = (self.channels, self.side);
        let plane = s * s;
        let mut data = Vec::with_capacity(indices.len() * self.image_len());
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            let img = self.raw_image(i);
            let (dy, dx, flip) = match augment.as_deref_mut() {
                Some(rng) => (
                    rng.random_range(-4i64..=4),
                    rng.random_range(-4i64..=4),
                    rng.random_bool(0.5),
                ),
                None => (0, 0, false),
            };
            for ch in 0..c {
                let (m, sd) = (self.stats.mean[ch], self.stats.std[ch]);
                for y in 0..s {
                    for x in 0..s {
                        let xs = if flip { s - 1 - x } else { x } as i64 + dx;
                        let ys = y as i64 + dy;
                        let v = if ys < 0 || xs < 0 || ys >= s as i64 || xs >= s as i64 {
                            0.0
                        } else {
                            (img[ch * plane + ys as usize * s + xs as usize] as f64 / 255.0 - m) / sd
                        };
                        data.push(T::cast(v));
                    }
                }
            }
            labels.push(self.labels[i]);
        }
        let t = Tensor::new(vec![indices.len(), c, s, s], data).expect("batch shape matches data");
        (t, labels)
    }
}

/// Encodes one record in the official binary layout: label byte(s) then
/// the R, G and B planes in row-major order.
pub fn encode_cifar_record(variant: CifarVariant, coarse: u8, fine: u8, pixels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(variant.record_len());
    match variant {
        CifarVariant::C10 => out.push(fine),
        CifarVariant::C100 => {
            out.push(coarse);
            out.push(fine);
        }
    }
    out.extend_from_slice(pixels);
    out
}

/// One decoded record. CIFAR-10 records have no coarse label.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CifarRecord<'a> {
    pub coarse: u8,
    pub label: usize,
    pub pixels: &'a [u8],
}

/// Splits one record into its labels and pixels; `label` is the fine label
/// for CIFAR-100.
pub fn decode_cifar_record(variant: CifarVariant, record: &[u8]) -> Result<CifarRecord<'_>> {
    if record.len() != variant.record_len() {
        return Err(Error::Data(format!(
            "record of {} bytes, expected {}",
            record.len(),
            variant.record_len()
        )));
    }
    let k = variant.label_bytes();
    Ok(CifarRecord {
        coarse: if k == 2 { record[0] } else { 0 },
        label: record[k - 1] as usize,
        pixels: &record[k..],
    })
}

fn resolve_dir(dir: &Path, variant: CifarVariant) -> PathBuf {
    let nested = dir.join(variant.subdir());
    if nested.is_dir() {
        nested
    } else {
        dir.to_path_buf()
    }
}

fn read_split(dir: &Path, variant: CifarVariant, split: Split) -> Result<(Vec<u8>, Vec<usize>)> {
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    let record = variant.record_len();
    for (name, records) in variant.files(split) {
        let path = dir.join(name);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let expected = records * record;
        if bytes.len() != expected {
            return Err(Error::Format {
                path,
                msg: format!(
                    "expected {expected} bytes ({records} records of {record}), found {}",
                    bytes.len()
                ),
            });
        }
        pixels.reserve(records * CIFAR_PIXELS);
        for rec in bytes.chunks_exact(record) {
            let CifarRecord { label, pixels: px, .. } = decode_cifar_record(variant, rec)?;
            if label >= variant.class_count() {
                return Err(Error::Format {
                    path,
                    msg: format!("label {label} outside [0, {})", variant.class_count()),
                });
            }
            labels.push(label);
            pixels.extend_from_slice(px);
        }
    }
    Ok((pixels, labels))
}

/// Loads one split of the official binary release. Standardization
/// statistics always come from the train files.
pub fn load_cifar(dir: &Path, variant: CifarVariant, split: Split) -> Result<Dataset> {
    let dir = resolve_dir(dir, variant);
    let plane = CIFAR_SIDE * CIFAR_SIDE;
    let (train_px, train_labels) = read_split(&dir, variant, Split::Train)?;
    let stats = ChannelStats::compute(&train_px, CIFAR_CHANNELS, plane, Split::Train);
    let (pixels, labels) = match split {
        Split::Train => (train_px, train_labels),
        Split::Validation => read_split(&dir, variant, Split::Validation)?,
    };
    Dataset::new(
        pixels,
        labels,
        CIFAR_CHANNELS,
        CIFAR_SIDE,
        variant.class_count(),
        split,
        Some(stats),
    )
}

/// Loads both splits with a single pass over the train files.
pub fn load_cifar_pair(dir: &Path, variant: CifarVariant) -> Result<(Dataset, Dataset)> {
    let dir = resolve_dir(dir, variant);
    let (px, labels) = read_split(&dir, variant, Split::Train)?;
    let train = Dataset::new(
        px,
        labels,
        CIFAR_CHANNELS,
        CIFAR_SIDE,
        variant.class_count(),
        Split::Train,
        None,
    )?;
    let (px, labels) = read_split(&dir, variant, Split::Validation)?;
    let val = Dataset::new(
        px,
        labels,
        CIFAR_CHANNELS,
        CIFAR_SIDE,
        variant.class_count(),
        Split::Validation,
        Some(train.stats.clone()),
    )?;
    Ok((train, val))
}

/// Radial frequency (cycles per image) carrying the signal of class `k`.
pub fn synthetic_band(k: usize, classes: usize, size: usize) -> f64 {
    let lo = 1.0;
    let hi = (size as f64 / 2.0 - 1.0).max(lo + 1.0);
    if classes <= 1 {
        lo
    } else {
        lo + (hi - lo) * k as f64 / (classes - 1) as f64
    }
}

fn synthetic_pixels(rng: &mut ChaCha8Rng, label: usize, classes: usize, size: usize) -> Vec<u8> {
    let noise = Normal::new(0.0, 0.25).expect("valid normal");
    let f = synthetic_band(label, classes, size);
    let waves: Vec<(f64, f64, f64)> = (0..2)
        .map(|_| {
            let theta = rng.random_range(0.0..PI);
            let phase = rng.random_range(0.0..2.0 * PI);
            (theta.cos(), theta.sin(), phase)
        })
        .collect();
    let gains: Vec<f64> = (0..CIFAR_CHANNELS).map(|_| rng.random_range(0.5..1.0)).collect();
    let mut out = Vec::with_capacity(CIFAR_CHANNELS * size * size);
    for gain in gains {
        for y in 0..size {
            for x in 0..size {
                let mut v = 0.0;
                for &(c, s, phase) in &waves {
                    v += (2.0 * PI * f * (c * x as f64 + s * y as f64) / size as f64 + phase).cos();
                }
                v = gain * v / 2.0 + noise.sample(rng);
                out.push((127.5 + 100.0 * v).round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    out
}

/// Deterministic class-separable RGB images: class `k` carries its energy
/// in the radial frequency band [`synthetic_band`]`(k)`, with random
/// orientation, phase and channel gains plus Gaussian noise. Labels are
/// assigned round-robin. The result is a train split with its own
/// statistics.
pub fn synthetic_dataset(seed: u64, n: usize, classes: usize, size: usize) -> Result<Dataset> {
    if classes < 2 || n < classes || size == 0 {
        return Err(Error::config(
            "synthetic",
            format!("need n >= classes >= 2 and size > 0 (n={n}, classes={classes})"),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pixels = Vec::with_capacity(n * CIFAR_CHANNELS * size * size);
    let labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    for &l in &labels {
        pixels.extend(synthetic_pixels(&mut rng, l, classes, size));
    }
    Dataset::new(pixels, labels, CIFAR_CHANNELS, size, classes, Split::Train, None)
}

/// Train and validation sets from independent generator streams; the
/// validation set is standardized with the train statistics.
pub fn synthetic_pair(
    seed: u64,
    n_train: usize,
    n_val: usize,
    classes: usize,
    size: usize,
) -> Result<(Dataset, Dataset)> {
    let train = synthetic_dataset(seed, n_train, classes, size)?;
    let v = synthetic_dataset(seed.wrapping_add(0x9E37_79B9_7F4A_7C15), n_val, classes, size)?;
    let val = Dataset::new(
        v.pixels,
        v.labels,
        v.channels,
        v.side,
        classes,
        Split::Validation,
        Some(train.stats.clone()),
    )?;
    Ok((train, val))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchMode {
    /// Shuffled by `(seed, epoch)`, last partial batch dropped.
    Train,
    /// Shuffled by `(seed, epoch)`, last partial batch kept.
    Eval,
}

/// Index batches for one epoch. The permutation depends only on
/// `(seed, epoch)`.
pub fn batch_iter(n: usize, batch_size: usize, seed: u64, epoch: u64, mode: BatchMode) -> Result<Vec<Vec<usize>>> {
    let min = match mode {
        BatchMode::Train => 2,
        BatchMode::Eval => 1,
    };
    if batch_size < min {
        return Err(Error::config("batch_size", format!("must be at least {min}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut epoch_rng(seed, epoch));
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    if mode == BatchMode::Train && batches.last().is_some_and(|b| b.len() < batch_size) {
        batches.pop();
    }
    Ok(batches)
}

/// Generator for everything random within one epoch.
pub fn epoch_rng(seed: u64, epoch: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    rng
}
