use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::train::{Content, LabeledDataset, Split};

pub const CIFAR_SIDE: usize = 32;
pub const CIFAR_CHANNELS: usize = 3;
pub const CIFAR_CLASSES: usize = 10;
const CIFAR_PIXELS: usize = CIFAR_SIDE * CIFAR_SIDE * CIFAR_CHANNELS;
pub const CIFAR_RECORD_LEN: usize = 1 + CIFAR_PIXELS;
pub const CIFAR_TRAIN_FILES: [&str; 5] =
    ["data_batch_1.bin", "data_batch_2.bin", "data_batch_3.bin", "data_batch_4.bin", "data_batch_5.bin"];
pub const CIFAR_TEST_FILE: &str = "test_batch.bin";

/// Environment variable naming the default dataset root.
pub const DATA_DIR_ENV: &str = "LATENTWIRE_DATA_DIR";

/// Parse one CIFAR-10 binary batch: 1 label byte then 3072 planar RGB bytes per record.
pub fn parse_cifar_batch(bytes: &[u8], split: Split) -> Result<LabeledDataset> {
    if !bytes.len().is_multiple_of(CIFAR_RECORD_LEN) {
        return Err(Error::Dataset(format!(
            "short read: {} bytes is not a whole number of {CIFAR_RECORD_LEN}-byte records",
            bytes.len()
        )));
    }
    let mut samples = Vec::with_capacity(bytes.len() / CIFAR_RECORD_LEN);
    for (i, rec) in bytes.chunks_exact(CIFAR_RECORD_LEN).enumerate() {
        let label = rec[0] as usize;
        if label >= CIFAR_CLASSES {
            return Err(Error::Dataset(format!("record {i}: label {label} > 9")));
        }
        let planes = &rec[1..];
        let plane = CIFAR_SIDE * CIFAR_SIDE;
        let image = Tensor::from_fn(&[CIFAR_SIDE, CIFAR_SIDE, CIFAR_CHANNELS], |idx| {
            let (pixel, c) = (idx / CIFAR_CHANNELS, idx % CIFAR_CHANNELS);
            planes[c * plane + pixel] as f32 / 255.0
        });
        samples.push((image, label));
    }
    LabeledDataset::new(samples, split, CIFAR_CLASSES, Content::Images)
}

pub fn read_cifar_batch(path: &Path, split: Split) -> Result<LabeledDataset> {
    let bytes = fs::read(path).map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))?;
    parse_cifar_batch(&bytes, split)
}

/// Serialize 32x32x3 images in the CIFAR-10 binary layout.
pub fn write_cifar_batch<W: Write>(data: &LabeledDataset, mut out: W) -> Result<()> {
    let plane = CIFAR_SIDE * CIFAR_SIDE;
    let mut rec = vec![0u8; CIFAR_RECORD_LEN];
    for (image, label) in &data.samples {
        image.expect_shape(&[CIFAR_SIDE, CIFAR_SIDE, CIFAR_CHANNELS])?;
        rec[0] = u8::try_from(*label).map_err(|_| Error::Dataset(format!("label {label} does not fit a byte")))?;
        for (idx, v) in image.data().iter().enumerate() {
            let (pixel, c) = (idx / CIFAR_CHANNELS, idx % CIFAR_CHANNELS);
            rec[1 + c * plane + pixel] = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        }
        out.write_all(&rec)?;
    }
    out.flush()?;
    Ok(())
}

/// Accept either the batch directory itself or its parent.
fn resolve_cifar_dir(dir: &Path) -> PathBuf {
    let nested = dir.join("cifar-10-batches-bin");
    if !dir.join(CIFAR_TEST_FILE).exists() && nested.join(CIFAR_TEST_FILE).exists() {
        nested
    } else {
        dir.to_path_buf()
    }
}

/// Load the standard five training batches and the test batch.
pub fn load_cifar10(dir: &Path) -> Result<(LabeledDataset, LabeledDataset)> {
    let dir = resolve_cifar_dir(dir);
    let mut train = LabeledDataset::empty(Split::Train, CIFAR_CLASSES, Content::Images);
    for name in CIFAR_TRAIN_FILES {
        let path = dir.join(name);
        if !path.exists() {
            return Err(Error::Dataset(format!("missing file {}", path.display())));
        }
        train.samples.extend(read_cifar_batch(&path, Split::Train)?.samples);
    }
    let test_path = dir.join(CIFAR_TEST_FILE);
    if !test_path.exists() {
        return Err(Error::Dataset(format!("missing file {}", test_path.display())));
    }
    Ok((train, read_cifar_batch(&test_path, Split::Test)?))
}

/// `CxN`: keep classes `0..C` with the first N training images of each.
/// Test images of the kept classes are all retained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Subset {
    pub classes: usize,
    pub per_class: usize,
}

impl std::str::FromStr for Subset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Parse(format!("subset `{s}` must look like 2x1000"));
        let (c, n) = s.split_once(['x', 'X']).ok_or_else(bad)?;
        let classes: usize = c.trim().parse().map_err(|_| bad())?;
        let per_class: usize = n.trim().parse().map_err(|_| bad())?;
        if classes < 2 || per_class == 0 {
            return Err(bad());
        }
        Ok(Self { classes, per_class })
    }
}

impl std::fmt::Display for Subset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}", self.classes, self.per_class)
    }
}

impl Serialize for Subset {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Subset {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

pub fn take_subset(data: &LabeledDataset, classes: usize, per_class: Option<usize>) -> LabeledDataset {
    let mut taken = vec![0usize; classes];
    let samples = data
        .samples
        .iter()
        .filter(|(_, l)| {
            let keep = *l < classes && per_class.is_none_or(|n| taken[*l] < n);
            if keep {
                taken[*l] += 1;
            }
            keep
        })
        .cloned()
        .collect();
    LabeledDataset { samples, ..LabeledDataset::empty(data.split, classes, data.content) }
}

/// Procedurally rendered classes: disc, bars, checker, gradient (cycled for more classes).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    pub samples_per_class: usize,
    /// Train:test ratio, default 5:1.
    pub train_parts: usize,
    pub test_parts: usize,
    /// Positional jitter as a fraction of the image side.
    pub jitter: f32,
    /// Per-channel multiplicative colour jitter.
    pub tint: f32,
    /// Standard deviation of additive pixel noise.
    pub noise: f32,
    /// Required gap between mean inter-class and intra-class pixel MSE.
    pub margin: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            height: 32,
            width: 32,
            classes: 4,
            samples_per_class: 150,
            train_parts: 5,
            test_parts: 1,
            jitter: 0.08,
            tint: 0.1,
            noise: 0.04,
            margin: 0.01,
        }
    }
}

impl SyntheticSpec {
    pub fn shape(&self) -> [usize; 3] {
        [self.height, self.width, 3]
    }

    pub fn train_per_class(&self) -> usize {
        self.samples_per_class * self.train_parts / (self.train_parts + self.test_parts)
    }

    pub fn validate(&self) -> Result<()> {
        if self.height < 8 || self.width < 8 || self.classes < 2 || self.classes > 255 {
            return Err(Error::Config("synthetic images need >= 8x8 pixels and 2..=255 classes".into()));
        }
        if self.train_parts == 0 || self.test_parts == 0 || self.train_per_class() == 0 {
            return Err(Error::Config("synthetic split must leave samples on both sides".into()));
        }
        if self.train_per_class() == self.samples_per_class {
            return Err(Error::Config("too few samples per class for a test split".into()));
        }
        if !(self.noise >= 0.0 && self.jitter >= 0.0 && self.tint >= 0.0) {
            return Err(Error::Config("noise, jitter and tint must be non-negative".into()));
        }
        Ok(())
    }
}

const PALETTE: [([f32; 3], [f32; 3]); 4] = [
    ([0.9, 0.2, 0.2], [0.1, 0.1, 0.2]),
    ([0.2, 0.8, 0.3], [0.15, 0.1, 0.1]),
    ([0.2, 0.3, 0.9], [0.9, 0.9, 0.8]),
    ([0.9, 0.8, 0.2], [0.3, 0.1, 0.4]),
];

fn render<R: Rng>(spec: &SyntheticSpec, class: usize, rng: &mut R, noise: &Normal<f32>) -> Tensor {
    let (h, w) = (spec.height, spec.width);
    let (fg0, bg0) = PALETTE[class % PALETTE.len()];
    // Later cycles rotate the palette channels so colours stay distinct.
    let rot = (class / PALETTE.len()) % 3;
    let mut fg = [0.0; 3];
    let mut bg = [0.0; 3];
    for c in 0..3 {
        let tint = |rng: &mut R| 1.0 + rng.random_range(-1.0..=1.0) * spec.tint;
        fg[c] = fg0[(c + rot) % 3] * tint(rng);
        bg[c] = bg0[(c + rot) % 3] * tint(rng);
    }
    let j = spec.jitter;
    let jit = |rng: &mut R| if j > 0.0 { rng.random_range(-j..=j) } else { 0.0 };
    let (cx, cy, radius) = (0.5 + jit(rng), 0.5 + jit(rng), 0.28 + jit(rng) * 0.5);
    let period = (h as f32 / 4.0).max(2.0) * (1.0 + jit(rng));
    let phase = rng.random_range(0.0..period);
    let cell = (h as f32 / 6.0).max(1.0) * (1.0 + jit(rng));
    let (ox, oy) = (rng.random_range(0.0..cell), rng.random_range(0.0..cell));
    let angle = std::f32::consts::FRAC_PI_4 + jit(rng) * 4.0;
    let (ca, sa) = (angle.cos(), angle.sin());
    let pattern = class % PALETTE.len();
    let mut data = Vec::with_capacity(h * w * 3);
    for y in 0..h {
        for x in 0..w {
            let (u, v) = ((x as f32 + 0.5) / w as f32, (y as f32 + 0.5) / h as f32);
            let t = match pattern {
                0 => f32::from(((u - cx).powi(2) + (v - cy).powi(2)).sqrt() < radius),
                1 => f32::from(((y as f32 + phase) / (period / 2.0)).floor() as i64 % 2 == 0),
                2 => {
                    let (a, b) = (((x as f32 + ox) / cell).floor() as i64, ((y as f32 + oy) / cell).floor() as i64);
                    f32::from((a + b) % 2 == 0)
                }
                _ => ((u * ca + v * sa) / (ca + sa)).clamp(0.0, 1.0),
            };
            for c in 0..3 {
                let value = bg[c] * (1.0 - t) + fg[c] * t + noise.sample(rng);
                data.push(value.clamp(0.0, 1.0));
            }
        }
    }
    Tensor::new(vec![h, w, 3], data).expect("rendered image shape")
}

/// Deterministic synthetic train/test sets with exact class balance; labels cycle
/// through the classes in sample order.
pub fn gen_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<(LabeledDataset, LabeledDataset)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, spec.noise).map_err(|e| Error::Config(e.to_string()))?;
    let mut make = |per_class: usize, split| {
        let samples = (0..per_class * spec.classes)
            .map(|i| {
                let class = i % spec.classes;
                (render(spec, class, &mut rng, &noise), class)
            })
            .collect();
        LabeledDataset::new(samples, split, spec.classes, Content::Images)
    };
    let train = make(spec.train_per_class(), Split::Train)?;
    let test = make(spec.samples_per_class - spec.train_per_class(), Split::Test)?;
    Ok((train, test))
}

fn mse(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| ((x - y) as f64).powi(2)).sum::<f64>() / a.len() as f64
}

/// Per-class pixel means.
pub fn class_centroids(data: &LabeledDataset) -> Vec<Option<Vec<f64>>> {
    let mut sums: Vec<Option<Vec<f64>>> = vec![None; data.num_classes];
    let counts = data.class_counts();
    for (x, l) in &data.samples {
        let sum = sums[*l].get_or_insert_with(|| vec![0.0; x.len()]);
        sum.iter_mut().zip(x.data()).for_each(|(s, v)| *s += *v as f64);
    }
    for (sum, n) in sums.iter_mut().zip(counts) {
        if let Some(sum) = sum {
            sum.iter_mut().for_each(|s| *s /= n as f64);
        }
    }
    sums
}

/// Classify each test sample by its nearest training centroid in pixel space.
pub fn nearest_centroid_accuracy(train: &LabeledDataset, test: &LabeledDataset) -> f64 {
    let centroids = class_centroids(train);
    let correct = test
        .samples
        .iter()
        .filter(|(x, label)| {
            let best = centroids
                .iter()
                .enumerate()
                .filter_map(|(k, c)| c.as_ref().map(|c| (k, dist(x.data(), c))))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .map(|(k, _)| k);
            best == Some(*label)
        })
        .count();
    correct as f64 / test.len().max(1) as f64
}

fn dist(x: &[f32], c: &[f64]) -> f64 {
    x.iter().zip(c).map(|(a, b)| (*a as f64 - b).powi(2)).sum()
}

/// Mean pixel MSE between sample pairs of the same class and of different classes,
/// over consecutive pairs in dataset order.
pub fn class_separation(data: &LabeledDataset) -> (f64, f64) {
    let (mut intra, mut inter) = ((0.0, 0usize), (0.0, 0usize));
    for (i, (a, la)) in data.samples.iter().enumerate() {
        for (b, lb) in data.samples.iter().skip(i + 1).take(2 * data.num_classes) {
            let slot = if la == lb { &mut intra } else { &mut inter };
            slot.0 += mse(a.data(), b.data());
            slot.1 += 1;
        }
    }
    (intra.0 / intra.1.max(1) as f64, inter.0 / inter.1.max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_sizes() {
        let (train, test) = gen_synthetic(&SyntheticSpec::default(), 3).unwrap();
        assert_eq!((train.len(), test.len()), (500, 100));
        assert_eq!(train.class_counts(), vec![125; 4]);
        assert_eq!(test.class_counts(), vec![25; 4]);
        assert!(train.images().all(|x| x.data().iter().all(|v| (0.0..=1.0).contains(v))));
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let spec = SyntheticSpec { samples_per_class: 12, ..Default::default() };
        let a = gen_synthetic(&spec, 5).unwrap();
        let b = gen_synthetic(&spec, 5).unwrap();
        let c = gen_synthetic(&spec, 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.0, c.0);
    }

    #[test]
    fn learnable_and_separated() {
        let spec = SyntheticSpec::default();
        let (train, test) = gen_synthetic(&spec, 11).unwrap();
        let acc = nearest_centroid_accuracy(&train, &test);
        assert!(acc > 0.9, "nearest centroid accuracy {acc}");
        let (intra, inter) = class_separation(&train);
        assert!(inter - intra > spec.margin, "intra {intra} inter {inter}");
    }

    #[test]
    fn cifar_fixture_all_white_label_seven() {
        let mut bytes = vec![7u8];
        bytes.extend(std::iter::repeat_n(255u8, CIFAR_PIXELS));
        let d = parse_cifar_batch(&bytes, Split::Train).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d.samples[0].1, 7);
        assert!(d.samples[0].0.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn cifar_planar_to_interleaved() {
        let mut bytes = vec![0u8];
        bytes.extend(std::iter::repeat_n(0u8, 1024));
        bytes.extend(std::iter::repeat_n(51u8, 1024));
        bytes.extend(std::iter::repeat_n(255u8, 1024));
        let d = parse_cifar_batch(&bytes, Split::Test).unwrap();
        assert_eq!(&d.samples[0].0.data()[..6], &[0.0, 0.2, 1.0, 0.0, 0.2, 1.0]);
    }

    #[test]
    fn cifar_errors() {
        assert!(parse_cifar_batch(&[1u8; 100], Split::Train).is_err());
        let mut bad = vec![10u8];
        bad.extend(vec![0u8; CIFAR_PIXELS]);
        assert!(parse_cifar_batch(&bad, Split::Train).is_err());
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_cifar10(dir.path()), Err(Error::Dataset(m)) if m.contains("missing")));
    }

    #[test]
    fn cifar_write_read_round_trip() {
        let spec = SyntheticSpec { samples_per_class: 6, ..Default::default() };
        let (train, _) = gen_synthetic(&spec, 1).unwrap();
        let mut bytes = Vec::new();
        write_cifar_batch(&train, &mut bytes).unwrap();
        let back = parse_cifar_batch(&bytes, Split::Train).unwrap();
        assert_eq!(back.labels().collect::<Vec<_>>(), train.labels().collect::<Vec<_>>());
        for ((a, _), (b, _)) in back.samples.iter().zip(&train.samples) {
            assert!(a.data().iter().zip(b.data()).all(|(x, y)| (x - y).abs() <= 0.5 / 255.0 + 1e-6));
        }
    }

    #[test]
    fn subset_parse_and_take() {
        let s: Subset = "2x1000".parse().unwrap();
        assert_eq!(s, Subset { classes: 2, per_class: 1000 });
        assert!("2".parse::<Subset>().is_err());
        let spec = SyntheticSpec { samples_per_class: 12, ..Default::default() };
        let (train, _) = gen_synthetic(&spec, 1).unwrap();
        let sub = take_subset(&train, 2, Some(3));
        assert_eq!(sub.class_counts(), vec![3, 3]);
    }
}
