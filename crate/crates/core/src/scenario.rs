//! Datasets, class-incremental task streams, pretraining and the named
//! freezing setups.
//!
//! Images are kept as raw u8 and materialized into normalized f32 batches
//! on demand; per-channel normalization statistics come from the training
//! split. Loaders read the published binary formats (CIFAR batches, IDX)
//! from a data directory and never write into it. A procedural `synthetic`
//! dataset with the FashionMNIST shape exists so end-to-end paths can be
//! exercised without any files on disk.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};

use ndarray::Array4;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::arch::{build_classifier, Classifier, ClassifierSpec, FreezeScope};
use crate::error::{Error, Result};
use crate::nn::init::rng_for;
use crate::nn::Adam;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetId {
    Cifar10,
    Cifar100,
    FashionMnist,
    Synthetic,
}

impl DatasetId {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cifar10" => Ok(DatasetId::Cifar10),
            "cifar100" => Ok(DatasetId::Cifar100),
            "fashion_mnist" | "fashionmnist" | "fmnist" => Ok(DatasetId::FashionMnist),
            "synthetic" => Ok(DatasetId::Synthetic),
            other => Err(Error::config(format!("unknown dataset '{other}'"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            DatasetId::Cifar10 => "cifar10",
            DatasetId::Cifar100 => "cifar100",
            DatasetId::FashionMnist => "fashion_mnist",
            DatasetId::Synthetic => "synthetic",
        }
    }

    pub fn num_classes(&self) -> usize {
        match self {
            DatasetId::Cifar10 => 10,
            DatasetId::Cifar100 => 100,
            DatasetId::FashionMnist => 10,
            DatasetId::Synthetic => 10,
        }
    }

    pub fn image_shape(&self) -> (usize, usize, usize) {
        match self {
            DatasetId::Cifar10 | DatasetId::Cifar100 => (3, 32, 32),
            DatasetId::FashionMnist | DatasetId::Synthetic => (1, 28, 28),
        }
    }

    /// (tasks, classes per task) presets for the class-incremental splits.
    pub fn split_preset(&self) -> (usize, usize) {
        match self {
            DatasetId::Cifar10 => (2, 5),
            DatasetId::Cifar100 => (10, 10),
            DatasetId::FashionMnist => (5, 2),
            DatasetId::Synthetic => (5, 2),
        }
    }
}

/// In-memory split: raw u8 images plus labels and the normalization
/// statistics of the training split.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub id: DatasetId,
    images: Vec<u8>,
    labels: Vec<u8>,
    shape: (usize, usize, usize),
    mean: Vec<f32>,
    std: Vec<f32>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn image_shape(&self) -> (usize, usize, usize) {
        self.shape
    }

    /// Indices whose label falls into `classes`.
    pub fn indices_of_classes(&self, classes: &[usize]) -> Vec<usize> {
        let set: BTreeSet<usize> = classes.iter().copied().collect();
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| set.contains(&(l as usize)))
            .map(|(i, _)| i)
            .collect()
    }

    /// Materialize a normalized f32 batch for the given sample indices.
    pub fn batch(&self, idxs: &[usize]) -> (Array4<f32>, Vec<usize>) {
        let (c, h, w) = self.shape;
        let px = c * h * w;
        let mut out = Array4::<f32>::zeros((idxs.len(), c, h, w));
        let mut labels = Vec::with_capacity(idxs.len());
        for (bi, &i) in idxs.iter().enumerate() {
            let raw = &self.images[i * px..(i + 1) * px];
            for ci in 0..c {
                let (m, s) = (self.mean[ci], self.std[ci]);
                for hi in 0..h {
                    for wi in 0..w {
                        let v = raw[(ci * h + hi) * w + wi] as f32 / 255.0;
                        out[[bi, ci, hi, wi]] = (v - m) / s;
                    }
                }
            }
            labels.push(self.labels[i] as usize);
        }
        (out, labels)
    }

    /// Same batch with random crop (4px reflection-free zero padding) and
    /// horizontal flip, used by pretraining when augmentation is enabled.
    pub fn batch_augmented(&self, idxs: &[usize], rng: &mut ChaCha8Rng) -> (Array4<f32>, Vec<usize>) {
        let (base, labels) = self.batch(idxs);
        let (b, c, h, w) = base.dim();
        let pad = 4usize;
        let mut out = Array4::<f32>::zeros((b, c, h, w));
        for bi in 0..b {
            let dy = rng.random_range(0..=2 * pad) as isize - pad as isize;
            let dx = rng.random_range(0..=2 * pad) as isize - pad as isize;
            let flip = rng.random_bool(0.5);
            for ci in 0..c {
                for hi in 0..h {
                    let sy = hi as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for wi in 0..w {
                        let sx0 = if flip { w - 1 - wi } else { wi };
                        let sx = sx0 as isize + dx;
                        if sx < 0 || sx >= w as isize {
                            continue;
                        }
                        out[[bi, ci, hi, wi]] = base[[bi, ci, sy as usize, sx as usize]];
                    }
                }
            }
        }
        (out, labels)
    }

    fn compute_norm(images: &[u8], shape: (usize, usize, usize)) -> (Vec<f32>, Vec<f32>) {
        let (c, h, w) = shape;
        let px = c * h * w;
        let n = images.len() / px;
        let mut mean = vec![0.0f64; c];
        let mut sq = vec![0.0f64; c];
        for i in 0..n {
            let raw = &images[i * px..(i + 1) * px];
            for ci in 0..c {
                for p in &raw[ci * h * w..(ci + 1) * h * w] {
                    let v = *p as f64 / 255.0;
                    mean[ci] += v;
                    sq[ci] += v * v;
                }
            }
        }
        let cnt = (n * h * w) as f64;
        let mut m = Vec::with_capacity(c);
        let mut s = Vec::with_capacity(c);
        for ci in 0..c {
            let mu = mean[ci] / cnt;
            let var = (sq[ci] / cnt - mu * mu).max(1e-8);
            m.push(mu as f32);
            s.push(var.sqrt() as f32);
        }
        (m, s)
    }
}

/// Train and test splits of one dataset, sharing the training-split
/// normalization.
#[derive(Debug, Clone)]
pub struct DatasetPair {
    pub train: Dataset,
    pub test: Dataset,
}

/// A slice of one dataset restricted to a task's classes.
#[derive(Debug, Clone)]
pub struct TaskSlice<'a> {
    pub dataset: &'a Dataset,
    pub indices: Vec<usize>,
    pub classes: Vec<usize>,
}

impl<'a> TaskSlice<'a> {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn batch(&self, rows: &[usize]) -> (Array4<f32>, Vec<usize>) {
        let idxs: Vec<usize> = rows.iter().map(|&r| self.indices[r]).collect();
        self.dataset.batch(&idxs)
    }
}

/// Ordered class-incremental task stream over a dataset split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskStream {
    pub dataset: DatasetId,
    pub tasks: Vec<Vec<usize>>,
    pub split_seed: u64,
}

/// Build the preset stream for a dataset. Classes are in ascending label
/// order by default; `permute` shuffles the class order deterministically
/// from the seed.
pub fn build_stream(dataset: DatasetId, split_seed: u64, permute: bool) -> TaskStream {
    let (num_tasks, per_task) = dataset.split_preset();
    let mut classes: Vec<usize> = (0..dataset.num_classes()).collect();
    if permute {
        let mut rng = ChaCha8Rng::seed_from_u64(crate::nn::init::subseed(split_seed, "class-order"));
        classes.shuffle(&mut rng);
    }
    let tasks = classes
        .chunks(per_task)
        .take(num_tasks)
        .map(|c| c.to_vec())
        .collect();
    TaskStream {
        dataset,
        tasks,
        split_seed,
    }
}

impl TaskStream {
    pub fn num_tasks(&self) -> usize {
        self.tasks.len()
    }

    /// Classes seen after finishing task index `t` (0-based, inclusive).
    pub fn classes_up_to(&self, t: usize) -> Vec<usize> {
        self.tasks[..=t].iter().flatten().copied().collect()
    }

    pub fn task_slice<'a>(&self, dataset: &'a Dataset, t: usize) -> TaskSlice<'a> {
        let classes = self.tasks[t].clone();
        let indices = dataset.indices_of_classes(&classes);
        TaskSlice {
            dataset,
            indices,
            classes,
        }
    }
}

// ---------------------------------------------------------------------------
// loaders

fn data_root(explicit: Option<&Path>) -> PathBuf {
    if let Some(p) = explicit {
        return p.to_path_buf();
    }
    std::env::var_os("PLR_DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("data"))
}

fn missing(dataset: DatasetId, root: &Path, detail: &str) -> Error {
    Error::MissingData(format!(
        "{} not found under {} ({detail}).\n{}",
        dataset.name(),
        root.display(),
        download_instructions(dataset)
    ))
}

/// Shell instructions for fetching a dataset into the data directory.
pub fn download_instructions(dataset: DatasetId) -> String {
    match dataset {
        DatasetId::Cifar10 => "Fetch the CIFAR-10 binary release:\n  \
             curl -LO https://www.cs.toronto.edu/~kriz/cifar-10-binary.tar.gz\n  \
             tar -xzf cifar-10-binary.tar.gz -C $PLR_DATA_DIR\n\
             (expects $PLR_DATA_DIR/cifar-10-batches-bin/data_batch_1.bin ...)"
            .into(),
        DatasetId::Cifar100 => "Fetch the CIFAR-100 binary release:\n  \
             curl -LO https://www.cs.toronto.edu/~kriz/cifar-100-binary.tar.gz\n  \
             tar -xzf cifar-100-binary.tar.gz -C $PLR_DATA_DIR\n\
             (expects $PLR_DATA_DIR/cifar-100-binary/train.bin and test.bin)"
            .into(),
        DatasetId::FashionMnist => "Fetch the FashionMNIST IDX files into $PLR_DATA_DIR/fashion-mnist/:\n  \
             train-images-idx3-ubyte.gz train-labels-idx1-ubyte.gz\n  \
             t10k-images-idx3-ubyte.gz t10k-labels-idx1-ubyte.gz\n\
             from https://github.com/zalandoresearch/fashion-mnist (gz or unpacked)"
            .into(),
        DatasetId::Synthetic => "the synthetic dataset is procedural and needs no files".into(),
    }
}

/// Load train and test splits of a dataset from `root` (defaults to
/// $PLR_DATA_DIR, then ./data). The synthetic dataset is generated from
/// the split seed and ignores the directory entirely.
pub fn load_dataset(dataset: DatasetId, root: Option<&Path>) -> Result<DatasetPair> {
    match dataset {
        DatasetId::Synthetic => Ok(synthetic_pair()),
        DatasetId::Cifar10 => load_cifar10(&data_root(root)),
        DatasetId::Cifar100 => load_cifar100(&data_root(root)),
        DatasetId::FashionMnist => load_fashion_mnist(&data_root(root)),
    }
}

fn finish_pair(
    id: DatasetId,
    train_images: Vec<u8>,
    train_labels: Vec<u8>,
    test_images: Vec<u8>,
    test_labels: Vec<u8>,
) -> DatasetPair {
    let shape = id.image_shape();
    let (mean, std) = Dataset::compute_norm(&train_images, shape);
    DatasetPair {
        train: Dataset {
            id,
            images: train_images,
            labels: train_labels,
            shape,
            mean: mean.clone(),
            std: std.clone(),
        },
        test: Dataset {
            id,
            images: test_images,
            labels: test_labels,
            shape,
            mean,
            std,
        },
    }
}

fn read_file(path: &Path) -> std::io::Result<Vec<u8>> {
    let mut buf = Vec::new();
    File::open(path)?.read_to_end(&mut buf)?;
    Ok(buf)
}

fn load_cifar10(root: &Path) -> Result<DatasetPair> {
    let dir = root.join("cifar-10-batches-bin");
    let mut train_images = Vec::new();
    let mut train_labels = Vec::new();
    for i in 1..=5 {
        let path = dir.join(format!("data_batch_{i}.bin"));
        let raw = read_file(&path).map_err(|e| missing(DatasetId::Cifar10, root, &format!("{}: {e}", path.display())))?;
        parse_cifar_records(&raw, 1, &mut train_images, &mut train_labels)?;
    }
    let test_raw = read_file(&dir.join("test_batch.bin"))
        .map_err(|e| missing(DatasetId::Cifar10, root, &format!("test_batch.bin: {e}")))?;
    let mut test_images = Vec::new();
    let mut test_labels = Vec::new();
    parse_cifar_records(&test_raw, 1, &mut test_images, &mut test_labels)?;
    Ok(finish_pair(DatasetId::Cifar10, train_images, train_labels, test_images, test_labels))
}

fn load_cifar100(root: &Path) -> Result<DatasetPair> {
    let dir = root.join("cifar-100-binary");
    let train_raw = read_file(&dir.join("train.bin"))
        .map_err(|e| missing(DatasetId::Cifar100, root, &format!("train.bin: {e}")))?;
    let test_raw = read_file(&dir.join("test.bin"))
        .map_err(|e| missing(DatasetId::Cifar100, root, &format!("test.bin: {e}")))?;
    let mut train_images = Vec::new();
    let mut train_labels = Vec::new();
    // 2 label bytes per record (coarse, fine); the fine label is kept
    parse_cifar_records(&train_raw, 2, &mut train_images, &mut train_labels)?;
    let mut test_images = Vec::new();
    let mut test_labels = Vec::new();
    parse_cifar_records(&test_raw, 2, &mut test_images, &mut test_labels)?;
    Ok(finish_pair(DatasetId::Cifar100, train_images, train_labels, test_images, test_labels))
}

fn parse_cifar_records(raw: &[u8], label_bytes: usize, images: &mut Vec<u8>, labels: &mut Vec<u8>) -> Result<()> {
    let record = label_bytes + 3072;
    if raw.len() % record != 0 {
        return Err(Error::input(format!(
            "CIFAR file size {} is not a multiple of the record size {record}",
            raw.len()
        )));
    }
    for rec in raw.chunks_exact(record) {
        labels.push(rec[label_bytes - 1]);
        images.extend_from_slice(&rec[label_bytes..]);
    }
    Ok(())
}

fn read_maybe_gz(path_base: &Path) -> std::io::Result<Vec<u8>> {
    let mut gz_name = path_base.as_os_str().to_owned();
    gz_name.push(".gz");
    let gz = PathBuf::from(gz_name);
    if gz.exists() {
        let mut out = Vec::new();
        flate2::read::GzDecoder::new(File::open(&gz)?).read_to_end(&mut out)?;
        return Ok(out);
    }
    read_file(path_base)
}

fn load_fashion_mnist(root: &Path) -> Result<DatasetPair> {
    let dir = root.join("fashion-mnist");
    let load = |prefix: &str| -> Result<(Vec<u8>, Vec<u8>)> {
        let images_raw = read_maybe_gz(&dir.join(format!("{prefix}-images-idx3-ubyte"))).map_err(|e| {
            missing(DatasetId::FashionMnist, root, &format!("{prefix} images: {e}"))
        })?;
        let labels_raw = read_maybe_gz(&dir.join(format!("{prefix}-labels-idx1-ubyte"))).map_err(|e| {
            missing(DatasetId::FashionMnist, root, &format!("{prefix} labels: {e}"))
        })?;
        let images = parse_idx_images(&images_raw)?;
        let labels = parse_idx_labels(&labels_raw)?;
        if images.len() != labels.len() * 28 * 28 {
            return Err(Error::input("IDX image/label count mismatch".to_string()));
        }
        Ok((images, labels))
    };
    let (train_images, train_labels) = load("train")?;
    let (test_images, test_labels) = load("t10k")?;
    Ok(finish_pair(DatasetId::FashionMnist, train_images, train_labels, test_images, test_labels))
}

fn be_u32(b: &[u8]) -> u32 {
    u32::from_be_bytes([b[0], b[1], b[2], b[3]])
}

fn parse_idx_images(raw: &[u8]) -> Result<Vec<u8>> {
    if raw.len() < 16 || be_u32(&raw[0..4]) != 2051 {
        return Err(Error::input("bad IDX image magic".to_string()));
    }
    let n = be_u32(&raw[4..8]) as usize;
    let rows = be_u32(&raw[8..12]) as usize;
    let cols = be_u32(&raw[12..16]) as usize;
    if rows != 28 || cols != 28 || raw.len() != 16 + n * rows * cols {
        return Err(Error::input(format!("unexpected IDX image dimensions {n}x{rows}x{cols}")));
    }
    Ok(raw[16..].to_vec())
}

fn parse_idx_labels(raw: &[u8]) -> Result<Vec<u8>> {
    if raw.len() < 8 || be_u32(&raw[0..4]) != 2049 {
        return Err(Error::input("bad IDX label magic".to_string()));
    }
    let n = be_u32(&raw[4..8]) as usize;
    if raw.len() != 8 + n {
        return Err(Error::input("IDX label payload size mismatch".to_string()));
    }
    Ok(raw[8..].to_vec())
}

/// Procedural 10-class dataset with FashionMNIST geometry: each class is a
/// blurred blob at a class-specific location plus noise. Deterministic.
fn synthetic_pair() -> DatasetPair {
    let gen_split = |count_per_class: usize, seed: u64| -> (Vec<u8>, Vec<u8>) {
        let mut rng = rng_for(seed, "synthetic-data");
        let mut images = Vec::with_capacity(count_per_class * 10 * 784);
        let mut labels = Vec::with_capacity(count_per_class * 10);
        for class in 0..10u8 {
            let cx = 6.0 + 4.0 * (class % 4) as f32;
            let cy = 6.0 + 5.0 * (class / 4) as f32;
            let spread = 2.0 + (class % 3) as f32;
            for _ in 0..count_per_class {
                let jx: f32 = rng.random_range(-1.5..1.5);
                let jy: f32 = rng.random_range(-1.5..1.5);
                for y in 0..28 {
                    for x in 0..28 {
                        let dx = (x as f32 - cx - jx) / spread;
                        let dy = (y as f32 - cy - jy) / spread;
                        let v = (-(dx * dx + dy * dy)).exp();
                        let noise: f32 = rng.random_range(0.0..0.15);
                        images.push(((v + noise).clamp(0.0, 1.0) * 255.0) as u8);
                    }
                }
                labels.push(class);
            }
        }
        (images, labels)
    };
    let (train_images, train_labels) = gen_split(64, 1);
    let (test_images, test_labels) = gen_split(16, 2);
    finish_pair(DatasetId::Synthetic, train_images, train_labels, test_images, test_labels)
}

// ---------------------------------------------------------------------------
// pretraining

/// Supervised pretraining of the extractor on a class subset of a source
/// dataset (the CIFAR10 ablation axis), with optional crop/flip
/// augmentation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub source: DatasetId,
    pub num_classes_used: usize,
    pub augmentation: bool,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            source: DatasetId::Cifar10,
            num_classes_used: 10,
            augmentation: true,
            epochs: 100,
            batch_size: 256,
            learning_rate: 1e-4,
            seed: 0,
        }
    }
}

/// Train the full classifier on the selected subset of source classes and
/// export the convolutional parameters only.
pub fn pretrain_extractor(
    config: &PretrainConfig,
    classifier_spec: &ClassifierSpec,
    data: &DatasetPair,
) -> Result<Vec<ndarray::ArrayD<f32>>> {
    if config.num_classes_used < 2 {
        return Err(Error::config(
            "pretraining with a classification loss needs at least 2 classes",
        ));
    }
    if config.num_classes_used > data.train.id.num_classes() {
        return Err(Error::config(format!(
            "num_classes_used {} exceeds the source dataset's {} classes",
            config.num_classes_used,
            data.train.id.num_classes()
        )));
    }
    let classes: Vec<usize> = (0..config.num_classes_used).collect();
    let indices = data.train.indices_of_classes(&classes);
    if indices.is_empty() {
        return Err(Error::config("pretraining subset is empty"));
    }
    let mut classifier = build_classifier(classifier_spec, crate::nn::init::subseed(config.seed, "pretrain"))?;
    let opt = Adam::with_lr(config.learning_rate);
    let mut rng = rng_for(config.seed, "pretrain-loop");
    let mut order = indices.clone();
    for _epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let (images, labels) = if config.augmentation {
                data.train.batch_augmented(chunk, &mut rng)
            } else {
                data.train.batch(chunk)
            };
            let (logits, cache) = classifier.forward_train(&images)?;
            let (_, dlogits) = crate::nn::functional::cross_entropy(&logits, &labels);
            classifier.backward_train(&cache, &dlogits);
            classifier.adam_step(&opt);
        }
    }
    Ok(classifier.export_extractor())
}

// ---------------------------------------------------------------------------
// named freezing setups

/// The four named pretraining/freezing setups evaluated on simple datasets:
/// image-space generative replay, internal replay with the extractor frozen
/// after the first task, generative replay with classifier extractor and
/// generator decoder frozen after the first task, and internal replay with
/// no pretraining and no freezing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FreezeSetup {
    Gr,
    IrFreezeEnc,
    GrFreezeEncDec,
    IrNaive,
}

impl FreezeSetup {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "GR" => Ok(FreezeSetup::Gr),
            "IR_freeze_enc" => Ok(FreezeSetup::IrFreezeEnc),
            "GR_freeze_enc_dec" => Ok(FreezeSetup::GrFreezeEncDec),
            "IR_naive" => Ok(FreezeSetup::IrNaive),
            other => Err(Error::config(format!(
                "unknown setup '{other}' (expected GR, IR_freeze_enc, GR_freeze_enc_dec or IR_naive)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            FreezeSetup::Gr => "GR",
            FreezeSetup::IrFreezeEnc => "IR_freeze_enc",
            FreezeSetup::GrFreezeEncDec => "GR_freeze_enc_dec",
            FreezeSetup::IrNaive => "IR_naive",
        }
    }

    pub const ALL: [FreezeSetup; 4] = [
        FreezeSetup::Gr,
        FreezeSetup::IrFreezeEnc,
        FreezeSetup::GrFreezeEncDec,
        FreezeSetup::IrNaive,
    ];

    /// Whether this setup replays raw images through the whole network.
    pub fn uses_image_replay(&self) -> bool {
        matches!(self, FreezeSetup::Gr | FreezeSetup::GrFreezeEncDec)
    }

    /// Freeze applied to the classifier after the first task.
    pub fn classifier_freeze_after_task1(&self) -> Option<FreezeScope> {
        match self {
            FreezeSetup::IrFreezeEnc | FreezeSetup::GrFreezeEncDec => Some(FreezeScope::Extractor),
            _ => None,
        }
    }

    /// Whether the generator decoder freezes after the first task.
    pub fn generator_decoder_freeze_after_task1(&self) -> bool {
        matches!(self, FreezeSetup::GrFreezeEncDec)
    }
}

/// Run one of the four named setups over a task stream and return the
/// per-task test accuracies after the final task. The IR setups rehearse
/// generated level-0 features; the GR setups rehearse generated images
/// through the whole network. Freezing, where the setup calls for it,
/// happens after the first task.
pub fn run_fig4_setup(
    setup: FreezeSetup,
    stream: &TaskStream,
    data: &DatasetPair,
    train_cfg: &crate::replay::TrainConfig,
    classifier_spec: &ClassifierSpec,
    latent_dim: usize,
    image_vae_hidden: &[usize],
    seed: u64,
) -> Result<Vec<f64>> {
    use crate::replay::{train_task, RehearsalMode, ReplayStrategy};

    let mut classifier = build_classifier(classifier_spec, crate::nn::init::subseed(seed, "classifier"))?;
    let strategy = ReplayStrategy::internal_replay(classifier_spec.num_levels());
    let (c, h, w) = data.train.image_shape();
    let mut feature_gen = (!setup.uses_image_replay())
        .then(|| crate::generator::build_generator(classifier_spec, latent_dim, crate::nn::init::subseed(seed, "generator")))
        .transpose()?;
    let mut image_vae = setup
        .uses_image_replay()
        .then(|| crate::generator::ImageVae::build(c * h * w, image_vae_hidden, latent_dim, crate::nn::init::subseed(seed, "image-vae")))
        .transpose()?;
    let mut rng = rng_for(seed, "fig4-train");

    let mut teacher: Option<Classifier> = None;
    let mut gen_snapshot: Option<crate::generator::Generator> = None;
    let mut vae_snapshot: Option<crate::generator::ImageVae> = None;

    for t in 0..stream.num_tasks() {
        let task = stream.task_slice(&data.train, t);
        let mode = if let Some(vae) = image_vae.as_mut() {
            RehearsalMode::ImageGr {
                live: vae,
                snapshot: vae_snapshot.as_ref(),
                teacher: teacher.as_ref(),
            }
        } else {
            RehearsalMode::Generative {
                live: feature_gen.as_mut().unwrap(),
                snapshot: gen_snapshot.as_ref(),
                teacher: teacher.as_ref(),
            }
        };
        train_task(&mut classifier, mode, &task, &strategy, train_cfg, t + 1, &mut rng)?;
        if t == 0 {
            if let Some(scope) = setup.classifier_freeze_after_task1() {
                classifier.freeze(scope);
            }
            if setup.generator_decoder_freeze_after_task1() {
                if let Some(vae) = image_vae.as_mut() {
                    vae.freeze_decoder();
                }
            }
        }
        teacher = Some(classifier.clone());
        gen_snapshot = feature_gen.clone();
        vae_snapshot = image_vae.clone();
    }
    evaluate_per_task(&classifier, stream, &data.test, stream.num_tasks() - 1)
}

/// Accuracy of `classifier` on the test samples of each task seen so far;
/// predictions are argmax over the full shared head.
pub fn evaluate_per_task(classifier: &Classifier, stream: &TaskStream, test: &Dataset, upto_task: usize) -> Result<Vec<f64>> {
    let mut accs = Vec::with_capacity(upto_task + 1);
    for t in 0..=upto_task {
        let slice = stream.task_slice(test, t);
        if slice.is_empty() {
            accs.push(0.0);
            continue;
        }
        let mut correct = 0usize;
        for chunk in slice.indices.chunks(512) {
            let (images, labels) = test.batch(chunk);
            let logits = classifier.forward(&images)?;
            let preds = crate::nn::functional::argmax_rows(&logits);
            correct += preds.iter().zip(labels.iter()).filter(|(p, l)| p == l).count();
        }
        accs.push(correct as f64 / slice.len() as f64);
    }
    Ok(accs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_streams_have_expected_shape() {
        let s = build_stream(DatasetId::Cifar100, 0, false);
        assert_eq!(s.num_tasks(), 10);
        assert!(s.tasks.iter().all(|t| t.len() == 10));
        let s = build_stream(DatasetId::FashionMnist, 0, false);
        assert_eq!(s.num_tasks(), 5);
        assert!(s.tasks.iter().all(|t| t.len() == 2));
        let s = build_stream(DatasetId::Cifar10, 0, false);
        assert_eq!(s.num_tasks(), 2);
        assert!(s.tasks.iter().all(|t| t.len() == 5));
    }

    #[test]
    fn streams_are_disjoint_and_cover() {
        for id in [DatasetId::Cifar10, DatasetId::Cifar100, DatasetId::FashionMnist] {
            for permute in [false, true] {
                let s = build_stream(id, 7, permute);
                let mut seen = BTreeSet::new();
                for t in &s.tasks {
                    for &c in t {
                        assert!(seen.insert(c), "class {c} appears twice");
                    }
                }
                assert_eq!(seen.len(), id.num_classes());
            }
        }
    }

    #[test]
    fn same_seed_same_split() {
        let a = build_stream(DatasetId::Cifar100, 5, true);
        let b = build_stream(DatasetId::Cifar100, 5, true);
        assert_eq!(a, b);
        let c = build_stream(DatasetId::Cifar100, 6, true);
        assert_ne!(a, c);
    }

    #[test]
    fn missing_dataset_reports_instructions() {
        let err = load_dataset(DatasetId::Cifar10, Some(Path::new("/nonexistent"))).unwrap_err();
        match err {
            Error::MissingData(msg) => assert!(msg.contains("cifar-10-binary.tar.gz")),
            other => panic!("expected MissingData, got {other:?}"),
        }
    }

    #[test]
    fn synthetic_dataset_is_deterministic_and_batchable() {
        let a = load_dataset(DatasetId::Synthetic, None).unwrap();
        let b = load_dataset(DatasetId::Synthetic, None).unwrap();
        assert_eq!(a.train.images, b.train.images);
        assert_eq!(a.train.labels, b.train.labels);
        let (batch, labels) = a.train.batch(&[0, 1, 600]);
        assert_eq!(batch.dim(), (3, 1, 28, 28));
        assert_eq!(labels.len(), 3);
    }

    #[test]
    fn task_slices_pick_only_task_classes() {
        let pair = load_dataset(DatasetId::Synthetic, None).unwrap();
        let stream = build_stream(DatasetId::Synthetic, 0, false);
        let slice = stream.task_slice(&pair.train, 1);
        assert_eq!(slice.classes, vec![2, 3]);
        let (_, labels) = slice.batch(&[0, 5, 10]);
        assert!(labels.iter().all(|&l| l == 2 || l == 3));
    }

    #[test]
    fn pretrain_rejects_degenerate_class_counts() {
        let pair = load_dataset(DatasetId::Synthetic, None).unwrap();
        let spec = ClassifierSpec::preset("FMNIST3").unwrap();
        let cfg = PretrainConfig {
            source: DatasetId::Synthetic,
            num_classes_used: 1,
            epochs: 1,
            ..Default::default()
        };
        assert!(matches!(
            pretrain_extractor(&cfg, &spec, &pair),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn pretrain_is_deterministic() {
        let pair = load_dataset(DatasetId::Synthetic, None).unwrap();
        let spec = ClassifierSpec::preset("FMNIST3").unwrap();
        let cfg = PretrainConfig {
            source: DatasetId::Synthetic,
            num_classes_used: 4,
            augmentation: true,
            epochs: 1,
            batch_size: 64,
            learning_rate: 1e-3,
            seed: 9,
        };
        let a = pretrain_extractor(&cfg, &spec, &pair).unwrap();
        let b = pretrain_extractor(&cfg, &spec, &pair).unwrap();
        for (x, y) in a.iter().zip(b.iter()) {
            assert_eq!(x, y);
        }
    }
}
