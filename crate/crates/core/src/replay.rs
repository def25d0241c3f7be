//! Replay strategies and training loops.
//!
//! A strategy assigns each hidden level a fraction of every replay batch;
//! internal replay is the special case [1, 0, ..., 0] that routes the whole
//! batch through the shallowest level. Replay sources are either a
//! fixed-capacity buffer of per-level feature taps with hard labels, or a
//! feature-space generator whose samples are labeled by soft targets from
//! a teacher classifier captured at the previous task boundary.
//!
//! Replay gradients are applied in their own optimizer sub-step, separate
//! from the current-task sub-step, so parameters above the shallowest
//! injected level remain bit-identical through a replay step.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::arch::{Classifier, FeatureTaps};
use crate::error::{Error, Result};
use crate::generator::{Generator, GeneratorLosses, ImageVae};
use crate::nn::functional::{cross_entropy, distill_cross_entropy, soft_targets};
use crate::nn::Adam;
use crate::scenario::TaskSlice;

const SIMPLEX_TOLERANCE: f64 = 1e-9;

/// Per-level replay frequencies [f_0, ..., f_{H-1}]; non-negative and
/// summing to 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ReplayStrategy {
    freqs: Vec<f64>,
}

impl TryFrom<Vec<f64>> for ReplayStrategy {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        ReplayStrategy::new(v)
    }
}

impl From<ReplayStrategy> for Vec<f64> {
    fn from(s: ReplayStrategy) -> Vec<f64> {
        s.freqs
    }
}

impl ReplayStrategy {
    pub fn new(freqs: Vec<f64>) -> Result<Self> {
        if freqs.is_empty() {
            return Err(Error::config("strategy must have at least one level"));
        }
        if freqs.iter().any(|f| !f.is_finite() || *f < 0.0) {
            return Err(Error::config(format!(
                "strategy frequencies must be non-negative, got {freqs:?}"
            )));
        }
        let sum: f64 = freqs.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOLERANCE {
            return Err(Error::config(format!(
                "strategy frequencies must sum to 1, got {sum}"
            )));
        }
        Ok(ReplayStrategy { freqs })
    }

    /// Internal replay: everything at level 0.
    pub fn internal_replay(levels: usize) -> Self {
        let mut freqs = vec![0.0; levels];
        freqs[0] = 1.0;
        ReplayStrategy { freqs }
    }

    pub fn frequencies(&self) -> &[f64] {
        &self.freqs
    }

    pub fn len(&self) -> usize {
        self.freqs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.freqs.is_empty()
    }

    pub fn is_internal_replay(&self) -> bool {
        self.freqs[0] == 1.0
    }

    /// Shallowest level with nonzero frequency.
    pub fn min_level(&self) -> usize {
        self.freqs
            .iter()
            .position(|&f| f > 0.0)
            .expect("simplex constraint guarantees a nonzero entry")
    }

    pub fn label(&self) -> String {
        if self.is_internal_replay() {
            "IR".to_string()
        } else {
            let parts: Vec<String> = self.freqs.iter().map(|f| format!("{f}")).collect();
            format!("[{}]", parts.join(", "))
        }
    }
}

/// Deterministic largest-remainder apportionment of `batch_size` over the
/// strategy's levels. Counts sum to the batch size and differ from the
/// exact products by less than one.
pub fn split_batch(batch_size: usize, strategy: &ReplayStrategy) -> Vec<usize> {
    let mut counts: Vec<usize> = Vec::with_capacity(strategy.len());
    let mut remainders: Vec<(usize, f64)> = Vec::with_capacity(strategy.len());
    let mut assigned = 0usize;
    for (i, f) in strategy.frequencies().iter().enumerate() {
        let exact = batch_size as f64 * f;
        let floor = exact.floor() as usize;
        counts.push(floor);
        assigned += floor;
        remainders.push((i, exact - floor as f64));
    }
    let mut leftover = batch_size - assigned;
    remainders.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    for (i, _) in remainders {
        if leftover == 0 {
            break;
        }
        counts[i] += 1;
        leftover -= 1;
    }
    counts
}

/// One stored rehearsal sample: post-activation taps at every hidden level
/// plus the hard label and originating task.
#[derive(Debug, Clone)]
pub struct BufferEntry {
    pub taps: Vec<Array1<f32>>,
    pub label: usize,
    pub task: usize,
}

/// Fixed-capacity feature buffer with class-balanced random retention:
/// every seen class gets an equal quota (remainder spread over the
/// lowest class ids) and retention within a class is a uniform reservoir.
#[derive(Debug, Clone)]
pub struct FeatureBuffer {
    capacity: usize,
    entries: Vec<BufferEntry>,
    seen_counts: BTreeMap<usize, u64>,
}

impl FeatureBuffer {
    pub fn new(capacity: usize) -> Self {
        FeatureBuffer {
            capacity,
            entries: Vec::new(),
            seen_counts: BTreeMap::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn class_counts(&self) -> BTreeMap<usize, usize> {
        let mut counts = BTreeMap::new();
        for e in &self.entries {
            *counts.entry(e.label).or_insert(0) += 1;
        }
        counts
    }

    fn quota(&self, class: usize) -> usize {
        let k = self.seen_counts.len().max(1);
        let base = self.capacity / k;
        let extra = self.capacity % k;
        let rank = self.seen_counts.keys().position(|&c| c == class).unwrap_or(0);
        base + usize::from(rank < extra)
    }

    pub fn insert(&mut self, entry: BufferEntry, rng: &mut ChaCha8Rng) {
        let label = entry.label;
        let seen = self.seen_counts.entry(label).or_insert(0);
        *seen += 1;
        let seen = *seen;
        let quota = self.quota(label);
        let have = self.entries.iter().filter(|e| e.label == label).count();
        if have < quota {
            if self.entries.len() >= self.capacity {
                self.evict_most_over_quota(label, rng);
            }
            if self.entries.len() < self.capacity {
                self.entries.push(entry);
            }
            return;
        }
        // class at quota: uniform reservoir within the class
        let j = rng.random_range(0..seen);
        if (j as usize) < quota {
            let members: Vec<usize> = self
                .entries
                .iter()
                .enumerate()
                .filter(|(_, e)| e.label == label)
                .map(|(i, _)| i)
                .collect();
            let victim = members[rng.random_range(0..members.len())];
            self.entries[victim] = entry;
        }
    }

    fn evict_most_over_quota(&mut self, incoming: usize, rng: &mut ChaCha8Rng) {
        let counts = self.class_counts();
        let mut best: Option<(i64, usize)> = None;
        for (&class, &count) in &counts {
            if class == incoming {
                continue;
            }
            let over = count as i64 - self.quota(class) as i64;
            let candidate = (over, class);
            best = match best {
                None => Some(candidate),
                Some((bo, bc)) => {
                    if over > bo || (over == bo && counts[&class] > counts[&bc]) {
                        Some(candidate)
                    } else {
                        Some((bo, bc))
                    }
                }
            };
        }
        // when no class is over quota yet, this still evicts from the
        // largest other class so the newcomer can reach its own quota
        let Some((_, victim_class)) = best else { return };
        let members: Vec<usize> = self
            .entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.label == victim_class)
            .map(|(i, _)| i)
            .collect();
        if members.is_empty() {
            return;
        }
        let victim = members[rng.random_range(0..members.len())];
        self.entries.swap_remove(victim);
    }

    /// Insert every row of a tapped batch.
    pub fn insert_batch(&mut self, taps: &FeatureTaps, labels: &[usize], task: usize, rng: &mut ChaCha8Rng) {
        for (i, &label) in labels.iter().enumerate() {
            let entry = BufferEntry {
                taps: taps.levels.iter().map(|l| l.row(i).to_owned()).collect(),
                label,
                task,
            };
            self.insert(entry, rng);
        }
    }

    /// Uniform sample (with replacement) of entry indices.
    pub fn sample_indices(&self, count: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        (0..count).map(|_| rng.random_range(0..self.entries.len())).collect()
    }

    pub fn entry(&self, i: usize) -> &BufferEntry {
        &self.entries[i]
    }

    /// Gather level-`level` taps and labels for the given entries.
    pub fn gather(&self, idxs: &[usize], level: usize) -> (Array2<f32>, Vec<usize>) {
        let width = self.entries[idxs[0]].taps[level].len();
        let mut feats = Array2::<f32>::zeros((idxs.len(), width));
        let mut labels = Vec::with_capacity(idxs.len());
        for (row, &i) in idxs.iter().enumerate() {
            feats.row_mut(row).assign(&self.entries[i].taps[level]);
            labels.push(self.entries[i].label);
        }
        (feats, labels)
    }

    /// Buffer of random taps matching a classifier's level widths; used by
    /// cost instrumentation, which needs realistic gradient flow but not
    /// meaningful content.
    pub fn synthetic(classifier: &Classifier, count: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut buf = FeatureBuffer::new(count);
        for _ in 0..count {
            let taps: Vec<Array1<f32>> = (0..classifier.num_levels())
                .map(|l| {
                    Array1::from_shape_fn(classifier.level_width(l), |_| {
                        rng.random_range(0.0f32..1.0)
                    })
                })
                .collect();
            let label = rng.random_range(0..classifier.spec.num_classes);
            buf.insert(BufferEntry { taps, label, task: 1 }, rng);
        }
        buf
    }
}

/// Outcome of one replay step.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplayOutcome {
    pub executed: bool,
    /// (level, samples, mean loss) for each level that received samples.
    pub per_level: Vec<(usize, usize, f64)>,
}

impl ReplayOutcome {
    fn skipped() -> Self {
        ReplayOutcome {
            executed: false,
            per_level: Vec::new(),
        }
    }
}

/// One buffer-replay optimizer step: apportion the batch over levels,
/// inject stored taps with their hard labels, and update the tail layers.
/// An empty buffer is a logged no-op, not an error.
pub fn replay_step_buffer(
    classifier: &mut Classifier,
    buffer: &FeatureBuffer,
    strategy: &ReplayStrategy,
    replay_batch_size: usize,
    opt: &Adam,
    weight: f32,
    rng: &mut ChaCha8Rng,
) -> Result<ReplayOutcome> {
    check_strategy(classifier, strategy)?;
    if buffer.is_empty() {
        return Ok(ReplayOutcome::skipped());
    }
    let counts = split_batch(replay_batch_size, strategy);
    let mut per_level = Vec::new();
    for (level, &count) in counts.iter().enumerate() {
        if count == 0 {
            continue;
        }
        let idxs = buffer.sample_indices(count, rng);
        let (feats, labels) = buffer.gather(&idxs, level);
        let (logits, cache) = classifier.forward_tail_train(&feats, level)?;
        let (loss, mut dlogits) = cross_entropy(&logits, &labels);
        dlogits.mapv_inplace(|v| v * weight);
        classifier.backward_tail(&cache, &dlogits);
        per_level.push((level, count, loss));
    }
    classifier.adam_step(opt);
    Ok(ReplayOutcome {
        executed: true,
        per_level,
    })
}

/// One generative-replay optimizer step: sample features per level from
/// `sampler`, label them with temperature-softened outputs of `teacher`'s
/// tail, and distill into the live classifier's tail.
#[allow(clippy::too_many_arguments)]
pub fn replay_step_generative(
    classifier: &mut Classifier,
    sampler: &Generator,
    teacher: &Classifier,
    strategy: &ReplayStrategy,
    replay_batch_size: usize,
    temperature: f32,
    opt: &Adam,
    weight: f32,
    rng: &mut ChaCha8Rng,
) -> Result<ReplayOutcome> {
    check_strategy(classifier, strategy)?;
    let counts = split_batch(replay_batch_size, strategy);
    let mut per_level = Vec::new();
    for (level, &count) in counts.iter().enumerate() {
        if count == 0 {
            continue;
        }
        let feats = sampler.sample_features(level, count, None, rng)?;
        let teacher_logits = teacher.forward_from_level(&feats, level)?;
        let targets = soft_targets(&teacher_logits, temperature);
        let (logits, cache) = classifier.forward_tail_train(&feats, level)?;
        let (loss, mut dlogits) = distill_cross_entropy(&logits, &targets, temperature);
        dlogits.mapv_inplace(|v| v * weight);
        classifier.backward_tail(&cache, &dlogits);
        per_level.push((level, count, loss));
    }
    classifier.adam_step(opt);
    Ok(ReplayOutcome {
        executed: true,
        per_level,
    })
}

/// Image-space generative replay step: generated images distill through the
/// entire network (the traditional replay baseline).
pub fn replay_step_images(
    classifier: &mut Classifier,
    images: &ndarray::Array4<f32>,
    teacher: &Classifier,
    temperature: f32,
    opt: &Adam,
    weight: f32,
) -> Result<ReplayOutcome> {
    let teacher_logits = teacher.forward(images)?;
    let targets = soft_targets(&teacher_logits, temperature);
    let (logits, cache) = classifier.forward_train(images)?;
    let (loss, mut dlogits) = distill_cross_entropy(&logits, &targets, temperature);
    dlogits.mapv_inplace(|v| v * weight);
    classifier.backward_train(&cache, &dlogits);
    classifier.adam_step(opt);
    Ok(ReplayOutcome {
        executed: true,
        per_level: vec![(0, images.dim().0, loss)],
    })
}

fn check_strategy(classifier: &Classifier, strategy: &ReplayStrategy) -> Result<()> {
    if strategy.len() != classifier.num_levels() {
        return Err(Error::config(format!(
            "strategy has {} levels but the classifier has {}",
            strategy.len(),
            classifier.num_levels()
        )));
    }
    Ok(())
}

/// Loop constants for task training. Replay batches match the current
/// batch size by default, and the current/replay loss weights at task t
/// are 1/t and 1 - 1/t.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub replay_batch_size: usize,
    pub steps_per_task: usize,
    pub learning_rate: f32,
    pub distill_temperature: f32,
    /// Insert into the feature buffer on every step instead of only during
    /// the final epoch-equivalent window of a task.
    pub buffer_insert_all_steps: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 256,
            replay_batch_size: 256,
            steps_per_task: 200,
            learning_rate: 1e-4,
            distill_temperature: 2.0,
            buffer_insert_all_steps: false,
        }
    }
}

/// Rehearsal source wiring for one task. Teachers and snapshots are the
/// states captured at the previous task boundary.
pub enum RehearsalMode<'a> {
    /// First task or a no-replay baseline.
    None,
    Buffer {
        buffer: &'a mut FeatureBuffer,
        /// Replay only activates from the second task on.
        replay: bool,
    },
    Generative {
        live: &'a mut Generator,
        snapshot: Option<&'a Generator>,
        teacher: Option<&'a Classifier>,
    },
    ImageGr {
        live: &'a mut ImageVae,
        snapshot: Option<&'a ImageVae>,
        teacher: Option<&'a Classifier>,
    },
}

/// Per-task training log.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TaskLog {
    pub task_index: usize,
    pub steps: usize,
    pub mean_current_loss: f64,
    pub mean_replay_loss: Option<f64>,
    pub mean_vae_loss: Option<f64>,
    pub replay_skipped_steps: usize,
}

/// Train the classifier (and generator, when generative) on one task.
/// Every step runs a current-task sub-step weighted 1/t and, from the
/// second task on, a replay sub-step weighted 1 - 1/t; the buffer variant
/// also inserts current-task taps under the eviction policy.
pub fn train_task(
    classifier: &mut Classifier,
    mut mode: RehearsalMode<'_>,
    task: &TaskSlice<'_>,
    strategy: &ReplayStrategy,
    cfg: &TrainConfig,
    task_index: usize,
    rng: &mut ChaCha8Rng,
) -> Result<TaskLog> {
    if task.is_empty() {
        return Err(Error::config(format!("task {task_index} has zero samples")));
    }
    if task_index == 0 {
        return Err(Error::config("task_index is 1-based"));
    }
    check_strategy(classifier, strategy)?;
    let opt = Adam::with_lr(cfg.learning_rate);
    let w_cur = 1.0 / task_index as f32;
    let w_rep = 1.0 - w_cur;

    let mut order: Vec<usize> = (0..task.len()).collect();
    order.shuffle(rng);
    let mut cursor = 0usize;
    let steps_per_epoch = task.len().div_ceil(cfg.batch_size).max(1);
    let final_window_start = cfg.steps_per_task.saturating_sub(steps_per_epoch);

    let mut log = TaskLog {
        task_index,
        steps: cfg.steps_per_task,
        ..TaskLog::default()
    };
    let mut current_sum = 0.0f64;
    let mut replay_sum = 0.0f64;
    let mut replay_steps = 0usize;
    let mut vae_sum = 0.0f64;
    let mut vae_steps = 0usize;

    for step in 0..cfg.steps_per_task {
        // draw the current batch, reshuffling at epoch boundaries
        let mut rows = Vec::with_capacity(cfg.batch_size.min(task.len()));
        for _ in 0..cfg.batch_size.min(task.len()) {
            if cursor >= order.len() {
                order.shuffle(rng);
                cursor = 0;
            }
            rows.push(order[cursor]);
            cursor += 1;
        }
        let (images, labels) = task.batch(&rows);

        // current-task sub-step
        let (logits, cache) = classifier.forward_train(&images)?;
        let (cur_loss, mut dlogits) = cross_entropy(&logits, &labels);
        dlogits.mapv_inplace(|v| v * w_cur);
        classifier.backward_train(&cache, &dlogits);
        classifier.adam_step(&opt);
        current_sum += cur_loss;

        // replay sub-step and source-specific upkeep
        match &mut mode {
            RehearsalMode::None => {}
            RehearsalMode::Buffer { buffer, replay } => {
                if *replay && task_index > 1 {
                    let outcome = replay_step_buffer(
                        classifier,
                        buffer,
                        strategy,
                        cfg.replay_batch_size,
                        &opt,
                        w_rep,
                        rng,
                    )?;
                    if outcome.executed {
                        replay_sum += outcome
                            .per_level
                            .iter()
                            .map(|(_, c, l)| *c as f64 * l)
                            .sum::<f64>()
                            / cfg.replay_batch_size as f64;
                        replay_steps += 1;
                    } else {
                        log.replay_skipped_steps += 1;
                    }
                }
                if cfg.buffer_insert_all_steps || step >= final_window_start {
                    buffer.insert_batch(&cache.taps, &labels, task_index, rng);
                }
            }
            RehearsalMode::Generative { live, snapshot, teacher } => {
                if let (Some(snap), Some(tea)) = (snapshot.as_ref(), teacher.as_ref()) {
                    let outcome = replay_step_generative(
                        classifier,
                        snap,
                        tea,
                        strategy,
                        cfg.replay_batch_size,
                        cfg.distill_temperature,
                        &opt,
                        w_rep,
                        rng,
                    )?;
                    replay_sum += outcome
                        .per_level
                        .iter()
                        .map(|(_, c, l)| *c as f64 * l)
                        .sum::<f64>()
                        / cfg.replay_batch_size as f64;
                    replay_steps += 1;
                }
                // generator sub-step on current features
                let labels_opt = live.spec.conditional.then_some(labels.as_slice());
                let l = live.train_step(&cache.taps.extractor, &cache.taps, labels_opt, w_cur, &opt, rng)?;
                vae_sum += l.vae;
                vae_steps += 1;
                live.note_seen_classes(&labels);
                // generator rehearsal: reconstruct features sampled from the
                // snapshot, with taps recomputed by the teacher's FC stack
                if let (Some(snap), Some(tea)) = (snapshot.as_ref(), teacher.as_ref()) {
                    let feats = snap.sample_extractor_features(cfg.replay_batch_size, rng)?;
                    let (t_logits, t_taps) = tea.fc_forward_with_taps(&feats)?;
                    let replay_labels: Option<Vec<usize>> = live
                        .spec
                        .conditional
                        .then(|| crate::nn::functional::argmax_rows(&t_logits));
                    let l = live.train_step(
                        &feats,
                        &t_taps,
                        replay_labels.as_deref(),
                        w_rep,
                        &opt,
                        rng,
                    )?;
                    vae_sum += l.vae;
                }
            }
            RehearsalMode::ImageGr { live, snapshot, teacher } => {
                let flat = flatten_images(&images);
                if let (Some(snap), Some(tea)) = (snapshot.as_ref(), teacher.as_ref()) {
                    let gen_flat = snap.sample_images(cfg.replay_batch_size, rng);
                    let gen_images = unflatten_images(&gen_flat, images.dim().1, images.dim().2, images.dim().3);
                    let outcome = replay_step_images(
                        classifier,
                        &gen_images,
                        tea,
                        cfg.distill_temperature,
                        &opt,
                        w_rep,
                    )?;
                    replay_sum += outcome.per_level[0].2;
                    replay_steps += 1;
                    let l = live.train_step(&gen_flat, w_rep, &opt, rng)?;
                    vae_sum += l.vae;
                }
                let l = live.train_step(&flat, w_cur, &opt, rng)?;
                vae_sum += l.vae;
                vae_steps += 1;
            }
        }
    }

    log.mean_current_loss = current_sum / cfg.steps_per_task as f64;
    log.mean_replay_loss = (replay_steps > 0).then(|| replay_sum / replay_steps as f64);
    log.mean_vae_loss = (vae_steps > 0).then(|| vae_sum / vae_steps as f64);
    Ok(log)
}

pub fn flatten_images(images: &ndarray::Array4<f32>) -> Array2<f32> {
    let (b, c, h, w) = images.dim();
    images
        .view()
        .into_shape_with_order((b, c * h * w))
        .unwrap()
        .to_owned()
}

pub fn unflatten_images(flat: &Array2<f32>, c: usize, h: usize, w: usize) -> ndarray::Array4<f32> {
    let b = flat.nrows();
    flat.clone().into_shape_with_order((b, c, h, w)).unwrap()
}

/// Loss term helper exposed for diagnostics: the same GeneratorLosses shape
/// aggregated over a task.
pub type VaeLosses = GeneratorLosses;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::{build_classifier, Activation, ClassifierSpec, ExtractorSpec};
    use crate::generator::build_generator;
    use crate::nn::init::rng_for;

    fn toy_spec(hidden: Vec<usize>, d: usize, classes: usize) -> ClassifierSpec {
        ClassifierSpec {
            extractor: ExtractorSpec::Identity { width: d },
            hidden_widths: hidden,
            num_classes: classes,
            activation: Activation::Relu,
        }
    }

    #[test]
    fn strategy_validation() {
        assert!(ReplayStrategy::new(vec![0.5, 0.5]).is_ok());
        assert!(matches!(ReplayStrategy::new(vec![]), Err(Error::Config(_))));
        assert!(matches!(ReplayStrategy::new(vec![0.5, 0.6]), Err(Error::Config(_))));
        assert!(matches!(ReplayStrategy::new(vec![-0.1, 1.1]), Err(Error::Config(_))));
        assert!(ReplayStrategy::new(vec![1.0, 0.0, 0.0]).is_ok());
    }

    #[test]
    fn split_batch_hand_cases() {
        let s = ReplayStrategy::new(vec![0.7, 0.3]).unwrap();
        assert_eq!(split_batch(256, &s), vec![179, 77]);
        let ir = ReplayStrategy::internal_replay(2);
        assert_eq!(split_batch(256, &ir), vec![256, 0]);
        assert_eq!(split_batch(0, &s), vec![0, 0]);
    }

    #[test]
    fn ir_alias_and_min_level() {
        let ir = ReplayStrategy::internal_replay(3);
        assert_eq!(ir.frequencies(), &[1.0, 0.0, 0.0]);
        assert!(ir.is_internal_replay());
        assert_eq!(ir.min_level(), 0);
        assert_eq!(ir.label(), "IR");
        let s = ReplayStrategy::new(vec![0.0, 0.4, 0.6]).unwrap();
        assert_eq!(s.min_level(), 1);
    }

    #[test]
    fn buffer_respects_capacity_and_balance() {
        let mut buf = FeatureBuffer::new(10);
        let mut rng = rng_for(0, "buf");
        for i in 0..200 {
            let label = i % 4;
            buf.insert(
                BufferEntry {
                    taps: vec![Array1::zeros(3)],
                    label,
                    task: 1,
                },
                &mut rng,
            );
            assert!(buf.len() <= 10);
        }
        let counts = buf.class_counts();
        // capacity 10 over 4 classes: quotas 3,3,2,2
        for (_, &c) in &counts {
            assert!((2..=3).contains(&c), "unbalanced counts {counts:?}");
        }
        assert_eq!(counts.values().sum::<usize>(), 10);
    }

    #[test]
    fn buffer_sampling_is_deterministic() {
        let spec = toy_spec(vec![4, 4], 3, 4);
        let c = build_classifier(&spec, 0).unwrap();
        let buf = FeatureBuffer::synthetic(&c, 16, &mut rng_for(1, "b"));
        let a = buf.sample_indices(8, &mut rng_for(2, "s"));
        let b = buf.sample_indices(8, &mut rng_for(2, "s"));
        assert_eq!(a, b);
    }

    #[test]
    fn empty_buffer_replay_is_a_noop() {
        let spec = toy_spec(vec![4, 4], 3, 4);
        let mut c = build_classifier(&spec, 0).unwrap();
        let buf = FeatureBuffer::new(8);
        let s = ReplayStrategy::internal_replay(2);
        let before = c.snapshot_values();
        let out = replay_step_buffer(&mut c, &buf, &s, 32, &Adam::default(), 1.0, &mut rng_for(0, "r")).unwrap();
        assert!(!out.executed);
        for (a, b) in before.iter().zip(c.snapshot_values().iter()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn singleton_buffer_replays_its_level0_tap() {
        let spec = toy_spec(vec![4, 4], 3, 4);
        let mut c = build_classifier(&spec, 0).unwrap();
        let mut buf = FeatureBuffer::new(4);
        let mut rng = rng_for(3, "one");
        buf.insert(
            BufferEntry {
                taps: vec![
                    Array1::from_vec(vec![0.1, 0.2, 0.3, 0.4]),
                    Array1::from_vec(vec![0.5, 0.5, 0.5, 0.5]),
                ],
                label: 2,
                task: 1,
            },
            &mut rng,
        );
        let s = ReplayStrategy::new(vec![1.0, 0.0]).unwrap();
        let out = replay_step_buffer(&mut c, &buf, &s, 5, &Adam::default(), 1.0, &mut rng).unwrap();
        assert!(out.executed);
        assert_eq!(out.per_level.len(), 1);
        assert_eq!(out.per_level[0].0, 0);
        assert_eq!(out.per_level[0].1, 5);
    }

    #[test]
    fn replay_masks_parameters_above_min_level() {
        let spec = toy_spec(vec![6, 6, 6], 5, 4);
        let mut c = build_classifier(&spec, 1).unwrap();
        let buf = FeatureBuffer::synthetic(&c, 12, &mut rng_for(4, "b"));
        // strategy injecting at levels 1 and 2 only
        let s = ReplayStrategy::new(vec![0.0, 0.5, 0.5]).unwrap();
        let before = c.snapshot_values();
        replay_step_buffer(&mut c, &buf, &s, 16, &Adam::with_lr(1e-2), 1.0, &mut rng_for(5, "r")).unwrap();
        let after = c.snapshot_values();
        // params layout for identity extractor: [h0.w, h0.b, h1.w, h1.b, h2.w, h2.b, out.w, out.b]
        assert_eq!(before[0], after[0], "hidden0 weight must be untouched");
        assert_eq!(before[1], after[1], "hidden0 bias must be untouched");
        assert_ne!(before[4], after[4], "hidden2 weight must change");
        assert_ne!(before[6], after[6], "output weight must change");
    }

    #[test]
    fn deepest_injection_touches_only_the_output_layer() {
        let spec = toy_spec(vec![5, 5], 4, 3);
        let mut c = build_classifier(&spec, 2).unwrap();
        let g = build_generator(&spec, 3, 0).unwrap();
        // a teacher with different weights gives a nonzero distill gradient
        let teacher = build_classifier(&spec, 77).unwrap();
        let s = ReplayStrategy::new(vec![0.0, 1.0]).unwrap();
        let before = c.snapshot_values();
        c.reset_touches();
        replay_step_generative(
            &mut c,
            &g,
            &teacher,
            &s,
            16,
            2.0,
            &Adam::with_lr(1e-2),
            1.0,
            &mut rng_for(6, "r"),
        )
        .unwrap();
        let after = c.snapshot_values();
        for i in 0..4 {
            assert_eq!(before[i], after[i], "hidden param {i} must be untouched");
        }
        assert_ne!(before[4], after[4], "output weight must change");
        // params layout: [h0.w, h0.b, h1.w, h1.b, out.w, out.b]
        let touched: Vec<bool> = c.params().iter().map(|p| p.touches().0 > 0).collect();
        assert_eq!(touched, vec![false, false, false, false, true, true]);
    }

    #[test]
    fn touch_counter_matches_cost_model_up_to_batch_factor() {
        // [0.3, 0.7] on a toy two-level net: expected touches per sample
        // = 0.3*(P0+P1) + 0.7*P1
        let spec = toy_spec(vec![10, 20], 8, 5);
        let mut c = build_classifier(&spec, 3).unwrap();
        let buf = FeatureBuffer::synthetic(&c, 32, &mut rng_for(7, "b"));
        let s = ReplayStrategy::new(vec![0.3, 0.7]).unwrap();
        let batch = 1000usize;
        c.reset_touches();
        replay_step_buffer(&mut c, &buf, &s, batch, &Adam::default(), 1.0, &mut rng_for(8, "r")).unwrap();
        let touches = c.collect_touches(true) as f64 / batch as f64;
        let p0 = (10 * 20) as f64;
        let p1 = (20 * 5) as f64;
        let expected = 0.3 * (p0 + p1) + 0.7 * p1;
        assert!(
            (touches - expected).abs() / expected < 0.01,
            "measured {touches} vs analytic {expected}"
        );
    }

    #[test]
    fn first_task_trains_without_replay() {
        let pair = crate::scenario::load_dataset(crate::scenario::DatasetId::Synthetic, None).unwrap();
        let stream = crate::scenario::build_stream(crate::scenario::DatasetId::Synthetic, 0, false);
        let spec = ClassifierSpec::preset("FMNIST3").unwrap();
        let mut c = build_classifier(&spec, 0).unwrap();
        let task = stream.task_slice(&pair.train, 0);
        let cfg = TrainConfig {
            batch_size: 32,
            replay_batch_size: 32,
            steps_per_task: 3,
            ..TrainConfig::default()
        };
        let s = ReplayStrategy::internal_replay(3);
        let log = train_task(&mut c, RehearsalMode::None, &task, &s, &cfg, 1, &mut rng_for(9, "t")).unwrap();
        assert_eq!(log.task_index, 1);
        assert!(log.mean_replay_loss.is_none());
    }

    #[test]
    fn zero_sample_task_is_config_error() {
        let pair = crate::scenario::load_dataset(crate::scenario::DatasetId::Synthetic, None).unwrap();
        let spec = ClassifierSpec::preset("FMNIST3").unwrap();
        let mut c = build_classifier(&spec, 0).unwrap();
        let task = TaskSlice {
            dataset: &pair.train,
            indices: vec![],
            classes: vec![0],
        };
        let s = ReplayStrategy::internal_replay(3);
        let r = train_task(
            &mut c,
            RehearsalMode::None,
            &task,
            &s,
            &TrainConfig::default(),
            1,
            &mut rng_for(0, "t"),
        );
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn buffer_mode_first_task_fills_buffer_but_never_replays() {
        let pair = crate::scenario::load_dataset(crate::scenario::DatasetId::Synthetic, None).unwrap();
        let stream = crate::scenario::build_stream(crate::scenario::DatasetId::Synthetic, 0, false);
        let spec = ClassifierSpec::preset("FMNIST3").unwrap();
        let mut c = build_classifier(&spec, 0).unwrap();
        let task = stream.task_slice(&pair.train, 0);
        let cfg = TrainConfig {
            batch_size: 32,
            replay_batch_size: 32,
            steps_per_task: 4,
            buffer_insert_all_steps: true,
            ..TrainConfig::default()
        };
        let mut buf = FeatureBuffer::new(16);
        let s = ReplayStrategy::internal_replay(3);
        let log = train_task(
            &mut c,
            RehearsalMode::Buffer { buffer: &mut buf, replay: true },
            &task,
            &s,
            &cfg,
            1,
            &mut rng_for(9, "t"),
        )
        .unwrap();
        assert!(log.mean_replay_loss.is_none(), "no replay on the first task");
        assert_eq!(buf.len(), 16, "buffer fills during the first task");
    }
}
