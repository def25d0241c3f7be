//! Experiment execution: cells x seeds, persistence, caching and the
//! no-recompute guarantee.
//!
//! A run directory is `<output_dir>/<name>-<hash>/` with the resolved
//! config snapshot, one JSON per (cell, seed), model checkpoints and an
//! aggregated CSV. Rerunning an identical config reloads the stored
//! results instead of recomputing; `force` overrides that.

use std::path::{Path, PathBuf};
use std::time::Instant;


use crate::arch::{build_classifier, Classifier, ClassifierSpec, FreezeScope};
use crate::cost::blocks_from_spec;
use crate::error::{Error, Result};
use crate::generator::{Generator, ImageVae};
use crate::metrics::{modified_fid, RunResult};
use crate::nn::init::{rng_for, subseed};
use crate::replay::{train_task, FeatureBuffer, RehearsalMode, ReplayStrategy};
use crate::scenario::{
    build_stream, evaluate_per_task, load_dataset, pretrain_extractor, run_fig4_setup,
    DatasetPair, FreezeSetup, PretrainConfig, TaskStream,
};

use super::checkpoint;
use super::config::{ExperimentConfig, ExperimentKind, ReplayMode};

pub struct RunArtifacts {
    pub run_dir: PathBuf,
    pub results: Vec<RunResult>,
    /// True when results were loaded from a previous identical run.
    pub reused: bool,
}

pub fn run_experiment(cfg: &ExperimentConfig, force: bool) -> Result<RunArtifacts> {
    cfg.validate()?;
    let run_dir = cfg.run_dir()?;
    let marker = run_dir.join("summary.csv");
    if marker.exists() && !force {
        let results = load_results(&run_dir)?;
        println!(
            "run {} already complete ({} results); pass --force to recompute",
            run_dir.display(),
            results.len()
        );
        return Ok(RunArtifacts {
            run_dir,
            results,
            reused: true,
        });
    }
    std::fs::create_dir_all(&run_dir)?;
    std::fs::write(
        run_dir.join("resolved_config.json"),
        serde_json::to_string_pretty(cfg)?,
    )?;

    let mut results = match cfg.experiment {
        ExperimentKind::Grid => run_grid(cfg, &run_dir)?,
        ExperimentKind::Fig3 => run_fig3(cfg, &run_dir)?,
        ExperimentKind::Fig4 => run_fig4(cfg, &run_dir)?,
    };
    sort_results(&mut results);
    write_csv(&run_dir, &results)?;
    Ok(RunArtifacts {
        run_dir,
        results,
        reused: false,
    })
}

/// Sanitize a cell label into a directory name.
fn cell_dir_name(label: &str) -> String {
    let mut out = String::with_capacity(label.len());
    for ch in label.chars() {
        if ch.is_ascii_alphanumeric() || ch == '.' || ch == '-' || ch == '_' {
            out.push(ch);
        } else if (ch == ',' || ch == ' ') && !out.ends_with('-') {
            out.push('-');
        }
    }
    out.trim_matches('-').to_string()
}

fn result_path(run_dir: &Path, cell: &str, seed: u64) -> PathBuf {
    run_dir
        .join("results")
        .join(cell_dir_name(cell))
        .join(format!("seed{seed}.json"))
}

fn write_result(run_dir: &Path, cell: &str, result: &RunResult) -> Result<()> {
    let path = result_path(run_dir, cell, result.seed);
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(&path, serde_json::to_string_pretty(result)?)?;
    Ok(())
}

/// Canonical result ordering shared by fresh runs and reloads.
fn sort_results(results: &mut [RunResult]) {
    results.sort_by(|a, b| {
        a.architecture
            .cmp(&b.architecture)
            .then(a.strategy_label.cmp(&b.strategy_label))
            .then(a.seed.cmp(&b.seed))
    });
}

fn load_results(run_dir: &Path) -> Result<Vec<RunResult>> {
    let mut results = Vec::new();
    let results_dir = run_dir.join("results");
    let mut cells: Vec<PathBuf> = std::fs::read_dir(&results_dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    cells.sort();
    for cell in cells {
        let mut files: Vec<PathBuf> = std::fs::read_dir(&cell)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "json"))
            .collect();
        files.sort();
        for f in files {
            let raw = std::fs::read_to_string(&f)?;
            results.push(serde_json::from_str(&raw)?);
        }
    }
    sort_results(&mut results);
    Ok(results)
}

fn write_csv(run_dir: &Path, results: &[RunResult]) -> Result<()> {
    let mut csv = String::from(
        "dataset,architecture,mode,cell,seed,relative_cost,average_accuracy,per_task_accuracy,mfid,wall_clock_seconds\n",
    );
    for r in results {
        let per_task = r
            .per_task_accuracy
            .iter()
            .map(|a| format!("{a:.6}"))
            .collect::<Vec<_>>()
            .join("|");
        let mfid = r.mfid.map(|m| format!("{m:.4}")).unwrap_or_default();
        csv.push_str(&format!(
            "{},{},{},{},{},{:.6},{:.6},{},{},{:.3}\n",
            r.dataset,
            r.architecture,
            r.mode,
            escape_csv(&r.strategy_label),
            r.seed,
            r.relative_cost,
            r.average_accuracy,
            per_task,
            mfid,
            r.wall_clock_seconds
        ));
    }
    std::fs::write(run_dir.join("summary.csv"), csv)?;
    Ok(())
}

fn escape_csv(s: &str) -> String {
    if s.contains(',') || s.contains('"') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

// ---------------------------------------------------------------------------
// grid experiments (the table recipes)

fn run_grid(cfg: &ExperimentConfig, run_dir: &Path) -> Result<Vec<RunResult>> {
    let spec = cfg.classifier_spec()?;
    let pair = load_dataset(cfg.dataset, cfg.data_dir.as_deref())?;
    let stream = build_stream(cfg.dataset, cfg.split_seed, cfg.permute_classes);
    let cost = blocks_from_spec(&spec, false);

    let pretrained = cfg
        .pretrain
        .as_ref()
        .map(|p| pretrained_extractor_cached(cfg, &spec, p))
        .transpose()?;

    let mut results = Vec::new();
    // a cell is either a feature-replay strategy or the image-space GR
    // baseline (mode "gr" globally, or the "GR" alias inside a grid)
    let cells: Vec<(String, Option<ReplayStrategy>)> = match cfg.mode {
        ReplayMode::Gr => vec![("GR".to_string(), None)],
        _ => cfg
            .strategy_grid()?
            .iter()
            .map(|s| match s {
                super::config::StrategySpec::Alias(a) if a == "GR" => Ok(("GR".to_string(), None)),
                other => {
                    let strat = other.resolve(spec.num_levels())?;
                    Ok((strat.label(), Some(strat)))
                }
            })
            .collect::<Result<Vec<_>>>()?,
    };

    for (label, strategy) in &cells {
        for &seed in &cfg.seeds {
            println!("[{}] cell {label} seed {seed}", cfg.name);
            let started = Instant::now();
            let (accs, mfid) = run_grid_cell(
                cfg,
                &spec,
                &stream,
                &pair,
                strategy.as_ref(),
                pretrained.as_deref(),
                seed,
                run_dir,
                label,
            )?;
            let strategy_vec = strategy
                .as_ref()
                .map(|s| s.frequencies().to_vec())
                .unwrap_or_default();
            let relative_cost = match strategy.as_ref() {
                Some(s) => cost.relative_cost(s)?,
                None => 1.0,
            };
            let result = RunResult {
                dataset: cfg.dataset.name().to_string(),
                architecture: cfg.architecture.clone(),
                mode: cfg.mode.name().to_string(),
                strategy_label: label.clone(),
                strategy: strategy_vec,
                relative_cost,
                average_accuracy: mean(&accs),
                per_task_accuracy: accs,
                mfid,
                seed,
                wall_clock_seconds: started.elapsed().as_secs_f64(),
                config_hash: cfg.content_hash()?,
            };
            write_result(run_dir, label, &result)?;
            results.push(result);
        }
    }
    Ok(results)
}

#[allow(clippy::too_many_arguments)]
fn run_grid_cell(
    cfg: &ExperimentConfig,
    spec: &ClassifierSpec,
    stream: &TaskStream,
    pair: &DatasetPair,
    strategy: Option<&ReplayStrategy>,
    pretrained: Option<&[ndarray::ArrayD<f32>]>,
    seed: u64,
    run_dir: &Path,
    label: &str,
) -> Result<(Vec<f64>, Option<f64>)> {
    let train_cfg = cfg.train_config();
    let mut classifier = build_classifier(spec, subseed(seed, "classifier"))?;
    if let Some(weights) = pretrained {
        classifier.import_extractor(weights)?;
        if cfg.freeze_pretrained_extractor {
            classifier.freeze(FreezeScope::Extractor);
        }
    }
    let mut rng = rng_for(seed, "train");

    // a None strategy marks an image-space GR cell
    let image_cell = strategy.is_none() || cfg.mode == ReplayMode::Gr;
    let mut buffer =
        (!image_cell && cfg.mode == ReplayMode::Buffer).then(|| FeatureBuffer::new(cfg.buffer_capacity));
    let mut generator = (!image_cell && cfg.mode == ReplayMode::Generative)
        .then(|| Generator::build(spec, cfg.latent_dim, cfg.conditional_generator, subseed(seed, "generator")))
        .transpose()?;
    let (c, h, w) = pair.train.image_shape();
    let mut image_vae = image_cell
        .then(|| ImageVae::build(c * h * w, &cfg.image_vae_hidden, cfg.latent_dim, subseed(seed, "image-vae")))
        .transpose()?;

    let fallback = ReplayStrategy::internal_replay(spec.num_levels());
    let strategy = strategy.unwrap_or(&fallback);

    let mut teacher: Option<Classifier> = None;
    let mut gen_snapshot: Option<Generator> = None;
    let mut vae_snapshot: Option<ImageVae> = None;

    for t in 0..stream.num_tasks() {
        let task = stream.task_slice(&pair.train, t);
        let mode = if let Some(vae) = image_vae.as_mut() {
            RehearsalMode::ImageGr {
                live: vae,
                snapshot: vae_snapshot.as_ref(),
                teacher: teacher.as_ref(),
            }
        } else if cfg.mode == ReplayMode::Buffer {
            RehearsalMode::Buffer {
                buffer: buffer.as_mut().unwrap(),
                replay: true,
            }
        } else {
            RehearsalMode::Generative {
                live: generator.as_mut().unwrap(),
                snapshot: gen_snapshot.as_ref(),
                teacher: teacher.as_ref(),
            }
        };
        let log = train_task(&mut classifier, mode, &task, strategy, &train_cfg, t + 1, &mut rng)?;
        println!(
            "  task {}/{}: current loss {:.4}{}",
            t + 1,
            stream.num_tasks(),
            log.mean_current_loss,
            log.mean_replay_loss
                .map(|l| format!(", replay loss {l:.4}"))
                .unwrap_or_default()
        );
        if t == 0 && cfg.freeze_extractor_after_task1 {
            classifier.freeze(FreezeScope::Extractor);
        }
        teacher = Some(classifier.clone());
        gen_snapshot = generator.clone();
        vae_snapshot = image_vae.clone();
    }

    let accs = evaluate_per_task(&classifier, stream, &pair.test, stream.num_tasks() - 1)?;

    // persist checkpoints alongside the results
    let ckpt_dir = run_dir.join("checkpoints").join(cell_dir_name(label));
    checkpoint::save_classifier(&ckpt_dir.join(format!("seed{seed}-classifier.ckpt")), &classifier)?;
    if let Some(g) = &generator {
        checkpoint::save_generator(&ckpt_dir.join(format!("seed{seed}-generator.ckpt")), g)?;
    }

    let mfid = if cfg.compute_mfid && generator.is_some() {
        let reference = reference_model_cached(cfg, spec, pair)?;
        let (test_images, _) = pair.test.batch(&(0..pair.test.len()).collect::<Vec<_>>());
        let g = generator.as_ref().unwrap();
        let mut mfid_rng = rng_for(seed, "mfid");
        Some(modified_fid(
            &reference,
            g,
            cfg.mfid_injection_level,
            &test_images,
            cfg.mfid_samples,
            &mut mfid_rng,
        )?)
    } else {
        None
    };
    Ok((accs, mfid))
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

// ---------------------------------------------------------------------------
// caches

fn cache_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.output_dir.join("_cache")
}

/// Pretrain the extractor once and reuse it across cells and seeds; the
/// pretraining run has its own seed, so sharing is sound.
fn pretrained_extractor_cached(
    cfg: &ExperimentConfig,
    spec: &ClassifierSpec,
    pretrain: &PretrainConfig,
) -> Result<Vec<ndarray::ArrayD<f32>>> {
    let key = {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update(serde_json::to_string(pretrain)?);
        h.update(serde_json::to_string(spec)?);
        let d = h.finalize();
        format!("{:02x}{:02x}{:02x}{:02x}{:02x}{:02x}", d[0], d[1], d[2], d[3], d[4], d[5])
    };
    let path = cache_dir(cfg).join(format!("pretrain-{key}.ckpt"));
    if path.exists() {
        let entries = checkpoint::load_named(&path)?;
        return Ok(entries.into_iter().map(|(_, t)| t).collect());
    }
    println!(
        "pretraining extractor on {} ({} classes, augmentation {})",
        pretrain.source.name(),
        pretrain.num_classes_used,
        pretrain.augmentation
    );
    let source_pair = load_dataset(pretrain.source, cfg.data_dir.as_deref())?;
    let weights = pretrain_extractor(pretrain, spec, &source_pair)?;
    let entries: Vec<(String, ndarray::ArrayD<f32>)> = weights
        .iter()
        .enumerate()
        .map(|(i, t)| (format!("t{i:03}"), t.clone()))
        .collect();
    checkpoint::save_named(&path, &entries)?;
    Ok(weights)
}

/// The mFID reference model: the same architecture trained jointly on all
/// classes of the dataset, cached on disk keyed by (dataset, architecture,
/// epochs, seed).
fn reference_model_cached(cfg: &ExperimentConfig, spec: &ClassifierSpec, pair: &DatasetPair) -> Result<Classifier> {
    const REFERENCE_SEED: u64 = 0;
    let path = cache_dir(cfg).join(format!(
        "ref-{}-{}-e{}-s{REFERENCE_SEED}.ckpt",
        cfg.dataset.name(),
        cfg.architecture,
        cfg.reference_epochs
    ));
    let mut classifier = build_classifier(spec, subseed(REFERENCE_SEED, "reference"))?;
    if path.exists() {
        checkpoint::load_classifier(&path, &mut classifier)?;
        return Ok(classifier);
    }
    println!(
        "training mFID reference model on joint {} ({} epochs)",
        cfg.dataset.name(),
        cfg.reference_epochs
    );
    let opt = crate::nn::Adam::with_lr(cfg.learning_rate);
    let mut rng = rng_for(REFERENCE_SEED, "reference-train");
    let mut order: Vec<usize> = (0..pair.train.len()).collect();
    use rand::seq::SliceRandom;
    for _ in 0..cfg.reference_epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let (images, labels) = pair.train.batch(chunk);
            let (logits, cache) = classifier.forward_train(&images)?;
            let (_, dlogits) = crate::nn::functional::cross_entropy(&logits, &labels);
            classifier.backward_train(&cache, &dlogits);
            classifier.adam_step(&opt);
        }
    }
    checkpoint::save_classifier(&path, &classifier)?;
    Ok(classifier)
}

// ---------------------------------------------------------------------------
// fig3: pretraining ablation sweep

fn run_fig3(cfg: &ExperimentConfig, run_dir: &Path) -> Result<Vec<RunResult>> {
    let spec = cfg.classifier_spec()?;
    let base_pretrain = cfg
        .pretrain
        .clone()
        .ok_or_else(|| Error::config("fig3 needs a [pretrain] section"))?;
    let pair = load_dataset(cfg.dataset, cfg.data_dir.as_deref())?;
    let stream = build_stream(cfg.dataset, cfg.split_seed, cfg.permute_classes);
    let mut results = Vec::new();
    for &classes in &cfg.pretrain_class_counts {
        for &aug in &cfg.pretrain_augmentation {
            let label = format!("pc{classes:02}-{}", if aug { "aug" } else { "noaug" });
            let pretrain = PretrainConfig {
                num_classes_used: classes,
                augmentation: aug,
                ..base_pretrain.clone()
            };
            let weights = pretrained_extractor_cached(cfg, &spec, &pretrain)?;
            let ir = ReplayStrategy::internal_replay(spec.num_levels());
            for &seed in &cfg.seeds {
                println!("[{}] cell {label} seed {seed}", cfg.name);
                let started = Instant::now();
                let mut sub = cfg.clone();
                sub.pretrain = Some(pretrain.clone());
                let (accs, _) = run_grid_cell(
                    &sub,
                    &spec,
                    &stream,
                    &pair,
                    Some(&ir),
                    Some(&weights),
                    seed,
                    run_dir,
                    &label,
                )?;
                let result = RunResult {
                    dataset: cfg.dataset.name().to_string(),
                    architecture: cfg.architecture.clone(),
                    mode: "fig3".to_string(),
                    strategy_label: label.clone(),
                    strategy: vec![],
                    relative_cost: 1.0,
                    average_accuracy: mean(&accs),
                    per_task_accuracy: accs,
                    mfid: None,
                    seed,
                    wall_clock_seconds: started.elapsed().as_secs_f64(),
                    config_hash: cfg.content_hash()?,
                };
                write_result(run_dir, &label, &result)?;
                results.push(result);
            }
        }
    }
    Ok(results)
}

// ---------------------------------------------------------------------------
// fig4: the four freezing setups

fn run_fig4(cfg: &ExperimentConfig, run_dir: &Path) -> Result<Vec<RunResult>> {
    let spec = cfg.classifier_spec()?;
    let pair = load_dataset(cfg.dataset, cfg.data_dir.as_deref())?;
    let stream = build_stream(cfg.dataset, cfg.split_seed, cfg.permute_classes);
    let train_cfg = cfg.train_config();
    let mut results = Vec::new();
    for setup_name in &cfg.setups {
        let setup = FreezeSetup::parse(setup_name)?;
        for &seed in &cfg.seeds {
            println!("[{}] setup {} seed {seed}", cfg.name, setup.name());
            let started = Instant::now();
            let accs = run_fig4_setup(
                setup,
                &stream,
                &pair,
                &train_cfg,
                &spec,
                cfg.latent_dim,
                &cfg.image_vae_hidden,
                seed,
            )?;
            let result = RunResult {
                dataset: cfg.dataset.name().to_string(),
                architecture: cfg.architecture.clone(),
                mode: "fig4".to_string(),
                strategy_label: setup.name().to_string(),
                strategy: vec![],
                relative_cost: 1.0,
                average_accuracy: mean(&accs),
                per_task_accuracy: accs,
                mfid: None,
                seed,
                wall_clock_seconds: started.elapsed().as_secs_f64(),
                config_hash: cfg.content_hash()?,
            };
            write_result(run_dir, setup.name(), &result)?;
            results.push(result);
        }
    }
    Ok(results)
}

/// Convenience for tests and the CLI: load previously written results.
pub fn load_run_results(run_dir: &Path) -> Result<Vec<RunResult>> {
    load_results(run_dir)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn smoke_config(dir: &Path) -> ExperimentConfig {
        ExperimentConfig::from_toml_str(&format!(
            r#"
name = "smoke"
dataset = "synthetic"
architecture = "FMNIST3"
mode = "buffer"
strategies = ["IR", [0.2, 0.3, 0.5]]
seeds = [1]
batch_size = 32
steps_per_task = 3
buffer_capacity = 64
buffer_insert_all_steps = true
output_dir = "{}"
"#,
            dir.display()
        ))
        .unwrap()
    }

    #[test]
    fn grid_run_writes_results_and_reuses_them() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = smoke_config(tmp.path());
        let first = run_experiment(&cfg, false).unwrap();
        assert!(!first.reused);
        assert_eq!(first.results.len(), 2);
        assert!(first.run_dir.join("summary.csv").exists());
        assert!(first.run_dir.join("resolved_config.json").exists());
        let second = run_experiment(&cfg, false).unwrap();
        assert!(second.reused);
        assert_eq!(second.results.len(), 2);
        for (a, b) in first.results.iter().zip(second.results.iter()) {
            assert_eq!(a.deterministic_json().unwrap(), b.deterministic_json().unwrap());
        }
    }

    #[test]
    fn cell_dir_names_are_filesystem_safe() {
        assert_eq!(cell_dir_name("IR"), "IR");
        assert_eq!(cell_dir_name("[0.7, 0.3]"), "0.7-0.3");
        assert_eq!(cell_dir_name("GR_freeze_enc_dec"), "GR_freeze_enc_dec");
    }
}
