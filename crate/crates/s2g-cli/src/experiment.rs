//! Experiment orchestration: cached dataset generation, training,
//! evaluation, and rendering.
//!
//! Dataset files are cached under `<out>/data/` keyed by a content hash of
//! the generation parameters, so re-running a config skips the slow
//! oracle-labeled generation. Every artifact byte except the wall-time
//! field of the summary is a pure function of (config, seed).

use std::path::PathBuf;
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use s2g_core::dataset::{
    candidate_recall_of_split, generate_split, read_split, write_split, SplitData,
};
use s2g_core::model::Model;
use s2g_core::train::{evaluate, history_to_csv, predict_edges, train_and_evaluate, EvalSummary};

use crate::config::Experiment;
use crate::svg::render_triangulation_svg;
use crate::CliError;

/// Bumped when generation semantics change, invalidating caches.
pub const GENERATOR_VERSION: u32 = 1;

const SPLITS: [(&str, u64); 3] = [("train", 0), ("val", 1), ("test", 2)];

impl From<s2g_core::dataset::DatasetError> for CliError {
    fn from(e: s2g_core::dataset::DatasetError) -> Self {
        CliError::Runtime(format!("dataset: {e}"))
    }
}

impl From<s2g_core::model::ModelError> for CliError {
    fn from(e: s2g_core::model::ModelError) -> Self {
        CliError::Runtime(format!("model: {e}"))
    }
}

impl From<s2g_core::train::TrainError> for CliError {
    fn from(e: s2g_core::train::TrainError) -> Self {
        CliError::Runtime(format!("train: {e}"))
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(format!("io: {e}"))
    }
}

fn split_count(exp: &Experiment, split: &str) -> usize {
    match split {
        "train" => exp.train_count,
        "val" => exp.val_count,
        _ => exp.test_count,
    }
}

/// Content hash of everything that determines a split's bytes.
fn cache_key(exp: &Experiment, split: &str, label: u64) -> String {
    let payload = serde_json::json!({
        "gen": exp.gen,
        "count": split_count(exp, split),
        "seed": exp.seed,
        "split": label,
        "version": GENERATOR_VERSION,
    });
    let digest = Sha256::digest(payload.to_string().as_bytes());
    let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
    hex[..12].to_string()
}

pub fn dataset_path(exp: &Experiment, split: &str, label: u64) -> PathBuf {
    exp.out_dir.join("data").join(format!(
        "{}-{split}-{}.jsonl",
        exp.task.name(),
        cache_key(exp, split, label)
    ))
}

/// Loads a cached split or generates and writes it.
fn ensure_split(exp: &Experiment, split: &str, label: u64) -> Result<SplitData, CliError> {
    let path = dataset_path(exp, split, label);
    if path.exists() {
        return read_split(&path, exp.task).map_err(|e| {
            CliError::Runtime(format!(
                "cache file {} does not match its key ({e}); delete it to regenerate",
                path.display()
            ))
        });
    }
    std::fs::create_dir_all(path.parent().expect("data dir"))?;
    let data = generate_split(&exp.gen, split_count(exp, split), exp.seed, label);
    write_split(&path, exp.task, &data)?;
    println!("generated {} ({} samples)", path.display(), data.len());
    Ok(data)
}

pub fn ensure_datasets(exp: &Experiment) -> Result<[SplitData; 3], CliError> {
    let [a, b, c] = SPLITS;
    Ok([
        ensure_split(exp, a.0, a.1)?,
        ensure_split(exp, b.0, b.1)?,
        ensure_split(exp, c.0, c.1)?,
    ])
}

#[derive(Serialize)]
struct SummaryMetrics {
    loss: f64,
    f1: f64,
    precision: f64,
    recall: f64,
    accuracy: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    ri: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ari: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    auc: Option<f64>,
}

impl From<&EvalSummary> for SummaryMetrics {
    fn from(e: &EvalSummary) -> Self {
        SummaryMetrics {
            loss: e.loss,
            f1: e.f1,
            precision: e.precision,
            recall: e.recall,
            accuracy: e.accuracy,
            ri: e.ri,
            ari: e.ari,
            auc: e.auc,
        }
    }
}

#[derive(Serialize)]
struct Summary {
    task: String,
    variant: String,
    seed: u64,
    parameter_count: usize,
    best_epoch: usize,
    epochs_run: usize,
    test: SummaryMetrics,
    dataset_files: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    test_candidate_recall: Option<f64>,
    wall_time_seconds: f64,
}

fn print_plan(exp: &Experiment) -> Result<(), CliError> {
    let model = Model::new(exp.model.clone())?;
    println!("task: {}", exp.task.name());
    println!("seed: {}", exp.seed);
    println!("output: {}", exp.out_dir.display());
    println!(
        "splits: {} train / {} val / {} test, n in [{}, {}]",
        exp.train_count, exp.val_count, exp.test_count, exp.gen.n_min, exp.gen.n_max
    );
    for (split, label) in SPLITS {
        println!("  {split}: {}", dataset_path(exp, split, label).display());
    }
    println!(
        "model: {} ({} parameters)",
        exp.model.variant.name(),
        model.parameter_count()
    );
    println!(
        "train: lr {}, batch {}, up to {} epochs, patience {}",
        exp.train.learning_rate, exp.train.batch_size, exp.train.max_epochs, exp.train.patience
    );
    Ok(())
}

pub fn cmd_generate(exp: &Experiment, dry_run: bool) -> Result<(), CliError> {
    if dry_run {
        return print_plan(exp);
    }
    ensure_datasets(exp)?;
    Ok(())
}

pub fn cmd_train(exp: &Experiment, dry_run: bool, render: bool) -> Result<(), CliError> {
    if dry_run {
        return print_plan(exp);
    }
    let started = Instant::now();
    let [train_data, val_data, test_data] = ensure_datasets(exp)?;
    let model = Model::new(exp.model.clone())?;
    let parameter_count = model.parameter_count();
    println!(
        "training {} ({parameter_count} parameters) on {} sets",
        exp.model.variant.name(),
        train_data.len()
    );
    let (report, test) = train_and_evaluate(model, &train_data, &val_data, &test_data, &exp.train)?;
    std::fs::create_dir_all(&exp.out_dir)?;
    std::fs::write(
        exp.out_dir.join("metrics.csv"),
        history_to_csv(&report.history),
    )?;
    report
        .model
        .save_checkpoint_file(&exp.out_dir.join("checkpoint.bin"))?;

    let recall = candidate_recall_of_split(&test_data);
    let summary = Summary {
        task: exp.task.name().to_string(),
        variant: exp.model.variant.name().to_string(),
        seed: exp.seed,
        parameter_count,
        best_epoch: report.best_epoch,
        epochs_run: report.epochs_run,
        test: SummaryMetrics::from(&test),
        dataset_files: SPLITS
            .iter()
            .map(|&(s, l)| dataset_path(exp, s, l).display().to_string())
            .collect(),
        test_candidate_recall: recall,
        wall_time_seconds: started.elapsed().as_secs_f64(),
    };
    let json = serde_json::to_string_pretty(&summary)
        .map_err(|e| CliError::Runtime(format!("summary: {e}")))?;
    std::fs::write(exp.out_dir.join("summary.json"), json + "\n")?;
    println!(
        "best epoch {} (val F1 {:.4}); test F1 {:.4}{}",
        report.best_epoch,
        report.best_val_f1,
        test.f1,
        test.auc
            .map(|a| format!(", test AUC {a:.4}"))
            .unwrap_or_default()
    );
    if render {
        cmd_render(exp, false)?;
    }
    Ok(())
}

pub fn cmd_evaluate(exp: &Experiment, dry_run: bool) -> Result<(), CliError> {
    if dry_run {
        return print_plan(exp);
    }
    let ckpt = exp.out_dir.join("checkpoint.bin");
    if !ckpt.exists() {
        return Err(CliError::Runtime(format!(
            "no checkpoint at {}; run `s2g train` first",
            ckpt.display()
        )));
    }
    let model = Model::load_checkpoint_file(&ckpt)?;
    let (split, label) = SPLITS[2];
    let test_data = ensure_split(exp, split, label)?;
    let summary = evaluate(&model, &test_data, &exp.train)?;
    let json = serde_json::to_string_pretty(&SummaryMetrics::from(&summary))
        .map_err(|e| CliError::Runtime(format!("summary: {e}")))?;
    std::fs::write(exp.out_dir.join("evaluation.json"), json.clone() + "\n")?;
    println!("{json}");
    Ok(())
}

/// Renders up to 8 test sets as truth-vs-prediction SVG overlays
/// (planar tasks only).
pub fn cmd_render(exp: &Experiment, dry_run: bool) -> Result<(), CliError> {
    if dry_run {
        return print_plan(exp);
    }
    if exp.task.is_triplet() {
        println!("render: skipped ({} is not a planar edge task)", exp.task.name());
        return Ok(());
    }
    let ckpt = exp.out_dir.join("checkpoint.bin");
    if !ckpt.exists() {
        return Err(CliError::Runtime(format!(
            "no checkpoint at {}; run `s2g train` first",
            ckpt.display()
        )));
    }
    let model = Model::load_checkpoint_file(&ckpt)?;
    let (split, label) = SPLITS[2];
    let test_data = ensure_split(exp, split, label)?;
    let samples = test_data
        .as_edges()
        .ok_or_else(|| CliError::Runtime("render expects an edge task".to_string()))?;
    let dir = exp.out_dir.join("renders");
    std::fs::create_dir_all(&dir)?;
    for (i, sample) in samples.iter().take(8).enumerate() {
        if sample.points.dim() != 2 {
            return Err(CliError::Runtime("render expects 2D points".to_string()));
        }
        let logits = model.forward_edges(&sample.points.to_tensor())?;
        let pred = predict_edges(&logits);
        let svg = render_triangulation_svg(&sample.points, &sample.labels, &pred)?;
        let path = dir.join(format!("test_{i:02}.svg"));
        std::fs::write(&path, svg)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}
