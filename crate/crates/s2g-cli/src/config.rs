//! Experiment configuration: JSON parsing, per-task defaults, validation.
//!
//! A config file needs only `task` and `seed`; every other field has a
//! task-specific default. Unknown keys are rejected with a path-qualified
//! message, as are semantically invalid values.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use s2g_core::dataset::{GenSpec, Task};
use s2g_core::layers::Pooling;
use s2g_core::model::{presets, ModelConfig, ModelVariant};
use s2g_core::rng::derive_seed;
use s2g_core::train::TrainConfig;

use crate::CliError;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    task: Task,
    seed: u64,
    #[serde(default)]
    out_dir: Option<PathBuf>,
    #[serde(default)]
    dataset: DatasetSection,
    #[serde(default)]
    model: ModelSection,
    #[serde(default)]
    train: TrainSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetSection {
    train: Option<usize>,
    val: Option<usize>,
    test: Option<usize>,
    n_min: Option<usize>,
    n_max: Option<usize>,
    knn_k: Option<usize>,
    d_in: Option<usize>,
    clusters_min: Option<usize>,
    clusters_max: Option<usize>,
    spread: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelSection {
    variant: Option<ModelVariant>,
    phi_widths: Option<Vec<usize>>,
    d1: Option<usize>,
    psi_widths: Option<Vec<usize>>,
    inner_widths: Option<Vec<usize>>,
    pooling: Option<Pooling>,
    max_n: Option<usize>,
    seed: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainSection {
    learning_rate: Option<f64>,
    batch_size: Option<usize>,
    max_epochs: Option<usize>,
    patience: Option<usize>,
    w_bce: Option<f64>,
    w_f1: Option<f64>,
    seed: Option<u64>,
}

/// A fully resolved experiment: everything a run needs.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub task: Task,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub gen: GenSpec,
    pub train_count: usize,
    pub val_count: usize,
    pub test_count: usize,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}

/// Parses and validates a config file, applying defaults and the CLI
/// overrides for seed and output directory.
pub fn parse_config(
    path: &Path,
    seed_override: Option<u64>,
    out_override: Option<PathBuf>,
) -> Result<Experiment, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| invalid(format!("cannot read config {}: {e}", path.display())))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    let file: FileConfig = serde_path_to_error::deserialize(de)
        .map_err(|e| invalid(format!("config {}: {e}", path.display())))?;
    resolve(file, seed_override, out_override)
}

fn resolve(
    file: FileConfig,
    seed_override: Option<u64>,
    out_override: Option<PathBuf>,
) -> Result<Experiment, CliError> {
    let task = file.task;
    let seed = seed_override.unwrap_or(file.seed);
    let out_dir = out_override
        .or(file.out_dir)
        .unwrap_or_else(|| PathBuf::from("runs").join(task.name()));

    // dataset defaults per task
    let (d_train, d_val, d_test, d_nmin, d_nmax) = match task {
        Task::Delaunay => (5000, 500, 500, 20, 20),
        Task::HullSpherical | Task::HullGaussian => (2000, 200, 200, 30, 30),
        // split ratios 0.6/0.2/0.2
        Task::Partition => (3000, 1000, 1000, 4, 12),
    };
    let ds = &file.dataset;
    let train_count = ds.train.unwrap_or(d_train);
    let val_count = ds.val.unwrap_or(d_val);
    let test_count = ds.test.unwrap_or(d_test);
    let n_min = ds.n_min.unwrap_or(d_nmin);
    let n_max = ds.n_max.unwrap_or(d_nmax);
    let knn_k = ds.knn_k.unwrap_or(10);
    let d_in_data = ds.d_in.unwrap_or(4);
    let clusters_min = ds.clusters_min.unwrap_or(1);
    let clusters_max = ds.clusters_max.unwrap_or(4);
    let spread = ds.spread.unwrap_or(0.15);

    if train_count == 0 || val_count == 0 || test_count == 0 {
        return Err(invalid("dataset: split sizes must be positive"));
    }
    if n_min > n_max {
        return Err(invalid("dataset.n_min: must not exceed dataset.n_max"));
    }
    match task {
        Task::Delaunay => {
            if n_min < 3 {
                return Err(invalid("dataset.n_min: Delaunay needs n >= 3"));
            }
        }
        Task::HullSpherical | Task::HullGaussian => {
            if n_min < 4 {
                return Err(invalid("dataset.n_min: hull tasks need n >= 4"));
            }
            if knn_k < 2 {
                return Err(invalid("dataset.knn_k: must be at least 2"));
            }
            if knn_k >= n_min {
                return Err(invalid("dataset.knn_k: must be smaller than n_min"));
            }
        }
        Task::Partition => {
            if n_min < 2 {
                return Err(invalid("dataset.n_min: pairwise prediction needs n >= 2"));
            }
            if clusters_min == 0 || clusters_min > clusters_max {
                return Err(invalid("dataset.clusters_min: need 1 <= clusters_min <= clusters_max"));
            }
            if !(spread.is_finite() && spread > 0.0) {
                return Err(invalid("dataset.spread: must be positive"));
            }
            if d_in_data == 0 {
                return Err(invalid("dataset.d_in: must be positive"));
            }
        }
    }

    let gen = GenSpec {
        task,
        n_min,
        n_max,
        knn_k,
        d_in: d_in_data,
        clusters_min,
        clusters_max,
        spread,
    };

    // model defaults: the requested variant's preset, adapted to the task
    let model_seed = file.model.seed.unwrap_or_else(|| derive_seed(seed, &[1]));
    let requested = file.model.variant.unwrap_or(if task.is_triplet() {
        ModelVariant::S2gK3
    } else {
        ModelVariant::S2g
    });
    let mut model = match requested {
        ModelVariant::S2g => presets::delaunay_s2g(model_seed),
        ModelVariant::S2gPlus => ModelConfig {
            variant: ModelVariant::S2gPlus,
            ..presets::delaunay_s2g(model_seed)
        },
        ModelVariant::Siam => presets::delaunay_siam(model_seed),
        ModelVariant::S2gK3 => presets::hull_s2g(model_seed, knn_k),
        ModelVariant::MlpBaseline => presets::mlp_baseline(model_seed, 2, n_max),
    };
    model.d_in = task.input_dim(d_in_data);
    if let Some(w) = file.model.phi_widths {
        model.phi_widths = w;
    }
    if let Some(d1) = file.model.d1 {
        model.d1 = d1;
    }
    if let Some(w) = file.model.psi_widths {
        model.psi_widths = w;
    }
    if let Some(w) = file.model.inner_widths {
        model.inner_widths = w;
    }
    if let Some(p) = file.model.pooling {
        model.pooling = p;
    }
    if let Some(m) = file.model.max_n {
        model.max_n = m;
    }

    // task/variant compatibility
    let is_triplet_model = model.variant == ModelVariant::S2gK3;
    if task.is_triplet() != is_triplet_model {
        return Err(invalid(format!(
            "model.variant: {} is not compatible with task {}",
            model.variant.name(),
            task.name()
        )));
    }
    if model.variant == ModelVariant::MlpBaseline && model.max_n < n_max {
        return Err(invalid("model.max_n: must cover dataset.n_max"));
    }
    if model.d_in != task.input_dim(d_in_data) {
        return Err(invalid("model: input width does not match the task"));
    }

    let ts = &file.train;
    let train_defaults = match task {
        Task::HullSpherical | Task::HullGaussian => TrainConfig {
            batch_size: 16,
            max_epochs: 40,
            ..TrainConfig::default()
        },
        _ => TrainConfig::default(),
    };
    let train = TrainConfig {
        learning_rate: ts.learning_rate.unwrap_or(train_defaults.learning_rate),
        batch_size: ts.batch_size.unwrap_or(train_defaults.batch_size),
        max_epochs: ts.max_epochs.unwrap_or(train_defaults.max_epochs),
        patience: ts.patience.unwrap_or(train_defaults.patience),
        w_bce: ts.w_bce.unwrap_or(train_defaults.w_bce),
        w_f1: ts.w_f1.unwrap_or(train_defaults.w_f1),
        seed: ts.seed.unwrap_or_else(|| derive_seed(seed, &[2])),
    };
    if !(train.learning_rate.is_finite() && train.learning_rate >= 0.0) {
        return Err(invalid("train.learning_rate: must be finite and non-negative"));
    }
    if train.batch_size == 0 || train.max_epochs == 0 || train.patience == 0 {
        return Err(invalid("train: batch_size, max_epochs and patience must be >= 1"));
    }
    if !(train.w_bce.is_finite() && train.w_bce >= 0.0 && train.w_f1.is_finite() && train.w_f1 >= 0.0)
    {
        return Err(invalid("train: loss weights must be finite and non-negative"));
    }
    if train.w_bce == 0.0 && train.w_f1 == 0.0 {
        return Err(invalid("train: at least one loss weight must be positive"));
    }

    Ok(Experiment {
        task,
        seed,
        out_dir,
        gen,
        train_count,
        val_count,
        test_count,
        model,
        train,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse_str(json: &str) -> Result<Experiment, CliError> {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.json");
        std::fs::write(&path, json).unwrap();
        parse_config(&path, None, None)
    }

    #[test]
    fn minimal_config_gets_defaults() {
        let exp = parse_str(r#"{"task":"delaunay","seed":7}"#).unwrap();
        assert_eq!(exp.train_count, 5000);
        assert_eq!(exp.gen.n_min, 20);
        assert_eq!(exp.model.variant, ModelVariant::S2g);
        assert_eq!(exp.train.learning_rate, 1e-3);
        assert_eq!(exp.out_dir, PathBuf::from("runs/delaunay"));
    }

    #[test]
    fn unknown_key_is_rejected_by_name() {
        let err = parse_str(r#"{"task":"delaunay","seed":7,"trian":{}}"#).unwrap_err();
        let msg = format!("{err}");
        assert!(msg.contains("trian"), "{msg}");

        let err =
            parse_str(r#"{"task":"delaunay","seed":7,"train":{"lr":0.1}}"#).unwrap_err();
        let msg = format!("{err}");
        assert!(msg.contains("lr"), "{msg}");
    }

    #[test]
    fn negative_learning_rate_is_rejected() {
        let err = parse_str(
            r#"{"task":"delaunay","seed":7,"train":{"learning_rate":-0.5}}"#,
        )
        .unwrap_err();
        assert!(format!("{err}").contains("learning_rate"));
    }

    #[test]
    fn task_variant_compatibility() {
        let err = parse_str(
            r#"{"task":"hull_spherical","seed":7,"model":{"variant":"s2g"}}"#,
        )
        .unwrap_err();
        assert!(format!("{err}").contains("not compatible"));

        let ok = parse_str(r#"{"task":"hull_gaussian","seed":7}"#).unwrap();
        assert_eq!(ok.model.variant, ModelVariant::S2gK3);
        assert_eq!(ok.model.knn_k, 10);
    }

    #[test]
    fn knn_must_fit_set_size() {
        let err = parse_str(
            r#"{"task":"hull_spherical","seed":7,"dataset":{"n_min":8,"n_max":8}}"#,
        )
        .unwrap_err();
        assert!(format!("{err}").contains("knn_k"));
    }

    #[test]
    fn overrides_take_precedence() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.json");
        std::fs::write(&path, r#"{"task":"delaunay","seed":7}"#).unwrap();
        let exp = parse_config(&path, Some(99), Some(PathBuf::from("/tmp/out"))).unwrap();
        assert_eq!(exp.seed, 99);
        assert_eq!(exp.out_dir, PathBuf::from("/tmp/out"));
    }

    #[test]
    fn siam_variant_resolves_with_matched_widths() {
        let exp = parse_str(
            r#"{"task":"delaunay","seed":7,"model":{"variant":"siam"}}"#,
        )
        .unwrap();
        assert_eq!(exp.model.variant, ModelVariant::Siam);
        assert_eq!(exp.model.phi_widths, vec![96, 96, 96]);
    }
}
