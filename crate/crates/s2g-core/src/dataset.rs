//! Dataset generation and JSON-lines IO.
//!
//! Each dataset file holds one self-contained JSON object per line:
//! `{task, seed, n, points, labels}` plus `knn_k` for the hull tasks.
//! For the k=2 tasks `labels` is the sorted undirected edge list; for the
//! hull tasks it is the full list of hull triangles, from which the K-NN
//! candidate set is rebuilt deterministically on load.
//!
//! Generation is embarrassingly parallel: sample `i` of a split draws from
//! its own ChaCha8 stream seeded by `(base_seed, split, i)`, so datasets
//! are pure functions of the generation parameters regardless of thread
//! count.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    candidates_from_hull, delaunay_sample, hull_sample, partition_to_adjacency,
    sample_partition_set, EdgeLabels, GeometryError, PointSet, TripletCandidates,
};
use crate::rng::{derive_seed, sample_rng};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    Json {
        line: usize,
        source: serde_json::Error,
    },
    #[error("line {line}: {message}")]
    Invalid { line: usize, message: String },
    #[error("expected task {expected}, found {found}")]
    TaskMismatch { expected: String, found: String },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// The four experiment tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Delaunay,
    HullSpherical,
    HullGaussian,
    Partition,
}

impl Task {
    pub fn name(&self) -> &'static str {
        match self {
            Task::Delaunay => "delaunay",
            Task::HullSpherical => "hull_spherical",
            Task::HullGaussian => "hull_gaussian",
            Task::Partition => "partition",
        }
    }

    /// Hull tasks predict triplets; the others predict edges.
    pub fn is_triplet(&self) -> bool {
        matches!(self, Task::HullSpherical | Task::HullGaussian)
    }

    pub fn input_dim(&self, d_in_config: usize) -> usize {
        match self {
            Task::Delaunay => 2,
            Task::HullSpherical | Task::HullGaussian => 3,
            Task::Partition => d_in_config,
        }
    }
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// One k=2 training example.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeSample {
    pub points: PointSet,
    pub labels: EdgeLabels,
    pub seed: u64,
}

/// One k=3 training example: K-NN candidates plus the full hull triangle
/// list they were labeled against.
#[derive(Debug, Clone, PartialEq)]
pub struct TripletSample {
    pub points: PointSet,
    pub candidates: TripletCandidates,
    pub hull: Vec<[usize; 3]>,
    pub knn_k: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SplitData {
    Edges(Vec<EdgeSample>),
    Triplets(Vec<TripletSample>),
}

impl SplitData {
    pub fn len(&self) -> usize {
        match self {
            SplitData::Edges(v) => v.len(),
            SplitData::Triplets(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn as_edges(&self) -> Option<&[EdgeSample]> {
        match self {
            SplitData::Edges(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_triplets(&self) -> Option<&[TripletSample]> {
        match self {
            SplitData::Triplets(v) => Some(v),
            _ => None,
        }
    }
}

/// Everything that determines a generated split except the seed and count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenSpec {
    pub task: Task,
    pub n_min: usize,
    pub n_max: usize,
    /// K for the hull tasks.
    pub knn_k: usize,
    /// Feature dimension for the partition task.
    pub d_in: usize,
    pub clusters_min: usize,
    pub clusters_max: usize,
    pub spread: f64,
}

/// Deterministically generates `count` samples for one split.
pub fn generate_split(spec: &GenSpec, count: usize, base_seed: u64, split: u64) -> SplitData {
    let draw_n = |rng: &mut rand_chacha::ChaCha8Rng| -> usize {
        use rand::Rng;
        rng.random_range(spec.n_min..=spec.n_max)
    };
    match spec.task {
        Task::Delaunay => SplitData::Edges(
            (0..count)
                .into_par_iter()
                .map(|i| {
                    let seed = derive_seed(base_seed, &[split, i as u64]);
                    let mut rng = sample_rng(base_seed, split, i as u64);
                    let n = draw_n(&mut rng);
                    let (points, labels) = delaunay_sample(n, &mut rng);
                    EdgeSample {
                        points,
                        labels,
                        seed,
                    }
                })
                .collect(),
        ),
        Task::HullSpherical | Task::HullGaussian => {
            let spherical = spec.task == Task::HullSpherical;
            SplitData::Triplets(
                (0..count)
                    .into_par_iter()
                    .map(|i| {
                        let seed = derive_seed(base_seed, &[split, i as u64]);
                        let mut rng = sample_rng(base_seed, split, i as u64);
                        let n = draw_n(&mut rng);
                        let (points, candidates, hull) =
                            hull_sample(n, spec.knn_k, spherical, &mut rng);
                        TripletSample {
                            points,
                            candidates,
                            hull,
                            knn_k: spec.knn_k,
                            seed,
                        }
                    })
                    .collect(),
            )
        }
        Task::Partition => SplitData::Edges(
            (0..count)
                .into_par_iter()
                .map(|i| {
                    let seed = derive_seed(base_seed, &[split, i as u64]);
                    let mut rng = sample_rng(base_seed, split, i as u64);
                    let (points, partition) = sample_partition_set(
                        (spec.n_min, spec.n_max),
                        (spec.clusters_min, spec.clusters_max),
                        spec.d_in,
                        spec.spread,
                        &mut rng,
                    );
                    EdgeSample {
                        points,
                        labels: partition_to_adjacency(&partition),
                        seed,
                    }
                })
                .collect(),
        ),
    }
}

/// Mean fraction of hull triangles captured by the K-NN candidate sets;
/// `None` for edge tasks. Reported as dataset metadata.
pub fn candidate_recall_of_split(data: &SplitData) -> Option<f64> {
    match data {
        SplitData::Triplets(samples) if !samples.is_empty() => {
            let total: f64 = samples
                .iter()
                .map(|s| {
                    if s.hull.is_empty() {
                        1.0
                    } else {
                        s.candidates.positives() as f64 / s.hull.len() as f64
                    }
                })
                .sum();
            Some(total / samples.len() as f64)
        }
        _ => None,
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    task: Task,
    seed: u64,
    n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    knn_k: Option<usize>,
    points: Vec<Vec<f64>>,
    labels: Vec<Vec<usize>>,
}

/// Writes one JSON object per sample.
pub fn write_split(path: &Path, task: Task, data: &SplitData) -> Result<(), DatasetError> {
    let mut w = BufWriter::new(File::create(path)?);
    match data {
        SplitData::Edges(samples) => {
            for s in samples {
                let record = Record {
                    task,
                    seed: s.seed,
                    n: s.points.len(),
                    knn_k: None,
                    points: s.points.rows(),
                    labels: s.labels.edges().iter().map(|&(i, j)| vec![i, j]).collect(),
                };
                serde_json::to_writer(&mut w, &record)
                    .map_err(|source| DatasetError::Json { line: 0, source })?;
                w.write_all(b"\n")?;
            }
        }
        SplitData::Triplets(samples) => {
            for s in samples {
                let record = Record {
                    task,
                    seed: s.seed,
                    n: s.points.len(),
                    knn_k: Some(s.knn_k),
                    points: s.points.rows(),
                    labels: s.hull.iter().map(|t| t.to_vec()).collect(),
                };
                serde_json::to_writer(&mut w, &record)
                    .map_err(|source| DatasetError::Json { line: 0, source })?;
                w.write_all(b"\n")?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn invalid(line: usize, message: impl Into<String>) -> DatasetError {
    DatasetError::Invalid {
        line,
        message: message.into(),
    }
}

/// Reads a split back, validating every record's invariants.
pub fn read_split(path: &Path, expected: Task) -> Result<SplitData, DatasetError> {
    let reader = BufReader::new(File::open(path)?);
    let mut edges = Vec::new();
    let mut triplets = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let text = line?;
        if text.trim().is_empty() {
            continue;
        }
        let record: Record = serde_json::from_str(&text).map_err(|source| DatasetError::Json {
            line: line_no,
            source,
        })?;
        if record.task != expected {
            return Err(DatasetError::TaskMismatch {
                expected: expected.name().to_string(),
                found: record.task.name().to_string(),
            });
        }
        if record.points.len() != record.n {
            return Err(invalid(line_no, "point count does not match n"));
        }
        let points = PointSet::from_rows(&record.points)
            .map_err(|e| invalid(line_no, e.to_string()))?;
        if expected.is_triplet() {
            let k = record
                .knn_k
                .ok_or_else(|| invalid(line_no, "hull record missing knn_k"))?;
            let mut hull = Vec::with_capacity(record.labels.len());
            for t in &record.labels {
                if t.len() != 3 || !(t[0] < t[1] && t[1] < t[2] && t[2] < record.n) {
                    return Err(invalid(line_no, format!("invalid hull triple {t:?}")));
                }
                hull.push([t[0], t[1], t[2]]);
            }
            if hull.windows(2).any(|w| w[0] >= w[1]) {
                return Err(invalid(line_no, "hull triples not sorted unique"));
            }
            let candidates = candidates_from_hull(&points, k, &hull)
                .map_err(|e| invalid(line_no, e.to_string()))?;
            triplets.push(TripletSample {
                points,
                candidates,
                hull,
                knn_k: k,
                seed: record.seed,
            });
        } else {
            let mut pairs = Vec::with_capacity(record.labels.len());
            for e in &record.labels {
                if e.len() != 2 || !(e[0] < e[1] && e[1] < record.n) {
                    return Err(invalid(line_no, format!("invalid edge {e:?}")));
                }
                pairs.push((e[0], e[1]));
            }
            let labels = EdgeLabels::from_edges(record.n, &pairs)
                .map_err(|e| invalid(line_no, e.to_string()))?;
            edges.push(EdgeSample {
                points,
                labels,
                seed: record.seed,
            });
        }
    }
    Ok(if expected.is_triplet() {
        SplitData::Triplets(triplets)
    } else {
        SplitData::Edges(edges)
    })
}
