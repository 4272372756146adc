//! Losses, optimizer, early stopping, post-processing, and the training
//! loop.
//!
//! Training is deterministic for a fixed config: batches are shuffled from
//! a seeded stream, per-sample gradients may be computed in parallel but
//! are reduced in sample order, and every metric is aggregated in index
//! order. The combined loss is `w_bce·BCE + w_f1·softF1`, both computed
//! over the off-diagonal entries (k=2) or the candidate list (k=3).

use rayon::prelude::*;
use thiserror::Error;

use crate::dataset::{EdgeSample, SplitData, TripletSample};
use crate::geometry::{partition_to_adjacency, EdgeLabels, Partition};
use crate::metrics::{
    adjusted_rand_index, auc_roc, binary_classification_metrics, edge_classification_metrics,
    rand_index, MetricsError,
};
use crate::model::{Model, ModelError};
use crate::rng::{derive_seed, rng_from_seed};
use crate::tensor::{Tape, Tensor, TensorError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("dataset split is empty")]
    EmptySplit,
    #[error("learning rate must be finite and >= 0")]
    BadLearningRate,
    #[error("batch size, epochs and patience must be >= 1")]
    BadSchedule,
    #[error("gradient/parameter layout mismatch")]
    GradLayout,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// Optimization schedule and loss weights.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub w_bce: f64,
    pub w_f1: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 32,
            max_epochs: 60,
            patience: 20,
            w_bce: 1.0,
            w_f1: 1.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<(), TrainError> {
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(TrainError::BadLearningRate);
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return Err(TrainError::BadSchedule);
        }
        Ok(())
    }
}

// ── Losses ───────────────────────────────────────────────────────────

fn off_diagonal_mask(n: usize) -> Tensor {
    let mut data = vec![1.0; n * n];
    for i in 0..n {
        data[i * n + i] = 0.0;
    }
    Tensor::new(data, &[n, n]).expect("square mask")
}

/// Mean stable binary cross-entropy of the edge logits over the
/// off-diagonal ordered pairs; the diagonal is ignored.
pub fn bce_edge_loss(logits: &Tensor, labels: &EdgeLabels) -> Result<Tensor, TrainError> {
    let n = labels.n();
    let targets = labels.to_tensor();
    let mask = off_diagonal_mask(n);
    Ok(logits.bce_with_logits_masked(&targets, &mask)?)
}

/// Dice-style soft F1 surrogate `1 − 2Σpy/(Σp + Σy)` over masked entries;
/// an all-zero denominator yields loss 0.
fn soft_f1_masked(probs: &Tensor, targets: &Tensor, mask: &Tensor) -> Result<Tensor, TrainError> {
    let p_masked = probs.mul(mask)?;
    let numerator = p_masked.mul(targets)?.sum_all()?.scale(2.0)?;
    let denominator = p_masked.sum_all()?.add(&targets.sum_all()?)?;
    if denominator.item() == 0.0 {
        return Ok(Tensor::scalar(0.0));
    }
    Ok(Tensor::scalar(1.0).sub(&numerator.div(&denominator)?)?)
}

/// Soft F1 loss of edge probabilities against binary labels, diagonal
/// excluded.
pub fn soft_f1_loss(probs: &Tensor, labels: &EdgeLabels) -> Result<Tensor, TrainError> {
    let n = labels.n();
    soft_f1_masked(probs, &labels.to_tensor(), &off_diagonal_mask(n))
}

fn triplet_targets(labels: &[bool]) -> Tensor {
    let data = labels.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    Tensor::new(data, &[labels.len(), 1]).expect("labels")
}

/// Mean stable binary cross-entropy over the candidate list.
pub fn triplet_bce_loss(logits: &Tensor, labels: &[bool]) -> Result<Tensor, TrainError> {
    let targets = triplet_targets(labels);
    let mask = Tensor::new(vec![1.0; labels.len()], &[labels.len(), 1]).expect("mask");
    Ok(logits.bce_with_logits_masked(&targets, &mask)?)
}

/// Soft F1 loss over the candidate list.
pub fn triplet_soft_f1_loss(probs: &Tensor, labels: &[bool]) -> Result<Tensor, TrainError> {
    let targets = triplet_targets(labels);
    let mask = Tensor::new(vec![1.0; labels.len()], &[labels.len(), 1]).expect("mask");
    soft_f1_masked(probs, &targets, &mask)
}

/// The training objective `w_bce·BCE + w_f1·softF1` for edge logits.
pub fn combined_edge_loss(
    logits: &Tensor,
    labels: &EdgeLabels,
    w_bce: f64,
    w_f1: f64,
) -> Result<Tensor, TrainError> {
    let mut total = Tensor::scalar(0.0);
    if w_bce != 0.0 {
        total = total.add(&bce_edge_loss(logits, labels)?.scale(w_bce)?)?;
    }
    if w_f1 != 0.0 {
        let probs = logits.sigmoid()?;
        total = total.add(&soft_f1_loss(&probs, labels)?.scale(w_f1)?)?;
    }
    Ok(total)
}

/// The training objective for triplet logits.
pub fn combined_triplet_loss(
    logits: &Tensor,
    labels: &[bool],
    w_bce: f64,
    w_f1: f64,
) -> Result<Tensor, TrainError> {
    let mut total = Tensor::scalar(0.0);
    if w_bce != 0.0 {
        total = total.add(&triplet_bce_loss(logits, labels)?.scale(w_bce)?)?;
    }
    if w_f1 != 0.0 {
        let probs = logits.sigmoid()?;
        total = total.add(&triplet_soft_f1_loss(&probs, labels)?.scale(w_f1)?)?;
    }
    Ok(total)
}

// ── Adam ─────────────────────────────────────────────────────────────

/// Per-parameter first/second moment estimates.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

impl AdamState {
    pub fn for_model(model: &Model) -> Self {
        let sizes: Vec<usize> = model.params().iter().map(|p| p.len()).collect();
        AdamState {
            m: sizes.iter().map(|&s| vec![0.0; s]).collect(),
            v: sizes.iter().map(|&s| vec![0.0; s]).collect(),
            t: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }
}

/// One bias-corrected Adam update, applied parameter by parameter in a
/// fixed declaration order.
pub fn adam_step(
    params: Vec<&mut Tensor>,
    grads: &[Vec<f64>],
    state: &mut AdamState,
    lr: f64,
) -> Result<(), TrainError> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(TrainError::GradLayout);
    }
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - ADAM_BETA1.powi(t);
    let bc2 = 1.0 - ADAM_BETA2.powi(t);
    for ((p, g), (m, v)) in params
        .into_iter()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        if p.len() != g.len() {
            return Err(TrainError::GradLayout);
        }
        let data = p.data_mut();
        for i in 0..data.len() {
            m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i];
            v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            data[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
    Ok(())
}

// ── Early stopping and post-processing ───────────────────────────────

/// True when the best value in `history` is at least `patience` entries
/// old; only a strict improvement resets the counter.
pub fn early_stopping(history: &[f64], patience: usize) -> bool {
    if history.is_empty() {
        return false;
    }
    let mut best_idx = 0;
    for (i, &v) in history.iter().enumerate() {
        if v > history[best_idx] {
            best_idx = i;
        }
    }
    history.len() - 1 - best_idx >= patience
}

/// Symmetrize, squash, and threshold edge logits into hard labels.
/// σ((z_ij + z_ji)/2) must exceed 0.5 strictly for an edge.
pub fn predict_edges(logits: &Tensor) -> EdgeLabels {
    let n = logits.shape()[0];
    let z = logits.data();
    let mut out = EdgeLabels::empty(n);
    for i in 0..n {
        for j in i + 1..n {
            let sym = 0.5 * (z[i * n + j] + z[j * n + i]);
            let p = 1.0 / (1.0 + (-sym).exp());
            if p > 0.5 {
                out.set(i, j);
            }
        }
    }
    out
}

/// Hard labels for candidate triplets at probability 0.5.
pub fn predict_triplets(logits: &Tensor) -> Vec<bool> {
    logits
        .data()
        .iter()
        .map(|&z| 1.0 / (1.0 + (-z).exp()) > 0.5)
        .collect()
}

/// Projects a predicted adjacency onto a valid partitioning by taking every
/// connected component as a clique. Symmetry is guaranteed by
/// [`EdgeLabels`] itself.
pub fn connected_components_to_cliques(pred: &EdgeLabels) -> (Partition, EdgeLabels) {
    let n = pred.n();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut Vec<usize>, mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for (i, j) in pred.edges() {
        let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
        if ri != rj {
            parent[ri.max(rj)] = ri.min(rj);
        }
    }
    let roots: Vec<usize> = (0..n).map(|i| find(&mut parent, i)).collect();
    let partition = Partition::from_ids(&roots);
    let closure = partition_to_adjacency(&partition);
    (partition, closure)
}

// ── Metrics history ──────────────────────────────────────────────────

/// One row of the training history CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub split: &'static str,
    pub loss: Option<f64>,
    pub f1: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub accuracy: Option<f64>,
    pub ri: Option<f64>,
    pub ari: Option<f64>,
    pub auc: Option<f64>,
}

pub const METRICS_CSV_HEADER: &str = "epoch,split,loss,f1,precision,recall,accuracy,ri,ari,auc";

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Serializes history rows under the fixed header; output bytes are a pure
/// function of the values.
pub fn history_to_csv(history: &[MetricsRecord]) -> String {
    let mut out = String::from(METRICS_CSV_HEADER);
    out.push('\n');
    for r in history {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            r.epoch,
            r.split,
            fmt_opt(r.loss),
            fmt_opt(r.f1),
            fmt_opt(r.precision),
            fmt_opt(r.recall),
            fmt_opt(r.accuracy),
            fmt_opt(r.ri),
            fmt_opt(r.ari),
            fmt_opt(r.auc),
        ));
    }
    out
}

// ── Evaluation ───────────────────────────────────────────────────────

/// Split-level evaluation: classification metrics averaged per set,
/// partition metrics from the connected-component projection (k=2 only),
/// and AUC pooled over every scored pair/candidate in the split.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub loss: f64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub accuracy: f64,
    pub ri: Option<f64>,
    pub ari: Option<f64>,
    pub auc: Option<f64>,
}

struct SampleEval {
    loss: f64,
    f1: f64,
    precision: f64,
    recall: f64,
    accuracy: f64,
    ri: Option<f64>,
    ari: Option<f64>,
    scores: Vec<f64>,
    labels: Vec<bool>,
}

fn eval_edge_sample(
    model: &Model,
    sample: &EdgeSample,
    w_bce: f64,
    w_f1: f64,
) -> Result<SampleEval, TrainError> {
    let x = sample.points.to_tensor();
    let logits = model.forward_edges(&x)?;
    let loss = combined_edge_loss(&logits, &sample.labels, w_bce, w_f1)?.item();
    let pred = predict_edges(&logits);
    let cls = edge_classification_metrics(&pred, &sample.labels)?;
    let (pred_part, _) = connected_components_to_cliques(&pred);
    let (true_part, _) = connected_components_to_cliques(&sample.labels);
    let ri = rand_index(&pred_part, &true_part)?;
    let ari = adjusted_rand_index(&pred_part, &true_part)?;
    let n = sample.labels.n();
    let z = logits.data();
    let mut scores = Vec::with_capacity(n * (n - 1) / 2);
    let mut labels = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            let sym = 0.5 * (z[i * n + j] + z[j * n + i]);
            scores.push(1.0 / (1.0 + (-sym).exp()));
            labels.push(sample.labels.get(i, j));
        }
    }
    Ok(SampleEval {
        loss,
        f1: cls.f1,
        precision: cls.precision,
        recall: cls.recall,
        accuracy: cls.accuracy,
        ri: Some(ri),
        ari: Some(ari),
        scores,
        labels,
    })
}

fn eval_triplet_sample(
    model: &Model,
    sample: &TripletSample,
    w_bce: f64,
    w_f1: f64,
) -> Result<SampleEval, TrainError> {
    let x = sample.points.to_tensor();
    let triples = std::sync::Arc::new(sample.candidates.triples().to_vec());
    let logits = model.forward_triplets(&x, &triples)?;
    let loss = combined_triplet_loss(&logits, sample.candidates.labels(), w_bce, w_f1)?.item();
    let pred = predict_triplets(&logits);
    let cls = binary_classification_metrics(&pred, sample.candidates.labels())?;
    let scores = logits
        .data()
        .iter()
        .map(|&z| 1.0 / (1.0 + (-z).exp()))
        .collect();
    Ok(SampleEval {
        loss,
        f1: cls.f1,
        precision: cls.precision,
        recall: cls.recall,
        accuracy: cls.accuracy,
        ri: None,
        ari: None,
        scores,
        labels: sample.candidates.labels().to_vec(),
    })
}

/// Evaluates a model over a split; parallel across samples with an
/// index-ordered reduction.
pub fn evaluate(model: &Model, data: &SplitData, cfg: &TrainConfig) -> Result<EvalSummary, TrainError> {
    if data.is_empty() {
        return Err(TrainError::EmptySplit);
    }
    let evals: Vec<SampleEval> = match data {
        SplitData::Edges(samples) => samples
            .par_iter()
            .map(|s| eval_edge_sample(model, s, cfg.w_bce, cfg.w_f1))
            .collect::<Result<_, _>>()?,
        SplitData::Triplets(samples) => samples
            .par_iter()
            .map(|s| eval_triplet_sample(model, s, cfg.w_bce, cfg.w_f1))
            .collect::<Result<_, _>>()?,
    };
    let count = evals.len() as f64;
    let mean = |f: &dyn Fn(&SampleEval) -> f64| evals.iter().map(|e| f(e)).sum::<f64>() / count;
    let has_partitions = evals[0].ri.is_some();
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for e in &evals {
        scores.extend_from_slice(&e.scores);
        labels.extend_from_slice(&e.labels);
    }
    let auc = match auc_roc(&scores, &labels) {
        Ok(v) => Some(v),
        Err(MetricsError::OneClassMissing) => None,
        Err(e) => return Err(e.into()),
    };
    Ok(EvalSummary {
        loss: mean(&|e| e.loss),
        f1: mean(&|e| e.f1),
        precision: mean(&|e| e.precision),
        recall: mean(&|e| e.recall),
        accuracy: mean(&|e| e.accuracy),
        ri: has_partitions.then(|| mean(&|e| e.ri.unwrap())),
        ari: has_partitions.then(|| mean(&|e| e.ari.unwrap())),
        auc,
    })
}

// ── Training loop ────────────────────────────────────────────────────

fn sample_grad(
    model: &Model,
    data: &SplitData,
    index: usize,
    w_bce: f64,
    w_f1: f64,
) -> Result<(f64, Vec<Vec<f64>>), TrainError> {
    let tape = Tape::new();
    let tracked = model.watched(&tape);
    let loss = match data {
        SplitData::Edges(samples) => {
            let s = &samples[index];
            let logits = tracked.forward_edges(&s.points.to_tensor())?;
            combined_edge_loss(&logits, &s.labels, w_bce, w_f1)?
        }
        SplitData::Triplets(samples) => {
            let s = &samples[index];
            let triples = std::sync::Arc::new(s.candidates.triples().to_vec());
            let logits = tracked.forward_triplets(&s.points.to_tensor(), &triples)?;
            combined_triplet_loss(&logits, s.candidates.labels(), w_bce, w_f1)?
        }
    };
    let value = loss.item();
    loss.backward()?;
    let grads = tracked
        .params()
        .iter()
        .map(|p| p.grad().ok_or(TrainError::GradLayout))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((value, grads))
}

/// Result of a full training run.
#[derive(Debug, Clone)]
pub struct TrainReport {
    /// Best-by-validation model.
    pub model: Model,
    pub history: Vec<MetricsRecord>,
    pub best_epoch: usize,
    pub best_val_f1: f64,
    pub epochs_run: usize,
}

/// Mini-batch Adam with per-epoch validation, early stopping, and
/// best-by-validation restoration.
pub fn train(
    model: Model,
    train_data: &SplitData,
    val_data: &SplitData,
    cfg: &TrainConfig,
) -> Result<TrainReport, TrainError> {
    cfg.validate()?;
    if train_data.is_empty() || val_data.is_empty() {
        return Err(TrainError::EmptySplit);
    }
    let mut model = model;
    let mut state = AdamState::for_model(&model);
    let mut history = Vec::new();
    let mut val_f1_history = Vec::new();
    let mut best_epoch = 0usize;
    let mut best_f1 = f64::NEG_INFINITY;
    let mut best_snapshot = model.snapshot();
    let n_train = train_data.len();
    let mut epochs_run = 0usize;

    use rand::Rng;
    for epoch in 1..=cfg.max_epochs {
        epochs_run = epoch;
        let mut order: Vec<usize> = (0..n_train).collect();
        let mut rng = rng_from_seed(derive_seed(cfg.seed, &[0x5348_5546, epoch as u64]));
        // Fisher-Yates
        for i in (1..n_train).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }

        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let results: Vec<(f64, Vec<Vec<f64>>)> = batch
                .par_iter()
                .map(|&i| sample_grad(&model, train_data, i, cfg.w_bce, cfg.w_f1))
                .collect::<Result<_, _>>()?;
            let scale = 1.0 / results.len() as f64;
            let mut mean_grads: Vec<Vec<f64>> = results[0]
                .1
                .iter()
                .map(|g| vec![0.0; g.len()])
                .collect();
            for (loss, grads) in &results {
                loss_sum += loss;
                for (acc, g) in mean_grads.iter_mut().zip(grads) {
                    for (a, &gv) in acc.iter_mut().zip(g) {
                        *a += gv * scale;
                    }
                }
            }
            adam_step(model.params_mut(), &mean_grads, &mut state, cfg.learning_rate)?;
        }
        let train_loss = loss_sum / n_train as f64;
        history.push(MetricsRecord {
            epoch,
            split: "train",
            loss: Some(train_loss),
            f1: None,
            precision: None,
            recall: None,
            accuracy: None,
            ri: None,
            ari: None,
            auc: None,
        });

        let val = evaluate(&model, val_data, cfg)?;
        history.push(MetricsRecord {
            epoch,
            split: "val",
            loss: Some(val.loss),
            f1: Some(val.f1),
            precision: Some(val.precision),
            recall: Some(val.recall),
            accuracy: Some(val.accuracy),
            ri: val.ri,
            ari: val.ari,
            auc: val.auc,
        });
        val_f1_history.push(val.f1);
        if val.f1 > best_f1 {
            best_f1 = val.f1;
            best_epoch = epoch;
            best_snapshot = model.snapshot();
        }
        if early_stopping(&val_f1_history, cfg.patience) {
            break;
        }
    }

    model.restore(&best_snapshot);
    Ok(TrainReport {
        model,
        history,
        best_epoch,
        best_val_f1: best_f1,
        epochs_run,
    })
}

/// Trains, evaluates the best model on the test split, and appends the
/// test row to the history.
pub fn train_and_evaluate(
    model: Model,
    train_data: &SplitData,
    val_data: &SplitData,
    test_data: &SplitData,
    cfg: &TrainConfig,
) -> Result<(TrainReport, EvalSummary), TrainError> {
    let mut report = train(model, train_data, val_data, cfg)?;
    let test = evaluate(&report.model, test_data, cfg)?;
    report.history.push(MetricsRecord {
        epoch: report.best_epoch,
        split: "test",
        loss: Some(test.loss),
        f1: Some(test.f1),
        precision: Some(test.precision),
        recall: Some(test.recall),
        accuracy: Some(test.accuracy),
        ri: test.ri,
        ari: test.ari,
        auc: test.auc,
    });
    Ok((report, test))
}
