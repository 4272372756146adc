//! Model variants assembled from the equivariant layers.
//!
//! All variants share the composition "set encoder → broadcasting lift →
//! per-tuple scorer":
//!
//! - `s2g`: DeepSets φ, concat lift (2·d1 edge features), MLP ψ;
//! - `s2g_plus`: same with the full 5-operator lift (5·d1 features);
//! - `s2g_k3`: DeepSets φ, sparse K-NN triplet lift, order-invariant
//!   triplet head;
//! - `siam`: per-element MLP φ (no pooling) with the concat lift — the
//!   similarity-learning baseline;
//! - `mlp_baseline`: a flat MLP over the zero-padded, flattened set; not
//!   equivariant, which is the point of the baseline.
//!
//! Construction is a pure function of the config (seeded init), and the
//! checkpoint format round-trips parameters bit-exactly.

use std::io::{Read, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::layers::{broadcast_k2_concat, broadcast_k2_full, DeepSets, LayerError, Mlp, Pooling, TripletHead};
use crate::rng::rng_from_seed;
use crate::tensor::{Tape, Tensor, TensorError};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("set of size {n} is degenerate for pairwise prediction (need n >= 2)")]
    DegenerateSet { n: usize },
    #[error("set of size {n} exceeds the baseline capacity max_n={max_n}")]
    SetTooLarge { n: usize, max_n: usize },
    #[error("operation requires a {expected} model")]
    VariantMismatch { expected: &'static str },
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("input has {got} features, model expects {want}")]
    InputWidth { got: usize, want: usize },
    #[error("triplet index {index} out of range for set size {n}")]
    CandidateOutOfRange { index: usize, n: usize },
    #[error(transparent)]
    Layer(#[from] LayerError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelVariant {
    S2g,
    S2gPlus,
    S2gK3,
    Siam,
    MlpBaseline,
}

impl ModelVariant {
    pub fn name(&self) -> &'static str {
        match self {
            ModelVariant::S2g => "s2g",
            ModelVariant::S2gPlus => "s2g_plus",
            ModelVariant::S2gK3 => "s2g_k3",
            ModelVariant::Siam => "siam",
            ModelVariant::MlpBaseline => "mlp_baseline",
        }
    }
}

/// Architecture hyper-parameters; a `Model` is a pure function of one of
/// these.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: ModelVariant,
    /// Input feature dimension (2 planar, 3 spatial, d_in for partition).
    pub d_in: usize,
    /// Hidden widths of the set encoder φ; its output width is `d1`.
    pub phi_widths: Vec<usize>,
    pub d1: usize,
    /// Widths of the per-tuple scorer ψ (last must be 1).
    pub psi_widths: Vec<usize>,
    /// Inner DeepSets widths for the k=3 triplet head.
    #[serde(default)]
    pub inner_widths: Vec<usize>,
    pub pooling: Pooling,
    /// K of the candidate neighborhoods (k=3 variant only).
    #[serde(default)]
    pub knn_k: usize,
    /// Capacity of the flat baseline (mlp_baseline only).
    #[serde(default)]
    pub max_n: usize,
    pub seed: u64,
}

impl ModelConfig {
    fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidConfig(m.to_string()));
        if self.d_in == 0 {
            return bad("d_in must be positive");
        }
        if self.phi_widths.iter().any(|&w| w == 0) || self.psi_widths.iter().any(|&w| w == 0) {
            return bad("widths must be positive");
        }
        match self.variant {
            ModelVariant::MlpBaseline => {
                if self.max_n < 2 {
                    return bad("mlp_baseline requires max_n >= 2");
                }
            }
            ModelVariant::S2gK3 => {
                if self.d1 == 0 {
                    return bad("d1 must be positive");
                }
                if self.inner_widths.iter().any(|&w| w == 0) {
                    return bad("widths must be positive");
                }
                if self.psi_widths.last() != Some(&1) {
                    return bad("triplet scorer must end in width 1");
                }
                if self.knn_k < 2 {
                    return bad("s2g_k3 requires knn_k >= 2");
                }
            }
            _ => {
                if self.d1 == 0 {
                    return bad("d1 must be positive");
                }
                if self.psi_widths.last() != Some(&1) {
                    return bad("edge scorer must end in width 1");
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
enum SetEncoder {
    DeepSets(DeepSets),
    Siamese(Mlp),
}

impl SetEncoder {
    fn forward(&self, x: &Tensor) -> Result<Tensor, LayerError> {
        match self {
            SetEncoder::DeepSets(ds) => ds.forward(x),
            SetEncoder::Siamese(mlp) => mlp.forward(x),
        }
    }

    fn params(&self) -> Vec<&Tensor> {
        match self {
            SetEncoder::DeepSets(ds) => ds.params(),
            SetEncoder::Siamese(mlp) => mlp.params(),
        }
    }

    fn watched(&self, tape: &Tape) -> Self {
        match self {
            SetEncoder::DeepSets(ds) => SetEncoder::DeepSets(ds.watched(tape)),
            SetEncoder::Siamese(mlp) => SetEncoder::Siamese(mlp.watched(tape)),
        }
    }
}

#[derive(Debug, Clone)]
enum ModelKind {
    Pair {
        phi: SetEncoder,
        full_basis: bool,
        psi: Mlp,
    },
    Triplet {
        phi: DeepSets,
        head: TripletHead,
    },
    Flat {
        net: Mlp,
    },
}

/// A constructed model: immutable parameters plus the config that built
/// them.
#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    kind: ModelKind,
}

/// Logits produced by a forward pass.
#[derive(Debug, Clone)]
pub enum ModelOutput {
    /// `n`×`n` edge logits (diagonal present but masked downstream).
    Edges(Tensor),
    /// One logit per candidate triplet, aligned with the candidate list.
    Triplets(Tensor),
}

impl Model {
    pub fn new(config: ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = rng_from_seed(config.seed);
        let mut phi_layer_widths = config.phi_widths.clone();
        let kind = match config.variant {
            ModelVariant::S2g | ModelVariant::S2gPlus => {
                phi_layer_widths.push(config.d1);
                let phi = DeepSets::new(config.d_in, &phi_layer_widths, config.pooling, &mut rng);
                let full_basis = config.variant == ModelVariant::S2gPlus;
                let d2 = if full_basis { 5 * config.d1 } else { 2 * config.d1 };
                let psi = Mlp::new(d2, &config.psi_widths, &mut rng);
                ModelKind::Pair {
                    phi: SetEncoder::DeepSets(phi),
                    full_basis,
                    psi,
                }
            }
            ModelVariant::Siam => {
                phi_layer_widths.push(config.d1);
                let phi = Mlp::new(config.d_in, &phi_layer_widths, &mut rng);
                let psi = Mlp::new(2 * config.d1, &config.psi_widths, &mut rng);
                ModelKind::Pair {
                    phi: SetEncoder::Siamese(phi),
                    full_basis: false,
                    psi,
                }
            }
            ModelVariant::S2gK3 => {
                phi_layer_widths.push(config.d1);
                let phi = DeepSets::new(config.d_in, &phi_layer_widths, config.pooling, &mut rng);
                let head = TripletHead::new(
                    config.d1,
                    &config.inner_widths,
                    &config.psi_widths,
                    Pooling::Mean,
                    &mut rng,
                )?;
                ModelKind::Triplet { phi, head }
            }
            ModelVariant::MlpBaseline => {
                let mut widths = config.phi_widths.clone();
                widths.push(config.max_n * config.max_n);
                let net = Mlp::new(config.max_n * config.d_in, &widths, &mut rng);
                ModelKind::Flat { net }
            }
        };
        Ok(Model { config, kind })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn variant(&self) -> ModelVariant {
        self.config.variant
    }

    fn check_input(&self, x: &Tensor) -> Result<(usize, usize), ModelError> {
        match x.shape() {
            [n, d] if *d == self.config.d_in => Ok((*n, *d)),
            [_, d] => Err(ModelError::InputWidth {
                got: *d,
                want: self.config.d_in,
            }),
            other => Err(ModelError::InputWidth {
                got: other.iter().product(),
                want: self.config.d_in,
            }),
        }
    }

    /// Edge logits for a k=2 variant: `n`×`n`, row i / column j scoring the
    /// ordered pair (i, j).
    pub fn forward_edges(&self, x: &Tensor) -> Result<Tensor, ModelError> {
        let (n, _) = self.check_input(x)?;
        if n < 2 {
            return Err(ModelError::DegenerateSet { n });
        }
        match &self.kind {
            ModelKind::Pair {
                phi,
                full_basis,
                psi,
            } => {
                let h = phi.forward(x)?;
                let lifted = if *full_basis {
                    broadcast_k2_full(&h)?
                } else {
                    broadcast_k2_concat(&h)?
                };
                let scores = psi.forward(&lifted)?;
                Ok(scores.reshape(&[n, n])?)
            }
            ModelKind::Flat { net } => {
                let max_n = self.config.max_n;
                if n > max_n {
                    return Err(ModelError::SetTooLarge { n, max_n });
                }
                let padded = x.pad_rows(max_n)?;
                let flat = padded.reshape(&[1, max_n * self.config.d_in])?;
                let out = net.forward(&flat)?;
                let square = out.reshape(&[max_n, max_n])?;
                Ok(square.crop2d(n, n)?)
            }
            ModelKind::Triplet { .. } => Err(ModelError::VariantMismatch { expected: "k=2" }),
        }
    }

    /// Per-candidate logits for the k=3 variant, index-aligned with
    /// `triples`; an empty candidate list yields an empty output.
    pub fn forward_triplets(
        &self,
        x: &Tensor,
        triples: &Arc<Vec<[usize; 3]>>,
    ) -> Result<Tensor, ModelError> {
        let (n, _) = self.check_input(x)?;
        match &self.kind {
            ModelKind::Triplet { phi, head } => {
                for t in triples.iter() {
                    for &ix in t {
                        if ix >= n {
                            return Err(ModelError::CandidateOutOfRange { index: ix, n });
                        }
                    }
                }
                if triples.is_empty() {
                    return Ok(Tensor::empty_2d(1));
                }
                let h = phi.forward(x)?;
                let blocks = h.gather_triplet_rows(triples)?;
                Ok(head.forward(&blocks)?)
            }
            _ => Err(ModelError::VariantMismatch { expected: "s2g_k3" }),
        }
    }

    /// Parameters in declaration order.
    pub fn params(&self) -> Vec<&Tensor> {
        match &self.kind {
            ModelKind::Pair { phi, psi, .. } => {
                let mut p = phi.params();
                p.extend(psi.params());
                p
            }
            ModelKind::Triplet { phi, head } => {
                let mut p = phi.params();
                p.extend(head.params());
                p
            }
            ModelKind::Flat { net } => net.params(),
        }
    }

    /// Mutable views of the parameter buffers, declaration order.
    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        match &mut self.kind {
            ModelKind::Pair { phi, psi, .. } => {
                let mut p: Vec<&mut Tensor> = match phi {
                    SetEncoder::DeepSets(ds) => ds_params_mut(ds),
                    SetEncoder::Siamese(mlp) => mlp_params_mut(mlp),
                };
                p.extend(mlp_params_mut(psi));
                p
            }
            ModelKind::Triplet { phi, head } => {
                let mut p = ds_params_mut(phi);
                for layer in &mut head.inner {
                    p.push(&mut layer.w1);
                    p.push(&mut layer.w2);
                    p.push(&mut layer.bias);
                    if let Some(a) = &mut layer.attention {
                        p.push(&mut a.f1);
                        p.push(&mut a.f2);
                    }
                }
                p.extend(mlp_params_mut(&mut head.head));
                p
            }
            ModelKind::Flat { net } => mlp_params_mut(net),
        }
    }

    /// Total number of scalar parameters.
    pub fn parameter_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Clone whose parameters are tracked leaves on `tape`.
    pub fn watched(&self, tape: &Tape) -> Model {
        let kind = match &self.kind {
            ModelKind::Pair {
                phi,
                full_basis,
                psi,
            } => ModelKind::Pair {
                phi: phi.watched(tape),
                full_basis: *full_basis,
                psi: psi.watched(tape),
            },
            ModelKind::Triplet { phi, head } => ModelKind::Triplet {
                phi: phi.watched(tape),
                head: head.watched(tape),
            },
            ModelKind::Flat { net } => ModelKind::Flat {
                net: net.watched(tape),
            },
        };
        Model {
            config: self.config.clone(),
            kind,
        }
    }

    /// Copies of all parameter buffers (for best-checkpoint snapshots).
    pub fn snapshot(&self) -> Vec<Vec<f64>> {
        self.params().iter().map(|p| p.data().to_vec()).collect()
    }

    /// Restores parameter buffers captured by [`Model::snapshot`].
    pub fn restore(&mut self, snapshot: &[Vec<f64>]) {
        let params = self.params_mut();
        assert_eq!(params.len(), snapshot.len(), "snapshot layout mismatch");
        for (p, s) in params.into_iter().zip(snapshot) {
            p.data_mut().copy_from_slice(s);
        }
    }

    // ── Checkpoint format ────────────────────────────────────────────
    //
    // magic "S2G1" | u32 LE header length | header JSON (ModelConfig) |
    // u64 LE parameter count | parameters as f64 LE, declaration order.

    pub fn save_checkpoint<W: Write>(&self, mut w: W) -> Result<(), ModelError> {
        let header = serde_json::to_vec(&self.config)
            .map_err(|e| ModelError::BadCheckpoint(e.to_string()))?;
        w.write_all(b"S2G1")?;
        w.write_all(&(header.len() as u32).to_le_bytes())?;
        w.write_all(&header)?;
        let count: u64 = self.parameter_count() as u64;
        w.write_all(&count.to_le_bytes())?;
        for p in self.params() {
            for &v in p.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn load_checkpoint<R: Read>(mut r: R) -> Result<Model, ModelError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != b"S2G1" {
            return Err(ModelError::BadCheckpoint("wrong magic".to_string()));
        }
        let mut len4 = [0u8; 4];
        r.read_exact(&mut len4)?;
        let mut header = vec![0u8; u32::from_le_bytes(len4) as usize];
        r.read_exact(&mut header)?;
        let config: ModelConfig = serde_json::from_slice(&header)
            .map_err(|e| ModelError::BadCheckpoint(e.to_string()))?;
        let mut count8 = [0u8; 8];
        r.read_exact(&mut count8)?;
        let count = u64::from_le_bytes(count8) as usize;
        let mut model = Model::new(config)?;
        if model.parameter_count() != count {
            return Err(ModelError::BadCheckpoint(format!(
                "parameter count mismatch: file has {count}, model needs {}",
                model.parameter_count()
            )));
        }
        let mut buf = [0u8; 8];
        for p in model.params_mut() {
            let data = p.data_mut();
            for v in data.iter_mut() {
                r.read_exact(&mut buf)?;
                *v = f64::from_le_bytes(buf);
            }
        }
        Ok(model)
    }

    pub fn save_checkpoint_file(&self, path: &std::path::Path) -> Result<(), ModelError> {
        let file = std::fs::File::create(path)?;
        self.save_checkpoint(std::io::BufWriter::new(file))
    }

    pub fn load_checkpoint_file(path: &std::path::Path) -> Result<Model, ModelError> {
        let file = std::fs::File::open(path)?;
        Model::load_checkpoint(std::io::BufReader::new(file))
    }
}

fn ds_params_mut(ds: &mut DeepSets) -> Vec<&mut Tensor> {
    let mut p = Vec::new();
    for layer in &mut ds.layers {
        p.push(&mut layer.w1);
        p.push(&mut layer.w2);
        p.push(&mut layer.bias);
        if let Some(a) = &mut layer.attention {
            p.push(&mut a.f1);
            p.push(&mut a.f2);
        }
    }
    p
}

fn mlp_params_mut(mlp: &mut Mlp) -> Vec<&mut Tensor> {
    let mut p = Vec::new();
    for layer in &mut mlp.layers {
        p.push(&mut layer.weight);
        p.push(&mut layer.bias);
    }
    p
}

// ── Desk-scale presets ───────────────────────────────────────────────
//
// Scaled-down versions of the published configurations that train in
// minutes on a CPU; the S2G and SIAM presets are parameter-matched within
// 10%.

pub mod presets {
    use super::*;

    pub fn delaunay_s2g(seed: u64) -> ModelConfig {
        ModelConfig {
            variant: ModelVariant::S2g,
            d_in: 2,
            phi_widths: vec![64, 64, 64],
            d1: 16,
            psi_widths: vec![64, 1],
            inner_widths: vec![],
            pooling: Pooling::Attention,
            knn_k: 0,
            max_n: 0,
            seed,
        }
    }

    pub fn delaunay_s2g_plus(seed: u64) -> ModelConfig {
        ModelConfig {
            variant: ModelVariant::S2gPlus,
            ..delaunay_s2g(seed)
        }
    }

    /// Widths chosen so the parameter count matches the S2G preset
    /// within 10%.
    pub fn delaunay_siam(seed: u64) -> ModelConfig {
        ModelConfig {
            variant: ModelVariant::Siam,
            d_in: 2,
            phi_widths: vec![96, 96, 96],
            d1: 16,
            psi_widths: vec![64, 1],
            inner_widths: vec![],
            pooling: Pooling::Mean,
            knn_k: 0,
            max_n: 0,
            seed,
        }
    }

    pub fn hull_s2g(seed: u64, knn_k: usize) -> ModelConfig {
        ModelConfig {
            variant: ModelVariant::S2gK3,
            d_in: 3,
            phi_widths: vec![64, 64],
            d1: 32,
            psi_widths: vec![64, 1],
            inner_widths: vec![32, 32],
            pooling: Pooling::Mean,
            knn_k,
            max_n: 0,
            seed,
        }
    }

    pub fn partition_s2g(seed: u64, d_in: usize) -> ModelConfig {
        ModelConfig {
            variant: ModelVariant::S2g,
            d_in,
            phi_widths: vec![64, 64, 64],
            d1: 16,
            psi_widths: vec![64, 1],
            inner_widths: vec![],
            pooling: Pooling::Attention,
            knn_k: 0,
            max_n: 0,
            seed,
        }
    }

    pub fn mlp_baseline(seed: u64, d_in: usize, max_n: usize) -> ModelConfig {
        ModelConfig {
            variant: ModelVariant::MlpBaseline,
            d_in,
            phi_widths: vec![128, 128],
            d1: 0,
            psi_widths: vec![1],
            inner_widths: vec![],
            pooling: Pooling::Mean,
            knn_k: 0,
            max_n,
            seed,
        }
    }
}
