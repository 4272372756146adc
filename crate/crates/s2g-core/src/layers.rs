//! Permutation-equivariant building blocks.
//!
//! A set lives in an `n`×`d` tensor, one element per row. The layers here
//! keep the row order meaningless: DeepSets layers mix each element with a
//! pooled set context, the broadcasting lifts turn element features into
//! pair or triplet features, and the row-wise MLP scores each pair/triplet
//! independently.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;
use thiserror::Error;

use crate::tensor::{Tape, Tensor, TensorError};

#[derive(Debug, Error)]
pub enum LayerError {
    #[error("set must contain at least one element")]
    EmptySet,
    #[error("attention pooling is not supported inside the triplet head")]
    AttentionInTripletHead,
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    Mean,
    Sum,
    Attention,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    None,
}

fn apply_activation(x: Tensor, act: Activation) -> Result<Tensor, TensorError> {
    match act {
        Activation::Relu => x.relu(),
        Activation::None => Ok(x),
    }
}

/// Uniform init in [−1/√fan_in, 1/√fan_in].
fn init_tensor(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let len: usize = shape.iter().product();
    let data = (0..len).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::new(data, shape).expect("valid init shape")
}

// ── Permutations ─────────────────────────────────────────────────────

/// A bijection σ of `[0, n)`; acting on a set matrix sends row `k` to
/// row `σ(k)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Permutation {
    map: Vec<usize>,
}

impl Permutation {
    pub fn new(map: Vec<usize>) -> Option<Self> {
        let n = map.len();
        let mut seen = vec![false; n];
        for &v in &map {
            if v >= n || seen[v] {
                return None;
            }
            seen[v] = true;
        }
        Some(Permutation { map })
    }

    pub fn identity(n: usize) -> Self {
        Permutation {
            map: (0..n).collect(),
        }
    }

    pub fn random(n: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut map: Vec<usize> = (0..n).collect();
        // Fisher-Yates
        for i in (1..n).rev() {
            let j = rng.random_range(0..=i);
            map.swap(i, j);
        }
        Permutation { map }
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn apply_index(&self, i: usize) -> usize {
        self.map[i]
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.map.len()];
        for (k, &v) in self.map.iter().enumerate() {
            inv[v] = k;
        }
        Permutation { map: inv }
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Permutation) -> Self {
        assert_eq!(self.len(), other.len());
        Permutation {
            map: (0..self.len()).map(|k| self.map[other.map[k]]).collect(),
        }
    }

    /// Row action on an `n`×`d` set matrix.
    pub fn apply_rows(&self, x: &Tensor) -> Tensor {
        let n = self.map.len();
        assert_eq!(x.shape()[0], n, "permutation size mismatch");
        let d = x.len() / n;
        let src = x.data();
        let mut data = vec![0.0; src.len()];
        for (k, &dst) in self.map.iter().enumerate() {
            data[dst * d..(dst + 1) * d].copy_from_slice(&src[k * d..(k + 1) * d]);
        }
        Tensor::new(data, x.shape()).expect("same shape")
    }

    /// Pair action on an `n`×`n` matrix: out[σ(i), σ(j)] = in[i, j].
    pub fn apply_square(&self, y: &Tensor) -> Tensor {
        let n = self.map.len();
        assert_eq!(y.shape(), &[n, n], "expected square matrix");
        let src = y.data();
        let mut data = vec![0.0; src.len()];
        for i in 0..n {
            for j in 0..n {
                data[self.map[i] * n + self.map[j]] = src[i * n + j];
            }
        }
        Tensor::new(data, &[n, n]).expect("same shape")
    }

    /// Pair action on `n²`×`w` pair features (row `i·n+j`).
    pub fn apply_pair_rows(&self, y: &Tensor) -> Tensor {
        let n = self.map.len();
        let w = y.shape()[1];
        assert_eq!(y.shape()[0], n * n, "expected n^2 pair rows");
        let src = y.data();
        let mut data = vec![0.0; src.len()];
        for i in 0..n {
            for j in 0..n {
                let from = (i * n + j) * w;
                let to = (self.map[i] * n + self.map[j]) * w;
                data[to..to + w].copy_from_slice(&src[from..from + w]);
            }
        }
        Tensor::new(data, y.shape()).expect("same shape")
    }

    /// Relabels a sorted triple.
    pub fn apply_triple(&self, t: [usize; 3]) -> [usize; 3] {
        let mut out = [self.map[t[0]], self.map[t[1]], self.map[t[2]]];
        out.sort_unstable();
        out
    }
}

// ── Attention pooling ────────────────────────────────────────────────

/// Self-attention context: softmax(tanh(X·f1)·(X·f2)ᵀ/√d_small)·X.
#[derive(Debug, Clone)]
pub struct AttentionPool {
    pub f1: Tensor,
    pub f2: Tensor,
    pub d_small: usize,
}

impl AttentionPool {
    pub fn new(d: usize, rng: &mut ChaCha8Rng) -> Self {
        let d_small = (d / 10).max(1);
        AttentionPool {
            f1: init_tensor(&[d, d_small], d, rng),
            f2: init_tensor(&[d, d_small], d, rng),
            d_small,
        }
    }

    pub fn params(&self) -> Vec<&Tensor> {
        vec![&self.f1, &self.f2]
    }

    pub fn watched(&self, tape: &Tape) -> Self {
        AttentionPool {
            f1: tape.watch(&self.f1),
            f2: tape.watch(&self.f2),
            d_small: self.d_small,
        }
    }
}

/// Attention-weighted context rows for a set; permutation-equivariant.
pub fn attention_pool(x: &Tensor, p: &AttentionPool) -> Result<Tensor, LayerError> {
    let q = x.matmul(&p.f1)?.tanh()?;
    let k = x.matmul(&p.f2)?;
    let scores = q
        .matmul(&k.transpose()?)?
        .scale(1.0 / (p.d_small as f64).sqrt())?;
    let weights = scores.softmax_rows()?;
    Ok(weights.matmul(x)?)
}

// ── DeepSets ─────────────────────────────────────────────────────────

/// One DeepSets layer: y = act(x·W1 + pool(x)·W2 + b) with the pooled
/// context replicated to all rows.
#[derive(Debug, Clone)]
pub struct DeepSetsLayer {
    pub w1: Tensor,
    pub w2: Tensor,
    pub bias: Tensor,
    pub pooling: Pooling,
    pub attention: Option<AttentionPool>,
    pub activation: Activation,
}

impl DeepSetsLayer {
    pub fn new(
        d_in: usize,
        d_out: usize,
        pooling: Pooling,
        activation: Activation,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let w1 = init_tensor(&[d_in, d_out], d_in, rng);
        let w2 = init_tensor(&[d_in, d_out], d_in, rng);
        let bias = init_tensor(&[d_out], d_in, rng);
        let attention = match pooling {
            Pooling::Attention => Some(AttentionPool::new(d_in, rng)),
            _ => None,
        };
        DeepSetsLayer {
            w1,
            w2,
            bias,
            pooling,
            attention,
            activation,
        }
    }

    pub fn d_in(&self) -> usize {
        self.w1.shape()[0]
    }

    pub fn d_out(&self) -> usize {
        self.w1.shape()[1]
    }

    /// Set-wide pooled context, one row per element.
    fn context(&self, x: &Tensor, n: usize) -> Result<Tensor, LayerError> {
        match self.pooling {
            Pooling::Mean => Ok(x.reduce(crate::tensor::ReduceOp::Mean, 0)?.repeat_rows(n)?),
            Pooling::Sum => Ok(x.reduce(crate::tensor::ReduceOp::Sum, 0)?.repeat_rows(n)?),
            Pooling::Attention => {
                let p = self.attention.as_ref().expect("attention params present");
                attention_pool(x, p)
            }
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor, LayerError> {
        let n = *x.shape().first().ok_or(LayerError::EmptySet)?;
        if n == 0 {
            return Err(LayerError::EmptySet);
        }
        let ctx = self.context(x, n)?;
        let y = x
            .matmul(&self.w1)?
            .add(&ctx.matmul(&self.w2)?)?
            .add(&self.bias.repeat_rows(n)?)?;
        Ok(apply_activation(y, self.activation)?)
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let mut p = vec![&self.w1, &self.w2, &self.bias];
        if let Some(a) = &self.attention {
            p.extend(a.params());
        }
        p
    }

    pub fn watched(&self, tape: &Tape) -> Self {
        DeepSetsLayer {
            w1: tape.watch(&self.w1),
            w2: tape.watch(&self.w2),
            bias: tape.watch(&self.bias),
            pooling: self.pooling,
            attention: self.attention.as_ref().map(|a| a.watched(tape)),
            activation: self.activation,
        }
    }
}

/// A stack of DeepSets layers with ReLU between layers and a linear last
/// layer.
#[derive(Debug, Clone)]
pub struct DeepSets {
    pub layers: Vec<DeepSetsLayer>,
}

impl DeepSets {
    pub fn new(d_in: usize, widths: &[usize], pooling: Pooling, rng: &mut ChaCha8Rng) -> Self {
        let mut layers = Vec::with_capacity(widths.len());
        let mut prev = d_in;
        for (i, &w) in widths.iter().enumerate() {
            let act = if i + 1 == widths.len() {
                Activation::None
            } else {
                Activation::Relu
            };
            layers.push(DeepSetsLayer::new(prev, w, pooling, act, rng));
            prev = w;
        }
        DeepSets { layers }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor, LayerError> {
        let mut h = x.clone();
        for layer in &self.layers {
            h = layer.forward(&h)?;
        }
        Ok(h)
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn watched(&self, tape: &Tape) -> Self {
        DeepSets {
            layers: self.layers.iter().map(|l| l.watched(tape)).collect(),
        }
    }
}

// ── Row-wise MLP ─────────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct MlpLayer {
    pub weight: Tensor,
    pub bias: Tensor,
    pub activation: Activation,
}

/// An MLP applied independently to each row of its input; serves as the
/// edge/triplet scorer ψ, the Siamese φ, and the flat baseline network.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<MlpLayer>,
}

impl Mlp {
    pub fn new(d_in: usize, widths: &[usize], rng: &mut ChaCha8Rng) -> Self {
        let mut layers = Vec::with_capacity(widths.len());
        let mut prev = d_in;
        for (i, &w) in widths.iter().enumerate() {
            let act = if i + 1 == widths.len() {
                Activation::None
            } else {
                Activation::Relu
            };
            layers.push(MlpLayer {
                weight: init_tensor(&[prev, w], prev, rng),
                bias: init_tensor(&[w], prev, rng),
                activation: act,
            });
            prev = w;
        }
        Mlp { layers }
    }

    pub fn d_in(&self) -> usize {
        self.layers[0].weight.shape()[0]
    }

    pub fn d_out(&self) -> usize {
        self.layers.last().expect("non-empty mlp").weight.shape()[1]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor, LayerError> {
        let rows = x.shape()[0];
        let mut h = x.clone();
        for layer in &self.layers {
            h = h
                .matmul(&layer.weight)?
                .add(&layer.bias.repeat_rows(rows)?)?;
            h = apply_activation(h, layer.activation)?;
        }
        Ok(h)
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.layers
            .iter()
            .flat_map(|l| vec![&l.weight, &l.bias])
            .collect()
    }

    pub fn watched(&self, tape: &Tape) -> Self {
        Mlp {
            layers: self
                .layers
                .iter()
                .map(|l| MlpLayer {
                    weight: tape.watch(&l.weight),
                    bias: tape.watch(&l.bias),
                    activation: l.activation,
                })
                .collect(),
        }
    }
}

// ── Broadcasting lifts (β) ───────────────────────────────────────────

/// Concat lift for pairs: row (i·n+j) of the result is [x_i, x_j].
pub fn broadcast_k2_concat(x: &Tensor) -> Result<Tensor, LayerError> {
    Ok(x.broadcast_pairs_concat()?)
}

/// Full five-operator equivariant lift for pairs.
pub fn broadcast_k2_full(x: &Tensor) -> Result<Tensor, LayerError> {
    Ok(x.broadcast_pairs_full()?)
}

/// Sparse triplet lift: stacks the three member rows of each candidate,
/// producing a `3T`×`d` matrix. Nothing cubic in `n` is allocated.
pub fn broadcast_k3_sparse(
    x: &Tensor,
    triplets: &Arc<Vec<[usize; 3]>>,
) -> Result<Tensor, LayerError> {
    Ok(x.gather_triplet_rows(triplets)?)
}

// ── Symmetric triplet head ───────────────────────────────────────────

/// Scores each triplet block through an order-invariant pipeline:
/// DeepSets layers pooled within each 3-row group, a max-pool over the
/// group, then a row-wise MLP down to one logit.
#[derive(Debug, Clone)]
pub struct TripletHead {
    pub inner: Vec<DeepSetsLayer>,
    pub head: Mlp,
}

impl TripletHead {
    pub fn new(
        d_in: usize,
        inner_widths: &[usize],
        head_widths: &[usize],
        pooling: Pooling,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self, LayerError> {
        if pooling == Pooling::Attention {
            return Err(LayerError::AttentionInTripletHead);
        }
        let mut inner = Vec::with_capacity(inner_widths.len());
        let mut prev = d_in;
        for (i, &w) in inner_widths.iter().enumerate() {
            let act = if i + 1 == inner_widths.len() {
                Activation::None
            } else {
                Activation::Relu
            };
            inner.push(DeepSetsLayer::new(prev, w, pooling, act, rng));
            prev = w;
        }
        let head = Mlp::new(prev, head_widths, rng);
        Ok(TripletHead { inner, head })
    }

    /// Scores `T` stacked triplet blocks (`3T`×`d`) to `T`×`1` logits.
    pub fn forward(&self, blocks: &Tensor) -> Result<Tensor, LayerError> {
        let rows = blocks.shape()[0];
        if rows == 0 || rows % 3 != 0 {
            return Err(LayerError::Tensor(TensorError::SegmentMismatch {
                rows,
                seg: 3,
            }));
        }
        let mut h = blocks.clone();
        for layer in &self.inner {
            let ctx = h.segment_pool_rows(3, layer.pooling == Pooling::Mean)?;
            h = h
                .matmul(&layer.w1)?
                .add(&ctx.matmul(&layer.w2)?)?
                .add(&layer.bias.repeat_rows(rows)?)?;
            h = apply_activation(h, layer.activation)?;
        }
        let pooled = h.segment_max(3)?;
        self.head.forward(&pooled)
    }

    /// Logit of a single 3-row block; exactly invariant (up to float
    /// summation order) under the 6 orderings of the rows.
    pub fn forward_single(&self, block: &Tensor) -> Result<f64, LayerError> {
        assert_eq!(block.shape()[0], 3, "triplet block must have 3 rows");
        Ok(self.forward(block)?.item())
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let mut p: Vec<&Tensor> = self.inner.iter().flat_map(|l| l.params()).collect();
        p.extend(self.head.params());
        p
    }

    pub fn watched(&self, tape: &Tape) -> Self {
        TripletHead {
            inner: self.inner.iter().map(|l| l.watched(tape)).collect(),
            head: self.head.watched(tape),
        }
    }
}

/// Applies `mlp` independently to each pair/triplet feature row.
pub fn edge_mlp_forward(features: &Tensor, mlp: &Mlp) -> Result<Tensor, LayerError> {
    if features.shape()[1] != mlp.d_in() {
        return Err(LayerError::Tensor(TensorError::ShapeMismatch {
            op: "edge_mlp",
            left: features.shape().to_vec(),
            right: vec![mlp.d_in(), mlp.d_out()],
        }));
    }
    mlp.forward(features)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use crate::tensor::finite_difference_check;

    fn random_set(n: usize, d: usize, seed: u64) -> Tensor {
        let mut rng = rng_from_seed(seed);
        let data = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor::new(data, &[n, d]).unwrap()
    }

    fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
        a.data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn permutation_basics() {
        assert!(Permutation::new(vec![0, 0, 1]).is_none());
        let p = Permutation::new(vec![2, 0, 1]).unwrap();
        let inv = p.inverse();
        assert_eq!(p.compose(&inv), Permutation::identity(3));
        assert_eq!(inv.compose(&p), Permutation::identity(3));

        let x = random_set(3, 2, 1);
        let px = p.apply_rows(&x);
        for k in 0..3 {
            for c in 0..2 {
                assert_eq!(px.at(&[p.apply_index(k), c]), x.at(&[k, c]));
            }
        }
    }

    #[test]
    fn deepsets_singleton_mean_pool_is_identity_context() {
        let mut rng = rng_from_seed(2);
        let layer = DeepSetsLayer::new(3, 2, Pooling::Mean, Activation::None, &mut rng);
        let x = random_set(1, 3, 3);
        let y = layer.forward(&x).unwrap();
        // pool of a singleton is itself: y = x·(W1+W2) + b
        let manual = x
            .matmul(&layer.w1.add(&layer.w2).unwrap())
            .unwrap()
            .add(&layer.bias.repeat_rows(1).unwrap())
            .unwrap();
        assert!(max_abs_diff(&y, &manual) < 1e-14);
    }

    #[test]
    fn deepsets_hand_example() {
        let mut rng = rng_from_seed(4);
        let mut layer = DeepSetsLayer::new(1, 1, Pooling::Mean, Activation::None, &mut rng);
        layer.w1 = Tensor::new(vec![1.0], &[1, 1]).unwrap();
        layer.w2 = Tensor::new(vec![1.0], &[1, 1]).unwrap();
        layer.bias = Tensor::new(vec![0.0], &[1]).unwrap();
        let x = Tensor::new(vec![1.0, 3.0], &[2, 1]).unwrap();
        let y = layer.forward(&x).unwrap();
        assert_eq!(y.data(), &[3.0, 5.0]);
    }

    #[test]
    fn deepsets_rejects_empty_set() {
        let mut rng = rng_from_seed(5);
        let layer = DeepSetsLayer::new(2, 2, Pooling::Sum, Activation::None, &mut rng);
        let empty = Tensor::scalar(0.0);
        assert!(matches!(layer.forward(&empty), Err(LayerError::EmptySet)));
    }

    #[test]
    fn deepsets_equivariance_all_poolings() {
        for (i, pooling) in [Pooling::Mean, Pooling::Sum, Pooling::Attention]
            .into_iter()
            .enumerate()
        {
            let mut rng = rng_from_seed(10 + i as u64);
            let layer = DeepSetsLayer::new(3, 4, pooling, Activation::Relu, &mut rng);
            for trial in 0..20u64 {
                let x = random_set(6, 3, 100 + trial);
                let sigma = Permutation::random(6, &mut rng);
                let lhs = layer.forward(&sigma.apply_rows(&x)).unwrap();
                let rhs = sigma.apply_rows(&layer.forward(&x).unwrap());
                assert!(
                    max_abs_diff(&lhs, &rhs) < 1e-10,
                    "pooling {pooling:?} trial {trial}"
                );
            }
        }
    }

    #[test]
    fn attention_pool_singleton_is_identity() {
        let mut rng = rng_from_seed(20);
        let p = AttentionPool::new(4, &mut rng);
        let x = random_set(1, 4, 21);
        let y = attention_pool(&x, &p).unwrap();
        assert!(max_abs_diff(&x, &y) < 1e-15);
    }

    #[test]
    fn attention_pool_zero_maps_give_column_means() {
        let p = AttentionPool {
            f1: Tensor::zeros(&[3, 1]),
            f2: Tensor::zeros(&[3, 1]),
            d_small: 1,
        };
        let x = random_set(5, 3, 22);
        let y = attention_pool(&x, &p).unwrap();
        let mean = x.reduce(crate::tensor::ReduceOp::Mean, 0).unwrap();
        for r in 0..5 {
            for c in 0..3 {
                assert!((y.at(&[r, c]) - mean.at(&[c])).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn attention_pool_equivariance() {
        let mut rng = rng_from_seed(23);
        let p = AttentionPool::new(3, &mut rng);
        for trial in 0..20u64 {
            let x = random_set(7, 3, 200 + trial);
            let sigma = Permutation::random(7, &mut rng);
            let lhs = attention_pool(&sigma.apply_rows(&x), &p).unwrap();
            let rhs = sigma.apply_rows(&attention_pool(&x, &p).unwrap());
            assert!(max_abs_diff(&lhs, &rhs) < 1e-10, "trial {trial}");
        }
    }

    #[test]
    fn broadcast_equivariance_as_index_relabeling() {
        // broadcast(σ·x)[i, j] == broadcast(x)[σ⁻¹(i), σ⁻¹(j)]
        let mut rng = rng_from_seed(30);
        for trial in 0..10u64 {
            let x = random_set(4, 2, 300 + trial);
            let sigma = Permutation::random(4, &mut rng);
            for full in [false, true] {
                let lift = |t: &Tensor| {
                    if full {
                        broadcast_k2_full(t).unwrap()
                    } else {
                        broadcast_k2_concat(t).unwrap()
                    }
                };
                let lhs = lift(&sigma.apply_rows(&x));
                let rhs = sigma.apply_pair_rows(&lift(&x));
                assert!(max_abs_diff(&lhs, &rhs) < 1e-12, "full={full} trial {trial}");
            }
        }
    }

    #[test]
    fn full_basis_channels_are_linearly_independent() {
        // Evaluate each channel on the 3 one-hot inputs (n=3, d=1) and check
        // the 5 flattened channel maps have numerical rank 5.
        let n = 3;
        let mut rows: Vec<Vec<f64>> = vec![Vec::new(); 5];
        for basis in 0..n {
            let mut data = vec![0.0; n];
            data[basis] = 1.0;
            let x = Tensor::new(data, &[n, 1]).unwrap();
            let b = x.broadcast_pairs_full().unwrap();
            for ch in 0..5 {
                for pair in 0..n * n {
                    rows[ch].push(b.at(&[pair, ch]));
                }
            }
        }
        // Gaussian elimination rank
        let mut m: Vec<Vec<f64>> = rows;
        let cols = m[0].len();
        let mut rank = 0;
        for col in 0..cols {
            if rank == m.len() {
                break;
            }
            let pivot = (rank..m.len()).find(|&r| m[r][col].abs() > 1e-9);
            if let Some(p) = pivot {
                m.swap(rank, p);
                let lead = m[rank][col];
                for r in 0..m.len() {
                    if r != rank && m[r][col].abs() > 0.0 {
                        let f = m[r][col] / lead;
                        for c in col..cols {
                            m[r][c] -= f * m[rank][c];
                        }
                    }
                }
                rank += 1;
            }
        }
        assert_eq!(rank, 5);
    }

    #[test]
    fn edge_mlp_identity_and_independence() {
        let identity = Mlp {
            layers: vec![MlpLayer {
                weight: Tensor::new(vec![1.0, 0.0, 0.0, 1.0], &[2, 2]).unwrap(),
                bias: Tensor::zeros(&[2]),
                activation: Activation::None,
            }],
        };
        let feats = random_set(5, 2, 40);
        let out = edge_mlp_forward(&feats, &identity).unwrap();
        assert!(max_abs_diff(&feats, &out) < 1e-15);

        // identical rows produce identical outputs
        let mut rng = rng_from_seed(41);
        let mlp = Mlp::new(2, &[3, 1], &mut rng);
        let row = [0.3, -0.7];
        let two = Tensor::new(vec![row[0], row[1], row[0], row[1]], &[2, 2]).unwrap();
        let out = mlp.forward(&two).unwrap();
        assert_eq!(out.at(&[0, 0]), out.at(&[1, 0]));

        // width mismatch is rejected
        assert!(edge_mlp_forward(&random_set(4, 3, 42), &mlp).is_err());
    }

    #[test]
    fn constant_set_collapses_through_concat_and_mlp() {
        let mut rng = rng_from_seed(43);
        let mlp = Mlp::new(4, &[5, 1], &mut rng);
        let x = Tensor::new(vec![vec![0.2, -0.4]; 3].concat(), &[3, 2]).unwrap();
        let b = broadcast_k2_concat(&x).unwrap();
        let out = mlp.forward(&b).unwrap();
        let first = out.at(&[0, 0]);
        for pair in 0..9 {
            assert_eq!(out.at(&[pair, 0]), first);
        }
    }

    #[test]
    fn triplet_head_is_s3_invariant() {
        let mut rng = rng_from_seed(50);
        let head = TripletHead::new(3, &[4, 4], &[5, 1], Pooling::Mean, &mut rng).unwrap();
        let block = random_set(3, 3, 51);
        let base = head.forward_single(&block).unwrap();
        let orders: [[usize; 3]; 6] = [
            [0, 1, 2],
            [0, 2, 1],
            [1, 0, 2],
            [1, 2, 0],
            [2, 0, 1],
            [2, 1, 0],
        ];
        for order in orders {
            let mut data = Vec::with_capacity(9);
            for &r in &order {
                data.extend_from_slice(&block.data()[r * 3..(r + 1) * 3]);
            }
            let reordered = Tensor::new(data, &[3, 3]).unwrap();
            let logit = head.forward_single(&reordered).unwrap();
            assert!(
                (logit - base).abs() < 1e-12,
                "order {order:?}: {logit} vs {base}"
            );
        }

        // identical rows still give a well-defined scalar
        let same = Tensor::new(vec![vec![0.1, 0.2, 0.3]; 3].concat(), &[3, 3]).unwrap();
        assert!(head.forward_single(&same).unwrap().is_finite());
    }

    #[test]
    fn triplet_head_matches_direct_reevaluation() {
        // Re-evaluate the definition with explicit per-row loops, no tensor
        // ops, and compare against the batched segment implementation.
        let mut rng = rng_from_seed(52);
        let head = TripletHead::new(2, &[3], &[4, 1], Pooling::Mean, &mut rng).unwrap();
        let block = random_set(3, 2, 53);

        let manual = {
            let mut rows: Vec<Vec<f64>> =
                (0..3).map(|r| block.data()[r * 2..(r + 1) * 2].to_vec()).collect();
            for layer in &head.inner {
                let d_in = layer.d_in();
                let d_out = layer.d_out();
                let mean: Vec<f64> = (0..d_in)
                    .map(|c| rows.iter().map(|r| r[c]).sum::<f64>() / 3.0)
                    .collect();
                let mut next = Vec::new();
                for r in &rows {
                    let mut out = vec![0.0; d_out];
                    for (j, o) in out.iter_mut().enumerate() {
                        let mut s = layer.bias.data()[j];
                        for c in 0..d_in {
                            s += r[c] * layer.w1.data()[c * d_out + j];
                            s += mean[c] * layer.w2.data()[c * d_out + j];
                        }
                        *o = if layer.activation == Activation::Relu {
                            s.max(0.0)
                        } else {
                            s
                        };
                    }
                    next.push(out);
                }
                rows = next;
            }
            let d = rows[0].len();
            let pooled: Vec<f64> = (0..d)
                .map(|c| rows.iter().map(|r| r[c]).fold(f64::NEG_INFINITY, f64::max))
                .collect();
            let mut h = pooled;
            for layer in &head.head.layers {
                let d_in = h.len();
                let d_out = layer.weight.shape()[1];
                let mut out = vec![0.0; d_out];
                for (j, o) in out.iter_mut().enumerate() {
                    let mut s = layer.bias.data()[j];
                    for c in 0..d_in {
                        s += h[c] * layer.weight.data()[c * d_out + j];
                    }
                    *o = if layer.activation == Activation::Relu {
                        s.max(0.0)
                    } else {
                        s
                    };
                }
                h = out;
            }
            h[0]
        };

        let batched = head.forward_single(&block).unwrap();
        assert!((batched - manual).abs() < 1e-12, "{batched} vs {manual}");
    }

    #[test]
    fn layer_gradients_match_finite_differences() {
        let mut rng = rng_from_seed(60);
        let layer = DeepSetsLayer::new(3, 4, Pooling::Attention, Activation::Relu, &mut rng);
        let head = TripletHead::new(3, &[4], &[4, 1], Pooling::Mean, &mut rng).unwrap();
        let trips = Arc::new(vec![[0usize, 1, 3], [2, 4, 1]]);
        for seed in 0..10u64 {
            let x = random_set(5, 3, 600 + seed);
            let e = finite_difference_check(
                |x| layer.forward(x).unwrap().sum_all(),
                &x,
                1e-5,
            )
            .unwrap();
            assert!(e < 1e-6, "deepsets layer grad {e}");

            let e = finite_difference_check(
                |x| {
                    let blocks = broadcast_k3_sparse(x, &trips).unwrap();
                    head.forward(&blocks).unwrap().sum_all()
                },
                &x,
                1e-5,
            )
            .unwrap();
            assert!(e < 1e-6, "triplet head grad {e}");
        }
    }
}
