//! Forward tensor operations with tape recording.
//!
//! Every op computes its result eagerly; when an operand is tracked, the
//! matching backward rule is pushed onto that operand's tape. Binary ops
//! require equal shapes — broadcasts are explicit ops (`repeat_rows`,
//! the pair/triplet broadcasts).

use std::sync::Arc;

use super::tape::{matmul_acc, sigmoid, BackOp, Src};
use super::{as_matrix, Tape, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceOp {
    Sum,
    Mean,
    Max,
}

/// Resolves the single tape shared by the tracked operands, if any.
fn common_tape(inputs: &[&Tensor]) -> Result<Option<Tape>, TensorError> {
    let mut found: Option<Tape> = None;
    for t in inputs {
        if let Some((tape, _)) = &t.node {
            match &found {
                None => found = Some(tape.clone()),
                Some(existing) if existing.same_tape(tape) => {}
                Some(_) => return Err(TensorError::CrossTape),
            }
        }
    }
    Ok(found)
}

fn record(
    inputs: &[&Tensor],
    data: Vec<f64>,
    shape: Vec<usize>,
    op: impl FnOnce(&[f64]) -> BackOp,
) -> Result<Tensor, TensorError> {
    let tape = common_tape(inputs)?;
    let out = Tensor {
        shape,
        data: Arc::new(data),
        node: None,
    };
    match tape {
        None => Ok(out),
        Some(tape) => {
            let id = tape.push(out.len(), op(&out.data));
            Ok(out.with_node(&tape, id))
        }
    }
}

fn check_same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<(), TensorError> {
    if a.shape() != b.shape() {
        return Err(TensorError::ShapeMismatch {
            op,
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    Ok(())
}

impl Tensor {
    pub fn add(&self, other: &Tensor) -> Result<Tensor, TensorError> {
        check_same_shape("add", self, other)?;
        let data = self
            .data()
            .iter()
            .zip(other.data())
            .map(|(&a, &b)| a + b)
            .collect();
        record(&[self, other], data, self.shape().to_vec(), |_| BackOp::Add {
            a: Src::of(self),
            b: Src::of(other),
        })
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor, TensorError> {
        check_same_shape("sub", self, other)?;
        let data = self
            .data()
            .iter()
            .zip(other.data())
            .map(|(&a, &b)| a - b)
            .collect();
        record(&[self, other], data, self.shape().to_vec(), |_| BackOp::Sub {
            a: Src::of(self),
            b: Src::of(other),
        })
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor, TensorError> {
        check_same_shape("mul", self, other)?;
        let data = self
            .data()
            .iter()
            .zip(other.data())
            .map(|(&a, &b)| a * b)
            .collect();
        record(&[self, other], data, self.shape().to_vec(), |_| BackOp::Mul {
            a: Src::of(self),
            b: Src::of(other),
        })
    }

    pub fn div(&self, other: &Tensor) -> Result<Tensor, TensorError> {
        check_same_shape("div", self, other)?;
        let data: Vec<f64> = self
            .data()
            .iter()
            .zip(other.data())
            .map(|(&a, &b)| a / b)
            .collect();
        record(&[self, other], data, self.shape().to_vec(), |out| BackOp::Div {
            a: Src::of(self),
            b: Src::of(other),
            out: Arc::new(out.to_vec()),
        })
    }

    /// Multiplies every entry by a constant.
    pub fn scale(&self, c: f64) -> Result<Tensor, TensorError> {
        let data = self.data().iter().map(|&a| a * c).collect();
        record(&[self], data, self.shape().to_vec(), |_| BackOp::Scale {
            a: Src::of(self),
            c,
        })
    }

    /// ReLU with subgradient 0 at the kink.
    pub fn relu(&self) -> Result<Tensor, TensorError> {
        let data = self.data().iter().map(|&a| a.max(0.0)).collect();
        record(&[self], data, self.shape().to_vec(), |out| BackOp::Relu {
            a: Src::of(self),
            out: Arc::new(out.to_vec()),
        })
    }

    pub fn tanh(&self) -> Result<Tensor, TensorError> {
        let data = self.data().iter().map(|&a| a.tanh()).collect();
        record(&[self], data, self.shape().to_vec(), |out| BackOp::Tanh {
            a: Src::of(self),
            out: Arc::new(out.to_vec()),
        })
    }

    pub fn sigmoid(&self) -> Result<Tensor, TensorError> {
        let data = self.data().iter().map(|&a| sigmoid(a)).collect();
        record(&[self], data, self.shape().to_vec(), |out| BackOp::Sigmoid {
            a: Src::of(self),
            out: Arc::new(out.to_vec()),
        })
    }

    /// Matrix product of two 2D tensors with matching inner extents.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor, TensorError> {
        let (m, k) = as_matrix(self.shape())?;
        let (k2, p) = as_matrix(other.shape())?;
        if k != k2 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                left: self.shape().to_vec(),
                right: other.shape().to_vec(),
            });
        }
        let mut data = vec![0.0; m * p];
        matmul_acc(self.data(), other.data(), m, k, p, &mut data);
        record(&[self, other], data, vec![m, p], |_| BackOp::Matmul {
            a: Src::of(self),
            b: Src::of(other),
            m,
            k,
            p,
        })
    }

    pub fn transpose(&self) -> Result<Tensor, TensorError> {
        let (rows, cols) = as_matrix(self.shape())?;
        let src = self.data();
        let mut data = vec![0.0; rows * cols];
        for i in 0..rows {
            for j in 0..cols {
                data[j * rows + i] = src[i * cols + j];
            }
        }
        record(&[self], data, vec![cols, rows], |_| BackOp::Transpose {
            a: Src::of(self),
            rows,
            cols,
        })
    }

    /// Reduces one axis away; `Max` breaks ties toward the lowest index.
    pub fn reduce(&self, op: ReduceOp, axis: usize) -> Result<Tensor, TensorError> {
        let rank = self.shape().len();
        if axis >= rank {
            return Err(TensorError::AxisOutOfRange { axis, rank });
        }
        let in_shape = self.shape().to_vec();
        let axis_len = in_shape[axis];
        let inner: usize = in_shape[axis + 1..].iter().product();
        let outer: usize = in_shape[..axis].iter().product();
        let mut out_shape = in_shape.clone();
        out_shape.remove(axis);
        let src = self.data();
        let out_len = outer * inner;
        let mut data = vec![0.0; out_len];
        let mut argmax = vec![0usize; if op == ReduceOp::Max { out_len } else { 0 }];
        for o in 0..outer {
            for i in 0..inner {
                let mut best = f64::NEG_INFINITY;
                let mut best_at = 0usize;
                let mut total = 0.0;
                for a in 0..axis_len {
                    let idx = (o * axis_len + a) * inner + i;
                    let v = src[idx];
                    total += v;
                    if v > best {
                        best = v;
                        best_at = idx;
                    }
                }
                data[o * inner + i] = match op {
                    ReduceOp::Sum => total,
                    ReduceOp::Mean => total / axis_len as f64,
                    ReduceOp::Max => best,
                };
                if op == ReduceOp::Max {
                    argmax[o * inner + i] = best_at;
                }
            }
        }
        record(&[self], data, out_shape, |_| match op {
            ReduceOp::Sum => BackOp::SumAxis {
                a: Src::of(self),
                axis,
                in_shape,
            },
            ReduceOp::Mean => BackOp::MeanAxis {
                a: Src::of(self),
                axis,
                in_shape,
            },
            ReduceOp::Max => BackOp::MaxAxis {
                a: Src::of(self),
                argmax,
            },
        })
    }

    /// Sum of every entry as a rank-0 scalar.
    pub fn sum_all(&self) -> Result<Tensor, TensorError> {
        let total: f64 = self.data().iter().sum();
        record(&[self], vec![total], Vec::new(), |_| BackOp::SumAll {
            a: Src::of(self),
        })
    }

    /// Broadcasts a rank-1 tensor of width `d` to an `n`×`d` matrix.
    pub fn repeat_rows(&self, n: usize) -> Result<Tensor, TensorError> {
        let d = match self.shape() {
            [d] => *d,
            other => return Err(TensorError::NotAMatrix(other.to_vec())),
        };
        let mut data = Vec::with_capacity(n * d);
        for _ in 0..n {
            data.extend_from_slice(self.data());
        }
        record(&[self], data, vec![n, d], |_| BackOp::RepeatRows {
            a: Src::of(self),
            n,
            d,
        })
    }

    /// Reinterprets the buffer under a new shape without copying.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor, TensorError> {
        if shape.iter().any(|&e| e == 0) {
            return Err(TensorError::EmptyExtent(shape.to_vec()));
        }
        let expect: usize = shape.iter().product();
        if expect != self.len() {
            return Err(TensorError::ShapeLenMismatch {
                shape: shape.to_vec(),
                len: self.len(),
            });
        }
        let mut out = self.clone();
        out.shape = shape.to_vec();
        Ok(out)
    }

    /// Row-wise softmax of a matrix, computed with max-subtraction.
    pub fn softmax_rows(&self) -> Result<Tensor, TensorError> {
        let (rows, cols) = as_matrix(self.shape())?;
        if self.data().iter().any(|v| v.is_nan()) {
            return Err(TensorError::NumericError("softmax_rows"));
        }
        let src = self.data();
        let mut data = vec![0.0; rows * cols];
        for r in 0..rows {
            let row = &src[r * cols..(r + 1) * cols];
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let out = &mut data[r * cols..(r + 1) * cols];
            let mut total = 0.0;
            for (o, &v) in out.iter_mut().zip(row) {
                *o = (v - mx).exp();
                total += *o;
            }
            for o in out.iter_mut() {
                *o /= total;
            }
        }
        record(&[self], data, vec![rows, cols], |out| BackOp::SoftmaxRows {
            a: Src::of(self),
            rows,
            cols,
            out: Arc::new(out.to_vec()),
        })
    }

    /// Mean binary cross-entropy with logits over entries with nonzero mask.
    ///
    /// Uses the stable form `max(z,0) − z·y + ln(1+exp(−|z|))`; gradients
    /// flow to the logits only, so targets and mask act as constants.
    pub fn bce_with_logits_masked(
        &self,
        targets: &Tensor,
        mask: &Tensor,
    ) -> Result<Tensor, TensorError> {
        check_same_shape("bce_with_logits", self, targets)?;
        check_same_shape("bce_with_logits", self, mask)?;
        let count: f64 = mask.data().iter().sum();
        if count <= 0.0 {
            return Err(TensorError::EmptyMask);
        }
        let mut total = 0.0;
        for ((&z, &y), &m) in self.data().iter().zip(targets.data()).zip(mask.data()) {
            if m != 0.0 {
                total += m * (z.max(0.0) - z * y + (-z.abs()).exp().ln_1p());
            }
        }
        record(&[self], vec![total / count], Vec::new(), |_| BackOp::BceMasked {
            logits: Src::of(self),
            targets: targets.data_arc(),
            mask: mask.data_arc(),
            inv_count: 1.0 / count,
        })
    }

    /// Lifts per-element features `n`×`d` to ordered-pair features
    /// `n²`×`2d`, row `(i·n+j)` holding `[x_i, x_j]`.
    pub fn broadcast_pairs_concat(&self) -> Result<Tensor, TensorError> {
        let (n, d) = as_matrix(self.shape())?;
        let src = self.data();
        let mut data = vec![0.0; n * n * 2 * d];
        for i in 0..n {
            for j in 0..n {
                let row = (i * n + j) * 2 * d;
                data[row..row + d].copy_from_slice(&src[i * d..(i + 1) * d]);
                data[row + d..row + 2 * d].copy_from_slice(&src[j * d..(j + 1) * d]);
            }
        }
        record(&[self], data, vec![n * n, 2 * d], |_| BackOp::PairsConcat {
            a: Src::of(self),
            n,
            d,
        })
    }

    /// Full five-operator equivariant lift `n`×`d` → `n²`×`5d`.
    ///
    /// Per input feature: x_i broadcast, x_j broadcast, column sum, diagonal
    /// x_i, diagonal column sum (zero off-diagonal for the last two).
    pub fn broadcast_pairs_full(&self) -> Result<Tensor, TensorError> {
        let (n, d) = as_matrix(self.shape())?;
        let src = self.data();
        let mut col_sum = vec![0.0; d];
        for i in 0..n {
            for c in 0..d {
                col_sum[c] += src[i * d + c];
            }
        }
        let width = 5 * d;
        let mut data = vec![0.0; n * n * width];
        for i in 0..n {
            for j in 0..n {
                let row = (i * n + j) * width;
                data[row..row + d].copy_from_slice(&src[i * d..(i + 1) * d]);
                data[row + d..row + 2 * d].copy_from_slice(&src[j * d..(j + 1) * d]);
                data[row + 2 * d..row + 3 * d].copy_from_slice(&col_sum);
                if i == j {
                    data[row + 3 * d..row + 4 * d].copy_from_slice(&src[i * d..(i + 1) * d]);
                    data[row + 4 * d..row + 5 * d].copy_from_slice(&col_sum);
                }
            }
        }
        record(&[self], data, vec![n * n, width], |_| BackOp::PairsFull {
            a: Src::of(self),
            n,
            d,
        })
    }

    /// Stacks the three feature rows of each candidate triplet into a
    /// `3T`×`d` matrix (rows of triplet `t` at `3t..3t+3`). Never allocates
    /// anything cubic in `n`.
    pub fn gather_triplet_rows(
        &self,
        triplets: &Arc<Vec<[usize; 3]>>,
    ) -> Result<Tensor, TensorError> {
        let (n, d) = as_matrix(self.shape())?;
        for trip in triplets.iter() {
            if trip[0] == trip[1] || trip[0] == trip[2] || trip[1] == trip[2] {
                return Err(TensorError::RepeatedTripletIndex(*trip));
            }
            for &ix in trip {
                if ix >= n {
                    return Err(TensorError::TripletIndexOutOfRange { index: ix, n });
                }
            }
        }
        let src = self.data();
        let rows = 3 * triplets.len().max(0);
        let mut data = vec![0.0; rows * d];
        for (t, trip) in triplets.iter().enumerate() {
            for (r, &src_row) in trip.iter().enumerate() {
                let dst = (3 * t + r) * d;
                data[dst..dst + d].copy_from_slice(&src[src_row * d..(src_row + 1) * d]);
            }
        }
        if triplets.is_empty() {
            // Empty candidate set produces an empty, untracked result.
            return Ok(Tensor {
                shape: vec![0, d],
                data: Arc::new(Vec::new()),
                node: None,
            });
        }
        record(&[self], data, vec![rows, d], |_| BackOp::GatherTriplets {
            a: Src::of(self),
            triplets: Arc::clone(triplets),
            d,
        })
    }

    /// Pools rows within consecutive segments of length `seg` and writes the
    /// pooled value back to every row of the segment.
    pub fn segment_pool_rows(&self, seg: usize, mean: bool) -> Result<Tensor, TensorError> {
        let (rows, d) = as_matrix(self.shape())?;
        if seg == 0 || rows % seg != 0 {
            return Err(TensorError::SegmentMismatch { rows, seg });
        }
        let src = self.data();
        let mut data = vec![0.0; rows * d];
        for group in 0..rows / seg {
            for c in 0..d {
                let mut total = 0.0;
                for r in 0..seg {
                    total += src[(group * seg + r) * d + c];
                }
                if mean {
                    total /= seg as f64;
                }
                for r in 0..seg {
                    data[(group * seg + r) * d + c] = total;
                }
            }
        }
        record(&[self], data, vec![rows, d], |_| BackOp::SegmentPool {
            a: Src::of(self),
            seg,
            rows,
            d,
            mean,
        })
    }

    /// Max over each consecutive segment of `seg` rows; ties break to the
    /// lowest row index.
    pub fn segment_max(&self, seg: usize) -> Result<Tensor, TensorError> {
        let (rows, d) = as_matrix(self.shape())?;
        if seg == 0 || rows % seg != 0 {
            return Err(TensorError::SegmentMismatch { rows, seg });
        }
        let groups = rows / seg;
        let src = self.data();
        let mut data = vec![0.0; groups * d];
        let mut argmax = vec![0usize; groups * d];
        for group in 0..groups {
            for c in 0..d {
                let mut best = f64::NEG_INFINITY;
                let mut best_at = 0usize;
                for r in 0..seg {
                    let idx = (group * seg + r) * d + c;
                    if src[idx] > best {
                        best = src[idx];
                        best_at = idx;
                    }
                }
                data[group * d + c] = best;
                argmax[group * d + c] = best_at;
            }
        }
        record(&[self], data, vec![groups, d], |_| BackOp::SegmentMax {
            a: Src::of(self),
            argmax,
        })
    }

    /// Appends zero rows until the matrix has `total_rows` rows.
    pub fn pad_rows(&self, total_rows: usize) -> Result<Tensor, TensorError> {
        let (rows, cols) = as_matrix(self.shape())?;
        if total_rows < rows {
            return Err(TensorError::CropOutOfRange {
                rows: total_rows,
                cols,
                in_rows: rows,
                in_cols: cols,
            });
        }
        let mut data = vec![0.0; total_rows * cols];
        data[..rows * cols].copy_from_slice(self.data());
        record(&[self], data, vec![total_rows, cols], |_| BackOp::PadRows {
            a: Src::of(self),
            rows,
            cols,
        })
    }

    /// Top-left `rows`×`cols` block of a matrix.
    pub fn crop2d(&self, rows: usize, cols: usize) -> Result<Tensor, TensorError> {
        let (in_rows, in_cols) = as_matrix(self.shape())?;
        if rows > in_rows || cols > in_cols || rows == 0 || cols == 0 {
            return Err(TensorError::CropOutOfRange {
                rows,
                cols,
                in_rows,
                in_cols,
            });
        }
        let src = self.data();
        let mut data = vec![0.0; rows * cols];
        for r in 0..rows {
            data[r * cols..(r + 1) * cols]
                .copy_from_slice(&src[r * in_cols..r * in_cols + cols]);
        }
        record(&[self], data, vec![rows, cols], |_| BackOp::Crop2d {
            a: Src::of(self),
            in_cols,
            rows,
            cols,
        })
    }
}

/// Concatenates tensors along the last axis; leading extents must match.
pub fn concat_features(parts: &[&Tensor]) -> Result<Tensor, TensorError> {
    if parts.is_empty() {
        return Err(TensorError::EmptyConcat);
    }
    let first = parts[0];
    let rank = first.shape().len();
    if rank == 0 {
        return Err(TensorError::NotAMatrix(Vec::new()));
    }
    let lead = &first.shape()[..rank - 1];
    for p in parts {
        if p.shape().len() != rank || &p.shape()[..rank - 1] != lead {
            return Err(TensorError::ShapeMismatch {
                op: "concat_features",
                left: first.shape().to_vec(),
                right: p.shape().to_vec(),
            });
        }
    }
    let rows: usize = lead.iter().product();
    let widths: Vec<usize> = parts.iter().map(|p| p.shape()[rank - 1]).collect();
    let total: usize = widths.iter().sum();
    let mut data = vec![0.0; rows * total];
    let mut start = 0;
    for (p, &w) in parts.iter().zip(&widths) {
        let src = p.data();
        for r in 0..rows {
            data[r * total + start..r * total + start + w]
                .copy_from_slice(&src[r * w..(r + 1) * w]);
        }
        start += w;
    }
    let mut out_shape = lead.to_vec();
    out_shape.push(total);
    record(parts, data, out_shape, |_| BackOp::ConcatLast {
        parts: parts.iter().map(|p| Src::of(p)).collect(),
        widths,
        rows,
    })
}
