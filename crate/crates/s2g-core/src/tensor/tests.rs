use std::sync::Arc;

use proptest::prelude::*;
use rand::Rng;

use super::*;
use crate::rng::rng_from_seed;

fn t2(rows: usize, cols: usize, data: &[f64]) -> Tensor {
    Tensor::new(data.to_vec(), &[rows, cols]).unwrap()
}

fn random_tensor(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = rng_from_seed(seed);
    let len = shape.iter().product();
    let data = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::new(data, shape).unwrap()
}

fn assert_close(actual: &[f64], expected: &[f64], tol: f64) {
    assert_eq!(actual.len(), expected.len());
    for (i, (&a, &e)) in actual.iter().zip(expected).enumerate() {
        assert!(
            (a - e).abs() <= tol,
            "index {i}: {a} vs {e} (tol {tol})"
        );
    }
}

#[test]
fn matmul_identity_passes_through() {
    let eye = t2(2, 2, &[1.0, 0.0, 0.0, 1.0]);
    let v = t2(2, 1, &[3.0, 7.0]);
    let out = eye.matmul(&v).unwrap();
    assert_eq!(out.data(), &[3.0, 7.0]);
}

#[test]
fn matmul_forced_arithmetic() {
    let a = t2(2, 2, &[1.0, 2.0, 3.0, 4.0]);
    let b = t2(2, 1, &[1.0, 1.0]);
    let out = a.matmul(&b).unwrap();
    assert_eq!(out.data(), &[3.0, 7.0]);
}

#[test]
fn matmul_rejects_mismatched_inner_extents() {
    let a = random_tensor(&[2, 3], 1);
    let b = random_tensor(&[2, 3], 2);
    let err = a.matmul(&b).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("[2, 3]"), "error should name both shapes: {msg}");
}

#[test]
fn matmul_matches_naive_triple_loop_exactly() {
    for seed in 0..20u64 {
        let a = random_tensor(&[4, 4], seed);
        let b = random_tensor(&[4, 4], seed + 100);
        let fast = a.matmul(&b).unwrap();
        let (ad, bd) = (a.data(), b.data());
        for i in 0..4 {
            for j in 0..4 {
                let mut s = 0.0;
                for l in 0..4 {
                    s += ad[i * 4 + l] * bd[l * 4 + j];
                }
                assert_eq!(fast.at(&[i, j]), s, "seed {seed} entry ({i},{j})");
            }
        }
    }
}

#[test]
fn activation_values() {
    let x = Tensor::new(vec![-1.0, 0.0, 2.0], &[3]).unwrap();
    assert_eq!(x.relu().unwrap().data(), &[0.0, 0.0, 2.0]);
    assert_eq!(Tensor::new(vec![0.0], &[1]).unwrap().tanh().unwrap().data(), &[0.0]);
    assert_eq!(
        Tensor::new(vec![0.0], &[1]).unwrap().sigmoid().unwrap().data(),
        &[0.5]
    );
}

#[test]
fn elementwise_shape_mismatch_is_rejected() {
    let a = random_tensor(&[2, 2], 3);
    let b = random_tensor(&[4], 4);
    assert!(matches!(
        a.add(&b),
        Err(TensorError::ShapeMismatch { .. })
    ));
}

#[test]
fn reduce_examples() {
    let x = t2(2, 2, &[1.0, 2.0, 3.0, 4.0]);
    assert_eq!(x.reduce(ReduceOp::Sum, 0).unwrap().data(), &[4.0, 6.0]);

    let m = t2(1, 2, &[2.0, 4.0]);
    assert_eq!(m.reduce(ReduceOp::Mean, 1).unwrap().data(), &[3.0]);

    let mx = t2(2, 2, &[1.0, 5.0, 7.0, 2.0]);
    assert_eq!(mx.reduce(ReduceOp::Max, 1).unwrap().data(), &[5.0, 7.0]);

    assert!(matches!(
        x.reduce(ReduceOp::Sum, 2),
        Err(TensorError::AxisOutOfRange { axis: 2, rank: 2 })
    ));
}

#[test]
fn reduce_max_ties_break_to_lowest_index() {
    let x = t2(1, 3, &[4.0, 4.0, 1.0]);
    let tape = Tape::new();
    let xt = tape.watch(&x);
    let m = xt.reduce(ReduceOp::Max, 1).unwrap();
    m.sum_all().unwrap().backward().unwrap();
    assert_eq!(xt.grad().unwrap(), vec![1.0, 0.0, 0.0]);
}

#[test]
fn concat_examples() {
    let a = t2(1, 2, &[1.0, 2.0]);
    let b = t2(1, 1, &[3.0]);
    let out = concat_features(&[&a, &b]).unwrap();
    assert_eq!(out.shape(), &[1, 3]);
    assert_eq!(out.data(), &[1.0, 2.0, 3.0]);

    let single = concat_features(&[&a]).unwrap();
    assert_eq!(single.data(), a.data());

    let bad = random_tensor(&[3, 1], 5);
    assert!(concat_features(&[&a, &bad]).is_err());
    assert!(matches!(concat_features(&[]), Err(TensorError::EmptyConcat)));
}

#[test]
fn softmax_examples() {
    let sym = t2(1, 2, &[0.0, 0.0]).softmax_rows().unwrap();
    assert_close(sym.data(), &[0.5, 0.5], 1e-15);

    let big = t2(1, 2, &[1000.0, 1000.0]).softmax_rows().unwrap();
    assert_close(big.data(), &[0.5, 0.5], 1e-15);

    let closed = t2(1, 2, &[0.0, 3.0f64.ln()]).softmax_rows().unwrap();
    assert_close(closed.data(), &[0.25, 0.75], 1e-12);

    assert!(matches!(
        t2(1, 2, &[f64::NAN, 0.0]).softmax_rows(),
        Err(TensorError::NumericError(_))
    ));
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one_and_shift_invariant(
        rows in 1usize..5,
        cols in 1usize..6,
        seed in 0u64..1000,
        shift in -50.0f64..50.0,
    ) {
        let x = random_tensor(&[rows, cols], seed);
        let s = x.softmax_rows().unwrap();
        for r in 0..rows {
            let total: f64 = (0..cols).map(|c| s.at(&[r, c])).sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
        }
        // adding a constant to one row leaves its softmax unchanged
        let mut shifted = x.data().to_vec();
        for c in 0..cols {
            shifted[c] += shift;
        }
        let s2 = Tensor::new(shifted, &[rows, cols]).unwrap().softmax_rows().unwrap();
        for c in 0..cols {
            prop_assert!((s.at(&[0, c]) - s2.at(&[0, c])).abs() < 1e-12);
        }
    }

    #[test]
    fn concat_slices_recover_bit_exactly(
        rows in 1usize..4,
        w1 in 1usize..4,
        w2 in 1usize..4,
        seed in 0u64..1000,
    ) {
        let a = random_tensor(&[rows, w1], seed);
        let b = random_tensor(&[rows, w2], seed + 7);
        let out = concat_features(&[&a, &b]).unwrap();
        for r in 0..rows {
            for c in 0..w1 {
                prop_assert_eq!(out.at(&[r, c]), a.at(&[r, c]));
            }
            for c in 0..w2 {
                prop_assert_eq!(out.at(&[r, w1 + c]), b.at(&[r, c]));
            }
        }
    }
}

#[test]
fn backward_square_sum() {
    let tape = Tape::new();
    let x = tape.watch(&Tensor::new(vec![1.0, 2.0], &[2]).unwrap());
    let y = x.mul(&x).unwrap().sum_all().unwrap();
    y.backward().unwrap();
    assert_eq!(x.grad().unwrap(), vec![2.0, 4.0]);
}

#[test]
fn backward_unused_leaf_has_zero_grad() {
    let tape = Tape::new();
    let x = tape.watch(&Tensor::new(vec![1.0, 2.0], &[2]).unwrap());
    let unused = tape.watch(&Tensor::new(vec![5.0], &[1]).unwrap());
    x.sum_all().unwrap().backward().unwrap();
    assert_eq!(unused.grad().unwrap(), vec![0.0]);
}

#[test]
fn backward_rejects_non_scalar_root_and_reuse() {
    let tape = Tape::new();
    let x = tape.watch(&random_tensor(&[2, 2], 9));
    let y = x.scale(2.0).unwrap();
    assert!(matches!(y.backward(), Err(TensorError::NonScalarRoot(_))));
    let s = y.sum_all().unwrap();
    s.backward().unwrap();
    assert!(matches!(s.backward(), Err(TensorError::TapeConsumed)));
}

#[test]
fn backward_untracked_root_errors() {
    let x = random_tensor(&[2], 1);
    assert!(matches!(x.sum_all().unwrap().backward(), Err(TensorError::NotTracked)));
}

#[test]
fn cross_tape_operands_are_rejected() {
    let t1 = Tape::new();
    let t2 = Tape::new();
    let a = t1.watch(&random_tensor(&[2], 1));
    let b = t2.watch(&random_tensor(&[2], 2));
    assert!(matches!(a.add(&b), Err(TensorError::CrossTape)));
}

#[test]
fn backward_matmul_matches_finite_differences() {
    let b = random_tensor(&[3, 2], 11);
    let worst = finite_difference_check(
        |a| a.matmul(&b)?.sum_all(),
        &random_tensor(&[2, 3], 12),
        1e-5,
    )
    .unwrap();
    assert!(worst < 1e-9, "matmul gradient error {worst}");
}

#[test]
fn backward_diamond_accumulates_both_paths() {
    // One leaf feeds two paths: y = sum(relu(x) ∘ x) + sum(x · 3)
    let f = |x: &Tensor| {
        let left = x.relu()?.mul(x)?.sum_all()?;
        let right = x.scale(3.0)?.sum_all()?;
        left.add(&right)
    };
    let worst = finite_difference_check(f, &random_tensor(&[6], 13), 1e-5).unwrap();
    assert!(worst < 1e-9, "diamond gradient error {worst}");
}

#[test]
fn finite_difference_check_on_linear_function() {
    let worst =
        finite_difference_check(|x| x.sum_all(), &random_tensor(&[5], 14), 1e-5).unwrap();
    assert!(worst < 1e-10);
}

#[test]
fn finite_difference_check_rejects_zero_eps() {
    let x = random_tensor(&[2], 15);
    assert!(matches!(
        finite_difference_check(|x| x.sum_all(), &x, 0.0),
        Err(TensorError::InvalidEpsilon(_))
    ));
}

#[test]
fn every_differentiable_op_passes_gradient_checks() {
    // Composite exercising each op kind per seed; tolerance per the
    // 64-bit central-difference contract.
    for seed in 0..100u64 {
        let x = random_tensor(&[3, 4], seed);
        let other = random_tensor(&[3, 4], seed + 500);
        let w = random_tensor(&[4, 2], seed + 900);
        let f = |x: &Tensor| -> Result<Tensor, TensorError> {
            let a = x.add(&other)?.tanh()?;
            let b = x.mul(&other)?.sigmoid()?;
            let c = a.sub(&b)?.relu()?;
            let d = c.matmul(&w)?;
            let e = d.transpose()?.softmax_rows()?;
            let f1 = e.reduce(ReduceOp::Mean, 1)?;
            let f2 = e.reduce(ReduceOp::Max, 1)?;
            let g = concat_features(&[&f1.reshape(&[2, 1])?, &f2.reshape(&[2, 1])?])?;
            let h = g.reduce(ReduceOp::Sum, 0)?.repeat_rows(3)?;
            let extra = e.reduce(ReduceOp::Max, 0)?.sum_all()?;
            let num = h.sum_all()?.add(&extra)?;
            let den = h.mul(&h)?.sum_all()?.scale(0.5)?;
            num.div(&den.add(&Tensor::scalar(2.0))?)?.scale(1.5)
        };
        let worst = finite_difference_check(f, &x, 1e-5).unwrap();
        assert!(worst < 1e-4, "seed {seed}: gradient error {worst}");
    }
}

#[test]
fn broadcast_pairs_concat_layout() {
    let x = t2(2, 1, &[3.0, 5.0]);
    let b = x.broadcast_pairs_concat().unwrap();
    assert_eq!(b.shape(), &[4, 2]);
    assert_eq!(b.data(), &[3.0, 3.0, 3.0, 5.0, 5.0, 3.0, 5.0, 5.0]);

    let wide = random_tensor(&[3, 2], 21);
    assert_eq!(wide.broadcast_pairs_concat().unwrap().shape(), &[9, 4]);
}

#[test]
fn broadcast_pairs_full_channels() {
    let x = t2(2, 1, &[1.0, 2.0]);
    let b = x.broadcast_pairs_full().unwrap();
    assert_eq!(b.shape(), &[4, 5]);
    for i in 0..2 {
        for j in 0..2 {
            let row = i * 2 + j;
            assert_eq!(b.at(&[row, 2]), 3.0, "channel 3 is the constant sum");
            let want_diag = if i == j { (i + 1) as f64 } else { 0.0 };
            assert_eq!(b.at(&[row, 3]), want_diag, "channel 4 diagonal-only");
            let want_diag_sum = if i == j { 3.0 } else { 0.0 };
            assert_eq!(b.at(&[row, 4]), want_diag_sum, "channel 5 diagonal sum");
        }
    }
    // channels 1-2 agree with the concat broadcast off-diagonal
    let concat = x.broadcast_pairs_concat().unwrap();
    for i in 0..2 {
        for j in 0..2 {
            if i == j {
                continue;
            }
            let row = i * 2 + j;
            assert_eq!(b.at(&[row, 0]), concat.at(&[row, 0]));
            assert_eq!(b.at(&[row, 1]), concat.at(&[row, 1]));
        }
    }
}

#[test]
fn pair_broadcast_gradients() {
    for seed in 0..10u64 {
        let x = random_tensor(&[3, 2], seed + 40);
        let w = random_tensor(&[4, 1], seed + 41);
        let wf = random_tensor(&[10, 1], seed + 42);
        let concat = finite_difference_check(
            |x| x.broadcast_pairs_concat()?.matmul(&w)?.tanh()?.sum_all(),
            &x,
            1e-5,
        )
        .unwrap();
        assert!(concat < 1e-6, "concat broadcast grad error {concat}");
        let full = finite_difference_check(
            |x| x.broadcast_pairs_full()?.matmul(&wf)?.tanh()?.sum_all(),
            &x,
            1e-5,
        )
        .unwrap();
        assert!(full < 1e-6, "full broadcast grad error {full}");
    }
}

#[test]
fn triplet_gather_and_errors() {
    let x = t2(3, 2, &[0.0, 1.0, 10.0, 11.0, 20.0, 21.0]);
    let trips = Arc::new(vec![[0usize, 1, 2]]);
    let g = x.gather_triplet_rows(&trips).unwrap();
    assert_eq!(g.shape(), &[3, 2]);
    assert_eq!(g.data(), &[0.0, 1.0, 10.0, 11.0, 20.0, 21.0]);

    let empty: Arc<Vec<[usize; 3]>> = Arc::new(Vec::new());
    assert_eq!(x.gather_triplet_rows(&empty).unwrap().len(), 0);

    let repeated = Arc::new(vec![[0usize, 0, 1]]);
    assert!(matches!(
        x.gather_triplet_rows(&repeated),
        Err(TensorError::RepeatedTripletIndex(_))
    ));
    let oob = Arc::new(vec![[0usize, 1, 7]]);
    assert!(matches!(
        x.gather_triplet_rows(&oob),
        Err(TensorError::TripletIndexOutOfRange { .. })
    ));
}

#[test]
fn segment_ops_and_gradients() {
    let x = t2(4, 1, &[1.0, 3.0, 10.0, 20.0]);
    let pooled = x.segment_pool_rows(2, true).unwrap();
    assert_eq!(pooled.data(), &[2.0, 2.0, 15.0, 15.0]);
    let summed = x.segment_pool_rows(2, false).unwrap();
    assert_eq!(summed.data(), &[4.0, 4.0, 30.0, 30.0]);
    let maxed = x.segment_max(2).unwrap();
    assert_eq!(maxed.data(), &[3.0, 20.0]);
    assert!(x.segment_pool_rows(3, true).is_err());

    for seed in 0..10u64 {
        let x = random_tensor(&[6, 3], seed + 60);
        let worst = finite_difference_check(
            |x| {
                let p = x.segment_pool_rows(3, true)?.tanh()?;
                let m = p.segment_max(3)?;
                m.mul(&m)?.sum_all()
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(worst < 1e-6, "segment grad error {worst}");
    }
}

#[test]
fn triplet_gather_gradient() {
    let trips = Arc::new(vec![[0usize, 2, 3], [1, 2, 0]]);
    for seed in 0..5u64 {
        let x = random_tensor(&[4, 2], seed + 70);
        let worst = finite_difference_check(
            |x| x.gather_triplet_rows(&trips)?.tanh()?.sum_all(),
            &x,
            1e-5,
        )
        .unwrap();
        assert!(worst < 1e-6, "gather grad error {worst}");
    }
}

#[test]
fn crop_and_repeat_rows() {
    let x = t2(3, 3, &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
    let c = x.crop2d(2, 2).unwrap();
    assert_eq!(c.data(), &[0.0, 1.0, 3.0, 4.0]);
    assert!(x.crop2d(4, 2).is_err());

    let bias = Tensor::new(vec![1.0, 2.0], &[2]).unwrap();
    let rep = bias.repeat_rows(3).unwrap();
    assert_eq!(rep.shape(), &[3, 2]);
    assert_eq!(rep.data(), &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);

    for seed in 0..5u64 {
        let x = random_tensor(&[3, 3], seed + 80);
        let worst = finite_difference_check(
            |x| x.crop2d(2, 3)?.sigmoid()?.sum_all(),
            &x,
            1e-5,
        )
        .unwrap();
        assert!(worst < 1e-6);
    }
}

#[test]
fn bce_masked_values_and_gradient() {
    // all-zero logits, full off-diagonal mask -> ln 2
    let z = Tensor::zeros(&[2, 2]);
    let y = Tensor::zeros(&[2, 2]);
    let mask = t2(2, 2, &[0.0, 1.0, 1.0, 0.0]);
    let loss = z.bce_with_logits_masked(&y, &mask).unwrap();
    assert!((loss.item() - std::f64::consts::LN_2).abs() < 1e-12);

    // saturated correct logits -> tiny loss; wrong saturated logit stays finite
    let z = t2(2, 2, &[0.0, 20.0, -20.0, 0.0]);
    let y = t2(2, 2, &[0.0, 1.0, 0.0, 0.0]);
    let loss = z.bce_with_logits_masked(&y, &mask).unwrap();
    assert!(loss.item() < 1e-8);
    let z = t2(2, 2, &[0.0, 100.0, 0.0, 0.0]);
    let loss = z.bce_with_logits_masked(&Tensor::zeros(&[2, 2]), &mask).unwrap();
    let want = (100.0 + std::f64::consts::LN_2) / 2.0;
    assert!((loss.item() - want).abs() < 1e-9, "stable form stays finite at z=100");

    let empty_mask = Tensor::zeros(&[2, 2]);
    assert!(matches!(
        z.bce_with_logits_masked(&y, &empty_mask),
        Err(TensorError::EmptyMask)
    ));

    for seed in 0..10u64 {
        let targets = t2(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let mask = t2(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let worst = finite_difference_check(
            |z| z.bce_with_logits_masked(&targets, &mask),
            &random_tensor(&[2, 2], seed + 90),
            1e-5,
        )
        .unwrap();
        assert!(worst < 1e-8, "bce grad error {worst}");
    }
}

#[test]
fn tensor_invariants() {
    assert!(Tensor::new(vec![1.0, 2.0], &[3]).is_err());
    assert!(Tensor::new(vec![], &[0]).is_err());
    let s = Tensor::scalar(4.5);
    assert_eq!(s.item(), 4.5);
    assert_eq!(s.shape(), &[] as &[usize]);

    let x = random_tensor(&[2, 3, 4], 99);
    assert_eq!(x.len(), 24);
    assert_eq!(x.at(&[1, 2, 3]), x.data()[23]);
}
