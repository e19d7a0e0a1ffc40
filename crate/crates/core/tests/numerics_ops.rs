use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use zvq_core::numerics::{finite_difference_check, NumericsError, Tape, Tensor, Var};

fn t32(shape: &[usize], data: &[f32]) -> Tensor {
    Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
}

fn t64(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::from_f64(shape.to_vec(), data).unwrap()
}

#[test]
fn conv1d_sliding_window() {
    let mut tape = Tape::<f32>::new();
    let x = tape.constant(t32(&[1, 1, 4], &[1.0, 2.0, 3.0, 4.0]));
    let w = tape.constant(t32(&[1, 1, 2], &[1.0, 1.0]));
    let b = tape.constant(t32(&[1], &[0.0]));
    let y = tape.conv1d(x, w, b, 1, 0).unwrap();
    assert_eq!(tape.value(y).data(), &[3.0, 5.0, 7.0]);
}

#[test]
fn conv1d_identity_kernel() {
    let mut tape = Tape::<f32>::new();
    let data = [0.5, -1.0, 2.0, 3.5, 0.0, 1.0];
    let x = tape.constant(t32(&[2, 1, 3], &data));
    let w = tape.constant(t32(&[1, 1, 1], &[1.0]));
    let b = tape.constant(t32(&[1], &[0.0]));
    let y = tape.conv1d(x, w, b, 1, 0).unwrap();
    assert_eq!(tape.value(y).data(), &data);
}

#[test]
fn two_stride_two_layers_reach_quarter_rate() {
    let mut tape = Tape::<f32>::new();
    let x = tape.constant(Tensor::zeros(vec![1, 2, 32]).unwrap());
    let w = tape.constant(Tensor::zeros(vec![2, 2, 4]).unwrap());
    let b = tape.constant(Tensor::zeros(vec![2]).unwrap());
    let y = tape.conv1d(x, w, b, 2, 1).unwrap();
    assert_eq!(tape.shape(y), &[1, 2, 16]);
    let z = tape.conv1d(y, w, b, 2, 1).unwrap();
    assert_eq!(tape.shape(z), &[1, 2, 8]);
}

#[test]
fn conv1d_channel_mismatch_names_both_shapes() {
    let mut tape = Tape::<f32>::new();
    let x = tape.constant(Tensor::zeros(vec![1, 3, 8]).unwrap());
    let w = tape.constant(Tensor::zeros(vec![4, 2, 3]).unwrap());
    let b = tape.constant(Tensor::zeros(vec![4]).unwrap());
    let err = tape.conv1d(x, w, b, 1, 1).unwrap_err();
    assert_eq!(
        err,
        NumericsError::ShapeMismatch {
            op: "conv1d",
            left: vec![1, 3, 8],
            right: vec![4, 2, 3]
        }
    );
    assert!(err.to_string().contains("[1, 3, 8]") && err.to_string().contains("[4, 2, 3]"));
}

#[test]
fn conv1d_output_length_matches_floor_formula_exhaustively() {
    for t in 1..=64usize {
        for k in 1..=8usize {
            for stride in 1..=4usize {
                for padding in 0..=3usize {
                    let mut tape = Tape::<f32>::new();
                    let x = tape.constant(Tensor::zeros(vec![1, 1, t]).unwrap());
                    let w = tape.constant(Tensor::zeros(vec![1, 1, k]).unwrap());
                    let b = tape.constant(Tensor::zeros(vec![1]).unwrap());
                    let r = tape.conv1d(x, w, b, stride, padding);
                    if t + 2 * padding < k {
                        assert!(r.is_err());
                    } else {
                        let want = (t + 2 * padding - k) / stride + 1;
                        assert_eq!(tape.shape(r.unwrap())[2], want, "T={t} k={k} s={stride} p={padding}");
                    }
                }
            }
        }
    }
}

#[test]
fn transposed_conv_examples() {
    let mut tape = Tape::<f32>::new();
    let x = tape.constant(t32(&[1, 1, 2], &[1.0, 2.0]));
    let w = tape.constant(t32(&[1, 1, 2], &[1.0, 1.0]));
    let b = tape.constant(t32(&[1], &[0.0]));
    let y = tape.conv_transpose1d(x, w, b, 2).unwrap();
    assert_eq!(tape.value(y).data(), &[1.0, 1.0, 2.0, 2.0]);

    let w1 = tape.constant(t32(&[1, 1, 1], &[1.0]));
    let id = tape.conv_transpose1d(x, w1, b, 1).unwrap();
    assert_eq!(tape.value(id).data(), &[1.0, 2.0]);

    let x8 = tape.constant(Tensor::zeros(vec![1, 3, 8]).unwrap());
    let w4 = tape.constant(Tensor::zeros(vec![3, 3, 4]).unwrap());
    let b3 = tape.constant(Tensor::zeros(vec![3]).unwrap());
    let up = tape.conv_transpose1d(x8, w4, b3, 2).unwrap();
    let up = tape.conv_transpose1d(up, w4, b3, 2).unwrap();
    assert_eq!(tape.shape(up), &[1, 3, 32]);

    let wrong = tape.constant(Tensor::zeros(vec![2, 3, 4]).unwrap());
    assert!(matches!(
        tape.conv_transpose1d(x8, wrong, b3, 2),
        Err(NumericsError::ShapeMismatch { .. })
    ));
}

#[test]
fn relu_forward_and_gradient() {
    let mut tape = Tape::<f32>::new();
    let x = tape.leaf(t32(&[3], &[-1.0, 0.0, 2.0]));
    let y = tape.relu(x).unwrap();
    assert_eq!(tape.value(y).data(), &[0.0, 0.0, 2.0]);
    let s = tape.sum(y).unwrap();
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(x).unwrap(), &[0.0, 0.0, 1.0]);

    let mut tape = Tape::<f32>::new();
    let pos = tape.constant(t32(&[2], &[0.5, 3.0]));
    let y = tape.relu(pos).unwrap();
    assert_eq!(tape.value(y).data(), &[0.5, 3.0]);
}

#[test]
fn linear_examples() {
    let mut tape = Tape::<f32>::new();
    let x = tape.constant(t32(&[1, 1], &[1.0]));
    let w = tape.constant(t32(&[1, 1], &[2.0]));
    let b = tape.constant(t32(&[1], &[3.0]));
    let y = tape.linear(x, w, b).unwrap();
    assert_eq!(tape.value(y).data(), &[5.0]);

    let xb = tape.constant(t32(&[2, 2], &[1.0, 2.0, -3.0, 4.0]));
    let eye = tape.constant(t32(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
    let zero = tape.constant(t32(&[2], &[0.0, 0.0]));
    let y = tape.linear(xb, eye, zero).unwrap();
    assert_eq!(tape.value(y).data(), &[1.0, 2.0, -3.0, 4.0]);

    // rows are independent: changing row 1 leaves row 0 untouched
    let xb2 = tape.constant(t32(&[2, 2], &[1.0, 2.0, 9.0, 9.0]));
    let w2 = tape.constant(t32(&[3, 2], &[0.1, 0.2, 0.3, 0.4, 0.5, 0.6]));
    let b2 = tape.constant(t32(&[3], &[1.0, 1.0, 1.0]));
    let y1 = tape.linear(xb, w2, b2).unwrap();
    let y2 = tape.linear(xb2, w2, b2).unwrap();
    assert_eq!(&tape.value(y1).data()[..3], &tape.value(y2).data()[..3]);
    assert_ne!(&tape.value(y1).data()[3..], &tape.value(y2).data()[3..]);

    let bad = tape.constant(t32(&[3, 3], &[0.0; 9]));
    assert!(tape.linear(xb, bad, b2).is_err());
}

#[test]
fn backward_examples() {
    let mut tape = Tape::<f32>::new();
    let x = tape.leaf(t32(&[2, 2], &[3.0, -1.0, 0.5, 7.0]));
    let s = tape.sum(x).unwrap();
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(x).unwrap(), &[1.0; 4]);

    let mut tape = Tape::<f32>::new();
    let x = tape.leaf(t32(&[2], &[1.0, 2.0]));
    let sq = tape.mul(x, x).unwrap();
    let s = tape.sum(sq).unwrap();
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(x).unwrap(), &[2.0, 4.0]);

    // x feeds two branches: d(sum(x) + sum(3x))/dx = 4
    let mut tape = Tape::<f32>::new();
    let x = tape.leaf(t32(&[2], &[1.0, -2.0]));
    let a = tape.sum(x).unwrap();
    let tx = tape.scale(x, 3.0).unwrap();
    let b = tape.sum(tx).unwrap();
    let l = tape.add(a, b).unwrap();
    tape.backward(l).unwrap();
    assert_eq!(tape.grad(x).unwrap(), &[4.0, 4.0]);
}

#[test]
fn backward_rejects_non_scalar_and_foreign_loss() {
    let mut tape = Tape::<f32>::new();
    let x = tape.leaf(t32(&[2], &[1.0, 2.0]));
    assert_eq!(tape.backward(x), Err(NumericsError::NotScalar(vec![2])));

    let mut other = Tape::<f32>::new();
    let y = other.leaf(t32(&[1], &[1.0]));
    assert_eq!(tape.backward(y), Err(NumericsError::ForeignVar));
}

#[test]
fn second_backward_doubles_gradients_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut tape = Tape::<f32>::new();
    let x = tape.leaf(Tensor::uniform(vec![2, 3, 10], 1.0, &mut rng).unwrap());
    let w = tape.leaf(Tensor::uniform(vec![4, 3, 3], 0.5, &mut rng).unwrap());
    let b = tape.leaf(Tensor::uniform(vec![4], 0.5, &mut rng).unwrap());
    let y = tape.conv1d(x, w, b, 1, 1).unwrap();
    let r = tape.relu(y).unwrap();
    let n = tape.instance_norm(r, 1e-5, false).unwrap();
    let l = tape.mean(n).unwrap();
    let l2 = tape.mul(l, l).unwrap();
    let loss = tape.add(l2, l).unwrap();
    tape.backward(loss).unwrap();
    let once: Vec<Vec<f32>> = [x, w, b].iter().map(|&v| tape.grad(v).unwrap().to_vec()).collect();
    tape.backward(loss).unwrap();
    for (v, g1) in [x, w, b].iter().zip(&once) {
        let g2 = tape.grad(*v).unwrap();
        for (a, b) in g1.iter().zip(g2) {
            assert_eq!((a * 2.0).to_bits(), b.to_bits());
        }
    }
}

#[test]
fn forward_ops_are_bit_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(Tensor::uniform(vec![3, 5, 16], 1.0, &mut rng).unwrap());
        let w = tape.leaf(Tensor::uniform(vec![6, 5, 4], 0.5, &mut rng).unwrap());
        let b = tape.leaf(Tensor::uniform(vec![6], 0.5, &mut rng).unwrap());
        let wt = tape.leaf(Tensor::uniform(vec![6, 2, 4], 0.5, &mut rng).unwrap());
        let bt = tape.leaf(Tensor::uniform(vec![2], 0.5, &mut rng).unwrap());
        let y = tape.conv1d(x, w, b, 2, 1).unwrap();
        let y = tape.relu(y).unwrap();
        let y = tape.instance_norm(y, 1e-5, false).unwrap();
        let y = tape.conv_transpose1d(y, wt, bt, 2).unwrap();
        let l = tape.mean(y).unwrap();
        tape.backward(l).unwrap();
        (tape.value(y).clone(), tape.grad(w).unwrap().to_vec())
    };
    let (a, ga) = run();
    let (b, gb) = run();
    assert_eq!(a, b);
    assert!(ga.iter().zip(&gb).all(|(p, q)| p.to_bits() == q.to_bits()));
}

#[test]
fn straight_through_forward_is_quantized_and_gradient_passes_to_input() {
    let mut tape = Tape::<f32>::new();
    let ze = tape.leaf(t32(&[2, 2], &[0.2, 0.1, 0.9, 1.3]));
    let zq = tape.leaf(t32(&[2, 2], &[0.0, 0.0, 1.0, 1.0]));
    let st = tape.straight_through(ze, zq).unwrap();
    assert_eq!(tape.value(st), tape.value(zq));
    let s = tape.sum(st).unwrap();
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(ze).unwrap(), &[1.0; 4]);
    assert!(tape.grad(zq).is_none());
}

#[test]
fn circular_conv_on_tiled_input_is_tiled() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let base = Tensor::<f32>::uniform(vec![1, 3, 7], 1.0, &mut rng).unwrap();
    let mut tiled = Vec::new();
    for c in 0..3 {
        let row = &base.data()[c * 7..(c + 1) * 7];
        tiled.extend_from_slice(row);
        tiled.extend_from_slice(row);
    }
    let mut tape = Tape::<f32>::new();
    let w = tape.constant(Tensor::uniform(vec![2, 3, 3], 1.0, &mut rng).unwrap());
    let b = tape.constant(Tensor::uniform(vec![2], 1.0, &mut rng).unwrap());
    let x1 = tape.constant(base);
    let x2 = tape.constant(t32(&[1, 3, 14], &tiled));
    let y1 = tape.conv1d_circular(x1, w, b).unwrap();
    let y2 = tape.conv1d_circular(x2, w, b).unwrap();
    for c in 0..2 {
        let r1 = &tape.value(y1).data()[c * 7..(c + 1) * 7];
        let r2 = &tape.value(y2).data()[c * 14..(c + 1) * 14];
        assert_eq!(r1, &r2[..7]);
        assert_eq!(r1, &r2[7..]);
    }
}

fn uniform64(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
    t64(shape, &data)
}

/// Weighted sum of an op's output so every output element matters.
fn weighted(tape: &mut Tape<f64>, y: Var, weights: &Tensor<f64>) -> zvq_core::numerics::Result<Var> {
    let w = tape.constant(weights.clone());
    let p = tape.mul(y, w)?;
    tape.sum(p)
}

#[test]
fn plumbing_ops_pass_gradient_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let x = uniform64(&mut rng, &[2, 3, 4], -1.0, 1.0);
    let wts = uniform64(&mut rng, &[6, 4], 0.5, 1.5);

    let frames = finite_difference_check(
        |t, v| {
            let f = t.to_frames(v)?;
            let a = t.slice_cols(f, 0, 1)?;
            let b = t.slice_cols(f, 1, 2)?;
            let c = t.concat_cols(&[b, a])?;
            let back = t.from_frames(c, 2)?;
            let sq = t.mul(back, back)?;
            let ex = t.exp(sq)?;
            weighted(t, ex, &wts.clone().reshape(vec![2, 3, 4]).unwrap())
        },
        &x,
        1e-3,
        1e-3,
    )
    .unwrap();
    assert!(frames.pass, "{frames:?}");

    let table = uniform64(&mut rng, &[5, 3], -1.0, 1.0);
    let gather = finite_difference_check(
        |t, v| {
            let g = t.gather_rows(v, &[4, 0, 4, 2])?;
            let sq = t.mul(g, g)?;
            t.sum(sq)
        },
        &table,
        1e-3,
        1e-3,
    )
    .unwrap();
    assert!(gather.pass, "{gather:?}");

    let emb = uniform64(&mut rng, &[2, 3], -1.0, 1.0);
    let bc = finite_difference_check(
        |t, v| {
            let b = t.broadcast_time(v, 4)?;
            let c = t.concat_channels(b, b)?;
            let m = t.mean_time(c)?;
            let sq = t.mul(m, m)?;
            let e = t.exp(c)?;
            let s1 = t.sum(sq)?;
            let s2 = t.mean(e)?;
            t.sub(s1, s2)
        },
        &emb,
        1e-3,
        1e-3,
    )
    .unwrap();
    assert!(bc.pass, "{bc:?}");

    let probe = uniform64(&mut rng, &[3], -1.0, 1.0);
    let base = uniform64(&mut rng, &[2, 4], -1.0, 1.0);
    let scatter = finite_difference_check(
        |t, v| {
            let b = t.constant(base.clone());
            let s = t.scatter_add(b, v, &[(0, 1), (1, 5), (2, 5)])?;
            let sq = t.mul(s, s)?;
            t.sum(sq)
        },
        &probe,
        1e-3,
        1e-3,
    )
    .unwrap();
    assert!(scatter.pass, "{scatter:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mse_gradient_matches_closed_form(
        a in proptest::collection::vec(-3.0f64..3.0, 6),
        b in proptest::collection::vec(-3.0f64..3.0, 6),
    ) {
        let mut tape = Tape::<f64>::new();
        let av = tape.leaf(t64(&[2, 3], &a));
        let bv = tape.constant(t64(&[2, 3], &b));
        let l = tape.mse(av, bv).unwrap();
        tape.backward(l).unwrap();
        let g = tape.grad(av).unwrap();
        for i in 0..6 {
            prop_assert!((g[i] - (a[i] - b[i]) / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn transposed_conv_is_adjoint_of_strided_conv(
        stride in 1usize..4,
        extra in 0usize..3,
        t in 1usize..6,
        seed in 0u64..1000,
    ) {
        // <convT(x), y> == <x, conv(y)> when conv uses the same taps and
        // padding equal to the crop, which exercises both index maps.
        let k = stride + 2 * extra;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = uniform64(&mut rng, &[1, 2, t], -1.0, 1.0);
        let y = uniform64(&mut rng, &[1, 3, t * stride], -1.0, 1.0);
        let w = uniform64(&mut rng, &[2, 3, k], -1.0, 1.0);
        let mut tape = Tape::<f64>::new();
        let (xv, yv, wv) = (tape.constant(x.clone()), tape.constant(y.clone()), tape.constant(w));
        let zero3 = tape.constant(Tensor::zeros(vec![3]).unwrap());
        let zero2 = tape.constant(Tensor::zeros(vec![2]).unwrap());
        let up = tape.conv_transpose1d(xv, wv, zero3, stride).unwrap();
        let down = tape.conv1d(yv, wv, zero2, stride, extra).unwrap();
        prop_assume!(tape.shape(down)[2] == t);
        let lhs: f64 = tape.value(up).data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = tape.value(down).data().iter().zip(x.data()).map(|(a, b)| a * b).sum();
        prop_assert!((lhs - rhs).abs() < 1e-9, "{} vs {}", lhs, rhs);
    }
}
