use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tensor::{grad_check, Tape, Tensor, TensorError, Var, DEFAULT_EPS};

fn t(shape: &[usize], data: &[f64]) -> Tensor {
    Tensor::new(shape, data.to_vec()).unwrap()
}

fn randn(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Weighted sum with fixed pseudo-random weights, so every output coordinate
/// contributes a distinct gradient.
fn probe(tape: &Tape, y: Var) -> tensor::Result<Var> {
    let shape = tape.shape(y);
    let w = Tensor::from_fn(&shape, |i| ((i * 7919) % 13) as f64 / 13.0 - 0.4);
    let w = tape.constant(w);
    let prod = tape.mul(y, w)?;
    Ok(tape.sum(prod))
}

#[test]
fn matmul_examples() {
    let tape = Tape::new();
    let m = tape.constant(t(&[3, 3], &[1., 2., 3., 4., 5., 6., 7., 8., 9.]));
    let i3 = tape.constant(Tensor::eye(3));
    let r = tape.matmul(i3, m).unwrap();
    assert_eq!(*tape.value(r), *tape.value(m));

    let a = tape.constant(t(&[2, 2], &[1., 2., 3., 4.]));
    let b = tape.constant(t(&[2, 1], &[0., 1.]));
    let c = tape.matmul(a, b).unwrap();
    assert_eq!(tape.value(c).shape(), &[2, 1]);
    assert_eq!(tape.value(c).data(), &[2., 4.]);

    let z = tape.constant(Tensor::zeros(&[3, 3]));
    let zm = tape.matmul(z, m).unwrap();
    assert!(tape.value(zm).data().iter().all(|&v| v == 0.0));

    let bad = tape.matmul(a, m);
    assert!(matches!(bad, Err(TensorError::ShapeMismatch { op: "matmul", .. })));
}

#[test]
fn softmax_examples() {
    let tape = Tape::new();
    let x = tape.constant(t(&[2], &[0., 0.]));
    let y = tape.softmax(x, 0).unwrap();
    assert_eq!(tape.value(y).data(), &[0.5, 0.5]);

    let x = tape.constant(t(&[3], &[1000., 1000., 1000.]));
    let y = tape.softmax(x, 0).unwrap();
    for &v in tape.value(y).data() {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }

    let x = tape.constant(t(&[2], &[2f64.ln(), 0.]));
    let y = tape.softmax(x, 0).unwrap();
    let v = tape.value(y);
    assert!((v.data()[0] - 2.0 / 3.0).abs() < 1e-15);
    assert!((v.data()[1] - 1.0 / 3.0).abs() < 1e-15);

    assert!(tape.softmax(x, 1).is_err());
}

#[test]
fn softmax_along_leading_axis() {
    let tape = Tape::new();
    let x = tape.constant(t(&[2, 3], &[1., 2., 3., 1., 2., 3.]));
    let y = tape.softmax(x, 0).unwrap();
    assert!(tape.value(y).data().iter().all(|&v| (v - 0.5).abs() < 1e-15));
}

#[test]
fn layer_norm_examples() {
    let tape = Tape::new();
    let ones = tape.constant(Tensor::ones(&[4]));
    let zeros = tape.constant(Tensor::zeros(&[4]));
    let c = tape.constant(t(&[1, 4], &[3., 3., 3., 3.]));
    let y = tape.layer_norm(c, ones, zeros, 1e-5).unwrap();
    assert!(tape.value(y).data().iter().all(|&v| v == 0.0));

    let g2 = tape.constant(Tensor::ones(&[2]));
    let b2 = tape.constant(Tensor::zeros(&[2]));
    let x = tape.constant(t(&[2], &[1., -1.]));
    let y = tape.layer_norm(x, g2, b2, 1e-300).unwrap();
    assert_eq!(tape.value(y).data(), &[1., -1.]);

    let x = tape.constant(t(&[2, 4], &[0.3, -1.2, 5.0, 2.2, 9.0, 1.0, -3.0, 0.5]));
    let bias = tape.constant(t(&[4], &[0.1, 0.2, 0.3, 0.4]));
    let y = tape.layer_norm(x, zeros, bias, 1e-5).unwrap();
    assert_eq!(tape.value(y).data(), &[0.1, 0.2, 0.3, 0.4, 0.1, 0.2, 0.3, 0.4]);

    let y = tape.layer_norm(x, ones, zeros, 0.0).unwrap();
    let v = tape.value(y);
    for r in 0..2 {
        let row = &v.data()[r * 4..(r + 1) * 4];
        let mean: f64 = row.iter().sum::<f64>() / 4.0;
        let var: f64 = row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-9 && (var - 1.0).abs() < 1e-9);
    }

    assert!(tape.layer_norm(x, g2, b2, 1e-5).is_err());
}

#[test]
fn conv3d_examples() {
    let tape = Tape::new();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = randn(&mut rng, &[1, 3, 4, 5]);
    let xv = tape.constant(x.clone());
    let id = tape.constant(Tensor::ones(&[1, 1, 1, 1, 1]));
    let y = tape.conv3d(xv, id, 1, 0).unwrap();
    assert_eq!(*tape.value(y), x);

    let ones = tape.constant(Tensor::ones(&[1, 3, 3, 3]));
    let k = tape.constant(Tensor::ones(&[1, 1, 3, 3, 3]));
    let y = tape.conv3d(ones, k, 1, 0).unwrap();
    assert_eq!(tape.value(y).shape(), &[1, 1, 1, 1]);
    assert_eq!(tape.value(y).item(), 27.0);

    let zk = tape.constant(Tensor::zeros(&[2, 1, 3, 3, 3]));
    let y = tape.conv3d(xv, zk, 1, 1).unwrap();
    assert_eq!(tape.value(y).shape(), &[2, 3, 4, 5]);
    assert!(tape.value(y).data().iter().all(|&v| v == 0.0));

    let wrong = tape.constant(Tensor::ones(&[1, 2, 3, 3, 3]));
    assert!(tape.conv3d(xv, wrong, 1, 1).is_err());
    let even = tape.constant(Tensor::ones(&[1, 1, 2, 2, 2]));
    assert!(tape.conv3d(xv, even, 1, 0).is_err());
}

/// Direct-summation oracle for a padded strided conv.
fn conv3d_oracle(x: &Tensor, w: &Tensor, stride: usize, pad: usize) -> Tensor {
    let (ci, d, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (co, k) = (w.shape()[0], w.shape()[2]);
    let od = (d + 2 * pad - k) / stride + 1;
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (wd + 2 * pad - k) / stride + 1;
    let xs = |c: usize, z: isize, y: isize, xx: isize| -> f64 {
        if z < 0 || y < 0 || xx < 0 || z >= d as isize || y >= h as isize || xx >= wd as isize {
            0.0
        } else {
            x.data()[((c * d + z as usize) * h + y as usize) * wd + xx as usize]
        }
    };
    Tensor::from_fn(&[co, od, oh, ow], |i| {
        let ox = i % ow;
        let oy = (i / ow) % oh;
        let oz = (i / ow / oh) % od;
        let o = i / ow / oh / od;
        let mut acc = 0.0;
        for c in 0..ci {
            for a in 0..k {
                for b in 0..k {
                    for e in 0..k {
                        let wv = w.data()[(((o * ci + c) * k + a) * k + b) * k + e];
                        acc += wv
                            * xs(
                                c,
                                (oz * stride + a) as isize - pad as isize,
                                (oy * stride + b) as isize - pad as isize,
                                (ox * stride + e) as isize - pad as isize,
                            );
                    }
                }
            }
        }
        acc
    })
}

#[test]
fn conv3d_matches_direct_summation() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for &(stride, pad) in &[(1, 0), (1, 1), (2, 1), (2, 0)] {
        let x = randn(&mut rng, &[2, 5, 4, 6]);
        let w = randn(&mut rng, &[3, 2, 3, 3, 3]);
        let tape = Tape::new();
        let (xv, wv) = (tape.constant(x.clone()), tape.constant(w.clone()));
        let y = tape.conv3d(xv, wv, stride, pad).unwrap();
        let oracle = conv3d_oracle(&x, &w, stride, pad);
        assert_eq!(tape.value(y).shape(), oracle.shape());
        for (a, b) in tape.value(y).data().iter().zip(oracle.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn conv_transpose_examples() {
    let tape = Tape::new();
    let x = tape.constant(Tensor::ones(&[1, 1, 1, 1]));
    let k = tape.constant(Tensor::ones(&[1, 1, 2, 2, 2]));
    let y = tape.conv_transpose3d(x, k, 2).unwrap();
    assert_eq!(tape.value(y).shape(), &[1, 2, 2, 2]);
    assert!(tape.value(y).data().iter().all(|&v| v == 1.0));

    let z = tape.constant(Tensor::zeros(&[2, 3, 3, 3]));
    let k = tape.constant(Tensor::ones(&[2, 4, 2, 2, 2]));
    let y = tape.conv_transpose3d(z, k, 2).unwrap();
    assert_eq!(tape.value(y).shape(), &[4, 6, 6, 6]);
    assert!(tape.value(y).data().iter().all(|&v| v == 0.0));

    assert!(tape.conv_transpose3d(x, k, 2).is_err());
    assert!(tape.conv_transpose3d(z, k, 0).is_err());
}

fn inner(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

#[test]
fn conv_pair_is_adjoint_on_random_4cubed() {
    // k=2,s=2 is the decoder's upsampling geometry; k=3,s=1 the fusion geometry.
    for (seed, k, stride) in [(1u64, 2usize, 2usize), (2, 3, 1), (3, 2, 2), (4, 3, 1)] {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = randn(&mut rng, &[2, 4, 4, 4]);
        let w = randn(&mut rng, &[3, 2, k, k, k]);
        let n = (4 - k) / stride + 1;
        let y = randn(&mut rng, &[3, n, n, n]);
        let tape = Tape::new();
        let (xv, wv, yv) = (
            tape.constant(x.clone()),
            tape.constant(w.clone()),
            tape.constant(y.clone()),
        );
        // conv3d only accepts odd kernels; the even case uses the direct-summation oracle.
        let cx = if k % 2 == 1 {
            let cx = tape.conv3d(xv, wv, stride, 0).unwrap();
            tape.value(cx).as_ref().clone()
        } else {
            conv3d_oracle(&x, &w, stride, 0)
        };
        let lhs = inner(&cx, &y);
        let ct = tape.conv_transpose3d(yv, wv, stride).unwrap();
        assert_eq!(tape.value(ct).shape(), x.shape());
        let rhs = inner(&x, &tape.value(ct));
        assert!((lhs - rhs).abs() < 1e-9, "seed {seed}: {lhs} vs {rhs}");
    }
}

#[test]
fn elementwise_examples() {
    let tape = Tape::new();
    let z = tape.constant(Tensor::scalar(0.0));
    assert_eq!(tape.value(tape.sigmoid(z)).item(), 0.5);
    let v = tape.constant(t(&[2], &[-3., 3.]));
    assert_eq!(tape.value(tape.relu(v)).data(), &[0., 3.]);
    let m = tape.constant(t(&[4], &[1., 2., 3., 6.]));
    assert_eq!(tape.value(tape.mean(m)).item(), 3.0);
    assert!(matches!(tape.log(v), Err(TensorError::Domain { op: "log", .. })));
    let gelu0 = tape.gelu(z);
    assert_eq!(tape.value(gelu0).item(), 0.0);

    let a = tape.constant(t(&[2, 3], &[1., 2., 3., 4., 5., 6.]));
    let b = tape.constant(t(&[3], &[10., 20., 30.]));
    assert_eq!(
        tape.value(tape.add(a, b).unwrap()).data(),
        &[11., 22., 33., 14., 25., 36.]
    );
    let col = tape.constant(t(&[2, 1], &[1., 2.]));
    assert_eq!(
        tape.value(tape.mul(a, col).unwrap()).data(),
        &[1., 2., 3., 8., 10., 12.]
    );
    let bad = tape.constant(t(&[2], &[1., 2.]));
    assert!(tape.add(a, bad).is_err());

    let c = tape.concat(&[a, a], 0).unwrap();
    assert_eq!(tape.value(c).shape(), &[4, 3]);
    let c1 = tape.concat(&[a, col], 1).unwrap();
    assert_eq!(tape.value(c1).data(), &[1., 2., 3., 1., 4., 5., 6., 2.]);
    let n = tape.narrow(c1, 1, 1, 2).unwrap();
    assert_eq!(tape.value(n).data(), &[2., 3., 5., 6.]);
    let r = tape.reshape(a, &[3, 2]).unwrap();
    assert_eq!(tape.value(r).shape(), &[3, 2]);
    assert!(tape.reshape(a, &[4, 2]).is_err());
    let s = tape.sum_axis(a, 0).unwrap();
    assert_eq!(tape.value(s).data(), &[5., 7., 9.]);
}

#[test]
fn backward_examples() {
    let tape = Tape::new();
    let x = tape.param(t(&[3], &[1., -2., 0.5]));
    let sq = tape.mul(x, x).unwrap();
    let y = tape.sum(sq);
    let g = tape.backward(y).unwrap();
    assert_eq!(g.get(x).unwrap().data(), &[2., -4., 1.]);

    let tape = Tape::new();
    let a = tape.param(t(&[2, 3], &[1., 2., 3., 4., 5., 6.]));
    let b = tape.param(t(&[3, 2], &[1., -1., 2., 0.5, -3., 1.]));
    let c = tape.matmul(a, b).unwrap();
    let y = tape.sum(c);
    let g = tape.backward(y).unwrap();
    // d/dA sum(A·B) = 1·Bᵀ: each row of dA is the row-sums of B.
    assert_eq!(g.get(a).unwrap().data(), &[0., 2.5, -2., 0., 2.5, -2.]);
    assert_eq!(g.get(b).unwrap().data(), &[5., 5., 7., 7., 9., 9.]);

    let tape = Tape::new();
    let x = tape.param(t(&[2], &[1., 2.]));
    let d = tape.constant(t(&[2], &[3., 4.]));
    let p = tape.mul(x, d).unwrap();
    let y = tape.sum(p);
    let g = tape.backward(y).unwrap();
    assert!(g.get(d).is_none());
    assert_eq!(g.len(), 1);

    assert!(matches!(tape.backward(p), Err(TensorError::NonScalarRoot(_))));
}

#[test]
fn backward_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let a = randn(&mut rng, &[5, 7]);
    let b = randn(&mut rng, &[7, 3]);
    let run = || {
        let tape = Tape::new();
        let (av, bv) = (tape.param(a.clone()), tape.param(b.clone()));
        let c = tape.matmul(av, bv).unwrap();
        let s = tape.softmax(c, 1).unwrap();
        let y = probe(&tape, s).unwrap();
        let g = tape.backward(y).unwrap();
        (g.get(av).unwrap().clone(), g.get(bv).unwrap().clone())
    };
    assert_eq!(run(), run());
}

#[test]
fn grad_check_examples() {
    let x = Tensor::new(&[4], vec![0.3, -1.1, 2.0, 0.7]).unwrap();
    let err = grad_check::<_, TensorError>(
        |tp, x| {
            let s = tp.mul(x, x)?;
            Ok(tp.sum(s))
        },
        &x,
        DEFAULT_EPS,
    )
    .unwrap();
    assert!(err < 1e-8, "{err}");

    let err = grad_check::<_, TensorError>(|tp, _| Ok(tp.constant(Tensor::scalar(4.2))), &x, DEFAULT_EPS).unwrap();
    assert_eq!(err, 0.0);
}

type OpFn = fn(&Tape, Var) -> tensor::Result<Var>;

/// Every differentiable primitive, each wrapped to a scalar through `probe`.
fn op_cases() -> Vec<(&'static str, Vec<usize>, OpFn)> {
    vec![
        ("add", vec![3, 4], |tp, x| {
            let c = tp.constant(Tensor::from_fn(&[4], |i| i as f64 * 0.3));
            let y = tp.add(x, c)?;
            let y2 = tp.add(y, x)?;
            probe(tp, y2)
        }),
        ("add_broadcast_rhs", vec![4], |tp, x| {
            let c = tp.constant(Tensor::from_fn(&[3, 4], |i| i as f64 * 0.1));
            let y = tp.add(c, x)?;
            probe(tp, y)
        }),
        ("sub", vec![3, 4], |tp, x| {
            let c = tp.constant(Tensor::from_fn(&[3, 1], |i| i as f64));
            let y = tp.sub(c, x)?;
            probe(tp, y)
        }),
        ("mul", vec![3, 4], |tp, x| {
            let c = tp.constant(Tensor::from_fn(&[4], |i| 1.0 + i as f64));
            let y = tp.mul(x, c)?;
            let y2 = tp.mul(y, x)?;
            probe(tp, y2)
        }),
        ("div", vec![3, 4], |tp, x| {
            let c = tp.constant(Tensor::from_fn(&[3, 4], |i| 2.0 + (i % 5) as f64));
            let sq = tp.mul(x, x)?;
            let den = tp.add_scalar(sq, 1.0);
            let y = tp.div(c, den)?;
            let y2 = tp.div(x, c)?;
            let s = tp.add(y, y2)?;
            probe(tp, s)
        }),
        ("neg_scale", vec![5], |tp, x| {
            let y = tp.neg(x);
            let y = tp.scale(y, 2.5);
            probe(tp, y)
        }),
        ("relu", vec![6], |tp, x| {
            let y = tp.relu(x);
            probe(tp, y)
        }),
        ("gelu", vec![6], |tp, x| {
            let y = tp.scale(x, 2.0);
            let y = tp.gelu(y);
            probe(tp, y)
        }),
        ("sigmoid", vec![6], |tp, x| {
            let y = tp.scale(x, 3.0);
            let y = tp.sigmoid(y);
            probe(tp, y)
        }),
        ("exp", vec![6], |tp, x| {
            let y = tp.exp(x);
            probe(tp, y)
        }),
        ("log", vec![6], |tp, x| {
            let sq = tp.mul(x, x)?;
            let pos = tp.add_scalar(sq, 0.5);
            let y = tp.log(pos)?;
            probe(tp, y)
        }),
        ("pow", vec![6], |tp, x| {
            let sq = tp.mul(x, x)?;
            let pos = tp.add_scalar(sq, 0.2);
            let y = tp.pow(pos, 2.5)?;
            let z = tp.pow(x, 3.0)?;
            let s = tp.add(y, z)?;
            probe(tp, s)
        }),
        ("clamp", vec![6], |tp, x| {
            let y = tp.clamp(x, -0.5, 0.5);
            probe(tp, y)
        }),
        ("sum_mean", vec![2, 3], |tp, x| {
            let s = tp.sum(x);
            let m = tp.mean(x);
            let sq = tp.mul(s, m)?;
            Ok(sq)
        }),
        ("sum_axis", vec![3, 4, 2], |tp, x| {
            let a = tp.sum_axis(x, 1)?;
            let b = tp.mean_axis(a, 0)?;
            let c = tp.mul(b, b)?;
            probe(tp, c)
        }),
        ("matmul", vec![3, 4], |tp, x| {
            let c = tp.constant(Tensor::from_fn(&[4, 2], |i| (i as f64).sin()));
            let y = tp.matmul(x, c)?;
            let xt = tp.transpose(x)?;
            let z = tp.matmul(xt, x)?;
            let s1 = probe(tp, y)?;
            let s2 = probe(tp, z)?;
            tp.add(s1, s2)
        }),
        ("softmax_last", vec![3, 5], |tp, x| {
            let y = tp.scale(x, 2.0);
            let y = tp.softmax(y, 1)?;
            probe(tp, y)
        }),
        ("softmax_first", vec![4, 3], |tp, x| {
            let y = tp.softmax(x, 0)?;
            probe(tp, y)
        }),
        ("layer_norm_x", vec![3, 5], |tp, x| {
            let g = tp.constant(Tensor::from_fn(&[5], |i| 0.5 + i as f64 * 0.2));
            let b = tp.constant(Tensor::from_fn(&[5], |i| i as f64 * 0.1));
            let y = tp.layer_norm(x, g, b, 1e-5)?;
            probe(tp, y)
        }),
        ("layer_norm_affine", vec![5], |tp, g| {
            let x = tp.constant(Tensor::from_fn(&[3, 5], |i| ((i * 37) % 11) as f64 * 0.3));
            let b = tp.add_scalar(g, 0.5);
            let y = tp.layer_norm(x, g, b, 1e-5)?;
            probe(tp, y)
        }),
        ("conv3d_input", vec![2, 4, 4, 4], |tp, x| {
            let w = tp.constant(Tensor::from_fn(&[3, 2, 3, 3, 3], |i| {
                ((i * 31) % 17) as f64 / 17.0 - 0.5
            }));
            let y = tp.conv3d(x, w, 1, 1)?;
            probe(tp, y)
        }),
        ("conv3d_kernel", vec![2, 2, 3, 3, 3], |tp, w| {
            let x = tp.constant(Tensor::from_fn(&[2, 5, 4, 4], |i| {
                ((i * 13) % 7) as f64 / 7.0 - 0.3
            }));
            let y = tp.conv3d(x, w, 2, 1)?;
            probe(tp, y)
        }),
        ("conv_transpose3d_input", vec![2, 2, 3, 2], |tp, x| {
            let w = tp.constant(Tensor::from_fn(&[2, 3, 2, 2, 2], |i| {
                ((i * 29) % 19) as f64 / 19.0 - 0.5
            }));
            let y = tp.conv_transpose3d(x, w, 2)?;
            probe(tp, y)
        }),
        ("conv_transpose3d_kernel", vec![2, 3, 2, 2, 2], |tp, w| {
            let x = tp.constant(Tensor::from_fn(&[2, 2, 2, 3], |i| {
                ((i * 23) % 11) as f64 / 11.0 - 0.4
            }));
            let y = tp.conv_transpose3d(x, w, 2)?;
            probe(tp, y)
        }),
        ("reshape_concat_narrow", vec![2, 6], |tp, x| {
            let r = tp.reshape(x, &[3, 4])?;
            let c = tp.concat(&[r, r], 1)?;
            let n = tp.narrow(c, 1, 2, 5)?;
            let sq = tp.mul(n, n)?;
            probe(tp, sq)
        }),
    ]
}

#[test]
fn every_op_passes_gradcheck_on_ten_seeds() {
    for (name, shape, f) in op_cases() {
        for seed in 0..10u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed * 101 + 7);
            let x = randn(&mut rng, &shape);
            let err = grad_check(f, &x, DEFAULT_EPS).unwrap();
            assert!(err < 1e-6, "{name} seed {seed}: rel err {err}");
        }
    }
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one(data in proptest::collection::vec(-700.0f64..700.0, 12)) {
        let tape = Tape::new();
        let x = tape.constant(Tensor::new(&[3, 4], data).unwrap());
        let y = tape.softmax(x, 1).unwrap();
        let v = tape.value(y);
        for r in 0..3 {
            let s: f64 = v.data()[r * 4..(r + 1) * 4].iter().sum();
            prop_assert!((s - 1.0).abs() <= 1e-12);
            prop_assert!(v.data()[r * 4..(r + 1) * 4].iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn forward_is_finite_on_finite_inputs(data in proptest::collection::vec(-50.0f64..50.0, 8)) {
        let tape = Tape::new();
        let x = tape.constant(Tensor::new(&[2, 4], data).unwrap());
        let g = tape.constant(Tensor::ones(&[4]));
        let b = tape.constant(Tensor::zeros(&[4]));
        let ln = tape.layer_norm(x, g, b, 1e-5).unwrap();
        let ge = tape.gelu(ln);
        let sg = tape.sigmoid(x);
        let sm = tape.softmax(ge, 1).unwrap();
        for v in [ln, ge, sg, sm] {
            prop_assert!(tape.value(v).is_finite());
        }
    }
}
