use proptest::prelude::*;
use ptune_core::autodiff::{
    extended_diff_check, finite_diff_check, finite_diff_check_many, Graph, Scalar, ScalarFn, Tensor, Var,
};
use ptune_core::rng;
use ptune_core::Error;
use rand::Rng;

fn random_tensor(shape: Vec<usize>, seed: u64) -> Tensor<f64> {
    let mut r = rng::seeded(seed);
    let n = shape.iter().product();
    let data = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
    Tensor::new(shape, data).unwrap()
}

fn t64(shape: Vec<usize>, data: Vec<f64>) -> Tensor<f64> {
    Tensor::new(shape, data).unwrap()
}

#[test]
fn matmul_identity_and_hand_examples() {
    let mut g = Graph::<f64>::new();
    let eye = g.constant(t64(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]));
    let m = g.constant(t64(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]));
    let ones = g.constant(t64(vec![2, 1], vec![1.0, 1.0]));
    let p = g.matmul(eye, m).unwrap();
    assert_eq!(g.value(p).data(), &[1.0, 2.0, 3.0, 4.0]);
    let q = g.matmul(m, ones).unwrap();
    assert_eq!(g.shape(q), &[2, 1]);
    assert_eq!(g.value(q).data(), &[3.0, 7.0]);
}

#[test]
fn matmul_matches_triple_loop_oracle() {
    let a = random_tensor(vec![7, 5], 1).cast::<f32>();
    let b = random_tensor(vec![5, 3], 2).cast::<f32>();
    let mut want = [0.0f64; 21];
    for i in 0..7 {
        for j in 0..3 {
            for p in 0..5 {
                want[i * 3 + j] += f64::from(a.data()[i * 5 + p]) * f64::from(b.data()[p * 3 + j]);
            }
        }
    }
    let mut g = Graph::<f32>::new();
    let (va, vb) = (g.constant(a), g.constant(b));
    let c = g.matmul(va, vb).unwrap();
    for (got, w) in g.value(c).data().iter().zip(want) {
        let rel = (f64::from(*got) - w).abs() / w.abs().max(1e-6);
        assert!(rel < 1e-6, "{got} vs {w}");
    }
}

#[test]
fn matmul_shape_error_names_both_shapes() {
    let mut g = Graph::<f32>::new();
    let a = g.constant(Tensor::zeros(vec![2, 3]));
    let b = g.constant(Tensor::zeros(vec![2, 3]));
    match g.matmul(a, b) {
        Err(Error::Shape { lhs, rhs, .. }) => {
            assert_eq!(lhs, vec![2, 3]);
            assert_eq!(rhs, vec![2, 3]);
        }
        other => panic!("expected shape error, got {other:?}"),
    }
}

#[test]
fn softmax_examples() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(t64(vec![1, 2], vec![0.0, 0.0]));
    let y = g.softmax_rows(x).unwrap();
    assert_eq!(g.value(y).data(), &[0.5, 0.5]);

    let x = g.constant(t64(vec![1, 3], vec![1f64.ln(), 2f64.ln(), 3f64.ln()]));
    let y = g.softmax_rows(x).unwrap();
    for (got, want) in g.value(y).data().iter().zip([1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0]) {
        assert!((got - want).abs() < 1e-15);
    }

    let x = g.constant(t64(vec![1, 2], vec![0.0, -1e9]));
    let y = g.softmax_rows(x).unwrap();
    assert!((g.value(y).data()[0] - 1.0).abs() < 1e-12);
    assert!(g.value(y).data()[1].abs() < 1e-12);
}

#[test]
fn softmax_rejects_nan() {
    let mut g = Graph::<f32>::new();
    let x = g.constant(Tensor::new(vec![1, 2], vec![0.0, f32::NAN]).unwrap());
    assert!(matches!(g.softmax_rows(x), Err(Error::NonFinite(_))));
}

#[test]
fn layer_norm_examples() {
    let mut g = Graph::<f64>::new();
    let gamma4 = g.constant(Tensor::full(vec![4], 1.0));
    let beta4 = g.constant(Tensor::zeros(vec![4]));
    let x = g.constant(t64(vec![1, 4], vec![5.0; 4]));
    let y = g.layer_norm(x, gamma4, beta4, 1e-5).unwrap();
    assert_eq!(g.value(y).data(), &[0.0; 4]);

    let gamma2 = g.constant(Tensor::full(vec![2], 1.0));
    let beta2 = g.constant(Tensor::zeros(vec![2]));
    let x = g.constant(t64(vec![1, 2], vec![1.0, -1.0]));
    let y = g.layer_norm(x, gamma2, beta2, 1e-12).unwrap();
    assert!((g.value(y).data()[0] - 1.0).abs() < 1e-9);
    assert!((g.value(y).data()[1] + 1.0).abs() < 1e-9);
}

#[test]
fn layer_norm_matches_direct_formula() {
    let x = random_tensor(vec![3, 6], 3);
    let gamma = random_tensor(vec![6], 4);
    let beta = random_tensor(vec![6], 5);
    let eps = 1e-5;
    let mut g = Graph::<f64>::new();
    let (vx, vg, vb) = (
        g.constant(x.clone()),
        g.constant(gamma.clone()),
        g.constant(beta.clone()),
    );
    let y = g.layer_norm(vx, vg, vb, eps).unwrap();
    for r in 0..3 {
        let row = x.row(r);
        let mean = row.iter().sum::<f64>() / 6.0;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 6.0;
        for j in 0..6 {
            let want = (row[j] - mean) / (var + eps).sqrt() * gamma.data()[j] + beta.data()[j];
            assert!((g.value(y).data()[r * 6 + j] - want).abs() < 1e-6);
        }
    }
}

#[test]
fn gelu_examples() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(t64(vec![3], vec![0.0, 10.0, 1.0]));
    let y = g.gelu(x);
    let out = g.value(y).data();
    assert_eq!(out[0], 0.0);
    assert!((out[1] - 10.0).abs() < 1e-6);
    // 0.5 * (1 + tanh(sqrt(2/pi) * 1.044715))
    let want = 0.5 * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * 1.044715f64).tanh());
    assert!((out[2] - want).abs() < 1e-12);
    assert!((out[2] - 0.841192).abs() < 1e-5);
}

#[test]
fn embedding_gather_and_scatter_add() {
    let table = random_tensor(vec![4, 3], 6);
    let mut g = Graph::<f64>::new();
    let t = g.leaf(table.clone(), true);
    let e0 = g.embedding(t, &[0]).unwrap();
    assert_eq!(g.value(e0).data(), table.row(0));

    let e = g.embedding(t, &[2, 2]).unwrap();
    assert_eq!(&g.value(e).data()[..3], table.row(2));
    assert_eq!(&g.value(e).data()[3..], table.row(2));
    let s = g.sum(e);
    g.backward(s).unwrap();
    let grad = g.grad(t).unwrap();
    assert_eq!(&grad[6..9], &[2.0, 2.0, 2.0]);
    assert!(grad[..6].iter().chain(&grad[9..]).all(|&v| v == 0.0));
}

#[test]
fn embedding_matches_copy_oracle_and_rejects_bad_ids() {
    let table = random_tensor(vec![9, 5], 7);
    let ids = [3usize, 0, 8, 3, 5, 1];
    let mut g = Graph::<f64>::new();
    let t = g.constant(table.clone());
    let e = g.embedding(t, &ids).unwrap();
    for (r, &id) in ids.iter().enumerate() {
        for c in 0..5 {
            assert_eq!(
                g.value(e).data()[r * 5 + c].to_bits(),
                table.data()[id * 5 + c].to_bits()
            );
        }
    }
    match g.embedding(t, &[1, 9]) {
        Err(Error::Index { index, size }) => assert_eq!((index, size), (9, 9)),
        other => panic!("expected index error, got {other:?}"),
    }
}

#[test]
fn cross_entropy_examples() {
    let mut g = Graph::<f64>::new();
    let uniform = g.constant(Tensor::zeros(vec![1, 4]));
    let l = g.cross_entropy_mean(uniform, &[2], &[true]).unwrap();
    assert!((g.value(l).data()[0] - 4f64.ln()).abs() < 1e-12);

    let peaked = g.constant(t64(vec![1, 2], vec![10.0, -10.0]));
    let l = g.cross_entropy_mean(peaked, &[0], &[true]).unwrap();
    let v = g.value(l).data()[0];
    assert!((v - 2.061e-9).abs() < 1e-11, "{v}");

    assert!(matches!(
        g.cross_entropy_mean(uniform, &[0], &[false]),
        Err(Error::EmptyLoss)
    ));
}

#[test]
fn cross_entropy_matches_log_softmax_oracle() {
    let logits = random_tensor(vec![6, 8], 8);
    let targets = [1usize, 7, 0, 3, 3, 5];
    let mask = [true, false, true, true, false, true];
    let mut want = 0.0;
    for r in 0..6 {
        if !mask[r] {
            continue;
        }
        let row = logits.row(r);
        let z: f64 = row.iter().map(|v| v.exp()).sum();
        want += -(row[targets[r]].exp() / z).ln();
    }
    want /= 4.0;
    let mut g = Graph::<f64>::new();
    let x = g.constant(logits);
    let l = g.cross_entropy_mean(x, &targets, &mask).unwrap();
    assert!((g.value(l).data()[0] - want).abs() < 1e-6);
}

#[test]
fn backward_examples() {
    let mut g = Graph::<f64>::new();
    let x = g.leaf(random_tensor(vec![3, 4], 9), true);
    let y = g.softmax_rows(x).unwrap();
    let s = g.sum(y);
    g.backward(s).unwrap();
    assert!(g.grad(x).unwrap().iter().all(|v| v.abs() < 1e-12));

    let mut g = Graph::<f64>::new();
    let a = g.constant(t64(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]));
    let b = g.leaf(random_tensor(vec![2, 3], 10), true);
    let c = g.matmul(a, b).unwrap();
    let s = g.sum(c);
    g.backward(s).unwrap();
    assert_eq!(g.grad(b).unwrap(), &[1.0; 6]);
    assert!(g.grad(a).is_none());
}

#[test]
fn backward_rejects_non_scalar_loss() {
    let mut g = Graph::<f64>::new();
    let x = g.leaf(Tensor::zeros(vec![2]), true);
    assert!(matches!(g.backward(x), Err(Error::Contract(_))));
}

#[test]
fn backward_twice_doubles_exactly() {
    let mut g = Graph::<f32>::new();
    let w = g.leaf(random_tensor(vec![4, 3], 11).cast(), true);
    let x = g.constant(random_tensor(vec![2, 4], 12).cast());
    let h = g.matmul(x, w).unwrap();
    let a = g.gelu(h);
    let l = g.cross_entropy_mean(a, &[0, 2], &[true, true]).unwrap();
    g.backward(l).unwrap();
    let once = g.grad(w).unwrap().to_vec();
    g.backward(l).unwrap();
    for (twice, o) in g.grad(w).unwrap().iter().zip(&once) {
        assert_eq!(twice.to_bits(), (o * 2.0).to_bits());
    }
}

/// A two-layer composition touching every op the transformer uses.
fn composite<T: Scalar>(g: &mut Graph<T>, v: &[Var]) -> ptune_core::Result<Var> {
    let (x, w1, b1, gamma, beta, w2) = (v[0], v[1], v[2], v[3], v[4], v[5]);
    let h = g.matmul(x, w1)?;
    let h = g.add_bias(h, b1)?;
    let h = g.layer_norm(h, gamma, beta, 1e-5)?;
    let h = g.gelu(h);
    let left = g.slice_cols(h, 0, 2)?;
    let right = g.slice_cols(h, 2, 2)?;
    let scores = g.matmul_nt(left, right)?;
    let scores = g.scale(scores, T::from_real(0.7));
    let scores = g.causal_mask(scores)?;
    let att = g.softmax_rows(scores)?;
    let mixed = g.matmul(att, h)?;
    let joined = g.concat_cols(&[mixed, left])?;
    let stacked = g.concat_rows(&[joined, joined])?;
    let sq = g.mul(stacked, stacked)?;
    let y = g.add(stacked, sq)?;
    let logits = g.matmul(y, w2)?;
    g.cross_entropy_mean(logits, &[0, 1, 2, 3, 4, 0], &[true, true, false, true, true, true])
}

struct Composite;

impl ScalarFn for Composite {
    fn eval<T: Scalar>(&self, g: &mut Graph<T>, inputs: &[Var]) -> ptune_core::Result<Var> {
        composite(g, inputs)
    }
}

#[test]
fn composite_gradients_match_finite_differences() {
    let inputs = vec![
        random_tensor(vec![3, 5], 20),
        random_tensor(vec![5, 4], 21),
        random_tensor(vec![4], 22),
        random_tensor(vec![4], 23),
        random_tensor(vec![4], 24),
        random_tensor(vec![6, 5], 25),
    ];
    let plain = finite_diff_check_many(composite, &inputs, 1e-5).unwrap();
    assert!(plain.max_rel_error < 1e-4, "{plain:?}");
    let report = extended_diff_check(&Composite, &inputs, 1e-8).unwrap();
    assert!(report.max_rel_error < 1e-6, "{report:?}");
}

#[test]
fn finite_diff_examples() {
    let x = t64(vec![1], vec![3.0]);
    let err = finite_diff_check(
        |g, v| {
            let sq = g.mul(v, v)?;
            Ok(g.sum(sq))
        },
        &x,
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-9);

    let logits = random_tensor(vec![4, 6], 30);
    let err = finite_diff_check(|g, v| g.cross_entropy_mean(v, &[0, 5, 2, 1], &[true; 4]), &logits, 1e-5).unwrap();
    assert!(err < 1e-6);

    let constant = finite_diff_check(
        |g, _| Ok(g.constant(Tensor::scalar(2.5))),
        &random_tensor(vec![3], 31),
        1e-5,
    )
    .unwrap();
    assert_eq!(constant, 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn softmax_rows_sum_to_one(rows in 1usize..5, cols in 1usize..9, seed in any::<u64>()) {
        let x = random_tensor(vec![rows, cols], seed);
        let mut g64 = Graph::<f64>::new();
        let v = g64.constant(x.clone());
        let y = g64.softmax_rows(v).unwrap();
        for r in 0..rows {
            let s: f64 = g64.value(y).row(r).iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
        }
        let mut g32 = Graph::<f32>::new();
        let v = g32.constant(x.cast());
        let y = g32.softmax_rows(v).unwrap();
        for r in 0..rows {
            let s: f32 = g32.value(y).row(r).iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn ops_are_deterministic(seed in any::<u64>()) {
        let run = || {
            let inputs = [
                random_tensor(vec![3, 5], seed),
                random_tensor(vec![5, 4], seed ^ 1),
                random_tensor(vec![4], seed ^ 2),
                random_tensor(vec![4], seed ^ 3),
                random_tensor(vec![4], seed ^ 4),
                random_tensor(vec![6, 5], seed ^ 5),
            ];
            let mut g = Graph::<f64>::new();
            let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), true)).collect();
            let l = composite(&mut g, &vars).unwrap();
            g.backward(l).unwrap();
            let mut out = vec![g.value(l).data()[0].to_bits()];
            for v in vars {
                out.extend(g.grad(v).unwrap().iter().map(|x| x.to_bits()));
            }
            out
        };
        prop_assert_eq!(run(), run());
    }

    #[test]
    fn random_composites_pass_gradient_check(seed in any::<u64>()) {
        let inputs = vec![
            random_tensor(vec![3, 5], seed),
            random_tensor(vec![5, 4], seed.wrapping_add(1)),
            random_tensor(vec![4], seed.wrapping_add(2)),
            random_tensor(vec![4], seed.wrapping_add(3)),
            random_tensor(vec![4], seed.wrapping_add(4)),
            random_tensor(vec![6, 5], seed.wrapping_add(5)),
        ];
        let report = extended_diff_check(&Composite, &inputs, 1e-8).unwrap();
        prop_assert!(report.max_rel_error < 1e-6, "{:?}", report);
    }
}
