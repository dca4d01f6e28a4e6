mod common;

use acm_core::graph::Graph;
use acm_core::{Error, Tensor};
use common::*;

fn t(shape: &[usize], data: &[f64]) -> Tensor {
    Tensor::new(shape, data.to_vec()).unwrap()
}

fn max_diff(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn conv2d_all_ones_center_is_nine() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::full(&[1, 1, 3, 3], 1.0)).unwrap();
    let w = g.constant(Tensor::full(&[1, 1, 3, 3], 1.0)).unwrap();
    let y = g.conv2d(x, w, None, 1, 1).unwrap();
    let out = g.value(y);
    assert_eq!(out.shape(), &[1, 1, 3, 3]);
    assert_eq!(out.at4(0, 0, 1, 1), 9.0);
    assert_eq!(out.at4(0, 0, 0, 0), 4.0);
}

#[test]
fn conv2d_identity_kernel() {
    let mut r = rng(1);
    let input = random_tensor(&[1, 1, 6, 7], &mut r);
    let mut k = Tensor::zeros(&[1, 1, 3, 3]);
    k.data_mut()[4] = 1.0;
    let mut g = Graph::new();
    let x = g.constant(input.clone()).unwrap();
    let w = g.constant(k).unwrap();
    let y = g.conv2d(x, w, None, 1, 1).unwrap();
    assert_eq!(g.value(y).data(), input.data());
}

#[test]
fn conv2d_matches_nested_loop_oracle() {
    let mut r = rng(2);
    for &(c, f, k, stride, pad, h) in &[
        (2, 1, 3, 1, 1, 5),
        (2, 3, 3, 1, 0, 5),
        (2, 2, 5, 1, 2, 5),
        (3, 4, 3, 2, 1, 7),
        (1, 2, 1, 1, 0, 4),
    ] {
        let x = random_tensor(&[2, c, h, h], &mut r);
        let w = random_tensor(&[f, c, k, k], &mut r);
        let b = random_tensor(&[f], &mut r);
        let mut g = Graph::new();
        let (xv, wv, bv) = (
            g.constant(x.clone()).unwrap(),
            g.constant(w.clone()).unwrap(),
            g.constant(b.clone()).unwrap(),
        );
        let y = g.conv2d(xv, wv, Some(bv), stride, pad).unwrap();
        let oracle = conv2d_naive(&x, &w, Some(&b), stride, pad);
        assert!(max_diff(g.value(y), &oracle) < 1e-12);
    }
}

#[test]
fn conv2d_shape_errors_name_the_dimension() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::zeros(&[1, 2, 4, 4])).unwrap();
    let w = g.constant(Tensor::zeros(&[1, 3, 3, 3])).unwrap();
    match g.conv2d(x, w, None, 1, 1) {
        Err(Error::Shape { dim, .. }) => assert_eq!(dim, "input channels"),
        other => panic!("expected shape error, got {other:?}"),
    }
    let even = g.constant(Tensor::zeros(&[1, 2, 2, 2])).unwrap();
    assert!(matches!(g.conv2d(x, even, None, 1, 0), Err(Error::Shape { .. })));
}

#[test]
fn conv_transpose_disjoint_splat() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::full(&[1, 1, 2, 2], 1.0)).unwrap();
    let w = g.constant(Tensor::full(&[1, 1, 2, 2], 1.0)).unwrap();
    let y = g.conv_transpose2d(x, w, 2, 0).unwrap();
    assert_eq!(g.value(y).shape(), &[1, 1, 4, 4]);
    assert!(g.value(y).data().iter().all(|&v| v == 1.0));
}

#[test]
fn conv_transpose_is_adjoint_of_conv() {
    let mut r = rng(3);
    for &(c, f, k, stride, pad, h) in &[(2, 3, 3, 2, 1, 5), (1, 2, 3, 1, 1, 6), (3, 2, 5, 3, 1, 9)] {
        let x = random_tensor(&[1, c, h, h], &mut r);
        let w = random_tensor(&[f, c, k, k], &mut r);
        let mut g = Graph::new();
        let (xv, wv) = (g.constant(x.clone()).unwrap(), g.constant(w.clone()).unwrap());
        let cx = g.conv2d(xv, wv, None, stride, pad).unwrap();
        let y = random_tensor(g.value(cx).shape(), &mut r);
        let yv = g.constant(y.clone()).unwrap();
        let ty = g.conv_transpose2d(yv, wv, stride, pad).unwrap();
        assert_eq!(g.value(ty).shape(), x.shape());
        let lhs = g.value(cx).dot(&y).unwrap();
        let rhs = x.dot(g.value(ty)).unwrap();
        assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
    }
}

#[test]
fn conv_transpose_matches_zero_stuffing_oracle() {
    let mut r = rng(4);
    for &(c, f, k, stride, pad) in &[(1, 1, 3, 2, 0), (1, 1, 3, 2, 1), (2, 3, 4, 4, 0), (2, 2, 2, 2, 0)] {
        let x = random_tensor(&[1, c, 3, 3], &mut r);
        let w = random_tensor(&[c, f, k, k], &mut r);
        let mut g = Graph::new();
        let (xv, wv) = (g.constant(x.clone()).unwrap(), g.constant(w.clone()).unwrap());
        let y = g.conv_transpose2d(xv, wv, stride, pad).unwrap();
        let oracle = conv_transpose2d_zero_stuffing(&x, &w, stride, pad);
        assert!(max_diff(g.value(y), &oracle) < 1e-12);
    }
}

#[test]
fn conv_transpose_rejects_empty_output() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::zeros(&[1, 1, 1, 1])).unwrap();
    let w = g.constant(Tensor::zeros(&[1, 1, 1, 1])).unwrap();
    assert!(g.conv_transpose2d(x, w, 1, 1).is_err());
}

#[test]
fn max_pool_basic_and_ties() {
    let mut g = Graph::new();
    let x = g.param(t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0])).unwrap();
    let y = g.max_pool2d(x, 2, 2).unwrap();
    assert_eq!(g.value(y).data(), &[4.0]);

    let mut g = Graph::new();
    let x = g.param(Tensor::full(&[1, 1, 4, 4], 7.0)).unwrap();
    let y = g.max_pool2d(x, 2, 2).unwrap();
    assert!(g.value(y).data().iter().all(|&v| v == 7.0));
    let s = g.sum(y).unwrap();
    g.backward(s).unwrap();
    let grad = g.grad(x).unwrap();
    let expected: Vec<f64> = (0..16)
        .map(|i| if (i / 4) % 2 == 0 && (i % 4) % 2 == 0 { 1.0 } else { 0.0 })
        .collect();
    assert_eq!(grad, expected.as_slice());
}

#[test]
fn max_pool_matches_exhaustive_oracle() {
    let mut r = rng(5);
    for _ in 0..20 {
        let x = random_tensor(&[1, 2, 4, 4], &mut r);
        let mut g = Graph::new();
        let xv = g.constant(x.clone()).unwrap();
        let y = g.max_pool2d(xv, 2, 2).unwrap();
        for c in 0..2 {
            for oy in 0..2 {
                for ox in 0..2 {
                    let mut m = f64::NEG_INFINITY;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            m = m.max(x.at4(0, c, 2 * oy + dy, 2 * ox + dx));
                        }
                    }
                    assert_eq!(g.value(y).at4(0, c, oy, ox), m);
                }
            }
        }
    }
}

#[test]
fn elementwise_ops() {
    let mut g = Graph::new();
    let x = g.constant(t(&[1, 1, 1, 2], &[-1.0, 2.0])).unwrap();
    let r = g.relu(x).unwrap();
    assert_eq!(g.value(r).data(), &[0.0, 2.0]);
    let a = g.add(x, r).unwrap();
    assert_eq!(g.value(a).data(), &[-1.0, 4.0]);
    let s = g.scalar_mul(a, -0.5).unwrap();
    assert_eq!(g.value(s).data(), &[0.5, -2.0]);
    let other = g.constant(Tensor::zeros(&[1, 1, 2, 1])).unwrap();
    assert!(g.add(x, other).is_err());
}

#[test]
fn weighted_sum_convex_identity() {
    let mut r = rng(6);
    let map = random_tensor(&[1, 1, 5, 5], &mut r);
    let mut g = Graph::new();
    let maps: Vec<_> = (0..4).map(|_| g.constant(map.clone()).unwrap()).collect();
    let w = g.constant(Tensor::full(&[4], 0.25)).unwrap();
    let y = g.weighted_sum(&maps, w).unwrap();
    assert!(max_diff(g.value(y), &map) < 1e-15);
    let bad = g.constant(Tensor::full(&[3], 0.25)).unwrap();
    assert!(g.weighted_sum(&maps, bad).is_err());
}

#[test]
fn weighted_sum_weight_gradient_matches_finite_differences() {
    let mut r = rng(7);
    let mut inputs: Vec<Tensor> = (0..4).map(|_| random_tensor(&[1, 1, 4, 4], &mut r)).collect();
    inputs.push(random_tensor(&[4], &mut r));
    let target = random_tensor(&[1, 1, 4, 4], &mut r);
    let err = finite_difference_check(
        &inputs,
        |g, v| {
            let y = g.weighted_sum(&v[..4], v[4])?;
            probe_loss(g, y, &target)
        },
        16,
        1e-5,
        &mut r,
    );
    assert!(err < 1e-6, "relative error {err}");
}

#[test]
fn backward_of_sum_is_ones() {
    let mut g = Graph::new();
    let x = g.param(Tensor::from_fn(&[2, 3], |i| i as f64)).unwrap();
    let s = g.sum(x).unwrap();
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[1.0; 6]);
}

#[test]
fn backward_contract_errors() {
    let mut g = Graph::new();
    let x = g.param(Tensor::zeros(&[2])).unwrap();
    assert!(matches!(g.backward(x), Err(Error::NonScalarLoss(_))));
    let s = g.sum(x).unwrap();
    g.backward(s).unwrap();
    assert!(matches!(g.backward(s), Err(Error::GraphConsumed)));
    assert!(matches!(g.sum(x), Err(Error::GraphConsumed)));
}

#[test]
fn every_op_passes_finite_differences() {
    let worst = worst_op_gradient_error(8);
    assert!(worst < 1e-4, "worst relative error {worst}");
}

#[test]
fn forward_is_deterministic() {
    let run = || {
        let mut r = rng(9);
        let x = random_tensor(&[1, 2, 8, 8], &mut r);
        let w = random_tensor(&[3, 2, 3, 3], &mut r);
        let mut g = Graph::new();
        let (xv, wv) = (g.constant(x).unwrap(), g.constant(w).unwrap());
        let y = g.conv2d(xv, wv, None, 1, 1).unwrap();
        let p = g.max_pool2d(y, 2, 2).unwrap();
        g.value(p).clone()
    };
    assert_eq!(run().data(), run().data());
}
