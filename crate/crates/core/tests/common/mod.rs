//! Independent oracles shared by the integration suites. Nothing here calls
//! into the optimized kernels it is used to check.
#![allow(dead_code)]

use acm_core::graph::{Graph, Var};
use acm_core::model::params::Bound;
use acm_core::{AttentionConfig, AttentionPlan, ModelBundle, Preset, Rect};
use acm_core::{Result, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Direct nested-sum cross-correlation.
pub fn conv2d_naive(x: &Tensor, w: &Tensor, b: Option<&Tensor>, stride: usize, pad: usize) -> Tensor {
    let [n, c, h, wd] = <[usize; 4]>::try_from(x.shape()).unwrap();
    let [f, _, kh, kw] = <[usize; 4]>::try_from(w.shape()).unwrap();
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (wd + 2 * pad - kw) / stride + 1;
    let mut out = Tensor::zeros(&[n, f, oh, ow]);
    for bi in 0..n {
        for fi in 0..f {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut s = b.map_or(0.0, |b| b.data()[fi]);
                    for ci in 0..c {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                s += w.at4(fi, ci, ky, kx) * x.at4(bi, ci, iy as usize, ix as usize);
                            }
                        }
                    }
                    let idx = ((bi * f + fi) * oh + oy) * ow + ox;
                    out.data_mut()[idx] = s;
                }
            }
        }
    }
    out
}

/// Transposed convolution as: insert `stride − 1` zeros between input pixels,
/// pad by `k − 1 − pad`, then correlate with the spatially flipped,
/// channel-swapped kernel at stride 1.
pub fn conv_transpose2d_zero_stuffing(x: &Tensor, w: &Tensor, stride: usize, pad: usize) -> Tensor {
    let [n, c, h, wd] = <[usize; 4]>::try_from(x.shape()).unwrap();
    let [_, f, kh, kw] = <[usize; 4]>::try_from(w.shape()).unwrap();
    assert!(pad < kh && pad < kw);
    let (sh, sw) = ((h - 1) * stride + 1, (wd - 1) * stride + 1);
    let (ph, pw) = (kh - 1 - pad, kw - 1 - pad);
    let (th, tw) = (sh + 2 * ph, sw + 2 * pw);
    let mut stuffed = Tensor::zeros(&[n, c, th, tw]);
    for bi in 0..n {
        for ci in 0..c {
            for y in 0..h {
                for xx in 0..wd {
                    let idx = ((bi * c + ci) * th + ph + y * stride) * tw + pw + xx * stride;
                    stuffed.data_mut()[idx] = x.at4(bi, ci, y, xx);
                }
            }
        }
    }
    let mut flipped = Tensor::zeros(&[f, c, kh, kw]);
    for ci in 0..c {
        for fi in 0..f {
            for ky in 0..kh {
                for kx in 0..kw {
                    let idx = ((fi * c + ci) * kh + ky) * kw + kx;
                    flipped.data_mut()[idx] = w.at4(ci, fi, kh - 1 - ky, kw - 1 - kx);
                }
            }
        }
    }
    conv2d_naive(&stuffed, &flipped, None, 1, 0)
}

/// Relative error with a small absolute floor on the denominator.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-7)
}

/// Central finite differences on `samples` random coordinates of every input.
/// `build` must record a scalar loss from the given leaves. Returns the worst
/// relative error between analytic and numeric derivatives.
pub fn finite_difference_check(
    inputs: &[Tensor],
    build: impl Fn(&mut Graph, &[Var]) -> Result<Var>,
    samples: usize,
    h: f64,
    rng: &mut impl Rng,
) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone()).unwrap()).collect();
    let loss = build(&mut g, &vars).unwrap();
    g.backward(loss).unwrap();
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| g.grad(v).map_or(vec![0.0; t.numel()], <[f64]>::to_vec))
        .collect();

    let eval = |perturbed: &[Tensor]| -> f64 {
        let mut g = Graph::new();
        let vars: Vec<Var> = perturbed.iter().map(|t| g.constant(t.clone()).unwrap()).collect();
        let loss = build(&mut g, &vars).unwrap();
        g.value(loss).data()[0]
    };

    let mut worst = 0.0_f64;
    for (i, (t, grad)) in inputs.iter().zip(&analytic).enumerate() {
        for _ in 0..samples.min(t.numel()) {
            let j = rng.random_range(0..t.numel());
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += h;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= h;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
            worst = worst.max(rel_err(grad[j], numeric));
        }
    }
    worst
}

/// Scalar loss `½‖x − target‖²`, giving every element of `x` a distinct gradient.
pub fn probe_loss(g: &mut Graph, x: Var, target: &Tensor) -> Result<Var> {
    g.half_squared_error(x, target.data(), None)
}

/// Worst finite-difference error over every recorded op, each behind a
/// probe loss so every output element gets a distinct upstream gradient.
pub fn worst_op_gradient_error(seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;

    let target = random_tensor(&[1, 3, 4, 4], &mut r);
    let inputs = vec![
        random_tensor(&[1, 2, 4, 4], &mut r),
        random_tensor(&[3, 2, 3, 3], &mut r),
        random_tensor(&[3], &mut r),
    ];
    worst = worst.max(finite_difference_check(
        &inputs,
        |g, v| {
            let y = g.conv2d(v[0], v[1], Some(v[2]), 1, 1)?;
            probe_loss(g, y, &target)
        },
        24,
        1e-5,
        &mut r,
    ));

    let target = random_tensor(&[1, 2, 8, 8], &mut r);
    let inputs = vec![random_tensor(&[1, 3, 2, 2], &mut r), random_tensor(&[3, 2, 4, 4], &mut r)];
    worst = worst.max(finite_difference_check(
        &inputs,
        |g, v| {
            let y = g.conv_transpose2d(v[0], v[1], 4, 0)?;
            probe_loss(g, y, &target)
        },
        24,
        1e-5,
        &mut r,
    ));

    let target = random_tensor(&[1, 2, 2, 2], &mut r);
    let inputs = vec![random_tensor(&[1, 2, 4, 4], &mut r)];
    worst = worst.max(finite_difference_check(
        &inputs,
        |g, v| {
            let y = g.max_pool2d(v[0], 2, 2)?;
            probe_loss(g, y, &target)
        },
        24,
        1e-5,
        &mut r,
    ));

    // relu, add, scalar_mul, mask, concat, crop composed
    let target = random_tensor(&[1, 3, 2, 3], &mut r);
    let mask: Vec<f64> = (0..16).map(|_| r.random_range(0.0..2.0)).collect();
    let inputs = vec![random_tensor(&[1, 2, 4, 4], &mut r), random_tensor(&[1, 1, 4, 4], &mut r)];
    worst = worst.max(finite_difference_check(
        &inputs,
        |g, v| {
            let a = g.relu(v[0])?;
            let b = g.scalar_mul(v[1], 1.7)?;
            let m = g.mask(b, &mask)?;
            let c = g.concat_channels(&[a, m])?;
            let d = g.add(c, c)?;
            let e = g.crop(d, 1, 0, 2, 3)?;
            probe_loss(g, e, &target)
        },
        24,
        1e-5,
        &mut r,
    ));

        let target = random_tensor(&[1, 1, 3, 3], &mut r);
    let inputs = vec![
        random_tensor(&[1, 1, 3, 3], &mut r),
        random_tensor(&[1, 1, 3, 3], &mut r),
        random_tensor(&[1, 1, 3, 3], &mut r),
        random_tensor(&[3], &mut r),
    ];
    worst = worst.max(finite_difference_check(
        &inputs,
        |g, v| {
            let y = g.weighted_sum(&v[..3], v[3])?;
            let s = g.sum(y)?;
            let l = probe_loss(g, y, &target)?;
            let s = g.scalar_mul(s, 0.1)?;
            g.add(l, s)
        },
        9,
        1e-5,
        &mut r,
    ));
    worst
}

/// Rescales every weight so activations are O(1). The default init is small
/// enough that most of the network sits near zero and checks become vacuous.
pub fn lively(bundle: &mut ModelBundle, seed: u64) {
    let mut r = rng(seed);
    let names = bundle.params.names().to_vec();
    for (name, t) in names.iter().zip(bundle.params.tensors_mut()) {
        let shape = t.shape().to_vec();
        let fan_in = if name.ends_with(".up.weight") {
            shape[0]
        } else {
            shape[1..].iter().product::<usize>().max(1)
        };
        let std = (2.0 / fan_in as f64).sqrt();
        for v in t.data_mut() {
            *v = if name.ends_with(".bias") {
                0.05
            } else if name == "fine.fusion_weights" {
                0.25
            } else {
                r.random_range(-1.7..1.7) * std
            };
        }
    }
}

fn model_loss(bundle: &ModelBundle, image: &Tensor, plan: &AttentionPlan, targets: &[Tensor; 2]) -> (Graph, Bound, Var) {
    let mut g = Graph::new();
    let p = bundle.params.bind(&mut g).unwrap();
    let x = g.constant(image.clone()).unwrap();
    let a = bundle.assemble_with_plan(&mut g, &p, x, plan.clone()).unwrap();
    let la = g.half_squared_error(a.m_a, targets[0].data(), None).unwrap();
    let lb = g.half_squared_error(a.m_b, targets[1].data(), None).unwrap();
    let loss = g.add(la, lb).unwrap();
    (g, p, loss)
}

/// Finite differences through the whole tiny model (coarse, fine, routing,
/// smooth) under a fixed plan with an overlapping and an edge-clipped region.
/// Samples `per_tensor` coordinates of every parameter tensor and every
/// fusion weight. Returns the worst relative error and the number of
/// coordinates checked.
pub fn worst_model_gradient_error(seed: u64, per_tensor: usize) -> (f64, usize) {
    let mut r = rng(seed);
    let mut bundle = ModelBundle::new(Preset::Tiny, 3, AttentionConfig::sparse(), seed).unwrap();
    lively(&mut bundle, seed);
    let (h, w) = (16, 16);
    let image = Tensor::from_fn(&[1, 3, h, w], |_| r.random_range(0.0..1.0));
    let targets = [Tensor::from_fn(&[1, 1, h, w], |_| r.random_range(0.0..0.5)), Tensor::from_fn(&[1, 1, h, w], |_| r.random_range(0.0..0.5))];
    let plan = AttentionPlan::from_regions(
        h,
        w,
        vec![
            Rect::centered_clipped(5, 5, 6, 5, h, w),
            Rect::centered_clipped(7, 7, 6, 5, h, w),
            Rect::centered_clipped(15, 0, 6, 5, h, w),
        ],
    )
    .unwrap();

    let (mut g, p, loss) = model_loss(&bundle, &image, &plan, &targets);
    g.backward(loss).unwrap();
    let analytic = bundle.params.take_grads(&mut g, &p);

    let eval = |b: &ModelBundle| {
        let (g, _, loss) = model_loss(b, &image, &plan, &targets);
        g.value(loss).data()[0]
    };
    let step = 1e-5;
    let mut worst = 0.0_f64;
    let mut checked = 0;
    for (i, grad) in analytic.iter().enumerate() {
        let n = bundle.params.tensors_mut()[i].numel();
        let coords: Vec<usize> = if bundle.params.names()[i] == "fine.fusion_weights" {
            (0..n).collect()
        } else {
            (0..per_tensor.min(n)).map(|_| r.random_range(0..n)).collect()
        };
        for j in coords {
            let orig = bundle.params.tensors_mut()[i].data()[j];
            bundle.params.tensors_mut()[i].data_mut()[j] = orig + step;
            let plus = eval(&bundle);
            bundle.params.tensors_mut()[i].data_mut()[j] = orig - step;
            let minus = eval(&bundle);
            bundle.params.tensors_mut()[i].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            worst = worst.max(rel_err(grad[j], numeric));
            checked += 1;
        }
    }
    (worst, checked)
}
