use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::attention::Rect;

pub(crate) fn tiny(seed: u64) -> ModelBundle {
    ModelBundle::new(Preset::Tiny, 3, AttentionConfig::sparse(), seed).unwrap()
}

pub(crate) fn random_image(h: usize, w: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(&[1, 3, h, w], |_| rng.random_range(0.0..1.0))
}

/// Parameters scaled so activations are O(1); the default init is too small to
/// tell apart "correct" from "everything is zero".
pub(crate) fn lively(bundle: &mut ModelBundle, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names: Vec<String> = bundle.params.names().to_vec();
    for name in names {
        let t = bundle.params.by_name_mut(&name).unwrap();
        let shape = t.shape().to_vec();
        let fan_in = if name.ends_with(".up.weight") {
            shape[0]
        } else {
            shape[1..].iter().product::<usize>().max(1)
        };
        let std = libm::sqrt(2.0 / fan_in as f64);
        for v in t.data_mut() {
            *v = if name.ends_with(".bias") {
                0.05
            } else if name == "fine.fusion_weights" {
                0.25
            } else {
                rng.random_range(-1.7..1.7) * std
            };
        }
    }
}

struct Maps {
    c0: Tensor,
    fused: Tensor,
    heads: Vec<Tensor>,
    m_b: Tensor,
    m_a: Tensor,
    plan: AttentionPlan,
}

fn run(bundle: &ModelBundle, image: &Tensor, plan: Option<AttentionPlan>) -> Maps {
    let mut g = Graph::new();
    let p = bundle.params.bind(&mut g).unwrap();
    let x = g.constant(image.clone()).unwrap();
    let a = match plan {
        Some(plan) => bundle.assemble_with_plan(&mut g, &p, x, plan).unwrap(),
        None => bundle.assemble_forward(&mut g, &p, x).unwrap(),
    };
    Maps {
        c0: g.value(a.c0).clone(),
        fused: g.value(a.fine.fused).clone(),
        heads: a.fine.heads.iter().map(|&v| g.value(v).clone()).collect(),
        m_b: g.value(a.m_b).clone(),
        m_a: g.value(a.m_a).clone(),
        plan: a.plan,
    }
}

#[test]
fn every_variant_preserves_spatial_shape() {
    let mut bundle = tiny(1);
    lively(&mut bundle, 1);
    for &(h, w) in &[(16, 16), (24, 40), (19, 30), (9, 13)] {
        let image = random_image(h, w, 2);
        for v in Variant::ALL {
            let (out, plan) = bundle.ablation_forward(v, &image).unwrap();
            assert_eq!(out.shape(), &[h, w], "{v} on {h}x{w}");
            assert!(out.data().iter().all(|x| x.is_finite()));
            if let Some(plan) = plan {
                assert_eq!((plan.height, plan.width), (h, w));
            }
        }
    }
}

#[test]
fn coarse_of_zero_image_is_zero() {
    let bundle = tiny(3);
    let (c, _) = bundle
        .ablation_forward(Variant::C, &Tensor::zeros(&[1, 3, 16, 24]))
        .unwrap();
    assert!(c.data().iter().all(|&v| v == 0.0));
}

#[test]
fn coarse_rejects_indivisible_size() {
    let bundle = tiny(4);
    let mut g = Graph::new();
    let p = bundle.params.bind(&mut g).unwrap();
    let x = g.constant(random_image(18, 16, 1)).unwrap();
    let err = bundle.coarse_forward(&mut g, &p, x).unwrap_err();
    assert!(alloc::format!("{err}").contains("pad"), "{err}");
    let x = g.constant(random_image(20, 20, 1)).unwrap();
    assert!(bundle.fine_forward(&mut g, &p, x).is_err());
}

#[test]
fn fusion_basis_weight_selects_first_head() {
    let mut bundle = tiny(5);
    lively(&mut bundle, 5);
    let w = bundle.params.by_name_mut("fine.fusion_weights").unwrap();
    w.data_mut().copy_from_slice(&[1.0, 0.0, 0.0, 0.0]);
    let m = run(&bundle, &random_image(16, 16, 5), None);
    assert_eq!(m.fused, m.heads[0]);
}

#[test]
fn identical_heads_with_quarter_weights_reproduce_the_map() {
    let mut bundle = tiny(6);
    for i in 0..bundle.params.len() {
        let name = bundle.params.names()[i].clone();
        if !name.starts_with("fine.head") {
            continue;
        }
        let t = bundle.params.by_name_mut(&name).unwrap();
        let fill = if name.ends_with("reduce.weight") {
            0.0
        } else if name.ends_with("reduce.bias") {
            0.375
        } else {
            1.0
        };
        t.data_mut().fill(fill);
    }
    let m = run(&bundle, &random_image(16, 24, 6), None);
    for h in &m.heads {
        assert!(h.data().iter().all(|&v| v == 0.375));
    }
    assert!(m.fused.data().iter().all(|&v| v == 0.375));
}

#[test]
fn full_coverage_makes_m_b_equal_f() {
    let mut bundle = tiny(7);
    lively(&mut bundle, 7);
    let plan = AttentionPlan::from_regions(16, 16, vec![Rect { top: 0, left: 0, height: 16, width: 16 }]).unwrap();
    let m = run(&bundle, &random_image(16, 16, 7), Some(plan));
    assert_eq!(m.m_b.data(), m.fused.data());
}

#[test]
fn single_pixel_region_leaves_coarse_elsewhere() {
    let mut bundle = tiny(8);
    lively(&mut bundle, 8);
    let plan = AttentionPlan::from_regions(32, 32, vec![Rect { top: 5, left: 9, height: 1, width: 1 }]).unwrap();
    let m = run(&bundle, &random_image(32, 32, 8), Some(plan));
    let differing: Vec<usize> = (0..32 * 32).filter(|&i| m.m_b.data()[i] != m.c0.data()[i]).collect();
    assert!(differing.len() <= 1);
    assert!(differing.iter().all(|&i| i == 5 * 32 + 9));
    assert_eq!(m.m_b.data()[5 * 32 + 9], m.fused.data()[5 * 32 + 9]);
}

#[test]
fn m_b_partitions_into_coarse_and_fine() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut bundle = tiny(9);
    lively(&mut bundle, 9);
    let image = random_image(24, 32, 9);
    for trial in 0..6 {
        let plan = if trial == 0 {
            None
        } else {
            let regions = (0..rng.random_range(1..4))
                .map(|_| {
                    let (h, w) = (rng.random_range(1..12), rng.random_range(1..12));
                    let (r, c) = (rng.random_range(0..24), rng.random_range(0..32));
                    Rect::centered_clipped(r, c, h, w, 24, 32)
                })
                .collect();
            Some(AttentionPlan::from_regions(24, 32, regions).unwrap())
        };
        let m = run(&bundle, &image, plan);
        for i in 0..24 * 32 {
            let expected = if m.plan.union_mask[i] == 1.0 { m.fused.data()[i] } else { m.c0.data()[i] };
            assert_eq!(m.m_b.data()[i], expected);
        }
    }
}

#[test]
fn variants_match_their_definitions() {
    let mut bundle = tiny(10);
    lively(&mut bundle, 10);
    let image = random_image(16, 24, 10);
    let m = run(&bundle, &image, None);
    let flat = |t: &Tensor| t.data().to_vec();

    let (c, plan) = bundle.ablation_forward(Variant::C, &image).unwrap();
    assert!(plan.is_none());
    assert_eq!(flat(&c), flat(&m.c0));

    let (cfs, plan) = bundle.ablation_forward(Variant::CFS, &image).unwrap();
    assert_eq!(flat(&cfs), flat(&m.m_a));
    assert_eq!(plan.unwrap(), m.plan);

    let (cf, _) = bundle.ablation_forward(Variant::CF, &image).unwrap();
    assert_eq!(flat(&cf), flat(&m.m_b));

    // fine on the whole image == the fine branch under a full-image plan
    let (f, _) = bundle.ablation_forward(Variant::F, &image).unwrap();
    let full = AttentionPlan::from_regions(16, 24, vec![Rect { top: 0, left: 0, height: 16, width: 24 }]).unwrap();
    let all = run(&bundle, &image, Some(full));
    assert_eq!(flat(&f), flat(&all.fused));
    assert_eq!(flat(&f), flat(&all.m_b));

    assert!("C+S".parse::<Variant>().is_err());
    for v in Variant::ALL {
        assert_eq!(v.as_str().parse::<Variant>().unwrap(), v);
    }
}

#[test]
fn padded_prediction_selects_plan_on_the_valid_area() {
    let mut bundle = tiny(11);
    lively(&mut bundle, 11);
    let (map, plan) = bundle.predict(&random_image(21, 27, 11)).unwrap();
    assert_eq!(map.shape(), &[21, 27]);
    for &(r, c) in &plan.centers {
        assert!(r < 21 && c < 27);
    }
    for reg in &plan.regions {
        assert!(reg.top + reg.height <= 21 && reg.left + reg.width <= 27);
    }
}

#[test]
fn construction_is_seeded() {
    let a = tiny(12);
    let b = tiny(12);
    let c = tiny(13);
    let image = random_image(16, 16, 12);
    assert_eq!(a.predict(&image).unwrap().0, b.predict(&image).unwrap().0);
    assert!(a.params.iter().zip(b.params.iter()).all(|(x, y)| x == y));
    assert!(a.params.iter().zip(c.params.iter()).any(|(x, y)| x.1 != y.1));
}

#[test]
fn default_init_statistics() {
    let bundle = tiny(14);
    for (name, t) in bundle.params.iter() {
        if name.ends_with(".bias") {
            assert!(t.data().iter().all(|&v| v == 0.0), "{name}");
        } else if name == "fine.fusion_weights" {
            assert_eq!(t.data(), &[0.25; 4]);
        } else if t.numel() > 500 {
            let n = t.numel() as f64;
            let mean = t.sum() / n;
            let var = t.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            assert!(mean.abs() < 0.002, "{name} mean {mean}");
            assert!((libm::sqrt(var) - INIT_STD).abs() < 0.002, "{name} std {}", libm::sqrt(var));
        }
    }
}

#[test]
fn load_params_requires_every_name() {
    let a = tiny(15);
    let mut b = tiny(16);
    b.load_params(a.params.iter().map(|(n, t)| (n, t.clone()))).unwrap();
    assert!(b.params.iter().zip(a.params.iter()).all(|(x, y)| x.1.data() == y.1.data()));
    let partial: Vec<_> = a.params.iter().skip(1).map(|(n, t)| (n, t.clone())).collect();
    assert!(b.load_params(partial).is_err());
    assert!(b.load_params([("nope", Tensor::zeros(&[1]))]).is_err());
}

#[test]
fn paper_preset_builds_expected_widths() {
    let bundle = ModelBundle::new(Preset::Paper, 3, AttentionConfig::dense(), 0).unwrap();
    assert_eq!(bundle.params.by_name("coarse.col0.conv0.weight").unwrap().shape(), &[16, 3, 9, 9]);
    assert_eq!(bundle.params.by_name("coarse.col2.conv3.weight").unwrap().shape(), &[12, 24, 3, 3]);
    assert_eq!(bundle.params.by_name("fine.block5.conv2.weight").unwrap().shape(), &[512, 512, 3, 3]);
    assert_eq!(bundle.params.by_name("fine.head5.up.weight").unwrap().shape(), &[1, 1, 8, 8]);
    assert_eq!(bundle.params.by_name("fine.head2.up.weight").unwrap().shape(), &[1, 1, 2, 2]);
    assert_eq!(bundle.params.by_name("smooth.conv0.weight").unwrap().shape(), &[12, 1, 3, 3]);
    assert_eq!(bundle.size_multiple(), 8);
}
