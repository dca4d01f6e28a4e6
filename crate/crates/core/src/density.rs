//! Ground-truth density maps from head annotations.
//!
//! Every head becomes a Gaussian whose bandwidth is `beta` times the mean
//! distance to its `k` nearest annotated neighbours, so heads in crowded
//! (and usually farther away) parts of the scene get tighter kernels. Each
//! kernel is truncated, clipped to the image and renormalised so it adds
//! exactly one unit of mass.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Head positions for one image. Coordinates are `(x, y)` in pixels, with
/// pixel `(row, col)` centred at `(col, row)`.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Annotation {
    pub height: usize,
    pub width: usize,
    pub heads: Vec<(f64, f64)>,
}

impl Annotation {
    pub fn new(height: usize, width: usize, heads: Vec<(f64, f64)>) -> Result<Self> {
        let ann = Annotation {
            height,
            width,
            heads,
        };
        ann.validate()?;
        Ok(ann)
    }

    pub fn count(&self) -> usize {
        self.heads.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::Annotation(format!(
                "image size {}x{} is empty",
                self.height, self.width
            )));
        }
        for (i, &(x, y)) in self.heads.iter().enumerate() {
            if !in_bounds(self.height, self.width, x, y) {
                return Err(Error::Annotation(format!(
                    "head {i} at ({x}, {y}) lies outside {}x{}",
                    self.height, self.width
                )));
            }
        }
        Ok(())
    }
}

fn in_bounds(height: usize, width: usize, x: f64, y: f64) -> bool {
    x.is_finite() && y.is_finite() && x >= 0.0 && y >= 0.0 && x <= width as f64 && y <= height as f64
}

/// Geometry-adaptive kernel settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelParams {
    pub beta: f64,
    pub k: usize,
    /// Kernel support half-width in units of sigma.
    pub truncation_radius_sigmas: f64,
    /// Bandwidth in pixels for images with fewer than two heads.
    pub sigma_fallback: f64,
}

impl Default for KernelParams {
    fn default() -> Self {
        KernelParams {
            beta: 0.3,
            k: 3,
            truncation_radius_sigmas: 4.0,
            sigma_fallback: 15.0,
        }
    }
}

impl KernelParams {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.beta > 0.0) {
            problems.push(format!("beta must be > 0, got {}", self.beta));
        }
        if self.k == 0 {
            problems.push("k must be >= 1".into());
        }
        if !(self.truncation_radius_sigmas > 0.0) {
            problems.push(format!(
                "truncation_radius_sigmas must be > 0, got {}",
                self.truncation_radius_sigmas
            ));
        }
        if !(self.sigma_fallback > 0.0) {
            problems.push(format!(
                "sigma_fallback must be > 0, got {}",
                self.sigma_fallback
            ));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }
}

/// Non-negative per-pixel density at image resolution, stored as `Tensor[H, W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMap(Tensor);

impl DensityMap {
    pub fn zeros(height: usize, width: usize) -> Self {
        DensityMap(Tensor::zeros(&[height, width]))
    }

    /// Wraps a map; any tensor whose shape is `[H, W]` or `[1, 1, H, W]` is accepted.
    pub fn from_tensor(t: Tensor) -> Result<Self> {
        let (h, w) = t
            .spatial()
            .ok_or_else(|| Error::shape("DensityMap", "rank", "need at least 2 dims"))?;
        if t.numel() != h * w {
            return Err(Error::shape(
                "DensityMap",
                "channels",
                format!("expected a single plane, got {:?}", t.shape()),
            ));
        }
        Ok(DensityMap(t.reshape(&[h, w])?))
    }

    pub fn height(&self) -> usize {
        self.0.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.0.shape()[1]
    }

    pub fn values(&self) -> &[f64] {
        self.0.data()
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        self.0.data_mut()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.0.data()[row * self.width() + col]
    }

    pub fn sum(&self) -> f64 {
        self.0.sum()
    }

    pub fn as_tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }
}

/// Mean distance from head `i` to its `k` nearest other heads (all of them
/// when fewer than `k` exist).
pub fn knn_mean_distance(heads: &[(f64, f64)], i: usize, k: usize) -> Result<f64> {
    const OP: &str = "knn_mean_distance";
    if heads.len() < 2 {
        return Err(Error::invalid(
            OP,
            format!("need at least 2 heads, got {}", heads.len()),
        ));
    }
    if i >= heads.len() {
        return Err(Error::invalid(
            OP,
            format!("head index {i} out of range for {}", heads.len()),
        ));
    }
    if k == 0 {
        return Err(Error::invalid(OP, "k must be >= 1"));
    }
    let (xi, yi) = heads[i];
    let mut dists: Vec<f64> = heads
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, &(x, y))| libm::hypot(x - xi, y - yi))
        .collect();
    let k = k.min(dists.len());
    if k < dists.len() {
        dists.select_nth_unstable_by(k - 1, f64::total_cmp);
    }
    let nearest = &mut dists[..k];
    nearest.sort_unstable_by(f64::total_cmp);
    Ok(nearest.iter().sum::<f64>() / k as f64)
}

/// Adds one unit of Gaussian mass centred at `center = (x, y)`.
pub fn gaussian_splat(
    map: &mut DensityMap,
    center: (f64, f64),
    sigma: f64,
    truncation_radius_sigmas: f64,
) -> Result<()> {
    const OP: &str = "gaussian_splat";
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::invalid(OP, format!("sigma must be positive, got {sigma}")));
    }
    if !(truncation_radius_sigmas > 0.0) {
        return Err(Error::invalid(OP, "truncation radius must be positive"));
    }
    let (h, w) = (map.height(), map.width());
    let (x, y) = center;
    if !in_bounds(h, w, x, y) {
        return Err(Error::invalid(
            OP,
            format!("center ({x}, {y}) outside {h}x{w}"),
        ));
    }
    let (nr, nc) = nearest_pixel(h, w, x, y);
    let radius = libm::ceil(truncation_radius_sigmas * sigma).max(1.0) as usize;
    let r0 = nr.saturating_sub(radius);
    let r1 = (nr + radius + 1).min(h);
    let c0 = nc.saturating_sub(radius);
    let c1 = (nc + radius + 1).min(w);
    let cutoff = truncation_radius_sigmas * sigma;
    let inv = 1.0 / (2.0 * sigma * sigma);

    let kw = c1 - c0;
    let mut weights = Vec::with_capacity((r1 - r0) * kw);
    for r in r0..r1 {
        let dy = r as f64 - y;
        for c in c0..c1 {
            let dx = c as f64 - x;
            let d2 = dx * dx + dy * dy;
            weights.push(if d2 <= cutoff * cutoff {
                libm::exp(-d2 * inv)
            } else {
                0.0
            });
        }
    }
    let total: f64 = weights.iter().sum();
    let values = map.values_mut();
    if !(total > 0.0) {
        // kernel narrower than the pixel grid resolves
        values[nr * w + nc] += 1.0;
        return Ok(());
    }
    for (idx, wt) in weights.iter().enumerate() {
        let r = r0 + idx / kw;
        let c = c0 + idx % kw;
        values[r * w + c] += wt / total;
    }
    Ok(())
}

fn nearest_pixel(h: usize, w: usize, x: f64, y: f64) -> (usize, usize) {
    let r = (libm::round(y).max(0.0) as usize).min(h - 1);
    let c = (libm::round(x).max(0.0) as usize).min(w - 1);
    (r, c)
}

/// Per-head bandwidths: `beta` times the k-NN mean distance, or the fallback
/// when the image has fewer than two heads.
pub fn head_sigmas(ann: &Annotation, params: &KernelParams) -> Result<Vec<f64>> {
    if ann.heads.len() < 2 {
        return Ok(ann.heads.iter().map(|_| params.sigma_fallback).collect());
    }
    (0..ann.heads.len())
        .map(|i| knn_mean_distance(&ann.heads, i, params.k).map(|d| params.beta * d))
        .collect()
}

pub fn generate_density_map(ann: &Annotation, params: &KernelParams) -> Result<DensityMap> {
    ann.validate()?;
    params.validate()?;
    let mut map = DensityMap::zeros(ann.height, ann.width);
    let sigmas = head_sigmas(ann, params)?;
    for (&head, &sigma) in ann.heads.iter().zip(&sigmas) {
        if sigma > 0.0 {
            gaussian_splat(&mut map, head, sigma, params.truncation_radius_sigmas)?;
        } else {
            // coincident heads: zero bandwidth degenerates to a delta
            let (r, c) = nearest_pixel(ann.height, ann.width, head.0, head.1);
            let w = ann.width;
            map.values_mut()[r * w + c] += 1.0;
        }
    }
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    fn argmax(values: &[f64]) -> usize {
        let mut best = 0;
        for (i, v) in values.iter().enumerate() {
            if *v > values[best] {
                best = i;
            }
        }
        best
    }

    // Exhaustive oracle: every pairwise distance, fully sorted.
    fn brute_knn(heads: &[(f64, f64)], i: usize, k: usize) -> f64 {
        let mut d: Vec<f64> = (0..heads.len())
            .filter(|&j| j != i)
            .map(|j| {
                let dx = heads[j].0 - heads[i].0;
                let dy = heads[j].1 - heads[i].1;
                (dx * dx + dy * dy).sqrt()
            })
            .collect();
        d.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let k = k.min(d.len());
        d[..k].iter().sum::<f64>() / k as f64
    }

    #[test]
    fn knn_known_triangle() {
        let heads = [(0.0, 0.0), (3.0, 0.0), (0.0, 4.0)];
        assert_eq!(knn_mean_distance(&heads, 0, 2).unwrap(), 3.5);
        assert_eq!(brute_knn(&heads, 0, 2), 3.5);
    }

    #[test]
    fn knn_fewer_neighbors_than_k() {
        let heads = [(1.0, 1.0), (4.0, 5.0)];
        assert_eq!(knn_mean_distance(&heads, 0, 3).unwrap(), 5.0);
    }

    #[test]
    fn knn_needs_two_heads() {
        assert!(knn_mean_distance(&[(1.0, 1.0)], 0, 3).is_err());
        assert!(knn_mean_distance(&[], 0, 3).is_err());
    }

    #[test]
    fn splat_adds_unit_mass_even_at_corner() {
        let mut m = DensityMap::zeros(20, 30);
        gaussian_splat(&mut m, (10.3, 7.7), 2.5, 4.0).unwrap();
        assert!((m.sum() - 1.0).abs() <= 1e-9);
        gaussian_splat(&mut m, (0.0, 0.0), 6.0, 4.0).unwrap();
        assert!((m.sum() - 2.0).abs() <= 1e-9);
        gaussian_splat(&mut m, (30.0, 20.0), 6.0, 4.0).unwrap();
        assert!((m.sum() - 3.0).abs() <= 1e-9);
    }

    #[test]
    fn splat_small_sigma_is_delta() {
        let mut m = DensityMap::zeros(9, 9);
        gaussian_splat(&mut m, (4.0, 3.0), 0.3, 4.0).unwrap();
        // cutoff 1.2 px keeps only the centre and its four direct neighbours
        let side = libm::exp(-1.0 / (2.0 * 0.3 * 0.3));
        assert!((m.get(3, 4) - 1.0 / (1.0 + 4.0 * side)).abs() < 1e-12);
        assert!((m.get(2, 4) - side / (1.0 + 4.0 * side)).abs() < 1e-12);
        assert_eq!(m.get(2, 3), 0.0);
        let mut tiny = DensityMap::zeros(9, 9);
        gaussian_splat(&mut tiny, (4.4, 3.0), 1e-4, 4.0).unwrap();
        assert_eq!(tiny.get(3, 4), 1.0);
    }

    #[test]
    fn splat_rejects_bad_input() {
        let mut m = DensityMap::zeros(9, 9);
        assert!(gaussian_splat(&mut m, (10.0, 3.0), 1.0, 4.0).is_err());
        assert!(gaussian_splat(&mut m, (1.0, -0.1), 1.0, 4.0).is_err());
        assert!(gaussian_splat(&mut m, (1.0, 1.0), 0.0, 4.0).is_err());
    }

    #[test]
    fn empty_annotation_gives_zero_map() {
        let ann = Annotation::new(12, 8, vec![]).unwrap();
        let m = generate_density_map(&ann, &KernelParams::default()).unwrap();
        assert_eq!(m.sum(), 0.0);
        assert!(m.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_head_uses_fallback_sigma() {
        let ann = Annotation::new(64, 64, vec![(32.0, 32.0)]).unwrap();
        let params = KernelParams::default();
        assert_eq!(head_sigmas(&ann, &params).unwrap(), vec![15.0]);
        let m = generate_density_map(&ann, &params).unwrap();
        assert!((m.sum() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn three_heads_sigmas_and_peaks() {
        let heads = vec![(10.0, 10.0), (40.0, 12.0), (22.0, 45.0)];
        let ann = Annotation::new(60, 60, heads.clone()).unwrap();
        let params = KernelParams::default();
        let sigmas = head_sigmas(&ann, &params).unwrap();
        for (i, s) in sigmas.iter().enumerate() {
            let expect = 0.3 * brute_knn(&heads, i, 3);
            assert!((s - expect).abs() < 1e-12);
        }
        let m = generate_density_map(&ann, &params).unwrap();
        assert!((m.sum() - 3.0).abs() < 3e-9);
        // each splat on its own peaks at the head pixel
        for (&h, &s) in heads.iter().zip(&sigmas) {
            let mut single = DensityMap::zeros(60, 60);
            gaussian_splat(&mut single, h, s, 4.0).unwrap();
            let idx = argmax(single.values());
            assert_eq!((idx / 60, idx % 60), (h.1 as usize, h.0 as usize));
        }
        // and the combined map peaks at one of the heads
        let idx = argmax(m.values());
        assert!(heads
            .iter()
            .any(|h| (idx / 60, idx % 60) == (h.1 as usize, h.0 as usize)));
    }

    #[test]
    fn coincident_heads_keep_mass() {
        let ann = Annotation::new(10, 10, vec![(3.0, 3.0), (3.0, 3.0)]).unwrap();
        let m = generate_density_map(&ann, &KernelParams::default()).unwrap();
        assert_eq!(m.get(3, 3), 2.0);
    }

    #[test]
    fn annotation_bounds_checked() {
        assert!(Annotation::new(10, 10, vec![(10.5, 2.0)]).is_err());
        assert!(Annotation::new(0, 10, vec![]).is_err());
        assert!(Annotation::new(10, 10, vec![(10.0, 10.0)]).is_ok());
    }

    fn heads_strategy() -> impl Strategy<Value = Vec<(f64, f64)>> {
        prop::collection::vec((0.0..48.0f64, 0.0..40.0f64), 0..40)
    }

    proptest! {
        #[test]
        fn count_is_preserved(heads in heads_strategy()) {
            let n = heads.len() as f64;
            let ann = Annotation::new(40, 48, heads).unwrap();
            let m = generate_density_map(&ann, &KernelParams::default()).unwrap();
            prop_assert!((m.sum() - n).abs() <= n * 1e-9 + 1e-12);
            prop_assert!(m.values().iter().all(|&v| v >= 0.0));
        }

        #[test]
        fn knn_matches_brute_force(heads in prop::collection::vec((0.0..100.0f64, 0.0..100.0f64), 2..15), k in 1usize..6) {
            for i in 0..heads.len() {
                let got = knn_mean_distance(&heads, i, k).unwrap();
                prop_assert!((got - brute_knn(&heads, i, k)).abs() < 1e-12);
            }
        }

        #[test]
        fn bandwidth_scales_with_geometry(heads in prop::collection::vec((0.0..50.0f64, 0.0..50.0f64), 2..12)) {
            let params = KernelParams::default();
            let a = Annotation::new(100, 100, heads.clone()).unwrap();
            let doubled: Vec<_> = heads.iter().map(|&(x, y)| (2.0 * x, 2.0 * y)).collect();
            let b = Annotation::new(100, 100, doubled).unwrap();
            let sa = head_sigmas(&a, &params).unwrap();
            let sb = head_sigmas(&b, &params).unwrap();
            for (x, y) in sa.iter().zip(&sb) {
                prop_assert!((2.0 * x - y).abs() <= 1e-9 * y.max(1.0));
            }
        }
    }
}
