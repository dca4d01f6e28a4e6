//! Count attention: route the densest regions of a coarse map to the fine network.
//!
//! Centers are picked greedily as the largest value among pixels no earlier
//! region covers. Routing uses the union of the regions, so an overlapped
//! pixel is taken once and the dense part plus the sparse remainder always
//! reassemble the original map.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Region extent, either relative to the image or in pixels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RegionSize {
    Fraction { height: f64, width: f64 },
    Pixels { height: usize, width: usize },
}

impl RegionSize {
    /// Resolves to whole pixels for an `height × width` image (at least 1 px per side).
    pub fn resolve(&self, height: usize, width: usize) -> (usize, usize) {
        match *self {
            RegionSize::Fraction {
                height: fh,
                width: fw,
            } => (
                (libm::round(fh * height as f64) as usize).max(1),
                (libm::round(fw * width as f64) as usize).max(1),
            ),
            RegionSize::Pixels { height, width } => (height, width),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AttentionConfig {
    pub n_centers: usize,
    pub region: RegionSize,
}

impl AttentionConfig {
    /// Dense-scene setting: one region covering 90% of each side.
    pub fn dense() -> Self {
        AttentionConfig {
            n_centers: 1,
            region: RegionSize::Fraction {
                height: 0.9,
                width: 0.9,
            },
        }
    }

    /// Sparse-scene setting: five regions of 40% height by 30% width.
    pub fn sparse() -> Self {
        AttentionConfig {
            n_centers: 5,
            region: RegionSize::Fraction {
                height: 0.4,
                width: 0.3,
            },
        }
    }

    /// Checks the config on its own, without an image size.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.n_centers == 0 {
            problems.push("n_centers must be >= 1".into());
        }
        match self.region {
            RegionSize::Fraction { height, width } => {
                for (name, f) in [("height", height), ("width", width)] {
                    if !(f > 0.0 && f <= 1.0) {
                        problems.push(format!("region {name} fraction must be in (0, 1], got {f}"));
                    }
                }
            }
            RegionSize::Pixels { height, width } => {
                if height == 0 || width == 0 {
                    problems.push(format!("region {height}x{width} px must be at least 1x1"));
                }
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }

    /// Checks the config against a concrete image and returns the region size in pixels.
    pub fn validate_for(&self, height: usize, width: usize) -> Result<(usize, usize)> {
        self.validate()?;
        let (rh, rw) = self.region.resolve(height, width);
        if rh > height || rw > width {
            return Err(Error::Config(vec![format!(
                "region {rh}x{rw} px larger than image {height}x{width}"
            )]));
        }
        Ok((rh, rw))
    }
}

/// Axis-aligned pixel rectangle.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Rect {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

impl Rect {
    /// `height × width` rectangle centred on `(row, col)`, clipped to the image.
    pub fn centered_clipped(
        row: usize,
        col: usize,
        height: usize,
        width: usize,
        img_h: usize,
        img_w: usize,
    ) -> Rect {
        let top = row as isize - (height / 2) as isize;
        let left = col as isize - (width / 2) as isize;
        let bottom = (top + height as isize).min(img_h as isize);
        let right = (left + width as isize).min(img_w as isize);
        let top = top.max(0);
        let left = left.max(0);
        Rect {
            top: top as usize,
            left: left as usize,
            height: (bottom - top) as usize,
            width: (right - left) as usize,
        }
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        row >= self.top
            && row < self.top + self.height
            && col >= self.left
            && col < self.left + self.width
    }

    pub fn area(&self) -> usize {
        self.height * self.width
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionPlan {
    pub height: usize,
    pub width: usize,
    /// Selected centers as `(row, col)`, in selection order.
    pub centers: Vec<(usize, usize)>,
    pub regions: Vec<Rect>,
    /// Row-major `{0, 1}` mask, the pixelwise OR of `regions`.
    pub union_mask: Vec<f64>,
}

impl AttentionPlan {
    /// Plan with no regions: everything stays on the coarse path.
    pub fn empty(height: usize, width: usize) -> Self {
        AttentionPlan {
            height,
            width,
            centers: Vec::new(),
            regions: Vec::new(),
            union_mask: vec![0.0; height * width],
        }
    }

    /// Builds a plan from explicit regions (centers are the region midpoints).
    pub fn from_regions(height: usize, width: usize, regions: Vec<Rect>) -> Result<Self> {
        let mut plan = Self::empty(height, width);
        for r in regions {
            if r.height == 0 || r.width == 0 || r.top + r.height > height || r.left + r.width > width
            {
                return Err(Error::invalid(
                    "AttentionPlan::from_regions",
                    format!("region {r:?} outside {height}x{width}"),
                ));
            }
            plan.push(r.top + r.height / 2, r.left + r.width / 2, r);
        }
        Ok(plan)
    }

    fn push(&mut self, row: usize, col: usize, rect: Rect) {
        for y in rect.top..rect.top + rect.height {
            self.union_mask[y * self.width + rect.left..y * self.width + rect.left + rect.width]
                .fill(1.0);
        }
        self.centers.push((row, col));
        self.regions.push(rect);
    }

    pub fn covered_pixels(&self) -> usize {
        self.union_mask.iter().filter(|&&m| m != 0.0).count()
    }

    /// `1 − union_mask`.
    pub fn complement_mask(&self) -> Vec<f64> {
        self.union_mask.iter().map(|m| 1.0 - m).collect()
    }

    /// Mask as a `Tensor[H, W]`.
    pub fn mask_tensor(&self) -> Tensor {
        Tensor::new(&[self.height, self.width], self.union_mask.clone())
            .expect("mask length matches plan size")
    }

    fn check_size(&self, op: &'static str, t: &Tensor) -> Result<()> {
        match t.spatial() {
            Some((h, w)) if (h, w) == (self.height, self.width) => Ok(()),
            _ => Err(Error::shape(
                op,
                "spatial size",
                format!(
                    "plan is {}x{}, tensor is {:?}",
                    self.height,
                    self.width,
                    t.shape()
                ),
            )),
        }
    }
}

/// Greedy suppress-and-argmax selection of up to `n_centers` regions on a
/// single-plane map. Stops early once every pixel is covered.
pub fn select_centers(coarse_map: &Tensor, cfg: &AttentionConfig) -> Result<AttentionPlan> {
    const OP: &str = "select_centers";
    let (h, w) = coarse_map
        .spatial()
        .ok_or_else(|| Error::shape(OP, "rank", "need at least 2 dims"))?;
    if coarse_map.numel() != h * w {
        return Err(Error::shape(
            OP,
            "channels",
            format!("expected a single plane, got {:?}", coarse_map.shape()),
        ));
    }
    let (rh, rw) = cfg.validate_for(h, w)?;
    let values = coarse_map.data();
    let mut plan = AttentionPlan::empty(h, w);
    for _ in 0..cfg.n_centers {
        let mut best: Option<usize> = None;
        for (i, (&v, &m)) in values.iter().zip(&plan.union_mask).enumerate() {
            if m != 0.0 {
                continue;
            }
            // strict comparison keeps the first index on ties; NaN never wins
            match best {
                None => best = Some(i),
                Some(b) if v > values[b] || (values[b].is_nan() && !v.is_nan()) => best = Some(i),
                _ => {}
            }
        }
        let Some(idx) = best else { break };
        let (row, col) = (idx / w, idx % w);
        plan.push(row, col, Rect::centered_clipped(row, col, rh, rw, h, w));
    }
    Ok(plan)
}

/// Dense-region input: the image with every pixel outside the union mask zeroed.
pub fn compose_dense_input(image: &Tensor, plan: &AttentionPlan) -> Result<Tensor> {
    plan.check_size("compose_dense_input", image)?;
    Ok(apply_mask(image, &plan.union_mask))
}

/// Low-density remainder: the coarse map with every selected pixel zeroed.
pub fn strip_coarse(coarse_map: &Tensor, plan: &AttentionPlan) -> Result<Tensor> {
    plan.check_size("strip_coarse", coarse_map)?;
    Ok(apply_mask(coarse_map, &plan.complement_mask()))
}

fn apply_mask(t: &Tensor, mask: &[f64]) -> Tensor {
    let mut out = t.clone().with_requires_grad(false);
    out.zero_grad();
    for plane in out.data_mut().chunks_exact_mut(mask.len()) {
        for (v, m) in plane.iter_mut().zip(mask) {
            *v *= m;
        }
    }
    out
}

/// Recorded counterpart of [`compose_dense_input`].
pub fn record_compose_dense(g: &mut Graph, image: Var, plan: &AttentionPlan) -> Result<Var> {
    plan.check_size("compose_dense_input", g.value(image))?;
    g.mask(image, &plan.union_mask)
}

/// Recorded counterpart of [`strip_coarse`].
pub fn record_strip_coarse(g: &mut Graph, coarse: Var, plan: &AttentionPlan) -> Result<Var> {
    plan.check_size("strip_coarse", g.value(coarse))?;
    g.mask(coarse, &plan.complement_mask())
}
