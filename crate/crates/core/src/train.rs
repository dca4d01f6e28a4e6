//! Dual-loss training: `L_overall = L_a + λ·L_b` with Adam, optional ROI
//! masking and patch augmentation.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::attention::Rect;
use crate::density::DensityMap;
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::model::{ModelBundle, ParamStore, Variant};
use crate::tensor::Tensor;

/// Binary region-of-interest mask, `Tensor[H, W]` with values in `{0, 1}`.
#[derive(Clone, Debug, PartialEq)]
pub struct RoiMask(Tensor);

impl RoiMask {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if let Some(v) = values.iter().find(|&&v| v != 0.0 && v != 1.0) {
            return Err(Error::invalid(
                "RoiMask",
                format!("mask values must be 0 or 1, found {v}"),
            ));
        }
        Ok(RoiMask(Tensor::new(&[height, width], values)?))
    }

    pub fn from_fn(height: usize, width: usize, mut inside: impl FnMut(usize, usize) -> bool) -> Self {
        RoiMask(Tensor::from_fn(&[height, width], |i| {
            if inside(i / width, i % width) {
                1.0
            } else {
                0.0
            }
        }))
    }

    pub fn full(height: usize, width: usize) -> Self {
        RoiMask(Tensor::full(&[height, width], 1.0))
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

    pub fn crop(&self, r: &Rect) -> Result<RoiMask> {
        Ok(RoiMask(self.0.crop(r.top, r.left, r.height, r.width)?))
    }

    fn check(&self, op: &'static str, h: usize, w: usize) -> Result<()> {
        if (self.height(), self.width()) != (h, w) {
            return Err(Error::shape(
                op,
                "roi",
                format!("ROI is {}x{}, map is {h}x{w}", self.height(), self.width()),
            ));
        }
        Ok(())
    }
}

/// `½ Σ_{p ∈ ROI} (pred_p − gt_p)²` for one image (all pixels without an ROI).
pub fn l2_map_loss(pred: &Tensor, gt: &DensityMap, roi: Option<&RoiMask>) -> Result<f64> {
    const OP: &str = "l2_map_loss";
    let (h, w) = pred
        .spatial()
        .ok_or_else(|| Error::shape(OP, "rank", "need at least 2 dims"))?;
    if pred.numel() != h * w || (h, w) != (gt.height(), gt.width()) {
        return Err(Error::shape(
            OP,
            "map size",
            format!("prediction {:?} vs ground truth {}x{}", pred.shape(), gt.height(), gt.width()),
        ));
    }
    if let Some(r) = roi {
        r.check(OP, h, w)?;
    }
    let mut acc = 0.0;
    for (i, (p, t)) in pred.data().iter().zip(gt.values()).enumerate() {
        if roi.is_none_or(|r| r.values()[i] != 0.0) {
            acc += (p - t) * (p - t);
        }
    }
    Ok(0.5 * acc)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossReport {
    pub step: u64,
    pub l_a: f64,
    pub l_b: f64,
    pub l_overall: f64,
    pub lambda: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(mut self, lr: f64) -> Self {
        self.lr = lr;
        self
    }
}

/// Adam with bias-corrected moments; buffers are created lazily on the first step.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            m: Vec::new(),
            v: Vec::new(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[Vec<f64>]) -> Result<()> {
        const OP: &str = "Adam::step";
        if params.len() != grads.len() {
            return Err(Error::shape(
                OP,
                "parameter count",
                format!("{} parameters, {} gradients", params.len(), grads.len()),
            ));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.numel() != g.len() {
                return Err(Error::shape(
                    OP,
                    "gradient length",
                    format!("parameter {i}: {} values, {} gradients", p.numel(), g.len()),
                ));
            }
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.numel()]).collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let bc1 = 1.0 - libm::pow(beta1, self.t as f64);
        let bc2 = 1.0 - libm::pow(beta2, self.t as f64);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for (((x, &gi), mi), vi) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *x -= lr * m_hat / (libm::sqrt(v_hat) + eps);
            }
        }
        Ok(())
    }
}

/// One training sample at image resolution.
#[derive(Clone, Debug)]
pub struct Sample {
    /// `[1, C, H, W]`.
    pub image: Tensor,
    pub density: DensityMap,
    pub roi: Option<RoiMask>,
}

/// Owns a model and its optimizer state.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub bundle: ModelBundle,
    pub optimizer: Adam,
    pub lambda: f64,
    pub variant: Variant,
    step: u64,
}

impl Trainer {
    pub fn new(bundle: ModelBundle, adam: AdamConfig, lambda: f64) -> Self {
        Trainer {
            bundle,
            optimizer: Adam::new(adam),
            lambda,
            variant: Variant::CFS,
            step: 0,
        }
    }

    /// Trains a single ablation variant; only `C+F+S` carries the `L_b` term.
    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        self
    }

    pub fn steps_done(&self) -> u64 {
        self.step
    }

    /// Losses and per-parameter gradients for one sample, without updating anything.
    pub fn compute(
        &self,
        image: &Tensor,
        gt: &DensityMap,
        roi: Option<&RoiMask>,
    ) -> Result<(LossReport, Vec<Vec<f64>>)> {
        let mut g = Graph::new();
        let rec = self.bundle.record(&mut g, image, self.variant)?;
        let (h, w) = (gt.height(), gt.width());
        if let Some(r) = roi {
            r.check("train_step", h, w)?;
        }
        let mask = roi.map(RoiMask::values);
        let l_a = g.half_squared_error(rec.output, gt.values(), mask)?;
        let (l_b, overall) = match (self.variant, rec.m_b) {
            (Variant::CFS, Some(m_b)) => {
                let l_b = g.half_squared_error(m_b, gt.values(), mask)?;
                let scaled = g.scalar_mul(l_b, self.lambda)?;
                (Some(l_b), g.add(l_a, scaled)?)
            }
            _ => {
                let zero = g.constant(Tensor::scalar(0.0))?;
                let scaled = g.scalar_mul(zero, self.lambda)?;
                (None, g.add(l_a, scaled)?)
            }
        };
        let value = |g: &Graph, v: Var| g.value(v).data()[0];
        let report = LossReport {
            step: self.step + 1,
            l_a: value(&g, l_a),
            l_b: l_b.map_or(0.0, |v| value(&g, v)),
            l_overall: value(&g, overall),
            lambda: self.lambda,
        };
        if !report.l_overall.is_finite() {
            let max_activation = [Some(rec.output), rec.m_b]
                .into_iter()
                .flatten()
                .map(|v| g.value(v).max_abs())
                .fold(0.0, f64::max);
            return Err(Error::Diverged {
                step: report.step,
                lr: self.optimizer.config.lr,
                max_activation,
                detail: format!("loss l_a={} l_b={}", report.l_a, report.l_b),
            });
        }
        g.backward(overall).map_err(|e| match e {
            Error::NonFinite(_) => Error::Diverged {
                step: report.step,
                lr: self.optimizer.config.lr,
                max_activation: g_max(&g, rec.output),
                detail: "non-finite gradient".into(),
            },
            other => other,
        })?;
        let grads = self.bundle.params.take_grads(&mut g, &rec.params);
        Ok((report, grads))
    }

    /// Forward, single backward on `L_overall`, one Adam update of all parameters.
    pub fn train_step(
        &mut self,
        image: &Tensor,
        gt: &DensityMap,
        roi: Option<&RoiMask>,
    ) -> Result<LossReport> {
        let (report, grads) = self.compute(image, gt, roi)?;
        self.optimizer
            .step(self.bundle.params.tensors_mut(), &grads)?;
        if let Some(bad) = self.bundle.params.iter().find(|(_, t)| !t.is_finite()) {
            return Err(Error::Diverged {
                step: report.step,
                lr: self.optimizer.config.lr,
                max_activation: f64::NAN,
                detail: format!("parameter {} became non-finite", bad.0),
            });
        }
        self.step += 1;
        Ok(report)
    }

    pub fn params(&self) -> &ParamStore {
        &self.bundle.params
    }
}

fn g_max(g: &Graph, v: Var) -> f64 {
    let t = g.value(v);
    if t.numel() == 0 {
        f64::NAN
    } else {
        t.max_abs()
    }
}

/// Patch extent for random-crop augmentation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PatchSize {
    /// Fraction of each side; 0.5 × 0.5 gives quarter-size patches.
    Fraction { height: f64, width: f64 },
    Pixels { height: usize, width: usize },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentPolicy {
    pub patches: usize,
    pub size: PatchSize,
}

impl AugmentPolicy {
    /// `patches` random crops of half height and half width.
    pub fn quarter(patches: usize) -> Self {
        AugmentPolicy {
            patches,
            size: PatchSize::Fraction {
                height: 0.5,
                width: 0.5,
            },
        }
    }

    pub fn fixed(height: usize, width: usize, patches: usize) -> Self {
        AugmentPolicy {
            patches,
            size: PatchSize::Pixels { height, width },
        }
    }

    /// A single crop covering the whole image.
    pub fn identity() -> Self {
        AugmentPolicy {
            patches: 1,
            size: PatchSize::Fraction {
                height: 1.0,
                width: 1.0,
            },
        }
    }

    pub fn patch_size(&self, height: usize, width: usize) -> Result<(usize, usize)> {
        let (ph, pw) = match self.size {
            PatchSize::Fraction {
                height: fh,
                width: fw,
            } => {
                if !(fh > 0.0 && fh <= 1.0 && fw > 0.0 && fw <= 1.0) {
                    return Err(Error::invalid(
                        "augment",
                        format!("patch fractions must be in (0, 1], got {fh}x{fw}"),
                    ));
                }
                (
                    (libm::round(fh * height as f64) as usize).max(1),
                    (libm::round(fw * width as f64) as usize).max(1),
                )
            }
            PatchSize::Pixels { height, width } => (height, width),
        };
        if ph == 0 || pw == 0 || ph > height || pw > width {
            return Err(Error::invalid(
                "augment",
                format!("patch {ph}x{pw} does not fit in image {height}x{width}"),
            ));
        }
        Ok((ph, pw))
    }
}

/// Uniformly placed crop windows.
pub fn crop_windows(
    height: usize,
    width: usize,
    policy: &AugmentPolicy,
    rng: &mut impl Rng,
) -> Result<Vec<Rect>> {
    let (ph, pw) = policy.patch_size(height, width)?;
    Ok((0..policy.patches)
        .map(|_| Rect {
            top: rng.random_range(0..=height - ph),
            left: rng.random_range(0..=width - pw),
            height: ph,
            width: pw,
        })
        .collect())
}

/// Applies identical random crops to the image, its density map and ROI.
pub fn augment(sample: &Sample, policy: &AugmentPolicy, rng: &mut impl Rng) -> Result<Vec<Sample>> {
    let (h, w) = (sample.density.height(), sample.density.width());
    if sample.image.spatial() != Some((h, w)) {
        return Err(Error::shape(
            "augment",
            "image",
            format!("image {:?} vs density {h}x{w}", sample.image.shape()),
        ));
    }
    crop_windows(h, w, policy, rng)?
        .iter()
        .map(|r| {
            Ok(Sample {
                image: sample.image.crop(r.top, r.left, r.height, r.width)?,
                density: DensityMap::from_tensor(
                    sample.density.as_tensor().crop(r.top, r.left, r.height, r.width)?,
                )?,
                roi: sample.roi.as_ref().map(|m| m.crop(r)).transpose()?,
            })
        })
        .collect()
}
