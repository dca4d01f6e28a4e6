//! The coarse, fine and smooth networks and how they are assembled.
//!
//! `assemble_forward` runs the full pipeline on one image:
//!
//! 1. `C_0 = coarse(image)`
//! 2. pick attention regions on `C_0` (a constant within the step)
//! 3. `F = fine(mask ⊙ image)`
//! 4. `M_b = (1 − mask) ⊙ C_0 + mask ⊙ F`
//! 5. `M_a = smooth(M_b)`

pub mod coarse;
pub mod fine;
mod layers;
pub mod params;
pub mod smooth;

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::attention::{self, AttentionConfig, AttentionPlan};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::tensor::{round_up, Tensor};

pub use coarse::{CoarseNet, CoarseNetConfig, ColumnSpec};
pub use fine::{BlockSpec, FineNet, FineNetConfig, FineOutputs};
pub use layers::INIT_STD;
pub use params::{Bound, ParamId, ParamStore};
pub use smooth::{SmoothNet, SmoothNetConfig};

/// Name prefix of the smooth-network parameters (everything else is upstream of `M_b`).
pub const SMOOTH_PREFIX: &str = "smooth.";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Preset {
    /// Quarter-width networks, one conv per fine block. For tests and desk-scale runs.
    Tiny,
    /// Full-size networks.
    Paper,
}

impl Preset {
    pub fn as_str(self) -> &'static str {
        match self {
            Preset::Tiny => "tiny",
            Preset::Paper => "paper",
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tiny" => Ok(Preset::Tiny),
            "paper" => Ok(Preset::Paper),
            other => Err(Error::invalid(
                "Preset",
                format!("unknown preset {other:?} (expected tiny or paper)"),
            )),
        }
    }
}

/// Which part of the pipeline produces the prediction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Coarse network alone.
    C,
    /// Fine network on the whole image.
    F,
    /// Attention-stitched `M_b`.
    CF,
    /// Full pipeline, `M_a`.
    CFS,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::C, Variant::F, Variant::CF, Variant::CFS];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::C => "C",
            Variant::F => "F",
            Variant::CF => "C+F",
            Variant::CFS => "C+F+S",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "C" => Ok(Variant::C),
            "F" => Ok(Variant::F),
            "C+F" => Ok(Variant::CF),
            "C+F+S" => Ok(Variant::CFS),
            other => Err(Error::invalid(
                "Variant",
                format!("unknown variant {other:?} (expected C, F, C+F or C+F+S)"),
            )),
        }
    }
}

/// Every recorded map of one full forward pass.
#[derive(Clone, Debug)]
pub struct Assembled {
    pub c0: Var,
    pub fine: FineOutputs,
    pub m_b: Var,
    pub m_a: Var,
    pub plan: AttentionPlan,
}

/// A forward pass recorded for a given variant, cropped back to the input size.
#[derive(Clone, Debug)]
pub struct Recorded {
    pub params: Bound,
    /// The variant's prediction, `[1, 1, H, W]`.
    pub output: Var,
    /// `M_b`, present for the attention variants.
    pub m_b: Option<Var>,
    pub plan: Option<AttentionPlan>,
}

/// Networks, their parameters and the attention setting.
#[derive(Clone, Debug)]
pub struct ModelBundle {
    pub preset: Preset,
    pub in_channels: usize,
    pub attention: AttentionConfig,
    pub coarse: CoarseNet,
    pub fine: FineNet,
    pub smooth: SmoothNet,
    pub params: ParamStore,
}

impl ModelBundle {
    /// Fresh model: Gaussian(0, 0.01) weights, zero biases, fusion weights 0.25.
    pub fn new(
        preset: Preset,
        in_channels: usize,
        attention: AttentionConfig,
        seed: u64,
    ) -> Result<Self> {
        if in_channels == 0 {
            return Err(Error::Config(alloc::vec![String::from(
                "in_channels must be >= 1"
            )]));
        }
        attention.validate()?;
        let (coarse_cfg, fine_cfg) = match preset {
            Preset::Tiny => (
                CoarseNetConfig::tiny(in_channels),
                FineNetConfig::tiny(in_channels),
            ),
            Preset::Paper => (
                CoarseNetConfig::paper(in_channels),
                FineNetConfig::paper(in_channels),
            ),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let coarse = CoarseNet::new(coarse_cfg, &mut params, &mut rng)?;
        let fine = FineNet::new(fine_cfg, &mut params, &mut rng)?;
        let smooth = SmoothNet::new(SmoothNetConfig::default(), &mut params, &mut rng)?;
        Ok(ModelBundle {
            preset,
            in_channels,
            attention,
            coarse,
            fine,
            smooth,
            params,
        })
    }

    /// Spatial multiple every input is padded to.
    pub fn size_multiple(&self) -> usize {
        self.coarse
            .config
            .downsample_factor()
            .max(self.fine.config.downsample_factor())
    }

    pub fn is_smooth_param(name: &str) -> bool {
        name.starts_with(SMOOTH_PREFIX)
    }

    pub fn coarse_forward(&self, g: &mut Graph, p: &Bound, image: Var) -> Result<Var> {
        self.coarse.forward(g, p, image)
    }

    pub fn fine_forward(&self, g: &mut Graph, p: &Bound, dense_input: Var) -> Result<FineOutputs> {
        self.fine.forward(g, p, dense_input)
    }

    /// Full pipeline on an image whose size already satisfies [`Self::size_multiple`].
    pub fn assemble_forward(&self, g: &mut Graph, p: &Bound, image: Var) -> Result<Assembled> {
        let (h, w) = self.check_image(g.value(image))?;
        self.assemble_valid(g, p, image, h, w)
    }

    /// Same as [`Self::assemble_forward`] with an externally chosen plan.
    pub fn assemble_with_plan(
        &self,
        g: &mut Graph,
        p: &Bound,
        image: Var,
        plan: AttentionPlan,
    ) -> Result<Assembled> {
        let c0 = self.coarse_forward(g, p, image)?;
        self.finish_assembly(g, p, image, c0, plan)
    }

    // `valid_h × valid_w` is the unpadded image; attention only looks there.
    fn assemble_valid(
        &self,
        g: &mut Graph,
        p: &Bound,
        image: Var,
        valid_h: usize,
        valid_w: usize,
    ) -> Result<Assembled> {
        let c0 = self.coarse_forward(g, p, image)?;
        let c0_valid = g.value(c0).crop(0, 0, valid_h, valid_w)?;
        let plan = attention::select_centers(&c0_valid, &self.attention)?;
        self.finish_assembly(g, p, image, c0, plan)
    }

    fn finish_assembly(
        &self,
        g: &mut Graph,
        p: &Bound,
        image: Var,
        c0: Var,
        plan: AttentionPlan,
    ) -> Result<Assembled> {
        let (h, w) = g
            .value(image)
            .spatial()
            .ok_or_else(|| Error::shape("assemble_forward", "rank", "need N,C,H,W"))?;
        let routed = extend_plan(&plan, h, w)?;
        let dense = attention::record_compose_dense(g, image, &routed)?;
        let fine = self.fine_forward(g, p, dense)?;
        let sparse = attention::record_strip_coarse(g, c0, &routed)?;
        let fine_routed = g.mask(fine.fused, &routed.union_mask)?;
        let m_b = g.add(sparse, fine_routed)?;
        let m_a = self.smooth.forward(g, p, m_b)?;
        Ok(Assembled {
            c0,
            fine,
            m_b,
            m_a,
            plan,
        })
    }

    fn check_image(&self, image: &Tensor) -> Result<(usize, usize)> {
        let s = image.shape();
        if s.len() != 4 || s[0] != 1 || s[1] != self.in_channels {
            return Err(Error::shape(
                "ModelBundle",
                "image",
                format!("expected [1, {}, H, W], got {s:?}", self.in_channels),
            ));
        }
        Ok((s[2], s[3]))
    }

    /// Records `variant` on an arbitrary-size image: the image is reflect-padded
    /// to [`Self::size_multiple`] and every output cropped back.
    pub fn record(&self, g: &mut Graph, image: &Tensor, variant: Variant) -> Result<Recorded> {
        let (h, w) = self.check_image(image)?;
        let m = self.size_multiple();
        let (ph, pw) = (round_up(h, m), round_up(w, m));
        let padded = if (ph, pw) == (h, w) {
            image.clone().with_requires_grad(false)
        } else {
            image.pad_reflect(ph, pw)?
        };
        let params = self.params.bind(g)?;
        let x = g.constant(padded)?;
        let crop = |g: &mut Graph, v: Var| -> Result<Var> {
            if (ph, pw) == (h, w) {
                Ok(v)
            } else {
                g.crop(v, 0, 0, h, w)
            }
        };
        let rec = match variant {
            Variant::C => {
                let c0 = self.coarse_forward(g, &params, x)?;
                Recorded {
                    output: crop(g, c0)?,
                    params,
                    m_b: None,
                    plan: None,
                }
            }
            Variant::F => {
                let f = self.fine_forward(g, &params, x)?;
                Recorded {
                    output: crop(g, f.fused)?,
                    params,
                    m_b: None,
                    plan: None,
                }
            }
            Variant::CF | Variant::CFS => {
                let a = self.assemble_valid(g, &params, x, h, w)?;
                let m_b = crop(g, a.m_b)?;
                let output = if variant == Variant::CF {
                    m_b
                } else {
                    crop(g, a.m_a)?
                };
                Recorded {
                    output,
                    params,
                    m_b: Some(m_b),
                    plan: Some(a.plan),
                }
            }
        };
        Ok(rec)
    }

    /// Prediction of `variant` as a `Tensor[H, W]`, plus the attention plan when one was used.
    pub fn ablation_forward(
        &self,
        variant: Variant,
        image: &Tensor,
    ) -> Result<(Tensor, Option<AttentionPlan>)> {
        let mut g = Graph::new();
        let rec = self.record(&mut g, image, variant)?;
        let out = g.value(rec.output).clone();
        let (h, w) = out.spatial().unwrap_or((0, 0));
        Ok((out.reshape(&[h, w])?, rec.plan))
    }

    /// Full-pipeline density prediction `M_a` as `Tensor[H, W]`.
    pub fn predict(&self, image: &Tensor) -> Result<(Tensor, AttentionPlan)> {
        let (map, plan) = self.ablation_forward(Variant::CFS, image)?;
        Ok((map, plan.expect("C+F+S always selects a plan")))
    }

    /// Copies parameter values by name. Every name must exist with the same shape,
    /// and every parameter of the model must be provided.
    pub fn load_params<'a>(&mut self, entries: impl IntoIterator<Item = (&'a str, Tensor)>) -> Result<()> {
        let mut seen = alloc::vec![false; self.params.len()];
        for (name, t) in entries {
            let i = self.params.position(name).ok_or_else(|| {
                Error::invalid("load_params", format!("unknown parameter {name}"))
            })?;
            self.params.assign(name, t)?;
            seen[i] = true;
        }
        let missing: Vec<String> = self
            .params
            .names()
            .iter()
            .zip(&seen)
            .filter(|(_, s)| !**s)
            .map(|(n, _)| n.clone())
            .collect();
        if !missing.is_empty() {
            return Err(Error::invalid(
                "load_params",
                format!("missing parameters: {}", missing.join(", ")),
            ));
        }
        Ok(())
    }
}

/// The plan's mask zero-extended to a padded `h × w` canvas.
fn extend_plan(plan: &AttentionPlan, h: usize, w: usize) -> Result<AttentionPlan> {
    if (plan.height, plan.width) == (h, w) {
        return Ok(plan.clone());
    }
    AttentionPlan::from_regions(h, w, plan.regions.clone())
}

#[cfg(test)]
pub(crate) mod tests;
