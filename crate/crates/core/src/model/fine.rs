//! Deep backbone with four multi-level density heads fused by learnable weights.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::coarse::check_divisible;
use super::layers::{Conv, Upsample};
use super::params::{Bound, ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct BlockSpec {
    pub filters: Vec<usize>,
    pub pool_after: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FineNetConfig {
    pub in_channels: usize,
    pub blocks: Vec<BlockSpec>,
    /// Blocks (0-based) that feed a density head.
    pub head_blocks: Vec<usize>,
    pub fusion_init: f64,
}

impl FineNetConfig {
    /// 3×3 conv backbone in five blocks; no pooling after blocks 4 and 5.
    pub fn paper(in_channels: usize) -> Self {
        let block = |n: usize, f: usize, pool_after: bool| BlockSpec {
            filters: vec![f; n],
            pool_after,
        };
        FineNetConfig {
            in_channels,
            blocks: vec![
                block(2, 64, true),
                block(2, 128, true),
                block(3, 256, true),
                block(3, 512, false),
                block(3, 512, false),
            ],
            head_blocks: vec![1, 2, 3, 4],
            fusion_init: 0.25,
        }
    }

    /// One conv per block and a quarter of the filters.
    pub fn tiny(in_channels: usize) -> Self {
        let mut cfg = Self::paper(in_channels);
        for b in &mut cfg.blocks {
            b.filters = vec![b.filters[0] / 4];
        }
        cfg
    }

    /// Spatial reduction at the output of `block`.
    pub fn block_factor(&self, block: usize) -> usize {
        1 << self.blocks[..block].iter().filter(|b| b.pool_after).count()
    }

    /// Divisibility the input must satisfy.
    pub fn downsample_factor(&self) -> usize {
        (0..self.blocks.len())
            .map(|b| self.block_factor(b))
            .max()
            .unwrap_or(1)
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.blocks.iter().any(|b| b.filters.is_empty()) {
            problems.push("every fine block needs at least one conv".into());
        }
        if self.head_blocks.is_empty() {
            problems.push("fine network needs at least one head".into());
        }
        if self.head_blocks.iter().any(|&b| b >= self.blocks.len()) {
            problems.push("head attached to a missing block".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }
}

#[derive(Clone, Debug)]
struct Head {
    block: usize,
    reduce: Conv,
    up: Option<Upsample>,
}

#[derive(Clone, Debug)]
pub struct FineNet {
    pub config: FineNetConfig,
    blocks: Vec<Vec<Conv>>,
    heads: Vec<Head>,
    pub fusion_weights: ParamId,
}

/// Fused fine map `F` and the per-head maps `F_j` it is built from.
#[derive(Clone, Debug)]
pub struct FineOutputs {
    pub fused: Var,
    pub heads: Vec<Var>,
}

impl FineNet {
    pub fn new(config: FineNetConfig, store: &mut ParamStore, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let mut blocks = Vec::new();
        let mut c_in = config.in_channels;
        let mut block_channels = Vec::new();
        for (bi, spec) in config.blocks.iter().enumerate() {
            let mut convs = Vec::new();
            for (li, &f) in spec.filters.iter().enumerate() {
                convs.push(Conv::new(store, rng, &format!("fine.block{}.conv{li}", bi + 1), c_in, f, 3, true)?);
                c_in = f;
            }
            block_channels.push(c_in);
            blocks.push(convs);
        }
        let mut heads = Vec::new();
        for &b in &config.head_blocks {
            let name = format!("fine.head{}", b + 1);
            let reduce = Conv::new(store, rng, &format!("{name}.reduce"), block_channels[b], 1, 1, false)?;
            let factor = config.block_factor(b);
            let up = if factor > 1 {
                Some(Upsample::new(store, rng, &format!("{name}.up"), 1, 1, factor)?)
            } else {
                None
            };
            heads.push(Head { block: b, reduce, up });
        }
        let fusion_weights = store.insert(
            "fine.fusion_weights",
            Tensor::full(&[heads.len()], config.fusion_init),
        )?;
        Ok(FineNet {
            config,
            blocks,
            heads,
            fusion_weights,
        })
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, input: Var) -> Result<FineOutputs> {
        check_divisible(g, input, self.config.downsample_factor(), "fine_forward")?;
        let mut x = input;
        let mut taps = Vec::with_capacity(self.blocks.len());
        for (spec, convs) in self.config.blocks.iter().zip(&self.blocks) {
            for conv in convs {
                x = conv.forward(g, p, x)?;
            }
            taps.push(x);
            if spec.pool_after {
                x = g.max_pool2d(x, 2, 2)?;
            }
        }
        let mut heads = Vec::with_capacity(self.heads.len());
        for head in &self.heads {
            let mut y = head.reduce.forward(g, p, taps[head.block])?;
            if let Some(up) = &head.up {
                y = up.forward(g, p, y)?;
            }
            heads.push(y);
        }
        let fused = g.weighted_sum(&heads, p.var(self.fusion_weights))?;
        Ok(FineOutputs { fused, heads })
    }
}
