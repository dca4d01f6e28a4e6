//! Shallow three-column network producing the full-resolution rough map.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::layers::{Conv, Upsample};
use super::params::{Bound, ParamStore};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct ColumnSpec {
    pub kernels: Vec<usize>,
    pub filters: Vec<usize>,
    /// Indices of the conv layers followed by a 2×2 max pool.
    pub pool_after: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoarseNetConfig {
    pub in_channels: usize,
    pub columns: Vec<ColumnSpec>,
}

impl CoarseNetConfig {
    /// Multi-column layout: large/medium/small receptive-field columns.
    pub fn paper(in_channels: usize) -> Self {
        let col = |kernels: [usize; 4], filters: [usize; 4]| ColumnSpec {
            kernels: kernels.to_vec(),
            filters: filters.to_vec(),
            pool_after: vec![0, 1],
        };
        CoarseNetConfig {
            in_channels,
            columns: vec![
                col([9, 7, 7, 7], [16, 32, 16, 8]),
                col([7, 5, 5, 5], [20, 40, 20, 10]),
                col([5, 3, 3, 3], [24, 48, 24, 12]),
            ],
        }
    }

    /// Same topology with a quarter of the filters (rounded up).
    pub fn tiny(in_channels: usize) -> Self {
        let mut cfg = Self::paper(in_channels);
        for c in &mut cfg.columns {
            for f in &mut c.filters {
                *f = f.div_ceil(4);
            }
        }
        cfg
    }

    /// Total spatial reduction of each column before its upsampler.
    pub fn downsample_factor(&self) -> usize {
        self.columns
            .first()
            .map_or(1, |c| 1 << c.pool_after.len())
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.columns.is_empty() {
            problems.push("coarse network needs at least one column".into());
        }
        let factor = self.downsample_factor();
        for (i, c) in self.columns.iter().enumerate() {
            if c.kernels.len() != c.filters.len() || c.kernels.is_empty() {
                problems.push(format!("column {i}: kernels and filters must be non-empty and equal length"));
            }
            if c.kernels.iter().any(|k| k % 2 == 0) {
                problems.push(format!("column {i}: kernel sizes must be odd"));
            }
            if c.pool_after.iter().any(|&p| p >= c.kernels.len()) {
                problems.push(format!("column {i}: pool index out of range"));
            }
            if 1 << c.pool_after.len() != factor {
                problems.push(format!("column {i}: all columns must downsample by {factor}"));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }
}

#[derive(Clone, Debug)]
struct Column {
    convs: Vec<(Conv, bool)>,
    up: Upsample,
}

#[derive(Clone, Debug)]
pub struct CoarseNet {
    pub config: CoarseNetConfig,
    columns: Vec<Column>,
    fuse: Conv,
}

impl CoarseNet {
    pub fn new(config: CoarseNetConfig, store: &mut ParamStore, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let factor = config.downsample_factor();
        let mut columns = Vec::new();
        let mut fused_channels = 0;
        for (ci, spec) in config.columns.iter().enumerate() {
            let mut convs = Vec::new();
            let mut c_in = config.in_channels;
            for (li, (&k, &f)) in spec.kernels.iter().zip(&spec.filters).enumerate() {
                let conv = Conv::new(store, rng, &format!("coarse.col{ci}.conv{li}"), c_in, f, k, true)?;
                convs.push((conv, spec.pool_after.contains(&li)));
                c_in = f;
            }
            let up = Upsample::new(store, rng, &format!("coarse.col{ci}.up"), c_in, c_in, factor)?;
            fused_channels += c_in;
            columns.push(Column { convs, up });
        }
        let fuse = Conv::new(store, rng, "coarse.fuse", fused_channels, 1, 1, true)?;
        Ok(CoarseNet {
            config,
            columns,
            fuse,
        })
    }

    /// `image[1,C,H,W] -> C_0[1,1,H,W]`, non-negative.
    pub fn forward(&self, g: &mut Graph, p: &Bound, image: Var) -> Result<Var> {
        let factor = self.config.downsample_factor();
        check_divisible(g, image, factor, "coarse_forward")?;
        let mut outs = Vec::with_capacity(self.columns.len());
        for col in &self.columns {
            let mut x = image;
            for (conv, pool) in &col.convs {
                x = conv.forward(g, p, x)?;
                if *pool {
                    x = g.max_pool2d(x, 2, 2)?;
                }
            }
            outs.push(col.up.forward(g, p, x)?);
        }
        let merged = g.concat_channels(&outs)?;
        self.fuse.forward(g, p, merged)
    }
}

pub(crate) fn check_divisible(g: &Graph, x: Var, factor: usize, op: &'static str) -> Result<()> {
    let (h, w) = g
        .value(x)
        .spatial()
        .ok_or_else(|| Error::shape(op, "rank", "need N,C,H,W"))?;
    if h % factor != 0 || w % factor != 0 || h == 0 || w == 0 {
        return Err(Error::shape(
            op,
            "spatial size",
            format!("{h}x{w} is not divisible by {factor}; pad the image to a multiple of {factor} first"),
        ));
    }
    Ok(())
}
