//! Two-layer conv stack that blends the stitched coarse/fine map.

use alloc::vec::Vec;

use rand::Rng;

use super::layers::Conv;
use super::params::{Bound, ParamStore};
use crate::error::Result;
use crate::graph::{Graph, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct SmoothNetConfig {
    /// `(filters, kernel)` per conv+ReLU layer; the last must emit one channel.
    pub layers: Vec<(usize, usize)>,
}

impl Default for SmoothNetConfig {
    fn default() -> Self {
        SmoothNetConfig {
            layers: alloc::vec![(12, 3), (1, 3)],
        }
    }
}

#[derive(Clone, Debug)]
pub struct SmoothNet {
    pub config: SmoothNetConfig,
    convs: Vec<Conv>,
}

impl SmoothNet {
    pub fn new(config: SmoothNetConfig, store: &mut ParamStore, rng: &mut impl Rng) -> Result<Self> {
        let mut convs = Vec::new();
        let mut c_in = 1;
        for (i, &(f, k)) in config.layers.iter().enumerate() {
            convs.push(Conv::new(store, rng, &alloc::format!("smooth.conv{i}"), c_in, f, k, true)?);
            c_in = f;
        }
        Ok(SmoothNet { config, convs })
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, m_b: Var) -> Result<Var> {
        let mut x = m_b;
        for conv in &self.convs {
            x = conv.forward(g, p, x)?;
        }
        Ok(x)
    }
}
