use alloc::format;

use rand::Rng;

use super::params::{Bound, ParamId, ParamStore};
use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Weight init standard deviation for every conv and deconv.
pub const INIT_STD: f64 = 0.01;

/// Same-padded convolution with bias.
#[derive(Clone, Debug)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: ParamId,
    pub kernel: usize,
    pub relu: bool,
}

impl Conv {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        relu: bool,
    ) -> Result<Self> {
        let weight = store.insert_normal(
            &format!("{name}.weight"),
            &[c_out, c_in, kernel, kernel],
            INIT_STD,
            rng,
        )?;
        let bias = store.insert(&format!("{name}.bias"), Tensor::zeros(&[c_out]))?;
        Ok(Conv {
            weight,
            bias,
            kernel,
            relu,
        })
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let y = g.conv2d(
            x,
            p.var(self.weight),
            Some(p.var(self.bias)),
            1,
            self.kernel / 2,
        )?;
        if self.relu {
            g.relu(y)
        } else {
            Ok(y)
        }
    }
}

/// Transposed convolution with kernel = stride = `factor`: every input pixel
/// expands into a learned `factor × factor` block.
#[derive(Clone, Debug)]
pub struct Upsample {
    pub weight: ParamId,
    pub factor: usize,
}

impl Upsample {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        c_in: usize,
        c_out: usize,
        factor: usize,
    ) -> Result<Self> {
        let weight = store.insert_normal(
            &format!("{name}.weight"),
            &[c_in, c_out, factor, factor],
            INIT_STD,
            rng,
        )?;
        Ok(Upsample { weight, factor })
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        g.conv_transpose2d(x, p.var(self.weight), self.factor, 0)
    }
}
