//! Dense row-major arrays.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Dense N-dimensional `f64` array in row-major (N, C, H, W) order.
///
/// `grad` is only populated by [`Graph::backward`](crate::graph::Graph::backward)
/// for tensors recorded with `requires_grad`.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::shape(
                "Tensor::new",
                "data length",
                format!("shape {shape:?} holds {numel} values, got {}", data.len()),
            ));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; numel],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: Vec::new(),
            data: vec![value],
            requires_grad: false,
            grad: None,
        }
    }

    /// Builds a tensor by evaluating `f` at every flat index.
    pub fn from_fn(shape: &[usize], f: impl FnMut(usize) -> f64) -> Self {
        let numel: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: (0..numel).map(f).collect(),
            requires_grad: false,
            grad: None,
        }
    }

    pub fn with_requires_grad(mut self, flag: bool) -> Self {
        self.requires_grad = flag;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn set_requires_grad(&mut self, flag: bool) {
        self.requires_grad = flag;
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn set_grad(&mut self, grad: Vec<f64>) -> Result<()> {
        if grad.len() != self.data.len() {
            return Err(Error::shape(
                "Tensor::set_grad",
                "gradient length",
                format!("expected {}, got {}", self.data.len(), grad.len()),
            ));
        }
        self.grad = Some(grad);
        Ok(())
    }

    pub fn take_grad(&mut self) -> Option<Vec<f64>> {
        self.grad.take()
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() {
            return Err(Error::shape(
                "Tensor::reshape",
                "element count",
                format!("{:?} -> {shape:?}", self.shape),
            ));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Trailing two dimensions, i.e. the spatial extent of an image-shaped tensor.
    pub fn spatial(&self) -> Option<(usize, usize)> {
        let n = self.shape.len();
        (n >= 2).then(|| (self.shape[n - 2], self.shape[n - 1]))
    }

    /// Number of H×W planes stacked in front of the spatial dims.
    pub fn planes(&self) -> usize {
        let n = self.shape.len();
        if n < 2 {
            return 0;
        }
        self.shape[..n - 2].iter().product()
    }

    /// Element at `[n, c, y, x]` of a rank-4 tensor.
    pub fn at4(&self, n: usize, c: usize, y: usize, x: usize) -> f64 {
        let s = &self.shape;
        self.data[((n * s[1] + c) * s[2] + y) * s[3] + x]
    }

    /// Sum of elementwise products.
    pub fn dot(&self, other: &Tensor) -> Result<f64> {
        if self.shape != other.shape {
            return Err(Error::shape(
                "Tensor::dot",
                "shape",
                format!("{:?} vs {:?}", self.shape, other.shape),
            ));
        }
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    /// Copies the window `[top, top+height) × [left, left+width)` out of every plane.
    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Tensor> {
        let (h, w) = self
            .spatial()
            .ok_or_else(|| Error::shape("Tensor::crop", "rank", "need at least 2 dims"))?;
        if top + height > h || left + width > w || height == 0 || width == 0 {
            return Err(Error::invalid(
                "Tensor::crop",
                format!("window {height}x{width} at ({top},{left}) exceeds {h}x{w}"),
            ));
        }
        let mut shape = self.shape.clone();
        let n = shape.len();
        shape[n - 2] = height;
        shape[n - 1] = width;
        let mut out = Vec::with_capacity(self.planes() * height * width);
        for plane in self.data.chunks_exact(h * w) {
            for y in top..top + height {
                out.extend_from_slice(&plane[y * w + left..y * w + left + width]);
            }
        }
        Tensor::new(&shape, out)
    }

    /// Extends every plane to `height × width` by mirroring at the bottom and right edges.
    pub fn pad_reflect(&self, height: usize, width: usize) -> Result<Tensor> {
        self.pad_with(height, width, |plane, w, h, y, x| {
            plane[reflect_index(y, h) * w + reflect_index(x, w)]
        })
    }

    /// Extends every plane to `height × width` with zeros at the bottom and right edges.
    pub fn pad_zeros(&self, height: usize, width: usize) -> Result<Tensor> {
        self.pad_with(height, width, |plane, w, h, y, x| {
            if y < h && x < w {
                plane[y * w + x]
            } else {
                0.0
            }
        })
    }

    fn pad_with(
        &self,
        height: usize,
        width: usize,
        fetch: impl Fn(&[f64], usize, usize, usize, usize) -> f64,
    ) -> Result<Tensor> {
        let (h, w) = self
            .spatial()
            .ok_or_else(|| Error::shape("Tensor::pad", "rank", "need at least 2 dims"))?;
        if height < h || width < w {
            return Err(Error::invalid(
                "Tensor::pad",
                format!("target {height}x{width} smaller than {h}x{w}"),
            ));
        }
        let mut shape = self.shape.clone();
        let n = shape.len();
        shape[n - 2] = height;
        shape[n - 1] = width;
        let mut out = Vec::with_capacity(self.planes() * height * width);
        for plane in self.data.chunks_exact(h * w) {
            for y in 0..height {
                for x in 0..width {
                    out.push(fetch(plane, w, h, y, x));
                }
            }
        }
        Tensor::new(&shape, out)
    }
}

/// Mirror index `i` into `0..n` without repeating the edge sample.
pub(crate) fn reflect_index(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let r = i % period;
    if r < n {
        r
    } else {
        period - r
    }
}

/// Smallest multiple of `m` that is `>= v`.
pub fn round_up(v: usize, m: usize) -> usize {
    v.div_ceil(m) * m
}
