//! Count extraction and MAE / root-mean-square count error.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::train::RoiMask;

/// Integrated density over the ROI (whole map when absent).
pub fn count_from_map(pred: &Tensor, roi: Option<&RoiMask>) -> Result<f64> {
    const OP: &str = "count_from_map";
    let (h, w) = pred
        .spatial()
        .ok_or_else(|| Error::shape(OP, "rank", "need at least 2 dims"))?;
    if pred.numel() != h * w {
        return Err(Error::shape(
            OP,
            "channels",
            format!("expected a single-channel map, got {:?}", pred.shape()),
        ));
    }
    match roi {
        None => Ok(pred.sum()),
        Some(r) => {
            if (r.height(), r.width()) != (h, w) {
                return Err(Error::shape(
                    OP,
                    "roi",
                    format!("ROI {}x{} vs map {h}x{w}", r.height(), r.width()),
                ));
            }
            Ok(pred
                .data()
                .iter()
                .zip(r.values())
                .filter(|(_, &m)| m != 0.0)
                .map(|(v, _)| v)
                .sum())
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalResult {
    pub mae: f64,
    /// Root of the mean squared count error.
    pub mse: f64,
    /// `(predicted, true)` count per image, in input order.
    pub per_image: Vec<(f64, f64)>,
}

impl EvalResult {
    /// Errors are reduced in sorted order so the result does not depend on
    /// the order images were evaluated in.
    pub fn from_counts(per_image: Vec<(f64, f64)>) -> Result<Self> {
        if per_image.is_empty() {
            return Err(Error::invalid("evaluate", "no images to evaluate"));
        }
        let mut abs: Vec<f64> = per_image.iter().map(|(p, t)| (p - t).abs()).collect();
        abs.sort_unstable_by(f64::total_cmp);
        let n = abs.len() as f64;
        let mae = abs.iter().sum::<f64>() / n;
        let mse = libm::sqrt(abs.iter().map(|e| e * e).sum::<f64>() / n);
        Ok(EvalResult { mae, mse, per_image })
    }
}
