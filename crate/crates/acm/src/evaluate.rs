//! Count evaluation over a manifest, one image per rayon task.

use std::path::{Path, PathBuf};

use acm_core::density::{generate_density_map, KernelParams};
use acm_core::eval::count_from_map;
use acm_core::{EvalResult, ModelBundle, Variant};
use rayon::prelude::*;
use serde::Serialize;

use crate::dataset::{Entry, Manifest, Split};
use crate::error::{Error, Result};
use crate::{density_file, imageio};

/// Where predicted density maps come from.
#[derive(Clone, Copy, Debug)]
pub enum Predictor<'a> {
    Model {
        bundle: &'a ModelBundle,
        variant: Variant,
    },
    /// Precomputed maps named `<image stem>.den`.
    DensityDir(&'a Path),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ImageRow {
    pub image: String,
    pub predicted: f64,
    pub truth: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Failure {
    pub image: String,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub mae: Option<f64>,
    pub mse: Option<f64>,
    pub images: Vec<ImageRow>,
    pub failures: Vec<Failure>,
}

impl EvalReport {
    pub fn result(&self) -> Option<EvalResult> {
        EvalResult::from_counts(self.images.iter().map(|r| (r.predicted, r.truth)).collect()).ok()
    }
}

fn one(
    m: &Manifest,
    e: &Entry,
    predictor: Predictor<'_>,
    params: &KernelParams,
    png_dir: Option<&Path>,
) -> Result<ImageRow> {
    let annotation = m.annotation(e)?;
    let gt = generate_density_map(&annotation, params)?;
    let roi = e.roi.as_ref().map(|p| imageio::load_roi(&m.resolve(p))).transpose()?;
    let pred = match predictor {
        Predictor::Model { bundle, variant } => {
            let image = imageio::load_image(&m.resolve(&e.image), bundle.in_channels)?;
            bundle.ablation_forward(variant, &image)?.0
        }
        Predictor::DensityDir(dir) => {
            let p: PathBuf = dir.join(format!("{}.{}", e.stem(), density_file::EXTENSION));
            density_file::read(&p)?.into_tensor()
        }
    };
    if pred.spatial() != Some((gt.height(), gt.width())) {
        return Err(Error::format(
            &m.resolve(&e.image),
            format!("prediction {:?} does not match annotation {}x{}", pred.shape(), gt.height(), gt.width()),
        ));
    }
    if let Some(dir) = png_dir {
        imageio::save_density_png(&dir.join(format!("{}_density.png", e.stem())), &pred)?;
    }
    Ok(ImageRow {
        image: e.stem(),
        predicted: count_from_map(&pred, roi.as_ref())?,
        truth: count_from_map(gt.as_tensor(), roi.as_ref())?,
    })
}

/// Evaluates every entry of `split` (all entries when `None`). Unreadable
/// items are collected as failures and do not stop the run.
pub fn evaluate(
    m: &Manifest,
    predictor: Predictor<'_>,
    split: Option<Split>,
    png_dir: Option<&Path>,
) -> Result<EvalReport> {
    let entries: Vec<&Entry> = m.entries.iter().filter(|e| split.is_none_or(|s| e.split == s)).collect();
    if entries.is_empty() {
        return Err(Error::Config(vec!["manifest has no entries to evaluate".into()]));
    }
    let params = KernelParams::default();
    let outcomes: Vec<_> = entries
        .par_iter()
        .map(|e| (e.stem(), one(m, e, predictor, &params, png_dir)))
        .collect();
    let mut images = Vec::new();
    let mut failures = Vec::new();
    for (name, o) in outcomes {
        match o {
            Ok(row) => images.push(row),
            Err(e) => failures.push(Failure {
                image: name,
                error: e.to_string(),
            }),
        }
    }
    let mut report = EvalReport {
        mae: None,
        mse: None,
        images,
        failures,
    };
    if let Some(r) = report.result() {
        report.mae = Some(r.mae);
        report.mse = Some(r.mse);
    }
    Ok(report)
}
