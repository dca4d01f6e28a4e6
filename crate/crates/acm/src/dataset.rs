//! Annotation files, dataset manifests and loading of image / ROI / density triples.

use std::path::{Path, PathBuf};

use acm_core::density::{generate_density_map, KernelParams};
use acm_core::{Annotation, DensityClass, DensityMap, RoiMask, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{self, Error, Result};
use crate::imageio;

/// `{"height": H, "width": W, "points": [[x, y], ...]}`
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnotationFile {
    pub height: usize,
    pub width: usize,
    pub points: Vec<[f64; 2]>,
}

impl From<&Annotation> for AnnotationFile {
    fn from(a: &Annotation) -> Self {
        AnnotationFile {
            height: a.height,
            width: a.width,
            points: a.heads.iter().map(|&(x, y)| [x, y]).collect(),
        }
    }
}

pub fn read_annotation(path: &Path) -> Result<Annotation> {
    let file: AnnotationFile = serde_json::from_slice(&error::read(path)?).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })?;
    Annotation::new(
        file.height,
        file.width,
        file.points.iter().map(|p| (p[0], p[1])).collect(),
    )
    .map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_annotation(path: &Path, a: &Annotation) -> Result<()> {
    let json = serde_json::to_vec_pretty(&AnnotationFile::from(a)).expect("annotation serializes");
    error::write(path, &json)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Entry {
    pub image: PathBuf,
    pub annotation: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub roi: Option<PathBuf>,
    pub split: Split,
}

impl Entry {
    /// Stable short name used for per-image output files.
    pub fn stem(&self) -> String {
        self.image
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "image".into())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub entries: Vec<Entry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub density_class: Option<String>,
    /// Directory relative paths are resolved against; not serialized.
    #[serde(skip)]
    pub root: PathBuf,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Manifest> {
        let mut m: Manifest = serde_json::from_slice(&error::read(path)?).map_err(|e| Error::Json {
            path: path.to_path_buf(),
            source: e,
        })?;
        m.root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        if let Some(c) = &m.density_class {
            c.parse::<DensityClass>()
                .map_err(|_| Error::format(path, format!("density_class must be dense or sparse, got {c:?}")))?;
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        error::write(path, &serde_json::to_vec_pretty(self).expect("manifest serializes"))
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &Entry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    /// Every referenced file that does not exist, as `(entry index, path)`.
    pub fn missing_paths(&self) -> Vec<(usize, PathBuf)> {
        let mut missing = Vec::new();
        for (i, e) in self.entries.iter().enumerate() {
            for p in [Some(&e.image), Some(&e.annotation), e.roi.as_ref()].into_iter().flatten() {
                let full = self.resolve(p);
                if !full.exists() {
                    missing.push((i, full));
                }
            }
        }
        missing
    }

    pub fn annotation(&self, e: &Entry) -> Result<Annotation> {
        read_annotation(&self.resolve(&e.annotation))
    }
}

/// One fully loaded manifest entry.
#[derive(Clone, Debug)]
pub struct Item {
    pub name: String,
    /// `[1, C, H, W]`, values in `[0, 1]`.
    pub image: Tensor,
    pub annotation: Annotation,
    pub density: DensityMap,
    pub roi: Option<RoiMask>,
}

pub fn load_item(m: &Manifest, e: &Entry, channels: usize, params: &KernelParams) -> Result<Item> {
    let image_path = m.resolve(&e.image);
    let image = imageio::load_image(&image_path, channels)?;
    let annotation = m.annotation(e)?;
    let (h, w) = image.spatial().expect("image is 4-d");
    if (annotation.height, annotation.width) != (h, w) {
        return Err(Error::format(
            &m.resolve(&e.annotation),
            format!(
                "annotation is {}x{} but {} is {h}x{w}",
                annotation.height,
                annotation.width,
                image_path.display()
            ),
        ));
    }
    let roi = match &e.roi {
        Some(p) => {
            let p = m.resolve(p);
            let roi = imageio::load_roi(&p)?;
            if (roi.height(), roi.width()) != (h, w) {
                return Err(Error::format(&p, format!("ROI is {}x{}, image is {h}x{w}", roi.height(), roi.width())));
            }
            Some(roi)
        }
        None => None,
    };
    let density = generate_density_map(&annotation, params)?;
    Ok(Item {
        name: e.stem(),
        image,
        annotation,
        density,
        roi,
    })
}
