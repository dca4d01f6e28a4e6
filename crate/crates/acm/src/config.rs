//! Versioned TOML run configuration.
//!
//! ```toml
//! version = 1
//! manifest = "data/manifest.json"
//! preset = "tiny"
//! variant = "C+F+S"
//! seed = 7
//! steps = 2000
//! checkpoint_every = 500
//! lambda = 1.0
//! lr = 1e-5
//!
//! [attention]            # optional, derived from the dataset when absent
//! n_centers = 5
//! region = { fraction = [0.4, 0.3] }
//!
//! [augment]              # optional, whole images when absent
//! patches = 100
//! size = { fraction = [0.5, 0.5] }
//! workers = 2
//! deterministic = true
//! ```

use std::path::{Path, PathBuf};
use std::str::FromStr;

use acm_core::{AttentionConfig, Preset, RegionSize, Variant};
use acm_core::train::{AugmentPolicy, PatchSize};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CONFIG_VERSION: u32 = 1;

/// Region extent as written in files: `{ fraction = [h, w] }` or `{ pixels = [h, w] }`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionSpec {
    Fraction([f64; 2]),
    Pixels([usize; 2]),
}

impl From<RegionSize> for RegionSpec {
    fn from(r: RegionSize) -> Self {
        match r {
            RegionSize::Fraction { height, width } => RegionSpec::Fraction([height, width]),
            RegionSize::Pixels { height, width } => RegionSpec::Pixels([height, width]),
        }
    }
}

impl From<RegionSpec> for RegionSize {
    fn from(r: RegionSpec) -> Self {
        match r {
            RegionSpec::Fraction([height, width]) => RegionSize::Fraction { height, width },
            RegionSpec::Pixels([height, width]) => RegionSize::Pixels { height, width },
        }
    }
}

/// `0.4x0.3` (fractions) or `64x48` (pixels).
impl FromStr for RegionSpec {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let bad = || format!("region size {s:?} must look like 0.4x0.3 or 64x48");
        let (a, b) = s.split_once(['x', 'X']).ok_or_else(bad)?;
        if a.contains('.') || b.contains('.') {
            let h = a.trim().parse().map_err(|_| bad())?;
            let w = b.trim().parse().map_err(|_| bad())?;
            Ok(RegionSpec::Fraction([h, w]))
        } else {
            let h = a.trim().parse().map_err(|_| bad())?;
            let w = b.trim().parse().map_err(|_| bad())?;
            Ok(RegionSpec::Pixels([h, w]))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttentionSpec {
    pub n_centers: usize,
    pub region: RegionSpec,
}

impl From<AttentionConfig> for AttentionSpec {
    fn from(c: AttentionConfig) -> Self {
        AttentionSpec {
            n_centers: c.n_centers,
            region: c.region.into(),
        }
    }
}

impl From<AttentionSpec> for AttentionConfig {
    fn from(s: AttentionSpec) -> Self {
        AttentionConfig {
            n_centers: s.n_centers,
            region: s.region.into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentSpec {
    pub patches: usize,
    pub size: RegionSpec,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default = "default_true")]
    pub deterministic: bool,
    #[serde(default = "default_queue")]
    pub queue: usize,
}

fn default_workers() -> usize {
    2
}

fn default_true() -> bool {
    true
}

fn default_queue() -> usize {
    16
}

impl AugmentSpec {
    pub fn policy(&self) -> AugmentPolicy {
        AugmentPolicy {
            patches: self.patches,
            size: match self.size {
                RegionSpec::Fraction([height, width]) => PatchSize::Fraction { height, width },
                RegionSpec::Pixels([height, width]) => PatchSize::Pixels { height, width },
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub manifest: PathBuf,
    #[serde(default = "default_preset")]
    pub preset: String,
    #[serde(default = "default_variant")]
    pub variant: String,
    #[serde(default)]
    pub seed: u64,
    pub steps: u64,
    #[serde(default)]
    pub checkpoint_every: u64,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default)]
    pub attention: Option<AttentionSpec>,
    #[serde(default)]
    pub augment: Option<AugmentSpec>,
}

fn default_preset() -> String {
    "tiny".into()
}

fn default_variant() -> String {
    "C+F+S".into()
}

fn default_lambda() -> f64 {
    1.0
}

fn default_lr() -> f64 {
    1e-5
}

/// A config whose string fields have been parsed.
#[derive(Clone, Debug, PartialEq)]
pub struct Validated {
    pub preset: Preset,
    pub variant: Variant,
    pub attention: Option<AttentionConfig>,
    pub augment: Option<AugmentPolicy>,
}

impl RunConfig {
    /// Reads the file; a relative `manifest` is resolved against the config's directory.
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| Error::Config(vec![format!("{}: {e}", path.display())]))?;
        if cfg.manifest.is_relative() {
            if let Some(dir) = path.parent() {
                cfg.manifest = dir.join(&cfg.manifest);
            }
        }
        Ok(cfg)
    }

    /// Checks every field and reports all problems at once.
    pub fn validate(&self) -> Result<Validated> {
        let mut problems = Vec::new();
        if self.version != CONFIG_VERSION {
            problems.push(format!("version: expected {CONFIG_VERSION}, got {}", self.version));
        }
        let preset = self
            .preset
            .parse::<Preset>()
            .map_err(|_| problems.push(format!("preset: unknown preset {:?} (tiny or paper)", self.preset)))
            .ok();
        let variant = self
            .variant
            .parse::<Variant>()
            .map_err(|_| problems.push(format!("variant: unknown variant {:?} (C, F, C+F or C+F+S)", self.variant)))
            .ok();
        if self.steps == 0 {
            problems.push("steps: must be >= 1".into());
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            problems.push(format!("lr: must be a positive number, got {}", self.lr));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            problems.push(format!("lambda: must be >= 0, got {}", self.lambda));
        }
        let attention = self.attention.map(AttentionConfig::from);
        if let Some(Err(acm_core::Error::Config(list))) = attention.map(|a| a.validate()) {
            problems.extend(list.into_iter().map(|m| format!("attention: {m}")));
        }
        if let Some(aug) = &self.augment {
            if aug.patches == 0 {
                problems.push("augment.patches: must be >= 1".into());
            }
            if aug.queue == 0 {
                problems.push("augment.queue: must be >= 1".into());
            }
            if aug.workers == 0 {
                problems.push("augment.workers: must be >= 1".into());
            }
            match aug.size {
                RegionSpec::Fraction([h, w]) if !(h > 0.0 && h <= 1.0 && w > 0.0 && w <= 1.0) => {
                    problems.push(format!("augment.size: fractions must be in (0, 1], got {h}x{w}"))
                }
                RegionSpec::Pixels([h, w]) if h == 0 || w == 0 => {
                    problems.push(format!("augment.size: {h}x{w} px must be at least 1x1"))
                }
                _ => {}
            }
        }
        if !problems.is_empty() {
            return Err(Error::Config(problems));
        }
        Ok(Validated {
            preset: preset.expect("checked"),
            variant: variant.expect("checked"),
            attention,
            augment: self.augment.as_ref().map(AugmentSpec::policy),
        })
    }
}
