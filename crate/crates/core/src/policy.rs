//! Dense / sparse dataset classification and the attention setting each implies.

use core::fmt;

use crate::attention::AttentionConfig;
use crate::error::{Error, Result};

/// Average head count above which a dataset counts as dense.
pub const DENSE_THRESHOLD: f64 = 40.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DensityClass {
    Dense,
    Sparse,
}

impl DensityClass {
    /// Strictly greater than the threshold is dense.
    pub fn from_average(average_count: f64) -> Self {
        if average_count > DENSE_THRESHOLD {
            DensityClass::Dense
        } else {
            DensityClass::Sparse
        }
    }

    pub fn attention(self) -> AttentionConfig {
        match self {
            DensityClass::Dense => AttentionConfig::dense(),
            DensityClass::Sparse => AttentionConfig::sparse(),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DensityClass::Dense => "dense",
            DensityClass::Sparse => "sparse",
        }
    }
}

impl fmt::Display for DensityClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl core::str::FromStr for DensityClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dense" => Ok(DensityClass::Dense),
            "sparse" => Ok(DensityClass::Sparse),
            other => Err(Error::invalid(
                "DensityClass",
                alloc::format!("unknown density class {other:?}"),
            )),
        }
    }
}

/// Classification of a dataset from its per-image head counts.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Classification {
    pub average_count: f64,
    pub class: DensityClass,
    pub attention: AttentionConfig,
}

pub fn classify_counts(counts: &[usize]) -> Result<Classification> {
    if counts.is_empty() {
        return Err(Error::invalid("classify_dataset", "dataset is empty"));
    }
    let average_count = counts.iter().sum::<usize>() as f64 / counts.len() as f64;
    let class = DensityClass::from_average(average_count);
    Ok(Classification {
        average_count,
        class,
        attention: class.attention(),
    })
}
