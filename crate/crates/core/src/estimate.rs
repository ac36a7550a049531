//! Shared result record and variance-request plumbing for estimators.

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::Result;
use crate::regression::Vcov;

/// Which variance estimator to resolve against the dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeSpec {
    Hc0,
    Cluster,
}

pub(crate) fn resolve_vcov(data: &Dataset, se: SeSpec) -> Result<Vcov<'_>> {
    match se {
        SeSpec::Hc0 => Ok(Vcov::hc0()),
        SeSpec::Cluster => Ok(Vcov::cluster(data.require_cluster()?)),
    }
}

/// Point estimate with its standard error and provenance tags.
///
/// `se` is `None` until inference has run (some estimators only get a
/// bootstrap SE attached by the caller); `tstat = value / se` whenever
/// `se > 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateResult {
    pub value: f64,
    pub se: Option<f64>,
    pub tstat: Option<f64>,
    pub n: usize,
    pub estimator: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub transform: Option<String>,
}

impl EstimateResult {
    pub fn new(value: f64, n: usize, estimator: impl Into<String>) -> Self {
        EstimateResult {
            value,
            se: None,
            tstat: None,
            n,
            estimator: estimator.into(),
            transform: None,
        }
    }

    pub fn with_se(mut self, se: f64) -> Self {
        self.se = Some(se);
        self.tstat = if se > 0.0 { Some(self.value / se) } else { None };
        self
    }

    pub fn with_transform(mut self, tag: impl Into<String>) -> Self {
        self.transform = Some(tag.into());
        self
    }
}
