//! Column-oriented samples: ingestion, validation, and accessors.
//!
//! A [`Dataset`] is the single input to every estimator in the crate. It is
//! immutable after construction and safe to share across threads by
//! reference. CSV ingestion is strict: comma-delimited, UTF-8, header
//! mandatory, and any missing or malformed cell in a used column is a hard
//! error rather than a silently dropped row.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Role a CSV column plays in the sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Outcome,
    Treatment,
    Instrument,
    Post,
    Group,
    Covariate,
    Cluster,
}

/// Map from CSV header names to column roles.
///
/// `outcome` and `treatment` are mandatory; each CSV column maps to at most
/// one role.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub outcome: String,
    pub treatment: String,
    #[serde(default)]
    pub instrument: Option<String>,
    #[serde(default)]
    pub post: Option<String>,
    #[serde(default)]
    pub group: Option<String>,
    #[serde(default)]
    pub covariates: Vec<String>,
    #[serde(default)]
    pub cluster: Option<String>,
}

impl ColumnSpec {
    pub fn new(outcome: impl Into<String>, treatment: impl Into<String>) -> Self {
        ColumnSpec {
            outcome: outcome.into(),
            treatment: treatment.into(),
            ..Default::default()
        }
    }

    fn check_distinct(&self) -> Result<()> {
        let mut seen: HashMap<&str, usize> = HashMap::new();
        let mut names: Vec<&str> = vec![&self.outcome, &self.treatment];
        names.extend(self.instrument.as_deref());
        names.extend(self.post.as_deref());
        names.extend(self.group.as_deref());
        names.extend(self.cluster.as_deref());
        names.extend(self.covariates.iter().map(|s| s.as_str()));
        for name in names {
            *seen.entry(name).or_insert(0) += 1;
            if seen[name] > 1 {
                return Err(Error::DuplicateRole(name.to_string()));
            }
        }
        Ok(())
    }
}

/// A validated column-oriented sample.
///
/// Every outcome is finite and non-negative. Optional columns are present
/// only when the source data supplied them; estimators that need a column
/// report [`Error::MissingRole`] when it is absent.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    outcome: Vec<f64>,
    treatment: Vec<f64>,
    instrument: Option<Vec<f64>>,
    post: Option<Vec<f64>>,
    group: Option<Vec<f64>>,
    covariates: Vec<Vec<f64>>,
    covariate_names: Vec<String>,
    cluster: Option<Vec<usize>>,
}

impl Dataset {
    /// Build a dataset from columns, validating the outcome domain.
    pub fn new(outcome: Vec<f64>, treatment: Vec<f64>) -> Result<Self> {
        if outcome.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if outcome.len() != treatment.len() {
            return Err(Error::DimensionMismatch(format!(
                "outcome has {} rows, treatment {}",
                outcome.len(),
                treatment.len()
            )));
        }
        for (row, &y) in outcome.iter().enumerate() {
            if !y.is_finite() {
                return Err(Error::NonFiniteCell {
                    column: "outcome".into(),
                    row,
                });
            }
            if y < 0.0 {
                return Err(Error::NegativeOutcome {
                    column: "outcome".into(),
                    row,
                    value: y,
                });
            }
        }
        for (row, &t) in treatment.iter().enumerate() {
            if !t.is_finite() {
                return Err(Error::NonFiniteCell {
                    column: "treatment".into(),
                    row,
                });
            }
        }
        Ok(Dataset {
            outcome,
            treatment,
            instrument: None,
            post: None,
            group: None,
            covariates: Vec::new(),
            covariate_names: Vec::new(),
            cluster: None,
        })
    }

    fn attach(&mut self, name: &'static str, col: Vec<f64>, binary: bool) -> Result<Vec<f64>> {
        if col.len() != self.row_count() {
            return Err(Error::DimensionMismatch(format!(
                "column `{name}` has {} rows, dataset {}",
                col.len(),
                self.row_count()
            )));
        }
        for (row, &v) in col.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFiniteCell {
                    column: name.into(),
                    row,
                });
            }
            if binary && v != 0.0 && v != 1.0 {
                return Err(Error::NonBinaryColumn {
                    column: name.into(),
                    row,
                    value: v,
                });
            }
        }
        Ok(col)
    }

    pub fn with_instrument(mut self, z: Vec<f64>) -> Result<Self> {
        self.instrument = Some(self.attach("instrument", z, false)?);
        Ok(self)
    }

    pub fn with_post(mut self, post: Vec<f64>) -> Result<Self> {
        self.post = Some(self.attach("post", post, true)?);
        Ok(self)
    }

    pub fn with_group(mut self, group: Vec<f64>) -> Result<Self> {
        self.group = Some(self.attach("group", group, true)?);
        Ok(self)
    }

    pub fn with_covariate(mut self, name: impl Into<String>, col: Vec<f64>) -> Result<Self> {
        let col = self.attach("covariate", col, false)?;
        self.covariates.push(col);
        self.covariate_names.push(name.into());
        Ok(self)
    }

    /// Attach cluster ids. Arbitrary labels are densified in order of first
    /// appearance, so the internal ids are stable for a given row order.
    pub fn with_cluster_labels<S: AsRef<str>>(mut self, labels: &[S]) -> Result<Self> {
        if labels.len() != self.row_count() {
            return Err(Error::DimensionMismatch(format!(
                "cluster column has {} rows, dataset {}",
                labels.len(),
                self.row_count()
            )));
        }
        let mut ids = Vec::with_capacity(labels.len());
        let mut map: HashMap<String, usize> = HashMap::new();
        for label in labels {
            let next = map.len();
            let id = *map.entry(label.as_ref().to_string()).or_insert(next);
            ids.push(id);
        }
        self.cluster = Some(ids);
        Ok(self)
    }

    pub fn row_count(&self) -> usize {
        self.outcome.len()
    }

    pub fn outcome(&self) -> &[f64] {
        &self.outcome
    }

    pub fn treatment(&self) -> &[f64] {
        &self.treatment
    }

    pub fn instrument(&self) -> Option<&[f64]> {
        self.instrument.as_deref()
    }

    pub fn post(&self) -> Option<&[f64]> {
        self.post.as_deref()
    }

    pub fn group(&self) -> Option<&[f64]> {
        self.group.as_deref()
    }

    pub fn covariates(&self) -> &[Vec<f64>] {
        &self.covariates
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn cluster(&self) -> Option<&[usize]> {
        self.cluster.as_deref()
    }

    pub fn require_instrument(&self) -> Result<&[f64]> {
        self.instrument
            .as_deref()
            .ok_or(Error::MissingRole("instrument"))
    }

    pub fn require_post(&self) -> Result<&[f64]> {
        self.post.as_deref().ok_or(Error::MissingRole("post"))
    }

    pub fn require_group(&self) -> Result<&[f64]> {
        self.group.as_deref().ok_or(Error::MissingRole("group"))
    }

    pub fn require_cluster(&self) -> Result<&[usize]> {
        self.cluster.as_deref().ok_or(Error::MissingRole("cluster"))
    }

    /// Number of distinct cluster ids, when a cluster column is present.
    pub fn cluster_count(&self) -> Option<usize> {
        self.cluster.as_ref().map(|ids| {
            let mut distinct = ids.to_vec();
            distinct.sort_unstable();
            distinct.dedup();
            distinct.len()
        })
    }

    /// Check that the treatment column is exactly {0,1}-valued.
    pub fn require_binary_treatment(&self) -> Result<()> {
        for (row, &t) in self.treatment.iter().enumerate() {
            if t != 0.0 && t != 1.0 {
                return Err(Error::NonBinaryColumn {
                    column: "treatment".into(),
                    row,
                    value: t,
                });
            }
        }
        Ok(())
    }

    /// Multiply every outcome by `a > 0`, leaving all other columns intact.
    pub fn rescale_outcome(&self, a: f64) -> Result<Dataset> {
        if !(a.is_finite() && a > 0.0) {
            return Err(Error::NonPositiveScale(a));
        }
        let mut out = self.clone();
        for y in &mut out.outcome {
            *y *= a;
        }
        Ok(out)
    }

    /// Smallest strictly positive outcome, if any outcome is positive.
    pub fn min_positive_outcome(&self) -> Option<f64> {
        self.outcome
            .iter()
            .copied()
            .filter(|&y| y > 0.0)
            .fold(None, |acc, y| Some(acc.map_or(y, |m: f64| m.min(y))))
    }

    /// New dataset keeping the rows at `keep` (in the given order).
    ///
    /// Used by the resampling bootstrap; cluster ids are carried over as-is,
    /// so callers that duplicate clusters must re-label afterwards.
    pub fn select_rows(&self, keep: &[usize]) -> Dataset {
        let take = |col: &Vec<f64>| keep.iter().map(|&i| col[i]).collect::<Vec<f64>>();
        Dataset {
            outcome: take(&self.outcome),
            treatment: take(&self.treatment),
            instrument: self.instrument.as_ref().map(take),
            post: self.post.as_ref().map(take),
            group: self.group.as_ref().map(take),
            covariates: self.covariates.iter().map(take).collect(),
            covariate_names: self.covariate_names.clone(),
            cluster: self
                .cluster
                .as_ref()
                .map(|ids| keep.iter().map(|&i| ids[i]).collect()),
        }
    }

    /// Replace cluster ids (the bootstrap re-labels resampled clusters so
    /// two copies of one original cluster count as distinct clusters).
    pub fn with_cluster_ids(mut self, ids: Vec<usize>) -> Result<Self> {
        if ids.len() != self.row_count() {
            return Err(Error::DimensionMismatch(
                "cluster id length mismatch".into(),
            ));
        }
        self.cluster = Some(ids);
        Ok(self)
    }

    /// Rows with treatment 1 and rows with treatment 0, as index lists.
    pub fn arms(&self) -> (Vec<usize>, Vec<usize>) {
        let mut treated = Vec::new();
        let mut control = Vec::new();
        for (i, &t) in self.treatment.iter().enumerate() {
            if t == 1.0 {
                treated.push(i);
            } else {
                control.push(i);
            }
        }
        (treated, control)
    }
}

/// Load a CSV file according to `spec`. Row order is preserved.
pub fn load_csv(path: impl AsRef<Path>, spec: &ColumnSpec) -> Result<Dataset> {
    let file = std::fs::File::open(path.as_ref())?;
    load_csv_reader(file, spec)
}

/// Load CSV from any reader. Same validation as [`load_csv`].
pub fn load_csv_reader<R: std::io::Read>(reader: R, spec: &ColumnSpec) -> Result<Dataset> {
    spec.check_distinct()?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let headers = rdr.headers()?.clone();
    let col_index = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };

    let outcome_ix = col_index(&spec.outcome)?;
    let treatment_ix = col_index(&spec.treatment)?;
    let instrument_ix = spec.instrument.as_deref().map(col_index).transpose()?;
    let post_ix = spec.post.as_deref().map(col_index).transpose()?;
    let group_ix = spec.group.as_deref().map(col_index).transpose()?;
    let cluster_ix = spec.cluster.as_deref().map(col_index).transpose()?;
    let cov_ix: Vec<usize> = spec
        .covariates
        .iter()
        .map(|c| col_index(c))
        .collect::<Result<_>>()?;

    let parse = |record: &csv::StringRecord, ix: usize, column: &str, row: usize| -> Result<f64> {
        let raw = record.get(ix).unwrap_or("");
        raw.parse::<f64>().map_err(|_| Error::NonNumericCell {
            column: column.to_string(),
            row,
            value: raw.to_string(),
        })
    };

    let mut outcome = Vec::new();
    let mut treatment = Vec::new();
    let mut instrument = Vec::new();
    let mut post = Vec::new();
    let mut group = Vec::new();
    let mut cluster_labels: Vec<String> = Vec::new();
    let mut covariates: Vec<Vec<f64>> = vec![Vec::new(); cov_ix.len()];

    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        outcome.push(parse(&record, outcome_ix, &spec.outcome, row)?);
        treatment.push(parse(&record, treatment_ix, &spec.treatment, row)?);
        if let Some(ix) = instrument_ix {
            instrument.push(parse(&record, ix, spec.instrument.as_ref().unwrap(), row)?);
        }
        if let Some(ix) = post_ix {
            post.push(parse(&record, ix, spec.post.as_ref().unwrap(), row)?);
        }
        if let Some(ix) = group_ix {
            group.push(parse(&record, ix, spec.group.as_ref().unwrap(), row)?);
        }
        if let Some(ix) = cluster_ix {
            cluster_labels.push(record.get(ix).unwrap_or("").to_string());
        }
        for (k, &ix) in cov_ix.iter().enumerate() {
            covariates[k].push(parse(&record, ix, &spec.covariates[k], row)?);
        }
    }

    let mut data = Dataset::new(outcome, treatment)?;
    if instrument_ix.is_some() {
        data = data.with_instrument(instrument)?;
    }
    if post_ix.is_some() {
        data = data.with_post(post)?;
    }
    if group_ix.is_some() {
        data = data.with_group(group)?;
    }
    for (k, col) in covariates.into_iter().enumerate() {
        data = data.with_covariate(spec.covariates[k].clone(), col)?;
    }
    if cluster_ix.is_some() {
        data = data.with_cluster_labels(&cluster_labels)?;
    }
    Ok(data)
}
