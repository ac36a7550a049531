//! Outcome transformations.
//!
//! The family of maps `m(a*y)` applied pointwise to outcomes: log-like
//! transformations with a scale parameter (log1p, arcsinh, log(c+y)), the
//! calibrated transform that prices the extensive margin explicitly, and the
//! auxiliary indicator / threshold / rank maps. All are pure functions.

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};

/// Above this argument, `ln(y + sqrt(1+y^2))` is evaluated as `ln(2y)`;
/// the dropped term is below 1/(4y^2) < 1e-16 relative, and y^2 would
/// overflow long before the scales the sensitivity engine probes.
const ARCSINH_LARGE: f64 = 1e8;

/// The functional form of a transformation, before scaling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum TransformKind {
    Identity,
    /// `ln(y)`; requires strictly positive inputs.
    Log,
    /// `ln(1 + y)`.
    Log1p,
    /// `ln(y + sqrt(1 + y^2))`.
    Arcsinh,
    /// `ln(c + y)` with `c > 0`.
    LogC { c: f64 },
    /// `ln(y / y_min)` for `y > 0`, and `-x` at zero. Monotone only when no
    /// positive input lies in `(0, y_min * exp(-x))`; checked at application.
    CalibratedLog { x: f64, y_min: f64 },
    /// `1` if `y > 0`, else `0`.
    IndicatorPositive,
    /// `1` if `y >= threshold`, else `0`.
    Threshold { threshold: f64 },
    /// Fraction of reference values `<= y` (right-continuous empirical CDF).
    Rank { reference: Vec<f64> },
}

/// A transformation `y -> m(scale * y)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transform {
    pub kind: TransformKind,
    pub scale: f64,
}

impl Transform {
    pub fn new(kind: TransformKind) -> Result<Self> {
        match &kind {
            TransformKind::LogC { c } if !(*c > 0.0 && c.is_finite()) => {
                return Err(Error::BadTransformSpec(format!("logc requires c > 0, got {c}")))
            }
            TransformKind::CalibratedLog { x, y_min } => {
                if !(*x >= 0.0 && x.is_finite()) {
                    return Err(Error::BadTransformSpec(format!(
                        "calibrated requires x >= 0, got {x}"
                    )));
                }
                if !(*y_min > 0.0 && y_min.is_finite()) {
                    return Err(Error::BadTransformSpec(format!(
                        "calibrated requires y_min > 0, got {y_min}"
                    )));
                }
            }
            TransformKind::Threshold { threshold } if *threshold < 0.0 => {
                return Err(Error::BadTransformSpec(format!(
                    "threshold requires y >= 0, got {threshold}"
                )))
            }
            TransformKind::Rank { reference } => {
                if reference.is_empty() {
                    return Err(Error::EmptyReference);
                }
            }
            _ => {}
        }
        Ok(Transform { kind, scale: 1.0 })
    }

    pub fn identity() -> Self {
        Transform { kind: TransformKind::Identity, scale: 1.0 }
    }

    pub fn log() -> Self {
        Transform { kind: TransformKind::Log, scale: 1.0 }
    }

    pub fn log1p() -> Self {
        Transform { kind: TransformKind::Log1p, scale: 1.0 }
    }

    pub fn arcsinh() -> Self {
        Transform { kind: TransformKind::Arcsinh, scale: 1.0 }
    }

    pub fn log_c(c: f64) -> Result<Self> {
        Transform::new(TransformKind::LogC { c })
    }

    pub fn calibrated(x: f64, y_min: f64) -> Result<Self> {
        Transform::new(TransformKind::CalibratedLog { x, y_min })
    }

    pub fn indicator_positive() -> Self {
        Transform { kind: TransformKind::IndicatorPositive, scale: 1.0 }
    }

    pub fn threshold(threshold: f64) -> Result<Self> {
        Transform::new(TransformKind::Threshold { threshold })
    }

    /// Rank transform against a reference sample (sorted internally).
    pub fn rank(mut reference: Vec<f64>) -> Result<Self> {
        if reference.is_empty() {
            return Err(Error::EmptyReference);
        }
        reference.sort_by(|a, b| a.partial_cmp(b).unwrap());
        Transform::new(TransformKind::Rank { reference })
    }

    /// Same kind with the scale multiplied by `a`.
    pub fn with_scale(&self, a: f64) -> Result<Self> {
        if !(a.is_finite() && a > 0.0) {
            return Err(Error::NonPositiveScale(a));
        }
        Ok(Transform { kind: self.kind.clone(), scale: self.scale * a })
    }

    /// Short tag for result metadata, e.g. `arcsinh` or `calibrated:x=0.1,y_min=15.68`.
    pub fn tag(&self) -> String {
        let base = match &self.kind {
            TransformKind::Identity => "identity".to_string(),
            TransformKind::Log => "log".to_string(),
            TransformKind::Log1p => "log1p".to_string(),
            TransformKind::Arcsinh => "arcsinh".to_string(),
            TransformKind::LogC { c } => format!("logc:c={c}"),
            TransformKind::CalibratedLog { x, y_min } => {
                format!("calibrated:x={x},y_min={y_min}")
            }
            TransformKind::IndicatorPositive => "indicator".to_string(),
            TransformKind::Threshold { threshold } => format!("threshold:y={threshold}"),
            TransformKind::Rank { .. } => "rank".to_string(),
        };
        if self.scale == 1.0 {
            base
        } else {
            format!("{base}@a={}", self.scale)
        }
    }

    /// Evaluate `m(scale * y)` for a single non-negative `y`.
    pub fn apply(&self, y: f64) -> Result<f64> {
        if !y.is_finite() || y < 0.0 {
            return Err(Error::NonFiniteInput);
        }
        let v = self.scale * y;
        match &self.kind {
            TransformKind::Identity => Ok(v),
            TransformKind::Log => {
                if v <= 0.0 {
                    Err(Error::DomainError { transform: "log", value: y })
                } else {
                    Ok(v.ln())
                }
            }
            TransformKind::Log1p => Ok(v.ln_1p()),
            TransformKind::Arcsinh => Ok(arcsinh(v)),
            TransformKind::LogC { c } => Ok((c + v).ln()),
            TransformKind::CalibratedLog { x, y_min } => {
                if v == 0.0 {
                    Ok(-x)
                } else {
                    let floor = y_min * (-x).exp();
                    if v < floor {
                        Err(Error::MonotonicityViolation { value: v, threshold: floor })
                    } else {
                        Ok((v / y_min).ln())
                    }
                }
            }
            TransformKind::IndicatorPositive => Ok(if v > 0.0 { 1.0 } else { 0.0 }),
            TransformKind::Threshold { threshold } => {
                Ok(if v >= *threshold { 1.0 } else { 0.0 })
            }
            TransformKind::Rank { reference } => {
                // Right-continuous ECDF: ties count as <=.
                Ok(count_le(reference, v) as f64 / reference.len() as f64)
            }
        }
    }

    /// Elementwise [`Transform::apply`] over the outcome column.
    pub fn transform_column(&self, data: &Dataset) -> Result<Vec<f64>> {
        data.outcome()
            .iter()
            .enumerate()
            .map(|(row, &y)| {
                self.apply(y).map_err(|e| Error::TransformAtRow { row, source: Box::new(e) })
            })
            .collect()
    }
}

/// `ln(y + sqrt(1+y^2))` with an overflow-safe branch for large arguments.
fn arcsinh(y: f64) -> f64 {
    if y > ARCSINH_LARGE {
        std::f64::consts::LN_2 + y.ln()
    } else {
        (y + (1.0 + y * y).sqrt()).ln()
    }
}

/// Number of elements of the sorted slice `<= v`.
fn count_le(sorted: &[f64], v: f64) -> usize {
    sorted.partition_point(|&r| r <= v)
}

/// Parse a transform named in CLI config, e.g. `arcsinh`, `logc:c=0.5`,
/// `calibrated:x=0.1`, `threshold:y=50`, `rank`.
///
/// `calibrated` normalizes by the minimum positive outcome of `data`, and
/// `rank` uses the pooled control outcomes as reference, so both need the
/// dataset at parse time.
pub fn from_spec(spec: &str, data: Option<&Dataset>) -> Result<Transform> {
    let (head, args) = match spec.split_once(':') {
        Some((h, a)) => (h, Some(a)),
        None => (spec, None),
    };
    let arg = |key: &str| -> Result<f64> {
        let args = args.ok_or_else(|| Error::BadTransformSpec(spec.to_string()))?;
        for pair in args.split(',') {
            if let Some((k, v)) = pair.split_once('=') {
                if k == key {
                    return v
                        .parse::<f64>()
                        .map_err(|_| Error::BadTransformSpec(spec.to_string()));
                }
            }
        }
        Err(Error::BadTransformSpec(spec.to_string()))
    };
    match head {
        "identity" => Ok(Transform::identity()),
        "log" => Ok(Transform::log()),
        "log1p" => Ok(Transform::log1p()),
        "arcsinh" => Ok(Transform::arcsinh()),
        "indicator" => Ok(Transform::indicator_positive()),
        "logc" => Transform::log_c(arg("c")?),
        "threshold" => Transform::threshold(arg("y")?),
        "calibrated" => {
            let data = data.ok_or_else(|| {
                Error::BadTransformSpec("calibrated transform needs data for y_min".into())
            })?;
            let y_min = data.min_positive_outcome().ok_or(Error::NoPositiveOutcomes {
                arm: "pooled",
            })?;
            Transform::calibrated(arg("x")?, y_min)
        }
        "rank" => {
            let data = data.ok_or_else(|| {
                Error::BadTransformSpec("rank transform needs data for the reference".into())
            })?;
            let (_, control) = data.arms();
            let reference: Vec<f64> = control.iter().map(|&i| data.outcome()[i]).collect();
            Transform::rank(reference)
        }
        _ => Err(Error::BadTransformSpec(spec.to_string())),
    }
}
