//! Poisson quasi-maximum likelihood and derived percentage effects.
//!
//! Fits exponential-mean models `E[y|x] = exp(x'b)` by iteratively
//! reweighted least squares and reports the sandwich covariance. The
//! exponential mean needs no distributional assumption, which is what makes
//! `exp(b_1) - 1` a consistent estimate of the ATE in levels as a share of
//! the control mean. The 2x2 difference-in-differences variant estimates the
//! same object for the treated under a ratio version of parallel trends, and
//! the event-study variant exponentiates leads and lags.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::estimate::{resolve_vcov, SeSpec};
use crate::inference::delta_exp_minus_one;
use crate::regression::{DesignMatrix, Vcov};

const MAX_ITER: usize = 100;
/// IRLS stops when the relative deviance change drops below this...
const DEVIANCE_TOL: f64 = 1e-10;
/// ...or the score sup-norm falls below `SCORE_TOL * n`.
const SCORE_TOL: f64 = 1e-8;
/// Any |coefficient| beyond this during iteration means a regressor
/// perfectly predicts zero cells and the MLE diverges.
const SEPARATION_BOUND: f64 = 30.0;
const INTERCEPT_EPS: f64 = 1e-8;

/// Converged IRLS fit.
#[derive(Debug, Clone)]
pub struct PoissonFit {
    pub coefficients: Vec<f64>,
    pub vcov: DMatrix<f64>,
    pub se: Vec<f64>,
    /// Deviance after each iteration (non-increasing).
    pub deviance_trace: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub n: usize,
    pub cluster_count: Option<usize>,
}

impl PoissonFit {
    pub fn coef(&self, j: usize) -> f64 {
        self.coefficients[j]
    }
}

/// `exp(b_j) - 1` with its delta-method standard error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropEffect {
    pub value: f64,
    pub se: f64,
    pub coefficient_index: usize,
}

impl PropEffect {
    fn from_fit(fit: &PoissonFit, j: usize) -> Self {
        let (value, se) = delta_exp_minus_one(fit.coef(j), fit.se[j]);
        PropEffect {
            value,
            se,
            coefficient_index: j,
        }
    }
}

fn deviance(y: &[f64], mu: &DVector<f64>) -> f64 {
    let mut d = 0.0;
    for (i, &yi) in y.iter().enumerate() {
        let mi = mu[i];
        if yi > 0.0 {
            d += 2.0 * (yi * (yi / mi).ln() - (yi - mi));
        } else {
            d += 2.0 * mi;
        }
    }
    d
}

/// Fit `E[y|x] = exp(x'b)` by IRLS with step halving, then attach the
/// requested sandwich covariance.
pub fn poisson_fit(x: &DesignMatrix, y: &[f64], vcov: &Vcov) -> Result<PoissonFit> {
    let n = x.n();
    let j = x.j();
    if y.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "y has {} rows, design {n}",
            y.len()
        )));
    }
    for (row, &yi) in y.iter().enumerate() {
        if !yi.is_finite() || yi < 0.0 {
            return Err(Error::NegativeOutcome {
                column: "outcome".into(),
                row,
                value: yi,
            });
        }
    }
    let ybar = y.iter().sum::<f64>() / n as f64;
    if ybar == 0.0 {
        return Err(Error::AllZeroOutcome);
    }
    let svd = x.matrix().clone().svd(false, false);
    let smax = svd.singular_values.iter().cloned().fold(0.0f64, f64::max);
    let smin = svd
        .singular_values
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    if n < j || smin < 1e-10 * smax {
        return Err(Error::RankDeficient);
    }

    let xm = x.matrix();
    let mut beta = DVector::zeros(j);
    beta[0] = (ybar + INTERCEPT_EPS).ln();

    let mut mu = (xm * &beta).map(f64::exp);
    let mut dev = deviance(y, &mu);
    let mut trace = vec![dev];
    let mut converged = false;
    let mut iterations = 0;

    for iter in 0..MAX_ITER {
        iterations = iter + 1;
        let eta = xm * &beta;
        mu = eta.map(f64::exp);

        // weighted least squares on the working response
        // z_i = eta_i + (y_i - mu_i)/mu_i, weights mu_i
        let mut wx = xm.clone();
        let mut wz = DVector::zeros(n);
        for i in 0..n {
            let sw = mu[i].sqrt();
            for k in 0..j {
                wx[(i, k)] *= sw;
            }
            wz[i] = sw * (eta[i] + (y[i] - mu[i]) / mu[i]);
        }
        let qr = wx.qr();
        let qtz = qr.q().transpose() * &wz;
        let proposal = qr
            .r()
            .solve_upper_triangular(&qtz)
            .ok_or(Error::RankDeficient)?;

        // step-halve toward the previous iterate until the deviance stops
        // increasing, so the trace is non-increasing by construction
        let mut candidate = proposal;
        let mut new_dev = deviance(y, &(xm * &candidate).map(f64::exp));
        let mut halvings = 0;
        while !new_dev.is_finite() || new_dev > dev * (1.0 + 1e-12) + 1e-12 {
            halvings += 1;
            if halvings > 30 {
                break;
            }
            candidate = (&beta + &candidate) * 0.5;
            new_dev = deviance(y, &(xm * &candidate).map(f64::exp));
        }
        beta = candidate;
        if beta.iter().any(|b| b.abs() > SEPARATION_BOUND) {
            return Err(Error::Separation);
        }

        let rel_change = (dev - new_dev).abs() / (dev.abs() + 1e-300);
        dev = new_dev;
        trace.push(dev);

        mu = (xm * &beta).map(f64::exp);
        let mut score_sup = 0.0f64;
        for k in 0..j {
            let mut s = 0.0;
            for i in 0..n {
                s += xm[(i, k)] * (y[i] - mu[i]);
            }
            score_sup = score_sup.max(s.abs());
        }
        if rel_change < DEVIANCE_TOL || score_sup < SCORE_TOL * n as f64 {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NoConvergence(MAX_ITER));
    }
    if mu.iter().any(|m| !m.is_finite()) {
        return Err(Error::Separation);
    }

    // bread = (X'WX)^{-1} at the converged weights; meat from the scores
    // x_i (y_i - mu_i)
    let mut xwx = DMatrix::<f64>::zeros(j, j);
    for i in 0..n {
        for a in 0..j {
            for b in 0..j {
                xwx[(a, b)] += xm[(i, a)] * xm[(i, b)] * mu[i];
            }
        }
    }
    let bread = xwx.try_inverse().ok_or(Error::RankDeficient)?;
    let mut scores = xm.clone();
    for i in 0..n {
        for k in 0..j {
            scores[(i, k)] *= y[i] - mu[i];
        }
    }
    let (vcov_m, cluster_count) = poisson_sandwich(&bread, &scores, vcov, n, j)?;
    let se: Vec<f64> = (0..j).map(|k| vcov_m[(k, k)].max(0.0).sqrt()).collect();

    Ok(PoissonFit {
        coefficients: beta.iter().copied().collect(),
        vcov: vcov_m,
        se,
        deviance_trace: trace,
        converged,
        iterations,
        n,
        cluster_count,
    })
}

fn poisson_sandwich(
    bread: &DMatrix<f64>,
    scores: &DMatrix<f64>,
    vcov: &Vcov,
    n: usize,
    j: usize,
) -> Result<(DMatrix<f64>, Option<usize>)> {
    match vcov {
        Vcov::Hc0 { small_sample } => {
            let meat = scores.transpose() * scores;
            let mut v = bread * meat * bread.transpose();
            if *small_sample && n > j {
                v *= n as f64 / (n - j) as f64;
            }
            Ok((v, None))
        }
        Vcov::Cluster { ids, small_sample } => {
            if ids.len() != n {
                return Err(Error::DimensionMismatch(
                    "cluster ids must cover all rows".into(),
                ));
            }
            let g = {
                let mut v = ids.to_vec();
                v.sort_unstable();
                v.dedup();
                v.len()
            };
            if g < 2 {
                return Err(Error::TooFewClusters(g));
            }
            let gmax = ids.iter().copied().max().unwrap() + 1;
            let mut sums = DMatrix::<f64>::zeros(gmax, j);
            for (i, &gid) in ids.iter().enumerate() {
                for k in 0..j {
                    sums[(gid, k)] += scores[(i, k)];
                }
            }
            let meat = sums.transpose() * sums;
            let mut v = bread * meat * bread.transpose();
            if *small_sample && g > 1 && n > j {
                v *= (g as f64 / (g - 1) as f64) * ((n - 1) as f64 / (n - j) as f64);
            }
            Ok((v, Some(g)))
        }
    }
}

/// `exp(b_1) - 1` from the exponential-mean model of outcome on treatment,
/// optionally with the dataset's covariates.
///
/// Without covariates this equals `mean(y|D=1)/mean(y|D=0) - 1` because the
/// saturated first-order conditions force the cell means.
pub fn ate_pct_poisson(data: &Dataset, with_covariates: bool, se: SeSpec) -> Result<PropEffect> {
    data.require_binary_treatment()?;
    let vcov = resolve_vcov(data, se)?;
    let mut cols: Vec<&[f64]> = vec![data.treatment()];
    if with_covariates {
        for c in data.covariates() {
            cols.push(c);
        }
    }
    let x = DesignMatrix::with_constant(data.row_count(), &cols)?;
    let fit = poisson_fit(&x, data.outcome(), &vcov)?;
    Ok(PropEffect::from_fit(&fit, 1))
}

fn did_cells(data: &Dataset) -> Result<[(usize, f64); 4]> {
    let group = data.require_group()?;
    let post = data.require_post()?;
    let mut count = [0usize; 4];
    let mut sum = [0.0f64; 4];
    for i in 0..data.row_count() {
        let cell = (group[i] as usize) * 2 + post[i] as usize;
        count[cell] += 1;
        sum[cell] += data.outcome()[i];
    }
    let mut out = [(0usize, 0.0f64); 4];
    for cell in 0..4 {
        let (g, p) = ((cell / 2) as u8, (cell % 2) as u8);
        if count[cell] == 0 {
            return Err(Error::EmptyCell { group: g, post: p });
        }
        let mean = sum[cell] / count[cell] as f64;
        if mean <= 0.0 {
            return Err(Error::ZeroCellMean { group: g, post: p });
        }
        out[cell] = (count[cell], mean);
    }
    Ok(out)
}

/// ATT as a percentage via the 2x2 interacted exponential-mean model.
///
/// Without covariates the estimate equals the ratio of ratios of cell means,
/// `(m11/m10)/(m01/m00) - 1`.
pub fn att_pct_did(data: &Dataset, with_covariates: bool, se: SeSpec) -> Result<PropEffect> {
    let group = data.require_group()?;
    let post = data.require_post()?;
    did_cells(data)?;
    let vcov = resolve_vcov(data, se)?;
    let n = data.row_count();
    let interaction: Vec<f64> = (0..n).map(|i| group[i] * post[i]).collect();
    let mut cols: Vec<&[f64]> = vec![&interaction, group, post];
    if with_covariates {
        for c in data.covariates() {
            cols.push(c);
        }
    }
    let x = DesignMatrix::with_constant(n, &cols)?;
    let fit = poisson_fit(&x, data.outcome(), &vcov)?;
    Ok(PropEffect::from_fit(&fit, 1))
}

/// One exponentiated lead/lag per relative period.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EventStudyEffect {
    pub relative_time: i64,
    pub effect: PropEffect,
}

/// Poisson event study: period fixed effects, a group main effect, and
/// group x period interactions for every relative time except the reference
/// (conventionally -1). Each interaction is reported as `exp(b_r) - 1`.
pub fn poisson_event_study(
    data: &Dataset,
    relative_time: &[i64],
    reference_period: i64,
    se: SeSpec,
) -> Result<Vec<EventStudyEffect>> {
    let group = data.require_group()?;
    let n = data.row_count();
    if relative_time.len() != n {
        return Err(Error::DimensionMismatch(
            "relative_time must cover all rows".into(),
        ));
    }
    let vcov = resolve_vcov(data, se)?;

    let mut periods: Vec<i64> = relative_time.to_vec();
    periods.sort_unstable();
    periods.dedup();
    if !periods.contains(&reference_period) {
        return Err(Error::CollinearPeriods(format!(
            "reference period {reference_period} not observed"
        )));
    }
    if periods.len() < 2 {
        return Err(Error::CollinearPeriods("only one period observed".into()));
    }

    // One dummy per period (these span the intercept), the group main
    // effect, then one interaction per non-reference period.
    let interactions: Vec<i64> = periods
        .iter()
        .copied()
        .filter(|&r| r != reference_period)
        .collect();
    let j = periods.len() + 1 + interactions.len();
    let mut m = DMatrix::<f64>::zeros(n, j);
    for i in 0..n {
        let p_ix = periods.binary_search(&relative_time[i]).unwrap();
        m[(i, p_ix)] = 1.0;
        m[(i, periods.len())] = group[i];
        if group[i] == 1.0 {
            if let Ok(r_ix) = interactions.binary_search(&relative_time[i]) {
                m[(i, periods.len() + 1 + r_ix)] = 1.0;
            }
        }
    }
    let x = DesignMatrix::from_matrix(m);
    let fit = poisson_fit(&x, data.outcome(), &vcov).map_err(|e| match e {
        Error::RankDeficient => {
            Error::CollinearPeriods("period/group structure is collinear".into())
        }
        other => other,
    })?;

    Ok(interactions
        .iter()
        .enumerate()
        .map(|(k, &r)| EventStudyEffect {
            relative_time: r,
            effect: PropEffect::from_fit(&fit, periods.len() + 1 + k),
        })
        .collect())
}
