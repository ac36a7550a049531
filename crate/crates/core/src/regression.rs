//! OLS and two-stage least squares with sandwich variance.
//!
//! Coefficients come from a QR factorization rather than normal equations:
//! the large-scale regressions run by the sensitivity engine are
//! ill-conditioned by construction. Variance is the HC0 sandwich or the
//! cluster sandwich (score outer products summed within clusters); the
//! small-sample corrections are off by default and available as flags.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative singular-value tolerance for rank detection.
const RANK_TOL: f64 = 1e-10;

/// First-stage F below this (|t| < 2) flags a weak instrument.
const WEAK_F: f64 = 4.0;

/// An n x J design with a leading constant column.
#[derive(Debug, Clone)]
pub struct DesignMatrix {
    m: DMatrix<f64>,
}

impl DesignMatrix {
    /// Build `[1, cols...]` from column slices.
    pub fn with_constant(n: usize, cols: &[&[f64]]) -> Result<Self> {
        for col in cols {
            if col.len() != n {
                return Err(Error::DimensionMismatch(format!(
                    "design column has {} rows, expected {n}",
                    col.len()
                )));
            }
        }
        let j = cols.len() + 1;
        let mut m = DMatrix::zeros(n, j);
        for i in 0..n {
            m[(i, 0)] = 1.0;
            for (k, col) in cols.iter().enumerate() {
                m[(i, k + 1)] = col[i];
            }
        }
        Ok(DesignMatrix { m })
    }

    /// Wrap a raw matrix (the event-study design builds its own dummies).
    pub fn from_matrix(m: DMatrix<f64>) -> Self {
        DesignMatrix { m }
    }

    pub fn n(&self) -> usize {
        self.m.nrows()
    }

    pub fn j(&self) -> usize {
        self.m.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    /// Append one more column on the right.
    pub fn append_column(&self, col: &[f64]) -> Result<Self> {
        if col.len() != self.n() {
            return Err(Error::DimensionMismatch("appended column length".into()));
        }
        let mut m = self.m.clone().insert_column(self.j(), 0.0);
        for i in 0..self.n() {
            m[(i, self.j())] = col[i];
        }
        Ok(DesignMatrix { m })
    }

    fn check_rank(&self) -> Result<()> {
        check_matrix_rank(&self.m)
    }
}

fn check_matrix_rank(m: &DMatrix<f64>) -> Result<()> {
    let svd = m.clone().svd(false, false);
    let sv = &svd.singular_values;
    let max = sv.iter().cloned().fold(0.0f64, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if m.nrows() < m.ncols() || max == 0.0 || min < RANK_TOL * max {
        return Err(Error::RankDeficient);
    }
    Ok(())
}

/// Requested variance estimator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Vcov<'a> {
    /// Heteroskedasticity-robust, no small-sample correction by default.
    Hc0 { small_sample: bool },
    /// Cluster-robust; `small_sample` applies G/(G-1) * (n-1)/(n-J).
    Cluster {
        ids: &'a [usize],
        small_sample: bool,
    },
}

impl<'a> Vcov<'a> {
    pub fn hc0() -> Self {
        Vcov::Hc0 { small_sample: false }
    }

    pub fn cluster(ids: &'a [usize]) -> Self {
        Vcov::Cluster { ids, small_sample: false }
    }
}

/// Regression output: coefficients, sandwich covariance, and derived stats.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub coefficients: Vec<f64>,
    pub vcov: DMatrix<f64>,
    pub residuals: Vec<f64>,
    pub se: Vec<f64>,
    pub tstats: Vec<f64>,
    pub n: usize,
    pub j: usize,
    pub cluster_count: Option<usize>,
    /// First-stage F statistic (TSLS only).
    pub first_stage_f: Option<f64>,
}

impl FitResult {
    pub fn coef(&self, j: usize) -> f64 {
        self.coefficients[j]
    }

    /// First-stage |t| < 2, the usual screening rule. TSLS only.
    pub fn weak_first_stage(&self) -> bool {
        self.first_stage_f.is_some_and(|f| f < WEAK_F)
    }
}

fn distinct_clusters(ids: &[usize]) -> usize {
    let mut v = ids.to_vec();
    v.sort_unstable();
    v.dedup();
    v.len()
}

/// `sum_i score_i score_i'` where scores are summed within clusters first
/// (HC0 is the special case of singleton clusters).
fn meat_matrix(scores: &DMatrix<f64>, cluster: Option<&[usize]>) -> DMatrix<f64> {
    let j = scores.ncols();
    match cluster {
        None => scores.transpose() * scores,
        Some(ids) => {
            let g = ids.iter().copied().max().map_or(0, |m| m + 1);
            let mut sums = DMatrix::<f64>::zeros(g, j);
            for (i, &gid) in ids.iter().enumerate() {
                for k in 0..j {
                    sums[(gid, k)] += scores[(i, k)];
                }
            }
            sums.transpose() * sums
        }
    }
}

fn sandwich(
    bread: &DMatrix<f64>,
    scores: &DMatrix<f64>,
    vcov: &Vcov,
    n: usize,
    j: usize,
) -> Result<(DMatrix<f64>, Option<usize>)> {
    match vcov {
        Vcov::Hc0 { small_sample } => {
            let meat = meat_matrix(scores, None);
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
            let g = distinct_clusters(ids);
            if g < 2 {
                return Err(Error::TooFewClusters(g));
            }
            let meat = meat_matrix(scores, Some(ids));
            let mut v = bread * meat * bread.transpose();
            if *small_sample && g > 1 && n > j {
                v *= (g as f64 / (g - 1) as f64) * ((n - 1) as f64 / (n - j) as f64);
            }
            Ok((v, Some(g)))
        }
    }
}

fn finish(
    coefficients: DVector<f64>,
    vcov_m: DMatrix<f64>,
    residuals: Vec<f64>,
    n: usize,
    j: usize,
    cluster_count: Option<usize>,
    first_stage_f: Option<f64>,
) -> FitResult {
    let se: Vec<f64> = (0..j).map(|k| vcov_m[(k, k)].max(0.0).sqrt()).collect();
    let tstats: Vec<f64> = (0..j)
        .map(|k| {
            if se[k] > 0.0 {
                coefficients[k] / se[k]
            } else {
                f64::NAN
            }
        })
        .collect();
    FitResult {
        coefficients: coefficients.iter().copied().collect(),
        vcov: vcov_m,
        residuals,
        se,
        tstats,
        n,
        j,
        cluster_count,
        first_stage_f,
    }
}

/// Ordinary least squares of `y` on `x` with the requested sandwich.
pub fn ols_fit(x: &DesignMatrix, y: &[f64], vcov: &Vcov) -> Result<FitResult> {
    let n = x.n();
    let j = x.j();
    if y.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "y has {} rows, design {n}",
            y.len()
        )));
    }
    x.check_rank()?;

    let yv = DVector::from_column_slice(y);
    let qr = x.m.clone().qr();
    let q = qr.q();
    let r = qr.r();
    let qty = q.transpose() * &yv;
    let beta = r
        .solve_upper_triangular(&qty)
        .ok_or(Error::RankDeficient)?;

    let fitted = &x.m * &beta;
    let residuals: Vec<f64> = (0..n).map(|i| y[i] - fitted[i]).collect();

    // (X'X)^{-1} = R^{-1} R^{-T}
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(j, j))
        .ok_or(Error::RankDeficient)?;
    let bread = &r_inv * r_inv.transpose();

    // score_i = x_i * e_i
    let mut scores = x.m.clone();
    for i in 0..n {
        for k in 0..j {
            scores[(i, k)] *= residuals[i];
        }
    }
    let (vcov_m, cluster_count) = sandwich(&bread, &scores, vcov, n, j)?;
    Ok(finish(beta, vcov_m, residuals, n, j, cluster_count, None))
}

/// Just-identified two-stage least squares: one endogenous regressor `d`
/// instrumented by `z`, with exogenous columns `x_exog` (constant first).
///
/// The endogenous coefficient is the last element of `coefficients`. The
/// first-stage F statistic is reported; a weak first stage is a warning
/// (`FitResult::weak_first_stage`), not a failure.
pub fn tsls_fit(
    x_exog: &DesignMatrix,
    d: &[f64],
    z: &[f64],
    y: &[f64],
    vcov: &Vcov,
) -> Result<FitResult> {
    let n = x_exog.n();
    if d.len() != n || z.len() != n || y.len() != n {
        return Err(Error::DimensionMismatch(
            "d, z, y must match design rows".into(),
        ));
    }
    let w = x_exog.append_column(d)?; // regressors
    let zm = x_exog.append_column(z)?; // instruments
    let j = w.j();

    // First stage: d on instruments, HC0 t-stat on the instrument column.
    let first_stage = ols_fit(&zm, d, &Vcov::hc0())?;
    let fs_t = first_stage.tstats[j - 1];
    let first_stage_f = Some(fs_t * fs_t);

    let a = zm.matrix().transpose() * w.matrix();
    check_matrix_rank(&a)?;
    let a_lu = a.clone().lu();
    let zty = zm.matrix().transpose() * DVector::from_column_slice(y);
    let beta = a_lu.solve(&zty).ok_or(Error::RankDeficient)?;

    let fitted = w.matrix() * &beta;
    let residuals: Vec<f64> = (0..n).map(|i| y[i] - fitted[i]).collect();

    let a_inv = a_lu.try_inverse().ok_or(Error::RankDeficient)?;
    // score_i = z_i * e_i
    let mut scores = zm.matrix().clone();
    for i in 0..n {
        for k in 0..j {
            scores[(i, k)] *= residuals[i];
        }
    }
    let (vcov_m, cluster_count) = match vcov {
        Vcov::Hc0 { small_sample } => {
            let meat = meat_matrix(&scores, None);
            let mut v = &a_inv * meat * a_inv.transpose();
            if *small_sample && n > j {
                v *= n as f64 / (n - j) as f64;
            }
            (v, None)
        }
        Vcov::Cluster { ids, small_sample } => {
            if ids.len() != n {
                return Err(Error::DimensionMismatch(
                    "cluster ids must cover all rows".into(),
                ));
            }
            let g = distinct_clusters(ids);
            if g < 2 {
                return Err(Error::TooFewClusters(g));
            }
            let meat = meat_matrix(&scores, Some(ids));
            let mut v = &a_inv * meat * a_inv.transpose();
            if *small_sample && g > 1 && n > j {
                v *= (g as f64 / (g - 1) as f64) * ((n - 1) as f64 / (n - j) as f64);
            }
            (v, Some(g))
        }
    };
    Ok(finish(
        beta,
        vcov_m,
        residuals,
        n,
        j,
        cluster_count,
        first_stage_f,
    ))
}

/// The fixed weight vector `w` such that the TSLS coefficient on the
/// endogenous regressor equals `w . v` for any outcome vector `v`.
///
/// Factoring the solve this way lets callers sweep many outcomes (the
/// complier-CDF grid) without refactorizing.
pub fn tsls_endog_weights(x_exog: &DesignMatrix, d: &[f64], z: &[f64]) -> Result<Vec<f64>> {
    let n = x_exog.n();
    if d.len() != n || z.len() != n {
        return Err(Error::DimensionMismatch("d, z must match design rows".into()));
    }
    let w = x_exog.append_column(d)?;
    let zm = x_exog.append_column(z)?;
    let j = w.j();
    let a = zm.matrix().transpose() * w.matrix();
    check_matrix_rank(&a)?;
    // u solves A' u = e_last; then coef = u' Z' v for any outcome v.
    let mut e_last = DVector::zeros(j);
    e_last[j - 1] = 1.0;
    let u = a
        .transpose()
        .lu()
        .solve(&e_last)
        .ok_or(Error::RankDeficient)?;
    let wvec = zm.matrix() * u;
    Ok(wvec.iter().copied().collect())
}
