//! Scale-sensitivity diagnostics for transformed-outcome ATEs.
//!
//! The central objects are `theta(a)`, the ATE of `m(a*Y)` at unit scale
//! `a`, and the extensive-margin slope `gamma` (the ATE of `1[Y>0]`) that
//! governs how `theta(a)` moves: for large `a` the curve grows like
//! `gamma * log(a)`. The module evaluates curves over scale grids, compares
//! t-statistics against the extensive-margin t-statistic, and inverts
//! `|theta(a)|` to hit any target magnitude by bracketing and bisection.

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::estimate::{resolve_vcov, EstimateResult, SeSpec};
use crate::exec;
use crate::regression::{ols_fit, DesignMatrix};
use crate::transforms::Transform;

/// Treat a sample extensive margin this small as exactly zero.
const GAMMA_ZERO_TOL: f64 = 1e-12;
/// Absolute tolerance on `||theta(a)| - target|` for the scale search.
const TARGET_TOL: f64 = 1e-6;
const MAX_BISECTIONS: usize = 200;
/// Bracket expansion limits for the scale search.
const SCALE_FLOOR: f64 = 1e-300;
const SCALE_CEIL: f64 = 1e300;

/// Regression engine for ATE estimation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Engine {
    /// Outcome on `[1, D]` (saturated difference in means).
    DiffMeans,
    /// Outcome on `[1, D, covariates...]`.
    WithCovariates,
}

fn design(data: &Dataset, engine: Engine) -> Result<DesignMatrix> {
    let mut cols: Vec<&[f64]> = vec![data.treatment()];
    if engine == Engine::WithCovariates {
        for c in data.covariates() {
            cols.push(c);
        }
    }
    DesignMatrix::with_constant(data.row_count(), &cols)
}

fn ate_of_column(
    data: &Dataset,
    column: &[f64],
    engine: Engine,
    se: SeSpec,
    tag: &str,
    transform_tag: Option<String>,
) -> Result<EstimateResult> {
    data.require_binary_treatment()?;
    let x = design(data, engine)?;
    let vcov = resolve_vcov(data, se)?;
    let fit = ols_fit(&x, column, &vcov)?;
    let mut out = EstimateResult::new(fit.coef(1), data.row_count(), tag).with_se(fit.se[1]);
    out.transform = transform_tag;
    Ok(out)
}

/// ATE of `m(a * Y)` via the chosen regression engine.
pub fn theta_at(
    data: &Dataset,
    transform: &Transform,
    a: f64,
    engine: Engine,
    se: SeSpec,
) -> Result<EstimateResult> {
    let t = transform.with_scale(a)?;
    let column = t.transform_column(data)?;
    ate_of_column(data, &column, engine, se, "theta_at", Some(t.tag()))
}

/// ATE of `1[Y > 0]` (the extensive-margin effect) with the same engine.
pub fn extensive_margin(data: &Dataset, engine: Engine, se: SeSpec) -> Result<EstimateResult> {
    let column = Transform::indicator_positive().transform_column(data)?;
    ate_of_column(data, &column, engine, se, "extensive_margin", Some("indicator".into()))
}

/// `theta(a)` over a scale grid, with the extensive-margin anchor and the
/// `gamma * log(a)` approximation column.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SensitivityCurve {
    pub grid: Vec<f64>,
    pub theta: Vec<f64>,
    pub se: Vec<f64>,
    pub tstat: Vec<f64>,
    /// `theta(a0) + gamma * log(a / a0)`, anchored at the smallest grid
    /// point `>= 1` (the slope is the theory; the intercept is a choice).
    pub approx: Vec<f64>,
    pub extensive_margin: EstimateResult,
    pub transform_kind: String,
}

impl SensitivityCurve {
    /// CSV with columns `a,theta,se,tstat,approx`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("a,theta,se,tstat,approx\n");
        for i in 0..self.grid.len() {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                self.grid[i], self.theta[i], self.se[i], self.tstat[i], self.approx[i]
            ));
        }
        out
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("curve serializes")
    }
}

/// Default grid: 25 log-spaced points spanning both limits at desk scale.
pub fn default_grid() -> Vec<f64> {
    log_spaced_grid(1e-4, 1e8, 25)
}

/// `points` log-spaced values over `[lo, hi]`, inclusive at both ends.
pub fn log_spaced_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    assert!(lo > 0.0 && hi > lo && points >= 2);
    let (llo, lhi) = (lo.ln(), hi.ln());
    (0..points)
        .map(|i| (llo + (lhi - llo) * i as f64 / (points - 1) as f64).exp())
        .collect()
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::BadGrid("empty grid".into()));
    }
    for w in grid.windows(2) {
        if w[1] <= w[0] {
            return Err(Error::BadGrid("grid must be strictly increasing".into()));
        }
    }
    if grid[0] <= 0.0 || !grid.iter().all(|a| a.is_finite()) {
        return Err(Error::BadGrid("grid must be positive and finite".into()));
    }
    Ok(())
}

/// Evaluate the sensitivity curve. Grid points run in parallel; output
/// order always matches grid order.
pub fn sensitivity_curve(
    data: &Dataset,
    transform: &Transform,
    grid: &[f64],
    engine: Engine,
    se: SeSpec,
) -> Result<SensitivityCurve> {
    check_grid(grid)?;
    let margin = extensive_margin(data, engine, se)?;
    let gamma = margin.value;

    let results: Vec<Result<EstimateResult>> =
        exec::map_ordered(grid, |&a| theta_at(data, transform, a, engine, se));
    let mut theta = Vec::with_capacity(grid.len());
    let mut ses = Vec::with_capacity(grid.len());
    let mut tstat = Vec::with_capacity(grid.len());
    for r in results {
        let est = r?;
        theta.push(est.value);
        ses.push(est.se.unwrap_or(f64::NAN));
        tstat.push(est.tstat.unwrap_or(f64::NAN));
    }

    // anchor the approximation at the smallest grid point >= 1, falling
    // back to the last point for all-sub-unit grids
    let anchor_ix = grid.iter().position(|&a| a >= 1.0).unwrap_or(grid.len() - 1);
    let approx: Vec<f64> = grid
        .iter()
        .map(|&a| theta[anchor_ix] + gamma * (a / grid[anchor_ix]).ln())
        .collect();

    Ok(SensitivityCurve {
        grid: grid.to_vec(),
        theta,
        se: ses,
        tstat,
        approx,
        extensive_margin: margin,
        transform_kind: transform.tag(),
    })
}

/// Result of the target-scale search.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScaleSearch {
    pub scale: f64,
    pub theta: f64,
    pub bisection_steps: usize,
}

/// Find `a` with `||theta(a)| - target| < 1e-6` by geometric bracketing and
/// bisection in log scale.
///
/// Requires a non-zero sample extensive margin; existence (not uniqueness)
/// is what continuity delivers, so any crossing is a valid answer.
pub fn find_scale_for_target(
    data: &Dataset,
    transform: &Transform,
    target: f64,
    engine: Engine,
    se: SeSpec,
) -> Result<ScaleSearch> {
    if !(target > 0.0 && target.is_finite()) {
        return Err(Error::BadGrid(format!("target must be positive, got {target}")));
    }
    let gamma = extensive_margin(data, engine, se)?.value;
    if gamma.abs() < GAMMA_ZERO_TOL {
        return Err(Error::NoExtensiveMargin);
    }

    let eval = |a: f64| -> Result<f64> { Ok(theta_at(data, transform, a, engine, se)?.value) };

    // expand geometrically until |theta| straddles the target
    let mut a = 1.0f64;
    let mut v = eval(a)?.abs();
    let (mut lo, mut hi);
    if v < target {
        loop {
            let next = a * 10.0;
            if next > SCALE_CEIL {
                return Err(Error::BracketNotFound);
            }
            let nv = eval(next)?.abs();
            if nv >= target {
                lo = a;
                hi = next;
                break;
            }
            a = next;
        }
    } else {
        loop {
            let next = a / 10.0;
            if next < SCALE_FLOOR {
                return Err(Error::BracketNotFound);
            }
            let nv = eval(next)?.abs();
            if nv <= target {
                lo = next;
                hi = a;
                break;
            }
            a = next;
            v = nv;
        }
        let _ = v;
    }

    // bisect in log space; |theta(lo)| <= target <= |theta(hi)| throughout
    let mut steps = 0usize;
    loop {
        let mid = (lo.ln() + hi.ln()) / 2.0;
        let mid = mid.exp();
        let tv = eval(mid)?;
        steps += 1;
        if (tv.abs() - target).abs() < TARGET_TOL {
            return Ok(ScaleSearch {
                scale: mid,
                theta: tv,
                bisection_steps: steps,
            });
        }
        if steps >= MAX_BISECTIONS {
            return Err(Error::BracketNotFound);
        }
        if tv.abs() >= target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
}

/// Side-by-side t-statistics: one per scale, against the extensive-margin
/// t-statistic they converge to.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TstatTable {
    pub rows: Vec<TstatRow>,
    pub extensive_margin_tstat: f64,
    /// Set when the sample extensive margin is exactly zero, in which case
    /// the convergence of t-statistics is not expected.
    pub zero_extensive_margin: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TstatRow {
    pub a: f64,
    pub theta_tstat: f64,
}

/// Per-grid-point t-statistics alongside the extensive-margin t-statistic.
pub fn tstat_table(
    data: &Dataset,
    transform: &Transform,
    grid: &[f64],
    engine: Engine,
    se: SeSpec,
) -> Result<TstatTable> {
    check_grid(grid)?;
    let margin = extensive_margin(data, engine, se)?;
    let results: Vec<Result<EstimateResult>> =
        exec::map_ordered(grid, |&a| theta_at(data, transform, a, engine, se));
    let mut rows = Vec::with_capacity(grid.len());
    for (i, r) in results.into_iter().enumerate() {
        let est = r?;
        rows.push(TstatRow {
            a: grid[i],
            theta_tstat: est.tstat.unwrap_or(f64::NAN),
        });
    }
    Ok(TstatTable {
        rows,
        extensive_margin_tstat: margin.tstat.unwrap_or(f64::NAN),
        zero_extensive_margin: margin.value.abs() < GAMMA_ZERO_TOL,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Two-point DGP: Y(0) = 0 w.p. 1/2 else 1; Y(1) = 0 w.p. 1/4 else 2.
    /// Extensive margin 1/4. Built with exact counts so sample frequencies
    /// equal the population probabilities.
    fn two_point_exact(per_arm: usize) -> Dataset {
        assert_eq!(per_arm % 4, 0);
        let mut y = Vec::new();
        let mut d = Vec::new();
        for i in 0..per_arm {
            // control: half zeros
            y.push(if i % 2 == 0 { 0.0 } else { 1.0 });
            d.push(0.0);
        }
        for i in 0..per_arm {
            // treated: quarter zeros
            y.push(if i % 4 == 0 { 0.0 } else { 2.0 });
            d.push(1.0);
        }
        Dataset::new(y, d).unwrap()
    }

    /// Enumeration oracle for the two-point DGP: theta(a) for a transform
    /// is p1*m(a*v1) - p0*m(a*v0) plus the zero-mass terms.
    fn two_point_theta_oracle(t: &Transform, a: f64) -> f64 {
        let t = t.with_scale(a).unwrap();
        let arm = |p_pos: f64, v: f64| {
            (1.0 - p_pos) * t.apply(0.0).unwrap() + p_pos * t.apply(v).unwrap()
        };
        arm(0.75, 2.0) - arm(0.5, 1.0)
    }

    #[test]
    fn theta_matches_enumeration_oracle_exactly_on_exact_sample() {
        let data = two_point_exact(400);
        for &a in &[0.3f64, 1.0, 100.0, 1e6] {
            let est = theta_at(&data, &Transform::log1p(), a, Engine::DiffMeans, SeSpec::Hc0)
                .unwrap();
            let oracle = two_point_theta_oracle(&Transform::log1p(), a);
            assert_abs_diff_eq!(est.value, oracle, epsilon = 1e-10);
        }
        // frozen value: population theta(1) = .75 ln 3 - .5 ln 2 = 0.47740
        let est = theta_at(&data, &Transform::log1p(), 1.0, Engine::DiffMeans, SeSpec::Hc0)
            .unwrap();
        assert_abs_diff_eq!(est.value, 0.4774, epsilon = 5e-5);
    }

    #[test]
    fn zero_scale_limit() {
        let data = two_point_exact(40);
        for t in [Transform::log1p(), Transform::arcsinh()] {
            let est = theta_at(&data, &t, 1e-12, Engine::DiffMeans, SeSpec::Hc0).unwrap();
            assert!(est.value.abs() < 1e-9, "{}: {}", t.tag(), est.value);
        }
    }

    #[test]
    fn compensation_identity() {
        let data = two_point_exact(40);
        let t = Transform::arcsinh();
        // dyadic factors keep the float product exact, so the identity is
        // bit-for-bit
        for &(k, a) in &[(2.0f64, 4.0f64), (0.5, 8.0), (256.0, 0.25)] {
            let lhs = theta_at(
                &data.rescale_outcome(k).unwrap(),
                &t,
                a,
                Engine::DiffMeans,
                SeSpec::Hc0,
            )
            .unwrap();
            let rhs = theta_at(&data, &t, k * a, Engine::DiffMeans, SeSpec::Hc0).unwrap();
            assert_eq!(lhs.value.to_bits(), rhs.value.to_bits());
        }
        // non-dyadic factors agree to rounding
        for &(k, a) in &[(0.1f64, 0.3f64), (7.3, 11.1)] {
            let lhs = theta_at(
                &data.rescale_outcome(k).unwrap(),
                &t,
                a,
                Engine::DiffMeans,
                SeSpec::Hc0,
            )
            .unwrap();
            let rhs = theta_at(&data, &t, k * a, Engine::DiffMeans, SeSpec::Hc0).unwrap();
            assert_abs_diff_eq!(lhs.value, rhs.value, epsilon = 1e-12);
        }
    }

    #[test]
    fn log1p_at_scale_equals_logc_at_unit_scale() {
        let data = two_point_exact(40);
        for &a in &[0.5f64, 2.0, 100.0, 1e5] {
            let lhs = theta_at(&data, &Transform::log1p(), a, Engine::DiffMeans, SeSpec::Hc0)
                .unwrap();
            let rhs = theta_at(
                &data,
                &Transform::log_c(1.0 / a).unwrap(),
                1.0,
                Engine::DiffMeans,
                SeSpec::Hc0,
            )
            .unwrap();
            assert_abs_diff_eq!(lhs.value, rhs.value, epsilon = 1e-12);
        }
    }

    #[test]
    fn curve_slope_matches_extensive_margin() {
        // population slope of theta(a) against log(a) over large a equals
        // the extensive margin (1/4 here); the sample is exact by design
        let data = two_point_exact(400);
        let grid = [1e4, 1e5, 1e6, 1e7, 1e8];
        let curve = sensitivity_curve(
            &data,
            &Transform::log1p(),
            &grid,
            Engine::DiffMeans,
            SeSpec::Hc0,
        )
        .unwrap();
        let slope = (curve.theta[4] - curve.theta[0]) / (grid[4].ln() - grid[0].ln());
        assert_abs_diff_eq!(slope, 0.25, epsilon = 1e-3);
        assert_abs_diff_eq!(curve.extensive_margin.value, 0.25, epsilon = 1e-12);
    }

    #[test]
    fn strictly_positive_outcomes_flatten_at_large_scale() {
        // outcomes bounded away from zero: theta(a) stabilizes to the ATE
        // in logs once a is large
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 2000;
        let mut y = Vec::new();
        let mut d = Vec::new();
        for i in 0..n {
            let di = (i % 2) as f64;
            y.push(1.0 + rng.gen::<f64>() * 3.0 + di);
            d.push(di);
        }
        let data = Dataset::new(y.clone(), d.clone()).unwrap();
        let grid = [1e6, 1e7];
        let curve = sensitivity_curve(
            &data,
            &Transform::arcsinh(),
            &grid,
            Engine::DiffMeans,
            SeSpec::Hc0,
        )
        .unwrap();
        assert!((curve.theta[1] - curve.theta[0]).abs() < 1e-4);
        // and the level approaches the ATE in logs
        let logs = Transform::log().transform_column(&data).unwrap();
        let x = DesignMatrix::with_constant(n, &[&d]).unwrap();
        let log_ate = ols_fit(&x, &logs, &crate::regression::Vcov::hc0())
            .unwrap()
            .coef(1);
        assert_abs_diff_eq!(curve.theta[1], log_ate, epsilon = 1e-4);
    }

    #[test]
    fn monotone_divergence_on_geometric_grid() {
        let data = two_point_exact(400);
        let grid: Vec<f64> = (0..=12).map(|k| 10f64.powi(k)).collect();
        let curve = sensitivity_curve(
            &data,
            &Transform::log1p(),
            &grid,
            Engine::DiffMeans,
            SeSpec::Hc0,
        )
        .unwrap();
        let gamma = curve.extensive_margin.value;
        assert!(gamma > 0.0);
        let last = *curve.theta.last().unwrap();
        assert!(last > curve.theta[0] + gamma * 20.0);
        // eventually increasing
        for w in curve.theta[4..].windows(2) {
            assert!(w[1] > w[0]);
        }
    }

    #[test]
    fn find_scale_hits_targets() {
        let data = two_point_exact(400);
        for &target in &[0.1f64, 1.0, 10.0] {
            let found = find_scale_for_target(
                &data,
                &Transform::log1p(),
                target,
                Engine::DiffMeans,
                SeSpec::Hc0,
            )
            .unwrap();
            assert!(found.bisection_steps < 60, "steps {}", found.bisection_steps);
            // self-certify by re-evaluating
            let check = theta_at(
                &data,
                &Transform::log1p(),
                found.scale,
                Engine::DiffMeans,
                SeSpec::Hc0,
            )
            .unwrap();
            assert!(
                (check.value.abs() - target).abs() < 1e-6,
                "target {target}: got {}",
                check.value
            );
        }
    }

    #[test]
    fn find_scale_can_match_current_magnitude() {
        let data = two_point_exact(40);
        let current = theta_at(&data, &Transform::log1p(), 1.0, Engine::DiffMeans, SeSpec::Hc0)
            .unwrap()
            .value
            .abs();
        let found = find_scale_for_target(
            &data,
            &Transform::log1p(),
            current,
            Engine::DiffMeans,
            SeSpec::Hc0,
        )
        .unwrap();
        assert!((found.theta.abs() - current).abs() < 1e-6);
    }

    #[test]
    fn no_extensive_margin_is_an_error() {
        // no zeros in either arm
        let y = vec![1.0, 2.0, 3.0, 4.0];
        let d = vec![0.0, 1.0, 0.0, 1.0];
        let data = Dataset::new(y, d).unwrap();
        assert!(matches!(
            find_scale_for_target(&data, &Transform::log1p(), 1.0, Engine::DiffMeans, SeSpec::Hc0),
            Err(Error::NoExtensiveMargin)
        ));
        // tstat table still emits, with the flag set
        let table = tstat_table(
            &data,
            &Transform::log1p(),
            &[1.0, 10.0],
            Engine::DiffMeans,
            SeSpec::Hc0,
        )
        .unwrap();
        assert!(table.zero_extensive_margin);
        assert_eq!(table.rows.len(), 2);
    }

    #[test]
    fn tstat_converges_to_extensive_margin_tstat() {
        // equal positive-part distributions keep the o(log a) remainder
        // small relative to gamma
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let n = 20_000;
        let mut y = Vec::new();
        let mut d = Vec::new();
        for i in 0..n {
            let di = (i % 2) as f64;
            let p_pos = if di == 1.0 { 0.75 } else { 0.5 };
            let positive = rng.gen::<f64>() < p_pos;
            let v = if positive {
                (0.5 * rng.gen::<f64>() - 0.25).exp()
            } else {
                0.0
            };
            y.push(v);
            d.push(di);
        }
        let data = Dataset::new(y, d).unwrap();
        let table = tstat_table(
            &data,
            &Transform::arcsinh(),
            &[1e10],
            Engine::DiffMeans,
            SeSpec::Hc0,
        )
        .unwrap();
        let t_gamma = table.extensive_margin_tstat;
        let t_theta = table.rows[0].theta_tstat;
        assert!(
            (t_theta - t_gamma).abs() < 0.01 * t_gamma.abs(),
            "t_theta {t_theta} vs t_gamma {t_gamma}"
        );
    }

    #[test]
    fn curve_csv_has_expected_columns() {
        let data = two_point_exact(40);
        let curve = sensitivity_curve(
            &data,
            &Transform::arcsinh(),
            &[0.5, 1.0, 2.0],
            Engine::DiffMeans,
            SeSpec::Hc0,
        )
        .unwrap();
        let csv = curve.to_csv();
        assert!(csv.starts_with("a,theta,se,tstat,approx\n"));
        assert_eq!(csv.lines().count(), 4);
        // approximation column is anchored at the smallest grid point >= 1
        assert_abs_diff_eq!(curve.approx[1], curve.theta[1], epsilon = 1e-15);
    }

    #[test]
    fn rejects_bad_grids() {
        let data = two_point_exact(40);
        for grid in [vec![], vec![2.0, 1.0], vec![0.0, 1.0]] {
            assert!(matches!(
                sensitivity_curve(&data, &Transform::arcsinh(), &grid, Engine::DiffMeans, SeSpec::Hc0),
                Err(Error::BadGrid(_))
            ));
        }
    }
}
