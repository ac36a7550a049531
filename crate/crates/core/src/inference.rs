//! Nonparametric clustered bootstrap and the delta method.
//!
//! Replicate `r` is a pure function of `(seed, r)`: each draw runs on its own
//! ChaCha stream with the draw index as the stream id. Replicates are
//! evaluated in parallel but collected in index order, so output is
//! bit-identical at any thread count. Statistics are re-evaluated from
//! scratch on each resample, which is what re-derives data-dependent choices
//! (trimming direction, `y_min`) inside every draw.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::exec;
use crate::stats;

/// Bootstrap configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BootstrapSpec {
    pub draws: usize,
    pub seed: u64,
    /// Resample whole clusters (requires a cluster column); otherwise rows.
    pub clustered: bool,
}

impl Default for BootstrapSpec {
    fn default() -> Self {
        BootstrapSpec {
            draws: 1000,
            seed: 0,
            clustered: false,
        }
    }
}

/// Bootstrap output: SE, percentile interval, and replicate diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub se: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub draws: usize,
    pub failed_draws: usize,
    pub skewness: f64,
    /// Successful replicate values in draw order.
    pub replicates: Vec<f64>,
}

impl BootstrapResult {
    /// (normal quantile, replicate quantile) pairs for a Q-Q plot.
    pub fn qq_data(&self) -> Vec<(f64, f64)> {
        let mut sorted = self.replicates.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let m = sorted.len();
        sorted
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let p = (i as f64 + 0.5) / m as f64;
                (stats::inverse_normal_cdf(p), v)
            })
            .collect()
    }
}

/// One resample of the dataset, pure in `(seed, draw_index)`.
pub fn resample(data: &Dataset, spec: &BootstrapSpec, draw_index: usize) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(draw_index as u64 + 1);
    if spec.clustered {
        let ids = data.require_cluster()?;
        let mut distinct: Vec<usize> = ids.to_vec();
        distinct.sort_unstable();
        distinct.dedup();
        let g = distinct.len();
        if g < 2 {
            return Err(Error::TooFewClusters(g));
        }
        // rows per original cluster, in row order
        let mut rows_of: Vec<Vec<usize>> = vec![Vec::new(); distinct.len()];
        for (row, &id) in ids.iter().enumerate() {
            let slot = distinct.binary_search(&id).unwrap();
            rows_of[slot].push(row);
        }
        let mut keep = Vec::with_capacity(data.row_count());
        let mut new_ids = Vec::with_capacity(data.row_count());
        for draw in 0..g {
            let pick = rng.gen_range(0..g);
            keep.extend_from_slice(&rows_of[pick]);
            // relabel so two copies of one cluster stay distinct
            new_ids.extend(std::iter::repeat(draw).take(rows_of[pick].len()));
        }
        data.select_rows(&keep).with_cluster_ids(new_ids)
    } else {
        let n = data.row_count();
        let keep: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
        Ok(data.select_rows(&keep))
    }
}

/// Run the bootstrap for an arbitrary scalar statistic.
///
/// Draws that fail are recorded; more than 10% failures aborts with the
/// first failure message as diagnostics.
pub fn cluster_bootstrap<F>(
    data: &Dataset,
    spec: &BootstrapSpec,
    statistic: F,
) -> Result<BootstrapResult>
where
    F: Fn(&Dataset) -> Result<f64> + Sync + Send,
{
    if spec.draws < 2 {
        return Err(Error::TooFewDraws(spec.draws));
    }
    if spec.clustered {
        // fail fast before spawning work
        let g = data.cluster_count().ok_or(Error::MissingRole("cluster"))?;
        if g < 2 {
            return Err(Error::TooFewClusters(g));
        }
    }

    let outcomes: Vec<std::result::Result<f64, String>> = exec::map_indexed(spec.draws, |r| {
        resample(data, spec, r)
            .and_then(|d| statistic(&d))
            .map_err(|e| e.to_string())
    });

    let mut replicates = Vec::with_capacity(spec.draws);
    let mut failed = 0usize;
    let mut first_failure: Option<String> = None;
    for res in outcomes {
        match res {
            Ok(v) if v.is_finite() => replicates.push(v),
            Ok(_) => {
                failed += 1;
                first_failure.get_or_insert_with(|| "non-finite replicate".to_string());
            }
            Err(msg) => {
                failed += 1;
                first_failure.get_or_insert(msg);
            }
        }
    }
    if failed * 10 > spec.draws {
        return Err(Error::EstimatorFailedOnDraw {
            failed,
            draws: spec.draws,
            first: first_failure.unwrap_or_default(),
        });
    }

    let se = stats::sample_sd(&replicates);
    let mut sorted = replicates.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let ci_lower = stats::quantile_sorted(&sorted, 0.025);
    let ci_upper = stats::quantile_sorted(&sorted, 0.975);
    Ok(BootstrapResult {
        se,
        ci_lower,
        ci_upper,
        draws: spec.draws,
        failed_draws: failed,
        skewness: stats::skewness(&replicates),
        replicates,
    })
}

/// Delta method for `exp(b) - 1`: value and propagated standard error.
pub fn delta_exp_minus_one(beta: f64, se_beta: f64) -> (f64, f64) {
    (beta.exp() - 1.0, beta.exp() * se_beta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand_distr::{Distribution, Normal};

    fn mean_stat(d: &Dataset) -> Result<f64> {
        Ok(d.outcome().iter().sum::<f64>() / d.row_count() as f64)
    }

    #[test]
    fn delta_method_printed_values() {
        let (v, s) = delta_exp_minus_one(0.106, 0.072);
        assert_abs_diff_eq!(v, 0.1118, epsilon = 5e-4);
        assert_abs_diff_eq!(s, 0.0800, epsilon = 5e-4);
        let (v, s) = delta_exp_minus_one(-1.722, 0.632);
        assert_abs_diff_eq!(v, -0.8213, epsilon = 5e-4);
        assert_abs_diff_eq!(s, 0.1129, epsilon = 5e-4);
        let (v, s) = delta_exp_minus_one(0.0, 0.3);
        assert_eq!(v, 0.0);
        assert_eq!(s, 0.3);
    }

    #[test]
    fn bootstrap_se_of_sample_mean_tracks_analytic() {
        // 1000 standard normal outcomes: SE of the mean is ~ 1/sqrt(1000)
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let y: Vec<f64> = (0..1000)
            .map(|_| (normal.sample(&mut rng) as f64).abs())
            .collect();
        // abs() keeps outcomes non-negative; sd of |N(0,1)| is sqrt(1-2/pi)
        let sd = (1.0 - 2.0 / std::f64::consts::PI).sqrt();
        let data = Dataset::new(y, vec![0.0; 1000]).unwrap();
        let spec = BootstrapSpec {
            draws: 1000,
            seed: 4,
            clustered: false,
        };
        let result = cluster_bootstrap(&data, &spec, mean_stat).unwrap();
        let analytic = sd / (1000.0f64).sqrt();
        assert!(
            (result.se - analytic).abs() < 0.1 * analytic,
            "bootstrap {} vs analytic {analytic}",
            result.se
        );
        assert_eq!(result.failed_draws, 0);
    }

    #[test]
    fn constant_statistic_has_zero_se() {
        let data = Dataset::new(vec![1.0, 2.0, 3.0], vec![0.0, 1.0, 0.0]).unwrap();
        let spec = BootstrapSpec {
            draws: 50,
            seed: 1,
            clustered: false,
        };
        let result = cluster_bootstrap(&data, &spec, |_| Ok(42.0)).unwrap();
        assert_eq!(result.se, 0.0);
        assert_eq!(result.ci_lower, 42.0);
        assert_eq!(result.ci_upper, 42.0);
    }

    #[test]
    fn same_seed_same_replicates() {
        let data = Dataset::new(vec![1.0, 5.0, 2.0, 8.0], vec![0.0, 1.0, 0.0, 1.0])
            .unwrap()
            .with_cluster_labels(&["a", "a", "b", "b"])
            .unwrap();
        let spec = BootstrapSpec {
            draws: 100,
            seed: 7,
            clustered: true,
        };
        let r1 = cluster_bootstrap(&data, &spec, mean_stat).unwrap();
        let r2 = cluster_bootstrap(&data, &spec, mean_stat).unwrap();
        assert_eq!(r1.replicates, r2.replicates);
    }

    #[cfg(feature = "parallel")]
    #[test]
    fn replicates_identical_across_thread_counts() {
        let data = Dataset::new(
            (0..60).map(|i| (i % 7) as f64).collect(),
            (0..60).map(|i| (i % 2) as f64).collect(),
        )
        .unwrap()
        .with_cluster_labels(&(0..60).map(|i| format!("c{}", i % 6)).collect::<Vec<_>>())
        .unwrap();
        let spec = BootstrapSpec {
            draws: 200,
            seed: 13,
            clustered: true,
        };
        let run = |threads: usize| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| cluster_bootstrap(&data, &spec, mean_stat).unwrap())
        };
        let r1 = run(1);
        let r4 = run(4);
        assert_eq!(r1.replicates, r4.replicates);
        assert_eq!(r1.se.to_bits(), r4.se.to_bits());
    }

    #[test]
    fn cluster_resampling_relabels_clusters() {
        let data = Dataset::new(vec![1.0; 6], vec![0.0; 6])
            .unwrap()
            .with_cluster_labels(&["a", "a", "b", "b", "c", "c"])
            .unwrap();
        let spec = BootstrapSpec {
            draws: 10,
            seed: 3,
            clustered: true,
        };
        let d = resample(&data, &spec, 0).unwrap();
        assert_eq!(d.row_count(), 6);
        assert_eq!(d.cluster_count(), Some(3));
    }

    #[test]
    fn excessive_failures_abort() {
        let data = Dataset::new(vec![1.0, 2.0], vec![0.0, 1.0]).unwrap();
        let spec = BootstrapSpec {
            draws: 20,
            seed: 5,
            clustered: false,
        };
        let err = cluster_bootstrap(&data, &spec, |_| {
            Err::<f64, _>(Error::ZeroControlMean)
        })
        .unwrap_err();
        assert!(matches!(err, Error::EstimatorFailedOnDraw { failed: 20, .. }));
    }
}
