//! Probabilistic forecast scoring: ensemble CRPS, jump CRPS at percentile
//! thresholds, the energy score, central-interval reliability, and drift
//! parameter recovery error.

use crate::error::{Error, Result};
use crate::neural::drift::Drift;
use crate::stats::quantile_sorted;
use serde::{Deserialize, Serialize};

/// Forecast sample paths over a horizon, aligned with the held-out truth.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ForecastEnsemble {
    /// Horizon evaluation times, increasing.
    pub times: Vec<f64>,
    /// `samples[m][h]` is the d-vector of member `m` at horizon index `h`.
    pub samples: Vec<Vec<Vec<f64>>>,
    /// `observed[h]` is the d-vector of the truth at horizon index `h`.
    pub observed: Vec<Vec<f64>>,
}

impl ForecastEnsemble {
    pub fn validate(&self) -> Result<()> {
        let h = self.times.len();
        if h == 0 || self.samples.is_empty() {
            return Err(Error::data("ensemble needs at least one time and one member"));
        }
        if self.times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::data("ensemble times must be increasing"));
        }
        if self.observed.len() != h {
            return Err(Error::data("observed length does not match times"));
        }
        let d = self.dim();
        if self.observed.iter().any(|o| o.len() != d) {
            return Err(Error::data("observed dimension mismatch"));
        }
        for member in &self.samples {
            if member.len() != h || member.iter().any(|v| v.len() != d) {
                return Err(Error::data("sample shape mismatch"));
            }
        }
        Ok(())
    }

    pub fn n_members(&self) -> usize {
        self.samples.len()
    }

    pub fn dim(&self) -> usize {
        self.observed.first().map_or(0, Vec::len)
    }

    fn member_values(&self, h: usize, dim: usize) -> Vec<f64> {
        self.samples.iter().map(|m| m[h][dim]).collect()
    }

    /// Mean CRPS over all (time, dimension) points.
    pub fn mean_crps(&self) -> f64 {
        let mut total = 0.0;
        let mut count = 0usize;
        for h in 0..self.times.len() {
            for dim in 0..self.dim() {
                total += crps(&self.member_values(h, dim), self.observed[h][dim]);
                count += 1;
            }
        }
        total / count as f64
    }

    /// Mean energy score over horizon times.
    pub fn mean_energy_score(&self) -> f64 {
        let mut total = 0.0;
        for h in 0..self.times.len() {
            let members: Vec<&[f64]> = self.samples.iter().map(|m| m[h].as_slice()).collect();
            total += energy_score(&members, &self.observed[h]);
        }
        total / self.times.len() as f64
    }

    /// Absolute one-step increments of the observed series, as
    /// `(time index of the increment's endpoint, dim, |dy|)`.
    pub fn observed_increment_magnitudes(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        for h in 1..self.times.len() {
            for dim in 0..self.dim() {
                out.push((h, dim, (self.observed[h][dim] - self.observed[h - 1][dim]).abs()));
            }
        }
        out
    }
}

/// Ensemble CRPS of `samples` against a scalar observation:
/// `mean |x_i - y| - mean_pairs |x_i - x_j| / 2`, in O(M log M) via sorting.
pub fn crps(samples: &[f64], y: f64) -> f64 {
    assert!(!samples.is_empty(), "CRPS of an empty ensemble");
    let m = samples.len();
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("NaN in CRPS input"));
    let abs_term: f64 = sorted.iter().map(|x| (x - y).abs()).sum::<f64>() / m as f64;
    // sum over ordered pairs (i > j) of x_(i) - x_(j) through the sorted
    // gaps: gap k is crossed by (k+1)(m-1-k) pairs. Ties contribute exactly
    // zero, so a deterministic ensemble scores an exact |c - y|.
    let pair_sum: f64 = sorted
        .windows(2)
        .enumerate()
        .map(|(k, w)| (w[1] - w[0]) * ((k + 1) * (m - 1 - k)) as f64)
        .sum();
    abs_term - pair_sum / (m as f64 * m as f64)
}

/// Energy score `mean ||x_i - y|| - mean_pairs ||x_i - x_j|| / 2` for
/// d-dimensional ensemble members.
pub fn energy_score(samples: &[&[f64]], y: &[f64]) -> f64 {
    assert!(!samples.is_empty());
    let m = samples.len();
    let dist = |a: &[f64], b: &[f64]| -> f64 {
        a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt()
    };
    let obs_term = samples.iter().map(|x| dist(x, y)).sum::<f64>() / m as f64;
    let mut pair_term = 0.0;
    for i in 0..m {
        for j in 0..m {
            pair_term += dist(samples[i], samples[j]);
        }
    }
    obs_term - pair_term / (2.0 * (m * m) as f64)
}

/// CRPS restricted to times whose observed increment magnitude exceeds the
/// given percentile of all increments in this evaluation set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum JumpCrps {
    Value { value: f64, threshold: f64, n_selected: usize },
    /// No increment exceeded the threshold; explicitly not a zero score.
    NoQualifyingIncrements { threshold: f64 },
}

pub fn jump_crps(ensemble: &ForecastEnsemble, percentile: f64) -> Result<JumpCrps> {
    assert!((0.0..100.0).contains(&percentile), "percentile must be in [0, 100)");
    let increments = ensemble.observed_increment_magnitudes();
    if increments.is_empty() {
        return Err(Error::data("horizon too short for increments"));
    }
    let mut mags: Vec<f64> = increments.iter().map(|&(_, _, m)| m).collect();
    mags.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let threshold = quantile_sorted(&mags, percentile / 100.0);
    Ok(jump_crps_with_threshold(ensemble, threshold, percentile == 0.0))
}

/// Same selection against an externally pooled threshold (used when the
/// threshold is computed over all evaluation windows globally).
pub fn jump_crps_with_threshold(
    ensemble: &ForecastEnsemble,
    threshold: f64,
    include_equal: bool,
) -> JumpCrps {
    let mut total = 0.0;
    let mut n = 0usize;
    for (h, dim, mag) in ensemble.observed_increment_magnitudes() {
        let selected = if include_equal { mag >= threshold } else { mag > threshold };
        if selected {
            total += crps(&ensemble.member_values(h, dim), ensemble.observed[h][dim]);
            n += 1;
        }
    }
    if n == 0 {
        JumpCrps::NoQualifyingIncrements { threshold }
    } else {
        JumpCrps::Value { value: total / n as f64, threshold, n_selected: n }
    }
}

/// Empirical coverage of central prediction intervals per nominal level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityCurve {
    pub levels: Vec<f64>,
    pub coverage: Vec<f64>,
}

impl ReliabilityCurve {
    pub fn validate(&self) -> Result<()> {
        if self.levels.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::data("nominal levels must be nondecreasing"));
        }
        if self.coverage.iter().any(|&c| !(0.0..=1.0).contains(&c)) {
            return Err(Error::data("coverage must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Pools every (time, dim) point of every ensemble: the central interval at
/// level `c` is the empirical `[(1-c)/2, (1+c)/2]` quantile band of the
/// member values, and coverage is the fraction of observed values inside.
pub fn reliability(ensembles: &[&ForecastEnsemble], levels: &[f64]) -> Result<ReliabilityCurve> {
    if ensembles.is_empty() || levels.is_empty() {
        return Err(Error::data("reliability needs ensembles and levels"));
    }
    if levels.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::data("levels must be nondecreasing"));
    }
    let mut inside = vec![0usize; levels.len()];
    let mut total = 0usize;
    for ens in ensembles {
        for h in 0..ens.times.len() {
            for dim in 0..ens.dim() {
                let mut vals = ens.member_values(h, dim);
                vals.sort_by(|a, b| a.partial_cmp(b).expect("NaN in ensemble"));
                let y = ens.observed[h][dim];
                total += 1;
                for (li, &c) in levels.iter().enumerate() {
                    let lo = quantile_sorted(&vals, (1.0 - c) / 2.0);
                    let hi = quantile_sorted(&vals, (1.0 + c) / 2.0);
                    if y >= lo && y <= hi {
                        inside[li] += 1;
                    }
                }
            }
        }
    }
    let coverage = inside.iter().map(|&n| n as f64 / total as f64).collect();
    let curve = ReliabilityCurve { levels: levels.to_vec(), coverage };
    curve.validate()?;
    Ok(curve)
}

/// Per-parameter absolute recovery errors `|learned - truth|`.
pub fn param_recovery(learned: &Drift, truth: &Drift) -> Result<Vec<(String, f64)>> {
    if learned.variant_name() != truth.variant_name() {
        return Err(Error::config(format!(
            "drift variants differ: {} vs {}",
            learned.variant_name(),
            truth.variant_name()
        )));
    }
    let l = learned.named_params();
    let t = truth.named_params();
    if l.len() != t.len() {
        return Err(Error::config("drift parameter counts differ"));
    }
    Ok(l.into_iter()
        .zip(t)
        .map(|((name, lv), (_, tv))| (name, (lv - tv).abs()))
        .collect())
}
