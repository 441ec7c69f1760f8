//! Global predictive surface from independently fitted partitions.
//!
//! At a location `s`, partition `k` gets weight proportional to
//! `exp(-d_k^2)` when its nearest member lies within `gamma` of `s`, and
//! zero otherwise. The linear predictor uses the fixed effects of the home
//! partition of `s` and the weighted sum of every surviving partition's
//! basis expansion:
//!
//! `eta(s) = x(s)^T beta_home + sum_k c_k(s) phi_k(s)^T delta_k`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::basis::tps_eval;
use crate::data::{Family, Location};
use crate::kdtree::{KdTree, Nearest};
use crate::linalg::{self, Matrix};
use crate::math;
use crate::{Error, Result};

/// Fitted local process of one partition.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionFit {
    /// Training locations belonging to the partition.
    pub locations: Vec<Location>,
    /// Selected knots.
    pub knots: Vec<Location>,
    /// Posterior mean of the fixed effects.
    pub beta: Vec<f64>,
    /// Posterior mean of the basis coefficients, one per knot.
    pub delta: Vec<f64>,
    /// Optional retained draws, `S x (p + m)` in `[beta, delta]` order.
    pub draws: Option<Matrix>,
}

impl PartitionFit {
    /// `phi_k(s)^T delta` for the given coefficient vector.
    pub fn random_effect(&self, s: &Location, delta: &[f64]) -> f64 {
        self.knots.iter().zip(delta).map(|(u, d)| tps_eval(s, u) * d).sum()
    }
}

/// Sparse normalized partition weights at one location.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    /// `(partition, weight)` for partitions with non-zero weight, ascending.
    pub entries: Vec<(usize, f64)>,
    /// No partition lay within `gamma`; the nearest one got weight 1.
    pub fallback: bool,
}

impl WeightVector {
    pub fn weight(&self, k: usize) -> f64 {
        self.entries.iter().find(|(j, _)| *j == k).map_or(0.0, |(_, w)| *w)
    }
}

/// Everything about a location that does not depend on `gamma`: the
/// distance to each partition and each partition's basis term at the
/// posterior mean.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCache {
    pub dists: Vec<f64>,
    pub random_effects: Vec<f64>,
    pub home: usize,
}

/// Read-only global predictor shared across query locations.
#[derive(Debug, Clone)]
pub struct GlobalPredictor {
    parts: Vec<PartitionFit>,
    trees: Vec<KdTree>,
    gamma: f64,
    p: usize,
}

impl GlobalPredictor {
    pub fn new(parts: Vec<PartitionFit>, gamma: f64) -> Result<Self> {
        if parts.is_empty() {
            return Err(Error::Argument("predictor needs at least one partition".into()));
        }
        check_gamma(gamma)?;
        let p = parts[0].beta.len();
        for (k, part) in parts.iter().enumerate() {
            if part.locations.is_empty() {
                return Err(Error::Argument(format!("partition {k} has no locations")));
            }
            if part.beta.len() != p || part.delta.len() != part.knots.len() {
                return Err(Error::Dimension(format!(
                    "partition {k}: {} fixed effects (expected {p}), {} coefficients for {} knots",
                    part.beta.len(),
                    part.delta.len(),
                    part.knots.len()
                )));
            }
            if let Some(d) = &part.draws {
                if d.ncols() != p + part.knots.len() || d.nrows() == 0 {
                    return Err(Error::Dimension(format!("partition {k}: draw matrix has wrong shape")));
                }
            }
        }
        let trees = parts.iter().map(|part| KdTree::new(&part.locations)).collect();
        Ok(Self { parts, trees, gamma, p })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn set_gamma(&mut self, gamma: f64) -> Result<()> {
        check_gamma(gamma)?;
        self.gamma = gamma;
        Ok(())
    }

    pub fn n_partitions(&self) -> usize {
        self.parts.len()
    }

    pub fn partitions(&self) -> &[PartitionFit] {
        &self.parts
    }

    pub fn n_covariates(&self) -> usize {
        self.p
    }

    /// Exact nearest member of partition `k` to `s`.
    pub fn nearest_in_partition(&self, s: &Location, k: usize) -> Nearest {
        self.trees[k].nearest(s).expect("partitions are non-empty")
    }

    /// Distance from `s` to every partition.
    pub fn partition_distances(&self, s: &Location) -> Vec<f64> {
        (0..self.parts.len()).map(|k| self.nearest_in_partition(s, k).dist()).collect()
    }

    /// Partition holding the training location nearest to `s` (smallest
    /// index on ties).
    pub fn home_partition(&self, s: &Location) -> usize {
        argmin(&self.partition_distances(s))
    }

    pub fn compute_weights(&self, s: &Location) -> WeightVector {
        weights_from_distances(&self.partition_distances(s), self.gamma)
    }

    fn check_covariates(&self, x_s: &[f64], home: usize) -> Result<()> {
        if x_s.len() != self.p {
            return Err(Error::Argument(format!("expected {} covariates, got {}", self.p, x_s.len())));
        }
        if home >= self.parts.len() {
            return Err(Error::Argument(format!("home partition {home} out of range")));
        }
        Ok(())
    }

    /// Linear predictor at posterior means. `home = None` uses
    /// [`Self::home_partition`].
    pub fn global_eta(&self, s: &Location, x_s: &[f64], home: Option<usize>) -> Result<f64> {
        let cache = self.point_cache(s, home);
        self.check_covariates(x_s, cache.home)?;
        Ok(self.eta_from_cache(&cache, x_s, self.gamma))
    }

    /// Linear predictor for each of the given draw indices. Every partition
    /// must carry draws; indices wrap around shorter draw matrices.
    pub fn global_eta_draws(&self, s: &Location, x_s: &[f64], home: Option<usize>, draws: &[usize]) -> Result<Vec<f64>> {
        let dists = self.partition_distances(s);
        let home = home.unwrap_or_else(|| argmin(&dists));
        self.check_covariates(x_s, home)?;
        let mats: Vec<&Matrix> = self
            .parts
            .iter()
            .enumerate()
            .map(|(k, part)| part.draws.as_ref().ok_or_else(|| Error::Argument(format!("partition {k} has no draws"))))
            .collect::<Result<_>>()?;
        let w = weights_from_distances(&dists, self.gamma);
        let p = self.p;
        let mut out = Vec::with_capacity(draws.len());
        let phis: Vec<(usize, f64, Vec<f64>)> = w
            .entries
            .iter()
            .map(|&(k, c)| (k, c, self.parts[k].knots.iter().map(|u| tps_eval(s, u)).collect()))
            .collect();
        for &t in draws {
            let row = |k: usize, j: usize| {
                let m = mats[k];
                m.get(t % m.nrows(), j)
            };
            let mut eta: f64 = (0..p).map(|j| x_s[j] * row(home, j)).sum();
            for (k, c, phi) in &phis {
                let re: f64 = phi.iter().enumerate().map(|(j, f)| f * row(*k, p + j)).sum();
                eta += c * re;
            }
            out.push(eta);
        }
        Ok(out)
    }

    /// Gamma-independent quantities at `s`, so that many radii can be
    /// scored from one pass over the locations.
    pub fn point_cache(&self, s: &Location, home: Option<usize>) -> PointCache {
        let dists = self.partition_distances(s);
        let home = home.unwrap_or_else(|| argmin(&dists));
        let random_effects = self.parts.iter().map(|part| part.random_effect(s, &part.delta)).collect();
        PointCache { dists, random_effects, home }
    }

    pub fn eta_from_cache(&self, cache: &PointCache, x_s: &[f64], gamma: f64) -> f64 {
        let w = weights_from_distances(&cache.dists, gamma);
        let fixed = linalg::dot(x_s, &self.parts[cache.home].beta);
        fixed + w.entries.iter().map(|&(k, c)| c * cache.random_effects[k]).sum::<f64>()
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma.is_finite() {
        Ok(())
    } else {
        Err(Error::Argument(format!("weighting radius must be positive, got {gamma}")))
    }
}

fn argmin(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x < xs[best] {
            best = i;
        }
    }
    best
}

/// Truncated exponential weights from partition distances.
pub fn weights_from_distances(dists: &[f64], gamma: f64) -> WeightVector {
    let mut entries: Vec<(usize, f64)> = dists
        .iter()
        .enumerate()
        .filter(|(_, &d)| d <= gamma)
        .map(|(k, &d)| (k, math::exp(-d * d)))
        .collect();
    if entries.is_empty() {
        return WeightVector { entries: vec![(argmin(dists), 1.0)], fallback: true };
    }
    let total: f64 = entries.iter().map(|e| e.1).sum();
    entries.iter_mut().for_each(|e| e.1 /= total);
    WeightVector { entries, fallback: false }
}

/// Predictive mean and 95% interval of the mean response.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResponseSummary {
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
}

pub fn predict_response(eta_draws: &[f64], family: Family) -> Result<ResponseSummary> {
    if eta_draws.is_empty() {
        return Err(Error::Argument("no draws to summarize".into()));
    }
    let mut mu: Vec<f64> = eta_draws.iter().map(|&e| family.mean(e)).collect();
    let mean = math::mean(&mu);
    mu.sort_by(f64::total_cmp);
    Ok(ResponseSummary { mean, lo: math::quantile_sorted(&mu, 0.025), hi: math::quantile_sorted(&mu, 0.975) })
}

/// Root mean squared prediction error.
pub fn rcvmspe(predictions: &[f64], truth: &[f64]) -> Result<f64> {
    if predictions.is_empty() || predictions.len() != truth.len() {
        return Err(Error::Argument(format!(
            "need equal, non-empty lengths, got {} predictions and {} responses",
            predictions.len(),
            truth.len()
        )));
    }
    let sse: f64 = predictions.iter().zip(truth).map(|(p, z)| (z - p) * (z - p)).sum();
    Ok(math::sqrt(sse / truth.len() as f64))
}

/// Fraction of responses whose class `p >= threshold` disagrees with `z`.
pub fn misclassification_rate(probs: &[f64], truth: &[f64], threshold: f64) -> f64 {
    if probs.is_empty() {
        return 0.0;
    }
    let wrong = probs.iter().zip(truth).filter(|(&p, &z)| (p >= threshold) != (z > 0.5)).count();
    wrong as f64 / probs.len() as f64
}

/// Held-out score for a family: rCVMSPE of counts, misclassification of
/// binary responses.
pub fn holdout_score(family: Family, eta: &[f64], truth: &[f64]) -> Result<f64> {
    let mu: Vec<f64> = eta.iter().map(|&e| family.mean(e)).collect();
    match family {
        Family::Poisson => rcvmspe(&mu, truth),
        Family::Bernoulli => Ok(misclassification_rate(&mu, truth, 0.5)),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GammaTuning {
    pub best_gamma: f64,
    /// `(gamma, score)` in candidate order.
    pub scores: Vec<(f64, f64)>,
}

/// Index of the lowest score; ties go to the smaller gamma.
pub fn best_gamma_index(scores: &[(f64, f64)]) -> usize {
    let mut best = 0;
    for (i, &(g, s)) in scores.iter().enumerate() {
        let (bg, bs) = scores[best];
        if s < bs || (s == bs && g < bg) {
            best = i;
        }
    }
    best
}

/// Score each radius on held-out data from precomputed point caches.
pub fn tune_gamma_cached(
    predictor: &GlobalPredictor,
    caches: &[PointCache],
    covariates: &Matrix,
    truth: &[f64],
    family: Family,
    candidates: &[f64],
) -> Result<GammaTuning> {
    if candidates.is_empty() {
        return Err(Error::Argument("no weighting radius candidates".into()));
    }
    if caches.len() != truth.len() || covariates.nrows() != truth.len() {
        return Err(Error::Dimension("validation caches, covariates and responses differ in length".into()));
    }
    let rows: Vec<Vec<f64>> = (0..truth.len()).map(|i| covariates.row(i)).collect();
    let mut scores = Vec::with_capacity(candidates.len());
    for &gamma in candidates {
        check_gamma(gamma)?;
        let eta: Vec<f64> = caches.iter().zip(&rows).map(|(c, x)| predictor.eta_from_cache(c, x, gamma)).collect();
        scores.push((gamma, holdout_score(family, &eta, truth)?));
    }
    Ok(GammaTuning { best_gamma: scores[best_gamma_index(&scores)].0, scores })
}

/// Choose the weighting radius minimizing the held-out score without
/// refitting any partition.
pub fn tune_gamma(
    predictor: &GlobalPredictor,
    locations: &[Location],
    covariates: &Matrix,
    truth: &[f64],
    family: Family,
    candidates: &[f64],
) -> Result<GammaTuning> {
    if locations.len() != truth.len() {
        return Err(Error::Dimension("validation locations and responses differ in length".into()));
    }
    let caches: Vec<PointCache> = locations.iter().map(|s| predictor.point_cache(s, None)).collect();
    tune_gamma_cached(predictor, &caches, covariates, truth, family, candidates)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn part(locations: Vec<Location>, knots: Vec<Location>, beta: Vec<f64>, delta: Vec<f64>) -> PartitionFit {
        PartitionFit { locations, knots, beta, delta, draws: None }
    }

    #[test]
    fn lone_partition_gets_full_weight() {
        let a = part(vec![Location::new(0.0, 0.0)], vec![], vec![0.0], vec![]);
        let b = part(vec![Location::new(5.0, 0.0)], vec![], vec![0.0], vec![]);
        let pred = GlobalPredictor::new(vec![a, b], 1.0).unwrap();
        let w = pred.compute_weights(&Location::new(0.0, 0.0));
        assert_eq!(w.entries, vec![(0, 1.0)]);
        assert!(!w.fallback);
    }

    #[test]
    fn equidistant_partitions_split_evenly() {
        let w = weights_from_distances(&[0.3, 0.3], 0.5);
        assert_eq!(w.entries, vec![(0, 0.5), (1, 0.5)]);
    }

    #[test]
    fn three_partition_weights() {
        let w = weights_from_distances(&[0.0, 0.1, 0.2], 0.25);
        let raw = [1.0, libm::exp(-0.01), libm::exp(-0.04)];
        let total: f64 = raw.iter().sum();
        for k in 0..3 {
            assert!((w.weight(k) - raw[k] / total).abs() < 1e-15);
        }
    }

    #[test]
    fn empty_radius_falls_back_to_nearest() {
        let w = weights_from_distances(&[2.0, 1.5, 3.0], 0.1);
        assert_eq!(w.entries, vec![(1, 1.0)]);
        assert!(w.fallback);
    }

    #[test]
    fn single_partition_reduces_to_local_model() {
        let locs = vec![Location::new(0.0, 0.0), Location::new(1.0, 1.0)];
        let knots = vec![Location::new(0.5, 0.5), Location::new(0.2, 0.9)];
        let fit = part(locs, knots.clone(), vec![0.3, -1.0], vec![2.0, -0.5]);
        let pred = GlobalPredictor::new(vec![fit], 0.01).unwrap();
        let s = Location::new(0.7, 0.1);
        let x = [1.0, 2.0];
        let expected = 0.3 - 2.0 + 2.0 * tps_eval(&s, &knots[0]) - 0.5 * tps_eval(&s, &knots[1]);
        assert!((pred.global_eta(&s, &x, None).unwrap() - expected).abs() < 1e-14);
    }

    #[test]
    fn mirrored_coefficients_cancel() {
        let knot = Location::new(0.0, 1.0);
        let a = part(vec![Location::new(-1.0, 0.0)], vec![knot], vec![0.0], vec![1.5]);
        let b = part(vec![Location::new(1.0, 0.0)], vec![knot], vec![0.0], vec![-1.5]);
        let pred = GlobalPredictor::new(vec![a, b], 2.0).unwrap();
        let eta = pred.global_eta(&Location::new(0.0, 0.0), &[1.0], Some(0)).unwrap();
        assert!(eta.abs() < 1e-15);
    }

    #[test]
    fn response_summaries() {
        assert_eq!(predict_response(&[0.0, 0.0], Family::Bernoulli).unwrap().mean, 0.5);
        assert_eq!(predict_response(&[0.0], Family::Poisson).unwrap().mean, 1.0);
        let m = predict_response(&[0.0, libm::log(3.0)], Family::Poisson).unwrap().mean;
        assert!((m - 2.0).abs() < 1e-12);
    }

    #[test]
    fn error_metrics() {
        assert_eq!(rcvmspe(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(rcvmspe(&[1.0, 1.0], &[0.0, 2.0]).unwrap(), 1.0);
        assert!(rcvmspe(&[], &[]).is_err());
        assert_eq!(misclassification_rate(&[0.9, 0.1], &[1.0, 0.0], 0.5), 0.0);
        assert_eq!(misclassification_rate(&[0.5; 4], &[1.0, 0.0, 1.0, 0.0], 0.5), 0.5);
    }

    #[test]
    fn gamma_ties_prefer_smaller() {
        assert_eq!(best_gamma_index(&[(0.5, 1.0), (0.1, 1.0), (1.0, 2.0)]), 1);
        assert_eq!(best_gamma_index(&[(0.5, 0.9), (0.1, 1.0)]), 0);
    }

    #[test]
    fn rejects_bad_inputs() {
        let a = part(vec![Location::new(0.0, 0.0)], vec![], vec![0.0], vec![]);
        assert!(GlobalPredictor::new(vec![a.clone()], 0.0).is_err());
        let pred = GlobalPredictor::new(vec![a], 1.0).unwrap();
        assert!(pred.global_eta(&Location::new(0.0, 0.0), &[1.0, 2.0], None).is_err());
    }
}
