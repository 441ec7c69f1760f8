//! l1-penalized GLM over `[X, Phi]` where only the basis coefficients are
//! penalized, fitted along a decreasing lambda path by coordinate descent
//! inside an IRLS loop, with cross-validated choice of lambda.
//!
//! The penalized objective is `-loglik(beta, delta) + lambda * sum_j |d_j|`
//! where `d_j` is the coefficient of the `j`-th basis column after scaling
//! that column to unit mean square.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::Family;
use crate::glm::{self, GlmOptions};
use crate::linalg::{self, Matrix};
use crate::math;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LassoOptions {
    pub n_lambda: usize,
    /// Smallest lambda on the default grid relative to `lambda_max`.
    pub lambda_min_ratio: f64,
    pub folds: usize,
    pub cv_seed: u64,
    /// Coordinate descent stops when no coordinate moves the quadratic
    /// objective by more than `tol` times the weighted response scale.
    pub tol: f64,
    pub max_sweeps: usize,
    pub max_irls: usize,
}

impl Default for LassoOptions {
    fn default() -> Self {
        Self { n_lambda: 50, lambda_min_ratio: 1e-3, folds: 5, cv_seed: 0, tol: 1e-12, max_sweeps: 2_000, max_irls: 50 }
    }
}

/// Data of one penalized fit: responses `z`, unpenalized covariates `x`
/// and penalized basis columns `phi`.
#[derive(Debug, Clone, Copy)]
pub struct LassoProblem<'a> {
    pub x: &'a Matrix,
    pub phi: &'a Matrix,
    pub z: &'a [f64],
    pub family: Family,
}

impl LassoProblem<'_> {
    fn validate(&self) -> Result<()> {
        let n = self.z.len();
        if self.x.nrows() != n || self.phi.nrows() != n {
            return Err(Error::Dimension(format!(
                "{n} responses, {} covariate rows, {} basis rows",
                self.x.nrows(),
                self.phi.nrows()
            )));
        }
        if !self.phi.is_finite() || !self.x.is_finite() {
            return Err(Error::Argument("design contains non-finite values".into()));
        }
        Ok(())
    }
}

/// Penalized fit at one lambda. `delta` is on the raw basis scale.
#[derive(Debug, Clone, PartialEq)]
pub struct LassoFit {
    pub beta: Vec<f64>,
    pub delta: Vec<f64>,
    pub lambda: f64,
    pub active_set: Vec<usize>,
    pub deviance: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LassoPath {
    pub lambdas: Vec<f64>,
    /// Fits for a prefix of `lambdas`; shorter when the path was truncated.
    pub fits: Vec<LassoFit>,
    pub truncated: bool,
    /// Column scales used to standardize `phi` (0 marks an unusable column).
    pub scales: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvCurve {
    pub lambdas: Vec<f64>,
    /// Mean held-out deviance per lambda (infinite past a fold's truncation).
    pub mean_deviance: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LassoSelection {
    pub fit: LassoFit,
    pub selected: usize,
    pub lambda_max: f64,
    pub path: LassoPath,
    pub cv: Option<CvCurve>,
}

/// `sign(z) * max(|z| - lambda, 0)`.
#[inline]
pub fn soft_threshold(z: f64, lambda: f64) -> f64 {
    if z > lambda {
        z - lambda
    } else if z < -lambda {
        z + lambda
    } else {
        0.0
    }
}

/// Coordinate descent for
/// `0.5 * sum_i w_i (y_i - a_i^T b)^2 + sum_j penalty_j |b_j|`,
/// warm-started from `coef`. Returns whether the sweeps converged.
pub fn weighted_lasso_cd(
    a: &Matrix,
    y: &[f64],
    w: &[f64],
    penalty: &[f64],
    coef: &mut [f64],
    tol: f64,
    max_sweeps: usize,
) -> bool {
    let gram = a.weighted_gram(Some(w));
    let wy: Vec<f64> = y.iter().zip(w).map(|(yi, wi)| yi * wi).collect();
    let c = a.tr_mul_vec(&wy);
    let scale = linalg::dot(&wy, y).max(1e-300);
    gram_lasso_cd(&gram, &c, penalty, coef, tol * scale, max_sweeps)
}

/// Covariance-update form of [`weighted_lasso_cd`]: minimizes
/// `0.5 b^T G b - c^T b + sum_j penalty_j |b_j|`. A sweep stops the solve
/// once no coordinate moves the objective by more than `thresh`.
fn gram_lasso_cd(gram: &Matrix, c: &[f64], penalty: &[f64], coef: &mut [f64], thresh: f64, max_sweeps: usize) -> bool {
    let p = c.len();
    debug_assert_eq!(coef.len(), p);
    debug_assert_eq!(penalty.len(), p);
    // Negative gradient of the smooth part, c - G b.
    let mut g = c.to_vec();
    for (j, &bj) in coef.iter().enumerate() {
        if bj != 0.0 {
            linalg::axpy(-bj, gram.col(j), &mut g);
        }
    }
    let update = |j: usize, coef: &mut [f64], g: &mut [f64]| -> f64 {
        let gjj = gram.get(j, j);
        if !(gjj > 0.0) {
            return 0.0;
        }
        let new = soft_threshold(g[j] + gjj * coef[j], penalty[j]) / gjj;
        let delta = new - coef[j];
        if delta != 0.0 {
            linalg::axpy(-delta, gram.col(j), g);
            coef[j] = new;
        }
        gjj * delta * delta
    };

    let mut sweeps = 0;
    loop {
        // Full pass over every coordinate.
        let mut max_change: f64 = 0.0;
        for j in 0..p {
            max_change = max_change.max(update(j, coef, &mut g));
        }
        sweeps += 1;
        if max_change <= thresh {
            return true;
        }
        if sweeps >= max_sweeps {
            return false;
        }
        // Iterate on the current active set until it settles.
        let active: Vec<usize> = (0..p).filter(|&j| coef[j] != 0.0 || penalty[j] == 0.0).collect();
        let mut inner = 0;
        loop {
            let mut max_change: f64 = 0.0;
            for &j in &active {
                max_change = max_change.max(update(j, coef, &mut g));
            }
            sweeps += 1;
            inner += 1;
            if max_change <= thresh {
                break;
            }
            // Slow progress on correlated columns: take a projected Newton step
            // on the active set, then return to the full pass.
            if inner % 10 == 0 && newton_on_active(gram, c, penalty, coef, &active, &mut g) {
                break;
            }
            if sweeps >= max_sweeps {
                return false;
            }
        }
    }
}

/// Active-set Newton iteration: solves
/// `G_AA b_A = c_A - penalty_A * sign(b_A)` with the other coordinates held
/// fixed, moving only as far as the first penalized coordinate that reaches
/// zero. That coordinate leaves the set and the solve repeats. Each move stays
/// in the current sign orthant, where the objective is a convex quadratic, so
/// the objective never increases. Refreshes `g` to `c - G b` and returns
/// whether any step was taken.
fn newton_on_active(gram: &Matrix, c: &[f64], penalty: &[f64], coef: &mut [f64], active: &[usize], g: &mut [f64]) -> bool {
    let mut active = active.to_vec();
    let mut moved = false;
    while !active.is_empty() {
        let k = active.len();
        let sub = Matrix::from_fn(k, k, |r, s| gram.get(active[r], active[s]));
        let Some(l) = linalg::cholesky(&sub) else {
            break;
        };
        let mut in_active = vec![false; coef.len()];
        for &j in &active {
            in_active[j] = true;
        }
        let rhs: Vec<f64> = active
            .iter()
            .map(|&j| {
                let outside: f64 = (0..coef.len())
                    .filter(|&i| coef[i] != 0.0 && !in_active[i])
                    .map(|i| gram.get(j, i) * coef[i])
                    .sum();
                c[j] - outside - penalty[j] * coef[j].signum()
            })
            .collect();
        let sol = linalg::cholesky_solve(&l, &rhs);
        if sol.iter().any(|b| !b.is_finite()) {
            break;
        }
        // Largest step that keeps every penalized coordinate in its orthant.
        let mut step = 1.0;
        let mut blocking = None;
        for (r, &j) in active.iter().enumerate() {
            let (b, target) = (coef[j], sol[r]);
            if penalty[j] > 0.0 && (target == 0.0 || (target > 0.0) != (b > 0.0)) {
                let t = b / (b - target);
                if t < step {
                    step = t;
                    blocking = Some(r);
                }
            }
        }
        for (r, &j) in active.iter().enumerate() {
            coef[j] += step * (sol[r] - coef[j]);
        }
        moved = true;
        match blocking {
            Some(r) => {
                coef[active[r]] = 0.0;
                active.remove(r);
            }
            None => break,
        }
    }
    if moved {
        g.copy_from_slice(c);
        for (j, &bj) in coef.iter().enumerate() {
            if bj != 0.0 {
                linalg::axpy(-bj, gram.col(j), g);
            }
        }
    }
    moved
}

/// `[x, phi / scale]` together with the scales; zero-energy basis columns
/// get scale 0 and an all-zero standardized column.
fn standardized_design(problem: &LassoProblem<'_>) -> (Matrix, Vec<f64>) {
    let n = problem.z.len();
    let m = problem.phi.ncols();
    let rms: Vec<f64> = (0..m)
        .map(|j| math::sqrt(problem.phi.col(j).iter().map(|v| v * v).sum::<f64>() / n.max(1) as f64))
        .collect();
    let top = rms.iter().copied().fold(0.0, f64::max);
    let scales: Vec<f64> = rms.iter().map(|&s| if s > 1e-12 * top && s > 0.0 { s } else { 0.0 }).collect();
    let mut scaled = problem.phi.clone();
    for (j, &s) in scales.iter().enumerate() {
        let col = scaled.col_mut(j);
        if s > 0.0 {
            col.iter_mut().for_each(|v| *v /= s);
        } else {
            col.iter_mut().for_each(|v| *v = 0.0);
        }
    }
    (problem.x.hcat(&scaled), scales)
}

fn half_deviance(family: Family, z: &[f64], eta: &[f64]) -> f64 {
    0.5 * z.iter().zip(eta).map(|(&zi, &e)| family.unit_deviance(zi, family.mean(e))).sum::<f64>()
}

fn penalized_objective(family: Family, z: &[f64], eta: &[f64], coef: &[f64], p: usize, lambda: f64) -> f64 {
    half_deviance(family, z, eta) + lambda * coef[p..].iter().map(|c| c.abs()).sum::<f64>()
}

enum IrlsOutcome {
    Converged,
    MaxIterations,
    NonFinite,
}

/// Proximal-Newton (IRLS + coordinate descent) solve at one lambda,
/// warm-started from `coef`.
fn fit_at_lambda(
    a: &Matrix,
    penalty_factor: &[f64],
    z: &[f64],
    family: Family,
    lambda: f64,
    coef: &mut Vec<f64>,
    opts: &LassoOptions,
) -> IrlsOutcome {
    let n = z.len();
    let p_unpen = penalty_factor.iter().take_while(|&&f| f == 0.0).count();
    let penalty: Vec<f64> = penalty_factor.iter().map(|f| f * lambda).collect();
    let mut eta = a.mul_vec(coef);
    let mut objective = penalized_objective(family, z, &eta, coef, p_unpen, lambda);
    if !objective.is_finite() {
        return IrlsOutcome::NonFinite;
    }
    let mut w = vec![0.0; n];
    let mut y = vec![0.0; n];
    for _ in 0..opts.max_irls {
        for i in 0..n {
            let mu = family.mean(eta[i]);
            let wi = match family {
                Family::Poisson => mu.max(1e-10),
                Family::Bernoulli => (mu * (1.0 - mu)).max(1e-5),
            };
            w[i] = wi;
            y[i] = eta[i] + (z[i] - mu) / wi;
        }
        if w.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return IrlsOutcome::NonFinite;
        }
        let previous = coef.clone();
        let inner_ok = weighted_lasso_cd(a, &y, &w, &penalty, coef, opts.tol, opts.max_sweeps);
        let mut new_eta = a.mul_vec(coef);
        let mut new_obj = penalized_objective(family, z, &new_eta, coef, p_unpen, lambda);
        let mut halvings = 0;
        while !(new_obj.is_finite() && new_obj <= objective + 1e-12 * objective.abs().max(1.0)) && halvings < 30 {
            for (c, old) in coef.iter_mut().zip(&previous) {
                *c = 0.5 * (*c + old);
            }
            new_eta = a.mul_vec(coef);
            new_obj = penalized_objective(family, z, &new_eta, coef, p_unpen, lambda);
            halvings += 1;
        }
        if !new_obj.is_finite() {
            return IrlsOutcome::NonFinite;
        }
        let change = (objective - new_obj).abs() / (new_obj.abs() + 0.1);
        eta = new_eta;
        objective = new_obj;
        if change < 1e-9 {
            return if inner_ok { IrlsOutcome::Converged } else { IrlsOutcome::MaxIterations };
        }
    }
    IrlsOutcome::MaxIterations
}

/// Unpenalized GLM on `x` alone and the largest score magnitude over the
/// standardized basis columns at that fit.
fn null_fit(problem: &LassoProblem<'_>, a: &Matrix) -> Result<(Vec<f64>, f64)> {
    let p = problem.x.ncols();
    let fit = glm::fit_glm_design(problem.x, problem.z, problem.family, &GlmOptions::default())?;
    let r: Vec<f64> = problem.z.iter().zip(&fit.fitted).map(|(z, mu)| z - mu).collect();
    let lambda_max = (p..a.ncols()).map(|j| linalg::dot(a.col(j), &r).abs()).fold(0.0, f64::max);
    // Slack for the residual error of the unpenalized fit.
    Ok((fit.beta_hat, lambda_max * (1.0 + 1e-7)))
}

/// Smallest lambda at which every basis coefficient is zero.
pub fn lambda_max(problem: &LassoProblem<'_>) -> Result<f64> {
    problem.validate()?;
    let (a, _) = standardized_design(problem);
    Ok(null_fit(problem, &a)?.1)
}

/// `n` log-spaced values from `lambda_max` down to `ratio * lambda_max`.
pub fn lambda_grid(lambda_max: f64, n: usize, ratio: f64) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lambda_max],
        _ => (0..n).map(|i| lambda_max * math::powf(ratio, i as f64 / (n - 1) as f64)).collect(),
    }
}

fn check_lambdas(lambdas: &[f64]) -> Result<()> {
    if lambdas.is_empty() {
        return Err(Error::Argument("empty lambda grid".into()));
    }
    if lambdas.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
        return Err(Error::Argument("lambdas must be finite and non-negative".into()));
    }
    if lambdas.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::Argument("lambdas must be strictly decreasing".into()));
    }
    Ok(())
}

/// Fit the whole path with warm starts. Stops early, flagging truncation,
/// when working weights or the objective become non-finite, or once the fit
/// saturates: deviance ratio above 0.999, as many coefficients as rows, or
/// a relative gain in deviance ratio below 1e-5 after the fifth lambda.
pub fn lasso_path(problem: &LassoProblem<'_>, lambdas: &[f64], opts: &LassoOptions) -> Result<LassoPath> {
    problem.validate()?;
    check_lambdas(lambdas)?;
    let p = problem.x.ncols();
    let m = problem.phi.ncols();
    let (a, scales) = standardized_design(problem);
    let (beta0, _) = null_fit(problem, &a)?;
    let mut coef = beta0;
    coef.resize(p + m, 0.0);
    let null_deviance = 2.0 * half_deviance(problem.family, problem.z, &a.mul_vec(&coef));
    let n = problem.z.len();
    let penalty_factor: Vec<f64> = (0..p + m).map(|j| if j < p { 0.0 } else { 1.0 }).collect();

    let mut fits = Vec::with_capacity(lambdas.len());
    let mut truncated = false;
    for &lambda in lambdas {
        let mut trial = coef.clone();
        let outcome = fit_at_lambda(&a, &penalty_factor, problem.z, problem.family, lambda, &mut trial, opts);
        if matches!(outcome, IrlsOutcome::NonFinite) || trial.iter().any(|c| !c.is_finite()) {
            truncated = true;
            break;
        }
        coef = trial;
        let eta = a.mul_vec(&coef);
        let delta: Vec<f64> = coef[p..]
            .iter()
            .zip(&scales)
            .map(|(&d, &s)| if s > 0.0 { d / s } else { 0.0 })
            .collect();
        let active_set: Vec<usize> = (0..m).filter(|&j| delta[j] != 0.0).collect();
        let deviance = 2.0 * half_deviance(problem.family, problem.z, &eta);
        // Deviance ratio and its gain over the previous lambda.
        let ratio = 1.0 - deviance / null_deviance;
        let gain = ratio - fits.last().map_or(0.0, |f: &LassoFit| 1.0 - f.deviance / null_deviance);
        let saturated = active_set.len() + p >= n || ratio > 0.999 || (fits.len() >= 5 && gain < 1e-5 * ratio);
        fits.push(LassoFit {
            beta: coef[..p].to_vec(),
            delta,
            lambda,
            active_set,
            deviance,
            converged: matches!(outcome, IrlsOutcome::Converged),
        });
        if saturated && fits.len() < lambdas.len() {
            truncated = true;
            break;
        }
    }
    Ok(LassoPath { lambdas: lambdas.to_vec(), fits, truncated, scales })
}

/// Linear predictor of a fit on new rows.
pub fn predict_eta(x: &Matrix, phi: &Matrix, fit: &LassoFit) -> Vec<f64> {
    let mut eta = x.mul_vec(&fit.beta);
    for (j, &d) in fit.delta.iter().enumerate() {
        if d != 0.0 {
            linalg::axpy(d, phi.col(j), &mut eta);
        }
    }
    eta
}

/// Seeded assignment of `n` rows to `folds` folds of near-equal size.
pub fn fold_assignment(n: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut fold = vec![0; n];
    for (pos, &i) in perm.iter().enumerate() {
        fold[i] = pos % folds;
    }
    fold
}

/// K-fold cross-validated mean held-out deviance at each lambda.
pub fn cross_validate(problem: &LassoProblem<'_>, lambdas: &[f64], opts: &LassoOptions) -> Result<CvCurve> {
    problem.validate()?;
    check_lambdas(lambdas)?;
    if opts.folds < 2 {
        return Err(Error::Argument("cross-validation needs at least 2 folds".into()));
    }
    let n = problem.z.len();
    let fold = fold_assignment(n, opts.folds, opts.cv_seed);
    let mut total = vec![0.0; lambdas.len()];
    for f in 0..opts.folds {
        let train: Vec<usize> = (0..n).filter(|&i| fold[i] != f).collect();
        let test: Vec<usize> = (0..n).filter(|&i| fold[i] == f).collect();
        let (xt, pt) = (problem.x.select_rows(&train), problem.phi.select_rows(&train));
        let zt: Vec<f64> = train.iter().map(|&i| problem.z[i]).collect();
        let sub = LassoProblem { x: &xt, phi: &pt, z: &zt, family: problem.family };
        let path = lasso_path(&sub, lambdas, opts)?;
        let (xv, pv) = (problem.x.select_rows(&test), problem.phi.select_rows(&test));
        for (t, acc) in total.iter_mut().enumerate() {
            match path.fits.get(t) {
                Some(fit) => {
                    let eta = predict_eta(&xv, &pv, fit);
                    let dev: f64 = test
                        .iter()
                        .zip(&eta)
                        .map(|(&i, &e)| problem.family.unit_deviance(problem.z[i], problem.family.mean(e)))
                        .sum();
                    *acc += if dev.is_finite() { dev } else { f64::INFINITY };
                }
                None => *acc = f64::INFINITY,
            }
        }
    }
    let mean_deviance = total.into_iter().map(|t| t / opts.folds as f64).collect();
    Ok(CvCurve { lambdas: lambdas.to_vec(), mean_deviance })
}

/// Index of the lambda minimizing CV deviance; ties go to the larger lambda.
pub fn select_lambda(cv: &CvCurve) -> usize {
    let mut best = 0;
    for (i, &d) in cv.mean_deviance.iter().enumerate() {
        if d < cv.mean_deviance[best] {
            best = i;
        }
    }
    best
}

/// Full knot-selection fit: default lambda grid, path, cross-validation and
/// choice of the selected fit.
pub fn lasso_path_fit(problem: &LassoProblem<'_>, opts: &LassoOptions) -> Result<LassoSelection> {
    problem.validate()?;
    let lmax = lambda_max(problem)?;
    if problem.phi.ncols() == 0 || !(lmax > 0.0) {
        let path = lasso_path(problem, &[lmax.max(0.0)], opts)?;
        let fit = path.fits[0].clone();
        return Ok(LassoSelection { fit, selected: 0, lambda_max: lmax, path, cv: None });
    }
    let lambdas = lambda_grid(lmax, opts.n_lambda.max(2), opts.lambda_min_ratio);
    let path = lasso_path(problem, &lambdas, opts)?;
    if path.fits.is_empty() {
        return Err(Error::Conditioning("lasso path failed at lambda_max".into()));
    }
    let cv = cross_validate(problem, &lambdas, opts)?;
    let selected = select_lambda(&cv).min(path.fits.len() - 1);
    Ok(LassoSelection { fit: path.fits[selected].clone(), selected, lambda_max: lmax, path, cv: Some(cv) })
}

/// Largest relative violation of the lasso optimality conditions at `fit`,
/// measured on the standardized basis scale. Zero means exact optimality.
pub fn kkt_violation(problem: &LassoProblem<'_>, fit: &LassoFit, scales: &[f64]) -> f64 {
    let eta = predict_eta(problem.x, problem.phi, fit);
    let r: Vec<f64> = problem.z.iter().zip(&eta).map(|(&z, &e)| z - problem.family.mean(e)).collect();
    let lambda = fit.lambda;
    let mut worst: f64 = 0.0;
    for (j, &s) in scales.iter().enumerate() {
        if s == 0.0 {
            continue;
        }
        // Score of the standardized coefficient.
        let g = linalg::dot(problem.phi.col(j), &r) / s;
        let v = if fit.delta[j] == 0.0 {
            ((g.abs() - lambda) / lambda.max(1e-300)).max(0.0)
        } else {
            (g - lambda * fit.delta[j].signum()).abs() / lambda.max(1e-300)
        };
        worst = worst.max(v);
    }
    // Unpenalized coefficients must have zero score.
    let scale = lambda.max(1.0);
    for j in 0..problem.x.ncols() {
        worst = worst.max(linalg::dot(problem.x.col(j), &r).abs() / scale);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn soft_threshold_values() {
        assert!((soft_threshold(0.8, 0.5) - 0.3).abs() < 1e-15);
        assert!((soft_threshold(-0.8, 0.5) + 0.3).abs() < 1e-15);
        assert_eq!(soft_threshold(0.2, 0.5), 0.0);
    }

    #[test]
    fn orthonormal_quadratic_is_soft_thresholding() {
        // Two orthonormal columns.
        let s = 1.0 / math::sqrt(2.0);
        let a = Matrix::from_rows(&[vec![s, s], vec![s, -s]]);
        let y = [0.8 * s + 0.1 * s, 0.8 * s - 0.1 * s];
        let mut coef = vec![0.0, 0.0];
        assert!(weighted_lasso_cd(&a, &y, &[1.0, 1.0], &[0.5, 0.5], &mut coef, 1e-12, 100));
        assert!((coef[0] - 0.3).abs() < 1e-12);
        assert_eq!(coef[1], 0.0);
    }

    fn poisson_problem(seed: u64, n: usize, m: usize) -> (Matrix, Matrix, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Matrix::from_fn(n, 2, |_, j| if j == 0 { 1.0 } else { StandardNormal.sample(&mut rng) });
        let phi = Matrix::from_fn(n, m, |_, _| StandardNormal.sample(&mut rng));
        let z: Vec<f64> = (0..n)
            .map(|i| {
                let eta = 0.3 + 0.5 * x.get(i, 1) + 0.4 * phi.get(i, 0) - 0.3 * phi.get(i, 1);
                let mu = math::exp(eta);
                // Inverse-CDF Poisson draw.
                let u: f64 = rng.random();
                let (mut k, mut p, mut c) = (0.0, math::exp(-mu), math::exp(-mu));
                while u > c && k < 100.0 {
                    k += 1.0;
                    p *= mu / k;
                    c += p;
                }
                k
            })
            .collect();
        (x, phi, z)
    }

    #[test]
    fn lambda_max_gives_empty_active_set() {
        let (x, phi, z) = poisson_problem(3, 300, 8);
        let problem = LassoProblem { x: &x, phi: &phi, z: &z, family: Family::Poisson };
        let lmax = lambda_max(&problem).unwrap();
        let path = lasso_path(&problem, &[lmax * 1.01, lmax], &LassoOptions::default()).unwrap();
        assert!(path.fits.iter().all(|f| f.active_set.is_empty()));
        let glm = glm::fit_glm_design(&x, &z, Family::Poisson, &GlmOptions::default()).unwrap();
        for (a, b) in path.fits[0].beta.iter().zip(&glm.beta_hat) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn kkt_holds_along_path() {
        let (x, phi, z) = poisson_problem(5, 300, 8);
        let problem = LassoProblem { x: &x, phi: &phi, z: &z, family: Family::Poisson };
        let lmax = lambda_max(&problem).unwrap();
        let grid = lambda_grid(lmax, 20, 1e-2);
        let path = lasso_path(&problem, &grid, &LassoOptions::default()).unwrap();
        assert!(!path.truncated);
        for fit in &path.fits {
            assert!(kkt_violation(&problem, fit, &path.scales) < 1e-4, "lambda {}", fit.lambda);
        }
    }

    #[test]
    fn zero_penalty_matches_unpenalized_glm() {
        let (x, phi, z) = poisson_problem(9, 200, 10);
        let problem = LassoProblem { x: &x, phi: &phi, z: &z, family: Family::Poisson };
        let lmax = lambda_max(&problem).unwrap();
        let mut grid = lambda_grid(lmax, 10, 1e-3);
        grid.push(0.0);
        let path = lasso_path(&problem, &grid, &LassoOptions::default()).unwrap();
        let last = path.fits.last().unwrap();
        assert_eq!(last.lambda, 0.0);
        let full = glm::fit_glm_design(&x.hcat(&phi), &z, Family::Poisson, &GlmOptions::default()).unwrap();
        let coefs: Vec<f64> = last.beta.iter().chain(&last.delta).copied().collect();
        for (a, b) in coefs.iter().zip(&full.beta_hat) {
            assert!((a - b).abs() < 1e-4, "{a} vs {b}");
        }
    }

    #[test]
    fn ties_prefer_larger_lambda() {
        let cv = CvCurve { lambdas: vec![3.0, 2.0, 1.0], mean_deviance: vec![5.0, 4.0, 4.0] };
        assert_eq!(select_lambda(&cv), 1);
        let cv = CvCurve { lambdas: vec![3.0, 2.0, 1.0], mean_deviance: vec![1.0, 4.0, 0.5] };
        assert_eq!(select_lambda(&cv), 2);
    }

    #[test]
    fn rejects_unsorted_grid() {
        let (x, phi, z) = poisson_problem(1, 50, 3);
        let problem = LassoProblem { x: &x, phi: &phi, z: &z, family: Family::Poisson };
        assert!(lasso_path(&problem, &[1.0, 2.0], &LassoOptions::default()).is_err());
    }
}
