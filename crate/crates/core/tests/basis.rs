use patchwork_core::basis::{
    candidate_knots, cross_validate, fold_assignment, kkt_violation, lambda_grid, lambda_max, lasso_path_fit,
    select_basis, tps_design, LassoOptions, LassoProblem,
};
use patchwork_core::{Family, Location, Matrix};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};

fn softplus(e: f64) -> f64 {
    e.max(0.0) + (-e.abs()).exp().ln_1p()
}

fn inv_link(family: Family, e: f64) -> f64 {
    match family {
        Family::Poisson => e.exp(),
        Family::Bernoulli => 1.0 / (1.0 + (-e).exp()),
    }
}

fn nll(family: Family, z: &[f64], eta: &[f64]) -> f64 {
    z.iter()
        .zip(eta)
        .map(|(&z, &e)| match family {
            Family::Poisson => e.exp() - z * e,
            Family::Bernoulli => softplus(e) - z * e,
        })
        .sum()
}

fn deviance(family: Family, z: f64, mu: f64) -> f64 {
    match family {
        Family::Poisson => 2.0 * (if z > 0.0 { z * (z / mu).ln() } else { 0.0 } - (z - mu)),
        Family::Bernoulli => -2.0 * if z > 0.5 { mu.ln() } else { (1.0 - mu).ln() },
    }
}

/// Accelerated proximal gradient with backtracking and restarts on the
/// standardized problem; the first `p` coefficients are unpenalized.
fn fista(a: &[Vec<f64>], z: &[f64], p: usize, lambda: f64, family: Family, start: Vec<f64>) -> Vec<f64> {
    let d = a[0].len();
    let eta = |b: &[f64]| a.iter().map(|r| r.iter().zip(b).map(|(x, c)| x * c).sum()).collect::<Vec<f64>>();
    let obj = |b: &[f64]| nll(family, z, &eta(b)) + lambda * b[p..].iter().map(|c| c.abs()).sum::<f64>();
    let grad = |b: &[f64]| {
        let e = eta(b);
        let mut g = vec![0.0; d];
        for (r, (&ei, &zi)) in a.iter().zip(e.iter().zip(z)) {
            let res = inv_link(family, ei) - zi;
            for (gj, x) in g.iter_mut().zip(r) {
                *gj += res * x;
            }
        }
        g
    };
    let mut x = start;
    let mut y = x.clone();
    let mut t = 1.0f64;
    let mut step_l = 1.0;
    let mut f_x = obj(&x);
    for _ in 0..100_000 {
        let g = grad(&y);
        let f_y = nll(family, z, &eta(&y));
        let x_new = loop {
            let cand: Vec<f64> = (0..d)
                .map(|j| {
                    let v = y[j] - g[j] / step_l;
                    if j < p { v } else { v.signum() * (v.abs() - lambda / step_l).max(0.0) }
                })
                .collect();
            let diff: Vec<f64> = cand.iter().zip(&y).map(|(c, y)| c - y).collect();
            let bound = f_y
                + g.iter().zip(&diff).map(|(g, d)| g * d).sum::<f64>()
                + 0.5 * step_l * diff.iter().map(|d| d * d).sum::<f64>();
            if nll(family, z, &eta(&cand)) <= bound + 1e-14 * bound.abs() {
                break cand;
            }
            step_l *= 2.0;
        };
        let f_new = obj(&x_new);
        let moved = x_new.iter().zip(&x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if moved < 1e-11 {
            break;
        }
        if f_new > f_x {
            // Momentum overshoot: drop the momentum.
            t = 1.0;
        }
        let t_new = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        y = x_new.iter().zip(&x).map(|(n, o)| n + (t - 1.0) / t_new * (n - o)).collect();
        x = x_new;
        f_x = f_new;
        t = t_new;
    }
    x
}

fn noise_problem(n: usize, m: usize, family: Family, seed: u64) -> (Matrix, Matrix, Vec<f64>) {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let x1: Vec<f64> = (0..n).map(|_| r.random::<f64>() - 0.5).collect();
    let x = Matrix::from_columns(n, &[vec![1.0; n], x1.clone()]);
    let phi = Matrix::from_fn(n, m, |_, _| StandardNormal.sample(&mut r));
    let z = x1
        .iter()
        .map(|&v| {
            let mu = inv_link(family, 0.5 + 0.3 * v);
            match family {
                Family::Poisson => Poisson::new(mu).unwrap().sample(&mut r),
                Family::Bernoulli => f64::from(u8::from(r.random::<f64>() < mu)),
            }
        })
        .collect();
    (x, phi, z)
}

fn check_cv_by_refitting(family: Family, seed: u64) {
    let (n, m) = (250, 8);
    let (x, phi, z) = noise_problem(n, m, family, seed);
    let problem = LassoProblem { x: &x, phi: &phi, z: &z, family };
    let opts = LassoOptions { folds: 5, cv_seed: seed, ..LassoOptions::default() };
    let lambdas = lambda_grid(lambda_max(&problem).unwrap(), 12, 0.05);
    let cv = cross_validate(&problem, &lambdas, &opts).unwrap();

    let fold = fold_assignment(n, 5, seed);
    let mut oracle = vec![0.0; lambdas.len()];
    for f in 0..5 {
        let train: Vec<usize> = (0..n).filter(|&i| fold[i] != f).collect();
        let test: Vec<usize> = (0..n).filter(|&i| fold[i] == f).collect();
        let scales: Vec<f64> = (0..m)
            .map(|j| (train.iter().map(|&i| phi.get(i, j).powi(2)).sum::<f64>() / train.len() as f64).sqrt())
            .collect();
        let row = |i: usize| -> Vec<f64> {
            let mut r = x.row(i);
            r.extend((0..m).map(|j| phi.get(i, j) / scales[j]));
            r
        };
        let a: Vec<Vec<f64>> = train.iter().map(|&i| row(i)).collect();
        let zt: Vec<f64> = train.iter().map(|&i| z[i]).collect();
        let mut b = vec![0.0; m + 2];
        for (t, &lambda) in lambdas.iter().enumerate() {
            if !cv.mean_deviance[t].is_finite() {
                continue;
            }
            b = fista(&a, &zt, 2, lambda, family, b);
            for &i in &test {
                let e: f64 = row(i).iter().zip(&b).map(|(v, c)| v * c).sum();
                oracle[t] += deviance(family, z[i], inv_link(family, e)) / 5.0;
            }
        }
    }
    let mut compared = 0;
    for (t, (&got, &want)) in cv.mean_deviance.iter().zip(&oracle).enumerate() {
        if got.is_finite() {
            assert!((got - want).abs() <= 1e-6 * want, "{family:?} lambda {t}: {got} vs {want}");
            compared += 1;
        }
    }
    assert!(compared >= 5, "only {compared} finite CV points");

    let sel = lasso_path_fit(&problem, &opts).unwrap();
    assert!(sel.fit.active_set.len() <= 3, "noise columns kept: {:?}", sel.fit.active_set);
}

#[test]
fn cv_deviance_matches_independent_refits_on_noise_poisson() {
    check_cv_by_refitting(Family::Poisson, 21);
}

#[test]
fn cv_deviance_matches_independent_refits_on_noise_bernoulli() {
    check_cv_by_refitting(Family::Bernoulli, 22);
}

#[test]
fn l_shaped_domain_drops_empty_grid_points() {
    let mut r = ChaCha8Rng::seed_from_u64(4);
    let mut locs = Vec::new();
    while locs.len() < 3000 {
        let s = Location::new(r.random(), r.random());
        if s.x < 0.5 || s.y < 0.5 {
            locs.push(s);
        }
    }
    let knots = candidate_knots(&locs, 100);
    assert!(knots.len() < 100 && knots.len() > 60, "{}", knots.len());

    let (x0, x1) = locs.iter().fold((f64::MAX, f64::MIN), |(a, b), s| (a.min(s.x), b.max(s.x)));
    let (y0, y1) = locs.iter().fold((f64::MAX, f64::MIN), |(a, b), s| (a.min(s.y), b.max(s.y)));
    let (dx, dy) = ((x1 - x0) / 10.0, (y1 - y0) / 10.0);
    let spacing = dx.max(dy);
    let mut expected = Vec::new();
    for j in 0..10 {
        for i in 0..10 {
            let u = Location::new(x0 + (i as f64 + 0.5) * dx, y0 + (j as f64 + 0.5) * dy);
            let nearest = locs.iter().map(|s| s.dist(&u)).fold(f64::INFINITY, f64::min);
            if nearest <= spacing {
                expected.push(u);
            }
        }
    }
    assert_eq!(knots, expected);
    assert!(knots.iter().all(|u| !(u.x > 0.6 && u.y > 0.6)));
}

#[test]
fn selected_tps_fit_satisfies_kkt() {
    let mut r = ChaCha8Rng::seed_from_u64(8);
    let n = 400;
    let locs: Vec<Location> = (0..n).map(|_| Location::new(r.random(), r.random())).collect();
    let x = Matrix::from_columns(n, &[vec![1.0; n]]);
    let z: Vec<f64> = locs
        .iter()
        .map(|s| Poisson::new((1.0 + (3.0 * s.x).sin() * s.y).exp()).unwrap().sample(&mut r))
        .collect();
    let (basis, sel) = select_basis(&locs, &x, &z, Family::Poisson, 36, &LassoOptions::default()).unwrap();
    assert!(!basis.selected.is_empty());
    let problem = LassoProblem { x: &x, phi: &basis.design, z: &z, family: Family::Poisson };
    assert!(kkt_violation(&problem, &sel.fit, &sel.path.scales) < 1e-4);
}

#[test]
fn tps_at_distance_e_is_e_squared() {
    let e = std::f64::consts::E;
    let d = tps_design(&[Location::new(0.0, 0.0)], &[Location::new(e * 0.6, e * 0.8)]);
    assert!((d.get(0, 0) - e * e).abs() < 1e-13);
}

proptest! {
    #[test]
    fn tps_design_is_rigid_motion_invariant(
        pts in proptest::collection::vec((0.0f64..1.0, 0.0f64..1.0), 2..12),
        angle in 0.0f64..std::f64::consts::TAU,
        tx in -5.0f64..5.0,
        ty in -5.0f64..5.0,
    ) {
        let (c, s) = (angle.cos(), angle.sin());
        let locs: Vec<Location> = pts.iter().map(|&(x, y)| Location::new(x, y)).collect();
        let moved: Vec<Location> = locs.iter().map(|p| Location::new(c * p.x - s * p.y + tx, s * p.x + c * p.y + ty)).collect();
        let (half, rest) = locs.split_at(locs.len() / 2);
        let (mhalf, mrest) = moved.split_at(moved.len() / 2);
        let a = tps_design(rest, half);
        let b = tps_design(mrest, mhalf);
        for (u, v) in a.as_col_major().iter().zip(b.as_col_major()) {
            prop_assert!((u - v).abs() < 1e-12, "{} vs {}", u, v);
        }
    }
}
