use patchwork_core::smoothing::{tune_gamma, weights_from_distances, GlobalPredictor, PartitionFit};
use patchwork_core::{Family, Location, Matrix};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tps(s: &Location, u: &Location) -> f64 {
    let r = ((s.x - u.x).powi(2) + (s.y - u.y).powi(2)).sqrt();
    if r > 0.0 { r * r * r.ln() } else { 0.0 }
}

fn random_parts(k: usize, with_draws: bool, seed: u64) -> Vec<PartitionFit> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    // Vertical strips so that every partition is a contiguous block.
    (0..k)
        .map(|j| {
            let x0 = j as f64 / k as f64;
            let w = 1.0 / k as f64;
            let locations: Vec<Location> = (0..40).map(|_| Location::new(x0 + w * r.random::<f64>(), r.random())).collect();
            let knots: Vec<Location> = locations.iter().step_by(8).copied().collect();
            let beta = vec![r.random::<f64>(), r.random::<f64>() - 0.5];
            let delta: Vec<f64> = knots.iter().map(|_| r.random::<f64>() - 0.5).collect();
            let draws = with_draws.then(|| Matrix::from_fn(7, 2 + knots.len(), |_, _| r.random::<f64>() - 0.5));
            PartitionFit { locations, knots, beta, delta, draws }
        })
        .collect()
}

/// Dense evaluation from scratch: every distance, every weight, every
/// basis term.
fn dense_eta(parts: &[PartitionFit], s: &Location, x: &[f64], gamma: f64, coef: impl Fn(usize) -> Vec<f64>) -> f64 {
    let d: Vec<f64> = parts
        .iter()
        .map(|p| p.locations.iter().map(|l| ((l.x - s.x).powi(2) + (l.y - s.y).powi(2)).sqrt()).fold(f64::INFINITY, f64::min))
        .collect();
    let home = (0..d.len()).fold(0, |b, k| if d[k] < d[b] { k } else { b });
    let mut w: Vec<f64> = d.iter().map(|&dk| if dk <= gamma { (-dk * dk).exp() } else { 0.0 }).collect();
    let total: f64 = w.iter().sum();
    if total == 0.0 {
        w[home] = 1.0;
    } else {
        w.iter_mut().for_each(|v| *v /= total);
    }
    let p = x.len();
    let c0 = coef(home);
    let mut eta: f64 = x.iter().zip(&c0[..p]).map(|(a, b)| a * b).sum();
    for (k, part) in parts.iter().enumerate() {
        if w[k] == 0.0 {
            continue;
        }
        let c = coef(k);
        eta += w[k] * part.knots.iter().zip(&c[p..]).map(|(u, dl)| tps(s, u) * dl).sum::<f64>();
    }
    eta
}

#[test]
fn global_eta_matches_dense_evaluation() {
    let parts = random_parts(5, false, 1);
    let mut r = ChaCha8Rng::seed_from_u64(2);
    for gamma in [0.01, 0.05, 0.2, 1.0, 5.0] {
        let pred = GlobalPredictor::new(parts.clone(), gamma).unwrap();
        for _ in 0..200 {
            let s = Location::new(r.random::<f64>() * 1.4 - 0.2, r.random::<f64>() * 1.4 - 0.2);
            let x = [1.0, r.random::<f64>()];
            let want = dense_eta(&parts, &s, &x, gamma, |k| {
                let mut c = parts[k].beta.clone();
                c.extend(&parts[k].delta);
                c
            });
            let got = pred.global_eta(&s, &x, None).unwrap();
            assert!((got - want).abs() < 1e-12, "gamma {gamma}: {got} vs {want}");
        }
    }
}

#[test]
fn draw_predictions_match_dense_evaluation() {
    let parts = random_parts(4, true, 3);
    let pred = GlobalPredictor::new(parts.clone(), 0.3).unwrap();
    let mut r = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..50 {
        let s = Location::new(r.random(), r.random());
        let x = [1.0, r.random::<f64>()];
        let idx = [0, 3, 6, 9];
        let got = pred.global_eta_draws(&s, &x, None, &idx).unwrap();
        for (&t, g) in idx.iter().zip(&got) {
            let want = dense_eta(&parts, &s, &x, 0.3, |k| parts[k].draws.as_ref().unwrap().row(t % 7));
            assert!((g - want).abs() < 1e-12);
        }
    }
}

#[test]
fn single_partition_is_the_local_model_for_any_radius() {
    let parts = random_parts(1, false, 5);
    let s = Location::new(0.3, 0.7);
    let x = [1.0, 0.4];
    let local = x[0] * parts[0].beta[0] + x[1] * parts[0].beta[1]
        + parts[0].knots.iter().zip(&parts[0].delta).map(|(u, d)| tps(&s, u) * d).sum::<f64>();
    for gamma in [1e-6, 0.1, 10.0] {
        let pred = GlobalPredictor::new(parts.clone(), gamma).unwrap();
        assert!((pred.global_eta(&s, &x, None).unwrap() - local).abs() < 1e-12);
    }
}

#[test]
fn tuning_picks_the_best_dense_score() {
    let parts = random_parts(3, false, 6);
    let mut r = ChaCha8Rng::seed_from_u64(7);
    let locs: Vec<Location> = (0..100).map(|_| Location::new(r.random(), r.random())).collect();
    let x = Matrix::from_fn(100, 2, |_, j| if j == 0 { 1.0 } else { r.random() });
    let z: Vec<f64> = (0..100).map(|_| f64::from(r.random_range(0..4u8))).collect();
    let gammas = [0.02, 0.1, 0.4];
    let pred = GlobalPredictor::new(parts.clone(), 0.1).unwrap();
    let t = tune_gamma(&pred, &locs, &x, &z, Family::Poisson, &gammas).unwrap();
    for &(g, score) in &t.scores {
        let sse: f64 = locs
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let eta = dense_eta(&parts, s, &x.row(i), g, |k| {
                    let mut c = parts[k].beta.clone();
                    c.extend(&parts[k].delta);
                    c
                });
                (z[i] - eta.exp()).powi(2)
            })
            .sum();
        assert!((score - (sse / 100.0).sqrt()).abs() < 1e-10);
    }
    let best = t.scores.iter().map(|s| s.1).fold(f64::INFINITY, f64::min);
    assert_eq!(t.scores.iter().find(|s| s.0 == t.best_gamma).unwrap().1, best);
}

proptest! {
    #[test]
    fn weights_sum_to_one(dists in proptest::collection::vec(0.0f64..3.0, 1..12), gamma in 0.001f64..4.0) {
        let w = weights_from_distances(&dists, gamma);
        let total: f64 = w.entries.iter().map(|e| e.1).sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        prop_assert!(w.entries.iter().all(|e| e.1 > 0.0));
    }

    #[test]
    fn support_grows_with_radius(dists in proptest::collection::vec(0.0f64..3.0, 1..12), g1 in 0.001f64..4.0, g2 in 0.001f64..4.0) {
        let (lo, hi) = if g1 <= g2 { (g1, g2) } else { (g2, g1) };
        let a = weights_from_distances(&dists, lo);
        let b = weights_from_distances(&dists, hi);
        if !a.fallback {
            prop_assert!(a.entries.iter().all(|(k, _)| b.weight(*k) > 0.0));
        }
        prop_assert!(b.entries.len() >= a.entries.len());
    }
}
