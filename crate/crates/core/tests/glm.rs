use patchwork_core::glm::{fit_glm_design, GlmOptions};
use patchwork_core::{Family, Matrix};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn mean(family: Family, e: f64) -> f64 {
    match family {
        Family::Poisson => e.exp(),
        Family::Bernoulli => 1.0 / (1.0 + (-e).exp()),
    }
}

/// Cyclic coordinate ascent; each coordinate solves its own score
/// equation by bisection, which is monotone in that coordinate.
fn coordinate_ascent(rows: &[[f64; 3]], z: &[f64], family: Family) -> [f64; 3] {
    let score = |b: &[f64; 3], j: usize| -> f64 {
        rows.iter().zip(z).map(|(r, &zi)| r[j] * (zi - mean(family, r[0] * b[0] + r[1] * b[1] + r[2] * b[2]))).sum()
    };
    let mut b = [0.0; 3];
    for _ in 0..5_000 {
        let old = b;
        for j in 0..3 {
            let (mut lo, mut hi) = (b[j] - 1.0, b[j] + 1.0);
            let at = |v: f64, b: &[f64; 3]| {
                let mut t = *b;
                t[j] = v;
                score(&t, j)
            };
            while at(lo, &b) < 0.0 {
                lo -= 1.0;
            }
            while at(hi, &b) > 0.0 {
                hi += 1.0;
            }
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if mid == lo || mid == hi {
                    break;
                }
                if at(mid, &b) > 0.0 { lo = mid } else { hi = mid }
            }
            b[j] = 0.5 * (lo + hi);
        }
        if (0..3).all(|j| (b[j] - old[j]).abs() < 1e-14) {
            break;
        }
    }
    b
}

fn data(family: Family, n: usize, seed: u64) -> (Vec<[f64; 3]>, Vec<f64>) {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<[f64; 3]> = (0..n).map(|_| [1.0, r.random::<f64>() * 2.0 - 1.0, r.random::<f64>()]).collect();
    let z = rows
        .iter()
        .map(|row| {
            let mu = mean(family, 0.2 + 0.7 * row[1] - 0.5 * row[2]);
            match family {
                Family::Poisson => {
                    // Knuth's multiplication method.
                    let (limit, mut k, mut p) = ((-mu).exp(), 0.0, 1.0);
                    loop {
                        p *= r.random::<f64>();
                        if p <= limit {
                            break k;
                        }
                        k += 1.0;
                    }
                }
                Family::Bernoulli => f64::from(u8::from(r.random::<f64>() < mu)),
            }
        })
        .collect();
    (rows, z)
}

fn design(rows: &[[f64; 3]]) -> Matrix {
    Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>())
}

#[test]
fn irls_agrees_with_coordinate_ascent() {
    for family in [Family::Poisson, Family::Bernoulli] {
        let (rows, z) = data(family, 600, 17);
        let fit = fit_glm_design(&design(&rows), &z, family, &GlmOptions::default()).unwrap();
        assert!(fit.converged);
        let oracle = coordinate_ascent(&rows, &z, family);
        for j in 0..3 {
            assert!((fit.beta_hat[j] - oracle[j]).abs() < 1e-8, "{family:?} beta{j}: {} vs {}", fit.beta_hat[j], oracle[j]);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn row_order_does_not_change_the_fit(seed in 0u64..10_000, bern in any::<bool>()) {
        let family = if bern { Family::Bernoulli } else { Family::Poisson };
        let (rows, z) = data(family, 300, seed);
        let mut idx: Vec<usize> = (0..rows.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed + 1));
        let rows2: Vec<[f64; 3]> = idx.iter().map(|&i| rows[i]).collect();
        let z2: Vec<f64> = idx.iter().map(|&i| z[i]).collect();
        let a = fit_glm_design(&design(&rows), &z, family, &GlmOptions::default()).unwrap();
        let b = fit_glm_design(&design(&rows2), &z2, family, &GlmOptions::default()).unwrap();
        for j in 0..3 {
            prop_assert!((a.beta_hat[j] - b.beta_hat[j]).abs() < 1e-10);
        }
        for (k, &i) in idx.iter().enumerate() {
            prop_assert!((a.residuals[i] - b.residuals[k]).abs() < 1e-10);
        }
    }
}
