use patchwork_core::clustering::{
    agglomerate_points, cluster_dissimilarity, mean_cross_distance, partition_domain, voronoi_neighbors, Adjacency,
    ClusterSummary,
};
use patchwork_core::Location;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_points(n: usize, seed: u64) -> Vec<Location> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| Location::new(r.random(), r.random())).collect()
}

/// Strictly inside the circumcircle of (a, b, c), by the classic
/// in-circle determinant.
fn in_circle(a: Location, b: Location, c: Location, d: Location) -> bool {
    let orient = (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x);
    let row = |p: Location| {
        let (dx, dy) = (p.x - d.x, p.y - d.y);
        (dx, dy, dx * dx + dy * dy)
    };
    let (ax, ay, a2) = row(a);
    let (bx, by, b2) = row(b);
    let (cx, cy, c2) = row(c);
    let det = ax * (by * c2 - b2 * cy) - ay * (bx * c2 - b2 * cx) + a2 * (bx * cy - by * cx);
    det * orient.signum() > 0.0
}

fn brute_force_delaunay_edges(p: &[Location]) -> Vec<(usize, usize)> {
    let n = p.len();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            for k in j + 1..n {
                let area = (p[j].x - p[i].x) * (p[k].y - p[i].y) - (p[j].y - p[i].y) * (p[k].x - p[i].x);
                if area.abs() < 1e-14 {
                    continue;
                }
                if (0..n).filter(|&l| l != i && l != j && l != k).all(|l| !in_circle(p[i], p[j], p[k], p[l])) {
                    edges.extend([(i, j), (i, k), (j, k)]);
                }
            }
        }
    }
    edges.sort();
    edges.dedup();
    edges
}

#[test]
fn voronoi_neighbors_match_empty_circle_triangulation() {
    for seed in 0..20 {
        let p = random_points(6 + seed as usize, seed);
        let adj = voronoi_neighbors(&p).unwrap();
        assert_eq!(adj.edges(), brute_force_delaunay_edges(&p), "seed {seed}");
    }
}

/// Greedy merging recomputed from scratch each step. Cluster ids are the
/// smallest member, ties go to the lexicographically smallest id pair.
fn naive_agglomerate(points: &[Location], values: &[f64], adj: &Adjacency, k: usize) -> Vec<Vec<usize>> {
    let mut clusters: Vec<Vec<usize>> = (0..points.len()).map(|i| vec![i]).collect();
    while clusters.len() > k {
        let mut best: Option<(f64, usize, usize)> = None;
        for a in 0..clusters.len() {
            for b in 0..clusters.len() {
                let (ca, cb) = (&clusters[a], &clusters[b]);
                if ca[0] >= cb[0] || !ca.iter().any(|&i| cb.iter().any(|&j| adj.contains(i, j))) {
                    continue;
                }
                let mean = |c: &[usize]| c.iter().map(|&i| values[i]).sum::<f64>() / c.len() as f64;
                let mut dist = 0.0;
                for &i in ca {
                    for &j in cb {
                        dist += points[i].dist(&points[j]);
                    }
                }
                dist /= (ca.len() * cb.len()) as f64;
                let (na, nb) = (ca.len() as f64, cb.len() as f64);
                let d = na * nb / (na + nb) * (mean(ca) - mean(cb)).powi(2) / dist;
                let better = match best {
                    None => true,
                    Some((bd, ba, bb)) => d < bd || (d == bd && (ca[0], cb[0]) < (clusters[ba][0], clusters[bb][0])),
                };
                if better {
                    best = Some((d, a, b));
                }
            }
        }
        let (_, a, b) = best.expect("graph is connected");
        let absorbed = clusters.remove(b);
        let a = if b < a { a - 1 } else { a };
        clusters[a].extend(absorbed);
        clusters[a].sort();
        clusters.sort_by_key(|c| c[0]);
    }
    clusters
}

fn groups(labels: &[usize], k: usize) -> Vec<Vec<usize>> {
    let mut g = vec![Vec::new(); k];
    for (i, &l) in labels.iter().enumerate() {
        g[l].push(i);
    }
    g.sort();
    g
}

#[test]
fn chain_example_splits_between_the_pairs() {
    let points: Vec<Location> = (0..4).map(|i| Location::new(i as f64, 0.0)).collect();
    let (labels, merges) = agglomerate_points(&points, &[0.0, 0.1, 5.0, 5.1], &Adjacency::chain(4), 2).unwrap();
    assert_eq!(groups(&labels, 2), vec![vec![0, 1], vec![2, 3]]);
    assert_eq!(merges.len(), 2);
}

#[test]
fn greedy_merges_match_naive_recomputation_on_chains() {
    let mut r = ChaCha8Rng::seed_from_u64(3);
    for n in 2..=8 {
        for _ in 0..25 {
            let points: Vec<Location> = (0..n).map(|i| Location::new(i as f64 + r.random::<f64>() * 0.5, 0.0)).collect();
            let values: Vec<f64> = (0..n).map(|_| r.random::<f64>() * 4.0 - 2.0).collect();
            let adj = Adjacency::chain(n);
            for k in 1..=n {
                let (labels, _) = agglomerate_points(&points, &values, &adj, k).unwrap();
                assert_eq!(groups(&labels, k), naive_agglomerate(&points, &values, &adj, k), "n {n} k {k}");
            }
        }
    }
}

#[test]
fn greedy_merges_match_naive_recomputation_on_triangulations() {
    for seed in 0..15 {
        let points = random_points(12, 100 + seed);
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let values: Vec<f64> = (0..12).map(|_| r.random::<f64>()).collect();
        let adj = voronoi_neighbors(&points).unwrap();
        for k in [1, 3, 5, 9] {
            let (labels, _) = agglomerate_points(&points, &values, &adj, k).unwrap();
            assert_eq!(groups(&labels, k), naive_agglomerate(&points, &values, &adj, k), "seed {seed} k {k}");
        }
    }
}

#[test]
fn dissimilarity_examples() {
    let a = ClusterSummary { size: 2, mean_residual: 1.0 };
    let b = ClusterSummary { size: 2, mean_residual: -1.0 };
    assert!((cluster_dissimilarity(&a, &b, 2.0).unwrap() - 2.0).abs() < 1e-15);
    let same = ClusterSummary { size: 5, mean_residual: 1.0 };
    assert_eq!(cluster_dissimilarity(&a, &same, 1.0).unwrap(), 0.0);
    assert!(cluster_dissimilarity(&a, &b, 0.0).is_err());
    let pa = [Location::new(0.0, 0.0)];
    let pb = [Location::new(3.0, 4.0), Location::new(0.0, 1.0)];
    assert!((mean_cross_distance(&pa, &pb) - 3.0).abs() < 1e-15);
}

#[test]
fn domain_partition_covers_every_observation() {
    let locs = random_points(500, 9);
    let res: Vec<f64> = locs.iter().map(|l| if l.x < 0.5 { -1.0 } else { 1.0 }).collect();
    let dp = partition_domain(&locs, &res, 100, 2).unwrap();
    assert_eq!(dp.partitioning.labels.len(), 500);
    let members = dp.partitioning.lattice_members();
    for m in &members {
        assert!(dp.adjacency.is_connected_subset(m));
    }
    // A residual step at x = 0.5 is where the two regions meet.
    let left = |c: &Vec<usize>| c.iter().filter(|&&i| dp.lattice.points[i].x < 0.5).count();
    for m in &members {
        let l = left(m);
        assert!(l == 0 || l == m.len(), "{l} of {}", m.len());
    }
}

fn field() -> impl Strategy<Value = (Vec<(f64, f64)>, Vec<f64>, usize)> {
    (4usize..25).prop_flat_map(|n| {
        (
            proptest::collection::vec((0.0f64..1.0, 0.0f64..1.0), n),
            proptest::collection::vec(-3.0f64..3.0, n),
            1..=n,
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn agglomeration_yields_k_connected_clusters((pts, values, k) in field()) {
        let points: Vec<Location> = pts.iter().map(|&(x, y)| Location::new(x, y)).collect();
        let Ok(adj) = voronoi_neighbors(&points) else { return Ok(()) };
        let n = points.len();
        let (labels, merges) = agglomerate_points(&points, &values, &adj, k).unwrap();
        prop_assert_eq!(merges.len(), n - k);
        let g = groups(&labels, k);
        prop_assert_eq!(g.iter().map(Vec::len).sum::<usize>(), n);
        for c in &g {
            prop_assert!(!c.is_empty());
            prop_assert!(adj.is_connected_subset(c));
        }
    }

    #[test]
    fn shifting_residuals_leaves_clusters_unchanged((pts, values, k) in field(), shift in -10.0f64..10.0) {
        let points: Vec<Location> = pts.iter().map(|&(x, y)| Location::new(x, y)).collect();
        let Ok(adj) = voronoi_neighbors(&points) else { return Ok(()) };
        let shifted: Vec<f64> = values.iter().map(|v| v + shift).collect();
        let (a, _) = agglomerate_points(&points, &values, &adj, k).unwrap();
        let (b, _) = agglomerate_points(&points, &shifted, &adj, k).unwrap();
        prop_assert_eq!(groups(&a, k), groups(&b, k));
    }

    #[test]
    fn dissimilarity_is_symmetric(na in 1usize..50, nb in 1usize..50, ra in -5.0f64..5.0, rb in -5.0f64..5.0, d in 0.01f64..3.0) {
        let a = ClusterSummary { size: na, mean_residual: ra };
        let b = ClusterSummary { size: nb, mean_residual: rb };
        let ab = cluster_dissimilarity(&a, &b, d).unwrap();
        prop_assert_eq!(ab, cluster_dissimilarity(&b, &a, d).unwrap());
        prop_assert!(ab >= 0.0);
    }
}
