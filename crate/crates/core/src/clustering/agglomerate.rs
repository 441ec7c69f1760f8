use alloc::collections::{BTreeMap, BinaryHeap};
use alloc::format;
use alloc::vec::Vec;
use core::cmp::Ordering;

use super::delaunay::Adjacency;
use super::lattice::Lattice;
use crate::data::Location;
use crate::{Error, Result};

/// Size and mean residual of a cluster of lattice points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterSummary {
    pub size: usize,
    pub mean_residual: f64,
}

/// Ward-type residual contrast between two clusters, divided by the mean
/// Euclidean distance between their points.
pub fn cluster_dissimilarity(a: &ClusterSummary, b: &ClusterSummary, mean_distance: f64) -> Result<f64> {
    if a.size == 0 || b.size == 0 {
        return Err(Error::Argument("dissimilarity of an empty cluster".into()));
    }
    if !(mean_distance > 0.0) {
        return Err(Error::DegenerateGeometry(format!(
            "mean cross-cluster distance must be positive, got {mean_distance}"
        )));
    }
    let (na, nb) = (a.size as f64, b.size as f64);
    let diff = a.mean_residual - b.mean_residual;
    Ok(na * nb / (na + nb) * diff * diff / mean_distance)
}

/// Mean distance over all cross pairs of two point sets.
pub fn mean_cross_distance(a: &[Location], b: &[Location]) -> f64 {
    cross_distance_sum(a.iter(), b) / (a.len() * b.len()) as f64
}

fn cross_distance_sum<'a>(a: impl Iterator<Item = &'a Location>, b: &[Location]) -> f64 {
    a.map(|p| b.iter().map(|q| p.dist(q)).sum::<f64>()).sum()
}

/// `K` contiguous regions over a lattice and the labels they induce.
#[derive(Debug, Clone, PartialEq)]
pub struct Partitioning {
    pub k: usize,
    /// Partition of every observation, in `0..k`.
    pub labels: Vec<usize>,
    /// Partition of every lattice point, in `0..k`.
    pub lattice_labels: Vec<usize>,
    /// Merge sequence as `(survivor, absorbed)` lattice cluster ids.
    pub merges: Vec<(usize, usize)>,
}

impl Partitioning {
    /// Observation count per partition.
    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = alloc::vec![0; self.k];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }

    /// Observation indices of each partition, ascending.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = alloc::vec![Vec::new(); self.k];
        for (i, &l) in self.labels.iter().enumerate() {
            out[l].push(i);
        }
        out
    }

    /// Lattice point indices of each partition.
    pub fn lattice_members(&self) -> Vec<Vec<usize>> {
        let mut out = alloc::vec![Vec::new(); self.k];
        for (i, &l) in self.lattice_labels.iter().enumerate() {
            out[l].push(i);
        }
        out
    }
}

struct Cluster {
    members: Vec<usize>,
    residual_sum: f64,
    /// Neighbouring cluster id -> sum of cross-pair distances.
    neighbors: BTreeMap<usize, f64>,
    version: u64,
}

impl Cluster {
    fn summary(&self) -> ClusterSummary {
        ClusterSummary { size: self.members.len(), mean_residual: self.residual_sum / self.members.len() as f64 }
    }
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    d: f64,
    lo: usize,
    hi: usize,
    ver_lo: u64,
    ver_hi: u64,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    // Reversed so that `BinaryHeap` pops the smallest dissimilarity, ties
    // broken toward the smallest cluster ids.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .d
            .total_cmp(&self.d)
            .then_with(|| other.lo.cmp(&self.lo))
            .then_with(|| other.hi.cmp(&self.hi))
    }
}

/// Greedy agglomeration of lattice cells into `k` clusters. Only adjacent
/// clusters merge; the merged cluster keeps the smaller id and the union of
/// both neighbourhoods.
pub fn agglomerate(lattice: &Lattice, adjacency: &Adjacency, k: usize) -> Result<Partitioning> {
    let lattice_labels = agglomerate_points(&lattice.points, &lattice.avg_residuals, adjacency, k)?;
    let n_obs = lattice.member_sets.iter().map(Vec::len).sum::<usize>();
    let mut labels = alloc::vec![usize::MAX; n_obs];
    for (l, members) in lattice.member_sets.iter().enumerate() {
        for &i in members {
            if i >= n_obs {
                return Err(Error::Dimension(format!("lattice member index {i} out of range")));
            }
            labels[i] = lattice_labels.0[l];
        }
    }
    Ok(Partitioning { k, labels, lattice_labels: lattice_labels.0, merges: lattice_labels.1 })
}

/// Agglomeration over bare points; returns the label of every point and
/// the merge sequence.
pub fn agglomerate_points(
    points: &[Location],
    values: &[f64],
    adjacency: &Adjacency,
    k: usize,
) -> Result<(Vec<usize>, Vec<(usize, usize)>)> {
    let n = points.len();
    if values.len() != n || adjacency.len() != n {
        return Err(Error::Dimension(format!(
            "{n} points, {} values, adjacency over {}",
            values.len(),
            adjacency.len()
        )));
    }
    if k == 0 || k > n {
        return Err(Error::Argument(format!("K must lie in 1..={n}, got {k}")));
    }
    let (components, _) = adjacency.components();
    if components > k {
        return Err(Error::Infeasible { components, k });
    }

    let mut clusters: Vec<Option<Cluster>> = (0..n)
        .map(|i| {
            let neighbors = adjacency.neighbors(i).iter().map(|&j| (j, points[i].dist(&points[j]))).collect();
            Some(Cluster { members: alloc::vec![i], residual_sum: values[i], neighbors, version: 0 })
        })
        .collect();

    let mut heap = BinaryHeap::new();
    for (a, b) in adjacency.edges() {
        let (ca, cb) = (clusters[a].as_ref().unwrap(), clusters[b].as_ref().unwrap());
        let d = cluster_dissimilarity(&ca.summary(), &cb.summary(), ca.neighbors[&b])?;
        heap.push(Candidate { d, lo: a, hi: b, ver_lo: 0, ver_hi: 0 });
    }

    let mut alive = n;
    let mut merges = Vec::with_capacity(n - k);
    while alive > k {
        let cand = heap.pop().ok_or(Error::Infeasible { components, k })?;
        let valid = match (&clusters[cand.lo], &clusters[cand.hi]) {
            (Some(a), Some(b)) => a.version == cand.ver_lo && b.version == cand.ver_hi,
            _ => false,
        };
        if !valid {
            continue;
        }
        let absorbed = clusters[cand.hi].take().unwrap();
        let mut survivor = clusters[cand.lo].take().unwrap();
        survivor.neighbors.remove(&cand.hi);

        let mut merged_neighbors = BTreeMap::new();
        let touched: Vec<usize> = survivor
            .neighbors
            .keys()
            .chain(absorbed.neighbors.keys())
            .copied()
            .filter(|&c| c != cand.lo && c != cand.hi)
            .collect();
        for c in touched {
            if merged_neighbors.contains_key(&c) {
                continue;
            }
            let other = clusters[c].as_ref().unwrap();
            let other_points: Vec<Location> = other.members.iter().map(|&i| points[i]).collect();
            let from_survivor = match survivor.neighbors.get(&c) {
                Some(&s) => s,
                None => cross_distance_sum(survivor.members.iter().map(|&i| &points[i]), &other_points),
            };
            let from_absorbed = match absorbed.neighbors.get(&c) {
                Some(&s) => s,
                None => cross_distance_sum(absorbed.members.iter().map(|&i| &points[i]), &other_points),
            };
            merged_neighbors.insert(c, from_survivor + from_absorbed);
        }

        survivor.members.extend_from_slice(&absorbed.members);
        survivor.residual_sum += absorbed.residual_sum;
        survivor.neighbors = merged_neighbors;
        survivor.version += 1;

        let summary = survivor.summary();
        for (&c, &dist_sum) in &survivor.neighbors {
            let other = clusters[c].as_mut().unwrap();
            other.neighbors.remove(&cand.hi);
            other.neighbors.insert(cand.lo, dist_sum);
            let mean_distance = dist_sum / (summary.size * other.members.len()) as f64;
            let d = cluster_dissimilarity(&summary, &other.summary(), mean_distance)?;
            let (lo, hi) = (cand.lo.min(c), cand.lo.max(c));
            let (ver_lo, ver_hi) = if lo == cand.lo {
                (survivor.version, other.version)
            } else {
                (other.version, survivor.version)
            };
            heap.push(Candidate { d, lo, hi, ver_lo, ver_hi });
        }
        clusters[cand.lo] = Some(survivor);
        merges.push((cand.lo, cand.hi));
        alive -= 1;
    }

    let mut labels = alloc::vec![usize::MAX; n];
    let mut next = 0;
    for cluster in clusters.iter().flatten() {
        for &m in &cluster.members {
            labels[m] = next;
        }
        next += 1;
    }
    Ok((labels, merges))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn summary(size: usize, mean_residual: f64) -> ClusterSummary {
        ClusterSummary { size, mean_residual }
    }

    #[test]
    fn dissimilarity_arithmetic() {
        assert_eq!(cluster_dissimilarity(&summary(1, 0.0), &summary(1, 2.0), 1.0).unwrap(), 2.0);
        let d = cluster_dissimilarity(&summary(2, 1.0), &summary(1, 4.0), 3.0).unwrap();
        assert!((d - 2.0).abs() < 1e-12);
        assert_eq!(cluster_dissimilarity(&summary(5, 1.5), &summary(3, 1.5), 0.7).unwrap(), 0.0);
    }

    #[test]
    fn coincident_clusters_are_degenerate() {
        let err = cluster_dissimilarity(&summary(1, 0.0), &summary(1, 1.0), 0.0).unwrap_err();
        assert!(matches!(err, Error::DegenerateGeometry(_)));
    }

    #[test]
    fn chain_splits_at_residual_jump() {
        let pts: Vec<Location> = (0..4).map(|i| Location::new(i as f64, 0.0)).collect();
        let (labels, merges) = agglomerate_points(&pts, &[0.0, 0.1, 5.0, 5.1], &Adjacency::chain(4), 2).unwrap();
        assert_eq!(labels, vec![0, 0, 1, 1]);
        assert_eq!(merges.len(), 2);
    }

    #[test]
    fn identity_when_k_equals_cells() {
        let pts: Vec<Location> = (0..4).map(|i| Location::new(i as f64, 0.0)).collect();
        let (labels, merges) = agglomerate_points(&pts, &[3.0, 1.0, 2.0, 0.0], &Adjacency::chain(4), 4).unwrap();
        assert_eq!(labels, vec![0, 1, 2, 3]);
        assert!(merges.is_empty());
    }

    #[test]
    fn too_many_components_is_infeasible() {
        let pts: Vec<Location> = (0..4).map(|i| Location::new(i as f64, 0.0)).collect();
        let adj = Adjacency::from_edges(4, &[(0, 1)]);
        let err = agglomerate_points(&pts, &[0.0; 4], &adj, 2).unwrap_err();
        assert_eq!(err, Error::Infeasible { components: 3, k: 2 });
    }
}
