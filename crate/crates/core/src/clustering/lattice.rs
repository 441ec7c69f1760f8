use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::data::{Location, SpatialDataset};
use crate::math;
use crate::{Error, Result};

/// Observations coarsened onto the occupied cells of a regular grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Lattice {
    /// Cell centres of the occupied cells.
    pub points: Vec<Location>,
    /// Observation indices whose nearest lattice point is `points[l]`.
    pub member_sets: Vec<Vec<usize>>,
    /// Mean residual over each cell's members.
    pub avg_residuals: Vec<f64>,
    /// Grid side length used to build the lattice.
    pub side: usize,
}

impl Lattice {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Lattice cell index of every observation.
    pub fn cell_of_observation(&self, n_obs: usize) -> Vec<usize> {
        let mut cell = vec![usize::MAX; n_obs];
        for (l, members) in self.member_sets.iter().enumerate() {
            for &i in members {
                cell[i] = l;
            }
        }
        cell
    }
}

/// Average residuals over a `ceil(sqrt(L)) x ceil(sqrt(L))` grid of cell
/// centres spanning the bounding box. Each observation goes to the cell it
/// falls in (equivalently its nearest cell centre); empty cells are dropped.
pub fn build_lattice(data: &SpatialDataset, residuals: &[f64], l_target: usize) -> Result<Lattice> {
    build_lattice_from(data.locations(), residuals, l_target)
}

pub fn build_lattice_from(locations: &[Location], residuals: &[f64], l_target: usize) -> Result<Lattice> {
    if l_target < 2 {
        return Err(Error::Argument(format!("lattice size must be at least 2, got {l_target}")));
    }
    if residuals.len() != locations.len() {
        return Err(Error::Dimension(format!(
            "{} residuals for {} locations",
            residuals.len(),
            locations.len()
        )));
    }
    if let Some(row) = residuals.iter().position(|r| !r.is_finite()) {
        return Err(Error::Validation { row, reason: "non-finite residual".into() });
    }
    if locations.is_empty() {
        return Err(Error::Argument("cannot build a lattice over zero observations".into()));
    }
    let side = math::ceil(math::sqrt(l_target as f64)) as usize;
    let (mut xmin, mut xmax, mut ymin, mut ymax) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for s in locations {
        xmin = xmin.min(s.x);
        xmax = xmax.max(s.x);
        ymin = ymin.min(s.y);
        ymax = ymax.max(s.y);
    }
    let wx = (xmax - xmin) / side as f64;
    let wy = (ymax - ymin) / side as f64;
    let cell_index = |v: f64, lo: f64, w: f64| -> usize {
        if w > 0.0 {
            (math::floor((v - lo) / w) as usize).min(side - 1)
        } else {
            0
        }
    };

    let mut sums = vec![0.0; side * side];
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); side * side];
    for (i, (s, &r)) in locations.iter().zip(residuals).enumerate() {
        let c = cell_index(s.y, ymin, wy) * side + cell_index(s.x, xmin, wx);
        sums[c] += r;
        members[c].push(i);
    }

    let mut lattice = Lattice { points: Vec::new(), member_sets: Vec::new(), avg_residuals: Vec::new(), side };
    for (c, m) in members.into_iter().enumerate() {
        if m.is_empty() {
            continue;
        }
        let (row, col) = (c / side, c % side);
        let cx = if wx > 0.0 { xmin + (col as f64 + 0.5) * wx } else { xmin };
        let cy = if wy > 0.0 { ymin + (row as f64 + 0.5) * wy } else { ymin };
        lattice.avg_residuals.push(sums[c] / m.len() as f64);
        lattice.points.push(Location::new(cx, cy));
        lattice.member_sets.push(m);
    }
    Ok(lattice)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_point_per_cell_keeps_residuals() {
        let locs = [
            Location::new(0.0, 0.0),
            Location::new(1.0, 0.0),
            Location::new(0.0, 1.0),
            Location::new(1.0, 1.0),
        ];
        let lat = build_lattice_from(&locs, &[1.0, 2.0, 3.0, 4.0], 4).unwrap();
        assert_eq!(lat.len(), 4);
        assert_eq!(lat.avg_residuals, vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(lat.points[0], Location::new(0.25, 0.25));
    }

    #[test]
    fn shared_cell_averages() {
        let locs = [Location::new(0.0, 0.0), Location::new(0.1, 0.1), Location::new(1.0, 1.0)];
        let lat = build_lattice_from(&locs, &[1.0, 3.0, 0.0], 4).unwrap();
        assert_eq!(lat.len(), 2);
        assert_eq!(lat.avg_residuals[0], 2.0);
        assert_eq!(lat.member_sets[0], vec![0, 1]);
    }

    #[test]
    fn rejects_tiny_lattice() {
        let locs = [Location::new(0.0, 0.0)];
        assert!(matches!(build_lattice_from(&locs, &[0.0], 1), Err(Error::Argument(_))));
    }

    #[test]
    fn members_partition_observations() {
        let locs: Vec<Location> = (0..500)
            .map(|i| Location::new(((i * 37) % 101) as f64 / 101.0, ((i * 53) % 89) as f64 / 89.0))
            .collect();
        let res: Vec<f64> = (0..500).map(|i| i as f64).collect();
        let lat = build_lattice_from(&locs, &res, 30).unwrap();
        assert!(lat.len() <= 36);
        let mut all: Vec<usize> = lat.member_sets.iter().flatten().copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..500).collect::<Vec<_>>());
    }
}
