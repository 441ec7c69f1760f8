use alloc::vec::Vec;

use crate::data::Location;
use crate::kdtree::KdTree;
use crate::linalg::Matrix;
use crate::math;

/// Thin plate spline radial function `r^2 log r`, with the value 0 at `r = 0`.
#[inline]
pub fn tps_eval(s: &Location, u: &Location) -> f64 {
    tps_from_dist2(s.dist2(u))
}

/// `r^2 log r` written in terms of `r^2`.
#[inline]
pub fn tps_from_dist2(d2: f64) -> f64 {
    if d2 > 0.0 {
        0.5 * d2 * math::ln(d2)
    } else {
        0.0
    }
}

/// `N x m` matrix of basis functions at `locations` for each knot.
pub fn tps_design(locations: &[Location], knots: &[Location]) -> Matrix {
    let n = locations.len();
    let mut data = Vec::with_capacity(n * knots.len());
    for u in knots {
        data.extend(locations.iter().map(|s| tps_eval(s, u)));
    }
    Matrix::from_col_major(n, knots.len(), data)
}

/// Candidate knots on a regular grid over the bounding box of
/// `locations`, keeping only grid points that have an observation within
/// one grid spacing. The grid shape follows the box aspect ratio so that
/// roughly `m_target` points are laid down.
pub fn candidate_knots(locations: &[Location], m_target: usize) -> Vec<Location> {
    let Some(first) = locations.first() else {
        return Vec::new();
    };
    let m_target = m_target.max(1);
    let (mut xmin, mut xmax, mut ymin, mut ymax) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for s in locations {
        xmin = xmin.min(s.x);
        xmax = xmax.max(s.x);
        ymin = ymin.min(s.y);
        ymax = ymax.max(s.y);
    }
    let (w, h) = (xmax - xmin, ymax - ymin);
    if !(w > 0.0) && !(h > 0.0) {
        return alloc::vec![*first];
    }
    let (nx, ny) = if !(h > 0.0) {
        (m_target, 1)
    } else if !(w > 0.0) {
        (1, m_target)
    } else {
        let nx = (math::round(math::sqrt(m_target as f64 * w / h)) as usize).clamp(1, m_target);
        let ny = (math::round(m_target as f64 / nx as f64) as usize).max(1);
        (nx, ny)
    };
    let (dx, dy) = (w / nx as f64, h / ny as f64);
    let spacing = dx.max(dy);
    let tree = KdTree::new(locations);
    let mut knots = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let u = Location::new(xmin + (i as f64 + 0.5) * dx, ymin + (j as f64 + 0.5) * dy);
            let nearest = tree.nearest(&u).expect("non-empty tree");
            if nearest.dist2 <= spacing * spacing {
                knots.push(u);
            }
        }
    }
    knots
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tps_reference_values() {
        let o = Location::new(0.0, 0.0);
        assert_eq!(tps_eval(&o, &o), 0.0);
        assert!(tps_eval(&o, &Location::new(1.0, 0.0)).abs() < 1e-15);
        let e = core::f64::consts::E;
        assert!((tps_eval(&o, &Location::new(e, 0.0)) - e * e).abs() < 1e-12);
        assert!((tps_eval(&o, &Location::new(e, 0.0)) - 7.389056).abs() < 1e-6);
    }

    #[test]
    fn square_partition_keeps_full_grid() {
        let locs: Vec<Location> = (0..40)
            .flat_map(|i| (0..40).map(move |j| Location::new(i as f64 / 39.0, j as f64 / 39.0)))
            .collect();
        assert_eq!(candidate_knots(&locs, 81).len(), 81);
    }

    #[test]
    fn single_point_partition() {
        let p = Location::new(0.3, 0.4);
        assert_eq!(candidate_knots(&[p, p, p], 50), alloc::vec![p]);
    }

    #[test]
    fn design_shape() {
        let locs = [Location::new(0.0, 0.0), Location::new(1.0, 0.0), Location::new(0.0, 2.0)];
        let knots = [Location::new(0.0, 0.0), Location::new(0.5, 0.5)];
        let d = tps_design(&locs, &knots);
        assert_eq!((d.nrows(), d.ncols()), (3, 2));
        assert_eq!(d.get(0, 0), 0.0);
        assert!((d.get(2, 0) - 4.0 * math::ln(2.0)).abs() < 1e-12);
    }
}
