//! Voronoi adjacency through the Delaunay triangulation.
//!
//! The triangulation itself comes from `spade` (exact predicates). Regular
//! lattices are full of cocircular quadruples, where either diagonal is a
//! valid Delaunay edge; those are normalized afterwards so that each such
//! quad uses the diagonal incident to its lexicographically smallest vertex.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use spade::{DelaunayTriangulation, Point2, Triangulation};

use crate::data::Location;
use crate::{Error, Result};

/// Symmetric neighbour relation over a point set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Adjacency {
    neighbors: Vec<Vec<usize>>,
}

impl Adjacency {
    /// Build from an undirected edge list. Self-pairs and duplicates are
    /// ignored.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Self {
        let mut neighbors = vec![Vec::new(); n];
        for &(a, b) in edges {
            if a != b {
                neighbors[a].push(b);
                neighbors[b].push(a);
            }
        }
        for list in &mut neighbors {
            list.sort_unstable();
            list.dedup();
        }
        Self { neighbors }
    }

    /// Path graph `0 - 1 - ... - (n-1)`.
    pub fn chain(n: usize) -> Self {
        let edges: Vec<(usize, usize)> = (1..n).map(|i| (i - 1, i)).collect();
        Self::from_edges(n, &edges)
    }

    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn contains(&self, a: usize, b: usize) -> bool {
        self.neighbors[a].binary_search(&b).is_ok()
    }

    /// Sorted edge list with `a < b`.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (a, list) in self.neighbors.iter().enumerate() {
            out.extend(list.iter().filter(|&&b| b > a).map(|&b| (a, b)));
        }
        out
    }

    /// Connected component id of every vertex, numbered in order of first
    /// appearance.
    pub fn components(&self) -> (usize, Vec<usize>) {
        let n = self.len();
        let mut comp = vec![usize::MAX; n];
        let mut count = 0;
        let mut stack = Vec::new();
        for start in 0..n {
            if comp[start] != usize::MAX {
                continue;
            }
            comp[start] = count;
            stack.push(start);
            while let Some(v) = stack.pop() {
                for &w in &self.neighbors[v] {
                    if comp[w] == usize::MAX {
                        comp[w] = count;
                        stack.push(w);
                    }
                }
            }
            count += 1;
        }
        (count, comp)
    }

    /// Whether `subset` induces a connected subgraph.
    pub fn is_connected_subset(&self, subset: &[usize]) -> bool {
        if subset.is_empty() {
            return false;
        }
        let mut inside = BTreeMap::new();
        for &v in subset {
            inside.insert(v, false);
        }
        let mut stack = vec![subset[0]];
        inside.insert(subset[0], true);
        let mut seen = 1;
        while let Some(v) = stack.pop() {
            for &w in &self.neighbors[v] {
                if let Some(flag) = inside.get_mut(&w) {
                    if !*flag {
                        *flag = true;
                        seen += 1;
                        stack.push(w);
                    }
                }
            }
        }
        seen == inside.len()
    }
}

/// Orientation of `(a, b, c)` with a relative zero band.
fn orient(a: Location, b: Location, c: Location) -> f64 {
    let det = (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x);
    let perm = ((b.x - a.x) * (c.y - a.y)).abs() + ((b.y - a.y) * (c.x - a.x)).abs();
    if det.abs() <= 1e-12 * perm {
        0.0
    } else {
        det
    }
}

/// In-circle determinant for counter-clockwise `(a, b, c)`: positive when
/// `d` is strictly inside, zero (within a relative band) when cocircular.
pub(crate) fn incircle(a: Location, b: Location, c: Location, d: Location) -> f64 {
    let (adx, ady) = (a.x - d.x, a.y - d.y);
    let (bdx, bdy) = (b.x - d.x, b.y - d.y);
    let (cdx, cdy) = (c.x - d.x, c.y - d.y);
    let alift = adx * adx + ady * ady;
    let blift = bdx * bdx + bdy * bdy;
    let clift = cdx * cdx + cdy * cdy;
    let t1 = alift * (bdx * cdy - bdy * cdx);
    let t2 = blift * (cdx * ady - cdy * adx);
    let t3 = clift * (adx * bdy - ady * bdx);
    let det = t1 + t2 + t3;
    let perm = alift * ((bdx * cdy).abs() + (bdy * cdx).abs())
        + blift * ((cdx * ady).abs() + (cdy * adx).abs())
        + clift * ((adx * bdy).abs() + (ady * bdx).abs());
    if det.abs() <= 1e-9 * perm {
        0.0
    } else {
        det
    }
}

fn lex_less(points: &[Location], a: usize, b: usize) -> bool {
    let (p, q) = (points[a], points[b]);
    (p.x, p.y, a) < (q.x, q.y, b)
}

fn ccw(points: &[Location], t: [usize; 3]) -> [usize; 3] {
    if orient(points[t[0]], points[t[1]], points[t[2]]) < 0.0 {
        [t[0], t[2], t[1]]
    } else {
        t
    }
}

/// Delaunay triangles (counter-clockwise vertex triples) after cocircular
/// tie-breaking.
pub fn delaunay_triangles(points: &[Location]) -> Result<Vec<[usize; 3]>> {
    if points.len() < 3 {
        return Err(Error::DegenerateGeometry(format!("need at least 3 points, got {}", points.len())));
    }
    if let Some(i) = points.iter().position(|p| !p.is_finite()) {
        return Err(Error::Validation { row: i, reason: "non-finite point".into() });
    }
    // Work in unit-box coordinates so the zero bands are scale free.
    let (mut xmin, mut xmax, mut ymin, mut ymax) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for p in points {
        xmin = xmin.min(p.x);
        xmax = xmax.max(p.x);
        ymin = ymin.min(p.y);
        ymax = ymax.max(p.y);
    }
    let scale = (xmax - xmin).max(ymax - ymin);
    if !(scale > 0.0) {
        return Err(Error::DegenerateGeometry("all points coincide".into()));
    }
    let unit: Vec<Location> = points
        .iter()
        .map(|p| Location::new((p.x - xmin) / scale, (p.y - ymin) / scale))
        .collect();

    let vertices: Vec<Point2<f64>> = unit.iter().map(|p| Point2::new(p.x, p.y)).collect();
    let tri: DelaunayTriangulation<Point2<f64>> = DelaunayTriangulation::bulk_load_stable(vertices)
        .map_err(|e| Error::DegenerateGeometry(format!("triangulation failed: {e:?}")))?;
    if tri.num_vertices() != points.len() {
        return Err(Error::DegenerateGeometry("duplicate points in input".into()));
    }
    let mut triangles: Vec<[usize; 3]> = tri
        .inner_faces()
        .map(|f| {
            let v = f.vertices();
            ccw(&unit, [v[0].fix().index(), v[1].fix().index(), v[2].fix().index()])
        })
        .collect();
    if triangles.is_empty() {
        return Err(Error::DegenerateGeometry("all points are collinear".into()));
    }
    triangles.sort_unstable();
    normalize_cocircular(&unit, &mut triangles);
    Ok(triangles)
}

/// Flip cocircular quads to the diagonal incident to the lexicographically
/// smallest of their four vertices.
fn normalize_cocircular(points: &[Location], triangles: &mut Vec<[usize; 3]>) {
    for _pass in 0..64 {
        let mut edge_tris: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
        for (t, tri) in triangles.iter().enumerate() {
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                edge_tris.entry((a.min(b), a.max(b))).or_default().push(t);
            }
        }
        let mut touched = vec![false; triangles.len()];
        let mut flips = Vec::new();
        for (&(a, b), ts) in &edge_tris {
            if ts.len() != 2 || touched[ts[0]] || touched[ts[1]] {
                continue;
            }
            let opposite = |t: usize| triangles[t].iter().copied().find(|&v| v != a && v != b).unwrap();
            let (c, d) = (opposite(ts[0]), opposite(ts[1]));
            let t0 = triangles[ts[0]];
            if incircle(points[t0[0]], points[t0[1]], points[t0[2]], points[d]) != 0.0 {
                continue;
            }
            let mut smallest = a;
            for v in [b, c, d] {
                if lex_less(points, v, smallest) {
                    smallest = v;
                }
            }
            if smallest == a || smallest == b {
                continue;
            }
            // The replacement diagonal c-d must split a strictly convex quad.
            let oa = orient(points[c], points[d], points[a]);
            let ob = orient(points[c], points[d], points[b]);
            if oa == 0.0 || ob == 0.0 || (oa > 0.0) == (ob > 0.0) {
                continue;
            }
            touched[ts[0]] = true;
            touched[ts[1]] = true;
            flips.push((ts[0], ts[1], ccw(points, [c, d, a]), ccw(points, [c, d, b])));
        }
        if flips.is_empty() {
            break;
        }
        for (t0, t1, n0, n1) in flips {
            triangles[t0] = n0;
            triangles[t1] = n1;
        }
        triangles.sort_unstable();
    }
}

/// Pairs of points whose Voronoi cells touch, computed as Delaunay edges.
pub fn voronoi_neighbors(points: &[Location]) -> Result<Adjacency> {
    let triangles = delaunay_triangles(points)?;
    let mut edges = Vec::with_capacity(triangles.len() * 3);
    for t in &triangles {
        for k in 0..3 {
            edges.push((t[k], t[(k + 1) % 3]));
        }
    }
    Ok(Adjacency::from_edges(points.len(), &edges))
}
