//! Exact 2-d nearest-neighbour index.

use alloc::vec::Vec;

use crate::data::Location;

const LEAF_SIZE: usize = 8;

#[derive(Debug, Clone)]
enum Node {
    Leaf { start: usize, end: usize },
    Split { axis: u8, value: f64, left: usize, right: usize },
}

/// Static k-d tree over a set of locations. Queries are exact.
#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<Location>,
    /// Original index of each entry of `points`.
    index: Vec<usize>,
    nodes: Vec<Node>,
}

/// Result of a nearest-neighbour query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Nearest {
    pub location: Location,
    /// Index into the slice the tree was built from.
    pub index: usize,
    pub dist2: f64,
}

impl Nearest {
    pub fn dist(&self) -> f64 {
        crate::math::sqrt(self.dist2)
    }
}

#[inline]
fn coord(p: &Location, axis: u8) -> f64 {
    if axis == 0 {
        p.x
    } else {
        p.y
    }
}

impl KdTree {
    pub fn new(points: &[Location]) -> Self {
        let mut entries: Vec<(Location, usize)> = points.iter().copied().zip(0..).collect();
        let mut nodes = Vec::new();
        if !entries.is_empty() {
            let n = entries.len();
            build(&mut entries, 0, n, &mut nodes);
        }
        let (points, index) = entries.into_iter().unzip();
        Self { points, index, nodes }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Nearest stored point to `q`; ties go to the smallest original index.
    pub fn nearest(&self, q: &Location) -> Option<Nearest> {
        if self.points.is_empty() {
            return None;
        }
        let mut best = Nearest { location: self.points[0], index: usize::MAX, dist2: f64::INFINITY };
        self.search(0, q, &mut best);
        Some(best)
    }

    fn search(&self, node: usize, q: &Location, best: &mut Nearest) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for i in start..end {
                    let d2 = self.points[i].dist2(q);
                    if d2 < best.dist2 || (d2 == best.dist2 && self.index[i] < best.index) {
                        *best = Nearest { location: self.points[i], index: self.index[i], dist2: d2 };
                    }
                }
            }
            Node::Split { axis, value, left, right } => {
                let diff = coord(q, axis) - value;
                let (near, far) = if diff <= 0.0 { (left, right) } else { (right, left) };
                self.search(near, q, best);
                if diff * diff <= best.dist2 {
                    self.search(far, q, best);
                }
            }
        }
    }
}

fn build(entries: &mut [(Location, usize)], start: usize, end: usize, nodes: &mut Vec<Node>) -> usize {
    let id = nodes.len();
    if end - start <= LEAF_SIZE {
        nodes.push(Node::Leaf { start, end });
        return id;
    }
    let slice = &mut entries[start..end];
    let (mut xmin, mut xmax, mut ymin, mut ymax) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for (p, _) in slice.iter() {
        xmin = xmin.min(p.x);
        xmax = xmax.max(p.x);
        ymin = ymin.min(p.y);
        ymax = ymax.max(p.y);
    }
    let axis: u8 = if xmax - xmin >= ymax - ymin { 0 } else { 1 };
    let mid = slice.len() / 2;
    slice.select_nth_unstable_by(mid, |a, b| {
        coord(&a.0, axis).total_cmp(&coord(&b.0, axis)).then(a.1.cmp(&b.1))
    });
    let value = coord(&slice[mid].0, axis);
    // Left holds coordinates <= value, right holds >= value.
    nodes.push(Node::Leaf { start, end });
    let left = build(entries, start, start + mid, nodes);
    let right = build(entries, start + mid, end, nodes);
    nodes[id] = Node::Split { axis, value, left, right };
    id
}
