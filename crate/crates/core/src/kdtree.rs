//! Static 3-d tree for exact nearest-neighbour lookups.
//!
//! Results are identical to a linear scan that minimizes
//! `(squared distance, id)` lexicographically, so ties resolve to the
//! lowest id.

use crate::geometry::Vec3;

#[derive(Debug, Clone, Default)]
pub struct KdTree {
    /// Points in implicit tree order: the median of every range is its node.
    nodes: Vec<(Vec3, usize)>,
    axes: Vec<u8>,
}

impl KdTree {
    pub fn build(points: impl IntoIterator<Item = (Vec3, usize)>) -> Self {
        let mut nodes: Vec<(Vec3, usize)> = points.into_iter().collect();
        let mut axes = vec![0u8; nodes.len()];
        let len = nodes.len();
        build_range(&mut nodes, &mut axes, 0, len);
        Self { nodes, axes }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `(id, squared distance)` of the nearest point.
    pub fn nearest(&self, query: &Vec3) -> Option<(usize, f64)> {
        let mut best: Option<(f64, usize)> = None;
        self.search(query, 0, self.nodes.len(), &mut best);
        best.map(|(d, id)| (id, d))
    }

    fn search(&self, q: &Vec3, lo: usize, hi: usize, best: &mut Option<(f64, usize)>) {
        if lo >= hi {
            return;
        }
        let mid = lo + (hi - lo) / 2;
        let (p, id) = self.nodes[mid];
        let d = (p - q).norm_squared();
        if best.is_none_or(|(bd, bid)| d < bd || (d == bd && id < bid)) {
            *best = Some((d, id));
        }
        let axis = self.axes[mid] as usize;
        let diff = q[axis] - p[axis];
        let (near, far) = if diff < 0.0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.search(q, near.0, near.1, best);
        // `<=` keeps equidistant points with lower ids reachable
        if best.is_none_or(|(bd, _)| diff * diff <= bd) {
            self.search(q, far.0, far.1, best);
        }
    }
}

fn build_range(nodes: &mut [(Vec3, usize)], axes: &mut [u8], lo: usize, hi: usize) {
    if hi - lo <= 1 {
        return;
    }
    let slice = &mut nodes[lo..hi];
    let mut min = Vec3::repeat(f64::INFINITY);
    let mut max = Vec3::repeat(f64::NEG_INFINITY);
    for (p, _) in slice.iter() {
        min = min.inf(p);
        max = max.sup(p);
    }
    let axis = (max - min).imax();
    let mid = (hi - lo) / 2;
    slice.select_nth_unstable_by(mid, |a, b| a.0[axis].total_cmp(&b.0[axis]));
    axes[lo + mid] = axis as u8;
    build_range(nodes, axes, lo, lo + mid);
    build_range(nodes, axes, lo + mid + 1, hi);
}
