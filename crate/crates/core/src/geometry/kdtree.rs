//! Static KD-tree over 3D points for exact k-nearest-neighbor queries.

use crate::error::{Error, Result};
use crate::geometry::vec3::{dist_sq, Vec3};

/// Spatial index over a fixed point set. Queries are exact; equal distances
/// break ties by ascending point index.
#[derive(Debug, Clone)]
pub struct PointIndex {
    points: Vec<Vec3>,
    // implicit tree: order[] holds point ids arranged by recursive median split
    order: Vec<u32>,
    splits: Vec<Split>,
}

#[derive(Debug, Clone, Copy)]
struct Split {
    axis: u8,
    value: f64,
    left_len: u32,
}

const LEAF_SIZE: usize = 16;

impl PointIndex {
    pub fn build(points: Vec<Vec3>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Empty("point index requires at least one point".into()));
        }
        let mut order: Vec<u32> = (0..points.len() as u32).collect();
        let mut splits = Vec::new();
        build_rec(&points, &mut order, &mut splits, 0, points.len());
        Ok(PointIndex { points, order, splits })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    /// The k nearest points to `query`, as (point index, Euclidean distance)
    /// sorted by ascending distance. Requests beyond the point count return
    /// every point.
    pub fn nearest_k(&self, query: Vec3, k: usize) -> Result<Vec<(usize, f64)>> {
        if k == 0 {
            return Err(Error::InvalidArgument("nearest_k requires k >= 1".into()));
        }
        let k = k.min(self.points.len());
        let mut best = BestSet::new(k);
        self.search(query, 0, 0, self.points.len(), &mut best);
        let mut out = best.heap;
        out.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        Ok(out.into_iter().map(|(d, i)| (i as usize, d.sqrt())).collect())
    }

    pub fn nearest(&self, query: Vec3) -> (usize, f64) {
        let r = self.nearest_k(query, 1).expect("k=1 on non-empty index");
        r[0]
    }

    fn search(&self, query: Vec3, node: usize, lo: usize, hi: usize, best: &mut BestSet) {
        if hi - lo <= LEAF_SIZE {
            for &pid in &self.order[lo..hi] {
                best.offer(dist_sq(self.points[pid as usize], query), pid);
            }
            return;
        }
        let split = self.splits[node];
        let mid = lo + split.left_len as usize;
        let (near, far, near_node, far_node) = {
            let left_node = node * 2 + 1;
            let right_node = node * 2 + 2;
            if query[split.axis as usize] <= split.value {
                ((lo, mid), (mid, hi), left_node, right_node)
            } else {
                ((mid, hi), (lo, mid), right_node, left_node)
            }
        };
        self.search(query, near_node, near.0, near.1, best);
        let plane = query[split.axis as usize] - split.value;
        if plane * plane <= best.worst() {
            self.search(query, far_node, far.0, far.1, best);
        }
    }
}

fn build_rec(points: &[Vec3], order: &mut [u32], splits: &mut Vec<Split>, node: usize, len: usize) {
    if len <= LEAF_SIZE {
        return;
    }
    // widest-extent axis
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for &pid in &order[..len] {
        let p = points[pid as usize];
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let axis = (0..3).max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b]))).unwrap();

    let mid = len / 2;
    order[..len].select_nth_unstable_by(mid, |&a, &b| {
        points[a as usize][axis]
            .total_cmp(&points[b as usize][axis])
            .then(a.cmp(&b))
    });
    let value = points[order[mid] as usize][axis];

    if splits.len() <= node {
        splits.resize(node + 1, Split { axis: 0, value: 0.0, left_len: 0 });
    }
    splits[node] = Split { axis: axis as u8, value, left_len: mid as u32 };

    let (left, right) = order.split_at_mut(mid);
    build_rec(points, left, splits, node * 2 + 1, mid);
    build_rec(points, &mut right[..len - mid], splits, node * 2 + 2, len - mid);
}

/// Fixed-capacity max-heap of (squared distance, point id) with index
/// tie-break: among equal distances the lower index wins a slot.
struct BestSet {
    heap: Vec<(f64, u32)>,
    cap: usize,
}

impl BestSet {
    fn new(cap: usize) -> Self {
        BestSet { heap: Vec::with_capacity(cap), cap }
    }

    fn worst(&self) -> f64 {
        if self.heap.len() < self.cap {
            f64::INFINITY
        } else {
            self.heap[0].0
        }
    }

    fn offer(&mut self, d: f64, id: u32) {
        if self.heap.len() < self.cap {
            self.heap.push((d, id));
            self.sift_up(self.heap.len() - 1);
        } else {
            let worst = self.heap[0];
            if d < worst.0 || (d == worst.0 && id < worst.1) {
                self.heap[0] = (d, id);
                self.sift_down(0);
            }
        }
    }

    fn sift_up(&mut self, mut i: usize) {
        while i > 0 {
            let parent = (i - 1) / 2;
            if Self::less(self.heap[parent], self.heap[i]) {
                self.heap.swap(parent, i);
                i = parent;
            } else {
                break;
            }
        }
    }

    fn sift_down(&mut self, mut i: usize) {
        loop {
            let l = 2 * i + 1;
            let r = 2 * i + 2;
            let mut largest = i;
            if l < self.heap.len() && Self::less(self.heap[largest], self.heap[l]) {
                largest = l;
            }
            if r < self.heap.len() && Self::less(self.heap[largest], self.heap[r]) {
                largest = r;
            }
            if largest == i {
                break;
            }
            self.heap.swap(i, largest);
            i = largest;
        }
    }

    // ordering for the max-heap: larger distance, then larger index, on top
    fn less(a: (f64, u32), b: (f64, u32)) -> bool {
        a.0 < b.0 || (a.0 == b.0 && a.1 < b.1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn two_point_query() {
        let idx = PointIndex::build(vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]).unwrap();
        let r = idx.nearest_k([0.1, 0.0, 0.0], 1).unwrap();
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].0, 0);
        assert!((r[0].1 - 0.1).abs() < 1e-12);
    }

    #[test]
    fn query_on_indexed_point_has_zero_distance() {
        let idx = PointIndex::build(vec![[0.3, -0.2, 0.9], [1.0, 2.0, 3.0]]).unwrap();
        let r = idx.nearest_k([1.0, 2.0, 3.0], 1).unwrap();
        assert_eq!(r[0], (1, 0.0));
    }

    #[test]
    fn k_larger_than_count_returns_all() {
        let idx = PointIndex::build(vec![[0.0; 3], [1.0; 3], [2.0; 3]]).unwrap();
        let r = idx.nearest_k([0.0; 3], 10).unwrap();
        assert_eq!(r.len(), 3);
    }

    #[test]
    fn tie_break_prefers_lower_index() {
        // two points equidistant from the query
        let idx = PointIndex::build(vec![
            [1.0, 0.0, 0.0],
            [-1.0, 0.0, 0.0],
            [5.0, 0.0, 0.0],
        ])
        .unwrap();
        let r = idx.nearest_k([0.0; 3], 2).unwrap();
        assert_eq!(r[0].0, 0);
        assert_eq!(r[1].0, 1);
    }

    #[test]
    fn matches_exhaustive_scan() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        let points: Vec<Vec3> =
            (0..512).map(|_| [rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()]).collect();
        let idx = PointIndex::build(points.clone()).unwrap();
        for _ in 0..64 {
            let q = [rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()];
            let got = idx.nearest_k(q, 4).unwrap();
            let mut brute: Vec<(usize, f64)> = points
                .iter()
                .enumerate()
                .map(|(i, &p)| (i, crate::geometry::vec3::dist(p, q)))
                .collect();
            brute.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            brute.truncate(4);
            for (g, b) in got.iter().zip(&brute) {
                assert_eq!(g.0, b.0);
                assert!((g.1 - b.1).abs() < 1e-12);
            }
        }
    }
}
