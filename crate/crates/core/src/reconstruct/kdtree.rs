//! Static 3-d tree for k-nearest-neighbour queries.

use std::collections::BinaryHeap;

use crate::pbrdf::Vec3;

#[derive(Clone, Debug)]
pub struct KdTree {
    points: Vec<Vec3>,
    /// Point indices arranged as an implicit balanced tree.
    order: Vec<usize>,
}

#[derive(PartialEq)]
struct Cand(f64, usize);

impl Eq for Cand {}

impl PartialOrd for Cand {
    fn partial_cmp(&self, o: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(o))
    }
}

impl Ord for Cand {
    fn cmp(&self, o: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&o.0).then(self.1.cmp(&o.1))
    }
}

impl KdTree {
    pub fn new(points: Vec<Vec3>) -> Self {
        let mut order: Vec<usize> = (0..points.len()).collect();
        build(&points, &mut order, 0);
        Self { points, order }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> Vec3 {
        self.points[i]
    }

    /// Up to `k` nearest points within `radius` of `q`, nearest first, as
    /// `(index, squared distance)`. Ties break on index.
    pub fn nearest(&self, q: &Vec3, k: usize, radius: f64) -> Vec<(usize, f64)> {
        let mut heap = BinaryHeap::with_capacity(k + 1);
        if k > 0 {
            self.search(0, self.order.len(), 0, q, k, radius * radius, &mut heap);
        }
        let mut v: Vec<(usize, f64)> = heap.into_iter().map(|Cand(d, i)| (i, d)).collect();
        v.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        v
    }

    #[allow(clippy::too_many_arguments)]
    fn search(&self, lo: usize, hi: usize, depth: usize, q: &Vec3, k: usize, r2: f64, heap: &mut BinaryHeap<Cand>) {
        if lo >= hi {
            return;
        }
        let mid = (lo + hi) / 2;
        let idx = self.order[mid];
        let p = self.points[idx];
        let d2 = (p - q).norm_squared();
        if d2 <= r2 {
            let c = Cand(d2, idx);
            if heap.len() < k {
                heap.push(c);
            } else if heap.peek().is_some_and(|top| c < *top) {
                heap.pop();
                heap.push(c);
            }
        }
        let axis = depth % 3;
        let diff = q[axis] - p[axis];
        let (near, far) = if diff < 0.0 { ((lo, mid), (mid + 1, hi)) } else { ((mid + 1, hi), (lo, mid)) };
        self.search(near.0, near.1, depth + 1, q, k, r2, heap);
        let bound = if heap.len() < k { r2 } else { heap.peek().map_or(r2, |t| t.0.min(r2)) };
        if diff * diff <= bound {
            self.search(far.0, far.1, depth + 1, q, k, r2, heap);
        }
    }
}

fn build(points: &[Vec3], idx: &mut [usize], depth: usize) {
    if idx.len() <= 1 {
        return;
    }
    let axis = depth % 3;
    let mid = idx.len() / 2;
    idx.select_nth_unstable_by(mid, |a, b| points[*a][axis].total_cmp(&points[*b][axis]).then(a.cmp(b)));
    let (left, right) = idx.split_at_mut(mid);
    build(points, left, depth + 1);
    build(points, &mut right[1..], depth + 1);
}
