//! Exact k-nearest-neighbour distances: brute force and a kd-tree.
//!
//! Both backends compute squared distances with the same summation order,
//! so they return identical values.

use std::collections::BinaryHeap;

use nnkit::par::{map_range, Parallelism};

use super::PointCloud;

const LEAF: usize = 16;

#[inline]
pub(crate) fn dist2(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        s += d * d;
    }
    s
}

/// Max-heap entry ordered by distance.
#[derive(PartialEq)]
struct Cand(f64);

impl Eq for Cand {}

impl PartialOrd for Cand {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Cand {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

struct Best {
    k: usize,
    heap: BinaryHeap<Cand>,
}

impl Best {
    fn new(k: usize) -> Self {
        Self {
            k,
            heap: BinaryHeap::with_capacity(k + 1),
        }
    }

    fn bound(&self) -> f64 {
        if self.heap.len() < self.k {
            f64::INFINITY
        } else {
            self.heap.peek().unwrap().0
        }
    }

    fn offer(&mut self, d: f64) {
        if self.heap.len() < self.k {
            self.heap.push(Cand(d));
        } else if d < self.bound() {
            self.heap.pop();
            self.heap.push(Cand(d));
        }
    }

    fn sorted(self) -> Vec<f64> {
        let mut v: Vec<f64> = self.heap.into_iter().map(|c| c.0.sqrt()).collect();
        v.sort_by(f64::total_cmp);
        v
    }
}

/// Brute-force kNN under an arbitrary squared-distance function.
pub fn knn_with<F>(n: usize, k: usize, dist2: F, mode: Parallelism) -> Vec<Vec<f64>>
where
    F: Fn(usize, usize) -> f64 + Sync + Send,
{
    map_range(n, mode, |i| {
        let mut best = Best::new(k);
        for j in 0..n {
            if j != i {
                best.offer(dist2(i, j));
            }
        }
        best.sorted()
    })
}

pub fn knn_brute(cloud: &PointCloud, k: usize, mode: Parallelism) -> Vec<Vec<f64>> {
    knn_with(
        cloud.len(),
        k,
        |i, j| dist2(cloud.point(i), cloud.point(j)),
        mode,
    )
}

enum Node {
    Leaf(Vec<usize>),
    Split {
        dim: usize,
        value: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
}

fn build(cloud: &PointCloud, mut idx: Vec<usize>) -> Node {
    if idx.len() <= LEAF {
        return Node::Leaf(idx);
    }
    // split the widest coordinate at its median
    let d = cloud.dim();
    let mut best = (0, -1.0);
    for c in 0..d {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for &i in &idx {
            let v = cloud.point(i)[c];
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if hi - lo > best.1 {
            best = (c, hi - lo);
        }
    }
    let dim = best.0;
    if best.1 <= 0.0 {
        return Node::Leaf(idx);
    }
    let mid = idx.len() / 2;
    idx.select_nth_unstable_by(mid, |&a, &b| {
        cloud.point(a)[dim].total_cmp(&cloud.point(b)[dim])
    });
    let value = cloud.point(idx[mid])[dim];
    let right = idx.split_off(mid);
    Node::Split {
        dim,
        value,
        left: Box::new(build(cloud, idx)),
        right: Box::new(build(cloud, right)),
    }
}

fn search(node: &Node, cloud: &PointCloud, q: usize, best: &mut Best) {
    match node {
        Node::Leaf(ids) => {
            let p = cloud.point(q);
            for &j in ids {
                if j != q {
                    best.offer(dist2(p, cloud.point(j)));
                }
            }
        }
        Node::Split {
            dim,
            value,
            left,
            right,
        } => {
            let diff = cloud.point(q)[*dim] - value;
            let (near, far) = if diff < 0.0 {
                (left, right)
            } else {
                (right, left)
            };
            search(near, cloud, q, best);
            if diff * diff <= best.bound() {
                search(far, cloud, q, best);
            }
        }
    }
}

pub fn knn_kdtree(cloud: &PointCloud, k: usize, mode: Parallelism) -> Vec<Vec<f64>> {
    let tree = build(cloud, (0..cloud.len()).collect());
    map_range(cloud.len(), mode, |i| {
        let mut best = Best::new(k);
        search(&tree, cloud, i, &mut best);
        best.sorted()
    })
}
