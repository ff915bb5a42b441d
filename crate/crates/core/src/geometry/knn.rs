//! Exact k-nearest-neighbour search over a static kd-tree.
//!
//! Candidates are ranked by `(squared distance, index)`, so the result is a
//! total order and identical to sorting all distances by brute force.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rayon::prelude::*;

use super::cloud::{dist_sq, Point3, PointCloud};
use crate::error::{Error, Result};

const LEAF_SIZE: usize = 12;

/// Row `i` lists the `k` nearest other points of point `i`, nearest first.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NeighborGraph {
    n: usize,
    k: usize,
    indices: Vec<usize>,
}

impl NeighborGraph {
    /// A graph over `n` points with no edges.
    pub fn empty(n: usize) -> Self {
        Self {
            n,
            k: 0,
            indices: Vec::new(),
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.indices[i * self.k..(i + 1) * self.k]
    }

    /// Flattened N·k indices, row-major.
    pub fn flat(&self) -> &[usize] {
        &self.indices
    }
}

#[derive(Clone, Copy, PartialEq)]
struct Candidate {
    d2: f64,
    index: usize,
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.d2
            .total_cmp(&other.d2)
            .then(self.index.cmp(&other.index))
    }
}

enum Node {
    Leaf(Vec<usize>),
    Split {
        axis: usize,
        value: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
}

pub struct KdTree<'a> {
    points: &'a [Point3],
    root: Node,
}

impl<'a> KdTree<'a> {
    pub fn build(points: &'a [Point3]) -> Self {
        let idx: Vec<usize> = (0..points.len()).collect();
        let root = Self::build_node(points, idx);
        Self { points, root }
    }

    fn build_node(points: &[Point3], mut idx: Vec<usize>) -> Node {
        if idx.len() <= LEAF_SIZE {
            return Node::Leaf(idx);
        }
        // split the widest axis at the median
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for &i in &idx {
            for a in 0..3 {
                lo[a] = lo[a].min(points[i][a]);
                hi[a] = hi[a].max(points[i][a]);
            }
        }
        let axis = (0..3)
            .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
            .unwrap_or(0);
        if hi[axis] - lo[axis] == 0.0 {
            return Node::Leaf(idx);
        }
        let mid = idx.len() / 2;
        idx.select_nth_unstable_by(mid, |&a, &b| points[a][axis].total_cmp(&points[b][axis]));
        let value = points[idx[mid]][axis];
        let right = idx.split_off(mid);
        Node::Split {
            axis,
            value,
            left: Box::new(Self::build_node(points, idx)),
            right: Box::new(Self::build_node(points, right)),
        }
    }

    /// The `k` nearest points to `query`, skipping index `exclude`.
    pub fn nearest(&self, query: Point3, k: usize, exclude: Option<usize>) -> Vec<usize> {
        let mut heap: BinaryHeap<Candidate> = BinaryHeap::with_capacity(k + 1);
        self.search(&self.root, query, k, exclude, &mut heap);
        let mut out: Vec<Candidate> = heap.into_vec();
        out.sort();
        out.into_iter().map(|c| c.index).collect()
    }

    fn search(
        &self,
        node: &Node,
        q: Point3,
        k: usize,
        exclude: Option<usize>,
        heap: &mut BinaryHeap<Candidate>,
    ) {
        match node {
            Node::Leaf(idx) => {
                for &i in idx {
                    if Some(i) == exclude {
                        continue;
                    }
                    let c = Candidate {
                        d2: dist_sq(q, self.points[i]),
                        index: i,
                    };
                    if heap.len() < k {
                        heap.push(c);
                    } else if let Some(worst) = heap.peek() {
                        if c < *worst {
                            heap.pop();
                            heap.push(c);
                        }
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let delta = q[*axis] - value;
                let (near, far) = if delta < 0.0 {
                    (left, right)
                } else {
                    (right, left)
                };
                self.search(near, q, k, exclude, heap);
                let plane = delta * delta;
                let visit_far = heap.len() < k || heap.peek().is_some_and(|w| plane <= w.d2);
                if visit_far {
                    self.search(far, q, k, exclude, heap);
                }
            }
        }
    }
}

/// Exact KNN excluding self. Requires `1 ≤ k < N`.
pub fn knn(cloud: &PointCloud, k: usize) -> Result<NeighborGraph> {
    let n = cloud.len();
    if k == 0 {
        return Err(Error::Config("knn needs k ≥ 1".into()));
    }
    if k >= n {
        return Err(Error::KTooLarge { k, n });
    }
    let pts = cloud.positions();
    let tree = KdTree::build(pts);
    let rows: Vec<Vec<usize>> = (0..n)
        .into_par_iter()
        .map(|i| tree.nearest(pts[i], k, Some(i)))
        .collect();
    Ok(NeighborGraph {
        n,
        k,
        indices: rows.concat(),
    })
}
