//! Exact nearest-neighbour search over a static 3D point set.

use alloc::vec::Vec;

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::Point3;

const LEAF_SIZE: usize = 8;
const NO_CHILD: usize = usize::MAX;

/// Tree node covering `order[start..end]`, with the tight bounding box of
/// its points. Leaves have no children.
#[derive(Debug, Clone)]
struct Node {
    lo: [f64; 3],
    hi: [f64; 3],
    start: usize,
    end: usize,
    left: usize,
    right: usize,
}

impl Node {
    fn box_distance2(&self, q: &[f64; 3]) -> f64 {
        let mut d2 = 0.0;
        for a in 0..3 {
            let d = if q[a] < self.lo[a] {
                self.lo[a] - q[a]
            } else if q[a] > self.hi[a] {
                q[a] - self.hi[a]
            } else {
                0.0
            };
            d2 += d * d;
        }
        d2
    }
}

/// k-d tree over an immutable snapshot of points.
///
/// Queries are exact. Among equidistant candidates the smallest point index
/// wins, so answers are identical to a brute-force scan.
#[derive(Debug, Clone)]
pub struct NeighborIndex {
    points: Vec<Point3>,
    /// Points permuted into tree order, so each leaf is a contiguous run.
    packed: Vec<[f64; 3]>,
    order: Vec<usize>,
    nodes: Vec<Node>,
    root: usize,
}

#[derive(Clone, Copy)]
struct Best {
    index: usize,
    dist2: f64,
}

impl Best {
    fn offer(&mut self, index: usize, dist2: f64) {
        if dist2 < self.dist2 || (dist2 == self.dist2 && index < self.index) {
            self.index = index;
            self.dist2 = dist2;
        }
    }
}

impl NeighborIndex {
    pub fn build(cloud: &PointCloud) -> Result<Self> {
        Self::from_points(cloud.points())
    }

    pub fn from_points(points: &[Point3]) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyCloud);
        }
        if let Some(i) = points.iter().position(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::NonFinite(i));
        }
        let mut index = Self {
            points: points.to_vec(),
            packed: Vec::new(),
            order: (0..points.len()).collect(),
            nodes: Vec::with_capacity(2 * points.len() / LEAF_SIZE + 1),
            root: 0,
        };
        index.root = index.build_range(0, points.len());
        index.packed = index
            .order
            .iter()
            .map(|&i| {
                let p = &index.points[i];
                [p.x, p.y, p.z]
            })
            .collect();
        Ok(index)
    }

    fn build_range(&mut self, start: usize, end: usize) -> usize {
        let mut lo = Point3::repeat(f64::INFINITY);
        let mut hi = Point3::repeat(f64::NEG_INFINITY);
        for &i in &self.order[start..end] {
            lo = lo.inf(&self.points[i]);
            hi = hi.sup(&self.points[i]);
        }
        let mut node = Node {
            lo: [lo.x, lo.y, lo.z],
            hi: [hi.x, hi.y, hi.z],
            start,
            end,
            left: NO_CHILD,
            right: NO_CHILD,
        };
        let axis = (hi - lo).imax();
        // small ranges and fully coincident points stay leaves
        if end - start > LEAF_SIZE && hi[axis] > lo[axis] {
            let mid = start + (end - start) / 2;
            let points = &self.points;
            self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
                points[a][axis].total_cmp(&points[b][axis]).then(a.cmp(&b))
            });
            node.left = self.build_range(start, mid);
            node.right = self.build_range(mid, end);
        }
        self.nodes.push(node);
        self.nodes.len() - 1
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    /// Index and Euclidean distance of the closest indexed point.
    pub fn nearest(&self, query: &Point3) -> (usize, f64) {
        let best = self.search(query, None);
        (best.index, libm::sqrt(best.dist2))
    }

    /// Closest indexed point other than `exclude`. `None` for a singleton index.
    pub fn nearest_excluding(&self, query: &Point3, exclude: usize) -> Option<(usize, f64)> {
        if self.points.len() < 2 {
            return None;
        }
        let best = self.search(query, Some(exclude));
        Some((best.index, libm::sqrt(best.dist2)))
    }

    /// Mean squared distance from each point to its nearest other point.
    pub fn self_resolution(&self) -> Result<f64> {
        let n = self.points.len();
        if n < 2 {
            return Err(Error::TooFewPoints(n));
        }
        let sum: f64 = (0..n)
            .map(|i| {
                let (_, d) = self
                    .nearest_excluding(&self.points[i], i)
                    .unwrap_or((i, 0.0));
                d * d
            })
            .sum();
        Ok(sum / n as f64)
    }

    fn search(&self, query: &Point3, exclude: Option<usize>) -> Best {
        let mut best = Best {
            index: usize::MAX,
            dist2: f64::INFINITY,
        };
        let q = [query.x, query.y, query.z];
        let exclude = exclude.unwrap_or(usize::MAX);
        self.visit(self.root, &q, exclude, &mut best);
        best
    }

    fn visit(&self, node: usize, q: &[f64; 3], exclude: usize, best: &mut Best) {
        let n = &self.nodes[node];
        if n.left == NO_CHILD {
            for k in n.start..n.end {
                let p = &self.packed[k];
                let (dx, dy, dz) = (p[0] - q[0], p[1] - q[1], p[2] - q[2]);
                let d2 = dx * dx + dy * dy + dz * dz;
                // cheap reject before the tie-aware comparison
                if d2 <= best.dist2 && self.order[k] != exclude {
                    best.offer(self.order[k], d2);
                }
            }
            return;
        }
        let dl = self.nodes[n.left].box_distance2(q);
        let dr = self.nodes[n.right].box_distance2(q);
        let (first, d_first, second, d_second) = if dl <= dr {
            (n.left, dl, n.right, dr)
        } else {
            (n.right, dr, n.left, dl)
        };
        // `<=` keeps equidistant candidates reachable for the index tie-break
        if d_first <= best.dist2 {
            self.visit(first, q, exclude, best);
        }
        if d_second <= best.dist2 {
            self.visit(second, q, exclude, best);
        }
    }
}
