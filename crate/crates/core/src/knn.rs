//! Exact k-nearest-neighbor search over a static point set.
//!
//! The index is a bucketed kd-tree split at the median of the widest axis.
//! Neighbors are ordered by `(squared distance, index)`, so equal distances
//! resolve to the lowest index and results match a brute-force scan bit for
//! bit.

use alloc::collections::BinaryHeap;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::error::{Error, Result};
use crate::math::{ln, sqrt};
use crate::special::ln_gamma;

const LEAF_SIZE: usize = 12;
const NONE: usize = usize::MAX;

/// `N` points of dimension `p`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSet {
    dim: usize,
    coords: Vec<f64>,
}

impl PointSet {
    pub fn new(dim: usize, coords: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::param("dim", "must be at least 1"));
        }
        if coords.len() % dim != 0 {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: coords.len() % dim,
            });
        }
        Ok(PointSet { dim, coords })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let dim = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut coords = Vec::with_capacity(dim * rows.len());
        for row in rows {
            let row = row.as_ref();
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: row.len(),
                });
            }
            coords.extend_from_slice(row);
        }
        PointSet::new(dim, coords)
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    #[inline]
    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks_exact(self.dim)
    }
}

/// Squared Euclidean distance, summed in axis order.
#[inline]
pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        acc += d * d;
    }
    acc
}

/// k neighbors for each of `N` points.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborResult {
    k: usize,
    /// `N × k`, each row sorted by (distance, index).
    indices: Vec<usize>,
    /// Distance to the k-th neighbor.
    radii: Vec<f64>,
}

impl NeighborResult {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.radii.len()
    }

    pub fn is_empty(&self) -> bool {
        self.radii.is_empty()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.indices[i * self.k..(i + 1) * self.k]
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn radius(&self, i: usize) -> f64 {
        self.radii[i]
    }

    pub fn radii(&self) -> &[f64] {
        &self.radii
    }
}

#[derive(Debug, Clone)]
struct Node {
    start: usize,
    end: usize,
    axis: usize,
    split: f64,
    left: usize,
    right: usize,
}

#[derive(Clone, Copy)]
struct Candidate {
    d2: f64,
    idx: usize,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
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
            .then(self.idx.cmp(&other.idx))
    }
}

/// Immutable kd-tree over a [`PointSet`].
#[derive(Debug, Clone)]
pub struct NeighborIndex {
    points: PointSet,
    perm: Vec<usize>,
    nodes: Vec<Node>,
}

impl NeighborIndex {
    /// Builds the tree. Requires `N ≥ 2` and finite coordinates.
    pub fn build(points: PointSet) -> Result<Self> {
        let n = points.len();
        if n < 2 {
            return Err(Error::TooFewPoints {
                required: 2,
                actual: n,
            });
        }
        for (i, p) in points.iter().enumerate() {
            if let Some(d) = p.iter().position(|c| !c.is_finite()) {
                return Err(Error::NonFiniteCoordinate { point: i, dim: d });
            }
        }
        let mut index = NeighborIndex {
            perm: (0..n).collect(),
            nodes: Vec::with_capacity(2 * n / LEAF_SIZE + 1),
            points,
        };
        index.build_node(0, n);
        Ok(index)
    }

    fn build_node(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node {
            start,
            end,
            axis: 0,
            split: 0.0,
            left: NONE,
            right: NONE,
        });
        if end - start <= LEAF_SIZE {
            return id;
        }
        let dim = self.points.dim;
        let mut best_axis = 0;
        let mut best_spread = -1.0;
        for axis in 0..dim {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for &i in &self.perm[start..end] {
                let c = self.points.coords[i * dim + axis];
                lo = lo.min(c);
                hi = hi.max(c);
            }
            if hi - lo > best_spread {
                best_spread = hi - lo;
                best_axis = axis;
            }
        }
        if best_spread <= 0.0 {
            // all points coincide; keep as an (oversized) leaf
            return id;
        }
        let mid = start + (end - start) / 2;
        let coords = &self.points.coords;
        self.perm[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            coords[a * dim + best_axis]
                .total_cmp(&coords[b * dim + best_axis])
                .then(a.cmp(&b))
        });
        let split = coords[self.perm[mid] * dim + best_axis];
        let left = self.build_node(start, mid);
        let right = self.build_node(mid, end);
        let node = &mut self.nodes[id];
        node.axis = best_axis;
        node.split = split;
        node.left = left;
        node.right = right;
        id
    }

    pub fn points(&self) -> &PointSet {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points.dim
    }

    /// k nearest neighbors of every indexed point, excluding the point itself.
    pub fn knn_all(&self, k: usize) -> Result<NeighborResult> {
        let n = self.len();
        if k == 0 || k >= n {
            return Err(Error::param(
                "k",
                alloc::format!("need 1 <= k <= N-1 = {}, got {k}", n - 1),
            ));
        }
        let mut indices = Vec::with_capacity(n * k);
        let mut radii = Vec::with_capacity(n);
        let mut heap = BinaryHeap::with_capacity(k + 1);
        let mut off = vec![0.0; self.dim()];
        for i in 0..n {
            self.search(self.points.point(i), k, Some(i), &mut heap, &mut off);
            let start = indices.len();
            indices.resize(start + k, 0);
            let mut kth = 0.0;
            for slot in (0..k).rev() {
                let c = heap.pop().expect("heap holds k candidates");
                if slot == k - 1 {
                    kth = c.d2;
                }
                indices[start + slot] = c.idx;
            }
            radii.push(sqrt(kth));
        }
        Ok(NeighborResult { k, indices, radii })
    }

    /// k nearest indexed points to an arbitrary query, sorted ascending.
    /// Returns `(index, distance)` pairs.
    pub fn query(&self, q: &[f64], k: usize) -> Result<Vec<(usize, f64)>> {
        if q.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: q.len(),
            });
        }
        if k == 0 || k > self.len() {
            return Err(Error::param("k", "need 1 <= k <= N"));
        }
        let mut heap = BinaryHeap::with_capacity(k + 1);
        let mut off = vec![0.0; self.dim()];
        self.search(q, k, None, &mut heap, &mut off);
        let mut out = heap.into_sorted_vec();
        Ok(out.drain(..).map(|c| (c.idx, sqrt(c.d2))).collect())
    }

    fn search(
        &self,
        q: &[f64],
        k: usize,
        exclude: Option<usize>,
        heap: &mut BinaryHeap<Candidate>,
        off: &mut [f64],
    ) {
        heap.clear();
        off.iter_mut().for_each(|o| *o = 0.0);
        self.visit(0, q, k, exclude, heap, off);
    }

    fn visit(
        &self,
        id: usize,
        q: &[f64],
        k: usize,
        exclude: Option<usize>,
        heap: &mut BinaryHeap<Candidate>,
        off: &mut [f64],
    ) {
        let node = &self.nodes[id];
        if node.left == NONE {
            for &i in &self.perm[node.start..node.end] {
                if Some(i) == exclude {
                    continue;
                }
                let cand = Candidate {
                    d2: squared_distance(q, self.points.point(i)),
                    idx: i,
                };
                if heap.len() < k {
                    heap.push(cand);
                } else if cand < *heap.peek().expect("non-empty") {
                    heap.pop();
                    heap.push(cand);
                }
            }
            return;
        }
        let diff = q[node.axis] - node.split;
        let (near, far) = if diff < 0.0 {
            (node.left, node.right)
        } else {
            (node.right, node.left)
        };
        self.visit(near, q, k, exclude, heap, off);

        let saved = off[node.axis];
        off[node.axis] = diff.abs();
        // lower bound on the distance to anything in the far cell, summed in
        // axis order so it never exceeds a true squared distance
        let bound: f64 = off.iter().map(|o| o * o).fold(0.0, |a, b| a + b);
        // equality still has to be explored: a tie may carry a lower index
        if heap.len() < k || bound <= heap.peek().expect("non-empty").d2 {
            self.visit(far, q, k, exclude, heap, off);
        }
        off[node.axis] = saved;
    }
}

/// Builds an index; convenience for [`NeighborIndex::build`].
pub fn build_index(points: PointSet) -> Result<NeighborIndex> {
    NeighborIndex::build(points)
}

/// Volume of the `p`-ball of the given radius: r^p · π^{p/2} / Γ(p/2 + 1).
pub fn sphere_volume(radius: f64, p: usize) -> f64 {
    if radius == 0.0 {
        return 0.0;
    }
    crate::math::exp(ln_sphere_volume(radius, p))
}

/// Logarithm of [`sphere_volume`]; stays finite where the volume itself
/// would underflow in high dimension.
pub fn ln_sphere_volume(radius: f64, p: usize) -> f64 {
    let p = p as f64;
    p * ln(radius) + ln_unit_ball(p)
}

#[inline]
pub(crate) fn ln_unit_ball(p: f64) -> f64 {
    0.5 * p * ln(core::f64::consts::PI) - ln_gamma(0.5 * p + 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use core::f64::consts::PI;

    fn index_1d(xs: &[f64]) -> NeighborIndex {
        NeighborIndex::build(PointSet::new(1, xs.to_vec()).unwrap()).unwrap()
    }

    #[test]
    fn collinear_tie_picks_lower_index() {
        let idx = index_1d(&[0.0, 1.0, 2.0]);
        let res = idx.knn_all(1).unwrap();
        assert_eq!(res.neighbors(1), &[0]);
        assert_eq!(res.radius(1), 1.0);
    }

    #[test]
    fn duplicate_points_have_zero_radius() {
        let idx = index_1d(&[0.0, 0.0, 1.0]);
        let res = idx.knn_all(1).unwrap();
        assert_eq!(res.neighbors(0), &[1]);
        assert_eq!(res.radius(0), 0.0);
        assert_eq!(res.neighbors(2), &[0]);
        assert_eq!(res.radius(2), 1.0);
    }

    #[test]
    fn unit_square_corners() {
        let pts = PointSet::from_rows(&[[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]).unwrap();
        let res = NeighborIndex::build(pts).unwrap().knn_all(2).unwrap();
        let expect = [[1, 3], [0, 2], [1, 3], [0, 2]];
        for (i, e) in expect.iter().enumerate() {
            assert_eq!(res.neighbors(i), e);
            assert_eq!(res.radius(i), 1.0);
        }
    }

    #[test]
    fn k_equal_n_minus_one_returns_everyone_else() {
        let xs: Vec<f64> = (0..30).map(|i| (i * 7 % 30) as f64 * 0.1).collect();
        let res = index_1d(&xs).knn_all(29).unwrap();
        for i in 0..30 {
            let mut nb = res.neighbors(i).to_vec();
            nb.sort_unstable();
            let expect: Vec<usize> = (0..30).filter(|&j| j != i).collect();
            assert_eq!(nb, expect);
        }
    }

    #[test]
    fn construction_errors() {
        assert!(matches!(
            NeighborIndex::build(PointSet::new(2, vec![0.0, 1.0]).unwrap()),
            Err(Error::TooFewPoints { .. })
        ));
        assert!(matches!(
            NeighborIndex::build(PointSet::new(1, vec![0.0, f64::NAN, 1.0]).unwrap()),
            Err(Error::NonFiniteCoordinate { point: 1, dim: 0 })
        ));
        let idx = index_1d(&[0.0, 1.0, 2.0]);
        assert!(idx.knn_all(0).is_err());
        assert!(idx.knn_all(3).is_err());
    }

    #[test]
    fn all_identical_points() {
        let res = index_1d(&[3.0; 40]).knn_all(4).unwrap();
        assert_eq!(res.neighbors(0), &[1, 2, 3, 4]);
        assert_eq!(res.neighbors(2), &[0, 1, 3, 4]);
        assert!(res.radii().iter().all(|&r| r == 0.0));
    }

    #[test]
    fn arbitrary_query_sorted() {
        let idx = index_1d(&[0.0, 5.0, 1.0, 3.0]);
        let q = idx.query(&[2.9], 3).unwrap();
        assert_eq!(q.iter().map(|x| x.0).collect::<Vec<_>>(), vec![3, 2, 1]);
    }

    #[test]
    fn sphere_volumes_closed_form() {
        assert_relative_eq!(sphere_volume(1.0, 1), 2.0, max_relative = 1e-14);
        assert_relative_eq!(sphere_volume(1.0, 2), PI, max_relative = 1e-14);
        assert_relative_eq!(sphere_volume(2.0, 3), 32.0 * PI / 3.0, max_relative = 1e-14);
        assert_eq!(sphere_volume(0.0, 4), 0.0);
    }

    #[test]
    fn sphere_volume_scales_as_r_to_the_p() {
        for p in 1..12 {
            let c = sphere_volume(1.0, p);
            let mut prev = 0.0;
            for i in 1..50 {
                let r = 0.1 * i as f64;
                let v = sphere_volume(r, p);
                assert!(v > prev);
                assert_relative_eq!(v / r.powi(p as i32), c, max_relative = 1e-12);
                prev = v;
            }
        }
    }
}
