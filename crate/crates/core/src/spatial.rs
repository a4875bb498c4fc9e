//! Static k-d tree over 3D points with exact k-nearest-neighbor queries.
//!
//! Results are ordered by `(squared distance, key)`, where the key is a
//! caller-provided integer (particle id). Equal distances therefore always
//! resolve to the lower key, and a candidate whose distance equals the current
//! k-th best is still explored so such ties are never lost to pruning.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::tensor3::Vec3;

const LEAF_SIZE: usize = 8;

/// Axis-aligned box, inclusive on both faces.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn new(min: Vec3, max: Vec3) -> Self {
        Aabb { min, max }
    }

    /// Tight box around `points`; `None` when empty.
    pub fn around(points: impl IntoIterator<Item = Vec3>) -> Option<Self> {
        let mut it = points.into_iter();
        let first = it.next()?;
        Some(it.fold(Aabb::new(first, first), |b, p| {
            Aabb::new(b.min.component_min(p), b.max.component_max(p))
        }))
    }

    #[inline]
    pub fn contains(&self, p: Vec3) -> bool {
        p.x >= self.min.x
            && p.x <= self.max.x
            && p.y >= self.min.y
            && p.y <= self.max.y
            && p.z >= self.min.z
            && p.z <= self.max.z
    }

    pub fn extent(&self) -> Vec3 {
        self.max - self.min
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    /// Volume in the box's own length unit cubed; zero for inverted boxes.
    pub fn volume(&self) -> f64 {
        let e = self.extent();
        if e.x < 0.0 || e.y < 0.0 || e.z < 0.0 {
            0.0
        } else {
            e.x * e.y * e.z
        }
    }

    pub fn is_valid(&self) -> bool {
        self.min.is_finite()
            && self.max.is_finite()
            && self.min.x <= self.max.x
            && self.min.y <= self.max.y
            && self.min.z <= self.max.z
    }

    /// Box shrunk by `margin` on every face (may become invalid).
    pub fn shrunk(&self, margin: f64) -> Aabb {
        let m = Vec3::new(margin, margin, margin);
        Aabb::new(self.min + m, self.max - m)
    }

    pub fn intersects(&self, o: &Aabb) -> bool {
        self.min.x <= o.max.x
            && o.min.x <= self.max.x
            && self.min.y <= o.max.y
            && o.min.y <= self.max.y
            && self.min.z <= o.max.z
            && o.min.z <= self.max.z
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    /// Position of the point in the slice the tree was built from.
    pub index: usize,
    pub dist_sq: f64,
}

impl Neighbor {
    #[inline]
    pub fn dist(&self) -> f64 {
        self.dist_sq.sqrt()
    }
}

#[derive(Debug, Clone)]
enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        axis: usize,
        value: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<Vec3>,
    keys: Vec<u64>,
    /// Point indices permuted so every leaf owns a contiguous range.
    order: Vec<usize>,
    nodes: Vec<Node>,
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    dist_sq: f64,
    key: u64,
    index: usize,
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
        self.dist_sq
            .total_cmp(&other.dist_sq)
            .then(self.key.cmp(&other.key))
    }
}

impl KdTree {
    /// Build over `points`; `keys[i]` is the tie-break key of `points[i]`.
    pub fn new(points: Vec<Vec3>, keys: Vec<u64>) -> Self {
        assert_eq!(points.len(), keys.len(), "one key per point");
        let mut tree = KdTree {
            order: (0..points.len()).collect(),
            points,
            keys,
            nodes: Vec::new(),
        };
        if !tree.points.is_empty() {
            let n = tree.points.len();
            tree.build(0, n);
        }
        tree
    }

    /// Build with keys equal to the point indices.
    pub fn from_points(points: Vec<Vec3>) -> Self {
        let keys = (0..points.len() as u64).collect();
        Self::new(points, keys)
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

    fn build(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let mut lo = self.points[self.order[start]];
        let mut hi = lo;
        for &i in &self.order[start..end] {
            lo = lo.component_min(self.points[i]);
            hi = hi.component_max(self.points[i]);
        }
        let ext = hi - lo;
        let axis = if ext.x >= ext.y && ext.x >= ext.z {
            0
        } else if ext.y >= ext.z {
            1
        } else {
            2
        };
        if ext[axis] == 0.0 {
            // All points coincide; nothing to split on.
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let mid = start + (end - start) / 2;
        let (points, keys) = (&self.points, &self.keys);
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            points[a][axis]
                .total_cmp(&points[b][axis])
                .then(keys[a].cmp(&keys[b]))
        });
        let value = self.points[self.order[mid]][axis];
        self.nodes.push(Node::Leaf { start: 0, end: 0 });
        let left = self.build(start, mid);
        let right = self.build(mid, end);
        self.nodes[id] = Node::Split {
            axis,
            value,
            left,
            right,
        };
        id
    }

    /// The `k` nearest points to `query`, ordered by (distance, key).
    pub fn knn(&self, query: Vec3, k: usize) -> Vec<Neighbor> {
        self.knn_excluding(query, k, None)
    }

    /// As [`KdTree::knn`] but never returns the point at index `exclude`.
    pub fn knn_excluding(&self, query: Vec3, k: usize, exclude: Option<usize>) -> Vec<Neighbor> {
        if k == 0 || self.nodes.is_empty() {
            return Vec::new();
        }
        let mut heap: BinaryHeap<Candidate> = BinaryHeap::with_capacity(k + 1);
        self.search(0, query, k, exclude, &mut heap);
        let mut out: Vec<Candidate> = heap.into_vec();
        out.sort();
        out.into_iter()
            .map(|c| Neighbor {
                index: c.index,
                dist_sq: c.dist_sq,
            })
            .collect()
    }

    fn search(
        &self,
        node: usize,
        q: Vec3,
        k: usize,
        exclude: Option<usize>,
        heap: &mut BinaryHeap<Candidate>,
    ) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    if Some(i) == exclude {
                        continue;
                    }
                    let c = Candidate {
                        dist_sq: (self.points[i] - q).norm_squared(),
                        key: self.keys[i],
                        index: i,
                    };
                    if heap.len() < k {
                        heap.push(c);
                    } else if c < *heap.peek().expect("heap holds k items") {
                        heap.pop();
                        heap.push(c);
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < 0.0 {
                    (left, right)
                } else {
                    (right, left)
                };
                self.search(near, q, k, exclude, heap);
                let plane_sq = diff * diff;
                // `<=` keeps equal-distance candidates reachable for the key tie-break.
                if heap.len() < k || plane_sq <= heap.peek().map_or(f64::INFINITY, |c| c.dist_sq) {
                    self.search(far, q, k, exclude, heap);
                }
            }
        }
    }

    /// All points within `radius` of `query`, ordered by (distance, key).
    pub fn within_radius(&self, query: Vec3, radius: f64) -> Vec<Neighbor> {
        let mut out = Vec::new();
        if !self.nodes.is_empty() {
            self.collect_radius(0, query, radius * radius, &mut out);
        }
        out.sort();
        out.into_iter()
            .map(|c| Neighbor {
                index: c.index,
                dist_sq: c.dist_sq,
            })
            .collect()
    }

    fn collect_radius(&self, node: usize, q: Vec3, r_sq: f64, out: &mut Vec<Candidate>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let d = (self.points[i] - q).norm_squared();
                    if d <= r_sq {
                        out.push(Candidate {
                            dist_sq: d,
                            key: self.keys[i],
                            index: i,
                        });
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < 0.0 {
                    (left, right)
                } else {
                    (right, left)
                };
                self.collect_radius(near, q, r_sq, out);
                if diff * diff <= r_sq {
                    self.collect_radius(far, q, r_sq, out);
                }
            }
        }
    }
}

/// Brute-force k-NN with the same ordering contract as [`KdTree::knn_excluding`].
/// Test oracle and fallback for tiny inputs.
pub fn brute_force_knn(
    points: &[Vec3],
    keys: &[u64],
    query: Vec3,
    k: usize,
    exclude: Option<usize>,
) -> Vec<Neighbor> {
    let mut all: Vec<Candidate> = points
        .iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != exclude)
        .map(|(i, p)| Candidate {
            dist_sq: (*p - query).norm_squared(),
            key: keys[i],
            index: i,
        })
        .collect();
    all.sort();
    all.truncate(k);
    all.into_iter()
        .map(|c| Neighbor {
            index: c.index,
            dist_sq: c.dist_sq,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn matches_brute_force_on_random_cloud() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts: Vec<Vec3> = (0..5000)
            .map(|_| Vec3::new(rng.random(), rng.random(), rng.random()))
            .collect();
        let keys: Vec<u64> = (0..pts.len() as u64).collect();
        let tree = KdTree::new(pts.clone(), keys.clone());
        for _ in 0..100 {
            let q = Vec3::new(rng.random(), rng.random(), rng.random());
            assert_eq!(tree.knn(q, 12), brute_force_knn(&pts, &keys, q, 12, None));
        }
    }

    #[test]
    fn ties_resolve_to_lower_key() {
        // Six lattice neighbors at distance 1 around the origin, keys reversed.
        let pts = vec![
            Vec3::ZERO,
            Vec3::X,
            -Vec3::X,
            Vec3::Y,
            -Vec3::Y,
            Vec3::Z,
            -Vec3::Z,
        ];
        let keys = vec![0, 60, 50, 40, 30, 20, 10];
        let tree = KdTree::new(pts, keys);
        let got: Vec<usize> = tree
            .knn_excluding(Vec3::ZERO, 3, Some(0))
            .iter()
            .map(|n| n.index)
            .collect();
        assert_eq!(got, vec![6, 5, 4]);
    }

    #[test]
    fn coincident_points_and_radius() {
        let pts = vec![Vec3::ZERO; 20];
        let tree = KdTree::from_points(pts);
        let got = tree.knn_excluding(Vec3::ZERO, 3, Some(0));
        assert_eq!(
            got.iter().map(|n| n.index).collect::<Vec<_>>(),
            vec![1, 2, 3]
        );
        assert_eq!(tree.within_radius(Vec3::X, 0.5).len(), 0);
        assert_eq!(tree.within_radius(Vec3::X, 1.0).len(), 20);
    }

    proptest! {
        #[test]
        fn knn_equals_brute_force(
            coords in prop::collection::vec((0i32..20, 0i32..20, 0i32..20), 1..200),
            q in (0i32..20, 0i32..20, 0i32..20),
            k in 1usize..15,
        ) {
            // Integer lattice coordinates produce many exact distance ties.
            let pts: Vec<Vec3> = coords.iter().map(|&(a, b, c)| Vec3::new(a as f64, b as f64, c as f64)).collect();
            let keys: Vec<u64> = (0..pts.len() as u64).rev().collect();
            let tree = KdTree::new(pts.clone(), keys.clone());
            let q = Vec3::new(q.0 as f64, q.1 as f64, q.2 as f64);
            prop_assert_eq!(tree.knn(q, k), brute_force_knn(&pts, &keys, q, k, None));
            prop_assert_eq!(tree.knn_excluding(pts[0], k, Some(0)), brute_force_knn(&pts, &keys, pts[0], k, Some(0)));
        }
    }
}
