//! Balanced k-d tree over fixed-dimension points.
//!
//! One implementation serves both the 3-D coordinate searches (surface
//! registration, inlier counting) and the 33-D descriptor matching.
//! Queries are exact: results match a linear scan ordered by
//! (squared distance, insertion index), which keeps every downstream
//! consumer deterministic regardless of build or traversal order.

const LEAF_SIZE: usize = 12;

#[derive(Clone, Debug)]
enum Node {
    Leaf {
        begin: u32,
        end: u32,
    },
    Split {
        axis: u8,
        value: f64,
        left: u32,
        right: u32,
    },
}

#[derive(Clone, Debug)]
pub struct KdTree<const D: usize> {
    pts: Vec<[f64; D]>,
    /// Permutation of point indices in tree layout order.
    order: Vec<u32>,
    nodes: Vec<Node>,
    root: u32,
}

#[derive(Clone, Copy, PartialEq)]
struct Cand {
    d2: f64,
    idx: u32,
}

impl Eq for Cand {}

impl Ord for Cand {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        // d2 is never NaN here; ties fall back to the index so heap
        // contents are a total order.
        self.d2
            .partial_cmp(&other.d2)
            .unwrap()
            .then(self.idx.cmp(&other.idx))
    }
}

impl PartialOrd for Cand {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

fn dist2<const D: usize>(a: &[f64; D], b: &[f64; D]) -> f64 {
    let mut s = 0.0;
    for i in 0..D {
        let d = a[i] - b[i];
        s += d * d;
    }
    s
}

impl<const D: usize> KdTree<D> {
    pub fn build(pts: Vec<[f64; D]>) -> Self {
        let n = pts.len();
        let mut order: Vec<u32> = (0..n as u32).collect();
        let mut nodes = Vec::new();
        let root = if n == 0 {
            0
        } else {
            Self::build_range(&pts, &mut order, &mut nodes, 0, n)
        };
        Self {
            pts,
            order,
            nodes,
            root,
        }
    }

    fn build_range(
        pts: &[[f64; D]],
        order: &mut [u32],
        nodes: &mut Vec<Node>,
        begin: usize,
        end: usize,
    ) -> u32 {
        if end - begin <= LEAF_SIZE {
            nodes.push(Node::Leaf {
                begin: begin as u32,
                end: end as u32,
            });
            return (nodes.len() - 1) as u32;
        }
        // Split on the axis with the largest spread in this range.
        let mut lo = [f64::INFINITY; D];
        let mut hi = [f64::NEG_INFINITY; D];
        for &i in &order[begin..end] {
            let p = &pts[i as usize];
            for a in 0..D {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        let mut axis = 0;
        let mut spread = -1.0;
        for a in 0..D {
            let s = hi[a] - lo[a];
            if s > spread {
                spread = s;
                axis = a;
            }
        }
        let mid = (end - begin) / 2;
        let range = &mut order[begin..end];
        range.select_nth_unstable_by(mid, |&x, &y| {
            let (px, py) = (pts[x as usize][axis], pts[y as usize][axis]);
            px.partial_cmp(&py).unwrap().then(x.cmp(&y))
        });
        let split_value = pts[range[mid] as usize][axis];
        let left = Self::build_range(pts, order, nodes, begin, begin + mid);
        let right = Self::build_range(pts, order, nodes, begin + mid, end);
        nodes.push(Node::Split {
            axis: axis as u8,
            value: split_value,
            left,
            right,
        });
        (nodes.len() - 1) as u32
    }

    pub fn len(&self) -> usize {
        self.pts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pts.is_empty()
    }

    pub fn point(&self, idx: u32) -> &[f64; D] {
        &self.pts[idx as usize]
    }

    /// Exact k nearest neighbors, ascending by (squared distance, index).
    pub fn knn(&self, q: &[f64; D], k: usize) -> Vec<(u32, f64)> {
        if self.is_empty() || k == 0 {
            return Vec::new();
        }
        let mut heap: std::collections::BinaryHeap<Cand> =
            std::collections::BinaryHeap::with_capacity(k + 1);
        self.knn_rec(self.root, q, k, &mut heap);
        let mut out: Vec<Cand> = heap.into_vec();
        out.sort_unstable();
        out.into_iter().map(|c| (c.idx, c.d2)).collect()
    }

    fn knn_rec(&self, node: u32, q: &[f64; D], k: usize, heap: &mut std::collections::BinaryHeap<Cand>) {
        match &self.nodes[node as usize] {
            Node::Leaf { begin, end } => {
                for &i in &self.order[*begin as usize..*end as usize] {
                    let d2 = dist2(q, &self.pts[i as usize]);
                    let cand = Cand { d2, idx: i };
                    if heap.len() < k {
                        heap.push(cand);
                    } else if cand < *heap.peek().unwrap() {
                        heap.pop();
                        heap.push(cand);
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let delta = q[*axis as usize] - value;
                let (near, far) = if delta < 0.0 { (*left, *right) } else { (*right, *left) };
                self.knn_rec(near, q, k, heap);
                // The far side may still hold an equal-distance point that
                // wins on index, so only prune on a strict bound.
                let worst = heap.peek().map(|c| c.d2).unwrap_or(f64::INFINITY);
                if heap.len() < k || delta * delta <= worst {
                    self.knn_rec(far, q, k, heap);
                }
            }
        }
    }

    /// Nearest neighbor; ties resolved toward the smaller index.
    pub fn nearest(&self, q: &[f64; D]) -> Option<(u32, f64)> {
        self.knn(q, 1).first().copied()
    }

    /// Nearest neighbor with squared distance ≤ `d2_bound`, or None.
    /// The bound prunes the search, so this is much cheaper than
    /// [`Self::nearest`] when most queries have no close match.
    pub fn nearest_within(&self, q: &[f64; D], d2_bound: f64) -> Option<(u32, f64)> {
        if self.is_empty() {
            return None;
        }
        let mut best: Option<Cand> = None;
        self.nearest_within_rec(self.root, q, d2_bound, &mut best);
        best.map(|c| (c.idx, c.d2))
    }

    fn nearest_within_rec(&self, node: u32, q: &[f64; D], d2_bound: f64, best: &mut Option<Cand>) {
        match &self.nodes[node as usize] {
            Node::Leaf { begin, end } => {
                for &i in &self.order[*begin as usize..*end as usize] {
                    let d2 = dist2(q, &self.pts[i as usize]);
                    if d2 <= d2_bound {
                        let cand = Cand { d2, idx: i };
                        if best.map_or(true, |b| cand < b) {
                            *best = Some(cand);
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
                let delta = q[*axis as usize] - value;
                let (near, far) = if delta < 0.0 { (*left, *right) } else { (*right, *left) };
                self.nearest_within_rec(near, q, d2_bound, best);
                let limit = best.map(|b| b.d2).unwrap_or(d2_bound);
                if delta * delta <= limit {
                    self.nearest_within_rec(far, q, d2_bound, best);
                }
            }
        }
    }

    /// All points with squared distance ≤ `r2`, ascending by
    /// (squared distance, index).
    pub fn within_radius(&self, q: &[f64; D], r2: f64) -> Vec<(u32, f64)> {
        let mut out = Vec::new();
        if !self.is_empty() {
            self.radius_rec(self.root, q, r2, &mut out);
        }
        out.sort_unstable_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
        out
    }

    fn radius_rec(&self, node: u32, q: &[f64; D], r2: f64, out: &mut Vec<(u32, f64)>) {
        match &self.nodes[node as usize] {
            Node::Leaf { begin, end } => {
                for &i in &self.order[*begin as usize..*end as usize] {
                    let d2 = dist2(q, &self.pts[i as usize]);
                    if d2 <= r2 {
                        out.push((i, d2));
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let delta = q[*axis as usize] - value;
                let (near, far) = if delta < 0.0 { (*left, *right) } else { (*right, *left) };
                self.radius_rec(near, q, r2, out);
                if delta * delta <= r2 {
                    self.radius_rec(far, q, r2, out);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scan_knn<const D: usize>(pts: &[[f64; D]], q: &[f64; D], k: usize) -> Vec<(u32, f64)> {
        let mut all: Vec<(u32, f64)> = pts
            .iter()
            .enumerate()
            .map(|(i, p)| (i as u32, dist2(q, p)))
            .collect();
        all.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
        all.truncate(k);
        all
    }

    #[test]
    fn knn_matches_linear_scan_3d() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut pts: Vec<[f64; 3]> = (0..800)
            .map(|_| [rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)])
            .collect();
        // Duplicates force tie-breaking through the index order.
        for i in 0..50 {
            pts.push(pts[i * 7]);
        }
        let tree = KdTree::build(pts.clone());
        for _ in 0..200 {
            let q = [rng.gen_range(-6.0..6.0), rng.gen_range(-6.0..6.0), rng.gen_range(-6.0..6.0)];
            for k in [1, 2, 5, 30] {
                assert_eq!(tree.knn(&q, k), scan_knn(&pts, &q, k));
            }
        }
    }

    #[test]
    fn knn_matches_linear_scan_33d() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let pts: Vec<[f64; 33]> = (0..1000)
            .map(|_| std::array::from_fn(|_| rng.gen_range(0.0..100.0)))
            .collect();
        let tree = KdTree::build(pts.clone());
        for _ in 0..50 {
            let q: [f64; 33] = std::array::from_fn(|_| rng.gen_range(0.0..100.0));
            assert_eq!(tree.knn(&q, 1), scan_knn(&pts, &q, 1));
            assert_eq!(tree.knn(&q, 4), scan_knn(&pts, &q, 4));
        }
    }

    #[test]
    fn contained_point_is_its_own_nearest() {
        let pts = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 2.0, 0.0]];
        let tree = KdTree::build(pts);
        let (idx, d2) = tree.nearest(&[1.0, 0.0, 0.0]).unwrap();
        assert_eq!((idx, d2), (1, 0.0));
    }

    #[test]
    fn two_point_index_returns_both_in_order() {
        let tree = KdTree::build(vec![[0.0, 0.0, 0.0], [3.0, 0.0, 0.0]]);
        let got = tree.knn(&[1.0, 0.0, 0.0], 2);
        assert_eq!(got[0].0, 0);
        assert_eq!(got[1].0, 1);
    }

    #[test]
    fn within_radius_matches_filter() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let pts: Vec<[f64; 3]> = (0..500)
            .map(|_| [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)])
            .collect();
        let tree = KdTree::build(pts.clone());
        for _ in 0..50 {
            let q = [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)];
            let r2 = rng.gen_range(0.1..4.0);
            let mut expect: Vec<(u32, f64)> = pts
                .iter()
                .enumerate()
                .filter_map(|(i, p)| {
                    let d2 = dist2(&q, p);
                    (d2 <= r2).then_some((i as u32, d2))
                })
                .collect();
            expect.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
            assert_eq!(tree.within_radius(&q, r2), expect);
        }
    }

    #[test]
    fn nearest_within_respects_bound() {
        let tree = KdTree::build(vec![[0.0, 0.0, 0.0], [10.0, 0.0, 0.0]]);
        assert_eq!(tree.nearest_within(&[2.0, 0.0, 0.0], 1.0), None);
        assert_eq!(tree.nearest_within(&[2.0, 0.0, 0.0], 4.0), Some((0, 4.0)));
        assert_eq!(tree.nearest_within(&[9.0, 0.0, 0.0], 4.0), Some((1, 1.0)));
    }

    #[test]
    fn integer_lattice_ties_match_scan() {
        let mut pts = Vec::new();
        for x in 0..6 {
            for y in 0..6 {
                for z in 0..3 {
                    pts.push([x as f64, y as f64, z as f64]);
                }
            }
        }
        let tree = KdTree::build(pts.clone());
        // Query equidistant from a whole shell of lattice points.
        let q = [2.5, 2.5, 1.0];
        for k in [1, 3, 4, 8, 12] {
            assert_eq!(tree.knn(&q, k), scan_knn(&pts, &q, k));
        }
    }

    #[test]
    fn empty_tree_yields_nothing() {
        let tree: KdTree<3> = KdTree::build(Vec::new());
        assert!(tree.knn(&[0.0; 3], 3).is_empty());
        assert!(tree.nearest(&[0.0; 3]).is_none());
        assert!(tree.within_radius(&[0.0; 3], 1.0).is_empty());
    }
}
