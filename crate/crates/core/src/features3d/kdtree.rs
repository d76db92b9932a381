//! Static 3-d tree for k-nearest-neighbour and radius queries.
//!
//! Results are ordered by `(squared distance, index)`, so equidistant
//! neighbours never depend on build order.

pub struct KdTree<'a> {
    points: &'a [[f64; 3]],
    /// Permuted point indices; the subtree over `lo..hi` splits at `mid = (lo + hi) / 2`.
    order: Vec<usize>,
    axis: Vec<u8>,
}

const LEAF: usize = 8;

#[inline]
fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    d[0] * d[0] + d[1] * d[1] + d[2] * d[2]
}

impl<'a> KdTree<'a> {
    pub fn build(points: &'a [[f64; 3]]) -> Self {
        let mut order: Vec<usize> = (0..points.len()).collect();
        let mut axis = vec![0u8; points.len()];
        Self::build_rec(points, &mut order, &mut axis);
        KdTree { points, order, axis }
    }

    fn build_rec(points: &[[f64; 3]], order: &mut [usize], axis: &mut [u8]) {
        let n = order.len();
        if n <= LEAF {
            return;
        }
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for &i in order.iter() {
            for a in 0..3 {
                lo[a] = lo[a].min(points[i][a]);
                hi[a] = hi[a].max(points[i][a]);
            }
        }
        let ax = (0..3).max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])).then(b.cmp(&a))).unwrap();
        let mid = n / 2;
        order.select_nth_unstable_by(mid, |&i, &j| points[i][ax].total_cmp(&points[j][ax]).then(i.cmp(&j)));
        axis[mid] = ax as u8;
        let (left, right) = order.split_at_mut(mid);
        let (axl, axr) = axis.split_at_mut(mid);
        Self::build_rec(points, left, axl);
        Self::build_rec(points, &mut right[1..], &mut axr[1..]);
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// The `k` nearest points (the query point itself included if it is in the set).
    pub fn knn(&self, q: &[f64; 3], k: usize) -> Vec<(f64, usize)> {
        let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
        if k > 0 {
            self.knn_rec(q, k, 0, self.order.len(), &mut best);
        }
        best
    }

    fn push_best(best: &mut Vec<(f64, usize)>, k: usize, cand: (f64, usize)) {
        let key = |c: &(f64, usize)| (c.0, c.1);
        if best.len() == k {
            let worst = best[k - 1];
            if (cand.0, cand.1) >= key(&worst) {
                return;
            }
            best.pop();
        }
        let pos = best.partition_point(|c| key(c) < key(&cand));
        best.insert(pos, cand);
    }

    fn knn_rec(&self, q: &[f64; 3], k: usize, lo: usize, hi: usize, best: &mut Vec<(f64, usize)>) {
        if hi - lo <= LEAF {
            for &i in &self.order[lo..hi] {
                Self::push_best(best, k, (dist2(q, &self.points[i]), i));
            }
            return;
        }
        let mid = lo + (hi - lo) / 2;
        let i = self.order[mid];
        let ax = self.axis[mid] as usize;
        Self::push_best(best, k, (dist2(q, &self.points[i]), i));
        let diff = q[ax] - self.points[i][ax];
        let (near, far) = if diff < 0.0 { ((lo, mid), (mid + 1, hi)) } else { ((mid + 1, hi), (lo, mid)) };
        self.knn_rec(q, k, near.0, near.1, best);
        if best.len() < k || diff * diff <= best[best.len() - 1].0 {
            self.knn_rec(q, k, far.0, far.1, best);
        }
    }

    /// All points with squared distance `<= r²`, sorted by `(distance², index)`.
    pub fn within(&self, q: &[f64; 3], r: f64) -> Vec<(f64, usize)> {
        let mut out = Vec::new();
        self.within_rec(q, r * r, 0, self.order.len(), &mut out);
        out.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        out
    }

    fn within_rec(&self, q: &[f64; 3], r2: f64, lo: usize, hi: usize, out: &mut Vec<(f64, usize)>) {
        if hi - lo <= LEAF {
            for &i in &self.order[lo..hi] {
                let d = dist2(q, &self.points[i]);
                if d <= r2 {
                    out.push((d, i));
                }
            }
            return;
        }
        let mid = lo + (hi - lo) / 2;
        let i = self.order[mid];
        let ax = self.axis[mid] as usize;
        let d = dist2(q, &self.points[i]);
        if d <= r2 {
            out.push((d, i));
        }
        let diff = q[ax] - self.points[i][ax];
        if diff <= 0.0 || diff * diff <= r2 {
            self.within_rec(q, r2, lo, mid, out);
        }
        if diff >= 0.0 || diff * diff <= r2 {
            self.within_rec(q, r2, mid + 1, hi, out);
        }
    }
}
