//! Complete binary tree of partial sums for O(log n) weighted selection.
//!
//! Internal nodes are always recomputed from their two children, so the
//! stored sums depend only on the current leaf values and never accumulate
//! update drift.

#[derive(Debug, Clone, PartialEq)]
pub struct SumTree {
    leaves: usize,
    width: usize,
    nodes: Vec<f64>,
}

impl SumTree {
    pub fn new(leaves: usize) -> Self {
        let width = leaves.max(1).next_power_of_two();
        SumTree {
            leaves,
            width,
            nodes: vec![0.0; 2 * width],
        }
    }

    pub fn from_weights(weights: &[f64]) -> Self {
        let mut t = SumTree::new(weights.len());
        t.nodes[t.width..t.width + weights.len()].copy_from_slice(weights);
        t.rebuild();
        t
    }

    /// Recompute every internal node from the leaves.
    pub fn rebuild(&mut self) {
        for i in (1..self.width).rev() {
            self.nodes[i] = self.nodes[2 * i] + self.nodes[2 * i + 1];
        }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.leaves
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.leaves == 0
    }

    #[inline]
    pub fn get(&self, i: usize) -> f64 {
        self.nodes[self.width + i]
    }

    pub fn leaves(&self) -> &[f64] {
        &self.nodes[self.width..self.width + self.leaves]
    }

    /// Set a leaf without touching its ancestors; call [`SumTree::rebuild`]
    /// or [`SumTree::refresh_path`] afterwards.
    #[inline]
    pub fn set_lazy(&mut self, i: usize, w: f64) {
        self.nodes[self.width + i] = w;
    }

    #[inline]
    pub fn refresh_path(&mut self, i: usize) {
        let mut n = (self.width + i) / 2;
        while n >= 1 {
            self.nodes[n] = self.nodes[2 * n] + self.nodes[2 * n + 1];
            n /= 2;
        }
    }

    #[inline]
    pub fn set(&mut self, i: usize, w: f64) {
        self.set_lazy(i, w);
        self.refresh_path(i);
    }

    #[inline]
    pub fn total(&self) -> f64 {
        self.nodes[1]
    }

    /// Leaf `i` such that the prefix sum before `i` is `<= target` and the
    /// prefix sum through `i` is `> target`. Never returns a zero-weight leaf
    /// while the total is positive, even when rounding pushes `target` past a
    /// boundary.
    pub fn find(&self, target: f64) -> Option<usize> {
        if !(self.total() > 0.0) {
            return None;
        }
        let mut node = 1;
        let mut u = target;
        while node < self.width {
            let left = 2 * node;
            let lw = self.nodes[left];
            let rw = self.nodes[left + 1];
            if lw > 0.0 && (u < lw || rw <= 0.0) {
                node = left;
            } else {
                u -= lw;
                node = left + 1;
            }
        }
        Some(node - self.width)
    }
}

/// Neumaier-compensated sum.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn find_respects_intervals() {
        let t = SumTree::from_weights(&[1.0, 3.0, 0.0, 2.0]);
        assert_eq!(t.total(), 6.0);
        assert_eq!(t.find(0.0), Some(0));
        assert_eq!(t.find(0.999), Some(0));
        assert_eq!(t.find(1.0), Some(1));
        assert_eq!(t.find(3.999), Some(1));
        assert_eq!(t.find(4.0), Some(3));
        // past the end falls back to the last positive leaf
        assert_eq!(t.find(7.0), Some(3));
    }

    #[test]
    fn empty_total_yields_none() {
        let t = SumTree::from_weights(&[0.0, 0.0]);
        assert_eq!(t.find(0.0), None);
    }

    #[test]
    fn updates_match_rebuild_bitwise() {
        let mut t = SumTree::new(37);
        let mut w = vec![0.0; 37];
        let mut x = 0.123_f64;
        for step in 0..2000 {
            x = (x * 3.7 + 0.31).fract();
            let i = (x * 37.0) as usize % 37;
            let v = x * 10f64.powi((step % 9) as i32 - 4);
            w[i] = v;
            t.set(i, v);
        }
        let fresh = SumTree::from_weights(&w);
        assert_eq!(t, fresh);
    }

    #[test]
    fn compensated_sum_beats_naive() {
        let mut v = vec![1.0e16];
        v.extend(std::iter::repeat_n(1.0, 1000));
        v.push(-1.0e16);
        assert_eq!(compensated_sum(v.iter().copied()), 1000.0);
    }
}
