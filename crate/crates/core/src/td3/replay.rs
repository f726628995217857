//! Proportional prioritized replay over a ring buffer, backed by a sum tree.

use rand::Rng;

use crate::error::{Error, Result};

/// Binary sum tree over a power-of-two number of leaves. Internal nodes are
/// always recomputed from their children, so totals never drift.
#[derive(Clone, Debug)]
struct SumTree {
    leaves: usize,
    nodes: Vec<f64>,
}

impl SumTree {
    fn new(capacity: usize) -> Self {
        let leaves = capacity.next_power_of_two();
        Self { leaves, nodes: vec![0.0; 2 * leaves] }
    }

    fn total(&self) -> f64 {
        self.nodes[1]
    }

    fn get(&self, i: usize) -> f64 {
        self.nodes[self.leaves + i]
    }

    fn set(&mut self, i: usize, p: f64) {
        let mut k = self.leaves + i;
        self.nodes[k] = p;
        while k > 1 {
            k /= 2;
            self.nodes[k] = self.nodes[2 * k] + self.nodes[2 * k + 1];
        }
    }

    /// Leaf whose cumulative interval contains `u`. Empty subtrees are never
    /// entered, which also absorbs rounding at the top end.
    fn find(&self, mut u: f64) -> usize {
        let mut k = 1;
        while k < self.leaves {
            let (l, r) = (self.nodes[2 * k], self.nodes[2 * k + 1]);
            if r == 0.0 || (u < l && l > 0.0) {
                k *= 2;
            } else {
                u -= l;
                k = 2 * k + 1;
            }
        }
        k - self.leaves
    }
}

/// Indices and importance weights of one prioritized draw.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub indices: Vec<usize>,
    /// `(N P(i))^-beta`, normalised by the largest weight in the batch.
    pub weights: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct ReplayBuffer<T> {
    capacity: usize,
    items: Vec<T>,
    next: usize,
    tree: SumTree,
    alpha: f64,
    eps: f64,
    max_priority: f64,
}

impl<T> ReplayBuffer<T> {
    pub fn new(capacity: usize, alpha: f64, eps: f64) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Precondition("replay capacity must be positive".into()));
        }
        if !(alpha >= 0.0 && eps > 0.0) {
            return Err(Error::Precondition(format!("bad PER parameters alpha={alpha} eps={eps}")));
        }
        Ok(Self {
            capacity,
            items: Vec::with_capacity(capacity.min(1 << 16)),
            next: 0,
            tree: SumTree::new(capacity),
            alpha,
            eps,
            max_priority: 1.0,
        })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn get(&self, i: usize) -> Option<&T> {
        self.items.get(i)
    }

    /// Stored priority, already raised to `alpha`.
    pub fn priority(&self, i: usize) -> f64 {
        self.tree.get(i)
    }

    pub fn total_priority(&self) -> f64 {
        self.tree.total()
    }

    pub fn probability(&self, i: usize) -> f64 {
        self.tree.get(i) / self.tree.total()
    }

    /// `(|td| + eps)^alpha`.
    pub fn priority_for(&self, td_error: f64) -> f64 {
        (td_error.abs() + self.eps).powf(self.alpha)
    }

    /// Inserts with the largest priority seen so far, overwriting the oldest
    /// entry once full. Returns the slot index.
    pub fn push(&mut self, item: T) -> usize {
        let p = self.max_priority;
        self.insert(item, p)
    }

    pub fn push_with_error(&mut self, item: T, td_error: f64) -> usize {
        let p = self.priority_for(td_error);
        self.max_priority = self.max_priority.max(p);
        self.insert(item, p)
    }

    fn insert(&mut self, item: T, p: f64) -> usize {
        let slot = self.next;
        if self.items.len() < self.capacity {
            self.items.push(item);
        } else {
            self.items[slot] = item;
        }
        self.tree.set(slot, p);
        self.next = (slot + 1) % self.capacity;
        slot
    }

    pub fn update_priorities(&mut self, indices: &[usize], td_errors: &[f64]) -> Result<()> {
        if indices.len() != td_errors.len() {
            return Err(Error::Precondition("indices and td errors differ in length".into()));
        }
        for (&i, &td) in indices.iter().zip(td_errors) {
            if i >= self.items.len() {
                return Err(Error::Precondition(format!("replay index {i} out of range")));
            }
            if !td.is_finite() {
                return Err(Error::NonFinite("td error"));
            }
            let p = self.priority_for(td);
            self.max_priority = self.max_priority.max(p);
            self.tree.set(i, p);
        }
        Ok(())
    }

    /// One index drawn with probability proportional to its priority.
    pub fn sample_index<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.tree.find(rng.random::<f64>() * self.tree.total())
    }

    /// Stratified proportional draw of `n` indices: the priority mass is cut
    /// into `n` equal segments and one index is drawn from each.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, beta: f64, rng: &mut R) -> Result<Sample> {
        if self.is_empty() || n == 0 {
            return Err(Error::Precondition("cannot sample an empty replay buffer".into()));
        }
        let total = self.tree.total();
        let seg = total / n as f64;
        let len = self.len() as f64;
        let mut indices = Vec::with_capacity(n);
        let mut weights = Vec::with_capacity(n);
        for k in 0..n {
            let u = (k as f64 + rng.random::<f64>()) * seg;
            let i = self.tree.find(u.min(total));
            indices.push(i);
            weights.push((len * self.tree.get(i) / total).powf(-beta));
        }
        let max = weights.iter().cloned().fold(f64::MIN, f64::max);
        for w in &mut weights {
            *w /= max;
        }
        Ok(Sample { indices, weights })
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.items.iter()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ring_overwrites_oldest() {
        let mut b = ReplayBuffer::new(3, 0.6, 1e-3).unwrap();
        for i in 0..5 {
            b.push(i);
        }
        assert_eq!(b.len(), 3);
        let mut v: Vec<_> = b.iter().copied().collect();
        v.sort();
        assert_eq!(v, vec![2, 3, 4]);
    }

    #[test]
    fn total_tracks_updates() {
        let mut b = ReplayBuffer::new(5, 1.0, 1e-3).unwrap();
        for i in 0..5 {
            b.push(i);
        }
        assert_eq!(b.total_priority(), 5.0);
        b.update_priorities(&[0, 4], &[0.999, 2.999]).unwrap();
        assert!((b.total_priority() - 7.0).abs() < 1e-12);
    }

    #[test]
    fn zero_capacity_is_rejected() {
        assert!(ReplayBuffer::<u8>::new(0, 0.6, 1e-3).is_err());
    }
}
