use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Seedable, splittable random source.
///
/// Every stochastic operation takes one of these explicitly; there is no
/// global randomness anywhere in the crate. `child` derives an independent
/// stream from a string label, so the draw order of one component can never
/// perturb another (model init, dropout, shuffling and sampling all get their
/// own streams).
#[derive(Debug, Clone)]
pub struct SeedRng {
    seed: u64,
    inner: ChaCha8Rng,
}

/// FNV-1a over the label, then a splitmix64 finalizer to spread bits.
fn mix(seed: u64, label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ seed;
    for b in label.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = h.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl SeedRng {
    pub fn new(seed: u64) -> Self {
        SeedRng {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent child stream identified by `label`. Children with the same
    /// (seed, label) are identical regardless of how much has been drawn from
    /// the parent or from any sibling.
    pub fn child(&self, label: &str) -> SeedRng {
        SeedRng::new(mix(self.seed, label))
    }

    pub fn child_indexed(&self, label: &str, index: usize) -> SeedRng {
        SeedRng::new(mix(self.seed, &format!("{label}#{index}")))
    }

    /// Uniform draw from [low, high).
    pub fn uniform(&mut self, low: f64, high: f64) -> f64 {
        let u = self.next_f64();
        low + (high - low) * u
    }

    /// Uniform f64 in [0, 1).
    pub fn next_f64(&mut self) -> f64 {
        // 53 random mantissa bits.
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform usize in [0, n). `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        // Rejection sampling over the widest power-of-two range.
        let zone = u64::MAX - (u64::MAX % n as u64 + 1) % n as u64;
        loop {
            let v = self.inner.next_u64();
            if v <= zone {
                return (v % n as u64) as usize;
            }
        }
    }

    pub fn bool_with(&mut self, p: f64) -> bool {
        self.next_f64() < p
    }

    /// Uniform usize in [low, high] inclusive.
    pub fn range_inclusive(&mut self, low: usize, high: usize) -> usize {
        low + self.below(high - low + 1)
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    /// `count` distinct indices from [0, n), uniform over subsets,
    /// in draw order. Requires count <= n.
    pub fn sample_distinct(&mut self, n: usize, count: usize) -> Vec<usize> {
        assert!(count <= n);
        // Partial Fisher-Yates over a sparse index map.
        let mut map = std::collections::HashMap::new();
        let mut out = Vec::with_capacity(count);
        for i in 0..count {
            let j = i + self.below(n - i);
            let vj = *map.get(&j).unwrap_or(&j);
            let vi = *map.get(&i).unwrap_or(&i);
            map.insert(j, vi);
            out.push(vj);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn children_are_order_independent() {
        let a = SeedRng::new(7);
        let mut b = SeedRng::new(7);
        b.next_f64();
        b.next_f64();
        let mut c1 = a.child("x");
        let mut c2 = b.child("x");
        assert_eq!(c1.next_f64(), c2.next_f64());
    }

    #[test]
    fn distinct_labels_diverge() {
        let root = SeedRng::new(7);
        let mut a = root.child("a");
        let mut b = root.child("b");
        assert_ne!(a.inner.next_u64(), b.inner.next_u64());
    }

    #[test]
    fn sample_distinct_is_distinct_and_in_range() {
        let mut rng = SeedRng::new(3);
        let picks = rng.sample_distinct(10, 10);
        let mut sorted = picks.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 10);
        assert!(picks.iter().all(|&i| i < 10));
    }

    #[test]
    fn below_covers_range_uniformly_enough() {
        let mut rng = SeedRng::new(11);
        let mut counts = [0usize; 5];
        for _ in 0..50_000 {
            counts[rng.below(5)] += 1;
        }
        for &c in &counts {
            assert!((c as f64 - 10_000.0).abs() < 500.0, "counts {counts:?}");
        }
    }
}
