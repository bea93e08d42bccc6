use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Number of indices pre-drawn per cache refill.
pub const DEFAULT_SAMPLE_CACHE: usize = 10_000_000;

/// Draws items i.i.d. with `P(i) ∝ support(i)^alpha` from a pre-drawn cache.
#[derive(Clone)]
pub struct NegativeSampler {
    alpha: f64,
    cumulative: Vec<f64>,
    cache: Vec<u32>,
    cursor: usize,
    cache_size: usize,
    rng: ChaCha8Rng,
}

impl NegativeSampler {
    pub fn new(supports: &[u64], alpha: f64, seed: u64) -> Self {
        Self::with_cache_size(supports, alpha, seed, DEFAULT_SAMPLE_CACHE)
    }

    pub fn with_cache_size(supports: &[u64], alpha: f64, seed: u64, cache_size: usize) -> Self {
        assert!(!supports.is_empty(), "sampler needs at least one item");
        assert!(alpha >= 0.0 && alpha.is_finite(), "sample_alpha must be >= 0");
        let mut acc = 0.0;
        let cumulative: Vec<f64> = supports
            .iter()
            .map(|&s| {
                acc += (s as f64).powf(alpha);
                acc
            })
            .collect();
        debug_assert!(cumulative.windows(2).all(|w| w[1] > w[0]));
        assert!(acc > 0.0, "sampling weights sum to zero");
        NegativeSampler {
            alpha,
            cumulative,
            cache: Vec::new(),
            cursor: 0,
            cache_size: cache_size.max(1),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn n_items(&self) -> usize {
        self.cumulative.len()
    }

    /// Analytic sampling probability of `item`.
    pub fn probability(&self, item: u32) -> f64 {
        let i = item as usize;
        let lo = if i == 0 { 0.0 } else { self.cumulative[i - 1] };
        (self.cumulative[i] - lo) / self.total()
    }

    fn total(&self) -> f64 {
        *self.cumulative.last().unwrap()
    }

    fn draw_one(&mut self) -> u32 {
        let u = self.rng.random::<f64>() * self.total();
        let i = self.cumulative.partition_point(|&c| c <= u);
        i.min(self.cumulative.len() - 1) as u32
    }

    fn refill(&mut self, at_least: usize) {
        let n = self.cache_size.max(at_least);
        self.cache.clear();
        self.cache.reserve(n);
        for _ in 0..n {
            let s = self.draw_one();
            self.cache.push(s);
        }
        self.cursor = 0;
    }

    /// `n` draws shared by a whole mini-batch.
    pub fn draw(&mut self, n: usize) -> Vec<u32> {
        if n == 0 {
            return Vec::new();
        }
        if self.cursor + n > self.cache.len() {
            self.refill(n);
        }
        let out = self.cache[self.cursor..self.cursor + n].to_vec();
        self.cursor += n;
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn analytic_probabilities() {
        let s = NegativeSampler::with_cache_size(&[4, 1], 1.0, 0, 16);
        assert!((s.probability(0) - 0.8).abs() < 1e-12);
        let s = NegativeSampler::with_cache_size(&[4, 1], 0.5, 0, 16);
        assert!((s.probability(0) - 2.0 / 3.0).abs() < 1e-12);
        let s = NegativeSampler::with_cache_size(&[9, 1, 30], 0.0, 0, 16);
        assert!((s.probability(2) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn zero_draws_and_refill_across_boundary() {
        let mut s = NegativeSampler::with_cache_size(&[1, 2, 3], 1.0, 3, 5);
        assert!(s.draw(0).is_empty());
        let a = s.draw(4);
        let b = s.draw(4);
        let c = s.draw(12);
        assert_eq!((a.len(), b.len(), c.len()), (4, 4, 12));
        assert!(a.iter().chain(&b).chain(&c).all(|&i| i < 3));
    }

    #[test]
    fn same_seed_same_stream() {
        let mut a = NegativeSampler::with_cache_size(&[5, 1, 7, 2], 0.75, 11, 100);
        let mut b = NegativeSampler::with_cache_size(&[5, 1, 7, 2], 0.75, 11, 100);
        for n in [3, 50, 80, 1] {
            assert_eq!(a.draw(n), b.draw(n));
        }
    }

    #[test]
    fn empirical_frequency_within_four_standard_errors() {
        let supports = [4u64, 1, 10, 3, 1, 25];
        let mut s = NegativeSampler::with_cache_size(&supports, 0.5, 5, 1 << 16);
        let n = 1_000_000usize;
        let mut counts = [0usize; 6];
        for _ in 0..n / 1000 {
            for i in s.draw(1000) {
                counts[i as usize] += 1;
            }
        }
        for (i, &c) in counts.iter().enumerate() {
            let p = s.probability(i as u32);
            let se = (p * (1.0 - p) / n as f64).sqrt();
            assert!(((c as f64 / n as f64) - p).abs() < 4.0 * se, "item {i}");
        }
    }
}
