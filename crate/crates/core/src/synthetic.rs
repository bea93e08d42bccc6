//! Generated session data for tests, examples and benchmarks.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, Zipf};

use crate::corpus::SessionCorpus;

/// A fixed random successor permutation: the item after `i` is always `succ[i]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlantedRule {
    succ: Vec<u32>,
}

impl PlantedRule {
    pub fn new(n_items: usize, seed: u64) -> Self {
        assert!(n_items >= 2);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut succ: Vec<u32> = (0..n_items as u32).collect();
        succ.shuffle(&mut rng);
        PlantedRule { succ }
    }

    pub fn n_items(&self) -> usize {
        self.succ.len()
    }

    pub fn successor(&self, item: u32) -> u32 {
        self.succ[item as usize]
    }

    /// Sessions following the rule from uniform start items, with lengths
    /// uniform in `min_len..=max_len`.
    pub fn sessions(&self, n_sessions: usize, min_len: usize, max_len: usize, seed: u64) -> Vec<Vec<u32>> {
        assert!(min_len >= 2 && max_len >= min_len);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n_sessions)
            .map(|_| {
                let len = rng.random_range(min_len..=max_len);
                let mut item = rng.random_range(0..self.n_items() as u32);
                let mut s = Vec::with_capacity(len);
                for _ in 0..len {
                    s.push(item);
                    item = self.successor(item);
                }
                s
            })
            .collect()
    }
}

/// Sessions with `2 + Poisson(mean_len - 2)` events over Zipf-popular items.
pub fn popularity_sessions(
    n_items: usize,
    n_sessions: usize,
    mean_len: f64,
    zipf_exponent: f64,
    seed: u64,
) -> Vec<Vec<u32>> {
    assert!(n_items >= 1 && mean_len > 2.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lengths = Poisson::new(mean_len - 2.0).expect("positive rate");
    let items = Zipf::new(n_items as f64, zipf_exponent).expect("valid zipf");
    (0..n_sessions)
        .map(|_| {
            let len = 2 + lengths.sample(&mut rng) as usize;
            (0..len).map(|_| items.sample(&mut rng) as u32 - 1).collect()
        })
        .collect()
}

pub fn corpus(n_items: usize, sessions: &[Vec<u32>]) -> SessionCorpus {
    SessionCorpus::from_sessions(n_items, sessions).expect("generated sessions are valid")
}

/// Every item known, for [`crate::eval::evaluate_sessions`].
pub fn as_test_sessions(sessions: &[Vec<u32>]) -> Vec<Vec<Option<u32>>> {
    sessions
        .iter()
        .map(|s| s.iter().copied().map(Some).collect())
        .collect()
}
