//! Popularity-based negative sampling: empirical frequencies against
//! `support^alpha`, for a few values of alpha.
//!
//! `cargo run --release --example sampling`

use gru4rec::corpus::NegativeSampler;
use gru4rec::validation::sampler_check;

fn main() {
    let supports = [1000u64, 300, 100, 30, 10, 3, 1];
    let draws = 200_000;
    for alpha in [0.0, 0.5, 0.75, 1.0] {
        let mut sampler = NegativeSampler::with_cache_size(&supports, alpha, 5, 50_000);
        let mut counts = vec![0usize; supports.len()];
        for i in sampler.draw(draws) {
            counts[i as usize] += 1;
        }
        println!("alpha = {alpha}");
        for (i, &c) in counts.iter().enumerate() {
            println!(
                "  item {i} support {:>4}: expected {:.4} observed {:.4}",
                supports[i],
                sampler.probability(i as u32),
                c as f64 / draws as f64
            );
        }
        let r = sampler_check(alpha, 1_000_000, 5);
        println!("  chi-square on the 100-item fixture: p = {:.3} ({})", r.measured, r.status());
    }
}
