//! Trains on sessions that follow a hidden successor rule and checks the
//! model recovers it.
//!
//! `cargo run --release --example train_synthetic`

use gru4rec::eval::{evaluate_sessions, EvalConfig, PopularityRanker};
use gru4rec::synthetic::{self, PlantedRule};
use gru4rec::training::{fit_with, TrainConfig};

fn main() {
    let rule = PlantedRule::new(50, 1);
    let train = rule.sessions(2000, 3, 10, 2);
    let test = rule.sessions(300, 3, 10, 3);
    let corpus = synthetic::corpus(50, &train);

    let config = TrainConfig {
        layers: vec![64],
        batch_size: 32,
        n_sample: 16,
        learning_rate: 0.1,
        momentum: 0.3,
        n_epochs: 4,
        sample_cache: 100_000,
        ..TrainConfig::default()
    };
    println!("{}", config.to_kv_string());
    let (model, _) = fit_with(&corpus, &config, |s| {
        println!("epoch {}: loss {:.4} ({} events, {:.2}s)", s.epoch, s.mean_loss, s.events, s.seconds);
    })
    .unwrap();

    let test = synthetic::as_test_sessions(&test);
    let cfg = EvalConfig::default();
    let gru = evaluate_sessions(&model, &test, &cfg).unwrap();
    let pop = evaluate_sessions(&PopularityRanker::from_corpus(&corpus), &test, &cfg).unwrap();
    println!("model\n{}popularity\n{}", gru.to_tsv(), pop.to_tsv());
}
