//! Next-item evaluation with recall@N and MRR@N, including items unknown to
//! the model, for a trained model and the popularity baseline.
//!
//! `cargo run --release --example evaluate`

use gru4rec::corpus::ItemMap;
use gru4rec::datasets::EventLog;
use gru4rec::eval::{evaluate, evaluate_sessions, EvalConfig, PopularityRanker};
use gru4rec::synthetic::{self, PlantedRule};
use gru4rec::training::{fit, TrainConfig};

fn main() {
    let rule = PlantedRule::new(40, 8);
    let corpus = synthetic::corpus(40, &rule.sessions(1500, 3, 8, 9));
    let config = TrainConfig {
        layers: vec![48],
        batch_size: 32,
        n_sample: 16,
        learning_rate: 0.1,
        n_epochs: 3,
        sample_cache: 50_000,
        ..TrainConfig::default()
    };
    let (model, _) = fit(&corpus, &config).unwrap();

    // Test log with external labels; "new-item" never occurred in training.
    let mut rows = Vec::new();
    for (s, items) in rule.sessions(200, 3, 8, 10).iter().enumerate() {
        for (k, &i) in items.iter().enumerate() {
            rows.push((s as u64, i.to_string(), k as f64));
            if k == 1 {
                rows.push((s as u64, "new-item".to_string(), k as f64 + 0.5));
            }
        }
    }
    let test = EventLog::from_triples(rows);
    let map = ItemMap::from_labels((0..40).map(|i| i.to_string()).collect()).unwrap();
    let cfg = EvalConfig {
        cutoffs: vec![1, 5, 20],
        ..EvalConfig::default()
    };
    let r = evaluate(&model, &test, &map, &cfg).unwrap();
    println!(
        "events {} = evaluated {} + unknown {} + session starts {}",
        r.total_events, r.evaluated_events, r.skipped_unknown, r.session_starts
    );
    print!("gru4rec\n{}", r.to_tsv());

    let pop = evaluate_sessions(&PopularityRanker::from_corpus(&corpus), &map.map_sessions(&test), &cfg).unwrap();
    print!("popularity\n{}", pop.to_tsv());
}
