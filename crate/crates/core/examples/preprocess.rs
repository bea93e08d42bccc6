//! Runs the preprocessing pipeline on a small generated clickstream and
//! prints the resulting split statistics.
//!
//! `cargo run --example preprocess`

use gru4rec::datasets::{self, Adapter, EventLog, PipelineConfig, SECONDS_PER_DAY};

fn main() {
    // Eight days of users browsing; a few rare items and repeated clicks.
    let mut rows = Vec::new();
    for user in 0..400u64 {
        let day = (user % 8) as f64;
        let mut t = day * SECONDS_PER_DAY + user as f64 * 37.0;
        for k in 0..(2 + user % 5) {
            let item = format!("p{}", (user * 7 + k * 3) % 40);
            rows.push((user, item.clone(), t));
            if k == 1 {
                rows.push((user, item, t + 5.0));
            }
            t += 90.0;
        }
        rows.push((user, format!("rare{user}"), t + 7200.0));
    }
    let raw = EventLog::from_triples(rows);

    let adapter = Adapter::GenericTsv;
    let cfg = PipelineConfig {
        test_days: 1,
        ..PipelineConfig::for_adapter(adapter)
    };
    let out = datasets::run_pipeline(&raw, adapter, &cfg);
    println!("raw: {} events in {} sessions", raw.len(), raw.n_sessions());
    println!("{}", serde_json::to_string_pretty(&out.stats).unwrap());
    println!("steps applied to train: {:?}", out.train.provenance.steps);

    let dir = std::env::temp_dir().join("gru4rec-preprocess-example");
    std::fs::create_dir_all(&dir).unwrap();
    datasets::write_canonical_tsv(&out.train, &dir.join("train.tsv")).unwrap();
    datasets::write_canonical_tsv(&out.test, &dir.join("test.tsv")).unwrap();
    println!("wrote {}", dir.display());
}
