//! Saves a model with its item map, loads it back bit-identically, and shows
//! that a damaged file is rejected.
//!
//! `cargo run --example persistence`

use gru4rec::persist::{self, PersistError};
use gru4rec::synthetic::{self, PlantedRule};
use gru4rec::training::{fit, TrainConfig};

fn main() {
    let corpus = synthetic::corpus(25, &PlantedRule::new(25, 3).sessions(300, 3, 6, 4));
    let config = TrainConfig {
        layers: vec![16],
        batch_size: 8,
        n_sample: 8,
        n_epochs: 1,
        sample_cache: 10_000,
        ..TrainConfig::default()
    };
    let (model, _) = fit(&corpus, &config).unwrap();

    let dir = std::env::temp_dir().join("gru4rec-persistence-example");
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("model.gru");
    let sha = persist::save_model(&path, &model, &config, corpus.item_map()).unwrap();
    println!("saved {} (sha256 {sha})", path.display());
    println!("item map at {}", persist::item_map_path(&path).display());

    let loaded = persist::load_model(&path).unwrap();
    println!("round trip identical: {}", loaded.model == model && loaded.config == config);
    println!("tensors: {:?}", loaded.model.param_names());

    let mut bytes = std::fs::read(&path).unwrap();
    bytes.truncate(bytes.len() - 100);
    match persist::decode_model(&bytes) {
        Err(e @ PersistError::Integrity(_)) => println!("truncated file rejected: {e}"),
        other => panic!("unexpected: {other:?}"),
    }
}
