//! How session-parallel mini-batches are laid out: slots advance in
//! lockstep, finished sessions are replaced and their slot is reset.
//!
//! `cargo run --example session_parallel`

use gru4rec::corpus::SessionCorpus;

fn main() {
    let sessions = vec![vec![0, 1, 2, 3], vec![4, 5], vec![6, 7, 8], vec![9, 10], vec![11, 12, 13]];
    let corpus = SessionCorpus::from_sessions(14, &sessions).unwrap();
    for (step, b) in corpus.batches(3).enumerate() {
        let cells: Vec<String> = b
            .slots
            .iter()
            .zip(b.inputs.iter().zip(&b.targets))
            .zip(&b.reset)
            .map(|((slot, (i, t)), r)| format!("slot {slot}: {i:>2}->{t:<2}{}", if *r { " (reset)" } else { "" }))
            .collect();
        println!("step {step}: {}", cells.join(" | "));
    }
}
