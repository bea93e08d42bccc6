//! The full correctness suite: check table and feature matrix.
//!
//! `cargo run --release --example validation_report`

use gru4rec::validation::{emit_feature_matrix, reports_to_tsv, run_all};

fn main() {
    let reports = run_all(7);
    print!("{}", reports_to_tsv(&reports));
    println!();
    let matrix = emit_feature_matrix(&reports);
    print!("{}", matrix.render());
    std::process::exit(if matrix.all_supported() { 0 } else { 1 });
}
