//! Cross-entropy with logQ correction and BPR-max with score
//! regularisation on a small score matrix. Row k's positive is column k.
//!
//! `cargo run --example losses`

use gru4rec::tensor::Matrix;
use gru4rec::training::{bpr_max_loss, cross_entropy_loss};

fn main() {
    let scores = Matrix::from_vec(2, 4, vec![2.0, 0.5, -1.0, 0.3, 0.1, 1.5, 0.2, -0.4]);
    let q = [0.4, 0.3, 0.2, 0.1];

    for logq in [0.0, 1.0] {
        let (loss, grad) = cross_entropy_loss(&scores, logq, Some(&q)).unwrap();
        println!("cross-entropy logq={logq}: loss {loss:.5}, grad row 0 {:?}", round(grad.row(0)));
    }
    for bpreg in [0.0, 1.0] {
        let (loss, grad) = bpr_max_loss(&scores, bpreg).unwrap();
        println!("bpr-max bpreg={bpreg}: loss {loss:.5}, grad row 0 {:?}", round(grad.row(0)));
    }

    let zeros = Matrix::<f64>::zeros(1, 4);
    println!("equal scores: cross-entropy {:.4} (ln 4 = {:.4})", cross_entropy_loss(&zeros, 0.0, None).unwrap().0, 4f64.ln());
}

fn round(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| (x * 1e4).round() / 1e4).collect()
}
