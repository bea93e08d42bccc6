//! Slow dense reference forward pass in plain `f64` loops. Items enter as
//! explicit one-hot vectors multiplied through full matrices, and gates are
//! evaluated one by one, so no code is shared with the model's indexed path.

use crate::model::{EmbeddingMode, Gru4Rec};

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn one_hot(n: usize, i: u32) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[i as usize] = 1.0;
    v
}

/// `x · M` for a row vector `x` and a matrix given by an accessor.
fn vec_mat(x: &[f64], rows: usize, cols: usize, m: impl Fn(usize, usize) -> f64) -> Vec<f64> {
    assert_eq!(x.len(), rows);
    (0..cols)
        .map(|c| (0..rows).map(|r| x[r] * m(r, c)).sum())
        .collect()
}

/// One GRU step for a single session: returns each layer's new state.
pub fn reference_step(model: &Gru4Rec<f64>, state: &[Vec<f64>], item: u32) -> Vec<Vec<f64>> {
    let v = model.n_items();
    let onehot = one_hot(v, item);
    let mut x = match (model.config().embedding, model.input_table()) {
        (EmbeddingMode::None, _) => onehot,
        (_, Some(t)) => vec_mat(&onehot, v, t.cols(), |r, c| t.get(r, c)),
        (_, None) => unreachable!("embedding modes have an input table"),
    };
    let mut next = Vec::with_capacity(state.len());
    for (layer, h) in model.layers().iter().zip(state) {
        let hs = layer.hidden_size();
        let gate = |block: usize, inp: &[f64], hid: &[f64]| -> Vec<f64> {
            let wx = vec_mat(inp, layer.w.rows(), hs, |r, c| layer.w.get(r, block * hs + c));
            let uh = vec_mat(hid, hs, hs, |r, c| layer.u.get(r, block * hs + c));
            (0..hs)
                .map(|q| wx[q] + uh[q] + layer.b.get(0, block * hs + q))
                .collect()
        };
        let r: Vec<f64> = gate(0, &x, h).into_iter().map(sigmoid).collect();
        let z: Vec<f64> = gate(1, &x, h).into_iter().map(sigmoid).collect();
        let rh: Vec<f64> = r.iter().zip(h).map(|(a, b)| a * b).collect();
        let cand: Vec<f64> = gate(2, &x, &rh).into_iter().map(f64::tanh).collect();
        let h_new: Vec<f64> = (0..hs)
            .map(|q| (1.0 - z[q]) * h[q] + z[q] * cand[q])
            .collect();
        x = h_new.clone();
        next.push(h_new);
    }
    next
}

pub fn zero_state(model: &Gru4Rec<f64>) -> Vec<Vec<f64>> {
    model.config().layers.iter().map(|&h| vec![0.0; h]).collect()
}

/// Top-layer output after feeding `items` from a zero state.
pub fn reference_run(model: &Gru4Rec<f64>, items: &[u32]) -> Vec<f64> {
    let mut s = zero_state(model);
    for &i in items {
        s = reference_step(model, &s, i);
    }
    s.pop().expect("at least one layer")
}

/// Scores of every item for a top-layer output.
pub fn reference_scores(model: &Gru4Rec<f64>, output: &[f64]) -> Vec<f64> {
    let t = model.output_table();
    (0..t.rows())
        .map(|i| (0..t.cols()).map(|c| output[c] * t.get(i, c)).sum())
        .collect()
}
