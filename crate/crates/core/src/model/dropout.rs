use rand::Rng;

use crate::faults::{self, Fault};
use crate::tensor::{Matrix, Real};

use super::ModelError;

/// Inverted-dropout mask: entries are `0` with probability `p`, otherwise `1/(1-p)`.
pub fn dropout_mask<F: Real, R: Rng + ?Sized>(
    rows: usize,
    cols: usize,
    p: f64,
    rng: &mut R,
) -> Result<Matrix<F>, ModelError> {
    if !(0.0..1.0).contains(&p) {
        return Err(ModelError::DropoutRate(p));
    }
    let keep = if faults::active(Fault::DropoutAsKeepProbability) {
        p
    } else {
        1.0 - p
    };
    let scale = F::from_f64_lossy(1.0 / keep);
    Ok(Matrix::from_fn(rows, cols, |_, _| {
        if rng.random::<f64>() < keep {
            scale
        } else {
            F::zero()
        }
    }))
}

/// Applies inverted dropout with drop probability `p`; identity when not training.
pub fn apply_dropout<F: Real, R: Rng + ?Sized>(
    x: &Matrix<F>,
    p: f64,
    training: bool,
    rng: &mut R,
) -> Result<Matrix<F>, ModelError> {
    if !(0.0..1.0).contains(&p) {
        return Err(ModelError::DropoutRate(p));
    }
    if !training || p == 0.0 {
        return Ok(x.clone());
    }
    let mask = dropout_mask::<F, R>(x.rows(), x.cols(), p, rng)?;
    let mut out = x.clone();
    for (o, m) in out.as_mut_slice().iter_mut().zip(mask.as_slice()) {
        *o *= *m;
    }
    Ok(out)
}

/// Pre-drawn masks for one training step, so the same step can be replayed.
#[derive(Debug, Clone)]
pub struct DropoutMasks<F> {
    /// Applied to the embedded input (never in no-embedding mode).
    pub embed: Option<Matrix<F>>,
    /// Applied to each GRU layer's output.
    pub hidden: Vec<Option<Matrix<F>>>,
}

impl<F: Real> DropoutMasks<F> {
    pub fn none(n_layers: usize) -> Self {
        DropoutMasks {
            embed: None,
            hidden: vec![None; n_layers],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_rate_and_eval_are_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Matrix::from_fn(3, 4, |r, c| (r * 4 + c) as f64);
        assert_eq!(apply_dropout(&x, 0.0, true, &mut rng).unwrap(), x);
        assert_eq!(apply_dropout(&x, 0.7, false, &mut rng).unwrap(), x);
    }

    #[test]
    fn rate_of_one_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Matrix::<f64>::zeros(1, 1);
        assert!(apply_dropout(&x, 1.0, true, &mut rng).is_err());
        assert!(apply_dropout(&x, -0.1, true, &mut rng).is_err());
    }

    #[test]
    fn expectation_preserved_and_drop_rate_matches() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 100_000;
        let x = Matrix::from_vec(1, n, vec![1.0f64; n]);
        let y = apply_dropout(&x, 0.3, true, &mut rng).unwrap();
        let mean = y.as_slice().iter().sum::<f64>() / n as f64;
        assert!((mean - 1.0).abs() < 0.01, "mean {mean}");
        let dropped = y.as_slice().iter().filter(|v| **v == 0.0).count() as f64 / n as f64;
        assert!((dropped - 0.3).abs() < 0.01, "dropped {dropped}");
    }
}
