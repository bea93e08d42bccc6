//! Candidate-set losses. In every row `k` of a `B' × C` score matrix the
//! positive item sits in column `k`; the remaining columns are negatives.

use thiserror::Error;

use crate::faults::{self, Fault};
use crate::model::{softmax_in_place, FinalActivation};
use crate::tensor::{Matrix, Real};

use super::config::LossKind;

/// Guard inside the BPR-max logarithm.
pub const BPR_MAX_EPS: f64 = 1e-24;

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("candidate {column} has sampling probability {q}; logq correction needs q > 0")]
    ZeroProbability { column: usize, q: f64 },
    #[error("{rows} rows but {cols} candidate columns; every row needs its positive column")]
    Shape { rows: usize, cols: usize },
    #[error("{0} sampling probabilities for {1} candidates")]
    ProbabilityCount(usize, usize),
}

fn check_shape<F: Real>(scores: &Matrix<F>) -> Result<(), LossError> {
    if scores.cols() < scores.rows() {
        return Err(LossError::Shape {
            rows: scores.rows(),
            cols: scores.cols(),
        });
    }
    Ok(())
}

#[inline]
pub(crate) fn sigmoid<F: Real>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

/// Cross-entropy over a softmax of raw scores, with the softmax fused in.
/// With `logq > 0` each column is shifted by `-logq * ln(q_j)` first.
/// Returns the mean loss over rows and the gradient w.r.t. the raw scores.
pub fn cross_entropy_loss<F: Real>(
    scores: &Matrix<F>,
    logq: f64,
    q: Option<&[f64]>,
) -> Result<(F, Matrix<F>), LossError> {
    check_shape(scores)?;
    let (n, c) = scores.shape();
    let mut shift = vec![F::zero(); c];
    if logq > 0.0 {
        let q = q.ok_or(LossError::ProbabilityCount(0, c))?;
        if q.len() != c {
            return Err(LossError::ProbabilityCount(q.len(), c));
        }
        for (j, (&qj, s)) in q.iter().zip(shift.iter_mut()).enumerate() {
            if qj.is_nan() || qj <= 0.0 {
                return Err(LossError::ZeroProbability { column: j, q: qj });
            }
            *s = F::from_f64_lossy(-logq * qj.ln());
        }
    }
    let mut grad = scores.clone();
    if faults::active(Fault::DoubleSoftmax) {
        for r in 0..n {
            softmax_in_place(grad.row_mut(r));
        }
    }
    let inv_n = F::one() / F::from_usize(n.max(1)).unwrap();
    let mut total = F::zero();
    for k in 0..n {
        let row = grad.row_mut(k);
        for (v, s) in row.iter_mut().zip(&shift) {
            *v += *s;
        }
        let max = row.iter().fold(F::neg_infinity(), |m, &v| m.max(v));
        let sum: F = row.iter().map(|&v| (v - max).exp()).sum();
        let lse = max + sum.ln();
        total += lse - row[k];
        for v in row.iter_mut() {
            *v = (*v - lse).exp() * inv_n;
        }
        row[k] -= inv_n;
    }
    Ok((total * inv_n, grad))
}

/// BPR-max over activated scores with score regularisation `bpreg`.
/// Returns the mean loss over rows and the gradient w.r.t. the activations.
/// A row without negatives contributes zero.
pub fn bpr_max_loss<F: Real>(act: &Matrix<F>, bpreg: f64) -> Result<(F, Matrix<F>), LossError> {
    check_shape(act)?;
    let (n, c) = act.shape();
    let lambda = F::from_f64_lossy(bpreg);
    let eps = F::from_f64_lossy(BPR_MAX_EPS);
    let inv_n = F::one() / F::from_usize(n.max(1)).unwrap();
    let uniform = faults::active(Fault::WrongBprMax);
    let mut grad = Matrix::zeros(n, c);
    let mut total = F::zero();
    let mut s = vec![F::zero(); c];
    let mut g = vec![F::zero(); c];
    for k in 0..n {
        if c < 2 {
            continue;
        }
        let row = act.row(k);
        let pos = row[k];
        let max = row
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != k)
            .fold(F::neg_infinity(), |m, (_, &v)| m.max(v));
        let mut z = F::zero();
        for j in 0..c {
            if j == k {
                s[j] = F::zero();
                continue;
            }
            s[j] = if uniform { F::one() } else { (row[j] - max).exp() };
            z += s[j];
            g[j] = sigmoid(pos - row[j]);
        }
        g[k] = F::zero();
        let mut sg = F::zero();
        let mut reg = F::zero();
        let mut sgg = F::zero();
        for j in 0..c {
            if j == k {
                continue;
            }
            s[j] /= z;
            sg += s[j] * g[j];
            reg += s[j] * row[j] * row[j];
            sgg += s[j] * g[j] * (F::one() - g[j]);
        }
        let a = sg + eps;
        total += -a.ln() + lambda * reg;
        let grow = grad.row_mut(k);
        grow[k] = -sgg / a * inv_n;
        for j in 0..c {
            if j == k {
                continue;
            }
            let (sj, gj, rj) = (s[j], g[j], row[j]);
            let d_rank = -(sj * (gj - sg) - sj * gj * (F::one() - gj)) / a;
            let d_reg = lambda * (sj * (rj * rj - reg) + (rj + rj) * sj);
            grow[j] = (d_rank + d_reg) * inv_n;
        }
    }
    Ok((total * inv_n, grad))
}

/// The configured loss applied to raw candidate scores, including the final
/// activation. Returns the mean loss and the gradient w.r.t. the raw scores.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Objective {
    pub loss: LossKind,
    pub final_act: FinalActivation,
    pub logq: f64,
    pub bpreg: f64,
}

impl Objective {
    pub fn evaluate<F: Real>(
        &self,
        scores: &Matrix<F>,
        q: Option<&[f64]>,
    ) -> Result<(F, Matrix<F>), LossError> {
        match self.loss {
            LossKind::CrossEntropy => cross_entropy_loss(scores, self.logq, q),
            LossKind::BprMax => {
                let act = self.final_act.apply(scores);
                let (l, mut d) = bpr_max_loss(&act, self.bpreg)?;
                for (dv, &x) in d.as_mut_slice().iter_mut().zip(scores.as_slice()) {
                    *dv *= self.final_act.derivative(x);
                }
                Ok((l, d))
            }
        }
    }
}
