use thiserror::Error;

use crate::faults::{self, Fault};
use crate::model::Grad;
use crate::tensor::{Matrix, Real};

/// Added to the root of the accumulator before dividing.
pub const ADAGRAD_EPS: f64 = 1e-10;

#[derive(Debug, Error, PartialEq)]
pub enum OptimizerError {
    #[error("non-finite gradient for parameter `{0}`")]
    NonFinite(String),
    #[error("{grads} gradients for {params} parameters")]
    Count { params: usize, grads: usize },
}

/// Adagrad with Nesterov momentum. Per entry:
/// `acc += g²`, `Δ = lr·g/(√acc + ε)`, `v ← μ·v + Δ`, `θ -= μ·v + Δ`.
/// Row-sparse gradients only touch their rows, accumulators included.
#[derive(Debug, Clone)]
pub struct AdagradMomentum<F> {
    learning_rate: F,
    momentum: F,
    eps: F,
    acc: Vec<Matrix<F>>,
    vel: Vec<Matrix<F>>,
}

impl<F: Real> AdagradMomentum<F> {
    pub fn new(shapes: &[(usize, usize)], learning_rate: f64, momentum: f64) -> Self {
        let init = if faults::active(Fault::LargeInitialAccumulator) {
            F::from_f64_lossy(0.1)
        } else {
            F::zero()
        };
        AdagradMomentum {
            learning_rate: F::from_f64_lossy(learning_rate),
            momentum: F::from_f64_lossy(momentum),
            eps: F::from_f64_lossy(ADAGRAD_EPS),
            acc: shapes
                .iter()
                .map(|&(r, c)| {
                    let mut m = Matrix::zeros(r, c);
                    m.fill(init);
                    m
                })
                .collect(),
            vel: shapes.iter().map(|&(r, c)| Matrix::zeros(r, c)).collect(),
        }
    }

    pub fn accumulators(&self) -> &[Matrix<F>] {
        &self.acc
    }

    pub fn velocities(&self) -> &[Matrix<F>] {
        &self.vel
    }

    #[inline]
    fn update(&self, p: &mut [F], g: &[F], acc: &mut [F], vel: &mut [F]) {
        for i in 0..p.len() {
            acc[i] += g[i] * g[i];
            let delta = self.learning_rate * g[i] / (acc[i].sqrt() + self.eps);
            vel[i] = self.momentum * vel[i] + delta;
            p[i] -= self.momentum * vel[i] + delta;
        }
    }

    /// Applies one update. All gradients are checked before anything changes.
    pub fn step(
        &mut self,
        params: Vec<&mut Matrix<F>>,
        grads: &[Grad<F>],
        names: &[String],
    ) -> Result<(), OptimizerError> {
        if params.len() != grads.len() || grads.len() != self.acc.len() {
            return Err(OptimizerError::Count {
                params: params.len(),
                grads: grads.len(),
            });
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            let name = names.get(i).cloned().unwrap_or_else(|| i.to_string());
            return Err(OptimizerError::NonFinite(name));
        }
        for (i, (p, g)) in params.into_iter().zip(grads).enumerate() {
            let mut acc = std::mem::replace(&mut self.acc[i], Matrix::zeros(0, 0));
            let mut vel = std::mem::replace(&mut self.vel[i], Matrix::zeros(0, 0));
            match g {
                Grad::Dense(gm) => self.update(
                    p.as_mut_slice(),
                    gm.as_slice(),
                    acc.as_mut_slice(),
                    vel.as_mut_slice(),
                ),
                Grad::Rows { index, rows } => {
                    for (k, &r) in index.iter().enumerate() {
                        self.update(p.row_mut(r), rows.row(k), acc.row_mut(r), vel.row_mut(r));
                    }
                }
            }
            self.acc[i] = acc;
            self.vel[i] = vel;
        }
        Ok(())
    }
}
