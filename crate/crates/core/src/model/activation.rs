use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::tensor::{Matrix, Real};

pub const SELU_SCALE: f64 = 1.050_700_987_355_480_5;
pub const SELU_ALPHA: f64 = 1.673_263_242_354_377_2;

/// Transformation applied to candidate scores before the loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum FinalActivation {
    Softmax,
    Linear,
    Relu,
    /// ELU with the given alpha (`elu` means alpha 1, `elu-0.5` alpha 0.5).
    Elu(f64),
    Selu,
}

impl FinalActivation {
    /// Row-wise for softmax, elementwise otherwise.
    pub fn apply<F: Real>(self, x: &Matrix<F>) -> Matrix<F> {
        let mut out = x.clone();
        match self {
            FinalActivation::Softmax => {
                for r in 0..out.rows() {
                    softmax_in_place(out.row_mut(r));
                }
            }
            _ => out.as_mut_slice().iter_mut().for_each(|v| *v = self.scalar(*v)),
        }
        out
    }

    fn scalar<F: Real>(self, x: F) -> F {
        let zero = F::zero();
        match self {
            FinalActivation::Softmax => unreachable!("softmax is row-wise"),
            FinalActivation::Linear => x,
            FinalActivation::Relu => x.max(zero),
            FinalActivation::Elu(a) => {
                if x > zero {
                    x
                } else {
                    F::from_f64_lossy(a) * x.exp_m1()
                }
            }
            FinalActivation::Selu => {
                let s = F::from_f64_lossy(SELU_SCALE);
                if x > zero {
                    s * x
                } else {
                    s * F::from_f64_lossy(SELU_ALPHA) * x.exp_m1()
                }
            }
        }
    }

    /// Derivative of an elementwise activation given input `x`.
    pub fn derivative<F: Real>(self, x: F) -> F {
        let one = F::one();
        let zero = F::zero();
        match self {
            FinalActivation::Softmax => panic!("softmax has no elementwise derivative"),
            FinalActivation::Linear => one,
            FinalActivation::Relu => {
                if x > zero {
                    one
                } else {
                    zero
                }
            }
            FinalActivation::Elu(a) => {
                if x > zero {
                    one
                } else {
                    F::from_f64_lossy(a) * x.exp()
                }
            }
            FinalActivation::Selu => {
                let s = F::from_f64_lossy(SELU_SCALE);
                if x > zero {
                    s
                } else {
                    s * F::from_f64_lossy(SELU_ALPHA) * x.exp()
                }
            }
        }
    }
}

/// Numerically stable softmax (max subtracted first).
pub fn softmax_in_place<F: Real>(row: &mut [F]) {
    let max = row.iter().fold(F::neg_infinity(), |m, &v| m.max(v));
    let mut sum = F::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

impl fmt::Display for FinalActivation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FinalActivation::Softmax => f.write_str("softmax"),
            FinalActivation::Linear => f.write_str("linear"),
            FinalActivation::Relu => f.write_str("relu"),
            FinalActivation::Elu(a) if *a == 1.0 => f.write_str("elu"),
            FinalActivation::Elu(a) => write!(f, "elu-{a}"),
            FinalActivation::Selu => f.write_str("selu"),
        }
    }
}

impl FromStr for FinalActivation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let s = s.trim().to_ascii_lowercase();
        Ok(match s.as_str() {
            "softmax" => FinalActivation::Softmax,
            "linear" => FinalActivation::Linear,
            "relu" => FinalActivation::Relu,
            "elu" => FinalActivation::Elu(1.0),
            "selu" => FinalActivation::Selu,
            other => match other.strip_prefix("elu-") {
                Some(a) => {
                    let a: f64 = a.parse().map_err(|_| format!("bad elu alpha in `{s}`"))?;
                    if !(a > 0.0 && a.is_finite()) {
                        return Err(format!("elu alpha must be positive, got {a}"));
                    }
                    FinalActivation::Elu(a)
                }
                None => return Err(format!("unknown final_act `{s}`")),
            },
        })
    }
}

impl From<FinalActivation> for String {
    fn from(a: FinalActivation) -> String {
        a.to_string()
    }
}

impl TryFrom<String> for FinalActivation {
    type Error = String;
    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let m = Matrix::<f64>::zeros(1, 4);
        let s = FinalActivation::Softmax.apply(&m);
        assert!(s.as_slice().iter().all(|v| (*v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn softmax_survives_large_scores() {
        let m = Matrix::from_vec(1, 3, vec![1000.0f32, 1000.0, -1000.0]);
        let s = FinalActivation::Softmax.apply(&m);
        assert!((s.get(0, 0) - 0.5).abs() < 1e-6);
        assert!(s.all_finite());
    }

    #[test]
    fn elementwise_values() {
        let xs = [-2.0f64, -0.5, 0.0, 0.7, 3.0];
        let m = Matrix::from_vec(1, 5, xs.to_vec());
        assert_eq!(FinalActivation::Linear.apply(&m), m);
        let relu = FinalActivation::Relu.apply(&m);
        assert_eq!(relu.as_slice(), &[0.0, 0.0, 0.0, 0.7, 3.0]);

        let elu = FinalActivation::Elu(0.5).apply(&m);
        for (y, x) in elu.as_slice().iter().zip(xs) {
            let want = if x > 0.0 { x } else { 0.5 * (x.exp() - 1.0) };
            assert!((y - want).abs() < 1e-14);
        }
        let selu = FinalActivation::Selu.apply(&m);
        for (y, x) in selu.as_slice().iter().zip(xs) {
            let want = if x > 0.0 {
                SELU_SCALE * x
            } else {
                SELU_SCALE * SELU_ALPHA * (x.exp() - 1.0)
            };
            assert!((y - want).abs() < 1e-14);
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        for act in [
            FinalActivation::Linear,
            FinalActivation::Relu,
            FinalActivation::Elu(1.0),
            FinalActivation::Elu(0.3),
            FinalActivation::Selu,
        ] {
            for x in [-1.7f64, -0.2, 0.4, 2.5] {
                let h = 1e-6;
                let f = |v: f64| act.apply(&Matrix::from_vec(1, 1, vec![v])).get(0, 0);
                let fd = (f(x + h) - f(x - h)) / (2.0 * h);
                assert!((fd - act.derivative(x)).abs() < 1e-7, "{act} at {x}");
            }
        }
    }

    #[test]
    fn parse_and_display() {
        for s in ["softmax", "linear", "relu", "elu", "elu-0.5", "selu"] {
            let a: FinalActivation = s.parse().unwrap();
            assert_eq!(a.to_string(), s);
        }
        assert!("tanh".parse::<FinalActivation>().is_err());
        assert!("elu-x".parse::<FinalActivation>().is_err());
    }
}
