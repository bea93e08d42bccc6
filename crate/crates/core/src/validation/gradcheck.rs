use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::{dropout_mask, DropoutMasks, EmbeddingMode, FinalActivation, Gru4Rec, ModelConfig};
use crate::tensor::Matrix;
use crate::training::{LossKind, Objective};

use super::{CheckReport, GRADCHECK_EPS, GRADCHECK_TOL};

/// Below this magnitude a gradient entry is compared absolutely.
pub const GRADCHECK_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCase {
    pub loss: LossKind,
    pub mode: EmbeddingMode,
    pub n_layers: usize,
}

impl GradCase {
    pub fn name(&self) -> String {
        let mode = match self.mode {
            EmbeddingMode::None => "none",
            EmbeddingMode::Separate(_) => "separate",
            EmbeddingMode::Shared => "shared",
        };
        format!("gradcheck/{}/{mode}/{}-layer", self.loss, self.n_layers)
    }

    /// Every loss × embedding mode × layer count combination.
    pub fn all() -> Vec<GradCase> {
        let mut out = Vec::new();
        for loss in [LossKind::CrossEntropy, LossKind::BprMax] {
            for mode in [EmbeddingMode::None, EmbeddingMode::Separate(4), EmbeddingMode::Shared] {
                for n_layers in [1, 2] {
                    out.push(GradCase { loss, mode, n_layers });
                }
            }
        }
        out
    }
}

struct Fixture {
    model: Gru4Rec<f64>,
    hidden: Vec<Matrix<f64>>,
    inputs: Vec<u32>,
    candidates: Vec<u32>,
    masks: DropoutMasks<f64>,
    objective: Objective,
    q: Vec<f64>,
}

impl Fixture {
    fn new(case: GradCase, seed: u64) -> Fixture {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = 9;
        let layers: Vec<usize> = [6, 5][..case.n_layers].to_vec();
        let mut model = Gru4Rec::<f64>::init(
            ModelConfig {
                n_items: v,
                layers: layers.clone(),
                embedding: case.mode,
            },
            &mut rng,
        )
        .expect("valid fixture");
        for l in model.layers_mut() {
            l.b.as_mut_slice()
                .iter_mut()
                .for_each(|b| *b = rng.random_range(-0.3..0.3));
        }
        let batch = 3;
        let hidden = layers
            .iter()
            .map(|&h| Matrix::from_fn(batch, h, |_, _| rng.random_range(-0.8..0.8)))
            .collect();
        let inputs: Vec<u32> = (0..batch).map(|_| rng.random_range(0..v as u32)).collect();
        let mut candidates: Vec<u32> = (0..batch).map(|_| rng.random_range(0..v as u32)).collect();
        candidates.extend((0..4).map(|_| rng.random_range(0..v as u32)));
        let embed = model
            .input_table()
            .map(|t| dropout_mask(batch, t.cols(), 0.2, &mut rng).unwrap());
        let masks = DropoutMasks {
            embed,
            hidden: layers
                .iter()
                .map(|&h| Some(dropout_mask(batch, h, 0.3, &mut rng).unwrap()))
                .collect(),
        };
        let (final_act, logq) = match case.loss {
            LossKind::CrossEntropy => (FinalActivation::Softmax, 0.5),
            LossKind::BprMax => (FinalActivation::Elu(0.5), 0.0),
        };
        let q = candidates.iter().map(|_| rng.random_range(0.05..0.5)).collect();
        Fixture {
            model,
            hidden,
            inputs,
            candidates,
            masks,
            objective: Objective {
                loss: case.loss,
                final_act,
                logq,
                bpreg: 0.5,
            },
            q,
        }
    }

    fn loss(&self, model: &Gru4Rec<f64>) -> f64 {
        let cache = model
            .step(&self.hidden, &self.inputs, Some(&self.masks))
            .expect("fixture step");
        let scores = model.score(cache.output(), &self.candidates).expect("fixture scores");
        self.objective.evaluate(&scores, Some(&self.q)).expect("fixture loss").0
    }
}

/// Largest relative error between analytic and central-difference gradients.
fn max_relative_error(case: GradCase, seed: u64) -> (f64, f64) {
    let fx = Fixture::new(case, seed);
    let cache = fx.model.step(&fx.hidden, &fx.inputs, Some(&fx.masks)).unwrap();
    let scores = fx.model.score(cache.output(), &fx.candidates).unwrap();
    let (_, dscores) = fx.objective.evaluate(&scores, Some(&fx.q)).unwrap();
    let grads = fx.model.backward(&cache, &fx.candidates, &dscores);
    let shapes: Vec<_> = fx.model.params().iter().map(|p| p.shape()).collect();

    let mut worst: f64 = 0.0;
    let mut largest: f64 = 0.0;
    let mut probe = fx.model.clone();
    for (p, g) in grads.iter().enumerate() {
        let analytic = g.to_dense(shapes[p]);
        for i in 0..analytic.as_slice().len() {
            let orig = probe.params()[p].as_slice()[i];
            probe.params_mut()[p].as_mut_slice()[i] = orig + GRADCHECK_EPS;
            let up = fx.loss(&probe);
            probe.params_mut()[p].as_mut_slice()[i] = orig - GRADCHECK_EPS;
            let down = fx.loss(&probe);
            probe.params_mut()[p].as_mut_slice()[i] = orig;
            let numeric = (up - down) / (2.0 * GRADCHECK_EPS);
            let a = analytic.as_slice()[i];
            let denom = a.abs().max(numeric.abs()).max(GRADCHECK_FLOOR);
            worst = worst.max((a - numeric).abs() / denom);
            largest = largest.max(a.abs());
        }
    }
    (worst, largest)
}

/// Finite-difference check of one configuration, in 64-bit.
pub fn gradcheck(case: GradCase, seed: u64) -> CheckReport {
    let (err, largest) = max_relative_error(case, seed);
    // A vanishing gradient would pass trivially.
    let pass = err < GRADCHECK_TOL && largest > 1e-3;
    CheckReport::new(case.name(), pass, err, GRADCHECK_TOL, seed)
}

pub fn run_gradcheck_suite(seed: u64) -> Vec<CheckReport> {
    use rayon::prelude::*;
    GradCase::all()
        .into_par_iter()
        .map(|c| gradcheck(c, seed))
        .collect()
}
