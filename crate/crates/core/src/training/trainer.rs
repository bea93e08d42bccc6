use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{MiniBatch, NegativeSampler, SessionCorpus};
use crate::faults::{self, Fault};
use crate::model::{dropout_mask, DropoutMasks, Gru4Rec, HiddenState, ModelError};
use crate::tensor::{Matrix, Real};

use super::config::{LossKind, TrainConfig};
use super::loss::{LossError, Objective};
use super::optimizer::{AdagradMomentum, OptimizerError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Optimizer(#[from] OptimizerError),
    #[error("non-finite {what} in epoch {epoch}")]
    NonFinite { what: &'static str, epoch: usize },
}

/// Sampling probabilities used by the logQ correction. Mini-batch targets
/// are drawn from the data, so their inclusion probability is taken as
/// `supp/Σsupp`; the extra negatives come from the `supp^α` sampler.
#[derive(Debug, Clone)]
pub struct LogQTable {
    batch: Vec<f64>,
    extra: Vec<f64>,
}

impl LogQTable {
    pub fn new(supports: &[u64], alpha: f64) -> Self {
        let total: f64 = supports.iter().map(|&s| s as f64).sum();
        let powered: Vec<f64> = supports.iter().map(|&s| (s as f64).powf(alpha)).collect();
        let ptotal: f64 = powered.iter().sum();
        LogQTable {
            batch: supports.iter().map(|&s| s as f64 / total).collect(),
            extra: powered.into_iter().map(|p| p / ptotal).collect(),
        }
    }

    /// `q_j` for each column of a candidate list whose first `n_targets`
    /// columns are mini-batch targets.
    pub fn probabilities(&self, n_targets: usize, candidates: &[u32]) -> Vec<f64> {
        candidates
            .iter()
            .enumerate()
            .map(|(j, &c)| {
                if j < n_targets {
                    self.batch[c as usize]
                } else {
                    self.extra[c as usize]
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    /// Input/target pairs trained on.
    pub events: usize,
    pub seconds: f64,
}

/// Work counters, mainly to verify that scoring stays on the candidate set.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StepCounters {
    pub steps: u64,
    pub examples: u64,
    /// Individual item scores computed.
    pub score_evaluations: u64,
    pub last_batch: usize,
    pub last_candidates: usize,
}

fn sub_seed(seed: u64, stream: u64) -> u64 {
    seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

pub struct Trainer<F> {
    config: TrainConfig,
    model: Gru4Rec<F>,
    optimizer: AdagradMomentum<F>,
    sampler: NegativeSampler,
    logq: LogQTable,
    objective: Objective,
    dropout_rng: ChaCha8Rng,
    order_rng: ChaCha8Rng,
    names: Vec<String>,
    counters: StepCounters,
}

impl<F: Real> Trainer<F> {
    pub fn new(corpus: &SessionCorpus, config: TrainConfig) -> Result<Self, TrainError> {
        config.validate().map_err(TrainError::Config)?;
        let mut init_rng = ChaCha8Rng::seed_from_u64(sub_seed(config.seed, 0));
        let model = Gru4Rec::init(config.model_config(corpus.n_items()), &mut init_rng)?;
        Ok(Self::with_model(corpus, config, model))
    }

    /// Continues from an existing model with fresh optimizer state.
    pub fn with_model(corpus: &SessionCorpus, config: TrainConfig, model: Gru4Rec<F>) -> Self {
        let shapes: Vec<_> = model.params().iter().map(|p| p.shape()).collect();
        let optimizer = AdagradMomentum::new(&shapes, config.learning_rate, config.momentum);
        let sampler = NegativeSampler::with_cache_size(
            corpus.supports(),
            config.sample_alpha,
            sub_seed(config.seed, 1),
            config.sample_cache,
        );
        Trainer {
            logq: LogQTable::new(corpus.supports(), config.sample_alpha),
            objective: Objective {
                loss: config.loss,
                final_act: config.final_act,
                logq: config.logq,
                bpreg: config.bpreg,
            },
            dropout_rng: ChaCha8Rng::seed_from_u64(sub_seed(config.seed, 2)),
            order_rng: ChaCha8Rng::seed_from_u64(sub_seed(config.seed, 3)),
            names: model.param_names(),
            counters: StepCounters::default(),
            optimizer,
            sampler,
            model,
            config,
        }
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn model(&self) -> &Gru4Rec<F> {
        &self.model
    }

    pub fn into_model(self) -> Gru4Rec<F> {
        self.model
    }

    pub fn optimizer(&self) -> &AdagradMomentum<F> {
        &self.optimizer
    }

    pub fn counters(&self) -> StepCounters {
        self.counters
    }

    pub fn new_hidden(&self) -> HiddenState<F> {
        HiddenState::new(self.config.batch_size, &self.config.layers)
    }

    fn draw_masks(&mut self, n: usize) -> Result<Option<DropoutMasks<F>>, ModelError> {
        let (pe, ph) = (self.config.dropout_p_embed, self.config.dropout_p_hidden);
        if pe == 0.0 && ph == 0.0 {
            return Ok(None);
        }
        let rng = &mut self.dropout_rng;
        let embed = match self.model.input_table() {
            Some(t) if pe > 0.0 => Some(dropout_mask(n, t.cols(), pe, rng)?),
            _ => None,
        };
        let hidden = self
            .config
            .layers
            .iter()
            .map(|&h| {
                if ph > 0.0 {
                    dropout_mask(n, h, ph, rng).map(Some)
                } else {
                    Ok(None)
                }
            })
            .collect::<Result<_, _>>()?;
        Ok(Some(DropoutMasks { embed, hidden }))
    }

    /// Resets starting slots, draws the shared negatives, scores only the
    /// candidate set, and applies one optimizer update. Returns the batch loss.
    pub fn train_step(
        &mut self,
        hidden: &mut HiddenState<F>,
        batch: &mut MiniBatch,
    ) -> Result<F, TrainError> {
        let n = batch.len();
        hidden.reset(&batch.slots, &batch.reset);
        batch.extra_negatives = self.sampler.draw(self.config.n_sample);
        let candidates = batch.candidates();
        let h = hidden.gather(&batch.slots);
        let masks = self.draw_masks(n)?;
        let cache = self.model.step(&h, &batch.inputs, masks.as_ref())?;
        let scores = if faults::active(Fault::SampleAfterScoring) {
            let all = self.model.score_all(cache.output());
            self.counters.score_evaluations += (n * self.model.n_items()) as u64;
            Matrix::from_fn(n, candidates.len(), |r, c| all.get(r, candidates[c] as usize))
        } else {
            self.counters.score_evaluations += (n * candidates.len()) as u64;
            self.model.score(cache.output(), &candidates)?
        };
        let q = (self.config.loss == LossKind::CrossEntropy && self.config.logq > 0.0)
            .then(|| self.logq.probabilities(n, &candidates));
        let (loss, dscores) = self.objective.evaluate(&scores, q.as_deref())?;
        let grads = self.model.backward(&cache, &candidates, &dscores);
        self.optimizer
            .step(self.model.params_mut(), &grads, &self.names)?;
        hidden.scatter(&batch.slots, &cache.into_hidden());
        self.counters.steps += 1;
        self.counters.examples += n as u64;
        self.counters.last_batch = n;
        self.counters.last_candidates = candidates.len();
        Ok(loss)
    }

    fn session_order(&mut self, corpus: &SessionCorpus) -> Vec<usize> {
        let mut order: Vec<usize> = (0..corpus.n_sessions()).collect();
        if self.config.shuffle {
            order.shuffle(&mut self.order_rng);
        }
        order
    }

    /// One pass over every training session.
    pub fn run_epoch(&mut self, corpus: &SessionCorpus, epoch: usize) -> Result<EpochStats, TrainError> {
        let start = Instant::now();
        let order = self.session_order(corpus);
        let mut hidden = self.new_hidden();
        let mut total = 0.0f64;
        let mut events = 0usize;
        for mut batch in corpus.batches_in_order(self.config.batch_size, order) {
            let loss = self.train_step(&mut hidden, &mut batch)?;
            total += loss.to_f64().unwrap() * batch.len() as f64;
            events += batch.len();
        }
        let mean_loss = total / events.max(1) as f64;
        if !mean_loss.is_finite() {
            return Err(TrainError::NonFinite { what: "loss", epoch });
        }
        if !self.model.all_finite() {
            return Err(TrainError::NonFinite {
                what: "parameter",
                epoch,
            });
        }
        Ok(EpochStats {
            epoch,
            mean_loss,
            events,
            seconds: start.elapsed().as_secs_f64(),
        })
    }
}

/// Trains a fresh model for `config.n_epochs` epochs.
pub fn fit(
    corpus: &SessionCorpus,
    config: &TrainConfig,
) -> Result<(Gru4Rec<f32>, Vec<EpochStats>), TrainError> {
    fit_with(corpus, config, |_| {})
}

/// [`fit`] with a callback after every epoch.
pub fn fit_with(
    corpus: &SessionCorpus,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<(Gru4Rec<f32>, Vec<EpochStats>), TrainError> {
    let mut trainer = Trainer::<f32>::new(corpus, config.clone())?;
    let mut stats = Vec::with_capacity(config.n_epochs);
    for epoch in 1..=config.n_epochs {
        let s = trainer.run_epoch(corpus, epoch)?;
        log::info!(
            "epoch {epoch}: loss {:.6}, {} events, {:.1}s",
            s.mean_loss,
            s.events,
            s.seconds
        );
        on_epoch(&s);
        stats.push(s);
    }
    Ok((trainer.into_model(), stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::FinalActivation;

    fn chain_corpus(v: u32, sessions: usize, len: usize) -> SessionCorpus {
        let s: Vec<Vec<u32>> = (0..sessions)
            .map(|k| (0..len).map(|t| ((k + t) as u32) % v).collect())
            .collect();
        SessionCorpus::from_sessions(v as usize, &s).unwrap()
    }

    fn small_config() -> TrainConfig {
        TrainConfig {
            layers: vec![16],
            batch_size: 8,
            n_sample: 4,
            n_epochs: 1,
            learning_rate: 0.1,
            sample_cache: 1000,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn degenerate_single_candidate_step() {
        let corpus = SessionCorpus::from_sessions(3, &[vec![0, 1]]).unwrap();
        let cfg = TrainConfig {
            batch_size: 1,
            n_sample: 0,
            ..small_config()
        };
        let mut t = Trainer::<f64>::new(&corpus, cfg).unwrap();
        let mut h = t.new_hidden();
        let mut batch = corpus.batches(1).next().unwrap();
        assert_eq!(t.train_step(&mut h, &mut batch).unwrap(), 0.0);
        assert_eq!(t.counters().last_candidates, 1);
    }

    #[test]
    fn candidate_count_is_batch_plus_samples() {
        let corpus = chain_corpus(50, 40, 5);
        let mut t = Trainer::<f32>::new(&corpus, small_config()).unwrap();
        let mut h = t.new_hidden();
        for mut b in corpus.batches(8) {
            let before = t.counters().score_evaluations;
            t.train_step(&mut h, &mut b).unwrap();
            let c = t.counters();
            assert_eq!(c.last_candidates, b.len() + 4);
            assert_eq!(c.score_evaluations - before, (b.len() * (b.len() + 4)) as u64);
        }
    }

    #[test]
    fn epoch_counts_every_pair() {
        let corpus = chain_corpus(30, 25, 4);
        let cfg = small_config();
        let (_, stats) = fit(&corpus, &cfg).unwrap();
        assert_eq!(stats[0].events, corpus.n_events() - corpus.n_sessions());
    }

    #[test]
    fn loss_decreases_on_planted_rule() {
        let corpus = chain_corpus(20, 60, 6);
        for (loss, act) in [
            (LossKind::CrossEntropy, FinalActivation::Softmax),
            (LossKind::BprMax, FinalActivation::Elu(0.5)),
        ] {
            let cfg = TrainConfig {
                loss,
                final_act: act,
                n_epochs: 8,
                ..small_config()
            };
            let (_, stats) = fit(&corpus, &cfg).unwrap();
            assert!(
                stats.last().unwrap().mean_loss < 0.9 * stats[0].mean_loss,
                "{loss}: {stats:?}"
            );
        }
    }

    #[test]
    fn logq_table_mixes_schemes() {
        let t = LogQTable::new(&[3, 1], 0.0);
        let q = t.probabilities(1, &[0, 0, 1]);
        assert_eq!(q, vec![0.75, 0.5, 0.5]);
    }

    #[test]
    fn invalid_config_is_rejected_up_front() {
        let corpus = chain_corpus(10, 5, 3);
        let cfg = TrainConfig {
            n_epochs: 0,
            ..small_config()
        };
        assert!(matches!(fit(&corpus, &cfg), Err(TrainError::Config(_))));
    }
}
