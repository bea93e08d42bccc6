use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::corpus::{NegativeSampler, SessionCorpus};
use crate::eval::{evaluate_naive, evaluate_sessions, EvalConfig};
use crate::model::{
    dropout_mask, EmbeddingMode, FinalActivation, Grad, Gru4Rec, HiddenState, ModelConfig,
};
use crate::synthetic;
use crate::tensor::Matrix;
use crate::training::{
    bpr_max_loss, cross_entropy_loss, AdagradMomentum, LossKind, TrainConfig, Trainer,
};

use super::reference::{reference_run, reference_scores};
use super::{CheckReport, ORACLE_TOL, SAMPLER_SIGNIFICANCE};

fn random_model(mode: EmbeddingMode, layers: &[usize], v: usize, rng: &mut ChaCha8Rng) -> Gru4Rec<f64> {
    let mut m = Gru4Rec::init(
        ModelConfig {
            n_items: v,
            layers: layers.to_vec(),
            embedding: mode,
        },
        rng,
    )
    .expect("valid fixture");
    for l in m.layers_mut() {
        l.b.as_mut_slice()
            .iter_mut()
            .for_each(|b| *b = rng.random_range(-0.3..0.3));
    }
    m
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Reset behaviour of the batch state, plus a 50-step lineage comparison
/// against an independent schedule interpreter and the dense reference.
pub fn run_reset_check(seed: u64) -> Vec<CheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = random_model(EmbeddingMode::Shared, &[6, 5], 12, &mut rng);
    let layers = model.config().layers.clone();
    let random_state = |rng: &mut ChaCha8Rng, n: usize| {
        let mut s = HiddenState::<f64>::new(n, &layers);
        let rows: Vec<Matrix<f64>> = layers
            .iter()
            .map(|&h| Matrix::from_fn(n, h, |_, _| rng.random_range(-0.9..0.9)))
            .collect();
        s.scatter(&(0..n).collect::<Vec<_>>(), &rows);
        s
    };
    let inputs = [3u32, 7];
    let fresh = model
        .step(&HiddenState::new(2, &layers).gather(&[0, 1]), &inputs, None)
        .unwrap();
    let fresh = fresh.output();

    let mut state = random_state(&mut rng, 2);
    state.reset(&[0, 1], &[true, false]);
    let out = model.step(&state.gather(&[0, 1]), &inputs, None).unwrap();
    let d0 = max_abs_diff(out.output().row(0), fresh.row(0));
    let d1 = max_abs_diff(out.output().row(1), fresh.row(1));
    let partial = CheckReport::new("reset/partial-batch", d0 == 0.0 && d1 > 1e-6, d0, 0.0, seed);

    let mut state = random_state(&mut rng, 2);
    state.reset(&[0, 1], &[true, true]);
    let out = model.step(&state.gather(&[0, 1]), &inputs, None).unwrap();
    let d = max_abs_diff(out.output().as_slice(), fresh.as_slice());
    let full = CheckReport::new("reset/full-batch", d == 0.0, d, 0.0, seed);

    let lineage = lineage_check(&model, seed);
    vec![partial, full, lineage]
}

/// Slots refilled in order from a queue; retired once the queue is empty.
fn interpret_schedule(sessions: &[Vec<u32>], batch: usize, steps: usize) -> Vec<Vec<(usize, usize, usize)>> {
    let mut queue: VecDeque<usize> = (0..sessions.len()).collect();
    let mut slots: Vec<Option<(usize, usize)>> = (0..batch).map(|_| queue.pop_front().map(|s| (s, 0))).collect();
    let mut out = Vec::new();
    for _ in 0..steps {
        let mut step = Vec::new();
        for (slot, cur) in slots.iter_mut().enumerate() {
            if let Some((s, p)) = *cur {
                step.push((slot, s, p));
                *cur = if p + 2 < sessions[s].len() {
                    Some((s, p + 1))
                } else {
                    queue.pop_front().map(|n| (n, 0))
                };
            }
        }
        if step.is_empty() {
            break;
        }
        out.push(step);
    }
    out
}

fn lineage_check(model: &Gru4Rec<f64>, seed: u64) -> CheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let v = model.n_items() as u32;
    let sessions: Vec<Vec<u32>> = (0..40)
        .map(|_| {
            let len = rng.random_range(2..7);
            (0..len).map(|_| rng.random_range(0..v)).collect()
        })
        .collect();
    let corpus = SessionCorpus::from_sessions(v as usize, &sessions).unwrap();
    let steps = 50;
    let batch = 4;
    let expected = interpret_schedule(&sessions, batch, steps);
    let mut state = HiddenState::<f64>::new(batch, &model.config().layers);
    let mut worst: f64 = 0.0;
    let mut schedule_ok = true;
    for (b, exp) in corpus.batches(batch).take(steps).zip(&expected) {
        let slots: Vec<usize> = exp.iter().map(|e| e.0).collect();
        let inputs: Vec<u32> = exp.iter().map(|&(_, s, p)| sessions[s][p]).collect();
        schedule_ok &= b.slots == slots && b.inputs == inputs;
        state.reset(&b.slots, &b.reset);
        let cache = model.step(&state.gather(&b.slots), &b.inputs, None).unwrap();
        for (k, &(_, s, p)) in exp.iter().enumerate() {
            let reference = reference_run(model, &sessions[s][..=p]);
            worst = worst.max(max_abs_diff(cache.output().row(k), &reference));
        }
        state.scatter(&b.slots, &cache.into_hidden());
    }
    let pass = schedule_ok && worst < ORACLE_TOL;
    CheckReport::new("reset/lineage-50-steps", pass, worst, ORACLE_TOL, seed)
}

/// Support fixture shared by the sampler checks.
pub fn sampler_fixture() -> Vec<u64> {
    (0..100u64).map(|i| 1 + 1000 / (i + 1)).collect()
}

/// Chi-square goodness of fit of `draws` samples against `supp^alpha`.
pub fn sampler_check(alpha: f64, draws: usize, seed: u64) -> CheckReport {
    let supports = sampler_fixture();
    let mut sampler = NegativeSampler::with_cache_size(&supports, alpha, seed, draws);
    let mut counts = vec![0u64; supports.len()];
    for i in sampler.draw(draws) {
        counts[i as usize] += 1;
    }
    let stat: f64 = counts
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let e = draws as f64 * sampler.probability(i as u32);
            (c as f64 - e).powi(2) / e
        })
        .sum();
    let dist = ChiSquared::new((supports.len() - 1) as f64).expect("df > 0");
    let p_value = 1.0 - dist.cdf(stat);
    CheckReport::new(
        format!("sampler/chi-square/alpha={alpha}"),
        p_value > SAMPLER_SIGNIFICANCE,
        p_value,
        SAMPLER_SIGNIFICANCE,
        seed,
    )
}

pub fn run_sampler_check(alphas: &[f64], draws: usize, seed: u64) -> Vec<CheckReport> {
    use rayon::prelude::*;
    alphas
        .par_iter()
        .map(|&a| sampler_check(a, draws, seed))
        .collect()
}

/// (a) CE over a candidate set covering the whole catalog equals the
/// full-softmax cross-entropy.
fn sampled_ce_vs_full_softmax(seed: u64) -> CheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v = 30;
    let model = random_model(EmbeddingMode::Separate(5), &[8], v, &mut rng);
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let input = rng.random_range(0..v as u32);
        let target = rng.random_range(0..v as u32);
        let mut cands = vec![target];
        cands.extend((0..v as u32).filter(|&i| i != target));
        let h = HiddenState::<f64>::new(1, &[8]).gather(&[0]);
        let cache = model.step(&h, &[input], None).unwrap();
        let scores = model.score(cache.output(), &cands).unwrap();
        let (sampled, _) = cross_entropy_loss(&scores, 0.0, None).unwrap();

        let all = reference_scores(&model, &reference_run(&model, &[input]));
        let denom: f64 = all.iter().map(|s| s.exp()).sum();
        let full = -(all[target as usize].exp() / denom).ln();
        worst = worst.max((sampled - full).abs());
    }
    CheckReport::new("oracle/sampled-ce-vs-full-softmax", worst < ORACLE_TOL, worst, ORACLE_TOL, seed)
}

/// (b) Batched session-parallel evaluator equals the naive replay evaluator.
fn batched_vs_naive_eval(seed: u64) -> CheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v = 50;
    let model = random_model(EmbeddingMode::Shared, &[10], v, &mut rng);
    let mut sessions = Vec::new();
    let mut events = 0;
    while events < 200 {
        let len = rng.random_range(1..8);
        events += len;
        sessions.push(
            (0..len)
                .map(|_| (rng.random::<f64>() > 0.15).then(|| rng.random_range(0..v as u32)))
                .collect::<Vec<_>>(),
        );
    }
    let cfg = EvalConfig {
        batch_size: 16,
        ..EvalConfig::default()
    };
    let fast = evaluate_sessions(&model, &sessions, &cfg).unwrap();
    let slow = evaluate_naive(&model, &sessions, &cfg).unwrap();
    let diff = fast
        .metrics
        .iter()
        .zip(&slow.metrics)
        .map(|(a, b)| (a.recall - b.recall).abs().max((a.mrr - b.mrr).abs()))
        .fold(0.0, f64::max);
    CheckReport::new("oracle/batched-vs-naive-eval", fast == slow, diff, 0.0, seed)
}

/// (c) Pairs emitted by the session-parallel iterator equal the consecutive
/// pairs of all sessions, as multisets.
fn iterator_multiset(seed: u64) -> CheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sessions: Vec<Vec<u32>> = (0..60)
        .map(|_| {
            let len = rng.random_range(2..10);
            (0..len).map(|_| rng.random_range(0..25)).collect()
        })
        .collect();
    let corpus = SessionCorpus::from_sessions(25, &sessions).unwrap();
    let mut emitted: Vec<(u32, u32)> = corpus
        .batches(7)
        .flat_map(|b| b.inputs.into_iter().zip(b.targets).collect::<Vec<_>>())
        .collect();
    let mut direct: Vec<(u32, u32)> = sessions
        .iter()
        .flat_map(|s| s.windows(2).map(|w| (w[0], w[1])))
        .collect();
    emitted.sort_unstable();
    direct.sort_unstable();
    let mismatch = if emitted == direct { 0.0 } else { 1.0 };
    CheckReport::new("oracle/iterator-pair-multiset", emitted == direct, mismatch, 0.0, seed)
}

fn mode_label(mode: EmbeddingMode) -> &'static str {
    match mode {
        EmbeddingMode::None => "none",
        EmbeddingMode::Separate(_) => "separate",
        EmbeddingMode::Shared => "shared",
    }
}

/// (d) Indexed forward equals the dense one-hot reference, per mode.
fn indexed_vs_dense(mode: EmbeddingMode, seed: u64) -> CheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v = 20;
    let model = random_model(mode, &[7, 5], v, &mut rng);
    let mut worst: f64 = 0.0;
    for _ in 0..8 {
        let len = rng.random_range(1..6);
        let items: Vec<u32> = (0..len).map(|_| rng.random_range(0..v as u32)).collect();
        let mut state = HiddenState::<f64>::new(1, &[7, 5]);
        for &i in &items {
            let c = model.step(&state.gather(&[0]), &[i], None).unwrap();
            state.scatter(&[0], &c.into_hidden());
        }
        let top = state.layers()[1].row(0).to_vec();
        let reference = reference_run(&model, &items);
        worst = worst.max(max_abs_diff(&top, &reference));
        let fast = model.score_all(&Matrix::from_vec(1, 5, top));
        worst = worst.max(max_abs_diff(fast.row(0), &reference_scores(&model, &reference)));
    }
    let zero = Gru4Rec::<f64>::zeros(model.config().clone()).unwrap();
    let h = HiddenState::<f64>::new(1, &[7, 5]).gather(&[0]);
    let zs = zero.score_all(zero.step(&h, &[3], None).unwrap().output());
    let zero_ok = zs.as_slice().iter().all(|&s| s == 0.0);
    CheckReport::new(
        format!("oracle/indexed-vs-dense/{}", mode_label(mode)),
        worst < ORACLE_TOL && zero_ok,
        worst,
        ORACLE_TOL,
        seed,
    )
}

pub fn run_oracle_equivalences(seed: u64) -> Vec<CheckReport> {
    vec![
        sampled_ce_vs_full_softmax(seed),
        batched_vs_naive_eval(seed),
        iterator_multiset(seed),
        indexed_vs_dense(EmbeddingMode::None, seed),
        indexed_vs_dense(EmbeddingMode::Separate(4), seed),
        indexed_vs_dense(EmbeddingMode::Shared, seed),
    ]
}

/// Every training step scores exactly `B' · (B' + n_sample)` items.
fn candidate_count(seed: u64) -> CheckReport {
    let sessions = synthetic::popularity_sessions(400, 200, 6.0, 1.0, seed);
    let corpus = synthetic::corpus(400, &sessions);
    let cfg = TrainConfig {
        layers: vec![8],
        batch_size: 16,
        n_sample: 32,
        sample_cache: 4096,
        seed,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::<f32>::new(&corpus, cfg).unwrap();
    let mut hidden = trainer.new_hidden();
    let mut worst_ratio: f64 = 0.0;
    for mut b in corpus.batches(16).take(30) {
        let before = trainer.counters().score_evaluations;
        trainer.train_step(&mut hidden, &mut b).unwrap();
        let used = (trainer.counters().score_evaluations - before) as f64;
        let n = b.len() as f64;
        worst_ratio = worst_ratio.max(used / (n * (n + 32.0)));
    }
    CheckReport::new("training/candidate-count", worst_ratio <= 1.0, worst_ratio, 1.0, seed)
}

/// With no extra samples the other rows' targets are the only negatives:
/// a zero model then gives CE = ln B'.
fn minibatch_negatives(seed: u64) -> CheckReport {
    let sessions = synthetic::PlantedRule::new(30, seed).sessions(20, 3, 5, seed);
    let corpus = synthetic::corpus(30, &sessions);
    let cfg = TrainConfig {
        layers: vec![6],
        batch_size: 4,
        n_sample: 0,
        seed,
        ..TrainConfig::default()
    };
    let zero = Gru4Rec::<f64>::zeros(cfg.model_config(30)).unwrap();
    let mut trainer = Trainer::with_model(&corpus, cfg, zero);
    let mut hidden = trainer.new_hidden();
    let mut b = corpus.batches(4).next().unwrap();
    let loss = trainer.train_step(&mut hidden, &mut b).unwrap();
    let err = (loss - 4f64.ln()).abs();
    let pass = err < ORACLE_TOL && trainer.counters().last_candidates == 4;
    CheckReport::new("training/minibatch-negatives", pass, err, ORACLE_TOL, seed)
}

/// Drop fraction of a dropout mask matches the configured drop probability.
fn dropout_rate(seed: u64) -> CheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (p, n) = (0.25, 200_000);
    let m: Matrix<f64> = dropout_mask(1, n, p, &mut rng).unwrap();
    let dropped = m.as_slice().iter().filter(|&&x| x == 0.0).count() as f64 / n as f64;
    let tol = 5.0 * (p * (1.0 - p) / n as f64).sqrt();
    let err = (dropped - p).abs();
    CheckReport::new("regularization/dropout-drop-rate", err < tol, err, tol, seed)
}

/// BPR-max against a direct transcription of its definition.
fn bpr_max_formula(seed: u64) -> CheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s: Matrix<f64> = Matrix::from_fn(4, 7, |_, _| rng.random_range(-2.0..2.0));
    let bpreg = 0.8;
    let mut direct = 0.0;
    for k in 0..4 {
        let z: f64 = (0..7).filter(|&j| j != k).map(|j| s.get(k, j).exp()).sum();
        let (mut a, mut reg) = (0.0, 0.0);
        for j in (0..7).filter(|&j| j != k) {
            let w = s.get(k, j).exp() / z;
            a += w / (1.0 + (s.get(k, j) - s.get(k, k)).exp());
            reg += w * s.get(k, j).powi(2);
        }
        direct += -(a + 1e-24).ln() + bpreg * reg;
    }
    direct /= 4.0;
    let (got, _) = bpr_max_loss(&s, bpreg).unwrap();
    let err = (got - direct).abs();
    CheckReport::new("loss/bpr-max-formula", err < ORACLE_TOL, err, ORACLE_TOL, seed)
}

/// CE over a plain softmax of raw scores (guards against a second softmax).
fn cross_entropy_formula(seed: u64) -> CheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s: Matrix<f64> = Matrix::from_fn(3, 6, |_, _| rng.random_range(-3.0..3.0));
    let mut direct = 0.0;
    for k in 0..3 {
        let denom: f64 = s.row(k).iter().map(|v| v.exp()).sum();
        direct -= (s.get(k, k).exp() / denom).ln();
    }
    direct /= 3.0;
    let (got, _) = cross_entropy_loss(&s, 0.0, None).unwrap();
    let err = (got - direct).abs();
    CheckReport::new("loss/cross-entropy-formula", err < ORACLE_TOL, err, ORACLE_TOL, seed)
}

/// First Adagrad step from a zero accumulator moves every entry by `lr`
/// in the gradient's direction; the accumulator never decreases.
fn adagrad_first_step(seed: u64) -> CheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lr = 0.05;
    let mut opt = AdagradMomentum::<f64>::new(&[(4, 5)], lr, 0.0);
    let mut p = Matrix::<f64>::zeros(4, 5);
    let g = Matrix::from_fn(4, 5, |_, _| rng.random_range(-2.0..2.0));
    opt.step(vec![&mut p], &[Grad::Dense(g.clone())], &[]).unwrap();
    let mut err: f64 = 0.0;
    for (pv, gv) in p.as_slice().iter().zip(g.as_slice()) {
        err = err.max((pv + lr * gv.signum()).abs());
    }
    let mut monotone = true;
    for _ in 0..5 {
        let before = opt.accumulators()[0].clone();
        let g = Matrix::from_fn(4, 5, |_, _| rng.random_range(-2.0..2.0));
        opt.step(vec![&mut p], &[Grad::Dense(g)], &[]).unwrap();
        monotone &= before
            .as_slice()
            .iter()
            .zip(opt.accumulators()[0].as_slice())
            .all(|(a, b)| b >= a);
    }
    CheckReport::new("optimizer/adagrad-first-step", err < 1e-9 && monotone, err, 1e-9, seed)
}

/// Every hyperparameter set through the parameter parser takes effect.
fn flag_parity(seed: u64) -> CheckReport {
    let wanted = TrainConfig {
        loss: LossKind::BprMax,
        final_act: FinalActivation::Elu(0.5),
        layers: vec![96, 48],
        batch_size: 77,
        n_sample: 1234,
        sample_alpha: 0.3,
        logq: 0.0,
        bpreg: 1.7,
        constrained_embedding: false,
        embedding: 33,
        dropout_p_embed: 0.15,
        dropout_p_hidden: 0.35,
        learning_rate: 0.07,
        momentum: 0.2,
        n_epochs: 3,
        seed,
        shuffle: true,
        sample_cache: 5000,
    };
    let parsed = TrainConfig::from_kv_str(&wanted.to_kv_string());
    let pass = parsed.as_ref() == Ok(&wanted);
    CheckReport::new("config/flag-parity", pass, if pass { 0.0 } else { 1.0 }, 0.0, seed)
}

/// Checks guarding the reimplementation bug classes not covered elsewhere.
pub fn run_regression_checks(seed: u64) -> Vec<CheckReport> {
    vec![
        candidate_count(seed),
        minibatch_negatives(seed),
        dropout_rate(seed),
        bpr_max_formula(seed),
        cross_entropy_formula(seed),
        adagrad_first_step(seed),
        flag_parity(seed),
    ]
}

/// Planted successor rule: after training, recall@1 on fresh sessions.
pub fn planted_rule_recall(seed: u64, n_epochs: usize) -> (f64, Vec<f64>) {
    let rule = synthetic::PlantedRule::new(20, seed);
    let train = rule.sessions(300, 3, 8, seed + 1);
    let test = rule.sessions(100, 3, 8, seed + 2);
    let corpus = synthetic::corpus(20, &train);
    let cfg = TrainConfig {
        layers: vec![32],
        batch_size: 16,
        n_sample: 8,
        learning_rate: 0.1,
        n_epochs,
        seed,
        sample_cache: 10_000,
        ..TrainConfig::default()
    };
    let (model, stats) = crate::training::fit(&corpus, &cfg).expect("valid config");
    let r = evaluate_sessions(
        &model,
        &synthetic::as_test_sessions(&test),
        &EvalConfig::default(),
    )
    .unwrap();
    (
        r.at(1).unwrap().recall,
        stats.iter().map(|s| s.mean_loss).collect(),
    )
}
