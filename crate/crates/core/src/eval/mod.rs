//! Next-item evaluation: replay each test session, rank the whole catalog
//! before every event but the first, and report recall@N and MRR@N.
//!
//! Items missing from the training vocabulary are skipped entirely: they are
//! neither fed nor ranked, and the session state carries across the gap. A
//! session's first *known* event starts it, so the counts satisfy
//! `evaluated + skipped_unknown + session_starts = total_events`.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{ItemMap, SessionCorpus};
use crate::datasets::EventLog;
use crate::model::{Gru4Rec, HiddenState, ModelError};
use crate::tensor::{matmul_nt, Matrix, Real};

pub const DEFAULT_CUTOFFS: [usize; 4] = [1, 5, 10, 20];

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("test set has no events")]
    EmptyTest,
    #[error("non-finite score for item {item}")]
    NonFiniteScore { item: usize },
    #[error("target {target} out of range for {n_items} items")]
    TargetOutOfRange { target: usize, n_items: usize },
    #[error("invalid evaluation config: {0}")]
    Config(String),
    #[error("vocabulary mismatch: model has {model} items, item map has {map}")]
    VocabularyMismatch { model: usize, map: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub cutoffs: Vec<usize>,
    /// Sessions replayed together per work unit.
    pub batch_size: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            cutoffs: DEFAULT_CUTOFFS.to_vec(),
            batch_size: 256,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.cutoffs.is_empty() || self.cutoffs[0] == 0 {
            return Err(EvalError::Config("cutoffs must be positive and non-empty".into()));
        }
        if self.cutoffs.windows(2).any(|w| w[0] >= w[1]) {
            return Err(EvalError::Config("cutoffs must be strictly ascending".into()));
        }
        if self.batch_size == 0 {
            return Err(EvalError::Config("batch_size must be positive".into()));
        }
        Ok(())
    }

    fn max_cutoff(&self) -> usize {
        *self.cutoffs.last().unwrap()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub cutoff: usize,
    pub recall: f64,
    pub mrr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub metrics: Vec<Metric>,
    pub evaluated_events: u64,
    pub skipped_unknown: u64,
    pub session_starts: u64,
    pub total_events: u64,
}

impl EvalResult {
    pub fn at(&self, cutoff: usize) -> Option<Metric> {
        self.metrics.iter().copied().find(|m| m.cutoff == cutoff)
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::from("cutoff\trecall\tmrr\n");
        for m in &self.metrics {
            writeln!(s, "{}\t{:.6}\t{:.6}", m.cutoff, m.recall, m.mrr).unwrap();
        }
        s
    }
}

/// Rank histogram up to the largest cutoff plus event counts. Merging is
/// integer addition, so the result does not depend on reduction order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankTally {
    hits: Vec<u64>,
    pub evaluated: u64,
    pub skipped: u64,
    pub starts: u64,
    pub total: u64,
}

impl RankTally {
    pub fn new(max_cutoff: usize) -> Self {
        RankTally {
            hits: vec![0; max_cutoff + 1],
            evaluated: 0,
            skipped: 0,
            starts: 0,
            total: 0,
        }
    }

    pub fn record(&mut self, rank: usize) {
        self.evaluated += 1;
        if rank < self.hits.len() {
            self.hits[rank] += 1;
        }
    }

    pub fn merge(mut self, other: RankTally) -> RankTally {
        for (a, b) in self.hits.iter_mut().zip(other.hits) {
            *a += b;
        }
        self.evaluated += other.evaluated;
        self.skipped += other.skipped;
        self.starts += other.starts;
        self.total += other.total;
        self
    }

    pub fn finish(&self, cutoffs: &[usize]) -> EvalResult {
        let n = self.evaluated.max(1) as f64;
        let metrics = cutoffs
            .iter()
            .map(|&c| {
                let mut hit = 0u64;
                let mut rr = 0.0;
                for r in 1..=c {
                    hit += self.hits[r];
                    rr += self.hits[r] as f64 / r as f64;
                }
                Metric {
                    cutoff: c,
                    recall: hit as f64 / n,
                    mrr: rr / n,
                }
            })
            .collect();
        EvalResult {
            metrics,
            evaluated_events: self.evaluated,
            skipped_unknown: self.skipped,
            session_starts: self.starts,
            total_events: self.total,
        }
    }
}

/// `1 + #{j : scores[j] > scores[target]}`; ties never push the target down.
pub fn rank_of_target<F: Real>(scores: &[F], target: usize) -> Result<usize, EvalError> {
    let t = *scores.get(target).ok_or(EvalError::TargetOutOfRange {
        target,
        n_items: scores.len(),
    })?;
    let mut greater = 0;
    for (i, &s) in scores.iter().enumerate() {
        if !s.is_finite() {
            return Err(EvalError::NonFiniteScore { item: i });
        }
        if s > t {
            greater += 1;
        }
    }
    Ok(greater + 1)
}

/// Anything that can replay sessions and score the full catalog.
pub trait Ranker: Sync {
    type Score: Real;
    type State: Send;

    fn n_items(&self) -> usize;
    /// State for `rows` sessions replayed side by side.
    fn init_state(&self, rows: usize) -> Self::State;
    /// Feeds `items[k]` to session row `rows[k]`.
    fn feed(&self, state: &mut Self::State, rows: &[usize], items: &[u32]) -> Result<(), EvalError>;
    /// Catalog scores for the listed rows (one output row each).
    fn score_rows(&self, state: &Self::State, rows: &[usize]) -> Matrix<Self::Score>;
}

impl<F: Real> Ranker for Gru4Rec<F> {
    type Score = F;
    type State = HiddenState<F>;

    fn n_items(&self) -> usize {
        Gru4Rec::n_items(self)
    }

    fn init_state(&self, rows: usize) -> HiddenState<F> {
        HiddenState::new(rows, &self.config().layers)
    }

    fn feed(&self, state: &mut HiddenState<F>, rows: &[usize], items: &[u32]) -> Result<(), EvalError> {
        let h = state.gather(rows);
        let cache = self.step(&h, items, None)?;
        state.scatter(rows, &cache.into_hidden());
        Ok(())
    }

    fn score_rows(&self, state: &HiddenState<F>, rows: &[usize]) -> Matrix<F> {
        let top = state.layers().last().expect("at least one layer").gather_rows(rows);
        matmul_nt(&top, self.output_table())
    }
}

/// Ranks by training support regardless of the session.
#[derive(Debug, Clone)]
pub struct PopularityRanker {
    scores: Vec<f64>,
}

impl PopularityRanker {
    pub fn new(supports: &[u64]) -> Self {
        PopularityRanker {
            scores: supports.iter().map(|&s| s as f64).collect(),
        }
    }

    pub fn from_corpus(corpus: &SessionCorpus) -> Self {
        Self::new(corpus.supports())
    }

    /// Item indices, most popular first (ties by index).
    pub fn ranking(&self) -> Vec<u32> {
        let mut idx: Vec<u32> = (0..self.scores.len() as u32).collect();
        idx.sort_by(|&a, &b| self.scores[b as usize].total_cmp(&self.scores[a as usize]).then(a.cmp(&b)));
        idx
    }
}

impl Ranker for PopularityRanker {
    type Score = f64;
    type State = ();

    fn n_items(&self) -> usize {
        self.scores.len()
    }

    fn init_state(&self, _rows: usize) {}

    fn feed(&self, _: &mut (), _: &[usize], _: &[u32]) -> Result<(), EvalError> {
        Ok(())
    }

    fn score_rows(&self, _: &(), rows: &[usize]) -> Matrix<f64> {
        let v = self.scores.len();
        let mut m = Matrix::zeros(rows.len(), v);
        for r in 0..rows.len() {
            m.row_mut(r).copy_from_slice(&self.scores);
        }
        m
    }
}

/// Known-item sequence of one test session plus its unknown count.
fn known(session: &[Option<u32>]) -> (Vec<u32>, u64) {
    let items: Vec<u32> = session.iter().flatten().copied().collect();
    let skipped = (session.len() - items.len()) as u64;
    (items, skipped)
}

fn tally_chunk<R: Ranker>(
    ranker: &R,
    chunk: &[Vec<Option<u32>>],
    max_cutoff: usize,
) -> Result<RankTally, EvalError> {
    let mut tally = RankTally::new(max_cutoff);
    let seqs: Vec<Vec<u32>> = chunk
        .iter()
        .map(|s| {
            let (items, skipped) = known(s);
            tally.total += s.len() as u64;
            tally.skipped += skipped;
            if !items.is_empty() {
                tally.starts += 1;
            }
            items
        })
        .collect();
    let mut state = ranker.init_state(seqs.len());
    let longest = seqs.iter().map(Vec::len).max().unwrap_or(0);
    for t in 0..longest {
        let (rows, inputs): (Vec<usize>, Vec<u32>) = seqs
            .iter()
            .enumerate()
            .filter(|(_, s)| s.len() > t + 1)
            .map(|(r, s)| (r, s[t]))
            .unzip();
        if rows.is_empty() {
            break;
        }
        ranker.feed(&mut state, &rows, &inputs)?;
        let scores = ranker.score_rows(&state, &rows);
        for (k, &r) in rows.iter().enumerate() {
            tally.record(rank_of_target(scores.row(k), seqs[r][t + 1] as usize)?);
        }
    }
    Ok(tally)
}

/// Session-parallel evaluation of pre-mapped test sessions (see
/// [`ItemMap::map_sessions`]), parallel across chunks of sessions.
pub fn evaluate_sessions<R: Ranker>(
    ranker: &R,
    sessions: &[Vec<Option<u32>>],
    config: &EvalConfig,
) -> Result<EvalResult, EvalError> {
    config.validate()?;
    if sessions.iter().all(Vec::is_empty) {
        return Err(EvalError::EmptyTest);
    }
    let max_cutoff = config.max_cutoff();
    let tally = sessions
        .par_chunks(config.batch_size)
        .map(|chunk| tally_chunk(ranker, chunk, max_cutoff))
        .try_reduce(|| RankTally::new(max_cutoff), |a, b| Ok(a.merge(b)))?;
    Ok(tally.finish(&config.cutoffs))
}

/// Evaluates a model against a test log using the model's vocabulary.
pub fn evaluate<F: Real>(
    model: &Gru4Rec<F>,
    test: &EventLog,
    item_map: &ItemMap,
    config: &EvalConfig,
) -> Result<EvalResult, EvalError> {
    if model.n_items() != item_map.len() {
        return Err(EvalError::VocabularyMismatch {
            model: model.n_items(),
            map: item_map.len(),
        });
    }
    if test.is_empty() {
        return Err(EvalError::EmptyTest);
    }
    evaluate_sessions(model, &item_map.map_sessions(test), config)
}

/// Rank via a full descending sort: position of the first item whose score
/// equals the target's.
fn argsort_rank<F: Real>(scores: &[F], target: usize) -> usize {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap());
    let t = scores[target];
    order.iter().position(|&i| scores[i] == t).unwrap() + 1
}

/// Reference evaluator: for every target, a fresh single-session replay of
/// the whole known prefix, then a full sort. Slow; for cross-checking.
pub fn evaluate_naive<R: Ranker>(
    ranker: &R,
    sessions: &[Vec<Option<u32>>],
    config: &EvalConfig,
) -> Result<EvalResult, EvalError> {
    config.validate()?;
    let mut tally = RankTally::new(config.max_cutoff());
    for s in sessions {
        let (items, skipped) = known(s);
        tally.total += s.len() as u64;
        tally.skipped += skipped;
        if items.is_empty() {
            continue;
        }
        tally.starts += 1;
        for t in 1..items.len() {
            let mut state = ranker.init_state(1);
            for &i in &items[..t] {
                ranker.feed(&mut state, &[0], &[i])?;
            }
            let scores = ranker.score_rows(&state, &[0]);
            if !scores.all_finite() {
                return Err(EvalError::NonFiniteScore { item: 0 });
            }
            tally.record(argsort_rank(scores.row(0), items[t] as usize));
        }
    }
    if tally.total == 0 {
        return Err(EvalError::EmptyTest);
    }
    Ok(tally.finish(&config.cutoffs))
}

pub fn version_string() -> String {
    format!("v{}", env!("CARGO_PKG_VERSION"))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub version: String,
    pub ranker: String,
    pub config: EvalConfig,
    pub result: EvalResult,
}

/// Writes `<stem>.tsv` (cutoff, recall, mrr) and `<stem>.json` (full report).
pub fn write_report(report: &EvalReport, dir: &Path, stem: &str) -> Result<(), EvalError> {
    let io = |path: &Path| {
        let path = path.display().to_string();
        move |source| EvalError::Io { path, source }
    };
    let tsv = dir.join(format!("{stem}.tsv"));
    std::fs::write(&tsv, report.result.to_tsv()).map_err(io(&tsv))?;
    let json = dir.join(format!("{stem}.json"));
    let text = serde_json::to_string_pretty(report).expect("report serialises");
    std::fs::write(&json, text + "\n").map_err(io(&json))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{EmbeddingMode, ModelConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rank_examples() {
        assert_eq!(rank_of_target(&[0.9, 0.1, 0.5], 2).unwrap(), 2);
        assert_eq!(rank_of_target(&[0.3f32; 5], 4).unwrap(), 1);
        assert!(rank_of_target(&[f64::NAN, 0.1], 1).is_err());
        assert!(rank_of_target(&[0.1], 3).is_err());
    }

    #[test]
    fn rank_matches_argsort() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let v: Vec<f64> = (0..20).map(|_| rng.random_range(0..6) as f64).collect();
            let t = rng.random_range(0..20);
            assert_eq!(rank_of_target(&v, t).unwrap(), argsort_rank(&v, t));
        }
    }

    #[test]
    fn metric_arithmetic() {
        let mut t = RankTally::new(20);
        for r in [1, 3, 25] {
            t.record(r);
        }
        let m = t.finish(&[20]).metrics[0];
        assert!((m.recall - 2.0 / 3.0).abs() < 1e-12);
        assert!((m.mrr - (1.0 + 1.0 / 3.0) / 3.0).abs() < 1e-12);
    }

    /// Scores the item after the last fed one highest.
    struct Oracle(usize);

    impl Ranker for Oracle {
        type Score = f64;
        type State = Vec<u32>;
        fn n_items(&self) -> usize {
            self.0
        }
        fn init_state(&self, rows: usize) -> Vec<u32> {
            vec![0; rows]
        }
        fn feed(&self, s: &mut Vec<u32>, rows: &[usize], items: &[u32]) -> Result<(), EvalError> {
            for (&r, &i) in rows.iter().zip(items) {
                s[r] = i;
            }
            Ok(())
        }
        fn score_rows(&self, s: &Vec<u32>, rows: &[usize]) -> Matrix<f64> {
            Matrix::from_fn(rows.len(), self.0, |k, j| {
                if j == (s[rows[k]] as usize + 1) % self.0 {
                    1.0
                } else {
                    0.0
                }
            })
        }
    }

    #[test]
    fn perfect_ranker_scores_one() {
        let sessions = vec![vec![Some(0), Some(1), Some(2)], vec![Some(4), Some(0)]];
        let r = evaluate_sessions(&Oracle(5), &sessions, &EvalConfig::default()).unwrap();
        for m in &r.metrics {
            assert_eq!((m.recall, m.mrr), (1.0, 1.0));
        }
        assert_eq!(r.evaluated_events, 3);
    }

    #[test]
    fn unknown_items_are_skipped_and_accounted() {
        let sessions = vec![
            vec![Some(0), None, Some(1), Some(2)],
            vec![None, None],
            vec![None, Some(3), Some(4)],
        ];
        let r = evaluate_sessions(&Oracle(5), &sessions, &EvalConfig::default()).unwrap();
        assert_eq!(r.skipped_unknown, 4);
        assert_eq!(r.session_starts, 2);
        assert_eq!(r.evaluated_events, 3);
        assert_eq!(
            r.evaluated_events + r.skipped_unknown + r.session_starts,
            r.total_events
        );
        assert_eq!(r.at(1).unwrap().recall, 1.0);
    }

    #[test]
    fn popularity_order_and_full_recall() {
        let p = PopularityRanker::new(&[5, 3, 1]);
        assert_eq!(p.ranking(), vec![0, 1, 2]);
        let sessions = vec![vec![Some(2), Some(1), Some(2), Some(0)]];
        let cfg = EvalConfig {
            cutoffs: vec![1, 3],
            batch_size: 4,
        };
        let r = evaluate_sessions(&p, &sessions, &cfg).unwrap();
        assert_eq!(r.at(3).unwrap().recall, 1.0);
        assert!((r.at(1).unwrap().recall - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn batched_equals_naive_on_random_model() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let v = 40;
        let model = Gru4Rec::<f32>::init(
            ModelConfig {
                n_items: v,
                layers: vec![12, 8],
                embedding: EmbeddingMode::Shared,
            },
            &mut rng,
        )
        .unwrap();
        let mut sessions = Vec::new();
        let mut events = 0;
        while events < 200 {
            let len = rng.random_range(1..9);
            events += len;
            sessions.push(
                (0..len)
                    .map(|_| (rng.random::<f64>() > 0.1).then(|| rng.random_range(0..v as u32)))
                    .collect(),
            );
        }
        for bs in [1, 3, 64] {
            let cfg = EvalConfig {
                batch_size: bs,
                ..EvalConfig::default()
            };
            let a = evaluate_sessions(&model, &sessions, &cfg).unwrap();
            let b = evaluate_naive(&model, &sessions, &cfg).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn config_validation() {
        let bad = EvalConfig {
            cutoffs: vec![5, 1],
            batch_size: 1,
        };
        assert!(bad.validate().is_err());
        assert!(evaluate_sessions(&Oracle(2), &[], &EvalConfig::default()).is_err());
    }
}
