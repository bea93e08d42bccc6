//! Indexed training data: dense item vocabulary, supports, flattened sessions,
//! the session-parallel batch iterator and the popularity-skewed sampler.

mod iter;
mod sampler;

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use thiserror::Error;

use crate::datasets::EventLog;

pub use iter::{MiniBatch, SessionParallelIter};
pub use sampler::{NegativeSampler, DEFAULT_SAMPLE_CACHE};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("training log is empty")]
    Empty,
    #[error("session {session} has {len} event(s); training sessions need at least 2")]
    ShortSession { session: u64, len: usize },
    #[error("item map {path}: {message}")]
    ItemMap { path: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// External item id ↔ dense index in `[0, V)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ItemMap {
    labels: Vec<String>,
    index: HashMap<String, u32>,
}

impl ItemMap {
    pub fn from_labels(labels: Vec<String>) -> Result<Self, CorpusError> {
        let mut index = HashMap::with_capacity(labels.len());
        for (i, l) in labels.iter().enumerate() {
            if index.insert(l.clone(), i as u32).is_some() {
                return Err(CorpusError::ItemMap {
                    path: String::new(),
                    message: format!("duplicate item id `{l}`"),
                });
            }
        }
        Ok(ItemMap { labels, index })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn index_of(&self, label: &str) -> Option<u32> {
        self.index.get(label).copied()
    }

    pub fn label(&self, index: u32) -> &str {
        &self.labels[index as usize]
    }

    /// Sessions of `log` in log order; unknown items become `None`.
    pub fn map_sessions(&self, log: &EventLog) -> Vec<Vec<Option<u32>>> {
        log.sessions()
            .map(|s| s.iter().map(|e| self.index_of(log.item_label(e))).collect())
            .collect()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// Two-column TSV: `external_id<TAB>index`, one row per item in index order.
    pub fn write_tsv(&self, path: &Path) -> Result<(), CorpusError> {
        let mut w = BufWriter::new(File::create(path)?);
        for (i, l) in self.labels.iter().enumerate() {
            writeln!(w, "{l}\t{i}")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_tsv(path: &Path) -> Result<Self, CorpusError> {
        let bad = |message: String| CorpusError::ItemMap {
            path: path.display().to_string(),
            message,
        };
        let mut labels = Vec::new();
        for (n, line) in BufReader::new(File::open(path)?).lines().enumerate() {
            let line = line?;
            let (label, idx) = line
                .split_once('\t')
                .ok_or_else(|| bad(format!("line {}: expected two columns", n + 1)))?;
            let idx: usize = idx
                .trim()
                .parse()
                .map_err(|_| bad(format!("line {}: bad index", n + 1)))?;
            if idx != labels.len() {
                return Err(bad(format!("line {}: indices must be dense and ordered", n + 1)));
            }
            labels.push(label.to_owned());
        }
        ItemMap::from_labels(labels)
    }
}

/// Finalised training data.
#[derive(Debug, Clone)]
pub struct SessionCorpus {
    item_map: ItemMap,
    supports: Vec<u64>,
    items: Vec<u32>,
    offsets: Vec<usize>,
}

impl SessionCorpus {
    /// Sessions are ordered by start time (ties by session id); item indices
    /// are assigned in order of first appearance in that order.
    pub fn build(train: &EventLog) -> Result<SessionCorpus, CorpusError> {
        if train.is_empty() {
            return Err(CorpusError::Empty);
        }
        let mut sessions: Vec<&[crate::datasets::Event]> = train.sessions().collect();
        sessions.sort_by(|a, b| {
            a[0].time
                .total_cmp(&b[0].time)
                .then(a[0].session_id.cmp(&b[0].session_id))
        });

        let mut remap: Vec<Option<u32>> = vec![None; train.items().len()];
        let mut labels = Vec::new();
        let mut supports = Vec::new();
        let mut items = Vec::with_capacity(train.len());
        let mut offsets = Vec::with_capacity(sessions.len() + 1);
        offsets.push(0);
        for s in sessions {
            if s.len() < 2 {
                return Err(CorpusError::ShortSession {
                    session: s[0].session_id,
                    len: s.len(),
                });
            }
            for e in s {
                let idx = *remap[e.item as usize].get_or_insert_with(|| {
                    labels.push(train.item_label(e).to_owned());
                    supports.push(0);
                    (labels.len() - 1) as u32
                });
                supports[idx as usize] += 1;
                items.push(idx);
            }
            offsets.push(items.len());
        }
        Ok(SessionCorpus {
            item_map: ItemMap::from_labels(labels)?,
            supports,
            items,
            offsets,
        })
    }

    /// Builds directly from index sequences; items get labels `"0"`, `"1"`, ...
    pub fn from_sessions(n_items: usize, sessions: &[Vec<u32>]) -> Result<SessionCorpus, CorpusError> {
        let mut supports = vec![0u64; n_items];
        let mut items = Vec::new();
        let mut offsets = vec![0];
        for (k, s) in sessions.iter().enumerate() {
            if s.len() < 2 {
                return Err(CorpusError::ShortSession {
                    session: k as u64,
                    len: s.len(),
                });
            }
            for &i in s {
                supports[i as usize] += 1;
            }
            items.extend_from_slice(s);
            offsets.push(items.len());
        }
        if items.is_empty() {
            return Err(CorpusError::Empty);
        }
        // Unseen items would break the sampler's strictly increasing weights.
        for s in supports.iter_mut() {
            *s = (*s).max(1);
        }
        Ok(SessionCorpus {
            item_map: ItemMap::from_labels((0..n_items).map(|i| i.to_string()).collect())?,
            supports,
            items,
            offsets,
        })
    }

    pub fn n_items(&self) -> usize {
        self.item_map.len()
    }

    pub fn n_sessions(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn n_events(&self) -> usize {
        self.items.len()
    }

    /// Number of (input, target) pairs per epoch.
    pub fn n_pairs(&self) -> usize {
        self.n_events() - self.n_sessions()
    }

    pub fn item_map(&self) -> &ItemMap {
        &self.item_map
    }

    pub fn supports(&self) -> &[u64] {
        &self.supports
    }

    pub fn session(&self, k: usize) -> &[u32] {
        &self.items[self.offsets[k]..self.offsets[k + 1]]
    }

    pub fn sessions(&self) -> impl Iterator<Item = &[u32]> {
        self.offsets.windows(2).map(|w| &self.items[w[0]..w[1]])
    }

    pub fn session_offsets(&self) -> &[usize] {
        &self.offsets
    }

    /// Session-parallel iterator over sessions in start-time order.
    pub fn batches(&self, batch_size: usize) -> SessionParallelIter<'_> {
        SessionParallelIter::new(self, batch_size, (0..self.n_sessions()).collect())
    }

    pub fn batches_in_order(&self, batch_size: usize, order: Vec<usize>) -> SessionParallelIter<'_> {
        SessionParallelIter::new(self, batch_size, order)
    }

    /// Maps a (test) log onto this vocabulary; unknown items become `None`.
    pub fn map_sessions(&self, log: &EventLog) -> Vec<Vec<Option<u32>>> {
        self.item_map.map_sessions(log)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_vocabulary_and_supports() {
        let log = EventLog::from_triples([
            (0, "x", 0.0),
            (0, "y", 1.0),
            (1, "y", 2.0),
            (1, "z", 3.0),
            (1, "x", 4.0),
        ]);
        let c = SessionCorpus::build(&log).unwrap();
        assert_eq!(c.n_items(), 3);
        let mut idx: Vec<u32> = ["x", "y", "z"]
            .iter()
            .map(|l| c.item_map().index_of(l).unwrap())
            .collect();
        idx.sort();
        assert_eq!(idx, vec![0, 1, 2]);
        assert_eq!(c.supports().iter().sum::<u64>() as usize, log.len());
        assert_eq!(c.n_pairs(), 3);
    }

    #[test]
    fn sessions_ordered_by_start_time() {
        let log = EventLog::from_triples([
            (0, "a", 50.0),
            (0, "b", 51.0),
            (1, "c", 10.0),
            (1, "d", 11.0),
        ]);
        let c = SessionCorpus::build(&log).unwrap();
        assert_eq!(c.item_map().label(c.session(0)[0]), "c");
        assert_eq!(c.item_map().label(c.session(1)[0]), "a");
    }

    #[test]
    fn rejects_empty_and_short() {
        let empty = EventLog::from_triples(Vec::<(u64, &str, f64)>::new());
        assert!(matches!(SessionCorpus::build(&empty), Err(CorpusError::Empty)));
        let short = EventLog::from_triples([(0, "a", 0.0)]);
        assert!(matches!(
            SessionCorpus::build(&short),
            Err(CorpusError::ShortSession { .. })
        ));
    }

    #[test]
    fn test_items_outside_vocabulary_are_unmapped() {
        let train = EventLog::from_triples([(0, "a", 0.0), (0, "b", 1.0)]);
        let test = EventLog::from_triples([(5, "b", 9.0), (5, "q", 10.0)]);
        let c = SessionCorpus::build(&train).unwrap();
        let mapped = c.map_sessions(&test);
        assert_eq!(mapped, vec![vec![c.item_map().index_of("b"), None]]);
    }

    #[test]
    fn item_map_tsv_round_trip() {
        let m = ItemMap::from_labels(vec!["p".into(), "q 1".into(), "r".into()]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("items.tsv");
        m.write_tsv(&p).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "p\t0\nq 1\t1\nr\t2\n");
        assert_eq!(ItemMap::read_tsv(&p).unwrap(), m);
    }
}
