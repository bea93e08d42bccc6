//! Clickstream ingestion and the session preprocessing pipeline.
//!
//! Raw exports are read through an [`Adapter`], reduced to
//! `(session, item, time)` triples, optionally re-sessionized by inactivity
//! gap, stripped of consecutive repeats, filtered to a support fixed point and
//! finally split by time into train and test logs.

mod adapters;
mod tsv;

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use adapters::{load_events, Adapter, LoadOptions, LoadReport};
pub use tsv::{read_canonical_tsv, write_canonical_tsv, CANONICAL_HEADER};

pub const SECONDS_PER_DAY: f64 = 86_400.0;
pub const DEFAULT_GAP_SECONDS: f64 = 3_600.0;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("unknown dataset adapter `{0}`")]
    UnknownAdapter(String),
    #[error("{path}:{line}: {message}")]
    Malformed {
        path: PathBuf,
        line: u64,
        message: String,
    },
    #[error("{path}: missing column `{column}`")]
    MissingColumn { path: PathBuf, column: String },
    #[error("no input files given")]
    NoInput,
}

/// One interaction. `item` indexes into the owning log's [`ItemLabels`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Event {
    pub session_id: u64,
    pub item: u32,
    pub time: f64,
}

/// Interned external item identifiers.
#[derive(Debug, Default, Clone)]
pub struct ItemLabels {
    labels: Vec<String>,
    index: HashMap<String, u32>,
}

impl ItemLabels {
    pub fn intern(&mut self, label: &str) -> u32 {
        if let Some(&i) = self.index.get(label) {
            return i;
        }
        let i = self.labels.len() as u32;
        self.labels.push(label.to_owned());
        self.index.insert(label.to_owned(), i);
        i
    }

    pub fn label(&self, item: u32) -> &str {
        &self.labels[item as usize]
    }

    pub fn lookup(&self, label: &str) -> Option<u32> {
        self.index.get(label).copied()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub dataset: String,
    pub steps: Vec<String>,
}

/// An ordered list of events sharing one item label table.
#[derive(Debug, Clone)]
pub struct EventLog {
    events: Vec<Event>,
    items: Arc<ItemLabels>,
    pub provenance: Provenance,
}

impl EventLog {
    /// Builds a log and sorts it canonically by `(session_id, time)`; ties keep input order.
    pub fn new(events: Vec<Event>, items: Arc<ItemLabels>, dataset: &str) -> Self {
        let mut log = EventLog {
            events,
            items,
            provenance: Provenance {
                dataset: dataset.to_owned(),
                steps: vec!["load".into()],
            },
        };
        log.sort_canonical();
        log
    }

    /// Convenience constructor from `(session, item label, time)` triples.
    pub fn from_triples<S: AsRef<str>>(rows: impl IntoIterator<Item = (u64, S, f64)>) -> Self {
        let mut labels = ItemLabels::default();
        let events = rows
            .into_iter()
            .map(|(s, i, t)| Event {
                session_id: s,
                item: labels.intern(i.as_ref()),
                time: t,
            })
            .collect();
        EventLog::new(events, Arc::new(labels), "inline")
    }

    fn derived(&self, events: Vec<Event>, step: &str) -> EventLog {
        let mut provenance = self.provenance.clone();
        provenance.steps.push(step.to_owned());
        EventLog {
            events,
            items: Arc::clone(&self.items),
            provenance,
        }
    }

    fn sort_canonical(&mut self) {
        self.events.sort_by(|a, b| {
            a.session_id
                .cmp(&b.session_id)
                .then(a.time.total_cmp(&b.time))
        });
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn items(&self) -> &Arc<ItemLabels> {
        &self.items
    }

    pub fn item_label(&self, e: &Event) -> &str {
        self.items.label(e.item)
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Contiguous runs of equal `session_id`.
    pub fn sessions(&self) -> impl Iterator<Item = &[Event]> {
        self.events.chunk_by(|a, b| a.session_id == b.session_id)
    }

    pub fn n_sessions(&self) -> usize {
        self.sessions().count()
    }

    /// Number of distinct items that actually occur in the log.
    pub fn n_distinct_items(&self) -> usize {
        let mut seen = vec![false; self.items.len()];
        let mut n = 0;
        for e in &self.events {
            if !seen[e.item as usize] {
                seen[e.item as usize] = true;
                n += 1;
            }
        }
        n
    }

    pub fn time_range(&self) -> Option<(f64, f64)> {
        let mut it = self.events.iter().map(|e| e.time);
        let first = it.next()?;
        Some(it.fold((first, first), |(lo, hi), t| (lo.min(t), hi.max(t))))
    }

    pub fn item_supports(&self) -> Vec<u32> {
        let mut counts = vec![0u32; self.items.len()];
        for e in &self.events {
            counts[e.item as usize] += 1;
        }
        counts
    }
}

/// Splits each user's history into sessions wherever the gap to the previous
/// event is strictly greater than `gap_seconds`. The input `session_id` is the
/// user key; output sessions are numbered consecutively from zero.
pub fn sessionize(log: &EventLog, gap_seconds: f64) -> EventLog {
    assert!(gap_seconds > 0.0, "gap_seconds must be positive");
    let mut out = Vec::with_capacity(log.len());
    let mut next_id = 0u64;
    for user in log.sessions() {
        let mut prev: Option<f64> = None;
        for e in user {
            if let Some(p) = prev {
                if e.time - p > gap_seconds {
                    next_id += 1;
                }
            }
            out.push(Event {
                session_id: next_id,
                ..*e
            });
            prev = Some(e.time);
        }
        next_id += 1;
    }
    log.derived(out, "sessionize")
}

/// Keeps only the first event of every run of identical items within a session.
pub fn dedup_consecutive(log: &EventLog) -> EventLog {
    let mut out: Vec<Event> = Vec::with_capacity(log.len());
    for e in log.events() {
        if let Some(last) = out.last() {
            if last.session_id == e.session_id && last.item == e.item {
                continue;
            }
        }
        out.push(*e);
    }
    log.derived(out, "dedup_consecutive")
}

/// Alternately drops under-supported items and short sessions until neither
/// filter removes anything.
pub fn iterative_support_filter(
    log: &EventLog,
    min_session_len: usize,
    min_item_support: usize,
) -> EventLog {
    let mut events = log.events().to_vec();
    let n_labels = log.items().len();
    loop {
        let before = events.len();

        let mut support = vec![0usize; n_labels];
        for e in &events {
            support[e.item as usize] += 1;
        }
        events.retain(|e| support[e.item as usize] >= min_item_support);

        let mut kept = Vec::with_capacity(events.len());
        for session in events.chunk_by(|a, b| a.session_id == b.session_id) {
            if session.len() >= min_session_len {
                kept.extend_from_slice(session);
            }
        }
        events = kept;

        if events.len() == before {
            break;
        }
    }
    log.derived(events, "iterative_support_filter")
}

/// Time-based split point: `test_window_days` before the last event.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub split_time: f64,
    pub test_window_days: u32,
}

impl SplitSpec {
    pub fn before_last_event(log: &EventLog, test_window_days: u32) -> Option<SplitSpec> {
        let (_, last) = log.time_range()?;
        Some(SplitSpec {
            split_time: last - f64::from(test_window_days) * SECONDS_PER_DAY,
            test_window_days,
        })
    }
}

/// Test gets whole sessions starting after the split; train keeps events at or
/// before it, truncating straddling sessions and dropping any left with one event.
pub fn time_split(log: &EventLog, spec: SplitSpec) -> (EventLog, EventLog) {
    let mut train = Vec::new();
    let mut test = Vec::new();
    for session in log.sessions() {
        let start = session.iter().map(|e| e.time).fold(f64::INFINITY, f64::min);
        if start > spec.split_time {
            test.extend_from_slice(session);
        } else {
            let head: Vec<Event> = session
                .iter()
                .filter(|e| e.time <= spec.split_time)
                .copied()
                .collect();
            if head.len() >= 2 {
                train.extend(head);
            }
        }
    }
    if train.is_empty() || test.is_empty() {
        log::warn!(
            "split at {} leaves the {} side empty",
            spec.split_time,
            if train.is_empty() { "train" } else { "test" }
        );
    }
    (
        log.derived(train, "time_split:train"),
        log.derived(test, "time_split:test"),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub gap_seconds: f64,
    pub test_days: u32,
    pub min_session_len: usize,
    pub min_item_support: usize,
}

impl PipelineConfig {
    pub fn for_adapter(adapter: Adapter) -> Self {
        PipelineConfig {
            gap_seconds: DEFAULT_GAP_SECONDS,
            test_days: adapter.default_test_days(),
            min_session_len: 2,
            min_item_support: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitStats {
    pub events: usize,
    pub sessions: usize,
    pub days: u64,
    pub events_per_session: f64,
}

impl SplitStats {
    pub fn of(log: &EventLog) -> Self {
        let sessions = log.n_sessions();
        let days = log
            .time_range()
            .map(|(lo, hi)| ((hi - lo) / SECONDS_PER_DAY).ceil() as u64)
            .unwrap_or(0);
        SplitStats {
            events: log.len(),
            sessions,
            days,
            events_per_session: if sessions == 0 {
                0.0
            } else {
                (log.len() as f64 / sessions as f64 * 100.0).round() / 100.0
            },
        }
    }
}

/// Counts comparable to the published dataset table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub dataset: String,
    pub split_time: f64,
    pub train: SplitStats,
    pub test: SplitStats,
    /// Distinct items in the training split.
    pub items: usize,
}

pub struct Preprocessed {
    pub train: EventLog,
    pub test: EventLog,
    pub stats: DatasetStats,
}

/// Runs every step after loading: optional sessionization, repeat removal,
/// support filtering and the time split.
pub fn run_pipeline(loaded: &EventLog, adapter: Adapter, cfg: &PipelineConfig) -> Preprocessed {
    let sessioned = if adapter.recompute_sessions() {
        sessionize(loaded, cfg.gap_seconds)
    } else {
        loaded.clone()
    };
    let deduped = dedup_consecutive(&sessioned);
    let filtered = iterative_support_filter(&deduped, cfg.min_session_len, cfg.min_item_support);
    let spec = SplitSpec::before_last_event(&filtered, cfg.test_days).unwrap_or(SplitSpec {
        split_time: 0.0,
        test_window_days: cfg.test_days,
    });
    let (train, test) = time_split(&filtered, spec);
    let stats = DatasetStats {
        dataset: adapter.name().to_owned(),
        split_time: spec.split_time,
        train: SplitStats::of(&train),
        test: SplitStats::of(&test),
        items: train.n_distinct_items(),
    };
    Preprocessed { train, test, stats }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn items_of(log: &EventLog) -> Vec<Vec<String>> {
        log.sessions()
            .map(|s| s.iter().map(|e| log.item_label(e).to_owned()).collect())
            .collect()
    }

    #[test]
    fn canonical_sort_by_session_then_time() {
        let log = EventLog::from_triples([(2, "c", 5.0), (1, "b", 10.0), (1, "a", 0.0)]);
        let got: Vec<_> = log.events().iter().map(|e| (e.session_id, e.time)).collect();
        assert_eq!(got, vec![(1, 0.0), (1, 10.0), (2, 5.0)]);
    }

    #[test]
    fn equal_times_keep_input_order() {
        let log = EventLog::from_triples([(1, "x", 3.0), (1, "y", 3.0), (1, "z", 1.0)]);
        assert_eq!(items_of(&log), vec![vec!["z", "x", "y"]]);
    }

    #[test]
    fn sessionize_splits_on_gap() {
        let log = EventLog::from_triples([(7, "a", 0.0), (7, "b", 1800.0), (7, "c", 7200.0)]);
        let s = sessionize(&log, 3600.0);
        assert_eq!(items_of(&s), vec![vec!["a", "b"], vec!["c"]]);
    }

    #[test]
    fn sessionize_gap_boundary_is_strict() {
        let log = EventLog::from_triples([(7, "a", 0.0), (7, "b", 3600.0)]);
        assert_eq!(sessionize(&log, 3600.0).n_sessions(), 1);
        let log = EventLog::from_triples([(7, "a", 0.0), (7, "b", 3600.5)]);
        assert_eq!(sessionize(&log, 3600.0).n_sessions(), 2);
    }

    #[test]
    fn sessionize_keeps_users_apart_and_empty_is_empty() {
        let log = EventLog::from_triples([(1, "a", 0.0), (2, "b", 1.0)]);
        assert_eq!(sessionize(&log, 3600.0).n_sessions(), 2);
        let empty = EventLog::from_triples(Vec::<(u64, &str, f64)>::new());
        assert!(sessionize(&empty, 10.0).is_empty());
    }

    #[test]
    fn dedup_examples() {
        let run = |xs: &[&str]| {
            let log = EventLog::from_triples(
                xs.iter().enumerate().map(|(t, i)| (0u64, *i, t as f64)),
            );
            items_of(&dedup_consecutive(&log)).remove(0)
        };
        assert_eq!(run(&["i", "i", "j"]), vec!["i", "j"]);
        assert_eq!(run(&["i", "j", "i"]), vec!["i", "j", "i"]);
        assert_eq!(run(&["i", "i", "i", "i"]), vec!["i"]);
    }

    #[test]
    fn dedup_does_not_merge_across_sessions() {
        let log = EventLog::from_triples([(0, "i", 0.0), (1, "i", 1.0)]);
        assert_eq!(dedup_consecutive(&log).len(), 2);
    }

    #[test]
    fn support_filter_cascades_to_empty() {
        let log = EventLog::from_triples([
            (0, "a", 0.0),
            (0, "b", 1.0),
            (1, "a", 2.0),
            (1, "c", 3.0),
        ]);
        assert!(iterative_support_filter(&log, 2, 2).is_empty());
    }

    #[test]
    fn support_filter_fixed_point_is_identity() {
        let log = EventLog::from_triples([
            (0, "a", 0.0),
            (0, "b", 1.0),
            (1, "a", 2.0),
            (1, "b", 3.0),
        ]);
        let out = iterative_support_filter(&log, 2, 2);
        assert_eq!(out.events(), log.events());
    }

    #[test]
    fn split_truncates_and_drops_singletons() {
        // session 0 straddles with one pre-split event; session 1 is fully before.
        let log = EventLog::from_triples([
            (0, "a", 90.0),
            (0, "b", 110.0),
            (0, "c", 120.0),
            (1, "a", 10.0),
            (1, "b", 20.0),
            (2, "c", 150.0),
            (2, "a", 160.0),
        ]);
        let spec = SplitSpec {
            split_time: 100.0,
            test_window_days: 0,
        };
        let (train, test) = time_split(&log, spec);
        assert_eq!(items_of(&train), vec![vec!["a", "b"]]);
        assert_eq!(items_of(&test), vec![vec!["c", "a"]]);
        // session 0 is in neither
        assert!(train.events().iter().all(|e| e.session_id == 1));
    }

    #[test]
    fn split_event_at_split_time_goes_to_train() {
        let log = EventLog::from_triples([(0, "a", 50.0), (0, "b", 100.0)]);
        let (train, test) = time_split(
            &log,
            SplitSpec {
                split_time: 100.0,
                test_window_days: 0,
            },
        );
        assert_eq!(train.len(), 2);
        assert!(test.is_empty());
    }

    #[test]
    fn split_spec_from_last_event() {
        let log = EventLog::from_triples([(0, "a", 0.0), (0, "b", 10.0 * SECONDS_PER_DAY)]);
        let spec = SplitSpec::before_last_event(&log, 7).unwrap();
        assert_eq!(spec.split_time, 3.0 * SECONDS_PER_DAY);
    }
}
