use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use chrono::{DateTime, NaiveDate, NaiveDateTime};

use super::{DatasetError, Event, EventLog, ItemLabels};

/// Raw export formats understood by [`load_events`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Adapter {
    /// RecSys Challenge 2015 `yoochoose-clicks.dat` (no header, comma separated).
    Yoochoose,
    /// Multi-category store monthly CSVs; view events, sessions rebuilt per user.
    Rees46,
    /// SIGIR eCom 2021 `browsing_train.csv`; detail events.
    Coveo,
    /// `events.csv`; view events, sessions rebuilt per visitor.
    RetailRocket,
    /// CIKM Cup 2016 `train-item-views.csv` (semicolon separated).
    Diginetica,
    /// Headered TSV with `SessionId`, `ItemId`, `Time` columns.
    GenericTsv,
}

impl Adapter {
    pub const ALL: [Adapter; 6] = [
        Adapter::Yoochoose,
        Adapter::Rees46,
        Adapter::Coveo,
        Adapter::RetailRocket,
        Adapter::Diginetica,
        Adapter::GenericTsv,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Adapter::Yoochoose => "yoochoose",
            Adapter::Rees46 => "rees46",
            Adapter::Coveo => "coveo",
            Adapter::RetailRocket => "retailrocket",
            Adapter::Diginetica => "diginetica",
            Adapter::GenericTsv => "generic-tsv",
        }
    }

    /// Sessions are rebuilt from user histories rather than taken from the file.
    pub fn recompute_sessions(self) -> bool {
        matches!(self, Adapter::Rees46 | Adapter::RetailRocket)
    }

    pub fn default_test_days(self) -> u32 {
        match self {
            Adapter::RetailRocket | Adapter::Diginetica => 7,
            _ => 1,
        }
    }
}

impl fmt::Display for Adapter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Adapter {
    type Err = DatasetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Adapter::ALL
            .into_iter()
            .find(|a| a.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| DatasetError::UnknownAdapter(s.to_owned()))
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LoadOptions {
    /// Abort on the first malformed row instead of skipping it.
    pub strict: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LoadReport {
    pub rows_read: u64,
    /// Rows dropped by the event-type filter.
    pub rows_filtered: u64,
    pub rows_malformed: u64,
}

/// Reads one or more raw files (e.g. the two monthly Rees46 exports) into a
/// canonically sorted log. For adapters that rebuild sessions, `session_id`
/// holds the user key until [`super::sessionize`] runs.
pub fn load_events(
    paths: &[PathBuf],
    adapter: Adapter,
    opts: LoadOptions,
) -> Result<(EventLog, LoadReport), DatasetError> {
    if paths.is_empty() {
        return Err(DatasetError::NoInput);
    }
    let mut sink = Sink::default();
    for path in paths {
        let file = File::open(path).map_err(|source| DatasetError::Io {
            path: path.clone(),
            source,
        })?;
        let reader = BufReader::with_capacity(1 << 20, file);
        let (delim, has_headers) = match adapter {
            Adapter::Yoochoose => (b',', false),
            Adapter::Diginetica => (b';', true),
            Adapter::GenericTsv => (b'\t', true),
            _ => (b',', true),
        };
        let mut rdr = csv::ReaderBuilder::new()
            .delimiter(delim)
            .has_headers(has_headers)
            .flexible(true)
            .from_reader(reader);
        let columns = if has_headers {
            let headers = rdr.headers().map_err(|e| csv_err(path, 1, e))?.clone();
            Some(Columns::new(path, &headers, adapter)?)
        } else {
            None
        };
        let mut record = csv::StringRecord::new();
        loop {
            let line = rdr.position().line();
            match rdr.read_record(&mut record) {
                Ok(false) => break,
                Ok(true) => {}
                Err(e) => {
                    sink.malformed(opts, csv_err(path, line, e))?;
                    continue;
                }
            }
            sink.report.rows_read += 1;
            match parse_row(adapter, columns.as_ref(), &record, &mut sink) {
                Ok(Some(ev)) => sink.events.push(ev),
                Ok(None) => sink.report.rows_filtered += 1,
                Err(message) => sink.malformed(
                    opts,
                    DatasetError::Malformed {
                        path: path.clone(),
                        line,
                        message,
                    },
                )?,
            }
        }
    }
    let Sink {
        events,
        labels,
        report,
        ..
    } = sink;
    Ok((EventLog::new(events, Arc::new(labels), adapter.name()), report))
}

fn csv_err(path: &Path, line: u64, e: csv::Error) -> DatasetError {
    DatasetError::Malformed {
        path: path.to_owned(),
        line,
        message: e.to_string(),
    }
}

const INTERNED_SESSION_BASE: u64 = 1 << 63;

#[derive(Default)]
struct Sink {
    events: Vec<Event>,
    labels: ItemLabels,
    sessions: HashMap<String, u64>,
    report: LoadReport,
}

impl Sink {
    fn malformed(&mut self, opts: LoadOptions, err: DatasetError) -> Result<(), DatasetError> {
        if opts.strict {
            return Err(err);
        }
        log::warn!("skipping row: {err}");
        self.report.rows_malformed += 1;
        Ok(())
    }

    fn session_key(&mut self, raw: &str) -> u64 {
        let next = self.sessions.len() as u64;
        *self.sessions.entry(raw.to_owned()).or_insert(next)
    }
}

struct Columns {
    session: usize,
    item: usize,
    time: usize,
    kind: Option<usize>,
    extra: Option<usize>,
}

impl Columns {
    fn new(path: &Path, headers: &csv::StringRecord, adapter: Adapter) -> Result<Self, DatasetError> {
        let find = |name: &str| {
            headers
                .iter()
                .position(|h| h.trim().trim_start_matches('\u{feff}') == name)
                .ok_or_else(|| DatasetError::MissingColumn {
                    path: path.to_owned(),
                    column: name.to_owned(),
                })
        };
        Ok(match adapter {
            Adapter::Rees46 => Columns {
                session: find("user_id")?,
                item: find("product_id")?,
                time: find("event_time")?,
                kind: Some(find("event_type")?),
                extra: None,
            },
            Adapter::Coveo => Columns {
                session: find("session_id_hash")?,
                item: find("product_sku_hash")?,
                time: find("server_timestamp_epoch_ms")?,
                kind: Some(find("product_action")?),
                extra: None,
            },
            Adapter::RetailRocket => Columns {
                session: find("visitorid")?,
                item: find("itemid")?,
                time: find("timestamp")?,
                kind: Some(find("event")?),
                extra: None,
            },
            Adapter::Diginetica => Columns {
                session: find("sessionId")?,
                item: find("itemId")?,
                time: find("eventdate")?,
                kind: None,
                extra: Some(find("timeframe")?),
            },
            Adapter::GenericTsv => Columns {
                session: find("SessionId")?,
                item: find("ItemId")?,
                time: find("Time")?,
                kind: None,
                extra: None,
            },
            Adapter::Yoochoose => unreachable!("yoochoose has no header"),
        })
    }
}

fn field(rec: &csv::StringRecord, i: usize) -> Result<&str, String> {
    rec.get(i)
        .map(str::trim)
        .ok_or_else(|| format!("missing field {}", i + 1))
}

fn parse_u64(s: &str) -> Result<u64, String> {
    s.parse().map_err(|_| format!("expected integer, got `{s}`"))
}

fn parse_f64(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("expected number, got `{s}`"))?;
    if !v.is_finite() || v < 0.0 {
        return Err(format!("time must be finite and non-negative, got `{s}`"));
    }
    Ok(v)
}

fn nonempty(s: &str) -> Result<&str, String> {
    if s.is_empty() {
        Err("empty item id".into())
    } else {
        Ok(s)
    }
}

fn parse_row(
    adapter: Adapter,
    cols: Option<&Columns>,
    rec: &csv::StringRecord,
    sink: &mut Sink,
) -> Result<Option<Event>, String> {
    let event = |sink: &mut Sink, session_id: u64, item: &str, time: f64| {
        let item = sink.labels.intern(item);
        Event {
            session_id,
            item,
            time,
        }
    };
    if adapter == Adapter::Yoochoose {
        let session = parse_u64(field(rec, 0)?)?;
        let time = parse_iso_seconds(field(rec, 1)?)?;
        let item = nonempty(field(rec, 2)?)?;
        return Ok(Some(event(sink, session, item, time)));
    }
    let c = cols.expect("headered adapters carry a column map");
    if let Some(k) = c.kind {
        let kind = field(rec, k)?;
        let keep = match adapter {
            Adapter::Rees46 | Adapter::RetailRocket => kind == "view",
            Adapter::Coveo => kind == "detail",
            _ => true,
        };
        if !keep {
            return Ok(None);
        }
    }
    let raw_session = field(rec, c.session)?;
    let item = nonempty(field(rec, c.item)?)?;
    let raw_time = field(rec, c.time)?;
    let (session, time) = match adapter {
        Adapter::Rees46 => (parse_u64(raw_session)?, parse_utc_seconds(raw_time)?),
        Adapter::Coveo => (sink.session_key(raw_session), parse_f64(raw_time)? / 1000.0),
        Adapter::RetailRocket => (parse_u64(raw_session)?, parse_f64(raw_time)? / 1000.0),
        Adapter::Diginetica => {
            // Virtual timestamp: midnight of the query day plus the elapsed milliseconds.
            let day = NaiveDate::parse_from_str(raw_time, "%Y-%m-%d")
                .map_err(|e| format!("bad eventdate `{raw_time}`: {e}"))?;
            let midnight = day.and_hms_opt(0, 0, 0).unwrap().and_utc().timestamp() as f64;
            let elapsed = parse_f64(field(rec, c.extra.unwrap())?)? / 1000.0;
            (parse_u64(raw_session)?, midnight + elapsed)
        }
        Adapter::GenericTsv => {
            // Numeric ids are kept verbatim so canonical files round-trip;
            // anything else is interned into the upper half of the id space.
            let session = match raw_session.parse::<u64>() {
                Ok(v) if v < INTERNED_SESSION_BASE => v,
                _ => INTERNED_SESSION_BASE | sink.session_key(raw_session),
            };
            (session, parse_f64(raw_time)?)
        }
        Adapter::Yoochoose => unreachable!(),
    };
    Ok(Some(event(sink, session, item, time)))
}

fn parse_iso_seconds(s: &str) -> Result<f64, String> {
    let dt = DateTime::parse_from_rfc3339(s).map_err(|e| format!("bad timestamp `{s}`: {e}"))?;
    Ok(dt.timestamp() as f64 + f64::from(dt.timestamp_subsec_millis()) / 1000.0)
}

fn parse_utc_seconds(s: &str) -> Result<f64, String> {
    let trimmed = s.trim_end_matches(" UTC");
    let dt = NaiveDateTime::parse_from_str(trimmed, "%Y-%m-%d %H:%M:%S")
        .map_err(|e| format!("bad timestamp `{s}`: {e}"))?;
    Ok(dt.and_utc().timestamp() as f64)
}
