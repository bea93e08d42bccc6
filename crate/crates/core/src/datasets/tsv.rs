//! The interchange format between pipeline stages: a headered TSV with
//! `SessionId`, `ItemId` and `Time` (decimal seconds) columns.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use super::{load_events, Adapter, DatasetError, EventLog, LoadOptions};

pub const CANONICAL_HEADER: &str = "SessionId\tItemId\tTime";

pub fn write_canonical_tsv(log: &EventLog, path: &Path) -> Result<(), DatasetError> {
    let io = |source| DatasetError::Io {
        path: path.to_owned(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    writeln!(w, "{CANONICAL_HEADER}").map_err(io)?;
    for e in log.events() {
        writeln!(w, "{}\t{}\t{}", e.session_id, log.item_label(e), e.time).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Reads a canonical TSV strictly: any malformed row is an error.
pub fn read_canonical_tsv(path: &Path) -> Result<EventLog, DatasetError> {
    let (log, _) = load_events(
        &[PathBuf::from(path)],
        Adapter::GenericTsv,
        LoadOptions { strict: true },
    )?;
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn written_file_reads_back_and_is_stable() {
        let log = EventLog::from_triples([(3, "a", 0.5), (3, "b", 10.25), (17, "c", 3.0)]);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.tsv");
        write_canonical_tsv(&log, &p).unwrap();
        let first = std::fs::read(&p).unwrap();
        assert!(first.starts_with(b"SessionId\tItemId\tTime\n3\ta\t0.5\n"));

        let back = read_canonical_tsv(&p).unwrap();
        let q = dir.path().join("y.tsv");
        write_canonical_tsv(&back, &q).unwrap();
        assert_eq!(first, std::fs::read(&q).unwrap());
    }
}
