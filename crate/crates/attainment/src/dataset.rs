//! Line-oriented trial-dataset persistence.
//!
//! The file is UTF-8 JSON lines: a single header object
//! `{"schema":"attainment-v1","bounds":{...}}` followed by one record per
//! line `{"x":[ice,angle,kp,ki,kd],"y":0|1,"seed":<int>,"source":"simulated"}`.
//! Appendable, diffable and language-neutral; numeric fields round-trip
//! bit-exactly.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::domain::{DomainBounds, FeatureParameterPoint, TrialRecord, TrialSource, DIMS};
use crate::error::{Error, Result};

pub const DATASET_SCHEMA: &str = "attainment-v1";

#[derive(Serialize, Deserialize)]
struct Header {
    schema: String,
    bounds: DomainBounds,
}

#[derive(Serialize, Deserialize)]
struct RecordLine {
    x: [f64; DIMS],
    y: u8,
    seed: u64,
    source: TrialSource,
}

/// Writes the header plus one line per record. An empty dataset produces a
/// header-only file.
pub fn save_dataset(records: &[TrialRecord], bounds: &DomainBounds, path: &Path) -> Result<()> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    write_dataset(records, bounds, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn write_dataset(
    records: &[TrialRecord],
    bounds: &DomainBounds,
    w: &mut impl Write,
) -> Result<()> {
    let header = Header {
        schema: DATASET_SCHEMA.to_string(),
        bounds: bounds.clone(),
    };
    serde_json::to_writer(&mut *w, &header).map_err(io_from_json)?;
    w.write_all(b"\n")?;
    for r in records {
        let line = RecordLine {
            x: r.x.to_array(),
            y: r.y,
            seed: r.seed,
            source: r.source,
        };
        serde_json::to_writer(&mut *w, &line).map_err(io_from_json)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Loads a dataset, returning the records and the bounds stored in the
/// header. Fails with the 1-based line number on any malformed line and with
/// a schema error if the header version is unknown.
pub fn load_dataset(path: &Path) -> Result<(Vec<TrialRecord>, DomainBounds)> {
    let file = File::open(path)?;
    read_dataset(BufReader::new(file))
}

pub fn read_dataset(r: impl Read) -> Result<(Vec<TrialRecord>, DomainBounds)> {
    let mut lines = BufReader::new(r).lines();
    let header_line = match lines.next() {
        Some(l) => l?,
        None => {
            return Err(Error::Parse {
                line: 1,
                message: "missing header line".to_string(),
            })
        }
    };
    let header: Header = serde_json::from_str(&header_line).map_err(|e| Error::Parse {
        line: 1,
        message: e.to_string(),
    })?;
    if header.schema != DATASET_SCHEMA {
        return Err(Error::SchemaMismatch {
            expected: DATASET_SCHEMA.to_string(),
            found: header.schema,
        });
    }

    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RecordLine = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let x = FeatureParameterPoint::from_array(raw.x).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let record = TrialRecord::new(x, raw.y, raw.seed, raw.source).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        records.push(record);
    }
    Ok((records, header.bounds))
}

fn io_from_json(e: serde_json::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}
