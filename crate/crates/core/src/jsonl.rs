//! JSON Lines reading and writing (UTF-8, LF).

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum JsonlError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: {source}")]
    Parse {
        path: String,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
}

pub fn read_jsonl<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>, JsonlError> {
    let path = path.as_ref();
    let name = path.display().to_string();
    let file = File::open(path).map_err(|source| JsonlError::Io {
        path: name.clone(),
        source,
    })?;
    read_jsonl_from(BufReader::new(file), &name)
}

/// Blank lines are skipped.
pub fn read_jsonl_from<T: DeserializeOwned>(
    reader: impl BufRead,
    name: &str,
) -> Result<Vec<T>, JsonlError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| JsonlError::Io {
            path: name.to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|source| JsonlError::Parse {
            path: name.to_string(),
            line: i + 1,
            source,
        })?;
        out.push(value);
    }
    Ok(out)
}

pub fn write_jsonl<'a, T: Serialize + 'a>(
    path: impl AsRef<Path>,
    records: impl IntoIterator<Item = &'a T>,
) -> Result<(), JsonlError> {
    let path = path.as_ref();
    let io_err = |source| JsonlError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = File::create(path).map_err(io_err)?;
    let mut w = BufWriter::new(file);
    write_jsonl_to(&mut w, records).map_err(io_err)?;
    w.flush().map_err(io_err)
}

pub fn write_jsonl_to<'a, T: Serialize + 'a>(
    mut w: impl Write,
    records: impl IntoIterator<Item = &'a T>,
) -> io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Fact;

    #[test]
    fn round_trip_and_line_numbers() {
        let facts = vec![
            Fact {
                relation_id: "educated_at".into(),
                subject_entity_id: "Q937".into(),
                object_text: "University of Zürich".into(),
            },
            Fact {
                relation_id: "spouse".into(),
                subject_entity_id: "Q567".into(),
                object_text: "Joachim Sauer".into(),
            },
        ];
        let mut buf = Vec::new();
        write_jsonl_to(&mut buf, &facts).unwrap();
        let back: Vec<Fact> = read_jsonl_from(&buf[..], "mem").unwrap();
        assert_eq!(back, facts);

        let bad = b"{\"relation_id\":\"a\",\"subject_entity_id\":\"b\",\"object_text\":\"c\"}\n\nnot json\n";
        match read_jsonl_from::<Fact>(&bad[..], "mem") {
            Err(JsonlError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }
}
