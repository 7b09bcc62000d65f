//! Append-only event log with periodic snapshots.
//!
//! `events.jsonl` holds every accepted submission and evaluation in order;
//! `snapshot.json` holds derived state up to some sequence number. Loading
//! restores the snapshot and replays the events after it.

use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub const EVENTS_FILE: &str = "events.jsonl";
pub const SNAPSHOT_FILE: &str = "snapshot.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope<E> {
    pub seq: u64,
    pub at_ms: u64,
    pub event: E,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Snapshot<S> {
    pub seq: u64,
    pub state: S,
}

pub struct EventLog {
    dir: PathBuf,
    file: File,
    next_seq: u64,
}

fn invalid(path: &Path, line: usize, e: serde_json::Error) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, format!("{}:{line}: {e}", path.display()))
}

fn now_ms() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

impl EventLog {
    /// Opens (creating if needed) the log in `dir`. Returns the latest
    /// snapshot, if any, and the events recorded after it.
    #[allow(clippy::type_complexity)]
    pub fn open<E: DeserializeOwned, S: DeserializeOwned>(
        dir: &Path,
    ) -> io::Result<(EventLog, Option<Snapshot<S>>, Vec<Envelope<E>>)> {
        fs::create_dir_all(dir)?;
        let snap_path = dir.join(SNAPSHOT_FILE);
        let snapshot: Option<Snapshot<S>> = match fs::read(&snap_path) {
            Ok(bytes) => Some(serde_json::from_slice(&bytes).map_err(|e| invalid(&snap_path, 0, e))?),
            Err(e) if e.kind() == io::ErrorKind::NotFound => None,
            Err(e) => return Err(e),
        };
        let after = snapshot.as_ref().map_or(0, |s| s.seq);

        let path = dir.join(EVENTS_FILE);
        let mut events = Vec::new();
        let mut last = after;
        if path.exists() {
            for (k, line) in BufReader::new(File::open(&path)?).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let env: Envelope<E> = serde_json::from_str(&line).map_err(|e| invalid(&path, k + 1, e))?;
                last = last.max(env.seq);
                if env.seq > after {
                    events.push(env);
                }
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok((
            EventLog {
                dir: dir.to_path_buf(),
                file,
                next_seq: last + 1,
            },
            snapshot,
            events,
        ))
    }

    pub fn append<E: Serialize>(&mut self, event: E) -> io::Result<Envelope<E>> {
        let env = Envelope {
            seq: self.next_seq,
            at_ms: now_ms(),
            event,
        };
        let mut line = serde_json::to_string(&env).map_err(io::Error::other)?;
        line.push('\n');
        self.file.write_all(line.as_bytes())?;
        self.file.flush()?;
        self.next_seq += 1;
        Ok(env)
    }

    /// Sequence number of the last appended event.
    pub fn last_seq(&self) -> u64 {
        self.next_seq - 1
    }

    pub fn write_snapshot<S: Serialize>(&self, state: &S) -> io::Result<()> {
        let tmp = self.dir.join(format!("{SNAPSHOT_FILE}.tmp"));
        let snap = Snapshot {
            seq: self.last_seq(),
            state,
        };
        fs::write(&tmp, serde_json::to_vec(&snap).map_err(io::Error::other)?)?;
        fs::rename(tmp, self.dir.join(SNAPSHOT_FILE))
    }
}
