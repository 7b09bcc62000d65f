//! Client for external scorers speaking line-delimited JSON over a TCP
//! socket or a child process's standard streams.
//!
//! Request:  `{"id": "...", "question": [tokens], "sentence": [tokens]}`
//! Response: `{"id": "...", "z_start": [N reals], "z_end": [N reals]}`
//!
//! Requests may be pipelined and responses may come back in any order; a
//! reader thread routes each response to its waiting caller by id.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::process::{Child, Command, Stdio};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::engine::{Scorer, ScorerError, SpanScores};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub id: String,
    pub question: Vec<String>,
    pub sentence: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub id: String,
    pub z_start: Vec<f64>,
    pub z_end: Vec<f64>,
}

/// Where an external scorer lives.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Endpoint {
    /// `host:port`
    Tcp(String),
    /// `exec:<program> [args...]`, spoken to over stdin/stdout.
    Process { program: String, args: Vec<String> },
}

impl Endpoint {
    pub fn parse(address: &str) -> Result<Endpoint, ScorerError> {
        if let Some(cmd) = address.strip_prefix("exec:") {
            let mut parts = cmd.split_whitespace().map(str::to_string);
            let program = parts
                .next()
                .ok_or_else(|| ScorerError::Other("empty exec endpoint".into()))?;
            return Ok(Endpoint::Process {
                program,
                args: parts.collect(),
            });
        }
        if address.rsplit_once(':').is_some_and(|(h, p)| !h.is_empty() && p.parse::<u16>().is_ok()) {
            Ok(Endpoint::Tcp(address.to_string()))
        } else {
            Err(ScorerError::Other(format!("bad scorer address {address:?}")))
        }
    }
}

type Reply = Result<ScoreResponse, ScorerError>;

struct Shared {
    writer: Mutex<Box<dyn Write + Send>>,
    pending: Mutex<HashMap<String, Sender<Reply>>>,
    closed: AtomicBool,
    next_id: AtomicU64,
}

impl Shared {
    fn fail_all(&self) {
        self.closed.store(true, Ordering::SeqCst);
        let mut pending = self.pending.lock().unwrap();
        for (_, tx) in pending.drain() {
            let _ = tx.send(Err(ScorerError::Disconnected));
        }
    }

    fn dispatch(&self, line: &str) {
        let value: serde_json::Value = match serde_json::from_str(line) {
            Ok(v) => v,
            Err(e) => {
                log::warn!("external scorer sent unparseable line: {e}");
                return;
            }
        };
        let Some(id) = value.get("id").and_then(|v| v.as_str()).map(str::to_string) else {
            log::warn!("external scorer response without id");
            return;
        };
        let Some(tx) = self.pending.lock().unwrap().remove(&id) else {
            log::debug!("response for unknown or expired id {id}");
            return;
        };
        let reply = serde_json::from_value::<ScoreResponse>(value)
            .map_err(|e| ScorerError::Malformed(format!("response {id}: {e}")));
        let _ = tx.send(reply);
    }
}

/// Thread-safe client; one connection serves any number of concurrent
/// callers.
pub struct ExternalScorer {
    shared: Arc<Shared>,
    timeout: Duration,
    child: Mutex<Option<Child>>,
    socket: Option<TcpStream>,
}

/// An in-flight request; call [`PendingScore::wait`] for the result.
pub struct PendingScore {
    id: String,
    expected: usize,
    rx: Receiver<Reply>,
    deadline: Instant,
    timeout: Duration,
    shared: Arc<Shared>,
}

impl PendingScore {
    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn wait(self) -> Result<SpanScores, ScorerError> {
        let left = self.deadline.saturating_duration_since(Instant::now());
        let reply = match self.rx.recv_timeout(left) {
            Ok(r) => r?,
            Err(RecvTimeoutError::Timeout) => {
                self.shared.pending.lock().unwrap().remove(&self.id);
                return Err(ScorerError::Timeout(self.timeout));
            }
            Err(RecvTimeoutError::Disconnected) => return Err(ScorerError::Disconnected),
        };
        if reply.z_start.len() != self.expected {
            return Err(ScorerError::LengthMismatch {
                expected: self.expected,
                got: reply.z_start.len(),
            });
        }
        if reply.z_end.len() != self.expected {
            return Err(ScorerError::LengthMismatch {
                expected: self.expected,
                got: reply.z_end.len(),
            });
        }
        Ok(SpanScores::new(reply.z_start, reply.z_end)?)
    }
}

impl ExternalScorer {
    pub fn connect(endpoint: &Endpoint, timeout: Duration) -> Result<Self, ScorerError> {
        match endpoint {
            Endpoint::Tcp(addr) => Self::connect_tcp(addr, timeout),
            Endpoint::Process { program, args } => Self::spawn(program, args, timeout),
        }
    }

    pub fn connect_tcp(addr: &str, timeout: Duration) -> Result<Self, ScorerError> {
        let mut last_err = None;
        for sock in addr.to_socket_addrs()? {
            match TcpStream::connect_timeout(&sock, timeout) {
                Ok(stream) => {
                    stream.set_nodelay(true)?;
                    let reader = stream.try_clone()?;
                    let handle = stream.try_clone()?;
                    let mut scorer = Self::from_streams(reader, stream, timeout);
                    scorer.socket = Some(handle);
                    return Ok(scorer);
                }
                Err(e) => last_err = Some(e),
            }
        }
        match last_err {
            Some(e) if e.kind() == std::io::ErrorKind::TimedOut => Err(ScorerError::Timeout(timeout)),
            Some(e) => Err(ScorerError::Connection(e)),
            None => Err(ScorerError::Other(format!("{addr} resolved to no address"))),
        }
    }

    pub fn spawn(program: &str, args: &[String], timeout: Duration) -> Result<Self, ScorerError> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let scorer = Self::from_streams(stdout, stdin, timeout);
        *scorer.child.lock().unwrap() = Some(child);
        Ok(scorer)
    }

    pub fn from_streams(
        reader: impl Read + Send + 'static,
        writer: impl Write + Send + 'static,
        timeout: Duration,
    ) -> Self {
        let shared = Arc::new(Shared {
            writer: Mutex::new(Box::new(writer)),
            pending: Mutex::new(HashMap::new()),
            closed: AtomicBool::new(false),
            next_id: AtomicU64::new(0),
        });
        let bg = Arc::clone(&shared);
        thread::Builder::new()
            .name("external-scorer-reader".into())
            .spawn(move || {
                let reader = BufReader::new(reader);
                for line in reader.lines() {
                    match line {
                        Ok(l) if l.trim().is_empty() => continue,
                        Ok(l) => bg.dispatch(&l),
                        Err(_) => break,
                    }
                }
                bg.fail_all();
            })
            .expect("spawn reader thread");
        ExternalScorer {
            shared,
            timeout,
            child: Mutex::new(None),
            socket: None,
        }
    }

    /// Sends one request without waiting for its response.
    pub fn submit(&self, question: &[String], sentence: &[String]) -> Result<PendingScore, ScorerError> {
        if self.shared.closed.load(Ordering::SeqCst) {
            return Err(ScorerError::Disconnected);
        }
        let id = format!("r{}", self.shared.next_id.fetch_add(1, Ordering::Relaxed));
        let (tx, rx) = mpsc::channel();
        self.shared.pending.lock().unwrap().insert(id.clone(), tx);
        if self.shared.closed.load(Ordering::SeqCst) {
            self.shared.pending.lock().unwrap().remove(&id);
            return Err(ScorerError::Disconnected);
        }
        let req = ScoreRequest {
            id: id.clone(),
            question: question.to_vec(),
            sentence: sentence.to_vec(),
        };
        let mut line = serde_json::to_vec(&req).map_err(|e| ScorerError::Other(e.to_string()))?;
        line.push(b'\n');
        let sent = {
            let mut w = self.shared.writer.lock().unwrap();
            w.write_all(&line).and_then(|_| w.flush())
        };
        if let Err(e) = sent {
            self.shared.pending.lock().unwrap().remove(&id);
            return Err(ScorerError::Connection(e));
        }
        Ok(PendingScore {
            id,
            expected: sentence.len(),
            rx,
            deadline: Instant::now() + self.timeout,
            timeout: self.timeout,
            shared: Arc::clone(&self.shared),
        })
    }

    pub fn in_flight(&self) -> usize {
        self.shared.pending.lock().unwrap().len()
    }
}

impl Scorer for ExternalScorer {
    fn score(&self, question: &[String], sentence: &[String]) -> Result<SpanScores, ScorerError> {
        self.submit(question, sentence)?.wait()
    }
}

impl Drop for ExternalScorer {
    fn drop(&mut self) {
        if let Some(sock) = &self.socket {
            let _ = sock.shutdown(std::net::Shutdown::Both);
        }
        if let Some(mut child) = self.child.lock().unwrap().take() {
            // closing stdin lets a well-behaved scorer exit on its own
            drop(std::mem::replace(
                &mut *self.shared.writer.lock().unwrap(),
                Box::new(std::io::sink()),
            ));
            let deadline = Instant::now() + Duration::from_millis(500);
            while Instant::now() < deadline {
                if let Ok(Some(_)) = child.try_wait() {
                    return;
                }
                thread::sleep(Duration::from_millis(10));
            }
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}
