//! A stand-in external scorer for tests and local runs.
//!
//! Scores are a pure function of (seed, question, sentence), so a client
//! can recompute what any response should contain. Requests are gathered
//! into small batches and each batch is answered in shuffled order.

use std::io::{self, BufRead, BufReader, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc::{self, RecvTimeoutError};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use rand::seq::SliceRandom;
use rand::Rng;
use slotshot_core::engine::Scorer;
use slotshot_core::scorers::{ScoreRequest, ScoreResponse};
use slotshot_core::scorers::LexicalScorer;
use slotshot_core::seed::{derive_seed, rng_for};

#[derive(Clone, Default)]
pub struct MockOptions {
    pub seed: u64,
    /// Use the lexical baseline instead of random vectors.
    pub lexical: bool,
    /// How long to wait for more requests before answering a batch.
    pub batch_ms: u64,
    /// Stop answering (and exit) after this many responses.
    pub fail_after: Option<usize>,
    /// Append the id of every response, in send order.
    pub order_log: Option<Arc<Mutex<Box<dyn Write + Send>>>>,
}

/// The random vectors the mock answers with.
pub fn mock_vectors(seed: u64, question: &[String], sentence: &[String]) -> (Vec<f64>, Vec<f64>) {
    let q = question.join("\u{1f}");
    let s = sentence.join("\u{1f}");
    let mut rng = rng_for(seed, &["mock", &q, &s]);
    let n = sentence.len();
    let z_start = (0..n).map(|_| rng.gen_range(-4.0..4.0)).collect();
    let z_end = (0..n).map(|_| rng.gen_range(-4.0..4.0)).collect();
    (z_start, z_end)
}

fn respond(opts: &MockOptions, req: &ScoreRequest) -> ScoreResponse {
    let (z_start, z_end) = if opts.lexical && !req.sentence.is_empty() {
        match LexicalScorer::default().score(&req.question, &req.sentence) {
            Ok(s) => s.into_parts(),
            Err(_) => mock_vectors(opts.seed, &req.question, &req.sentence),
        }
    } else {
        mock_vectors(opts.seed, &req.question, &req.sentence)
    };
    ScoreResponse {
        id: req.id.clone(),
        z_start,
        z_end,
    }
}

/// Answers requests from `reader` on `writer` until end of input or the
/// response budget runs out. Returns the number of responses sent.
pub fn serve_stream<R, W>(reader: R, mut writer: W, opts: &MockOptions, budget: &AtomicUsize) -> io::Result<usize>
where
    R: BufRead + Send + 'static,
    W: Write,
{
    let (tx, rx) = mpsc::channel::<ScoreRequest>();
    thread::spawn(move || {
        for line in reader.lines() {
            let Ok(line) = line else { break };
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<ScoreRequest>(&line) {
                Ok(req) => {
                    if tx.send(req).is_err() {
                        break;
                    }
                }
                Err(e) => log::warn!("mock scorer: bad request: {e}"),
            }
        }
    });

    let wait = Duration::from_millis(opts.batch_ms.max(1));
    let mut sent = 0;
    let mut batch_no = 0u64;
    while let Ok(first) = rx.recv() {
        let mut batch = vec![first];
        loop {
            match rx.recv_timeout(wait) {
                Ok(r) => batch.push(r),
                Err(RecvTimeoutError::Timeout) => break,
                Err(RecvTimeoutError::Disconnected) => break,
            }
        }
        let mut rng = rng_for(derive_seed(opts.seed, &["batches"]), &[&batch_no.to_string()]);
        batch_no += 1;
        batch.shuffle(&mut rng);
        for req in &batch {
            if budget
                .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |b| b.checked_sub(1))
                .is_err()
            {
                writer.flush()?;
                return Ok(sent);
            }
            let mut line = serde_json::to_vec(&respond(opts, req)).map_err(io::Error::other)?;
            line.push(b'\n');
            writer.write_all(&line)?;
            if let Some(log) = &opts.order_log {
                let mut log = log.lock().unwrap();
                writeln!(log, "{}", req.id)?;
                log.flush()?;
            }
            sent += 1;
        }
        writer.flush()?;
    }
    Ok(sent)
}

/// Serves stdin/stdout, or every connection to `listen` when given.
pub fn run(opts: MockOptions, listen: Option<&str>) -> io::Result<()> {
    let budget = Arc::new(AtomicUsize::new(opts.fail_after.unwrap_or(usize::MAX)));
    let Some(addr) = listen else {
        let stdin = BufReader::new(io::stdin());
        serve_stream(stdin, io::stdout().lock(), &opts, &budget)?;
        return Ok(());
    };
    let listener = TcpListener::bind(addr)?;
    // the bound address goes to stdout so callers can use port 0
    println!("{}", listener.local_addr()?);
    io::stdout().flush()?;
    for stream in listener.incoming() {
        let stream = stream?;
        let opts = opts.clone();
        let shared = Arc::clone(&budget);
        thread::spawn(move || {
            let budget = shared;
            let reader = match stream.try_clone() {
                Ok(s) => BufReader::new(s),
                Err(e) => {
                    log::warn!("mock scorer: {e}");
                    return;
                }
            };
            let _ = stream.set_nodelay(true);
            if let Err(e) = serve_stream(reader, &stream, &opts, &budget) {
                log::debug!("mock scorer connection ended: {e}");
            }
            let _ = stream.shutdown(std::net::Shutdown::Both);
            if budget.load(Ordering::SeqCst) == 0 {
                // simulate a crashed scorer
                std::process::exit(0);
            }
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    #[test]
    fn vectors_depend_on_content_only() {
        let a = mock_vectors(3, &toks("who is x"), &toks("x met y"));
        assert_eq!(a, mock_vectors(3, &toks("who is x"), &toks("x met y")));
        assert_ne!(a, mock_vectors(3, &toks("who is x"), &toks("x met z")));
        assert_eq!(a.0.len(), 3);
    }

    #[test]
    fn answers_every_request_once() {
        let input: String = (0..50)
            .map(|i| format!("{{\"id\":\"q{i}\",\"question\":[\"a\"],\"sentence\":[\"b\",\"c{i}\"]}}\n"))
            .collect();
        let mut out = Vec::new();
        let opts = MockOptions {
            batch_ms: 1,
            ..MockOptions::default()
        };
        let budget = AtomicUsize::new(usize::MAX);
        let n = serve_stream(Cursor::new(input.into_bytes()), &mut out, &opts, &budget).unwrap();
        assert_eq!(n, 50);
        let mut ids: Vec<String> = String::from_utf8(out)
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str::<ScoreResponse>(l).unwrap().id)
            .collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), 50);
    }

    #[test]
    fn stops_at_budget() {
        let input = "{\"id\":\"a\",\"question\":[],\"sentence\":[\"x\"]}\n".repeat(5);
        let budget = AtomicUsize::new(2);
        let n = serve_stream(Cursor::new(input.into_bytes()), io::sink(), &MockOptions::default(), &budget).unwrap();
        assert_eq!(n, 2);
    }
}
