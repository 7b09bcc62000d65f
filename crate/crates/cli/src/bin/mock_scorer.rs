//! Line-delimited JSON scorer used for protocol tests.

use std::fs::OpenOptions;
use std::io::Write;
use std::sync::{Arc, Mutex};

use clap::Parser;
use slotshot::mock::{run, MockOptions};

#[derive(Debug, Parser)]
#[command(name = "mock-scorer")]
struct Args {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Answer with the lexical baseline's scores.
    #[arg(long)]
    lexical: bool,
    /// Serve TCP on this address instead of stdin/stdout.
    #[arg(long)]
    listen: Option<String>,
    #[arg(long, default_value_t = 5)]
    batch_ms: u64,
    /// Exit after this many responses.
    #[arg(long)]
    fail_after: Option<usize>,
    /// Write response ids here in the order they were sent.
    #[arg(long)]
    order_log: Option<std::path::PathBuf>,
}

fn main() {
    let args = Args::parse();
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    let order_log = match &args.order_log {
        None => None,
        Some(p) => match OpenOptions::new().create(true).append(true).open(p) {
            Ok(f) => Some(Arc::new(Mutex::new(Box::new(f) as Box<dyn Write + Send>))),
            Err(e) => {
                eprintln!("error: {}: {e}", p.display());
                std::process::exit(1);
            }
        },
    };
    let opts = MockOptions {
        seed: args.seed,
        lexical: args.lexical,
        batch_ms: args.batch_ms,
        fail_after: args.fail_after,
        order_log,
    };
    if let Err(e) = run(opts, args.listen.as_deref()) {
        eprintln!("error: {e}");
        std::process::exit(3);
    }
}
