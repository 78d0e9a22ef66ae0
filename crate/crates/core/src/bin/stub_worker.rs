//! Minimal evaluation worker for exercising the external-process protocol.
//!
//! Usage: `chimera-stub-worker [--loss X] [--per-layer X] [--crash-on ID]
//! [--malformed-on ID] [--hang-on ID] [--mismatch-on ID]
//! [--protocol-version N]`
//!
//! Every request is answered with `val_loss = loss + per_layer * layers`
//! and the geometric midpoint of the learning-rate window. The `*-on`
//! flags inject a fault when the given request id arrives.

use std::io::{self, BufRead, Write};
use std::process::ExitCode;

use chimera_core::evaluator::{EvaluationResult, WireMessage, PROTOCOL_VERSION};

#[derive(Default)]
struct Options {
    loss: f64,
    per_layer: f64,
    crash_on: Option<u64>,
    malformed_on: Option<u64>,
    hang_on: Option<u64>,
    mismatch_on: Option<u64>,
    protocol_version: Option<u32>,
}

fn parse_args() -> Result<Options, String> {
    let mut opts = Options {
        loss: 0.5,
        ..Options::default()
    };
    let mut args = std::env::args().skip(1);
    while let Some(flag) = args.next() {
        let value = args.next().ok_or(format!("{flag} needs a value"))?;
        let bad = || format!("bad value `{value}` for {flag}");
        match flag.as_str() {
            "--loss" => opts.loss = value.parse().map_err(|_| bad())?,
            "--per-layer" => opts.per_layer = value.parse().map_err(|_| bad())?,
            "--crash-on" => opts.crash_on = Some(value.parse().map_err(|_| bad())?),
            "--malformed-on" => opts.malformed_on = Some(value.parse().map_err(|_| bad())?),
            "--hang-on" => opts.hang_on = Some(value.parse().map_err(|_| bad())?),
            "--mismatch-on" => opts.mismatch_on = Some(value.parse().map_err(|_| bad())?),
            "--protocol-version" => opts.protocol_version = Some(value.parse().map_err(|_| bad())?),
            _ => return Err(format!("unknown flag {flag}")),
        }
    }
    Ok(opts)
}

fn main() -> ExitCode {
    let opts = match parse_args() {
        Ok(o) => o,
        Err(e) => {
            eprintln!("chimera-stub-worker: {e}");
            return ExitCode::from(2);
        }
    };
    let stdout = io::stdout();
    let mut out = stdout.lock();
    let hello = WireMessage::Hello {
        protocol_version: opts.protocol_version.unwrap_or(PROTOCOL_VERSION),
    };
    if writeln!(out, "{}", hello.to_line()).and_then(|_| out.flush()).is_err() {
        return ExitCode::FAILURE;
    }
    for line in io::stdin().lock().lines() {
        let Ok(line) = line else { break };
        let request = match WireMessage::parse(&line) {
            Ok(WireMessage::Eval(r)) => r,
            _ => {
                eprintln!("chimera-stub-worker: ignoring `{line}`");
                continue;
            }
        };
        let id = request.request_id;
        if opts.crash_on == Some(id) {
            return ExitCode::from(3);
        }
        if opts.hang_on == Some(id) {
            std::thread::sleep(std::time::Duration::from_secs(3600));
        }
        let reply = if opts.malformed_on == Some(id) {
            "{\"type\":\"result\",\"request_id\":".to_string()
        } else {
            let loss = opts.loss + opts.per_layer * request.genome.layers.len() as f64;
            let mut result = EvaluationResult::ok(id, loss, request.lr_midpoint());
            if opts.mismatch_on == Some(id) {
                result.request_id += 1000;
            }
            WireMessage::Result(result).to_line()
        };
        if writeln!(out, "{reply}").and_then(|_| out.flush()).is_err() {
            break;
        }
    }
    ExitCode::SUCCESS
}
