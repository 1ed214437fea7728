//! Child-process surface-area evaluator.
//!
//! Protocol: the assembly record is written as one line to the child's stdin;
//! the child prints one decimal m²/g value on stdout and exits 0. Any other
//! outcome (spawn failure, non-zero exit, timeout, unparseable or negative
//! output) becomes [`GsaResult::Error`].

use std::io::{Read, Write};
use std::process::{Command, Stdio};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{GsaEvaluator, GsaResult, RewardError};
use crate::env::{AssemblyEnv, AssemblyRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdapterConfig {
    /// Program followed by its arguments.
    pub command: Vec<String>,
    pub timeout_secs: f64,
    pub workers: usize,
    /// Probe radius (Å) forwarded to the surface-area tool.
    pub probe_radius: f64,
    /// Monte Carlo samples per atom forwarded to the surface-area tool.
    pub samples: u32,
    /// Append `--probe-radius <r> --samples <n>` to the command line.
    pub pass_probe_args: bool,
}

impl Default for AdapterConfig {
    fn default() -> Self {
        Self {
            command: Vec::new(),
            timeout_secs: 60.0,
            workers: 4,
            probe_radius: 1.525,
            samples: 2000,
            pass_probe_args: true,
        }
    }
}

impl AdapterConfig {
    pub fn validate(&self) -> Result<(), RewardError> {
        if self.command.is_empty() {
            return Err(RewardError::Config("external evaluator needs a command".into()));
        }
        if !(self.timeout_secs > 0.0) {
            return Err(RewardError::Config("timeout_secs must be > 0".into()));
        }
        if self.workers == 0 {
            return Err(RewardError::Config("workers must be >= 1".into()));
        }
        Ok(())
    }

    fn args(&self) -> Vec<String> {
        let mut args = self.command[1..].to_vec();
        if self.pass_probe_args {
            args.extend([
                "--probe-radius".to_string(),
                self.probe_radius.to_string(),
                "--samples".to_string(),
                self.samples.to_string(),
            ]);
        }
        args
    }
}

fn spawn_reader<R: Read + Send + 'static>(mut r: R) -> std::sync::mpsc::Receiver<Vec<u8>> {
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        let mut buf = Vec::new();
        let _ = r.read_to_end(&mut buf);
        let _ = tx.send(buf);
    });
    rx
}

/// Runs the configured command once for `record`.
pub fn external_gsa(config: &AdapterConfig, record: &AssemblyRecord) -> GsaResult {
    let Some(program) = config.command.first() else {
        return GsaResult::Error("no command configured".into());
    };
    let mut child = match Command::new(program)
        .args(config.args())
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
    {
        Ok(c) => c,
        Err(e) => return GsaResult::Error(format!("failed to start '{program}': {e}")),
    };
    if let Some(mut stdin) = child.stdin.take() {
        // A child that ignores stdin may already have exited; that is not an error here.
        let _ = writeln!(stdin, "{record}");
    }
    let stdout = spawn_reader(child.stdout.take().expect("piped stdout"));
    let stderr = spawn_reader(child.stderr.take().expect("piped stderr"));

    let timeout = Duration::from_secs_f64(config.timeout_secs);
    let started = Instant::now();
    let status = loop {
        match child.try_wait() {
            Ok(Some(status)) => break status,
            Ok(None) if started.elapsed() >= timeout => {
                let _ = child.kill();
                let _ = child.wait();
                return GsaResult::Error(format!("timed out after {:.3} s", config.timeout_secs));
            }
            Ok(None) => std::thread::sleep(Duration::from_millis(2)),
            Err(e) => return GsaResult::Error(format!("wait failed: {e}")),
        }
    };
    // Grandchildren may keep the pipes open; never block past the deadline.
    let grace = timeout.saturating_sub(started.elapsed()).max(Duration::from_millis(100));
    let out = stdout.recv_timeout(grace).unwrap_or_default();
    if !status.success() {
        let err = stderr.recv_timeout(Duration::from_millis(100)).unwrap_or_default();
        let err = String::from_utf8_lossy(&err);
        return GsaResult::Error(format!("exit status {status}: {}", err.trim()));
    }
    let text = String::from_utf8_lossy(&out);
    let Some(line) = text.lines().map(str::trim).find(|l| !l.is_empty()) else {
        return GsaResult::Error("no output".into());
    };
    match line.parse::<f64>() {
        Ok(v) if v.is_finite() && v >= 0.0 => GsaResult::Value(v),
        Ok(v) => GsaResult::Error(format!("invalid surface area {v}")),
        Err(_) => GsaResult::Error(format!("unparseable output '{line}'")),
    }
}

/// Evaluates through a child process, with a bounded worker pool for batches.
#[derive(Debug, Clone)]
pub struct ExternalEvaluator {
    config: AdapterConfig,
}

impl ExternalEvaluator {
    pub fn new(config: AdapterConfig) -> Self {
        Self { config }
    }
}

impl GsaEvaluator for ExternalEvaluator {
    fn evaluate(&self, env: &AssemblyEnv, seq: &[usize]) -> GsaResult {
        match env.record(seq) {
            Ok(rec) => external_gsa(&self.config, &rec),
            Err(e) => GsaResult::Error(e.to_string()),
        }
    }

    fn evaluate_batch(&self, env: &AssemblyEnv, seqs: &[Vec<usize>]) -> Vec<GsaResult> {
        let next = AtomicUsize::new(0);
        let slots: Vec<Mutex<Option<GsaResult>>> = seqs.iter().map(|_| Mutex::new(None)).collect();
        let workers = self.config.workers.max(1).min(seqs.len().max(1));
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    if i >= seqs.len() {
                        break;
                    }
                    let r = self.evaluate(env, &seqs[i]);
                    *slots[i].lock().expect("slot lock") = Some(r);
                });
            }
        });
        slots
            .into_iter()
            .map(|m| m.into_inner().expect("slot lock").expect("every slot filled"))
            .collect()
    }
}
