use std::collections::VecDeque;
use std::io::Write;

use serde::{Deserialize, Serialize};

/// Trailing mean over `window` entries; `None` before the window is full.
pub fn moving_average(series: &[f64], window: usize) -> Vec<Option<f64>> {
    assert!(window >= 1, "window must be >= 1");
    let mut out = Vec::with_capacity(series.len());
    let mut sum = 0.0;
    for (i, &x) in series.iter().enumerate() {
        sum += x;
        if i >= window {
            sum -= series[i - window];
        }
        out.push(if i + 1 >= window { Some(sum / window as f64) } else { None });
    }
    out
}

/// One line of the metrics stream.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    /// 1-based episode number.
    pub episode: u64,
    pub loss: f64,
    pub smoothed_loss: Option<f64>,
    /// logZ at sampling time (before the batch update).
    pub log_z: f64,
    pub reward: f64,
    pub best_reward: f64,
}

pub const METRICS_HEADER: &str = "episode,loss,smoothed_loss,log_z,reward,best_reward";

impl MetricRow {
    pub fn to_csv_line(&self) -> String {
        let smoothed = self.smoothed_loss.map(|v| v.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{}",
            self.episode, self.loss, smoothed, self.log_z, self.reward, self.best_reward
        )
    }
}

/// Receives metric rows as training proceeds.
pub trait MetricsSink {
    fn record(&mut self, row: &MetricRow) -> std::io::Result<()>;

    fn flush(&mut self) -> std::io::Result<()> {
        Ok(())
    }
}

impl MetricsSink for Vec<MetricRow> {
    fn record(&mut self, row: &MetricRow) -> std::io::Result<()> {
        self.push(row.clone());
        Ok(())
    }
}

/// Appends rows as CSV lines.
pub struct CsvSink<W: Write> {
    out: W,
}

impl<W: Write> CsvSink<W> {
    /// Writes the header first when `write_header` is set.
    pub fn new(mut out: W, write_header: bool) -> std::io::Result<Self> {
        if write_header {
            writeln!(out, "{METRICS_HEADER}")?;
        }
        Ok(Self { out })
    }
}

impl<W: Write> MetricsSink for CsvSink<W> {
    fn record(&mut self, row: &MetricRow) -> std::io::Result<()> {
        writeln!(self.out, "{}", row.to_csv_line())
    }

    fn flush(&mut self) -> std::io::Result<()> {
        self.out.flush()
    }
}

/// Forwards to two sinks.
pub struct Tee<'a>(pub &'a mut dyn MetricsSink, pub &'a mut dyn MetricsSink);

impl MetricsSink for Tee<'_> {
    fn record(&mut self, row: &MetricRow) -> std::io::Result<()> {
        self.0.record(row)?;
        self.1.record(row)
    }

    fn flush(&mut self) -> std::io::Result<()> {
        self.0.flush()?;
        self.1.flush()
    }
}

/// Rewrites a metrics CSV keeping the header and rows up to `episode`, so a
/// resumed run can append without duplicating rows written after the last
/// checkpoint.
pub fn truncate_metrics(path: &std::path::Path, episode: u64) -> std::io::Result<()> {
    let text = std::fs::read_to_string(path)?;
    let mut out = String::with_capacity(text.len());
    for (i, line) in text.lines().enumerate() {
        let keep = i == 0
            || line
                .split(',')
                .next()
                .and_then(|f| f.parse::<u64>().ok())
                .is_some_and(|e| e <= episode);
        if keep {
            out.push_str(line);
            out.push('\n');
        }
    }
    let tmp = path.with_extension("csv.tmp");
    std::fs::write(&tmp, out)?;
    std::fs::rename(tmp, path)
}

/// Rolling loss windows and best reward; all of it is checkpointed.
///
/// Window sums are maintained incrementally and re-summed from the buffer
/// every `window` episodes so that drift stays bounded while remaining a
/// deterministic function of the episode sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningStats {
    pub smoothing_window: usize,
    pub stop_window: usize,
    pub recent: VecDeque<f64>,
    pub smoothing_sum: f64,
    pub stop_sum: f64,
    pub best_reward: f64,
    pub seen: u64,
}

impl RunningStats {
    pub fn new(smoothing_window: usize, stop_window: usize) -> Self {
        Self {
            smoothing_window,
            stop_window,
            recent: VecDeque::new(),
            smoothing_sum: 0.0,
            stop_sum: 0.0,
            best_reward: 0.0,
            seen: 0,
        }
    }

    fn capacity(&self) -> usize {
        self.smoothing_window.max(self.stop_window)
    }

    fn tail_sum(&self, n: usize) -> f64 {
        self.recent.iter().rev().take(n).sum()
    }

    /// Adds one episode and returns `(smoothed_loss, best_reward)`.
    pub fn push(&mut self, loss: f64, reward: f64) -> (Option<f64>, f64) {
        let len = self.recent.len();
        if len >= self.smoothing_window {
            self.smoothing_sum -= self.recent[len - self.smoothing_window];
        }
        if len >= self.stop_window {
            self.stop_sum -= self.recent[len - self.stop_window];
        }
        self.recent.push_back(loss);
        if self.recent.len() > self.capacity() {
            self.recent.pop_front();
        }
        self.smoothing_sum += loss;
        self.stop_sum += loss;
        self.seen += 1;
        if self.seen % self.smoothing_window as u64 == 0 {
            self.smoothing_sum = self.tail_sum(self.smoothing_window);
        }
        if self.seen % self.stop_window as u64 == 0 {
            self.stop_sum = self.tail_sum(self.stop_window);
        }
        self.best_reward = self.best_reward.max(reward);
        let smoothed = (self.seen >= self.smoothing_window as u64).then(|| self.smoothing_sum / self.smoothing_window as f64);
        (smoothed, self.best_reward)
    }

    /// Mean loss over the last `stop_window` episodes, once that many exist.
    pub fn stop_mean(&self) -> Option<f64> {
        (self.seen >= self.stop_window as u64).then(|| self.stop_sum / self.stop_window as f64)
    }
}
