//! Regression with cross-validation, capture metrics, sampler baselines and
//! the exact-flow oracle.

mod baseline;
mod capture;
mod flows;
mod regression;

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::env::EnvError;
use crate::trainer::TrainError;

pub use baseline::{baseline_comparison, sample_rewards, BaselineReport, SamplerSummary};
pub use capture::{
    capture_metrics, percentile_rank, read_isotherms, selectivity, working_capacity, write_capture_csv, CaptureRow,
    IsothermRow, WorkingCapacity, F_CO2, F_N2, ISOTHERM_COLUMNS,
};
pub use flows::{exact_flows, ExactFlows, TabularPolicy};
pub use regression::{
    average_ranks, cross_validate, fit_univariate, ols, pearson, r_squared, rmse, spearman, CvMode, CvSummary,
    RegressionReport,
};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("x has {0} values but y has {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least {needed} observations, got {got}")]
    TooFew { needed: usize, got: usize },
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Sampling(#[from] TrainError),
    #[error("{path}: {msg}")]
    File { path: PathBuf, msg: String },
}

pub(crate) fn file_err(path: &Path, e: impl std::fmt::Display) -> AnalysisError {
    AnalysisError::File {
        path: path.to_path_buf(),
        msg: e.to_string(),
    }
}

/// Reads two named numeric columns from a CSV file.
pub fn read_xy(path: &Path, x_col: &str, y_col: &str) -> Result<(Vec<f64>, Vec<f64>), AnalysisError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| file_err(path, e))?;
    let headers = r.headers().map_err(|e| file_err(path, e))?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| file_err(path, format!("no column named '{name}'")))
    };
    let (xi, yi) = (find(x_col)?, find(y_col)?);
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for (i, row) in r.records().enumerate() {
        let row = row.map_err(|e| file_err(path, e))?;
        let parse = |c: usize| {
            row[c]
                .trim()
                .parse::<f64>()
                .map_err(|e| file_err(path, format!("row {}, column {}: {e}", i + 2, &headers[c])))
        };
        xs.push(parse(xi)?);
        ys.push(parse(yi)?);
    }
    Ok((xs, ys))
}
