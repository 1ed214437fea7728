use rand::seq::SliceRandom;
use serde::Serialize;

use super::AnalysisError;
use crate::scalar::Scalar;
use crate::trainer::episode_rng;

/// Ordinary least-squares fit of `y = slope * x + intercept` with
/// full-sample diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegressionReport {
    pub n: usize,
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub rmse: f64,
    pub spearman: f64,
    pub cross_validation: Option<CvSummary>,
}

fn mean<T: Scalar>(v: &[T]) -> T {
    v.iter().copied().sum::<T>() / T::of(v.len() as f64)
}

fn check_pair<T>(x: &[T], y: &[T], min: usize) -> Result<(), AnalysisError> {
    if x.len() != y.len() {
        return Err(AnalysisError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < min {
        return Err(AnalysisError::TooFew { needed: min, got: x.len() });
    }
    Ok(())
}

/// `(slope, intercept)` by least squares on centred data.
pub fn ols<T: Scalar>(x: &[T], y: &[T]) -> Result<(T, T), AnalysisError> {
    check_pair(x, y, 2)?;
    let (mx, my) = (mean(x), mean(y));
    let sxx: T = x.iter().map(|&a| (a - mx) * (a - mx)).sum();
    let sxy: T = x.iter().zip(y).map(|(&a, &b)| (a - mx) * (b - my)).sum();
    if !(sxx > T::zero()) {
        return Err(AnalysisError::Degenerate("x is constant".into()));
    }
    let slope = sxy / sxx;
    Ok((slope, my - slope * mx))
}

/// Coefficient of determination; when `y` is constant this is 1 for a
/// perfect prediction and 0 otherwise.
pub fn r_squared<T: Scalar>(y: &[T], pred: &[T]) -> T {
    let my = mean(y);
    let ss_res: T = y.iter().zip(pred).map(|(&a, &p)| (a - p) * (a - p)).sum();
    let ss_tot: T = y.iter().map(|&a| (a - my) * (a - my)).sum();
    if ss_tot == T::zero() {
        return if ss_res == T::zero() { T::one() } else { T::zero() };
    }
    T::one() - ss_res / ss_tot
}

pub fn rmse<T: Scalar>(y: &[T], pred: &[T]) -> T {
    let ss: T = y.iter().zip(pred).map(|(&a, &p)| (a - p) * (a - p)).sum();
    (ss / T::of(y.len() as f64)).sqrt()
}

pub fn pearson<T: Scalar>(x: &[T], y: &[T]) -> Result<T, AnalysisError> {
    check_pair(x, y, 2)?;
    let (mx, my) = (mean(x), mean(y));
    let sxy: T = x.iter().zip(y).map(|(&a, &b)| (a - mx) * (b - my)).sum();
    let sxx: T = x.iter().map(|&a| (a - mx) * (a - mx)).sum();
    let syy: T = y.iter().map(|&b| (b - my) * (b - my)).sum();
    if sxx == T::zero() || syy == T::zero() {
        return Err(AnalysisError::Degenerate("correlation of a constant series".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).max(-T::one()).min(T::one()))
}

/// 1-based ranks; tied values share the mean of their positions.
pub fn average_ranks<T: Scalar>(v: &[T]) -> Vec<T> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).expect("finite values"));
    let mut ranks = vec![T::zero(); v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let r = T::of((i + j) as f64 / 2.0 + 1.0);
        for &o in &order[i..=j] {
            ranks[o] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman's rho: Pearson correlation of average ranks.
pub fn spearman<T: Scalar>(x: &[T], y: &[T]) -> Result<T, AnalysisError> {
    check_pair(x, y, 2)?;
    pearson(&average_ranks(x), &average_ranks(y))
}

pub fn fit_univariate<T: Scalar>(x: &[T], y: &[T]) -> Result<RegressionReport, AnalysisError> {
    check_pair(x, y, 3)?;
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(AnalysisError::Degenerate("non-finite input".into()));
    }
    let (slope, intercept) = ols(x, y)?;
    let pred: Vec<T> = x.iter().map(|&a| slope * a + intercept).collect();
    let rho = match spearman(x, y) {
        Ok(r) => r.as_f64(),
        Err(_) => f64::NAN,
    };
    Ok(RegressionReport {
        n: x.len(),
        slope: slope.as_f64(),
        intercept: intercept.as_f64(),
        r2: r_squared(y, &pred).as_f64(),
        rmse: rmse(y, &pred).as_f64(),
        spearman: rho,
        cross_validation: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum CvMode {
    /// Each round partitions a fresh shuffle into `folds` near-equal folds.
    KFold { folds: usize },
    /// Each round holds out `round(n * test_fraction)` shuffled samples.
    Holdout { test_fraction: f64 },
}

/// Mean and sample standard deviation over every (round, split) evaluation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CvSummary {
    pub mode: CvMode,
    pub rounds: usize,
    pub evaluations: usize,
    pub test_r2_mean: f64,
    pub test_r2_std: f64,
    pub test_rmse_mean: f64,
    pub test_rmse_std: f64,
    pub train_r2_mean: f64,
    pub train_r2_std: f64,
    pub train_rmse_mean: f64,
    pub train_rmse_std: f64,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (m, 0.0);
    }
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, var.sqrt())
}

fn pick<T: Copy>(v: &[T], idx: &[usize]) -> Vec<T> {
    idx.iter().map(|&i| v[i]).collect()
}

/// Repeated cross-validation. Round `r` shuffles with RNG stream `r` of
/// `seed`, so the summary is a pure function of the inputs.
pub fn cross_validate<T: Scalar>(
    x: &[T],
    y: &[T],
    mode: CvMode,
    rounds: usize,
    seed: u64,
) -> Result<CvSummary, AnalysisError> {
    check_pair(x, y, 3)?;
    if rounds == 0 {
        return Err(AnalysisError::Config("rounds must be >= 1".into()));
    }
    let n = x.len();
    match mode {
        CvMode::KFold { folds } if folds < 2 || folds > n => {
            return Err(AnalysisError::Config(format!("folds must lie in [2, n = {n}], got {folds}")));
        }
        CvMode::Holdout { test_fraction } => {
            let t = (n as f64 * test_fraction).round() as usize;
            if !(test_fraction > 0.0 && test_fraction < 1.0) || t == 0 || n - t < 2 {
                return Err(AnalysisError::Config(format!(
                    "test_fraction {test_fraction} leaves an empty train or test split for n = {n}"
                )));
            }
        }
        _ => {}
    }
    let (mut te_r2, mut te_rmse, mut tr_r2, mut tr_rmse) = (vec![], vec![], vec![], vec![]);
    for round in 0..rounds {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut episode_rng(seed, round as u64));
        let splits: Vec<(Vec<usize>, Vec<usize>)> = match mode {
            CvMode::KFold { folds } => {
                let (base, extra) = (n / folds, n % folds);
                let mut start = 0;
                (0..folds)
                    .map(|f| {
                        let len = base + usize::from(f < extra);
                        let test = idx[start..start + len].to_vec();
                        let train = idx[..start].iter().chain(&idx[start + len..]).copied().collect();
                        start += len;
                        (train, test)
                    })
                    .collect()
            }
            CvMode::Holdout { test_fraction } => {
                let t = (n as f64 * test_fraction).round() as usize;
                vec![(idx[t..].to_vec(), idx[..t].to_vec())]
            }
        };
        for (train, test) in splits {
            let (xtr, ytr) = (pick(x, &train), pick(y, &train));
            let (slope, icpt) = ols(&xtr, &ytr)?;
            let predict = |xs: &[T]| xs.iter().map(|&a| slope * a + icpt).collect::<Vec<T>>();
            let (xte, yte) = (pick(x, &test), pick(y, &test));
            let (pte, ptr) = (predict(&xte), predict(&xtr));
            te_r2.push(r_squared(&yte, &pte).as_f64());
            te_rmse.push(rmse(&yte, &pte).as_f64());
            tr_r2.push(r_squared(&ytr, &ptr).as_f64());
            tr_rmse.push(rmse(&ytr, &ptr).as_f64());
        }
    }
    let (test_r2_mean, test_r2_std) = mean_std(&te_r2);
    let (test_rmse_mean, test_rmse_std) = mean_std(&te_rmse);
    let (train_r2_mean, train_r2_std) = mean_std(&tr_r2);
    let (train_rmse_mean, train_rmse_std) = mean_std(&tr_rmse);
    Ok(CvSummary {
        mode,
        rounds,
        evaluations: te_r2.len(),
        test_r2_mean,
        test_r2_std,
        test_rmse_mean,
        test_rmse_std,
        train_r2_mean,
        train_r2_std,
        train_rmse_mean,
        train_rmse_std,
    })
}
