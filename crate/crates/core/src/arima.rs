//! ARIMA(p, d, q) modeling from scratch.
//!
//! The series is differenced `d` times; the differenced series `w` follows
//!
//! ```text
//! w_t = intercept + Σ_i α_i w_{t-i} + ε_t + Σ_j β_j ε_{t-j}
//! ```
//!
//! Coefficients are estimated by two-stage least squares (Hannan–Rissanen):
//! a long autoregression supplies residual estimates, then `w_t` is
//! regressed on its own lags and the lagged residual estimates. Models with
//! `d > 0` carry no intercept, so ARIMA(0,1,0) is exactly the random walk.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::harness::rmse;

/// Longest autoregression used to proxy innovations in the first stage.
const LONG_AR_MAX: usize = 20;
/// Relative singular-value cutoff for the normal equations.
const SINGULAR_RTOL: f64 = 1e-12;

#[derive(Debug, thiserror::Error)]
pub enum ArimaError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("degenerate fit: {0}")]
    Degenerate(String),
    #[error("grid search failed for every order: {}", format_causes(.0))]
    SearchFailed(Vec<(ArimaOrder, String)>),
}

fn format_causes(causes: &[(ArimaOrder, String)]) -> String {
    causes
        .iter()
        .map(|(o, c)| format!("{o}: {c}"))
        .collect::<Vec<_>>()
        .join("; ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ArimaOrder {
    pub p: usize,
    pub d: usize,
    pub q: usize,
}

impl ArimaOrder {
    pub const MAX_D: usize = 2;

    pub fn new(p: usize, d: usize, q: usize) -> Self {
        ArimaOrder { p, d, q }
    }

    pub fn validate(&self) -> Result<(), ArimaError> {
        if self.d > Self::MAX_D {
            return Err(ArimaError::InvalidArgument(format!(
                "differencing order {} exceeds {}",
                self.d,
                Self::MAX_D
            )));
        }
        Ok(())
    }

    /// Observations of history needed before a forecast can be made.
    pub fn min_history(&self) -> usize {
        (self.p.max(self.q) + self.d).max(1)
    }

    /// Minimum training length accepted by [`fit_arima`].
    pub fn min_train(&self) -> usize {
        (10 * (self.p + self.q) + self.d).max(self.d + 2)
    }

    fn rank_key(&self) -> (usize, usize, usize, usize) {
        (self.p + self.d + self.q, self.p, self.d, self.q)
    }
}

impl fmt::Display for ArimaOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{})", self.p, self.d, self.q)
    }
}

/// The default search space: p ∈ 0..=8, d ∈ 0..=2, q ∈ 0..=2.
pub fn default_grid() -> Vec<ArimaOrder> {
    let mut grid = Vec::new();
    for p in 0..=8 {
        for d in 0..=2 {
            for q in 0..=2 {
                grid.push(ArimaOrder::new(p, d, q));
            }
        }
    }
    grid
}

/// Applies first differences `d` times.
pub fn difference(series: &[f64], d: usize) -> Result<Vec<f64>, ArimaError> {
    if series.len() <= d {
        return Err(ArimaError::InvalidArgument(format!(
            "cannot difference {} values {d} times",
            series.len()
        )));
    }
    let mut out = series.to_vec();
    for _ in 0..d {
        out = out.windows(2).map(|w| w[1] - w[0]).collect();
    }
    Ok(out)
}

/// Inverse of [`difference`]: `heads` are the first `d` values of the
/// original series. Output has `diffs.len() + d` values.
pub fn integrate(diffs: &[f64], heads: &[f64], d: usize) -> Result<Vec<f64>, ArimaError> {
    if heads.len() != d {
        return Err(ArimaError::InvalidArgument(format!(
            "integrating order {d} needs {d} head values, got {}",
            heads.len()
        )));
    }
    // starting value of each intermediate difference level
    let mut starts = Vec::with_capacity(d);
    let mut level = heads.to_vec();
    for _ in 0..d {
        starts.push(level[0]);
        level = level.windows(2).map(|w| w[1] - w[0]).collect();
    }
    let mut out = diffs.to_vec();
    for k in (0..d).rev() {
        let mut acc = starts[k];
        let mut next = Vec::with_capacity(out.len() + 1);
        next.push(acc);
        for v in &out {
            acc += v;
            next.push(acc);
        }
        out = next;
    }
    Ok(out)
}

/// Last value of every difference level `0..d` of `history`.
fn level_tails(history: &[f64], d: usize) -> Vec<f64> {
    let mut tails = Vec::with_capacity(d);
    let mut level = history.to_vec();
    for _ in 0..d {
        tails.push(*level.last().expect("history longer than d"));
        level = level.windows(2).map(|w| w[1] - w[0]).collect();
    }
    tails
}

/// Maps one differenced-scale value back to the original scale, updating
/// the per-level tails in place.
fn undifference_step(tails: &mut [f64], w: f64) -> f64 {
    let mut v = w;
    for tail in tails.iter_mut().rev() {
        *tail += v;
        v = *tail;
    }
    v
}

struct LinearFit {
    coeffs: Vec<f64>,
    intercept: f64,
}

/// Least squares of `y` on the given regressor columns. With an intercept the
/// problem is solved on centered data, which keeps the normal equations well
/// conditioned and makes a constant regressor exactly singular.
fn least_squares(y: &[f64], columns: &[Vec<f64>], with_intercept: bool) -> Result<LinearFit, ArimaError> {
    let n = y.len();
    let k = columns.len();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / n as f64;
    let y_mean = if with_intercept { mean(y) } else { 0.0 };
    let col_means: Vec<f64> = columns
        .iter()
        .map(|c| if with_intercept { mean(c) } else { 0.0 })
        .collect();
    if k == 0 {
        return Ok(LinearFit { coeffs: vec![], intercept: y_mean });
    }

    let mut xtx = DMatrix::<f64>::zeros(k, k);
    let mut xty = DVector::<f64>::zeros(k);
    for i in 0..k {
        let ci = &columns[i];
        let mi = col_means[i];
        xty[i] = ci.iter().zip(y).map(|(a, b)| (a - mi) * (b - y_mean)).sum();
        for j in 0..=i {
            let cj = &columns[j];
            let mj = col_means[j];
            let s: f64 = ci.iter().zip(cj).map(|(a, b)| (a - mi) * (b - mj)).sum();
            xtx[(i, j)] = s;
            xtx[(j, i)] = s;
        }
    }

    let svd = xtx.clone().svd(false, false);
    let s_max = svd.singular_values.max();
    let s_min = svd.singular_values.min();
    if !(s_max > 0.0) || s_min <= SINGULAR_RTOL * s_max || !s_max.is_finite() {
        return Err(ArimaError::Degenerate(format!(
            "singular design ({k} regressors, condition {:.3e}); the series may be constant or perfectly collinear",
            if s_min > 0.0 { s_max / s_min } else { f64::INFINITY }
        )));
    }
    let beta = xtx
        .cholesky()
        .ok_or_else(|| ArimaError::Degenerate("normal equations are not positive definite".into()))?
        .solve(&xty);
    let coeffs: Vec<f64> = beta.iter().copied().collect();
    let intercept = y_mean - coeffs.iter().zip(&col_means).map(|(b, m)| b * m).sum::<f64>();
    Ok(LinearFit { coeffs, intercept })
}

/// Autoregressive fit result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArFit {
    pub coeffs: Vec<f64>,
    pub intercept: f64,
    /// Mean squared in-sample residual.
    pub sigma2: f64,
}

fn fit_ar_inner(series: &[f64], p: usize, with_intercept: bool) -> Result<ArFit, ArimaError> {
    if series.len() < (10 * p).max(1) || series.len() <= p {
        return Err(ArimaError::InvalidArgument(format!(
            "AR({p}) needs at least {} observations, got {}",
            (10 * p).max(p + 1),
            series.len()
        )));
    }
    let y = &series[p..];
    let columns: Vec<Vec<f64>> = (1..=p).map(|i| series[p - i..series.len() - i].to_vec()).collect();
    let fit = least_squares(y, &columns, with_intercept)?;
    let mut ssr = 0.0;
    for (t, yt) in y.iter().enumerate() {
        let pred = fit.intercept + fit.coeffs.iter().zip(&columns).map(|(a, c)| a * c[t]).sum::<f64>();
        ssr += (yt - pred).powi(2);
    }
    Ok(ArFit {
        coeffs: fit.coeffs,
        intercept: fit.intercept,
        sigma2: ssr / y.len() as f64,
    })
}

/// Ordinary least squares AR(p) with intercept. Needs at least `10·p`
/// observations.
pub fn fit_ar(series: &[f64], p: usize) -> Result<ArFit, ArimaError> {
    fit_ar_inner(series, p, true)
}

/// State at the end of the training series, enough to forecast without
/// re-supplying history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailState {
    /// Last `p` differenced values, oldest first.
    pub diffs: Vec<f64>,
    /// Last `q` residuals, oldest first.
    pub residuals: Vec<f64>,
    /// Last value of each difference level `0..d`.
    pub levels: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArimaModel {
    pub order: ArimaOrder,
    pub ar_coeffs: Vec<f64>,
    pub ma_coeffs: Vec<f64>,
    pub intercept: f64,
    pub sigma2: f64,
    pub tail_state: TailState,
}

impl ArimaModel {
    /// Builds a model from known coefficients with an empty tail state.
    pub fn from_coefficients(
        order: ArimaOrder,
        ar_coeffs: Vec<f64>,
        ma_coeffs: Vec<f64>,
        intercept: f64,
    ) -> Result<Self, ArimaError> {
        order.validate()?;
        if ar_coeffs.len() != order.p || ma_coeffs.len() != order.q {
            return Err(ArimaError::InvalidArgument(format!(
                "order {order} does not match {} AR and {} MA coefficients",
                ar_coeffs.len(),
                ma_coeffs.len()
            )));
        }
        Ok(ArimaModel {
            order,
            ar_coeffs,
            ma_coeffs,
            intercept,
            sigma2: 0.0,
            tail_state: TailState {
                diffs: vec![],
                residuals: vec![],
                levels: vec![],
            },
        })
    }

    /// One-step predictions of the differenced series and the matching
    /// residuals. Entries before index `p` have no prediction (NaN) and a
    /// zero residual.
    fn filter(&self, w: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let p = self.order.p;
        let mut preds = vec![f64::NAN; w.len()];
        let mut eps = vec![0.0; w.len()];
        for t in p..w.len() {
            let pred = self.predict_diff(&w[..t], &eps[..t]);
            preds[t] = pred;
            eps[t] = w[t] - pred;
        }
        (preds, eps)
    }

    /// Next differenced value given past differenced values and residuals.
    fn predict_diff(&self, w_past: &[f64], eps_past: &[f64]) -> f64 {
        let mut pred = self.intercept;
        for (i, a) in self.ar_coeffs.iter().enumerate() {
            pred += a * w_past[w_past.len() - 1 - i];
        }
        for (j, b) in self.ma_coeffs.iter().enumerate() {
            if let Some(e) = eps_past.len().checked_sub(j + 1).map(|k| eps_past[k]) {
                pred += b * e;
            }
        }
        pred
    }

    fn iterate(&self, mut w: Vec<f64>, mut eps: Vec<f64>, mut tails: Vec<f64>, n: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let pred = self.predict_diff(&w, &eps);
            w.push(pred);
            eps.push(0.0);
            out.push(undifference_step(&mut tails, pred));
        }
        out
    }

    /// Forecasts `n` steps past the end of the training series from the
    /// stored tail state.
    pub fn forecast_from_tail(&self, n: usize) -> Vec<f64> {
        let ts = &self.tail_state;
        self.iterate(ts.diffs.clone(), ts.residuals.clone(), ts.levels.clone(), n)
    }
}

/// Fits ARIMA(p, d, q) by two-stage least squares on the differenced series.
pub fn fit_arima(series: &[f64], order: ArimaOrder) -> Result<ArimaModel, ArimaError> {
    order.validate()?;
    let ArimaOrder { p, d, q } = order;
    if series.len() < order.min_train() {
        return Err(ArimaError::InvalidArgument(format!(
            "ARIMA{order} needs at least {} observations, got {}",
            order.min_train(),
            series.len()
        )));
    }
    let with_intercept = d == 0;
    let w = difference(series, d)?;

    let (ar_coeffs, ma_coeffs, intercept) = if q == 0 {
        let fit = fit_ar_inner(&w, p, with_intercept)?;
        (fit.coeffs, vec![], fit.intercept)
    } else {
        let long = LONG_AR_MAX.min(w.len() / 10).max(1);
        let long_fit = fit_ar_inner(&w, long, with_intercept)?;
        let mut eps_hat = vec![0.0; w.len()];
        for t in long..w.len() {
            let pred = long_fit.intercept
                + long_fit
                    .coeffs
                    .iter()
                    .enumerate()
                    .map(|(i, a)| a * w[t - 1 - i])
                    .sum::<f64>();
            eps_hat[t] = w[t] - pred;
        }
        let start = p.max(long + q);
        if w.len() <= start + p + q {
            return Err(ArimaError::InvalidArgument(format!(
                "series too short for the second stage of ARIMA{order}"
            )));
        }
        let y = &w[start..];
        let mut columns: Vec<Vec<f64>> = (1..=p).map(|i| w[start - i..w.len() - i].to_vec()).collect();
        columns.extend((1..=q).map(|j| eps_hat[start - j..w.len() - j].to_vec()));
        let fit = least_squares(y, &columns, with_intercept)?;
        let (ar, ma) = fit.coeffs.split_at(p);
        (ar.to_vec(), ma.to_vec(), fit.intercept)
    };

    let mut model = ArimaModel::from_coefficients(order, ar_coeffs, ma_coeffs, intercept)?;
    let (_, eps) = model.filter(&w);
    let used = &eps[p.min(eps.len())..];
    model.sigma2 = used.iter().map(|e| e * e).sum::<f64>() / used.len().max(1) as f64;
    model.tail_state = TailState {
        diffs: w[w.len() - p..].to_vec(),
        residuals: eps[eps.len() - q.min(eps.len())..].to_vec(),
        levels: level_tails(series, d),
    };
    Ok(model)
}

/// In-sample one-step residuals of `model` on `series` (differenced scale),
/// starting at the first index with a full set of AR lags.
pub fn residuals(model: &ArimaModel, series: &[f64]) -> Result<Vec<f64>, ArimaError> {
    let w = difference(series, model.order.d)?;
    let (_, eps) = model.filter(&w);
    Ok(eps[model.order.p.min(eps.len())..].to_vec())
}

/// Iterated forecast of `n` steps after `history`: future shocks are zero and
/// predicted differences are fed back as lags, then integrated to the
/// original scale.
pub fn forecast(model: &ArimaModel, history: &[f64], n: usize) -> Result<Vec<f64>, ArimaError> {
    let need = model.order.min_history();
    if history.len() < need {
        return Err(ArimaError::InvalidArgument(format!(
            "ARIMA{} forecast needs {need} observations of history, got {}",
            model.order,
            history.len()
        )));
    }
    let d = model.order.d;
    let w = difference(history, d)?;
    let (_, eps) = model.filter(&w);
    Ok(model.iterate(w, eps, level_tails(history, d), n))
}

/// Teacher-forced one-step predictions for every index in `start..series.len()`,
/// each using only `series[..t]`. Equivalent to `forecast(model, &series[..t], 1)`
/// for each `t`, in a single pass.
pub fn one_step_predictions(model: &ArimaModel, series: &[f64], start: usize) -> Result<Vec<f64>, ArimaError> {
    let d = model.order.d;
    let need = model.order.min_history().max(model.order.p + d);
    if start < need || start > series.len() {
        return Err(ArimaError::InvalidArgument(format!(
            "one-step evaluation from index {start} needs {need} prior observations within a series of {}",
            series.len()
        )));
    }
    let w = difference(series, d)?;
    let (preds, _) = model.filter(&w);
    let levels: Vec<Vec<f64>> = (0..d).map(|k| difference(series, k).expect("d < len")).collect();
    Ok((start..series.len())
        .map(|t| {
            // tails as of t-1: level k has its value for time t-1 at index t-1-k
            let mut tails: Vec<f64> = (0..d).map(|k| levels[k][t - 1 - k]).collect();
            undifference_step(&mut tails, preds[t - d])
        })
        .collect())
}

/// Last observed value repeated `n` times.
pub fn persistence_forecast(history: &[f64], n: usize) -> Result<Vec<f64>, ArimaError> {
    let last = history
        .last()
        .ok_or_else(|| ArimaError::InvalidArgument("persistence needs at least one observation".into()))?;
    Ok(vec![*last; n])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub order: ArimaOrder,
    /// Validation RMSE; `+∞` when the fit failed.
    pub rmse: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSearch {
    pub best: ArimaOrder,
    /// One row per grid entry, in grid order.
    pub table: Vec<GridRow>,
}

impl GridSearch {
    pub fn best_rmse(&self) -> f64 {
        self.table
            .iter()
            .find(|r| r.order == self.best)
            .map_or(f64::INFINITY, |r| r.rmse)
    }

    /// Grid table CSV: `p,d,q,rmse`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("p,d,q,rmse\n");
        for r in &self.table {
            out.push_str(&format!("{},{},{},{}\n", r.order.p, r.order.d, r.order.q, r.rmse));
        }
        out
    }
}

fn evaluate_order(train: &[f64], validate: &[f64], order: ArimaOrder) -> Result<f64, ArimaError> {
    let model = fit_arima(train, order)?;
    let series: Vec<f64> = train.iter().chain(validate).copied().collect();
    let preds = one_step_predictions(&model, &series, train.len())?;
    let err = rmse(&preds, validate).map_err(|e| ArimaError::InvalidArgument(e.to_string()))?;
    if err.is_finite() {
        Ok(err)
    } else {
        Err(ArimaError::Degenerate("validation forecasts diverged".into()))
    }
}

/// Fits every order on `train` and scores teacher-forced one-step forecasts
/// over `validate`. The best order minimizes RMSE, then `p+d+q`, then
/// `(p, d, q)` lexicographically, so the result does not depend on grid order.
pub fn grid_search(train: &[f64], validate: &[f64], grid: &[ArimaOrder]) -> Result<GridSearch, ArimaError> {
    if grid.is_empty() {
        return Err(ArimaError::InvalidArgument("empty grid".into()));
    }
    if validate.is_empty() {
        return Err(ArimaError::InvalidArgument("empty validation span".into()));
    }
    let table: Vec<GridRow> = grid
        .par_iter()
        .map(|order| match evaluate_order(train, validate, *order) {
            Ok(rmse) => GridRow { order: *order, rmse, error: None },
            Err(e) => GridRow {
                order: *order,
                rmse: f64::INFINITY,
                error: Some(e.to_string()),
            },
        })
        .collect();
    let best = table
        .iter()
        .filter(|r| r.error.is_none())
        .min_by(|a, b| {
            a.rmse
                .total_cmp(&b.rmse)
                .then_with(|| a.order.rank_key().cmp(&b.order.rank_key()))
        })
        .map(|r| r.order);
    match best {
        Some(best) => Ok(GridSearch { best, table }),
        None => Err(ArimaError::SearchFailed(
            table
                .into_iter()
                .map(|r| (r.order, r.error.unwrap_or_default()))
                .collect(),
        )),
    }
}
