//! Rolling-window maximum-Sharpe portfolio backtest over OHLC panels.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::interval::{bound_covariances, CovariancePair, IntervalMatrix};
use crate::selection::{lambda_grid, select_lambda};
use crate::solver::SolverConfig;

#[derive(Debug, Error)]
pub enum BacktestError {
    #[error("panel is empty after cleaning")]
    EmptyPanel,
    #[error("malformed row at line {0}: {1}")]
    MalformedRow(usize, String),
    #[error("open price must be positive: {ticker} on {date}")]
    NonPositiveOpen { ticker: String, date: NaiveDate },
    #[error("denominator 1' Omega mu is numerically zero")]
    DegenerateDenominator,
    #[error("panel spans {0} days; need at least {1}")]
    PanelTooShort(usize, usize),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Balanced OHLC panel: one row per trading day, one column per asset.
#[derive(Debug, Clone)]
pub struct OhlcPanel {
    pub dates: Vec<NaiveDate>,
    pub tickers: Vec<String>,
    pub open: DMatrix<f64>,
    pub high: DMatrix<f64>,
    pub low: DMatrix<f64>,
    pub close: DMatrix<f64>,
    /// Tickers dropped during cleaning and why.
    pub warnings: Vec<String>,
}

#[derive(Debug, Deserialize)]
struct OhlcRow {
    date: NaiveDate,
    ticker: String,
    open: f64,
    high: f64,
    low: f64,
    close: f64,
}

/// Load a long-format OHLC CSV (`date,ticker,open,high,low,close`), drop tickers
/// with incomplete or invalid records, and align the survivors on the full set of
/// trading days.
pub fn load_ohlc(path: &Path) -> Result<OhlcPanel, BacktestError> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut cells: BTreeMap<String, BTreeMap<NaiveDate, (f64, f64, f64, f64)>> = BTreeMap::new();
    let mut all_dates: BTreeSet<NaiveDate> = BTreeSet::new();
    let mut bad_tickers: BTreeMap<String, String> = BTreeMap::new();

    for (idx, result) in reader.deserialize::<OhlcRow>().enumerate() {
        let line = idx + 2; // header is line 1
        let row = result
            .map_err(|e| BacktestError::MalformedRow(line, e.to_string()))?;
        if !(row.open.is_finite()
            && row.high.is_finite()
            && row.low.is_finite()
            && row.close.is_finite())
        {
            return Err(BacktestError::MalformedRow(line, "non-finite price".into()));
        }
        let per_ticker = cells.entry(row.ticker.clone()).or_default();
        if per_ticker.contains_key(&row.date) {
            return Err(BacktestError::MalformedRow(
                line,
                format!("duplicate (date, ticker) pair: {} {}", row.date, row.ticker),
            ));
        }
        if row.low > row.open.min(row.close) || row.high < row.open.max(row.close) {
            bad_tickers
                .entry(row.ticker.clone())
                .or_insert_with(|| format!("inconsistent OHLC on {}", row.date));
        }
        per_ticker.insert(row.date, (row.open, row.high, row.low, row.close));
        all_dates.insert(row.date);
    }

    let dates: Vec<NaiveDate> = all_dates.into_iter().collect();
    let mut tickers = Vec::new();
    let mut warnings = Vec::new();
    for (ticker, per_date) in &cells {
        if let Some(reason) = bad_tickers.get(ticker) {
            warnings.push(format!("dropped {ticker}: {reason}"));
            continue;
        }
        if dates.iter().all(|d| per_date.contains_key(d)) {
            tickers.push(ticker.clone());
        } else {
            warnings.push(format!("dropped {ticker}: incomplete price record"));
        }
    }
    if tickers.is_empty() || dates.is_empty() {
        return Err(BacktestError::EmptyPanel);
    }

    let (t, p) = (dates.len(), tickers.len());
    let mut open = DMatrix::zeros(t, p);
    let mut high = DMatrix::zeros(t, p);
    let mut low = DMatrix::zeros(t, p);
    let mut close = DMatrix::zeros(t, p);
    for (j, ticker) in tickers.iter().enumerate() {
        let per_date = &cells[ticker];
        for (i, date) in dates.iter().enumerate() {
            let (o, h, l, c) = per_date[date];
            open[(i, j)] = o;
            high[(i, j)] = h;
            low[(i, j)] = l;
            close[(i, j)] = c;
        }
    }
    Ok(OhlcPanel { dates, tickers, open, high, low, close, warnings })
}

/// Intraday returns, each price normalized by the day's open.
#[derive(Debug, Clone)]
pub struct ReturnPanel {
    pub r_close: DMatrix<f64>,
    pub r_high: DMatrix<f64>,
    pub r_low: DMatrix<f64>,
    pub r_mid: DMatrix<f64>,
}

pub fn standardize_intraday(panel: &OhlcPanel) -> Result<ReturnPanel, BacktestError> {
    let (t, p) = panel.open.shape();
    let mut r_close = DMatrix::zeros(t, p);
    let mut r_high = DMatrix::zeros(t, p);
    let mut r_low = DMatrix::zeros(t, p);
    let mut r_mid = DMatrix::zeros(t, p);
    for i in 0..t {
        for j in 0..p {
            let o = panel.open[(i, j)];
            if o <= 0.0 {
                return Err(BacktestError::NonPositiveOpen {
                    ticker: panel.tickers[j].clone(),
                    date: panel.dates[i],
                });
            }
            r_close[(i, j)] = panel.close[(i, j)] / o - 1.0;
            r_high[(i, j)] = panel.high[(i, j)] / o - 1.0;
            r_low[(i, j)] = panel.low[(i, j)] / o - 1.0;
            r_mid[(i, j)] = (panel.high[(i, j)] + panel.low[(i, j)]) / (2.0 * o) - 1.0;
        }
    }
    Ok(ReturnPanel { r_close, r_high, r_low, r_mid })
}

/// The six portfolio strategies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    OneOverN,
    Close,
    High,
    Low,
    Mid,
    Interval,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 6] = [
        StrategyKind::OneOverN,
        StrategyKind::Close,
        StrategyKind::High,
        StrategyKind::Low,
        StrategyKind::Mid,
        StrategyKind::Interval,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            StrategyKind::OneOverN => "1/N",
            StrategyKind::Close => "close",
            StrategyKind::High => "high",
            StrategyKind::Low => "low",
            StrategyKind::Mid => "mid",
            StrategyKind::Interval => "interval",
        }
    }

    pub fn parse(name: &str) -> Option<StrategyKind> {
        match name.to_ascii_lowercase().as_str() {
            "1/n" | "one_over_n" | "naive" => Some(StrategyKind::OneOverN),
            "close" | "standard" => Some(StrategyKind::Close),
            "high" => Some(StrategyKind::High),
            "low" => Some(StrategyKind::Low),
            "mid" => Some(StrategyKind::Mid),
            "interval" => Some(StrategyKind::Interval),
            _ => None,
        }
    }
}

/// Maximum-Sharpe weights w = Omega mu / 1'(Omega mu). Weights may be negative.
pub fn max_sharpe_weights(
    mu: &DVector<f64>,
    omega: &DMatrix<f64>,
) -> Result<DVector<f64>, BacktestError> {
    let raw = omega * mu;
    let denom: f64 = raw.sum();
    if denom.abs() < 1e-12 {
        return Err(BacktestError::DegenerateDenominator);
    }
    Ok(raw / denom)
}

/// One rebalance window.
#[derive(Debug, Clone, Serialize)]
pub struct WindowRecord {
    pub start_date: NaiveDate,
    pub end_date: NaiveDate,
    pub weights: Vec<f64>,
    pub daily_returns: Vec<f64>,
    /// True when estimation failed and weights were carried forward.
    pub carried_forward: bool,
    pub lambda_selected: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BacktestReport {
    pub strategy: String,
    pub tickers: Vec<String>,
    pub est_window: usize,
    pub hold: usize,
    pub windows: Vec<WindowRecord>,
}

#[derive(Debug, Clone)]
pub struct BacktestConfig {
    pub est_window: usize,
    pub hold: usize,
    pub grid_count: usize,
    pub grid_ratio: f64,
    pub max_sweeps: usize,
}

impl Default for BacktestConfig {
    fn default() -> Self {
        Self { est_window: 252, hold: 21, grid_count: 20, grid_ratio: 0.01, max_sweeps: 100 }
    }
}

fn column_means(m: &DMatrix<f64>) -> DVector<f64> {
    let n = m.nrows() as f64;
    DVector::from_iterator(m.ncols(), (0..m.ncols()).map(|j| m.column(j).sum() / n))
}

fn estimate_omega(
    cov: &CovariancePair,
    n: usize,
    cfg: &BacktestConfig,
) -> Result<(DMatrix<f64>, f64), BacktestError> {
    let grid = lambda_grid(&cov.pooled, cfg.grid_count, cfg.grid_ratio);
    let mut solver_cfg = SolverConfig::new(grid.values[0]);
    solver_cfg.max_sweeps = cfg.max_sweeps;
    let path = select_lambda(cov, &grid.values, n, &solver_cfg)
        .map_err(|_| BacktestError::DegenerateDenominator)?;
    Ok((path.selected().theta_hat.clone(), path.selected_lambda()))
}

/// Run the rolling backtest for one strategy. Estimation uses the trailing
/// `est_window` days; weights are held fixed for `hold` days of close-to-close
/// returns, then the window rolls forward. Failed windows carry the previous
/// weights (the first failure falls back to 1/N).
pub fn rolling_backtest(
    panel: &OhlcPanel,
    strategy: StrategyKind,
    cfg: &BacktestConfig,
) -> Result<BacktestReport, BacktestError> {
    let t = panel.dates.len();
    let p = panel.tickers.len();
    if t < cfg.est_window + cfg.hold {
        return Err(BacktestError::PanelTooShort(t, cfg.est_window + cfg.hold));
    }
    let returns = standardize_intraday(panel)?;

    let mut windows = Vec::new();
    let mut prev_weights = DVector::from_element(p, 1.0 / p as f64);
    let mut rebalance = cfg.est_window;
    while rebalance + cfg.hold <= t {
        let est_range = (rebalance - cfg.est_window)..rebalance;
        let mut carried = false;
        let mut lambda_selected = None;

        let weights = if strategy == StrategyKind::OneOverN {
            DVector::from_element(p, 1.0 / p as f64)
        } else {
            let estimate = || -> Result<(DVector<f64>, f64), BacktestError> {
                let (source, mu) = match strategy {
                    StrategyKind::Close => {
                        let s = returns.r_close.rows(est_range.start, cfg.est_window).into_owned();
                        let mu = column_means(&s);
                        (s, mu)
                    }
                    StrategyKind::High => {
                        let s = returns.r_high.rows(est_range.start, cfg.est_window).into_owned();
                        let mu = column_means(&s);
                        (s, mu)
                    }
                    StrategyKind::Low => {
                        let s = returns.r_low.rows(est_range.start, cfg.est_window).into_owned();
                        let mu = column_means(&s);
                        (s, mu)
                    }
                    StrategyKind::Mid => {
                        let s = returns.r_mid.rows(est_range.start, cfg.est_window).into_owned();
                        let mu = column_means(&s);
                        (s, mu)
                    }
                    StrategyKind::Interval => {
                        let lo = returns.r_low.rows(est_range.start, cfg.est_window).into_owned();
                        let hi = returns.r_high.rows(est_range.start, cfg.est_window).into_owned();
                        let mid =
                            returns.r_mid.rows(est_range.start, cfg.est_window).into_owned();
                        let mu = column_means(&mid);
                        let x = IntervalMatrix::new(lo, hi)
                            .map_err(|_| BacktestError::DegenerateDenominator)?;
                        let cov = bound_covariances(&x)
                            .map_err(|_| BacktestError::DegenerateDenominator)?;
                        let (omega, lam) = estimate_omega(&cov, cfg.est_window, cfg)?;
                        let w = max_sharpe_weights(&mu, &omega)?;
                        return Ok((w, lam));
                    }
                    StrategyKind::OneOverN => unreachable!(),
                };
                // Point-valued strategies: graphical lasso on the source, realized
                // as a degenerate-interval fit (same objective at penalty lambda/2).
                let x = IntervalMatrix::degenerate(source)
                    .map_err(|_| BacktestError::DegenerateDenominator)?;
                let cov =
                    bound_covariances(&x).map_err(|_| BacktestError::DegenerateDenominator)?;
                let (omega, lam) = estimate_omega(&cov, cfg.est_window, cfg)?;
                let w = max_sharpe_weights(&mu, &omega)?;
                Ok((w, lam))
            };
            match estimate() {
                Ok((w, lam)) => {
                    lambda_selected = Some(lam);
                    w
                }
                Err(_) => {
                    carried = true;
                    prev_weights.clone()
                }
            }
        };

        // OOS close-to-close simple returns with fixed weights.
        let mut daily = Vec::with_capacity(cfg.hold);
        for d in rebalance..(rebalance + cfg.hold) {
            let mut r = 0.0;
            for j in 0..p {
                let ret = panel.close[(d, j)] / panel.close[(d - 1, j)] - 1.0;
                r += weights[j] * ret;
            }
            daily.push(r);
        }

        windows.push(WindowRecord {
            start_date: panel.dates[rebalance],
            end_date: panel.dates[rebalance + cfg.hold - 1],
            weights: weights.iter().cloned().collect(),
            daily_returns: daily,
            carried_forward: carried,
            lambda_selected,
        });
        prev_weights = weights;
        rebalance += cfg.hold;
    }
    Ok(BacktestReport {
        strategy: strategy.name().to_string(),
        tickers: panel.tickers.clone(),
        est_window: cfg.est_window,
        hold: cfg.hold,
        windows,
    })
}

/// Annualized performance. Per-block metrics are averaged across blocks; blocks
/// with zero volatility are excluded from the Sharpe average. Pooled whole-series
/// versions are also reported.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Performance {
    pub strategy: String,
    pub ann_return_mean: f64,
    pub ann_vol_mean: f64,
    /// Average of per-block Sharpe ratios; None if every block was undefined.
    pub ann_sharpe_mean: Option<f64>,
    pub blocks: usize,
    pub undefined_sharpe_blocks: usize,
    pub pooled_ann_return: f64,
    pub pooled_ann_vol: f64,
    pub pooled_ann_sharpe: Option<f64>,
}

const TRADING_DAYS: f64 = 252.0;

fn annualize(daily: &[f64]) -> (f64, f64, Option<f64>) {
    let n = daily.len() as f64;
    let mean = daily.iter().sum::<f64>() / n;
    let ann_return = mean * TRADING_DAYS;
    let ann_vol = if daily.len() < 2 {
        0.0
    } else {
        let var = daily.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0);
        var.sqrt() * TRADING_DAYS.sqrt()
    };
    // roundoff from constant return series counts as zero volatility
    let sharpe = if ann_vol > 1e-12 { Some(ann_return / ann_vol) } else { None };
    (ann_return, ann_vol, sharpe)
}

pub fn performance(report: &BacktestReport) -> Result<Performance, BacktestError> {
    if report.windows.is_empty() {
        return Err(BacktestError::EmptyPanel);
    }
    let mut returns = Vec::new();
    let mut vols = Vec::new();
    let mut sharpes = Vec::new();
    let mut undefined = 0;
    let mut pooled = Vec::new();
    for w in &report.windows {
        let (r, v, s) = annualize(&w.daily_returns);
        returns.push(r);
        vols.push(v);
        match s {
            Some(s) => sharpes.push(s),
            None => undefined += 1,
        }
        pooled.extend_from_slice(&w.daily_returns);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (pr, pv, ps) = annualize(&pooled);
    Ok(Performance {
        strategy: report.strategy.clone(),
        ann_return_mean: mean(&returns),
        ann_vol_mean: mean(&vols),
        ann_sharpe_mean: if sharpes.is_empty() { None } else { Some(mean(&sharpes)) },
        blocks: report.windows.len(),
        undefined_sharpe_blocks: undefined,
        pooled_ann_return: pr,
        pooled_ann_vol: pv,
        pooled_ann_sharpe: ps,
    })
}
