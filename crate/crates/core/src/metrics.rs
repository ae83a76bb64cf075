//! Performance statistics over daily equity curves.
//!
//! All ratio metrics annualize with sqrt(252) and use the sample standard
//! deviation (n-1 denominator). Degenerate inputs (zero variance, no
//! negative returns, zero tracking error) yield `None` rather than an
//! infinity so downstream scoring can treat them as invalid.

use serde::{Deserialize, Serialize};

pub const TRADING_DAYS_PER_YEAR: f64 = 252.0;

/// Metrics for one backtest. Ratio fields are `None` when undefined.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub sharpe: Option<f64>,
    pub sortino: Option<f64>,
    pub information_ratio: Option<f64>,
    /// Largest peak-to-trough loss, expressed as a fraction <= 0.
    pub max_drawdown: f64,
    /// Final equity over initial equity, minus one.
    pub cumulative_return: f64,
    /// Fills executed over the run.
    pub num_transactions: u64,
}

impl MetricSet {
    /// A candidate is scoreable only when every ratio is defined.
    pub fn valid(&self) -> bool {
        self.sharpe.is_some() && self.sortino.is_some() && self.information_ratio.is_some()
    }

    /// Sum of annualized sharpe, information ratio, and the (negative)
    /// max drawdown fraction. `None` when any component is undefined.
    pub fn combined_score(&self) -> Option<f64> {
        Some(combined_score(self.sharpe?, self.information_ratio?, self.max_drawdown))
    }
}

/// Additive fitness: sharpe + information ratio + max drawdown.
/// Drawdown enters as a negative fraction, so deeper losses lower the sum.
pub fn combined_score(sharpe: f64, information_ratio: f64, max_drawdown: f64) -> f64 {
    sharpe + information_ratio + max_drawdown
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n-1). `None` for fewer than two points.
fn sample_std(xs: &[f64]) -> Option<f64> {
    if xs.len() < 2 {
        return None;
    }
    let m = mean(xs);
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
    Some(var.sqrt())
}

/// Daily simple returns of an equity curve: r[t] = e[t+1]/e[t] - 1.
/// Output has one fewer element than the input.
pub fn simple_returns(equity: &[f64]) -> Vec<f64> {
    equity.windows(2).map(|w| w[1] / w[0] - 1.0).collect()
}

/// Annualized Sharpe ratio of daily returns against a constant daily
/// risk-free rate. `None` when volatility is zero or undefined.
pub fn sharpe_ratio(returns: &[f64], risk_free_daily: f64) -> Option<f64> {
    if returns.is_empty() {
        return None;
    }
    let excess: Vec<f64> = returns.iter().map(|r| r - risk_free_daily).collect();
    let sd = sample_std(&excess)?;
    if sd == 0.0 {
        return None;
    }
    Some(mean(&excess) / sd * TRADING_DAYS_PER_YEAR.sqrt())
}

/// Annualized Sortino ratio. Downside deviation is the root mean square
/// of negative returns with the count of negative days as denominator.
/// `None` when no day is negative.
pub fn sortino_ratio(returns: &[f64], risk_free_daily: f64) -> Option<f64> {
    if returns.is_empty() {
        return None;
    }
    let excess: Vec<f64> = returns.iter().map(|r| r - risk_free_daily).collect();
    let neg: Vec<f64> = excess.iter().copied().filter(|r| *r < 0.0).collect();
    if neg.is_empty() {
        return None;
    }
    let dd = (neg.iter().map(|r| r * r).sum::<f64>() / neg.len() as f64).sqrt();
    if dd == 0.0 {
        return None;
    }
    Some(mean(&excess) / dd * TRADING_DAYS_PER_YEAR.sqrt())
}

/// Annualized information ratio of returns against a benchmark return
/// series of equal length. `None` when tracking error is zero.
pub fn information_ratio(returns: &[f64], benchmark: &[f64]) -> Option<f64> {
    assert_eq!(
        returns.len(),
        benchmark.len(),
        "active returns need matched series"
    );
    if returns.is_empty() {
        return None;
    }
    let active: Vec<f64> = returns.iter().zip(benchmark).map(|(r, b)| r - b).collect();
    let te = sample_std(&active)?;
    if te == 0.0 {
        return None;
    }
    Some(mean(&active) / te * TRADING_DAYS_PER_YEAR.sqrt())
}

/// Maximum drawdown of an equity curve as a fraction <= 0.
/// Single pass against the running peak.
pub fn max_drawdown(equity: &[f64]) -> f64 {
    let mut peak = f64::NEG_INFINITY;
    let mut worst: f64 = 0.0;
    for &e in equity {
        if e > peak {
            peak = e;
        }
        let dd = e / peak - 1.0;
        if dd < worst {
            worst = dd;
        }
    }
    worst
}

/// Cumulative return over a curve: last/first - 1.
pub fn cumulative_return(equity: &[f64]) -> f64 {
    if equity.is_empty() {
        return 0.0;
    }
    equity[equity.len() - 1] / equity[0] - 1.0
}

/// Compute the full metric set for an equity curve against a benchmark
/// return series (length = equity.len() - 1).
pub fn compute_metrics(
    equity: &[f64],
    benchmark_returns: &[f64],
    risk_free_daily: f64,
    num_transactions: u64,
) -> MetricSet {
    let returns = simple_returns(equity);
    MetricSet {
        sharpe: sharpe_ratio(&returns, risk_free_daily),
        sortino: sortino_ratio(&returns, risk_free_daily),
        information_ratio: information_ratio(&returns, benchmark_returns),
        max_drawdown: max_drawdown(equity),
        cumulative_return: cumulative_return(equity),
        num_transactions,
    }
}
