//! Technical indicator computation.
//!
//! Two implementations exist on purpose. `compute_indicator` evaluates one
//! index directly from the definitions and is the reference. The `*_col`
//! functions compute whole columns incrementally for the evaluator's hot
//! path. A property test pins them against each other.
//!
//! Conventions, fixed across both paths:
//! - EMA(span) seeds with the SMA of the first `span` values, then applies
//!   alpha = 2/(span+1) recursively. Values before the seed are warmup.
//! - RSI uses simple rolling means of gains and losses over `period`
//!   deltas. avg_gain = avg_loss = 0 yields 50; avg_loss = 0 yields 100;
//!   avg_gain = 0 yields 0.
//! - Stochastic %K with a zero high-low range is 50. %D is the SMA of %K
//!   over d_period; J = 3K - 2D. The triple warms up together once D is
//!   defined.
//! - bollinger_z and rolling_vol use the sample standard deviation (n-1);
//!   a zero deviation yields z = 0. rolling_vol is over simple returns and
//!   is not annualized.
//! - momentum(n) = close[t]/close[t-n] - 1.

use super::program::{IndicatorKind, IndicatorSpec};
use crate::data::PriceSeries;

/// One indicator observation. Stochastic exposes all three components.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum IndicatorOutput {
    Scalar(f64),
    Kdj { k: f64, d: f64, j: f64 },
}

/// Reference implementation: value at one index, straight from the
/// definitions, O(index) per call. `None` means warmup.
pub fn compute_indicator(
    spec: &IndicatorSpec,
    series: &PriceSeries,
    date_index: usize,
) -> Option<IndicatorOutput> {
    assert!(date_index < series.bars.len(), "date_index out of series");
    let closes: Vec<f64> = series.bars[..=date_index].iter().map(|b| b.close).collect();
    let t = date_index;
    match spec.kind {
        IndicatorKind::Sma => {
            let n = spec.params[0] as usize;
            if t + 1 < n {
                return None;
            }
            Some(IndicatorOutput::Scalar(
                closes[t + 1 - n..=t].iter().sum::<f64>() / n as f64,
            ))
        }
        IndicatorKind::Ema => Some(IndicatorOutput::Scalar(ema_at(
            &closes,
            spec.params[0] as usize,
            t,
        )?)),
        IndicatorKind::Rsi => {
            let n = spec.params[0] as usize;
            if t < n {
                return None;
            }
            let mut gain = 0.0;
            let mut loss = 0.0;
            for i in t - n + 1..=t {
                let delta = closes[i] - closes[i - 1];
                if delta > 0.0 {
                    gain += delta;
                } else {
                    loss -= delta;
                }
            }
            let avg_gain = gain / n as f64;
            let avg_loss = loss / n as f64;
            Some(IndicatorOutput::Scalar(rsi_from_means(avg_gain, avg_loss)))
        }
        IndicatorKind::MacdHist => {
            let fast = spec.params[0] as usize;
            let slow = spec.params[1] as usize;
            let signal = spec.params[2] as usize;
            // macd line is defined from index slow-1 onward
            if t + 1 < slow + signal - 1 {
                return None;
            }
            let macd_line: Vec<f64> = (slow - 1..=t)
                .map(|i| ema_at(&closes, fast, i).unwrap() - ema_at(&closes, slow, i).unwrap())
                .collect();
            let sig = ema_at(&macd_line, signal, macd_line.len() - 1)?;
            Some(IndicatorOutput::Scalar(macd_line[macd_line.len() - 1] - sig))
        }
        IndicatorKind::BollingerZ => {
            let n = spec.params[0] as usize;
            if t + 1 < n {
                return None;
            }
            let window = &closes[t + 1 - n..=t];
            let mean = window.iter().sum::<f64>() / n as f64;
            let var =
                window.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
            let sd = var.sqrt();
            Some(IndicatorOutput::Scalar(if sd == 0.0 {
                0.0
            } else {
                (closes[t] - mean) / sd
            }))
        }
        IndicatorKind::StochasticKdj => {
            let k_period = spec.params[0] as usize;
            let d_period = spec.params[1] as usize;
            if t + 1 < k_period + d_period - 1 {
                return None;
            }
            let k_at = |i: usize| -> f64 {
                let lo = series.bars[i + 1 - k_period..=i]
                    .iter()
                    .map(|b| b.low)
                    .fold(f64::INFINITY, f64::min);
                let hi = series.bars[i + 1 - k_period..=i]
                    .iter()
                    .map(|b| b.high)
                    .fold(f64::NEG_INFINITY, f64::max);
                if hi == lo {
                    50.0
                } else {
                    100.0 * (series.bars[i].close - lo) / (hi - lo)
                }
            };
            let k = k_at(t);
            let d = (t + 1 - d_period..=t).map(k_at).sum::<f64>() / d_period as f64;
            Some(IndicatorOutput::Kdj {
                k,
                d,
                j: 3.0 * k - 2.0 * d,
            })
        }
        IndicatorKind::RollingVol => {
            let n = spec.params[0] as usize;
            if t < n {
                return None;
            }
            let returns: Vec<f64> = (t - n + 1..=t)
                .map(|i| closes[i] / closes[i - 1] - 1.0)
                .collect();
            let mean = returns.iter().sum::<f64>() / n as f64;
            let var = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>()
                / (n as f64 - 1.0);
            Some(IndicatorOutput::Scalar(var.sqrt()))
        }
        IndicatorKind::Momentum => {
            let n = spec.params[0] as usize;
            if t < n {
                return None;
            }
            Some(IndicatorOutput::Scalar(closes[t] / closes[t - n] - 1.0))
        }
    }
}

fn rsi_from_means(avg_gain: f64, avg_loss: f64) -> f64 {
    if avg_gain == 0.0 && avg_loss == 0.0 {
        50.0
    } else if avg_loss == 0.0 {
        100.0
    } else if avg_gain == 0.0 {
        0.0
    } else {
        100.0 - 100.0 / (1.0 + avg_gain / avg_loss)
    }
}

/// EMA of `values[..=t]` with the SMA-of-first-`span` seed.
fn ema_at(values: &[f64], span: usize, t: usize) -> Option<f64> {
    if t + 1 < span {
        return None;
    }
    let alpha = 2.0 / (span as f64 + 1.0);
    let mut ema = values[..span].iter().sum::<f64>() / span as f64;
    for v in &values[span..=t] {
        ema = alpha * v + (1.0 - alpha) * ema;
    }
    Some(ema)
}

/// Per-component columns for one indicator over indices `0..=end`.
/// Multi-valued kinds return one column per component (k, d, j order).
pub fn compute_columns(
    spec: &IndicatorSpec,
    series: &PriceSeries,
    end: usize,
) -> Vec<Vec<Option<f64>>> {
    let closes: Vec<f64> = series.bars[..=end].iter().map(|b| b.close).collect();
    match spec.kind {
        IndicatorKind::Sma => vec![sma_col(&closes, spec.params[0] as usize)],
        IndicatorKind::Ema => vec![ema_col(&closes, spec.params[0] as usize)],
        IndicatorKind::Rsi => vec![rsi_col(&closes, spec.params[0] as usize)],
        IndicatorKind::MacdHist => vec![macd_hist_col(
            &closes,
            spec.params[0] as usize,
            spec.params[1] as usize,
            spec.params[2] as usize,
        )],
        IndicatorKind::BollingerZ => vec![bollinger_z_col(&closes, spec.params[0] as usize)],
        IndicatorKind::StochasticKdj => {
            let (k, d, j) = kdj_cols(
                series,
                end,
                spec.params[0] as usize,
                spec.params[1] as usize,
            );
            vec![k, d, j]
        }
        IndicatorKind::RollingVol => vec![rolling_vol_col(&closes, spec.params[0] as usize)],
        IndicatorKind::Momentum => vec![momentum_col(&closes, spec.params[0] as usize)],
    }
}

fn sma_col(closes: &[f64], n: usize) -> Vec<Option<f64>> {
    let mut out = vec![None; closes.len()];
    let mut sum = 0.0;
    for (i, &c) in closes.iter().enumerate() {
        sum += c;
        if i >= n {
            sum -= closes[i - n];
        }
        if i + 1 >= n {
            out[i] = Some(sum / n as f64);
        }
    }
    out
}

fn ema_col(closes: &[f64], span: usize) -> Vec<Option<f64>> {
    let mut out = vec![None; closes.len()];
    if closes.len() < span {
        return out;
    }
    let alpha = 2.0 / (span as f64 + 1.0);
    let mut ema = closes[..span].iter().sum::<f64>() / span as f64;
    out[span - 1] = Some(ema);
    for i in span..closes.len() {
        ema = alpha * closes[i] + (1.0 - alpha) * ema;
        out[i] = Some(ema);
    }
    out
}

fn rsi_col(closes: &[f64], n: usize) -> Vec<Option<f64>> {
    let mut out = vec![None; closes.len()];
    let mut gains = vec![0.0; closes.len()];
    let mut losses = vec![0.0; closes.len()];
    for i in 1..closes.len() {
        let delta = closes[i] - closes[i - 1];
        gains[i] = delta.max(0.0);
        losses[i] = (-delta).max(0.0);
    }
    let mut gsum = 0.0;
    let mut lsum = 0.0;
    for i in 1..closes.len() {
        gsum += gains[i];
        lsum += losses[i];
        if i > n {
            gsum -= gains[i - n];
            lsum -= losses[i - n];
        }
        if i >= n {
            out[i] = Some(rsi_from_means(gsum / n as f64, lsum / n as f64));
        }
    }
    out
}

fn macd_hist_col(closes: &[f64], fast: usize, slow: usize, signal: usize) -> Vec<Option<f64>> {
    let fast_col = ema_col(closes, fast);
    let slow_col = ema_col(closes, slow);
    let macd_line: Vec<f64> = (slow - 1..closes.len())
        .map(|i| fast_col[i].unwrap() - slow_col[i].unwrap())
        .collect();
    let sig = ema_col(&macd_line, signal);
    let mut out = vec![None; closes.len()];
    for (rel, s) in sig.iter().enumerate() {
        if let Some(s) = s {
            out[rel + slow - 1] = Some(macd_line[rel] - s);
        }
    }
    out
}

fn bollinger_z_col(closes: &[f64], n: usize) -> Vec<Option<f64>> {
    let mut out = vec![None; closes.len()];
    for i in 0..closes.len() {
        if i + 1 < n {
            continue;
        }
        let window = &closes[i + 1 - n..=i];
        let mean = window.iter().sum::<f64>() / n as f64;
        let var = window.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        let sd = var.sqrt();
        out[i] = Some(if sd == 0.0 { 0.0 } else { (closes[i] - mean) / sd });
    }
    out
}

fn kdj_cols(
    series: &PriceSeries,
    end: usize,
    k_period: usize,
    d_period: usize,
) -> (Vec<Option<f64>>, Vec<Option<f64>>, Vec<Option<f64>>) {
    let len = end + 1;
    let mut k_raw = vec![None; len];
    for i in 0..len {
        if i + 1 < k_period {
            continue;
        }
        let window = &series.bars[i + 1 - k_period..=i];
        let lo = window.iter().map(|b| b.low).fold(f64::INFINITY, f64::min);
        let hi = window
            .iter()
            .map(|b| b.high)
            .fold(f64::NEG_INFINITY, f64::max);
        k_raw[i] = Some(if hi == lo {
            50.0
        } else {
            100.0 * (series.bars[i].close - lo) / (hi - lo)
        });
    }
    let mut k = vec![None; len];
    let mut d = vec![None; len];
    let mut j = vec![None; len];
    for i in 0..len {
        // the triple is exposed together once %D has its full window
        if i + 1 < k_period + d_period - 1 {
            continue;
        }
        let dv = (i + 1 - d_period..=i)
            .map(|x| k_raw[x].unwrap())
            .sum::<f64>()
            / d_period as f64;
        let kv = k_raw[i].unwrap();
        k[i] = Some(kv);
        d[i] = Some(dv);
        j[i] = Some(3.0 * kv - 2.0 * dv);
    }
    (k, d, j)
}

fn rolling_vol_col(closes: &[f64], n: usize) -> Vec<Option<f64>> {
    let mut out = vec![None; closes.len()];
    for i in 0..closes.len() {
        if i < n {
            continue;
        }
        let returns: Vec<f64> = (i - n + 1..=i)
            .map(|x| closes[x] / closes[x - 1] - 1.0)
            .collect();
        let mean = returns.iter().sum::<f64>() / n as f64;
        let var = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        out[i] = Some(var.sqrt());
    }
    out
}

fn momentum_col(closes: &[f64], n: usize) -> Vec<Option<f64>> {
    let mut out = vec![None; closes.len()];
    for i in n..closes.len() {
        out[i] = Some(closes[i] / closes[i - n] - 1.0);
    }
    out
}

/// Index of the indicator's first defined value within a series.
pub fn warmup_len(spec: &IndicatorSpec) -> usize {
    match spec.kind {
        IndicatorKind::Sma | IndicatorKind::Ema | IndicatorKind::BollingerZ => {
            spec.params[0] as usize - 1
        }
        IndicatorKind::Rsi | IndicatorKind::RollingVol | IndicatorKind::Momentum => {
            spec.params[0] as usize
        }
        IndicatorKind::MacdHist => (spec.params[1] + spec.params[2] - 2) as usize,
        IndicatorKind::StochasticKdj => (spec.params[0] + spec.params[1] - 2) as usize,
    }
}
