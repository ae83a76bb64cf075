//! Program evaluation: per-day target weights over a dataset view.
//!
//! Evaluation replays a small per-asset state machine from the view start:
//! exit rules and trailing stops are checked every day, entries and weight
//! computation happen only on rebalance days, and positions carry their
//! last computed weight in between. Indicators are computed on the
//! underlying universe's global indices, so lookbacks reach history before
//! the view start (a warm start), but never past the queried day.
//!
//! Precondition everywhere: the program has passed `Program::validate`.

use super::indicators::{compute_columns, warmup_len};
use super::program::{
    Accessor, CmpOp, Expr, Operand, Program, Rebalance, SizingRule, ZeroStrengthFallback,
};
use crate::data::DatasetView;
use chrono::Datelike;
use std::collections::BTreeMap;
use thiserror::Error;

/// A candidate failure, not a crash: the backtester converts this into a
/// failed-candidate outcome.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum EvaluationError {
    #[error("non-finite value from `{indicator}` for {symbol} while evaluating {rule}")]
    NonFinite {
        indicator: String,
        symbol: String,
        rule: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Side {
    Flat,
    Long,
    Short,
}

/// Incremental evaluator. The backtester drives it day by day; the pure
/// `evaluate_targets` entry point builds one per call.
pub struct Evaluator<'p> {
    program: &'p Program,
    view: DatasetView,
    symbols: Vec<String>,
    /// closes[sym][g] for g in 0..=g_end
    closes: Vec<Vec<f64>>,
    /// per symbol: binding name -> component columns (scalar: 1, kdj: 3)
    columns: Vec<BTreeMap<String, Vec<Vec<Option<f64>>>>>,
    /// rolling volatility used by inverse_volatility sizing
    sizing_vol: Option<Vec<Vec<Option<f64>>>>,
    /// first global index at which every declared indicator is defined
    tradable_from: usize,
    rebalance_days: Vec<bool>,
    sides: Vec<Side>,
    /// episode peak (long) or trough (short) close for trailing stops
    extremes: Vec<f64>,
    rows: Vec<Vec<f64>>,
}

impl<'p> Evaluator<'p> {
    pub fn new(program: &'p Program, view: &DatasetView) -> Self {
        let universe = view.universe();
        let g_end = view.global_index(view.len() - 1);
        let symbols: Vec<String> = universe.symbols().iter().map(|s| s.to_string()).collect();
        let closes: Vec<Vec<f64>> = universe
            .series
            .iter()
            .map(|s| s.bars[..=g_end].iter().map(|b| b.close).collect())
            .collect();

        let mut tradable_from = 0usize;
        let mut columns = Vec::with_capacity(symbols.len());
        for series in &universe.series {
            let mut per_symbol = BTreeMap::new();
            for (name, spec) in &program.indicator_defs {
                per_symbol.insert(name.clone(), compute_columns(spec, series, g_end));
            }
            columns.push(per_symbol);
        }
        for (_, spec) in &program.indicator_defs {
            tradable_from = tradable_from.max(warmup_len(spec));
        }

        let sizing_vol = match &program.sizing {
            SizingRule::InverseVolatility { lookback } => {
                let spec = super::program::IndicatorSpec::new(
                    super::program::IndicatorKind::RollingVol,
                    vec![*lookback],
                );
                tradable_from = tradable_from.max(warmup_len(&spec));
                Some(
                    universe
                        .series
                        .iter()
                        .map(|s| compute_columns(&spec, s, g_end).remove(0))
                        .collect(),
                )
            }
            _ => None,
        };

        let rebalance_days = (0..view.len())
            .map(|s| match program.rebalance {
                Rebalance::Daily => true,
                Rebalance::EveryNDays(n) => s % n as usize == 0,
                Rebalance::Monthly => {
                    s == 0 || view.date(s).month() != view.date(s - 1).month()
                }
            })
            .collect();

        let n = symbols.len();
        Self {
            program,
            view: view.clone(),
            symbols,
            closes,
            columns,
            sizing_vol,
            tradable_from,
            rebalance_days,
            sides: vec![Side::Flat; n],
            extremes: vec![0.0; n],
            rows: Vec::new(),
        }
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn is_rebalance_day(&self, t: usize) -> bool {
        self.rebalance_days[t]
    }

    fn operand_value(&self, op: &Operand, sym: usize, g: usize) -> Option<f64> {
        match op {
            Operand::Const(v) => Some(*v),
            Operand::Ref { name, accessor } => {
                let cols = self.columns[sym]
                    .get(name)
                    .expect("validated program references a declared indicator");
                let idx = match accessor {
                    None | Some(Accessor::K) => 0,
                    Some(Accessor::D) => 1,
                    Some(Accessor::J) => 2,
                };
                cols[idx][g]
            }
        }
    }

    fn checked_pair(
        &self,
        lhs: &Operand,
        rhs: &Operand,
        sym: usize,
        g: usize,
        rule: &str,
    ) -> Result<Option<(f64, f64)>, EvaluationError> {
        let (Some(l), Some(r)) = (
            self.operand_value(lhs, sym, g),
            self.operand_value(rhs, sym, g),
        ) else {
            return Ok(None);
        };
        for (v, op) in [(l, lhs), (r, rhs)] {
            if !v.is_finite() {
                let indicator = match op {
                    Operand::Ref { name, .. } => name.clone(),
                    Operand::Const(_) => "constant".to_string(),
                };
                return Err(EvaluationError::NonFinite {
                    indicator,
                    symbol: self.symbols[sym].clone(),
                    rule: rule.to_string(),
                });
            }
        }
        Ok(Some((l, r)))
    }

    fn truth(&self, e: &Expr, sym: usize, g: usize, rule: &str) -> Result<bool, EvaluationError> {
        match e {
            Expr::Always => Ok(true),
            Expr::Never => Ok(false),
            Expr::And(a, b) => Ok(self.truth(a, sym, g, rule)? && self.truth(b, sym, g, rule)?),
            Expr::Or(a, b) => Ok(self.truth(a, sym, g, rule)? || self.truth(b, sym, g, rule)?),
            Expr::Not(inner) => Ok(!self.truth(inner, sym, g, rule)?),
            Expr::Cmp { op, lhs, rhs } => {
                let Some((l, r)) = self.checked_pair(lhs, rhs, sym, g, rule)? else {
                    return Ok(false);
                };
                match op {
                    CmpOp::Gt => Ok(l > r),
                    CmpOp::Lt => Ok(l < r),
                    CmpOp::Ge => Ok(l >= r),
                    CmpOp::Le => Ok(l <= r),
                    CmpOp::CrossesAbove | CmpOp::CrossesBelow => {
                        if g == 0 {
                            return Ok(false);
                        }
                        let Some((pl, pr)) = self.checked_pair(lhs, rhs, sym, g - 1, rule)?
                        else {
                            return Ok(false);
                        };
                        Ok(match op {
                            CmpOp::CrossesAbove => l > r && pl <= pr,
                            _ => l < r && pl >= pr,
                        })
                    }
                }
            }
        }
    }

    fn strength_of(&self, sym: usize, g: usize) -> Result<f64, EvaluationError> {
        let Some(block) = &self.program.strength else {
            return Ok(1.0);
        };
        for (i, rule) in block.rules.iter().enumerate() {
            if self.truth(&rule.condition, sym, g, &format!("strength[{i}]"))? {
                return Ok(rule.value);
            }
        }
        Ok(block.default)
    }

    /// Sizing over the currently open sides, normalized so gross exposure
    /// is 1 (or `fraction` for fixed_fraction). Zero totals mean cash,
    /// except for the explicit equal-weight fallback.
    fn compute_weights(&self, g: usize, sides: &[Side]) -> Result<Vec<f64>, EvaluationError> {
        let n = self.symbols.len();
        let tradable = g >= self.tradable_from;
        let mut raw = vec![0.0f64; n];
        for sym in 0..n {
            if sides[sym] == Side::Flat {
                continue;
            }
            raw[sym] = match &self.program.sizing {
                SizingRule::EqualWeight | SizingRule::FixedFraction { .. } => 1.0,
                SizingRule::InverseVolatility { .. } => {
                    let col = &self.sizing_vol.as_ref().unwrap()[sym];
                    match col[g] {
                        Some(v) if v > 0.0 && v.is_finite() => 1.0 / v,
                        _ => 0.0,
                    }
                }
                SizingRule::SignalProportional { .. } => self.strength_of(sym, g)?,
                SizingRule::StaticValueWeight { shares } => shares
                    .iter()
                    .find(|(s, _)| *s == self.symbols[sym])
                    .map(|(_, count)| count * self.closes[sym][g])
                    .unwrap_or(0.0),
            };
        }
        let total: f64 = raw.iter().sum();
        let target_gross = match &self.program.sizing {
            SizingRule::FixedFraction { fraction } => *fraction,
            _ => 1.0,
        };
        let mut weights = vec![0.0f64; n];
        if total > 0.0 {
            for sym in 0..n {
                let sign = match sides[sym] {
                    Side::Short => -1.0,
                    _ => 1.0,
                };
                weights[sym] = sign * raw[sym] / total * target_gross;
            }
        } else if matches!(
            self.program.sizing,
            SizingRule::SignalProportional {
                fallback: ZeroStrengthFallback::EqualWeight
            }
        ) && tradable
        {
            for w in weights.iter_mut() {
                *w = 1.0 / n as f64;
            }
        }
        if let Some(cap) = self.program.risk.max_position_weight {
            for w in weights.iter_mut() {
                *w = w.clamp(-cap, cap);
            }
        }
        Ok(weights)
    }

    fn step(&mut self, s: usize) -> Result<(), EvaluationError> {
        let g = self.view.global_index(s);
        let n = self.symbols.len();

        // exits and stops apply daily
        for sym in 0..n {
            let close = self.closes[sym][g];
            match self.sides[sym] {
                Side::Long => {
                    self.extremes[sym] = self.extremes[sym].max(close);
                    let stopped = self
                        .program
                        .risk
                        .trailing_stop
                        .is_some_and(|pct| close < self.extremes[sym] * (1.0 - pct));
                    if stopped || self.truth(&self.program.exit, sym, g, "exit")? {
                        self.sides[sym] = Side::Flat;
                    }
                }
                Side::Short => {
                    self.extremes[sym] = self.extremes[sym].min(close);
                    let stopped = self
                        .program
                        .risk
                        .trailing_stop
                        .is_some_and(|pct| close > self.extremes[sym] * (1.0 + pct));
                    let exit_rule = self.program.short_exit.as_ref().unwrap_or(&Expr::Never);
                    if stopped || self.truth(exit_rule, sym, g, "short_exit")? {
                        self.sides[sym] = Side::Flat;
                    }
                }
                Side::Flat => {}
            }
        }

        // entries only on rebalance days, once indicators are live
        if self.rebalance_days[s] && g >= self.tradable_from {
            for sym in 0..n {
                if self.sides[sym] != Side::Flat {
                    continue;
                }
                if self.truth(&self.program.entry, sym, g, "entry")? {
                    self.sides[sym] = Side::Long;
                    self.extremes[sym] = self.closes[sym][g];
                } else if let Some(short_entry) = &self.program.short_entry {
                    if self.truth(short_entry, sym, g, "short_entry")? {
                        self.sides[sym] = Side::Short;
                        self.extremes[sym] = self.closes[sym][g];
                    }
                }
            }
        }

        let row = if self.rebalance_days[s] {
            self.compute_weights(g, &self.sides.clone())?
        } else {
            let prev = self.rows.last().expect("day 0 is always a rebalance day");
            prev.iter()
                .enumerate()
                .map(|(sym, w)| {
                    if self.sides[sym] == Side::Flat {
                        0.0
                    } else {
                        *w
                    }
                })
                .collect()
        };
        self.rows.push(row);
        Ok(())
    }

    /// Target weights for view day `t`, computing forward as needed.
    pub fn weights(&mut self, t: usize) -> Result<&[f64], EvaluationError> {
        assert!(t < self.view.len(), "day index outside view");
        while self.rows.len() <= t {
            self.step(self.rows.len())?;
        }
        Ok(&self.rows[t])
    }
}

/// Pure per-day targets: symbol -> weight in [-1, 1]. Weights of warmed-up
/// but unsignaled assets are 0; gross exposure never exceeds 1 + 1e-9.
pub fn evaluate_targets(
    program: &Program,
    view: &DatasetView,
    date_index: usize,
) -> Result<BTreeMap<String, f64>, EvaluationError> {
    let mut ev = Evaluator::new(program, view);
    let row: Vec<f64> = ev.weights(date_index)?.to_vec();
    Ok(ev.symbols.iter().cloned().zip(row).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{align_calendar, AssetClass, Bar, PriceSeries, SplitLabel, Universe};
    use crate::dsl::parse::parse_program;
    use chrono::NaiveDate;
    use proptest::prelude::*;
    use std::sync::Arc;

    fn mk_series(symbol: &str, closes: &[f64]) -> PriceSeries {
        let start = NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
        let bars = closes
            .iter()
            .enumerate()
            .map(|(i, &c)| Bar {
                date: start + chrono::Days::new(i as u64),
                open: c,
                high: c * 1.01,
                low: c * 0.99,
                close: c,
                volume: 100_000,
            })
            .collect();
        PriceSeries::new(symbol, AssetClass::Equity, 1.0, bars).unwrap()
    }

    fn universe_of(series: Vec<PriceSeries>) -> Arc<Universe> {
        Arc::new(align_calendar(series).unwrap())
    }

    fn full_view(u: &Arc<Universe>) -> DatasetView {
        DatasetView::new(Arc::clone(u), SplitLabel::Train, 0, u.len() - 1)
    }

    #[test]
    fn equal_weight_all_assets() {
        let closes: Vec<f64> = (0..10).map(|i| 100.0 + i as f64).collect();
        let u = universe_of(vec![
            mk_series("A", &closes),
            mk_series("B", &closes),
            mk_series("C", &closes),
        ]);
        let p = parse_program(
            "strategy \"ew\" { entry: always; exit: never; sizing: equal_weight; rebalance: daily; }",
        )
        .unwrap();
        let targets = evaluate_targets(&p, &full_view(&u), 4).unwrap();
        for w in targets.values() {
            assert!((w - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn warmup_assets_get_zero() {
        let closes: Vec<f64> = (0..30).map(|i| 100.0 + i as f64).collect();
        let u = universe_of(vec![mk_series("A", &closes)]);
        let p = parse_program(
            "strategy \"s\" { indicators { m = sma(20); } entry: m > 0; exit: never; sizing: equal_weight; rebalance: daily; }",
        )
        .unwrap();
        let view = full_view(&u);
        let early = evaluate_targets(&p, &view, 5).unwrap();
        assert_eq!(early["A"], 0.0);
        let late = evaluate_targets(&p, &view, 25).unwrap();
        assert_eq!(late["A"], 1.0);
    }

    #[test]
    fn inverse_vol_weights_in_vol_ratio() {
        // B's daily returns are exactly twice A's, so vol(B) = 2 vol(A)
        // and the inverse-vol weights land at 2/3 vs 1/3.
        let mut a = vec![100.0f64];
        let mut b = vec![100.0f64];
        for i in 0..40 {
            let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
            a.push(a.last().unwrap() * (1.0 + sign * 0.01));
            b.push(b.last().unwrap() * (1.0 + sign * 0.02));
        }
        let u = universe_of(vec![mk_series("A", &a), mk_series("B", &b)]);
        let p = parse_program(
            "strategy \"rp\" { entry: always; exit: never; sizing: inverse_volatility(20); rebalance: daily; }",
        )
        .unwrap();
        let targets = evaluate_targets(&p, &full_view(&u), 35).unwrap();
        assert!((targets["A"] - 2.0 / 3.0).abs() < 1e-9, "{targets:?}");
        assert!((targets["B"] - 1.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn crossover_latch_enters_and_exits() {
        // construct a price path that rises (fast sma crosses above slow)
        // then falls (crosses back below)
        let mut closes = vec![100.0f64; 10];
        for i in 0..15 {
            closes.push(100.0 + (i + 1) as f64 * 2.0);
        }
        for i in 0..15 {
            closes.push(130.0 - (i + 1) as f64 * 3.0);
        }
        let u = universe_of(vec![mk_series("A", &closes)]);
        let p = parse_program(
            "strategy \"x\" { indicators { fast = sma(3); slow = sma(8); } entry: fast crosses_above slow; exit: fast crosses_below slow; sizing: equal_weight; rebalance: daily; }",
        )
        .unwrap();
        let view = full_view(&u);
        let mut ev = Evaluator::new(&p, &view);
        let mut saw_long = false;
        let mut exited_after_long = false;
        let mut last = 0.0;
        for t in 0..closes.len() {
            let w = ev.weights(t).unwrap()[0];
            if w > 0.0 {
                saw_long = true;
            }
            if saw_long && w == 0.0 && last > 0.0 {
                exited_after_long = true;
            }
            last = w;
        }
        assert!(saw_long, "never entered");
        assert!(exited_after_long, "never exited");
    }

    #[test]
    fn trailing_stop_fires_without_exit_rule() {
        let mut closes = vec![100.0f64];
        for _ in 0..10 {
            closes.push(closes.last().unwrap() + 5.0);
        }
        // sharp 30% drop
        closes.push(closes.last().unwrap() * 0.7);
        closes.push(closes.last().unwrap() * 1.0);
        let u = universe_of(vec![mk_series("A", &closes)]);
        let p = parse_program(
            "strategy \"ts\" { entry: always; exit: never; sizing: equal_weight; risk: trailing_stop(0.2); rebalance: every_n_days(1000); }",
        )
        .unwrap();
        let view = full_view(&u);
        let mut ev = Evaluator::new(&p, &view);
        assert_eq!(ev.weights(0).unwrap()[0], 1.0);
        assert_eq!(ev.weights(10).unwrap()[0], 1.0);
        assert_eq!(ev.weights(11).unwrap()[0], 0.0, "stop should have fired");
        // no rebalance day follows, so the position stays closed
        assert_eq!(ev.weights(12).unwrap()[0], 0.0);
    }

    #[test]
    fn max_position_weight_caps() {
        let closes: Vec<f64> = (0..10).map(|i| 100.0 + i as f64).collect();
        let u = universe_of(vec![mk_series("A", &closes)]);
        let p = parse_program(
            "strategy \"cap\" { entry: always; exit: never; sizing: equal_weight; risk: max_position_weight(0.4); rebalance: daily; }",
        )
        .unwrap();
        let targets = evaluate_targets(&p, &full_view(&u), 3).unwrap();
        assert_eq!(targets["A"], 0.4);
    }

    #[test]
    fn fixed_fraction_splits_exposure() {
        let closes: Vec<f64> = (0..10).map(|i| 100.0 + i as f64).collect();
        let u = universe_of(vec![mk_series("A", &closes), mk_series("B", &closes)]);
        let p = parse_program(
            "strategy \"ff\" { entry: always; exit: never; sizing: fixed_fraction(0.5); rebalance: daily; }",
        )
        .unwrap();
        let targets = evaluate_targets(&p, &full_view(&u), 2).unwrap();
        assert!((targets["A"] - 0.25).abs() < 1e-12);
        assert!((targets["B"] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn signal_proportional_normalizes_strengths() {
        let up: Vec<f64> = (0..30).map(|i| 100.0 * 1.01f64.powi(i)).collect();
        let down: Vec<f64> = (0..30).map(|i| 100.0 * 0.99f64.powi(i)).collect();
        let u = universe_of(vec![mk_series("UP", &up), mk_series("DN", &down)]);
        let p = parse_program(
            "strategy \"sp\" { indicators { m = momentum(5); } entry: always; exit: never; strength { 3 when m > 0; default 1; } sizing: signal_proportional; rebalance: daily; }",
        )
        .unwrap();
        let targets = evaluate_targets(&p, &full_view(&u), 20).unwrap();
        assert!((targets["UP"] - 0.75).abs() < 1e-12, "{targets:?}");
        assert!((targets["DN"] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn zero_strength_cash_vs_equal_weight_fallback() {
        let down: Vec<f64> = (0..30).map(|i| 100.0 * 0.99f64.powi(i)).collect();
        let u = universe_of(vec![mk_series("A", &down), mk_series("B", &down)]);
        let cash = parse_program(
            "strategy \"c\" { indicators { m = momentum(5); } entry: always; exit: never; strength { 1 when m > 0; default 0; } sizing: signal_proportional; rebalance: daily; }",
        )
        .unwrap();
        let t = evaluate_targets(&cash, &full_view(&u), 20).unwrap();
        assert_eq!(t["A"], 0.0);
        assert_eq!(t["B"], 0.0);
        let ew = parse_program(
            "strategy \"e\" { indicators { m = momentum(5); } entry: always; exit: never; strength { 1 when m > 0; default 0; } sizing: signal_proportional(equal_weight); rebalance: daily; }",
        )
        .unwrap();
        let t = evaluate_targets(&ew, &full_view(&u), 20).unwrap();
        assert_eq!(t["A"], 0.5);
        assert_eq!(t["B"], 0.5);
    }

    #[test]
    fn static_value_weights_track_prices() {
        let a: Vec<f64> = vec![10.0; 5];
        let b: Vec<f64> = vec![30.0; 5];
        let u = universe_of(vec![mk_series("A", &a), mk_series("B", &b)]);
        let p = parse_program(
            "strategy \"mc\" { entry: always; exit: never; sizing: static_value_weight { \"A\" = 200; \"B\" = 100 }; rebalance: monthly; }",
        )
        .unwrap();
        // values: A = 200*10 = 2000, B = 100*30 = 3000
        let targets = evaluate_targets(&p, &full_view(&u), 2).unwrap();
        assert!((targets["A"] - 0.4).abs() < 1e-12);
        assert!((targets["B"] - 0.6).abs() < 1e-12);
    }

    #[test]
    fn monthly_rebalance_days() {
        let start = NaiveDate::from_ymd_opt(2020, 1, 25).unwrap();
        let bars: Vec<Bar> = (0..20)
            .map(|i| {
                let c = 100.0 + i as f64;
                Bar {
                    date: start + chrono::Days::new(i as u64),
                    open: c,
                    high: c,
                    low: c,
                    close: c,
                    volume: 1,
                }
            })
            .collect();
        let u = universe_of(vec![
            PriceSeries::new("A", AssetClass::Equity, 1.0, bars).unwrap()
        ]);
        let p = parse_program(
            "strategy \"m\" { entry: always; exit: never; sizing: equal_weight; rebalance: monthly; }",
        )
        .unwrap();
        let view = full_view(&u);
        let ev = Evaluator::new(&p, &view);
        let days: Vec<usize> = (0..20).filter(|&t| ev.is_rebalance_day(t)).collect();
        // Jan 25 start (day 0) and Feb 1 (day 7)
        assert_eq!(days, vec![0, 7]);
    }

    #[test]
    fn short_side_weights_are_negative() {
        let down: Vec<f64> = (0..30).map(|i| 100.0 * 0.99f64.powi(i)).collect();
        let up: Vec<f64> = (0..30).map(|i| 100.0 * 1.01f64.powi(i)).collect();
        let u = universe_of(vec![mk_series("DN", &down), mk_series("UP", &up)]);
        let text = "strategy \"ls\" { indicators { m = momentum(5); } entry: m > 0; exit: m < 0; short_entry: m < 0; short_exit: m > 0; sizing: equal_weight; rebalance: daily; }";
        let p = crate::dsl::parse::parse_program_with(
            text,
            &crate::dsl::program::DslOptions {
                allow_short: true,
                ..Default::default()
            },
        )
        .unwrap();
        let targets = evaluate_targets(&p, &full_view(&u), 20).unwrap();
        assert!((targets["UP"] - 0.5).abs() < 1e-12);
        assert!((targets["DN"] + 0.5).abs() < 1e-12);
    }

    proptest! {
        // Replacing every bar after the queried day with arbitrary values
        // must not change that day's targets.
        #[test]
        fn no_lookahead(
            walk in proptest::collection::vec(-0.05f64..0.05, 40..70),
            noise in proptest::collection::vec(0.2f64..5.0, 70),
            t_frac in 0.3f64..0.95,
            program_pick in 0usize..4
        ) {
            let mut closes = vec![100.0f64];
            for step in &walk {
                closes.push((closes.last().unwrap() * (1.0 + step)).max(0.5));
            }
            let n = closes.len();
            let t = ((n as f64 * t_frac) as usize).min(n - 1);
            let texts = [
                "strategy \"a\" { indicators { fast = sma(5); slow = sma(12); } entry: fast crosses_above slow; exit: fast crosses_below slow; sizing: equal_weight; rebalance: daily; }",
                "strategy \"b\" { indicators { r = rsi(7); } entry: r < 40; exit: r > 60; sizing: equal_weight; risk: trailing_stop(0.1); rebalance: every_n_days(3); }",
                "strategy \"c\" { indicators { m = momentum(6); } entry: always; exit: never; strength { 2 when m > 0; default 1; } sizing: signal_proportional; rebalance: daily; }",
                "strategy \"d\" { indicators { z = bollinger_z(10); } entry: z < -1; exit: z > 0; sizing: inverse_volatility(8); rebalance: daily; }",
            ];
            let p = parse_program(texts[program_pick]).unwrap();

            let u1 = universe_of(vec![mk_series("A", &closes)]);
            let before = evaluate_targets(&p, &full_view(&u1), t).unwrap();

            // poison everything after t
            let mut poisoned = closes.clone();
            for (i, v) in poisoned.iter_mut().enumerate().skip(t + 1) {
                *v = noise[i % noise.len()] * 100.0;
            }
            let u2 = universe_of(vec![mk_series("A", &poisoned)]);
            let after = evaluate_targets(&p, &full_view(&u2), t).unwrap();
            prop_assert_eq!(before, after);
        }

        // Long-only gross exposure stays within 1 + 1e-9 at every day.
        #[test]
        fn long_only_weights_bounded(
            walk in proptest::collection::vec(-0.05f64..0.05, 30..60),
            program_pick in 0usize..3
        ) {
            let mut a = vec![100.0f64];
            let mut b = vec![80.0f64];
            for (i, step) in walk.iter().enumerate() {
                a.push((a.last().unwrap() * (1.0 + step)).max(0.5));
                b.push((b.last().unwrap() * (1.0 - step * ((i % 3) as f64 - 1.0))).max(0.5));
            }
            let texts = [
                "strategy \"a\" { indicators { r = rsi(5); } entry: r < 50; exit: r > 70; sizing: equal_weight; rebalance: daily; }",
                "strategy \"b\" { indicators { m = momentum(4); } entry: always; exit: never; strength { 1 when m > 0; default 0; } sizing: signal_proportional; rebalance: every_n_days(2); }",
                "strategy \"c\" { entry: always; exit: never; sizing: fixed_fraction(0.7); rebalance: daily; }",
            ];
            let p = parse_program(texts[program_pick]).unwrap();
            let u = universe_of(vec![mk_series("A", &a), mk_series("B", &b)]);
            let view = full_view(&u);
            let mut ev = Evaluator::new(&p, &view);
            for t in 0..a.len() {
                let row = ev.weights(t).unwrap().to_vec();
                let gross: f64 = row.iter().map(|w| w.abs()).sum();
                prop_assert!(gross <= 1.0 + 1e-9, "gross {} at {}", gross, t);
                for w in row {
                    prop_assert!(w >= 0.0, "long-only weight negative");
                }
            }
        }
    }
}
