//! Built-in reference strategies used for seeding islands and reporting.

use super::parse::parse_program;
use super::program::Program;

/// The stock strategies every run can name on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BaselineKind {
    EqualWeight,
    BuyHold,
    MacdCross,
    RsiKdj,
    RiskParity,
    MarketCap,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 6] = [
        BaselineKind::EqualWeight,
        BaselineKind::BuyHold,
        BaselineKind::MacdCross,
        BaselineKind::RsiKdj,
        BaselineKind::RiskParity,
        BaselineKind::MarketCap,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            BaselineKind::EqualWeight => "equal_weight",
            BaselineKind::BuyHold => "buy_hold",
            BaselineKind::MacdCross => "macd_cross",
            BaselineKind::RsiKdj => "rsi_kdj",
            BaselineKind::RiskParity => "risk_parity",
            BaselineKind::MarketCap => "market_cap",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|k| k.name() == name)
    }
}

/// Construct a baseline program. `share_counts` (symbol, shares outstanding)
/// feeds the market-cap weighting and is ignored by every other kind.
pub fn builtin_baseline(kind: BaselineKind, share_counts: &[(String, f64)]) -> Program {
    let text = match kind {
        BaselineKind::EqualWeight => "strategy \"equal_weight\" {\n\
             \x20 categories: risk_allocation;\n\
             \x20 entry: always;\n\
             \x20 exit: never;\n\
             \x20 sizing: equal_weight;\n\
             \x20 rebalance: daily;\n}\n"
            .to_string(),
        // never trades after the initial allocation
        BaselineKind::BuyHold => "strategy \"buy_hold\" {\n\
             \x20 entry: always;\n\
             \x20 exit: never;\n\
             \x20 sizing: equal_weight;\n\
             \x20 rebalance: every_n_days(10000);\n}\n"
            .to_string(),
        // positive histogram names the buy list; an empty list falls back
        // to holding everything equally
        BaselineKind::MacdCross => "strategy \"macd_cross\" {\n\
             \x20 categories: momentum_trend;\n\
             \x20 indicators {\n\
             \x20   hist = macd_hist(12, 26, 9);\n\
             \x20 }\n\
             \x20 entry: always;\n\
             \x20 exit: never;\n\
             \x20 strength {\n\
             \x20   1 when hist > 0;\n\
             \x20   default 0;\n\
             \x20 }\n\
             \x20 sizing: signal_proportional(equal_weight);\n\
             \x20 rebalance: daily;\n}\n"
            .to_string(),
        // oversold tiers scale conviction; overbought zeroes it; all-zero
        // strength means cash
        BaselineKind::RsiKdj => "strategy \"rsi_kdj\" {\n\
             \x20 categories: mean_reversion;\n\
             \x20 indicators {\n\
             \x20   r = rsi(14);\n\
             \x20   s = stochastic_kdj(9, 3);\n\
             \x20 }\n\
             \x20 entry: always;\n\
             \x20 exit: never;\n\
             \x20 strength {\n\
             \x20   2 when r < 25 and s.k < 15;\n\
             \x20   1 when r < 30 and s.k < 20 and s.d < 20;\n\
             \x20   0 when r > 70 or s.k > 80 or s.d > 80;\n\
             \x20   default 0.5;\n\
             \x20 }\n\
             \x20 sizing: signal_proportional;\n\
             \x20 rebalance: daily;\n}\n"
            .to_string(),
        BaselineKind::RiskParity => "strategy \"risk_parity\" {\n\
             \x20 categories: risk_allocation, volatility;\n\
             \x20 entry: always;\n\
             \x20 exit: never;\n\
             \x20 sizing: inverse_volatility(60);\n\
             \x20 rebalance: daily;\n}\n"
            .to_string(),
        BaselineKind::MarketCap => {
            let mut counts: Vec<(String, f64)> = share_counts.to_vec();
            counts.sort_by(|a, b| a.0.cmp(&b.0));
            let entries: Vec<String> = counts
                .iter()
                .map(|(sym, n)| format!("\"{sym}\" = {n}"))
                .collect();
            format!(
                "strategy \"market_cap\" {{\n\
                 \x20 categories: risk_allocation;\n\
                 \x20 entry: always;\n\
                 \x20 exit: never;\n\
                 \x20 sizing: static_value_weight {{ {} }};\n\
                 \x20 rebalance: monthly;\n}}\n",
                entries.join("; ")
            )
        }
    };
    parse_program(&text).expect("baseline text is well formed")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{align_calendar, AssetClass, Bar, PriceSeries, SplitLabel, Universe};
    use crate::dsl::eval::evaluate_targets;
    use crate::dsl::parse::parse_program;
    use crate::data::DatasetView;
    use chrono::NaiveDate;
    use std::sync::Arc;

    fn shares(pairs: &[(&str, f64)]) -> Vec<(String, f64)> {
        pairs.iter().map(|(s, n)| (s.to_string(), *n)).collect()
    }

    fn mk_series(symbol: &str, closes: &[f64]) -> PriceSeries {
        let start = NaiveDate::from_ymd_opt(2021, 3, 1).unwrap();
        let bars = closes
            .iter()
            .enumerate()
            .map(|(i, &c)| Bar {
                date: start + chrono::Days::new(i as u64),
                open: c,
                high: c * 1.02,
                low: c * 0.98,
                close: c,
                volume: 50_000,
            })
            .collect();
        PriceSeries::new(symbol, AssetClass::Equity, 1.0, bars).unwrap()
    }

    fn view_of(series: Vec<PriceSeries>) -> (Arc<Universe>, DatasetView) {
        let u = Arc::new(align_calendar(series).unwrap());
        let v = DatasetView::new(Arc::clone(&u), SplitLabel::Train, 0, u.len() - 1);
        (u, v)
    }

    #[test]
    fn all_baselines_round_trip() {
        for kind in BaselineKind::ALL {
            let p = builtin_baseline(kind, &shares(&[("X", 10.0), ("Y", 3.0)]));
            assert_eq!(p.name, kind.name());
            let reparsed = parse_program(&p.serialize()).unwrap();
            assert_eq!(reparsed, p);
            assert_eq!(reparsed.serialize(), p.serialize());
        }
    }

    #[test]
    fn kind_names_round_trip() {
        for kind in BaselineKind::ALL {
            assert_eq!(BaselineKind::from_name(kind.name()), Some(kind));
        }
        assert_eq!(BaselineKind::from_name("nope"), None);
    }

    #[test]
    fn buy_hold_only_rebalances_once() {
        let closes: Vec<f64> = (0..40).map(|i| 50.0 + (i % 7) as f64).collect();
        let (_u, view) = view_of(vec![mk_series("A", &closes), mk_series("B", &closes)]);
        let p = builtin_baseline(BaselineKind::BuyHold, &[]);
        let ev = crate::dsl::eval::Evaluator::new(&p, &view);
        let days: Vec<usize> = (0..40).filter(|&t| ev.is_rebalance_day(t)).collect();
        assert_eq!(days, vec![0]);
        assert!(p.category_tags.is_empty());
    }

    #[test]
    fn market_cap_weights_by_value() {
        let (_u, view) = view_of(vec![
            mk_series("A", &[10.0; 6]),
            mk_series("B", &[20.0; 6]),
        ]);
        let p = builtin_baseline(BaselineKind::MarketCap, &shares(&[("B", 10.0), ("A", 60.0)]));
        // values: A = 60*10 = 600, B = 10*20 = 200
        let t = evaluate_targets(&p, &view, 3).unwrap();
        assert!((t["A"] - 0.75).abs() < 1e-12);
        assert!((t["B"] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn macd_cross_falls_back_to_equal_weight() {
        // flat prices keep the histogram at zero, which is not a buy
        let (_u, view) = view_of(vec![
            mk_series("A", &[100.0; 60]),
            mk_series("B", &[100.0; 60]),
        ]);
        let p = builtin_baseline(BaselineKind::MacdCross, &[]);
        let t = evaluate_targets(&p, &view, 50).unwrap();
        assert_eq!(t["A"], 0.5);
        assert_eq!(t["B"], 0.5);
    }

    #[test]
    fn macd_cross_concentrates_on_positive_histogram() {
        // flat base then a sustained break; a steady-state drift keeps the
        // histogram positive on both sides, so only fresh trends separate it
        let breakout = |dir: f64| {
            let mut closes = vec![100.0f64; 40];
            for i in 0..40 {
                closes.push(closes[39] * (1.0 + dir * 0.015).powi(i as i32 + 1));
            }
            closes
        };
        let (_u, view) = view_of(vec![
            mk_series("UP", &breakout(1.0)),
            mk_series("DN", &breakout(-1.0)),
        ]);
        let p = builtin_baseline(BaselineKind::MacdCross, &[]);
        let t = evaluate_targets(&p, &view, 55).unwrap();
        assert_eq!(t["UP"], 1.0, "{t:?}");
        assert_eq!(t["DN"], 0.0);
    }

    #[test]
    fn rsi_kdj_goes_to_cash_when_overbought() {
        // both assets in a strong sustained rally: RSI near 100, K/D high
        let up: Vec<f64> = (0..60).map(|i| 100.0 * 1.01f64.powi(i)).collect();
        let (_u, view) = view_of(vec![mk_series("A", &up), mk_series("B", &up)]);
        let p = builtin_baseline(BaselineKind::RsiKdj, &[]);
        let t = evaluate_targets(&p, &view, 50).unwrap();
        assert_eq!(t["A"], 0.0, "{t:?}");
        assert_eq!(t["B"], 0.0);
    }

    #[test]
    fn risk_parity_prefers_the_quieter_asset() {
        let mut calm = vec![100.0f64];
        let mut wild = vec![100.0f64];
        for i in 0..90 {
            let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
            calm.push(calm.last().unwrap() * (1.0 + sign * 0.002));
            wild.push(wild.last().unwrap() * (1.0 + sign * 0.02));
        }
        let (_u, view) = view_of(vec![mk_series("CALM", &calm), mk_series("WILD", &wild)]);
        let p = builtin_baseline(BaselineKind::RiskParity, &[]);
        let t = evaluate_targets(&p, &view, 85).unwrap();
        assert!(t["CALM"] > t["WILD"]);
        assert!((t["CALM"] + t["WILD"] - 1.0).abs() < 1e-9);
    }
}
