//! Strategy program model: indicators, signal rules, sizing, risk, rebalance.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Failures surfaced by parsing or validating a program. These are the
/// machine-readable errors the generator repair loop feeds back verbatim.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum ProgramParseError {
    #[error("syntax error at line {line}, column {col}: {message}")]
    SyntaxError {
        line: usize,
        col: usize,
        message: String,
    },
    #[error("unknown indicator kind `{kind}`")]
    UnknownIndicator { kind: String },
    #[error("rule `{rule}` references undeclared indicator `{name}`")]
    UnboundReference { name: String, rule: String },
    #[error("{indicator}: parameter {param} = {value} outside [{min}, {max}]")]
    ParamOutOfRange {
        indicator: String,
        param: String,
        value: f64,
        min: f64,
        max: f64,
    },
    #[error("short rules present but shorting is disabled for this run")]
    ShortingDisabled,
}

/// Validation limits. `allow_short` mirrors the run-level switch: equity
/// runs are long-only, futures runs may take directional positions.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct DslOptions {
    pub allow_short: bool,
    pub max_lookback: u32,
}

impl Default for DslOptions {
    fn default() -> Self {
        Self {
            allow_short: false,
            max_lookback: 500,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum IndicatorKind {
    Sma,
    Ema,
    Rsi,
    MacdHist,
    BollingerZ,
    StochasticKdj,
    RollingVol,
    Momentum,
}

impl IndicatorKind {
    pub fn name(&self) -> &'static str {
        match self {
            IndicatorKind::Sma => "sma",
            IndicatorKind::Ema => "ema",
            IndicatorKind::Rsi => "rsi",
            IndicatorKind::MacdHist => "macd_hist",
            IndicatorKind::BollingerZ => "bollinger_z",
            IndicatorKind::StochasticKdj => "stochastic_kdj",
            IndicatorKind::RollingVol => "rolling_vol",
            IndicatorKind::Momentum => "momentum",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "sma" => IndicatorKind::Sma,
            "ema" => IndicatorKind::Ema,
            "rsi" => IndicatorKind::Rsi,
            "macd_hist" => IndicatorKind::MacdHist,
            "bollinger_z" => IndicatorKind::BollingerZ,
            "stochastic_kdj" => IndicatorKind::StochasticKdj,
            "rolling_vol" => IndicatorKind::RollingVol,
            "momentum" => IndicatorKind::Momentum,
            _ => return None,
        })
    }

    pub const ALL: [IndicatorKind; 8] = [
        IndicatorKind::Sma,
        IndicatorKind::Ema,
        IndicatorKind::Rsi,
        IndicatorKind::MacdHist,
        IndicatorKind::BollingerZ,
        IndicatorKind::StochasticKdj,
        IndicatorKind::RollingVol,
        IndicatorKind::Momentum,
    ];

    /// Parameter names and inclusive bounds, with the configured maximum
    /// lookback substituted for the open upper end.
    pub fn param_bounds(&self, max_lookback: u32) -> &'static [(&'static str, u32, u32)] {
        // bounds use u32::MAX as a stand-in replaced by max_lookback below
        const L1: [(&str, u32, u32); 1] = [("period", 1, u32::MAX)];
        const L2: [(&str, u32, u32); 1] = [("period", 2, u32::MAX)];
        const MACD: [(&str, u32, u32); 3] = [
            ("fast", 1, u32::MAX),
            ("slow", 1, u32::MAX),
            ("signal", 1, u32::MAX),
        ];
        const KDJ: [(&str, u32, u32); 2] = [("k_period", 1, u32::MAX), ("d_period", 1, u32::MAX)];
        let _ = max_lookback;
        match self {
            IndicatorKind::Sma
            | IndicatorKind::Ema
            | IndicatorKind::Rsi
            | IndicatorKind::Momentum => &L1,
            IndicatorKind::BollingerZ | IndicatorKind::RollingVol => &L2,
            IndicatorKind::MacdHist => &MACD,
            IndicatorKind::StochasticKdj => &KDJ,
        }
    }
}

/// One indicator instance: a kind plus integer parameters.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct IndicatorSpec {
    pub kind: IndicatorKind,
    pub params: Vec<u32>,
}

impl IndicatorSpec {
    pub fn new(kind: IndicatorKind, params: Vec<u32>) -> Self {
        Self { kind, params }
    }

    /// Arity and per-parameter range checks. `binding` names the
    /// declaration site in error messages.
    pub fn validate(&self, binding: &str, opts: &DslOptions) -> Result<(), ProgramParseError> {
        let bounds = self.kind.param_bounds(opts.max_lookback);
        if self.params.len() != bounds.len() {
            return Err(ProgramParseError::SyntaxError {
                line: 0,
                col: 0,
                message: format!(
                    "{binding}: {} takes {} parameter(s), got {}",
                    self.kind.name(),
                    bounds.len(),
                    self.params.len()
                ),
            });
        }
        for (value, (pname, lo, hi)) in self.params.iter().zip(bounds) {
            let hi = if *hi == u32::MAX { opts.max_lookback } else { *hi };
            if *value < *lo || *value > hi {
                return Err(ProgramParseError::ParamOutOfRange {
                    indicator: format!("{binding} ({})", self.kind.name()),
                    param: (*pname).into(),
                    value: *value as f64,
                    min: *lo as f64,
                    max: hi as f64,
                });
            }
        }
        if self.kind == IndicatorKind::MacdHist && self.params[0] >= self.params[1] {
            return Err(ProgramParseError::ParamOutOfRange {
                indicator: format!("{binding} (macd_hist)"),
                param: "fast".into(),
                value: self.params[0] as f64,
                min: 1.0,
                max: (self.params[1] - 1) as f64,
            });
        }
        Ok(())
    }
}

/// Component selector for multi-valued indicators (stochastic K/D/J).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Accessor {
    K,
    D,
    J,
}

impl Accessor {
    pub fn name(&self) -> &'static str {
        match self {
            Accessor::K => "k",
            Accessor::D => "d",
            Accessor::J => "j",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Operand {
    /// A declared indicator, optionally narrowed to one component.
    Ref {
        name: String,
        accessor: Option<Accessor>,
    },
    Const(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpOp {
    Gt,
    Lt,
    Ge,
    Le,
    CrossesAbove,
    CrossesBelow,
}

impl CmpOp {
    pub fn symbol(&self) -> &'static str {
        match self {
            CmpOp::Gt => ">",
            CmpOp::Lt => "<",
            CmpOp::Ge => ">=",
            CmpOp::Le => "<=",
            CmpOp::CrossesAbove => "crosses_above",
            CmpOp::CrossesBelow => "crosses_below",
        }
    }
}

/// Boolean signal expression over indicator values and constants.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Always,
    Never,
    And(Box<Expr>, Box<Expr>),
    Or(Box<Expr>, Box<Expr>),
    Not(Box<Expr>),
    Cmp {
        op: CmpOp,
        lhs: Operand,
        rhs: Operand,
    },
}

impl Expr {
    pub fn cmp(lhs: Operand, op: CmpOp, rhs: Operand) -> Self {
        Expr::Cmp { op, lhs, rhs }
    }

    pub fn and(a: Expr, b: Expr) -> Self {
        Expr::And(Box::new(a), Box::new(b))
    }

    pub fn or(a: Expr, b: Expr) -> Self {
        Expr::Or(Box::new(a), Box::new(b))
    }

    /// Indicator names referenced anywhere in the expression.
    pub fn collect_refs<'a>(&'a self, out: &mut Vec<&'a str>) {
        match self {
            Expr::Always | Expr::Never => {}
            Expr::And(a, b) | Expr::Or(a, b) => {
                a.collect_refs(out);
                b.collect_refs(out);
            }
            Expr::Not(e) => e.collect_refs(out),
            Expr::Cmp { lhs, rhs, .. } => {
                for op in [lhs, rhs] {
                    if let Operand::Ref { name, .. } = op {
                        out.push(name);
                    }
                }
            }
        }
    }

    /// Number of comparison leaves; used by mutation edits.
    pub fn count_comparisons(&self) -> usize {
        match self {
            Expr::Always | Expr::Never => 0,
            Expr::And(a, b) | Expr::Or(a, b) => a.count_comparisons() + b.count_comparisons(),
            Expr::Not(e) => e.count_comparisons(),
            Expr::Cmp { .. } => 1,
        }
    }

    /// Visit the nth comparison leaf (in-order) mutably.
    pub fn nth_comparison_mut(&mut self, n: usize) -> Option<&mut Expr> {
        fn walk<'a>(e: &'a mut Expr, n: &mut usize) -> Option<&'a mut Expr> {
            match e {
                Expr::Always | Expr::Never => None,
                Expr::Cmp { .. } => {
                    if *n == 0 {
                        Some(e)
                    } else {
                        *n -= 1;
                        None
                    }
                }
                Expr::And(a, b) | Expr::Or(a, b) => {
                    if let Some(hit) = walk(a, n) {
                        return Some(hit);
                    }
                    walk(b, n)
                }
                Expr::Not(inner) => walk(inner, n),
            }
        }
        let mut k = n;
        walk(self, &mut k)
    }
}

/// One weighted condition inside a `strength` block; first match wins.
#[derive(Debug, Clone, PartialEq)]
pub struct StrengthRule {
    pub value: f64,
    pub condition: Expr,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrengthBlock {
    pub rules: Vec<StrengthRule>,
    pub default: f64,
}

/// What to do when every signal strength is zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ZeroStrengthFallback {
    /// Hold cash: all weights zero.
    Cash,
    /// Spread equally across all tradable assets.
    EqualWeight,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SizingRule {
    /// 1/|active| across assets with open signals.
    EqualWeight,
    /// Weights proportional to 1/rolling_vol(lookback).
    InverseVolatility { lookback: u32 },
    /// Total exposure `fraction`, split equally across active assets.
    FixedFraction { fraction: f64 },
    /// Weights proportional to per-asset strength-rule values.
    SignalProportional { fallback: ZeroStrengthFallback },
    /// Weights proportional to shares * close, shares fixed per symbol.
    StaticValueWeight { shares: Vec<(String, f64)> },
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RiskOverlay {
    /// Exit when close drops this fraction below the episode peak.
    pub trailing_stop: Option<f64>,
    /// Per-asset weight cap, applied after sizing without redistribution.
    pub max_position_weight: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rebalance {
    Daily,
    EveryNDays(u32),
    Monthly,
}

/// A complete strategy. Immutable once validated; evaluation is pure.
#[derive(Debug, Clone, PartialEq)]
pub struct Program {
    pub name: String,
    pub category_tags: Vec<String>,
    pub indicator_defs: Vec<(String, IndicatorSpec)>,
    pub entry: Expr,
    pub exit: Expr,
    pub short_entry: Option<Expr>,
    pub short_exit: Option<Expr>,
    pub strength: Option<StrengthBlock>,
    pub sizing: SizingRule,
    pub risk: RiskOverlay,
    pub rebalance: Rebalance,
}

impl Program {
    pub fn lookup_indicator(&self, name: &str) -> Option<&IndicatorSpec> {
        self.indicator_defs
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, s)| s)
    }

    fn check_expr_refs(&self, expr: &Expr, rule: &str) -> Result<(), ProgramParseError> {
        fn walk(
            p: &Program,
            e: &Expr,
            rule: &str,
        ) -> Result<(), ProgramParseError> {
            match e {
                Expr::Always | Expr::Never => Ok(()),
                Expr::And(a, b) | Expr::Or(a, b) => {
                    walk(p, a, rule)?;
                    walk(p, b, rule)
                }
                Expr::Not(inner) => walk(p, inner, rule),
                Expr::Cmp { lhs, rhs, .. } => {
                    for op in [lhs, rhs] {
                        if let Operand::Ref { name, accessor } = op {
                            let spec = p.lookup_indicator(name).ok_or_else(|| {
                                ProgramParseError::UnboundReference {
                                    name: name.clone(),
                                    rule: rule.to_string(),
                                }
                            })?;
                            let is_kdj = spec.kind == IndicatorKind::StochasticKdj;
                            match (is_kdj, accessor) {
                                (true, None) => {
                                    return Err(ProgramParseError::UnboundReference {
                                        name: format!("{name} (stochastic_kdj needs .k/.d/.j)"),
                                        rule: rule.to_string(),
                                    })
                                }
                                (false, Some(a)) => {
                                    return Err(ProgramParseError::UnboundReference {
                                        name: format!(
                                            "{name}.{} (only stochastic_kdj has components)",
                                            a.name()
                                        ),
                                        rule: rule.to_string(),
                                    })
                                }
                                _ => {}
                            }
                        } else if let Operand::Const(v) = op {
                            if !v.is_finite() {
                                return Err(ProgramParseError::SyntaxError {
                                    line: 0,
                                    col: 0,
                                    message: format!("non-finite constant in {rule}"),
                                });
                            }
                        }
                    }
                    Ok(())
                }
            }
        }
        walk(self, expr, rule)
    }

    /// Enforce every structural invariant. Programs built in memory must
    /// pass through here before evaluation.
    pub fn validate(&self, opts: &DslOptions) -> Result<(), ProgramParseError> {
        for (i, (name, spec)) in self.indicator_defs.iter().enumerate() {
            spec.validate(name, opts)?;
            if self.indicator_defs[..i].iter().any(|(n, _)| n == name) {
                return Err(ProgramParseError::SyntaxError {
                    line: 0,
                    col: 0,
                    message: format!("duplicate indicator `{name}`"),
                });
            }
        }
        self.check_expr_refs(&self.entry, "entry")?;
        self.check_expr_refs(&self.exit, "exit")?;
        if self.short_entry.is_some() || self.short_exit.is_some() {
            if !opts.allow_short {
                return Err(ProgramParseError::ShortingDisabled);
            }
            if let Some(e) = &self.short_entry {
                self.check_expr_refs(e, "short_entry")?;
            }
            if let Some(e) = &self.short_exit {
                self.check_expr_refs(e, "short_exit")?;
            }
        }
        if let Some(block) = &self.strength {
            for (i, rule) in block.rules.iter().enumerate() {
                self.check_expr_refs(&rule.condition, &format!("strength[{i}]"))?;
                if !(rule.value.is_finite() && rule.value >= 0.0) {
                    return Err(ProgramParseError::ParamOutOfRange {
                        indicator: format!("strength[{i}]"),
                        param: "value".into(),
                        value: rule.value,
                        min: 0.0,
                        max: f64::INFINITY,
                    });
                }
            }
            if !(block.default.is_finite() && block.default >= 0.0) {
                return Err(ProgramParseError::ParamOutOfRange {
                    indicator: "strength".into(),
                    param: "default".into(),
                    value: block.default,
                    min: 0.0,
                    max: f64::INFINITY,
                });
            }
        }
        match &self.sizing {
            SizingRule::EqualWeight | SizingRule::SignalProportional { .. } => {}
            SizingRule::InverseVolatility { lookback } => {
                if *lookback < 2 || *lookback > opts.max_lookback {
                    return Err(ProgramParseError::ParamOutOfRange {
                        indicator: "inverse_volatility".into(),
                        param: "lookback".into(),
                        value: *lookback as f64,
                        min: 2.0,
                        max: opts.max_lookback as f64,
                    });
                }
            }
            SizingRule::FixedFraction { fraction } => {
                if !(fraction.is_finite() && (0.0..=1.0).contains(fraction)) {
                    return Err(ProgramParseError::ParamOutOfRange {
                        indicator: "fixed_fraction".into(),
                        param: "fraction".into(),
                        value: *fraction,
                        min: 0.0,
                        max: 1.0,
                    });
                }
            }
            SizingRule::StaticValueWeight { shares } => {
                for (sym, count) in shares {
                    if !(count.is_finite() && *count >= 0.0) {
                        return Err(ProgramParseError::ParamOutOfRange {
                            indicator: "static_value_weight".into(),
                            param: sym.clone(),
                            value: *count,
                            min: 0.0,
                            max: f64::INFINITY,
                        });
                    }
                }
            }
        }
        if let Some(pct) = self.risk.trailing_stop {
            if !(pct.is_finite() && pct > 0.0 && pct <= 1.0) {
                return Err(ProgramParseError::ParamOutOfRange {
                    indicator: "risk".into(),
                    param: "trailing_stop".into(),
                    value: pct,
                    min: 0.0,
                    max: 1.0,
                });
            }
        }
        if let Some(w) = self.risk.max_position_weight {
            if !(w.is_finite() && w > 0.0 && w <= 1.0) {
                return Err(ProgramParseError::ParamOutOfRange {
                    indicator: "risk".into(),
                    param: "max_position_weight".into(),
                    value: w,
                    min: 0.0,
                    max: 1.0,
                });
            }
        }
        if let Rebalance::EveryNDays(n) = self.rebalance {
            if n == 0 {
                return Err(ProgramParseError::ParamOutOfRange {
                    indicator: "rebalance".into(),
                    param: "every_n_days".into(),
                    value: 0.0,
                    min: 1.0,
                    max: f64::INFINITY,
                });
            }
        }
        Ok(())
    }

    /// Canonical text form. `parse(serialize(p)) == p` bit for bit; the
    /// generator contract requires emitting exactly this shape.
    pub fn serialize(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("strategy \"{}\" {{\n", escape(&self.name)));
        if !self.category_tags.is_empty() {
            s.push_str(&format!("  categories: {};\n", self.category_tags.join(", ")));
        }
        if !self.indicator_defs.is_empty() {
            s.push_str("  indicators {\n");
            for (name, spec) in &self.indicator_defs {
                let params: Vec<String> = spec.params.iter().map(|p| p.to_string()).collect();
                s.push_str(&format!(
                    "    {name} = {}({});\n",
                    spec.kind.name(),
                    params.join(", ")
                ));
            }
            s.push_str("  }\n");
        }
        s.push_str(&format!("  entry: {};\n", print_expr(&self.entry, 1)));
        s.push_str(&format!("  exit: {};\n", print_expr(&self.exit, 1)));
        if let Some(e) = &self.short_entry {
            s.push_str(&format!("  short_entry: {};\n", print_expr(e, 1)));
        }
        if let Some(e) = &self.short_exit {
            s.push_str(&format!("  short_exit: {};\n", print_expr(e, 1)));
        }
        if let Some(block) = &self.strength {
            s.push_str("  strength {\n");
            for rule in &block.rules {
                s.push_str(&format!(
                    "    {} when {};\n",
                    fmt_f64(rule.value),
                    print_expr(&rule.condition, 1)
                ));
            }
            s.push_str(&format!("    default {};\n", fmt_f64(block.default)));
            s.push_str("  }\n");
        }
        let sizing = match &self.sizing {
            SizingRule::EqualWeight => "equal_weight".to_string(),
            SizingRule::InverseVolatility { lookback } => {
                format!("inverse_volatility({lookback})")
            }
            SizingRule::FixedFraction { fraction } => {
                format!("fixed_fraction({})", fmt_f64(*fraction))
            }
            SizingRule::SignalProportional { fallback } => match fallback {
                ZeroStrengthFallback::Cash => "signal_proportional".to_string(),
                ZeroStrengthFallback::EqualWeight => {
                    "signal_proportional(equal_weight)".to_string()
                }
            },
            SizingRule::StaticValueWeight { shares } => {
                let entries: Vec<String> = shares
                    .iter()
                    .map(|(sym, n)| format!("\"{}\" = {}", escape(sym), fmt_f64(*n)))
                    .collect();
                format!("static_value_weight {{ {} }}", entries.join("; "))
            }
        };
        s.push_str(&format!("  sizing: {sizing};\n"));
        if self.risk.trailing_stop.is_some() || self.risk.max_position_weight.is_some() {
            let mut parts = Vec::new();
            if let Some(pct) = self.risk.trailing_stop {
                parts.push(format!("trailing_stop({})", fmt_f64(pct)));
            }
            if let Some(w) = self.risk.max_position_weight {
                parts.push(format!("max_position_weight({})", fmt_f64(w)));
            }
            s.push_str(&format!("  risk: {};\n", parts.join(", ")));
        }
        let rebalance = match self.rebalance {
            Rebalance::Daily => "daily".to_string(),
            Rebalance::EveryNDays(n) => format!("every_n_days({n})"),
            Rebalance::Monthly => "monthly".to_string(),
        };
        s.push_str(&format!("  rebalance: {rebalance};\n}}\n"));
        s
    }
}

/// Shortest decimal round-trip form (Rust's float Display).
pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

/// Precedence levels: or = 1, and = 2, not = 3, atoms = 4.
fn level(e: &Expr) -> u8 {
    match e {
        Expr::Or(..) => 1,
        Expr::And(..) => 2,
        Expr::Not(..) => 3,
        _ => 4,
    }
}

fn print_expr(e: &Expr, min_level: u8) -> String {
    let text = match e {
        Expr::Always => "always".to_string(),
        Expr::Never => "never".to_string(),
        Expr::Or(a, b) => format!("{} or {}", print_expr(a, 1), print_expr(b, 2)),
        Expr::And(a, b) => format!("{} and {}", print_expr(a, 2), print_expr(b, 3)),
        Expr::Not(inner) => format!("not {}", print_expr(inner, 3)),
        Expr::Cmp { op, lhs, rhs } => format!(
            "{} {} {}",
            print_operand(lhs),
            op.symbol(),
            print_operand(rhs)
        ),
    };
    if level(e) < min_level {
        format!("({text})")
    } else {
        text
    }
}

fn print_operand(op: &Operand) -> String {
    match op {
        Operand::Ref { name, accessor } => match accessor {
            Some(a) => format!("{name}.{}", a.name()),
            None => name.clone(),
        },
        Operand::Const(v) => fmt_f64(*v),
    }
}
