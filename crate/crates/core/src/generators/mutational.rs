//! Deterministic mutational proposal engine.
//!
//! Applies exactly one edit per proposal: parameter jitter, rule edit,
//! structural add/remove of an indicator+rule pair, crossover grafting a
//! cousin's rule subtree, or a sizing/risk toggle. Offspring are valid by
//! construction and category tags are recomputed from the indicator kinds
//! actually present.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::dsl::program::{
    Accessor, CmpOp, Expr, IndicatorKind, IndicatorSpec, Operand, Program, SizingRule, ZeroStrengthFallback,
};
use crate::dsl::DslOptions;
use crate::feature_map::CandidateRecord;
use crate::generators::{
    recompute_tags, Analysis, GenerateError, GenerationContext, GeneratorOutcome, Hypothesis, StrategyGenerator,
    Verdict,
};

pub struct MutationalGenerator;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Edit {
    Jitter,
    RuleEdit,
    AddIndicator,
    RemoveIndicator,
    Crossover,
    SizingToggle,
    RiskToggle,
}

impl Edit {
    fn slug(self) -> &'static str {
        match self {
            Edit::Jitter => "jit",
            Edit::RuleEdit => "rule",
            Edit::AddIndicator => "add",
            Edit::RemoveIndicator => "del",
            Edit::Crossover => "x",
            Edit::SizingToggle => "siz",
            Edit::RiskToggle => "rsk",
        }
    }
}

/// Rule expressions a mutation may touch, in a fixed traversal order.
fn rule_exprs_mut(p: &mut Program) -> Vec<&mut Expr> {
    let mut out: Vec<&mut Expr> = vec![&mut p.entry, &mut p.exit];
    if let Some(e) = p.short_entry.as_mut() {
        out.push(e);
    }
    if let Some(e) = p.short_exit.as_mut() {
        out.push(e);
    }
    if let Some(s) = p.strength.as_mut() {
        for rule in &mut s.rules {
            out.push(&mut rule.condition);
        }
    }
    out
}

fn rule_exprs(p: &Program) -> Vec<&Expr> {
    let mut out: Vec<&Expr> = vec![&p.entry, &p.exit];
    if let Some(e) = p.short_entry.as_ref() {
        out.push(e);
    }
    if let Some(e) = p.short_exit.as_ref() {
        out.push(e);
    }
    if let Some(s) = p.strength.as_ref() {
        for rule in &s.rules {
            out.push(&rule.condition);
        }
    }
    out
}

fn total_comparisons(p: &Program) -> usize {
    rule_exprs(p).iter().map(|e| e.count_comparisons()).sum()
}

fn nth_comparison(e: &Expr, n: usize) -> Option<&Expr> {
    fn walk<'a>(e: &'a Expr, n: &mut usize) -> Option<&'a Expr> {
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
            Expr::And(a, b) | Expr::Or(a, b) => walk(a, n).or_else(|| walk(b, n)),
            Expr::Not(inner) => walk(inner, n),
        }
    }
    let mut k = n;
    walk(e, &mut k)
}

/// Replace comparisons referencing `name` with `always` (a neutral,
/// always-valid leaf), used when the indicator is removed.
fn prune_refs(e: &Expr, name: &str) -> Expr {
    match e {
        Expr::Always => Expr::Always,
        Expr::Never => Expr::Never,
        Expr::And(a, b) => Expr::and(prune_refs(a, name), prune_refs(b, name)),
        Expr::Or(a, b) => Expr::or(prune_refs(a, name), prune_refs(b, name)),
        Expr::Not(inner) => Expr::Not(Box::new(prune_refs(inner, name))),
        Expr::Cmp { lhs, rhs, .. } => {
            let touches = [lhs, rhs].iter().any(|op| matches!(op, Operand::Ref { name: n, .. } if n == name));
            if touches {
                Expr::Always
            } else {
                e.clone()
            }
        }
    }
}

fn rename_refs(e: &mut Expr, from: &str, to: &str) {
    match e {
        Expr::Always | Expr::Never => {}
        Expr::And(a, b) | Expr::Or(a, b) => {
            rename_refs(a, from, to);
            rename_refs(b, from, to);
        }
        Expr::Not(inner) => rename_refs(inner, from, to),
        Expr::Cmp { lhs, rhs, .. } => {
            for op in [lhs, rhs] {
                if let Operand::Ref { name, .. } = op {
                    if name == from {
                        *name = to.to_string();
                    }
                }
            }
        }
    }
}

fn fresh_name(program: &Program, prefix: &str) -> String {
    let mut n = program.indicator_defs.len();
    loop {
        let candidate = format!("{prefix}{n}");
        if program.lookup_indicator(&candidate).is_none() {
            return candidate;
        }
        n += 1;
    }
}

/// Effective inclusive bounds for one parameter of a spec, folding in the
/// macd fast < slow coupling.
fn param_range(spec: &IndicatorSpec, idx: usize, opts: &DslOptions) -> (u32, u32) {
    let bounds = spec.kind.param_bounds(opts.max_lookback);
    let (_, lo, hi) = bounds[idx];
    let mut lo = lo;
    let mut hi = if hi == u32::MAX { opts.max_lookback } else { hi };
    if spec.kind == IndicatorKind::MacdHist {
        if idx == 0 {
            hi = hi.min(spec.params[1].saturating_sub(1));
        } else if idx == 1 {
            lo = lo.max(spec.params[0] + 1);
        }
    }
    (lo, hi)
}

struct EditReport {
    edit: Edit,
    detail: String,
}

fn apply_jitter(program: &mut Program, opts: &DslOptions, rng: &mut ChaCha8Rng) -> Option<EditReport> {
    // Enumerate every (def, param) slot that has room to move.
    let mut slots: Vec<(usize, usize)> = Vec::new();
    for (di, (_, spec)) in program.indicator_defs.iter().enumerate() {
        for pi in 0..spec.params.len() {
            let (lo, hi) = param_range(spec, pi, opts);
            if lo < hi {
                slots.push((di, pi));
            }
        }
    }
    if slots.is_empty() {
        return None;
    }
    let (di, pi) = slots[rng.random_range(0..slots.len())];
    let (name, spec) = &program.indicator_defs[di];
    let name = name.clone();
    let old = spec.params[pi];
    let (lo, hi) = param_range(spec, pi, opts);
    let span = ((old as f64 * 0.25).floor() as u32).max(1);
    let magnitude = rng.random_range(1..=span);
    let up = rng.random_bool(0.5);
    let mut new = if up {
        old.saturating_add(magnitude).min(hi)
    } else {
        old.saturating_sub(magnitude).max(lo)
    };
    if new == old {
        // Clamping ate the step; move one unit the other way.
        new = if old < hi { old + 1 } else { old - 1 };
    }
    let kind_name = spec.kind.name();
    program.indicator_defs[di].1.params[pi] = new;
    Some(EditReport {
        edit: Edit::Jitter,
        detail: format!("{name} = {kind_name}: parameter {pi} {old} -> {new}"),
    })
}

const ALL_OPS: [CmpOp; 6] = [
    CmpOp::Gt,
    CmpOp::Lt,
    CmpOp::Ge,
    CmpOp::Le,
    CmpOp::CrossesAbove,
    CmpOp::CrossesBelow,
];

fn apply_rule_edit(program: &mut Program, rng: &mut ChaCha8Rng) -> Option<EditReport> {
    let total = total_comparisons(program);
    if total == 0 {
        return None;
    }
    let target = rng.random_range(0..total);
    let mut offset = target;
    let mut detail = String::new();
    for expr in rule_exprs_mut(program) {
        let here = expr.count_comparisons();
        if offset >= here {
            offset -= here;
            continue;
        }
        let leaf = expr.nth_comparison_mut(offset).expect("counted comparison exists");
        let Expr::Cmp { op, lhs, rhs } = leaf else { unreachable!() };
        let const_slot: Option<&mut f64> = match (lhs, rhs) {
            (_, Operand::Const(c)) => Some(c),
            (Operand::Const(c), _) => Some(c),
            _ => None,
        };
        if let (Some(c), true) = (const_slot, rng.random_bool(0.5)) {
            let old = *c;
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let new = if old == 0.0 {
                sign * rng.random_range(0.05..0.25)
            } else {
                old * (1.0 + sign * rng.random_range(0.1..0.25))
            };
            *c = new;
            detail = format!("threshold {old} -> {new}");
        } else {
            let old = *op;
            let choices: Vec<CmpOp> = ALL_OPS.iter().copied().filter(|o| *o != old).collect();
            *op = choices[rng.random_range(0..choices.len())];
            detail = format!("comparison {} -> {}", old.symbol(), op.symbol());
        }
        break;
    }
    Some(EditReport {
        edit: Edit::RuleEdit,
        detail,
    })
}

/// Kinds whose values have scale-free thresholds, safe to compare against a
/// constant without knowing the price level.
const ADDABLE: [IndicatorKind; 6] = [
    IndicatorKind::Rsi,
    IndicatorKind::BollingerZ,
    IndicatorKind::RollingVol,
    IndicatorKind::Momentum,
    IndicatorKind::MacdHist,
    IndicatorKind::StochasticKdj,
];

fn apply_add(program: &mut Program, rng: &mut ChaCha8Rng) -> Option<EditReport> {
    let kind = ADDABLE[rng.random_range(0..ADDABLE.len())];
    let params = match kind {
        IndicatorKind::Rsi => vec![rng.random_range(7..=21)],
        IndicatorKind::BollingerZ => vec![rng.random_range(10..=30)],
        IndicatorKind::RollingVol => vec![rng.random_range(10..=40)],
        IndicatorKind::Momentum => vec![rng.random_range(10..=60)],
        IndicatorKind::MacdHist => {
            let fast = rng.random_range(8..=12);
            let slow = rng.random_range(17..=35);
            let signal = rng.random_range(5..=12);
            vec![fast, slow, signal]
        }
        IndicatorKind::StochasticKdj => vec![rng.random_range(5..=14), rng.random_range(3..=5)],
        _ => unreachable!(),
    };
    let name = fresh_name(program, "i");
    let accessor = (kind == IndicatorKind::StochasticKdj).then_some(Accessor::K);
    let make_ref = || Operand::Ref {
        name: name.clone(),
        accessor,
    };
    let bullish = rng.random_bool(0.5);
    let cmp = match kind {
        IndicatorKind::Rsi => {
            let t = [25.0, 30.0, 35.0][rng.random_range(0..3)];
            if bullish {
                Expr::cmp(make_ref(), CmpOp::Lt, Operand::Const(t))
            } else {
                Expr::cmp(make_ref(), CmpOp::Gt, Operand::Const(100.0 - t))
            }
        }
        IndicatorKind::BollingerZ => {
            let t = [1.0, 1.5, 2.0][rng.random_range(0..3)];
            if bullish {
                Expr::cmp(make_ref(), CmpOp::Lt, Operand::Const(-t))
            } else {
                Expr::cmp(make_ref(), CmpOp::Gt, Operand::Const(t))
            }
        }
        IndicatorKind::RollingVol => {
            let t = [0.01, 0.02, 0.04][rng.random_range(0..3)];
            let op = if bullish { CmpOp::Lt } else { CmpOp::Gt };
            Expr::cmp(make_ref(), op, Operand::Const(t))
        }
        IndicatorKind::Momentum => {
            let t = [0.0, 0.05][rng.random_range(0..2)];
            if bullish {
                Expr::cmp(make_ref(), CmpOp::Gt, Operand::Const(t))
            } else {
                Expr::cmp(make_ref(), CmpOp::Lt, Operand::Const(-t))
            }
        }
        IndicatorKind::MacdHist => {
            let op = if bullish { CmpOp::Gt } else { CmpOp::Lt };
            Expr::cmp(make_ref(), op, Operand::Const(0.0))
        }
        IndicatorKind::StochasticKdj => {
            if bullish {
                Expr::cmp(make_ref(), CmpOp::Lt, Operand::Const(20.0))
            } else {
                Expr::cmp(make_ref(), CmpOp::Gt, Operand::Const(80.0))
            }
        }
        _ => unreachable!(),
    };
    program.indicator_defs.push((name.clone(), IndicatorSpec::new(kind, params)));
    let into_entry = rng.random_bool(0.5);
    let conjunction = rng.random_bool(0.5);
    let side = if into_entry { &mut program.entry } else { &mut program.exit };
    let old = std::mem::replace(side, Expr::Always);
    *side = if conjunction { Expr::and(old, cmp) } else { Expr::or(old, cmp) };
    Some(EditReport {
        edit: Edit::AddIndicator,
        detail: format!(
            "added {name} = {} gating {}",
            kind.name(),
            if into_entry { "entry" } else { "exit" }
        ),
    })
}

fn apply_remove(program: &mut Program, rng: &mut ChaCha8Rng) -> Option<EditReport> {
    if program.indicator_defs.is_empty() {
        return None;
    }
    let di = rng.random_range(0..program.indicator_defs.len());
    let (name, _) = program.indicator_defs.remove(di);
    program.entry = prune_refs(&program.entry, &name);
    program.exit = prune_refs(&program.exit, &name);
    if let Some(e) = program.short_entry.take() {
        program.short_entry = Some(prune_refs(&e, &name));
    }
    if let Some(e) = program.short_exit.take() {
        program.short_exit = Some(prune_refs(&e, &name));
    }
    if let Some(s) = program.strength.as_mut() {
        for rule in &mut s.rules {
            rule.condition = prune_refs(&rule.condition, &name);
        }
    }
    Some(EditReport {
        edit: Edit::RemoveIndicator,
        detail: format!("removed indicator {name} and its rules"),
    })
}

fn apply_crossover(
    program: &mut Program,
    cousins: &[&CandidateRecord],
    rng: &mut ChaCha8Rng,
) -> Option<EditReport> {
    let eligible: Vec<&CandidateRecord> = cousins
        .iter()
        .copied()
        .filter(|c| c.program.entry.count_comparisons() + c.program.exit.count_comparisons() > 0)
        .collect();
    if eligible.is_empty() {
        return None;
    }
    let cousin = eligible[rng.random_range(0..eligible.len())];
    let entry_comps = cousin.program.entry.count_comparisons();
    let exit_comps = cousin.program.exit.count_comparisons();
    let pick = rng.random_range(0..entry_comps + exit_comps);
    let (source, from_entry, leaf_idx) = if pick < entry_comps {
        (&cousin.program.entry, true, pick)
    } else {
        (&cousin.program.exit, false, pick - entry_comps)
    };
    let mut leaf = nth_comparison(source, leaf_idx).expect("counted comparison exists").clone();
    // Import the indicators the grafted leaf references, renaming on
    // conflicting definitions.
    let mut refs = Vec::new();
    leaf.collect_refs(&mut refs);
    let refs: Vec<String> = refs.iter().map(|s| s.to_string()).collect();
    for ref_name in refs {
        let spec = cousin
            .program
            .lookup_indicator(&ref_name)
            .expect("cousin program is valid")
            .clone();
        match program.lookup_indicator(&ref_name) {
            Some(existing) if *existing == spec => {}
            Some(_) => {
                let renamed = fresh_name(program, "x");
                rename_refs(&mut leaf, &ref_name, &renamed);
                program.indicator_defs.push((renamed, spec));
            }
            None => {
                program.indicator_defs.push((ref_name.clone(), spec));
            }
        }
    }
    let conjunction = rng.random_bool(0.5);
    let side = if from_entry { &mut program.entry } else { &mut program.exit };
    let old = std::mem::replace(side, Expr::Always);
    *side = if conjunction { Expr::and(old, leaf) } else { Expr::or(old, leaf) };
    Some(EditReport {
        edit: Edit::Crossover,
        detail: format!(
            "grafted a {} rule from candidate {}",
            if from_entry { "entry" } else { "exit" },
            cousin.id
        ),
    })
}

fn apply_sizing_toggle(program: &mut Program, rng: &mut ChaCha8Rng) -> Option<EditReport> {
    let menu: Vec<SizingRule> = vec![
        SizingRule::EqualWeight,
        SizingRule::InverseVolatility { lookback: 20 },
        SizingRule::InverseVolatility { lookback: 60 },
        SizingRule::FixedFraction { fraction: 0.5 },
        SizingRule::SignalProportional {
            fallback: ZeroStrengthFallback::Cash,
        },
    ];
    let choices: Vec<SizingRule> = menu.into_iter().filter(|s| *s != program.sizing).collect();
    let new = choices[rng.random_range(0..choices.len())].clone();
    let detail = format!("sizing {:?} -> {:?}", program.sizing, new);
    program.sizing = new;
    Some(EditReport {
        edit: Edit::SizingToggle,
        detail,
    })
}

fn apply_risk_toggle(program: &mut Program, rng: &mut ChaCha8Rng) -> Option<EditReport> {
    let touch_stop = rng.random_bool(0.5);
    let detail;
    if touch_stop {
        detail = match program.risk.trailing_stop {
            Some(p) => {
                program.risk.trailing_stop = None;
                format!("dropped trailing stop {p}")
            }
            None => {
                let p = [0.08, 0.12, 0.2][rng.random_range(0..3)];
                program.risk.trailing_stop = Some(p);
                format!("added trailing stop {p}")
            }
        };
    } else {
        detail = match program.risk.max_position_weight {
            Some(w) => {
                program.risk.max_position_weight = None;
                format!("dropped position cap {w}")
            }
            None => {
                let w = [0.25, 0.4, 0.6][rng.random_range(0..3)];
                program.risk.max_position_weight = Some(w);
                format!("added position cap {w}")
            }
        };
    }
    Some(EditReport {
        edit: Edit::RiskToggle,
        detail,
    })
}

fn edit_hypothesis(edit: Edit, detail: &str, parent: &CandidateRecord) -> Hypothesis {
    let parent_score = parent
        .score()
        .map(|s| format!("{s:.4}"))
        .unwrap_or_else(|| "undefined".to_string());
    let (claim, why) = match edit {
        Edit::Jitter => (
            format!("Adjusting a lookback ({detail}) will improve the risk-adjusted fit."),
            "Small parameter steps probe the local response surface around a working configuration.",
        ),
        Edit::RuleEdit => (
            format!("Reshaping a trading rule ({detail}) will trade at better moments."),
            "Thresholds and comparison direction control how selective the signal is.",
        ),
        Edit::AddIndicator => (
            format!("Adding a confirming signal ({detail}) will filter bad trades."),
            "A second, independent condition can suppress entries the parent takes in hostile regimes.",
        ),
        Edit::RemoveIndicator => (
            format!("Simplifying the rule set ({detail}) will reduce overfitting."),
            "Dropping a condition widens participation; simpler rules generalize better when the removed signal added noise.",
        ),
        Edit::Crossover => (
            format!("Combining rules across lineages ({detail}) will inherit a proven edge."),
            "A rule that earned its keep in a cousin's niche may transfer to the parent's.",
        ),
        Edit::SizingToggle => (
            format!("Re-weighting positions ({detail}) will improve the return-to-drawdown balance."),
            "Sizing reshapes the portfolio's risk concentration without touching the signals.",
        ),
        Edit::RiskToggle => (
            format!("Changing the risk overlay ({detail}) will improve drawdown control."),
            "Stops and caps bound the damage of losing positions at the cost of early exits.",
        ),
    };
    Hypothesis {
        hypothesis: claim,
        rationale: format!("{why} Parent combined score: {parent_score}."),
        objectives: "Beat the parent's combined score on the training window while remaining robust.".to_string(),
        expected_insights: format!(
            "Whether this family of edit helps around parent candidate {}.",
            parent.id
        ),
        risks_limitations: "Single-edit steps can land in a worse local optimum; results are window-specific.".to_string(),
        experimentation_ideas: "If the edit helps, push further in the same direction; if it hurts, revert and try the complementary edit.".to_string(),
    }
}

impl StrategyGenerator for MutationalGenerator {
    fn propose(&self, ctx: &GenerationContext<'_>, rng: &mut ChaCha8Rng) -> Result<GeneratorOutcome, GenerateError> {
        let parent = ctx.parent;
        let mut program = parent.program.clone();
        let mut menu: Vec<Edit> = Vec::new();
        let opts = ctx.dsl_options;
        let has_jitter_slot = program.indicator_defs.iter().any(|(_, spec)| {
            (0..spec.params.len()).any(|pi| {
                let (lo, hi) = param_range(spec, pi, opts);
                lo < hi
            })
        });
        if has_jitter_slot {
            menu.push(Edit::Jitter);
        }
        if total_comparisons(&program) > 0 {
            menu.push(Edit::RuleEdit);
        }
        menu.push(Edit::AddIndicator);
        if !program.indicator_defs.is_empty() {
            menu.push(Edit::RemoveIndicator);
        }
        if ctx
            .cousins
            .iter()
            .any(|c| c.program.entry.count_comparisons() + c.program.exit.count_comparisons() > 0)
        {
            menu.push(Edit::Crossover);
        }
        menu.push(Edit::SizingToggle);
        menu.push(Edit::RiskToggle);

        let chosen = menu[rng.random_range(0..menu.len())];
        let report = match chosen {
            Edit::Jitter => apply_jitter(&mut program, opts, rng),
            Edit::RuleEdit => apply_rule_edit(&mut program, rng),
            Edit::AddIndicator => apply_add(&mut program, rng),
            Edit::RemoveIndicator => apply_remove(&mut program, rng),
            Edit::Crossover => apply_crossover(&mut program, &ctx.cousins, rng),
            Edit::SizingToggle => apply_sizing_toggle(&mut program, rng),
            Edit::RiskToggle => apply_risk_toggle(&mut program, rng),
        }
        .expect("edit was drawn from the applicable menu");

        program.category_tags = recompute_tags(&program, ctx.taxonomy);
        let stem: String = parent.program.name.chars().take(36).collect();
        program.name = format!("{stem}_{}", report.edit.slug());
        if program == parent.program {
            // Tag recomputation can undo a cosmetic edit; force a visible one.
            apply_risk_toggle(&mut program, rng);
        }
        program
            .validate(opts)
            .expect("mutational offspring must stay valid by construction");
        Ok(GeneratorOutcome {
            hypothesis: edit_hypothesis(report.edit, &report.detail, parent),
            program,
            repair_attempts: 0,
            raw_transcripts: Vec::new(),
        })
    }

    fn analyze(&self, candidate: &CandidateRecord, parent: Option<&CandidateRecord>) -> Analysis {
        templated_analysis(candidate, parent)
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "undefined".to_string())
}

fn metrics_line(record: &CandidateRecord) -> String {
    match &record.metrics {
        None => "backtest failed; no metrics".to_string(),
        Some(m) => format!(
            "sharpe {} sortino {} ir {} mdd {:.4} cr {:.4} trades {} score {}",
            fmt_opt(m.sharpe),
            fmt_opt(m.sortino),
            fmt_opt(m.information_ratio),
            m.max_drawdown,
            m.cumulative_return,
            m.num_transactions,
            fmt_opt(m.combined_score()),
        ),
    }
}

/// Quantitative summary comparing a candidate to its parent; the verdict
/// follows the sign of the combined-score delta.
pub fn templated_analysis(candidate: &CandidateRecord, parent: Option<&CandidateRecord>) -> Analysis {
    let score = candidate.score();
    let parent_score = parent.and_then(|p| p.score());
    let verdict = match (score, parent_score) {
        (Some(s), Some(p)) if s > p => Verdict::Supported,
        (Some(s), Some(p)) if s < p => Verdict::Refuted,
        (Some(_), Some(_)) => Verdict::Inconclusive,
        (Some(_), None) => Verdict::Supported,
        (None, Some(_)) => Verdict::Refuted,
        (None, None) => Verdict::Inconclusive,
    };
    let delta = match (score, parent_score) {
        (Some(s), Some(p)) => format!("{:+.4}", s - p),
        _ => "undefined".to_string(),
    };
    let mut text = format!(
        "Candidate {}: {}\n",
        candidate.id,
        metrics_line(candidate)
    );
    match parent {
        Some(p) => {
            text.push_str(&format!("Parent {}: {}\n", p.id, metrics_line(p)));
            text.push_str(&format!("Combined score delta vs parent: {delta}\n"));
        }
        None => text.push_str("No parent: seed or orphaned candidate.\n"),
    }
    text.push_str(&format!("Hypothesis verdict: {}.", verdict.as_str()));
    let head: String = candidate.hypothesis.hypothesis.chars().take(120).collect();
    let insight_text = format!(
        "{}: {} (score {} -> {})",
        verdict.as_str(),
        head,
        fmt_opt(parent_score),
        fmt_opt(score)
    );
    Analysis {
        text,
        insight_text,
        verdict,
    }
}
