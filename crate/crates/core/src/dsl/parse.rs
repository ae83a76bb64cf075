//! Recursive-descent parser for the canonical strategy text form.
//!
//! Errors carry the exact source position so the generator repair loop can
//! quote them back to the model verbatim.

use super::program::{
    Accessor, CmpOp, DslOptions, Expr, IndicatorKind, IndicatorSpec, Operand, Program,
    ProgramParseError, Rebalance, RiskOverlay, SizingRule, StrengthBlock, StrengthRule,
    ZeroStrengthFallback,
};

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Str(String),
    Num(f64),
    Punct(char),
    Le,
    Ge,
    Eof,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    line: usize,
    col: usize,
}

fn lex(text: &str) -> Result<Vec<Token>, ProgramParseError> {
    let mut tokens = Vec::new();
    let chars: Vec<char> = text.chars().collect();
    let mut i = 0;
    let mut line = 1;
    let mut col = 1;
    let err = |line: usize, col: usize, message: String| ProgramParseError::SyntaxError {
        line,
        col,
        message,
    };
    while i < chars.len() {
        let c = chars[i];
        let (tline, tcol) = (line, col);
        let step = |i: &mut usize, line: &mut usize, col: &mut usize| {
            if chars[*i] == '\n' {
                *line += 1;
                *col = 1;
            } else {
                *col += 1;
            }
            *i += 1;
        };
        if c.is_whitespace() {
            step(&mut i, &mut line, &mut col);
            continue;
        }
        if c == '#' {
            while i < chars.len() && chars[i] != '\n' {
                step(&mut i, &mut line, &mut col);
            }
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                step(&mut i, &mut line, &mut col);
            }
            tokens.push(Token {
                tok: Tok::Ident(chars[start..i].iter().collect()),
                line: tline,
                col: tcol,
            });
            continue;
        }
        if c.is_ascii_digit() || (c == '-' && i + 1 < chars.len() && chars[i + 1].is_ascii_digit())
        {
            let start = i;
            step(&mut i, &mut line, &mut col);
            let mut seen_dot = false;
            let mut seen_exp = false;
            while i < chars.len() {
                let d = chars[i];
                if d.is_ascii_digit() {
                    step(&mut i, &mut line, &mut col);
                } else if d == '.' && !seen_dot && !seen_exp {
                    seen_dot = true;
                    step(&mut i, &mut line, &mut col);
                } else if (d == 'e' || d == 'E') && !seen_exp {
                    seen_exp = true;
                    step(&mut i, &mut line, &mut col);
                    if i < chars.len() && (chars[i] == '+' || chars[i] == '-') {
                        step(&mut i, &mut line, &mut col);
                    }
                } else {
                    break;
                }
            }
            let raw: String = chars[start..i].iter().collect();
            let v: f64 = raw
                .parse()
                .map_err(|_| err(tline, tcol, format!("bad number `{raw}`")))?;
            if !v.is_finite() {
                return Err(err(tline, tcol, format!("non-finite number `{raw}`")));
            }
            tokens.push(Token {
                tok: Tok::Num(v),
                line: tline,
                col: tcol,
            });
            continue;
        }
        if c == '"' {
            step(&mut i, &mut line, &mut col);
            let mut s = String::new();
            loop {
                if i >= chars.len() {
                    return Err(err(tline, tcol, "unterminated string".into()));
                }
                let d = chars[i];
                step(&mut i, &mut line, &mut col);
                match d {
                    '"' => break,
                    '\\' => {
                        if i >= chars.len() {
                            return Err(err(tline, tcol, "unterminated escape".into()));
                        }
                        let e = chars[i];
                        step(&mut i, &mut line, &mut col);
                        match e {
                            '"' => s.push('"'),
                            '\\' => s.push('\\'),
                            other => {
                                return Err(err(
                                    tline,
                                    tcol,
                                    format!("unsupported escape `\\{other}`"),
                                ))
                            }
                        }
                    }
                    other => s.push(other),
                }
            }
            tokens.push(Token {
                tok: Tok::Str(s),
                line: tline,
                col: tcol,
            });
            continue;
        }
        if c == '<' || c == '>' {
            let ge_le = i + 1 < chars.len() && chars[i + 1] == '=';
            step(&mut i, &mut line, &mut col);
            if ge_le {
                step(&mut i, &mut line, &mut col);
                tokens.push(Token {
                    tok: if c == '<' { Tok::Le } else { Tok::Ge },
                    line: tline,
                    col: tcol,
                });
            } else {
                tokens.push(Token {
                    tok: Tok::Punct(c),
                    line: tline,
                    col: tcol,
                });
            }
            continue;
        }
        if "{}(),;=.:".contains(c) {
            step(&mut i, &mut line, &mut col);
            tokens.push(Token {
                tok: Tok::Punct(c),
                line: tline,
                col: tcol,
            });
            continue;
        }
        return Err(err(tline, tcol, format!("unexpected character `{c}`")));
    }
    tokens.push(Token {
        tok: Tok::Eof,
        line,
        col,
    });
    Ok(tokens)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
}

const EXPR_KEYWORDS: [&str; 8] = [
    "and", "or", "not", "always", "never", "crosses_above", "crosses_below", "when",
];

impl Parser {
    fn peek(&self) -> &Token {
        &self.tokens[self.pos]
    }

    fn next(&mut self) -> Token {
        let t = self.tokens[self.pos].clone();
        if self.pos + 1 < self.tokens.len() {
            self.pos += 1;
        }
        t
    }

    fn error(&self, message: impl Into<String>) -> ProgramParseError {
        let t = self.peek();
        ProgramParseError::SyntaxError {
            line: t.line,
            col: t.col,
            message: message.into(),
        }
    }

    fn expect_punct(&mut self, c: char) -> Result<(), ProgramParseError> {
        if self.peek().tok == Tok::Punct(c) {
            self.next();
            Ok(())
        } else {
            Err(self.error(format!("expected `{c}`")))
        }
    }

    fn expect_ident(&mut self, word: &str) -> Result<(), ProgramParseError> {
        if matches!(&self.peek().tok, Tok::Ident(w) if w == word) {
            self.next();
            Ok(())
        } else {
            Err(self.error(format!("expected `{word}`")))
        }
    }

    fn ident(&mut self) -> Result<String, ProgramParseError> {
        match &self.peek().tok {
            Tok::Ident(w) => {
                let w = w.clone();
                self.next();
                Ok(w)
            }
            _ => Err(self.error("expected identifier")),
        }
    }

    fn number(&mut self) -> Result<f64, ProgramParseError> {
        match self.peek().tok {
            Tok::Num(v) => {
                self.next();
                Ok(v)
            }
            _ => Err(self.error("expected number")),
        }
    }

    fn integer(&mut self, what: &str) -> Result<u32, ProgramParseError> {
        let err = self.error(format!("expected non-negative integer {what}"));
        let v = self.number()?;
        if v.fract() != 0.0 || v < 0.0 || v > u32::MAX as f64 {
            return Err(err);
        }
        Ok(v as u32)
    }

    fn peek_ident_is(&self, word: &str) -> bool {
        matches!(&self.peek().tok, Tok::Ident(w) if w == word)
    }

    fn parse_operand(&mut self) -> Result<Operand, ProgramParseError> {
        match &self.peek().tok {
            Tok::Num(v) => {
                let v = *v;
                self.next();
                Ok(Operand::Const(v))
            }
            Tok::Ident(name) => {
                let name = name.clone();
                if EXPR_KEYWORDS.contains(&name.as_str()) {
                    return Err(self.error(format!("`{name}` cannot be used as an operand")));
                }
                self.next();
                let accessor = if self.peek().tok == Tok::Punct('.') {
                    self.next();
                    let field = self.ident()?;
                    Some(match field.as_str() {
                        "k" => Accessor::K,
                        "d" => Accessor::D,
                        "j" => Accessor::J,
                        other => {
                            return Err(self.error(format!(
                                "unknown component `.{other}` (expected .k, .d, or .j)"
                            )))
                        }
                    })
                } else {
                    None
                };
                Ok(Operand::Ref { name, accessor })
            }
            _ => Err(self.error("expected indicator reference or number")),
        }
    }

    fn parse_atom(&mut self) -> Result<Expr, ProgramParseError> {
        if self.peek().tok == Tok::Punct('(') {
            self.next();
            let e = self.parse_or()?;
            self.expect_punct(')')?;
            return Ok(e);
        }
        if self.peek_ident_is("always") {
            self.next();
            return Ok(Expr::Always);
        }
        if self.peek_ident_is("never") {
            self.next();
            return Ok(Expr::Never);
        }
        let lhs = self.parse_operand()?;
        let op = match &self.peek().tok {
            Tok::Punct('>') => CmpOp::Gt,
            Tok::Punct('<') => CmpOp::Lt,
            Tok::Ge => CmpOp::Ge,
            Tok::Le => CmpOp::Le,
            Tok::Ident(w) if w == "crosses_above" => CmpOp::CrossesAbove,
            Tok::Ident(w) if w == "crosses_below" => CmpOp::CrossesBelow,
            _ => return Err(self.error("expected comparison operator")),
        };
        self.next();
        let rhs = self.parse_operand()?;
        Ok(Expr::Cmp { op, lhs, rhs })
    }

    fn parse_not(&mut self) -> Result<Expr, ProgramParseError> {
        if self.peek_ident_is("not") {
            self.next();
            return Ok(Expr::Not(Box::new(self.parse_not()?)));
        }
        self.parse_atom()
    }

    fn parse_and(&mut self) -> Result<Expr, ProgramParseError> {
        let mut e = self.parse_not()?;
        while self.peek_ident_is("and") {
            self.next();
            let rhs = self.parse_not()?;
            e = Expr::And(Box::new(e), Box::new(rhs));
        }
        Ok(e)
    }

    fn parse_or(&mut self) -> Result<Expr, ProgramParseError> {
        let mut e = self.parse_and()?;
        while self.peek_ident_is("or") {
            self.next();
            let rhs = self.parse_and()?;
            e = Expr::Or(Box::new(e), Box::new(rhs));
        }
        Ok(e)
    }

    fn parse_expr_statement(&mut self) -> Result<Expr, ProgramParseError> {
        let e = self.parse_or()?;
        self.expect_punct(';')?;
        Ok(e)
    }

    fn parse_indicator_def(&mut self) -> Result<(String, IndicatorSpec), ProgramParseError> {
        let name = self.ident()?;
        if EXPR_KEYWORDS.contains(&name.as_str()) {
            return Err(self.error(format!("`{name}` is reserved and cannot name an indicator")));
        }
        self.expect_punct('=')?;
        let kind_name = self.ident()?;
        let kind = IndicatorKind::from_name(&kind_name)
            .ok_or(ProgramParseError::UnknownIndicator { kind: kind_name })?;
        self.expect_punct('(')?;
        let mut params = Vec::new();
        if self.peek().tok != Tok::Punct(')') {
            loop {
                params.push(self.integer("parameter")?);
                if self.peek().tok == Tok::Punct(',') {
                    self.next();
                } else {
                    break;
                }
            }
        }
        self.expect_punct(')')?;
        self.expect_punct(';')?;
        Ok((name, IndicatorSpec::new(kind, params)))
    }

    fn parse_sizing(&mut self) -> Result<SizingRule, ProgramParseError> {
        let kind = self.ident()?;
        let rule = match kind.as_str() {
            "equal_weight" => SizingRule::EqualWeight,
            "inverse_volatility" => {
                self.expect_punct('(')?;
                let lookback = self.integer("lookback")?;
                self.expect_punct(')')?;
                SizingRule::InverseVolatility { lookback }
            }
            "fixed_fraction" => {
                self.expect_punct('(')?;
                let fraction = self.number()?;
                self.expect_punct(')')?;
                SizingRule::FixedFraction { fraction }
            }
            "signal_proportional" => {
                let fallback = if self.peek().tok == Tok::Punct('(') {
                    self.next();
                    self.expect_ident("equal_weight")?;
                    self.expect_punct(')')?;
                    ZeroStrengthFallback::EqualWeight
                } else {
                    ZeroStrengthFallback::Cash
                };
                SizingRule::SignalProportional { fallback }
            }
            "static_value_weight" => {
                self.expect_punct('{')?;
                let mut shares = Vec::new();
                while self.peek().tok != Tok::Punct('}') {
                    let sym = match &self.peek().tok {
                        Tok::Str(s) => {
                            let s = s.clone();
                            self.next();
                            s
                        }
                        _ => return Err(self.error("expected quoted symbol")),
                    };
                    self.expect_punct('=')?;
                    let count = self.number()?;
                    shares.push((sym, count));
                    if self.peek().tok == Tok::Punct(';') {
                        self.next();
                    } else {
                        break;
                    }
                }
                self.expect_punct('}')?;
                SizingRule::StaticValueWeight { shares }
            }
            other => return Err(self.error(format!("unknown sizing rule `{other}`"))),
        };
        self.expect_punct(';')?;
        Ok(rule)
    }

    fn parse_risk(&mut self) -> Result<RiskOverlay, ProgramParseError> {
        let mut risk = RiskOverlay::default();
        loop {
            let which = self.ident()?;
            self.expect_punct('(')?;
            let v = self.number()?;
            self.expect_punct(')')?;
            match which.as_str() {
                "trailing_stop" => risk.trailing_stop = Some(v),
                "max_position_weight" => risk.max_position_weight = Some(v),
                other => return Err(self.error(format!("unknown risk overlay `{other}`"))),
            }
            if self.peek().tok == Tok::Punct(',') {
                self.next();
            } else {
                break;
            }
        }
        self.expect_punct(';')?;
        Ok(risk)
    }

    fn parse_rebalance(&mut self) -> Result<Rebalance, ProgramParseError> {
        let word = self.ident()?;
        let r = match word.as_str() {
            "daily" => Rebalance::Daily,
            "monthly" => Rebalance::Monthly,
            "every_n_days" => {
                self.expect_punct('(')?;
                let n = self.integer("day count")?;
                self.expect_punct(')')?;
                Rebalance::EveryNDays(n)
            }
            other => return Err(self.error(format!("unknown rebalance schedule `{other}`"))),
        };
        self.expect_punct(';')?;
        Ok(r)
    }

    fn parse_program(&mut self) -> Result<Program, ProgramParseError> {
        self.expect_ident("strategy")?;
        let name = match &self.peek().tok {
            Tok::Str(s) => {
                let s = s.clone();
                self.next();
                s
            }
            _ => return Err(self.error("expected quoted strategy name")),
        };
        self.expect_punct('{')?;

        let mut category_tags = Vec::new();
        let mut indicator_defs = Vec::new();
        let mut entry = None;
        let mut exit = None;
        let mut short_entry = None;
        let mut short_exit = None;
        let mut strength = None;
        let mut sizing = None;
        let mut risk = RiskOverlay::default();
        let mut rebalance = None;

        while self.peek().tok != Tok::Punct('}') {
            let section = self.ident()?;
            match section.as_str() {
                "categories" => {
                    self.expect_punct(':')?;
                    loop {
                        category_tags.push(self.ident()?);
                        if self.peek().tok == Tok::Punct(',') {
                            self.next();
                        } else {
                            break;
                        }
                    }
                    self.expect_punct(';')?;
                }
                "indicators" => {
                    self.expect_punct('{')?;
                    while self.peek().tok != Tok::Punct('}') {
                        indicator_defs.push(self.parse_indicator_def()?);
                    }
                    self.expect_punct('}')?;
                }
                "entry" => {
                    self.expect_punct(':')?;
                    entry = Some(self.parse_expr_statement()?);
                }
                "exit" => {
                    self.expect_punct(':')?;
                    exit = Some(self.parse_expr_statement()?);
                }
                "short_entry" => {
                    self.expect_punct(':')?;
                    short_entry = Some(self.parse_expr_statement()?);
                }
                "short_exit" => {
                    self.expect_punct(':')?;
                    short_exit = Some(self.parse_expr_statement()?);
                }
                "strength" => {
                    self.expect_punct('{')?;
                    let mut rules = Vec::new();
                    let mut default = None;
                    while self.peek().tok != Tok::Punct('}') {
                        if self.peek_ident_is("default") {
                            self.next();
                            default = Some(self.number()?);
                            self.expect_punct(';')?;
                        } else {
                            let value = self.number()?;
                            self.expect_ident("when")?;
                            let condition = self.parse_expr_statement()?;
                            rules.push(StrengthRule { value, condition });
                        }
                    }
                    self.expect_punct('}')?;
                    let default =
                        default.ok_or_else(|| self.error("strength block needs a `default`"))?;
                    strength = Some(StrengthBlock { rules, default });
                }
                "sizing" => {
                    self.expect_punct(':')?;
                    sizing = Some(self.parse_sizing()?);
                }
                "risk" => {
                    self.expect_punct(':')?;
                    risk = self.parse_risk()?;
                }
                "rebalance" => {
                    self.expect_punct(':')?;
                    rebalance = Some(self.parse_rebalance()?);
                }
                other => return Err(self.error(format!("unknown section `{other}`"))),
            }
        }
        self.expect_punct('}')?;
        if self.peek().tok != Tok::Eof {
            return Err(self.error("trailing input after strategy block"));
        }

        Ok(Program {
            name,
            category_tags,
            indicator_defs,
            entry: entry.ok_or_else(|| self.error("missing `entry` rule"))?,
            exit: exit.ok_or_else(|| self.error("missing `exit` rule"))?,
            short_entry,
            short_exit,
            strength,
            sizing: sizing.ok_or_else(|| self.error("missing `sizing` rule"))?,
            risk,
            rebalance: rebalance.ok_or_else(|| self.error("missing `rebalance` rule"))?,
        })
    }
}

/// Parse and validate with default (long-only) options.
pub fn parse_program(text: &str) -> Result<Program, ProgramParseError> {
    parse_program_with(text, &DslOptions::default())
}

/// Parse and validate against explicit limits.
pub fn parse_program_with(
    text: &str,
    opts: &DslOptions,
) -> Result<Program, ProgramParseError> {
    let tokens = lex(text)?;
    let mut parser = Parser { tokens, pos: 0 };
    let program = parser.parse_program()?;
    program.validate(opts)?;
    Ok(program)
}
