//! Front-end for the system description language.
//!
//! ```text
//! system(dim=1, order=2)
//! params(w, g=1)
//! nonzero(g)
//! L = 1/2*(q1^2 - w^2*q0^2 - g*q2^2)
//! ```
//!
//! Statements are separated by whitespace, newlines or `;`. `#` starts a
//! comment. Besides `L = <expr>`, a system may declare constraints of the
//! image of the Legendre map with `primary: <expr>`.

use num_bigint::BigInt;
use num_traits::{ToPrimitive, Zero};

use super::chart::{ChartSpec, ParamSpec};
use super::expr::Expr;
use super::poly::Coef;
use super::symbol::{Symbol, UnknownKind};
use crate::error::ParseError;

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Num(String),
    Ident(String),
    Punct(char),
    Eof,
}

#[derive(Clone, Debug)]
struct Token {
    tok: Tok,
    line: usize,
    col: usize,
}

fn lex(src: &str) -> Result<Vec<Token>, ParseError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0, 1, 1);
    while i < chars.len() {
        let c = chars[i];
        let (l0, c0) = (line, col);
        if c == '\n' {
            i += 1;
            line += 1;
            col = 1;
            continue;
        }
        if c.is_whitespace() || c == ';' {
            i += 1;
            col += 1;
            continue;
        }
        if c == '#' {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
            continue;
        }
        if c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    i = j;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let text: String = chars[start..i].iter().collect();
            col += i - start;
            out.push(Token { tok: Tok::Num(text), line: l0, col: c0 });
            continue;
        }
        if c.is_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            let text: String = chars[start..i].iter().collect();
            col += i - start;
            out.push(Token { tok: Tok::Ident(text), line: l0, col: c0 });
            continue;
        }
        if "+-*/^(),=:".contains(c) {
            out.push(Token { tok: Tok::Punct(c), line: l0, col: c0 });
            i += 1;
            col += 1;
            continue;
        }
        return Err(ParseError::Syntax { line, col, msg: format!("unexpected character `{c}`") });
    }
    out.push(Token { tok: Tok::Eof, line, col });
    Ok(out)
}

/// Exact rational value of a decimal literal such as `12`, `0.25` or `1e-3`.
fn parse_number(text: &str) -> Option<Coef> {
    let (mant, exp) = match text.find(['e', 'E']) {
        Some(i) => (&text[..i], text[i + 1..].parse::<i32>().ok()?),
        None => (text, 0),
    };
    let (int_part, frac_part) = match mant.find('.') {
        Some(i) => (&mant[..i], &mant[i + 1..]),
        None => (mant, ""),
    };
    if frac_part.contains('.') {
        return None;
    }
    let digits = format!("{int_part}{frac_part}");
    let n: BigInt = if digits.is_empty() { return None } else { digits.parse().ok()? };
    let scale = exp - frac_part.len() as i32;
    let ten = BigInt::from(10);
    Some(if scale >= 0 {
        Coef::from_integer(n * num_traits::pow(ten, scale as usize))
    } else {
        Coef::new(n, num_traits::pow(ten, (-scale) as usize))
    })
}

/// Which symbols an expression may mention.
#[derive(Clone, Copy, Debug, PartialEq)]
enum Scope {
    Lagrangian,
    Image,
    Free,
}

struct Parser<'a> {
    toks: Vec<Token>,
    pos: usize,
    chart: Option<&'a ChartSpec>,
    scope: Scope,
}

struct Family {
    kind: char,
    order: usize,
    comp: Option<usize>,
}

fn split_family(name: &str) -> Option<Family> {
    let mut chars = name.chars();
    let kind = chars.next()?;
    if !"qpfFG".contains(kind) {
        return None;
    }
    let rest: &str = &name[1..];
    let (ord, comp) = match rest.split_once('_') {
        Some((o, c)) => (o, Some(c)),
        None => (rest, None),
    };
    if ord.is_empty() || !ord.chars().all(|c| c.is_ascii_digit()) {
        return None;
    }
    let comp = match comp {
        Some(c) if !c.is_empty() && c.chars().all(|d| d.is_ascii_digit()) => Some(c.parse().ok()?),
        Some(_) => return None,
        None => None,
    };
    Some(Family { kind, order: ord.parse().ok()?, comp })
}

impl<'a> Parser<'a> {
    fn peek(&self) -> &Token {
        &self.toks[self.pos]
    }

    fn next(&mut self) -> Token {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn syntax<T>(&self, t: &Token, msg: impl Into<String>) -> Result<T, ParseError> {
        Err(ParseError::Syntax { line: t.line, col: t.col, msg: msg.into() })
    }

    fn semantic<T>(&self, t: &Token, msg: impl Into<String>) -> Result<T, ParseError> {
        Err(ParseError::Semantic { line: t.line, col: t.col, msg: msg.into() })
    }

    fn expect(&mut self, c: char) -> Result<Token, ParseError> {
        let t = self.next();
        if t.tok == Tok::Punct(c) {
            Ok(t)
        } else {
            self.syntax(&t, format!("expected `{c}`, found {}", describe(&t.tok)))
        }
    }

    fn is_punct(&self, c: char) -> bool {
        self.peek().tok == Tok::Punct(c)
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut acc = self.term()?;
        loop {
            if self.is_punct('+') {
                self.next();
                acc = acc + self.term()?;
            } else if self.is_punct('-') {
                self.next();
                acc = acc - self.term()?;
            } else {
                return Ok(acc);
            }
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut acc = self.unary()?;
        loop {
            if self.is_punct('*') {
                self.next();
                acc = acc * self.unary()?;
            } else if self.is_punct('/') {
                let t = self.next();
                let d = self.unary()?;
                if d.is_zero() {
                    return self.semantic(&t, "division by zero");
                }
                acc = acc / d;
            } else {
                return Ok(acc);
            }
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.is_punct('-') {
            self.next();
            return Ok(-self.unary()?);
        }
        if self.is_punct('+') {
            self.next();
            return self.unary();
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.atom()?;
        if !self.is_punct('^') {
            return Ok(base);
        }
        let t = self.next();
        let ex = self.unary()?;
        let Some(r) = ex.as_rational() else {
            return self.semantic(&t, "exponent must be a rational constant");
        };
        let two = BigInt::from(2);
        if r.is_integer() {
            let Some(e) = r.numer().to_i32() else {
                return self.semantic(&t, "exponent too large");
            };
            if e < 0 && base.is_zero() {
                return self.semantic(&t, "negative power of zero");
            }
            Ok(base.pow(e))
        } else if *r.denom() == two {
            let Some(e) = r.numer().to_i32() else {
                return self.semantic(&t, "exponent too large");
            };
            if e < 0 && base.is_zero() {
                return self.semantic(&t, "negative power of zero");
            }
            Ok(base.sqrt().pow(e))
        } else {
            self.semantic(&t, "only integer and half-integer exponents are supported")
        }
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        let t = self.next();
        match &t.tok {
            Tok::Num(text) => match parse_number(text) {
                Some(c) => Ok(Expr::from_rational(c)),
                None => self.syntax(&t, format!("malformed number `{text}`")),
            },
            Tok::Punct('(') => {
                let e = self.expr()?;
                self.expect(')')?;
                Ok(e)
            }
            Tok::Ident(name) => {
                let name = name.clone();
                if self.is_punct('(') {
                    return self.call(&t, &name);
                }
                self.identifier(&t, &name)
            }
            other => self.syntax(&t, format!("expected an expression, found {}", describe(other))),
        }
    }

    fn call(&mut self, t: &Token, name: &str) -> Result<Expr, ParseError> {
        self.expect('(')?;
        match name {
            "sqrt" => {
                let arg = self.expr()?;
                self.expect(')')?;
                if let Some(c) = arg.as_rational() {
                    if c < Coef::zero() {
                        return self.semantic(t, "square root of a negative constant");
                    }
                }
                Ok(arg.sqrt())
            }
            "dot" => {
                let a = self.family_arg()?;
                self.expect(',')?;
                let b = self.family_arg()?;
                self.expect(')')?;
                let n = self.chart.map_or(1, |c| c.n);
                let mut terms = Vec::new();
                for comp in 0..n {
                    let x = self.resolve(&a.0, a.1, a.2, Some(comp))?;
                    let y = self.resolve(&b.0, b.1, b.2, Some(comp))?;
                    terms.push(Expr::symbol(x) * Expr::symbol(y));
                }
                Ok(Expr::sum_all(&terms))
            }
            _ => self.semantic(t, format!("unknown function `{name}`")),
        }
    }

    /// A coordinate family `qi` or `pi` used as a vector argument.
    fn family_arg(&mut self) -> Result<(Token, char, usize), ParseError> {
        let t = self.next();
        if let Tok::Ident(name) = &t.tok {
            if let Some(f) = split_family(name) {
                if (f.kind == 'q' || f.kind == 'p') && f.comp.is_none() {
                    return Ok((t.clone(), f.kind, f.order));
                }
            }
        }
        self.syntax(&t, "dot() expects coordinate families such as q1 or p0")
    }

    fn resolve(&self, t: &Token, kind: char, order: usize, comp: Option<usize>) -> Result<Symbol, ParseError> {
        let (n, k) = self.chart.map_or((1, usize::MAX / 4), |c| (c.n, c.k));
        let comp = match comp {
            Some(c) => c,
            None => {
                if n != 1 {
                    return self.semantic(t, format!("`{kind}{order}` needs a component suffix `_A` with 1 <= A <= {n}"));
                }
                0
            }
        };
        let sym_comp = if n == 1 { 0 } else { comp + 1 };
        match (kind, self.scope) {
            ('q', Scope::Lagrangian) if order > k => {
                self.semantic(t, format!("L may only depend on q0..q{k}, found q{order}"))
            }
            ('q', Scope::Image) if order >= k => {
                self.semantic(t, format!("image constraints may only use q0..q{}", k - 1))
            }
            ('p', Scope::Lagrangian) => self.semantic(t, "L may not depend on momenta"),
            ('p', _) if order >= k => self.semantic(t, format!("momenta run over p0..p{}", k - 1)),
            ('q', _) => Ok(Symbol::q(order, sym_comp)),
            ('p', _) => Ok(Symbol::p(order, sym_comp)),
            _ => {
                if self.scope != Scope::Free {
                    return self.semantic(t, "unknown coefficients are not allowed here");
                }
                let kind = match kind {
                    'f' => UnknownKind::LowF,
                    'F' => UnknownKind::HighF,
                    _ => UnknownKind::G,
                };
                Ok(Symbol::unknown(kind, order, sym_comp))
            }
        }
    }

    fn identifier(&mut self, t: &Token, name: &str) -> Result<Expr, ParseError> {
        if let Some(c) = self.chart {
            if c.is_param(name) {
                return Ok(Expr::param(name));
            }
        }
        if let Some(f) = split_family(name) {
            let n = self.chart.map_or(1, |c| c.n);
            let comp = match f.comp {
                Some(0) => return self.semantic(t, "components are numbered from 1"),
                Some(c) if c > n => return self.semantic(t, format!("component {c} exceeds dim = {n}")),
                Some(c) => Some(c - 1),
                None => None,
            };
            if f.kind == 'q' || f.kind == 'p' || self.scope == Scope::Free {
                return Ok(Expr::symbol(self.resolve(t, f.kind, f.order, comp)?));
            }
        }
        if self.chart.is_none() {
            return Ok(Expr::param(name));
        }
        self.semantic(t, format!("unknown identifier `{name}` (declare parameters with params(...))"))
    }
}

fn describe(t: &Tok) -> String {
    match t {
        Tok::Num(s) => format!("number `{s}`"),
        Tok::Ident(s) => format!("`{s}`"),
        Tok::Punct(c) => format!("`{c}`"),
        Tok::Eof => "end of input".to_string(),
    }
}

/// A parsed system description.
#[derive(Clone, Debug)]
pub struct SystemSource {
    pub chart: ChartSpec,
    pub lagrangian: Expr,
    /// Declared constraints on the image of the Legendre map.
    pub primary: Vec<Expr>,
}

fn is_reserved(name: &str) -> bool {
    matches!(name, "sqrt" | "dot" | "L" | "system" | "params" | "nonzero" | "primary") || split_family(name).is_some()
}

pub fn parse_system(src: &str) -> Result<SystemSource, ParseError> {
    let toks = lex(src)?;
    let mut p = Parser { toks, pos: 0, chart: None, scope: Scope::Lagrangian };
    let mut chart: Option<ChartSpec> = None;
    let mut lagrangian: Option<Expr> = None;
    let mut primary = Vec::new();
    loop {
        let t = p.next();
        let name = match &t.tok {
            Tok::Eof => break,
            Tok::Ident(s) => s.clone(),
            other => return p.syntax(&t, format!("expected a statement, found {}", describe(other))),
        };
        match name.as_str() {
            "system" => {
                if chart.is_some() {
                    return p.semantic(&t, "system(...) declared twice");
                }
                chart = Some(parse_system_header(&mut p)?);
            }
            "params" | "nonzero" => {
                let Some(c) = chart.as_mut() else {
                    return p.semantic(&t, format!("{name}(...) must follow system(...)"));
                };
                p.expect('(')?;
                loop {
                    let nt = p.next();
                    let Tok::Ident(pname) = &nt.tok else {
                        return p.syntax(&nt, "expected a parameter name");
                    };
                    if name == "params" {
                        if is_reserved(pname) {
                            return p.semantic(&nt, format!("`{pname}` is reserved and cannot name a parameter"));
                        }
                        if c.is_param(pname) {
                            return p.semantic(&nt, format!("parameter `{pname}` declared twice"));
                        }
                        let mut value = None;
                        if p.is_punct('=') {
                            p.next();
                            value = Some(parse_signed_value(&mut p)?);
                        }
                        c.params.push(ParamSpec { name: pname.clone(), value });
                    } else {
                        if !c.is_param(pname) {
                            return p.semantic(&nt, format!("`{pname}` is not a declared parameter"));
                        }
                        c.nonzero.insert(pname.clone());
                    }
                    if p.is_punct(',') {
                        p.next();
                        continue;
                    }
                    p.expect(')')?;
                    break;
                }
            }
            "L" => {
                let Some(c) = chart.as_ref() else {
                    return p.semantic(&t, "L must follow system(...)");
                };
                if lagrangian.is_some() {
                    return p.semantic(&t, "L defined twice");
                }
                p.expect('=')?;
                let mut sub = Parser { toks: p.toks.clone(), pos: p.pos, chart: Some(c), scope: Scope::Lagrangian };
                let e = sub.expr()?;
                p.pos = sub.pos;
                lagrangian = Some(e);
            }
            "primary" => {
                let Some(c) = chart.as_ref() else {
                    return p.semantic(&t, "primary: must follow system(...)");
                };
                p.expect(':')?;
                let mut sub = Parser { toks: p.toks.clone(), pos: p.pos, chart: Some(c), scope: Scope::Image };
                let e = sub.expr()?;
                p.pos = sub.pos;
                primary.push(e);
            }
            _ => return p.syntax(&t, format!("unknown statement `{name}`")),
        }
    }
    let end = p.peek().clone();
    let Some(chart) = chart else {
        return p.semantic(&end, "missing system(dim=..., order=...)");
    };
    let Some(lagrangian) = lagrangian else {
        return p.semantic(&end, "missing Lagrangian `L = ...`");
    };
    Ok(SystemSource { chart, lagrangian, primary })
}

fn parse_signed_value(p: &mut Parser) -> Result<f64, ParseError> {
    let mut sign = 1.0;
    if p.is_punct('-') {
        p.next();
        sign = -1.0;
    }
    let t = p.next();
    match &t.tok {
        Tok::Num(s) => match parse_number(s).and_then(|c| c.to_f64()) {
            Some(v) => Ok(sign * v),
            None => p.syntax(&t, format!("malformed number `{s}`")),
        },
        other => p.syntax(&t, format!("expected a number, found {}", describe(other))),
    }
}

fn parse_system_header(p: &mut Parser) -> Result<ChartSpec, ParseError> {
    p.expect('(')?;
    let (mut n, mut k) = (None, None);
    loop {
        let t = p.next();
        let Tok::Ident(key) = &t.tok else {
            return p.syntax(&t, "expected `dim` or `order`");
        };
        p.expect('=')?;
        let vt = p.next();
        let Tok::Num(v) = &vt.tok else {
            return p.syntax(&vt, "expected a positive integer");
        };
        let Ok(v) = v.parse::<usize>() else {
            return p.syntax(&vt, "expected a positive integer");
        };
        if v == 0 {
            return p.semantic(&vt, format!("{key} must be positive"));
        }
        match key.as_str() {
            "dim" => n = Some(v),
            "order" => k = Some(v),
            _ => return p.syntax(&t, format!("unknown system option `{key}`")),
        }
        if p.is_punct(',') {
            p.next();
            continue;
        }
        let close = p.expect(')')?;
        match (n, k) {
            (Some(n), Some(k)) => return Ok(ChartSpec::new(n, k)),
            _ => return p.semantic(&close, "system(...) needs both dim and order"),
        }
    }
}

/// Parses a system and returns its chart and Lagrangian.
pub fn parse_lagrangian(src: &str) -> Result<(ChartSpec, Expr), ParseError> {
    let s = parse_system(src)?;
    Ok((s.chart, s.lagrangian))
}

/// Parses a standalone expression over `chart`, accepting any coordinate,
/// momentum or unknown-coefficient symbol.
pub fn parse_expr(src: &str, chart: &ChartSpec) -> Result<Expr, ParseError> {
    let toks = lex(src)?;
    let mut p = Parser { toks, pos: 0, chart: Some(chart), scope: Scope::Free };
    let e = p.expr()?;
    let t = p.peek().clone();
    if t.tok != Tok::Eof {
        return p.syntax(&t, format!("unexpected {}", describe(&t.tok)));
    }
    Ok(e)
}
