//! S-expression surface syntax for formulas: parser and canonical printer.
//!
//! Grammar (whitespace-insensitive):
//!
//! ```text
//! FORMULA ::= (d TERM TERM) | (NAME TERM...) | (const RAT) | (recip EXPR)
//!           | (sub F F) | (add F F) | (min F F) | (max F F) | (scale EXPR F)
//!           | (sup VAR F) | (inf VAR F)
//!           | (isup IDX RANGE F) | (iinf IDX RANGE F)
//!           | (rho (TERM...) (VAR...) F) | (rho (VAR...) F)   ; sugar
//!           | (ind F)                                          ; macro
//! RANGE   ::= nat | (upto K) | (from K) | (from IDX)
//! EXPR    ::= RAT | IDX | (* RAT IDX) | (+ IDX RAT) | (+ (* RAT IDX) RAT)
//! RAT     ::= p/q | k
//! ```
//!
//! The two-tuple `rho` form is the textbook spelling `rho(y, F(y))`: the
//! listed variables are the free slots and the zeroset variables are fresh
//! renamings of them. The printer always emits the explicit three-part form,
//! and `parse(print(f)) == f` for every well-formed `f`.
//!
//! Inside an index binder, an unknown symbol whose suffix is a bound index
//! name denotes an indexed constant: with `n` bound, `cn` stands for the
//! constant family `c1, c2, ...`.

use std::fmt::Write as _;

use num_traits::{One, Zero};
use thiserror::Error;

use crate::formula::{fresh_name, ConstValue, Formula, IndexRange, MetaExpr, Term};
use crate::rational::{format_rat, parse_rat, Rat};
use crate::signature::Signature;
use crate::transform::{BaireDesc, Skeleton};

pub const RESERVED_WORDS: &[&str] = &[
    "d", "const", "sub", "add", "min", "max", "scale", "sup", "inf", "isup", "iinf", "rho",
    "ind", "recip", "nat", "upto", "from", "leaf", "limit", "hole",
];

/// Checks that a name is usable as a symbol, variable, or index: identifier
/// syntax, not a reserved word.
pub fn check_symbol_name(name: &str) -> Result<(), String> {
    if name.is_empty() {
        return Err("empty name".into());
    }
    let mut chars = name.chars();
    let first = chars.next().unwrap();
    if !(first.is_ascii_alphabetic() || first == '_') {
        return Err("must start with a letter or underscore".into());
    }
    if !chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '\'') {
        return Err("may contain only letters, digits, underscores, and primes".into());
    }
    if RESERVED_WORDS.contains(&name) {
        return Err("reserved word".into());
    }
    Ok(())
}

fn looks_like_identifier(s: &str) -> bool {
    check_symbol_name(s).is_ok()
}

fn looks_like_number(s: &str) -> bool {
    let body = s.strip_prefix('-').unwrap_or(s);
    !body.is_empty() && body.chars().all(|c| c.is_ascii_digit() || c == '/')
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{line}:{col}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub col: usize,
    pub message: String,
}

impl ParseError {
    fn new(line: usize, col: usize, message: impl Into<String>) -> Self {
        ParseError {
            line,
            col,
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone)]
enum Sexp {
    Atom { text: String, line: usize, col: usize },
    List { items: Vec<Sexp>, line: usize, col: usize },
}

impl Sexp {
    fn pos(&self) -> (usize, usize) {
        match self {
            Sexp::Atom { line, col, .. } | Sexp::List { line, col, .. } => (*line, *col),
        }
    }

    fn err(&self, message: impl Into<String>) -> ParseError {
        let (line, col) = self.pos();
        ParseError::new(line, col, message)
    }

    fn atom_text(&self) -> Option<&str> {
        match self {
            Sexp::Atom { text, .. } => Some(text),
            Sexp::List { .. } => None,
        }
    }
}

struct Lexer<'a> {
    chars: std::iter::Peekable<std::str::Chars<'a>>,
    line: usize,
    col: usize,
}

#[derive(Debug)]
enum Token {
    LParen(usize, usize),
    RParen(usize, usize),
    Atom(String, usize, usize),
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Self {
        Lexer {
            chars: src.chars().peekable(),
            line: 1,
            col: 1,
        }
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.chars.next()?;
        if c == '\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(c)
    }

    fn tokens(mut self) -> Vec<Token> {
        let mut out = Vec::new();
        loop {
            while matches!(self.chars.peek(), Some(c) if c.is_whitespace()) {
                self.bump();
            }
            let (line, col) = (self.line, self.col);
            match self.chars.peek() {
                None => return out,
                Some('(') => {
                    self.bump();
                    out.push(Token::LParen(line, col));
                }
                Some(')') => {
                    self.bump();
                    out.push(Token::RParen(line, col));
                }
                Some(_) => {
                    let mut text = String::new();
                    while let Some(&c) = self.chars.peek() {
                        if c.is_whitespace() || c == '(' || c == ')' {
                            break;
                        }
                        text.push(c);
                        self.bump();
                    }
                    out.push(Token::Atom(text, line, col));
                }
            }
        }
    }
}

fn parse_sexp(src: &str) -> Result<Sexp, ParseError> {
    let tokens = Lexer::new(src).tokens();
    let mut pos = 0;
    let root = parse_one(&tokens, &mut pos)?;
    if pos != tokens.len() {
        let (line, col) = match &tokens[pos] {
            Token::LParen(l, c) | Token::RParen(l, c) => (*l, *c),
            Token::Atom(_, l, c) => (*l, *c),
        };
        return Err(ParseError::new(line, col, "unexpected trailing input"));
    }
    Ok(root)
}

fn parse_one(tokens: &[Token], pos: &mut usize) -> Result<Sexp, ParseError> {
    match tokens.get(*pos) {
        None => Err(ParseError::new(1, 1, "unexpected end of input")),
        Some(Token::Atom(text, line, col)) => {
            *pos += 1;
            Ok(Sexp::Atom {
                text: text.clone(),
                line: *line,
                col: *col,
            })
        }
        Some(Token::RParen(line, col)) => Err(ParseError::new(*line, *col, "unexpected `)`")),
        Some(Token::LParen(line, col)) => {
            let (line, col) = (*line, *col);
            *pos += 1;
            let mut items = Vec::new();
            loop {
                match tokens.get(*pos) {
                    None => return Err(ParseError::new(line, col, "unclosed `(`")),
                    Some(Token::RParen(_, _)) => {
                        *pos += 1;
                        return Ok(Sexp::List { items, line, col });
                    }
                    Some(_) => items.push(parse_one(tokens, pos)?),
                }
            }
        }
    }
}

struct FormulaParser<'a> {
    sig: &'a Signature,
    bound_indices: Vec<String>,
}

impl<'a> FormulaParser<'a> {
    fn rat(&self, s: &Sexp) -> Result<Rat, ParseError> {
        let text = s
            .atom_text()
            .ok_or_else(|| s.err("expected a rational literal"))?;
        parse_rat(text).map_err(|e| s.err(e.to_string()))
    }

    fn ident(&self, s: &Sexp, what: &str) -> Result<String, ParseError> {
        let text = s.atom_text().ok_or_else(|| s.err(format!("expected {what}")))?;
        check_symbol_name(text).map_err(|r| s.err(format!("bad {what} `{text}`: {r}")))?;
        Ok(text.to_string())
    }

    fn term(&self, s: &Sexp) -> Result<Term, ParseError> {
        match s {
            Sexp::Atom { text, .. } => {
                if looks_like_number(text) {
                    return Err(s.err(format!("`{text}` is not a term")));
                }
                if self.sig.has_constant(text) {
                    return Ok(Term::Const(text.clone()));
                }
                // Longest bound-index suffix with a nonempty prefix denotes
                // an indexed constant family.
                let mut best: Option<&String> = None;
                for idx in &self.bound_indices {
                    if text.len() > idx.len() && text.ends_with(idx.as_str()) {
                        if best.map_or(true, |b| idx.len() > b.len()) {
                            best = Some(idx);
                        }
                    }
                }
                if let Some(idx) = best {
                    let prefix = text[..text.len() - idx.len()].to_string();
                    return Ok(Term::IndexedConst {
                        prefix,
                        index: idx.clone(),
                    });
                }
                if !looks_like_identifier(text) {
                    return Err(s.err(format!("`{text}` is not a valid variable name")));
                }
                Ok(Term::Var(text.clone()))
            }
            Sexp::List { items, .. } => {
                if items.is_empty() {
                    return Err(s.err("empty term"));
                }
                let head = self.ident(&items[0], "function symbol")?;
                if self.sig.function(&head).is_none() {
                    return Err(items[0].err(format!("unknown function `{head}`")));
                }
                let args = items[1..]
                    .iter()
                    .map(|a| self.term(a))
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(Term::App(head, args))
            }
        }
    }

    fn meta_expr(&self, s: &Sexp) -> Result<MetaExpr, ParseError> {
        match s {
            Sexp::Atom { text, .. } => {
                if looks_like_number(text) {
                    Ok(MetaExpr::constant(parse_rat(text).map_err(|e| s.err(e.to_string()))?))
                } else if looks_like_identifier(text) {
                    Ok(MetaExpr::linear(text))
                } else {
                    Err(s.err(format!("`{text}` is not a meta expression")))
                }
            }
            Sexp::List { items, .. } => {
                let head = items
                    .first()
                    .and_then(|h| h.atom_text())
                    .ok_or_else(|| s.err("expected `*` or `+`"))?;
                match head {
                    "*" => {
                        if items.len() != 3 {
                            return Err(s.err("expected (* RAT IDX)"));
                        }
                        let c = self.rat(&items[1])?;
                        let i = self.ident(&items[2], "index")?;
                        Ok(MetaExpr::affine(c, &i, Rat::zero()))
                    }
                    "+" => {
                        if items.len() != 3 {
                            return Err(s.err("expected (+ EXPR RAT)"));
                        }
                        let offset = self.rat(&items[2])?;
                        match &items[1] {
                            Sexp::Atom { text, .. } if looks_like_identifier(text) => {
                                Ok(MetaExpr::affine(Rat::one(), text, offset))
                            }
                            inner => {
                                let e = self.meta_expr(inner)?;
                                if e.is_constant() || !e.offset.is_zero() {
                                    return Err(inner.err("expected IDX or (* RAT IDX)"));
                                }
                                Ok(MetaExpr {
                                    offset,
                                    ..e
                                })
                            }
                        }
                    }
                    other => Err(s.err(format!("unknown meta operator `{other}`"))),
                }
            }
        }
    }

    fn range(&self, s: &Sexp) -> Result<IndexRange, ParseError> {
        match s {
            Sexp::Atom { text, .. } if text == "nat" => Ok(IndexRange::Naturals),
            Sexp::Atom { .. } => Err(s.err("expected a range: nat, (upto K), or (from J)")),
            Sexp::List { items, .. } => {
                let head = items
                    .first()
                    .and_then(|h| h.atom_text())
                    .ok_or_else(|| s.err("expected `upto` or `from`"))?;
                let arg = items
                    .get(1)
                    .ok_or_else(|| s.err("range needs an argument"))?;
                if items.len() != 2 {
                    return Err(s.err("range takes one argument"));
                }
                let text = arg.atom_text().ok_or_else(|| arg.err("expected a bound"))?;
                match head {
                    "upto" => {
                        let k: u64 = text.parse().map_err(|_| arg.err("expected an integer"))?;
                        Ok(IndexRange::UpTo(k))
                    }
                    "from" => {
                        if looks_like_number(text) {
                            let v: u64 =
                                text.parse().map_err(|_| arg.err("expected an integer"))?;
                            Ok(IndexRange::From(v))
                        } else {
                            Ok(IndexRange::TailFrom(self.ident(arg, "index")?))
                        }
                    }
                    other => Err(s.err(format!("unknown range `{other}`"))),
                }
            }
        }
    }

    fn var_list(&self, s: &Sexp) -> Result<Vec<String>, ParseError> {
        match s {
            Sexp::List { items, .. } => items
                .iter()
                .map(|i| self.ident(i, "variable"))
                .collect::<Result<Vec<_>, _>>(),
            Sexp::Atom { .. } => Err(s.err("expected a variable list")),
        }
    }

    fn formula(&mut self, s: &Sexp) -> Result<Formula, ParseError> {
        let items = match s {
            Sexp::List { items, .. } => items,
            Sexp::Atom { .. } => return Err(s.err("expected a formula")),
        };
        let head = items
            .first()
            .and_then(|h| h.atom_text())
            .ok_or_else(|| s.err("expected an operator or predicate"))?
            .to_string();
        let args = &items[1..];
        let expect = |n: usize| -> Result<(), ParseError> {
            if args.len() == n {
                Ok(())
            } else {
                Err(s.err(format!("`{head}` takes {n} argument(s), got {}", args.len())))
            }
        };
        match head.as_str() {
            "d" => {
                expect(2)?;
                Ok(Formula::Dist(self.term(&args[0])?, self.term(&args[1])?))
            }
            "const" => {
                expect(1)?;
                Ok(Formula::Const(ConstValue::Rat(self.rat(&args[0])?)))
            }
            "recip" => {
                expect(1)?;
                Ok(Formula::Const(ConstValue::Recip(self.meta_expr(&args[0])?)))
            }
            "sub" | "add" | "min" | "max" => {
                expect(2)?;
                let a = self.formula(&args[0])?;
                let b = self.formula(&args[1])?;
                Ok(match head.as_str() {
                    "sub" => Formula::sub(a, b),
                    "add" => Formula::add(a, b),
                    "min" => Formula::min(a, b),
                    _ => Formula::max(a, b),
                })
            }
            "scale" => {
                expect(2)?;
                let e = self.meta_expr(&args[0])?;
                Ok(Formula::scale(e, self.formula(&args[1])?))
            }
            "sup" | "inf" => {
                expect(2)?;
                let v = self.ident(&args[0], "variable")?;
                let body = self.formula(&args[1])?;
                Ok(if head == "sup" {
                    Formula::sup_var(&v, body)
                } else {
                    Formula::inf_var(&v, body)
                })
            }
            "isup" | "iinf" => {
                expect(3)?;
                let i = self.ident(&args[0], "index")?;
                let range = self.range(&args[1])?;
                self.bound_indices.push(i.clone());
                let body = self.formula(&args[2]);
                self.bound_indices.pop();
                let body = body?;
                Ok(if head == "isup" {
                    Formula::sup_idx(&i, range, body)
                } else {
                    Formula::inf_idx(&i, range, body)
                })
            }
            "ind" => {
                expect(1)?;
                Ok(Formula::ind(self.formula(&args[0])?))
            }
            "rho" => match args.len() {
                2 => {
                    // Single-tuple sugar: the listed variables are the free
                    // slots; the zeroset copy is bound under fresh names.
                    let slots = self.var_list(&args[0])?;
                    let body = self.formula(&args[1])?;
                    let mut avoid = body.variable_names();
                    avoid.extend(slots.iter().cloned());
                    let mut bound = Vec::with_capacity(slots.len());
                    let mut renamed = body;
                    for slot in &slots {
                        let fresh = fresh_name(slot, &avoid);
                        avoid.insert(fresh.clone());
                        renamed = renamed.substitute_term(slot, &Term::Var(fresh.clone()));
                        bound.push(fresh);
                    }
                    Ok(Formula::Rho {
                        slots: slots.into_iter().map(|v| Term::Var(v)).collect(),
                        bound,
                        body: renamed.into(),
                    })
                }
                3 => {
                    let slots = match &args[0] {
                        Sexp::List { items, .. } => items
                            .iter()
                            .map(|t| self.term(t))
                            .collect::<Result<Vec<_>, _>>()?,
                        a => return Err(a.err("expected a slot term list")),
                    };
                    let bound = self.var_list(&args[1])?;
                    let body = self.formula(&args[2])?;
                    Ok(Formula::Rho {
                        slots,
                        bound,
                        body: body.into(),
                    })
                }
                n => Err(s.err(format!("`rho` takes 2 or 3 arguments, got {n}"))),
            },
            name => {
                if self.sig.predicate(name).is_none() {
                    return Err(items[0].err(format!("unknown symbol `{name}`")));
                }
                let ts = args
                    .iter()
                    .map(|a| self.term(a))
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(Formula::Pred(name.to_string(), ts))
            }
        }
    }
}

/// Parses a formula and checks it is well-formed over the signature.
pub fn parse_formula(src: &str, sig: &Signature) -> Result<Formula, ParseError> {
    let sexp = parse_sexp(src)?;
    let (line, col) = sexp.pos();
    let mut parser = FormulaParser {
        sig,
        bound_indices: Vec::new(),
    };
    let f = parser.formula(&sexp)?;
    let violations = f.well_formed(sig);
    if !violations.is_empty() {
        let msg = violations
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join("; ");
        return Err(ParseError::new(line, col, msg));
    }
    Ok(f)
}

fn print_term(t: &Term, out: &mut String) {
    match t {
        Term::Var(v) => out.push_str(v),
        Term::Const(c) => out.push_str(c),
        Term::IndexedConst { prefix, index } => {
            out.push_str(prefix);
            out.push_str(index);
        }
        Term::App(f, args) => {
            out.push('(');
            out.push_str(f);
            for a in args {
                out.push(' ');
                print_term(a, out);
            }
            out.push(')');
        }
    }
}

fn print_meta(e: &MetaExpr, out: &mut String) {
    match (&e.index, e.coeff.is_zero(), e.offset.is_zero()) {
        (None, _, _) => out.push_str(&format_rat(&e.offset)),
        (Some(i), true, _) => {
            // Degenerate (coefficient 0 with a named index); print the index
            // form so the violation survives a round trip.
            let _ = write!(out, "(+ (* 0/1 {i}) {})", format_rat(&e.offset));
        }
        (Some(i), false, true) => {
            if e.coeff.is_one() {
                out.push_str(i);
            } else {
                let _ = write!(out, "(* {} {i})", format_rat(&e.coeff));
            }
        }
        (Some(i), false, false) => {
            if e.coeff.is_one() {
                let _ = write!(out, "(+ {i} {})", format_rat(&e.offset));
            } else {
                let _ = write!(out, "(+ (* {} {i}) {})", format_rat(&e.coeff), format_rat(&e.offset));
            }
        }
    }
}

fn print_range(r: &IndexRange, out: &mut String) {
    match r {
        IndexRange::Naturals => out.push_str("nat"),
        IndexRange::UpTo(k) => {
            let _ = write!(out, "(upto {k})");
        }
        IndexRange::From(v) => {
            let _ = write!(out, "(from {v})");
        }
        IndexRange::TailFrom(j) => {
            let _ = write!(out, "(from {j})");
        }
    }
}

fn print_into(f: &Formula, out: &mut String) {
    match f {
        Formula::Dist(a, b) => {
            out.push_str("(d ");
            print_term(a, out);
            out.push(' ');
            print_term(b, out);
            out.push(')');
        }
        Formula::Pred(p, args) => {
            out.push('(');
            out.push_str(p);
            for a in args {
                out.push(' ');
                print_term(a, out);
            }
            out.push(')');
        }
        Formula::Const(ConstValue::Rat(r)) => {
            let _ = write!(out, "(const {})", format_rat(r));
        }
        Formula::Const(ConstValue::Recip(e)) => {
            out.push_str("(recip ");
            print_meta(e, out);
            out.push(')');
        }
        Formula::Sub(a, b) | Formula::Add(a, b) | Formula::Min(a, b) | Formula::Max(a, b) => {
            let name = match f {
                Formula::Sub(_, _) => "sub",
                Formula::Add(_, _) => "add",
                Formula::Min(_, _) => "min",
                _ => "max",
            };
            out.push('(');
            out.push_str(name);
            out.push(' ');
            print_into(a, out);
            out.push(' ');
            print_into(b, out);
            out.push(')');
        }
        Formula::Scale(e, body) => {
            out.push_str("(scale ");
            print_meta(e, out);
            out.push(' ');
            print_into(body, out);
            out.push(')');
        }
        Formula::SupVar(v, body) | Formula::InfVar(v, body) => {
            let name = if matches!(f, Formula::SupVar(_, _)) {
                "sup"
            } else {
                "inf"
            };
            let _ = write!(out, "({name} {v} ");
            print_into(body, out);
            out.push(')');
        }
        Formula::SupIdx(i, r, body) | Formula::InfIdx(i, r, body) => {
            let name = if matches!(f, Formula::SupIdx(_, _, _)) {
                "isup"
            } else {
                "iinf"
            };
            let _ = write!(out, "({name} {i} ");
            print_range(r, out);
            out.push(' ');
            print_into(body, out);
            out.push(')');
        }
        Formula::Rho { slots, bound, body } => {
            out.push_str("(rho (");
            for (k, t) in slots.iter().enumerate() {
                if k > 0 {
                    out.push(' ');
                }
                print_term(t, out);
            }
            out.push_str(") (");
            for (k, v) in bound.iter().enumerate() {
                if k > 0 {
                    out.push(' ');
                }
                out.push_str(v);
            }
            out.push_str(") ");
            print_into(body, out);
            out.push(')');
        }
    }
}

/// Canonical rendering; `parse_formula` returns an identical AST.
pub fn print_formula(f: &Formula) -> String {
    let mut out = String::new();
    print_into(f, &mut out);
    out
}

/// Parses a Baire-hierarchy description:
/// `(leaf SKEL)` or `(limit IDX DESC)`, where skeletons are built from
/// `(hole K)`, `(const RAT)`, `(recip EXPR)`, and the combinators.
pub fn parse_baire_desc(src: &str) -> Result<BaireDesc, ParseError> {
    let sexp = parse_sexp(src)?;
    build_desc(&sexp)
}

fn build_desc(s: &Sexp) -> Result<BaireDesc, ParseError> {
    let items = match s {
        Sexp::List { items, .. } => items,
        Sexp::Atom { .. } => return Err(s.err("expected (leaf ...) or (limit ...)")),
    };
    match items.first().and_then(|h| h.atom_text()) {
        Some("leaf") if items.len() == 2 => Ok(BaireDesc::Leaf(build_skeleton(&items[1])?)),
        Some("limit") if items.len() == 3 => {
            let idx = items[1]
                .atom_text()
                .ok_or_else(|| items[1].err("expected an index name"))?;
            check_symbol_name(idx).map_err(|r| items[1].err(r))?;
            Ok(BaireDesc::Limit {
                index: idx.to_string(),
                body: Box::new(build_desc(&items[2])?),
            })
        }
        _ => Err(s.err("expected (leaf SKEL) or (limit IDX DESC)")),
    }
}

fn build_skeleton(s: &Sexp) -> Result<Skeleton, ParseError> {
    let items = match s {
        Sexp::List { items, .. } => items,
        Sexp::Atom { .. } => return Err(s.err("expected a skeleton")),
    };
    let parser = FormulaParser {
        sig: &EMPTY_SIG,
        bound_indices: Vec::new(),
    };
    let head = items
        .first()
        .and_then(|h| h.atom_text())
        .ok_or_else(|| s.err("expected a skeleton operator"))?;
    let expect = |n: usize| -> Result<(), ParseError> {
        if items.len() == n + 1 {
            Ok(())
        } else {
            Err(s.err(format!("`{head}` takes {n} argument(s)")))
        }
    };
    match head {
        "hole" => {
            expect(1)?;
            let text = items[1]
                .atom_text()
                .ok_or_else(|| items[1].err("expected a slot number"))?;
            let k: usize = text.parse().map_err(|_| items[1].err("expected a slot number"))?;
            Ok(Skeleton::Hole(k))
        }
        "const" => {
            expect(1)?;
            Ok(Skeleton::Const(ConstValue::Rat(parser.rat(&items[1])?)))
        }
        "recip" => {
            expect(1)?;
            Ok(Skeleton::Const(ConstValue::Recip(parser.meta_expr(&items[1])?)))
        }
        "sub" | "add" | "min" | "max" => {
            expect(2)?;
            let a = Box::new(build_skeleton(&items[1])?);
            let b = Box::new(build_skeleton(&items[2])?);
            Ok(match head {
                "sub" => Skeleton::Sub(a, b),
                "add" => Skeleton::Add(a, b),
                "min" => Skeleton::Min(a, b),
                _ => Skeleton::Max(a, b),
            })
        }
        "scale" => {
            expect(2)?;
            let e = parser.meta_expr(&items[1])?;
            Ok(Skeleton::Scale(e, Box::new(build_skeleton(&items[2])?)))
        }
        other => Err(s.err(format!("unknown skeleton operator `{other}`"))),
    }
}

static EMPTY_SIG: std::sync::LazyLock<Signature> = std::sync::LazyLock::new(Signature::default);

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::rational::{int, rat};

    #[test]
    fn parses_the_zero_test_pattern() {
        let sig = fixtures::tri().signature().clone();
        let f = parse_formula("(isup n nat (scale n (P x)))", &sig).unwrap();
        assert_eq!(
            f,
            Formula::sup_idx(
                "n",
                IndexRange::Naturals,
                Formula::scale(MetaExpr::linear("n"), Formula::pred("P", vec![Term::var("x")]))
            )
        );
        assert!(crate::eval::recognize_zero_test(&f).is_some());
    }

    #[test]
    fn parses_the_enumeration_sentence() {
        let sig = fixtures::m1().signature().clone();
        // With n bound and constants c1 absent/c0,c1 present: use the c
        // prefix against indices 1..2 via renamed constants.
        let f = parse_formula(
            "(sup x (iinf n (upto 2) (isup R nat (scale R (d x cn)))))",
            &crate::signature::Signature {
                predicates: vec![],
                functions: vec![],
                constants: vec!["c1".into(), "c2".into()],
            },
        )
        .unwrap();
        let _ = sig;
        let printed = print_formula(&f);
        assert!(printed.contains("cn"));
        // The indexed constant resolves on instantiation.
        match &f {
            Formula::SupVar(_, inner) => {
                let inst = inner.instantiate_index(1).unwrap();
                assert!(print_formula(&inst).contains("c1"));
            }
            _ => panic!("expected sup"),
        }
    }

    #[test]
    fn arity_errors_are_positioned() {
        let sig = fixtures::tri().signature().clone();
        let err = parse_formula("(P x y)", &sig).unwrap_err();
        assert_eq!((err.line, err.col), (1, 1));
        assert!(err.message.contains("argument"));
    }

    #[test]
    fn unknown_symbols_error() {
        let sig = fixtures::tri().signature().clone();
        assert!(parse_formula("(R x)", &sig).is_err());
        assert!(parse_formula("(d x (f y))", &sig).is_err());
    }

    #[test]
    fn const_round_trip() {
        let sig = fixtures::tri().signature().clone();
        let f = parse_formula("(const 1/2)", &sig).unwrap();
        assert_eq!(f, Formula::rat_const(rat(1, 2)));
        assert_eq!(print_formula(&f), "(const 1/2)");
        let g = parse_formula("(const 1)", &sig).unwrap();
        assert_eq!(print_formula(&g), "(const 1/1)");
    }

    #[test]
    fn rho_sugar_matches_explicit_form() {
        let sig = fixtures::tri().signature().clone();
        let sugar = parse_formula("(rho (y) (P y))", &sig).unwrap();
        match &sugar {
            Formula::Rho { slots, bound, body } => {
                assert_eq!(slots, &vec![Term::var("y")]);
                assert_eq!(bound, &vec!["y'".to_string()]);
                assert_eq!(**body, Formula::pred("P", vec![Term::var("y'")]));
            }
            other => panic!("unexpected {other:?}"),
        }
        let explicit = parse_formula(&print_formula(&sugar), &sig).unwrap();
        assert_eq!(explicit, sugar);
    }

    #[test]
    fn ind_macro_prints_expanded() {
        let sig = fixtures::tri().signature().clone();
        let f = parse_formula("(ind (P x))", &sig).unwrap();
        let printed = print_formula(&f);
        assert!(printed.starts_with("(isup"));
        assert_eq!(parse_formula(&printed, &sig).unwrap(), f);
    }

    #[test]
    fn meta_expr_forms_round_trip() {
        let sig = fixtures::tri().signature().clone();
        for src in [
            "(isup n nat (scale n (P x)))",
            "(isup n nat (scale (* 2/3 n) (P x)))",
            "(isup n nat (scale (+ n 1/2) (P x)))",
            "(isup n nat (scale (+ (* 2/1 n) 1/1) (P x)))",
            "(isup n nat (scale 3/4 (P x)))",
            "(iinf n nat (recip (+ n 1/1)))",
            "(isup k nat (isup m (from k) (scale m (P x))))",
            "(isup n (upto 3) (scale n (P x)))",
        ] {
            let f = parse_formula(src, &sig).unwrap();
            let printed = print_formula(&f);
            assert_eq!(parse_formula(&printed, &sig).unwrap(), f, "{src}");
        }
    }

    #[test]
    fn whitespace_insensitive() {
        let sig = fixtures::tri().signature().clone();
        let a = parse_formula("(min (P x) (P y))", &sig).unwrap();
        let b = parse_formula("  (min\n(P   x)\t(P y)\n)  ", &sig).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn errors_carry_positions() {
        let sig = fixtures::tri().signature().clone();
        let err = parse_formula("(min (P x)\n  (Q y))", &sig).unwrap_err();
        assert_eq!(err.line, 2);
        assert!(err.col >= 3);
    }

    #[test]
    fn generated_formulas_round_trip() {
        let mut checked = 0;
        for seed in 0..300u64 {
            let m = crate::corpus::random_structure(seed);
            let f = crate::corpus::random_formula(m.signature(), seed ^ 0x5eed, &Default::default());
            let printed = print_formula(&f);
            let back = parse_formula(&printed, m.signature())
                .unwrap_or_else(|e| panic!("seed {seed}: {e}\n{printed}"));
            assert_eq!(back, f, "seed {seed}");
            checked += 1;
        }
        assert_eq!(checked, 300);
    }

    #[test]
    fn garbage_input_errors_without_panicking() {
        use rand::rngs::StdRng;
        use rand::{Rng, SeedableRng};
        let sig = fixtures::tri().signature().clone();
        let alphabet: Vec<char> = "()dconstsubaddminmaxscalesupinfisupiinfrhoindrecip \
                                   natuptofromxyzPQc0123456789/*+-'_\n\t"
            .chars()
            .collect();
        for seed in 0..500u64 {
            let mut rng = StdRng::seed_from_u64(seed);
            let len = rng.random_range(0..60);
            let soup: String = (0..len)
                .map(|_| alphabet[rng.random_range(0..alphabet.len())])
                .collect();
            // Must never panic; errors are fine.
            let _ = parse_formula(&soup, &sig);
            let _ = parse_baire_desc(&soup);
        }
    }

    #[test]
    fn baire_descriptions_parse() {
        let d = parse_baire_desc("(limit k (leaf (scale k (hole 0))))").unwrap();
        match d {
            BaireDesc::Limit { index, body } => {
                assert_eq!(index, "k");
                assert!(matches!(*body, BaireDesc::Leaf(Skeleton::Scale(_, _))));
            }
            _ => panic!("expected limit"),
        }
        assert!(parse_baire_desc("(leaf (hole zero))").is_err());
        let _ = int(0);
    }
}
