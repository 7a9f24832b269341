//! Model description language.
//!
//! One statement per line, `#` starts a comment:
//!
//! ```text
//! latent eta                      # declare latent variables
//! binary Y2                       # probit outcomes
//! censored right Y3               # tobit outcomes (left, right or both)
//! Y1 + Y2 + Y3 <- eta             # regressions; lists expand pairwise
//! Y1 <- eta @1                    # fixed coefficient
//! Y2 <- eta @l                    # labelled coefficient (equality constraint)
//! Y1 <- 1 @0                      # intercept
//! cov(Y1, Y2)                     # residual covariance; cov(a, a) is a variance
//! slope Y1 <- eta * V             # random slope: loading of Y1 on eta moderated by V
//! fix l = 0.5                     # fix every cell labelled l
//! ```
//!
//! Identifiers that are never latent and never appear as an outcome, in a
//! `cov` or in a kind declaration are covariates.

use super::{Constraint, Covariance, Edge, Kind, ModelSpec, Side, SlopeTerm};
use crate::error::{Error, Result};
use std::collections::{HashMap, HashSet};

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Num(f64),
    Arrow,
    At,
    Plus,
    Star,
    LParen,
    RParen,
    Comma,
    Eq,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    col: usize,
}

fn syntax(line: usize, column: usize, message: impl Into<String>) -> Error {
    Error::Syntax {
        line,
        column,
        message: message.into(),
    }
}

fn is_ident_start(c: char) -> bool {
    c.is_alphabetic() || c == '_'
}

fn is_ident_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_' || c == '.'
}

fn lex(line: usize, text: &str) -> Result<Vec<Token>> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let col = i + 1;
        if c == '#' {
            break;
        }
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        let simple = match c {
            '@' => Some(Tok::At),
            '+' => Some(Tok::Plus),
            '*' => Some(Tok::Star),
            '(' => Some(Tok::LParen),
            ')' => Some(Tok::RParen),
            ',' => Some(Tok::Comma),
            '=' => Some(Tok::Eq),
            _ => None,
        };
        if let Some(tok) = simple {
            out.push(Token { tok, col });
            i += 1;
        } else if c == '<' && chars.get(i + 1) == Some(&'-') {
            out.push(Token {
                tok: Tok::Arrow,
                col,
            });
            i += 2;
        } else if is_ident_start(c) {
            let start = i;
            while i < chars.len() && is_ident_char(chars[i]) {
                i += 1;
            }
            out.push(Token {
                tok: Tok::Ident(chars[start..i].iter().collect()),
                col,
            });
        } else if c.is_ascii_digit() || c == '.' || c == '-' {
            let start = i;
            i += 1;
            while i < chars.len() {
                let d = chars[i];
                let exp_sign = (d == '-' || d == '+') && matches!(chars[i - 1], 'e' | 'E');
                if d.is_ascii_digit() || d == '.' || d == 'e' || d == 'E' || exp_sign {
                    i += 1;
                } else {
                    break;
                }
            }
            let s: String = chars[start..i].iter().collect();
            let v = s
                .parse::<f64>()
                .map_err(|_| syntax(line, col, format!("invalid number '{s}'")))?;
            out.push(Token {
                tok: Tok::Num(v),
                col,
            });
        } else {
            return Err(syntax(line, col, format!("unexpected character '{c}'")));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
struct Name {
    text: String,
    line: usize,
    col: usize,
}

#[derive(Debug, Clone)]
enum Rhs {
    Var(Name),
    One,
}

#[derive(Debug, Clone)]
enum Stmt {
    Latent(Vec<Name>),
    Binary(Vec<Name>),
    Censored(Side, Vec<Name>),
    Path {
        lhs: Vec<Name>,
        rhs: Vec<(Rhs, Constraint)>,
    },
    Cov {
        a: Name,
        b: Name,
        constraint: Constraint,
    },
    Slope {
        outcome: Name,
        latent: Name,
        covariate: Name,
        constraint: Constraint,
    },
    Fix {
        label: Name,
        value: f64,
    },
}

struct Cursor<'a> {
    line: usize,
    toks: &'a [Token],
    pos: usize,
    end_col: usize,
}

impl<'a> Cursor<'a> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.tok)
    }

    fn col(&self) -> usize {
        self.toks.get(self.pos).map_or(self.end_col, |t| t.col)
    }

    fn err(&self, message: impl Into<String>) -> Error {
        syntax(self.line, self.col(), message)
    }

    fn eat(&mut self, tok: &Tok) -> bool {
        if self.peek() == Some(tok) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, tok: &Tok, what: &str) -> Result<()> {
        if self.eat(tok) {
            Ok(())
        } else {
            Err(self.err(format!("expected {what}")))
        }
    }

    fn name(&mut self) -> Result<Name> {
        match self.toks.get(self.pos) {
            Some(Token {
                tok: Tok::Ident(s),
                col,
            }) => {
                self.pos += 1;
                Ok(Name {
                    text: s.clone(),
                    line: self.line,
                    col: *col,
                })
            }
            _ => Err(self.err("expected a variable name")),
        }
    }

    fn number(&mut self) -> Result<f64> {
        match self.peek() {
            Some(Tok::Num(v)) => {
                let v = *v;
                self.pos += 1;
                Ok(v)
            }
            _ => Err(self.err("expected a number")),
        }
    }

    fn modifier(&mut self) -> Result<Constraint> {
        if !self.eat(&Tok::At) {
            return Ok(Constraint::Free);
        }
        match self.peek().cloned() {
            Some(Tok::Num(v)) => {
                self.pos += 1;
                Ok(Constraint::Fixed(v))
            }
            Some(Tok::Ident(s)) => {
                self.pos += 1;
                Ok(Constraint::Label(s))
            }
            _ => Err(self.err("expected a number or label after '@'")),
        }
    }

    fn name_list(&mut self) -> Result<Vec<Name>> {
        let mut names = vec![self.name()?];
        while self.peek().is_some() {
            self.eat(&Tok::Comma);
            names.push(self.name()?);
        }
        Ok(names)
    }

    fn finish(&self) -> Result<()> {
        if self.pos < self.toks.len() {
            Err(self.err("unexpected trailing input"))
        } else {
            Ok(())
        }
    }
}

fn parse_line(line: usize, text: &str) -> Result<Option<Stmt>> {
    let toks = lex(line, text)?;
    if toks.is_empty() {
        return Ok(None);
    }
    let mut c = Cursor {
        line,
        toks: &toks,
        pos: 0,
        end_col: text.chars().count() + 1,
    };
    let keyword = match (&toks[0].tok, toks.get(1).map(|t| &t.tok)) {
        (Tok::Ident(k), next) if next != Some(&Tok::Arrow) && next != Some(&Tok::Plus) => {
            Some(k.as_str())
        }
        _ => None,
    };
    let stmt = match keyword {
        Some("latent") => {
            c.pos = 1;
            Stmt::Latent(c.name_list()?)
        }
        Some("binary") => {
            c.pos = 1;
            Stmt::Binary(c.name_list()?)
        }
        Some("censored") => {
            c.pos = 1;
            let side = match c.peek() {
                Some(Tok::Ident(s)) if s == "left" => Side::Left,
                Some(Tok::Ident(s)) if s == "right" => Side::Right,
                Some(Tok::Ident(s)) if s == "both" => Side::Both,
                _ => return Err(c.err("expected left, right or both")),
            };
            c.pos += 1;
            Stmt::Censored(side, c.name_list()?)
        }
        Some("cov") => {
            c.pos = 1;
            c.expect(&Tok::LParen, "'('")?;
            let a = c.name()?;
            c.expect(&Tok::Comma, "','")?;
            let b = c.name()?;
            c.expect(&Tok::RParen, "')'")?;
            let constraint = c.modifier()?;
            Stmt::Cov { a, b, constraint }
        }
        Some("slope") => {
            c.pos = 1;
            let outcome = c.name()?;
            c.expect(&Tok::Arrow, "'<-'")?;
            let latent = c.name()?;
            c.expect(&Tok::Star, "'*'")?;
            let covariate = c.name()?;
            let constraint = c.modifier()?;
            Stmt::Slope {
                outcome,
                latent,
                covariate,
                constraint,
            }
        }
        Some("fix") => {
            c.pos = 1;
            let label = c.name()?;
            c.expect(&Tok::Eq, "'='")?;
            let value = c.number()?;
            Stmt::Fix { label, value }
        }
        Some(k) => {
            return Err(syntax(line, toks[0].col, format!("unknown statement '{k}'")));
        }
        None => {
            let mut lhs = vec![c.name()?];
            while c.eat(&Tok::Plus) {
                lhs.push(c.name()?);
            }
            c.expect(&Tok::Arrow, "'<-'")?;
            let mut rhs = Vec::new();
            loop {
                let term = match c.peek() {
                    Some(Tok::Num(v)) if *v == 1.0 => {
                        c.pos += 1;
                        Rhs::One
                    }
                    Some(Tok::Num(_)) => return Err(c.err("only '1' may denote an intercept")),
                    _ => Rhs::Var(c.name()?),
                };
                rhs.push((term, c.modifier()?));
                if !c.eat(&Tok::Plus) {
                    break;
                }
            }
            Stmt::Path { lhs, rhs }
        }
    };
    c.finish()?;
    Ok(Some(stmt))
}

/// Collects variable names in order of first appearance.
#[derive(Default)]
struct Ordered {
    names: Vec<String>,
    seen: HashSet<String>,
}

impl Ordered {
    fn add(&mut self, name: &str) {
        if self.seen.insert(name.to_string()) {
            self.names.push(name.to_string());
        }
    }
}

pub fn parse_model(text: &str) -> Result<ModelSpec> {
    let mut stmts = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if let Some(s) = parse_line(i + 1, line)? {
            stmts.push(s);
        }
    }

    let mut latent = Ordered::default();
    for s in &stmts {
        if let Stmt::Latent(names) = s {
            for n in names {
                latent.add(&n.text);
            }
        }
    }
    let is_latent = |n: &str| latent.seen.contains(n);

    // Manifest variables in order of first appearance as an outcome or in a
    // covariance; variables only named in kind declarations come last.
    let mut manifest = Ordered::default();
    for s in &stmts {
        let mut add = |n: &Name| {
            if !is_latent(&n.text) {
                manifest.add(&n.text);
            }
        };
        match s {
            Stmt::Path { lhs, .. } => lhs.iter().for_each(&mut add),
            Stmt::Cov { a, b, .. } => {
                add(a);
                add(b);
            }
            Stmt::Slope { outcome, .. } => add(outcome),
            _ => {}
        }
    }
    let mut kinds: HashMap<String, (Kind, usize)> = HashMap::new();
    for s in &stmts {
        let (kind, names) = match s {
            Stmt::Binary(n) => (Kind::Binary, n),
            Stmt::Censored(side, n) => (Kind::Censored(*side), n),
            _ => continue,
        };
        for n in names {
            if is_latent(&n.text) {
                return Err(syntax(
                    n.line,
                    n.col,
                    format!("latent variable '{}' cannot be binary or censored", n.text),
                ));
            }
            if let Some((prev, _)) = kinds.get(&n.text) {
                if *prev != kind {
                    return Err(syntax(
                        n.line,
                        n.col,
                        format!("conflicting declarations for '{}'", n.text),
                    ));
                }
            }
            kinds.insert(n.text.clone(), (kind, n.line));
            manifest.add(&n.text);
        }
    }

    let mut covariates = Ordered::default();
    for s in &stmts {
        let mut add = |n: &Name| {
            if !is_latent(&n.text) && !manifest.seen.contains(&n.text) {
                covariates.add(&n.text);
            }
        };
        match s {
            Stmt::Path { rhs, .. } => {
                for (t, _) in rhs {
                    if let Rhs::Var(n) = t {
                        add(n);
                    }
                }
            }
            Stmt::Slope {
                latent, covariate, ..
            } => {
                add(latent);
                add(covariate);
            }
            _ => {}
        }
    }

    let mut edges: Vec<Edge> = Vec::new();
    let mut declared_intercepts: HashMap<String, Constraint> = HashMap::new();
    let mut declared_variances: HashMap<String, Constraint> = HashMap::new();
    let mut covariances: Vec<Covariance> = Vec::new();
    let mut slopes: Vec<SlopeTerm> = Vec::new();
    let mut fixed_labels: Vec<(String, f64)> = Vec::new();
    let mut edge_seen: HashSet<(String, String)> = HashSet::new();

    for s in &stmts {
        match s {
            Stmt::Path { lhs, rhs } => {
                for to in lhs {
                    for (term, constraint) in rhs {
                        match term {
                            Rhs::One => {
                                if declared_intercepts
                                    .insert(to.text.clone(), constraint.clone())
                                    .is_some()
                                {
                                    return Err(syntax(
                                        to.line,
                                        to.col,
                                        format!("duplicate intercept for '{}'", to.text),
                                    ));
                                }
                            }
                            Rhs::Var(from) => {
                                if from.text == to.text {
                                    return Err(Error::Model(format!(
                                        "line {}: '{}' cannot depend on itself",
                                        to.line, to.text
                                    )));
                                }
                                if !edge_seen.insert((to.text.clone(), from.text.clone())) {
                                    return Err(syntax(
                                        from.line,
                                        from.col,
                                        format!("duplicate path {} <- {}", to.text, from.text),
                                    ));
                                }
                                edges.push(Edge {
                                    to: to.text.clone(),
                                    from: from.text.clone(),
                                    constraint: constraint.clone(),
                                });
                            }
                        }
                    }
                }
            }
            Stmt::Cov { a, b, constraint } => {
                if a.text == b.text {
                    if declared_variances
                        .insert(a.text.clone(), constraint.clone())
                        .is_some()
                    {
                        return Err(syntax(
                            a.line,
                            a.col,
                            format!("duplicate variance for '{}'", a.text),
                        ));
                    }
                } else {
                    let dup = covariances.iter().any(|c| {
                        (c.a == a.text && c.b == b.text) || (c.a == b.text && c.b == a.text)
                    });
                    if dup {
                        return Err(syntax(
                            a.line,
                            a.col,
                            format!("duplicate covariance ({}, {})", a.text, b.text),
                        ));
                    }
                    covariances.push(Covariance {
                        a: a.text.clone(),
                        b: b.text.clone(),
                        constraint: constraint.clone(),
                    });
                }
            }
            Stmt::Slope {
                outcome,
                latent: lat,
                covariate,
                constraint,
            } => {
                if !is_latent(&lat.text) {
                    return Err(syntax(
                        lat.line,
                        lat.col,
                        format!("'{}' in a slope term must be latent", lat.text),
                    ));
                }
                if is_latent(&covariate.text) || manifest.seen.contains(&covariate.text) {
                    return Err(syntax(
                        covariate.line,
                        covariate.col,
                        format!("moderator '{}' must be a covariate", covariate.text),
                    ));
                }
                if outcome.text == lat.text {
                    return Err(Error::Model(format!(
                        "line {}: '{}' cannot depend on itself",
                        outcome.line, outcome.text
                    )));
                }
                let dup = slopes.iter().any(|t| {
                    t.outcome == outcome.text && t.latent == lat.text && t.covariate == covariate.text
                });
                if dup {
                    return Err(syntax(outcome.line, outcome.col, "duplicate slope term"));
                }
                slopes.push(SlopeTerm {
                    outcome: outcome.text.clone(),
                    latent: lat.text.clone(),
                    covariate: covariate.text.clone(),
                    constraint: constraint.clone(),
                });
            }
            Stmt::Fix { label, value } => {
                fixed_labels.push((label.text.clone(), *value));
            }
            _ => {}
        }
    }

    let manifest = manifest.names;
    let latent = latent.names;
    let kinds_vec: Vec<Kind> = manifest
        .iter()
        .map(|m| kinds.get(m).map_or(Kind::Continuous, |k| k.0))
        .collect();

    // Scale each latent variable by fixing its first loading to one, unless
    // the user already fixed a loading or the variance.
    let label_fixed = |c: &Constraint| match c {
        Constraint::Fixed(_) => true,
        Constraint::Label(l) => fixed_labels.iter().any(|(n, _)| n == l),
        Constraint::Free => false,
    };
    let mut scaling: Vec<String> = Vec::new();
    let mut standardized: Vec<String> = Vec::new();
    for l in &latent {
        if declared_variances.get(l).is_some_and(label_fixed) {
            standardized.push(l.clone());
            continue;
        }
        let outgoing: Vec<usize> = {
            let to_manifest: Vec<usize> = (0..edges.len())
                .filter(|&e| edges[e].from == *l && !is_latent(&edges[e].to))
                .collect();
            if to_manifest.is_empty() {
                (0..edges.len()).filter(|&e| edges[e].from == *l).collect()
            } else {
                to_manifest
            }
        };
        if let Some(&e) = outgoing.iter().find(|&&e| label_fixed(&edges[e].constraint)) {
            scaling.push(edges[e].to.clone());
        } else if let Some(&e) = outgoing
            .iter()
            .find(|&&e| edges[e].constraint == Constraint::Free)
        {
            edges[e].constraint = Constraint::Fixed(1.0);
            scaling.push(edges[e].to.clone());
        }
    }

    let mut intercepts = Vec::new();
    let mut variances = Vec::new();
    for (i, v) in manifest.iter().chain(latent.iter()).enumerate() {
        let is_manifest = i < manifest.len();
        let icpt = declared_intercepts.remove(v).unwrap_or_else(|| {
            if (is_manifest && scaling.contains(v)) || standardized.contains(v) {
                Constraint::Fixed(0.0)
            } else {
                Constraint::Free
            }
        });
        intercepts.push((v.clone(), icpt));
        let binary = is_manifest && kinds_vec[i] == Kind::Binary;
        let var = match declared_variances.remove(v) {
            Some(c) => {
                if binary && !label_fixed(&c) {
                    return Err(Error::Model(format!(
                        "binary variable '{v}' must have a fixed residual variance"
                    )));
                }
                c
            }
            None if binary => Constraint::Fixed(1.0),
            None => Constraint::Free,
        };
        variances.push((v.clone(), var));
    }
    if let Some(v) = declared_intercepts.keys().min() {
        return Err(Error::Model(format!(
            "intercept declared for covariate '{v}'"
        )));
    }

    let spec = ModelSpec {
        manifest,
        latent,
        covariates: covariates.names,
        kinds: kinds_vec,
        edges,
        slopes,
        intercepts,
        variances,
        covariances,
        fixed_labels,
    };
    spec.check_structure()?;
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lexes_numbers_and_arrows() {
        let t = lex(1, "Y1<-eta @-1.5e-2 # note").unwrap();
        assert_eq!(t.len(), 5);
        assert_eq!(t[1].tok, Tok::Arrow);
        assert_eq!(t[4].tok, Tok::Num(-0.015));
    }

    #[test]
    fn syntax_errors_carry_position() {
        match parse_model("latent eta\nY1 <- eta @\n").unwrap_err() {
            Error::Syntax { line, column, .. } => {
                assert_eq!(line, 2);
                assert_eq!(column, 12);
            }
            e => panic!("unexpected error {e}"),
        }
        match parse_model("Y1 <- $x").unwrap_err() {
            Error::Syntax { line, column, .. } => assert_eq!((line, column), (1, 7)),
            e => panic!("unexpected error {e}"),
        }
        assert!(matches!(
            parse_model("frobnicate Y1").unwrap_err(),
            Error::Syntax { .. }
        ));
        assert!(matches!(
            parse_model("Y1 <- 2").unwrap_err(),
            Error::Syntax { .. }
        ));
    }

    #[test]
    fn minimal_model() {
        let s = parse_model("Y1 <- eta @1 \n eta <- X1").unwrap();
        // eta is not declared latent here, so it is an observed variable.
        assert_eq!(s.manifest, vec!["Y1", "eta"]);
        assert_eq!(s.covariates, vec!["X1"]);
        assert_eq!(s.edges.len(), 2);
        assert_eq!(s.edges[0].constraint, Constraint::Fixed(1.0));
        assert_eq!(s.edges[1].constraint, Constraint::Free);
    }

    #[test]
    fn rejects_self_loop_and_duplicates() {
        assert!(matches!(
            parse_model("latent eta\neta <- eta").unwrap_err(),
            Error::Model(_)
        ));
        assert!(parse_model("Y <- X\nY <- X @1").is_err());
        assert!(parse_model("Y <- 1\nY <- 1 @0").is_err());
        assert!(parse_model("cov(A, B)\ncov(B, A)").is_err());
    }

    #[test]
    fn binary_variance_must_be_fixed() {
        assert!(parse_model("binary Y\nY <- X\ncov(Y, Y)").is_err());
        assert!(parse_model("binary Y\nY <- X\ncov(Y, Y) @1").is_ok());
    }

    #[test]
    fn kind_declarations() {
        assert!(parse_model("latent eta\nbinary eta").is_err());
        assert!(parse_model("binary Y\ncensored left Y").is_err());
        let s = parse_model("censored both Y\nY <- X").unwrap();
        assert_eq!(s.kinds, vec![Kind::Censored(Side::Both)]);
    }

    #[test]
    fn scaling_indicator_is_first_loading() {
        let s = parse_model("latent eta\nY1 + Y2 <- eta").unwrap();
        assert_eq!(s.edges[0].constraint, Constraint::Fixed(1.0));
        assert_eq!(s.edges[1].constraint, Constraint::Free);
        assert_eq!(s.intercepts[0], ("Y1".to_string(), Constraint::Fixed(0.0)));
        assert_eq!(s.intercepts[2], ("eta".to_string(), Constraint::Free));

        let s = parse_model("latent eta\nY1 <- eta\nY2 <- eta @2").unwrap();
        assert_eq!(s.edges[0].constraint, Constraint::Free);
        assert_eq!(s.intercepts[1].1, Constraint::Fixed(0.0));

        let s = parse_model("latent eta\nY1 + Y2 <- eta\ncov(eta, eta) @1").unwrap();
        assert!(s.edges.iter().all(|e| e.constraint == Constraint::Free));
        assert_eq!(s.intercepts[2].1, Constraint::Fixed(0.0));
    }

    #[test]
    fn slope_moderator_must_be_covariate() {
        assert!(parse_model("latent eta\nY1 + Y2 <- eta\nslope Y1 <- eta * V").is_ok());
        assert!(parse_model("latent eta\nY1 + Y2 <- eta\nslope Y1 <- eta * Y2").is_err());
        assert!(parse_model("latent eta\nY1 + Y2 <- eta + X\nslope Y1 <- X * V").is_err());
    }
}
