//! Mixed-model formula mini-language.
//!
//! ```text
//! formula     = name "~" rhs ;
//! rhs         = rhs_term { "+" rhs_term } ;
//! rhs_term    = random | product ;
//! random      = "(" expr "|" name ")"
//!             | "us" "(" expr "|" name ")"
//!             | "diag" "(" expr "|" name ")"
//!             | "rr" "(" expr "|" name [ "," [ "d" "=" ] integer ] ")" ;
//! expr        = product { "+" product } ;
//! product     = interaction { "*" interaction } ;
//! interaction = atom { ":" atom } ;
//! atom        = name | "0" | "1" ;
//! name        = ( letter | "_" | "." ) { letter | digit | "_" | "." } ;
//! ```
//!
//! `a * b` expands to `a + b + a:b` (all sub-interactions, ordered by size,
//! then by position). `0` drops the intercept, `1` keeps it; the intercept is
//! included by default in both fixed and varying expressions. Terms keep
//! their left-to-right order and repeated terms are dropped.

use std::fmt;

use crate::covstruct::CovKind;
use crate::error::{Error, Result};

/// Rank used by `rr(... | g)` when none is given.
pub const DEFAULT_RR_RANK: usize = 2;

/// One interaction term: the variables it multiplies, in written order.
pub type Interaction = Vec<String>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TermExpr {
    pub intercept: bool,
    pub terms: Vec<Interaction>,
}

impl TermExpr {
    pub fn contains(&self, term: &[String]) -> bool {
        self.terms.iter().any(|t| same_set(t, term))
    }

    pub fn variables(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for t in &self.terms {
            for v in t {
                if !out.contains(v) {
                    out.push(v.clone());
                }
            }
        }
        out
    }
}

pub(crate) fn same_set(a: &[String], b: &[String]) -> bool {
    a.len() == b.len() && a.iter().all(|x| b.contains(x))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RandomTerm {
    pub varying: TermExpr,
    pub group: String,
    pub structure: CovKind,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelSpec {
    pub response: String,
    pub fixed: TermExpr,
    pub random: Vec<RandomTerm>,
}

impl ModelSpec {
    /// Every column referenced by the formula.
    pub fn variables(&self) -> Vec<String> {
        let mut out = vec![self.response.clone()];
        let mut push = |v: &String| {
            if !out.contains(v) {
                out.push(v.clone());
            }
        };
        self.fixed.variables().iter().for_each(&mut push);
        for r in &self.random {
            r.varying.variables().iter().for_each(&mut push);
            push(&r.group);
        }
        out
    }
}

impl fmt::Display for TermExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "{}", if self.intercept { "1" } else { "0" });
        }
        let body: Vec<String> = self.terms.iter().map(|t| t.join(":")).collect();
        write!(f, "{}", body.join(" + "))?;
        if !self.intercept {
            write!(f, " + 0")?;
        }
        Ok(())
    }
}

impl fmt::Display for RandomTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.structure {
            CovKind::Us => write!(f, "({} | {})", self.varying, self.group),
            CovKind::Diag => write!(f, "diag({} | {})", self.varying, self.group),
            CovKind::Rr { rank } => write!(f, "rr({} | {}, {})", self.varying, self.group, rank),
        }
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ~ {}", self.response, self.fixed)?;
        for r in &self.random {
            write!(f, " + {r}")?;
        }
        Ok(())
    }
}

impl std::str::FromStr for ModelSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        parse_formula(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Name(String),
    Int(u64),
    Tilde,
    Plus,
    Star,
    Colon,
    Bar,
    LParen,
    RParen,
    Comma,
    Eq,
    End,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Name(n) => format!("`{n}`"),
            Tok::Int(i) => format!("`{i}`"),
            Tok::End => "end of input".into(),
            other => format!("`{}`", symbol(other)),
        }
    }
}

fn symbol(t: &Tok) -> &'static str {
    match t {
        Tok::Tilde => "~",
        Tok::Plus => "+",
        Tok::Star => "*",
        Tok::Colon => ":",
        Tok::Bar => "|",
        Tok::LParen => "(",
        Tok::RParen => ")",
        Tok::Comma => ",",
        Tok::Eq => "=",
        _ => "?",
    }
}

fn tokenize(text: &str) -> Result<Vec<(Tok, usize)>> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let start = i;
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        let tok = match c {
            '~' => Tok::Tilde,
            '+' => Tok::Plus,
            '*' => Tok::Star,
            ':' => Tok::Colon,
            '|' => Tok::Bar,
            '(' => Tok::LParen,
            ')' => Tok::RParen,
            ',' => Tok::Comma,
            '=' => Tok::Eq,
            c if c.is_ascii_digit() => {
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
                if i < chars.len() && (chars[i] == '.' || chars[i].is_alphabetic()) {
                    return Err(Error::parse(start, "expected an integer"));
                }
                let s: String = chars[start..i].iter().collect();
                let v = s.parse().map_err(|_| Error::parse(start, "integer too large"))?;
                out.push((Tok::Int(v), start));
                continue;
            }
            c if c.is_alphabetic() || c == '_' || c == '.' => {
                while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_' || chars[i] == '.') {
                    i += 1;
                }
                out.push((Tok::Name(chars[start..i].iter().collect()), start));
                continue;
            }
            other => return Err(Error::parse(start, format!("unexpected character `{other}`"))),
        };
        out.push((tok, start));
        i += 1;
    }
    out.push((Tok::End, chars.len()));
    Ok(out)
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
}

/// Parsed pieces of an additive expression before intercept resolution.
#[derive(Default)]
struct Additive {
    terms: Vec<Interaction>,
    zero: Option<usize>,
    one: Option<usize>,
}

impl Additive {
    fn push(&mut self, term: Interaction) {
        if !self.terms.iter().any(|t| same_set(t, &term)) {
            self.terms.push(term);
        }
    }

    fn finish(self) -> Result<TermExpr> {
        if let (Some(_), Some(p)) = (self.zero, self.one) {
            return Err(Error::parse(p, "conflicting intercept specifications `0` and `1`"));
        }
        Ok(TermExpr {
            intercept: self.zero.is_none(),
            terms: self.terms,
        })
    }
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }

    fn peek_at(&self, k: usize) -> &Tok {
        &self.toks[(self.pos + k).min(self.toks.len() - 1)].0
    }

    fn offset(&self) -> usize {
        self.toks[self.pos].1
    }

    fn next(&mut self) -> (Tok, usize) {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn expect(&mut self, want: Tok) -> Result<()> {
        let (tok, at) = self.next();
        if tok == want {
            Ok(())
        } else {
            Err(Error::parse(
                at,
                format!("expected `{}`, found {}", symbol(&want), tok.describe()),
            ))
        }
    }

    fn name(&mut self) -> Result<String> {
        match self.next() {
            (Tok::Name(n), _) => Ok(n),
            (tok, at) => Err(Error::parse(at, format!("expected a column name, found {}", tok.describe()))),
        }
    }

    fn formula(&mut self) -> Result<ModelSpec> {
        let response = self.name()?;
        self.expect(Tok::Tilde)?;
        let mut fixed = Additive::default();
        let mut random = Vec::new();
        loop {
            if let Some(r) = self.random_term()? {
                random.push(r);
            } else {
                self.product(&mut fixed)?;
            }
            match self.peek() {
                Tok::Plus => {
                    self.next();
                }
                Tok::End => break,
                other => {
                    return Err(Error::parse(
                        self.offset(),
                        format!("expected `+` or end of formula, found {}", other.describe()),
                    ))
                }
            }
        }
        Ok(ModelSpec {
            response,
            fixed: fixed.finish()?,
            random,
        })
    }

    /// Parses a random-effect term if one starts here.
    fn random_term(&mut self) -> Result<Option<RandomTerm>> {
        let structure = match (self.peek().clone(), self.peek_at(1)) {
            (Tok::LParen, _) => {
                self.next();
                CovKind::Us
            }
            (Tok::Name(kw), Tok::LParen) => {
                let at = self.offset();
                let kind = match kw.as_str() {
                    "us" => CovKind::Us,
                    "diag" => CovKind::Diag,
                    "rr" => CovKind::Rr { rank: DEFAULT_RR_RANK },
                    other => return Err(Error::parse(at, format!("unknown covariance structure `{other}`"))),
                };
                self.next();
                self.next();
                kind
            }
            _ => return Ok(None),
        };
        let varying = self.expr()?;
        self.expect(Tok::Bar)?;
        let group = self.name()?;
        let structure = match structure {
            CovKind::Rr { .. } => {
                let rank = if *self.peek() == Tok::Comma {
                    self.next();
                    if let (Tok::Name(k), Tok::Eq) = (self.peek().clone(), self.peek_at(1)) {
                        if k != "d" {
                            return Err(Error::parse(self.offset(), format!("unknown argument `{k}`, expected `d`")));
                        }
                        self.next();
                        self.next();
                    }
                    match self.next() {
                        (Tok::Int(v), at) => {
                            if v == 0 {
                                return Err(Error::parse(at, "rank must be a positive integer"));
                            }
                            v as usize
                        }
                        (tok, at) => {
                            return Err(Error::parse(
                                at,
                                format!("rank must be a positive integer, found {}", tok.describe()),
                            ))
                        }
                    }
                } else {
                    DEFAULT_RR_RANK
                };
                CovKind::Rr { rank }
            }
            other => other,
        };
        self.expect(Tok::RParen)?;
        Ok(Some(RandomTerm {
            varying,
            group,
            structure,
        }))
    }

    fn expr(&mut self) -> Result<TermExpr> {
        let mut acc = Additive::default();
        self.product(&mut acc)?;
        while *self.peek() == Tok::Plus {
            self.next();
            self.product(&mut acc)?;
        }
        acc.finish()
    }

    fn product(&mut self, acc: &mut Additive) -> Result<()> {
        let at = self.offset();
        if let Tok::Int(v) = self.peek().clone() {
            self.next();
            match v {
                0 => acc.zero = Some(at),
                1 => acc.one = Some(at),
                _ => return Err(Error::parse(at, format!("unexpected number `{v}`"))),
            }
            if matches!(self.peek(), Tok::Star | Tok::Colon) {
                return Err(Error::parse(self.offset(), "intercept terms cannot be multiplied"));
            }
            return Ok(());
        }
        let mut factors = vec![self.interaction()?];
        while *self.peek() == Tok::Star {
            self.next();
            factors.push(self.interaction()?);
        }
        for term in expand_product(&factors) {
            acc.push(term);
        }
        Ok(())
    }

    fn interaction(&mut self) -> Result<Interaction> {
        let mut vars = vec![self.name()?];
        while *self.peek() == Tok::Colon {
            self.next();
            let v = self.name()?;
            if !vars.contains(&v) {
                vars.push(v);
            }
        }
        Ok(vars)
    }
}

/// All non-empty sub-products of `f1 * f2 * ...`, smallest first.
fn expand_product(factors: &[Interaction]) -> Vec<Interaction> {
    let k = factors.len();
    let mut subsets: Vec<u32> = (1..(1u32 << k)).collect();
    subsets.sort_by_key(|&s| {
        let members: Vec<usize> = (0..k).filter(|i| s & (1 << i) != 0).collect();
        (members.len(), members)
    });
    let mut out: Vec<Interaction> = Vec::new();
    for s in subsets {
        let mut term: Interaction = Vec::new();
        for (i, f) in factors.iter().enumerate() {
            if s & (1 << i) != 0 {
                for v in f {
                    if !term.contains(v) {
                        term.push(v.clone());
                    }
                }
            }
        }
        if !out.iter().any(|t| same_set(t, &term)) {
            out.push(term);
        }
    }
    out
}

/// Parses a model formula such as `y ~ x + rr(x | group, 2)`.
pub fn parse_formula(text: &str) -> Result<ModelSpec> {
    if text.trim().is_empty() {
        return Err(Error::parse(0, "empty formula"));
    }
    let mut p = Parser {
        toks: tokenize(text)?,
        pos: 0,
    };
    p.formula()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn windfarm_formula() {
        let spec = parse_formula(
            "abundance ~ Zone * Year + diag(Zone * Year | Species) + (1 | Station) + rr(Species + 0 | ID, 2)",
        )
        .unwrap();
        assert_eq!(spec.response, "abundance");
        assert!(spec.fixed.intercept);
        assert_eq!(
            spec.fixed.terms,
            vec![names(&["Zone"]), names(&["Year"]), names(&["Zone", "Year"])]
        );
        assert_eq!(spec.random.len(), 3);
        assert_eq!(spec.random[0].structure, CovKind::Diag);
        assert_eq!(spec.random[0].group, "Species");
        assert_eq!(spec.random[1].structure, CovKind::Us);
        assert!(spec.random[1].varying.intercept);
        assert!(spec.random[1].varying.terms.is_empty());
        assert_eq!(spec.random[2].structure, CovKind::Rr { rank: 2 });
        assert!(!spec.random[2].varying.intercept);
        assert_eq!(spec.random[2].varying.terms, vec![names(&["Species"])]);
    }

    #[test]
    fn rr_rank_defaults_and_keyword() {
        let spec = parse_formula("y ~ x + rr(x | group)").unwrap();
        assert_eq!(spec.random[0].structure, CovKind::Rr { rank: 2 });
        let spec = parse_formula("Overall ~ Size_lib * Eco_disad + (1 | School) + rr(Size_lib * Eco_disad | Country, d = 3)").unwrap();
        assert_eq!(spec.random[1].structure, CovKind::Rr { rank: 3 });
        assert_eq!(spec.random[1].varying.terms.len(), 3);
    }

    #[test]
    fn no_intercept() {
        let spec = parse_formula("y ~ 0 + x").unwrap();
        assert!(!spec.fixed.intercept);
        assert_eq!(spec.fixed.terms, vec![names(&["x"])]);
    }

    #[test]
    fn three_way_expansion_order() {
        let spec = parse_formula("y ~ a * b * c").unwrap();
        let got: Vec<String> = spec.fixed.terms.iter().map(|t| t.join(":")).collect();
        assert_eq!(got, ["a", "b", "c", "a:b", "a:c", "b:c", "a:b:c"]);
        let spec = parse_formula("y ~ a:b * c").unwrap();
        let got: Vec<String> = spec.fixed.terms.iter().map(|t| t.join(":")).collect();
        assert_eq!(got, ["a:b", "c", "a:b:c"]);
    }

    #[test]
    fn duplicates_dropped() {
        let spec = parse_formula("y ~ a + b + a * b + b:a").unwrap();
        assert_eq!(spec.fixed.terms.len(), 3);
    }

    #[test]
    fn errors_carry_positions() {
        match parse_formula("y ~ x + ar1(x | g)") {
            Err(Error::Parse { pos, message }) => {
                assert_eq!(pos, 8);
                assert!(message.contains("ar1"));
            }
            other => panic!("{other:?}"),
        }
        match parse_formula("y ~ rr(x | g, 2.5)") {
            Err(Error::Parse { pos, .. }) => assert_eq!(pos, 14),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_formula("y ~ rr(x | g, k = 2)"), Err(Error::Parse { .. })));
        assert!(matches!(parse_formula("y ~ rr(x | g, 0)"), Err(Error::Parse { .. })));
        assert!(matches!(parse_formula("y ~ x +"), Err(Error::Parse { .. })));
        assert!(matches!(parse_formula("y x"), Err(Error::Parse { pos: 2, .. })));
        assert!(matches!(parse_formula("  "), Err(Error::Parse { .. })));
        assert!(matches!(parse_formula("y ~ (x | g"), Err(Error::Parse { .. })));
        assert!(matches!(parse_formula("y ~ 0 + 1 + x"), Err(Error::Parse { .. })));
        assert!(matches!(parse_formula("y ~ x $ z"), Err(Error::Parse { pos: 6, .. })));
    }

    #[test]
    fn display_round_trip_examples() {
        for f in [
            "abundance ~ Zone * Year + diag(Zone * Year | Species) + (1 | Station) + rr(Species + 0 | ID, 2)",
            "y ~ 0 + x",
            "y ~ rr(x | g)",
            "y ~ 0 + (0 + a | g)",
            "y ~ 1",
        ] {
            let spec = parse_formula(f).unwrap();
            let again = parse_formula(&spec.to_string()).unwrap();
            assert_eq!(spec, again, "{f} -> {spec}");
        }
    }

    fn arb_name() -> impl Strategy<Value = String> {
        prop::sample::select(vec!["a", "b", "c", "Zone", "x.1", "_w"]).prop_map(String::from)
    }

    fn arb_expr() -> impl Strategy<Value = String> {
        (
            prop::collection::vec(prop::collection::vec(arb_name(), 1..3), 1..4),
            prop::sample::select(vec!["", " + 0", " + 1"]),
            any::<bool>(),
        )
            .prop_map(|(terms, icpt, star)| {
                let sep = if star { " * " } else { ":" };
                let body: Vec<String> = terms.iter().map(|t| t.join(sep)).collect();
                format!("{}{}", body.join(" + "), icpt)
            })
    }

    fn arb_random() -> impl Strategy<Value = String> {
        (arb_expr(), arb_name(), 0usize..4, 1usize..5).prop_map(|(e, g, kind, d)| match kind {
            0 => format!("({e} | {g})"),
            1 => format!("diag({e} | {g})"),
            2 => format!("rr({e} | {g}, {d})"),
            _ => format!("rr({e} | {g}, d = {d})"),
        })
    }

    proptest! {
        #[test]
        fn parse_unparse_parse(fixed in arb_expr(), random in prop::collection::vec(arb_random(), 0..3)) {
            let mut text = format!("y ~ {fixed}");
            for r in &random {
                text.push_str(" + ");
                text.push_str(r);
            }
            let spec = parse_formula(&text).unwrap();
            let again = parse_formula(&spec.to_string()).unwrap();
            prop_assert_eq!(spec, again);
        }
    }
}
