//! First-order hypotheses: the AST, its s-expression syntax, the catalog of
//! thirteen logical patterns and the control conditions checked against them.
//!
//! Concrete syntax:
//!
//! ```text
//! H := (e ENT) | (p REL H) | (i H H [H]) | (u H H) | (n H)
//! ENT := e<digits>      REL := r<digits>
//! ```
//!
//! `n` may only appear as a direct child of `i`, and every `i` needs at least
//! one child that is not an `n`.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, SyntaxErrorKind};
use crate::graph::{EntityId, KnowledgeGraph, RelationId};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "JsonNode", try_from = "JsonNode")]
pub enum Hypothesis {
    Anchor(EntityId),
    Proj(RelationId, Box<Hypothesis>),
    Inter(Vec<Hypothesis>),
    Union(Vec<Hypothesis>),
    Neg(Box<Hypothesis>),
}

pub fn anchor(e: u32) -> Hypothesis {
    Hypothesis::Anchor(EntityId(e))
}

pub fn proj(r: u32, child: Hypothesis) -> Hypothesis {
    Hypothesis::Proj(RelationId(r), Box::new(child))
}

pub fn inter(children: impl Into<Vec<Hypothesis>>) -> Hypothesis {
    Hypothesis::Inter(children.into())
}

pub fn union(children: impl Into<Vec<Hypothesis>>) -> Hypothesis {
    Hypothesis::Union(children.into())
}

pub fn neg(child: Hypothesis) -> Hypothesis {
    Hypothesis::Neg(Box::new(child))
}

impl Hypothesis {
    /// `(p r (e a))`, the one-hop projection from an anchor.
    pub fn one_hop(rel: RelationId, from: EntityId) -> Self {
        Hypothesis::Proj(rel, Box::new(Hypothesis::Anchor(from)))
    }

    pub fn children(&self) -> &[Hypothesis] {
        match self {
            Hypothesis::Anchor(_) => &[],
            Hypothesis::Proj(_, c) | Hypothesis::Neg(c) => std::slice::from_ref(c.as_ref()),
            Hypothesis::Inter(cs) | Hypothesis::Union(cs) => cs,
        }
    }

    pub fn is_neg(&self) -> bool {
        matches!(self, Hypothesis::Neg(_))
    }

    /// Checks the grammar invariants for a tree built programmatically.
    pub fn validate(&self) -> Result<()> {
        fn walk(h: &Hypothesis, parent_is_inter: bool) -> std::result::Result<(), SyntaxErrorKind> {
            match h {
                Hypothesis::Anchor(_) => Ok(()),
                Hypothesis::Proj(_, c) => walk(c, false),
                Hypothesis::Neg(c) => {
                    if !parent_is_inter {
                        return Err(SyntaxErrorKind::NegationPlacement);
                    }
                    walk(c, false)
                }
                Hypothesis::Inter(cs) => {
                    if !(2..=3).contains(&cs.len()) {
                        return Err(SyntaxErrorKind::Arity { op: 'i', found: cs.len() });
                    }
                    if cs.iter().all(Hypothesis::is_neg) {
                        return Err(SyntaxErrorKind::NoPositiveConjunct);
                    }
                    cs.iter().try_for_each(|c| walk(c, true))
                }
                Hypothesis::Union(cs) => {
                    if cs.len() != 2 {
                        return Err(SyntaxErrorKind::Arity { op: 'u', found: cs.len() });
                    }
                    cs.iter().try_for_each(|c| walk(c, false))
                }
            }
        }
        walk(self, false).map_err(|kind| Error::Syntax { offset: 0, kind })
    }

    /// Number of projection nodes.
    pub fn count_relations(&self) -> usize {
        let own = usize::from(matches!(self, Hypothesis::Proj(..)));
        own + self.children().iter().map(Hypothesis::count_relations).sum::<usize>()
    }

    /// Number of anchor occurrences (not distinct entities).
    pub fn count_entities(&self) -> usize {
        match self {
            Hypothesis::Anchor(_) => 1,
            _ => self.children().iter().map(Hypothesis::count_entities).sum(),
        }
    }

    pub fn count_distinct_entities(&self) -> usize {
        self.anchors().into_iter().collect::<BTreeSet<_>>().len()
    }

    pub fn node_count(&self) -> usize {
        1 + self.children().iter().map(Hypothesis::node_count).sum::<usize>()
    }

    /// Anchors in left-to-right order, with repeats.
    pub fn anchors(&self) -> Vec<EntityId> {
        let mut out = Vec::new();
        self.visit(&mut |h| {
            if let Hypothesis::Anchor(e) = h {
                out.push(*e);
            }
        });
        out
    }

    /// Projection relations in pre-order, with repeats.
    pub fn relations(&self) -> Vec<RelationId> {
        let mut out = Vec::new();
        self.visit(&mut |h| {
            if let Hypothesis::Proj(r, _) = h {
                out.push(*r);
            }
        });
        out
    }

    /// Pre-order traversal.
    pub fn visit<'a>(&'a self, f: &mut impl FnMut(&'a Hypothesis)) {
        f(self);
        for c in self.children() {
            c.visit(f);
        }
    }

    pub fn pattern(&self) -> Option<PatternId> {
        extract_pattern(self)
    }

    /// Sorts the children of every `i` and `u` node by their serialization,
    /// giving one representative per commutativity class.
    pub fn canonicalize(&self) -> Hypothesis {
        match self {
            Hypothesis::Anchor(_) => self.clone(),
            Hypothesis::Proj(r, c) => Hypothesis::Proj(*r, Box::new(c.canonicalize())),
            Hypothesis::Neg(c) => Hypothesis::Neg(Box::new(c.canonicalize())),
            Hypothesis::Inter(cs) => Hypothesis::Inter(sorted_children(cs)),
            Hypothesis::Union(cs) => Hypothesis::Union(sorted_children(cs)),
        }
    }

    /// Whether two siblings under the same `i`/`u` are identical anywhere in the tree.
    pub fn has_duplicate_siblings(&self) -> bool {
        let own = match self {
            Hypothesis::Inter(cs) | Hypothesis::Union(cs) => {
                cs.iter().enumerate().any(|(i, a)| cs[i + 1..].contains(a))
            }
            _ => false,
        };
        own || self.children().iter().any(Hypothesis::has_duplicate_siblings)
    }

    pub fn check_ids(&self, g: &KnowledgeGraph) -> Result<()> {
        let mut res = Ok(());
        self.visit(&mut |h| {
            if res.is_err() {
                return;
            }
            res = match h {
                Hypothesis::Anchor(e) => g.check_entity(*e),
                Hypothesis::Proj(r, _) => g.check_relation(*r),
                _ => Ok(()),
            };
        });
        res
    }

    /// Renders with vocabulary names instead of ids. Display only; not re-parseable
    /// when names contain whitespace or parentheses.
    pub fn display_named(&self, g: &KnowledgeGraph) -> String {
        let mut out = String::new();
        self.write_with(&mut out, &|e| g.entity_name(e).map(str::to_string).unwrap_or_else(|| e.to_string()), &|r| {
            g.relation_name(r).map(str::to_string).unwrap_or_else(|| r.to_string())
        });
        out
    }

    fn write_with(
        &self,
        out: &mut String,
        ent: &dyn Fn(EntityId) -> String,
        rel: &dyn Fn(RelationId) -> String,
    ) {
        match self {
            Hypothesis::Anchor(e) => {
                out.push_str("(e ");
                out.push_str(&ent(*e));
                out.push(')');
            }
            Hypothesis::Proj(r, c) => {
                out.push_str("(p ");
                out.push_str(&rel(*r));
                out.push(' ');
                c.write_with(out, ent, rel);
                out.push(')');
            }
            Hypothesis::Neg(c) => {
                out.push_str("(n ");
                c.write_with(out, ent, rel);
                out.push(')');
            }
            Hypothesis::Inter(cs) | Hypothesis::Union(cs) => {
                out.push_str(if matches!(self, Hypothesis::Inter(_)) { "(i" } else { "(u" });
                for c in cs {
                    out.push(' ');
                    c.write_with(out, ent, rel);
                }
                out.push(')');
            }
        }
    }

    pub fn to_tokens(&self) -> Vec<Token> {
        let mut out = Vec::new();
        self.push_tokens(&mut out);
        out
    }

    fn push_tokens(&self, out: &mut Vec<Token>) {
        out.push(Token::Open);
        match self {
            Hypothesis::Anchor(e) => {
                out.push(Token::Op(Operator::Entity));
                out.push(Token::Entity(*e));
            }
            Hypothesis::Proj(r, c) => {
                out.push(Token::Op(Operator::Proj));
                out.push(Token::Relation(*r));
                c.push_tokens(out);
            }
            Hypothesis::Neg(c) => {
                out.push(Token::Op(Operator::Neg));
                c.push_tokens(out);
            }
            Hypothesis::Inter(cs) | Hypothesis::Union(cs) => {
                out.push(Token::Op(if matches!(self, Hypothesis::Inter(_)) {
                    Operator::Inter
                } else {
                    Operator::Union
                }));
                for c in cs {
                    c.push_tokens(out);
                }
            }
        }
        out.push(Token::Close);
    }

    pub fn from_tokens(tokens: &[Token]) -> Result<Hypothesis> {
        let text = tokens.iter().map(Token::to_string).collect::<Vec<_>>().join(" ");
        parse(&text)
    }
}

fn sorted_children(cs: &[Hypothesis]) -> Vec<Hypothesis> {
    let mut keyed: Vec<(String, Hypothesis)> = cs
        .iter()
        .map(|c| {
            let c = c.canonicalize();
            (c.to_string(), c)
        })
        .collect();
    keyed.sort_by(|a, b| a.0.cmp(&b.0));
    keyed.into_iter().map(|(_, c)| c).collect()
}

impl fmt::Display for Hypothesis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut out = String::new();
        self.write_with(&mut out, &|e| e.to_string(), &|r| r.to_string());
        f.write_str(&out)
    }
}

impl FromStr for Hypothesis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        parse(s)
    }
}

/// Canonical single-space s-expression.
pub fn serialize(h: &Hypothesis) -> String {
    h.to_string()
}

// ---------------------------------------------------------------------------
// Parsing

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Lexeme<'a> {
    Open,
    Close,
    Atom(&'a str),
}

fn lex(text: &str) -> Vec<(usize, Lexeme<'_>)> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let b = bytes[i];
        if b.is_ascii_whitespace() {
            i += 1;
        } else if b == b'(' {
            out.push((i, Lexeme::Open));
            i += 1;
        } else if b == b')' {
            out.push((i, Lexeme::Close));
            i += 1;
        } else {
            let start = i;
            while i < bytes.len() && !bytes[i].is_ascii_whitespace() && bytes[i] != b'(' && bytes[i] != b')' {
                i += 1;
            }
            out.push((start, Lexeme::Atom(&text[start..i])));
        }
    }
    out
}

struct Parser<'a> {
    tokens: Vec<(usize, Lexeme<'a>)>,
    pos: usize,
    len: usize,
}

fn syntax(offset: usize, kind: SyntaxErrorKind) -> Error {
    Error::Syntax { offset, kind }
}

fn parse_id(atom: &str, prefix: char) -> Option<u32> {
    let digits = atom.strip_prefix(prefix)?;
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok()
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<(usize, Lexeme<'a>)> {
        self.tokens.get(self.pos).copied()
    }

    fn next(&mut self) -> Result<(usize, Lexeme<'a>)> {
        let t = self
            .peek()
            .ok_or_else(|| syntax(self.len, SyntaxErrorKind::UnexpectedEnd))?;
        self.pos += 1;
        Ok(t)
    }

    /// Like `next`, but running out of input means a missing `)`.
    fn next_in_list(&mut self) -> Result<(usize, Lexeme<'a>)> {
        self.next()
            .map_err(|_| syntax(self.len, SyntaxErrorKind::UnbalancedParens))
    }

    fn atom(&mut self, what: &'static str) -> Result<(usize, &'a str)> {
        match self.next_in_list()? {
            (off, Lexeme::Atom(a)) => Ok((off, a)),
            (off, _) => Err(syntax(off, SyntaxErrorKind::Expected(what))),
        }
    }

    fn close(&mut self) -> Result<()> {
        match self.next_in_list()? {
            (_, Lexeme::Close) => Ok(()),
            (off, Lexeme::Atom(a)) => Err(syntax(off, SyntaxErrorKind::UnknownToken(a.to_string()))),
            (off, Lexeme::Open) => Err(syntax(off, SyntaxErrorKind::Expected("`)`"))),
        }
    }

    fn expr(&mut self, parent_is_inter: bool) -> Result<Hypothesis> {
        let open = match self.next()? {
            (off, Lexeme::Open) => off,
            (off, Lexeme::Close) => return Err(syntax(off, SyntaxErrorKind::UnbalancedParens)),
            (off, Lexeme::Atom(a)) => return Err(syntax(off, SyntaxErrorKind::UnknownToken(a.to_string()))),
        };
        let (op_off, op) = self.atom("an operator")?;
        match op {
            "e" => {
                let (off, id) = self.atom("an entity id")?;
                let e = parse_id(id, 'e')
                    .ok_or_else(|| syntax(off, SyntaxErrorKind::UnknownToken(id.to_string())))?;
                self.close()?;
                Ok(Hypothesis::Anchor(EntityId(e)))
            }
            "p" => {
                let (off, id) = self.atom("a relation id")?;
                let r = parse_id(id, 'r')
                    .ok_or_else(|| syntax(off, SyntaxErrorKind::UnknownToken(id.to_string())))?;
                let child = self.expr(false)?;
                self.close()?;
                Ok(Hypothesis::Proj(RelationId(r), Box::new(child)))
            }
            "n" => {
                if !parent_is_inter {
                    return Err(syntax(open, SyntaxErrorKind::NegationPlacement));
                }
                let child = self.expr(false)?;
                self.close()?;
                Ok(Hypothesis::Neg(Box::new(child)))
            }
            "i" | "u" => {
                let is_inter = op == "i";
                let mut children = Vec::new();
                loop {
                    match self.peek() {
                        Some((_, Lexeme::Close)) => {
                            self.pos += 1;
                            break;
                        }
                        Some(_) => children.push(self.expr(is_inter)?),
                        None => return Err(syntax(self.len, SyntaxErrorKind::UnbalancedParens)),
                    }
                }
                let arity_ok = if is_inter {
                    (2..=3).contains(&children.len())
                } else {
                    children.len() == 2
                };
                if !arity_ok {
                    let op = if is_inter { 'i' } else { 'u' };
                    return Err(syntax(open, SyntaxErrorKind::Arity { op, found: children.len() }));
                }
                if is_inter {
                    if children.iter().all(Hypothesis::is_neg) {
                        return Err(syntax(open, SyntaxErrorKind::NoPositiveConjunct));
                    }
                    Ok(Hypothesis::Inter(children))
                } else {
                    Ok(Hypothesis::Union(children))
                }
            }
            other => Err(syntax(op_off, SyntaxErrorKind::UnknownToken(other.to_string()))),
        }
    }
}

/// Parses the canonical s-expression form. Whitespace-insensitive.
pub fn parse(text: &str) -> Result<Hypothesis> {
    let mut p = Parser {
        tokens: lex(text),
        pos: 0,
        len: text.len(),
    };
    let h = p.expr(false)?;
    if let Some((off, lx)) = p.peek() {
        let kind = match lx {
            Lexeme::Close => SyntaxErrorKind::UnbalancedParens,
            _ => SyntaxErrorKind::TrailingInput,
        };
        return Err(syntax(off, kind));
    }
    Ok(h)
}

// ---------------------------------------------------------------------------
// Pattern catalog

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PatternId {
    P1,
    P2,
    I2,
    I3,
    Pi,
    Ip,
    U2,
    Up,
    In2,
    In3,
    Pin,
    Inp,
    Pni,
}

impl PatternId {
    pub const ALL: [PatternId; 13] = [
        PatternId::P1,
        PatternId::P2,
        PatternId::I2,
        PatternId::I3,
        PatternId::Pi,
        PatternId::Ip,
        PatternId::U2,
        PatternId::Up,
        PatternId::In2,
        PatternId::In3,
        PatternId::Pin,
        PatternId::Inp,
        PatternId::Pni,
    ];

    /// Patterns with a sub-logic decomposition rule.
    pub const DECOMPOSABLE: [PatternId; 5] = [
        PatternId::Up,
        PatternId::In3,
        PatternId::Pni,
        PatternId::Pin,
        PatternId::Inp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PatternId::P1 => "1p",
            PatternId::P2 => "2p",
            PatternId::I2 => "2i",
            PatternId::I3 => "3i",
            PatternId::Pi => "pi",
            PatternId::Ip => "ip",
            PatternId::U2 => "2u",
            PatternId::Up => "up",
            PatternId::In2 => "2in",
            PatternId::In3 => "3in",
            PatternId::Pin => "pin",
            PatternId::Inp => "inp",
            PatternId::Pni => "pni",
        }
    }

    pub fn index(self) -> usize {
        PatternId::ALL.iter().position(|&p| p == self).unwrap()
    }

    pub fn shape(self) -> Shape {
        use Shape::*;
        let p1 = || Proj(Box::new(Anchor));
        let p2 = || Proj(Box::new(p1()));
        match self {
            PatternId::P1 => p1(),
            PatternId::P2 => p2(),
            PatternId::I2 => Inter(vec![p1(), p1()]),
            PatternId::I3 => Inter(vec![p1(), p1(), p1()]),
            PatternId::Pi => Inter(vec![p2(), p1()]),
            PatternId::Ip => Proj(Box::new(Inter(vec![p1(), p1()]))),
            PatternId::U2 => Union(vec![p1(), p1()]),
            PatternId::Up => Proj(Box::new(Union(vec![p1(), p1()]))),
            PatternId::In2 => Inter(vec![p1(), Neg(Box::new(p1()))]),
            PatternId::In3 => Inter(vec![p1(), p1(), Neg(Box::new(p1()))]),
            PatternId::Pin => Inter(vec![p2(), Neg(Box::new(p1()))]),
            PatternId::Inp => Proj(Box::new(Inter(vec![p1(), Neg(Box::new(p1()))]))),
            PatternId::Pni => Inter(vec![Neg(Box::new(p2())), p1()]),
        }
    }

    pub fn relation_count(self) -> usize {
        self.shape().count(|s| matches!(s, Shape::Proj(_)))
    }

    pub fn entity_count(self) -> usize {
        self.shape().count(|s| matches!(s, Shape::Anchor))
    }

    pub fn is_decomposable(self) -> bool {
        PatternId::DECOMPOSABLE.contains(&self)
    }
}

impl fmt::Display for PatternId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PatternId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PatternId::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Condition {
                input: s.to_string(),
                message: format!(
                    "unknown pattern; expected one of {}",
                    PatternId::ALL.map(PatternId::name).join(", ")
                ),
            })
    }
}

impl Serialize for PatternId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for PatternId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A hypothesis skeleton with anchors and relations erased.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Shape {
    Anchor,
    Proj(Box<Shape>),
    Inter(Vec<Shape>),
    Union(Vec<Shape>),
    Neg(Box<Shape>),
}

impl Shape {
    pub fn of(h: &Hypothesis) -> Shape {
        match h {
            Hypothesis::Anchor(_) => Shape::Anchor,
            Hypothesis::Proj(_, c) => Shape::Proj(Box::new(Shape::of(c))),
            Hypothesis::Neg(c) => Shape::Neg(Box::new(Shape::of(c))),
            Hypothesis::Inter(cs) => Shape::Inter(cs.iter().map(Shape::of).collect()),
            Hypothesis::Union(cs) => Shape::Union(cs.iter().map(Shape::of).collect()),
        }
    }

    pub fn children(&self) -> &[Shape] {
        match self {
            Shape::Anchor => &[],
            Shape::Proj(c) | Shape::Neg(c) => std::slice::from_ref(c.as_ref()),
            Shape::Inter(cs) | Shape::Union(cs) => cs,
        }
    }

    fn count(&self, pred: impl Fn(&Shape) -> bool + Copy) -> usize {
        usize::from(pred(self)) + self.children().iter().map(|c| c.count(pred)).sum::<usize>()
    }

    /// Skeleton text with `i`/`u` children sorted, so commutative variants coincide.
    pub fn canonical_key(&self) -> String {
        match self {
            Shape::Anchor => "(e)".to_string(),
            Shape::Proj(c) => format!("(p {})", c.canonical_key()),
            Shape::Neg(c) => format!("(n {})", c.canonical_key()),
            Shape::Inter(cs) | Shape::Union(cs) => {
                let mut keys: Vec<String> = cs.iter().map(Shape::canonical_key).collect();
                keys.sort();
                let op = if matches!(self, Shape::Inter(_)) { "i" } else { "u" };
                format!("({op} {})", keys.join(" "))
            }
        }
    }

    pub fn to_tokens(&self) -> Vec<Token> {
        let mut out = vec![Token::Open];
        match self {
            Shape::Anchor => out.push(Token::Op(Operator::Entity)),
            Shape::Proj(c) => {
                out.push(Token::Op(Operator::Proj));
                out.extend(c.to_tokens());
            }
            Shape::Neg(c) => {
                out.push(Token::Op(Operator::Neg));
                out.extend(c.to_tokens());
            }
            Shape::Inter(cs) | Shape::Union(cs) => {
                out.push(Token::Op(if matches!(self, Shape::Inter(_)) {
                    Operator::Inter
                } else {
                    Operator::Union
                }));
                for c in cs {
                    out.extend(c.to_tokens());
                }
            }
        }
        out.push(Token::Close);
        out
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Shape::Anchor => f.write_str("(e)"),
            Shape::Proj(c) => write!(f, "(p {c})"),
            Shape::Neg(c) => write!(f, "(n {c})"),
            Shape::Inter(cs) | Shape::Union(cs) => {
                f.write_str(if matches!(self, Shape::Inter(_)) { "(i" } else { "(u" })?;
                for c in cs {
                    write!(f, " {c}")?;
                }
                f.write_str(")")
            }
        }
    }
}

fn catalog_index() -> &'static HashMap<String, PatternId> {
    static INDEX: OnceLock<HashMap<String, PatternId>> = OnceLock::new();
    INDEX.get_or_init(|| {
        PatternId::ALL
            .into_iter()
            .map(|p| (p.shape().canonical_key(), p))
            .collect()
    })
}

/// Matches the skeleton of `h` against the catalog, ignoring sibling order.
pub fn extract_pattern(h: &Hypothesis) -> Option<PatternId> {
    catalog_index().get(&Shape::of(h).canonical_key()).copied()
}

// ---------------------------------------------------------------------------
// Conditions

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Condition {
    Pattern(PatternId),
    EntityCount(u32),
    RelationCount(u32),
    SpecificEntity(EntityId),
    SpecificRelation(RelationId),
}

/// The five condition families, for iteration in tests and reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditionKind {
    Pattern,
    EntityCount,
    RelationCount,
    SpecificEntity,
    SpecificRelation,
}

pub const CONDITION_GRAMMAR: &str =
    "pattern:<name> | ne:<n> | nr:<n> | entity:<id-or-name> | relation:<id-or-name>";

impl Condition {
    pub fn kind(&self) -> ConditionKind {
        match self {
            Condition::Pattern(_) => ConditionKind::Pattern,
            Condition::EntityCount(_) => ConditionKind::EntityCount,
            Condition::RelationCount(_) => ConditionKind::RelationCount,
            Condition::SpecificEntity(_) => ConditionKind::SpecificEntity,
            Condition::SpecificRelation(_) => ConditionKind::SpecificRelation,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Condition::EntityCount(0) | Condition::RelationCount(0) => Err(Error::Condition {
                input: self.to_string(),
                message: "counts must be at least 1".into(),
            }),
            _ => Ok(()),
        }
    }

    pub fn check_ids(&self, g: &KnowledgeGraph) -> Result<()> {
        match self {
            Condition::SpecificEntity(e) => g.check_entity(*e),
            Condition::SpecificRelation(r) => g.check_relation(*r),
            _ => Ok(()),
        }
    }

    /// Catalog patterns that can possibly satisfy this condition.
    pub fn compatible_patterns(&self) -> Vec<PatternId> {
        PatternId::ALL
            .into_iter()
            .filter(|p| match *self {
                Condition::Pattern(q) => *p == q,
                Condition::EntityCount(n) => p.entity_count() == n as usize,
                Condition::RelationCount(n) => p.relation_count() == n as usize,
                Condition::SpecificEntity(_) | Condition::SpecificRelation(_) => true,
            })
            .collect()
    }

    /// Parses the CLI grammar. Names are resolved against `g` when given.
    pub fn parse(input: &str, g: Option<&KnowledgeGraph>) -> Result<Condition> {
        let err = |message: String| Error::Condition {
            input: input.to_string(),
            message,
        };
        let (key, value) = input
            .split_once(':')
            .ok_or_else(|| err(format!("expected {CONDITION_GRAMMAR}")))?;
        let count = |v: &str| -> Result<u32> {
            let n: u32 = v.trim().parse().map_err(|_| err(format!("`{v}` is not a count")))?;
            if n == 0 {
                return Err(err("counts must be at least 1".into()));
            }
            Ok(n)
        };
        let value = value.trim();
        let cond = match key.trim() {
            "pattern" => Condition::Pattern(value.parse().map_err(|_| {
                err(format!(
                    "unknown pattern `{value}`; expected one of {}",
                    PatternId::ALL.map(PatternId::name).join(", ")
                ))
            })?),
            "ne" => Condition::EntityCount(count(value)?),
            "nr" => Condition::RelationCount(count(value)?),
            "entity" => {
                let id = value
                    .parse::<u32>()
                    .ok()
                    .or_else(|| parse_id(value, 'e').filter(|_| g.is_none_or(|g| g.entity_by_name(value).is_none())))
                    .map(EntityId)
                    .or_else(|| g.and_then(|g| g.entity_by_name(value)))
                    .ok_or_else(|| err(format!("unknown entity `{value}`")))?;
                Condition::SpecificEntity(id)
            }
            "relation" => {
                let id = value
                    .parse::<u32>()
                    .ok()
                    .or_else(|| parse_id(value, 'r').filter(|_| g.is_none_or(|g| g.relation_by_name(value).is_none())))
                    .map(RelationId)
                    .or_else(|| g.and_then(|g| g.relation_by_name(value)))
                    .ok_or_else(|| err(format!("unknown relation `{value}`")))?;
                Condition::SpecificRelation(id)
            }
            other => return Err(err(format!("unknown condition kind `{other}`; expected {CONDITION_GRAMMAR}"))),
        };
        if let Some(g) = g {
            cond.check_ids(g)?;
        }
        Ok(cond)
    }

    /// Control tokens appended to the observation sequence. A pattern
    /// condition is spelled as its operator skeleton.
    pub fn to_tokens(&self) -> Vec<Token> {
        match *self {
            Condition::Pattern(p) => p.shape().to_tokens(),
            Condition::EntityCount(n) => vec![Token::EntityCount(n)],
            Condition::RelationCount(n) => vec![Token::RelationCount(n)],
            Condition::SpecificEntity(e) => vec![Token::Entity(e)],
            Condition::SpecificRelation(r) => vec![Token::Relation(r)],
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Condition::Pattern(p) => write!(f, "pattern:{p}"),
            Condition::EntityCount(n) => write!(f, "ne:{n}"),
            Condition::RelationCount(n) => write!(f, "nr:{n}"),
            Condition::SpecificEntity(e) => write!(f, "entity:{}", e.0),
            Condition::SpecificRelation(r) => write!(f, "relation:{}", r.0),
        }
    }
}

/// Whether `h` satisfies `c`.
pub fn check_condition(h: &Hypothesis, c: &Condition) -> bool {
    match *c {
        Condition::Pattern(p) => extract_pattern(h) == Some(p),
        Condition::EntityCount(n) => h.count_entities() == n as usize,
        Condition::RelationCount(n) => h.count_relations() == n as usize,
        Condition::SpecificEntity(e) => h.anchors().contains(&e),
        Condition::SpecificRelation(r) => h.relations().contains(&r),
    }
}

// ---------------------------------------------------------------------------
// Token sequences

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Operator {
    Entity,
    Proj,
    Inter,
    Union,
    Neg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Token {
    Open,
    Close,
    Op(Operator),
    Entity(EntityId),
    Relation(RelationId),
    EntityCount(u32),
    RelationCount(u32),
    Sep,
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Token::Open => f.write_str("("),
            Token::Close => f.write_str(")"),
            Token::Op(op) => f.write_str(match op {
                Operator::Entity => "e",
                Operator::Proj => "p",
                Operator::Inter => "i",
                Operator::Union => "u",
                Operator::Neg => "n",
            }),
            Token::Entity(e) => write!(f, "{e}"),
            Token::Relation(r) => write!(f, "{r}"),
            Token::EntityCount(n) => write!(f, "[ne:{n}]"),
            Token::RelationCount(n) => write!(f, "[nr:{n}]"),
            Token::Sep => f.write_str("[sep]"),
        }
    }
}

impl FromStr for Token {
    type Err = Error;

    fn from_str(s: &str) -> Result<Token> {
        let unknown = || syntax(0, SyntaxErrorKind::UnknownToken(s.to_string()));
        let count = |inner: &str| inner.strip_suffix(']').and_then(|n| n.parse::<u32>().ok());
        Ok(match s {
            "(" => Token::Open,
            ")" => Token::Close,
            "e" => Token::Op(Operator::Entity),
            "p" => Token::Op(Operator::Proj),
            "i" => Token::Op(Operator::Inter),
            "u" => Token::Op(Operator::Union),
            "n" => Token::Op(Operator::Neg),
            "[sep]" => Token::Sep,
            _ => {
                if let Some(rest) = s.strip_prefix("[ne:") {
                    Token::EntityCount(count(rest).ok_or_else(unknown)?)
                } else if let Some(rest) = s.strip_prefix("[nr:") {
                    Token::RelationCount(count(rest).ok_or_else(unknown)?)
                } else if let Some(e) = parse_id(s, 'e') {
                    Token::Entity(EntityId(e))
                } else if let Some(r) = parse_id(s, 'r') {
                    Token::Relation(RelationId(r))
                } else {
                    return Err(unknown());
                }
            }
        })
    }
}

/// Model input: observation entity tokens, a separator, then condition tokens.
pub fn input_sequence<'a>(
    observation: impl IntoIterator<Item = &'a EntityId>,
    condition: Option<&Condition>,
) -> Vec<Token> {
    let mut out: Vec<Token> = observation.into_iter().map(|&e| Token::Entity(e)).collect();
    if let Some(c) = condition {
        out.push(Token::Sep);
        out.extend(c.to_tokens());
    }
    out
}

// ---------------------------------------------------------------------------
// JSON AST

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "op")]
enum JsonNode {
    #[serde(rename = "e")]
    Anchor { entity: EntityId },
    #[serde(rename = "p")]
    Proj { rel: RelationId, child: Box<JsonNode> },
    #[serde(rename = "i")]
    Inter { children: Vec<JsonNode> },
    #[serde(rename = "u")]
    Union { children: Vec<JsonNode> },
    #[serde(rename = "n")]
    Neg { child: Box<JsonNode> },
}

impl From<Hypothesis> for JsonNode {
    fn from(h: Hypothesis) -> Self {
        match h {
            Hypothesis::Anchor(entity) => JsonNode::Anchor { entity },
            Hypothesis::Proj(rel, c) => JsonNode::Proj {
                rel,
                child: Box::new((*c).into()),
            },
            Hypothesis::Inter(cs) => JsonNode::Inter {
                children: cs.into_iter().map(Into::into).collect(),
            },
            Hypothesis::Union(cs) => JsonNode::Union {
                children: cs.into_iter().map(Into::into).collect(),
            },
            Hypothesis::Neg(c) => JsonNode::Neg {
                child: Box::new((*c).into()),
            },
        }
    }
}

fn from_json_unchecked(n: JsonNode) -> Hypothesis {
    match n {
        JsonNode::Anchor { entity } => Hypothesis::Anchor(entity),
        JsonNode::Proj { rel, child } => Hypothesis::Proj(rel, Box::new(from_json_unchecked(*child))),
        JsonNode::Inter { children } => Hypothesis::Inter(children.into_iter().map(from_json_unchecked).collect()),
        JsonNode::Union { children } => Hypothesis::Union(children.into_iter().map(from_json_unchecked).collect()),
        JsonNode::Neg { child } => Hypothesis::Neg(Box::new(from_json_unchecked(*child))),
    }
}

impl TryFrom<JsonNode> for Hypothesis {
    type Error = Error;

    fn try_from(n: JsonNode) -> Result<Self> {
        let h = from_json_unchecked(n);
        h.validate()?;
        Ok(h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(s: &str) -> Hypothesis {
        parse(s).unwrap()
    }

    fn syntax_kind(s: &str) -> (usize, SyntaxErrorKind) {
        match parse(s) {
            Err(Error::Syntax { offset, kind }) => (offset, kind),
            other => panic!("expected syntax error for {s:?}, got {other:?}"),
        }
    }

    #[test]
    fn parses_base_and_composite_forms() {
        assert_eq!(p("(p r1 (e e0))"), proj(1, anchor(0)));
        assert_eq!(
            p("  (i (p r1 (e e0))\n (n (p r2 (e e1))))"),
            inter([proj(1, anchor(0)), neg(proj(2, anchor(1)))])
        );
        assert_eq!(p("(u (p r1 (e e0)) (p r2 (e e1)))"), union([proj(1, anchor(0)), proj(2, anchor(1))]));
    }

    #[test]
    fn rejects_bad_input_with_offsets() {
        assert_eq!(syntax_kind("(n (p r1 (e e0)))"), (0, SyntaxErrorKind::NegationPlacement));
        assert_eq!(
            syntax_kind("(p r1 (n (e e0)))").1,
            SyntaxErrorKind::NegationPlacement
        );
        assert_eq!(syntax_kind("(p r1 (e e0)").1, SyntaxErrorKind::UnbalancedParens);
        assert_eq!(syntax_kind("(p r1 (e e0)))").0, 13);
        assert_eq!(syntax_kind("(q r1 (e e0))"), (1, SyntaxErrorKind::UnknownToken("q".into())));
        assert_eq!(syntax_kind("(p x1 (e e0))"), (3, SyntaxErrorKind::UnknownToken("x1".into())));
        assert_eq!(
            syntax_kind("(i (p r1 (e e0)))"),
            (0, SyntaxErrorKind::Arity { op: 'i', found: 1 })
        );
        assert_eq!(
            syntax_kind("(u (e e0) (e e1) (e e2))").1,
            SyntaxErrorKind::Arity { op: 'u', found: 3 }
        );
        assert_eq!(
            syntax_kind("(i (n (e e0)) (n (e e1)))").1,
            SyntaxErrorKind::NoPositiveConjunct
        );
        assert_eq!(syntax_kind("").1, SyntaxErrorKind::UnexpectedEnd);
        assert_eq!(syntax_kind("(e e0) (e e1)").1, SyntaxErrorKind::TrailingInput);
    }

    #[test]
    fn serializes_in_stored_order() {
        assert_eq!(serialize(&proj(1, anchor(0))), "(p r1 (e e0))");
        let h = inter([proj(2, anchor(1)), proj(1, anchor(0))]);
        assert_eq!(h.to_string(), "(i (p r2 (e e1)) (p r1 (e e0)))");
        assert_eq!(h.canonicalize().to_string(), "(i (p r1 (e e0)) (p r2 (e e1)))");
    }

    #[test]
    fn extracts_catalog_patterns() {
        assert_eq!(extract_pattern(&p("(i (p r1 (e e0)) (p r2 (e e1)))")), Some(PatternId::I2));
        assert_eq!(
            extract_pattern(&p("(p r3 (i (p r1 (e e0)) (n (p r2 (e e1)))))")),
            Some(PatternId::Inp)
        );
        assert_eq!(
            extract_pattern(&p("(i (n (p r2 (e e1))) (p r1 (e e0)))")),
            Some(PatternId::In2)
        );
        assert_eq!(
            extract_pattern(&p("(i (p r1 (e e0)) (p r3 (p r2 (e e1))))")),
            Some(PatternId::Pi)
        );
        assert_eq!(
            extract_pattern(&p("(u (u (p r1 (e e0)) (p r2 (e e1))) (p r3 (e e2)))")),
            None
        );
        assert_eq!(extract_pattern(&p("(e e0)")), None);
    }

    #[test]
    fn catalog_shapes_are_distinct_and_counted() {
        let keys: BTreeSet<String> = PatternId::ALL.iter().map(|p| p.shape().canonical_key()).collect();
        assert_eq!(keys.len(), 13);
        let expect = [
            ("1p", 1, 1),
            ("2p", 2, 1),
            ("2i", 2, 2),
            ("3i", 3, 3),
            ("pi", 3, 2),
            ("ip", 3, 2),
            ("2u", 2, 2),
            ("up", 3, 2),
            ("2in", 2, 2),
            ("3in", 3, 3),
            ("pin", 3, 2),
            ("inp", 3, 2),
            ("pni", 3, 2),
        ];
        for (name, rels, ents) in expect {
            let pid: PatternId = name.parse().unwrap();
            assert_eq!((pid.relation_count(), pid.entity_count()), (rels, ents), "{name}");
        }
    }

    #[test]
    fn counts_occurrences_not_distinct_entities() {
        let h = p("(i (p r1 (e e0)) (p r2 (e e0)))");
        assert_eq!(h.count_entities(), 2);
        assert_eq!(h.count_distinct_entities(), 1);
        assert_eq!(h.count_relations(), 2);
    }

    #[test]
    fn condition_checks() {
        let h1 = p("(p r1 (e e0))");
        assert!(check_condition(&h1, &Condition::Pattern(PatternId::P1)));
        assert!(check_condition(&p("(p r2 (p r1 (e e0)))"), &Condition::RelationCount(2)));
        assert!(!check_condition(&h1, &Condition::SpecificEntity(EntityId(1))));
        assert!(check_condition(&h1, &Condition::SpecificRelation(RelationId(1))));
        assert!(!check_condition(&h1, &Condition::RelationCount(2)));
    }

    #[test]
    fn condition_grammar() {
        assert_eq!(Condition::parse("pattern:2i", None).unwrap(), Condition::Pattern(PatternId::I2));
        assert_eq!(Condition::parse("ne:3", None).unwrap(), Condition::EntityCount(3));
        assert_eq!(Condition::parse("nr:2", None).unwrap(), Condition::RelationCount(2));
        assert_eq!(Condition::parse("entity:7", None).unwrap(), Condition::SpecificEntity(EntityId(7)));
        assert_eq!(Condition::parse("relation:r4", None).unwrap(), Condition::SpecificRelation(RelationId(4)));
        assert!(Condition::parse("nr:0", None).is_err());
        assert!(Condition::parse("pattern:9z", None).is_err());
        assert!(Condition::parse("colour:red", None).is_err());
        assert!(Condition::parse("2i", None).is_err());
        for c in ["pattern:pni", "ne:2", "nr:3", "entity:4", "relation:1"] {
            assert_eq!(Condition::parse(c, None).unwrap().to_string(), c);
        }
    }

    #[test]
    fn condition_names_resolve_against_graph() {
        let g = crate::graph::tests::toy_g1();
        assert_eq!(Condition::parse("entity:c", Some(&g)).unwrap(), Condition::SpecificEntity(EntityId(2)));
        // "r2" is a relation name in the toy graph and also the id form; both give id 2.
        assert_eq!(
            Condition::parse("relation:r2", Some(&g)).unwrap(),
            Condition::SpecificRelation(RelationId(2))
        );
        assert!(Condition::parse("entity:zz", Some(&g)).is_err());
        assert!(Condition::parse("entity:99", Some(&g)).is_err());
    }

    #[test]
    fn condition_json_is_externally_tagged() {
        let c = Condition::RelationCount(2);
        assert_eq!(serde_json::to_string(&c).unwrap(), r#"{"RelationCount":2}"#);
        let c: Condition = serde_json::from_str(r#"{"Pattern":"2in"}"#).unwrap();
        assert_eq!(c, Condition::Pattern(PatternId::In2));
    }

    #[test]
    fn json_ast_round_trip_and_validation() {
        let h = p("(i (p r1 (e e0)) (n (p r2 (e e1))))");
        let json = serde_json::to_value(&h).unwrap();
        assert_eq!(json["op"], "i");
        assert_eq!(json["children"][0]["rel"], 1);
        assert_eq!(json["children"][1]["child"]["child"]["entity"], 1);
        let back: Hypothesis = serde_json::from_value(json).unwrap();
        assert_eq!(back, h);
        let bad = r#"{"op":"n","child":{"op":"e","entity":0}}"#;
        assert!(serde_json::from_str::<Hypothesis>(bad).is_err());
    }

    #[test]
    fn tokens_round_trip() {
        let h = p("(p r3 (u (p r1 (e e0)) (p r2 (e e1))))");
        let toks = h.to_tokens();
        assert_eq!(toks.iter().filter(|t| **t == Token::Op(Operator::Proj)).count(), 3);
        assert_eq!(Hypothesis::from_tokens(&toks).unwrap(), h);
        let seq = input_sequence(&[EntityId(4), EntityId(9)], Some(&Condition::EntityCount(2)));
        let text: Vec<String> = seq.iter().map(Token::to_string).collect();
        assert_eq!(text, ["e4", "e9", "[sep]", "[ne:2]"]);
        for t in &seq {
            assert_eq!(t.to_string().parse::<Token>().unwrap(), *t);
        }
        let pat = Condition::Pattern(PatternId::I2).to_tokens();
        let text: String = pat.iter().map(Token::to_string).collect::<Vec<_>>().join(" ");
        assert_eq!(text, "( i ( p ( e ) ) ( p ( e ) ) )");
    }
}
