//! Knowledge base: concept/unit vocabulary, derivation rules, interpretability
//! rules, instance triples, and column mappings, parsed from a line-oriented
//! rule DSL.
//!
//! Statement forms (one per line, `#` starts a comment):
//!
//! ```text
//! concept Mass
//! unit kilogram dim mass
//! map weight -> concept:Mass unit:kilogram
//! map *_datetime -> concept:Date
//! derive Date => Day via extract_day, Month via extract_month
//! derive City => PopulationTotal via triple_lookup(population)
//! noninterp add when units_differ
//! noninterp group_by_sum when concept_is(Stock)
//! triple (Paris, population, 2148000)
//! interp_weight add 0.9
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tabular::Dataset;
use crate::transforms::{self, TransformClass};

/// Reserved concept assigned to columns no mapping pattern claims.
pub const UNKNOWN_CONCEPT: &str = "Unknown";

#[derive(Debug, Error)]
pub enum KgError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: syntax error: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("line {line}: unknown reference to {what}")]
    UnknownRef { line: usize, what: String },
    #[error("line {line}: duplicate declaration of {what}")]
    DuplicateDecl { line: usize, what: String },
    #[error("line {line}: interpretability score {value} outside [0, 1]")]
    ScoreRange { line: usize, value: f64 },
    #[error(
        "column {column:?} matched by patterns {pattern_a:?} and {pattern_b:?} \
         with different annotations"
    )]
    AmbiguousMapping {
        column: String,
        pattern_a: String,
        pattern_b: String,
    },
    #[error("column {column:?}: hint references unknown {what}")]
    UnknownHint { column: String, what: String },
}

// ---------------------------------------------------------------------------
// Unit algebra

/// Product of base units with integer exponents; empty means dimensionless.
/// `div(weight, square(height))` carries `kilogram·metre^-2`.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct UnitExpr(pub BTreeMap<String, i32>);

impl UnitExpr {
    pub fn base(unit: &str) -> Self {
        let mut m = BTreeMap::new();
        m.insert(unit.to_string(), 1);
        UnitExpr(m)
    }

    pub fn dimensionless() -> Self {
        UnitExpr::default()
    }

    pub fn is_dimensionless(&self) -> bool {
        self.0.is_empty()
    }

    fn normalized(mut self) -> Self {
        self.0.retain(|_, e| *e != 0);
        self
    }

    pub fn mul(&self, other: &UnitExpr) -> UnitExpr {
        let mut m = self.0.clone();
        for (u, e) in &other.0 {
            *m.entry(u.clone()).or_insert(0) += e;
        }
        UnitExpr(m).normalized()
    }

    pub fn div(&self, other: &UnitExpr) -> UnitExpr {
        let mut m = self.0.clone();
        for (u, e) in &other.0 {
            *m.entry(u.clone()).or_insert(0) -= e;
        }
        UnitExpr(m).normalized()
    }

    pub fn pow(&self, k: i32) -> UnitExpr {
        UnitExpr(self.0.iter().map(|(u, e)| (u.clone(), e * k)).collect()).normalized()
    }

    /// Halves every exponent; `None` when any exponent is odd.
    pub fn sqrt(&self) -> Option<UnitExpr> {
        let mut m = BTreeMap::new();
        for (u, e) in &self.0 {
            if e % 2 != 0 {
                return None;
            }
            m.insert(u.clone(), e / 2);
        }
        Some(UnitExpr(m).normalized())
    }
}

impl fmt::Display for UnitExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return f.write_str("1");
        }
        let parts: Vec<String> = self
            .0
            .iter()
            .map(|(u, e)| {
                if *e == 1 {
                    u.clone()
                } else {
                    format!("{u}^{e}")
                }
            })
            .collect();
        f.write_str(&parts.join("·"))
    }
}

// ---------------------------------------------------------------------------
// Knowledge base structures

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnitDef {
    pub name: String,
    /// Dimension group, e.g. `mass`, `length`, `time`.
    pub dim: String,
}

/// Reference to a catalog transform, optionally parameterized
/// (`triple_lookup(population)`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransformRef {
    pub name: String,
    pub param: Option<String>,
}

impl fmt::Display for TransformRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.param {
            Some(p) => write!(f, "{}({})", self.name, p),
            None => f.write_str(&self.name),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Product {
    pub concept: String,
    pub extractor: TransformRef,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DerivationRule {
    pub source: String,
    pub products: Vec<Product>,
}

impl DerivationRule {
    /// Canonical text, used as the rule id in inference traces.
    pub fn id(&self) -> String {
        let rhs: Vec<String> = self
            .products
            .iter()
            .map(|p| format!("{} via {}", p.concept, p.extractor))
            .collect();
        format!("derive {} => {}", self.source, rhs.join(", "))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum TransformPattern {
    Id(String),
    Class(TransformClass),
}

impl fmt::Display for TransformPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TransformPattern::Id(id) => f.write_str(id),
            TransformPattern::Class(c) => write!(f, "class:{c}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Pred {
    UnitsDiffer,
    UnitIs(String),
    ConceptIs(String),
}

impl fmt::Display for Pred {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Pred::UnitsDiffer => f.write_str("units_differ"),
            Pred::UnitIs(u) => write!(f, "unit_is({u})"),
            Pred::ConceptIs(c) => write!(f, "concept_is({c})"),
        }
    }
}

/// `noninterp <pattern> when <pred> and <pred> ...`; a match flags the
/// produced feature as non-interpretable.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InterpRule {
    pub pattern: TransformPattern,
    pub constraints: Vec<Pred>,
}

impl InterpRule {
    pub fn id(&self) -> String {
        let preds: Vec<String> = self.constraints.iter().map(|p| p.to_string()).collect();
        format!("noninterp {} when {}", self.pattern, preds.join(" and "))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Triple {
    pub subject: String,
    pub predicate: String,
    pub object: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMapping {
    pub pattern: String,
    pub concept: String,
    pub unit: Option<String>,
}

/// Concept/unit annotations a column carries after mapping; the inputs to
/// interpretability-rule predicates.
#[derive(Debug, Clone, Copy)]
pub struct OperandMeta<'a> {
    pub concept: Option<&'a str>,
    pub unit: Option<&'a UnitExpr>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct KnowledgeBase {
    pub concepts: Vec<String>,
    pub units: Vec<UnitDef>,
    pub derivation_rules: Vec<DerivationRule>,
    pub interp_rules: Vec<InterpRule>,
    pub triples: Vec<Triple>,
    pub column_mappings: Vec<ColumnMapping>,
    /// Explicit `interp_weight` overrides; catalog defaults fill the rest.
    pub transform_interp: BTreeMap<String, f64>,
}

impl KnowledgeBase {
    pub fn has_concept(&self, name: &str) -> bool {
        self.concepts.iter().any(|c| c == name)
    }

    pub fn unit(&self, name: &str) -> Option<&UnitDef> {
        self.units.iter().find(|u| u.name == name)
    }

    /// Dimension groups in declaration order, deduplicated.
    pub fn dimension_groups(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for u in &self.units {
            if !out.contains(&u.dim.as_str()) {
                out.push(&u.dim);
            }
        }
        out
    }

    /// Effective interpretability weight: explicit override or catalog default.
    pub fn interp_weight(&self, transform: &str) -> f64 {
        self.transform_interp.get(transform).copied().unwrap_or_else(|| {
            transforms::lookup(transform)
                .map(|t| t.default_interp)
                .unwrap_or(0.9)
        })
    }

    /// All triple objects with the given subject (case-insensitive, trimmed)
    /// and predicate, in file order.
    pub fn lookup_related(&self, entity: &str, predicate: &str) -> Vec<&str> {
        let entity = entity.trim();
        self.triples
            .iter()
            .filter(|t| t.subject.eq_ignore_ascii_case(entity) && t.predicate == predicate)
            .map(|t| t.object.as_str())
            .collect()
    }

    /// True when some interpretability rule matches this application.
    pub fn flags_noninterpretable(&self, transform: &str, operands: &[OperandMeta<'_>]) -> bool {
        self.interp_rules
            .iter()
            .any(|r| rule_matches(r, transform, operands))
    }

    /// Canonical DSL text; parsing it back reproduces this structure.
    pub fn print(&self) -> String {
        let mut out = String::new();
        for c in &self.concepts {
            out.push_str(&format!("concept {c}\n"));
        }
        for u in &self.units {
            out.push_str(&format!("unit {} dim {}\n", u.name, u.dim));
        }
        for m in &self.column_mappings {
            out.push_str(&format!("map {} -> concept:{}", m.pattern, m.concept));
            if let Some(u) = &m.unit {
                out.push_str(&format!(" unit:{u}"));
            }
            out.push('\n');
        }
        for r in &self.derivation_rules {
            out.push_str(&r.id());
            out.push('\n');
        }
        for r in &self.interp_rules {
            out.push_str(&r.id());
            out.push('\n');
        }
        for t in &self.triples {
            out.push_str(&format!("triple ({}, {}, {})\n", t.subject, t.predicate, t.object));
        }
        for (tid, w) in &self.transform_interp {
            out.push_str(&format!("interp_weight {tid} {w}\n"));
        }
        out
    }
}

fn rule_matches(rule: &InterpRule, transform: &str, operands: &[OperandMeta<'_>]) -> bool {
    let pattern_ok = match &rule.pattern {
        TransformPattern::Id(id) => id == transform,
        TransformPattern::Class(class) => {
            transforms::lookup(transform).map(|t| t.class) == Some(*class)
        }
    };
    if !pattern_ok {
        return false;
    }
    rule.constraints.iter().all(|p| pred_holds(p, operands))
}

fn pred_holds(pred: &Pred, operands: &[OperandMeta<'_>]) -> bool {
    match pred {
        // Two operands with *known*, unequal units; unknowns never differ.
        Pred::UnitsDiffer => {
            for i in 0..operands.len() {
                for j in (i + 1)..operands.len() {
                    if let (Some(a), Some(b)) = (operands[i].unit, operands[j].unit) {
                        if a != b {
                            return true;
                        }
                    }
                }
            }
            false
        }
        Pred::UnitIs(u) => {
            let want = UnitExpr::base(u);
            operands.iter().any(|o| o.unit == Some(&want))
        }
        Pred::ConceptIs(c) => operands.iter().any(|o| o.concept == Some(c.as_str())),
    }
}

// ---------------------------------------------------------------------------
// Parsing

pub fn parse_kg(path: impl AsRef<Path>) -> Result<KnowledgeBase, KgError> {
    let path = path.as_ref();
    let src = std::fs::read_to_string(path).map_err(|source| KgError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_kg_str(&src)
}

pub fn parse_kg_str(src: &str) -> Result<KnowledgeBase, KgError> {
    let mut kb = KnowledgeBase::default();
    for (idx, raw) in src.lines().enumerate() {
        let line = idx + 1;
        let stmt = raw.split('#').next().unwrap_or("").trim();
        let stmt = stmt.strip_suffix(';').unwrap_or(stmt).trim();
        if stmt.is_empty() {
            continue;
        }
        let (keyword, rest) = stmt.split_once(char::is_whitespace).unwrap_or((stmt, ""));
        let rest = rest.trim();
        match keyword {
            "concept" => parse_concept(&mut kb, rest, line)?,
            "unit" => parse_unit(&mut kb, rest, line)?,
            "map" => parse_map(&mut kb, rest, line)?,
            "derive" => parse_derive(&mut kb, rest, line)?,
            "noninterp" => parse_noninterp(&mut kb, rest, line)?,
            "triple" => parse_triple(&mut kb, rest, line)?,
            "interp_weight" => parse_interp_weight(&mut kb, rest, line)?,
            other => {
                return Err(KgError::Syntax {
                    line,
                    msg: format!("unknown statement {other:?}"),
                })
            }
        }
    }
    Ok(kb)
}

fn is_ident(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn ident(s: &str, line: usize, role: &str) -> Result<String, KgError> {
    let s = s.trim();
    if is_ident(s) {
        Ok(s.to_string())
    } else {
        Err(KgError::Syntax {
            line,
            msg: format!("expected {role} identifier, got {s:?}"),
        })
    }
}

fn parse_concept(kb: &mut KnowledgeBase, rest: &str, line: usize) -> Result<(), KgError> {
    let name = ident(rest, line, "concept")?;
    if kb.has_concept(&name) {
        return Err(KgError::DuplicateDecl {
            line,
            what: format!("concept {name}"),
        });
    }
    kb.concepts.push(name);
    Ok(())
}

fn parse_unit(kb: &mut KnowledgeBase, rest: &str, line: usize) -> Result<(), KgError> {
    let parts: Vec<&str> = rest.split_whitespace().collect();
    let [name, kw, dim] = parts.as_slice() else {
        return Err(KgError::Syntax {
            line,
            msg: "expected `unit <Id> dim <Group>`".into(),
        });
    };
    if *kw != "dim" {
        return Err(KgError::Syntax {
            line,
            msg: format!("expected `dim`, got {kw:?}"),
        });
    }
    let name = ident(name, line, "unit")?;
    let dim = ident(dim, line, "dimension group")?;
    if kb.unit(&name).is_some() {
        return Err(KgError::DuplicateDecl {
            line,
            what: format!("unit {name}"),
        });
    }
    kb.units.push(UnitDef { name, dim });
    Ok(())
}

fn parse_map(kb: &mut KnowledgeBase, rest: &str, line: usize) -> Result<(), KgError> {
    let Some((pattern, target)) = rest.split_once("->") else {
        return Err(KgError::Syntax {
            line,
            msg: "expected `map <pattern> -> concept:<Id> [unit:<Id>]`".into(),
        });
    };
    let pattern = pattern.trim().to_string();
    if pattern.is_empty() {
        return Err(KgError::Syntax {
            line,
            msg: "empty column pattern".into(),
        });
    }
    let mut concept = None;
    let mut unit = None;
    for tok in target.split_whitespace() {
        if let Some(c) = tok.strip_prefix("concept:") {
            concept = Some(ident(c, line, "concept")?);
        } else if let Some(u) = tok.strip_prefix("unit:") {
            unit = Some(ident(u, line, "unit")?);
        } else {
            return Err(KgError::Syntax {
                line,
                msg: format!("unexpected token {tok:?} in map target"),
            });
        }
    }
    let Some(concept) = concept else {
        return Err(KgError::Syntax {
            line,
            msg: "map target needs `concept:<Id>`".into(),
        });
    };
    if !kb.has_concept(&concept) {
        return Err(KgError::UnknownRef {
            line,
            what: format!("concept {concept}"),
        });
    }
    if let Some(u) = &unit {
        if kb.unit(u).is_none() {
            return Err(KgError::UnknownRef {
                line,
                what: format!("unit {u}"),
            });
        }
    }
    kb.column_mappings.push(ColumnMapping {
        pattern,
        concept,
        unit,
    });
    Ok(())
}

fn parse_transform_ref(s: &str, line: usize) -> Result<TransformRef, KgError> {
    let s = s.trim();
    let (name, param) = match s.split_once('(') {
        Some((name, rest)) => {
            let Some(param) = rest.strip_suffix(')') else {
                return Err(KgError::Syntax {
                    line,
                    msg: format!("unclosed parameter list in {s:?}"),
                });
            };
            (name.trim().to_string(), Some(param.trim().to_string()))
        }
        None => (s.to_string(), None),
    };
    let Some(spec) = transforms::lookup(&name) else {
        return Err(KgError::UnknownRef {
            line,
            what: format!("transform {name}"),
        });
    };
    if spec.takes_param && param.is_none() {
        return Err(KgError::Syntax {
            line,
            msg: format!("transform {name} requires a parameter, e.g. {name}(population)"),
        });
    }
    if !spec.takes_param && param.is_some() {
        return Err(KgError::Syntax {
            line,
            msg: format!("transform {name} takes no parameter"),
        });
    }
    Ok(TransformRef { name, param })
}

fn parse_derive(kb: &mut KnowledgeBase, rest: &str, line: usize) -> Result<(), KgError> {
    let Some((source, rhs)) = rest.split_once("=>") else {
        return Err(KgError::Syntax {
            line,
            msg: "expected `derive <Concept> => <Concept> via <transform>, ...`".into(),
        });
    };
    let source = ident(source, line, "concept")?;
    if !kb.has_concept(&source) {
        return Err(KgError::UnknownRef {
            line,
            what: format!("concept {source}"),
        });
    }
    let mut products = Vec::new();
    for part in rhs.split(',') {
        let Some((concept, extractor)) = part.trim().split_once(" via ") else {
            return Err(KgError::Syntax {
                line,
                msg: format!("expected `<Concept> via <transform>`, got {:?}", part.trim()),
            });
        };
        let concept = ident(concept, line, "concept")?;
        if !kb.has_concept(&concept) {
            return Err(KgError::UnknownRef {
                line,
                what: format!("concept {concept}"),
            });
        }
        let extractor = parse_transform_ref(extractor, line)?;
        let spec = transforms::lookup(&extractor.name).expect("checked above");
        if spec.arity() != 1 {
            return Err(KgError::Syntax {
                line,
                msg: format!(
                    "extractor {} takes {} operands; derivation rules need single-input extractors",
                    extractor.name,
                    spec.arity()
                ),
            });
        }
        products.push(Product { concept, extractor });
    }
    if products.is_empty() {
        return Err(KgError::Syntax {
            line,
            msg: "derivation rule needs at least one product".into(),
        });
    }
    kb.derivation_rules.push(DerivationRule { source, products });
    Ok(())
}

fn parse_pred(s: &str, kb: &KnowledgeBase, line: usize) -> Result<Pred, KgError> {
    let s = s.trim();
    if s == "units_differ" {
        return Ok(Pred::UnitsDiffer);
    }
    if let Some(rest) = s.strip_prefix("unit_is(") {
        let u = rest.strip_suffix(')').ok_or_else(|| KgError::Syntax {
            line,
            msg: format!("unclosed predicate {s:?}"),
        })?;
        let u = ident(u, line, "unit")?;
        if kb.unit(&u).is_none() {
            return Err(KgError::UnknownRef {
                line,
                what: format!("unit {u}"),
            });
        }
        return Ok(Pred::UnitIs(u));
    }
    if let Some(rest) = s.strip_prefix("concept_is(") {
        let c = rest.strip_suffix(')').ok_or_else(|| KgError::Syntax {
            line,
            msg: format!("unclosed predicate {s:?}"),
        })?;
        let c = ident(c, line, "concept")?;
        if !kb.has_concept(&c) {
            return Err(KgError::UnknownRef {
                line,
                what: format!("concept {c}"),
            });
        }
        return Ok(Pred::ConceptIs(c));
    }
    Err(KgError::Syntax {
        line,
        msg: format!("unknown predicate {s:?}"),
    })
}

fn parse_noninterp(kb: &mut KnowledgeBase, rest: &str, line: usize) -> Result<(), KgError> {
    let Some((pattern, preds)) = rest.split_once(" when ") else {
        return Err(KgError::Syntax {
            line,
            msg: "expected `noninterp <transform|class:...> when <pred> [and <pred>]`".into(),
        });
    };
    let pattern = pattern.trim();
    let pattern = if let Some(class) = pattern.strip_prefix("class:") {
        let class = match class {
            "arith" => TransformClass::Arith,
            "agg" => TransformClass::Agg,
            other => {
                return Err(KgError::Syntax {
                    line,
                    msg: format!("unknown transform class {other:?} (expected arith or agg)"),
                })
            }
        };
        TransformPattern::Class(class)
    } else {
        if transforms::lookup(pattern).is_none() {
            return Err(KgError::UnknownRef {
                line,
                what: format!("transform {pattern}"),
            });
        }
        TransformPattern::Id(pattern.to_string())
    };
    let mut constraints = Vec::new();
    for p in preds.split(" and ") {
        constraints.push(parse_pred(p, kb, line)?);
    }
    if constraints.is_empty() {
        return Err(KgError::Syntax {
            line,
            msg: "interpretability rule needs at least one predicate".into(),
        });
    }
    kb.interp_rules.push(InterpRule {
        pattern,
        constraints,
    });
    Ok(())
}

fn parse_triple(kb: &mut KnowledgeBase, rest: &str, line: usize) -> Result<(), KgError> {
    let rest = rest.trim();
    let inner = rest
        .strip_prefix('(')
        .and_then(|s| s.strip_suffix(')'))
        .ok_or_else(|| KgError::Syntax {
            line,
            msg: "expected `triple (<subject>, <predicate>, <object>)`".into(),
        })?;
    let parts: Vec<&str> = inner.split(',').map(str::trim).collect();
    let [subject, predicate, object] = parts.as_slice() else {
        return Err(KgError::Syntax {
            line,
            msg: format!("triple needs 3 fields, got {}", parts.len()),
        });
    };
    if subject.is_empty() || predicate.is_empty() || object.is_empty() {
        return Err(KgError::Syntax {
            line,
            msg: "empty field in triple".into(),
        });
    }
    kb.triples.push(Triple {
        subject: subject.to_string(),
        predicate: predicate.to_string(),
        object: object.to_string(),
    });
    Ok(())
}

fn parse_interp_weight(kb: &mut KnowledgeBase, rest: &str, line: usize) -> Result<(), KgError> {
    let parts: Vec<&str> = rest.split_whitespace().collect();
    let [tid, value] = parts.as_slice() else {
        return Err(KgError::Syntax {
            line,
            msg: "expected `interp_weight <transform> <score>`".into(),
        });
    };
    if transforms::lookup(tid).is_none() {
        return Err(KgError::UnknownRef {
            line,
            what: format!("transform {tid}"),
        });
    }
    let value: f64 = value.parse().map_err(|_| KgError::Syntax {
        line,
        msg: format!("bad score {value:?}"),
    })?;
    if !(0.0..=1.0).contains(&value) {
        return Err(KgError::ScoreRange { line, value });
    }
    kb.transform_interp.insert(tid.to_string(), value);
    Ok(())
}

// ---------------------------------------------------------------------------
// Column mapping

/// Case-insensitive glob match supporting `*` and `?`.
fn glob_match(pattern: &str, text: &str) -> bool {
    let p: Vec<char> = pattern.to_ascii_lowercase().chars().collect();
    let t: Vec<char> = text.to_ascii_lowercase().chars().collect();
    // Two-pointer wildcard matching with backtracking on the last `*`.
    let (mut pi, mut ti) = (0usize, 0usize);
    let (mut star, mut star_t) = (None::<usize>, 0usize);
    while ti < t.len() {
        if pi < p.len() && (p[pi] == '?' || p[pi] == t[ti]) {
            pi += 1;
            ti += 1;
        } else if pi < p.len() && p[pi] == '*' {
            star = Some(pi);
            star_t = ti;
            pi += 1;
        } else if let Some(s) = star {
            pi = s + 1;
            star_t += 1;
            ti = star_t;
        } else {
            return false;
        }
    }
    while pi < p.len() && p[pi] == '*' {
        pi += 1;
    }
    pi == p.len()
}

fn has_wildcards(pattern: &str) -> bool {
    pattern.contains('*') || pattern.contains('?')
}

/// Annotates every column with a concept and (optionally) a unit. Schema
/// hints win outright; otherwise case-insensitive exact patterns, then glob
/// patterns. Columns nothing claims get the reserved `Unknown` concept.
pub fn map_columns(kb: &KnowledgeBase, d: &Dataset) -> Result<Dataset, KgError> {
    let mut out = d.clone();
    for col in &mut out.columns {
        if let Some(c) = &col.concept_hint {
            if !kb.has_concept(c) {
                return Err(KgError::UnknownHint {
                    column: col.name.clone(),
                    what: format!("concept {c}"),
                });
            }
            col.concept = Some(c.clone());
            col.unit = match &col.unit_hint {
                Some(u) => {
                    if kb.unit(u).is_none() {
                        return Err(KgError::UnknownHint {
                            column: col.name.clone(),
                            what: format!("unit {u}"),
                        });
                    }
                    Some(UnitExpr::base(u))
                }
                None => None,
            };
            continue;
        }
        if let Some(u) = &col.unit_hint {
            if kb.unit(u).is_none() {
                return Err(KgError::UnknownHint {
                    column: col.name.clone(),
                    what: format!("unit {u}"),
                });
            }
        }

        let exact: Vec<&ColumnMapping> = kb
            .column_mappings
            .iter()
            .filter(|m| !has_wildcards(&m.pattern) && m.pattern.eq_ignore_ascii_case(&col.name))
            .collect();
        let stage = if !exact.is_empty() {
            exact
        } else {
            kb.column_mappings
                .iter()
                .filter(|m| has_wildcards(&m.pattern) && glob_match(&m.pattern, &col.name))
                .collect()
        };

        let mut chosen: Option<&ColumnMapping> = None;
        for m in stage {
            match chosen {
                None => chosen = Some(m),
                Some(prev) if prev.concept == m.concept && prev.unit == m.unit => {}
                Some(prev) => {
                    return Err(KgError::AmbiguousMapping {
                        column: col.name.clone(),
                        pattern_a: prev.pattern.clone(),
                        pattern_b: m.pattern.clone(),
                    })
                }
            }
        }

        match chosen {
            Some(m) => {
                col.concept = Some(m.concept.clone());
                col.unit = match (&m.unit, &col.unit_hint) {
                    (_, Some(h)) => Some(UnitExpr::base(h)),
                    (Some(u), None) => Some(UnitExpr::base(u)),
                    (None, None) => None,
                };
            }
            None => {
                col.concept = Some(UNKNOWN_CONCEPT.to_string());
                col.unit = col.unit_hint.as_deref().map(UnitExpr::base);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tabular::{Column, Task};

    const DEMO: &str = "
# vocabulary
concept Date
concept Day
concept Month
concept Year
concept Mass
concept Height
concept City
concept PopulationTotal
concept Stock
unit kilogram dim mass
unit metre dim length
unit hour dim time
map weight -> concept:Mass unit:kilogram
map height -> concept:Height unit:metre
map *_datetime -> concept:Date
map city -> concept:City
derive Date => Day via extract_day, Month via extract_month, Year via extract_year
derive City => PopulationTotal via triple_lookup(population)
noninterp add when units_differ
noninterp group_by_sum when concept_is(Stock)
triple (Paris, population, 2148000)
triple (Lyon, population, 513275)
interp_weight log 0.8
";

    #[test]
    fn parses_demo_vocabulary() {
        let kb = parse_kg_str(DEMO).unwrap();
        assert_eq!(kb.concepts.len(), 9);
        assert_eq!(kb.units.len(), 3);
        assert_eq!(kb.dimension_groups(), vec!["mass", "length", "time"]);
        assert_eq!(kb.derivation_rules.len(), 2);
        assert_eq!(kb.derivation_rules[0].products.len(), 3);
        assert_eq!(
            kb.derivation_rules[1].products[0].extractor.param.as_deref(),
            Some("population")
        );
        assert_eq!(kb.interp_rules.len(), 2);
        assert_eq!(kb.triples.len(), 2);
        assert_eq!(kb.transform_interp.get("log"), Some(&0.8));
    }

    #[test]
    fn empty_file_is_valid() {
        let kb = parse_kg_str("").unwrap();
        assert_eq!(kb, KnowledgeBase::default());
        let kb = parse_kg_str("# only comments\n\n").unwrap();
        assert_eq!(kb, KnowledgeBase::default());
    }

    #[test]
    fn errors_carry_line_numbers() {
        let err = parse_kg_str("concept A\nfrobnicate B\n").unwrap_err();
        assert!(matches!(err, KgError::Syntax { line: 2, .. }), "{err}");

        let err = parse_kg_str("concept A\nconcept A\n").unwrap_err();
        assert!(matches!(err, KgError::DuplicateDecl { line: 2, .. }));

        let err = parse_kg_str("map x -> concept:Nope\n").unwrap_err();
        assert!(matches!(err, KgError::UnknownRef { line: 1, .. }));

        let err = parse_kg_str("interp_weight add 1.5\n").unwrap_err();
        assert!(matches!(err, KgError::ScoreRange { line: 1, value } if value == 1.5));

        let err = parse_kg_str("concept D\nderive D => D via no_such_transform\n").unwrap_err();
        assert!(matches!(err, KgError::UnknownRef { line: 2, .. }));
    }

    #[test]
    fn derive_rejects_multi_operand_extractors() {
        let err = parse_kg_str("concept A\nderive A => A via add\n").unwrap_err();
        assert!(matches!(err, KgError::Syntax { line: 2, .. }), "{err}");
    }

    #[test]
    fn triple_lookup_requires_parameter() {
        let err = parse_kg_str("concept A\nderive A => A via triple_lookup\n").unwrap_err();
        assert!(matches!(err, KgError::Syntax { .. }));
    }

    #[test]
    fn print_parse_round_trip() {
        let kb = parse_kg_str(DEMO).unwrap();
        let printed = kb.print();
        let reparsed = parse_kg_str(&printed).unwrap();
        assert_eq!(kb, reparsed);
    }

    fn mapping_dataset() -> Dataset {
        let cols = vec![
            Column::numeric("Weight", vec![Some(70.0)]),
            Column::numeric("pickup_datetime", vec![Some(1.0)]),
            Column::numeric("z42", vec![Some(0.0)]),
            Column::numeric("y", vec![Some(1.0)]),
        ];
        Dataset::new(cols, "y", Task::Regression).unwrap()
    }

    #[test]
    fn map_columns_exact_glob_unknown() {
        let kb = parse_kg_str(DEMO).unwrap();
        let d = map_columns(&kb, &mapping_dataset()).unwrap();
        let w = d.column("Weight").unwrap();
        assert_eq!(w.concept.as_deref(), Some("Mass"));
        assert_eq!(w.unit, Some(UnitExpr::base("kilogram")));
        assert_eq!(
            d.column("pickup_datetime").unwrap().concept.as_deref(),
            Some("Date")
        );
        assert_eq!(d.column("z42").unwrap().concept.as_deref(), Some("Unknown"));
    }

    #[test]
    fn map_columns_idempotent() {
        let kb = parse_kg_str(DEMO).unwrap();
        let once = map_columns(&kb, &mapping_dataset()).unwrap();
        let twice = map_columns(&kb, &once).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn map_columns_ambiguity_is_an_error() {
        let src = "
concept Mass
concept Height
map w* -> concept:Mass
map *eight -> concept:Height
";
        let kb = parse_kg_str(src).unwrap();
        let err = map_columns(&kb, &mapping_dataset()).unwrap_err();
        match err {
            KgError::AmbiguousMapping {
                column,
                pattern_a,
                pattern_b,
            } => {
                assert_eq!(column, "Weight");
                assert_eq!(pattern_a, "w*");
                assert_eq!(pattern_b, "*eight");
            }
            other => panic!("expected ambiguity error, got {other}"),
        }
    }

    #[test]
    fn exact_match_beats_glob() {
        let src = "
concept Mass
concept Height
map weight -> concept:Mass
map w* -> concept:Height
";
        let kb = parse_kg_str(src).unwrap();
        let d = map_columns(&kb, &mapping_dataset()).unwrap();
        assert_eq!(d.column("Weight").unwrap().concept.as_deref(), Some("Mass"));
    }

    #[test]
    fn hints_beat_patterns() {
        let kb = parse_kg_str(DEMO).unwrap();
        let mut d = mapping_dataset();
        d.column_mut("Weight").unwrap().concept_hint = Some("Height".into());
        d.column_mut("Weight").unwrap().unit_hint = Some("metre".into());
        let mapped = map_columns(&kb, &d).unwrap();
        let w = mapped.column("Weight").unwrap();
        assert_eq!(w.concept.as_deref(), Some("Height"));
        assert_eq!(w.unit, Some(UnitExpr::base("metre")));

        d.column_mut("Weight").unwrap().concept_hint = Some("NoSuch".into());
        assert!(matches!(
            map_columns(&kb, &d),
            Err(KgError::UnknownHint { .. })
        ));
    }

    #[test]
    fn lookup_related_file_order() {
        let kb = parse_kg_str(
            "triple (Paris, population, 2148000)\ntriple (paris, population, 99)\ntriple (Paris, country, France)\n",
        )
        .unwrap();
        assert_eq!(
            kb.lookup_related(" Paris ", "population"),
            vec!["2148000", "99"]
        );
        assert_eq!(kb.lookup_related("Paris", "country"), vec!["France"]);
        assert!(kb.lookup_related("Atlantis", "population").is_empty());
    }

    #[test]
    fn noninterp_matching() {
        let kb = parse_kg_str(
            "concept Stock\nunit euro dim currency\nunit dollar dim currency\n\
             noninterp add when units_differ\nnoninterp group_by_sum when concept_is(Stock)\n",
        )
        .unwrap();
        let euro = UnitExpr::base("euro");
        let dollar = UnitExpr::base("dollar");
        let mixed = [
            OperandMeta { concept: None, unit: Some(&euro) },
            OperandMeta { concept: None, unit: Some(&dollar) },
        ];
        let same = [
            OperandMeta { concept: None, unit: Some(&euro) },
            OperandMeta { concept: None, unit: Some(&euro) },
        ];
        let unknown = [
            OperandMeta { concept: None, unit: Some(&euro) },
            OperandMeta { concept: None, unit: None },
        ];
        assert!(kb.flags_noninterpretable("add", &mixed));
        assert!(!kb.flags_noninterpretable("add", &same));
        assert!(!kb.flags_noninterpretable("add", &unknown));
        assert!(!kb.flags_noninterpretable("mul", &mixed));

        let stock = [OperandMeta { concept: Some("Stock"), unit: None }];
        let other = [OperandMeta { concept: Some("Price"), unit: None }];
        assert!(kb.flags_noninterpretable("group_by_sum", &stock));
        assert!(!kb.flags_noninterpretable("group_by_sum", &other));
        assert!(!kb.flags_noninterpretable("group_by_mean", &stock));
    }

    #[test]
    fn class_pattern_matches_whole_class() {
        let kb = parse_kg_str(
            "unit euro dim currency\nunit dollar dim currency\nnoninterp class:arith when units_differ\n",
        )
        .unwrap();
        let euro = UnitExpr::base("euro");
        let dollar = UnitExpr::base("dollar");
        let mixed = [
            OperandMeta { concept: None, unit: Some(&euro) },
            OperandMeta { concept: None, unit: Some(&dollar) },
        ];
        for t in ["add", "sub", "mul", "div"] {
            assert!(kb.flags_noninterpretable(t, &mixed), "{t}");
        }
        assert!(!kb.flags_noninterpretable("group_by_sum", &mixed));
    }

    #[test]
    fn unit_algebra() {
        let kg = UnitExpr::base("kilogram");
        let m = UnitExpr::base("metre");
        let m2 = m.pow(2);
        let bmi = kg.div(&m2);
        assert_eq!(bmi.to_string(), "kilogram·metre^-2");
        assert_eq!(bmi.mul(&m2), kg);
        assert_eq!(m2.sqrt(), Some(m.clone()));
        assert_eq!(m.sqrt(), None);
        assert!(m.div(&m).is_dimensionless());
        assert_eq!(UnitExpr::dimensionless().to_string(), "1");
    }

    #[test]
    fn glob_matcher() {
        assert!(glob_match("*_datetime", "pickup_datetime"));
        assert!(glob_match("*_datetime", "DROPOFF_DATETIME"));
        assert!(!glob_match("*_datetime", "datetime"));
        assert!(glob_match("h?ight", "height"));
        assert!(glob_match("*", "anything"));
        assert!(!glob_match("a*b", "acb_c"));
        assert!(glob_match("a*b*", "acb_c"));
    }
}
