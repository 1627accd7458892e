//! The transformation catalog: typed, unit-aware feature constructors.
//!
//! Every transform is total over the operand tuples that
//! [`applicable_operands`] returns: cell-level domain violations (log of a
//! non-positive value, division by zero, absent inputs, non-finite results)
//! produce absent cells, never errors. Catalog iteration order is fixed and
//! defines the agent's action indexing.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kg::{KnowledgeBase, OperandMeta, UnitExpr};
use crate::tabular::{Column, ColumnData, Dataset, Dtype};

/// Mean Earth radius in kilometres (haversine).
pub const EARTH_RADIUS_KM: f64 = 6371.0088;
/// Most-frequent categories kept by one-hot encoding; the rest share an
/// `other` bucket.
pub const ONE_HOT_CAP: usize = 20;
/// Rush hour: clock hour in [7,10) or [16,19).
pub const RUSH_HOURS: [(u32, u32); 2] = [(7, 10), (16, 19)];

#[derive(Debug, Error)]
pub enum TransformError {
    #[error("unknown transform {0:?}")]
    Unknown(String),
    #[error("{transform} takes {want} operands, got {got}")]
    Arity {
        transform: &'static str,
        want: usize,
        got: usize,
    },
    #[error("{transform}: operand {column:?} has dtype {got}, expected {want}")]
    Dtype {
        transform: &'static str,
        column: String,
        got: Dtype,
        want: &'static str,
    },
    #[error("{0} requires a parameter")]
    MissingParam(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformClass {
    UnaryMath,
    Encoding,
    Arith,
    Logical,
    Agg,
    Date,
    Geo,
    Lookup,
}

impl std::fmt::Display for TransformClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            TransformClass::UnaryMath => "unary_math",
            TransformClass::Encoding => "encoding",
            TransformClass::Arith => "arith",
            TransformClass::Logical => "logical",
            TransformClass::Agg => "agg",
            TransformClass::Date => "date",
            TransformClass::Geo => "geo",
            TransformClass::Lookup => "lookup",
        };
        f.write_str(s)
    }
}

/// Operand dtype requirement for one position of a transform.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    Numeric,
    Categorical,
    Datetime,
    Boolean,
    GeoLat,
    GeoLon,
}

impl Slot {
    pub fn name(self) -> &'static str {
        match self {
            Slot::Numeric => "numeric",
            Slot::Categorical => "categorical",
            Slot::Datetime => "datetime",
            Slot::Boolean => "boolean",
            Slot::GeoLat => "geo_lat",
            Slot::GeoLon => "geo_lon",
        }
    }

    fn accepts(self, dtype: Dtype) -> bool {
        match self {
            Slot::Numeric => dtype == Dtype::Numeric,
            Slot::Categorical => dtype == Dtype::Categorical,
            Slot::Datetime => dtype == Dtype::Datetime,
            Slot::Boolean => dtype == Dtype::Boolean,
            Slot::GeoLat => dtype == Dtype::GeoLat,
            Slot::GeoLon => dtype == Dtype::GeoLon,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TransformSpec {
    pub id: &'static str,
    pub class: TransformClass,
    pub slots: &'static [Slot],
    /// `triple_lookup(predicate)`-style parameter.
    pub takes_param: bool,
    /// Part of the agent's action set (everything except `triple_lookup`).
    pub agent_action: bool,
    /// Inter(t) fallback when the knowledge base has no `interp_weight`.
    pub default_interp: f64,
    pub unit_law: &'static str,
}

impl TransformSpec {
    pub fn arity(&self) -> usize {
        self.slots.len()
    }
}

pub const CATALOG: &[TransformSpec] = &[
    TransformSpec { id: "log", class: TransformClass::UnaryMath, slots: &[Slot::Numeric], takes_param: false, agent_action: true, default_interp: 0.90, unit_law: "drops units" },
    TransformSpec { id: "sqrt", class: TransformClass::UnaryMath, slots: &[Slot::Numeric], takes_param: false, agent_action: true, default_interp: 0.90, unit_law: "halves exponents; odd exponents drop units" },
    TransformSpec { id: "square", class: TransformClass::UnaryMath, slots: &[Slot::Numeric], takes_param: false, agent_action: true, default_interp: 0.90, unit_law: "doubles exponents" },
    TransformSpec { id: "reciprocal", class: TransformClass::UnaryMath, slots: &[Slot::Numeric], takes_param: false, agent_action: true, default_interp: 0.90, unit_law: "negates exponents" },
    TransformSpec { id: "one_hot", class: TransformClass::Encoding, slots: &[Slot::Categorical], takes_param: false, agent_action: true, default_interp: 0.95, unit_law: "dimensionless indicators" },
    TransformSpec { id: "add", class: TransformClass::Arith, slots: &[Slot::Numeric, Slot::Numeric], takes_param: false, agent_action: true, default_interp: 0.95, unit_law: "requires identical units" },
    TransformSpec { id: "sub", class: TransformClass::Arith, slots: &[Slot::Numeric, Slot::Numeric], takes_param: false, agent_action: true, default_interp: 0.95, unit_law: "requires identical units" },
    TransformSpec { id: "mul", class: TransformClass::Arith, slots: &[Slot::Numeric, Slot::Numeric], takes_param: false, agent_action: true, default_interp: 0.95, unit_law: "multiplies units" },
    TransformSpec { id: "div", class: TransformClass::Arith, slots: &[Slot::Numeric, Slot::Numeric], takes_param: false, agent_action: true, default_interp: 0.95, unit_law: "divides units" },
    TransformSpec { id: "and", class: TransformClass::Logical, slots: &[Slot::Boolean, Slot::Boolean], takes_param: false, agent_action: true, default_interp: 0.90, unit_law: "unitless" },
    TransformSpec { id: "or", class: TransformClass::Logical, slots: &[Slot::Boolean, Slot::Boolean], takes_param: false, agent_action: true, default_interp: 0.90, unit_law: "unitless" },
    TransformSpec { id: "group_by_mean", class: TransformClass::Agg, slots: &[Slot::Categorical, Slot::Numeric], takes_param: false, agent_action: true, default_interp: 0.85, unit_law: "keeps value unit" },
    TransformSpec { id: "group_by_sum", class: TransformClass::Agg, slots: &[Slot::Categorical, Slot::Numeric], takes_param: false, agent_action: true, default_interp: 0.85, unit_law: "keeps value unit" },
    TransformSpec { id: "group_by_min", class: TransformClass::Agg, slots: &[Slot::Categorical, Slot::Numeric], takes_param: false, agent_action: true, default_interp: 0.85, unit_law: "keeps value unit" },
    TransformSpec { id: "group_by_max", class: TransformClass::Agg, slots: &[Slot::Categorical, Slot::Numeric], takes_param: false, agent_action: true, default_interp: 0.85, unit_law: "keeps value unit" },
    TransformSpec { id: "group_by_count", class: TransformClass::Agg, slots: &[Slot::Categorical], takes_param: false, agent_action: true, default_interp: 0.85, unit_law: "dimensionless count" },
    TransformSpec { id: "extract_day", class: TransformClass::Date, slots: &[Slot::Datetime], takes_param: false, agent_action: true, default_interp: 0.95, unit_law: "unitless" },
    TransformSpec { id: "extract_month", class: TransformClass::Date, slots: &[Slot::Datetime], takes_param: false, agent_action: true, default_interp: 0.95, unit_law: "unitless" },
    TransformSpec { id: "extract_year", class: TransformClass::Date, slots: &[Slot::Datetime], takes_param: false, agent_action: true, default_interp: 0.95, unit_law: "unitless" },
    TransformSpec { id: "is_weekend", class: TransformClass::Date, slots: &[Slot::Datetime], takes_param: false, agent_action: true, default_interp: 0.95, unit_law: "unitless" },
    TransformSpec { id: "is_rush_hour", class: TransformClass::Date, slots: &[Slot::Datetime], takes_param: false, agent_action: true, default_interp: 0.95, unit_law: "unitless" },
    TransformSpec { id: "time_diff_hours", class: TransformClass::Date, slots: &[Slot::Datetime, Slot::Datetime], takes_param: false, agent_action: true, default_interp: 0.95, unit_law: "hours" },
    TransformSpec { id: "haversine_km", class: TransformClass::Geo, slots: &[Slot::GeoLat, Slot::GeoLon, Slot::GeoLat, Slot::GeoLon], takes_param: false, agent_action: true, default_interp: 0.95, unit_law: "kilometres" },
    TransformSpec { id: "triple_lookup", class: TransformClass::Lookup, slots: &[Slot::Categorical], takes_param: true, agent_action: false, default_interp: 1.0, unit_law: "unknown" },
];

pub fn catalog() -> &'static [TransformSpec] {
    CATALOG
}

pub fn lookup(id: &str) -> Option<&'static TransformSpec> {
    CATALOG.iter().find(|t| t.id == id)
}

/// Catalog minus `triple_lookup`, in catalog order; index = agent action id.
pub fn agent_actions() -> Vec<&'static TransformSpec> {
    CATALOG.iter().filter(|t| t.agent_action).collect()
}

pub fn classes() -> BTreeMap<String, Vec<&'static str>> {
    let mut m: BTreeMap<String, Vec<&'static str>> = BTreeMap::new();
    for t in CATALOG {
        m.entry(t.class.to_string()).or_default().push(t.id);
    }
    m
}

// ---------------------------------------------------------------------------
// Feature names

/// `div(weight,square(height))`; tagged forms: `one_hot(city=Paris)`,
/// `triple_lookup(city=population)`.
pub fn feature_name(transform: &str, operands: &[&str], tag: Option<&str>) -> String {
    match tag {
        Some(tag) => format!("{transform}({}={tag})", operands.join(",")),
        None => format!("{transform}({})", operands.join(",")),
    }
}

/// Inverse of [`feature_name`]: transform id plus operand names (tags
/// stripped). `None` for raw column names.
pub fn parse_feature_name(name: &str) -> Option<(String, Vec<String>)> {
    let open = name.find('(')?;
    let tid = &name[..open];
    lookup(tid)?;
    let inner = name[open + 1..].strip_suffix(')')?;
    let mut operands = Vec::new();
    let mut depth = 0usize;
    let mut start = 0usize;
    let mut cut: Option<usize> = None;
    for (i, c) in inner.char_indices() {
        match c {
            '(' => depth += 1,
            ')' => depth = depth.checked_sub(1)?,
            '=' if depth == 0 && cut.is_none() => cut = Some(i),
            ',' if depth == 0 => {
                let end = cut.unwrap_or(i);
                operands.push(inner[start..end].to_string());
                start = i + 1;
                cut = None;
            }
            _ => {}
        }
    }
    if depth != 0 {
        return None;
    }
    let end = cut.unwrap_or(inner.len());
    operands.push(inner[start..end].to_string());
    if operands.iter().any(|o| o.is_empty()) {
        return None;
    }
    Some((tid.to_string(), operands))
}

// ---------------------------------------------------------------------------
// Unit law

/// Derived unit of the output; `None` means unknown.
pub fn output_unit(spec: &TransformSpec, operands: &[&Column]) -> Option<UnitExpr> {
    let unit = |i: usize| operands.get(i).and_then(|c| c.unit.clone());
    match spec.id {
        "square" => unit(0).map(|u| u.pow(2)),
        "sqrt" => unit(0).and_then(|u| u.sqrt()),
        "reciprocal" => unit(0).map(|u| u.pow(-1)),
        "log" => None,
        "one_hot" => Some(UnitExpr::dimensionless()),
        "add" | "sub" => match (unit(0), unit(1)) {
            (Some(a), Some(b)) if a == b => Some(a),
            _ => None,
        },
        "mul" => match (unit(0), unit(1)) {
            (Some(a), Some(b)) => Some(a.mul(&b)),
            _ => None,
        },
        "div" => match (unit(0), unit(1)) {
            (Some(a), Some(b)) => Some(a.div(&b)),
            _ => None,
        },
        "group_by_mean" | "group_by_sum" | "group_by_min" | "group_by_max" => unit(1),
        "group_by_count" => Some(UnitExpr::dimensionless()),
        "time_diff_hours" => Some(UnitExpr::base("hour")),
        "haversine_km" => Some(UnitExpr::base("kilometre")),
        _ => None,
    }
}

// ---------------------------------------------------------------------------
// Applicability

/// True when `col` can fill operand position `pos` of `spec`; `one_hot`
/// additionally needs at least one non-absent category.
pub fn accepts_operand(spec: &TransformSpec, pos: usize, col: &Column) -> bool {
    let ok = spec.slots.get(pos).is_some_and(|s| s.accepts(col.dtype));
    if ok && spec.id == "one_hot" {
        return !one_hot_categories(col).is_empty();
    }
    ok
}

/// One valid ordered operand tuple, with its interpretability-rule verdict.
/// Flagged tuples stay in the list; the search environment decides their fate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OperandTuple {
    pub operands: Vec<String>,
    pub flagged: bool,
}

/// Enumerates all ordered operand tuples valid for `t` over the feature
/// columns of `d` (the target never participates), in column order.
/// Positions with identical dtype requirements take pairwise-distinct columns
/// (no self-pairs).
pub fn applicable_operands(
    spec: &TransformSpec,
    d: &Dataset,
    kb: &KnowledgeBase,
) -> Vec<OperandTuple> {
    let features: Vec<&Column> = d.features().collect();
    let per_slot: Vec<Vec<usize>> = spec
        .slots
        .iter()
        .map(|s| {
            features
                .iter()
                .enumerate()
                .filter(|(_, c)| s.accepts(c.dtype))
                .map(|(i, _)| i)
                .collect()
        })
        .collect();

    let mut out = Vec::new();
    let mut pick = vec![0usize; spec.slots.len()];
    enumerate(spec, &per_slot, &features, 0, &mut pick, &mut out, kb);
    out
}

fn enumerate(
    spec: &TransformSpec,
    per_slot: &[Vec<usize>],
    features: &[&Column],
    pos: usize,
    pick: &mut Vec<usize>,
    out: &mut Vec<OperandTuple>,
    kb: &KnowledgeBase,
) {
    if pos == per_slot.len() {
        let cols: Vec<&Column> = pick.iter().map(|&i| features[i]).collect();
        if spec.id == "one_hot" && one_hot_categories(cols[0]).is_empty() {
            return;
        }
        let metas: Vec<OperandMeta<'_>> = cols
            .iter()
            .map(|c| OperandMeta {
                concept: c.concept.as_deref(),
                unit: c.unit.as_ref(),
            })
            .collect();
        let flagged = kb.flags_noninterpretable(spec.id, &metas);
        out.push(OperandTuple {
            operands: cols.iter().map(|c| c.name.clone()).collect(),
            flagged,
        });
        return;
    }
    for &idx in &per_slot[pos] {
        // No self-pairs among same-dtype positions: x+x is covered by square.
        let clash = (0..pos).any(|p| pick[p] == idx && spec.slots[p] == spec.slots[pos]);
        if clash {
            continue;
        }
        pick[pos] = idx;
        enumerate(spec, per_slot, features, pos + 1, pick, out, kb);
    }
}

// ---------------------------------------------------------------------------
// Application

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

fn numeric<'a>(
    spec: &TransformSpec,
    col: &'a Column,
) -> Result<&'a [Option<f64>], TransformError> {
    col.as_numeric().ok_or(TransformError::Dtype {
        transform: spec.id,
        column: col.name.clone(),
        got: col.dtype,
        want: "numeric",
    })
}

fn unary_math(
    spec: &TransformSpec,
    col: &Column,
    f: impl Fn(f64) -> Option<f64>,
) -> Result<Vec<Option<f64>>, TransformError> {
    Ok(numeric(spec, col)?
        .iter()
        .map(|v| v.and_then(&f))
        .collect())
}

fn binary_math(
    spec: &TransformSpec,
    a: &Column,
    b: &Column,
    f: impl Fn(f64, f64) -> Option<f64>,
) -> Result<Vec<Option<f64>>, TransformError> {
    let (a, b) = (numeric(spec, a)?, numeric(spec, b)?);
    Ok(a.iter()
        .zip(b)
        .map(|(x, y)| match (x, y) {
            (Some(x), Some(y)) => f(*x, *y),
            _ => None,
        })
        .collect())
}

fn one_hot_categories(col: &Column) -> Vec<String> {
    let Some(values) = col.as_categorical() else {
        return Vec::new();
    };
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for v in values.iter().flatten() {
        *counts.entry(v.as_str()).or_insert(0) += 1;
    }
    let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    ranked
        .into_iter()
        .take(ONE_HOT_CAP)
        .map(|(c, _)| c.to_string())
        .collect()
}

fn haversine(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    let (phi1, phi2) = (lat1.to_radians(), lat2.to_radians());
    let dphi = (lat2 - lat1).to_radians();
    let dlambda = (lon2 - lon1).to_radians();
    let a = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * a.sqrt().min(1.0).asin()
}

pub fn is_rush_hour(hour: u32) -> bool {
    RUSH_HOURS.iter().any(|&(lo, hi)| hour >= lo && hour < hi)
}

/// Applies a transform to operand columns, returning the produced columns
/// (singleton for everything except `one_hot`). Outputs carry derived units
/// and no concept; the reasoner assigns concepts to rule products.
pub fn apply(
    spec: &TransformSpec,
    param: Option<&str>,
    operands: &[&Column],
    kb: &KnowledgeBase,
) -> Result<Vec<Column>, TransformError> {
    if operands.len() != spec.arity() {
        return Err(TransformError::Arity {
            transform: spec.id,
            want: spec.arity(),
            got: operands.len(),
        });
    }
    for (slot, col) in spec.slots.iter().zip(operands) {
        if !slot.accepts(col.dtype) {
            return Err(TransformError::Dtype {
                transform: spec.id,
                column: col.name.clone(),
                got: col.dtype,
                want: slot.name(),
            });
        }
    }
    if spec.takes_param && param.is_none() {
        return Err(TransformError::MissingParam(spec.id));
    }

    let names: Vec<&str> = operands.iter().map(|c| c.name.as_str()).collect();
    let unit = output_unit(spec, operands);
    let named = |tag: Option<&str>| feature_name(spec.id, &names, tag);
    let numeric_col = |values: Vec<Option<f64>>, tag: Option<&str>| {
        let mut c = Column::numeric(named(tag), values);
        c.unit = unit.clone();
        c
    };
    let bool_col = |values: Vec<Option<bool>>| {
        Column::new(named(None), Dtype::Boolean, ColumnData::Boolean(values))
    };

    let cols = match spec.id {
        "log" => vec![numeric_col(
            unary_math(spec, operands[0], |x| (x > 0.0).then(|| x.ln()).and_then(finite))?,
            None,
        )],
        "sqrt" => vec![numeric_col(
            unary_math(spec, operands[0], |x| (x >= 0.0).then(|| x.sqrt()).and_then(finite))?,
            None,
        )],
        "square" => vec![numeric_col(
            unary_math(spec, operands[0], |x| finite(x * x))?,
            None,
        )],
        "reciprocal" => vec![numeric_col(
            unary_math(spec, operands[0], |x| (x != 0.0).then(|| 1.0 / x).and_then(finite))?,
            None,
        )],
        "one_hot" => {
            let values = operands[0].as_categorical().ok_or(TransformError::Dtype {
                transform: spec.id,
                column: operands[0].name.clone(),
                got: operands[0].dtype,
                want: "categorical",
            })?;
            let cats = one_hot_categories(operands[0]);
            let distinct: std::collections::BTreeSet<&str> =
                values.iter().flatten().map(|s| s.as_str()).collect();
            let overflow = distinct.len() > cats.len();
            let mut out: Vec<Column> = cats
                .iter()
                .map(|cat| {
                    let vals = values
                        .iter()
                        .map(|v| v.as_ref().map(|s| if s == cat { 1.0 } else { 0.0 }))
                        .collect();
                    numeric_col(vals, Some(cat))
                })
                .collect();
            if overflow {
                let top: std::collections::BTreeSet<&str> =
                    cats.iter().map(|s| s.as_str()).collect();
                let vals = values
                    .iter()
                    .map(|v| {
                        v.as_ref()
                            .map(|s| if top.contains(s.as_str()) { 0.0 } else { 1.0 })
                    })
                    .collect();
                out.push(numeric_col(vals, Some("other")));
            }
            out
        }
        "add" => vec![numeric_col(
            binary_math(spec, operands[0], operands[1], |a, b| finite(a + b))?,
            None,
        )],
        "sub" => vec![numeric_col(
            binary_math(spec, operands[0], operands[1], |a, b| finite(a - b))?,
            None,
        )],
        "mul" => vec![numeric_col(
            binary_math(spec, operands[0], operands[1], |a, b| finite(a * b))?,
            None,
        )],
        "div" => vec![numeric_col(
            binary_math(spec, operands[0], operands[1], |a, b| {
                (b != 0.0).then(|| a / b).and_then(finite)
            })?,
            None,
        )],
        "and" | "or" => {
            let a = operands[0].as_boolean().ok_or(TransformError::Dtype {
                transform: spec.id,
                column: operands[0].name.clone(),
                got: operands[0].dtype,
                want: "boolean",
            })?;
            let b = operands[1].as_boolean().ok_or(TransformError::Dtype {
                transform: spec.id,
                column: operands[1].name.clone(),
                got: operands[1].dtype,
                want: "boolean",
            })?;
            let conj = spec.id == "and";
            let vals = a
                .iter()
                .zip(b)
                .map(|(x, y)| match (x, y) {
                    (Some(x), Some(y)) => Some(if conj { *x && *y } else { *x || *y }),
                    _ => None,
                })
                .collect();
            vec![bool_col(vals)]
        }
        "group_by_mean" | "group_by_sum" | "group_by_min" | "group_by_max" => {
            let keys = operands[0].as_categorical().ok_or(TransformError::Dtype {
                transform: spec.id,
                column: operands[0].name.clone(),
                got: operands[0].dtype,
                want: "categorical",
            })?;
            let vals = numeric(spec, operands[1])?;
            let mut groups: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
            for (k, v) in keys.iter().zip(vals) {
                if let (Some(k), Some(v)) = (k, v) {
                    groups.entry(k.as_str()).or_default().push(*v);
                }
            }
            let agg: BTreeMap<&str, Option<f64>> = groups
                .into_iter()
                .map(|(k, vs)| {
                    let r = match spec.id {
                        "group_by_mean" => Some(vs.iter().sum::<f64>() / vs.len() as f64),
                        "group_by_sum" => Some(vs.iter().sum::<f64>()),
                        "group_by_min" => vs.iter().copied().reduce(f64::min),
                        _ => vs.iter().copied().reduce(f64::max),
                    };
                    (k, r.and_then(finite))
                })
                .collect();
            let out = keys
                .iter()
                .map(|k| {
                    k.as_ref()
                        .and_then(|k| agg.get(k.as_str()).copied().flatten())
                })
                .collect();
            vec![numeric_col(out, None)]
        }
        "group_by_count" => {
            let keys = operands[0].as_categorical().ok_or(TransformError::Dtype {
                transform: spec.id,
                column: operands[0].name.clone(),
                got: operands[0].dtype,
                want: "categorical",
            })?;
            let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
            for k in keys.iter().flatten() {
                *counts.entry(k.as_str()).or_insert(0) += 1;
            }
            let out = keys
                .iter()
                .map(|k| {
                    k.as_ref()
                        .map(|k| counts.get(k.as_str()).copied().unwrap_or(0) as f64)
                })
                .collect();
            vec![numeric_col(out, None)]
        }
        "extract_day" | "extract_month" | "extract_year" => {
            let stamps = operands[0].as_datetime().ok_or(TransformError::Dtype {
                transform: spec.id,
                column: operands[0].name.clone(),
                got: operands[0].dtype,
                want: "datetime",
            })?;
            let out = stamps
                .iter()
                .map(|s| {
                    s.map(|s| match spec.id {
                        "extract_day" => s.day as f64,
                        "extract_month" => s.month as f64,
                        _ => s.year as f64,
                    })
                })
                .collect();
            vec![numeric_col(out, None)]
        }
        "is_weekend" | "is_rush_hour" => {
            let stamps = operands[0].as_datetime().ok_or(TransformError::Dtype {
                transform: spec.id,
                column: operands[0].name.clone(),
                got: operands[0].dtype,
                want: "datetime",
            })?;
            let weekend = spec.id == "is_weekend";
            let vals = stamps
                .iter()
                .map(|s| {
                    s.map(|s| {
                        if weekend {
                            s.weekday >= 5
                        } else {
                            is_rush_hour(s.hour)
                        }
                    })
                })
                .collect();
            vec![bool_col(vals)]
        }
        "time_diff_hours" => {
            let a = operands[0].as_datetime().unwrap();
            let b = operands[1].as_datetime().unwrap();
            let vals = a
                .iter()
                .zip(b)
                .map(|(x, y)| match (x, y) {
                    (Some(x), Some(y)) => finite((x.epoch_s - y.epoch_s) as f64 / 3600.0),
                    _ => None,
                })
                .collect();
            vec![numeric_col(vals, None)]
        }
        "haversine_km" => {
            let cols: Vec<&[Option<f64>]> = operands
                .iter()
                .map(|c| c.as_numeric().expect("geo columns store numbers"))
                .collect();
            let n = operands[0].len();
            let vals = (0..n)
                .map(|i| match (cols[0][i], cols[1][i], cols[2][i], cols[3][i]) {
                    (Some(a), Some(b), Some(c), Some(d)) => finite(haversine(a, b, c, d)),
                    _ => None,
                })
                .collect();
            vec![numeric_col(vals, None)]
        }
        "triple_lookup" => {
            let predicate = param.expect("checked above");
            let values = operands[0].as_categorical().ok_or(TransformError::Dtype {
                transform: spec.id,
                column: operands[0].name.clone(),
                got: operands[0].dtype,
                want: "categorical",
            })?;
            let found: Vec<Option<&str>> = values
                .iter()
                .map(|v| {
                    v.as_ref()
                        .and_then(|e| kb.lookup_related(e, predicate).first().copied())
                })
                .collect();
            let all_numeric = found
                .iter()
                .flatten()
                .all(|s| s.trim().parse::<f64>().map(|v| v.is_finite()).unwrap_or(false));
            let any = found.iter().any(|v| v.is_some());
            let name = feature_name(spec.id, &names, Some(predicate));
            let mut col = if any && all_numeric {
                Column::numeric(
                    name,
                    found
                        .iter()
                        .map(|v| v.and_then(|s| s.trim().parse().ok()))
                        .collect(),
                )
            } else {
                Column::categorical(
                    name,
                    found.iter().map(|v| v.map(|s| s.to_string())).collect(),
                )
            };
            col.unit = None;
            vec![col]
        }
        other => return Err(TransformError::Unknown(other.to_string())),
    };
    Ok(cols)
}

/// Convenience: apply by transform id.
pub fn apply_by_id(
    id: &str,
    param: Option<&str>,
    operands: &[&Column],
    kb: &KnowledgeBase,
) -> Result<Vec<Column>, TransformError> {
    let spec = lookup(id).ok_or_else(|| TransformError::Unknown(id.to_string()))?;
    apply(spec, param, operands, kb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::parse_kg_str;
    use crate::tabular::{Stamp, Task};
    use chrono::NaiveDate;

    fn kb() -> KnowledgeBase {
        KnowledgeBase::default()
    }

    fn stamp(y: i32, mo: u32, d: u32, h: u32, mi: u32) -> Stamp {
        Stamp::from_naive(
            NaiveDate::from_ymd_opt(y, mo, d)
                .unwrap()
                .and_hms_opt(h, mi, 0)
                .unwrap(),
        )
    }

    #[test]
    fn catalog_shape() {
        assert_eq!(CATALOG.len(), 24);
        let ids: std::collections::BTreeSet<&str> = CATALOG.iter().map(|t| t.id).collect();
        assert_eq!(ids.len(), 24, "ids unique");
        let actions = agent_actions();
        assert_eq!(actions.len(), 23);
        assert!(actions.iter().all(|t| t.id != "triple_lookup"));
        // arity profile drives the search-space formula
        let n1 = actions.iter().filter(|t| t.arity() == 1).count();
        let n2 = actions.iter().filter(|t| t.arity() == 2).count();
        let n4 = actions.iter().filter(|t| t.arity() == 4).count();
        assert_eq!((n1, n2, n4), (11, 11, 1));
        for t in CATALOG {
            assert!((0.0..=1.0).contains(&t.default_interp));
        }
    }

    #[test]
    fn square_example() {
        let h = Column::numeric("height", vec![Some(1.70), Some(1.80)]);
        let out = apply_by_id("square", None, &[&h], &kb()).unwrap();
        let v = out[0].as_numeric().unwrap();
        assert!((v[0].unwrap() - 2.89).abs() < 1e-9);
        assert!((v[1].unwrap() - 3.24).abs() < 1e-9);
        assert_eq!(out[0].name, "square(height)");
    }

    #[test]
    fn log_domain_rule() {
        let x = Column::numeric("x", vec![Some(1.0), Some(0.0), Some(std::f64::consts::E)]);
        let out = apply_by_id("log", None, &[&x], &kb()).unwrap();
        let v = out[0].as_numeric().unwrap();
        assert_eq!(v[0], Some(0.0));
        assert_eq!(v[1], None);
        assert!((v[2].unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn div_by_zero_is_absent() {
        let a = Column::numeric("a", vec![Some(1.0), Some(2.0), None]);
        let b = Column::numeric("b", vec![Some(2.0), Some(0.0), Some(1.0)]);
        let out = apply_by_id("div", None, &[&a, &b], &kb()).unwrap();
        assert_eq!(out[0].as_numeric().unwrap(), &[Some(0.5), None, None]);
    }

    #[test]
    fn nonfinite_results_are_absent() {
        let a = Column::numeric("a", vec![Some(f64::MAX)]);
        let out = apply_by_id("square", None, &[&a], &kb()).unwrap();
        assert_eq!(out[0].as_numeric().unwrap(), &[None]);
    }

    #[test]
    fn unit_law_bmi() {
        let mut w = Column::numeric("weight", vec![Some(70.0)]);
        w.unit = Some(UnitExpr::base("kilogram"));
        let mut h = Column::numeric("height", vec![Some(1.7)]);
        h.unit = Some(UnitExpr::base("metre"));
        let h2 = &apply_by_id("square", None, &[&h], &kb()).unwrap()[0];
        assert_eq!(h2.unit, Some(UnitExpr::base("metre").pow(2)));
        let bmi = &apply_by_id("div", None, &[&w, h2], &kb()).unwrap()[0];
        assert_eq!(bmi.unit.as_ref().unwrap().to_string(), "kilogram·metre^-2");
        assert_eq!(bmi.name, "div(weight,square(height))");
        assert!((bmi.as_numeric().unwrap()[0].unwrap() - 70.0 / 2.89).abs() < 1e-12);
    }

    #[test]
    fn add_unit_law() {
        let mut a = Column::numeric("a", vec![Some(1.0)]);
        a.unit = Some(UnitExpr::base("euro"));
        let mut b = Column::numeric("b", vec![Some(2.0)]);
        b.unit = Some(UnitExpr::base("euro"));
        let same = &apply_by_id("add", None, &[&a, &b], &kb()).unwrap()[0];
        assert_eq!(same.unit, Some(UnitExpr::base("euro")));

        let mut c = Column::numeric("c", vec![Some(2.0)]);
        c.unit = Some(UnitExpr::base("dollar"));
        let mixed = &apply_by_id("add", None, &[&a, &c], &kb()).unwrap()[0];
        assert_eq!(mixed.unit, None);
    }

    #[test]
    fn applicable_pairs_flagging_and_self_exclusion() {
        let kb = parse_kg_str(
            "unit kilogram dim mass\nunit euro dim currency\nconcept Mass\nconcept Price\n\
             map mass -> concept:Mass unit:kilogram\nmap price -> concept:Price unit:euro\n\
             noninterp add when units_differ\n",
        )
        .unwrap();
        let cols = vec![
            Column::numeric("mass", vec![Some(1.0)]),
            Column::numeric("price", vec![Some(2.0)]),
            Column::numeric("y", vec![Some(0.0)]),
        ];
        let d = Dataset::new(cols, "y", Task::Regression).unwrap();
        let d = crate::kg::map_columns(&kb, &d).unwrap();
        let tuples = applicable_operands(lookup("add").unwrap(), &d, &kb);
        assert_eq!(tuples.len(), 2, "self-pairs excluded, both orders kept");
        assert!(tuples.iter().all(|t| t.flagged));
        assert_eq!(tuples[0].operands, vec!["mass", "price"]);
        assert_eq!(tuples[1].operands, vec!["price", "mass"]);
    }

    #[test]
    fn haversine_without_geo_columns_is_empty() {
        let cols = vec![
            Column::numeric("a", vec![Some(1.0)]),
            Column::numeric("y", vec![Some(0.0)]),
        ];
        let d = Dataset::new(cols, "y", Task::Regression).unwrap();
        assert!(applicable_operands(lookup("haversine_km").unwrap(), &d, &kb()).is_empty());
    }

    #[test]
    fn haversine_analytic_cases() {
        let mk = |name: &str, dtype, v: f64| {
            Column::new(name, dtype, ColumnData::Numeric(vec![Some(v)]))
        };
        let la1 = mk("lat_a", Dtype::GeoLat, 0.0);
        let lo1 = mk("lon_a", Dtype::GeoLon, 0.0);
        let la2 = mk("lat_b", Dtype::GeoLat, 0.0);
        let lo2 = mk("lon_b", Dtype::GeoLon, 1.0);
        let out = apply_by_id("haversine_km", None, &[&la1, &lo1, &la2, &lo2], &kb()).unwrap();
        let one_degree = EARTH_RADIUS_KM * std::f64::consts::PI / 180.0;
        assert!((out[0].as_numeric().unwrap()[0].unwrap() - one_degree).abs() < 1e-9);

        let lo3 = mk("lon_c", Dtype::GeoLon, 180.0);
        let out = apply_by_id("haversine_km", None, &[&la1, &lo1, &la2, &lo3], &kb()).unwrap();
        let half_circumference = EARTH_RADIUS_KM * std::f64::consts::PI;
        assert!((out[0].as_numeric().unwrap()[0].unwrap() - half_circumference).abs() < 1e-9);

        let out_sym = apply_by_id("haversine_km", None, &[&la2, &lo2, &la1, &lo1], &kb()).unwrap();
        let d1 = apply_by_id("haversine_km", None, &[&la1, &lo1, &la2, &lo2], &kb()).unwrap();
        assert_eq!(
            out_sym[0].as_numeric().unwrap()[0],
            d1[0].as_numeric().unwrap()[0]
        );
    }

    #[test]
    fn one_hot_basic_and_cap() {
        let vals: Vec<Option<String>> = vec![
            Some("a".into()),
            Some("b".into()),
            Some("a".into()),
            None,
        ];
        let c = Column::categorical("city", vals);
        let out = apply_by_id("one_hot", None, &[&c], &kb()).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].name, "one_hot(city=a)");
        assert_eq!(
            out[0].as_numeric().unwrap(),
            &[Some(1.0), Some(0.0), Some(1.0), None]
        );
        assert_eq!(out[1].name, "one_hot(city=b)");

        let many: Vec<Option<String>> = (0..50).map(|i| Some(format!("c{:02}", i % 25))).collect();
        let c = Column::categorical("k", many);
        let out = apply_by_id("one_hot", None, &[&c], &kb()).unwrap();
        assert_eq!(out.len(), ONE_HOT_CAP + 1);
        assert_eq!(out.last().unwrap().name, "one_hot(k=other)");
    }

    #[test]
    fn group_by_broadcast() {
        let city = Column::categorical(
            "city",
            vec![Some("a".into()), Some("a".into()), Some("b".into()), None],
        );
        let x = Column::numeric("x", vec![Some(1.0), Some(2.0), Some(4.0), Some(9.0)]);
        let mean = &apply_by_id("group_by_mean", None, &[&city, &x], &kb()).unwrap()[0];
        assert_eq!(
            mean.as_numeric().unwrap(),
            &[Some(1.5), Some(1.5), Some(4.0), None]
        );
        let sum = &apply_by_id("group_by_sum", None, &[&city, &x], &kb()).unwrap()[0];
        assert_eq!(sum.as_numeric().unwrap()[0], Some(3.0));
        let count = &apply_by_id("group_by_count", None, &[&city], &kb()).unwrap()[0];
        assert_eq!(
            count.as_numeric().unwrap(),
            &[Some(2.0), Some(2.0), Some(1.0), None]
        );
        let min = &apply_by_id("group_by_min", None, &[&city, &x], &kb()).unwrap()[0];
        assert_eq!(min.as_numeric().unwrap()[1], Some(1.0));
        let max = &apply_by_id("group_by_max", None, &[&city, &x], &kb()).unwrap()[0];
        assert_eq!(max.as_numeric().unwrap()[1], Some(2.0));
    }

    #[test]
    fn date_extractors() {
        let ts = Column::new(
            "ts",
            Dtype::Datetime,
            ColumnData::Datetime(vec![Some(stamp(2011, 1, 1, 8, 0)), None]),
        );
        let day = &apply_by_id("extract_day", None, &[&ts], &kb()).unwrap()[0];
        assert_eq!(day.as_numeric().unwrap(), &[Some(1.0), None]);
        let month = &apply_by_id("extract_month", None, &[&ts], &kb()).unwrap()[0];
        assert_eq!(month.as_numeric().unwrap()[0], Some(1.0));
        let year = &apply_by_id("extract_year", None, &[&ts], &kb()).unwrap()[0];
        assert_eq!(year.as_numeric().unwrap()[0], Some(2011.0));

        // 2011-01-01 is a Saturday
        let weekend = &apply_by_id("is_weekend", None, &[&ts], &kb()).unwrap()[0];
        assert_eq!(weekend.as_boolean().unwrap(), &[Some(true), None]);
        let monday = Column::new(
            "ts2",
            Dtype::Datetime,
            ColumnData::Datetime(vec![Some(stamp(2011, 1, 3, 12, 0)), None]),
        );
        let weekend = &apply_by_id("is_weekend", None, &[&monday], &kb()).unwrap()[0];
        assert_eq!(weekend.as_boolean().unwrap()[0], Some(false));
    }

    #[test]
    fn rush_hour_window() {
        assert!(is_rush_hour(7));
        assert!(is_rush_hour(9));
        assert!(!is_rush_hour(10));
        assert!(is_rush_hour(16));
        assert!(is_rush_hour(18));
        assert!(!is_rush_hour(19));
        assert!(!is_rush_hour(0));
    }

    #[test]
    fn time_diff_hours_signed() {
        let a = Column::new(
            "a",
            Dtype::Datetime,
            ColumnData::Datetime(vec![Some(stamp(2011, 1, 1, 10, 30))]),
        );
        let b = Column::new(
            "b",
            Dtype::Datetime,
            ColumnData::Datetime(vec![Some(stamp(2011, 1, 1, 9, 0))]),
        );
        let d = &apply_by_id("time_diff_hours", None, &[&a, &b], &kb()).unwrap()[0];
        assert_eq!(d.as_numeric().unwrap()[0], Some(1.5));
        assert_eq!(d.unit, Some(UnitExpr::base("hour")));
        let rev = &apply_by_id("time_diff_hours", None, &[&b, &a], &kb()).unwrap()[0];
        assert_eq!(rev.as_numeric().unwrap()[0], Some(-1.5));
    }

    #[test]
    fn logical_ops_boolean_only() {
        let a = Column::new(
            "a",
            Dtype::Boolean,
            ColumnData::Boolean(vec![Some(true), Some(true), Some(false), None]),
        );
        let b = Column::new(
            "b",
            Dtype::Boolean,
            ColumnData::Boolean(vec![Some(true), Some(false), Some(false), Some(true)]),
        );
        let conj = &apply_by_id("and", None, &[&a, &b], &kb()).unwrap()[0];
        assert_eq!(
            conj.as_boolean().unwrap(),
            &[Some(true), Some(false), Some(false), None]
        );
        let disj = &apply_by_id("or", None, &[&a, &b], &kb()).unwrap()[0];
        assert_eq!(disj.as_boolean().unwrap()[1], Some(true));
        let x = Column::numeric("x", vec![Some(1.0)]);
        assert!(apply_by_id("and", None, &[&x, &x], &kb()).is_err());
    }

    #[test]
    fn triple_lookup_numeric_and_text() {
        let kb = parse_kg_str(
            "triple (Paris, population, 2148000)\ntriple (Lyon, population, 513275)\n\
             triple (Paris, country, France)\n",
        )
        .unwrap();
        let city = Column::categorical(
            "city",
            vec![Some("Paris".into()), Some("lyon".into()), Some("Oz".into()), None],
        );
        let pop = &apply_by_id("triple_lookup", Some("population"), &[&city], &kb).unwrap()[0];
        assert_eq!(pop.name, "triple_lookup(city=population)");
        assert_eq!(pop.dtype, Dtype::Numeric);
        assert_eq!(
            pop.as_numeric().unwrap(),
            &[Some(2148000.0), Some(513275.0), None, None]
        );
        let country = &apply_by_id("triple_lookup", Some("country"), &[&city], &kb).unwrap()[0];
        assert_eq!(country.dtype, Dtype::Categorical);
        assert_eq!(
            country.as_categorical().unwrap()[0].as_deref(),
            Some("France")
        );
    }

    #[test]
    fn name_round_trip_cases() {
        for (name, tid, ops) in [
            ("square(height)", "square", vec!["height"]),
            ("div(weight,square(height))", "div", vec!["weight", "square(height)"]),
            ("one_hot(city=Paris)", "one_hot", vec!["city"]),
            ("triple_lookup(city=population)", "triple_lookup", vec!["city"]),
            (
                "add(one_hot(city=Paris),x)",
                "add",
                vec!["one_hot(city=Paris)", "x"],
            ),
        ] {
            let (t, o) = parse_feature_name(name).unwrap();
            assert_eq!(t, tid);
            assert_eq!(o, ops);
        }
        assert!(parse_feature_name("height").is_none());
        assert!(parse_feature_name("not_a_transform(x)").is_none());
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(64))]

        #[test]
        fn name_round_trip_property(
            tid_idx in 0usize..CATALOG.len(),
            ops in proptest::collection::vec("[a-z][a-z0-9_]{0,8}", 1..4)
        ) {
            let tid = CATALOG[tid_idx].id;
            let refs: Vec<&str> = ops.iter().map(|s| s.as_str()).collect();
            let name = feature_name(tid, &refs, None);
            let (t, o) = parse_feature_name(&name).unwrap();
            proptest::prop_assert_eq!(t, tid);
            proptest::prop_assert_eq!(o, ops);
        }
    }

    #[test]
    fn totality_over_applicable_tuples() {
        // Mixed-dtype dataset with absents sprinkled in; every tuple that
        // applicable_operands emits must apply cleanly at full length.
        let n = 8;
        let cols = vec![
            Column::numeric("x1", (0..n).map(|i| (i % 3 != 0).then(|| i as f64 - 2.0)).collect()),
            Column::numeric("x2", (0..n).map(|i| Some(i as f64 * 0.5)).collect()),
            Column::categorical("c1", (0..n).map(|i| (i % 4 != 1).then(|| format!("g{}", i % 2))).collect()),
            Column::new("t1", Dtype::Datetime, ColumnData::Datetime(
                (0..n).map(|i| Some(stamp(2011, 1, 1 + i as u32, i as u32 % 24, 0))).collect())),
            Column::new("t2", Dtype::Datetime, ColumnData::Datetime(
                (0..n).map(|i| (i % 5 != 0).then(|| stamp(2011, 2, 1 + i as u32, 12, 0))).collect())),
            Column::new("b1", Dtype::Boolean, ColumnData::Boolean(
                (0..n).map(|i| Some(i % 2 == 0)).collect())),
            Column::new("b2", Dtype::Boolean, ColumnData::Boolean(
                (0..n).map(|i| (i != 3).then(|| i % 3 == 0)).collect())),
            Column::new("lat_a", Dtype::GeoLat, ColumnData::Numeric(
                (0..n).map(|i| Some(40.0 + i as f64 * 0.1)).collect())),
            Column::new("lon_a", Dtype::GeoLon, ColumnData::Numeric(
                (0..n).map(|i| Some(-74.0 + i as f64 * 0.1)).collect())),
            Column::new("lat_b", Dtype::GeoLat, ColumnData::Numeric(
                (0..n).map(|i| Some(41.0 - i as f64 * 0.05)).collect())),
            Column::new("lon_b", Dtype::GeoLon, ColumnData::Numeric(
                (0..n).map(|_| Some(-73.0)).collect())),
            Column::numeric("y", (0..n).map(|i| Some(i as f64)).collect()),
        ];
        let d = Dataset::new(cols, "y", Task::Regression).unwrap();
        let kb = kb();
        for spec in CATALOG {
            if spec.takes_param {
                continue;
            }
            for tuple in applicable_operands(spec, &d, &kb) {
                let ops: Vec<&Column> = tuple
                    .operands
                    .iter()
                    .map(|name| d.column(name).unwrap())
                    .collect();
                let out = apply(spec, None, &ops, &kb)
                    .unwrap_or_else(|e| panic!("{}: {e}", spec.id));
                assert!(!out.is_empty());
                for c in &out {
                    assert_eq!(c.len(), d.n_rows, "{}", c.name);
                }
            }
        }
    }

    #[test]
    fn target_never_appears_in_tuples() {
        let cols = vec![
            Column::numeric("a", vec![Some(1.0), Some(2.0)]),
            Column::numeric("y", vec![Some(1.0), Some(2.0)]),
        ];
        let d = Dataset::new(cols, "y", Task::Regression).unwrap();
        for spec in CATALOG {
            for t in applicable_operands(spec, &d, &kb()) {
                assert!(!t.operands.contains(&"y".to_string()));
            }
        }
    }
}
