//! Exploitation: forward-chains derivation rules over the mapped dataset,
//! materializing domain features and seeding the decomposition graph.
//!
//! Each fixpoint iteration applies every rule to the columns present at the
//! start of that iteration, so chained rules (`Date => ... => ...`) resolve one
//! level per iteration and `max_depth` bounds the chain length. Produced
//! columns are named after their product concept and enter the graph as
//! known-concept nodes with score 1.0, alongside every raw feature column
//! (mapped concepts 1.0, `Unknown` at a configurable base).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decomp::{DecompError, DecompositionGraph};
use crate::kg::{KnowledgeBase, OperandMeta, UNKNOWN_CONCEPT};
use crate::tabular::{Column, DataError, Dataset};
use crate::transforms::{self, TransformError};

/// Base interpretability for raw columns the knowledge base knows nothing
/// about: human-named but not KG-grounded.
pub const DEFAULT_UNKNOWN_BASE: f64 = 0.8;
/// Default bound on fixpoint iterations.
pub const DEFAULT_MAX_DEPTH: usize = 3;

#[derive(Debug, Error)]
pub enum ReasonerError {
    #[error(transparent)]
    Transform(#[from] TransformError),
    #[error(transparent)]
    Graph(#[from] DecompError),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceStep {
    pub rule: String,
    pub source: String,
    pub produced: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InferenceTrace {
    pub steps: Vec<TraceStep>,
    pub depth_reached: usize,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Copy)]
pub struct ExploitOptions {
    pub max_depth: usize,
    pub unknown_base: f64,
}

impl Default for ExploitOptions {
    fn default() -> Self {
        ExploitOptions {
            max_depth: DEFAULT_MAX_DEPTH,
            unknown_base: DEFAULT_UNKNOWN_BASE,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Interpretable,
    NonInterpretable,
}

/// Applies the knowledge base's interpretability rules to one prospective
/// transform application.
pub fn check_interpretability_rules(
    kb: &KnowledgeBase,
    transform: &str,
    operands: &[&Column],
) -> Verdict {
    let metas: Vec<OperandMeta<'_>> = operands
        .iter()
        .map(|c| OperandMeta {
            concept: c.concept.as_deref(),
            unit: c.unit.as_ref(),
        })
        .collect();
    if kb.flags_noninterpretable(transform, &metas) {
        Verdict::NonInterpretable
    } else {
        Verdict::Interpretable
    }
}

fn unique_name(d: &Dataset, base: &str) -> String {
    if d.column(base).is_none() {
        return base.to_string();
    }
    let mut i = 2usize;
    loop {
        let candidate = format!("{base}_{i}");
        if d.column(&candidate).is_none() {
            return candidate;
        }
        i += 1;
    }
}

pub fn exploit(
    d: &Dataset,
    kb: &KnowledgeBase,
    max_depth: usize,
) -> Result<(Dataset, InferenceTrace, DecompositionGraph), ReasonerError> {
    exploit_with(
        d,
        kb,
        ExploitOptions {
            max_depth,
            ..Default::default()
        },
    )
}

pub fn exploit_with(
    d: &Dataset,
    kb: &KnowledgeBase,
    opts: ExploitOptions,
) -> Result<(Dataset, InferenceTrace, DecompositionGraph), ReasonerError> {
    let mut out = d.clone();
    let mut graph = DecompositionGraph::from_kb(kb);
    let mut trace = InferenceTrace::default();

    out.provenance.clear();
    for col in d.features() {
        let base = match col.concept.as_deref() {
            Some(UNKNOWN_CONCEPT) | None => opts.unknown_base,
            Some(_) => 1.0,
        };
        let node = graph.add_known(&col.name, base);
        out.provenance.insert(col.name.clone(), node);
    }

    let mut applied: std::collections::BTreeSet<(usize, String)> = Default::default();
    for depth in 1..=opts.max_depth {
        // Snapshot of eligible (rule, source) pairs; columns added this
        // iteration become sources only in the next one.
        let pending: Vec<(usize, String)> = kb
            .derivation_rules
            .iter()
            .enumerate()
            .flat_map(|(ri, rule)| {
                out.features()
                    .filter(|c| c.concept.as_deref() == Some(rule.source.as_str()))
                    .map(move |c| (ri, c.name.clone()))
            })
            .filter(|key| !applied.contains(key))
            .collect();
        if pending.is_empty() {
            break;
        }
        let mut added_any = false;
        for (ri, src_name) in pending {
            applied.insert((ri, src_name.clone()));
            let rule = &kb.derivation_rules[ri];
            let mut produced = Vec::new();
            for product in &rule.products {
                let spec = transforms::lookup(&product.extractor.name)
                    .expect("extractors are link-checked at parse time");
                let src = out.column(&src_name).expect("source column exists");
                if !transforms::accepts_operand(spec, 0, src) {
                    trace.warnings.push(format!(
                        "rule {:?}: extractor {} not applicable to column {:?} (dtype {})",
                        rule.id(),
                        product.extractor,
                        src_name,
                        src.dtype
                    ));
                    continue;
                }
                let flagged = check_interpretability_rules(kb, &product.extractor.name, &[src])
                    == Verdict::NonInterpretable;
                let outputs =
                    transforms::apply(spec, product.extractor.param.as_deref(), &[src], kb)?;
                for mut oc in outputs {
                    if (0..oc.len()).all(|r| oc.data.is_absent(r)) {
                        trace.warnings.push(format!(
                            "rule {:?}: {} over {:?} produced no values, dropped",
                            rule.id(),
                            product.extractor,
                            src_name
                        ));
                        continue;
                    }
                    oc.concept = Some(product.concept.clone());
                    // Fact already present: a column with this concept and
                    // identical data was derived before (idempotence).
                    if out
                        .columns
                        .iter()
                        .any(|c| c.concept == oc.concept && c.data == oc.data)
                    {
                        continue;
                    }
                    let final_name = unique_name(&out, &product.concept);
                    oc.name = final_name.clone();
                    let src_node = out.provenance[&src_name];
                    let node = graph.add_known(&final_name, 1.0);
                    graph.add_application(
                        &product.extractor.to_string(),
                        &[src_node],
                        &final_name,
                        flagged,
                    )?;
                    let (next, stored) = crate::tabular::append_feature(&out, oc, node)?;
                    debug_assert_eq!(stored, final_name);
                    out = next;
                    produced.push(final_name);
                }
            }
            if !produced.is_empty() {
                trace.steps.push(TraceStep {
                    rule: rule.id(),
                    source: src_name,
                    produced,
                });
                added_any = true;
            }
        }
        if added_any {
            trace.depth_reached = depth;
        } else {
            break;
        }
    }

    Ok((out, trace, graph))
}
