//! Decomposition graph: every feature is a node, every transform application
//! a bundle of edges, and interpretability is scored recursively over it.
//!
//! A generated node's score is the max over its incoming applications of
//! `Inter(t) * min(operand scores)`, applications flagged by an
//! interpretability rule contributing 0. Known-concept nodes (raw mapped
//! columns and exploitation products) return their base score directly.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kg::KnowledgeBase;
use crate::transforms;

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub struct NodeId(pub u32);

#[derive(Debug, Error)]
pub enum DecompError {
    #[error("unknown node {0:?}")]
    UnknownNode(String),
    #[error("application of {transform} producing {product:?} would create a cycle")]
    Cycle { transform: String, product: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    KnownConcept,
    Generated,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureNode {
    pub id: NodeId,
    pub name: String,
    pub kind: NodeKind,
    pub base_score: Option<f64>,
    cached_score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Application {
    pub id: u32,
    pub transform: String,
    pub operands: Vec<NodeId>,
    pub product: NodeId,
    pub flagged: bool,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct DecompositionGraph {
    nodes: Vec<FeatureNode>,
    applications: Vec<Application>,
    interp_weights: BTreeMap<String, f64>,
    by_name: BTreeMap<String, NodeId>,
}

impl DecompositionGraph {
    /// Weight table resolved from the knowledge base (explicit overrides plus
    /// catalog defaults) for every catalog transform.
    pub fn from_kb(kb: &KnowledgeBase) -> Self {
        let interp_weights = transforms::catalog()
            .iter()
            .map(|t| (t.id.to_string(), kb.interp_weight(t.id)))
            .collect();
        DecompositionGraph {
            interp_weights,
            ..Default::default()
        }
    }

    pub fn with_weights(interp_weights: BTreeMap<String, f64>) -> Self {
        DecompositionGraph {
            interp_weights,
            ..Default::default()
        }
    }

    pub fn interp_weights(&self) -> &BTreeMap<String, f64> {
        &self.interp_weights
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn n_applications(&self) -> usize {
        self.applications.len()
    }

    pub fn node(&self, id: NodeId) -> &FeatureNode {
        &self.nodes[id.0 as usize]
    }

    pub fn node_by_name(&self, name: &str) -> Option<NodeId> {
        self.by_name.get(name).copied()
    }

    pub fn nodes(&self) -> &[FeatureNode] {
        &self.nodes
    }

    pub fn applications(&self) -> &[Application] {
        &self.applications
    }

    fn weight(&self, transform: &str) -> f64 {
        self.interp_weights.get(transform).copied().unwrap_or_else(|| {
            transforms::lookup(transform)
                .map(|t| t.default_interp)
                .unwrap_or(0.9)
        })
    }

    /// Inserts (or finds) a known-concept node with the given base score.
    pub fn add_known(&mut self, name: &str, base_score: f64) -> NodeId {
        if let Some(id) = self.by_name.get(name) {
            return *id;
        }
        let id = NodeId(self.nodes.len() as u32);
        self.nodes.push(FeatureNode {
            id,
            name: name.to_string(),
            kind: NodeKind::KnownConcept,
            base_score: Some(base_score.clamp(0.0, 1.0)),
            cached_score: None,
        });
        self.by_name.insert(name.to_string(), id);
        id
    }

    /// True when `to` is reachable from `from` along operand→product edges.
    fn has_path(&self, from: NodeId, to: NodeId) -> bool {
        if from == to {
            return true;
        }
        let mut stack = vec![from];
        let mut seen = vec![false; self.nodes.len()];
        while let Some(n) = stack.pop() {
            if seen[n.0 as usize] {
                continue;
            }
            seen[n.0 as usize] = true;
            for app in self.applications.iter().filter(|a| a.operands.contains(&n)) {
                if app.product == to {
                    return true;
                }
                stack.push(app.product);
            }
        }
        false
    }

    fn invalidate_downstream(&mut self, start: NodeId) {
        let mut stack = vec![start];
        let mut seen = vec![false; self.nodes.len()];
        while let Some(n) = stack.pop() {
            if seen[n.0 as usize] {
                continue;
            }
            seen[n.0 as usize] = true;
            self.nodes[n.0 as usize].cached_score = None;
            let next: Vec<NodeId> = self
                .applications
                .iter()
                .filter(|a| a.operands.contains(&n))
                .map(|a| a.product)
                .collect();
            stack.extend(next);
        }
    }

    /// Records one transform application. Re-deriving an existing name adds a
    /// second application on the same node; an exact duplicate is a no-op.
    pub fn add_application(
        &mut self,
        transform: &str,
        operands: &[NodeId],
        product_name: &str,
        flagged: bool,
    ) -> Result<NodeId, DecompError> {
        for op in operands {
            if op.0 as usize >= self.nodes.len() {
                return Err(DecompError::UnknownNode(format!("#{}", op.0)));
            }
        }
        if let Some(product) = self.by_name.get(product_name).copied() {
            let duplicate = self.applications.iter().any(|a| {
                a.product == product && a.transform == transform && a.operands == operands
            });
            if duplicate {
                return Ok(product);
            }
            if operands.iter().any(|&op| self.has_path(product, op)) {
                return Err(DecompError::Cycle {
                    transform: transform.to_string(),
                    product: product_name.to_string(),
                });
            }
            let id = self.applications.len() as u32;
            self.applications.push(Application {
                id,
                transform: transform.to_string(),
                operands: operands.to_vec(),
                product,
                flagged,
            });
            self.invalidate_downstream(product);
            Ok(product)
        } else {
            let product = NodeId(self.nodes.len() as u32);
            self.nodes.push(FeatureNode {
                id: product,
                name: product_name.to_string(),
                kind: NodeKind::Generated,
                base_score: None,
                cached_score: None,
            });
            self.by_name.insert(product_name.to_string(), product);
            let id = self.applications.len() as u32;
            self.applications.push(Application {
                id,
                transform: transform.to_string(),
                operands: operands.to_vec(),
                product,
                flagged,
            });
            Ok(product)
        }
    }

    fn score_memo(&self, id: NodeId, memo: &mut Vec<Option<f64>>) -> f64 {
        if let Some(s) = memo[id.0 as usize] {
            return s;
        }
        let node = &self.nodes[id.0 as usize];
        let s = match node.kind {
            NodeKind::KnownConcept => node.base_score.unwrap_or(0.0),
            NodeKind::Generated => {
                let mut best = 0.0f64;
                for app in self.applications.iter().filter(|a| a.product == id) {
                    let w = if app.flagged { 0.0 } else { self.weight(&app.transform) };
                    let operand_min = app
                        .operands
                        .iter()
                        .map(|&op| self.score_memo(op, memo))
                        .fold(f64::INFINITY, f64::min);
                    let operand_min = if operand_min.is_finite() { operand_min } else { 0.0 };
                    best = best.max(w * operand_min);
                }
                best
            }
        };
        let s = s.clamp(0.0, 1.0);
        memo[id.0 as usize] = Some(s);
        s
    }

    /// Interpretability score, computed with a per-call memo (no shared state).
    pub fn score(&self, id: NodeId) -> f64 {
        let mut memo = vec![None; self.nodes.len()];
        self.score_memo(id, &mut memo)
    }

    /// Interpretability score using the persistent per-node cache.
    pub fn score_cached(&mut self, id: NodeId) -> f64 {
        if let Some(s) = self.nodes[id.0 as usize].cached_score {
            return s;
        }
        let mut memo: Vec<Option<f64>> =
            self.nodes.iter().map(|n| n.cached_score).collect();
        let s = self.score_memo(id, &mut memo);
        for (node, m) in self.nodes.iter_mut().zip(memo) {
            if let Some(v) = m {
                node.cached_score = Some(v);
            }
        }
        s
    }

    /// Mean per-feature score; empty input is defined as 0.
    pub fn dataset_interpretability(&self, features: &[NodeId]) -> f64 {
        if features.is_empty() {
            return 0.0;
        }
        self.dataset_interpretability_sum(features) / features.len() as f64
    }

    /// Unnormalized sum of per-feature scores (reported alongside the mean).
    pub fn dataset_interpretability_sum(&self, features: &[NodeId]) -> f64 {
        let mut memo = vec![None; self.nodes.len()];
        features
            .iter()
            .map(|&f| self.score_memo(f, &mut memo))
            .sum()
    }

    /// Nodes in topological order, ties broken by name.
    pub fn topo_order(&self) -> Vec<NodeId> {
        let mut incoming: Vec<usize> = vec![0; self.nodes.len()];
        for app in &self.applications {
            incoming[app.product.0 as usize] += app.operands.len();
        }
        let mut ready: std::collections::BTreeSet<(String, NodeId)> = self
            .nodes
            .iter()
            .filter(|n| incoming[n.id.0 as usize] == 0)
            .map(|n| (n.name.clone(), n.id))
            .collect();
        let mut order = Vec::with_capacity(self.nodes.len());
        while let Some(entry) = ready.iter().next().cloned() {
            ready.remove(&entry);
            let (_, id) = entry;
            order.push(id);
            for app in self.applications.iter().filter(|a| a.operands.contains(&id)) {
                let times = app.operands.iter().filter(|&&o| o == id).count();
                let slot = &mut incoming[app.product.0 as usize];
                *slot -= times;
                if *slot == 0 {
                    let p = &self.nodes[app.product.0 as usize];
                    ready.insert((p.name.clone(), p.id));
                }
            }
        }
        order
    }

    /// Graphviz export; node and edge order are deterministic.
    pub fn export_dot(&self) -> String {
        let order = self.topo_order();
        let pos: BTreeMap<NodeId, usize> =
            order.iter().enumerate().map(|(i, &n)| (n, i)).collect();
        let mut out = String::from("digraph decomposition {\n  rankdir=LR;\n");
        for &id in &order {
            let n = self.node(id);
            let kind = match n.kind {
                NodeKind::KnownConcept => "known_concept",
                NodeKind::Generated => "generated",
            };
            out.push_str(&format!(
                "  \"{}\" [kind={kind} score={:.6}];\n",
                escape(&n.name),
                self.score(id)
            ));
        }
        let mut apps: Vec<&Application> = self.applications.iter().collect();
        apps.sort_by_key(|a| (pos[&a.product], a.id));
        for app in apps {
            for op in &app.operands {
                let style = if app.flagged { " style=dashed flagged=true" } else { "" };
                out.push_str(&format!(
                    "  \"{}\" -> \"{}\" [label=\"{}\" app={}{style}];\n",
                    escape(&self.node(*op).name),
                    escape(&self.node(app.product).name),
                    app.transform,
                    app.id
                ));
            }
        }
        out.push_str("}\n");
        out
    }

    /// JSON export with the same deterministic ordering as the DOT form.
    pub fn export_json(&self) -> String {
        #[derive(Serialize)]
        struct NodeOut<'a> {
            name: &'a str,
            kind: NodeKind,
            #[serde(skip_serializing_if = "Option::is_none")]
            base_score: Option<f64>,
            score: f64,
        }
        #[derive(Serialize)]
        struct AppOut<'a> {
            transform: &'a str,
            operands: Vec<&'a str>,
            product: &'a str,
            flagged: bool,
        }
        #[derive(Serialize)]
        struct GraphOut<'a> {
            nodes: Vec<NodeOut<'a>>,
            applications: Vec<AppOut<'a>>,
            interp_weights: &'a BTreeMap<String, f64>,
        }
        let order = self.topo_order();
        let pos: BTreeMap<NodeId, usize> =
            order.iter().enumerate().map(|(i, &n)| (n, i)).collect();
        let mut apps: Vec<&Application> = self.applications.iter().collect();
        apps.sort_by_key(|a| (pos[&a.product], a.id));
        let out = GraphOut {
            nodes: order
                .iter()
                .map(|&id| {
                    let n = self.node(id);
                    NodeOut {
                        name: &n.name,
                        kind: n.kind,
                        base_score: n.base_score,
                        score: self.score(id),
                    }
                })
                .collect(),
            applications: apps
                .iter()
                .map(|a| AppOut {
                    transform: &a.transform,
                    operands: a.operands.iter().map(|&o| self.node(o).name.as_str()).collect(),
                    product: &self.node(a.product).name,
                    flagged: a.flagged,
                })
                .collect(),
            interp_weights: &self.interp_weights,
        };
        serde_json::to_string_pretty(&out).expect("serializable")
    }
}

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn weights(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    /// Straight recursive evaluation of the scoring definition, no caching.
    fn naive_score(g: &DecompositionGraph, id: NodeId) -> f64 {
        let node = g.node(id);
        match node.kind {
            NodeKind::KnownConcept => node.base_score.unwrap_or(0.0),
            NodeKind::Generated => g
                .applications()
                .iter()
                .filter(|a| a.product == id)
                .map(|a| {
                    let w = if a.flagged {
                        0.0
                    } else {
                        g.interp_weights().get(&a.transform).copied().unwrap_or(0.9)
                    };
                    let m = a
                        .operands
                        .iter()
                        .map(|&o| naive_score(g, o))
                        .fold(f64::INFINITY, f64::min);
                    w * if m.is_finite() { m } else { 0.0 }
                })
                .fold(0.0, f64::max),
        }
    }

    /// Path-enumeration oracle for graphs whose applications are all unary:
    /// every root-to-node path scores base(root) * product(weights), and the
    /// node takes the max.
    fn path_oracle(g: &DecompositionGraph, id: NodeId) -> f64 {
        let node = g.node(id);
        if node.kind == NodeKind::KnownConcept {
            return node.base_score.unwrap_or(0.0);
        }
        g.applications()
            .iter()
            .filter(|a| a.product == id)
            .map(|a| {
                assert_eq!(a.operands.len(), 1, "path oracle needs unary applications");
                let w = if a.flagged {
                    0.0
                } else {
                    g.interp_weights().get(&a.transform).copied().unwrap_or(0.9)
                };
                w * path_oracle(g, a.operands[0])
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn known_node_returns_base_score() {
        let mut g = DecompositionGraph::with_weights(weights(&[]));
        let n = g.add_known("weight", 1.0);
        assert_eq!(g.score(n), 1.0);
        let u = g.add_known("z42", 0.8);
        assert_eq!(g.score(u), 0.8);
    }

    #[test]
    fn single_chain_scores_product_of_weights() {
        let mut g = DecompositionGraph::with_weights(weights(&[("log", 0.9)]));
        let x = g.add_known("x", 1.0);
        let f = g.add_application("log", &[x], "log(x)", false).unwrap();
        assert!((g.score(f) - 0.9).abs() < 1e-15);
    }

    #[test]
    fn max_over_applications() {
        let mut g =
            DecompositionGraph::with_weights(weights(&[("log", 0.9), ("square", 0.95)]));
        let a = g.add_known("a", 1.0);
        let b = g.add_known("b", 0.76);
        let f = g.add_application("log", &[a], "f", false).unwrap();
        let f2 = g.add_application("square", &[b], "f", false).unwrap();
        assert_eq!(f, f2, "same name, same node");
        // max(0.9 * 1.0, 0.95 * 0.76) = max(0.9, 0.722)
        assert!((g.score(f) - 0.9).abs() < 1e-12);
    }

    #[test]
    fn bmi_graph_shape() {
        let mut g =
            DecompositionGraph::with_weights(weights(&[("square", 0.9), ("div", 0.95)]));
        let w = g.add_known("weight", 1.0);
        let h = g.add_known("height", 1.0);
        let h2 = g.add_application("square", &[h], "square(height)", false).unwrap();
        let bmi = g
            .add_application("div", &[w, h2], "div(weight,square(height))", false)
            .unwrap();
        assert_eq!(g.len(), 4);
        let edge_count: usize = g.applications().iter().map(|a| a.operands.len()).sum();
        assert_eq!(edge_count, 3);
        assert!((g.score(bmi) - 0.95 * 0.9).abs() < 1e-12);
    }

    #[test]
    fn flagged_application_scores_zero_but_alternative_wins() {
        let mut g = DecompositionGraph::with_weights(weights(&[("add", 0.95), ("mul", 0.9)]));
        let a = g.add_known("a", 1.0);
        let b = g.add_known("b", 1.0);
        let f = g.add_application("add", &[a, b], "f", true).unwrap();
        assert_eq!(g.score(f), 0.0);
        g.add_application("mul", &[a, b], "f", false).unwrap();
        assert!((g.score(f) - 0.9).abs() < 1e-12);
    }

    #[test]
    fn min_over_operands() {
        let mut g = DecompositionGraph::with_weights(weights(&[("add", 1.0)]));
        let a = g.add_known("a", 1.0);
        let b = g.add_known("b", 0.5);
        let f = g.add_application("add", &[a, b], "f", false).unwrap();
        assert!((g.score(f) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn duplicate_application_is_noop() {
        let mut g = DecompositionGraph::with_weights(weights(&[("log", 0.9)]));
        let x = g.add_known("x", 1.0);
        let f1 = g.add_application("log", &[x], "log(x)", false).unwrap();
        let f2 = g.add_application("log", &[x], "log(x)", false).unwrap();
        assert_eq!(f1, f2);
        assert_eq!(g.n_applications(), 1);
    }

    #[test]
    fn cycles_rejected() {
        let mut g = DecompositionGraph::with_weights(weights(&[("log", 0.9)]));
        let x = g.add_known("x", 1.0);
        let f = g.add_application("log", &[x], "f", false).unwrap();
        let h = g.add_application("log", &[f], "h", false).unwrap();
        // h -> f would close the loop f -> h -> f
        assert!(matches!(
            g.add_application("log", &[h], "f", false),
            Err(DecompError::Cycle { .. })
        ));
        // self-cycle
        assert!(matches!(
            g.add_application("log", &[f], "f", false),
            Err(DecompError::Cycle { .. })
        ));
    }

    #[test]
    fn unknown_operand_rejected() {
        let mut g = DecompositionGraph::with_weights(weights(&[]));
        assert!(matches!(
            g.add_application("log", &[NodeId(5)], "f", false),
            Err(DecompError::UnknownNode(_))
        ));
    }

    #[test]
    fn dataset_interpretability_mean_and_sum() {
        let mut g = DecompositionGraph::with_weights(weights(&[("log", 0.9), ("mul", 0.95)]));
        let a = g.add_known("a", 1.0);
        let f = g.add_application("log", &[a], "f", false).unwrap();
        let b = g.add_known("b", 0.76);
        let h = g.add_application("mul", &[a, b], "h", false).unwrap();
        let feats = [a, f, h];
        let mean = g.dataset_interpretability(&feats);
        assert!((mean - (1.0 + 0.9 + 0.722) / 3.0).abs() < 1e-12);
        let sum = g.dataset_interpretability_sum(&feats);
        assert!((sum - (1.0 + 0.9 + 0.722)).abs() < 1e-12);
        assert_eq!(g.dataset_interpretability(&[]), 0.0);
    }

    #[test]
    fn cache_transparency_and_invalidation() {
        let mut g = DecompositionGraph::with_weights(weights(&[("log", 0.9), ("mul", 0.95)]));
        let a = g.add_known("a", 1.0);
        let f = g.add_application("log", &[a], "f", false).unwrap();
        let d = g.add_application("log", &[f], "d", false).unwrap();
        let pure = g.score(d);
        assert_eq!(g.score_cached(d), pure);
        assert_eq!(g.score_cached(d), pure);
        // A better second application on f must propagate to d's cached score.
        let b = g.add_known("b", 1.0);
        g.add_application("mul", &[a, b], "f", false).unwrap();
        let expected = 0.95 * 0.9;
        assert!((g.score(d) - expected).abs() < 1e-12);
        assert!((g.score_cached(d) - expected).abs() < 1e-12);
    }

    fn random_graph(seed: u64, unary_only: bool) -> (DecompositionGraph, Vec<NodeId>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tids = ["log", "square", "mul", "add", "group_by_mean"];
        let w: BTreeMap<String, f64> = tids
            .iter()
            .map(|t| (t.to_string(), rng.random_range(0.0..=1.0)))
            .collect();
        let mut g = DecompositionGraph::with_weights(w);
        let mut ids = Vec::new();
        let n = rng.random_range(3..=12usize);
        for i in 0..n {
            if i < 2 || rng.random_bool(0.4) {
                ids.push(g.add_known(&format!("k{i}"), rng.random_range(0.0..=1.0)));
            } else {
                let name = format!("g{i}");
                let apps = rng.random_range(1..=3usize);
                for _ in 0..apps {
                    let tid = tids[rng.random_range(0..tids.len())];
                    let arity = if unary_only { 1 } else { rng.random_range(1..=3usize) };
                    let ops: Vec<NodeId> = (0..arity)
                        .map(|_| ids[rng.random_range(0..ids.len())])
                        .collect();
                    let flagged = rng.random_bool(0.15);
                    g.add_application(tid, &ops, &name, flagged).unwrap();
                }
                ids.push(g.node_by_name(&name).unwrap());
            }
        }
        (g, ids)
    }

    #[test]
    fn matches_naive_recursion_on_random_dags() {
        for seed in 0..40u64 {
            let (g, ids) = random_graph(seed, false);
            for &id in &ids {
                let fast = g.score(id);
                let slow = naive_score(&g, id);
                assert!((fast - slow).abs() <= 1e-12, "seed {seed} node {id:?}");
            }
        }
    }

    #[test]
    fn matches_path_enumeration_on_unary_dags() {
        for seed in 0..40u64 {
            let (g, ids) = random_graph(seed, true);
            for &id in &ids {
                assert!((g.score(id) - path_oracle(&g, id)).abs() <= 1e-12, "seed {seed}");
            }
        }
    }

    #[test]
    fn monotonicity_properties() {
        for seed in 100..130u64 {
            let (mut g, ids) = random_graph(seed, false);
            for &id in &ids {
                // damping: score never exceeds the best application's operand max
                if g.node(id).kind == NodeKind::Generated {
                    let best_operand = g
                        .applications()
                        .iter()
                        .filter(|a| a.product == id)
                        .flat_map(|a| a.operands.clone())
                        .map(|o| g.score(o))
                        .fold(0.0, f64::max);
                    assert!(g.score(id) <= best_operand + 1e-12, "seed {seed}");
                }
            }
            // adding an application never decreases a node's score
            if let Some(&target) = ids.iter().find(|&&i| g.node(i).kind == NodeKind::Generated)
            {
                let before = g.score(target);
                let root = g.add_known("fresh_root", 1.0);
                let name = g.node(target).name.clone();
                g.add_application("log", &[root], &name, false).unwrap();
                assert!(g.score(target) >= before - 1e-12);
            }
        }
    }

    #[test]
    fn exports_deterministic_and_well_formed() {
        let g = DecompositionGraph::with_weights(weights(&[]));
        assert_eq!(g.export_dot(), "digraph decomposition {\n  rankdir=LR;\n}\n");

        let mut g =
            DecompositionGraph::with_weights(weights(&[("square", 0.9), ("div", 0.95)]));
        let w = g.add_known("weight", 1.0);
        let h = g.add_known("height", 1.0);
        let h2 = g.add_application("square", &[h], "square(height)", false).unwrap();
        g.add_application("div", &[w, h2], "bmi", false).unwrap();
        let dot = g.export_dot();
        assert_eq!(dot, g.export_dot(), "byte-stable");
        assert_eq!(dot.matches(" -> ").count(), 3);
        assert!(dot.contains("\"height\" -> \"square(height)\" [label=\"square\""));

        let json = g.export_json();
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v["nodes"].as_array().unwrap().len(), 4);
        assert_eq!(v["applications"].as_array().unwrap().len(), 2);
        // topological, ties among ready nodes by name
        let names: Vec<&str> = v["nodes"]
            .as_array()
            .unwrap()
            .iter()
            .map(|n| n["name"].as_str().unwrap())
            .collect();
        assert_eq!(names, ["height", "square(height)", "weight", "bmi"]);
        let pos = |n: &str| names.iter().position(|x| *x == n).unwrap();
        assert!(pos("height") < pos("square(height)"));
        assert!(pos("square(height)") < pos("bmi"));
        assert!(pos("weight") < pos("bmi"));
    }

    #[test]
    fn two_node_chain_dot() {
        let mut g = DecompositionGraph::with_weights(weights(&[("log", 0.9)]));
        let x = g.add_known("x", 1.0);
        g.add_application("log", &[x], "log(x)", false).unwrap();
        let dot = g.export_dot();
        assert_eq!(dot.matches(" -> ").count(), 1);
    }
}
