//! The exploration agent: a small from-scratch DQN.
//!
//! States summarise the dataset semantically — one slot per knowledge-graph
//! concept (counting features annotated with it), one per unit dimension
//! group, plus four scalars (feature count, step fraction, last reward, mean
//! interpretability). The Q-network is a 64-64 rectifier MLP with a hard-sync
//! target twin, FIFO replay, and decaying ε-greedy selection. Everything is
//! seeded and single-threaded, so weight trajectories are bit-reproducible.

use std::collections::{BTreeMap, VecDeque};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decomp::DecompositionGraph;
use crate::kg::{KnowledgeBase, UNKNOWN_CONCEPT};
use crate::tabular::Dataset;

pub const HIDDEN: usize = 64;
pub const DEFAULT_SYNC_PERIOD: usize = 50;
pub const DEFAULT_REPLAY_CAPACITY: usize = 2000;
pub const DEFAULT_BATCH: usize = 32;
pub const DEFAULT_LR: f64 = 1e-3;
pub const DEFAULT_GAMMA: f64 = 0.9;

const CHECKPOINT_MAGIC: &[u8; 4] = b"SMFE";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("training diverged at step {step}: loss {loss}")]
    Divergence { step: u64, loss: f64 },
    #[error("no valid action in mask")]
    EmptyMask,
    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
}

// ---------------------------------------------------------------------------
// Semantic state vector

/// Context scalars appended to the concept/unit counts.
#[derive(Debug, Clone, Copy)]
pub struct StepContext {
    pub step: usize,
    pub m: usize,
    pub last_reward: f64,
}

/// Fixed layout of the state vector for one job: concept slots in
/// knowledge-base declaration order (with `Unknown` guaranteed a slot), then
/// unit dimension groups, then the four summary scalars.
#[derive(Debug, Clone)]
pub struct StateSpec {
    concepts: Vec<String>,
    dims: Vec<String>,
    unit_dim: BTreeMap<String, String>,
}

impl StateSpec {
    pub fn from_kb(kb: &KnowledgeBase) -> StateSpec {
        let mut concepts = kb.concepts.clone();
        if !concepts.iter().any(|c| c == UNKNOWN_CONCEPT) {
            concepts.push(UNKNOWN_CONCEPT.to_string());
        }
        let dims: Vec<String> = kb.dimension_groups().iter().map(|s| s.to_string()).collect();
        let unit_dim = kb
            .units
            .iter()
            .map(|u| (u.name.clone(), u.dim.clone()))
            .collect();
        StateSpec {
            concepts,
            dims,
            unit_dim,
        }
    }

    pub fn len(&self) -> usize {
        self.concepts.len() + self.dims.len() + 4
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Concept slot = number of features annotated with that concept
    /// (unannotated features count as `Unknown`); dimension slot = number of
    /// features whose unit mentions a base unit of that group.
    pub fn vectorize(
        &self,
        d: &Dataset,
        g: &DecompositionGraph,
        ctx: &StepContext,
    ) -> Vec<f64> {
        let mut v = vec![0.0; self.len()];
        let n_dims = self.dims.len();
        for col in d.features() {
            let concept = col.concept.as_deref().unwrap_or(UNKNOWN_CONCEPT);
            let slot = self
                .concepts
                .iter()
                .position(|c| c == concept)
                .unwrap_or_else(|| {
                    self.concepts
                        .iter()
                        .position(|c| c == UNKNOWN_CONCEPT)
                        .expect("Unknown slot always present")
                });
            v[slot] += 1.0;
            if let Some(unit) = &col.unit {
                for di in 0..n_dims {
                    let mentions = unit.0.iter().any(|(base, exp)| {
                        *exp != 0 && self.unit_dim.get(base).map(String::as_str)
                            == Some(self.dims[di].as_str())
                    });
                    if mentions {
                        v[self.concepts.len() + di] += 1.0;
                    }
                }
            }
        }
        let mut interp_sum = 0.0;
        let mut interp_n = 0usize;
        for col in d.features() {
            if let Some(id) = g.node_by_name(&col.name) {
                interp_sum += g.score(id);
                interp_n += 1;
            }
        }
        let base = self.concepts.len() + n_dims;
        v[base] = d.n_features() as f64;
        v[base + 1] = if ctx.m == 0 {
            0.0
        } else {
            ctx.step as f64 / ctx.m as f64
        };
        v[base + 2] = ctx.last_reward;
        v[base + 3] = if interp_n == 0 {
            0.0
        } else {
            interp_sum / interp_n as f64
        };
        v
    }
}

// ---------------------------------------------------------------------------
// Q-network

/// Fully connected `input -> 64 -> 64 -> output` with rectifier hidden units
/// and identity output. Weights are row-major `[out][in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct QNetwork {
    dims: Vec<usize>,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

impl QNetwork {
    /// Seeded uniform init in ±sqrt(6/(fan_in+fan_out)); zero biases.
    pub fn new(input: usize, output: usize, seed: u64) -> QNetwork {
        let dims = vec![input, HIDDEN, HIDDEN, output];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in 0..dims.len() - 1 {
            let (fan_in, fan_out) = (dims[l], dims[l + 1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            weights.push(
                (0..fan_in * fan_out)
                    .map(|_| rng.random_range(-bound..bound))
                    .collect(),
            );
            biases.push(vec![0.0; fan_out]);
        }
        QNetwork {
            dims,
            weights,
            biases,
        }
    }

    pub fn input_len(&self) -> usize {
        self.dims[0]
    }

    pub fn output_len(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    fn layer_forward(&self, l: usize, x: &[f64]) -> Vec<f64> {
        let (n_in, n_out) = (self.dims[l], self.dims[l + 1]);
        let w = &self.weights[l];
        let b = &self.biases[l];
        (0..n_out)
            .map(|o| {
                let row = &w[o * n_in..(o + 1) * n_in];
                b[o] + row.iter().zip(x).map(|(wi, xi)| wi * xi).sum::<f64>()
            })
            .collect()
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.dims[0]);
        let mut a = x.to_vec();
        for l in 0..self.dims.len() - 1 {
            let mut z = self.layer_forward(l, &a);
            if l < self.dims.len() - 2 {
                for v in &mut z {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
            a = z;
        }
        a
    }

    /// Forward pass keeping pre-activations for backprop.
    fn forward_cached(&self, x: &[f64]) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut acts = vec![x.to_vec()];
        let mut a = x.to_vec();
        for l in 0..self.dims.len() - 1 {
            let mut z = self.layer_forward(l, &a);
            if l < self.dims.len() - 2 {
                for v in &mut z {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
            a = z.clone();
            acts.push(z);
        }
        let out = acts.pop().unwrap();
        (acts, out)
    }

    pub fn n_params(&self) -> usize {
        self.weights.iter().map(Vec::len).sum::<usize>()
            + self.biases.iter().map(Vec::len).sum::<usize>()
    }

    /// Parameters flattened layer by layer, weights before biases.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in 0..self.weights.len() {
            out.extend_from_slice(&self.weights[l]);
            out.extend_from_slice(&self.biases[l]);
        }
        out
    }

    pub fn set_flat_params(&mut self, params: &[f64]) {
        assert_eq!(params.len(), self.n_params());
        let mut i = 0;
        for l in 0..self.weights.len() {
            let wn = self.weights[l].len();
            self.weights[l].copy_from_slice(&params[i..i + wn]);
            i += wn;
            let bn = self.biases[l].len();
            self.biases[l].copy_from_slice(&params[i..i + bn]);
            i += bn;
        }
    }

    /// Mean squared TD loss and its gradient (flattened like
    /// [`flat_params`]) against fixed per-sample targets.
    pub fn loss_and_grad(
        &self,
        states: &[&[f64]],
        actions: &[usize],
        targets: &[f64],
    ) -> (f64, Vec<f64>) {
        let n = states.len() as f64;
        let mut grad_w: Vec<Vec<f64>> = self.weights.iter().map(|w| vec![0.0; w.len()]).collect();
        let mut grad_b: Vec<Vec<f64>> = self.biases.iter().map(|b| vec![0.0; b.len()]).collect();
        let mut loss = 0.0;
        for ((s, &a), &t) in states.iter().zip(actions).zip(targets) {
            let (acts, out) = self.forward_cached(s);
            let err = out[a] - t;
            loss += err * err;
            // dL/d out[a] for the mean over the batch
            let mut delta = vec![0.0; out.len()];
            delta[a] = 2.0 * err / n;
            for l in (0..self.weights.len()).rev() {
                let (n_in, n_out) = (self.dims[l], self.dims[l + 1]);
                let a_prev = &acts[l];
                for o in 0..n_out {
                    if delta[o] == 0.0 {
                        continue;
                    }
                    grad_b[l][o] += delta[o];
                    let row = &mut grad_w[l][o * n_in..(o + 1) * n_in];
                    for (gi, ai) in row.iter_mut().zip(a_prev) {
                        *gi += delta[o] * ai;
                    }
                }
                if l > 0 {
                    let mut prev = vec![0.0; n_in];
                    for o in 0..n_out {
                        if delta[o] == 0.0 {
                            continue;
                        }
                        let row = &self.weights[l][o * n_in..(o + 1) * n_in];
                        for (p, wi) in prev.iter_mut().zip(row) {
                            *p += delta[o] * wi;
                        }
                    }
                    // rectifier derivative: the cached activation is already
                    // max(0, z), so a zero activation means a dead unit
                    for (p, ai) in prev.iter_mut().zip(a_prev) {
                        if *ai <= 0.0 {
                            *p = 0.0;
                        }
                    }
                    delta = prev;
                }
            }
        }
        let mut flat = Vec::with_capacity(self.n_params());
        for l in 0..grad_w.len() {
            flat.extend_from_slice(&grad_w[l]);
            flat.extend_from_slice(&grad_b[l]);
        }
        (loss / n, flat)
    }

    fn sgd_step(&mut self, grad: &[f64], lr: f64) {
        let mut i = 0;
        for l in 0..self.weights.len() {
            for w in &mut self.weights[l] {
                *w -= lr * grad[i];
                i += 1;
            }
            for b in &mut self.biases[l] {
                *b -= lr * grad[i];
                i += 1;
            }
        }
    }

    fn all_finite(&self) -> bool {
        self.weights
            .iter()
            .chain(self.biases.iter())
            .all(|v| v.iter().all(|x| x.is_finite()))
    }

    // -- checkpoint format: magic "SMFE", version u32, layer count u32,
    //    dims u32 each, then per layer row-major weights and biases as
    //    little-endian f64.

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), AgentError> {
        let mut buf = Vec::new();
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.dims.len() as u32).to_le_bytes());
        for d in &self.dims {
            buf.extend_from_slice(&(*d as u32).to_le_bytes());
        }
        for l in 0..self.weights.len() {
            for v in self.weights[l].iter().chain(self.biases[l].iter()) {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<QNetwork, AgentError> {
        let raw = std::fs::read(path)?;
        let mut at = 0usize;
        let take = |at: &mut usize, n: usize| -> Result<&[u8], AgentError> {
            if *at + n > raw.len() {
                return Err(AgentError::BadCheckpoint("truncated".to_string()));
            }
            let s = &raw[*at..*at + n];
            *at += n;
            Ok(s)
        };
        if take(&mut at, 4)? != CHECKPOINT_MAGIC {
            return Err(AgentError::BadCheckpoint("bad magic".to_string()));
        }
        let version = u32::from_le_bytes(take(&mut at, 4)?.try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(AgentError::BadCheckpoint(format!(
                "unsupported version {version}"
            )));
        }
        let n_dims = u32::from_le_bytes(take(&mut at, 4)?.try_into().unwrap()) as usize;
        if n_dims < 2 || n_dims > 16 {
            return Err(AgentError::BadCheckpoint(format!(
                "implausible layer count {n_dims}"
            )));
        }
        let mut dims = Vec::with_capacity(n_dims);
        for _ in 0..n_dims {
            dims.push(u32::from_le_bytes(take(&mut at, 4)?.try_into().unwrap()) as usize);
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in 0..n_dims - 1 {
            let wn = dims[l] * dims[l + 1];
            let mut w = Vec::with_capacity(wn);
            for _ in 0..wn {
                w.push(f64::from_le_bytes(take(&mut at, 8)?.try_into().unwrap()));
            }
            let mut b = Vec::with_capacity(dims[l + 1]);
            for _ in 0..dims[l + 1] {
                b.push(f64::from_le_bytes(take(&mut at, 8)?.try_into().unwrap()));
            }
            weights.push(w);
            biases.push(b);
        }
        if at != raw.len() {
            return Err(AgentError::BadCheckpoint("trailing bytes".to_string()));
        }
        Ok(QNetwork {
            dims,
            weights,
            biases,
        })
    }
}

// ---------------------------------------------------------------------------
// Replay buffer

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub s: Vec<f64>,
    pub a: usize,
    pub r: f64,
    pub s_next: Vec<f64>,
    pub terminal: bool,
}

#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    buf: VecDeque<Transition>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> ReplayBuffer {
        ReplayBuffer {
            capacity,
            buf: VecDeque::new(),
        }
    }

    pub fn push(&mut self, t: Transition) {
        if self.buf.len() == self.capacity {
            self.buf.pop_front();
        }
        self.buf.push_back(t);
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub fn contains(&self, t: &Transition) -> bool {
        self.buf.contains(t)
    }

    /// Uniform with replacement.
    pub fn sample(&self, batch: usize, rng: &mut ChaCha8Rng) -> Vec<&Transition> {
        (0..batch)
            .map(|_| &self.buf[rng.random_range(0..self.buf.len())])
            .collect()
    }
}

// ---------------------------------------------------------------------------
// ε schedule and action selection

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EpsilonSchedule {
    pub eps0: f64,
    pub eps_min: f64,
    pub decay: f64,
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        EpsilonSchedule {
            eps0: 1.0,
            eps_min: 0.05,
            decay: 0.97,
        }
    }
}

impl EpsilonSchedule {
    pub fn value(&self, episode: usize) -> f64 {
        (self.eps0 * self.decay.powi(episode as i32)).max(self.eps_min)
    }
}

/// Greedy argmax over valid actions; ties break to the lowest index.
pub(crate) fn argmax_masked(scores: &[f64], mask: &[bool]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, (&s, &ok)) in scores.iter().zip(mask).enumerate() {
        if !ok {
            continue;
        }
        match best {
            Some(b) if scores[b] >= s => {}
            _ => best = Some(i),
        }
    }
    best
}

/// ε-greedy over the masked action set.
pub fn select_action(
    q: &QNetwork,
    s: &[f64],
    epsilon: f64,
    mask: &[bool],
    rng: &mut ChaCha8Rng,
) -> Result<usize, AgentError> {
    let valid: Vec<usize> = mask
        .iter()
        .enumerate()
        .filter_map(|(i, &ok)| ok.then_some(i))
        .collect();
    if valid.is_empty() {
        return Err(AgentError::EmptyMask);
    }
    if rng.random::<f64>() < epsilon {
        return Ok(valid[rng.random_range(0..valid.len())]);
    }
    let scores = q.forward(s);
    Ok(argmax_masked(&scores, mask).expect("mask checked nonempty"))
}

// ---------------------------------------------------------------------------
// TD update and target sync

/// One TD step: targets `r + γ·max Q̂(s′)` (bootstrap dropped on terminal),
/// mean squared loss, single SGD step on the main network. Returns the
/// pre-step loss.
pub fn td_update(
    q: &mut QNetwork,
    target: &QNetwork,
    batch: &[&Transition],
    gamma: f64,
    lr: f64,
) -> Result<f64, AgentError> {
    assert!(!batch.is_empty(), "td_update needs a nonempty batch");
    let targets: Vec<f64> = batch
        .iter()
        .map(|t| {
            if t.terminal {
                t.r
            } else {
                let qn = target.forward(&t.s_next);
                t.r + gamma * qn.iter().copied().fold(f64::NEG_INFINITY, f64::max)
            }
        })
        .collect();
    let states: Vec<&[f64]> = batch.iter().map(|t| t.s.as_slice()).collect();
    let actions: Vec<usize> = batch.iter().map(|t| t.a).collect();
    let (loss, grad) = q.loss_and_grad(&states, &actions, &targets);
    if !loss.is_finite() {
        return Err(AgentError::Divergence { step: 0, loss });
    }
    q.sgd_step(&grad, lr);
    if !q.all_finite() {
        return Err(AgentError::Divergence { step: 0, loss });
    }
    Ok(loss)
}

/// Hard copy of main-network weights into the target twin.
pub fn sync_target(q: &QNetwork, target: &mut QNetwork) {
    target.clone_from(q);
}

/// One line of the per-step training log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainLogEntry {
    pub episode: usize,
    pub step: usize,
    pub epsilon: f64,
    pub loss: Option<f64>,
    pub reward: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::parse_kg_str;

    const KG: &str = "\
concept Mass\nconcept Height\nconcept Date\n\
unit kilogram dim mass\nunit metre dim length\n\
map weight* -> concept:Mass unit:kilogram\nmap height -> concept:Height unit:metre\n";

    fn toy_state_spec() -> StateSpec {
        StateSpec::from_kb(&parse_kg_str(KG).unwrap())
    }

    #[test]
    fn state_layout_counts_concepts_and_units() {
        use crate::kg::map_columns;
        use crate::tabular::{Column, Task};
        let kb = parse_kg_str(KG).unwrap();
        let spec = StateSpec::from_kb(&kb);
        // 3 concepts + Unknown + 2 dims + 4 scalars
        assert_eq!(spec.len(), 4 + 2 + 4);
        let cols = vec![
            Column::numeric("weight_a", vec![Some(1.0)]),
            Column::numeric("weight_b", vec![Some(2.0)]),
            Column::numeric("height", vec![Some(3.0)]),
            Column::numeric("y", vec![Some(0.0)]),
        ];
        let d = map_columns(&kb, &crate::tabular::Dataset::new(cols, "y", Task::Regression).unwrap())
            .unwrap();
        let mut g = DecompositionGraph::from_kb(&kb);
        for c in d.features() {
            g.add_known(&c.name, 1.0);
        }
        let ctx = StepContext {
            step: 1,
            m: 5,
            last_reward: 0.25,
        };
        let v = spec.vectorize(&d, &g, &ctx);
        assert_eq!(v[0], 2.0, "two Mass features");
        assert_eq!(v[1], 1.0, "one Height feature");
        assert_eq!(v[2], 0.0, "no Date features");
        assert_eq!(v[3], 0.0, "no Unknown features");
        assert_eq!(v[4], 2.0, "mass dimension mentioned by two features");
        assert_eq!(v[5], 1.0, "length dimension mentioned once");
        assert_eq!(v[6], 3.0, "feature count");
        assert_eq!(v[7], 0.2, "step fraction");
        assert_eq!(v[8], 0.25, "last reward");
        assert_eq!(v[9], 1.0, "mean interpretability");
    }

    #[test]
    fn empty_feature_set_zero_concept_slots() {
        use crate::tabular::{Column, Task};
        let kb = parse_kg_str(KG).unwrap();
        let spec = StateSpec::from_kb(&kb);
        let d = crate::tabular::Dataset::new(
            vec![Column::numeric("y", vec![Some(1.0)])],
            "y",
            Task::Regression,
        )
        .unwrap();
        let g = DecompositionGraph::from_kb(&kb);
        let v = spec.vectorize(
            &d,
            &g,
            &StepContext {
                step: 0,
                m: 5,
                last_reward: 0.0,
            },
        );
        assert!(v[..6].iter().all(|&x| x == 0.0));
        assert_eq!(v[6], 0.0);
    }

    #[test]
    fn network_shape_and_seeded_init() {
        let q = QNetwork::new(10, 5, 7);
        assert_eq!(q.dims(), &[10, HIDDEN, HIDDEN, 5]);
        assert_eq!(q.forward(&vec![0.1; 10]).len(), 5);
        let q2 = QNetwork::new(10, 5, 7);
        assert_eq!(q, q2, "same seed, same weights");
        let q3 = QNetwork::new(10, 5, 8);
        assert_ne!(q, q3, "different seed, different weights");
        // init bound respected on the first layer
        let bound = (6.0 / (10.0 + HIDDEN as f64)).sqrt();
        assert!(q.weights[0].iter().all(|w| w.abs() < bound));
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut q = QNetwork::new(3, 2, 11);
        let states: Vec<Vec<f64>> = vec![vec![0.3, -0.7, 1.2], vec![-0.1, 0.4, 0.9]];
        let refs: Vec<&[f64]> = states.iter().map(Vec::as_slice).collect();
        let actions = vec![0usize, 1usize];
        let targets = vec![0.8, -0.3];
        let (_, grad) = q.loss_and_grad(&refs, &actions, &targets);
        let params = q.flat_params();
        let eps = 1e-6;
        // probe a spread of parameters across all layers
        let n = params.len();
        let probes: Vec<usize> = (0..n).step_by((n / 97).max(1)).collect();
        for &i in &probes {
            let mut up = params.clone();
            let mut dn = params.clone();
            up[i] += eps;
            dn[i] -= eps;
            q.set_flat_params(&up);
            let (lu, _) = q.loss_and_grad(&refs, &actions, &targets);
            q.set_flat_params(&dn);
            let (ld, _) = q.loss_and_grad(&refs, &actions, &targets);
            let fd = (lu - ld) / (2.0 * eps);
            let denom = fd.abs().max(grad[i].abs()).max(1e-8);
            assert!(
                (grad[i] - fd).abs() / denom <= 1e-4,
                "param {i}: analytic {} vs fd {fd}",
                grad[i]
            );
        }
        q.set_flat_params(&params);
    }

    #[test]
    fn td_fixed_point_and_direct_loss() {
        // gamma=0: target is r; craft a net so Q(s,a) is known via forward
        let mut q = QNetwork::new(2, 2, 3);
        let target = q.clone();
        let s = vec![0.5, -0.5];
        let q_sa = q.forward(&s)[0];
        let batch = [Transition {
            s: s.clone(),
            a: 0,
            r: q_sa,
            s_next: s.clone(),
            terminal: true,
        }];
        let refs: Vec<&Transition> = batch.iter().collect();
        let loss = td_update(&mut q, &target, &refs, 0.0, 1e-3).unwrap();
        assert!(loss.abs() < 1e-24, "exact fixed point, loss {loss}");

        let batch = [Transition {
            s: s.clone(),
            a: 0,
            r: q.forward(&s)[0] + 1.0,
            s_next: s,
            terminal: true,
        }];
        let refs: Vec<&Transition> = batch.iter().collect();
        let loss = td_update(&mut q, &target, &refs, 0.0, 0.0).unwrap();
        assert!((loss - 1.0).abs() < 1e-12, "unit error, loss {loss}");
    }

    #[test]
    fn terminal_drops_bootstrap() {
        let mut q = QNetwork::new(2, 2, 5);
        let target = QNetwork::new(2, 2, 6);
        let s = vec![1.0, 1.0];
        let q_sa = q.forward(&s)[0];
        // terminal: target is plain r regardless of s_next values
        let batch = [Transition {
            s: s.clone(),
            a: 0,
            r: q_sa,
            s_next: vec![100.0, 100.0],
            terminal: true,
        }];
        let refs: Vec<&Transition> = batch.iter().collect();
        let loss = td_update(&mut q, &target, &refs, 0.9, 0.0).unwrap();
        assert!(loss.abs() < 1e-24);
    }

    #[test]
    fn replay_fifo_eviction() {
        let mut buf = ReplayBuffer::new(5);
        let mk = |i: usize| Transition {
            s: vec![i as f64],
            a: 0,
            r: 0.0,
            s_next: vec![0.0],
            terminal: false,
        };
        for i in 0..8 {
            buf.push(mk(i));
        }
        assert_eq!(buf.len(), 5);
        for i in 0..3 {
            assert!(!buf.contains(&mk(i)), "transition {i} evicted");
        }
        for i in 3..8 {
            assert!(buf.contains(&mk(i)));
        }
    }

    #[test]
    fn epsilon_schedule_decays_to_floor() {
        let sched = EpsilonSchedule::default();
        assert_eq!(sched.value(0), 1.0);
        assert!((sched.value(1) - 0.97).abs() < 1e-12);
        assert!(sched.value(200) == 0.05, "floor reached");
        let mut prev = f64::INFINITY;
        for e in 0..300 {
            let v = sched.value(e);
            assert!(v <= prev);
            prev = v;
        }
    }

    #[test]
    fn greedy_selection_and_masking() {
        let q = QNetwork::new(toy_state_spec().len(), 3, 1);
        let s = vec![0.0; toy_state_spec().len()];
        let scores = q.forward(&s);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let all = vec![true; 3];
        let pick = select_action(&q, &s, 0.0, &all, &mut rng).unwrap();
        assert_eq!(Some(pick), argmax_masked(&scores, &all));
        // mask out the argmax; the next-best valid action wins
        let mut mask = all.clone();
        mask[pick] = false;
        let second = select_action(&q, &s, 0.0, &mask, &mut rng).unwrap();
        assert_ne!(second, pick);
        assert_eq!(Some(second), argmax_masked(&scores, &mask));
        assert!(matches!(
            select_action(&q, &s, 0.0, &[false, false, false], &mut rng),
            Err(AgentError::EmptyMask)
        ));
    }

    #[test]
    fn argmax_ties_take_lowest_index_and_scale_invariance() {
        let scores = vec![0.4, 0.9, 0.9, 0.1];
        let mask = vec![true; 4];
        assert_eq!(argmax_masked(&scores, &mask), Some(1));
        for c in [0.5, 2.0, 1e6] {
            let scaled: Vec<f64> = scores.iter().map(|s| s * c).collect();
            assert_eq!(argmax_masked(&scaled, &mask), Some(1));
        }
    }

    #[test]
    fn epsilon_one_is_uniform_over_valid() {
        let q = QNetwork::new(4, 5, 2);
        let s = vec![0.1; 4];
        let mask = vec![true, false, true, true, false];
        let mut rng = ChaCha8Rng::seed_from_u64(1234);
        let draws = 10_000;
        let mut counts = [0usize; 5];
        for _ in 0..draws {
            counts[select_action(&q, &s, 1.0, &mask, &mut rng).unwrap()] += 1;
        }
        assert_eq!(counts[1] + counts[4], 0, "invalid actions never picked");
        let expected = draws as f64 / 3.0;
        let chi2: f64 = [0, 2, 3]
            .iter()
            .map(|&i| (counts[i] as f64 - expected).powi(2) / expected)
            .sum();
        // df=2; 13.8 is the 0.1% critical value
        assert!(chi2 < 13.8, "chi2 {chi2}, counts {counts:?}");
    }

    #[test]
    fn sync_copies_and_then_freezes_target() {
        let mut q = QNetwork::new(3, 2, 9);
        let mut target = QNetwork::new(3, 2, 10);
        let s = vec![0.2, -0.4, 0.6];
        assert_ne!(q.forward(&s), target.forward(&s));
        sync_target(&q, &mut target);
        assert_eq!(q.forward(&s), target.forward(&s));
        let frozen = target.forward(&s);
        // main-network updates leave the target untouched until the next sync
        let batch = [Transition {
            s: s.clone(),
            a: 0,
            r: 5.0,
            s_next: s.clone(),
            terminal: true,
        }];
        let refs: Vec<&Transition> = batch.iter().collect();
        for _ in 0..10 {
            td_update(&mut q, &target, &refs, 0.9, 0.01).unwrap();
        }
        assert_eq!(target.forward(&s), frozen);
        assert_ne!(q.forward(&s), frozen);
    }

    #[test]
    fn checkpoint_round_trip_and_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.smfe");
        let q = QNetwork::new(6, 4, 21);
        q.save(&path).unwrap();
        let back = QNetwork::load(&path).unwrap();
        assert_eq!(q, back);
        let s = vec![0.3; 6];
        assert_eq!(q.forward(&s), back.forward(&s));

        let mut raw = std::fs::read(&path).unwrap();
        raw[0] = b'X';
        let bad = dir.path().join("bad.smfe");
        std::fs::write(&bad, &raw).unwrap();
        assert!(matches!(
            QNetwork::load(&bad),
            Err(AgentError::BadCheckpoint(_))
        ));

        let truncated = dir.path().join("short.smfe");
        let raw = std::fs::read(&path).unwrap();
        std::fs::write(&truncated, &raw[..raw.len() / 2]).unwrap();
        assert!(matches!(
            QNetwork::load(&truncated),
            Err(AgentError::BadCheckpoint(_))
        ));
    }

    #[test]
    fn reproducible_weight_trajectories() {
        let run = || {
            let mut q = QNetwork::new(3, 2, 77);
            let mut target = q.clone();
            let mut buf = ReplayBuffer::new(100);
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            for i in 0..50 {
                buf.push(Transition {
                    s: vec![i as f64 / 50.0, 0.5, -0.5],
                    a: i % 2,
                    r: (i % 3) as f64,
                    s_next: vec![(i + 1) as f64 / 50.0, 0.5, -0.5],
                    terminal: i % 7 == 0,
                });
            }
            for step in 0..200 {
                let batch = buf.sample(DEFAULT_BATCH, &mut rng);
                td_update(&mut q, &target, &batch, DEFAULT_GAMMA, DEFAULT_LR).unwrap();
                if (step + 1) % DEFAULT_SYNC_PERIOD == 0 {
                    sync_target(&q, &mut target);
                }
            }
            q.flat_params()
        };
        assert_eq!(run(), run(), "bit-identical trajectories");
    }

    #[test]
    fn toy_mdp_converges_to_optimal_q() {
        // Chain MDP: s0 --advance--> s1 --advance--> s2 (reward 1, terminal);
        // "wait" stays put with reward 0. With gamma=0.9:
        //   Q*(s1,advance)=1, Q*(s1,wait)=0.9, Q*(s0,advance)=0.9,
        //   Q*(s0,wait)=0.81.
        let gamma = 0.9;
        let enc = |s: usize| {
            let mut v = vec![0.0; 3];
            v[s] = 1.0;
            v
        };
        let transitions = [
            (0usize, 0usize, 0.0, 1usize, false),
            (0, 1, 0.0, 0, false),
            (1, 0, 1.0, 2, true),
            (1, 1, 0.0, 1, false),
        ];
        let q_star = [(0, 0, 0.9), (0, 1, 0.81), (1, 0, 1.0), (1, 1, 0.9)];

        let mut q = QNetwork::new(3, 2, 2024);
        let mut target = q.clone();
        let mut buf = ReplayBuffer::new(DEFAULT_REPLAY_CAPACITY);
        for &(s, a, r, sn, term) in &transitions {
            buf.push(Transition {
                s: enc(s),
                a,
                r,
                s_next: enc(sn),
                terminal: term,
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        // lr raised above the job default so the bound lands well inside
        // the 5000-step budget
        let lr = 0.01;
        let mut converged_at = None;
        for step in 0..5000 {
            let batch = buf.sample(DEFAULT_BATCH, &mut rng);
            td_update(&mut q, &target, &batch, gamma, lr).unwrap();
            if (step + 1) % DEFAULT_SYNC_PERIOD == 0 {
                sync_target(&q, &mut target);
            }
            if step % 100 == 99 {
                let err = q_star
                    .iter()
                    .map(|&(s, a, opt)| (q.forward(&enc(s))[a] - opt).abs())
                    .fold(0.0f64, f64::max);
                if err < 0.05 {
                    converged_at = Some(step + 1);
                    break;
                }
            }
        }
        let err = q_star
            .iter()
            .map(|&(s, a, opt)| (q.forward(&enc(s))[a] - opt).abs())
            .fold(0.0f64, f64::max);
        assert!(
            err < 0.05,
            "max |Q - Q*| = {err} after 5000 steps (converged_at {converged_at:?})"
        );
    }
}
