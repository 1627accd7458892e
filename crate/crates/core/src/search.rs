//! The exploration loop: a seeded MDP over transformation compositions.
//!
//! An action picks a transform from the catalog; the environment applies it
//! to every valid operand tuple, ranks the candidate columns by train-fold
//! relevance to the target, keeps the best `top_k`, and rewards the agent
//! with `λ·Δperformance + (1−λ)·mean-interpretability(new features)`. The
//! reported objective of a state is `λ·performance + (1−λ)·mean
//! interpretability` over all features, and the best-seen state (including
//! the untouched step-0 baseline) wins. A uniform-random policy with the
//! same budget and an exhaustive small-depth oracle serve as yardsticks.

use num_bigint::BigUint;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{
    select_action, sync_target, td_update, AgentError, EpsilonSchedule, QNetwork, ReplayBuffer,
    StateSpec, StepContext, TrainLogEntry, Transition, DEFAULT_BATCH, DEFAULT_GAMMA, DEFAULT_LR,
    DEFAULT_REPLAY_CAPACITY, DEFAULT_SYNC_PERIOD,
};
use crate::decomp::{DecompError, DecompositionGraph, NodeId};
use crate::evaluator::{relevance_on_rows, EvalError, PerformanceEvaluator};
use crate::exec;
use crate::kg::KnowledgeBase;
use crate::tabular::{append_feature, make_folds, Column, DataError, Dataset, FoldPlan};
use crate::transforms::{agent_actions, applicable_operands, apply, TransformSpec};

pub const DEFAULT_LAMBDA: f64 = 0.7;
pub const DEFAULT_M: usize = 5;
pub const DEFAULT_EPISODES: usize = 50;
pub const DEFAULT_TOP_K: usize = 8;
pub const DEFAULT_BOOTSTRAP_ROWS: usize = 5000;
pub const DEFAULT_K_FOLDS: usize = 5;
/// Most candidate pipelines the exhaustive oracle will evaluate.
pub const ORACLE_BUDGET: u64 = 100_000;
pub const ORACLE_MAX_DEPTH: usize = 2;

#[derive(Debug, Error)]
pub enum SearchError {
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Graph(#[from] DecompError),
    #[error("bad search config: {0}")]
    Config(String),
    #[error("oracle budget exceeded: {count} candidate pipelines > {budget}")]
    OracleBudget { count: BigUint, budget: u64 },
}

/// Agent hyperparameters; conventional DQN defaults.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentHyper {
    pub lr: f64,
    pub gamma: f64,
    pub batch: usize,
    pub sync_period: usize,
    pub replay_capacity: usize,
    pub epsilon: EpsilonSchedule,
}

impl Default for AgentHyper {
    fn default() -> Self {
        AgentHyper {
            lr: DEFAULT_LR,
            gamma: DEFAULT_GAMMA,
            batch: DEFAULT_BATCH,
            sync_period: DEFAULT_SYNC_PERIOD,
            replay_capacity: DEFAULT_REPLAY_CAPACITY,
            epsilon: EpsilonSchedule::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    pub lambda: f64,
    /// Maximum transformations per episode.
    pub m: usize,
    pub episodes: usize,
    /// New features kept per action.
    pub top_k: usize,
    /// Drop rule-flagged candidates instead of keeping them at score 0.
    pub drop_noninterp: bool,
    /// Row cap for in-search evaluation; `None` disables sampling.
    pub bootstrap_rows: Option<usize>,
    pub k_folds: usize,
    pub seed: u64,
    pub agent: AgentHyper,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            lambda: DEFAULT_LAMBDA,
            m: DEFAULT_M,
            episodes: DEFAULT_EPISODES,
            top_k: DEFAULT_TOP_K,
            drop_noninterp: false,
            bootstrap_rows: Some(DEFAULT_BOOTSTRAP_ROWS),
            k_folds: DEFAULT_K_FOLDS,
            seed: 0,
            agent: AgentHyper::default(),
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<(), SearchError> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(SearchError::Config(format!(
                "lambda must be in [0, 1], got {}",
                self.lambda
            )));
        }
        if self.m == 0 {
            return Err(SearchError::Config("m must be at least 1".to_string()));
        }
        if self.top_k == 0 {
            return Err(SearchError::Config("top_k must be at least 1".to_string()));
        }
        if self.k_folds < 2 {
            return Err(SearchError::Config(
                "k_folds must be at least 2".to_string(),
            ));
        }
        Ok(())
    }
}

/// One kept feature: the column name, how it was made, and its
/// interpretability score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppliedFeature {
    pub name: String,
    pub transform: String,
    pub operands: Vec<String>,
    pub interp: f64,
}

/// One pipeline step: the chosen transform and the features it contributed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineStep {
    pub transform: String,
    pub features: Vec<AppliedFeature>,
}

#[derive(Debug)]
pub struct PipelineResult {
    pub best_pipeline: Vec<PipelineStep>,
    pub best_dataset: Dataset,
    pub graph: DecompositionGraph,
    /// Objective at each step of the winning episode prefix, starting at the
    /// baseline.
    pub perf_trace: Vec<f64>,
    pub interp_trace: Vec<f64>,
    pub objective: f64,
    pub best_perf: f64,
    pub best_interp: f64,
    pub train_log: Vec<TrainLogEntry>,
    pub warnings: Vec<String>,
}

/// `λ·Δ𝒫 + (1−λ)·mean interpretability of the new features`.
pub fn scalarized_reward(lambda: f64, delta_perf: f64, new_feature_interp: f64) -> f64 {
    lambda * delta_perf + (1.0 - lambda) * new_feature_interp
}

/// Mean interpretability over all features of `d` present in `g`.
pub fn dataset_mean_interp(d: &Dataset, g: &DecompositionGraph) -> f64 {
    let ids: Vec<NodeId> = d
        .features()
        .filter_map(|c| g.node_by_name(&c.name))
        .collect();
    g.dataset_interpretability(&ids)
}

fn role_seed(seed: u64, role: &str) -> u64 {
    // FNV-1a over the seed bytes then the role name
    let mut h: u64 = 0xcbf29ce484222325;
    for b in seed.to_le_bytes().iter().chain(role.as_bytes()) {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

// ---------------------------------------------------------------------------
// Environment

struct Env<'a> {
    kb: &'a KnowledgeBase,
    cfg: &'a SearchConfig,
    eval: &'a dyn PerformanceEvaluator,
    actions: Vec<&'static TransformSpec>,
    state_spec: StateSpec,
    eval_rows: Option<Vec<usize>>,
    d0: Dataset,
    g0: DecompositionGraph,
    folds: FoldPlan,
    fold_train_rows: Vec<Vec<usize>>,
    perf0: f64,
    interp0: f64,
}

impl<'a> Env<'a> {
    fn new(
        d_full: &Dataset,
        g_full: &DecompositionGraph,
        kb: &'a KnowledgeBase,
        cfg: &'a SearchConfig,
        eval: &'a dyn PerformanceEvaluator,
    ) -> Result<Env<'a>, SearchError> {
        let eval_rows = match cfg.bootstrap_rows {
            Some(cap) if d_full.n_rows > cap => {
                let mut rng = ChaCha8Rng::seed_from_u64(role_seed(cfg.seed, "bootstrap"));
                let mut idx: Vec<usize> = (0..d_full.n_rows).collect();
                idx.shuffle(&mut rng);
                idx.truncate(cap);
                idx.sort_unstable();
                Some(idx)
            }
            _ => None,
        };
        let d0 = match &eval_rows {
            Some(rows) => d_full.subset(rows),
            None => d_full.clone(),
        };
        let g0 = g_full.clone();
        let folds = make_folds(&d0, cfg.k_folds, role_seed(cfg.seed, "folds"))?;
        let fold_train_rows: Vec<Vec<usize>> = (0..folds.k).map(|f| folds.train_rows(f)).collect();
        let perf0 = eval.evaluate(&d0, &folds)?.mean;
        let interp0 = dataset_mean_interp(&d0, &g0);
        Ok(Env {
            kb,
            cfg,
            eval,
            actions: agent_actions(),
            state_spec: StateSpec::from_kb(kb),
            eval_rows,
            d0,
            g0,
            folds,
            fold_train_rows,
            perf0,
            interp0,
        })
    }

    fn objective(&self, perf: f64, interp: f64) -> f64 {
        self.cfg.lambda * perf + (1.0 - self.cfg.lambda) * interp
    }

    fn action_mask(&self, d: &Dataset) -> Vec<bool> {
        self.actions
            .iter()
            .map(|spec| {
                let tuples = applicable_operands(spec, d, self.kb);
                if self.cfg.drop_noninterp {
                    tuples.iter().any(|t| !t.flagged)
                } else {
                    !tuples.is_empty()
                }
            })
            .collect()
    }

    /// Mean train-fold relevance of a candidate column to the target.
    fn candidate_relevance(&self, col: &Column, d: &Dataset) -> f64 {
        let target = d.target_column();
        let total: f64 = self
            .fold_train_rows
            .iter()
            .map(|rows| relevance_on_rows(col, target, d.task, rows))
            .sum();
        total / self.fold_train_rows.len() as f64
    }

    /// Applies one action: transform over all valid tuples, candidates ranked
    /// by relevance, `top_k` appended. Empty candidate sets yield reward 0.
    fn apply_action(
        &self,
        d: &Dataset,
        g: &DecompositionGraph,
        perf_prev: f64,
        action: usize,
    ) -> Result<StepOutcome, SearchError> {
        let spec = self.actions[action];
        let mut tuples = applicable_operands(spec, d, self.kb);
        if self.cfg.drop_noninterp {
            tuples.retain(|t| !t.flagged);
        }
        // produce and score candidates in parallel, merged in tuple order
        let produced: Vec<Vec<(Column, Vec<String>, bool, f64)>> =
            exec::auto_map(&tuples, |tuple| {
                let operands: Vec<&Column> = tuple
                    .operands
                    .iter()
                    .map(|n| d.column(n).expect("operand exists"))
                    .collect();
                let cols = match apply(spec, None, &operands, self.kb) {
                    Ok(cols) => cols,
                    Err(_) => return Vec::new(),
                };
                cols.into_iter()
                    .filter(|c| (0..c.len()).any(|r| !c.data.is_absent(r)))
                    .filter(|c| d.column(&c.name).is_none())
                    .map(|c| {
                        let rel = self.candidate_relevance(&c, d);
                        (c, tuple.operands.clone(), tuple.flagged, rel)
                    })
                    .collect()
            });
        let mut candidates: Vec<(Column, Vec<String>, bool, f64)> =
            produced.into_iter().flatten().collect();
        candidates.sort_by(|a, b| b.3.total_cmp(&a.3).then(a.0.name.cmp(&b.0.name)));
        candidates.truncate(self.cfg.top_k);

        if candidates.is_empty() {
            return Ok(StepOutcome {
                d: d.clone(),
                g: g.clone(),
                perf: perf_prev,
                new: Vec::new(),
                reward: 0.0,
            });
        }

        let mut d_new = d.clone();
        let mut g_new = g.clone();
        let mut new = Vec::new();
        for (col, operands, flagged, _) in candidates {
            let op_ids: Vec<NodeId> = operands
                .iter()
                .map(|n| g_new.node_by_name(n).expect("operand node exists"))
                .collect();
            let node = g_new.add_application(spec.id, &op_ids, &col.name, flagged)?;
            let (d2, name) = append_feature(&d_new, col, node)?;
            d_new = d2;
            new.push(AppliedFeature {
                name,
                transform: spec.id.to_string(),
                operands,
                interp: g_new.score(node),
            });
        }
        let perf = self.eval.evaluate(&d_new, &self.folds)?.mean;
        let new_interp = new.iter().map(|f| f.interp).sum::<f64>() / new.len() as f64;
        let reward = scalarized_reward(self.cfg.lambda, perf - perf_prev, new_interp);
        Ok(StepOutcome {
            d: d_new,
            g: g_new,
            perf,
            new,
            reward,
        })
    }
}

struct StepOutcome {
    d: Dataset,
    g: DecompositionGraph,
    perf: f64,
    new: Vec<AppliedFeature>,
    reward: f64,
}

#[derive(Clone)]
struct Best {
    objective: f64,
    pipeline: Vec<PipelineStep>,
    dataset: Dataset,
    graph: DecompositionGraph,
    perf: f64,
    interp: f64,
    perf_trace: Vec<f64>,
    interp_trace: Vec<f64>,
}

impl Best {
    fn initial(env: &Env<'_>) -> Best {
        Best {
            objective: env.objective(env.perf0, env.interp0),
            pipeline: Vec::new(),
            dataset: env.d0.clone(),
            graph: env.g0.clone(),
            perf: env.perf0,
            interp: env.interp0,
            perf_trace: vec![env.perf0],
            interp_trace: vec![env.interp0],
        }
    }
}

/// Re-applies a pipeline found on the bootstrap sample to the full dataset.
/// Candidates that cannot be reproduced (for example a one-hot category that
/// misses the frequency cap on the full data) are skipped with a warning.
fn replay_pipeline(
    d_full: &Dataset,
    g_full: &DecompositionGraph,
    kb: &KnowledgeBase,
    pipeline: &[PipelineStep],
) -> Result<(Dataset, DecompositionGraph, Vec<String>), SearchError> {
    let mut d = d_full.clone();
    let mut g = g_full.clone();
    let mut warnings = Vec::new();
    for step in pipeline {
        let spec = crate::transforms::lookup(&step.transform).expect("catalog transform");
        for feat in &step.features {
            let operands: Vec<&Column> = feat
                .operands
                .iter()
                .map(|n| d.column(n).expect("operand exists"))
                .collect();
            let cols = apply(spec, None, &operands, kb).unwrap_or_default();
            match cols.into_iter().find(|c| c.name == feat.name) {
                Some(col) => {
                    let meta: Vec<crate::kg::OperandMeta<'_>> = operands
                        .iter()
                        .map(|c| crate::kg::OperandMeta {
                            concept: c.concept.as_deref(),
                            unit: c.unit.as_ref(),
                        })
                        .collect();
                    let flagged = kb.flags_noninterpretable(spec.id, &meta);
                    let op_ids: Vec<NodeId> = feat
                        .operands
                        .iter()
                        .map(|n| g.node_by_name(n).expect("operand node exists"))
                        .collect();
                    let node = g.add_application(spec.id, &op_ids, &feat.name, flagged)?;
                    let (d2, _) = append_feature(&d, col, node)?;
                    d = d2;
                }
                None => warnings.push(format!(
                    "pipeline feature {} not reproducible on the full data; skipped",
                    feat.name
                )),
            }
        }
    }
    Ok((d, g, warnings))
}

fn finish(
    env: &Env<'_>,
    best: Best,
    train_log: Vec<TrainLogEntry>,
    d_full: &Dataset,
    g_full: &DecompositionGraph,
) -> Result<PipelineResult, SearchError> {
    let (best_dataset, graph, warnings) = match &env.eval_rows {
        None => (best.dataset, best.graph, Vec::new()),
        Some(_) => replay_pipeline(d_full, g_full, env.kb, &best.pipeline)?,
    };
    Ok(PipelineResult {
        best_pipeline: best.pipeline,
        best_dataset,
        graph,
        perf_trace: best.perf_trace,
        interp_trace: best.interp_trace,
        objective: best.objective,
        best_perf: best.perf,
        best_interp: best.interp,
        train_log,
        warnings,
    })
}

// ---------------------------------------------------------------------------
// Training and baselines

enum Policy<'p> {
    Agent {
        q: &'p mut QNetwork,
        target: &'p mut QNetwork,
        replay: &'p mut ReplayBuffer,
        replay_rng: &'p mut ChaCha8Rng,
        global_step: &'p mut usize,
    },
    Random,
}

fn run_episodes(
    env: &Env<'_>,
    mut policy: Policy<'_>,
    rng: &mut ChaCha8Rng,
) -> Result<(Best, Vec<TrainLogEntry>), SearchError> {
    let cfg = env.cfg;
    let mut best = Best::initial(env);
    let mut log = Vec::new();
    for episode in 0..cfg.episodes {
        let eps = cfg.agent.epsilon.value(episode);
        let mut cur_d = env.d0.clone();
        let mut cur_g = env.g0.clone();
        let mut perf = env.perf0;
        let mut last_reward = 0.0;
        let mut perf_trace = vec![env.perf0];
        let mut interp_trace = vec![env.interp0];
        let mut pipeline: Vec<PipelineStep> = Vec::new();
        for step in 0..cfg.m {
            let mask = env.action_mask(&cur_d);
            if mask.iter().all(|ok| !ok) {
                break;
            }
            let s = env.state_spec.vectorize(
                &cur_d,
                &cur_g,
                &StepContext {
                    step,
                    m: cfg.m,
                    last_reward,
                },
            );
            let a = match &mut policy {
                Policy::Agent { q, .. } => select_action(q, &s, eps, &mask, rng)?,
                Policy::Random => {
                    let valid: Vec<usize> = mask
                        .iter()
                        .enumerate()
                        .filter_map(|(i, &ok)| ok.then_some(i))
                        .collect();
                    valid[rng.random_range(0..valid.len())]
                }
            };
            let out = env.apply_action(&cur_d, &cur_g, perf, a)?;
            let terminal = step + 1 == cfg.m;
            let mut loss = None;
            if let Policy::Agent {
                q,
                target,
                replay,
                replay_rng,
                global_step,
            } = &mut policy
            {
                let s_next = env.state_spec.vectorize(
                    &out.d,
                    &out.g,
                    &StepContext {
                        step: step + 1,
                        m: cfg.m,
                        last_reward: out.reward,
                    },
                );
                replay.push(Transition {
                    s: s.clone(),
                    a,
                    r: out.reward,
                    s_next,
                    terminal,
                });
                if replay.len() >= cfg.agent.batch {
                    let batch = replay.sample(cfg.agent.batch, replay_rng);
                    loss = Some(td_update(q, target, &batch, cfg.agent.gamma, cfg.agent.lr)?);
                }
                **global_step += 1;
                if **global_step % cfg.agent.sync_period == 0 {
                    sync_target(q, target);
                }
            }
            log.push(TrainLogEntry {
                episode,
                step,
                epsilon: eps,
                loss,
                reward: out.reward,
            });
            last_reward = out.reward;
            if !out.new.is_empty() {
                pipeline.push(PipelineStep {
                    transform: env.actions[a].id.to_string(),
                    features: out.new.clone(),
                });
            }
            cur_d = out.d;
            cur_g = out.g;
            perf = out.perf;
            perf_trace.push(perf);
            let interp = dataset_mean_interp(&cur_d, &cur_g);
            interp_trace.push(interp);
            let objective = env.objective(perf, interp);
            if objective > best.objective {
                best = Best {
                    objective,
                    pipeline: pipeline.clone(),
                    dataset: cur_d.clone(),
                    graph: cur_g.clone(),
                    perf,
                    interp,
                    perf_trace: perf_trace.clone(),
                    interp_trace: interp_trace.clone(),
                };
            }
        }
    }
    Ok((best, log))
}

/// DQN training over the configured episode budget; returns the best state
/// seen, replayed onto the full dataset when bootstrapping was active.
pub fn train(
    d: &Dataset,
    g: &DecompositionGraph,
    kb: &KnowledgeBase,
    cfg: &SearchConfig,
    eval: &dyn PerformanceEvaluator,
) -> Result<PipelineResult, SearchError> {
    cfg.validate()?;
    let env = Env::new(d, g, kb, cfg, eval)?;
    let mut q = QNetwork::new(
        env.state_spec.len(),
        env.actions.len(),
        role_seed(cfg.seed, "qnet"),
    );
    let mut target = q.clone();
    let mut replay = ReplayBuffer::new(cfg.agent.replay_capacity);
    let mut rng = ChaCha8Rng::seed_from_u64(role_seed(cfg.seed, "policy"));
    let mut replay_rng = ChaCha8Rng::seed_from_u64(role_seed(cfg.seed, "replay"));
    let mut global_step = 0usize;
    let (best, log) = run_episodes(
        &env,
        Policy::Agent {
            q: &mut q,
            target: &mut target,
            replay: &mut replay,
            replay_rng: &mut replay_rng,
            global_step: &mut global_step,
        },
        &mut rng,
    )?;
    finish(&env, best, log, d, g)
}

/// Uniform-random action selection with the same episode budget.
pub fn random_baseline(
    d: &Dataset,
    g: &DecompositionGraph,
    kb: &KnowledgeBase,
    cfg: &SearchConfig,
    eval: &dyn PerformanceEvaluator,
) -> Result<PipelineResult, SearchError> {
    cfg.validate()?;
    let env = Env::new(d, g, kb, cfg, eval)?;
    let mut rng = ChaCha8Rng::seed_from_u64(role_seed(cfg.seed, "baseline"));
    let (best, log) = run_episodes(&env, Policy::Random, &mut rng)?;
    finish(&env, best, log, d, g)
}

// ---------------------------------------------------------------------------
// Search-space size and the exhaustive oracle

/// `Σ_i A(p, arity_i)` over the catalog: ordered operand selections times
/// transforms, in exact integer arithmetic.
pub fn search_space_size(p: usize, catalog: &[&TransformSpec]) -> BigUint {
    search_space_size_by_arity(p, catalog.iter().map(|spec| spec.arity()))
}

/// Same sum from bare arities, for hypothetical catalogs.
pub fn search_space_size_by_arity(p: usize, arities: impl IntoIterator<Item = usize>) -> BigUint {
    let mut total = BigUint::from(0u32);
    for arity in arities {
        if arity > p {
            continue;
        }
        let mut perms = BigUint::from(1u32);
        for j in 0..arity {
            perms *= BigUint::from((p - j) as u64);
        }
        total += perms;
    }
    total
}

#[allow(clippy::too_many_arguments)]
fn oracle_recurse(
    env: &Env<'_>,
    d: &Dataset,
    g: &DecompositionGraph,
    depth_left: usize,
    pipeline: &mut Vec<PipelineStep>,
    best: &mut Best,
) -> Result<(), SearchError> {
    if depth_left == 0 {
        return Ok(());
    }
    for spec in &env.actions {
        let mut tuples = applicable_operands(spec, d, env.kb);
        if env.cfg.drop_noninterp {
            tuples.retain(|t| !t.flagged);
        }
        for tuple in tuples {
            let operands: Vec<&Column> = tuple
                .operands
                .iter()
                .map(|n| d.column(n).expect("operand exists"))
                .collect();
            let cols = match apply(spec, None, &operands, env.kb) {
                Ok(cols) => cols,
                Err(_) => continue,
            };
            let cols: Vec<Column> = cols
                .into_iter()
                .filter(|c| (0..c.len()).any(|r| !c.data.is_absent(r)))
                .filter(|c| d.column(&c.name).is_none())
                .collect();
            if cols.is_empty() {
                continue;
            }
            let mut d2 = d.clone();
            let mut g2 = g.clone();
            let mut feats = Vec::new();
            for col in cols {
                let op_ids: Vec<NodeId> = tuple
                    .operands
                    .iter()
                    .map(|n| g2.node_by_name(n).expect("operand node exists"))
                    .collect();
                let node = g2.add_application(spec.id, &op_ids, &col.name, tuple.flagged)?;
                let (dn, name) = append_feature(&d2, col, node)?;
                d2 = dn;
                feats.push(AppliedFeature {
                    name,
                    transform: spec.id.to_string(),
                    operands: tuple.operands.clone(),
                    interp: g2.score(node),
                });
            }
            let perf = env.eval.evaluate(&d2, &env.folds)?.mean;
            let interp = dataset_mean_interp(&d2, &g2);
            let objective = env.objective(perf, interp);
            pipeline.push(PipelineStep {
                transform: spec.id.to_string(),
                features: feats,
            });
            if objective > best.objective {
                *best = Best {
                    objective,
                    pipeline: pipeline.clone(),
                    dataset: d2.clone(),
                    graph: g2.clone(),
                    perf,
                    interp,
                    perf_trace: Vec::new(),
                    interp_trace: Vec::new(),
                };
            }
            oracle_recurse(env, &d2, &g2, depth_left - 1, pipeline, best)?;
            pipeline.pop();
        }
    }
    Ok(())
}

/// Evaluates every pipeline of single applications up to `depth` and returns
/// the true objective argmax. Refuses when the projected candidate count
/// exceeds [`ORACLE_BUDGET`].
pub fn exhaustive_oracle(
    d: &Dataset,
    g: &DecompositionGraph,
    kb: &KnowledgeBase,
    depth: usize,
    cfg: &SearchConfig,
    eval: &dyn PerformanceEvaluator,
) -> Result<PipelineResult, SearchError> {
    cfg.validate()?;
    if depth > ORACLE_MAX_DEPTH {
        return Err(SearchError::Config(format!(
            "oracle depth must be at most {ORACLE_MAX_DEPTH}, got {depth}"
        )));
    }
    let catalog = agent_actions();
    let p0 = d.n_features();
    let mut projected = BigUint::from(0u32);
    let mut level = BigUint::from(1u32);
    for l in 0..depth {
        level *= search_space_size(p0 + l, &catalog);
        projected += &level;
    }
    if projected > BigUint::from(ORACLE_BUDGET) {
        return Err(SearchError::OracleBudget {
            count: projected,
            budget: ORACLE_BUDGET,
        });
    }
    let env = Env::new(d, g, kb, cfg, eval)?;
    let mut best = Best::initial(&env);
    let mut pipeline = Vec::new();
    oracle_recurse(&env, &env.d0, &env.g0, depth, &mut pipeline, &mut best)?;
    let traces_missing = best.perf_trace.is_empty();
    if traces_missing {
        best.perf_trace = vec![env.perf0, best.perf];
        best.interp_trace = vec![env.interp0, best.interp];
    }
    finish(&env, best, Vec::new(), d, g)
}
