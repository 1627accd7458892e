//! End-to-end job orchestration: load, map, exploit, search, evaluate, emit.
//!
//! `run` produces a [`Report`] and writes the artifact set into the output
//! directory: `report.json`, `augmented.csv`, `decomp.dot`, `decomp.json`,
//! `importance.svg`, and `timings.json`. Everything except `timings.json` is
//! byte-stable for a fixed config and seed; wall-clock numbers live in their
//! own file so the rest can be compared bit-for-bit.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decomp::{DecompositionGraph, NodeKind};
use crate::evaluator::{cross_val, permutation_importance, CrossVal, EvalError, EvalResult, Learner};
use crate::kg::{map_columns, parse_kg, KgError};
use crate::reasoner::{
    exploit_with, ExploitOptions, InferenceTrace, ReasonerError, DEFAULT_MAX_DEPTH,
    DEFAULT_UNKNOWN_BASE,
};
use crate::search::{
    dataset_mean_interp, random_baseline, search_space_size, train, AgentHyper, PipelineResult,
    PipelineStep, SearchConfig, SearchError, DEFAULT_BOOTSTRAP_ROWS, DEFAULT_EPISODES,
    DEFAULT_K_FOLDS, DEFAULT_LAMBDA, DEFAULT_M, DEFAULT_TOP_K,
};
use crate::tabular::{
    load_csv, make_folds, write_csv_file, DataError, Dataset, SchemaHints, Task,
};
use crate::transforms::agent_actions;

pub const DEFAULT_IMPORTANCE_REPEATS: usize = 3;
/// Bars drawn in the importance chart.
pub const SVG_TOP_N: usize = 20;
pub const SVG_WIDTH: u32 = 800;
pub const SVG_HEIGHT: u32 = 400;
/// Fill for features produced by a transformation application.
pub const SVG_GENERATED_FILL: &str = "#4c78a8";
/// Fill for original columns and rule-derived known concepts.
pub const SVG_KNOWN_FILL: &str = "#f58518";

pub const OUTPUT_FILES: [&str; 6] = [
    "report.json",
    "augmented.csv",
    "decomp.dot",
    "decomp.json",
    "importance.svg",
    "timings.json",
];

#[derive(Debug, Error)]
pub enum JobError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Kg(#[from] KgError),
    #[error(transparent)]
    Reasoner(#[from] ReasonerError),
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialize: {0}")]
    Json(#[from] serde_json::Error),
}

impl JobError {
    /// 2 for configuration/validation problems, 1 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            JobError::Config(_) => 2,
            JobError::Kg(_) => 2,
            JobError::Data(
                DataError::TargetMissing { .. }
                | DataError::BadHints(_)
                | DataError::BadFoldCount { .. },
            ) => 2,
            JobError::Search(SearchError::Config(_)) => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct JobConfig {
    pub data: String,
    pub kg: String,
    pub target: String,
    pub task: Option<Task>,
    pub learner: Learner,
    pub k: usize,
    pub lambda: f64,
    pub episodes: usize,
    pub m: usize,
    pub top_k: usize,
    pub seed: u64,
    pub out: String,
    pub bootstrap_rows: Option<usize>,
    pub drop_noninterp: bool,
    /// Exploitation rule-chaining depth.
    pub max_depth: usize,
    /// Base interpretability for columns with no knowledge-graph grounding.
    pub unknown_score: f64,
    pub importance_repeats: usize,
    pub agent: AgentHyper,
    pub hints: SchemaHints,
}

impl Default for JobConfig {
    fn default() -> Self {
        JobConfig {
            data: String::new(),
            kg: String::new(),
            target: String::new(),
            task: None,
            learner: Learner::DecisionTree,
            k: DEFAULT_K_FOLDS,
            lambda: DEFAULT_LAMBDA,
            episodes: DEFAULT_EPISODES,
            m: DEFAULT_M,
            top_k: DEFAULT_TOP_K,
            seed: 0,
            out: "out".to_string(),
            bootstrap_rows: Some(DEFAULT_BOOTSTRAP_ROWS),
            drop_noninterp: false,
            max_depth: DEFAULT_MAX_DEPTH,
            unknown_score: DEFAULT_UNKNOWN_BASE,
            importance_repeats: DEFAULT_IMPORTANCE_REPEATS,
            agent: AgentHyper::default(),
            hints: SchemaHints::default(),
        }
    }
}

impl JobConfig {
    pub fn from_json(json: &str) -> Result<JobConfig, JobError> {
        serde_json::from_str(json).map_err(|e| JobError::Config(format!("config file: {e}")))
    }

    pub fn validate(&self) -> Result<(), JobError> {
        for (field, value) in [
            ("data", &self.data),
            ("kg", &self.kg),
            ("target", &self.target),
            ("out", &self.out),
        ] {
            if value.is_empty() {
                return Err(JobError::Config(format!("missing required field: {field}")));
            }
        }
        if !(0.0..=1.0).contains(&self.unknown_score) {
            return Err(JobError::Config(format!(
                "unknown_score must be in [0, 1], got {}",
                self.unknown_score
            )));
        }
        self.search_config().validate()?;
        Ok(())
    }

    fn exploit_options(&self) -> ExploitOptions {
        ExploitOptions {
            max_depth: self.max_depth,
            unknown_base: self.unknown_score,
        }
    }

    pub fn search_config(&self) -> SearchConfig {
        SearchConfig {
            lambda: self.lambda,
            m: self.m,
            episodes: self.episodes,
            top_k: self.top_k,
            drop_noninterp: self.drop_noninterp,
            bootstrap_rows: self.bootstrap_rows,
            k_folds: self.k,
            seed: self.seed,
            agent: self.agent,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InterpSummary {
    pub per_feature: std::collections::BTreeMap<String, f64>,
    pub mean: f64,
    pub sum: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImportanceEntry {
    pub feature: String,
    pub importance: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Report {
    pub config: JobConfig,
    pub task: Task,
    pub base_eval: EvalResult,
    pub exploited_eval: EvalResult,
    pub final_eval: EvalResult,
    /// Best objective seen by the search (on its evaluation rows).
    pub search_objective: f64,
    /// `λ·final-performance + (1−λ)·mean interpretability` on the full data.
    pub final_objective: f64,
    pub interpretability: InterpSummary,
    pub pipeline: Vec<PipelineStep>,
    pub perf_trace: Vec<f64>,
    pub interp_trace: Vec<f64>,
    pub importance: Vec<ImportanceEntry>,
    /// Transformation-space size at the exploited feature count, in decimal.
    pub search_space: String,
    /// Effective per-transform interpretability weights after KG overrides.
    pub interp_weights: std::collections::BTreeMap<String, f64>,
    pub exploitation: InferenceTrace,
    pub train_log: Vec<crate::agent::TrainLogEntry>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
struct Timings {
    load_ms: u128,
    exploit_ms: u128,
    search_ms: u128,
    evaluate_ms: u128,
    total_ms: u128,
}

fn interp_summary(d: &Dataset, g: &DecompositionGraph) -> InterpSummary {
    let per_feature: std::collections::BTreeMap<String, f64> = d
        .features()
        .filter_map(|c| g.node_by_name(&c.name).map(|id| (c.name.clone(), g.score(id))))
        .collect();
    let sum: f64 = per_feature.values().sum();
    let mean = if per_feature.is_empty() {
        0.0
    } else {
        sum / per_feature.len() as f64
    };
    InterpSummary {
        per_feature,
        mean,
        sum,
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Horizontal bar chart of the top permutation importances on a fixed
/// 800×400 canvas. Two fills distinguish generated features from original
/// or rule-derived known ones.
pub fn render_importance_svg(ranked: &[ImportanceEntry], g: &DecompositionGraph) -> String {
    let top: Vec<&ImportanceEntry> = ranked.iter().take(SVG_TOP_N).collect();
    let max_imp = top
        .iter()
        .map(|e| e.importance.max(0.0))
        .fold(0.0f64, f64::max)
        .max(1e-12);
    let label_w = 300.0;
    let chart_w = SVG_WIDTH as f64 - label_w - 20.0;
    let top_pad = 30.0;
    let row_h = (SVG_HEIGHT as f64 - top_pad - 10.0) / SVG_TOP_N as f64;
    let mut s = String::new();
    s.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SVG_WIDTH}\" height=\"{SVG_HEIGHT}\" viewBox=\"0 0 {SVG_WIDTH} {SVG_HEIGHT}\">\n"
    ));
    s.push_str("<rect width=\"100%\" height=\"100%\" fill=\"#ffffff\"/>\n");
    s.push_str(&format!(
        "<text x=\"10\" y=\"20\" font-family=\"sans-serif\" font-size=\"14\">Permutation importance (top {SVG_TOP_N}); generated {SVG_GENERATED_FILL}, known {SVG_KNOWN_FILL}</text>\n"
    ));
    for (i, e) in top.iter().enumerate() {
        let y = top_pad + i as f64 * row_h;
        let generated = g
            .node_by_name(&e.feature)
            .map(|id| g.node(id).kind == NodeKind::Generated)
            .unwrap_or(false);
        let fill = if generated {
            SVG_GENERATED_FILL
        } else {
            SVG_KNOWN_FILL
        };
        let w = (e.importance.max(0.0) / max_imp) * chart_w;
        let mut label = e.feature.clone();
        if label.len() > 40 {
            label.truncate(37);
            label.push_str("...");
        }
        s.push_str(&format!(
            "<text x=\"10\" y=\"{:.2}\" font-family=\"monospace\" font-size=\"10\">{}</text>\n",
            y + row_h * 0.7,
            xml_escape(&label)
        ));
        s.push_str(&format!(
            "<rect x=\"{label_w}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"{fill}\"/>\n",
            y + row_h * 0.15,
            w,
            row_h * 0.7,
        ));
        s.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" font-family=\"monospace\" font-size=\"10\">{:.6}</text>\n",
            label_w + w + 4.0,
            y + row_h * 0.7,
            e.importance
        ));
    }
    s.push_str("</svg>\n");
    s
}

/// Removes the artifact files `run` may have written into `out`.
pub fn clean_outputs(out: &Path) {
    for name in OUTPUT_FILES {
        let _ = std::fs::remove_file(out.join(name));
    }
}

fn write_outputs(
    out: &Path,
    report: &Report,
    d: &Dataset,
    g: &DecompositionGraph,
    timings: &Timings,
) -> Result<(), JobError> {
    std::fs::create_dir_all(out)?;
    let mut report_json = serde_json::to_string_pretty(report)?;
    report_json.push('\n');
    let mut timings_json = serde_json::to_string_pretty(timings)?;
    timings_json.push('\n');
    let result = (|| -> Result<(), JobError> {
        std::fs::write(out.join("report.json"), &report_json)?;
        write_csv_file(d, out.join("augmented.csv"))?;
        std::fs::write(out.join("decomp.dot"), g.export_dot())?;
        std::fs::write(out.join("decomp.json"), g.export_json())?;
        let svg = render_importance_svg(&report.importance, g);
        std::fs::write(out.join("importance.svg"), svg)?;
        std::fs::write(out.join("timings.json"), &timings_json)?;
        Ok(())
    })();
    if result.is_err() {
        clean_outputs(out);
    }
    result
}

#[derive(Debug)]
pub struct JobOutcome {
    pub report: Report,
    pub dataset: Dataset,
    pub graph: DecompositionGraph,
}

/// Runs the full pipeline and writes the artifact set. On error nothing is
/// left half-written: outputs are emitted last and removed on failure.
pub fn run(cfg: &JobConfig) -> Result<JobOutcome, JobError> {
    cfg.validate()?;
    let t0 = Instant::now();
    let kb = parse_kg(&cfg.kg)?;
    let hints = if cfg.hints.0.is_empty() {
        None
    } else {
        Some(&cfg.hints)
    };
    let d_raw = load_csv(&cfg.data, hints, &cfg.target, cfg.task)?;
    let d_raw = map_columns(&kb, &d_raw)?;
    let t_load = t0.elapsed().as_millis();

    let folds = make_folds(&d_raw, cfg.k, cfg.seed)?;
    let base_eval = cross_val(&d_raw, &folds, cfg.learner)?;

    let t1 = Instant::now();
    let (d_exploited, trace, graph) = exploit_with(&d_raw, &kb, cfg.exploit_options())?;
    let t_exploit = t1.elapsed().as_millis();
    let exploited_eval = cross_val(&d_exploited, &folds, cfg.learner)?;

    let t2 = Instant::now();
    let scfg = cfg.search_config();
    let evaluator = CrossVal {
        learner: cfg.learner,
    };
    let result = train(&d_exploited, &graph, &kb, &scfg, &evaluator)?;
    let t_search = t2.elapsed().as_millis();

    let t3 = Instant::now();
    let final_eval = cross_val(&result.best_dataset, &folds, cfg.learner)?;
    let importance: Vec<ImportanceEntry> = permutation_importance(
        &result.best_dataset,
        &folds,
        cfg.learner,
        cfg.importance_repeats,
        cfg.seed,
    )?
    .into_iter()
    .map(|(feature, importance)| ImportanceEntry {
        feature,
        importance,
    })
    .collect();
    let t_eval = t3.elapsed().as_millis();

    let interpretability = interp_summary(&result.best_dataset, &result.graph);
    let final_objective =
        cfg.lambda * final_eval.mean + (1.0 - cfg.lambda) * interpretability.mean;
    let mut warnings = trace.warnings.clone();
    warnings.extend(result.warnings.iter().cloned());

    let report = Report {
        config: cfg.clone(),
        task: d_raw.task,
        base_eval,
        exploited_eval,
        final_eval,
        search_objective: result.objective,
        final_objective,
        interpretability,
        pipeline: result.best_pipeline.clone(),
        perf_trace: result.perf_trace.clone(),
        interp_trace: result.interp_trace.clone(),
        importance,
        search_space: search_space_size(d_exploited.n_features(), &agent_actions()).to_string(),
        interp_weights: result.graph.interp_weights().clone(),
        exploitation: trace,
        train_log: result.train_log.clone(),
        warnings,
    };
    let timings = Timings {
        load_ms: t_load,
        exploit_ms: t_exploit,
        search_ms: t_search,
        evaluate_ms: t_eval,
        total_ms: t0.elapsed().as_millis(),
    };
    let out = PathBuf::from(&cfg.out);
    write_outputs(&out, &report, &result.best_dataset, &result.graph, &timings)?;
    Ok(JobOutcome {
        report,
        dataset: result.best_dataset,
        graph: result.graph,
    })
}

/// Same job with the uniform-random policy; used for baseline comparisons.
/// Writes nothing.
pub fn run_random_baseline(cfg: &JobConfig) -> Result<PipelineResult, JobError> {
    cfg.validate()?;
    let kb = parse_kg(&cfg.kg)?;
    let hints = if cfg.hints.0.is_empty() {
        None
    } else {
        Some(&cfg.hints)
    };
    let d_raw = load_csv(&cfg.data, hints, &cfg.target, cfg.task)?;
    let d_raw = map_columns(&kb, &d_raw)?;
    let (d_exploited, _, graph) = exploit_with(&d_raw, &kb, cfg.exploit_options())?;
    let evaluator = CrossVal {
        learner: cfg.learner,
    };
    let scfg = cfg.search_config();
    Ok(random_baseline(&d_exploited, &graph, &kb, &scfg, &evaluator)?)
}

/// Objective decomposition used by reports and the oracle subcommand.
pub fn objective_of(lambda: f64, perf: f64, d: &Dataset, g: &DecompositionGraph) -> f64 {
    lambda * perf + (1.0 - lambda) * dataset_mean_interp(d, g)
}
