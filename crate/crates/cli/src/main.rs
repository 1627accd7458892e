//! `smfe` — knowledge-guided feature engineering from the command line.
//!
//! `run` drives the full pipeline (rule inference, then learned search) and
//! writes its artifacts into an output directory. The remaining subcommands
//! are small inspection tools over the same machinery.

use clap::{Args, Parser, Subcommand};

use smfe_core::evaluator::{CrossVal, Learner};
use smfe_core::job::{self, JobConfig, JobError};
use smfe_core::kg::{map_columns, parse_kg};
use smfe_core::reasoner::exploit_with;
use smfe_core::search::{exhaustive_oracle, search_space_size_by_arity, ORACLE_MAX_DEPTH};
use smfe_core::tabular::{load_csv, Task};
use smfe_core::transforms::{agent_actions, catalog};

#[derive(Parser)]
#[command(name = "smfe", version, about = "Knowledge-guided automated feature engineering")]
struct Cli {
    /// Print the transform catalog as JSON and exit.
    #[arg(long)]
    list_transforms: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Run rule inference and transformation search end to end.
    Run(RunArgs),
    /// Look up the interpretability score of a feature from a finished run.
    ScoreFeature(ScoreFeatureArgs),
    /// Print the transform catalog as JSON.
    ListTransforms,
    /// Parse a knowledge-graph file and report what it defines.
    CheckKg { path: String },
    /// Size of the transformation space for a feature count.
    SpaceSize(SpaceSizeArgs),
    /// Exhaustively search short pipelines (small problems only).
    Oracle(OracleArgs),
}

#[derive(Args)]
struct RunArgs {
    /// JSON config file; command-line flags override its values.
    #[arg(long)]
    config: Option<String>,
    /// Input CSV.
    #[arg(long)]
    data: Option<String>,
    /// Knowledge-graph file.
    #[arg(long)]
    kg: Option<String>,
    /// Target column name.
    #[arg(long)]
    target: Option<String>,
    /// regression | classification (inferred from the target by default).
    #[arg(long, value_parser = parse_task)]
    task: Option<Task>,
    /// decision_tree | ridge | logistic.
    #[arg(long, value_parser = parse_learner)]
    learner: Option<Learner>,
    /// Cross-validation folds.
    #[arg(long)]
    k: Option<usize>,
    /// Performance weight in the objective; 1-lambda weighs interpretability.
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    episodes: Option<usize>,
    /// Steps per episode.
    #[arg(long)]
    m: Option<usize>,
    /// Candidate features kept per action.
    #[arg(long)]
    top_k: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<String>,
    /// Row cap for search-time evaluation; 0 disables subsampling.
    #[arg(long)]
    bootstrap_rows: Option<usize>,
    /// Mask actions whose every application would be unit/semantics flagged.
    #[arg(long)]
    drop_noninterp: bool,
    /// Print the transform catalog as JSON instead of running.
    #[arg(long)]
    list_transforms: bool,
}

#[derive(Args)]
struct ScoreFeatureArgs {
    /// Feature name as it appears in the augmented dataset.
    name: String,
    /// Output directory of the finished run.
    #[arg(long, default_value = "out")]
    out: String,
}

#[derive(Args)]
struct SpaceSizeArgs {
    /// Feature count.
    #[arg(long)]
    p: usize,
    /// Number of 1-operand transforms (default: the agent catalog).
    #[arg(long)]
    unary: Option<usize>,
    /// Number of 2-operand transforms.
    #[arg(long)]
    binary: Option<usize>,
    /// Number of 3-operand transforms.
    #[arg(long)]
    ternary: Option<usize>,
    /// Number of 4-operand transforms.
    #[arg(long)]
    quaternary: Option<usize>,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long)]
    data: String,
    #[arg(long)]
    kg: String,
    #[arg(long)]
    target: String,
    #[arg(long, value_parser = parse_task)]
    task: Option<Task>,
    #[arg(long, value_parser = parse_learner, default_value = "decision_tree")]
    learner: Learner,
    #[arg(long, default_value_t = smfe_core::search::DEFAULT_LAMBDA)]
    lambda: f64,
    /// Pipeline length to enumerate (hard-capped).
    #[arg(long, default_value_t = ORACLE_MAX_DEPTH)]
    depth: usize,
    #[arg(long, default_value_t = smfe_core::search::DEFAULT_K_FOLDS)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = smfe_core::search::DEFAULT_TOP_K)]
    top_k: usize,
    #[arg(long)]
    drop_noninterp: bool,
}

fn parse_task(s: &str) -> Result<Task, String> {
    match s {
        "regression" => Ok(Task::Regression),
        "classification" => Ok(Task::Classification),
        other => Err(format!(
            "unknown task `{other}` (expected regression or classification)"
        )),
    }
}

fn parse_learner(s: &str) -> Result<Learner, String> {
    s.parse()
}

fn catalog_json() -> String {
    let entries: Vec<serde_json::Value> = catalog()
        .iter()
        .map(|spec| {
            serde_json::json!({
                "id": spec.id,
                "class": spec.class,
                "arity": spec.arity(),
                "operands": spec.slots.iter().map(|s| s.name()).collect::<Vec<_>>(),
                "takes_param": spec.takes_param,
                "agent_action": spec.agent_action,
                "default_interp": spec.default_interp,
                "unit_law": spec.unit_law,
            })
        })
        .collect();
    serde_json::to_string_pretty(&entries).expect("serializable")
}

fn merge_run_config(args: &RunArgs) -> Result<JobConfig, JobError> {
    let mut cfg = match &args.config {
        Some(path) => JobConfig::from_json(&std::fs::read_to_string(path)?)?,
        None => JobConfig::default(),
    };
    if let Some(v) = &args.data {
        cfg.data = v.clone();
    }
    if let Some(v) = &args.kg {
        cfg.kg = v.clone();
    }
    if let Some(v) = &args.target {
        cfg.target = v.clone();
    }
    if let Some(v) = args.task {
        cfg.task = Some(v);
    }
    if let Some(v) = args.learner {
        cfg.learner = v;
    }
    if let Some(v) = args.k {
        cfg.k = v;
    }
    if let Some(v) = args.lambda {
        cfg.lambda = v;
    }
    if let Some(v) = args.episodes {
        cfg.episodes = v;
    }
    if let Some(v) = args.m {
        cfg.m = v;
    }
    if let Some(v) = args.top_k {
        cfg.top_k = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = &args.out {
        cfg.out = v.clone();
    }
    if let Some(v) = args.bootstrap_rows {
        cfg.bootstrap_rows = if v == 0 { None } else { Some(v) };
    }
    if args.drop_noninterp {
        cfg.drop_noninterp = true;
    }
    Ok(cfg)
}

fn cmd_run(args: &RunArgs) -> Result<(), JobError> {
    if args.list_transforms {
        println!("{}", catalog_json());
        return Ok(());
    }
    let cfg = merge_run_config(args)?;
    let outcome = job::run(&cfg)?;
    let r = &outcome.report;
    println!(
        "task {:?}, learner {}, metric {}",
        r.task, cfg.learner, r.final_eval.metric_name
    );
    println!(
        "performance: base {:.4} -> exploited {:.4} -> final {:.4}",
        r.base_eval.mean, r.exploited_eval.mean, r.final_eval.mean
    );
    println!(
        "objective {:.4} (search {:.4}), mean interpretability {:.4}",
        r.final_objective, r.search_objective, r.interpretability.mean
    );
    println!(
        "pipeline: {} step(s), {} feature(s), search space {}",
        r.pipeline.len(),
        outcome.dataset.n_features(),
        r.search_space
    );
    for w in &r.warnings {
        eprintln!("warning: {w}");
    }
    println!("artifacts written to {}", cfg.out);
    Ok(())
}

fn cmd_score_feature(args: &ScoreFeatureArgs) -> Result<(), JobError> {
    let path = std::path::Path::new(&args.out).join("decomp.json");
    let text = std::fs::read_to_string(&path)?;
    let graph: serde_json::Value = serde_json::from_str(&text)?;
    let nodes = graph["nodes"].as_array().cloned().unwrap_or_default();
    let score = nodes
        .iter()
        .find(|n| n["name"].as_str() == Some(args.name.as_str()))
        .and_then(|n| n["score"].as_f64())
        .ok_or_else(|| {
            JobError::Config(format!(
                "no feature named `{}` in {}",
                args.name,
                path.display()
            ))
        })?;
    println!("{score}");
    Ok(())
}

fn cmd_check_kg(path: &str) -> Result<(), JobError> {
    let kb = parse_kg(path)?;
    println!(
        "OK: {} concepts, {} units, {} column mappings, {} derivation rules, {} interpretability rules, {} triples, {} weight overrides",
        kb.concepts.len(),
        kb.units.len(),
        kb.column_mappings.len(),
        kb.derivation_rules.len(),
        kb.interp_rules.len(),
        kb.triples.len(),
        kb.transform_interp.len(),
    );
    Ok(())
}

fn cmd_space_size(args: &SpaceSizeArgs) -> Result<(), JobError> {
    let explicit = [
        (1usize, args.unary),
        (2, args.binary),
        (3, args.ternary),
        (4, args.quaternary),
    ];
    let size = if explicit.iter().any(|(_, n)| n.is_some()) {
        let arities = explicit
            .iter()
            .flat_map(|&(arity, n)| std::iter::repeat(arity).take(n.unwrap_or(0)));
        search_space_size_by_arity(args.p, arities)
    } else {
        search_space_size_by_arity(args.p, agent_actions().iter().map(|s| s.arity()))
    };
    println!("{size}");
    Ok(())
}

fn cmd_oracle(args: &OracleArgs) -> Result<(), JobError> {
    let kb = parse_kg(&args.kg)?;
    let d = load_csv(&args.data, None, &args.target, args.task)?;
    let d = map_columns(&kb, &d)?;
    let (d, _, graph) = exploit_with(&d, &kb, Default::default())?;
    let cfg = smfe_core::search::SearchConfig {
        lambda: args.lambda,
        m: args.depth.max(1),
        top_k: args.top_k,
        drop_noninterp: args.drop_noninterp,
        bootstrap_rows: None,
        k_folds: args.k,
        seed: args.seed,
        ..Default::default()
    };
    let evaluator = CrossVal {
        learner: args.learner,
    };
    let result = exhaustive_oracle(&d, &graph, &kb, args.depth, &cfg, &evaluator)?;
    let out = serde_json::json!({
        "objective": result.objective,
        "performance": result.best_perf,
        "interpretability": result.best_interp,
        "pipeline": result.best_pipeline,
    });
    println!("{}", serde_json::to_string_pretty(&out).expect("serializable"));
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), JobError> {
    if cli.list_transforms {
        println!("{}", catalog_json());
        return Ok(());
    }
    match &cli.command {
        Some(Command::Run(args)) => cmd_run(args),
        Some(Command::ScoreFeature(args)) => cmd_score_feature(args),
        Some(Command::ListTransforms) => {
            println!("{}", catalog_json());
            Ok(())
        }
        Some(Command::CheckKg { path }) => cmd_check_kg(path),
        Some(Command::SpaceSize(args)) => cmd_space_size(args),
        Some(Command::Oracle(args)) => cmd_oracle(args),
        None => Err(JobError::Config(
            "no subcommand given (try `smfe run --help`)".to_string(),
        )),
    }
}

fn main() {
    // Die quietly when a downstream pager/head closes the pipe.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let cli = Cli::parse();
    if let Err(e) = dispatch(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
