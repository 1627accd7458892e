//! Built-in learners and k-fold cross-validated performance.
//!
//! Per fold: imputation statistics and categorical encodings come from the
//! training rows only, the feature count is capped by train-fold relevance,
//! the learner fits on train and is scored on the held-out rows (1-rae for
//! regression, F1 for classification). Folds run independently and reduce in
//! fold order, so the parallel and sequential paths agree bit-for-bit.

pub mod linear;
pub mod metrics;
pub mod tree;

use std::collections::BTreeMap;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec;
use crate::tabular::{Column, ColumnData, Dataset, FoldPlan, Task};
use metrics::{abs_pearson, mutual_information, quantile_bins, Averaging, MI_BINS};

pub const TREE_MAX_DEPTH: usize = 6;
pub const TREE_MIN_LEAF: usize = 5;
pub const RIDGE_ALPHA: f64 = 1.0;
pub const LOGISTIC_L2: f64 = 1.0;
pub const LOGISTIC_STEPS: usize = 200;
pub const LOGISTIC_LR: f64 = 0.1;
/// Features kept per fold when the dataset is wider than this.
pub const FEATURE_CAP: usize = 200;
/// Most frequent labels kept per categorical feature inside the learners.
pub const CAT_LABEL_CAP: usize = 50;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("length mismatch: got {got}, want {want}")]
    LengthMismatch { got: usize, want: usize },
    #[error("target is constant on the evaluated rows")]
    DegenerateTarget,
    #[error("binary F1 needs at most 2 classes, got {got}")]
    BinaryNeedsTwoClasses { got: usize },
    #[error("fold plan covers {got} rows, dataset has {want}")]
    FoldMismatch { got: usize, want: usize },
    #[error("all {k} folds were degenerate (constant or single-class training target)")]
    AllFoldsDegenerate { k: usize },
    #[error("{learner} does not support {task:?} tasks")]
    LearnerTask { learner: Learner, task: Task },
    #[error("regression needs a numeric target")]
    NotNumericTarget,
    #[error("normal equations not solvable (ill-conditioned design)")]
    IllConditioned,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Learner {
    DecisionTree,
    Ridge,
    Logistic,
}

impl std::fmt::Display for Learner {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Learner::DecisionTree => "decision_tree",
            Learner::Ridge => "ridge",
            Learner::Logistic => "logistic",
        };
        f.write_str(s)
    }
}

impl FromStr for Learner {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "decision_tree" | "tree" => Ok(Learner::DecisionTree),
            "ridge" | "linear_regression_ridge" => Ok(Learner::Ridge),
            "logistic" | "logistic_regression" => Ok(Learner::Logistic),
            other => Err(format!(
                "unknown learner {other:?} (expected decision_tree, ridge, or logistic)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub metric_name: String,
    pub per_fold: Vec<f64>,
    /// Fold indices skipped as degenerate.
    pub skipped: Vec<usize>,
    pub mean: f64,
    pub n_features: usize,
}

// ---------------------------------------------------------------------------
// Feature views

/// Numeric view of a column: booleans as 0/1, datetimes as epoch seconds.
/// `None` for categorical columns.
pub(crate) fn numeric_view(col: &Column) -> Option<Vec<Option<f64>>> {
    match &col.data {
        ColumnData::Numeric(v) => Some(v.clone()),
        ColumnData::Boolean(v) => Some(
            v.iter()
                .map(|b| b.map(|b| if b { 1.0 } else { 0.0 }))
                .collect(),
        ),
        ColumnData::Datetime(v) => Some(v.iter().map(|s| s.map(|s| s.epoch_s as f64)).collect()),
        ColumnData::Categorical(_) => None,
    }
}

fn subset<T: Copy>(v: &[T], rows: &[usize]) -> Vec<T> {
    rows.iter().map(|&r| v[r]).collect()
}

fn discretize(col: &Column, rows: &[usize]) -> Vec<Option<u32>> {
    match numeric_view(col) {
        Some(v) => quantile_bins(&subset(&v, rows), MI_BINS),
        None => {
            let values = col.as_categorical().expect("categorical");
            let mut labels: Vec<&str> = rows
                .iter()
                .filter_map(|&r| values[r].as_deref())
                .collect();
            labels.sort_unstable();
            labels.dedup();
            rows.iter()
                .map(|&r| {
                    values[r]
                        .as_deref()
                        .map(|s| labels.binary_search(&s).expect("present") as u32)
                })
                .collect()
        }
    }
}

/// Relevance of a feature to the target over the given rows: absolute Pearson
/// correlation for numeric features on regression tasks, quantile-binned
/// mutual information otherwise.
pub fn relevance_on_rows(col: &Column, target: &Column, task: Task, rows: &[usize]) -> f64 {
    match task {
        Task::Regression => {
            let y = match numeric_view(target) {
                Some(y) => subset(&y, rows),
                None => return 0.0,
            };
            match numeric_view(col) {
                Some(x) => abs_pearson(&subset(&x, rows), &y),
                None => mutual_information(&discretize(col, rows), &quantile_bins(&y, MI_BINS)),
            }
        }
        Task::Classification => {
            let y = discretize_labels(target, rows);
            mutual_information(&discretize(col, rows), &y)
        }
    }
}

fn discretize_labels(target: &Column, rows: &[usize]) -> Vec<Option<u32>> {
    let mut labels: Vec<String> = rows
        .iter()
        .filter_map(|&r| target.cell_text(r))
        .collect();
    labels.sort();
    labels.dedup();
    rows.iter()
        .map(|&r| {
            target
                .cell_text(r)
                .map(|s| labels.binary_search(&s).expect("present") as u32)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Train-fold encoding (imputation + categorical codes)

#[derive(Debug, Clone)]
pub(crate) enum EncodedCol {
    Num(Vec<f64>),
    Cat { codes: Vec<u32>, n_labels: usize },
}

#[derive(Debug, Clone)]
pub(crate) struct DesignMatrix {
    pub cols: Vec<EncodedCol>,
    pub n_rows: usize,
}

#[derive(Debug, Clone)]
enum FeatEncoder {
    Num { name: String, impute: f64 },
    Cat {
        name: String,
        impute: String,
        labels: Vec<String>,
    },
}

#[derive(Debug, Clone)]
pub(crate) struct Encoder {
    feats: Vec<FeatEncoder>,
}

impl Encoder {
    /// Statistics from training rows only.
    pub(crate) fn fit(d: &Dataset, names: &[String], train_rows: &[usize]) -> Encoder {
        let feats = names
            .iter()
            .map(|name| {
                let col = d.column(name).expect("feature exists");
                match numeric_view(col) {
                    Some(v) => {
                        let present: Vec<f64> =
                            train_rows.iter().filter_map(|&r| v[r]).collect();
                        let impute = if present.is_empty() {
                            0.0
                        } else {
                            present.iter().sum::<f64>() / present.len() as f64
                        };
                        FeatEncoder::Num {
                            name: name.clone(),
                            impute,
                        }
                    }
                    None => {
                        let values = col.as_categorical().expect("categorical");
                        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
                        for &r in train_rows {
                            if let Some(v) = values[r].as_deref() {
                                *counts.entry(v).or_insert(0) += 1;
                            }
                        }
                        let impute = counts
                            .iter()
                            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
                            .map(|(k, _)| k.to_string())
                            .unwrap_or_default();
                        let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
                        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
                        let mut labels: Vec<String> = ranked
                            .into_iter()
                            .take(CAT_LABEL_CAP)
                            .map(|(k, _)| k.to_string())
                            .collect();
                        if labels.is_empty() {
                            labels.push(String::new());
                        }
                        labels.sort();
                        FeatEncoder::Cat {
                            name: name.clone(),
                            impute,
                            labels,
                        }
                    }
                }
            })
            .collect();
        Encoder { feats }
    }

    pub(crate) fn encode(&self, d: &Dataset, rows: &[usize]) -> DesignMatrix {
        let cols = self
            .feats
            .iter()
            .map(|f| match f {
                FeatEncoder::Num { name, impute } => {
                    let v = numeric_view(d.column(name).expect("feature exists"))
                        .expect("numeric view");
                    EncodedCol::Num(rows.iter().map(|&r| v[r].unwrap_or(*impute)).collect())
                }
                FeatEncoder::Cat {
                    name,
                    impute,
                    labels,
                } => {
                    let values = d
                        .column(name)
                        .expect("feature exists")
                        .as_categorical()
                        .expect("categorical");
                    let codes = rows
                        .iter()
                        .map(|&r| {
                            let label = values[r].as_deref().unwrap_or(impute);
                            labels
                                .binary_search_by(|l| l.as_str().cmp(label))
                                .map(|i| i as u32)
                                .unwrap_or(u32::MAX)
                        })
                        .collect();
                    EncodedCol::Cat {
                        codes,
                        n_labels: labels.len(),
                    }
                }
            })
            .collect();
        DesignMatrix {
            cols,
            n_rows: rows.len(),
        }
    }
}

/// One-hot expansion for the linear learners; rows of plain numbers.
pub(crate) fn expand_linear(m: &DesignMatrix) -> Vec<Vec<f64>> {
    let width: usize = m
        .cols
        .iter()
        .map(|c| match c {
            EncodedCol::Num(_) => 1,
            EncodedCol::Cat { n_labels, .. } => *n_labels,
        })
        .sum();
    (0..m.n_rows)
        .map(|r| {
            let mut row = Vec::with_capacity(width);
            for c in &m.cols {
                match c {
                    EncodedCol::Num(v) => row.push(v[r]),
                    EncodedCol::Cat { codes, n_labels } => {
                        for l in 0..*n_labels {
                            row.push(if codes[r] == l as u32 { 1.0 } else { 0.0 });
                        }
                    }
                }
            }
            row
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Cross-validation

fn sorted_feature_names(d: &Dataset) -> Vec<String> {
    let mut names: Vec<String> = d.features().map(|c| c.name.clone()).collect();
    names.sort();
    names
}

fn class_vocabulary(target: &Column, n_rows: usize) -> Vec<String> {
    let mut classes: Vec<String> = (0..n_rows).filter_map(|r| target.cell_text(r)).collect();
    classes.sort();
    classes.dedup();
    classes
}

enum Fitted {
    Tree(tree::Tree),
    Ridge(linear::RidgeModel),
    LogisticOvR(Vec<linear::LogisticModel>),
}

struct FoldOutcome {
    metric: Option<f64>,
}

#[allow(clippy::too_many_arguments)]
fn run_fold(
    d: &Dataset,
    folds: &FoldPlan,
    fold: usize,
    learner: Learner,
    names: &[String],
    classes: &[String],
) -> Result<FoldOutcome, EvalError> {
    let target = d.target_column();
    let has_target = |r: &usize| !target.data.is_absent(*r);
    let train_rows: Vec<usize> = folds.train_rows(fold).into_iter().filter(|r| has_target(r)).collect();
    let test_rows: Vec<usize> = folds.rows_in_fold(fold).into_iter().filter(|r| has_target(r)).collect();
    if train_rows.is_empty() || test_rows.is_empty() {
        return Ok(FoldOutcome { metric: None });
    }

    // Width cap by train-fold relevance, ties by name.
    let kept: Vec<String> = if names.len() > FEATURE_CAP {
        let scored: Vec<(f64, &String)> = names
            .iter()
            .map(|n| {
                (
                    relevance_on_rows(d.column(n).unwrap(), target, d.task, &train_rows),
                    n,
                )
            })
            .collect();
        let mut ranked = scored;
        ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(b.1)));
        let mut kept: Vec<String> =
            ranked.into_iter().take(FEATURE_CAP).map(|(_, n)| n.clone()).collect();
        kept.sort();
        kept
    } else {
        names.to_vec()
    };

    let encoder = Encoder::fit(d, &kept, &train_rows);
    let train_m = encoder.encode(d, &train_rows);
    let test_m = encoder.encode(d, &test_rows);

    match d.task {
        Task::Regression => {
            let yv = numeric_view(target).ok_or(EvalError::NotNumericTarget)?;
            let y_train: Vec<f64> = train_rows.iter().map(|&r| yv[r].unwrap()).collect();
            let y_test: Vec<f64> = test_rows.iter().map(|&r| yv[r].unwrap()).collect();
            if y_train.iter().all(|v| *v == y_train[0]) {
                return Ok(FoldOutcome { metric: None });
            }
            let model = match learner {
                Learner::DecisionTree => Fitted::Tree(tree::Tree::fit_regression(
                    &train_m,
                    &y_train,
                    TREE_MAX_DEPTH,
                    TREE_MIN_LEAF,
                )),
                Learner::Ridge => Fitted::Ridge(linear::RidgeModel::fit(
                    &expand_linear(&train_m),
                    &y_train,
                    RIDGE_ALPHA,
                )?),
                Learner::Logistic => {
                    return Err(EvalError::LearnerTask {
                        learner,
                        task: d.task,
                    })
                }
            };
            let yhat = match &model {
                Fitted::Tree(t) => t.predict_regression(&test_m),
                Fitted::Ridge(m) => m.predict(&expand_linear(&test_m)),
                Fitted::LogisticOvR(_) => unreachable!(),
            };
            match metrics::one_minus_rae(&y_test, &yhat) {
                Ok(v) => Ok(FoldOutcome { metric: Some(v) }),
                Err(EvalError::DegenerateTarget) => Ok(FoldOutcome { metric: None }),
                Err(e) => Err(e),
            }
        }
        Task::Classification => {
            let code_of = |r: usize| -> u32 {
                let label = target.cell_text(r).expect("absent targets filtered");
                classes.binary_search(&label).expect("in vocabulary") as u32
            };
            let y_train: Vec<u32> = train_rows.iter().map(|&r| code_of(r)).collect();
            let distinct: std::collections::BTreeSet<u32> = y_train.iter().copied().collect();
            if distinct.len() < 2 {
                return Ok(FoldOutcome { metric: None });
            }
            let model = match learner {
                Learner::DecisionTree => Fitted::Tree(tree::Tree::fit_classification(
                    &train_m,
                    &y_train,
                    classes.len(),
                    TREE_MAX_DEPTH,
                    TREE_MIN_LEAF,
                )),
                Learner::Logistic => {
                    let x = expand_linear(&train_m);
                    let models = (0..classes.len())
                        .map(|c| {
                            let ybin: Vec<f64> = y_train
                                .iter()
                                .map(|&v| if v == c as u32 { 1.0 } else { 0.0 })
                                .collect();
                            linear::LogisticModel::fit(
                                &x,
                                &ybin,
                                LOGISTIC_L2,
                                LOGISTIC_STEPS,
                                LOGISTIC_LR,
                            )
                        })
                        .collect();
                    Fitted::LogisticOvR(models)
                }
                Learner::Ridge => {
                    return Err(EvalError::LearnerTask {
                        learner,
                        task: d.task,
                    })
                }
            };
            let pred_codes: Vec<u32> = match &model {
                Fitted::Tree(t) => t.predict_classification(&test_m),
                Fitted::LogisticOvR(models) => {
                    let x = expand_linear(&test_m);
                    x.iter()
                        .map(|row| {
                            let mut best = 0usize;
                            let mut best_score = f64::NEG_INFINITY;
                            for (c, m) in models.iter().enumerate() {
                                let s = m.decision(row);
                                if s > best_score {
                                    best_score = s;
                                    best = c;
                                }
                            }
                            best as u32
                        })
                        .collect()
                }
                Fitted::Ridge(_) => unreachable!(),
            };
            let y_true: Vec<String> = test_rows
                .iter()
                .map(|&r| target.cell_text(r).unwrap())
                .collect();
            let y_pred: Vec<String> = pred_codes
                .iter()
                .map(|&c| classes[c as usize].clone())
                .collect();
            let averaging = if classes.len() == 2 {
                Averaging::Binary
            } else {
                Averaging::Macro
            };
            Ok(FoldOutcome {
                metric: Some(metrics::f1(&y_true, &y_pred, averaging)?),
            })
        }
    }
}

/// k-fold cross-validation; degenerate folds are skipped and recorded, and an
/// all-degenerate plan is an error.
pub fn cross_val(d: &Dataset, folds: &FoldPlan, learner: Learner) -> Result<EvalResult, EvalError> {
    if folds.assignments.len() != d.n_rows {
        return Err(EvalError::FoldMismatch {
            got: folds.assignments.len(),
            want: d.n_rows,
        });
    }
    match (learner, d.task) {
        (Learner::Ridge, Task::Classification) | (Learner::Logistic, Task::Regression) => {
            return Err(EvalError::LearnerTask {
                learner,
                task: d.task,
            })
        }
        _ => {}
    }
    let names = sorted_feature_names(d);
    let classes = match d.task {
        Task::Classification => class_vocabulary(d.target_column(), d.n_rows),
        Task::Regression => Vec::new(),
    };
    let fold_ids: Vec<usize> = (0..folds.k).collect();
    let outcomes = exec::auto_map(&fold_ids, |&fold| {
        run_fold(d, folds, fold, learner, &names, &classes)
    });

    let mut per_fold = Vec::new();
    let mut skipped = Vec::new();
    for (fold, outcome) in outcomes.into_iter().enumerate() {
        match outcome?.metric {
            Some(v) => per_fold.push(v),
            None => skipped.push(fold),
        }
    }
    if per_fold.is_empty() {
        return Err(EvalError::AllFoldsDegenerate { k: folds.k });
    }
    let mean = per_fold.iter().sum::<f64>() / per_fold.len() as f64;
    Ok(EvalResult {
        metric_name: match d.task {
            Task::Regression => "1-rae".to_string(),
            Task::Classification => {
                if classes.len() == 2 {
                    "f1_binary".to_string()
                } else {
                    "f1_macro".to_string()
                }
            }
        },
        per_fold,
        skipped,
        mean,
        n_features: d.n_features(),
    })
}

/// Injection point for the search environment; lets tests substitute a stub
/// with controlled performance values.
pub trait PerformanceEvaluator: Sync {
    fn evaluate(&self, d: &Dataset, folds: &FoldPlan) -> Result<EvalResult, EvalError>;
}

#[derive(Debug, Clone, Copy)]
pub struct CrossVal {
    pub learner: Learner,
}

impl PerformanceEvaluator for CrossVal {
    fn evaluate(&self, d: &Dataset, folds: &FoldPlan) -> Result<EvalResult, EvalError> {
        cross_val(d, folds, self.learner)
    }
}

// ---------------------------------------------------------------------------
// Permutation importance

/// Mean metric drop over seeded within-fold permutations of each feature,
/// sorted descending (ties by name).
pub fn permutation_importance(
    d: &Dataset,
    folds: &FoldPlan,
    learner: Learner,
    repeats: usize,
    seed: u64,
) -> Result<Vec<(String, f64)>, EvalError> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    let names = sorted_feature_names(d);
    let classes = match d.task {
        Task::Classification => class_vocabulary(d.target_column(), d.n_rows),
        Task::Regression => Vec::new(),
    };
    let mut drops: BTreeMap<String, f64> = names.iter().map(|n| (n.clone(), 0.0)).collect();
    let mut scored_folds = 0usize;

    for fold in 0..folds.k {
        let target = d.target_column();
        let has_target = |r: &usize| !target.data.is_absent(*r);
        let train_rows: Vec<usize> =
            folds.train_rows(fold).into_iter().filter(|r| has_target(r)).collect();
        let test_rows: Vec<usize> =
            folds.rows_in_fold(fold).into_iter().filter(|r| has_target(r)).collect();
        if train_rows.is_empty() || test_rows.len() < 2 {
            continue;
        }

        let encoder = Encoder::fit(d, &names, &train_rows);
        let train_m = encoder.encode(d, &train_rows);
        let test_m = encoder.encode(d, &test_rows);

        let score = |m: &DesignMatrix, fitted: &Fitted| -> Result<Option<f64>, EvalError> {
            match d.task {
                Task::Regression => {
                    let yv = numeric_view(target).ok_or(EvalError::NotNumericTarget)?;
                    let y_test: Vec<f64> = test_rows.iter().map(|&r| yv[r].unwrap()).collect();
                    let yhat = match fitted {
                        Fitted::Tree(t) => t.predict_regression(m),
                        Fitted::Ridge(r) => r.predict(&expand_linear(m)),
                        Fitted::LogisticOvR(_) => unreachable!(),
                    };
                    match metrics::one_minus_rae(&y_test, &yhat) {
                        Ok(v) => Ok(Some(v)),
                        Err(EvalError::DegenerateTarget) => Ok(None),
                        Err(e) => Err(e),
                    }
                }
                Task::Classification => {
                    let pred: Vec<u32> = match fitted {
                        Fitted::Tree(t) => t.predict_classification(m),
                        Fitted::LogisticOvR(models) => expand_linear(m)
                            .iter()
                            .map(|row| {
                                let mut best = 0usize;
                                let mut best_score = f64::NEG_INFINITY;
                                for (c, lm) in models.iter().enumerate() {
                                    let s = lm.decision(row);
                                    if s > best_score {
                                        best_score = s;
                                        best = c;
                                    }
                                }
                                best as u32
                            })
                            .collect(),
                        Fitted::Ridge(_) => unreachable!(),
                    };
                    let y_true: Vec<String> = test_rows
                        .iter()
                        .map(|&r| target.cell_text(r).unwrap())
                        .collect();
                    let y_pred: Vec<String> =
                        pred.iter().map(|&c| classes[c as usize].clone()).collect();
                    let averaging = if classes.len() == 2 {
                        Averaging::Binary
                    } else {
                        Averaging::Macro
                    };
                    Ok(Some(metrics::f1(&y_true, &y_pred, averaging)?))
                }
            }
        };

        let fitted = match d.task {
            Task::Regression => {
                let yv = numeric_view(target).ok_or(EvalError::NotNumericTarget)?;
                let y_train: Vec<f64> = train_rows.iter().map(|&r| yv[r].unwrap()).collect();
                if y_train.iter().all(|v| *v == y_train[0]) {
                    continue;
                }
                match learner {
                    Learner::DecisionTree => Fitted::Tree(tree::Tree::fit_regression(
                        &train_m,
                        &y_train,
                        TREE_MAX_DEPTH,
                        TREE_MIN_LEAF,
                    )),
                    Learner::Ridge => Fitted::Ridge(linear::RidgeModel::fit(
                        &expand_linear(&train_m),
                        &y_train,
                        RIDGE_ALPHA,
                    )?),
                    Learner::Logistic => {
                        return Err(EvalError::LearnerTask {
                            learner,
                            task: d.task,
                        })
                    }
                }
            }
            Task::Classification => {
                let code_of = |r: usize| -> u32 {
                    classes
                        .binary_search(&target.cell_text(r).unwrap())
                        .unwrap() as u32
                };
                let y_train: Vec<u32> = train_rows.iter().map(|&r| code_of(r)).collect();
                let distinct: std::collections::BTreeSet<u32> = y_train.iter().copied().collect();
                if distinct.len() < 2 {
                    continue;
                }
                match learner {
                    Learner::DecisionTree => Fitted::Tree(tree::Tree::fit_classification(
                        &train_m,
                        &y_train,
                        classes.len(),
                        TREE_MAX_DEPTH,
                        TREE_MIN_LEAF,
                    )),
                    Learner::Logistic => {
                        let x = expand_linear(&train_m);
                        Fitted::LogisticOvR(
                            (0..classes.len())
                                .map(|c| {
                                    let ybin: Vec<f64> = y_train
                                        .iter()
                                        .map(|&v| if v == c as u32 { 1.0 } else { 0.0 })
                                        .collect();
                                    linear::LogisticModel::fit(
                                        &x,
                                        &ybin,
                                        LOGISTIC_L2,
                                        LOGISTIC_STEPS,
                                        LOGISTIC_LR,
                                    )
                                })
                                .collect(),
                        )
                    }
                    Learner::Ridge => {
                        return Err(EvalError::LearnerTask {
                            learner,
                            task: d.task,
                        })
                    }
                }
            }
        };

        let Some(baseline) = score(&test_m, &fitted)? else {
            continue;
        };
        scored_folds += 1;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (fold as u64).wrapping_mul(0x9E3779B97F4A7C15));
        for (fi, name) in names.iter().enumerate() {
            for _ in 0..repeats {
                let mut perm: Vec<usize> = (0..test_rows.len()).collect();
                perm.shuffle(&mut rng);
                let mut permuted = test_m.clone();
                match &mut permuted.cols[fi] {
                    EncodedCol::Num(v) => {
                        let orig = v.clone();
                        for (i, &p) in perm.iter().enumerate() {
                            v[i] = orig[p];
                        }
                    }
                    EncodedCol::Cat { codes, .. } => {
                        let orig = codes.clone();
                        for (i, &p) in perm.iter().enumerate() {
                            codes[i] = orig[p];
                        }
                    }
                }
                if let Some(m) = score(&permuted, &fitted)? {
                    *drops.get_mut(name).unwrap() += baseline - m;
                }
            }
        }
    }
    if scored_folds == 0 {
        return Err(EvalError::AllFoldsDegenerate { k: folds.k });
    }
    let denom = (scored_folds * repeats) as f64;
    let mut ranked: Vec<(String, f64)> =
        drops.into_iter().map(|(n, v)| (n, v / denom)).collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(ranked)
}
