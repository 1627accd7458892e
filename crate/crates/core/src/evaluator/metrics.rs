//! Task metrics and relevance measures: 1-rae, F1, Pearson correlation,
//! quantile-binned mutual information.

use super::EvalError;

/// `1 - sum|yhat - y| / sum|mean(y) - y|`. Perfect predictions give 1, the
/// mean predictor gives 0, worse-than-mean goes negative.
pub fn one_minus_rae(y: &[f64], yhat: &[f64]) -> Result<f64, EvalError> {
    if y.is_empty() || y.len() != yhat.len() {
        return Err(EvalError::LengthMismatch {
            got: yhat.len(),
            want: y.len(),
        });
    }
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let denom: f64 = y.iter().map(|v| (mean - v).abs()).sum();
    if denom == 0.0 {
        return Err(EvalError::DegenerateTarget);
    }
    let num: f64 = y.iter().zip(yhat).map(|(v, p)| (p - v).abs()).sum();
    Ok(1.0 - num / denom)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Averaging {
    /// Two classes; the lexicographically larger label is the positive class.
    Binary,
    /// Unweighted mean of per-class F1 over all observed labels.
    Macro,
}

fn f1_single(tp: usize, fp: usize, fn_: usize) -> f64 {
    // Zero-division convention: a class with no true and no predicted
    // positives scores 0.
    if tp == 0 {
        return 0.0;
    }
    let p = tp as f64 / (tp + fp) as f64;
    let r = tp as f64 / (tp + fn_) as f64;
    2.0 * p * r / (p + r)
}

pub fn f1(y: &[String], yhat: &[String], averaging: Averaging) -> Result<f64, EvalError> {
    if y.is_empty() || y.len() != yhat.len() {
        return Err(EvalError::LengthMismatch {
            got: yhat.len(),
            want: y.len(),
        });
    }
    let mut classes: Vec<&String> = y.iter().chain(yhat).collect();
    classes.sort();
    classes.dedup();
    match averaging {
        Averaging::Binary => {
            if classes.len() > 2 {
                return Err(EvalError::BinaryNeedsTwoClasses { got: classes.len() });
            }
            let positive = classes.last().expect("nonempty");
            let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
            for (t, p) in y.iter().zip(yhat) {
                let t_pos = &t == positive;
                let p_pos = &p == positive;
                match (t_pos, p_pos) {
                    (true, true) => tp += 1,
                    (false, true) => fp += 1,
                    (true, false) => fn_ += 1,
                    (false, false) => {}
                }
            }
            Ok(f1_single(tp, fp, fn_))
        }
        Averaging::Macro => {
            let mut total = 0.0;
            for class in &classes {
                let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
                for (t, p) in y.iter().zip(yhat) {
                    match (&t == class, &p == class) {
                        (true, true) => tp += 1,
                        (false, true) => fp += 1,
                        (true, false) => fn_ += 1,
                        (false, false) => {}
                    }
                }
                total += f1_single(tp, fp, fn_);
            }
            Ok(total / classes.len() as f64)
        }
    }
}

/// Absolute Pearson correlation over rows where both values are present;
/// fewer than 2 such rows or zero variance gives 0.
pub fn abs_pearson(x: &[Option<f64>], y: &[Option<f64>]) -> f64 {
    let pairs: Vec<(f64, f64)> = x
        .iter()
        .zip(y)
        .filter_map(|(a, b)| Some(((*a)?, (*b)?)))
        .collect();
    let n = pairs.len() as f64;
    if pairs.len() < 2 {
        return 0.0;
    }
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in &pairs {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    let r = sxy / (sxx * syy).sqrt();
    r.abs().min(1.0)
}

/// Number of quantile bins used when discretizing numeric values for mutual
/// information.
pub const MI_BINS: usize = 10;

/// Quantile-bin a numeric slice; returns per-row bin labels (absent stays
/// absent). Duplicate cut points collapse, so constants land in one bin.
pub fn quantile_bins(values: &[Option<f64>], bins: usize) -> Vec<Option<u32>> {
    let mut present: Vec<f64> = values.iter().flatten().copied().collect();
    present.sort_by(f64::total_cmp);
    if present.is_empty() {
        return vec![None; values.len()];
    }
    let mut cuts: Vec<f64> = (1..bins)
        .map(|i| {
            let q = i as f64 / bins as f64;
            let idx = ((present.len() - 1) as f64 * q).round() as usize;
            present[idx]
        })
        .collect();
    cuts.dedup_by(|a, b| a == b);
    values
        .iter()
        .map(|v| {
            v.map(|v| cuts.iter().take_while(|c| v > **c).count() as u32)
        })
        .collect()
}

/// Mutual information (nats) between two discrete label sequences; rows with
/// an absent side are dropped.
pub fn mutual_information(x: &[Option<u32>], y: &[Option<u32>]) -> f64 {
    use std::collections::BTreeMap;
    let pairs: Vec<(u32, u32)> = x
        .iter()
        .zip(y)
        .filter_map(|(a, b)| Some(((*a)?, (*b)?)))
        .collect();
    let n = pairs.len() as f64;
    if pairs.is_empty() {
        return 0.0;
    }
    let mut joint: BTreeMap<(u32, u32), f64> = BTreeMap::new();
    let mut mx: BTreeMap<u32, f64> = BTreeMap::new();
    let mut my: BTreeMap<u32, f64> = BTreeMap::new();
    for &(a, b) in &pairs {
        *joint.entry((a, b)).or_insert(0.0) += 1.0;
        *mx.entry(a).or_insert(0.0) += 1.0;
        *my.entry(b).or_insert(0.0) += 1.0;
    }
    joint
        .iter()
        .map(|(&(a, b), &c)| {
            let pxy = c / n;
            pxy * (pxy / (mx[&a] / n * my[&b] / n)).ln()
        })
        .sum::<f64>()
        .max(0.0)
}
