//! A small CART decision tree: variance reduction for regression, Gini for
//! classification. Numeric splits test `value <= midpoint`; categorical splits
//! test equality against a single training code. Features are scanned in
//! column order and a split must strictly improve, so fitting is
//! deterministic.

use super::{DesignMatrix, EncodedCol};

#[derive(Debug, Clone, PartialEq)]
enum Split {
    NumericLe { feature: usize, threshold: f64 },
    CatEq { feature: usize, code: u32 },
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Leaf(f64),
    Branch {
        split: Split,
        left: Box<Node>,
        right: Box<Node>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Tree {
    root: Node,
}

enum Target<'a> {
    Reg(&'a [f64]),
    Class { codes: &'a [u32], n_classes: usize },
}

impl Target<'_> {
    fn impurity(&self, rows: &[usize]) -> f64 {
        match self {
            Target::Reg(y) => {
                let n = rows.len() as f64;
                let mean = rows.iter().map(|&r| y[r]).sum::<f64>() / n;
                rows.iter().map(|&r| (y[r] - mean).powi(2)).sum::<f64>()
            }
            Target::Class { codes, n_classes } => {
                let mut counts = vec![0usize; *n_classes];
                for &r in rows {
                    counts[codes[r] as usize] += 1;
                }
                let n = rows.len() as f64;
                let gini = 1.0
                    - counts
                        .iter()
                        .map(|&c| {
                            let p = c as f64 / n;
                            p * p
                        })
                        .sum::<f64>();
                gini * n
            }
        }
    }

    fn leaf_value(&self, rows: &[usize]) -> f64 {
        match self {
            Target::Reg(y) => rows.iter().map(|&r| y[r]).sum::<f64>() / rows.len() as f64,
            Target::Class { codes, n_classes } => {
                let mut counts = vec![0usize; *n_classes];
                for &r in rows {
                    counts[codes[r] as usize] += 1;
                }
                // majority class; ties take the smallest code
                let mut best = 0usize;
                for (c, &cnt) in counts.iter().enumerate() {
                    if cnt > counts[best] {
                        best = c;
                    }
                }
                best as f64
            }
        }
    }

    fn is_pure(&self, rows: &[usize]) -> bool {
        match self {
            Target::Reg(y) => rows.iter().all(|&r| y[r] == y[rows[0]]),
            Target::Class { codes, .. } => rows.iter().all(|&r| codes[r] == codes[rows[0]]),
        }
    }
}

/// Sum of squared deviations from one-pass aggregates, floored at zero so
/// rounding never reports negative impurity.
fn sse(n: f64, sum: f64, sum_sq: f64) -> f64 {
    (sum_sq - sum * sum / n).max(0.0)
}

/// `gini * n` from class counts: `n - (sum of squared counts) / n`.
fn gini_n(n: f64, sq_counts: f64) -> f64 {
    (n - sq_counts / n).max(0.0)
}

fn best_split(
    m: &DesignMatrix,
    target: &Target<'_>,
    rows: &[usize],
    min_leaf: usize,
) -> Option<(Split, f64)> {
    let parent = target.impurity(rows);
    let n_total = rows.len();
    let mut best: Option<(Split, f64)> = None;
    let mut consider = |split: Split, n_left: usize, child: f64| {
        if n_left < min_leaf || n_total - n_left < min_leaf {
            return;
        }
        let gain = parent - child;
        if gain > best.as_ref().map_or(1e-12, |(_, g)| *g) {
            best = Some((split, gain));
        }
    };

    // Class-count scratch reused across features (classification only).
    let n_classes = match target {
        Target::Class { n_classes, .. } => *n_classes,
        Target::Reg(_) => 0,
    };
    let mut total_counts = vec![0.0f64; n_classes];
    let mut left_counts = vec![0.0f64; n_classes];
    if let Target::Class { codes, .. } = target {
        for &r in rows {
            total_counts[codes[r] as usize] += 1.0;
        }
    }

    for (fi, col) in m.cols.iter().enumerate() {
        match col {
            EncodedCol::Num(v) => {
                let mut order: Vec<usize> = rows.to_vec();
                order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
                match target {
                    Target::Reg(y) => {
                        let (mut ts, mut tq) = (0.0, 0.0);
                        for &r in rows {
                            ts += y[r];
                            tq += y[r] * y[r];
                        }
                        let (mut ls, mut lq) = (0.0, 0.0);
                        // Prefix stats advance one row at a time; thresholds
                        // exist only between distinct neighbours, so the
                        // prefix is exactly the `<= midpoint` side.
                        for w in 0..order.len() - 1 {
                            let r = order[w];
                            ls += y[r];
                            lq += y[r] * y[r];
                            let (a, b) = (v[order[w]], v[order[w + 1]]);
                            if a == b {
                                continue;
                            }
                            let nl = (w + 1) as f64;
                            let nr = (n_total - w - 1) as f64;
                            let child = sse(nl, ls, lq) + sse(nr, ts - ls, tq - lq);
                            let threshold = a + (b - a) / 2.0;
                            consider(Split::NumericLe { feature: fi, threshold }, w + 1, child);
                        }
                    }
                    Target::Class { codes, .. } => {
                        left_counts.fill(0.0);
                        let total_sq: f64 = total_counts.iter().map(|c| c * c).sum();
                        let (mut lsq, mut rsq) = (0.0, total_sq);
                        for w in 0..order.len() - 1 {
                            let c = codes[order[w]] as usize;
                            // Moving one row of class c across the boundary
                            // shifts each squared count by 2·count ∓ 1.
                            lsq += 2.0 * left_counts[c] + 1.0;
                            rsq -= 2.0 * (total_counts[c] - left_counts[c]) - 1.0;
                            left_counts[c] += 1.0;
                            let (a, b) = (v[order[w]], v[order[w + 1]]);
                            if a == b {
                                continue;
                            }
                            let nl = (w + 1) as f64;
                            let nr = (n_total - w - 1) as f64;
                            let child = gini_n(nl, lsq) + gini_n(nr, rsq);
                            let threshold = a + (b - a) / 2.0;
                            consider(Split::NumericLe { feature: fi, threshold }, w + 1, child);
                        }
                        left_counts.fill(0.0);
                    }
                }
            }
            EncodedCol::Cat { codes: cc, .. } => match target {
                Target::Reg(y) => {
                    // One pass of per-code aggregates, then each code is
                    // tested as "equal vs rest" in O(1).
                    let mut stats: std::collections::BTreeMap<u32, (f64, f64, f64)> =
                        std::collections::BTreeMap::new();
                    let (mut ts, mut tq) = (0.0, 0.0);
                    for &r in rows {
                        let e = stats.entry(cc[r]).or_insert((0.0, 0.0, 0.0));
                        e.0 += 1.0;
                        e.1 += y[r];
                        e.2 += y[r] * y[r];
                        ts += y[r];
                        tq += y[r] * y[r];
                    }
                    for (&code, &(cn, cs, cq)) in &stats {
                        let rn = n_total as f64 - cn;
                        if rn == 0.0 {
                            continue;
                        }
                        let child = sse(cn, cs, cq) + sse(rn, ts - cs, tq - cq);
                        consider(Split::CatEq { feature: fi, code }, cn as usize, child);
                    }
                }
                Target::Class { codes, .. } => {
                    let mut stats: std::collections::BTreeMap<u32, Vec<f64>> =
                        std::collections::BTreeMap::new();
                    for &r in rows {
                        let e = stats
                            .entry(cc[r])
                            .or_insert_with(|| vec![0.0; n_classes]);
                        e[codes[r] as usize] += 1.0;
                    }
                    for (&code, counts) in &stats {
                        let cn: f64 = counts.iter().sum();
                        let rn = n_total as f64 - cn;
                        if rn == 0.0 {
                            continue;
                        }
                        let lsq: f64 = counts.iter().map(|c| c * c).sum();
                        let rsq: f64 = counts
                            .iter()
                            .zip(&total_counts)
                            .map(|(l, t)| (t - l) * (t - l))
                            .sum();
                        let child = gini_n(cn, lsq) + gini_n(rn, rsq);
                        consider(Split::CatEq { feature: fi, code }, cn as usize, child);
                    }
                }
            },
        }
    }
    best
}

fn grow(
    m: &DesignMatrix,
    target: &Target<'_>,
    rows: &[usize],
    depth: usize,
    max_depth: usize,
    min_leaf: usize,
) -> Node {
    if depth >= max_depth || rows.len() < 2 * min_leaf || target.is_pure(rows) {
        return Node::Leaf(target.leaf_value(rows));
    }
    match best_split(m, target, rows, min_leaf) {
        Some((split, _)) => {
            let (left_rows, right_rows): (Vec<usize>, Vec<usize>) = match &split {
                Split::NumericLe { feature, threshold } => {
                    let v = match &m.cols[*feature] {
                        EncodedCol::Num(v) => v,
                        _ => unreachable!(),
                    };
                    rows.iter().partition(|&&r| v[r] <= *threshold)
                }
                Split::CatEq { feature, code } => {
                    let codes = match &m.cols[*feature] {
                        EncodedCol::Cat { codes, .. } => codes,
                        _ => unreachable!(),
                    };
                    rows.iter().partition(|&&r| codes[r] == *code)
                }
            };
            Node::Branch {
                split,
                left: Box::new(grow(m, target, &left_rows, depth + 1, max_depth, min_leaf)),
                right: Box::new(grow(m, target, &right_rows, depth + 1, max_depth, min_leaf)),
            }
        }
        None => Node::Leaf(target.leaf_value(rows)),
    }
}

impl Tree {
    pub(crate) fn fit_regression(
        m: &DesignMatrix,
        y: &[f64],
        max_depth: usize,
        min_leaf: usize,
    ) -> Tree {
        let rows: Vec<usize> = (0..m.n_rows).collect();
        Tree {
            root: grow(m, &Target::Reg(y), &rows, 0, max_depth, min_leaf),
        }
    }

    pub(crate) fn fit_classification(
        m: &DesignMatrix,
        codes: &[u32],
        n_classes: usize,
        max_depth: usize,
        min_leaf: usize,
    ) -> Tree {
        let rows: Vec<usize> = (0..m.n_rows).collect();
        Tree {
            root: grow(
                m,
                &Target::Class { codes, n_classes },
                &rows,
                0,
                max_depth,
                min_leaf,
            ),
        }
    }

    fn predict_row(&self, m: &DesignMatrix, row: usize) -> f64 {
        let mut node = &self.root;
        loop {
            match node {
                Node::Leaf(v) => return *v,
                Node::Branch { split, left, right } => {
                    let go_left = match split {
                        Split::NumericLe { feature, threshold } => match &m.cols[*feature] {
                            EncodedCol::Num(v) => v[row] <= *threshold,
                            _ => unreachable!(),
                        },
                        Split::CatEq { feature, code } => match &m.cols[*feature] {
                            EncodedCol::Cat { codes, .. } => codes[row] == *code,
                            _ => unreachable!(),
                        },
                    };
                    node = if go_left { left } else { right };
                }
            }
        }
    }

    pub(crate) fn predict_regression(&self, m: &DesignMatrix) -> Vec<f64> {
        (0..m.n_rows).map(|r| self.predict_row(m, r)).collect()
    }

    pub(crate) fn predict_classification(&self, m: &DesignMatrix) -> Vec<u32> {
        (0..m.n_rows)
            .map(|r| self.predict_row(m, r) as u32)
            .collect()
    }
}
