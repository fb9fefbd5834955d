//! Ranking-based multi-label metrics.
//!
//! Label matrices use `+1` for positive, `−1` for negative and `0` for an
//! unobserved entry; unobserved entries take no part in any metric. Ties
//! follow the literal pair relations: ranking loss counts `f⁺ ≤ f⁻` as an
//! error and AUC counts `f⁺ ≥ f⁻` as a success. Label ranks sort scores in
//! descending order and break ties by ascending label index.
//!
//! Instances without a positive or without a negative label are left out of
//! ranking loss and average precision; instances without a positive label
//! are left out of coverage; labels without a positive or negative instance
//! are left out of macro AUC. The report records how many were used.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct MetricCount {
    pub used: usize,
    pub excluded: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub ranking_loss: f64,
    pub macro_auc: f64,
    pub coverage: f64,
    pub average_precision: f64,
    pub ranking_loss_instances: MetricCount,
    pub auc_labels: MetricCount,
    pub coverage_instances: MetricCount,
    pub average_precision_instances: MetricCount,
}

fn check_inputs(scores: &Matrix, labels: &Matrix) -> Result<()> {
    if scores.shape() != labels.shape() {
        return Err(Error::dims(
            "metric inputs",
            format!("{:?}", labels.shape()),
            format!("{:?}", scores.shape()),
        ));
    }
    if scores.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("scores".into()));
    }
    if labels.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("labels".into()));
    }
    Ok(())
}

fn desc(a: f64, b: f64) -> Ordering {
    b.partial_cmp(&a).unwrap_or(Ordering::Equal)
}

/// Observed labels of one instance split by sign, plus the 1-based rank of
/// every observed label. Entries index the observed labels in column order.
struct InstanceView {
    ranks: Vec<usize>,
    positives: Vec<usize>,
    negatives: Vec<usize>,
}

impl InstanceView {
    fn new(scores: &Matrix, labels: &Matrix, i: usize) -> Self {
        let observed: Vec<usize> = (0..labels.ncols()).filter(|&j| labels[(i, j)] != 0.0).collect();
        let mut order: Vec<usize> = (0..observed.len()).collect();
        order.sort_by(|&a, &b| {
            desc(scores[(i, observed[a])], scores[(i, observed[b])]).then(observed[a].cmp(&observed[b]))
        });
        let mut ranks = vec![0; observed.len()];
        for (pos, &slot) in order.iter().enumerate() {
            ranks[slot] = pos + 1;
        }
        let positives = (0..observed.len())
            .filter(|&s| labels[(i, observed[s])] > 0.0)
            .collect();
        let negatives = (0..observed.len())
            .filter(|&s| labels[(i, observed[s])] < 0.0)
            .collect();
        Self {
            ranks,
            positives,
            negatives,
        }
    }
}

fn finish(metric: &'static str, what: &'static str, sum: f64, count: MetricCount) -> Result<f64> {
    if count.used == 0 {
        return Err(Error::EmptyEvaluation { metric, what });
    }
    Ok(sum / count.used as f64)
}

fn ranking_loss_counted(scores: &Matrix, labels: &Matrix) -> Result<(f64, MetricCount)> {
    check_inputs(scores, labels)?;
    let mut sum = 0.0;
    let mut count = MetricCount::default();
    for i in 0..scores.nrows() {
        let mut pos = Vec::new();
        let mut neg = Vec::new();
        for j in 0..scores.ncols() {
            let l = labels[(i, j)];
            if l > 0.0 {
                pos.push(scores[(i, j)]);
            } else if l < 0.0 {
                neg.push(scores[(i, j)]);
            }
        }
        if pos.is_empty() || neg.is_empty() {
            count.excluded += 1;
            continue;
        }
        neg.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
        let violations: usize = pos
            .iter()
            .map(|&f| neg.len() - neg.partition_point(|&s| s < f))
            .sum();
        sum += violations as f64 / (pos.len() * neg.len()) as f64;
        count.used += 1;
    }
    Ok((finish("ranking loss", "instance", sum, count)?, count))
}

pub fn ranking_loss(scores: &Matrix, labels: &Matrix) -> Result<f64> {
    Ok(ranking_loss_counted(scores, labels)?.0)
}

fn macro_auc_counted(scores: &Matrix, labels: &Matrix) -> Result<(f64, MetricCount)> {
    check_inputs(scores, labels)?;
    let mut sum = 0.0;
    let mut count = MetricCount::default();
    for j in 0..scores.ncols() {
        let mut pos = Vec::new();
        let mut neg = Vec::new();
        for i in 0..scores.nrows() {
            let l = labels[(i, j)];
            if l > 0.0 {
                pos.push(scores[(i, j)]);
            } else if l < 0.0 {
                neg.push(scores[(i, j)]);
            }
        }
        if pos.is_empty() || neg.is_empty() {
            count.excluded += 1;
            continue;
        }
        neg.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
        let wins: usize = pos.iter().map(|&f| neg.partition_point(|&s| s <= f)).sum();
        sum += wins as f64 / (pos.len() * neg.len()) as f64;
        count.used += 1;
    }
    Ok((finish("macro AUC", "label", sum, count)?, count))
}

pub fn macro_auc(scores: &Matrix, labels: &Matrix) -> Result<f64> {
    Ok(macro_auc_counted(scores, labels)?.0)
}

fn coverage_counted(scores: &Matrix, labels: &Matrix) -> Result<(f64, MetricCount)> {
    check_inputs(scores, labels)?;
    let mut sum = 0.0;
    let mut count = MetricCount::default();
    for i in 0..scores.nrows() {
        let view = InstanceView::new(scores, labels, i);
        match view.positives.iter().map(|&s| view.ranks[s]).max() {
            Some(worst) => {
                sum += (worst - 1) as f64;
                count.used += 1;
            }
            None => count.excluded += 1,
        }
    }
    Ok((finish("coverage", "instance", sum, count)?, count))
}

pub fn coverage(scores: &Matrix, labels: &Matrix) -> Result<f64> {
    Ok(coverage_counted(scores, labels)?.0)
}

fn average_precision_counted(scores: &Matrix, labels: &Matrix) -> Result<(f64, MetricCount)> {
    check_inputs(scores, labels)?;
    let mut sum = 0.0;
    let mut count = MetricCount::default();
    for i in 0..scores.nrows() {
        let view = InstanceView::new(scores, labels, i);
        if view.positives.is_empty() || view.negatives.is_empty() {
            count.excluded += 1;
            continue;
        }
        let mut pos_ranks: Vec<usize> = view.positives.iter().map(|&s| view.ranks[s]).collect();
        pos_ranks.sort_unstable();
        // positives are visited in ascending label order
        let mut inner = 0.0;
        for &s in &view.positives {
            let r = view.ranks[s];
            let above = pos_ranks.partition_point(|&q| q <= r);
            inner += above as f64 / r as f64;
        }
        sum += inner / view.positives.len() as f64;
        count.used += 1;
    }
    debug_assert!(count.used + count.excluded == scores.nrows());
    Ok((finish("average precision", "instance", sum, count)?, count))
}

pub fn average_precision(scores: &Matrix, labels: &Matrix) -> Result<f64> {
    Ok(average_precision_counted(scores, labels)?.0)
}

pub fn evaluate_all(scores: &Matrix, labels: &Matrix) -> Result<EvaluationReport> {
    let (ranking_loss, rkl) = ranking_loss_counted(scores, labels)?;
    let (macro_auc, auc) = macro_auc_counted(scores, labels)?;
    let (coverage, cvg) = coverage_counted(scores, labels)?;
    let (average_precision, ap) = average_precision_counted(scores, labels)?;
    Ok(EvaluationReport {
        ranking_loss,
        macro_auc,
        coverage,
        average_precision,
        ranking_loss_instances: rkl,
        auc_labels: auc,
        coverage_instances: cvg,
        average_precision_instances: ap,
    })
}

pub const ORACLE_MAX_INSTANCES: usize = 50;
pub const ORACLE_MAX_LABELS: usize = 20;

/// Exhaustive pair and rank enumeration of the four metrics. Test scale
/// only.
pub fn brute_force_oracle(scores: &Matrix, labels: &Matrix) -> Result<EvaluationReport> {
    check_inputs(scores, labels)?;
    let (p, c) = scores.shape();
    if p > ORACLE_MAX_INSTANCES || c > ORACLE_MAX_LABELS {
        return Err(Error::param(
            "oracle size",
            format!("{p}x{c} exceeds {ORACLE_MAX_INSTANCES}x{ORACLE_MAX_LABELS}"),
        ));
    }
    let is_pos = |i: usize, j: usize| labels[(i, j)] > 0.0;
    let is_neg = |i: usize, j: usize| labels[(i, j)] < 0.0;
    let observed = |i: usize, j: usize| labels[(i, j)] != 0.0;
    let rank = |i: usize, j: usize| -> usize {
        1 + (0..c)
            .filter(|&l| observed(i, l) && l != j)
            .filter(|&l| scores[(i, l)] > scores[(i, j)] || (scores[(i, l)] == scores[(i, j)] && l < j))
            .count()
    };

    let mut rkl = (0.0, MetricCount::default());
    let mut cvg = (0.0, MetricCount::default());
    let mut ap = (0.0, MetricCount::default());
    for i in 0..p {
        let pos: Vec<usize> = (0..c).filter(|&j| is_pos(i, j)).collect();
        let neg: Vec<usize> = (0..c).filter(|&j| is_neg(i, j)).collect();

        if pos.is_empty() || neg.is_empty() {
            rkl.1.excluded += 1;
            ap.1.excluded += 1;
        } else {
            let mut q = 0usize;
            for &a in &pos {
                for &b in &neg {
                    if scores[(i, a)] <= scores[(i, b)] {
                        q += 1;
                    }
                }
            }
            rkl.0 += q as f64 / (pos.len() * neg.len()) as f64;
            rkl.1.used += 1;

            let mut inner = 0.0;
            for &y in &pos {
                let ry = rank(i, y);
                let above = pos.iter().filter(|&&j| rank(i, j) <= ry).count();
                inner += above as f64 / ry as f64;
            }
            ap.0 += inner / pos.len() as f64;
            ap.1.used += 1;
        }

        if pos.is_empty() {
            cvg.1.excluded += 1;
        } else {
            let worst = pos.iter().map(|&j| rank(i, j)).max().unwrap_or(1);
            cvg.0 += (worst - 1) as f64;
            cvg.1.used += 1;
        }
    }

    let mut auc = (0.0, MetricCount::default());
    for j in 0..c {
        let pos: Vec<usize> = (0..p).filter(|&i| is_pos(i, j)).collect();
        let neg: Vec<usize> = (0..p).filter(|&i| is_neg(i, j)).collect();
        if pos.is_empty() || neg.is_empty() {
            auc.1.excluded += 1;
            continue;
        }
        let mut q = 0usize;
        for &a in &pos {
            for &b in &neg {
                if scores[(a, j)] >= scores[(b, j)] {
                    q += 1;
                }
            }
        }
        auc.0 += q as f64 / (pos.len() * neg.len()) as f64;
        auc.1.used += 1;
    }

    Ok(EvaluationReport {
        ranking_loss: finish("ranking loss", "instance", rkl.0, rkl.1)?,
        macro_auc: finish("macro AUC", "label", auc.0, auc.1)?,
        coverage: finish("coverage", "instance", cvg.0, cvg.1)?,
        average_precision: finish("average precision", "instance", ap.0, ap.1)?,
        ranking_loss_instances: rkl.1,
        auc_labels: auc.1,
        coverage_instances: cvg.1,
        average_precision_instances: ap.1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;
    use rand::Rng;

    #[test]
    fn ranking_loss_examples() {
        let labels = dmatrix![1.0, -1.0, 1.0, -1.0];
        assert_eq!(ranking_loss(&dmatrix![0.9, 0.1, 0.8, 0.2], &labels).unwrap(), 0.0);
        assert_eq!(ranking_loss(&dmatrix![0.1, 0.9, 0.2, 0.8], &labels).unwrap(), 1.0);
        let labels = dmatrix![1.0, -1.0, 1.0];
        assert_eq!(ranking_loss(&dmatrix![0.9, 0.1, 0.5], &labels).unwrap(), 0.0);
        // ties are violations
        assert_eq!(ranking_loss(&dmatrix![0.5, 0.5], &dmatrix![1.0, -1.0]).unwrap(), 1.0);
        assert!(matches!(
            ranking_loss(&dmatrix![0.5, 0.5], &dmatrix![1.0, 1.0]),
            Err(Error::EmptyEvaluation { .. })
        ));
    }

    #[test]
    fn auc_examples() {
        let s = dmatrix![0.2; 0.8; 0.5];
        let l = dmatrix![-1.0; 1.0; -1.0];
        assert_eq!(macro_auc(&s, &l).unwrap(), 1.0);
        assert_eq!(macro_auc(&Matrix::from_element(3, 1, 0.3), &l).unwrap(), 1.0);
        let inverted = dmatrix![0.9; 0.1; 0.5];
        assert_eq!(macro_auc(&inverted, &l).unwrap(), 0.0);
    }

    #[test]
    fn coverage_examples() {
        let s = dmatrix![0.9, 0.1, 0.2];
        assert_eq!(coverage(&s, &dmatrix![1.0, -1.0, -1.0]).unwrap(), 0.0);
        let s = dmatrix![0.9, 0.8, 0.5, 0.3, 0.1];
        assert_eq!(coverage(&s, &dmatrix![-1.0, -1.0, 1.0, -1.0, -1.0]).unwrap(), 2.0);
        assert_eq!(coverage(&s, &Matrix::from_element(1, 5, 1.0)).unwrap(), 4.0);
        // tie broken toward the lower label index
        let s = dmatrix![0.5, 0.5];
        assert_eq!(coverage(&s, &dmatrix![-1.0, 1.0]).unwrap(), 1.0);
    }

    #[test]
    fn average_precision_examples() {
        let s = dmatrix![0.9, 0.8, 0.1];
        assert_eq!(average_precision(&s, &dmatrix![1.0, 1.0, -1.0]).unwrap(), 1.0);
        assert_eq!(average_precision(&dmatrix![0.9, 0.1], &dmatrix![-1.0, 1.0]).unwrap(), 0.5);
        let ap = average_precision(&s, &dmatrix![1.0, -1.0, 1.0]).unwrap();
        assert!((ap - 5.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn unobserved_entries_are_ignored() {
        let s = dmatrix![0.9, 0.95, 0.1];
        let l = dmatrix![1.0, 0.0, -1.0];
        assert_eq!(ranking_loss(&s, &l).unwrap(), 0.0);
        assert_eq!(coverage(&s, &l).unwrap(), 0.0);
        assert_eq!(average_precision(&s, &l).unwrap(), 1.0);
        // a single instance never has both signs on one label
        assert!(matches!(macro_auc(&s, &l), Err(Error::EmptyEvaluation { .. })));
    }

    #[test]
    fn perfect_predictor() {
        let l = dmatrix![1.0, -1.0, -1.0; -1.0, 1.0, 1.0; 1.0, 1.0, -1.0];
        let r = evaluate_all(&l, &l).unwrap();
        assert_eq!(r.ranking_loss, 0.0);
        assert_eq!(r.macro_auc, 1.0);
        assert_eq!(r.average_precision, 1.0);
        // minimal coverage is |C⁺| − 1 averaged: (0 + 1 + 1) / 3
        assert_eq!(r.coverage, 2.0 / 3.0);
    }

    #[test]
    fn exclusions_are_counted() {
        let l = dmatrix![1.0, 1.0; -1.0, -1.0; 1.0, -1.0];
        let s = dmatrix![0.3, 0.2; 0.1, 0.4; 0.5, 0.6];
        let r = evaluate_all(&s, &l).unwrap();
        assert_eq!(r.ranking_loss_instances, MetricCount { used: 1, excluded: 2 });
        assert_eq!(r.coverage_instances, MetricCount { used: 2, excluded: 1 });
        assert_eq!(r.auc_labels, MetricCount { used: 2, excluded: 0 });
        assert_eq!(r, brute_force_oracle(&s, &l).unwrap());
    }

    #[test]
    fn agrees_with_oracle_on_random_instances() {
        let mut rng = crate::seed::rng(77);
        for trial in 0..300 {
            let p = rng.random_range(1..12);
            let c = rng.random_range(2..7);
            let tied = trial % 2 == 0;
            let scores = Matrix::from_fn(p, c, |_, _| {
                if tied {
                    rng.random_range(0..3) as f64
                } else {
                    rng.random::<f64>()
                }
            });
            let labels = Matrix::from_fn(p, c, |_, _| [1.0, -1.0, -1.0, 0.0][rng.random_range(0..4)]);
            let fast = evaluate_all(&scores, &labels);
            let slow = brute_force_oracle(&scores, &labels);
            match (fast, slow) {
                (Ok(a), Ok(b)) => assert_eq!(a, b),
                (Err(_), Err(_)) => {}
                (a, b) => panic!("disagreement: {a:?} vs {b:?}"),
            }
        }
    }

    #[test]
    fn oracle_size_guard() {
        let s = Matrix::zeros(51, 2);
        assert!(brute_force_oracle(&s, &s).is_err());
    }

    #[test]
    fn shape_and_finiteness_checks() {
        assert!(evaluate_all(&Matrix::zeros(2, 2), &Matrix::zeros(2, 3)).is_err());
        assert!(matches!(
            evaluate_all(&dmatrix![f64::NAN, 1.0], &dmatrix![1.0, -1.0]),
            Err(Error::NonFinite(_))
        ));
    }
}
