//! Accuracy, binary F1, Pearson r, Spearman rho and MSE.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{unscale_score, ScoreRange, TaskKind};
use crate::error::{Error, Result};

fn same_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::InvalidArgument(format!("length mismatch: {a} vs {b}")));
    }
    Ok(())
}

pub fn accuracy(preds: &[usize], golds: &[usize]) -> Result<f64> {
    same_len(preds.len(), golds.len())?;
    if preds.is_empty() {
        return Err(Error::InvalidArgument("accuracy of an empty set".into()));
    }
    let hits = preds.iter().zip(golds).filter(|(p, g)| p == g).count();
    Ok(hits as f64 / preds.len() as f64)
}

/// F1 of the positive class (label 1); 0 when precision + recall is 0.
pub fn f1_binary(preds: &[usize], golds: &[usize]) -> Result<f64> {
    same_len(preds.len(), golds.len())?;
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    for (&p, &g) in preds.iter().zip(golds) {
        match (p == 1, g == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            (false, false) => {}
        }
    }
    let precision = if tp + fp > 0 { tp as f64 / (tp + fp) as f64 } else { 0.0 };
    let recall = if tp + fneg > 0 { tp as f64 / (tp + fneg) as f64 } else { 0.0 };
    if precision + recall == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * precision * recall / (precision + recall))
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sample Pearson correlation. Zero variance in either input is an error.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    same_len(x.len(), y.len())?;
    if x.len() < 2 {
        return Err(Error::InvalidArgument("pearson needs at least 2 points".into()));
    }
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::InvalidArgument("pearson undefined for zero variance".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && x[order[j]] == x[order[i]] {
            j += 1;
        }
        // positions i..j hold ranks i+1..=j
        let avg = (i + 1 + j) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = avg;
        }
        i = j;
    }
    ranks
}

pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    same_len(x.len(), y.len())?;
    pearson(&average_ranks(x), &average_ranks(y))
}

/// MSE after mapping both unit-scale sequences onto `report_range`.
pub fn mse_metric(preds: &[f64], golds: &[f64], report_range: ScoreRange) -> Result<f64> {
    same_len(preds.len(), golds.len())?;
    if preds.is_empty() {
        return Err(Error::InvalidArgument("mse of an empty set".into()));
    }
    let mut total = 0.0;
    for (&p, &g) in preds.iter().zip(golds) {
        let d = unscale_score(p, report_range)? - unscale_score(g, report_range)?;
        total += d * d;
    }
    Ok(total / preds.len() as f64)
}

/// Named metric values for one evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub task: TaskKind,
    pub values: BTreeMap<String, f64>,
}

impl MetricReport {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.values.get(name).copied()
    }

    /// Metrics for classification predictions. F1 is included for binary tasks.
    pub fn classification(task: TaskKind, preds: &[usize], golds: &[usize]) -> Result<Self> {
        let mut values = BTreeMap::new();
        values.insert("accuracy".to_string(), accuracy(preds, golds)?);
        if task == TaskKind::Paraphrase2 {
            values.insert("f1".to_string(), f1_binary(preds, golds)?);
        }
        Ok(MetricReport { task, values })
    }

    /// Pearson, Spearman and MSE (on `report_range`) for unit-scale scores.
    pub fn relatedness(preds: &[f64], golds: &[f64], report_range: ScoreRange) -> Result<Self> {
        let mut values = BTreeMap::new();
        values.insert("pearson".to_string(), pearson(preds, golds)?);
        values.insert("spearman".to_string(), spearman(preds, golds)?);
        values.insert("mse".to_string(), mse_metric(preds, golds, report_range)?);
        Ok(MetricReport {
            task: TaskKind::Relatedness,
            values,
        })
    }

    pub fn summary(&self) -> String {
        self.values
            .iter()
            .map(|(k, v)| format!("{k}={v:.4}"))
            .collect::<Vec<_>>()
            .join(" ")
    }
}
