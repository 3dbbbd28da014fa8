//! Classification metrics: AUROC, balanced accuracy and F1.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Averaging used by [`f1_score`] over classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum F1Average {
    #[default]
    Macro,
    Micro,
    Weighted,
}

/// Binary AUROC: the probability a random positive outranks a random
/// negative, ties counted one half. Computed from midranks.
pub fn binary_auroc(scores: &[f64], positive: &[bool]) -> Result<f64> {
    if scores.len() != positive.len() {
        return Err(Error::Contract(format!("{} scores for {} labels", scores.len(), positive.len())));
    }
    if let Some(s) = scores.iter().find(|s| s.is_nan()) {
        return Err(Error::Evaluation(format!("score {s} is not a number")));
    }
    let n_pos = positive.iter().filter(|p| **p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric(format!(
            "AUROC needs both classes ({n_pos} positives, {n_neg} negatives)"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Sum of positive midranks (1-based); tie groups share their mean rank.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += mid * order[i..=j].iter().filter(|&&k| positive[k]).count() as f64;
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

fn check_labels(labels: &[usize], num_classes: usize) -> Result<()> {
    if let Some(l) = labels.iter().find(|l| **l >= num_classes) {
        return Err(Error::Contract(format!("label {l} out of range for {num_classes} classes")));
    }
    Ok(())
}

/// AUROC from per-class probability rows. Two classes use the positive-class
/// column; more classes use the unweighted one-vs-rest mean.
pub fn auroc(probs: &[Vec<f64>], labels: &[usize], num_classes: usize) -> Result<f64> {
    if probs.len() != labels.len() {
        return Err(Error::Contract(format!("{} score rows for {} labels", probs.len(), labels.len())));
    }
    check_labels(labels, num_classes)?;
    if let Some(r) = probs.iter().find(|r| r.len() != num_classes) {
        return Err(Error::Contract(format!("score row of width {} for {num_classes} classes", r.len())));
    }
    let one_vs_rest = |c: usize| {
        let s: Vec<f64> = probs.iter().map(|r| r[c]).collect();
        let y: Vec<bool> = labels.iter().map(|l| *l == c).collect();
        binary_auroc(&s, &y)
    };
    if num_classes == 2 {
        return one_vs_rest(1);
    }
    let mut sum = 0.0;
    for c in 0..num_classes {
        sum += one_vs_rest(c)?;
    }
    Ok(sum / num_classes as f64)
}

fn confusion(preds: &[usize], labels: &[usize], num_classes: usize) -> Result<Vec<Vec<usize>>> {
    if preds.len() != labels.len() {
        return Err(Error::Contract(format!("{} predictions for {} labels", preds.len(), labels.len())));
    }
    check_labels(labels, num_classes)?;
    check_labels(preds, num_classes)?;
    let mut m = vec![vec![0usize; num_classes]; num_classes];
    for (&p, &l) in preds.iter().zip(labels) {
        m[l][p] += 1;
    }
    if let Some(c) = (0..num_classes).find(|&c| m[c].iter().sum::<usize>() == 0) {
        return Err(Error::UndefinedMetric(format!("class {c} has no labeled samples")));
    }
    Ok(m)
}

/// Unweighted mean of per-class recalls.
pub fn balanced_accuracy(preds: &[usize], labels: &[usize], num_classes: usize) -> Result<f64> {
    let m = confusion(preds, labels, num_classes)?;
    let recall_sum: f64 = (0..num_classes)
        .map(|c| m[c][c] as f64 / m[c].iter().sum::<usize>() as f64)
        .sum();
    Ok(recall_sum / num_classes as f64)
}

/// F1 over classes; a class with no true positives scores 0.
pub fn f1_score(preds: &[usize], labels: &[usize], num_classes: usize, average: F1Average) -> Result<f64> {
    let m = confusion(preds, labels, num_classes)?;
    let tp = |c: usize| m[c][c] as f64;
    let support = |c: usize| m[c].iter().sum::<usize>() as f64;
    let predicted = |c: usize| (0..num_classes).map(|r| m[r][c]).sum::<usize>() as f64;
    let class_f1 = |c: usize| {
        let denom = support(c) + predicted(c);
        if tp(c) == 0.0 {
            0.0
        } else {
            2.0 * tp(c) / denom
        }
    };
    Ok(match average {
        F1Average::Macro => (0..num_classes).map(class_f1).sum::<f64>() / num_classes as f64,
        // Single-label micro F1 reduces to accuracy.
        F1Average::Micro => (0..num_classes).map(tp).sum::<f64>() / preds.len() as f64,
        F1Average::Weighted => (0..num_classes).map(|c| class_f1(c) * support(c)).sum::<f64>() / preds.len() as f64,
    })
}

/// ROC curve points `(fpr, tpr)` from the lowest threshold upward, starting at (0, 0).
pub fn roc_curve(scores: &[f64], positive: &[bool]) -> Vec<(f64, f64)> {
    let n_pos = positive.iter().filter(|p| **p).count().max(1) as f64;
    let n_neg = positive.iter().filter(|p| !**p).count().max(1) as f64;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut pts = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0.0, 0.0);
    for (i, &k) in order.iter().enumerate() {
        if positive[k] {
            tp += 1.0;
        } else {
            fp += 1.0;
        }
        if i + 1 == order.len() || scores[order[i + 1]] != scores[k] {
            pts.push((fp / n_neg, tp / n_pos));
        }
    }
    pts
}
