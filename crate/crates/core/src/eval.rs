//! Classification metrics, McNemar's test and descriptor correlations.

use std::ops::Range;

use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, ChiSquared, ContinuousCDF, DiscreteCDF};
use statrs::function::beta::beta_reg;

use crate::audio::{descriptors, AcousticDescriptors, PitchConfig, Waveform};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub per_class: Vec<ClassMetrics>,
    pub macro_f1: f64,
    pub accuracy: f64,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Per-class precision, recall and F1. A zero denominator gives 0.
pub fn classification_report(pred: &[usize], labels: &[usize], n_classes: usize) -> Result<ClassificationReport> {
    if pred.len() != labels.len() || pred.is_empty() {
        return Err(Error::dim(
            "classification_report",
            "N",
            format!("{} predictions vs {} labels", pred.len(), labels.len()),
        ));
    }
    if let Some(&bad) = pred.iter().chain(labels).find(|&&c| c >= n_classes) {
        return Err(Error::Index {
            op: "classification_report",
            index: bad,
            bound: n_classes,
        });
    }
    let mut confusion = vec![vec![0usize; n_classes]; n_classes];
    for (&p, &t) in pred.iter().zip(labels) {
        confusion[t][p] += 1;
    }
    let per_class: Vec<ClassMetrics> = (0..n_classes)
        .map(|k| {
            let tp = confusion[k][k];
            let predicted: usize = (0..n_classes).map(|t| confusion[t][k]).sum();
            let support: usize = confusion[k].iter().sum();
            let precision = ratio(tp, predicted);
            let recall = ratio(tp, support);
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            ClassMetrics {
                precision,
                recall,
                f1,
                support,
            }
        })
        .collect();
    let macro_f1 = per_class.iter().map(|m| m.f1).sum::<f64>() / n_classes as f64;
    let correct = (0..n_classes).map(|k| confusion[k][k]).sum();
    Ok(ClassificationReport {
        per_class,
        macro_f1,
        accuracy: ratio(correct, pred.len()),
        confusion,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McNemarResult {
    /// A right, B wrong.
    pub b: usize,
    /// A wrong, B right.
    pub c: usize,
    /// `min(b, c)` on the exact path, the corrected chi-square otherwise.
    pub statistic: f64,
    pub p_value: f64,
    pub exact: bool,
    /// No discordant pairs.
    pub degenerate: bool,
}

/// Paired comparison of two classifiers on the same labels.
pub fn mcnemar(pred_a: &[usize], pred_b: &[usize], labels: &[usize]) -> Result<McNemarResult> {
    if pred_a.len() != labels.len() || pred_b.len() != labels.len() {
        return Err(Error::dim(
            "mcnemar",
            "N",
            format!("{} / {} predictions vs {} labels", pred_a.len(), pred_b.len(), labels.len()),
        ));
    }
    let mut b = 0;
    let mut c = 0;
    for ((&a, &p), &t) in pred_a.iter().zip(pred_b).zip(labels) {
        match (a == t, p == t) {
            (true, false) => b += 1,
            (false, true) => c += 1,
            _ => {}
        }
    }
    Ok(mcnemar_counts(b, c))
}

/// Exact two-sided binomial test below 25 discordant pairs, continuity
/// corrected chi-square with one degree of freedom from 25 on.
pub fn mcnemar_counts(b: usize, c: usize) -> McNemarResult {
    let n = b + c;
    if n == 0 {
        return McNemarResult {
            b,
            c,
            statistic: 0.0,
            p_value: 1.0,
            exact: true,
            degenerate: true,
        };
    }
    if n < 25 {
        let k = b.min(c);
        let tail = Binomial::new(0.5, n as u64).expect("valid binomial").cdf(k as u64);
        McNemarResult {
            b,
            c,
            statistic: k as f64,
            p_value: (2.0 * tail).min(1.0),
            exact: true,
            degenerate: false,
        }
    } else {
        let d = (b as f64 - c as f64).abs() - 1.0;
        let stat = d.max(0.0).powi(2) / n as f64;
        let p = ChiSquared::new(1.0).expect("valid chi-square").sf(stat);
        McNemarResult {
            b,
            c,
            statistic: stat,
            p_value: p,
            exact: false,
            degenerate: false,
        }
    }
}

/// Pearson correlation; `None` when either input has zero variance or
/// fewer than two points.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    assert_eq!(x.len(), y.len(), "pearson inputs must align");
    if x.len() < 2 {
        return None;
    }
    let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (i, (&a, &b)) in x.iter().zip(y).enumerate() {
        let k = (i + 1) as f64;
        let dx = a - mx;
        let dy = b - my;
        mx += dx / k;
        my += dy / k;
        sxx += dx * (a - mx);
        syy += dy * (b - my);
        sxy += dx * (b - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Two-sided p-value of `r` over `n` pairs from Student's t with `n − 2`
/// degrees of freedom.
pub fn pearson_p_value(r: f64, n: usize) -> f64 {
    assert!(n >= 3, "need at least three pairs");
    if r.abs() >= 1.0 {
        return 0.0;
    }
    let df = (n - 2) as f64;
    let t2 = r * r * df / (1.0 - r * r);
    beta_reg(df / 2.0, 0.5, df / (df + t2))
}

/// Two-sided tail probability `P(|T| ≥ |t|)` for `df` degrees of freedom.
pub fn student_t_two_sided(t: f64, df: f64) -> f64 {
    beta_reg(df / 2.0, 0.5, df / (df + t * t))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationRow {
    pub descriptor: String,
    pub r: Option<f64>,
    pub p_value: Option<f64>,
    pub n: usize,
    pub significant: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flag: Option<String>,
}

/// Correlate each descriptor with the model's depression probability.
pub fn correlate_descriptors(rows: &[AcousticDescriptors], probs: &[f64]) -> Result<Vec<CorrelationRow>> {
    if rows.len() != probs.len() {
        return Err(Error::dim(
            "correlate_descriptors",
            "N",
            format!("{} descriptor rows vs {} probabilities", rows.len(), probs.len()),
        ));
    }
    let n = rows.len();
    Ok(AcousticDescriptors::NAMES
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let x: Vec<f64> = rows.iter().map(|d| d.values()[k]).collect();
            let (r, p, flag) = if n < 3 {
                (None, None, Some(format!("only {n} pairs")))
            } else {
                match pearson(&x, probs) {
                    Some(r) => (Some(r), Some(pearson_p_value(r, n)), None),
                    None => (None, None, Some("zero variance".to_string())),
                }
            };
            CorrelationRow {
                descriptor: name.to_string(),
                r,
                p_value: p,
                n,
                significant: p.is_some_and(|p| p < 0.05),
                flag,
            }
        })
        .collect())
}

/// Descriptors over the concatenated audio of each window.
pub fn window_descriptors(waves: &[Waveform], windows: &[Range<usize>], cfg: &PitchConfig) -> Vec<AcousticDescriptors> {
    crate::par::map_slice(windows, |r| {
        let sr = waves.first().map_or(16_000, |w| w.sample_rate);
        let joined = Waveform::concat(&waves[r.clone()], sr);
        descriptors(&joined, cfg)
    })
}

/// Plain-text table of a binary report in Precision / Recall / F1 / Macro F1
/// column order.
pub fn format_report_table(report: &ClassificationReport, class_names: &[&str]) -> String {
    let mut s = format!("{:<14}{:>10}{:>10}{:>10}{:>10}\n", "class", "Precision", "Recall", "F1", "Support");
    for (name, m) in class_names.iter().zip(&report.per_class) {
        s += &format!(
            "{:<14}{:>10.4}{:>10.4}{:>10.4}{:>10}\n",
            name, m.precision, m.recall, m.f1, m.support
        );
    }
    s += &format!("{:<14}{:>40.4}\n", "macro F1", report.macro_f1);
    s
}

pub fn format_correlation_table(rows: &[CorrelationRow]) -> String {
    let mut s = format!("{:<16}{:>10}{:>12}{:>6}{:>6}\n", "descriptor", "r", "p", "N", "sig");
    for row in rows {
        let r = row.r.map_or("n/a".into(), |r| format!("{r:.4}"));
        let p = row.p_value.map_or("n/a".into(), |p| format!("{p:.3e}"));
        s += &format!(
            "{:<16}{:>10}{:>12}{:>6}{:>6}\n",
            row.descriptor,
            r,
            p,
            row.n,
            if row.significant { "*" } else { "" }
        );
    }
    s
}
