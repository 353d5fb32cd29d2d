//! Evaluation metrics for latent-mutant prediction: accuracy, one-vs-rest
//! per-class accuracy, balanced accuracy, mean average precision, and a
//! uniform random baseline. Also renders the report tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::forest::{mix, rng, CvResult};
use crate::histfeat::Label;

/// Compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    c: f64,
    n: usize,
}

impl KahanSum {
    pub fn add(&mut self, v: f64) {
        let y = v - self.c;
        let t = self.sum + y;
        self.c = (t - self.sum) - y;
        self.sum = t;
        self.n += 1;
    }

    pub fn sum(&self) -> f64 {
        self.sum
    }

    pub fn mean(&self) -> Option<f64> {
        (self.n > 0).then(|| self.sum / self.n as f64)
    }
}

impl FromIterator<f64> for KahanSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut k = KahanSum::default();
        iter.into_iter().for_each(|v| k.add(v));
        k
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricsError {
    #[error("no rows to evaluate")]
    Empty,
    #[error("{predictions} predictions for {labels} labels")]
    LengthMismatch { predictions: usize, labels: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub acc: f64,
    /// One-vs-rest accuracy for L, NL and D.
    pub per_class: [f64; 3],
    /// Mean recall over the classes present in the labels.
    pub balanced_acc: f64,
}

pub fn accuracy_suite(predictions: &[Label], labels: &[Label]) -> Result<Accuracy, MetricsError> {
    if predictions.len() != labels.len() {
        return Err(MetricsError::LengthMismatch {
            predictions: predictions.len(),
            labels: labels.len(),
        });
    }
    if labels.is_empty() {
        return Err(MetricsError::Empty);
    }
    let n = labels.len() as f64;
    let pairs = || predictions.iter().zip(labels);
    let acc = pairs().filter(|(p, l)| p == l).count() as f64 / n;
    let per_class = Label::ALL.map(|c| pairs().filter(|(p, l)| (**p == c) == (**l == c)).count() as f64 / n);
    let recalls: KahanSum = Label::ALL
        .into_iter()
        .filter_map(|c| {
            let support = labels.iter().filter(|&&l| l == c).count();
            (support > 0).then(|| pairs().filter(|(p, l)| **l == c && **p == c).count() as f64 / support as f64)
        })
        .collect();
    Ok(Accuracy {
        acc,
        per_class,
        balanced_acc: recalls.mean().expect("at least one class present"),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedMutant {
    pub mutant_id: String,
    pub p_latent: f64,
    pub is_latent: bool,
}

/// The live mutants of one revision ordered by predicted latency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedRevision {
    pub revision: String,
    pub mutants: Vec<RankedMutant>,
}

impl RankedRevision {
    /// Sorts by probability descending, then mutant id ascending.
    pub fn new(revision: impl Into<String>, mut mutants: Vec<RankedMutant>) -> Self {
        mutants.sort_by(|a, b| b.p_latent.total_cmp(&a.p_latent).then_with(|| a.mutant_id.cmp(&b.mutant_id)));
        RankedRevision {
            revision: revision.into(),
            mutants,
        }
    }

    /// Average precision of the ranking; `None` when the revision has no
    /// latent mutant or only latent mutants.
    pub fn average_precision(&self) -> Option<f64> {
        average_precision(self.mutants.iter().map(|m| m.is_latent))
    }
}

/// Average precision of a ranked relevance list; `None` when it holds no
/// relevant item or nothing else.
pub fn average_precision(ranked: impl IntoIterator<Item = bool>) -> Option<f64> {
    let (mut hits, mut n) = (0usize, 0usize);
    let mut sum = KahanSum::default();
    for latent in ranked {
        n += 1;
        if latent {
            hits += 1;
            sum.add(hits as f64 / n as f64);
        }
    }
    (hits > 0 && hits < n).then(|| sum.sum() / hits as f64)
}

/// Mean of the per-revision average precisions, skipping revisions with no
/// or only latent mutants; `None` ("--") when every revision is skipped.
pub fn mean_average_precision(revisions: &[RankedRevision]) -> Option<f64> {
    revisions
        .iter()
        .filter_map(RankedRevision::average_precision)
        .collect::<KahanSum>()
        .mean()
}

/// Report rendering of an optional metric.
pub fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "--".to_string(), |v| format!("{v:.4}"))
}

/// Metric bundle shared by the model and the random baseline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub accuracy: Accuracy,
    pub map: Option<f64>,
}

/// A labelled row for baselines: the label and the revision it belongs to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelledRow {
    pub mutant_id: String,
    pub revision: String,
    pub label: Label,
}

fn rankings(rows: &[LabelledRow], p: impl Fn(usize) -> f64) -> Vec<RankedRevision> {
    let mut by_rev: BTreeMap<&str, Vec<RankedMutant>> = BTreeMap::new();
    for (i, r) in rows.iter().enumerate() {
        by_rev.entry(&r.revision).or_default().push(RankedMutant {
            mutant_id: r.mutant_id.clone(),
            p_latent: p(i),
            is_latent: r.label == Label::L,
        });
    }
    by_rev.into_iter().map(|(k, v)| RankedRevision::new(k, v)).collect()
}

/// Uniformly random labels and rankings, averaged over `trials`.
pub fn random_baseline(rows: &[LabelledRow], seed: u64, trials: usize) -> Result<Scores, MetricsError> {
    if rows.is_empty() {
        return Err(MetricsError::Empty);
    }
    let labels: Vec<Label> = rows.iter().map(|r| r.label).collect();
    let (mut acc, mut bal, mut map) = (KahanSum::default(), KahanSum::default(), KahanSum::default());
    let mut per = [KahanSum::default(); 3];
    for t in 0..trials {
        let mut g = rng(mix(seed, t as u64));
        let preds: Vec<Label> = rows.iter().map(|_| Label::ALL[g.gen_range(0..3)]).collect();
        let a = accuracy_suite(&preds, &labels)?;
        acc.add(a.acc);
        bal.add(a.balanced_acc);
        for (k, v) in per.iter_mut().zip(a.per_class) {
            k.add(v);
        }
        // a random permutation expressed as scores keeps tie-breaking out
        let mut order: Vec<usize> = (0..rows.len()).collect();
        order.shuffle(&mut g);
        let mut score = vec![0.0; rows.len()];
        for (rank, &i) in order.iter().enumerate() {
            score[i] = -(rank as f64);
        }
        if let Some(m) = mean_average_precision(&rankings(rows, |i| score[i])) {
            map.add(m);
        }
    }
    Ok(Scores {
        accuracy: Accuracy {
            acc: acc.mean().unwrap_or(0.0),
            per_class: per.map(|k| k.mean().unwrap_or(0.0)),
            balanced_acc: bal.mean().unwrap_or(0.0),
        },
        map: map.mean(),
    })
}

/// Model scores from cross-validation predictions restricted to rows for
/// which `keep(group)` holds, averaged over repeats.
pub fn cv_scores(cv: &CvResult, keep: impl Fn(&str) -> bool) -> Option<Scores> {
    let (mut acc, mut bal, mut map) = (KahanSum::default(), KahanSum::default(), KahanSum::default());
    let mut per = [KahanSum::default(); 3];
    for r in 0..cv.config.repeats {
        let preds: Vec<_> = cv.repeat(r).filter(|p| keep(&p.group)).collect();
        let Ok(a) = accuracy_suite(
            &preds.iter().map(|p| p.predicted()).collect::<Vec<_>>(),
            &preds.iter().map(|p| p.label).collect::<Vec<_>>(),
        ) else {
            continue;
        };
        acc.add(a.acc);
        bal.add(a.balanced_acc);
        for (k, v) in per.iter_mut().zip(a.per_class) {
            k.add(v);
        }
        let rows: Vec<LabelledRow> = preds
            .iter()
            .map(|p| LabelledRow {
                mutant_id: p.id.clone(),
                revision: p.group.clone(),
                label: p.label,
            })
            .collect();
        if let Some(m) = mean_average_precision(&rankings(&rows, |i| preds[i].proba[Label::L.index()])) {
            map.add(m);
        }
    }
    Some(Scores {
        accuracy: Accuracy {
            acc: acc.mean()?,
            per_class: per.map(|k| k.mean().unwrap_or(0.0)),
            balanced_acc: bal.mean()?,
        },
        map: map.mean(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub name: String,
    pub rows: usize,
    pub model: Scores,
    pub random: Scores,
}

/// One row per bundle plus a `Total` row over everything. `bundle_of` maps
/// a row group to its bundle name.
pub fn build_report(cv: &CvResult, bundle_of: impl Fn(&str) -> String, seed: u64, trials: usize) -> Vec<ReportRow> {
    let mut names: Vec<String> = cv.repeat(0).map(|p| bundle_of(&p.group)).collect();
    names.sort();
    names.dedup();
    let labelled = |keep: &dyn Fn(&str) -> bool| -> Vec<LabelledRow> {
        cv.repeat(0)
            .filter(|p| keep(&p.group))
            .map(|p| LabelledRow {
                mutant_id: p.id.clone(),
                revision: p.group.clone(),
                label: p.label,
            })
            .collect()
    };
    let mut out = Vec::new();
    let mut push = |name: String, keep: &dyn Fn(&str) -> bool, stream: u64| {
        let rows = labelled(keep);
        if let (Some(model), Ok(random)) = (cv_scores(cv, keep), random_baseline(&rows, mix(seed, stream), trials)) {
            out.push(ReportRow {
                name,
                rows: rows.len(),
                model,
                random,
            });
        }
    };
    for (i, name) in names.iter().enumerate() {
        push(name.clone(), &|g: &str| bundle_of(g) == *name, i as u64);
    }
    push("Total".into(), &|_: &str| true, names.len() as u64);
    out
}

pub fn report_csv(rows: &[ReportRow]) -> String {
    let mut out = String::from("bundle,rows,acc,acc_L,acc_NL,acc_D,bal_acc,MAP,random_acc,random_bal_acc,random_MAP\n");
    for r in rows {
        let (m, x) = (&r.model.accuracy, &r.random.accuracy);
        let _ = writeln!(
            out,
            "{},{},{:.4},{:.4},{:.4},{:.4},{:.4},{},{:.4},{:.4},{}",
            r.name,
            r.rows,
            m.acc,
            m.per_class[0],
            m.per_class[1],
            m.per_class[2],
            m.balanced_acc,
            fmt_opt(r.model.map),
            x.acc,
            x.balanced_acc,
            fmt_opt(r.random.map)
        );
    }
    out
}

pub fn report_md(rows: &[ReportRow], importance: &[(String, f64)]) -> String {
    let mut out = String::from("# Latent mutant prediction\n\n");
    out.push_str("| Bundle | Rows | RF acc (L/NL/D) | RF bal. acc | RF MAP | Random acc | Random bal. acc | Random MAP |\n");
    out.push_str("|---|---:|---|---:|---:|---:|---:|---:|\n");
    for r in rows {
        let (m, x) = (&r.model.accuracy, &r.random.accuracy);
        let _ = writeln!(
            out,
            "| {} | {} | {:.2} ({:.2}/{:.2}/{:.2}) | {:.2} | {} | {:.2} | {:.2} | {} |",
            r.name,
            r.rows,
            m.acc,
            m.per_class[0],
            m.per_class[1],
            m.per_class[2],
            m.balanced_acc,
            r.model.map.map_or("--".into(), |v| format!("{v:.2}")),
            x.acc,
            x.balanced_acc,
            r.random.map.map_or("--".into(), |v| format!("{v:.2}")),
        );
    }
    if !importance.is_empty() {
        out.push_str("\n## Feature importance\n\n| Feature | Importance |\n|---|---:|\n");
        for (name, v) in importance {
            let _ = writeln!(out, "| {name} | {v:.4} |");
        }
    }
    out
}
