//! Historical change features of mutated code: churn, age and author counts
//! for the mutated line and its enclosing function, plus the operator.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::astmatch::{match_trees, NodeMapping};
use crate::histstore::{Days, HistoryBundle};
use crate::lifecycle::{ratio_f64, FinalStatus, PropagationTrace};
use crate::minilang::{join_tokens, line_texts, NodeId, Program};
use crate::mutgen::Mutant;

/// Feature names in model column order.
pub const FEATURE_NAMES: [&str; 9] = [
    "mutOp",
    "l_churn",
    "l_min_age",
    "l_max_age",
    "l_n_authors",
    "e_churn",
    "e_min_age",
    "e_max_age",
    "e_n_authors",
];

/// One step of a traced element's history.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub revision: usize,
    pub author: String,
    /// `false` for the introducing revision, `true` for later changes.
    pub changed: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineHistory {
    /// Introduction first, then changes in revision order.
    pub records: Vec<HistoryRecord>,
    /// The mapping chain broke although the element's text was still
    /// present one revision earlier; history starts at the break.
    pub truncated: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Granular {
    pub churn: u32,
    pub min_age: Days,
    pub max_age: Days,
    pub n_authors: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub mut_op: u8,
    pub line: Granular,
    pub method: Granular,
    /// Either history was cut short by an untraceable break.
    pub truncated: bool,
}

impl FeatureVector {
    /// Values in [`FEATURE_NAMES`] order.
    pub fn values(&self) -> [f64; 9] {
        let (l, e) = (&self.line, &self.method);
        [
            self.mut_op as f64,
            l.churn as f64,
            ratio_f64(l.min_age),
            ratio_f64(l.max_age),
            l.n_authors as f64,
            e.churn as f64,
            ratio_f64(e.min_age),
            ratio_f64(e.max_age),
            e.n_authors as f64,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FeatureError {
    #[error("mutant {0} refers to a file missing from the injection revision")]
    UnknownFile(String),
    #[error("mutant {mutant}: node {node} does not exist")]
    UnknownNode { mutant: String, node: NodeId },
}

/// Mappings between consecutive revisions for a set of files, up to the
/// injection revision.
pub struct HistoryIndex<'b> {
    bundle: &'b HistoryBundle,
    maps: HashMap<(usize, String), Option<NodeMapping>>,
}

impl<'b> HistoryIndex<'b> {
    pub fn new(bundle: &'b HistoryBundle, files: &[&str]) -> Self {
        let keys: Vec<(usize, String)> = (1..=bundle.injection_index)
            .flat_map(|r| files.iter().map(move |f| (r, f.to_string())))
            .collect();
        let maps = keys
            .into_par_iter()
            .map(|(r, f)| {
                let m = match (bundle.revisions[r - 1].program(&f), bundle.revisions[r].program(&f)) {
                    (Some(a), Some(b)) => Some(match_trees(a, b)),
                    _ => None,
                };
                ((r, f), m)
            })
            .collect();
        HistoryIndex { bundle, maps }
    }

    fn program(&self, r: usize, file: &str) -> Option<&'b Program> {
        self.bundle.revisions[r].program(file)
    }

    /// Walk `node` back from revision `at`, comparing `text(program, node)`
    /// at each step.
    fn trace(&self, file: &str, at: usize, node: NodeId, text: impl Fn(&Program, NodeId) -> String) -> LineHistory {
        let revs = &self.bundle.revisions;
        let mut changes = Vec::new();
        let (mut r, mut n) = (at, node);
        let kind = self.program(r, file).expect("file at revision").node(n).kind;
        let mut cur = text(self.program(r, file).expect("file at revision"), n);
        let mut truncated = false;
        while r > 0 {
            let prev = self.maps[&(r, file.to_string())].as_ref().and_then(|m| m.get_old(n));
            let Some(p) = prev else {
                // a lost chain with the same text still present one revision
                // back is a matcher gap, not an introduction
                if let Some(pp) = self.program(r - 1, file) {
                    truncated = pp.nodes.iter().any(|x| x.kind == kind && text(pp, x.id) == cur);
                }
                break;
            };
            let before = text(self.program(r - 1, file).expect("mapped file"), p);
            if before != cur {
                changes.push(r);
            }
            cur = before;
            n = p;
            r -= 1;
        }
        let mut records = vec![HistoryRecord {
            revision: r,
            author: revs[r].author.clone(),
            changed: false,
        }];
        records.extend(changes.into_iter().rev().map(|c| HistoryRecord {
            revision: c,
            author: revs[c].author.clone(),
            changed: true,
        }));
        LineHistory { records, truncated }
    }

    /// History of source line `line` of `file` at revision `at`, traced
    /// through the statement that owns it.
    pub fn trace_line_history(&self, file: &str, line: u32, at: usize, node: NodeId) -> LineHistory {
        let p = self.program(at, file).expect("file at revision");
        let stmt = p.enclosing_statement(node).unwrap_or(node);
        let offset = line.saturating_sub(p.node(stmt).span.start_line);
        self.trace(file, at, stmt, move |prog, s| {
            let span = prog.node(s).span;
            let l = (span.start_line + offset).min(span.end_line);
            line_texts(prog).remove(&l).unwrap_or_default()
        })
    }

    /// History of the function enclosing `node` at revision `at`.
    pub fn trace_method_history(&self, file: &str, at: usize, node: NodeId) -> LineHistory {
        let p = self.program(at, file).expect("file at revision");
        let f = p.enclosing_fn(node).unwrap_or(Program::ROOT);
        self.trace(file, at, f, |prog, id| join_tokens(prog.node_tokens(id)))
    }

    fn granular(&self, h: &LineHistory, at: usize) -> Granular {
        let b = self.bundle;
        let intro = h.records[0].revision;
        let last = h.records.last().expect("introduction").revision;
        let authors: BTreeSet<&str> = h.records.iter().map(|r| r.author.as_str()).collect();
        Granular {
            churn: h.records.iter().filter(|r| r.changed).count() as u32,
            min_age: b.elapsed_days(last, at).expect("ordered"),
            max_age: b.elapsed_days(intro, at).expect("ordered"),
            n_authors: authors.len() as u32,
        }
    }

    /// Features of `mutant`, generated at the bundle's injection revision.
    pub fn features_for(&self, mutant: &Mutant) -> Result<FeatureVector, FeatureError> {
        let at = self.bundle.injection_index;
        let p = self
            .program(at, &mutant.file)
            .ok_or_else(|| FeatureError::UnknownFile(mutant.mutant_id.clone()))?;
        if mutant.node_id >= p.len() {
            return Err(FeatureError::UnknownNode {
                mutant: mutant.mutant_id.clone(),
                node: mutant.node_id,
            });
        }
        let lh = self.trace_line_history(&mutant.file, mutant.line, at, mutant.node_id);
        let mh = self.trace_method_history(&mutant.file, at, mutant.node_id);
        Ok(FeatureVector {
            mut_op: mutant.operator.ordinal(),
            line: self.granular(&lh, at),
            method: self.granular(&mh, at),
            truncated: lh.truncated || mh.truncated,
        })
    }
}

/// Features of a single mutant.
pub fn features_for(mutant: &Mutant, bundle: &HistoryBundle) -> Result<FeatureVector, FeatureError> {
    HistoryIndex::new(bundle, &[&mutant.file]).features_for(mutant)
}

/// Class label used for training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    L,
    NL,
    D,
}

impl Label {
    pub const ALL: [Label; 3] = [Label::L, Label::NL, Label::D];

    /// `None` for ambiguous mutants, which are not used for training.
    pub fn from_status(s: FinalStatus) -> Option<Label> {
        match s {
            FinalStatus::Latent => Some(Label::L),
            FinalStatus::NonLatent => Some(Label::NL),
            FinalStatus::Discarded => Some(Label::D),
            FinalStatus::Ambiguous => None,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn code(self) -> &'static str {
        match self {
            Label::L => "L",
            Label::NL => "NL",
            Label::D => "D",
        }
    }

    pub fn from_code(s: &str) -> Option<Label> {
        Label::ALL.into_iter().find(|l| l.code() == s)
    }
}

/// One labelled row of `features.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub mutant_id: String,
    pub values: [f64; 9],
    pub label: Label,
}

/// Labelled feature rows for every non-ambiguous trace.
pub fn feature_rows(bundle: &HistoryBundle, mutants: &[Mutant], traces: &[PropagationTrace]) -> Result<Vec<FeatureRow>, FeatureError> {
    let by_id: HashMap<&str, &Mutant> = mutants.iter().map(|m| (m.mutant_id.as_str(), m)).collect();
    let mut files: Vec<&str> = mutants.iter().map(|m| m.file.as_str()).collect();
    files.sort_unstable();
    files.dedup();
    let index = HistoryIndex::new(bundle, &files);
    let mut rows: Vec<FeatureRow> = traces
        .par_iter()
        .filter_map(|t| Some((t, Label::from_status(t.final_status)?, *by_id.get(t.mutant_id.as_str())?)))
        .map(|(t, label, m)| {
            Ok(FeatureRow {
                mutant_id: t.mutant_id.clone(),
                values: index.features_for(m)?.values(),
                label,
            })
        })
        .collect::<Result<_, FeatureError>>()?;
    rows.sort_by(|a, b| a.mutant_id.cmp(&b.mutant_id));
    Ok(rows)
}

pub fn csv_header() -> String {
    format!("mutant_id,{},label", FEATURE_NAMES.join(","))
}

/// Render rows as `features.csv`.
pub fn to_csv(rows: &[FeatureRow]) -> String {
    let mut out = csv_header();
    out.push('\n');
    for r in rows {
        out.push_str(&r.mutant_id);
        for v in r.values {
            let _ = write!(out, ",{v}");
        }
        let _ = writeln!(out, ",{}", r.label.code());
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("features.csv line {line}: {reason}")]
pub struct CsvError {
    pub line: usize,
    pub reason: String,
}

/// Parse `features.csv` produced by [`to_csv`].
pub fn from_csv(text: &str) -> Result<Vec<FeatureRow>, CsvError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == csv_header() => {}
        _ => {
            return Err(CsvError {
                line: 1,
                reason: "unexpected header".into(),
            })
        }
    }
    let mut rows = Vec::new();
    for (i, l) in lines.filter(|(_, l)| !l.trim().is_empty()) {
        let err = |reason: &str| CsvError {
            line: i + 1,
            reason: reason.into(),
        };
        let cells: Vec<&str> = l.trim().split(',').collect();
        if cells.len() != 11 {
            return Err(err("expected 11 columns"));
        }
        let mut values = [0.0; 9];
        for (k, c) in cells[1..10].iter().enumerate() {
            values[k] = c.parse().map_err(|_| err("bad number"))?;
        }
        rows.push(FeatureRow {
            mutant_id: cells[0].to_string(),
            values,
            label: Label::from_code(cells[10]).ok_or_else(|| err("bad label"))?,
        });
    }
    Ok(rows)
}
