//! Mutant lifecycles: carrying live mutants forward through a history,
//! rerunning later suites, and assigning final statuses, reveal categories
//! and lifespans.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use num_rational::Ratio;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::astmatch::{classify_with, match_trees, ChangeClass, FileChange, NodeMapping};
use crate::histstore::{Days, HistoryBundle};
use crate::minilang::{parse, NodeId, Program};
use crate::mutgen::{mutate_at, sha256_hex, MutOperator, Mutant};
use crate::runner::{kill_matrix, Baseline, ExecStatus, InitialStatus, RunnerError, DEFAULT_STEP_BUDGET};

/// Default observation threshold N_thr, in days.
pub const DEFAULT_N_THR_DAYS: i64 = 365;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FinalStatus {
    Latent,
    NonLatent,
    Discarded,
    Ambiguous,
}

impl FinalStatus {
    pub const ALL: [FinalStatus; 4] = [
        FinalStatus::Latent,
        FinalStatus::NonLatent,
        FinalStatus::Discarded,
        FinalStatus::Ambiguous,
    ];
}

impl fmt::Display for FinalStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// How a latent mutant was revealed: the prefix says what happened to the
/// mutated line before the kill (semantic change, refactoring only, no
/// change), the suffix whether the kill revision itself touched the line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[allow(non_camel_case_types)]
pub enum RevealCategory {
    SC_C,
    SC_NC,
    RC_C,
    RC_NC,
    NC_NC,
}

impl RevealCategory {
    pub const ALL: [RevealCategory; 5] = [
        RevealCategory::SC_C,
        RevealCategory::SC_NC,
        RevealCategory::RC_C,
        RevealCategory::RC_NC,
        RevealCategory::NC_NC,
    ];
}

impl fmt::Display for RevealCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// What happened to a mutant at one revision. Line flags describe the
/// change from the previous revision on the line that held the mutated node.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub revision: usize,
    /// The mutated node in this revision, `None` once it is gone.
    pub node: Option<NodeId>,
    pub file_changed: ChangeClass,
    pub suite_rerun: bool,
    pub new_failing_tests: Vec<String>,
    pub line: Option<u32>,
    pub line_touched: bool,
    pub line_semantic: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PropagationTrace {
    pub mutant_id: String,
    pub file: String,
    pub operator: MutOperator,
    pub injection_index: usize,
    pub entries: Vec<TraceEntry>,
    #[serde(rename = "final")]
    pub final_status: FinalStatus,
    /// Revision of the event that fixed the final status (kill, discard, or
    /// the end of the history).
    pub final_revision: usize,
    pub killed_at: Option<usize>,
    pub reveal_category: Option<RevealCategory>,
    pub lifespan_days: Days,
    pub lifespan_revisions: usize,
    pub reapplication_failure: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LifecycleError {
    #[error("mutant {0} refers to a file missing from the injection revision")]
    UnknownFile(String),
    #[error("mutant {0} was not generated from the injection revision")]
    StaleMutant(String),
    #[error(transparent)]
    Runner(#[from] RunnerError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("trace is not latent")]
pub struct NotLatent;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PropagateConfig {
    pub n_thr_days: i64,
    pub step_budget: u64,
    /// Only follow mutants that are live at injection.
    pub live_only: bool,
}

impl Default for PropagateConfig {
    fn default() -> Self {
        PropagateConfig {
            n_thr_days: DEFAULT_N_THR_DAYS,
            step_budget: DEFAULT_STEP_BUDGET,
            live_only: true,
        }
    }
}

/// One file between revisions `r - 1` and `r`.
struct Step<'b> {
    mapping: NodeMapping,
    change: FileChange,
    program: &'b Program,
    text: &'b str,
    baseline: Option<Baseline<'b>>,
}

type StepKey<'m> = (usize, &'m str);

fn build_steps<'b, 'm>(bundle: &'b HistoryBundle, files: &[&'m str], step_budget: u64) -> HashMap<StepKey<'m>, Option<Step<'b>>> {
    let keys: Vec<StepKey<'m>> = (bundle.injection_index + 1..bundle.len())
        .flat_map(|r| files.iter().map(move |&f| (r, f)))
        .collect();
    keys.into_par_iter()
        .map(|(r, f)| {
            let (prev, cur) = (&bundle.revisions[r - 1], &bundle.revisions[r]);
            let step = match (prev.program(f), cur.program(f)) {
                (Some(po), Some(pn)) => {
                    let (to, tn) = (prev.text(f).expect("text"), cur.text(f).expect("text"));
                    let mapping = match_trees(po, pn);
                    let change = classify_with(to, po, tn, pn, &mapping);
                    let rerun = change.class != ChangeClass::Unchanged || bundle.suite_changed(r);
                    let baseline = rerun.then(|| Baseline::run(pn, &cur.tests, step_budget));
                    Some(Step {
                        mapping,
                        change,
                        program: pn,
                        text: tn,
                        baseline,
                    })
                }
                _ => None,
            };
            ((r, f), step)
        })
        .collect()
}

/// Follow `mutants` (generated at the bundle's injection revision) through
/// the rest of the history.
pub fn propagate(bundle: &HistoryBundle, mutants: &[Mutant], config: &PropagateConfig) -> Result<Vec<PropagationTrace>, LifecycleError> {
    let inj = bundle.injection();
    for m in mutants {
        let text = inj.text(&m.file).ok_or_else(|| LifecycleError::UnknownFile(m.mutant_id.clone()))?;
        if sha256_hex(text) != m.original_sha256 {
            return Err(LifecycleError::StaleMutant(m.mutant_id.clone()));
        }
    }
    let mut selected: Vec<&Mutant> = mutants.iter().collect();
    if config.live_only {
        let mut by_file: BTreeMap<&str, Vec<Mutant>> = BTreeMap::new();
        for m in mutants {
            by_file.entry(&m.file).or_default().push(m.clone());
        }
        let mut live = std::collections::HashSet::new();
        for (file, ms) in by_file {
            let program = inj.program(file).expect("checked above");
            for (id, k) in kill_matrix(program, &ms, &inj.tests, config.step_budget)? {
                if k.status == InitialStatus::Live {
                    live.insert(id);
                }
            }
        }
        selected.retain(|m| live.contains(&m.mutant_id));
    }
    let mut files: Vec<&str> = selected.iter().map(|m| m.file.as_str()).collect();
    files.sort_unstable();
    files.dedup();
    let steps = build_steps(bundle, &files, config.step_budget);
    Ok(selected.par_iter().map(|m| follow(bundle, m, &steps, config)).collect())
}

fn structure_changed(old: &Program, o: NodeId, new: &Program, n: NodeId) -> bool {
    let (a, b) = (old.node(o), new.node(n));
    a.kind != b.kind || a.label != b.label || a.children.len() != b.children.len()
}

fn follow(
    bundle: &HistoryBundle,
    m: &Mutant,
    steps: &HashMap<StepKey<'_>, Option<Step<'_>>>,
    config: &PropagateConfig,
) -> PropagationTrace {
    let inj = bundle.injection_index;
    let mut entries = vec![TraceEntry {
        revision: inj,
        node: Some(m.node_id),
        file_changed: ChangeClass::Unchanged,
        suite_rerun: false,
        new_failing_tests: vec![],
        line: Some(m.line),
        line_touched: false,
        line_semantic: false,
    }];
    let mut node = m.node_id;
    let mut program: &Program = bundle.injection().program(&m.file).expect("validated");
    let mut outcome: Option<(FinalStatus, usize)> = None;
    let mut killed_at = None;
    let mut reapplication_failure = false;
    for r in inj + 1..bundle.len() {
        let Some(step) = steps[&(r, m.file.as_str())].as_ref() else {
            entries.push(TraceEntry {
                revision: r,
                node: None,
                file_changed: ChangeClass::Semantic,
                suite_rerun: false,
                new_failing_tests: vec![],
                line: None,
                line_touched: true,
                line_semantic: true,
            });
            outcome = Some((FinalStatus::Discarded, r));
            break;
        };
        let flags = step.change.line(program.node(node).span.start_line);
        let mut entry = TraceEntry {
            revision: r,
            node: None,
            file_changed: step.change.class,
            suite_rerun: false,
            new_failing_tests: vec![],
            line: None,
            line_touched: flags.touched,
            line_semantic: flags.semantic,
        };
        let mapped = step
            .mapping
            .get(node)
            .filter(|&n| !structure_changed(program, node, step.program, n));
        let Some(mapped) = mapped else {
            entries.push(entry);
            outcome = Some((FinalStatus::Discarded, r));
            break;
        };
        entry.node = Some(mapped);
        entry.line = Some(step.program.node(mapped).span.start_line);
        let mutated = mutate_at(step.program, step.text, mapped, m.operator)
            .ok()
            .and_then(|mu| parse(&mu.text).ok());
        let Some(mutated) = mutated else {
            reapplication_failure = true;
            entries.push(entry);
            outcome = Some((FinalStatus::Discarded, r));
            break;
        };
        if let Some(baseline) = &step.baseline {
            entry.suite_rerun = true;
            entry.new_failing_tests = baseline
                .tests
                .iter()
                .zip(baseline.against(mapped, &mutated, config.step_budget))
                .filter(|(_, s)| matches!(s, Some(ExecStatus::Fail | ExecStatus::RunError | ExecStatus::Timeout)))
                .map(|(t, _)| t.name.clone())
                .collect();
        }
        let killed = !entry.new_failing_tests.is_empty();
        entries.push(entry);
        node = mapped;
        program = step.program;
        if killed {
            killed_at = Some(r);
            let within = bundle.elapsed_days(inj, r).expect("ordered") <= Ratio::from_integer(config.n_thr_days);
            outcome = Some((if within { FinalStatus::Latent } else { FinalStatus::Ambiguous }, r));
            break;
        }
    }
    let (final_status, final_revision) = outcome.unwrap_or_else(|| {
        let last = bundle.len() - 1;
        let span = bundle.elapsed_days(inj, last).expect("ordered");
        if span >= Ratio::from_integer(config.n_thr_days) {
            (FinalStatus::NonLatent, last)
        } else {
            (FinalStatus::Ambiguous, last)
        }
    });
    let mut trace = PropagationTrace {
        mutant_id: m.mutant_id.clone(),
        file: m.file.clone(),
        operator: m.operator,
        injection_index: inj,
        entries,
        final_status,
        final_revision,
        killed_at,
        reveal_category: None,
        lifespan_days: bundle.elapsed_days(inj, final_revision).expect("ordered"),
        lifespan_revisions: final_revision - inj,
        reapplication_failure,
    };
    trace.reveal_category = categorize_reveal(&trace).ok();
    trace
}

/// Reveal category of a latent trace, from the line flags recorded up to
/// and including the kill revision.
pub fn categorize_reveal(trace: &PropagationTrace) -> Result<RevealCategory, NotLatent> {
    if trace.final_status != FinalStatus::Latent {
        return Err(NotLatent);
    }
    let kill = trace.killed_at.ok_or(NotLatent)?;
    let upto: Vec<&TraceEntry> = trace
        .entries
        .iter()
        .filter(|e| e.revision > trace.injection_index && e.revision <= kill)
        .collect();
    let at_kill = upto.last().is_some_and(|e| e.revision == kill && e.line_touched);
    let semantic = upto.iter().any(|e| e.line_semantic);
    let touched = upto.iter().any(|e| e.line_touched);
    Ok(match (semantic, touched, at_kill) {
        (true, _, true) => RevealCategory::SC_C,
        (true, _, false) => RevealCategory::SC_NC,
        (false, true, true) => RevealCategory::RC_C,
        (false, true, false) => RevealCategory::RC_NC,
        (false, false, _) => RevealCategory::NC_NC,
    })
}

/// Quartiles (type-7 interpolation) and mean of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quartiles {
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub mean: f64,
}

impl Quartiles {
    /// `None` for an empty sample.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let q = |p: f64| {
            let h = (v.len() - 1) as f64 * p;
            let lo = h.floor() as usize;
            let hi = (lo + 1).min(v.len() - 1);
            v[lo] + (h - lo as f64) * (v[hi] - v[lo])
        };
        Some(Quartiles {
            q1: q(0.25),
            median: q(0.5),
            q3: q(0.75),
            mean: v.iter().sum::<f64>() / v.len() as f64,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatusLifespan {
    pub count: usize,
    pub days: Quartiles,
    pub revisions: Quartiles,
}

/// Lifespan statistics per final status. Statuses with no traces are
/// absent.
pub fn lifespan_stats(traces: &[PropagationTrace]) -> BTreeMap<FinalStatus, StatusLifespan> {
    let mut out = BTreeMap::new();
    for status in FinalStatus::ALL {
        let group: Vec<&PropagationTrace> = traces.iter().filter(|t| t.final_status == status).collect();
        let days: Vec<f64> = group.iter().map(|t| ratio_f64(t.lifespan_days)).collect();
        let revs: Vec<f64> = group.iter().map(|t| t.lifespan_revisions as f64).collect();
        if let (Some(d), Some(r)) = (Quartiles::of(&days), Quartiles::of(&revs)) {
            out.insert(
                status,
                StatusLifespan {
                    count: group.len(),
                    days: d,
                    revisions: r,
                },
            );
        }
    }
    out
}

pub fn ratio_f64(r: Days) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

/// Contents of `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub status_counts: BTreeMap<FinalStatus, usize>,
    pub reveal_counts: BTreeMap<RevealCategory, usize>,
    pub reapplication_failures: usize,
    pub lifespan: BTreeMap<FinalStatus, StatusLifespan>,
}

pub fn summarize(traces: &[PropagationTrace]) -> Summary {
    let mut status_counts: BTreeMap<FinalStatus, usize> = FinalStatus::ALL.iter().map(|&s| (s, 0)).collect();
    let mut reveal_counts: BTreeMap<RevealCategory, usize> = RevealCategory::ALL.iter().map(|&c| (c, 0)).collect();
    for t in traces {
        *status_counts.entry(t.final_status).or_default() += 1;
        if let Some(c) = t.reveal_category {
            *reveal_counts.entry(c).or_default() += 1;
        }
    }
    Summary {
        status_counts,
        reveal_counts,
        reapplication_failures: traces.iter().filter(|t| t.reapplication_failure).count(),
        lifespan: lifespan_stats(traces),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::histstore::RevisionInput;
    use crate::minilang::SourceFile;
    use crate::mutgen::generate_mutants;
    use crate::runner::{Expect, TestCase, Value};

    const DAY: i64 = 86_400;

    fn test(name: &str, entry: &str, args: Vec<i64>, v: i64) -> TestCase {
        TestCase {
            name: name.into(),
            entry: entry.into(),
            args: args.into_iter().map(Value::Int).collect(),
            expect: Expect::Value(Value::Int(v)),
        }
    }

    fn rev(id: &str, day: i64, src: &str, tests: Vec<TestCase>) -> RevisionInput {
        RevisionInput {
            id: id.into(),
            timestamp: day * DAY,
            author: "dev".into(),
            files: BTreeMap::from([("m.ml".to_string(), src.to_string())]),
            tests,
        }
    }

    fn bundle(revs: Vec<RevisionInput>) -> HistoryBundle {
        HistoryBundle::from_inputs("t", 0, revs, 10_000).unwrap()
    }

    fn mutant(b: &HistoryBundle, op: MutOperator, label: &str) -> Mutant {
        let inj = b.injection();
        let p = inj.program("m.ml").unwrap();
        generate_mutants(p, &SourceFile::new("m.ml", inj.text("m.ml").unwrap()), 0)
            .into_iter()
            .find(|m| m.operator == op && p.node(m.node_id).label == label)
            .unwrap()
    }

    fn cfg() -> PropagateConfig {
        PropagateConfig {
            step_budget: 10_000,
            ..Default::default()
        }
    }

    const FEE: &str = "fn fee(a: int) -> int {\n  if (a > 100) {\n    return 5;\n  }\n  return 0;\n}\n";

    #[test]
    fn new_test_reveals_within_threshold() {
        let b = bundle(vec![
            rev("a", 0, FEE, vec![test("low", "fee", vec![1], 0)]),
            rev(
                "b",
                365,
                FEE,
                vec![test("low", "fee", vec![1], 0), test("edge", "fee", vec![100], 0)],
            ),
        ]);
        let m = mutant(&b, MutOperator::CB, ">");
        let t = &propagate(&b, &[m], &cfg()).unwrap()[0];
        assert_eq!(t.final_status, FinalStatus::Latent);
        assert_eq!(t.killed_at, Some(1));
        assert_eq!(t.entries[1].new_failing_tests, vec!["edge".to_string()]);
        assert_eq!(t.reveal_category, Some(RevealCategory::NC_NC));
        assert_eq!(t.lifespan_days, Ratio::from_integer(365));
        assert!(!t.entries[1].file_changed.eq(&ChangeClass::Semantic));
    }

    #[test]
    fn late_kill_is_ambiguous() {
        let b = bundle(vec![
            rev("a", 0, FEE, vec![test("low", "fee", vec![1], 0)]),
            rev("b", 366, FEE, vec![test("edge", "fee", vec![100], 0)]),
        ]);
        let m = mutant(&b, MutOperator::CB, ">");
        let t = &propagate(&b, &[m], &cfg()).unwrap()[0];
        assert_eq!(t.final_status, FinalStatus::Ambiguous);
        assert_eq!(t.reveal_category, None);
    }

    #[test]
    fn short_history_is_ambiguous_long_is_non_latent() {
        for (day, status) in [(1, FinalStatus::Ambiguous), (365, FinalStatus::NonLatent)] {
            let b = bundle(vec![
                rev("a", 0, FEE, vec![test("low", "fee", vec![1], 0)]),
                rev("b", day, FEE, vec![test("low", "fee", vec![1], 0)]),
            ]);
            let t = &propagate(&b, &[mutant(&b, MutOperator::CB, ">")], &cfg()).unwrap()[0];
            assert_eq!(t.final_status, status);
            assert_eq!(t.lifespan_revisions, 1);
        }
    }

    #[test]
    fn deleted_node_is_discarded() {
        let gone = "fn fee(a: int) -> int {\n  return 0;\n}\n";
        let b = bundle(vec![
            rev("a", 0, FEE, vec![test("low", "fee", vec![1], 0)]),
            rev("b", 10, gone, vec![test("low", "fee", vec![1], 0)]),
            rev("c", 400, gone, vec![]),
        ]);
        let t = &propagate(&b, &[mutant(&b, MutOperator::CB, ">")], &cfg()).unwrap()[0];
        assert_eq!(t.final_status, FinalStatus::Discarded);
        assert_eq!(t.entries.len(), 2);
        assert_eq!(t.entries[1].node, None);
        assert_eq!(t.final_revision, 1);
    }

    #[test]
    fn edited_node_is_discarded() {
        let b = bundle(vec![
            rev("a", 0, FEE, vec![test("low", "fee", vec![1], 0)]),
            rev("b", 10, &FEE.replace("a > 100", "a >= 100"), vec![]),
        ]);
        let t = &propagate(&b, &[mutant(&b, MutOperator::CB, ">")], &cfg()).unwrap()[0];
        assert_eq!(t.final_status, FinalStatus::Discarded);
    }

    #[test]
    fn same_line_semantic_edit_at_kill_is_sc_c() {
        let next = FEE.replace("if (a > 100)", "if (a > 100 && a < 1000)");
        let b = bundle(vec![
            rev("a", 0, FEE, vec![test("low", "fee", vec![1], 0)]),
            rev(
                "b",
                20,
                &next,
                vec![test("low", "fee", vec![1], 0), test("edge", "fee", vec![100], 0)],
            ),
        ]);
        let t = &propagate(&b, &[mutant(&b, MutOperator::CB, ">")], &cfg()).unwrap()[0];
        assert_eq!(t.final_status, FinalStatus::Latent);
        assert_eq!(t.reveal_category, Some(RevealCategory::SC_C));
    }

    #[test]
    fn rename_then_dependent_kill_is_rc_nc() {
        let renamed = FEE.replace("a", "amt");
        let b = bundle(vec![
            rev("a", 0, FEE, vec![test("low", "fee", vec![1], 0)]),
            rev("b", 20, &renamed, vec![test("low", "fee", vec![1], 0)]),
            rev("c", 40, &renamed, vec![test("edge", "fee", vec![100], 0)]),
        ]);
        let t = &propagate(&b, &[mutant(&b, MutOperator::CB, ">")], &cfg()).unwrap()[0];
        assert_eq!(t.entries[1].file_changed, ChangeClass::Refactoring);
        assert_eq!(t.reveal_category, Some(RevealCategory::RC_NC));
    }

    #[test]
    fn killed_mutants_are_skipped_when_live_only() {
        let b = bundle(vec![rev("a", 0, FEE, vec![test("edge", "fee", vec![100], 0)])]);
        let ms = vec![mutant(&b, MutOperator::CB, ">")];
        assert!(propagate(&b, &ms, &cfg()).unwrap().is_empty());
        let all = PropagateConfig { live_only: false, ..cfg() };
        assert_eq!(propagate(&b, &ms, &all).unwrap().len(), 1);
    }

    #[test]
    fn categorize_rejects_non_latent() {
        let b = bundle(vec![rev("a", 0, FEE, vec![])]);
        let all = PropagateConfig { live_only: false, ..cfg() };
        let t = &propagate(&b, &[mutant(&b, MutOperator::CB, ">")], &all).unwrap()[0];
        assert_eq!(categorize_reveal(t), Err(NotLatent));
    }

    fn with_days(days: &[i64]) -> Vec<PropagationTrace> {
        days.iter()
            .map(|&d| PropagationTrace {
                mutant_id: format!("m{d}"),
                file: "m.ml".into(),
                operator: MutOperator::CB,
                injection_index: 0,
                entries: vec![],
                final_status: FinalStatus::Latent,
                final_revision: 1,
                killed_at: Some(1),
                reveal_category: Some(RevealCategory::NC_NC),
                lifespan_days: Ratio::from_integer(d),
                lifespan_revisions: 1,
                reapplication_failure: false,
            })
            .collect()
    }

    #[test]
    fn lifespan_quartiles() {
        let s = lifespan_stats(&with_days(&[10]));
        let q = s[&FinalStatus::Latent].days;
        assert_eq!((q.q1, q.median, q.q3, q.mean), (10.0, 10.0, 10.0, 10.0));
        let s = lifespan_stats(&with_days(&[211, 8, 51]));
        assert_eq!(s[&FinalStatus::Latent].days.median, 51.0);
        assert_eq!(s[&FinalStatus::Latent].days.q1, 29.5);
        assert!(lifespan_stats(&[]).is_empty());
    }
}
