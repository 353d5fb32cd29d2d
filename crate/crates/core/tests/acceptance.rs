//! End-to-end acceptance checks. Prints one `[PASS]`/`[FAIL]` line per
//! criterion and exits non-zero if any fails.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::time::{Duration, Instant};

use latent_core::astmatch::{classify_change, match_trees, ChangeClass};
use latent_core::evalmetrics::{mean_average_precision, random_baseline, LabelledRow, RankedMutant, RankedRevision};
use latent_core::forest::{cross_validate, train, CvConfig, Dataset, ForestConfig, Row};
use latent_core::histfeat::{HistoryIndex, Label, FEATURE_NAMES};
use latent_core::histstore::{HistoryBundle, RevisionInput, SECONDS_PER_DAY};
use latent_core::lifecycle::{propagate, summarize, FinalStatus, PropagateConfig, PropagationTrace, RevealCategory};
use latent_core::minilang::{parse, SourceFile};
use latent_core::mutgen::{MutOperator, Mutant};
use latent_core::pipeline::{all_mutants, run_all, RunConfig};
use latent_core::runner::{kill_matrix, Expect, InitialStatus, TestCase, Value, DEFAULT_STEP_BUDGET};
use num_rational::Ratio;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde_json::Value as Json;

type Check = Result<String, String>;
type CheckFn = fn() -> Check;
type Transform = (&'static str, fn(&str) -> String);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {{
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($msg)+));
        }
    }};
}

fn statuses(traces: &[PropagationTrace]) -> BTreeMap<String, FinalStatus> {
    traces.iter().map(|t| (t.mutant_id.clone(), t.final_status)).collect()
}

fn test_case(name: &str, entry: &str, args: &[i64], value: i64) -> TestCase {
    TestCase {
        name: name.into(),
        entry: entry.into(),
        args: args.iter().map(|&a| Value::Int(a)).collect(),
        expect: Expect::Value(Value::Int(value)),
    }
}

fn input(id: &str, seconds: i64, author: &str, file: &str, text: &str, tests: Vec<TestCase>) -> RevisionInput {
    RevisionInput {
        id: id.into(),
        timestamp: seconds,
        author: author.into(),
        files: BTreeMap::from([(file.to_string(), text.to_string())]),
        tests,
    }
}

// ---------------------------------------------------------------- AC1

fn ac1() -> Check {
    let start = Instant::now();
    let b = common::bundle("account");
    let expected: Json = serde_json::from_str(&fs::read_to_string(common::corpus_dir().join("account/expected.json")).unwrap()).unwrap();
    let file = expected["file"].as_str().unwrap();
    let mutants = all_mutants(&b);
    let inj = b.injection();
    let km = kill_matrix(inj.program(file).unwrap(), &mutants, &inj.tests, DEFAULT_STEP_BUDGET).map_err(|e| e.to_string())?;
    let traces = propagate(&b, &mutants, &PropagateConfig::default()).map_err(|e| e.to_string())?;
    let mut found = BTreeMap::new();
    for (key, want) in expected["mutants"].as_object().unwrap() {
        let op = MutOperator::from_code(want["operator"].as_str().unwrap()).unwrap();
        let line = want["line"].as_u64().unwrap() as u32;
        let hits: Vec<&Mutant> = mutants
            .iter()
            .filter(|m| m.file == file && m.operator == op && m.line == line)
            .collect();
        ensure!(hits.len() == 1, "{key}: {} candidate mutants", hits.len());
        let m = hits[0];
        let initial = &km[&m.mutant_id].status;
        match want["initial"].as_str().unwrap() {
            "Killed" => ensure!(*initial == InitialStatus::Killed, "{key}: initial {initial:?}"),
            _ => ensure!(*initial == InitialStatus::Live, "{key}: initial {initial:?}"),
        }
        if let Some(fin) = want.get("final") {
            let t = traces
                .iter()
                .find(|t| t.mutant_id == m.mutant_id)
                .ok_or(format!("{key}: no trace"))?;
            ensure!(
                t.final_status.to_string() == fin.as_str().unwrap(),
                "{key}: final {}",
                t.final_status
            );
            ensure!(
                t.final_revision as u64 == want["revision"].as_u64().unwrap(),
                "{key}: at revision {}",
                t.final_revision
            );
            if let Some(rc) = want.get("reveal") {
                ensure!(
                    t.reveal_category.map(|c| c.to_string()).as_deref() == rc.as_str(),
                    "{key}: reveal {:?}",
                    t.reveal_category
                );
            }
        }
        found.insert(key.clone(), m.mutant_id.clone());
    }
    let m2 = traces.iter().find(|t| t.mutant_id == found["M2"]).unwrap();
    ensure!(m2.reveal_category == Some(RevealCategory::NC_NC), "M2 reveal");
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(5), "took {elapsed:?}");
    Ok(format!("{} mutants; M1..M4 as expected in {elapsed:.2?}", mutants.len()))
}

// ---------------------------------------------------------------- AC2

fn ac2() -> Check {
    let (mut restyled, mut compared) = (0usize, 0usize);
    for name in common::BUNDLES {
        let orig = common::bundle(name);
        let mutants = all_mutants(&orig);
        let base = statuses(&propagate(&orig, &mutants, &PropagateConfig::default()).map_err(|e| e.to_string())?);
        for seed in 0..4u64 {
            let mut rng = StdRng::seed_from_u64(seed);
            let mut inputs = common::inputs(&orig);
            for (r, inp) in inputs.iter_mut().enumerate() {
                if seed > 0 && !rng.gen_bool(0.5) {
                    continue;
                }
                for (path, text) in inp.files.iter_mut() {
                    let styled = common::restyle(text, &mut rng);
                    let c = classify_change(
                        &SourceFile::new(path.clone(), text.clone()),
                        &SourceFile::new(path.clone(), styled.clone()),
                    )
                    .map_err(|e| e.to_string())?;
                    let want = if styled == *text {
                        ChangeClass::Unchanged
                    } else {
                        ChangeClass::Style
                    };
                    ensure!(c.class == want, "{name} r{r} {path}: {:?}", c.class);
                    restyled += 1;
                    *text = styled;
                }
            }
            let styled = HistoryBundle::from_inputs(name, orig.injection_index, inputs, DEFAULT_STEP_BUDGET).map_err(|e| e.to_string())?;
            let smut = all_mutants(&styled);
            let ids = |ms: &[Mutant]| ms.iter().map(|m| m.mutant_id.clone()).collect::<BTreeSet<_>>();
            ensure!(ids(&smut) == ids(&mutants), "{name} seed {seed}: mutant set changed");
            let got = statuses(&propagate(&styled, &smut, &PropagateConfig::default()).map_err(|e| e.to_string())?);
            ensure!(got == base, "{name} seed {seed}: final statuses differ");
            compared += got.len();
        }
    }
    Ok(format!("{restyled} restyled files, {compared} statuses unchanged"))
}

// ---------------------------------------------------------------- AC3

const BASES: [&str; 5] = [
    "fn h(a: int, b: int) -> int {\n  let t = a * b;\n  return t + 7;\n}\n\nfn g(a: int, b: int) -> int {\n  if (a < b) {\n    return h(a, b);\n  }\n  return b;\n}\n",
    "fn g(a: int, b: int) -> int {\n  let t = 0;\n  while (t < a) {\n    t += h(a, b);\n  }\n  return t;\n}\n\nfn h(a: int, b: int) -> int {\n  return a + b + 7;\n}\n",
    "fn h(a: int, b: int) -> bool {\n  return a < b;\n}\n\nfn g(a: int, b: int) -> int {\n  let t = a - b;\n  if (h(a, b)) {\n    t = t * 7;\n  }\n  return t;\n}\n",
    "fn g(a: int, b: int) -> int {\n  let t = h(a, b);\n  if (t < 0) {\n    return 0 - t;\n  }\n  return t;\n}\n\nfn h(a: int, b: int) -> int {\n  return a - b * 7;\n}\n",
    "fn h(a: int, b: int) -> int {\n  let t = a;\n  if (b < t) {\n    t = b;\n  }\n  return t;\n}\n\nfn g(a: int, b: int) -> int {\n  return h(a, b) + 7;\n}\n\nfn k(a: int) -> int {\n  return g(a, a);\n}\n",
];

fn is_ident_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_'
}

/// Byte offsets of whole-word occurrences of `word`.
fn word_hits(src: &str, word: &str) -> Vec<usize> {
    src.match_indices(word)
        .map(|(i, _)| i)
        .filter(|&i| {
            let before = src[..i].chars().next_back().is_none_or(|c| !is_ident_char(c));
            let after = src[i + word.len()..].chars().next().is_none_or(|c| !is_ident_char(c));
            before && after
        })
        .collect()
}

fn rename(src: &str, from: &str, to: &str) -> String {
    let mut out = src.to_string();
    for i in word_hits(src, from).into_iter().rev() {
        out.replace_range(i..i + from.len(), to);
    }
    out
}

fn replace_once(src: &str, from: &str, to: &str) -> String {
    assert_eq!(src.matches(from).count(), 1, "{from} in {src}");
    src.replacen(from, to, 1)
}

fn rotate_functions(src: &str) -> String {
    let mut fns: Vec<&str> = src.trim_end().split("\n\n").collect();
    fns.rotate_left(1);
    fns.join("\n\n") + "\n"
}

fn ac3() -> Check {
    let refactorings: [Transform; 4] = [
        ("param rename", |s| rename(s, "a", "alpha")),
        ("local rename", |s| rename(s, "t", "tmp")),
        ("function rename", |s| rename(s, "h", "helper")),
        ("reorder", rotate_functions),
    ];
    let near_misses: [Transform; 4] = [
        ("changed literal", |s| replace_once(s, "7", "8")),
        ("inconsistent rename", |s| {
            let last = *word_hits(s, "t").last().unwrap();
            let mut out = s.to_string();
            out.replace_range(last..last + 1, "a");
            out
        }),
        ("swapped arguments", |s| replace_once(s, "h(a, b)", "h(b, a)")),
        ("changed operator", |s| replace_once(s, " < ", " <= ")),
    ];
    let mut errors = Vec::new();
    let mut n = 0;
    for (i, base) in BASES.iter().enumerate() {
        let old = SourceFile::new("f.ml", *base);
        for (cases, want) in [(&refactorings, ChangeClass::Refactoring), (&near_misses, ChangeClass::Semantic)] {
            for (label, f) in cases.iter() {
                let new = SourceFile::new("f.ml", f(base));
                n += 1;
                match classify_change(&old, &new) {
                    Ok(c) if c.class == want => {}
                    Ok(c) => errors.push(format!("base {i} {label}: {:?}", c.class)),
                    Err(e) => errors.push(format!("base {i} {label}: {e}")),
                }
            }
        }
    }
    ensure!(errors.is_empty(), "{}", errors.join("; "));
    Ok(format!("{n} fixtures, 0 misclassified"))
}

// ---------------------------------------------------------------- AC4

fn ac4() -> Check {
    let files = common::corpus_files();
    let programs: Vec<_> = files.iter().map(|(n, t)| (n, parse(t).unwrap())).collect();
    for (name, p) in &programs {
        ensure!(match_trees(p, p).is_total(), "{name}: self match not total");
    }
    let mut rng = StdRng::seed_from_u64(4);
    let mut pairs = 0;
    for _ in 0..1000 {
        let (a, b) = (
            &programs[rng.gen_range(0..programs.len())],
            &programs[rng.gen_range(0..programs.len())],
        );
        let m = match_trees(&a.1, &b.1);
        let mut seen = BTreeSet::new();
        for (o, n) in m.pairs() {
            ensure!(a.1.node(o).kind == b.1.node(n).kind, "{} -> {}: kinds differ at {o}->{n}", a.0, b.0);
            ensure!(seen.insert(n), "{} -> {}: new node {n} mapped twice", a.0, b.0);
            pairs += 1;
        }
    }
    Ok(format!(
        "{} files self-match totally; 1000 random pairs ({pairs} mapped nodes) kind-preserving",
        programs.len()
    ))
}

// ---------------------------------------------------------------- AC5

/// Average precision written straight from its definition.
fn brute_ap(mutants: &[RankedMutant]) -> Option<f64> {
    let mut order: Vec<&RankedMutant> = mutants.iter().collect();
    order.sort_by(|x, y| {
        y.p_latent
            .partial_cmp(&x.p_latent)
            .unwrap()
            .then_with(|| x.mutant_id.cmp(&y.mutant_id))
    });
    let latent = order.iter().filter(|m| m.is_latent).count();
    if latent == 0 || latent == order.len() {
        return None;
    }
    let mut sum = 0.0;
    for i in 1..=order.len() {
        let hits = order[..i].iter().filter(|m| m.is_latent).count();
        let precision = hits as f64 / i as f64;
        sum += precision * if order[i - 1].is_latent { 1.0 } else { 0.0 };
    }
    Some(sum / latent as f64)
}

fn brute_map(revs: &[Vec<RankedMutant>]) -> Option<f64> {
    let aps: Vec<f64> = revs.iter().filter_map(|r| brute_ap(r)).collect();
    (!aps.is_empty()).then(|| aps.iter().sum::<f64>() / aps.len() as f64)
}

fn ac5() -> Check {
    let mut rng = StdRng::seed_from_u64(5);
    let mut revs = Vec::new();
    for r in 0..500 {
        let n = rng.gen_range(0..=8);
        let coarse = rng.gen_bool(0.3);
        let mutants: Vec<RankedMutant> = (0..n)
            .map(|i| RankedMutant {
                mutant_id: format!("r{r}m{i}"),
                p_latent: if coarse { rng.gen_range(0..3) as f64 / 2.0 } else { rng.gen() },
                is_latent: rng.gen_bool(0.4),
            })
            .collect();
        revs.push(mutants);
    }
    let ranked: Vec<RankedRevision> = revs
        .iter()
        .enumerate()
        .map(|(i, m)| RankedRevision::new(format!("r{i}"), m.clone()))
        .collect();
    let mut skipped = 0;
    for (r, rr) in revs.iter().zip(&ranked) {
        let (got, want) = (rr.average_precision(), brute_ap(r));
        skipped += want.is_none() as usize;
        match (got, want) {
            (None, None) => {}
            (Some(g), Some(w)) => ensure!((g - w).abs() <= 1e-12, "{}: {g} vs {w}", rr.revision),
            _ => return Err(format!("{}: skip rule disagrees ({got:?} vs {want:?})", rr.revision)),
        }
    }
    for chunk in (0..500).collect::<Vec<_>>().chunks(7) {
        let got = mean_average_precision(&chunk.iter().map(|&i| ranked[i].clone()).collect::<Vec<_>>());
        let want = brute_map(&chunk.iter().map(|&i| revs[i].clone()).collect::<Vec<_>>());
        match (got, want) {
            (None, None) => {}
            (Some(g), Some(w)) => ensure!((g - w).abs() <= 1e-12, "MAP {g} vs {w}"),
            _ => return Err(format!("MAP skip disagrees {got:?} vs {want:?}")),
        }
    }
    let (g, w) = (mean_average_precision(&ranked), brute_map(&revs));
    ensure!(
        matches!((g, w), (Some(a), Some(b)) if (a - b).abs() <= 1e-12),
        "overall MAP {g:?} vs {w:?}"
    );
    let all_latent = RankedRevision::new(
        "x",
        vec![RankedMutant {
            mutant_id: "a".into(),
            p_latent: 0.3,
            is_latent: true,
        }],
    );
    ensure!(mean_average_precision(&[all_latent]).is_none(), "all-latent revision not skipped");
    ensure!(mean_average_precision(&[]).is_none(), "empty MAP not skipped");
    Ok(format!("500 revisions ({skipped} skipped), MAP = {:.6}", g.unwrap()))
}

// ---------------------------------------------------------------- AC6

const GUARD: &str = "fn f(x: int) -> int {\n  if (x > 10) {\n    return 1;\n  }\n  return 0;\n}\n";

fn threshold_bundle(kill_day: i64) -> HistoryBundle {
    let t0 = 1_600_000_000;
    let base = vec![test_case("big", "f", &[20], 1), test_case("small", "f", &[0], 0)];
    let mut later = base.clone();
    later.push(test_case("edge", "f", &[10], 0));
    HistoryBundle::from_inputs(
        "threshold",
        0,
        vec![
            input("r0", t0, "a", "f.ml", GUARD, base),
            input("r1", t0 + kill_day * SECONDS_PER_DAY, "b", "f.ml", GUARD, later),
        ],
        DEFAULT_STEP_BUDGET,
    )
    .unwrap()
}

/// Status of the `x >= 10` mutant, the one the edge test reveals.
fn boundary_status(kill_day: i64, n_thr: i64) -> Result<FinalStatus, String> {
    let b = threshold_bundle(kill_day);
    let cfg = PropagateConfig {
        n_thr_days: n_thr,
        ..PropagateConfig::default()
    };
    let traces = propagate(&b, &all_mutants(&b), &cfg).map_err(|e| e.to_string())?;
    let t: Vec<&PropagationTrace> = traces
        .iter()
        .filter(|t| t.operator == MutOperator::CB && t.killed_at == Some(1))
        .collect();
    ensure!(t.len() == 1, "expected one boundary mutant, found {}", t.len());
    Ok(t[0].final_status)
}

fn ac6() -> Check {
    use FinalStatus::*;
    for (day, want) in [(364, Latent), (365, Latent), (366, Ambiguous)] {
        let got = boundary_status(day, 365)?;
        ensure!(got == want, "kill at day {day}: {got} (want {want})");
    }
    ensure!(boundary_status(366, 366)? == Latent, "raising n_thr to 366 did not flip to Latent");
    for day in [300, 364, 365, 366, 400] {
        let mut was_latent = false;
        for n in (day - 3)..=(day + 3) {
            let latent = boundary_status(day, n)? == Latent;
            ensure!(!was_latent || latent, "not monotone at day {day}, n_thr {n}");
            ensure!(latent == (day <= n), "day {day}, n_thr {n}: latent={latent}");
            was_latent = latent;
        }
    }
    Ok("364/365/366 -> Latent/Latent/Ambiguous; monotone in n_thr".into())
}

// ---------------------------------------------------------------- AC7

fn clean_line(l: &str) -> String {
    let code = l.split("//").next().unwrap_or("");
    code.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Non-blank comment-free lines as (line number, text).
fn raw_lines(text: &str) -> Vec<(u32, String)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i as u32 + 1, clean_line(l)))
        .filter(|(_, l)| !l.is_empty())
        .collect()
}

fn lcs(a: &[String], b: &[String]) -> Vec<(usize, usize)> {
    let (n, m) = (a.len(), b.len());
    let mut dp = vec![vec![0usize; m + 1]; n + 1];
    for i in (0..n).rev() {
        for j in (0..m).rev() {
            dp[i][j] = if a[i] == b[j] {
                dp[i + 1][j + 1] + 1
            } else {
                dp[i + 1][j].max(dp[i][j + 1])
            };
        }
    }
    let (mut i, mut j, mut out) = (0, 0, Vec::new());
    while i < n && j < m {
        if a[i] == b[j] {
            out.push((i, j));
            i += 1;
            j += 1;
        } else if dp[i + 1][j] >= dp[i][j + 1] {
            i += 1;
        } else {
            j += 1;
        }
    }
    out
}

enum Origin {
    Same(usize),
    Edited(usize),
    Added,
}

/// For every new line, where it came from in the old file: LCS matches
/// first, then positional pairing inside each unmatched hunk.
fn line_origins(old: &[String], new: &[String]) -> Vec<Origin> {
    let mut origin: Vec<Origin> = new.iter().map(|_| Origin::Added).collect();
    let mut anchors = lcs(old, new);
    anchors.push((old.len(), new.len()));
    let (mut pi, mut pj) = (0, 0);
    for (i, j) in anchors {
        for k in 0..(i - pi).min(j - pj) {
            origin[pj + k] = Origin::Edited(pi + k);
        }
        if j < new.len() {
            origin[j] = Origin::Same(i);
        }
        (pi, pj) = (i + 1, j + 1);
    }
    origin
}

fn function_text(lines: &[(u32, String)], name: &str) -> Option<String> {
    let start = lines.iter().position(|(_, l)| l.starts_with(&format!("fn {name}(")))?;
    let mut depth = 0i32;
    let mut out = Vec::new();
    for (_, l) in &lines[start..] {
        depth += l.matches('{').count() as i32 - l.matches('}').count() as i32;
        out.push(l.as_str());
        if depth == 0 {
            break;
        }
    }
    Some(out.join(" "))
}

/// (churn, min_age, max_age, n_authors) from introduction and change
/// revisions.
fn oracle_granular(b: &HistoryBundle, intro: usize, changes: &[usize]) -> (u32, f64, f64, u32) {
    let at = b.revisions[b.injection_index].timestamp;
    let days = |r: usize| (at - b.revisions[r].timestamp) as f64 / SECONDS_PER_DAY as f64;
    let last = changes.iter().copied().max().unwrap_or(intro);
    let authors: BTreeSet<&str> = std::iter::once(intro)
        .chain(changes.iter().copied())
        .map(|r| b.revisions[r].author.as_str())
        .collect();
    (changes.len() as u32, days(last), days(intro), authors.len() as u32)
}

fn oracle_features(b: &HistoryBundle, m: &Mutant) -> [f64; 9] {
    let inj = b.injection_index;
    let texts: Vec<Vec<(u32, String)>> = (0..=inj)
        .map(|r| b.revisions[r].text(&m.file).map(raw_lines).unwrap_or_default())
        .collect();
    // line granularity
    let mut pos = texts[inj].iter().position(|(n, _)| *n == m.line).expect("mutant line present");
    let (mut intro, mut changes) = (0, Vec::new());
    for r in (1..=inj).rev() {
        let old: Vec<String> = texts[r - 1].iter().map(|x| x.1.clone()).collect();
        let new: Vec<String> = texts[r].iter().map(|x| x.1.clone()).collect();
        match line_origins(&old, &new)[pos] {
            Origin::Same(p) => pos = p,
            Origin::Edited(p) => {
                changes.push(r);
                pos = p;
            }
            Origin::Added => {
                intro = r;
                break;
            }
        }
    }
    let line = oracle_granular(b, intro, &changes);
    // method granularity, functions tracked by name
    let header = texts[inj]
        .iter()
        .rfind(|(n, l)| *n <= m.line && l.starts_with("fn "))
        .expect("enclosing fn");
    let name = header.1[3..header.1.find('(').unwrap()].to_string();
    let (mut intro, mut changes) = (0, Vec::new());
    let mut cur = function_text(&texts[inj], &name).unwrap();
    for r in (1..=inj).rev() {
        match function_text(&texts[r - 1], &name) {
            None => {
                intro = r;
                break;
            }
            Some(prev) => {
                if prev != cur {
                    changes.push(r);
                }
                cur = prev;
            }
        }
    }
    let method = oracle_granular(b, intro, &changes);
    [
        m.operator.ordinal() as f64,
        line.0 as f64,
        line.1,
        line.2,
        line.3 as f64,
        method.0 as f64,
        method.1,
        method.2,
        method.3 as f64,
    ]
}

fn ac7() -> Check {
    let mut checked = 0;
    let mut with_history = 0;
    for name in common::BUNDLES {
        let b = common::bundle(name);
        if b.len() > 10 {
            continue;
        }
        let mutants = all_mutants(&b);
        let files: Vec<&str> = b.injection().files.keys().map(String::as_str).collect();
        let index = HistoryIndex::new(&b, &files);
        for m in &mutants {
            let fv = index.features_for(m).map_err(|e| e.to_string())?;
            let (got, want) = (fv.values(), oracle_features(&b, m));
            for (k, feature) in FEATURE_NAMES.iter().enumerate() {
                let ok = if feature.contains("age") {
                    (got[k] - want[k]).abs() <= 1e-9
                } else {
                    got[k] == want[k]
                };
                ensure!(ok, "{name} {}: {feature} = {} (oracle {})", m.mutant_id, got[k], want[k]);
            }
            checked += 1;
            with_history += (want[1] > 0.0 || want[5] > 0.0) as usize;
        }
    }
    ensure!(with_history > 0, "no mutant has any change history");
    Ok(format!(
        "{checked} mutants match the diff oracle ({with_history} with past changes)"
    ))
}

// ---------------------------------------------------------------- AC8

fn synthetic(seed: u64, mut_op_signal: bool) -> Dataset {
    let mut rng = StdRng::seed_from_u64(seed);
    let rows = (0..900)
        .map(|i| {
            let c = i % 3;
            let mut x: Vec<f64> = (0..9).map(|_| rng.gen_range(0.0..50.0)).collect();
            x[0] = if mut_op_signal {
                (3 * c + rng.gen_range(0..3)) as f64
            } else {
                rng.gen_range(0..9) as f64
            };
            x[3] = c as f64 * 200.0 + rng.gen_range(0.0..150.0);
            Row {
                id: format!("m{i:03}"),
                group: format!("rev{}", i % 30),
                x,
                label: Label::ALL[c],
            }
        })
        .collect();
    Dataset::new(FEATURE_NAMES.iter().map(|s| s.to_string()).collect(), rows)
}

fn ac8() -> Check {
    let start = Instant::now();
    let data = synthetic(8, true);
    let forest = ForestConfig {
        seed: 8,
        ..ForestConfig::default()
    };
    let cv = cross_validate(
        &data,
        &CvConfig {
            k: 5,
            repeats: 1,
            seed: 8,
            ..CvConfig::default()
        },
        &forest,
    )
    .map_err(|e| e.to_string())?;
    let preds: Vec<Label> = cv.predictions.iter().map(|p| p.predicted()).collect();
    let labels: Vec<Label> = cv.predictions.iter().map(|p| p.label).collect();
    let acc = latent_core::evalmetrics::accuracy_suite(&preds, &labels).map_err(|e| e.to_string())?;
    ensure!(acc.acc >= 0.95, "RF accuracy {:.4}", acc.acc);
    ensure!(acc.balanced_acc >= 0.90, "RF balanced accuracy {:.4}", acc.balanced_acc);
    let rows: Vec<LabelledRow> = data
        .rows
        .iter()
        .map(|r| LabelledRow {
            mutant_id: r.id.clone(),
            revision: r.group.clone(),
            label: r.label,
        })
        .collect();
    let random = random_baseline(&rows, 8, 1000).map_err(|e| e.to_string())?;
    ensure!(
        (random.accuracy.acc - 0.33).abs() <= 0.03,
        "random accuracy {:.4}",
        random.accuracy.acc
    );
    ensure!(
        (random.accuracy.balanced_acc - 1.0 / 3.0).abs() <= 0.03,
        "random balanced accuracy {:.4}",
        random.accuracy.balanced_acc
    );
    let model = train(&synthetic(9, false), &forest).map_err(|e| e.to_string())?;
    let mut imp = model.feature_importance();
    imp.sort_by(|a, b| b.1.total_cmp(&a.1));
    ensure!(imp[0].0.contains("age"), "top feature on age-only data is {}", imp[0].0);
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(30), "took {elapsed:?}");
    Ok(format!(
        "RF acc {:.3} bal {:.3}; random acc {:.3} bal {:.3}; top feature {} ({elapsed:.2?})",
        acc.acc, acc.balanced_acc, random.accuracy.acc, random.accuracy.balanced_acc, imp[0].0
    ))
}

// ---------------------------------------------------------------- AC9

fn ac9() -> Check {
    let bundles: Vec<_> = common::BUNDLES.iter().map(|b| common::corpus_dir().join(b)).collect();
    let dirs: Vec<tempfile::TempDir> = (0..3).map(|_| tempfile::tempdir().unwrap()).collect();
    for (i, d) in dirs.iter().enumerate() {
        let cfg = RunConfig {
            bundles: bundles.clone(),
            out: d.path().to_path_buf(),
            seed: 9,
            jobs: (i == 2).then_some(1),
            ..RunConfig::default()
        };
        latent_core::pipeline::with_jobs(cfg.jobs, || run_all(&cfg)).map_err(|e| e.to_string())?;
    }
    let mut files = vec!["report.csv".to_string(), "model.json".to_string()];
    files.extend(common::BUNDLES.iter().map(|b| format!("{b}/traces.json")));
    for f in &files {
        let first = fs::read(dirs[0].path().join(f)).map_err(|e| format!("{f}: {e}"))?;
        for d in &dirs[1..] {
            ensure!(fs::read(d.path().join(f)).ok().as_ref() == Some(&first), "{f} differs between runs");
        }
    }
    Ok(format!("{} artifacts byte-identical over 3 runs", files.len()))
}

// ---------------------------------------------------------------- AC10

const LIFESPAN: &str = "fn f(x: int) -> int {\n  if (x > 10) {\n    return 1;\n  }\n  return 0;\n}\n\nfn g(y: int) -> int {\n  if (y < 5) {\n    return 2;\n  }\n  return 3;\n}\n\nfn note(v: int) {\n}\n\nfn k(w: int) -> int {\n  note(w);\n  return w + 100;\n}\n\nfn same(v: int) -> int {\n  if (v > 0) {\n    return v;\n  }\n  return v;\n}\n";

fn ac10() -> Check {
    let t0 = 1_600_000_000;
    let day = SECONDS_PER_DAY;
    let base = vec![
        test_case("f_big", "f", &[20], 1),
        test_case("f_small", "f", &[0], 0),
        test_case("g_small", "g", &[0], 2),
        test_case("g_big", "g", &[9], 3),
        test_case("k_one", "k", &[1], 101),
        test_case("same_pos", "same", &[3], 3),
    ];
    let mut r1 = base.clone();
    r1.push(test_case("f_edge", "f", &[10], 0));
    let mut r2 = r1.clone();
    r2.push(test_case("g_edge", "g", &[5], 3));
    let pruned = LIFESPAN.replace("  note(w);\n", "");
    let b = HistoryBundle::from_inputs(
        "lifespan",
        0,
        vec![
            input("r0", t0, "a", "m.ml", LIFESPAN, base),
            input("r1", t0 + 8 * day, "b", "m.ml", LIFESPAN, r1),
            input("r2", t0 + 51 * day + day / 2, "a", "m.ml", LIFESPAN, r2.clone()),
            input("r3", t0 + 211 * day, "c", "m.ml", &pruned, r2.clone()),
            input("r4", t0 + 400 * day, "a", "m.ml", &pruned, r2),
        ],
        DEFAULT_STEP_BUDGET,
    )
    .map_err(|e| e.to_string())?;
    let traces = propagate(&b, &all_mutants(&b), &PropagateConfig::default()).map_err(|e| e.to_string())?;
    // hand-computed (days, revisions) of the event at each revision
    let expected: BTreeMap<usize, (Ratio<i64>, usize)> = BTreeMap::from([
        (1, (Ratio::from_integer(8), 1)),
        (2, (Ratio::new(103, 2), 2)),
        (3, (Ratio::from_integer(211), 3)),
        (4, (Ratio::from_integer(400), 4)),
    ]);
    let mut seen = BTreeSet::new();
    for t in &traces {
        let want = expected
            .get(&t.final_revision)
            .ok_or(format!("{}: final revision {}", t.mutant_id, t.final_revision))?;
        ensure!(
            (t.lifespan_days, t.lifespan_revisions) == *want,
            "{}: {:?} vs {:?}",
            t.mutant_id,
            (t.lifespan_days, t.lifespan_revisions),
            want
        );
        seen.insert((t.final_revision, t.final_status));
    }
    use FinalStatus::*;
    for event in [(1, Latent), (2, Latent), (3, Discarded), (4, NonLatent)] {
        ensure!(seen.contains(&event), "no trace ends with {:?}", event);
    }
    let mut synthetic = Vec::new();
    for d in [0, 8, 51, 211, 400] {
        let mut t = traces[0].clone();
        t.final_status = Latent;
        t.lifespan_days = Ratio::from_integer(d);
        synthetic.push(t);
    }
    let q = summarize(&synthetic).lifespan[&Latent].days;
    ensure!((q.q1, q.median, q.q3) == (8.0, 51.0, 211.0), "quartiles {q:?}");
    Ok(format!("{} traces match hand-computed lifespans; quartiles 8/51/211", traces.len()))
}

fn main() {
    let checks: [(&str, CheckFn); 10] = [
        ("AC1", ac1),
        ("AC2", ac2),
        ("AC3", ac3),
        ("AC4", ac4),
        ("AC5", ac5),
        ("AC6", ac6),
        ("AC7", ac7),
        ("AC8", ac8),
        ("AC9", ac9),
        ("AC10", ac10),
    ];
    let mut failed = 0;
    for (name, check) in checks {
        match std::panic::catch_unwind(check) {
            Ok(Ok(detail)) => println!("[PASS] {name}: {detail}"),
            Ok(Err(why)) => {
                failed += 1;
                println!("[FAIL] {name}: {why}");
            }
            Err(_) => {
                failed += 1;
                println!("[FAIL] {name}: panicked");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
