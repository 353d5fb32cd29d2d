//! Deterministic tree-walking interpreter, test harness and kill matrix.
//!
//! Execution is bounded by a step budget (one step per evaluated node) rather
//! than wall-clock time, so outcomes are identical across machines and
//! schedules. The interpreter also records which nodes it evaluated; a test
//! that never reaches a mutated node cannot observe the mutant.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::minilang::{parse, NodeId, NodeKind, Program, Type};
use crate::mutgen::Mutant;

pub const DEFAULT_STEP_BUDGET: u64 = 1_000_000;
/// Maximum MiniLang call depth before a run is aborted.
pub const MAX_CALL_DEPTH: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Int(i64),
    Bool(bool),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorTag {
    DivisionByZero,
    MissingReturn,
    TypeMismatch,
    UnboundVariable,
    StackOverflow,
    UnknownEntry,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expect {
    Value(Value),
    Error(ErrorTag),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestCase {
    pub name: String,
    pub entry: String,
    #[serde(default)]
    pub args: Vec<Value>,
    pub expect: Expect,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ExecStatus {
    Pass,
    Fail,
    Timeout,
    RunError,
    /// The test was not executed against a mutant because it never reaches
    /// the mutated node on the original program.
    NoCoverage,
}

/// What a run produced, before comparison with the expectation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunResult {
    Value(Value),
    Unit,
    Error(ErrorTag),
    Timeout,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecOutcome {
    pub status: ExecStatus,
    pub result: RunResult,
    pub steps: u64,
    pub covered_nodes: BTreeSet<NodeId>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Val {
    Int(i64),
    Bool(bool),
    Unit,
}

impl From<Value> for Val {
    fn from(v: Value) -> Self {
        match v {
            Value::Int(i) => Val::Int(i),
            Value::Bool(b) => Val::Bool(b),
        }
    }
}

impl Val {
    fn ty(self) -> Type {
        match self {
            Val::Int(_) => Type::Int,
            Val::Bool(_) => Type::Bool,
            Val::Unit => Type::Unit,
        }
    }
}

enum Halt {
    Error(ErrorTag),
    Timeout,
}

enum Flow {
    Next,
    Return(Val),
}

struct Interp<'p> {
    program: &'p Program,
    fns: HashMap<&'p str, NodeId>,
    steps: u64,
    budget: u64,
    covered: Vec<bool>,
    depth: usize,
}

type Exec<T> = Result<T, Halt>;

impl<'p> Interp<'p> {
    fn tick(&mut self, id: NodeId) -> Exec<()> {
        if self.steps >= self.budget {
            return Err(Halt::Timeout);
        }
        self.steps += 1;
        self.covered[id] = true;
        Ok(())
    }

    fn call(&mut self, fn_id: NodeId, args: Vec<Val>) -> Exec<Val> {
        if self.depth >= MAX_CALL_DEPTH {
            return Err(Halt::Error(ErrorTag::StackOverflow));
        }
        let program = self.program;
        let f = program.node(fn_id);
        self.tick(fn_id)?;
        let mut frame = vec![HashMap::new()];
        for (p, v) in program.params(fn_id).zip(args) {
            if Some(v.ty()) != p.ty {
                return Err(Halt::Error(ErrorTag::TypeMismatch));
            }
            frame[0].insert(p.label.as_str(), v);
        }
        self.depth += 1;
        let flow = self.block(program.fn_body(fn_id), &mut frame);
        self.depth -= 1;
        let ret = f.ty.unwrap_or(Type::Unit);
        match flow? {
            Flow::Return(v) if v.ty() == ret => Ok(v),
            Flow::Return(_) => Err(Halt::Error(ErrorTag::TypeMismatch)),
            Flow::Next if ret == Type::Unit => Ok(Val::Unit),
            Flow::Next => Err(Halt::Error(ErrorTag::MissingReturn)),
        }
    }

    fn block(&mut self, id: NodeId, env: &mut Vec<HashMap<&'p str, Val>>) -> Exec<Flow> {
        self.tick(id)?;
        env.push(HashMap::new());
        let mut flow = Ok(Flow::Next);
        for &s in &self.program.node(id).children {
            flow = self.statement(s, env);
            if !matches!(flow, Ok(Flow::Next)) {
                break;
            }
        }
        env.pop();
        flow
    }

    fn lookup<'e>(env: &'e mut [HashMap<&'p str, Val>], name: &str) -> Exec<&'e mut Val> {
        env.iter_mut()
            .rev()
            .find_map(|scope| scope.get_mut(name))
            .ok_or(Halt::Error(ErrorTag::UnboundVariable))
    }

    fn statement(&mut self, id: NodeId, env: &mut Vec<HashMap<&'p str, Val>>) -> Exec<Flow> {
        self.tick(id)?;
        let program = self.program;
        let n = program.node(id);
        match n.kind {
            NodeKind::Let => {
                let v = self.expr(n.children[0], env)?;
                env.last_mut().expect("scope").insert(n.label.as_str(), v);
            }
            NodeKind::Assign => {
                let v = self.expr(n.children[0], env)?;
                *Self::lookup(env, &n.label)? = v;
            }
            NodeKind::CompoundAssign => {
                let target = &program.node(n.children[0]).label;
                self.tick(n.children[0])?;
                let rhs = self.expr(n.children[1], env)?;
                let slot = Self::lookup(env, target)?;
                *slot = match (*slot, rhs, n.label.as_str()) {
                    (Val::Int(a), Val::Int(b), "+=") => Val::Int(a.wrapping_add(b)),
                    (Val::Int(a), Val::Int(b), "-=") => Val::Int(a.wrapping_sub(b)),
                    _ => return Err(Halt::Error(ErrorTag::TypeMismatch)),
                };
            }
            NodeKind::If => {
                if self.condition(n.children[0], env)? {
                    return self.block(n.children[1], env);
                } else if let Some(&alt) = n.children.get(2) {
                    return if program.node(alt).kind == NodeKind::If {
                        self.statement(alt, env)
                    } else {
                        self.block(alt, env)
                    };
                }
            }
            NodeKind::While => {
                while self.condition(n.children[0], env)? {
                    if let Flow::Return(v) = self.block(n.children[1], env)? {
                        return Ok(Flow::Return(v));
                    }
                }
            }
            NodeKind::Return => {
                let v = match n.children.first() {
                    Some(&e) => self.expr(e, env)?,
                    None => Val::Unit,
                };
                return Ok(Flow::Return(v));
            }
            NodeKind::ExprStmt => {
                self.expr(n.children[0], env)?;
            }
            other => unreachable!("{other:?} is not a statement"),
        }
        Ok(Flow::Next)
    }

    fn condition(&mut self, id: NodeId, env: &mut Vec<HashMap<&'p str, Val>>) -> Exec<bool> {
        match self.expr(id, env)? {
            Val::Bool(b) => Ok(b),
            _ => Err(Halt::Error(ErrorTag::TypeMismatch)),
        }
    }

    fn expr(&mut self, id: NodeId, env: &mut Vec<HashMap<&'p str, Val>>) -> Exec<Val> {
        self.tick(id)?;
        let program = self.program;
        let n = program.node(id);
        let mismatch = Halt::Error(ErrorTag::TypeMismatch);
        match n.kind {
            NodeKind::IntLit => Ok(Val::Int(n.label.parse().map_err(|_| mismatch)?)),
            NodeKind::BoolLit => Ok(Val::Bool(n.label == "true")),
            NodeKind::Ident => Ok(*Self::lookup(env, &n.label)?),
            NodeKind::Call => {
                let mut args = Vec::with_capacity(n.children.len());
                for &a in &n.children {
                    args.push(self.expr(a, env)?);
                }
                let callee = *self.fns.get(n.label.as_str()).ok_or(Halt::Error(ErrorTag::UnknownEntry))?;
                self.call(callee, args)
            }
            NodeKind::Unary => {
                let v = self.expr(n.children[0], env)?;
                match (n.label.as_str(), v) {
                    ("-", Val::Int(i)) => Ok(Val::Int(i.wrapping_neg())),
                    ("!", Val::Bool(b)) => Ok(Val::Bool(!b)),
                    _ => Err(mismatch),
                }
            }
            NodeKind::Binary => {
                let op = n.label.as_str();
                let lhs = self.expr(n.children[0], env)?;
                if op == "&&" || op == "||" {
                    let Val::Bool(l) = lhs else { return Err(mismatch) };
                    if (op == "&&" && !l) || (op == "||" && l) {
                        return Ok(Val::Bool(l));
                    }
                    return match self.expr(n.children[1], env)? {
                        Val::Bool(r) => Ok(Val::Bool(r)),
                        _ => Err(mismatch),
                    };
                }
                let rhs = self.expr(n.children[1], env)?;
                binary(op, lhs, rhs)
            }
            other => unreachable!("{other:?} is not an expression"),
        }
    }
}

fn binary(op: &str, lhs: Val, rhs: Val) -> Exec<Val> {
    let mismatch = Halt::Error(ErrorTag::TypeMismatch);
    match (lhs, rhs) {
        (Val::Int(a), Val::Int(b)) => Ok(match op {
            "+" => Val::Int(a.wrapping_add(b)),
            "-" => Val::Int(a.wrapping_sub(b)),
            "*" => Val::Int(a.wrapping_mul(b)),
            "/" | "%" if b == 0 => return Err(Halt::Error(ErrorTag::DivisionByZero)),
            "/" => Val::Int(a.wrapping_div(b)),
            "%" => Val::Int(a.wrapping_rem(b)),
            "<" => Val::Bool(a < b),
            "<=" => Val::Bool(a <= b),
            ">" => Val::Bool(a > b),
            ">=" => Val::Bool(a >= b),
            "==" => Val::Bool(a == b),
            "!=" => Val::Bool(a != b),
            _ => return Err(mismatch),
        }),
        (Val::Bool(a), Val::Bool(b)) => match op {
            "==" => Ok(Val::Bool(a == b)),
            "!=" => Ok(Val::Bool(a != b)),
            _ => Err(mismatch),
        },
        _ => Err(mismatch),
    }
}

/// Execute one test case against `program`.
pub fn run_test(program: &Program, test: &TestCase, step_budget: u64) -> ExecOutcome {
    let fns: HashMap<&str, NodeId> = program.functions().map(|f| (f.label.as_str(), f.id)).collect();
    let mut interp = Interp {
        program,
        fns,
        steps: 0,
        budget: step_budget,
        covered: vec![false; program.len()],
        depth: 0,
    };
    let result = match interp.fns.get(test.entry.as_str()).copied() {
        Some(f) if program.params(f).count() == test.args.len() => match interp.call(f, test.args.iter().map(|&v| v.into()).collect()) {
            Ok(Val::Int(i)) => RunResult::Value(Value::Int(i)),
            Ok(Val::Bool(b)) => RunResult::Value(Value::Bool(b)),
            Ok(Val::Unit) => RunResult::Unit,
            Err(Halt::Error(tag)) => RunResult::Error(tag),
            Err(Halt::Timeout) => RunResult::Timeout,
        },
        _ => RunResult::Error(ErrorTag::UnknownEntry),
    };
    let status = match (result, test.expect) {
        (RunResult::Value(v), Expect::Value(e)) if v == e => ExecStatus::Pass,
        (RunResult::Error(t), Expect::Error(e)) if t == e => ExecStatus::Pass,
        (RunResult::Timeout, _) => ExecStatus::Timeout,
        (RunResult::Error(_), _) => ExecStatus::RunError,
        _ => ExecStatus::Fail,
    };
    ExecOutcome {
        status,
        result,
        steps: interp.steps,
        covered_nodes: interp.covered.iter().enumerate().filter_map(|(i, &c)| c.then_some(i)).collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OtherReason {
    NoCoverage,
    Timeout,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialStatus {
    Killed,
    Live,
    Other(OtherReason),
}

/// One row of the kill matrix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KillResult {
    pub status: InitialStatus,
    pub killing_tests: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RunnerError {
    #[error("test suite is not green on the original program; failing tests: {}", .0.join(", "))]
    BrokenSuite(Vec<String>),
}

/// Tests whose entry function is declared in `program`.
pub fn tests_for<'t>(program: &Program, suite: &'t [TestCase]) -> Vec<&'t TestCase> {
    suite.iter().filter(|t| program.function(&t.entry).is_some()).collect()
}

/// Outcomes of running a suite on the unmutated program, reused for every
/// mutant of that program.
#[derive(Debug, Clone)]
pub struct Baseline<'t> {
    pub tests: Vec<&'t TestCase>,
    pub outcomes: Vec<ExecOutcome>,
}

impl<'t> Baseline<'t> {
    pub fn run(program: &Program, suite: &'t [TestCase], step_budget: u64) -> Self {
        let tests = tests_for(program, suite);
        let outcomes = tests.iter().map(|t| run_test(program, t, step_budget)).collect();
        Baseline { tests, outcomes }
    }

    pub fn failing(&self) -> Vec<String> {
        self.tests
            .iter()
            .zip(&self.outcomes)
            .filter(|(_, o)| o.status != ExecStatus::Pass)
            .map(|(t, _)| t.name.clone())
            .collect()
    }

    /// Run every test that passes on the original and reaches `node` against
    /// `mutated`. Returns per-test statuses, with `NoCoverage` for tests that
    /// were skipped because they never evaluate `node`, and `None` for tests
    /// that did not pass on the original.
    pub fn against(&self, node: NodeId, mutated: &Program, step_budget: u64) -> Vec<Option<ExecStatus>> {
        self.tests
            .iter()
            .zip(&self.outcomes)
            .map(|(t, o)| {
                if o.status != ExecStatus::Pass {
                    None
                } else if !o.covered_nodes.contains(&node) {
                    Some(ExecStatus::NoCoverage)
                } else {
                    Some(run_test(mutated, t, step_budget).status)
                }
            })
            .collect()
    }
}

/// Initial status of every mutant of `original` under `suite`.
///
/// Only tests that execute the mutated node on the original are run against
/// a mutant. A mutant is killed when one of them fails or raises a run error;
/// a mutant that is only distinguished by timeouts is reported as
/// `Other(Timeout)`.
pub fn kill_matrix(
    original: &Program,
    mutants: &[Mutant],
    suite: &[TestCase],
    step_budget: u64,
) -> Result<BTreeMap<String, KillResult>, RunnerError> {
    let baseline = Baseline::run(original, suite, step_budget);
    let failing = baseline.failing();
    if !failing.is_empty() {
        return Err(RunnerError::BrokenSuite(failing));
    }
    let rows: Vec<(String, KillResult)> = mutants
        .par_iter()
        .map(|m| {
            let result = match parse(&m.mutated_text) {
                Ok(mutated) => classify(&baseline, m.node_id, &mutated, step_budget),
                // An unparseable mutant is rejected by the "compiler".
                Err(_) => KillResult {
                    status: InitialStatus::Killed,
                    killing_tests: vec![],
                },
            };
            (m.mutant_id.clone(), result)
        })
        .collect();
    Ok(rows.into_iter().collect())
}

fn classify(baseline: &Baseline<'_>, node: NodeId, mutated: &Program, step_budget: u64) -> KillResult {
    let statuses = baseline.against(node, mutated, step_budget);
    let covered = statuses.iter().any(|s| matches!(s, Some(s) if *s != ExecStatus::NoCoverage));
    if !covered {
        return KillResult {
            status: InitialStatus::Other(OtherReason::NoCoverage),
            killing_tests: vec![],
        };
    }
    let killing_tests: Vec<String> = baseline
        .tests
        .iter()
        .zip(&statuses)
        .filter(|(_, s)| matches!(s, Some(ExecStatus::Fail | ExecStatus::RunError)))
        .map(|(t, _)| t.name.clone())
        .collect();
    let status = if !killing_tests.is_empty() {
        InitialStatus::Killed
    } else if statuses.contains(&Some(ExecStatus::Timeout)) {
        InitialStatus::Other(OtherReason::Timeout)
    } else {
        InitialStatus::Live
    };
    KillResult { status, killing_tests }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::minilang::SourceFile;
    use crate::mutgen::{generate_mutants, MutOperator};

    fn t(name: &str, entry: &str, args: Vec<Value>, expect: Expect) -> TestCase {
        TestCase {
            name: name.into(),
            entry: entry.into(),
            args,
            expect,
        }
    }

    fn run(src: &str, expect: Expect) -> ExecOutcome {
        run_test(&parse(src).unwrap(), &t("t", "f", vec![], expect), DEFAULT_STEP_BUDGET)
    }

    #[test]
    fn pass_on_expected_value() {
        let o = run("fn f()->int{return 1;}", Expect::Value(Value::Int(1)));
        assert_eq!(o.status, ExecStatus::Pass);
        assert!(o.steps > 0);
    }

    #[test]
    fn division_by_zero_is_a_run_error() {
        let o = run("fn f()->int{return 1/0;}", Expect::Value(Value::Int(1)));
        assert_eq!(o.status, ExecStatus::RunError);
        assert_eq!(o.result, RunResult::Error(ErrorTag::DivisionByZero));
        let expected = run("fn f()->int{return 1%0;}", Expect::Error(ErrorTag::DivisionByZero));
        assert_eq!(expected.status, ExecStatus::Pass);
    }

    #[test]
    fn infinite_loop_times_out() {
        let o = run("fn f()->int{while(true){} return 0;}", Expect::Value(Value::Int(0)));
        assert_eq!(o.status, ExecStatus::Timeout);
        assert_eq!(o.steps, DEFAULT_STEP_BUDGET);
    }

    #[test]
    fn missing_return_and_recursion_limit() {
        let o = run("fn f()->int{ if (false) { return 1; } }", Expect::Value(Value::Int(1)));
        assert_eq!(o.result, RunResult::Error(ErrorTag::MissingReturn));
        let o = run("fn f()->int{ return f(); }", Expect::Value(Value::Int(1)));
        assert_eq!(o.result, RunResult::Error(ErrorTag::StackOverflow));
    }

    #[test]
    fn scoping_and_loops() {
        let src = "fn f(n: int) -> int { let acc = 0; let i = 1; while (i <= n) { let sq = i * i; acc += sq; i += 1; } return acc; }";
        let o = run_test(
            &parse(src).unwrap(),
            &t("t", "f", vec![Value::Int(4)], Expect::Value(Value::Int(30))),
            10_000,
        );
        assert_eq!(o.status, ExecStatus::Pass);
        let leak = "fn f() -> int { if (true) { let x = 1; } return x; }";
        assert_eq!(
            run(leak, Expect::Value(Value::Int(1))).result,
            RunResult::Error(ErrorTag::UnboundVariable)
        );
    }

    #[test]
    fn short_circuit_skips_rhs() {
        let src = "fn f() -> bool { return false && 1 / 0 == 1; }";
        let o = run(src, Expect::Value(Value::Bool(false)));
        assert_eq!(o.status, ExecStatus::Pass);
        let p = parse(src).unwrap();
        let div = p.nodes.iter().find(|n| n.label == "/").unwrap().id;
        assert!(!o.covered_nodes.contains(&div));
    }

    #[test]
    fn test_case_json_shape() {
        let json = r#"[{"name":"a","entry":"f","args":[1,true],"expect":{"value":3}},
                       {"name":"b","entry":"g","expect":{"error":"division_by_zero"}}]"#;
        let tests: Vec<TestCase> = serde_json::from_str(json).unwrap();
        assert_eq!(tests[0].args, vec![Value::Int(1), Value::Bool(true)]);
        assert_eq!(tests[1].expect, Expect::Error(ErrorTag::DivisionByZero));
    }

    fn matrix(src: &str, suite: &[TestCase]) -> (Vec<Mutant>, BTreeMap<String, KillResult>) {
        let file = SourceFile::new("m.ml", src);
        let p = file.parse().unwrap();
        let ms = generate_mutants(&p, &file, 0);
        let km = kill_matrix(&p, &ms, suite, DEFAULT_STEP_BUDGET).unwrap();
        (ms, km)
    }

    #[test]
    fn dead_code_mutant_has_no_coverage() {
        let src = "fn f(a: int) -> int { if (a > 100) { return a - 1; } return a; }";
        let (ms, km) = matrix(src, &[t("t", "f", vec![Value::Int(5)], Expect::Value(Value::Int(5)))]);
        let dead = ms.iter().find(|m| m.description.contains("`-` with `+`")).unwrap();
        assert_eq!(km[&dead.mutant_id].status, InitialStatus::Other(OtherReason::NoCoverage));
    }

    #[test]
    fn negated_branch_is_killed() {
        let src = "fn f(a: int) -> int { if (a > 100) { return 1; } return 0; }";
        let (ms, km) = matrix(src, &[t("t", "f", vec![Value::Int(5)], Expect::Value(Value::Int(0)))]);
        let nc = ms.iter().find(|m| m.operator == MutOperator::NC).unwrap();
        assert_eq!(km[&nc.mutant_id].status, InitialStatus::Killed);
        assert_eq!(km[&nc.mutant_id].killing_tests, vec!["t".to_string()]);
        let cb = ms.iter().find(|m| m.operator == MutOperator::CB).unwrap();
        assert_eq!(km[&cb.mutant_id].status, InitialStatus::Live);
    }

    #[test]
    fn timeout_only_mutant_is_other() {
        let src = "fn f(n: int) -> int { let i = 0; while (i < n) { i += 1; } return i; }";
        let (ms, km) = matrix(src, &[t("t", "f", vec![Value::Int(3)], Expect::Value(Value::Int(3)))]);
        let incr = ms.iter().find(|m| m.operator == MutOperator::INCR).unwrap();
        assert_eq!(km[&incr.mutant_id].status, InitialStatus::Other(OtherReason::Timeout));
    }

    #[test]
    fn broken_suite_is_rejected() {
        let file = SourceFile::new("m.ml", "fn f() -> int { return 1; }");
        let p = file.parse().unwrap();
        let err = kill_matrix(&p, &[], &[t("bad", "f", vec![], Expect::Value(Value::Int(2)))], 100).unwrap_err();
        assert_eq!(err, RunnerError::BrokenSuite(vec!["bad".into()]));
    }
}
