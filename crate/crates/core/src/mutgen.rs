//! Mutant generation with the nine MiniLang mutation operators.
//!
//! Every mutant is a single source-level edit located by AST node: an operator
//! token swap, a deleted unary minus, a deleted call statement or a replaced
//! return value. Edits splice the original text through node byte ranges, so
//! comments and layout around the mutation are preserved.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt;

use crate::minilang::{parse, NodeId, NodeKind, Program, SourceFile, Type};

/// The adapted operator set. The declaration order fixes the ordinal used as
/// the model feature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MutOperator {
    /// Conditional boundary: `<`↔`<=`, `>`↔`>=`.
    CB,
    /// Negated conditional.
    NC,
    /// Arithmetic operator replacement.
    MATH,
    /// `+=`↔`-=`.
    INCR,
    /// Invert negatives: drop a unary minus.
    IN,
    /// Remove a call statement to a unit function.
    VMC,
    /// Primitive return: returned int becomes `0`.
    PRET,
    /// Returned bool becomes `true`.
    BTRET,
    /// Returned bool becomes `false`.
    BFRET,
}

impl MutOperator {
    pub const ALL: [MutOperator; 9] = [
        MutOperator::CB,
        MutOperator::NC,
        MutOperator::MATH,
        MutOperator::INCR,
        MutOperator::IN,
        MutOperator::VMC,
        MutOperator::PRET,
        MutOperator::BTRET,
        MutOperator::BFRET,
    ];

    pub fn ordinal(self) -> u8 {
        self as u8
    }

    pub fn from_ordinal(ordinal: u8) -> Option<Self> {
        Self::ALL.get(ordinal as usize).copied()
    }

    pub fn code(self) -> &'static str {
        match self {
            MutOperator::CB => "CB",
            MutOperator::NC => "NC",
            MutOperator::MATH => "MATH",
            MutOperator::INCR => "INCR",
            MutOperator::IN => "IN",
            MutOperator::VMC => "VMC",
            MutOperator::PRET => "PRET",
            MutOperator::BTRET => "BTRET",
            MutOperator::BFRET => "BFRET",
        }
    }

    pub fn from_code(code: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|op| op.code() == code)
    }

    /// Replacement for a binary or compound-assignment operator symbol.
    fn swap(self, symbol: &str) -> Option<&'static str> {
        match (self, symbol) {
            (MutOperator::CB, "<") => Some("<="),
            (MutOperator::CB, "<=") => Some("<"),
            (MutOperator::CB, ">") => Some(">="),
            (MutOperator::CB, ">=") => Some(">"),
            (MutOperator::NC, "<") => Some(">="),
            (MutOperator::NC, "<=") => Some(">"),
            (MutOperator::NC, ">") => Some("<="),
            (MutOperator::NC, ">=") => Some("<"),
            (MutOperator::NC, "==") => Some("!="),
            (MutOperator::NC, "!=") => Some("=="),
            (MutOperator::MATH, "+") => Some("-"),
            (MutOperator::MATH, "-") => Some("+"),
            (MutOperator::MATH, "*") => Some("/"),
            (MutOperator::MATH, "/") => Some("*"),
            (MutOperator::MATH, "%") => Some("*"),
            (MutOperator::INCR, "+=") => Some("-="),
            (MutOperator::INCR, "-=") => Some("+="),
            _ => None,
        }
    }
}

impl fmt::Display for MutOperator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mutant {
    /// `rev<k>:<file>:<node_id>:<op>`
    pub mutant_id: String,
    pub operator: MutOperator,
    pub file: String,
    pub node_id: NodeId,
    pub line: u32,
    pub description: String,
    pub mutated_text: String,
    /// SHA-256 (hex) of the file text the mutant was generated from.
    pub original_sha256: String,
}

impl Mutant {
    pub fn make_id(revision: usize, file: &str, node_id: NodeId, op: MutOperator) -> String {
        format!("rev{revision}:{file}:{node_id}:{op}")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MutateError {
    #[error("operator {op} is not applicable to node {node}")]
    Inapplicable { node: NodeId, op: MutOperator },
    #[error("operator {op} at node {node} would not change the program")]
    NoOp { node: NodeId, op: MutOperator },
    #[error("mutant {0} was generated from a different version of the file")]
    StaleMutant(String),
    #[error("mutated text for {0} does not parse")]
    Unparseable(String),
    #[error("cannot rebuild mutant {id} from its diff: {reason}")]
    BadDiff { id: String, reason: String },
}

pub fn sha256_hex(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

/// The outcome of applying one operator at one node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mutation {
    pub text: String,
    pub line: u32,
    pub description: String,
}

fn splice(text: &str, range: (usize, usize), with: &str) -> String {
    let mut out = String::with_capacity(text.len() + with.len());
    out.push_str(&text[..range.0]);
    out.push_str(with);
    out.push_str(&text[range.1..]);
    out
}

/// The operator token sitting between the first two children of a binary or
/// compound-assignment node.
fn infix_token(program: &Program, id: NodeId) -> usize {
    let n = program.node(id);
    let lhs_end = program.node(n.children[0]).toks.1;
    debug_assert_eq!(lhs_end + 1, program.node(n.children[1]).toks.0);
    lhs_end
}

fn return_type(program: &Program, id: NodeId) -> Type {
    program.enclosing_fn(id).and_then(|f| program.node(f).ty).unwrap_or(Type::Unit)
}

fn is_unit_call_stmt(program: &Program, id: NodeId) -> Option<&str> {
    let n = program.node(id);
    if n.kind != NodeKind::ExprStmt {
        return None;
    }
    let call = program.node(n.children[0]);
    if call.kind != NodeKind::Call {
        return None;
    }
    let callee = program.function(&call.label)?;
    (callee.ty == Some(Type::Unit)).then_some(call.label.as_str())
}

/// Apply `op` at `node` of `program`, which must have been parsed from `text`.
pub fn mutate_at(program: &Program, text: &str, node: NodeId, op: MutOperator) -> Result<Mutation, MutateError> {
    let inapplicable = MutateError::Inapplicable { node, op };
    let n = program.nodes.get(node).ok_or(inapplicable.clone())?;
    let (range, replacement, line, description) = match op {
        MutOperator::CB | MutOperator::NC | MutOperator::MATH | MutOperator::INCR => {
            let expected = if op == MutOperator::INCR {
                NodeKind::CompoundAssign
            } else {
                NodeKind::Binary
            };
            if n.kind != expected {
                return Err(inapplicable);
            }
            let to = op.swap(&n.label).ok_or(inapplicable)?;
            let tok = &program.tokens[infix_token(program, node)];
            let desc = format!("replaced `{}` with `{to}`", n.label);
            ((tok.start, tok.end), to.to_string(), tok.span.start_line, desc)
        }
        MutOperator::IN => {
            if n.kind != NodeKind::Unary || n.label != "-" {
                return Err(inapplicable);
            }
            let tok = &program.tokens[program.node(n.children[0]).toks.0 - 1];
            (
                (tok.start, tok.end),
                String::new(),
                tok.span.start_line,
                "removed unary minus".to_string(),
            )
        }
        MutOperator::VMC => {
            let callee = is_unit_call_stmt(program, node).ok_or(inapplicable)?;
            let desc = format!("removed call to `{callee}`");
            (n.bytes, String::new(), n.span.start_line, desc)
        }
        MutOperator::PRET | MutOperator::BTRET | MutOperator::BFRET => {
            if n.kind != NodeKind::Return || n.children.is_empty() {
                return Err(inapplicable);
            }
            let (ty, lit) = match op {
                MutOperator::PRET => (Type::Int, "0"),
                MutOperator::BTRET => (Type::Bool, "true"),
                _ => (Type::Bool, "false"),
            };
            if return_type(program, node) != ty {
                return Err(inapplicable);
            }
            let value = program.node(n.children[0]);
            if value.kind.is_expression() && value.children.is_empty() && value.label == lit {
                return Err(MutateError::NoOp { node, op });
            }
            let desc = format!("replaced return value with {lit}");
            (value.bytes, lit.to_string(), n.span.start_line, desc)
        }
    };
    let mutated = splice(text, range, &replacement);
    if mutated == text {
        return Err(MutateError::NoOp { node, op });
    }
    Ok(Mutation {
        text: mutated,
        line,
        description: format!("{op}: {description}"),
    })
}

/// Every `(node, operator)` pair at which a mutant can be generated, ordered
/// by node id then operator ordinal.
pub fn mutation_sites(program: &Program) -> Vec<(NodeId, MutOperator)> {
    let mut sites = Vec::new();
    for n in &program.nodes {
        let candidates: &[MutOperator] = match n.kind {
            NodeKind::Binary => &[MutOperator::CB, MutOperator::NC, MutOperator::MATH],
            NodeKind::CompoundAssign => &[MutOperator::INCR],
            NodeKind::Unary => &[MutOperator::IN],
            NodeKind::ExprStmt => &[MutOperator::VMC],
            NodeKind::Return => &[MutOperator::PRET, MutOperator::BTRET, MutOperator::BFRET],
            _ => &[],
        };
        for &op in candidates {
            let applicable = match op {
                MutOperator::CB | MutOperator::NC | MutOperator::MATH | MutOperator::INCR => op.swap(&n.label).is_some(),
                MutOperator::IN => n.label == "-",
                MutOperator::VMC => is_unit_call_stmt(program, n.id).is_some(),
                MutOperator::PRET | MutOperator::BTRET | MutOperator::BFRET => {
                    let Some(&v) = n.children.first() else { continue };
                    let (ty, lit) = match op {
                        MutOperator::PRET => (Type::Int, "0"),
                        MutOperator::BTRET => (Type::Bool, "true"),
                        _ => (Type::Bool, "false"),
                    };
                    let value = program.node(v);
                    return_type(program, n.id) == ty && !(value.children.is_empty() && value.label == lit)
                }
            };
            if applicable {
                sites.push((n.id, op));
            }
        }
    }
    sites
}

/// All single-operator mutants of `file` (parsed as `program`), generated at
/// revision index `revision`.
pub fn generate_mutants(program: &Program, file: &SourceFile, revision: usize) -> Vec<Mutant> {
    let hash = sha256_hex(&file.text);
    mutation_sites(program)
        .into_iter()
        .filter_map(|(node, op)| {
            let m = mutate_at(program, &file.text, node, op).ok()?;
            debug_assert!(parse(&m.text).is_ok(), "{} produced unparseable text", op);
            Some(Mutant {
                mutant_id: Mutant::make_id(revision, &file.path, node, op),
                operator: op,
                file: file.path.clone(),
                node_id: node,
                line: m.line,
                description: m.description,
                mutated_text: m.text,
                original_sha256: hash.clone(),
            })
        })
        .collect()
}

/// Materialize `mutant` against the current text of its file.
pub fn apply(mutant: &Mutant, current: &SourceFile) -> Result<SourceFile, MutateError> {
    if sha256_hex(&current.text) != mutant.original_sha256 || current.path != mutant.file {
        return Err(MutateError::StaleMutant(mutant.mutant_id.clone()));
    }
    if parse(&mutant.mutated_text).is_err() {
        return Err(MutateError::Unparseable(mutant.mutant_id.clone()));
    }
    Ok(SourceFile::new(current.path.clone(), mutant.mutated_text.clone()))
}

/// On-disk form of a mutant: the mutated text is stored as a unified diff
/// (3 context lines) against the original file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MutantRecord {
    pub mutant_id: String,
    pub operator: MutOperator,
    pub file: String,
    pub node_id: NodeId,
    pub line: u32,
    pub description: String,
    pub original_sha256: String,
    pub diff: String,
}

impl MutantRecord {
    pub fn new(mutant: &Mutant, original: &str) -> Self {
        let patch = diffy::create_patch(original, &mutant.mutated_text);
        MutantRecord {
            mutant_id: mutant.mutant_id.clone(),
            operator: mutant.operator,
            file: mutant.file.clone(),
            node_id: mutant.node_id,
            line: mutant.line,
            description: mutant.description.clone(),
            original_sha256: mutant.original_sha256.clone(),
            diff: patch.to_string(),
        }
    }

    /// Rebuild the full mutant from the original file text.
    pub fn restore(&self, original: &str) -> Result<Mutant, MutateError> {
        if sha256_hex(original) != self.original_sha256 {
            return Err(MutateError::StaleMutant(self.mutant_id.clone()));
        }
        let bad = |reason: String| MutateError::BadDiff {
            id: self.mutant_id.clone(),
            reason,
        };
        let patch = diffy::Patch::from_str(&self.diff).map_err(|e| bad(e.to_string()))?;
        let mutated_text = diffy::apply(original, &patch).map_err(|e| bad(e.to_string()))?;
        Ok(Mutant {
            mutant_id: self.mutant_id.clone(),
            operator: self.operator,
            file: self.file.clone(),
            node_id: self.node_id,
            line: self.line,
            description: self.description.clone(),
            mutated_text,
            original_sha256: self.original_sha256.clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mutants_of(src: &str) -> Vec<Mutant> {
        let file = SourceFile::new("t.ml", src);
        generate_mutants(&file.parse().unwrap(), &file, 0)
    }

    #[test]
    fn less_than_yields_boundary_and_negation() {
        let ms = mutants_of("fn f(a: int, b: int) -> bool { return a < b; }");
        let texts: Vec<(&str, MutOperator)> = ms
            .iter()
            .filter(|m| matches!(m.operator, MutOperator::CB | MutOperator::NC))
            .map(|m| (m.mutated_text.as_str(), m.operator))
            .collect();
        assert_eq!(
            texts,
            vec![
                ("fn f(a: int, b: int) -> bool { return a <= b; }", MutOperator::CB),
                ("fn f(a: int, b: int) -> bool { return a >= b; }", MutOperator::NC),
            ]
        );
    }

    #[test]
    fn return_true_only_gets_bfret() {
        let ms = mutants_of("fn f() -> bool { return true; }");
        assert_eq!(ms.len(), 1);
        assert_eq!(ms[0].operator, MutOperator::BFRET);
        assert_eq!(ms[0].mutated_text, "fn f() -> bool { return false; }");
    }

    #[test]
    fn return_zero_has_no_pret() {
        assert!(mutants_of("fn f() -> int { return 0; }").is_empty());
        let ms = mutants_of("fn f() -> int { return (1 + 2); }");
        let pret: Vec<_> = ms.iter().filter(|m| m.operator == MutOperator::PRET).collect();
        assert_eq!(pret[0].mutated_text, "fn f() -> int { return 0; }");
    }

    #[test]
    fn vmc_only_for_unit_calls() {
        let src = "fn log(x: int) { } fn g() -> int { return 1; } fn f() { log(1); g(); }";
        let ms = mutants_of(src);
        let vmc: Vec<_> = ms.iter().filter(|m| m.operator == MutOperator::VMC).collect();
        assert_eq!(vmc.len(), 1);
        assert_eq!(
            vmc[0].mutated_text,
            "fn log(x: int) { } fn g() -> int { return 1; } fn f() {  g(); }"
        );
    }

    #[test]
    fn incr_and_invert_negative() {
        let ms = mutants_of("fn f(x: int) -> int { x += -2; return x; }");
        let ops: Vec<_> = ms.iter().map(|m| m.operator).collect();
        assert_eq!(ops, vec![MutOperator::INCR, MutOperator::IN, MutOperator::PRET]);
        assert_eq!(ms[0].mutated_text, "fn f(x: int) -> int { x -= -2; return x; }");
        assert_eq!(ms[1].mutated_text, "fn f(x: int) -> int { x += 2; return x; }");
    }

    #[test]
    fn ids_and_ordering() {
        let ms = mutants_of("fn f(a: int) -> int { return a % 2 - a; }");
        let ids: Vec<_> = ms.iter().map(|m| m.mutant_id.as_str()).collect();
        assert_eq!(ids, ["rev0:t.ml:4:PRET", "rev0:t.ml:5:MATH", "rev0:t.ml:6:MATH"]);
        assert_eq!(ms[1].mutated_text, "fn f(a: int) -> int { return a % 2 + a; }");
        assert_eq!(ms[2].mutated_text, "fn f(a: int) -> int { return a * 2 - a; }");
    }

    #[test]
    fn apply_and_staleness() {
        let file = SourceFile::new("t.ml", "fn f(a: int, b: int) -> bool { return a<b; }");
        let ms = generate_mutants(&file.parse().unwrap(), &file, 0);
        let cb = ms.iter().find(|m| m.operator == MutOperator::CB).unwrap();
        let applied = apply(cb, &file).unwrap();
        assert!(applied.text.contains("a<=b"));
        let edited = SourceFile::new("t.ml", "fn f(a: int, b: int) -> bool { return a< b; }");
        assert!(matches!(apply(cb, &edited), Err(MutateError::StaleMutant(_))));
    }

    #[test]
    fn record_round_trip() {
        let src = "fn f(a: int) -> int {\n  let x = 1;\n  let y = 2;\n  let z = 3;\n  return a + x;\n}\n";
        let file = SourceFile::new("t.ml", src);
        for m in generate_mutants(&file.parse().unwrap(), &file, 3) {
            let rec = MutantRecord::new(&m, src);
            assert!(rec.diff.contains("@@"));
            assert_eq!(rec.restore(src).unwrap(), m);
        }
    }

    #[test]
    fn operator_codes_round_trip() {
        for (i, op) in MutOperator::ALL.into_iter().enumerate() {
            assert_eq!(op.ordinal() as usize, i);
            assert_eq!(MutOperator::from_code(op.code()), Some(op));
            assert_eq!(MutOperator::from_ordinal(i as u8), Some(op));
        }
    }
}
