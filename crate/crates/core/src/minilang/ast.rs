use serde::{Deserialize, Serialize};
use std::fmt;

use super::lexer::Token;

/// Index of a node inside its [`Program`]; ids are assigned in preorder from 0.
pub type NodeId = usize;

/// Source region covered by a node or token. Lines and columns are 1-based;
/// `end_col` is the column just past the last character.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub struct Span {
    pub start_line: u32,
    pub start_col: u32,
    pub end_line: u32,
    pub end_col: u32,
}

impl Span {
    pub fn encloses(&self, other: &Span) -> bool {
        (self.start_line, self.start_col) <= (other.start_line, other.start_col)
            && (other.end_line, other.end_col) <= (self.end_line, self.end_col)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NodeKind {
    Program,
    FnDecl,
    Param,
    Block,
    Let,
    Assign,
    CompoundAssign,
    If,
    While,
    Return,
    ExprStmt,
    Call,
    Binary,
    Unary,
    IntLit,
    BoolLit,
    Ident,
}

impl NodeKind {
    pub fn is_statement(self) -> bool {
        matches!(
            self,
            NodeKind::Let
                | NodeKind::Assign
                | NodeKind::CompoundAssign
                | NodeKind::If
                | NodeKind::While
                | NodeKind::Return
                | NodeKind::ExprStmt
        )
    }

    pub fn is_expression(self) -> bool {
        matches!(
            self,
            NodeKind::Call | NodeKind::Binary | NodeKind::Unary | NodeKind::IntLit | NodeKind::BoolLit | NodeKind::Ident
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Type {
    Int,
    Bool,
    Unit,
}

impl fmt::Display for Type {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Type::Int => "int",
            Type::Bool => "bool",
            Type::Unit => "unit",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Node {
    pub id: NodeId,
    pub kind: NodeKind,
    /// Operator symbol, identifier name or literal text; empty for purely
    /// structural kinds.
    pub label: String,
    /// Declared type on `FnDecl` (return type) and `Param` nodes.
    pub ty: Option<Type>,
    pub children: Vec<NodeId>,
    pub parent: Option<NodeId>,
    pub span: Span,
    /// Byte range `[start, end)` in the source text.
    pub bytes: (usize, usize),
    /// Token index range `[start, end)` into [`Program::tokens`].
    pub toks: (usize, usize),
}

/// A parsed MiniLang file: a flat preorder arena rooted at node 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Program {
    pub nodes: Vec<Node>,
    pub tokens: Vec<Token>,
}

impl Program {
    pub const ROOT: NodeId = 0;

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.len() <= 1
    }

    /// Top-level function declarations in source order.
    pub fn functions(&self) -> impl Iterator<Item = &Node> {
        self.nodes[Self::ROOT].children.iter().map(move |&c| &self.nodes[c])
    }

    pub fn function(&self, name: &str) -> Option<&Node> {
        self.functions().find(|f| f.label == name)
    }

    pub fn params(&self, fn_id: NodeId) -> impl Iterator<Item = &Node> {
        self.nodes[fn_id]
            .children
            .iter()
            .map(move |&c| &self.nodes[c])
            .filter(|n| n.kind == NodeKind::Param)
    }

    pub fn fn_body(&self, fn_id: NodeId) -> NodeId {
        *self.nodes[fn_id].children.last().expect("FnDecl always has a body")
    }

    /// Ids of `id` and all of its descendants, in preorder. Because ids are
    /// preorder, this is a contiguous range.
    pub fn subtree(&self, id: NodeId) -> std::ops::Range<NodeId> {
        id..id + self.subtree_size(id)
    }

    pub fn subtree_size(&self, id: NodeId) -> usize {
        let mut last = id;
        while let Some(&c) = self.nodes[last].children.last() {
            last = c;
        }
        last + 1 - id
    }

    pub fn ancestors(&self, id: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        std::iter::successors(self.nodes[id].parent, move |&p| self.nodes[p].parent)
    }

    pub fn is_ancestor(&self, anc: NodeId, id: NodeId) -> bool {
        anc < id && self.subtree(anc).contains(&id)
    }

    /// Innermost statement node containing (or equal to) `id`.
    pub fn enclosing_statement(&self, id: NodeId) -> Option<NodeId> {
        std::iter::once(id)
            .chain(self.ancestors(id))
            .find(|&n| self.nodes[n].kind.is_statement())
    }

    pub fn enclosing_fn(&self, id: NodeId) -> Option<NodeId> {
        std::iter::once(id)
            .chain(self.ancestors(id))
            .find(|&n| self.nodes[n].kind == NodeKind::FnDecl)
    }

    /// Tokens covered by a node.
    pub fn node_tokens(&self, id: NodeId) -> &[Token] {
        let (s, e) = self.nodes[id].toks;
        &self.tokens[s..e]
    }

    /// Kind/label/type/child-order equality, ignoring ids and positions.
    pub fn structurally_eq(&self, other: &Program) -> bool {
        self.nodes.len() == other.nodes.len()
            && self
                .nodes
                .iter()
                .zip(&other.nodes)
                .all(|(a, b)| a.kind == b.kind && a.label == b.label && a.ty == b.ty && a.children == b.children)
    }

    /// Compact s-expression of the tree, handy in tests and error messages.
    pub fn sexpr(&self, id: NodeId) -> String {
        let n = &self.nodes[id];
        let mut s = format!("({:?}", n.kind);
        if !n.label.is_empty() {
            s.push(' ');
            s.push_str(&n.label);
        }
        for &c in &n.children {
            s.push(' ');
            s.push_str(&self.sexpr(c));
        }
        s.push(')');
        s
    }
}
