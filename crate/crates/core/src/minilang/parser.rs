//! Recursive-descent parser producing the preorder node arena.

use std::collections::HashMap;

use super::ast::{Node, NodeKind, Program, Span, Type};
use super::lexer::{tokenize, Token, TokenKind};
use super::ParseError;

/// Nesting limit for recursive constructs (parentheses, unary chains, blocks).
const MAX_DEPTH: usize = 96;
/// Limit on tree height, which also bounds left-associative operator chains.
const MAX_HEIGHT: usize = 256;

/// Which syntactic category a fragment is parsed as.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fragment {
    Program,
    Statement,
    Expression,
}

struct Raw {
    kind: NodeKind,
    label: String,
    ty: Option<Type>,
    children: Vec<Raw>,
    tok_start: usize,
    tok_end: usize,
    height: usize,
}

impl Raw {
    fn new(kind: NodeKind, label: impl Into<String>, children: Vec<Raw>, tok_start: usize, tok_end: usize) -> Self {
        let height = 1 + children.iter().map(|c| c.height).max().unwrap_or(0);
        Raw {
            kind,
            label: label.into(),
            ty: None,
            children,
            tok_start,
            tok_end,
            height,
        }
    }
}

struct Parser<'a> {
    toks: &'a [Token],
    pos: usize,
    depth: usize,
    eof: (u32, u32),
}

type PResult<T> = Result<T, ParseError>;

fn binary_prec(kind: TokenKind) -> Option<u8> {
    use TokenKind::*;
    Some(match kind {
        OrOr => 1,
        AndAnd => 2,
        EqEq | NotEq => 3,
        Lt | Le | Gt | Ge => 4,
        Plus | Minus => 5,
        Star | Slash | Percent => 6,
        _ => return None,
    })
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<TokenKind> {
        self.toks.get(self.pos).map(|t| t.kind)
    }

    fn peek_at(&self, off: usize) -> Option<TokenKind> {
        self.toks.get(self.pos + off).map(|t| t.kind)
    }

    fn error(&self, expected: &str) -> ParseError {
        match self.toks.get(self.pos) {
            Some(t) => ParseError::new(t.span.start_line, t.span.start_col, expected, &format!("`{}`", t.text)),
            None => ParseError::new(self.eof.0, self.eof.1, expected, "end of input"),
        }
    }

    fn eat(&mut self, kind: TokenKind) -> bool {
        if self.peek() == Some(kind) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, kind: TokenKind) -> PResult<&'a Token> {
        if self.peek() == Some(kind) {
            self.pos += 1;
            Ok(&self.toks[self.pos - 1])
        } else {
            Err(self.error(kind.describe()))
        }
    }

    fn enter(&mut self) -> PResult<()> {
        self.depth += 1;
        if self.depth > MAX_DEPTH {
            return Err(self.error("shallower nesting"));
        }
        Ok(())
    }

    fn leave(&mut self) {
        self.depth -= 1;
    }

    fn check_height(&self, raw: Raw) -> PResult<Raw> {
        if raw.height > MAX_HEIGHT {
            let t = &self.toks[raw.tok_start];
            return Err(ParseError::new(
                t.span.start_line,
                t.span.start_col,
                "shallower expression",
                "too deeply nested expression",
            ));
        }
        Ok(raw)
    }

    fn program(&mut self) -> PResult<Raw> {
        let start = self.pos;
        let mut fns = Vec::new();
        while self.peek().is_some() {
            fns.push(self.function()?);
        }
        Ok(Raw::new(NodeKind::Program, "", fns, start, self.pos))
    }

    fn ty(&mut self) -> PResult<Type> {
        let t = match self.peek() {
            Some(TokenKind::TyInt) => Type::Int,
            Some(TokenKind::TyBool) => Type::Bool,
            Some(TokenKind::TyUnit) => Type::Unit,
            _ => return Err(self.error("type (`int`, `bool` or `unit`)")),
        };
        self.pos += 1;
        Ok(t)
    }

    fn function(&mut self) -> PResult<Raw> {
        let start = self.pos;
        self.expect(TokenKind::Fn)?;
        let name = self.expect(TokenKind::Ident)?.text.clone();
        self.expect(TokenKind::LParen)?;
        let mut children = Vec::new();
        if self.peek() != Some(TokenKind::RParen) {
            loop {
                let pstart = self.pos;
                let pname = self.expect(TokenKind::Ident)?.text.clone();
                self.expect(TokenKind::Colon)?;
                let ty = self.ty()?;
                let mut p = Raw::new(NodeKind::Param, pname, vec![], pstart, self.pos);
                p.ty = Some(ty);
                children.push(p);
                if !self.eat(TokenKind::Comma) {
                    break;
                }
            }
        }
        self.expect(TokenKind::RParen)?;
        let ret = if self.eat(TokenKind::Arrow) { self.ty()? } else { Type::Unit };
        children.push(self.block()?);
        let mut f = Raw::new(NodeKind::FnDecl, name, children, start, self.pos);
        f.ty = Some(ret);
        Ok(f)
    }

    fn block(&mut self) -> PResult<Raw> {
        self.enter()?;
        let start = self.pos;
        self.expect(TokenKind::LBrace)?;
        let mut stmts = Vec::new();
        while self.peek() != Some(TokenKind::RBrace) {
            if self.peek().is_none() {
                return Err(self.error("`}`"));
            }
            stmts.push(self.statement()?);
        }
        self.pos += 1;
        self.leave();
        self.check_height(Raw::new(NodeKind::Block, "", stmts, start, self.pos))
    }

    fn statement(&mut self) -> PResult<Raw> {
        let start = self.pos;
        match self.peek() {
            Some(TokenKind::Let) => {
                self.pos += 1;
                let name = self.expect(TokenKind::Ident)?.text.clone();
                self.expect(TokenKind::Assign)?;
                let e = self.expr()?;
                self.expect(TokenKind::Semi)?;
                Ok(Raw::new(NodeKind::Let, name, vec![e], start, self.pos))
            }
            Some(TokenKind::If) => self.if_stmt(),
            Some(TokenKind::While) => {
                self.pos += 1;
                self.expect(TokenKind::LParen)?;
                let cond = self.expr()?;
                self.expect(TokenKind::RParen)?;
                let body = self.block()?;
                self.check_height(Raw::new(NodeKind::While, "", vec![cond, body], start, self.pos))
            }
            Some(TokenKind::Return) => {
                self.pos += 1;
                let mut children = Vec::new();
                if self.peek() != Some(TokenKind::Semi) {
                    children.push(self.expr()?);
                }
                self.expect(TokenKind::Semi)?;
                Ok(Raw::new(NodeKind::Return, "", children, start, self.pos))
            }
            Some(TokenKind::Ident) if self.peek_at(1) == Some(TokenKind::Assign) => {
                let name = self.toks[self.pos].text.clone();
                self.pos += 2;
                let e = self.expr()?;
                self.expect(TokenKind::Semi)?;
                Ok(Raw::new(NodeKind::Assign, name, vec![e], start, self.pos))
            }
            Some(TokenKind::Ident) if matches!(self.peek_at(1), Some(TokenKind::PlusAssign | TokenKind::MinusAssign)) => {
                let target = Raw::new(NodeKind::Ident, self.toks[self.pos].text.clone(), vec![], start, start + 1);
                let op = self.toks[self.pos + 1].text.clone();
                self.pos += 2;
                let e = self.expr()?;
                self.expect(TokenKind::Semi)?;
                Ok(Raw::new(NodeKind::CompoundAssign, op, vec![target, e], start, self.pos))
            }
            Some(_) => {
                let e = self.expr()?;
                self.expect(TokenKind::Semi)?;
                Ok(Raw::new(NodeKind::ExprStmt, "", vec![e], start, self.pos))
            }
            None => Err(self.error("statement")),
        }
    }

    fn if_stmt(&mut self) -> PResult<Raw> {
        self.enter()?;
        let start = self.pos;
        self.expect(TokenKind::If)?;
        self.expect(TokenKind::LParen)?;
        let cond = self.expr()?;
        self.expect(TokenKind::RParen)?;
        let then = self.block()?;
        let mut children = vec![cond, then];
        if self.eat(TokenKind::Else) {
            if self.peek() == Some(TokenKind::If) {
                children.push(self.if_stmt()?);
            } else {
                children.push(self.block()?);
            }
        }
        self.leave();
        self.check_height(Raw::new(NodeKind::If, "", children, start, self.pos))
    }

    fn expr(&mut self) -> PResult<Raw> {
        self.binary(1)
    }

    fn binary(&mut self, min_prec: u8) -> PResult<Raw> {
        let mut lhs = self.unary()?;
        while let Some(prec) = self.peek().and_then(binary_prec) {
            if prec < min_prec {
                break;
            }
            let op = self.toks[self.pos].text.clone();
            self.pos += 1;
            let rhs = self.binary(prec + 1)?;
            let start = lhs.tok_start;
            lhs = self.check_height(Raw::new(NodeKind::Binary, op, vec![lhs, rhs], start, self.pos))?;
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> PResult<Raw> {
        if matches!(self.peek(), Some(TokenKind::Minus | TokenKind::Bang)) {
            self.enter()?;
            let start = self.pos;
            let op = self.toks[self.pos].text.clone();
            self.pos += 1;
            let operand = self.unary()?;
            self.leave();
            return self.check_height(Raw::new(NodeKind::Unary, op, vec![operand], start, self.pos));
        }
        self.primary()
    }

    fn primary(&mut self) -> PResult<Raw> {
        let start = self.pos;
        match self.peek() {
            Some(TokenKind::Int) => {
                let t = &self.toks[self.pos];
                if t.text.parse::<i64>().is_err() {
                    return Err(ParseError::new(
                        t.span.start_line,
                        t.span.start_col,
                        "integer literal within 64-bit range",
                        &format!("`{}`", t.text),
                    ));
                }
                self.pos += 1;
                Ok(Raw::new(NodeKind::IntLit, t.text.clone(), vec![], start, self.pos))
            }
            Some(TokenKind::True | TokenKind::False) => {
                let text = self.toks[self.pos].text.clone();
                self.pos += 1;
                Ok(Raw::new(NodeKind::BoolLit, text, vec![], start, self.pos))
            }
            Some(TokenKind::Ident) => {
                let name = self.toks[self.pos].text.clone();
                self.pos += 1;
                if !self.eat(TokenKind::LParen) {
                    return Ok(Raw::new(NodeKind::Ident, name, vec![], start, self.pos));
                }
                let mut args = Vec::new();
                if self.peek() != Some(TokenKind::RParen) {
                    loop {
                        args.push(self.expr()?);
                        if !self.eat(TokenKind::Comma) {
                            break;
                        }
                    }
                }
                self.expect(TokenKind::RParen)?;
                self.check_height(Raw::new(NodeKind::Call, name, args, start, self.pos))
            }
            Some(TokenKind::LParen) => {
                self.enter()?;
                self.pos += 1;
                let mut inner = self.expr()?;
                self.expect(TokenKind::RParen)?;
                self.leave();
                // Parentheses belong to the span of the expression they wrap.
                inner.tok_start = start;
                inner.tok_end = self.pos;
                Ok(inner)
            }
            _ => Err(self.error("expression")),
        }
    }
}

fn flatten(raw: Raw, parent: Option<usize>, toks: &[Token], nodes: &mut Vec<Node>) {
    let id = nodes.len();
    let (first, last) = if raw.tok_end > raw.tok_start {
        (&toks[raw.tok_start], &toks[raw.tok_end - 1])
    } else {
        // Only an empty Program has no tokens.
        let empty = Span {
            start_line: 1,
            start_col: 1,
            end_line: 1,
            end_col: 1,
        };
        nodes.push(Node {
            id,
            kind: raw.kind,
            label: raw.label,
            ty: raw.ty,
            children: vec![],
            parent,
            span: empty,
            bytes: (0, 0),
            toks: (raw.tok_start, raw.tok_end),
        });
        return;
    };
    nodes.push(Node {
        id,
        kind: raw.kind,
        label: raw.label,
        ty: raw.ty,
        children: Vec::with_capacity(raw.children.len()),
        parent,
        span: Span {
            start_line: first.span.start_line,
            start_col: first.span.start_col,
            end_line: last.span.end_line,
            end_col: last.span.end_col,
        },
        bytes: (first.start, last.end),
        toks: (raw.tok_start, raw.tok_end),
    });
    for child in raw.children {
        let cid = nodes.len();
        nodes[id].children.push(cid);
        flatten(child, Some(id), toks, nodes);
    }
}

fn eof_position(src: &str) -> (u32, u32) {
    let line = src.matches('\n').count() as u32 + 1;
    let col = src.rsplit('\n').next().map_or(0, |l| l.chars().count()) as u32 + 1;
    (line, col)
}

/// Parse `src` as the given fragment kind without running program-level
/// checks. Node 0 is the fragment root.
pub fn parse_fragment(src: &str, fragment: Fragment) -> Result<Program, ParseError> {
    let toks = tokenize(src)?;
    let mut p = Parser {
        toks: &toks,
        pos: 0,
        depth: 0,
        eof: eof_position(src),
    };
    let raw = match fragment {
        Fragment::Program => p.program()?,
        Fragment::Statement => p.statement()?,
        Fragment::Expression => p.expr()?,
    };
    if p.pos != toks.len() {
        return Err(p.error("end of input"));
    }
    let mut nodes = Vec::new();
    flatten(raw, None, &toks, &mut nodes);
    Ok(Program { nodes, tokens: toks })
}

/// Parse a complete MiniLang file and check it: unique function names, calls
/// resolve with matching arity and parameter names are distinct. Return
/// values are checked against the declared type at run time.
pub fn parse(src: &str) -> Result<Program, ParseError> {
    let program = parse_fragment(src, Fragment::Program)?;
    check(&program)?;
    Ok(program)
}

fn at(node: &Node, expected: &str, found: &str) -> ParseError {
    ParseError::new(node.span.start_line, node.span.start_col, expected, found)
}

fn check(program: &Program) -> Result<(), ParseError> {
    let mut arity: HashMap<&str, usize> = HashMap::new();
    for f in program.functions() {
        let n = program.params(f.id).count();
        if arity.insert(&f.label, n).is_some() {
            return Err(at(f, "unique function name", &format!("duplicate function `{}`", f.label)));
        }
        let mut seen = Vec::new();
        for p in program.params(f.id) {
            if seen.contains(&&p.label) {
                return Err(at(p, "distinct parameter names", &format!("duplicate parameter `{}`", p.label)));
            }
            seen.push(&p.label);
        }
    }
    for f in program.functions() {
        for id in program.subtree(f.id) {
            let n = &program.nodes[id];
            if n.kind != NodeKind::Call {
                continue;
            }
            match arity.get(n.label.as_str()) {
                None => return Err(at(n, "call to a declared function", &format!("unknown function `{}`", n.label))),
                Some(&a) if a != n.children.len() => {
                    return Err(at(
                        n,
                        &format!("{a} argument(s) to `{}`", n.label),
                        &format!("{} argument(s)", n.children.len()),
                    ))
                }
                _ => {}
            }
        }
    }
    Ok(())
}
