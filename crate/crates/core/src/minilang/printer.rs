//! Canonical pretty-printer: two-space indentation, one statement per line,
//! a blank line between functions and only the parentheses that precedence
//! requires.

use super::ast::{NodeId, NodeKind, Program, Type};

fn prec(op: &str) -> u8 {
    match op {
        "||" => 1,
        "&&" => 2,
        "==" | "!=" => 3,
        "<" | "<=" | ">" | ">=" => 4,
        "+" | "-" => 5,
        "*" | "/" | "%" => 6,
        _ => 7,
    }
}

struct Printer<'a> {
    p: &'a Program,
    out: String,
}

impl Printer<'_> {
    fn indent(&mut self, level: usize) {
        for _ in 0..level {
            self.out.push_str("  ");
        }
    }

    fn function(&mut self, id: NodeId) {
        let n = self.p.node(id);
        self.out.push_str("fn ");
        self.out.push_str(&n.label);
        self.out.push('(');
        let params: Vec<String> = self
            .p
            .params(id)
            .map(|p| format!("{}: {}", p.label, p.ty.unwrap_or(Type::Int)))
            .collect();
        self.out.push_str(&params.join(", "));
        self.out.push(')');
        match n.ty {
            Some(Type::Unit) | None => {}
            Some(t) => {
                self.out.push_str(" -> ");
                self.out.push_str(&t.to_string());
            }
        }
        self.out.push(' ');
        self.block(self.p.fn_body(id), 0);
        self.out.push('\n');
    }

    fn block(&mut self, id: NodeId, level: usize) {
        self.out.push_str("{\n");
        for &s in &self.p.node(id).children {
            self.statement(s, level + 1);
        }
        self.indent(level);
        self.out.push('}');
    }

    fn statement(&mut self, id: NodeId, level: usize) {
        let n = self.p.node(id);
        self.indent(level);
        match n.kind {
            NodeKind::Let | NodeKind::Assign => {
                if n.kind == NodeKind::Let {
                    self.out.push_str("let ");
                }
                self.out.push_str(&n.label);
                self.out.push_str(" = ");
                let e = self.expr(n.children[0]);
                self.out.push_str(&e);
                self.out.push(';');
            }
            NodeKind::CompoundAssign => {
                let target = self.expr(n.children[0]);
                let value = self.expr(n.children[1]);
                self.out.push_str(&format!("{target} {} {value};", n.label));
            }
            NodeKind::Return => {
                self.out.push_str("return");
                if let Some(&c) = n.children.first() {
                    let e = self.expr(c);
                    self.out.push(' ');
                    self.out.push_str(&e);
                }
                self.out.push(';');
            }
            NodeKind::ExprStmt => {
                let e = self.expr(n.children[0]);
                self.out.push_str(&e);
                self.out.push(';');
            }
            NodeKind::While => {
                let c = self.expr(n.children[0]);
                self.out.push_str(&format!("while ({c}) "));
                self.block(n.children[1], level);
            }
            NodeKind::If => self.if_chain(id, level),
            other => unreachable!("{other:?} is not a statement"),
        }
        self.out.push('\n');
    }

    fn if_chain(&mut self, id: NodeId, level: usize) {
        let n = self.p.node(id);
        let c = self.expr(n.children[0]);
        self.out.push_str(&format!("if ({c}) "));
        self.block(n.children[1], level);
        if let Some(&e) = n.children.get(2) {
            self.out.push_str(" else ");
            if self.p.node(e).kind == NodeKind::If {
                self.if_chain(e, level);
            } else {
                self.block(e, level);
            }
        }
    }

    fn expr(&self, id: NodeId) -> String {
        let n = self.p.node(id);
        match n.kind {
            NodeKind::IntLit | NodeKind::BoolLit | NodeKind::Ident => n.label.clone(),
            NodeKind::Call => {
                let args: Vec<String> = n.children.iter().map(|&c| self.expr(c)).collect();
                format!("{}({})", n.label, args.join(", "))
            }
            NodeKind::Unary => {
                let operand = self.p.node(n.children[0]);
                let inner = self.expr(operand.id);
                if operand.kind == NodeKind::Binary {
                    format!("{}({inner})", n.label)
                } else {
                    format!("{}{inner}", n.label)
                }
            }
            NodeKind::Binary => {
                let me = prec(&n.label);
                let wrap = |child: NodeId, right: bool| {
                    let c = self.p.node(child);
                    let s = self.expr(child);
                    let needs = c.kind == NodeKind::Binary && {
                        let cp = prec(&c.label);
                        cp < me || (right && cp == me)
                    };
                    if needs {
                        format!("({s})")
                    } else {
                        s
                    }
                };
                format!("{} {} {}", wrap(n.children[0], false), n.label, wrap(n.children[1], true))
            }
            other => unreachable!("{other:?} is not an expression"),
        }
    }
}

/// Render a program in canonical layout. An empty program prints as `""`.
pub fn print(program: &Program) -> String {
    let mut pr = Printer {
        p: program,
        out: String::new(),
    };
    for (i, &f) in program.node(Program::ROOT).children.iter().enumerate() {
        if i > 0 {
            pr.out.push('\n');
        }
        pr.function(f);
    }
    pr.out
}

#[cfg(test)]
mod tests {
    use super::super::parse;
    use super::*;

    #[test]
    fn canonical_layout() {
        let p = parse("fn f()->int{return 1;}").unwrap();
        assert_eq!(print(&p), "fn f() -> int {\n  return 1;\n}\n");
    }

    #[test]
    fn empty_program() {
        assert_eq!(print(&parse("").unwrap()), "");
        assert_eq!(print(&parse("  // nothing\n").unwrap()), "");
    }

    #[test]
    fn keeps_required_parentheses() {
        let src = "fn f(a: int, b: int) -> int { return a - (b - 1) * -(a + b); }";
        let printed = print(&parse(src).unwrap());
        assert!(printed.contains("return a - (b - 1) * -(a + b);"), "{printed}");
        assert!(parse(&printed).unwrap().structurally_eq(&parse(src).unwrap()));
    }

    #[test]
    fn golden_statement_forms() {
        let src = "fn g(x: int, b: bool) { let y = x; y += 2; if (b) { g(y, b); } else if (y < 0) { return; } else { } while (y > 0) { y -= 1; } }";
        let expected = "\
fn g(x: int, b: bool) {
  let y = x;
  y += 2;
  if (b) {
    g(y, b);
  } else if (y < 0) {
    return;
  } else {
  }
  while (y > 0) {
    y -= 1;
  }
}
";
        assert_eq!(print(&parse(src).unwrap()), expected);
    }
}
