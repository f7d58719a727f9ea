use std::fmt::Write;

use super::ast::*;

const INDENT: &str = "    ";

/// Canonical source for `program`. Re-parsing the output yields a
/// structurally identical program.
pub fn pretty_print(program: &RuleProgram) -> String {
    let mut out = String::new();
    for &id in program.body() {
        stmt(program, id, 0, &mut out);
    }
    out.truncate(out.trim_end().len());
    out
}

/// One-line rendering of a node: the statement header for compound nodes,
/// the whole statement otherwise. Used for decision rationales.
pub fn node_summary(program: &RuleProgram, id: NodeId) -> String {
    match &program.node(id).kind {
        NodeKind::Conditional { condition, .. } => format!("if {}", expr(condition)),
        NodeKind::Block { .. } => "{ ... }".to_string(),
        NodeKind::Return { value } => format!("return {}", expr(value)),
        NodeKind::MemberLoop { binding, .. } => format!("for {binding} in household"),
        NodeKind::Assignment {
            name,
            value,
            declare,
        } => assignment(name, value, *declare),
    }
}

fn assignment(name: &str, value: &Expr, declare: bool) -> String {
    if declare {
        format!("let {name} = {}", expr(value))
    } else {
        format!("{name} = {}", expr(value))
    }
}

fn pad(depth: usize, out: &mut String) {
    for _ in 0..depth {
        out.push_str(INDENT);
    }
}

fn block_statements(program: &RuleProgram, id: NodeId) -> &[NodeId] {
    match &program.node(id).kind {
        NodeKind::Block { statements } => statements,
        other => unreachable!("branch target is a {}", other.label()),
    }
}

fn stmt(program: &RuleProgram, id: NodeId, depth: usize, out: &mut String) {
    pad(depth, out);
    match &program.node(id).kind {
        NodeKind::Conditional { .. } => conditional(program, id, depth, out),
        NodeKind::Block { statements } => {
            // only reachable for hand-built programs; parsed blocks are always
            // branch targets or loop bodies
            out.push_str("{\n");
            for &s in statements {
                stmt(program, s, depth + 1, out);
            }
            pad(depth, out);
            out.push_str("}\n");
        }
        NodeKind::Return { value } => {
            let _ = writeln!(out, "return {}", expr(value));
        }
        NodeKind::MemberLoop { binding, body } => {
            let _ = writeln!(out, "for {binding} in household {{");
            for &s in block_statements(program, *body) {
                stmt(program, s, depth + 1, out);
            }
            pad(depth, out);
            out.push_str("}\n");
        }
        NodeKind::Assignment {
            name,
            value,
            declare,
        } => {
            out.push_str(&assignment(name, value, *declare));
            out.push('\n');
        }
    }
}

/// Writes `if ... { } else ...` starting at the current column.
fn conditional(program: &RuleProgram, id: NodeId, depth: usize, out: &mut String) {
    let NodeKind::Conditional {
        condition,
        then_branch,
        else_branch,
    } = &program.node(id).kind
    else {
        unreachable!()
    };
    let _ = writeln!(out, "if {} {{", expr(condition));
    for &s in block_statements(program, *then_branch) {
        stmt(program, s, depth + 1, out);
    }
    pad(depth, out);
    out.push('}');
    let else_stmts = block_statements(program, *else_branch);
    match else_stmts {
        [] => out.push('\n'),
        [only] if matches!(program.node(*only).kind, NodeKind::Conditional { .. }) => {
            out.push_str(" else ");
            conditional(program, *only, depth, out);
        }
        _ => {
            out.push_str(" else {\n");
            for &s in else_stmts {
                stmt(program, s, depth + 1, out);
            }
            pad(depth, out);
            out.push_str("}\n");
        }
    }
}

fn precedence(e: &Expr) -> u8 {
    match e {
        Expr::Compare { .. } => 1,
        Expr::Arith {
            op: ArithOp::Add | ArithOp::Sub,
            ..
        } => 2,
        Expr::Arith { .. } => 3,
        Expr::Neg(_) => 4,
        _ => 5,
    }
}

fn wrapped(e: &Expr, parens: bool) -> String {
    if parens {
        format!("({})", expr(e))
    } else {
        expr(e)
    }
}

fn expr(e: &Expr) -> String {
    match e {
        Expr::Literal(l) => literal(l),
        Expr::Lookup(Lookup::Household(k)) => format!("household[{}]", quote(k)),
        Expr::Lookup(Lookup::Member { member, key }) => match member {
            MemberRef::Loop(b) => format!("{b}[{}]", quote(key)),
            MemberRef::Index(i) => format!("members[{i}][{}]", quote(key)),
        },
        Expr::Local(name) => name.clone(),
        Expr::Neg(inner) => format!("-{}", wrapped(inner, precedence(inner) < 4)),
        Expr::Arith { op, lhs, rhs } => {
            let p = precedence(e);
            format!(
                "{} {} {}",
                wrapped(lhs, precedence(lhs) < p),
                op.symbol(),
                wrapped(rhs, precedence(rhs) <= p)
            )
        }
        Expr::Compare { op, lhs, rhs } => format!(
            "{} {} {}",
            wrapped(lhs, precedence(lhs) <= 1),
            op.symbol(),
            wrapped(rhs, precedence(rhs) <= 1)
        ),
    }
}

fn literal(l: &Literal) -> String {
    match l {
        Literal::Int(i) if *i < 0 => format!("({i})"),
        Literal::Int(i) => i.to_string(),
        Literal::Real(r) if *r < 0.0 => format!("({r:?})"),
        Literal::Real(r) => format!("{r:?}"),
        Literal::Bool(b) => b.to_string(),
        Literal::Str(s) => quote(s),
    }
}

fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}
