//! Source pretty-printer and the line-oriented AST dump.

use std::fmt::Write;

use crate::ast::*;

pub fn type_str(ty: &TypeExpr) -> String {
    let mut s = match &ty.base {
        BaseType::Int => "int".to_string(),
        BaseType::Byte => "byte".to_string(),
        BaseType::Named(n) => n.clone(),
    };
    for _ in 0..ty.svm_depth {
        s.push_str(" svm*");
    }
    s
}

fn expr_prec(e: &Expr) -> u8 {
    match &e.kind {
        ExprKind::Binary(op, ..) => op.precedence(),
        ExprKind::Unary(..) => 4,
        _ => 5,
    }
}

pub fn expr_str(e: &Expr) -> String {
    let mut out = String::new();
    write_expr(&mut out, e);
    out
}

fn write_sub(out: &mut String, e: &Expr, parens: bool) {
    if parens {
        out.push('(');
        write_expr(out, e);
        out.push(')');
    } else {
        write_expr(out, e);
    }
}

fn write_expr(out: &mut String, e: &Expr) {
    match &e.kind {
        ExprKind::Int(v) => write!(out, "{v}").unwrap(),
        ExprKind::Var(v) => out.push_str(v),
        ExprKind::Binary(op, a, b) => {
            let p = op.precedence();
            let left_parens = if op.is_comparison() { expr_prec(a) <= p } else { expr_prec(a) < p };
            write_sub(out, a, left_parens);
            write!(out, " {} ", op.symbol()).unwrap();
            write_sub(out, b, expr_prec(b) <= p);
        }
        ExprKind::Unary(op, a) => {
            out.push_str(op.symbol());
            write_sub(out, a, expr_prec(a) < 4);
        }
        ExprKind::Index(a, i) => {
            write_sub(out, a, expr_prec(a) < 5);
            out.push('[');
            write_expr(out, i);
            out.push(']');
        }
        ExprKind::Field { base, field, arrow } => {
            write_sub(out, base, expr_prec(base) < 5);
            out.push_str(if *arrow { "->" } else { "." });
            out.push_str(field);
        }
        ExprKind::Call { name, args } => {
            out.push_str(name);
            out.push('(');
            for (k, a) in args.iter().enumerate() {
                if k > 0 {
                    out.push_str(", ");
                }
                write_expr(out, a);
            }
            out.push(')');
        }
    }
}

fn indent(out: &mut String, depth: usize) {
    for _ in 0..depth {
        out.push_str("    ");
    }
}

fn write_block(out: &mut String, b: &Block, depth: usize) {
    out.push_str("{\n");
    for s in &b.stmts {
        write_stmt(out, s, depth + 1);
    }
    indent(out, depth);
    out.push('}');
}

fn write_stmt(out: &mut String, s: &Stmt, depth: usize) {
    indent(out, depth);
    match &s.kind {
        StmtKind::Decl { ty, name, array, init } => {
            write!(out, "{} {name}", type_str(ty)).unwrap();
            if let Some(n) = array {
                write!(out, "[{n}]").unwrap();
            }
            if let Some(e) = init {
                out.push_str(" = ");
                write_expr(out, e);
            }
            out.push(';');
        }
        StmtKind::Assign { target, value } => {
            write_expr(out, target);
            out.push_str(" = ");
            write_expr(out, value);
            out.push(';');
        }
        StmtKind::Call(e) => {
            write_expr(out, e);
            out.push(';');
        }
        StmtKind::If { cond, then_block, else_block } => {
            out.push_str("if (");
            write_expr(out, cond);
            out.push_str(") ");
            write_block(out, then_block, depth);
            if let Some(b) = else_block {
                out.push_str(" else ");
                write_block(out, b, depth);
            }
        }
        StmtKind::For { kind, var, lo, hi, body } => {
            write!(out, "{} ({var} in ", kind.keyword()).unwrap();
            write_expr(out, lo);
            out.push_str(" .. ");
            write_expr(out, hi);
            out.push_str(") ");
            write_block(out, body, depth);
        }
        StmtKind::Block(b) => write_block(out, b, depth),
    }
    out.push('\n');
}

/// Re-parseable source text for a program.
pub fn program_str(p: &Program) -> String {
    let mut out = String::new();
    for s in &p.structs {
        writeln!(out, "struct {} {{", s.name).unwrap();
        for f in &s.fields {
            write!(out, "    {} {}", type_str(&f.ty), f.name).unwrap();
            if let Some(n) = f.array {
                write!(out, "[{n}]").unwrap();
            }
            out.push_str(";\n");
        }
        out.push_str("}\n\n");
    }
    let k = &p.kernel;
    write!(out, "kernel {}(", k.name).unwrap();
    for (i, prm) in k.params.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        write!(out, "{} {}", type_str(&prm.ty), prm.name).unwrap();
    }
    out.push_str(") ");
    write_block(&mut out, &k.body, 0);
    out.push('\n');
    out
}

/// One node per line, two spaces of indentation per level, `@line:col` spans.
pub fn ast_dump(p: &Program) -> String {
    let mut out = String::new();
    for s in &p.structs {
        writeln!(out, "Struct {} @{}", s.name, s.span).unwrap();
        for f in &s.fields {
            let arr = f.array.map(|n| format!("[{n}]")).unwrap_or_default();
            writeln!(out, "  Field {}: {}{arr} @{}", f.name, type_str(&f.ty), f.span).unwrap();
        }
    }
    let k = &p.kernel;
    writeln!(out, "Kernel {} @{}", k.name, k.span).unwrap();
    for prm in &k.params {
        writeln!(out, "  Param {}: {} @{}", prm.name, type_str(&prm.ty), prm.span).unwrap();
    }
    dump_block(&mut out, &k.body, 1);
    out
}

fn line(out: &mut String, depth: usize, text: &str, span: Span) {
    for _ in 0..depth {
        out.push_str("  ");
    }
    writeln!(out, "{text} @{span}").unwrap();
}

fn dump_block(out: &mut String, b: &Block, depth: usize) {
    line(out, depth, "Block", b.span);
    for s in &b.stmts {
        dump_stmt(out, s, depth + 1);
    }
}

fn dump_stmt(out: &mut String, s: &Stmt, depth: usize) {
    match &s.kind {
        StmtKind::Decl { ty, name, array, init } => {
            let arr = array.map(|n| format!("[{n}]")).unwrap_or_default();
            line(out, depth, &format!("Decl {name}: {}{arr}", type_str(ty)), s.span);
            if let Some(e) = init {
                dump_expr(out, e, depth + 1);
            }
        }
        StmtKind::Assign { target, value } => {
            line(out, depth, "Assign", s.span);
            dump_expr(out, target, depth + 1);
            dump_expr(out, value, depth + 1);
        }
        StmtKind::Call(e) => {
            line(out, depth, "CallStmt", s.span);
            dump_expr(out, e, depth + 1);
        }
        StmtKind::If { cond, then_block, else_block } => {
            line(out, depth, "If", s.span);
            dump_expr(out, cond, depth + 1);
            dump_block(out, then_block, depth + 1);
            if let Some(b) = else_block {
                dump_block(out, b, depth + 1);
            }
        }
        StmtKind::For { kind, var, lo, hi, body } => {
            line(out, depth, &format!("For {} {var}", kind.keyword()), s.span);
            dump_expr(out, lo, depth + 1);
            dump_expr(out, hi, depth + 1);
            dump_block(out, body, depth + 1);
        }
        StmtKind::Block(b) => dump_block(out, b, depth),
    }
}

fn dump_expr(out: &mut String, e: &Expr, depth: usize) {
    let text = match &e.kind {
        ExprKind::Int(v) => format!("Int {v}"),
        ExprKind::Var(v) => format!("Var {v}"),
        ExprKind::Binary(op, ..) => format!("Binary {}", op.symbol()),
        ExprKind::Unary(op, _) => format!("Unary {}", op.symbol()),
        ExprKind::Index(..) => "Index".to_string(),
        ExprKind::Field { field, arrow, .. } => {
            format!("Field {}{field}", if *arrow { "->" } else { "." })
        }
        ExprKind::Call { name, .. } => format!("Call {name}"),
    };
    line(out, depth, &text, e.span);
    match &e.kind {
        ExprKind::Int(_) | ExprKind::Var(_) => {}
        ExprKind::Binary(_, a, b) | ExprKind::Index(a, b) => {
            dump_expr(out, a, depth + 1);
            dump_expr(out, b, depth + 1);
        }
        ExprKind::Unary(_, a) => dump_expr(out, a, depth + 1),
        ExprKind::Field { base, .. } => dump_expr(out, base, depth + 1),
        ExprKind::Call { args, .. } => args.iter().for_each(|a| dump_expr(out, a, depth + 1)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::parse;

    #[test]
    fn minimal_parentheses() {
        let src = "kernel k(int a, int b) { int x = (a - (b - 1)) * (a + b) - -a; int y = (a + 1) / 2 < b; }";
        let text = program_str(&parse(src).unwrap());
        assert!(text.contains("int x = (a - (b - 1)) * (a + b) - -a;"), "{text}");
        assert!(text.contains("int y = (a + 1) / 2 < b;"), "{text}");
    }

    #[test]
    fn printed_source_reparses_identically() {
        let src = "struct s { int a; byte b[8]; }\nkernel k(s svm* p, int n) { byte l[4]; for (i in 0 .. n) { if (p[i].a > 0) { p->b[1] = l[0]; } else { compute(2); } } }";
        let once = program_str(&parse(src).unwrap());
        let twice = program_str(&parse(&once).unwrap());
        assert_eq!(once, twice);
    }
}
