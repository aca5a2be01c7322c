//! Helper-thread generation pipeline.

use std::collections::BTreeSet;

use crate::ast::*;
use crate::ddg::{self, Ddg};
use crate::error::{Diagnostic, DiagnosticKind};
use crate::parser::parse;
use crate::print;
use crate::prune::prune;
use crate::sema::{check, Sema};
use crate::slice::backward;

#[derive(Debug, Clone)]
pub struct Checked {
    pub program: Program,
    pub sema: Sema,
}

impl Checked {
    pub fn new(mut program: Program) -> Result<Self, Diagnostic> {
        renumber(&mut program);
        let sema = check(&program)?;
        Ok(Self { program, sema })
    }

    pub fn parse(src: &str) -> Result<Self, Diagnostic> {
        Self::new(parse(src)?)
    }
}

#[derive(Debug, Clone)]
pub struct Compiled {
    /// The kernel as written.
    pub source: Checked,
    /// The kernel with progress reporting inserted.
    pub wt: Checked,
    pub pht: Checked,
    pub ddg: Ddg,
    pub address_vars: BTreeSet<String>,
    /// Spans of worker statements whose values the helper thread never computes.
    pub deleted: BTreeSet<Span>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Emit {
    Ast,
    Ddg,
    Pht,
    Wt,
}

impl Compiled {
    pub fn emit(&self, what: Emit) -> String {
        match what {
            Emit::Ast => print::ast_dump(&self.source.program),
            Emit::Ddg => ddg::dump(&self.source.program.kernel.name, &self.ddg, &self.address_vars),
            Emit::Pht => print::program_str(&self.pht.program),
            Emit::Wt => print::program_str(&self.wt.program),
        }
    }
}

pub fn compile(src: &str) -> Result<Compiled, Diagnostic> {
    compile_checked(Checked::parse(src)?)
}

pub fn compile_checked(source: Checked) -> Result<Compiled, Diagnostic> {
    let mut parallel = 0;
    source.program.kernel.body.walk_stmts(&mut |s| {
        if let StmtKind::For { kind, .. } = &s.kind {
            if *kind != LoopKind::Seq {
                parallel += 1;
            }
        }
    });
    let has_parallel_for = {
        let mut found = false;
        source.program.kernel.body.walk_stmts(&mut |s| {
            found |= matches!(&s.kind, StmtKind::For { kind: LoopKind::Parallel, .. })
        });
        found
    };
    if parallel != 1 || !has_parallel_for {
        return Err(Diagnostic::new(
            DiagnosticKind::UnsupportedShape,
            source.program.kernel.span,
            "kernel must contain exactly one parallel_for loop",
        ));
    }

    let graph = ddg::build(&source.program, &source.sema);
    let sliced = backward(&source.program, &source.sema, &graph);
    let mut pht = source.program.clone();
    pht.kernel.name = format!("{}_pht", source.program.kernel.name);
    pht.kernel.body = sliced.body;
    let pht = Checked::new(pht)?;
    let pruned = prune(&pht.program, &pht.sema);
    // Round-trip through text so the dump is exactly what gets executed.
    let pht = Checked::parse(&print::program_str(&pruned))?;

    let wt = Checked::new(instrument(&source.program))?;
    Ok(Compiled {
        source,
        wt,
        pht,
        ddg: graph,
        address_vars: sliced.address_vars,
        deleted: sliced.deleted,
    })
}

/// Makes the worker publish its loop position at the top of every iteration.
pub fn instrument(program: &Program) -> Program {
    fn block(b: &mut Block) {
        for s in &mut b.stmts {
            match &mut s.kind {
                StmtKind::For { kind: LoopKind::Parallel, var, body, .. } => {
                    let arg = Expr { id: 0, kind: ExprKind::Var(var.clone()), span: s.span };
                    let call = Expr {
                        id: 0,
                        kind: ExprKind::Call { name: "progress".into(), args: vec![arg] },
                        span: s.span,
                    };
                    body.stmts.insert(0, Stmt { kind: StmtKind::Call(call), span: s.span });
                }
                StmtKind::If { then_block, else_block, .. } => {
                    block(then_block);
                    if let Some(b) = else_block {
                        block(b);
                    }
                }
                StmtKind::Block(b) => block(b),
                _ => {}
            }
        }
    }
    let mut p = program.clone();
    block(&mut p.kernel.body);
    p
}
