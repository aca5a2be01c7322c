//! Backward pass: keeps what determines SVM addresses, turns the remaining
//! SVM accesses into prefetches and drops everything else.

use std::collections::BTreeSet;

use crate::ast::*;
use crate::ddg::{local_root, Ddg};
use crate::sema::Sema;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
struct State {
    /// Scalars whose value some retained statement reads.
    needed: BTreeSet<String>,
    /// Scratchpad arrays read later, before being overwritten by a whole-array `dma_in`.
    live: BTreeSet<String>,
    /// Scratchpad arrays referenced anywhere in retained code.
    used: BTreeSet<String>,
}

impl State {
    fn union(&mut self, o: &State) {
        self.needed.extend(o.needed.iter().cloned());
        self.live.extend(o.live.iter().cloned());
        self.used.extend(o.used.iter().cloned());
    }
}

#[derive(Debug, Clone)]
pub struct SliceResult {
    pub body: Block,
    /// Variables (scalars and arrays) whose values feed retained code.
    pub address_vars: BTreeSet<String>,
    /// Statements whose computed values the helper thread discards.
    pub deleted: BTreeSet<Span>,
}

pub fn backward(program: &Program, sema: &Sema, ddg: &Ddg) -> SliceResult {
    let mut s = Slicer { sema, ddg, deleted: BTreeSet::new() };
    let (stmts, state) = s.block(&program.kernel.body.stmts, State::default());
    let mut address_vars = state.needed;
    address_vars.extend(state.used);
    SliceResult {
        body: Block { stmts, span: program.kernel.body.span },
        address_vars,
        deleted: s.deleted,
    }
}

fn mk(kind: ExprKind, span: Span) -> Expr {
    Expr { id: 0, kind, span }
}

pub fn prefetch_stmt(addr: Expr, len: Expr, span: Span) -> Stmt {
    let call = mk(ExprKind::Call { name: "prefetch".into(), args: vec![addr, len] }, span);
    Stmt { kind: StmtKind::Call(call), span }
}

/// Address of an SVM place expression.
pub fn address_of(place: &Expr) -> Expr {
    match &place.kind {
        ExprKind::Unary(UnOp::Deref, p) => (**p).clone(),
        _ => mk(ExprKind::Unary(UnOp::AddrOf, Box::new(place.clone())), place.span),
    }
}

struct Slicer<'a> {
    sema: &'a Sema,
    ddg: &'a Ddg,
    deleted: BTreeSet<Span>,
}

impl Slicer<'_> {
    fn uses(&self, st: &mut State, exprs: &[&Expr]) {
        for e in exprs {
            for v in e.vars() {
                if self.sema.is_local_array_var(v) {
                    st.live.insert(v.to_string());
                    st.used.insert(v.to_string());
                } else {
                    st.needed.insert(v.to_string());
                }
            }
        }
    }

    /// Prefetches for the outermost SVM loads of `e`, in evaluation order.
    fn load_prefetches(&self, e: &Expr, st: &mut State, out: &mut Vec<Stmt>) {
        if self.sema.is_svm_load(e) {
            let addr = address_of(e);
            let size = self.sema.size_of(&self.sema.value_ty(e)) as i64;
            self.uses(st, &[&addr]);
            out.push(prefetch_stmt(addr, mk(ExprKind::Int(size), e.span), e.span));
            return;
        }
        match &e.kind {
            ExprKind::Int(_) | ExprKind::Var(_) => {}
            ExprKind::Binary(_, a, b) | ExprKind::Index(a, b) => {
                self.load_prefetches(a, st, out);
                self.load_prefetches(b, st, out);
            }
            ExprKind::Unary(_, a) => self.load_prefetches(a, st, out),
            ExprKind::Field { base, .. } => self.load_prefetches(base, st, out),
            ExprKind::Call { args, .. } => args.iter().for_each(|a| self.load_prefetches(a, st, out)),
        }
    }

    fn block(&mut self, stmts: &[Stmt], mut st: State) -> (Vec<Stmt>, State) {
        let mut rev: Vec<Stmt> = Vec::new();
        for s in stmts.iter().rev() {
            // Each statement's replacement is produced in forward order.
            let mut repl = Vec::new();
            st = self.stmt(s, st, &mut repl);
            rev.extend(repl.into_iter().rev());
        }
        rev.reverse();
        (rev, st)
    }

    fn drop_value(&mut self, s: &Stmt, exprs: &[&Expr], st: &mut State, out: &mut Vec<Stmt>) {
        let mut pf = Vec::new();
        for e in exprs {
            self.load_prefetches(e, st, &mut pf);
        }
        out.extend(pf);
        self.deleted.insert(s.span);
    }

    /// A definition of scalar `var` by `value`; returns the replacement.
    fn scalar_def(&mut self, s: &Stmt, var: &str, value: &Expr, st: &mut State, out: &mut Vec<Stmt>) {
        if let Some(name) = value.call_name() {
            if name == "dma_in" || name == "dma_out" {
                let keep_handle = st.needed.contains(var);
                let call_stmt = Stmt { kind: StmtKind::Call(value.clone()), span: s.span };
                let mut repl = Vec::new();
                let kept_call = self.call(&call_stmt, value, st, &mut repl, keep_handle);
                if kept_call && keep_handle {
                    out.push(s.clone());
                    return;
                }
                out.extend(repl);
                if keep_handle {
                    // The handle is still waited on; it no longer names a transfer.
                    let mut def = s.clone();
                    match &mut def.kind {
                        StmtKind::Decl { init: Some(v), .. } | StmtKind::Assign { value: v, .. } => {
                            *v = mk(ExprKind::Int(0), v.span)
                        }
                        _ => unreachable!(),
                    }
                    out.push(def);
                }
                return;
            }
        }
        if st.needed.contains(var) {
            self.uses(st, &[value]);
            out.push(s.clone());
        } else {
            self.drop_value(s, &[value], st, out);
        }
    }

    /// Handles an intrinsic call; returns whether the call itself was retained.
    fn call(&mut self, s: &Stmt, e: &Expr, st: &mut State, out: &mut Vec<Stmt>, force: bool) -> bool {
        let ExprKind::Call { name, args } = &e.kind else { unreachable!() };
        match name.as_str() {
            "dma_in" | "transform" => {
                let root = local_root(&args[0], self.sema).map(str::to_string);
                let live = root.as_ref().is_some_and(|r| st.live.contains(r));
                if live || force {
                    let whole = matches!(&args[0].kind, ExprKind::Var(_));
                    if let (Some(r), true, true) = (&root, whole, name == "dma_in") {
                        st.live.remove(r);
                    }
                    let dst_vars: Vec<&str> = args[0].vars().into_iter().filter(|v| Some(*v) != root.as_deref()).collect();
                    for v in dst_vars {
                        if self.sema.is_local_array_var(v) {
                            st.live.insert(v.into());
                            st.used.insert(v.into());
                        } else {
                            st.needed.insert(v.into());
                        }
                    }
                    if let Some(r) = &root {
                        st.used.insert(r.clone());
                    }
                    self.uses(st, &[&args[1], &args[2]]);
                    out.push(s.clone());
                    true
                } else {
                    if name == "dma_in" {
                        self.uses(st, &[&args[1], &args[2]]);
                        out.push(prefetch_stmt(args[1].clone(), args[2].clone(), s.span));
                    } else {
                        let mut pf = Vec::new();
                        for a in args {
                            self.load_prefetches(a, st, &mut pf);
                        }
                        out.extend(pf);
                    }
                    self.deleted.insert(s.span);
                    false
                }
            }
            "dma_out" => {
                self.uses(st, &[&args[0], &args[2]]);
                out.push(prefetch_stmt(args[0].clone(), args[2].clone(), s.span));
                false
            }
            "dma_wait" => {
                let keep = match &args[0].kind {
                    ExprKind::Var(h) => self
                        .ddg
                        .handle_buffers
                        .get(h)
                        .is_some_and(|bufs| bufs.iter().any(|b| st.live.contains(b))),
                    _ => self.ddg.dma_targets.iter().any(|b| st.live.contains(b)),
                };
                if keep {
                    self.uses(st, &[&args[0]]);
                    out.push(s.clone());
                }
                keep
            }
            "dma_barrier" => {
                let keep = self.ddg.dma_targets.iter().any(|b| st.live.contains(b));
                if keep {
                    out.push(s.clone());
                }
                keep
            }
            "prefetch" => {
                self.uses(st, &[&args[0], &args[1]]);
                out.push(s.clone());
                true
            }
            // compute, progress and the id queries have no effect on addresses.
            _ => false,
        }
    }

    fn stmt(&mut self, s: &Stmt, mut st: State, out: &mut Vec<Stmt>) -> State {
        match &s.kind {
            StmtKind::Decl { name, array: Some(_), .. } => {
                st.live.remove(name);
                if st.used.contains(name) {
                    out.push(s.clone());
                }
            }
            StmtKind::Decl { name, init, .. } => match init {
                Some(value) => self.scalar_def(s, name, value, &mut st, out),
                None => {
                    if st.needed.contains(name) {
                        out.push(s.clone());
                    }
                }
            },
            StmtKind::Assign { target, value } => {
                if let ExprKind::Var(v) = &target.kind {
                    self.scalar_def(s, v, value, &mut st, out);
                } else if let Some(root) = local_root(target, self.sema) {
                    if st.live.contains(root) {
                        self.uses(&mut st, &[target, value]);
                        out.push(s.clone());
                    } else {
                        let ExprKind::Index(_, idx) = &target.kind else { unreachable!() };
                        self.drop_value(s, &[value, idx], &mut st, out);
                    }
                } else {
                    // Store to SVM: value loads first, then the stored location.
                    let mut pf = Vec::new();
                    self.load_prefetches(value, &mut st, &mut pf);
                    let addr = address_of(target);
                    let size = self.sema.size_of(&self.sema.value_ty(target)) as i64;
                    self.uses(&mut st, &[&addr]);
                    pf.push(prefetch_stmt(addr, mk(ExprKind::Int(size), s.span), s.span));
                    out.extend(pf);
                }
            }
            StmtKind::Call(e) => {
                self.call(s, e, &mut st, out, false);
            }
            StmtKind::If { cond, then_block, else_block } => {
                let (t, st_t) = self.block(&then_block.stmts, st.clone());
                let (e, st_e) = match else_block {
                    Some(b) => self.block(&b.stmts, st.clone()),
                    None => (Vec::new(), st.clone()),
                };
                let mut merged = st_t;
                merged.union(&st_e);
                st = merged;
                if t.is_empty() && e.is_empty() {
                    self.drop_value(s, &[cond], &mut st, out);
                    self.deleted.remove(&s.span);
                } else {
                    self.uses(&mut st, &[cond]);
                    let then_block = Block { stmts: t, span: then_block.span };
                    let else_block = match else_block {
                        Some(b) if !e.is_empty() => Some(Block { stmts: e, span: b.span }),
                        _ => None,
                    };
                    out.push(Stmt { kind: StmtKind::If { cond: cond.clone(), then_block, else_block }, span: s.span });
                }
            }
            StmtKind::For { kind, var, lo, hi, body } => {
                let mut end = st.clone();
                let saved = self.deleted.clone();
                let head = loop {
                    let (_, head) = self.block(&body.stmts, end.clone());
                    let mut next = st.clone();
                    next.union(&head);
                    if next == end {
                        break head;
                    }
                    end = next;
                };
                self.deleted = saved;
                let (kept, _) = self.block(&body.stmts, end);
                st.union(&head);
                if kept.is_empty() {
                    self.drop_value(s, &[lo, hi], &mut st, out);
                    self.deleted.remove(&s.span);
                } else {
                    self.uses(&mut st, &[lo, hi]);
                    let kind = if *kind == LoopKind::Parallel { LoopKind::Window } else { *kind };
                    out.push(Stmt {
                        kind: StmtKind::For {
                            kind,
                            var: var.clone(),
                            lo: lo.clone(),
                            hi: hi.clone(),
                            body: Block { stmts: kept, span: body.span },
                        },
                        span: s.span,
                    });
                }
            }
            StmtKind::Block(b) => {
                let (kept, inner) = self.block(&b.stmts, st);
                st = inner;
                if !kept.is_empty() {
                    out.push(Stmt { kind: StmtKind::Block(Block { stmts: kept, span: b.span }), span: s.span });
                }
            }
        }
        st
    }
}
