//! Removes prefetches whose pages are already covered by an earlier
//! prefetch of the same loop iteration.

use std::collections::{BTreeMap, BTreeSet};

use crate::ast::*;
use crate::print::expr_str;
use crate::sema::{Class, Conv, Sema, Ty};

pub const PAGE: i64 = 4096;

/// `sum(coef * atom) + constant`, with atoms kept as canonical source text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Linear {
    pub terms: BTreeMap<String, i64>,
    pub constant: i64,
    /// Largest power of two (capped at one page) known to divide the symbolic part.
    pub align: i64,
}

impl Linear {
    fn constant(c: i64) -> Self {
        Linear { terms: BTreeMap::new(), constant: c, align: PAGE }
    }

    fn atom(text: String, align: i64) -> Self {
        Linear { terms: BTreeMap::from([(text, 1)]), constant: 0, align: align.clamp(1, PAGE) }
    }

    fn add(mut self, o: Linear) -> Self {
        for (t, c) in o.terms {
            *self.terms.entry(t).or_insert(0) += c;
        }
        self.terms.retain(|_, c| *c != 0);
        self.constant += o.constant;
        self.align = self.align.min(o.align);
        if self.terms.is_empty() {
            self.align = PAGE;
        }
        self
    }

    fn scale(mut self, k: i64) -> Self {
        if k == 0 {
            return Linear::constant(0);
        }
        for c in self.terms.values_mut() {
            *c *= k;
        }
        self.constant *= k;
        let pow2 = 1i64 << k.unsigned_abs().trailing_zeros().min(12);
        self.align = (self.align * pow2).min(PAGE);
        self
    }
}

/// Alignment guaranteed for values of pointer type: objects of power-of-two
/// sized structs up to a page are placed size-aligned by the allocator.
pub fn pointer_align(sema: &Sema, ty: &Ty) -> i64 {
    match ty {
        Ty::Svm(t) => match &**t {
            Ty::Struct(_) => {
                let size = sema.size_of(t) as i64;
                if size.count_ones() == 1 && size <= PAGE {
                    size
                } else {
                    sema.align_of(t) as i64
                }
            }
            t => sema.align_of(t) as i64,
        },
        _ => 1,
    }
}

pub fn canon(e: &Expr, sema: &Sema) -> Linear {
    let info = sema.info(e);
    if info.conv == Conv::Decay {
        if let Class::SvmPlace(_) = info.class {
            return canon_place(e, sema);
        }
    }
    let opaque = || Linear::atom(expr_str(e), pointer_align(sema, &sema.value_ty(e)));
    if sema.is_svm_load(e) {
        return opaque();
    }
    match &e.kind {
        ExprKind::Int(v) => Linear::constant(*v),
        ExprKind::Binary(op @ (BinOp::Add | BinOp::Sub), a, b) => {
            let sign = if *op == BinOp::Sub { -1 } else { 1 };
            let (ta, tb) = (sema.value_ty(a), sema.value_ty(b));
            let scale_b = ta.pointee().map(|t| sema.size_of(t) as i64).unwrap_or(1);
            let scale_a = tb.pointee().map(|t| sema.size_of(t) as i64).unwrap_or(1);
            canon(a, sema).scale(scale_a).add(canon(b, sema).scale(scale_b * sign))
        }
        ExprKind::Binary(BinOp::Mul, a, b) => match (&a.kind, &b.kind) {
            (ExprKind::Int(k), _) => canon(b, sema).scale(*k),
            (_, ExprKind::Int(k)) => canon(a, sema).scale(*k),
            _ => opaque(),
        },
        ExprKind::Unary(UnOp::Neg, a) => canon(a, sema).scale(-1),
        ExprKind::Unary(UnOp::AddrOf, p) => canon_place(p, sema),
        _ => opaque(),
    }
}

fn canon_place(p: &Expr, sema: &Sema) -> Linear {
    match &p.kind {
        ExprKind::Index(base, idx) => {
            let elem = match &sema.info(p).class {
                Class::SvmPlace(t) => sema.size_of(t) as i64,
                _ => 1,
            };
            let base_lin = if sema.info(base).conv == Conv::AsPlace {
                canon_place(base, sema)
            } else {
                canon(base, sema)
            };
            base_lin.add(canon(idx, sema).scale(elem))
        }
        ExprKind::Field { base, field, arrow } => {
            let (base_lin, sid) = if *arrow {
                let Ty::Svm(t) = sema.value_ty(base) else { unreachable!() };
                let Ty::Struct(sid) = *t else { unreachable!() };
                (canon(base, sema), sid)
            } else {
                let Class::SvmPlace(Ty::Struct(sid)) = sema.info(base).class else { unreachable!() };
                (canon_place(base, sema), sid)
            };
            let off = sema.structs[sid].field(field).map(|f| f.offset).unwrap_or(0) as i64;
            base_lin.add(Linear::constant(off))
        }
        ExprKind::Unary(UnOp::Deref, q) => canon(q, sema),
        _ => Linear::atom(format!("&{}", expr_str(p)), 1),
    }
}

#[derive(Debug, Clone)]
struct Avail {
    addr: Linear,
    len: Result<i64, String>,
    vars: BTreeSet<String>,
}

fn block_of(off: i64, size: i64) -> i64 {
    off.div_euclid(size)
}

/// True when every page touched by `b` is touched by `a`.
fn covers(a: &Avail, b: &Avail) -> bool {
    if a.addr.terms != b.addr.terms {
        return false;
    }
    match (&a.len, &b.len) {
        (Ok(la), Ok(lb)) => {
            let (ca, cb) = (a.addr.constant, b.addr.constant);
            if ca <= cb && cb + lb <= ca + la {
                return true;
            }
            // Both spans inside one aligned block that cannot straddle a page.
            let blk = a.addr.align;
            *la > 0
                && *lb > 0
                && block_of(ca, blk) == block_of(ca + la - 1, blk)
                && block_of(cb, blk) == block_of(cb + lb - 1, blk)
                && block_of(ca, blk) == block_of(cb, blk)
        }
        (Err(x), Err(y)) => x == y && a.addr.constant == b.addr.constant,
        _ => false,
    }
}

pub fn prune(program: &Program, sema: &Sema) -> Program {
    let mut out = program.clone();
    let mut avail = Vec::new();
    out.kernel.body = prune_block(&program.kernel.body, sema, &mut avail);
    out
}

fn assigned_vars(s: &Stmt, sema: &Sema) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    s.walk(&mut |x| match &x.kind {
        StmtKind::Decl { name, .. } => {
            out.insert(name.clone());
        }
        StmtKind::Assign { target, .. } => {
            if let Some(v) = target_root(target, sema) {
                out.insert(v);
            }
        }
        StmtKind::For { var, .. } => {
            out.insert(var.clone());
        }
        StmtKind::Call(e) => {
            if let ExprKind::Call { name, args } = &e.kind {
                if name == "dma_in" || name == "transform" {
                    if let Some(r) = crate::ddg::local_root(&args[0], sema) {
                        out.insert(r.to_string());
                    }
                }
            }
        }
        _ => {}
    });
    out
}

fn target_root(target: &Expr, sema: &Sema) -> Option<String> {
    match &target.kind {
        ExprKind::Var(v) => Some(v.clone()),
        _ => crate::ddg::local_root(target, sema).map(str::to_string),
    }
}

fn prune_block(b: &Block, sema: &Sema, avail: &mut Vec<Avail>) -> Block {
    let mut stmts = Vec::new();
    for s in &b.stmts {
        match &s.kind {
            StmtKind::Call(e) if e.call_name() == Some("prefetch") => {
                let ExprKind::Call { args, .. } = &e.kind else { unreachable!() };
                let len = match args[1].kind {
                    ExprKind::Int(v) => Ok(v),
                    _ => Err(expr_str(&args[1])),
                };
                let mut vars: BTreeSet<String> = args[0].vars().into_iter().map(str::to_string).collect();
                vars.extend(args[1].vars().into_iter().map(str::to_string));
                let cand = Avail { addr: canon(&args[0], sema), len, vars };
                if avail.iter().any(|a| covers(a, &cand)) {
                    continue;
                }
                avail.push(cand);
                stmts.push(s.clone());
            }
            StmtKind::If { cond, then_block, else_block } => {
                let t = prune_block(then_block, sema, &mut avail.clone());
                let e = else_block.as_ref().map(|b| prune_block(b, sema, &mut avail.clone()));
                kill(avail, &assigned_vars(s, sema));
                stmts.push(Stmt { kind: StmtKind::If { cond: cond.clone(), then_block: t, else_block: e }, span: s.span });
            }
            StmtKind::For { kind, var, lo, hi, body } => {
                kill(avail, &assigned_vars(s, sema));
                let body = prune_block(body, sema, &mut Vec::new());
                stmts.push(Stmt {
                    kind: StmtKind::For { kind: *kind, var: var.clone(), lo: lo.clone(), hi: hi.clone(), body },
                    span: s.span,
                });
            }
            StmtKind::Block(inner) => {
                let inner = prune_block(inner, sema, avail);
                stmts.push(Stmt { kind: StmtKind::Block(inner), span: s.span });
            }
            _ => {
                kill(avail, &assigned_vars(s, sema));
                stmts.push(s.clone());
            }
        }
    }
    Block { stmts, span: b.span }
}

fn kill(avail: &mut Vec<Avail>, vars: &BTreeSet<String>) {
    avail.retain(|a| a.vars.is_disjoint(vars));
}
