//! Forward pass: versioned data dependency graph of every variable.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write;

use crate::ast::*;
use crate::sema::Sema;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    Param,
    Def,
    Loop,
    /// Merge of versions flowing out of a conditional or loop.
    Phi,
    /// Handle returned by a DMA intrinsic.
    Handle,
    /// Control dependency of a conditional or loop.
    Control,
    /// Address of an SVM access.
    Access,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DdgNode {
    pub var: String,
    pub version: u32,
    pub kind: NodeKind,
    pub deps: BTreeSet<(String, u32)>,
    /// The defining expression itself dereferences SVM.
    pub svm_leaf: bool,
    /// Value derives from SVM data, directly or through other variables.
    pub svm: bool,
    pub span: Span,
}

#[derive(Debug, Clone, Default)]
pub struct Ddg {
    pub nodes: Vec<DdgNode>,
    /// Scratchpad arrays written by the `dma_in` calls whose handles a variable held.
    pub handle_buffers: BTreeMap<String, BTreeSet<String>>,
    /// Every scratchpad array that is a `dma_in` destination.
    pub dma_targets: BTreeSet<String>,
}

impl Ddg {
    /// Latest node for `var` at the end of the program.
    pub fn last(&self, var: &str) -> Option<&DdgNode> {
        self.nodes.iter().rev().find(|n| n.var == var && n.kind != NodeKind::Control && n.kind != NodeKind::Access)
    }

    pub fn versions<'a>(&'a self, var: &'a str) -> impl Iterator<Item = &'a DdgNode> + 'a {
        self.nodes.iter().filter(move |n| n.var == var)
    }
}

/// Root scratchpad array named by a `dma_in`/`transform` destination.
pub fn local_root<'a>(e: &'a Expr, sema: &Sema) -> Option<&'a str> {
    match &e.kind {
        ExprKind::Var(v) if sema.is_local_array_var(v) => Some(v),
        ExprKind::Unary(UnOp::AddrOf, inner) => local_root(inner, sema),
        ExprKind::Index(base, _) => local_root(base, sema),
        ExprKind::Binary(BinOp::Add | BinOp::Sub, a, _) => local_root(a, sema),
        _ => None,
    }
}

pub fn build(program: &Program, sema: &Sema) -> Ddg {
    let mut b = Builder { sema, ddg: Ddg::default(), env: BTreeMap::new(), counters: BTreeMap::new() };
    for p in &program.kernel.params {
        b.def(&p.name, NodeKind::Param, BTreeSet::new(), false, p.span);
    }
    b.block(&program.kernel.body);
    b.ddg
}

struct Builder<'a> {
    sema: &'a Sema,
    ddg: Ddg,
    env: BTreeMap<String, usize>,
    counters: BTreeMap<String, u32>,
}

impl Builder<'_> {
    fn def(&mut self, var: &str, kind: NodeKind, deps: BTreeSet<(String, u32)>, leaf: bool, span: Span) {
        let counter = self.counters.entry(var.to_string()).or_insert(0);
        let version = if kind == NodeKind::Param {
            0
        } else {
            *counter += 1;
            *counter
        };
        let svm = leaf || deps.iter().any(|d| self.is_svm(d));
        self.ddg.nodes.push(DdgNode { var: var.to_string(), version, kind, deps, svm_leaf: leaf, svm, span });
        self.env.insert(var.to_string(), self.ddg.nodes.len() - 1);
    }

    fn pseudo(&mut self, var: String, kind: NodeKind, deps: BTreeSet<(String, u32)>, leaf: bool, span: Span) {
        let svm = leaf || deps.iter().any(|d| self.is_svm(d));
        self.ddg.nodes.push(DdgNode { var, version: 0, kind, deps, svm_leaf: leaf, svm, span });
    }

    fn is_svm(&self, (var, version): &(String, u32)) -> bool {
        self.ddg.nodes.iter().any(|n| &n.var == var && n.version == *version && n.svm)
    }

    fn current(&self, var: &str) -> Option<(String, u32)> {
        self.env.get(var).map(|&i| (var.to_string(), self.ddg.nodes[i].version))
    }

    fn deps(&self, exprs: &[&Expr]) -> BTreeSet<(String, u32)> {
        exprs.iter().flat_map(|e| e.vars()).filter_map(|v| self.current(v)).collect()
    }

    fn has_load(&self, exprs: &[&Expr]) -> bool {
        let mut found = false;
        for e in exprs {
            e.walk(&mut |x| found |= self.sema.is_svm_load(x));
        }
        found
    }

    /// Records SVM accesses performed while evaluating `e`.
    fn accesses(&mut self, e: &Expr) {
        let mut found = Vec::new();
        e.walk(&mut |x| {
            if self.sema.is_svm_load(x) {
                found.push(x);
            }
        });
        for x in found {
            let addr = self.place_address_exprs(x);
            let deps = self.deps(&addr);
            let leaf = self.has_load(&addr);
            self.pseudo(format!("load@{}", x.span), NodeKind::Access, deps, leaf, x.span);
        }
    }

    fn place_address_exprs<'e>(&self, place: &'e Expr) -> Vec<&'e Expr> {
        match &place.kind {
            ExprKind::Index(a, b) => vec![a, b],
            ExprKind::Field { base, .. } | ExprKind::Unary(_, base) => vec![base],
            _ => vec![place],
        }
    }

    fn block(&mut self, b: &Block) {
        for s in &b.stmts {
            self.stmt(s);
        }
    }

    fn call_defs(&mut self, e: &Expr, handle: Option<&str>, span: Span) -> bool {
        let ExprKind::Call { name, args } = &e.kind else { return false };
        for a in args {
            self.accesses(a);
        }
        match name.as_str() {
            "dma_in" => {
                let leafish = self.deps(&[&args[1], &args[2]]);
                let loads = self.has_load(&[&args[1], &args[2]]);
                self.pseudo(format!("span@{span}"), NodeKind::Access, leafish.clone(), loads, span);
                if let Some(root) = local_root(&args[0], self.sema) {
                    let root = root.to_string();
                    let mut deps = leafish;
                    deps.extend(self.deps(&[&args[0]]));
                    self.def(&root, NodeKind::Def, deps, true, span);
                    self.ddg.dma_targets.insert(root.clone());
                    if let Some(h) = handle {
                        let d = self.current(&root).into_iter().collect();
                        self.def(h, NodeKind::Handle, d, false, span);
                        self.ddg.handle_buffers.entry(h.to_string()).or_default().insert(root);
                    }
                }
                true
            }
            "dma_out" => {
                let deps = self.deps(&[&args[0], &args[2]]);
                let loads = self.has_load(&[&args[0], &args[2]]);
                self.pseudo(format!("span@{span}"), NodeKind::Access, deps, loads, span);
                if let Some(h) = handle {
                    let d = self.deps(&[&args[1]]);
                    self.def(h, NodeKind::Handle, d, false, span);
                }
                true
            }
            "transform" => {
                if let Some(root) = local_root(&args[0], self.sema) {
                    let deps = self.deps(&[&args[0], &args[1], &args[2]]);
                    let root = root.to_string();
                    self.def(&root, NodeKind::Def, deps, false, span);
                }
                true
            }
            "prefetch" => {
                let deps = self.deps(&[&args[0], &args[1]]);
                let loads = self.has_load(&[&args[0], &args[1]]);
                self.pseudo(format!("span@{span}"), NodeKind::Access, deps, loads, span);
                true
            }
            _ => false,
        }
    }

    fn stmt(&mut self, s: &Stmt) {
        match &s.kind {
            StmtKind::Decl { name, init, .. } => match init {
                Some(e) if self.call_defs(e, Some(name), s.span) => {}
                Some(e) => {
                    self.accesses(e);
                    let deps = self.deps(&[e]);
                    let leaf = self.has_load(&[e]);
                    self.def(name, NodeKind::Def, deps, leaf, s.span);
                }
                None => self.def(name, NodeKind::Def, BTreeSet::new(), false, s.span),
            },
            StmtKind::Assign { target, value } => {
                if let ExprKind::Var(v) = &target.kind {
                    if !self.call_defs(value, Some(v), s.span) {
                        self.accesses(value);
                        let deps = self.deps(&[value]);
                        let leaf = self.has_load(&[value]);
                        self.def(v, NodeKind::Def, deps, leaf, s.span);
                    }
                    return;
                }
                self.accesses(value);
                self.accesses(target);
                if let Some(root) = local_root(target, self.sema) {
                    let mut deps = self.deps(&[target, value]);
                    deps.extend(self.current(root));
                    let leaf = self.has_load(&[value]);
                    let root = root.to_string();
                    self.def(&root, NodeKind::Def, deps, leaf, s.span);
                } else {
                    let addr = self.place_address_exprs(target);
                    let deps = self.deps(&addr);
                    let leaf = self.has_load(&addr);
                    self.pseudo(format!("store@{}", s.span), NodeKind::Access, deps, leaf, s.span);
                }
            }
            StmtKind::Call(e) => {
                if !self.call_defs(e, None, s.span) {
                    self.accesses(e);
                }
            }
            StmtKind::If { cond, then_block, else_block } => {
                self.accesses(cond);
                let deps = self.deps(&[cond]);
                let leaf = self.has_load(&[cond]);
                self.pseudo(format!("ctl@{}", s.span), NodeKind::Control, deps, leaf, s.span);
                let before = self.env.clone();
                self.block(then_block);
                let after_then = std::mem::replace(&mut self.env, before.clone());
                if let Some(b) = else_block {
                    self.block(b);
                }
                let after_else = std::mem::take(&mut self.env);
                self.env = before;
                self.merge(&[after_then, after_else], s.span);
            }
            StmtKind::For { var, lo, hi, body, .. } => {
                self.accesses(lo);
                self.accesses(hi);
                let deps = self.deps(&[lo, hi]);
                let leaf = self.has_load(&[lo, hi]);
                self.pseudo(format!("ctl@{}", s.span), NodeKind::Control, deps.clone(), leaf, s.span);
                self.def(var, NodeKind::Loop, deps, leaf, s.span);
                let before = self.env.clone();
                self.block(body);
                let after = std::mem::replace(&mut self.env, before.clone());
                self.merge(&[before, after], s.span);
            }
            StmtKind::Block(b) => self.block(b),
        }
    }

    /// Adds a phi version for every variable whose version differs between `envs`.
    fn merge(&mut self, envs: &[BTreeMap<String, usize>], span: Span) {
        let names: BTreeSet<&String> = envs.iter().flat_map(|e| e.keys()).collect();
        for name in names {
            let versions: BTreeSet<usize> = envs.iter().filter_map(|e| e.get(name).copied()).collect();
            if versions.len() > 1 {
                let deps =
                    versions.iter().map(|&i| (name.clone(), self.ddg.nodes[i].version)).collect();
                let name = name.clone();
                self.def(&name, NodeKind::Phi, deps, false, span);
            } else if let Some(&i) = versions.iter().next() {
                self.env.insert(name.clone(), i);
            }
        }
    }
}

/// `var#ver <- {deps} kind flags` per node; `addr` marks variables feeding an SVM address.
pub fn dump(kernel: &str, ddg: &Ddg, address_vars: &BTreeSet<String>) -> String {
    let mut out = format!("ddg {kernel}\n");
    for n in &ddg.nodes {
        let deps: Vec<String> = n.deps.iter().map(|(v, k)| format!("{v}#{k}")).collect();
        let head = match n.kind {
            NodeKind::Control | NodeKind::Access => n.var.clone(),
            _ => format!("{}#{}", n.var, n.version),
        };
        write!(out, "  {head} <- {{{}}}", deps.join(", ")).unwrap();
        let kind = match n.kind {
            NodeKind::Param => "param",
            NodeKind::Def => "def",
            NodeKind::Loop => "loop",
            NodeKind::Phi => "phi",
            NodeKind::Handle => "handle",
            NodeKind::Control => "control",
            NodeKind::Access => "access",
        };
        write!(out, " {kind}").unwrap();
        if n.svm_leaf {
            out.push_str(" svm-leaf");
        }
        if n.svm {
            out.push_str(" svm");
        }
        if matches!(n.kind, NodeKind::Param | NodeKind::Def | NodeKind::Loop | NodeKind::Phi | NodeKind::Handle)
            && address_vars.contains(&n.var)
        {
            out.push_str(" addr");
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{parser::parse, sema::check};

    fn ddg(src: &str) -> Ddg {
        let p = parse(src).unwrap();
        let s = check(&p).unwrap();
        build(&p, &s)
    }

    fn dep_names(n: &DdgNode) -> Vec<&str> {
        n.deps.iter().map(|(v, _)| v.as_str()).collect()
    }

    #[test]
    fn load_is_svm_leaf() {
        let g = ddg("kernel k(int svm* A, int i) { int v = A[i]; }");
        let v = g.last("v").unwrap();
        assert_eq!(dep_names(v), vec!["A", "i"]);
        assert!(v.svm_leaf && v.svm);
    }

    #[test]
    fn svm_taint_flows_through_arithmetic() {
        let g = ddg("kernel k(int svm* A, int i) { int s = 0; int v = A[i]; s = s + v * v; }");
        let s = g.last("s").unwrap();
        assert_eq!(s.version, 2);
        assert_eq!(s.deps, BTreeSet::from([("s".to_string(), 1), ("v".to_string(), 1)]));
        assert!(s.svm && !s.svm_leaf);
    }

    #[test]
    fn reassignment_opens_new_version() {
        let g = ddg("kernel k() { int x = 1; x = x + 1; x = 3; }");
        let versions: Vec<u32> = g.versions("x").map(|n| n.version).collect();
        assert_eq!(versions, vec![1, 2, 3]);
        assert!(g.last("x").unwrap().deps.is_empty());
    }

    #[test]
    fn dma_handles_track_buffers() {
        let g = ddg("kernel k(byte svm* s) { byte b[8]; int h = dma_in(b, s, 8); dma_wait(h); }");
        assert_eq!(g.handle_buffers["h"], BTreeSet::from(["b".to_string()]));
        assert!(g.last("b").unwrap().svm_leaf);
    }

    #[test]
    fn conditional_merges_versions() {
        let g = ddg("kernel k(int a) { int x = 0; if (a < 1) { x = 1; } }");
        let x = g.last("x").unwrap();
        assert_eq!(x.kind, NodeKind::Phi);
        assert_eq!(x.deps.len(), 2);
    }
}
