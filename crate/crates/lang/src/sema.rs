//! Name resolution, typing and struct layout.

use std::collections::HashMap;
use std::fmt;

use crate::ast::*;
use crate::error::{Diagnostic, DiagnosticKind};

pub const WORD: u32 = 4;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Ty {
    Int,
    Byte,
    Struct(usize),
    Array(Box<Ty>, u32),
    /// Pointer into shared virtual memory.
    Svm(Box<Ty>),
    /// Address inside the cluster-local scratchpad (only produced by array decay).
    Local(Box<Ty>),
    Void,
}

impl Ty {
    pub fn is_integer(&self) -> bool {
        matches!(self, Ty::Int | Ty::Byte)
    }

    pub fn is_scalar(&self) -> bool {
        matches!(self, Ty::Int | Ty::Byte | Ty::Svm(_))
    }

    pub fn pointee(&self) -> Option<&Ty> {
        match self {
            Ty::Svm(t) | Ty::Local(t) => Some(t),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FieldLayout {
    pub name: String,
    pub ty: Ty,
    pub offset: u32,
}

#[derive(Debug, Clone)]
pub struct StructLayout {
    pub name: String,
    pub fields: Vec<FieldLayout>,
    pub size: u32,
    pub align: u32,
}

impl StructLayout {
    pub fn field(&self, name: &str) -> Option<&FieldLayout> {
        self.fields.iter().find(|f| f.name == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarKind {
    Param,
    Local,
    LoopVar,
}

#[derive(Debug, Clone)]
pub struct VarInfo {
    pub ty: Ty,
    /// Element count for scratchpad arrays.
    pub array: Option<u32>,
    pub kind: VarKind,
    pub span: Span,
}

/// What an expression denotes before any conversion.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Class {
    Value(Ty),
    Var(Ty),
    SvmPlace(Ty),
    LocalPlace(Ty),
    /// A scratchpad array variable; element type.
    LocalArray(Ty),
}

/// How the surrounding context consumes an expression.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Conv {
    /// Used as a location (operand of `&`, base of `.`/`[]` on arrays, assignment target).
    AsPlace,
    /// Read: register read, scratchpad load or SVM load depending on class.
    Read,
    /// Array-to-pointer decay.
    Decay,
    /// Already a value.
    None,
}

#[derive(Debug, Clone)]
pub struct ExprInfo {
    pub class: Class,
    pub conv: Conv,
}

#[derive(Debug, Clone)]
pub struct Sema {
    pub structs: Vec<StructLayout>,
    pub struct_index: HashMap<String, usize>,
    pub vars: HashMap<String, VarInfo>,
    pub exprs: Vec<Option<ExprInfo>>,
    /// Number of `parallel_for` / `window_for` loops.
    pub parallel_loops: usize,
}

pub const INTRINSICS: &[&str] = &[
    "dma_in",
    "dma_out",
    "dma_wait",
    "dma_barrier",
    "compute",
    "transform",
    "wt_id",
    "wt_count",
    "prefetch",
    "progress",
];

impl Sema {
    pub fn size_of(&self, ty: &Ty) -> u32 {
        match ty {
            Ty::Int | Ty::Svm(_) | Ty::Local(_) => WORD,
            Ty::Byte => 1,
            Ty::Struct(i) => self.structs[*i].size,
            Ty::Array(t, n) => self.size_of(t) * n,
            Ty::Void => 0,
        }
    }

    pub fn align_of(&self, ty: &Ty) -> u32 {
        match ty {
            Ty::Byte => 1,
            Ty::Struct(i) => self.structs[*i].align,
            Ty::Array(t, _) => self.align_of(t),
            _ => WORD,
        }
    }

    pub fn info(&self, e: &Expr) -> &ExprInfo {
        self.exprs[e.id as usize].as_ref().expect("expression not checked")
    }

    /// True when evaluating `e` performs a load from SVM.
    pub fn is_svm_load(&self, e: &Expr) -> bool {
        let i = self.info(e);
        i.conv == Conv::Read && matches!(i.class, Class::SvmPlace(_))
    }

    /// Type of the expression after its contextual conversion.
    pub fn value_ty(&self, e: &Expr) -> Ty {
        let i = self.info(e);
        match (&i.class, i.conv) {
            (Class::Value(t), _) | (Class::Var(t), _) => t.clone(),
            (Class::SvmPlace(Ty::Array(t, _)), Conv::Decay) => Ty::Svm(t.clone()),
            (Class::SvmPlace(t), _) => t.clone(),
            (Class::LocalPlace(t), _) => t.clone(),
            (Class::LocalArray(t), _) => Ty::Local(Box::new(t.clone())),
        }
    }

    pub fn ty_name(&self, ty: &Ty) -> String {
        match ty {
            Ty::Int => "int".into(),
            Ty::Byte => "byte".into(),
            Ty::Struct(i) => self.structs[*i].name.clone(),
            Ty::Array(t, n) => format!("{}[{n}]", self.ty_name(t)),
            Ty::Svm(t) => format!("{} svm*", self.ty_name(t)),
            Ty::Local(t) => format!("{} local*", self.ty_name(t)),
            Ty::Void => "void".into(),
        }
    }

    /// Local-array variable referenced (as an array) by `e`, if any.
    pub fn is_local_array_var(&self, name: &str) -> bool {
        self.vars.get(name).is_some_and(|v| v.array.is_some())
    }
}

impl fmt::Display for Ty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

pub fn check(program: &Program) -> Result<Sema, Diagnostic> {
    let mut cx = Checker {
        sema: Sema {
            structs: Vec::new(),
            struct_index: HashMap::new(),
            vars: HashMap::new(),
            exprs: vec![None; expr_count(program)],
            parallel_loops: 0,
        },
        scopes: Vec::new(),
        loop_depth: 0,
        in_parallel: false,
    };
    cx.structs(&program.structs)?;
    cx.scopes.push(Vec::new());
    for p in &program.kernel.params {
        let ty = cx.resolve(&p.ty, p.span)?;
        if ty == Ty::Void || matches!(ty, Ty::Struct(_)) {
            return Err(type_err(p.span, format!("parameter `{}` must have scalar type", p.name)));
        }
        cx.declare(&p.name, VarInfo { ty, array: None, kind: VarKind::Param, span: p.span })?;
    }
    cx.block(&program.kernel.body)?;
    Ok(cx.sema)
}

fn type_err(span: Span, msg: String) -> Diagnostic {
    Diagnostic::new(DiagnosticKind::Type, span, msg)
}

struct Checker {
    sema: Sema,
    scopes: Vec<Vec<String>>,
    loop_depth: usize,
    in_parallel: bool,
}

impl Checker {
    fn structs(&mut self, defs: &[StructDef]) -> Result<(), Diagnostic> {
        for (i, d) in defs.iter().enumerate() {
            if self.sema.struct_index.insert(d.name.clone(), i).is_some() {
                return Err(Diagnostic::new(
                    DiagnosticKind::Scope,
                    d.span,
                    format!("struct `{}` defined twice", d.name),
                ));
            }
        }
        // Fields may only point at structs, so sizes never depend on other structs.
        for d in defs {
            let mut fields = Vec::new();
            let (mut offset, mut align) = (0u32, 1u32);
            for f in &d.fields {
                let mut ty = self.resolve(&f.ty, f.span)?;
                if matches!(ty, Ty::Struct(_) | Ty::Void) {
                    return Err(type_err(f.span, format!("field `{}` must be int, byte or a pointer", f.name)));
                }
                if let Some(n) = f.array {
                    ty = Ty::Array(Box::new(ty), n);
                }
                if fields.iter().any(|x: &FieldLayout| x.name == f.name) {
                    return Err(Diagnostic::new(
                        DiagnosticKind::Scope,
                        f.span,
                        format!("field `{}` declared twice", f.name),
                    ));
                }
                let a = self.sema.align_of(&ty);
                offset = offset.div_ceil(a) * a;
                align = align.max(a);
                fields.push(FieldLayout { name: f.name.clone(), offset, ty: ty.clone() });
                offset += self.sema.size_of(&ty);
            }
            let size = offset.div_ceil(align).max(1) * align;
            self.sema.structs.push(StructLayout { name: d.name.clone(), fields, size, align });
        }
        Ok(())
    }

    fn resolve(&self, t: &TypeExpr, span: Span) -> Result<Ty, Diagnostic> {
        let mut ty = match &t.base {
            BaseType::Int => Ty::Int,
            BaseType::Byte => Ty::Byte,
            BaseType::Named(n) => match self.sema.struct_index.get(n) {
                Some(&i) => Ty::Struct(i),
                None => return Err(Diagnostic::new(DiagnosticKind::Scope, span, format!("unknown type `{n}`"))),
            },
        };
        for _ in 0..t.svm_depth {
            ty = Ty::Svm(Box::new(ty));
        }
        Ok(ty)
    }

    fn visible(&self, name: &str) -> bool {
        self.scopes.iter().any(|s| s.iter().any(|n| n == name))
    }

    fn declare(&mut self, name: &str, info: VarInfo) -> Result<(), Diagnostic> {
        if INTRINSICS.contains(&name) {
            return Err(Diagnostic::new(
                DiagnosticKind::Scope,
                info.span,
                format!("`{name}` is a reserved intrinsic name"),
            ));
        }
        if let Some(prev) = self.sema.vars.get(name) {
            return Err(Diagnostic::new(
                DiagnosticKind::Scope,
                info.span,
                format!("`{name}` already declared at {}", prev.span),
            ));
        }
        self.sema.vars.insert(name.to_string(), info);
        self.scopes.last_mut().unwrap().push(name.to_string());
        Ok(())
    }

    fn block(&mut self, b: &Block) -> Result<(), Diagnostic> {
        self.scopes.push(Vec::new());
        for s in &b.stmts {
            self.stmt(s)?;
        }
        self.scopes.pop();
        Ok(())
    }

    fn stmt(&mut self, s: &Stmt) -> Result<(), Diagnostic> {
        match &s.kind {
            StmtKind::Decl { ty, name, array, init } => {
                let t = self.resolve(ty, s.span)?;
                if !t.is_scalar() {
                    return Err(type_err(s.span, format!("variable `{name}` must have scalar element type")));
                }
                if let Some(e) = init {
                    if array.is_some() {
                        return Err(type_err(e.span, "arrays cannot be initialized".into()));
                    }
                    let vt = self.rvalue(e)?;
                    self.assignable(&t, &vt, e.span)?;
                }
                self.declare(name, VarInfo { ty: t, array: *array, kind: VarKind::Local, span: s.span })?;
            }
            StmtKind::Assign { target, value } => {
                let class = self.expr(target, Conv::AsPlace)?;
                let tt = match class {
                    Class::Var(t) | Class::SvmPlace(t) | Class::LocalPlace(t) if t.is_scalar() => t,
                    _ => return Err(type_err(target.span, "left-hand side is not assignable".into())),
                };
                if let ExprKind::Var(v) = &target.kind {
                    if self.sema.vars[v].kind == VarKind::LoopVar {
                        return Err(type_err(target.span, format!("loop variable `{v}` cannot be assigned")));
                    }
                }
                let vt = self.rvalue(value)?;
                self.assignable(&tt, &vt, value.span)?;
            }
            StmtKind::Call(e) => {
                if !matches!(e.kind, ExprKind::Call { .. }) {
                    return Err(type_err(e.span, "only calls may be used as statements".into()));
                }
                self.rvalue_allow_void(e)?;
            }
            StmtKind::If { cond, then_block, else_block } => {
                let t = self.rvalue(cond)?;
                if !t.is_integer() {
                    return Err(type_err(cond.span, "condition must be an integer".into()));
                }
                self.block(then_block)?;
                if let Some(b) = else_block {
                    self.block(b)?;
                }
            }
            StmtKind::For { kind, var, lo, hi, body } => {
                for e in [lo, hi] {
                    if !self.rvalue(e)?.is_integer() {
                        return Err(type_err(e.span, "loop bounds must be integers".into()));
                    }
                }
                let parallel = *kind != LoopKind::Seq;
                if parallel {
                    if self.loop_depth > 0 {
                        return Err(Diagnostic::new(
                            DiagnosticKind::UnsupportedShape,
                            s.span,
                            format!("`{}` cannot be nested inside another loop", kind.keyword()),
                        ));
                    }
                    self.sema.parallel_loops += 1;
                    if self.sema.parallel_loops > 1 {
                        return Err(Diagnostic::new(
                            DiagnosticKind::UnsupportedShape,
                            s.span,
                            "at most one parallel loop per kernel",
                        ));
                    }
                }
                self.scopes.push(Vec::new());
                self.declare(var, VarInfo { ty: Ty::Int, array: None, kind: VarKind::LoopVar, span: s.span })?;
                self.loop_depth += 1;
                let was = self.in_parallel;
                self.in_parallel |= parallel;
                self.block(body)?;
                self.in_parallel = was;
                self.loop_depth -= 1;
                self.scopes.pop();
            }
            StmtKind::Block(b) => self.block(b)?,
        }
        Ok(())
    }

    fn assignable(&self, to: &Ty, from: &Ty, span: Span) -> Result<(), Diagnostic> {
        let ok = (to.is_integer() && from.is_integer()) || to == from;
        if ok {
            Ok(())
        } else {
            Err(type_err(
                span,
                format!("cannot assign {} to {}", self.sema.ty_name(from), self.sema.ty_name(to)),
            ))
        }
    }

    fn record(&mut self, e: &Expr, class: Class, conv: Conv) {
        self.sema.exprs[e.id as usize] = Some(ExprInfo { class, conv });
    }

    fn rvalue(&mut self, e: &Expr) -> Result<Ty, Diagnostic> {
        let t = self.rvalue_allow_void(e)?;
        if t == Ty::Void {
            return Err(type_err(e.span, "expression has no value".into()));
        }
        Ok(t)
    }

    fn rvalue_allow_void(&mut self, e: &Expr) -> Result<Ty, Diagnostic> {
        self.expr(e, Conv::Read)?;
        Ok(self.sema.value_ty(e))
    }

    /// Checks `e` and records how it is consumed. `want` is `Read` for value
    /// contexts and `AsPlace` for location contexts.
    fn expr(&mut self, e: &Expr, want: Conv) -> Result<Class, Diagnostic> {
        let class = match &e.kind {
            ExprKind::Int(_) => Class::Value(Ty::Int),
            ExprKind::Var(v) => {
                if !self.visible(v) {
                    return Err(Diagnostic::new(
                        DiagnosticKind::Scope,
                        e.span,
                        format!("use of undeclared variable `{v}`"),
                    ));
                }
                let info = &self.sema.vars[v];
                match info.array {
                    Some(_) => Class::LocalArray(info.ty.clone()),
                    None => Class::Var(info.ty.clone()),
                }
            }
            ExprKind::Binary(op, a, b) => {
                let ta = self.rvalue(a)?;
                let tb = self.rvalue(b)?;
                Class::Value(self.binary_ty(*op, &ta, &tb, e.span)?)
            }
            ExprKind::Unary(UnOp::Neg, a) => {
                if !self.rvalue(a)?.is_integer() {
                    return Err(type_err(e.span, "negation needs an integer".into()));
                }
                Class::Value(Ty::Int)
            }
            ExprKind::Unary(UnOp::Deref, a) => match self.rvalue(a)? {
                Ty::Svm(t) => Class::SvmPlace(*t),
                Ty::Local(t) => Class::LocalPlace(*t),
                t => return Err(type_err(e.span, format!("cannot dereference {}", self.sema.ty_name(&t)))),
            },
            ExprKind::Unary(UnOp::AddrOf, a) => match self.expr(a, Conv::AsPlace)? {
                Class::SvmPlace(t) => Class::Value(Ty::Svm(Box::new(t))),
                Class::LocalPlace(t) | Class::LocalArray(t) => Class::Value(Ty::Local(Box::new(t))),
                _ => return Err(type_err(e.span, "operand of `&` is not addressable".into())),
            },
            ExprKind::Index(base, idx) => {
                if !self.rvalue(idx)?.is_integer() {
                    return Err(type_err(idx.span, "index must be an integer".into()));
                }
                self.index_base(base)?
            }
            ExprKind::Field { base, field, arrow } => {
                let sid = if *arrow {
                    match self.rvalue(base)? {
                        Ty::Svm(t) => match *t {
                            Ty::Struct(i) => i,
                            t => return Err(type_err(e.span, format!("`->` on pointer to {}", self.sema.ty_name(&t)))),
                        },
                        t => return Err(type_err(e.span, format!("`->` on {}", self.sema.ty_name(&t)))),
                    }
                } else {
                    match self.expr(base, Conv::AsPlace)? {
                        Class::SvmPlace(Ty::Struct(i)) => i,
                        _ => return Err(type_err(e.span, "`.` needs a struct in shared memory".into())),
                    }
                };
                let layout = &self.sema.structs[sid];
                match layout.field(field) {
                    Some(f) => Class::SvmPlace(f.ty.clone()),
                    None => {
                        return Err(type_err(e.span, format!("struct `{}` has no field `{field}`", layout.name)))
                    }
                }
            }
            ExprKind::Call { name, args } => Class::Value(self.call(name, args, e.span)?),
        };
        let conv = match (&class, want) {
            (Class::Value(_), _) => Conv::None,
            (_, Conv::AsPlace) => Conv::AsPlace,
            (Class::SvmPlace(Ty::Array(..)), _) | (Class::LocalArray(_), _) => Conv::Decay,
            (Class::SvmPlace(t), _) | (Class::LocalPlace(t), _) if !t.is_scalar() => {
                return Err(type_err(e.span, format!("cannot use {} as a value", self.sema.ty_name(t))))
            }
            _ => Conv::Read,
        };
        self.record(e, class.clone(), conv);
        Ok(class)
    }

    fn index_base(&mut self, base: &Expr) -> Result<Class, Diagnostic> {
        // Arrays are indexed in place; pointers are read first.
        let is_array_place = match &base.kind {
            ExprKind::Var(v) => self.sema.vars.get(v).is_some_and(|i| i.array.is_some()),
            ExprKind::Field { .. } | ExprKind::Index(..) | ExprKind::Unary(UnOp::Deref, _) => true,
            _ => false,
        };
        if is_array_place {
            let class = self.expr(base, Conv::AsPlace)?;
            match class {
                Class::SvmPlace(Ty::Array(t, _)) => return Ok(Class::SvmPlace(*t)),
                Class::LocalArray(t) => return Ok(Class::LocalPlace(t)),
                _ => {
                    // Not an array after all: re-check as a pointer value.
                    self.expr(base, Conv::Read)?;
                }
            }
        } else {
            self.expr(base, Conv::Read)?;
        }
        match self.sema.value_ty(base) {
            Ty::Svm(t) if !matches!(*t, Ty::Void) => Ok(Class::SvmPlace(*t)),
            Ty::Local(t) => Ok(Class::LocalPlace(*t)),
            t => Err(type_err(base.span, format!("cannot index {}", self.sema.ty_name(&t)))),
        }
    }

    fn binary_ty(&self, op: BinOp, a: &Ty, b: &Ty, span: Span) -> Result<Ty, Diagnostic> {
        use BinOp::*;
        let ptr = |t: &Ty| matches!(t, Ty::Svm(_) | Ty::Local(_));
        let ok = match op {
            Add if ptr(a) && b.is_integer() => return Ok(a.clone()),
            Add if a.is_integer() && ptr(b) => return Ok(b.clone()),
            Sub if ptr(a) && b.is_integer() => return Ok(a.clone()),
            _ if op.is_comparison() => (a.is_integer() && b.is_integer()) || (ptr(a) && a == b),
            _ => a.is_integer() && b.is_integer(),
        };
        if ok {
            Ok(Ty::Int)
        } else {
            Err(type_err(
                span,
                format!(
                    "operator `{}` not defined for {} and {}",
                    op.symbol(),
                    self.sema.ty_name(a),
                    self.sema.ty_name(b)
                ),
            ))
        }
    }

    fn call(&mut self, name: &str, args: &[Expr], span: Span) -> Result<Ty, Diagnostic> {
        #[derive(Clone, Copy)]
        enum A {
            Int,
            Svm,
            Local,
        }
        let (sig, ret): (&[A], Ty) = match name {
            "dma_in" => (&[A::Local, A::Svm, A::Int], Ty::Int),
            "dma_out" => (&[A::Svm, A::Local, A::Int], Ty::Int),
            "dma_wait" => (&[A::Int], Ty::Void),
            "dma_barrier" => (&[], Ty::Void),
            "compute" => (&[A::Int], Ty::Void),
            "transform" => (&[A::Local, A::Local, A::Int], Ty::Void),
            "wt_id" | "wt_count" => (&[], Ty::Int),
            "prefetch" => (&[A::Svm, A::Int], Ty::Void),
            "progress" => (&[A::Int], Ty::Void),
            _ => {
                return Err(Diagnostic::new(DiagnosticKind::Scope, span, format!("unknown function `{name}`")))
            }
        };
        if (name == "wt_id" || name == "progress") && !self.in_parallel {
            return Err(Diagnostic::new(
                DiagnosticKind::UnsupportedShape,
                span,
                format!("`{name}` is only available inside a parallel loop"),
            ));
        }
        if args.len() != sig.len() {
            return Err(type_err(span, format!("`{name}` takes {} arguments, got {}", sig.len(), args.len())));
        }
        for (a, want) in args.iter().zip(sig) {
            let t = self.rvalue(a)?;
            let ok = match want {
                A::Int => t.is_integer(),
                A::Svm => matches!(t, Ty::Svm(_)),
                A::Local => matches!(t, Ty::Local(_)),
            };
            if !ok {
                return Err(type_err(
                    a.span,
                    format!("unexpected argument of type {} to `{name}`", self.sema.ty_name(&t)),
                ));
            }
        }
        Ok(ret)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::parse;

    fn sema(src: &str) -> Result<Sema, Diagnostic> {
        check(&parse(src).unwrap())
    }

    #[test]
    fn struct_layout_is_naturally_aligned() {
        let s = sema("struct v { byte a; int b; byte c[3]; v svm* n; } kernel k() {}").unwrap();
        let l = &s.structs[0];
        let offs: Vec<u32> = l.fields.iter().map(|f| f.offset).collect();
        assert_eq!(offs, vec![0, 4, 8, 12]);
        assert_eq!(l.size, 16);
    }

    #[test]
    fn use_before_declaration() {
        let err = sema("kernel k() { x = 1; int x; }").unwrap_err();
        assert_eq!(err.kind, DiagnosticKind::Scope);
        assert!(err.message.contains("`x`"));
    }

    #[test]
    fn out_of_scope_use_rejected() {
        assert!(sema("kernel k() { { int x = 1; } int y = x; }").is_err());
    }

    #[test]
    fn svm_loads_are_identified() {
        let p = parse("kernel k(int svm* a, int i) { byte l[4]; int x = a[i] + l[0]; }").unwrap();
        let s = check(&p).unwrap();
        let StmtKind::Decl { init: Some(e), .. } = &p.kernel.body.stmts[1].kind else { panic!() };
        let ExprKind::Binary(_, lhs, rhs) = &e.kind else { panic!() };
        assert!(s.is_svm_load(lhs));
        assert!(!s.is_svm_load(rhs));
    }

    #[test]
    fn intrinsic_signatures_checked() {
        assert!(sema("kernel k(int svm* a) { byte l[4]; dma_in(a, l, 4); }").is_err());
        assert!(sema("kernel k(int svm* a) { byte l[4]; int h = dma_in(l, a, 4); dma_wait(h); }").is_ok());
    }

    #[test]
    fn wt_id_outside_parallel_loop_rejected() {
        let err = sema("kernel k() { int x = wt_id(); }").unwrap_err();
        assert_eq!(err.kind, DiagnosticKind::UnsupportedShape);
    }
}
