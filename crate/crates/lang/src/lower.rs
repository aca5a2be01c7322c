//! Lowers a checked program to register/stack code for the interpreter.

use std::collections::HashMap;

use crate::ast::*;
use crate::compile::Checked;
use crate::error::{Diagnostic, DiagnosticKind};
use crate::sema::{Class, Conv, Sema, Ty};

/// One postfix instruction of an expression.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Op {
    Const(i64),
    Reg(u16),
    /// Scratchpad address `frame + offset`.
    Local(u32),
    Bin(BinOp),
    Neg,
    SvmLoad(Access),
    LocalLoad(Access),
    WtId,
    WtCount,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Access {
    pub size: u8,
    pub signed: bool,
}

/// Postfix expression code.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Code(pub Vec<Op>);

impl Code {
    /// Arithmetic instructions, charged as ALU work.
    pub fn alu_ops(&self) -> u64 {
        self.0.iter().filter(|o| matches!(o, Op::Bin(_) | Op::Neg)).count() as u64
    }

    pub fn constant(&self) -> Option<i64> {
        match self.0.as_slice() {
            [Op::Const(v)] => Some(*v),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Narrow {
    I32,
    U8,
    U32,
}

impl Narrow {
    pub fn apply(self, v: i64) -> i64 {
        match self {
            Narrow::I32 => v as i32 as i64,
            Narrow::U8 => v & 0xff,
            Narrow::U32 => v & 0xffff_ffff,
        }
    }

    fn of(ty: &Ty) -> Narrow {
        match ty {
            Ty::Byte => Narrow::U8,
            Ty::Svm(_) | Ty::Local(_) => Narrow::U32,
            _ => Narrow::I32,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DmaDir {
    In,
    Out,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LStmt {
    Set { reg: u16, value: Code, narrow: Narrow, span: Span },
    SvmStore { addr: Code, value: Code, access: Access, span: Span },
    LocalStore { addr: Code, value: Code, access: Access, span: Span },
    /// `dst = dma_*(local, svm, len)`; `local`/`svm` are addresses.
    Dma { dir: DmaDir, local: Code, svm: Code, len: Code, dst: Option<u16>, span: Span },
    DmaWait { handle: Code, span: Span },
    DmaBarrier { span: Span },
    Compute { cycles: Code, span: Span },
    Transform { dst: Code, src: Code, len: Code, span: Span },
    Prefetch { addr: Code, len: Code, span: Span },
    Progress { index: Code, span: Span },
    If { cond: Code, then_body: Vec<LStmt>, else_body: Vec<LStmt>, span: Span },
    For { kind: LoopKind, reg: u16, lo: Code, hi: Code, body: Vec<LStmt>, span: Span },
}

#[derive(Debug, Clone)]
pub struct Lowered {
    pub name: String,
    pub params: Vec<(String, Ty)>,
    pub regs: usize,
    pub frame_bytes: u32,
    pub body: Vec<LStmt>,
    /// Scratchpad offset of every local array.
    pub arrays: HashMap<String, u32>,
}

pub fn lower(checked: &Checked) -> Result<Lowered, Diagnostic> {
    let sema = &checked.sema;
    let program = &checked.program;
    let mut lw = Lowerer { sema, regs: HashMap::new(), arrays: HashMap::new(), frame: 0 };
    let mut params = Vec::new();
    for p in &program.kernel.params {
        lw.reg(&p.name);
        params.push((p.name.clone(), sema.vars[&p.name].ty.clone()));
    }
    // Deterministic register and frame assignment in declaration order.
    let mut names = Vec::new();
    program.kernel.body.walk_stmts(&mut |s| match &s.kind {
        StmtKind::Decl { name, .. } | StmtKind::For { var: name, .. } => names.push(name.clone()),
        _ => {}
    });
    for n in &names {
        let info = &sema.vars[n];
        match info.array {
            Some(len) => {
                let size = sema.size_of(&info.ty) * len;
                lw.frame = lw.frame.div_ceil(8) * 8;
                lw.arrays.insert(n.clone(), lw.frame);
                lw.frame += size;
            }
            None => {
                lw.reg(n);
            }
        }
    }
    let body = lw.block(&program.kernel.body)?;
    Ok(Lowered {
        name: program.kernel.name.clone(),
        params,
        regs: lw.regs.len(),
        frame_bytes: lw.frame.div_ceil(8) * 8,
        body,
        arrays: lw.arrays,
    })
}

struct Lowerer<'a> {
    sema: &'a Sema,
    regs: HashMap<String, u16>,
    arrays: HashMap<String, u32>,
    frame: u32,
}

fn access_of(ty: &Ty, sema: &Sema) -> Access {
    Access { size: sema.size_of(ty) as u8, signed: matches!(ty, Ty::Int) }
}

impl Lowerer<'_> {
    fn reg(&mut self, name: &str) -> u16 {
        let n = self.regs.len() as u16;
        *self.regs.entry(name.to_string()).or_insert(n)
    }

    fn block(&mut self, b: &Block) -> Result<Vec<LStmt>, Diagnostic> {
        let mut out = Vec::new();
        for s in &b.stmts {
            self.stmt(s, &mut out)?;
        }
        Ok(out)
    }

    fn stmt(&mut self, s: &Stmt, out: &mut Vec<LStmt>) -> Result<(), Diagnostic> {
        let span = s.span;
        match &s.kind {
            StmtKind::Decl { array: Some(_), .. } => {}
            StmtKind::Decl { name, init, .. } => {
                let reg = self.regs[name];
                let narrow = Narrow::of(&self.sema.vars[name].ty);
                match init {
                    Some(e) if self.is_dma(e) => out.push(self.dma(e, Some(reg), span)?),
                    Some(e) => out.push(LStmt::Set { reg, value: self.value(e)?, narrow, span }),
                    None => out.push(LStmt::Set { reg, value: Code(vec![Op::Const(0)]), narrow, span }),
                }
            }
            StmtKind::Assign { target, value } => {
                if let ExprKind::Var(v) = &target.kind {
                    let reg = self.regs[v];
                    if self.is_dma(value) {
                        out.push(self.dma(value, Some(reg), span)?);
                    } else {
                        let narrow = Narrow::of(&self.sema.vars[v].ty);
                        out.push(LStmt::Set { reg, value: self.value(value)?, narrow, span });
                    }
                    return Ok(());
                }
                let v = self.value(value)?;
                match &self.sema.info(target).class {
                    Class::SvmPlace(t) => out.push(LStmt::SvmStore {
                        addr: self.place(target)?,
                        value: v,
                        access: access_of(t, self.sema),
                        span,
                    }),
                    Class::LocalPlace(t) => out.push(LStmt::LocalStore {
                        addr: self.place(target)?,
                        value: v,
                        access: access_of(t, self.sema),
                        span,
                    }),
                    _ => unreachable!("checked by sema"),
                }
            }
            StmtKind::Call(e) => out.extend(self.call_stmt(e, span)?),
            StmtKind::If { cond, then_block, else_block } => {
                let cond = self.value(cond)?;
                let then_body = self.block(then_block)?;
                let else_body = match else_block {
                    Some(b) => self.block(b)?,
                    None => Vec::new(),
                };
                out.push(LStmt::If { cond, then_body, else_body, span });
            }
            StmtKind::For { kind, var, lo, hi, body } => {
                let reg = self.regs[var];
                out.push(LStmt::For {
                    kind: *kind,
                    reg,
                    lo: self.value(lo)?,
                    hi: self.value(hi)?,
                    body: self.block(body)?,
                    span,
                });
            }
            StmtKind::Block(b) => out.extend(self.block(b)?),
        }
        Ok(())
    }

    fn is_dma(&self, e: &Expr) -> bool {
        matches!(e.call_name(), Some("dma_in" | "dma_out"))
    }

    fn dma(&mut self, e: &Expr, dst: Option<u16>, span: Span) -> Result<LStmt, Diagnostic> {
        let ExprKind::Call { name, args } = &e.kind else { unreachable!() };
        let (dir, local, svm) = if name == "dma_in" {
            (DmaDir::In, &args[0], &args[1])
        } else {
            (DmaDir::Out, &args[1], &args[0])
        };
        Ok(LStmt::Dma { dir, local: self.value(local)?, svm: self.value(svm)?, len: self.value(&args[2])?, dst, span })
    }

    fn call_stmt(&mut self, e: &Expr, span: Span) -> Result<Option<LStmt>, Diagnostic> {
        let ExprKind::Call { name, args } = &e.kind else { unreachable!() };
        Ok(Some(match name.as_str() {
            "dma_in" | "dma_out" => self.dma(e, None, span)?,
            "dma_wait" => LStmt::DmaWait { handle: self.value(&args[0])?, span },
            "dma_barrier" => LStmt::DmaBarrier { span },
            "compute" => LStmt::Compute { cycles: self.value(&args[0])?, span },
            "transform" => LStmt::Transform {
                dst: self.value(&args[0])?,
                src: self.value(&args[1])?,
                len: self.value(&args[2])?,
                span,
            },
            "prefetch" => LStmt::Prefetch { addr: self.value(&args[0])?, len: self.value(&args[1])?, span },
            "progress" => LStmt::Progress { index: self.value(&args[0])?, span },
            // Pure queries used as statements have no effect.
            _ => return Ok(None),
        }))
    }

    fn value(&mut self, e: &Expr) -> Result<Code, Diagnostic> {
        let mut code = Code::default();
        self.emit(e, &mut code)?;
        Ok(code)
    }

    fn place(&mut self, e: &Expr) -> Result<Code, Diagnostic> {
        let mut code = Code::default();
        self.emit_place(e, &mut code)?;
        Ok(code)
    }

    /// Emits the value of `e` under its recorded conversion.
    fn emit(&mut self, e: &Expr, code: &mut Code) -> Result<(), Diagnostic> {
        let info = self.sema.info(e).clone();
        match (&info.class, info.conv) {
            (Class::Value(_), _) => self.emit_value(e, code),
            (Class::Var(_), _) => {
                let ExprKind::Var(v) = &e.kind else { unreachable!() };
                code.0.push(Op::Reg(self.regs[v]));
                Ok(())
            }
            (Class::SvmPlace(_) | Class::LocalPlace(_) | Class::LocalArray(_), Conv::Decay) => self.emit_place(e, code),
            (Class::SvmPlace(t), _) => {
                self.emit_place(e, code)?;
                code.0.push(Op::SvmLoad(access_of(t, self.sema)));
                Ok(())
            }
            (Class::LocalPlace(t), _) => {
                self.emit_place(e, code)?;
                code.0.push(Op::LocalLoad(access_of(t, self.sema)));
                Ok(())
            }
            (Class::LocalArray(_), _) => self.emit_place(e, code),
        }
    }

    fn emit_value(&mut self, e: &Expr, code: &mut Code) -> Result<(), Diagnostic> {
        match &e.kind {
            ExprKind::Int(v) => code.0.push(Op::Const(*v)),
            ExprKind::Binary(op, a, b) => {
                let (ta, tb) = (self.sema.value_ty(a), self.sema.value_ty(b));
                self.emit(a, code)?;
                if let Some(t) = tb.pointee() {
                    if ta.is_integer() {
                        self.scale(code, self.sema.size_of(t));
                    }
                }
                self.emit(b, code)?;
                if let Some(t) = ta.pointee() {
                    if tb.is_integer() {
                        self.scale(code, self.sema.size_of(t));
                    }
                }
                code.0.push(Op::Bin(*op));
            }
            ExprKind::Unary(UnOp::Neg, a) => {
                self.emit(a, code)?;
                code.0.push(Op::Neg);
            }
            ExprKind::Unary(UnOp::AddrOf, p) => self.emit_place(p, code)?,
            ExprKind::Call { name, .. } => match name.as_str() {
                "wt_id" => code.0.push(Op::WtId),
                "wt_count" => code.0.push(Op::WtCount),
                _ => {
                    return Err(Diagnostic::new(
                        DiagnosticKind::UnsupportedShape,
                        e.span,
                        format!("`{name}` must be a statement or a direct initializer"),
                    ))
                }
            },
            _ => unreachable!("not a value expression: {e:?}"),
        }
        Ok(())
    }

    fn scale(&self, code: &mut Code, size: u32) {
        if size != 1 {
            code.0.push(Op::Const(size as i64));
            code.0.push(Op::Bin(BinOp::Mul));
        }
    }

    /// Emits the address of a place expression.
    fn emit_place(&mut self, e: &Expr, code: &mut Code) -> Result<(), Diagnostic> {
        match &e.kind {
            ExprKind::Var(v) => {
                let off = *self.arrays.get(v).expect("array variable");
                code.0.push(Op::Local(off));
            }
            ExprKind::Index(base, idx) => {
                let elem = match &self.sema.info(e).class {
                    Class::SvmPlace(t) | Class::LocalPlace(t) => self.sema.size_of(t),
                    _ => unreachable!(),
                };
                if self.sema.info(base).conv == Conv::AsPlace {
                    self.emit_place(base, code)?;
                } else {
                    self.emit(base, code)?;
                }
                self.emit(idx, code)?;
                self.scale(code, elem);
                code.0.push(Op::Bin(BinOp::Add));
            }
            ExprKind::Field { base, field, arrow } => {
                let sid = if *arrow {
                    self.emit(base, code)?;
                    match self.sema.value_ty(base) {
                        Ty::Svm(t) => match *t {
                            Ty::Struct(i) => i,
                            _ => unreachable!(),
                        },
                        _ => unreachable!(),
                    }
                } else {
                    self.emit_place(base, code)?;
                    match self.sema.info(base).class {
                        Class::SvmPlace(Ty::Struct(i)) => i,
                        _ => unreachable!(),
                    }
                };
                let off = self.sema.structs[sid].field(field).expect("checked").offset;
                if off != 0 {
                    code.0.push(Op::Const(off as i64));
                    code.0.push(Op::Bin(BinOp::Add));
                }
            }
            ExprKind::Unary(UnOp::Deref, p) => self.emit(p, code)?,
            _ => unreachable!("not a place: {e:?}"),
        }
        Ok(())
    }
}

/// Parameter names of a lowered kernel, for binding arguments by name.
pub fn param_index(l: &Lowered, name: &str) -> Option<usize> {
    l.params.iter().position(|(n, _)| n == name)
}
