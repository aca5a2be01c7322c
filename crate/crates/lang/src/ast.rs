//! Syntax tree of the kernel DSL.

use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Span {
    pub line: u32,
    pub col: u32,
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

pub type ExprId = u32;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BaseType {
    Int,
    Byte,
    Named(String),
}

/// `base svm* svm* ...`; `svm_depth` counts the pointer levels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TypeExpr {
    pub base: BaseType,
    pub svm_depth: u8,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Program {
    pub structs: Vec<StructDef>,
    pub kernel: Kernel,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StructDef {
    pub name: String,
    pub fields: Vec<FieldDef>,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldDef {
    pub ty: TypeExpr,
    pub name: String,
    pub array: Option<u32>,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Param {
    pub ty: TypeExpr,
    pub name: String,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Kernel {
    pub name: String,
    pub params: Vec<Param>,
    pub body: Block,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub stmts: Vec<Stmt>,
    pub span: Span,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LoopKind {
    Seq,
    Parallel,
    Window,
}

impl LoopKind {
    pub fn keyword(self) -> &'static str {
        match self {
            LoopKind::Seq => "for",
            LoopKind::Parallel => "parallel_for",
            LoopKind::Window => "window_for",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stmt {
    pub kind: StmtKind,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StmtKind {
    Decl { ty: TypeExpr, name: String, array: Option<u32>, init: Option<Expr> },
    Assign { target: Expr, value: Expr },
    Call(Expr),
    If { cond: Expr, then_block: Block, else_block: Option<Block> },
    For { kind: LoopKind, var: String, lo: Expr, hi: Expr, body: Block },
    Block(Block),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Rem,
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
}

impl BinOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Rem => "%",
            BinOp::Lt => "<",
            BinOp::Le => "<=",
            BinOp::Gt => ">",
            BinOp::Ge => ">=",
            BinOp::Eq => "==",
            BinOp::Ne => "!=",
        }
    }

    /// Binding strength; higher binds tighter.
    pub fn precedence(self) -> u8 {
        match self {
            BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge | BinOp::Eq | BinOp::Ne => 1,
            BinOp::Add | BinOp::Sub => 2,
            BinOp::Mul | BinOp::Div | BinOp::Rem => 3,
        }
    }

    pub fn is_comparison(self) -> bool {
        self.precedence() == 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UnOp {
    Neg,
    Deref,
    AddrOf,
}

impl UnOp {
    pub fn symbol(self) -> &'static str {
        match self {
            UnOp::Neg => "-",
            UnOp::Deref => "*",
            UnOp::AddrOf => "&",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Expr {
    pub id: ExprId,
    pub kind: ExprKind,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ExprKind {
    Int(i64),
    Var(String),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    Unary(UnOp, Box<Expr>),
    Index(Box<Expr>, Box<Expr>),
    Field { base: Box<Expr>, field: String, arrow: bool },
    Call { name: String, args: Vec<Expr> },
}

impl Expr {
    /// Visits this expression and every subexpression, parents first.
    pub fn walk<'a>(&'a self, f: &mut dyn FnMut(&'a Expr)) {
        f(self);
        match &self.kind {
            ExprKind::Int(_) | ExprKind::Var(_) => {}
            ExprKind::Binary(_, a, b) | ExprKind::Index(a, b) => {
                a.walk(f);
                b.walk(f);
            }
            ExprKind::Unary(_, a) => a.walk(f),
            ExprKind::Field { base, .. } => base.walk(f),
            ExprKind::Call { args, .. } => args.iter().for_each(|a| a.walk(f)),
        }
    }

    /// Names of all variables referenced anywhere in the expression.
    pub fn vars(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.walk(&mut |e| {
            if let ExprKind::Var(v) = &e.kind {
                out.push(v.as_str());
            }
        });
        out
    }

    pub fn call_name(&self) -> Option<&str> {
        match &self.kind {
            ExprKind::Call { name, .. } => Some(name),
            _ => None,
        }
    }
}

impl Block {
    pub fn walk_stmts<'a>(&'a self, f: &mut dyn FnMut(&'a Stmt)) {
        for s in &self.stmts {
            s.walk(f);
        }
    }
}

impl Stmt {
    pub fn walk<'a>(&'a self, f: &mut dyn FnMut(&'a Stmt)) {
        f(self);
        match &self.kind {
            StmtKind::If { then_block, else_block, .. } => {
                then_block.walk_stmts(f);
                if let Some(b) = else_block {
                    b.walk_stmts(f);
                }
            }
            StmtKind::For { body, .. } | StmtKind::Block(body) => body.walk_stmts(f),
            _ => {}
        }
    }

    /// Expressions directly owned by this statement (not by nested blocks).
    pub fn exprs(&self) -> Vec<&Expr> {
        match &self.kind {
            StmtKind::Decl { init, .. } => init.iter().collect(),
            StmtKind::Assign { target, value } => vec![target, value],
            StmtKind::Call(e) => vec![e],
            StmtKind::If { cond, .. } => vec![cond],
            StmtKind::For { lo, hi, .. } => vec![lo, hi],
            StmtKind::Block(_) => vec![],
        }
    }
}

/// Assigns fresh, sequential ids to every expression of the program.
pub fn renumber(program: &mut Program) {
    fn expr(e: &mut Expr, next: &mut ExprId) {
        e.id = *next;
        *next += 1;
        match &mut e.kind {
            ExprKind::Int(_) | ExprKind::Var(_) => {}
            ExprKind::Binary(_, a, b) | ExprKind::Index(a, b) => {
                expr(a, next);
                expr(b, next);
            }
            ExprKind::Unary(_, a) => expr(a, next),
            ExprKind::Field { base, .. } => expr(base, next),
            ExprKind::Call { args, .. } => args.iter_mut().for_each(|a| expr(a, next)),
        }
    }
    fn block(b: &mut Block, next: &mut ExprId) {
        for s in &mut b.stmts {
            match &mut s.kind {
                StmtKind::Decl { init, .. } => {
                    if let Some(e) = init {
                        expr(e, next)
                    }
                }
                StmtKind::Assign { target, value } => {
                    expr(target, next);
                    expr(value, next);
                }
                StmtKind::Call(e) => expr(e, next),
                StmtKind::If { cond, then_block, else_block } => {
                    expr(cond, next);
                    block(then_block, next);
                    if let Some(b) = else_block {
                        block(b, next);
                    }
                }
                StmtKind::For { lo, hi, body, .. } => {
                    expr(lo, next);
                    expr(hi, next);
                    block(body, next);
                }
                StmtKind::Block(b) => block(b, next),
            }
        }
    }
    let mut next = 0;
    block(&mut program.kernel.body, &mut next);
}

/// One past the largest expression id in the program.
pub fn expr_count(program: &Program) -> usize {
    let mut n = 0;
    program.kernel.body.walk_stmts(&mut |s| {
        for e in s.exprs() {
            e.walk(&mut |x| n = n.max(x.id as usize + 1));
        }
    });
    n
}
