//! Recursive-descent parser producing a [`Program`].

use std::collections::HashSet;

use crate::ast::*;
use crate::error::{Diagnostic, DiagnosticKind};
use crate::lexer::{tokenize, Tok, Token};

pub fn parse(src: &str) -> Result<Program, Diagnostic> {
    let tokens = tokenize(src)?;
    let mut p = Parser { tokens, pos: 0, structs: HashSet::new(), next_id: 0 };
    let mut program = p.program()?;
    renumber(&mut program);
    Ok(program)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    structs: HashSet<String>,
    next_id: ExprId,
}

type PResult<T> = Result<T, Diagnostic>;

impl Parser {
    fn peek(&self) -> &Tok {
        &self.tokens[self.pos].tok
    }

    fn span(&self) -> Span {
        self.tokens[self.pos].span
    }

    fn advance(&mut self) -> Token {
        let t = self.tokens[self.pos].clone();
        if self.pos + 1 < self.tokens.len() {
            self.pos += 1;
        }
        t
    }

    fn error<T>(&self, msg: String) -> PResult<T> {
        Err(Diagnostic::new(DiagnosticKind::Syntax, self.span(), msg))
    }

    fn unexpected<T>(&self, wanted: &str) -> PResult<T> {
        self.error(format!("expected {wanted}, found `{}`", self.peek()))
    }

    fn eat(&mut self, tok: &Tok) -> bool {
        if self.peek() == tok {
            self.advance();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, tok: Tok) -> PResult<Span> {
        if *self.peek() == tok {
            Ok(self.advance().span)
        } else {
            self.unexpected(&format!("`{tok}`"))
        }
    }

    fn ident(&mut self) -> PResult<String> {
        match self.peek().clone() {
            Tok::Ident(s) => {
                self.advance();
                Ok(s)
            }
            _ => self.unexpected("identifier"),
        }
    }

    fn int_lit(&mut self) -> PResult<i64> {
        match *self.peek() {
            Tok::Int(v) => {
                self.advance();
                Ok(v)
            }
            _ => self.unexpected("integer literal"),
        }
    }

    fn mk(&mut self, kind: ExprKind, span: Span) -> Expr {
        let id = self.next_id;
        self.next_id += 1;
        Expr { id, kind, span }
    }

    fn program(&mut self) -> PResult<Program> {
        let mut structs = Vec::new();
        while *self.peek() == Tok::Struct {
            structs.push(self.struct_def()?);
        }
        if *self.peek() != Tok::Kernel {
            return self.unexpected("`struct` or `kernel`");
        }
        let kernel = self.kernel()?;
        if *self.peek() != Tok::Eof {
            return self.unexpected("end of input");
        }
        Ok(Program { structs, kernel })
    }

    fn struct_def(&mut self) -> PResult<StructDef> {
        let span = self.expect(Tok::Struct)?;
        let name = self.ident()?;
        self.structs.insert(name.clone());
        self.expect(Tok::LBrace)?;
        let mut fields = Vec::new();
        while *self.peek() != Tok::RBrace {
            let fspan = self.span();
            let ty = self.type_expr()?;
            let fname = self.ident()?;
            let array = self.array_suffix()?;
            self.expect(Tok::Semi)?;
            fields.push(FieldDef { ty, name: fname, array, span: fspan });
        }
        self.expect(Tok::RBrace)?;
        Ok(StructDef { name, fields, span })
    }

    fn array_suffix(&mut self) -> PResult<Option<u32>> {
        if !self.eat(&Tok::LBracket) {
            return Ok(None);
        }
        let n = self.int_lit()?;
        if n <= 0 || n > u32::MAX as i64 {
            return self.error(format!("array length {n} out of range"));
        }
        self.expect(Tok::RBracket)?;
        Ok(Some(n as u32))
    }

    fn starts_type(&self) -> bool {
        match self.peek() {
            Tok::IntTy | Tok::ByteTy => true,
            Tok::Ident(s) => self.structs.contains(s),
            _ => false,
        }
    }

    fn type_expr(&mut self) -> PResult<TypeExpr> {
        let base = match self.peek().clone() {
            Tok::IntTy => BaseType::Int,
            Tok::ByteTy => BaseType::Byte,
            Tok::Ident(s) if self.structs.contains(&s) => BaseType::Named(s),
            _ => return self.unexpected("type"),
        };
        self.advance();
        let mut svm_depth = 0u8;
        while *self.peek() == Tok::Svm {
            self.advance();
            self.expect(Tok::Star)?;
            svm_depth += 1;
        }
        Ok(TypeExpr { base, svm_depth })
    }

    fn kernel(&mut self) -> PResult<Kernel> {
        let span = self.expect(Tok::Kernel)?;
        let name = self.ident()?;
        self.expect(Tok::LParen)?;
        let mut params = Vec::new();
        if *self.peek() != Tok::RParen {
            loop {
                let pspan = self.span();
                let ty = self.type_expr()?;
                let pname = self.ident()?;
                params.push(Param { ty, name: pname, span: pspan });
                if !self.eat(&Tok::Comma) {
                    break;
                }
            }
        }
        self.expect(Tok::RParen)?;
        let body = self.block()?;
        Ok(Kernel { name, params, body, span })
    }

    fn block(&mut self) -> PResult<Block> {
        let span = self.expect(Tok::LBrace)?;
        let mut stmts = Vec::new();
        while *self.peek() != Tok::RBrace {
            if *self.peek() == Tok::Eof {
                return self.unexpected("`}`");
            }
            stmts.push(self.stmt()?);
        }
        self.expect(Tok::RBrace)?;
        Ok(Block { stmts, span })
    }

    fn stmt(&mut self) -> PResult<Stmt> {
        let span = self.span();
        let kind = match self.peek() {
            Tok::LBrace => StmtKind::Block(self.block()?),
            Tok::If => self.if_stmt()?,
            Tok::For => self.for_stmt(LoopKind::Seq)?,
            Tok::ParallelFor => self.for_stmt(LoopKind::Parallel)?,
            Tok::WindowFor => self.for_stmt(LoopKind::Window)?,
            _ if self.starts_type() => {
                let ty = self.type_expr()?;
                let name = self.ident()?;
                let array = self.array_suffix()?;
                let init = if self.eat(&Tok::Assign) { Some(self.expr()?) } else { None };
                self.expect(Tok::Semi)?;
                StmtKind::Decl { ty, name, array, init }
            }
            _ => {
                let e = self.expr()?;
                if self.eat(&Tok::Assign) {
                    let value = self.expr()?;
                    self.expect(Tok::Semi)?;
                    StmtKind::Assign { target: e, value }
                } else {
                    if !matches!(e.kind, ExprKind::Call { .. }) {
                        return Err(Diagnostic::new(
                            DiagnosticKind::Syntax,
                            e.span,
                            "only calls may be used as statements",
                        ));
                    }
                    self.expect(Tok::Semi)?;
                    StmtKind::Call(e)
                }
            }
        };
        Ok(Stmt { kind, span })
    }

    fn if_stmt(&mut self) -> PResult<StmtKind> {
        self.expect(Tok::If)?;
        self.expect(Tok::LParen)?;
        let cond = self.expr()?;
        self.expect(Tok::RParen)?;
        let then_block = self.block()?;
        let else_block = if self.eat(&Tok::Else) {
            if *self.peek() == Tok::If {
                let span = self.span();
                let nested = self.if_stmt()?;
                Some(Block { stmts: vec![Stmt { kind: nested, span }], span })
            } else {
                Some(self.block()?)
            }
        } else {
            None
        };
        Ok(StmtKind::If { cond, then_block, else_block })
    }

    fn for_stmt(&mut self, kind: LoopKind) -> PResult<StmtKind> {
        self.advance();
        self.expect(Tok::LParen)?;
        let var = self.ident()?;
        self.expect(Tok::In)?;
        let lo = self.expr()?;
        self.expect(Tok::DotDot)?;
        let hi = self.expr()?;
        self.expect(Tok::RParen)?;
        let body = self.block()?;
        Ok(StmtKind::For { kind, var, lo, hi, body })
    }

    fn expr(&mut self) -> PResult<Expr> {
        let lhs = self.binary(2)?;
        let op = match self.peek() {
            Tok::Lt => BinOp::Lt,
            Tok::Le => BinOp::Le,
            Tok::Gt => BinOp::Gt,
            Tok::Ge => BinOp::Ge,
            Tok::EqEq => BinOp::Eq,
            Tok::Ne => BinOp::Ne,
            _ => return Ok(lhs),
        };
        self.advance();
        let rhs = self.binary(2)?;
        if matches!(self.peek(), Tok::Lt | Tok::Le | Tok::Gt | Tok::Ge | Tok::EqEq | Tok::Ne) {
            return self.error("comparisons cannot be chained".into());
        }
        let span = lhs.span;
        Ok(self.mk(ExprKind::Binary(op, Box::new(lhs), Box::new(rhs)), span))
    }

    /// Left-associative binary levels: 2 additive, 3 multiplicative.
    fn binary(&mut self, level: u8) -> PResult<Expr> {
        if level > 3 {
            return self.unary();
        }
        let mut lhs = self.binary(level + 1)?;
        loop {
            let op = match (level, self.peek()) {
                (2, Tok::Plus) => BinOp::Add,
                (2, Tok::Minus) => BinOp::Sub,
                (3, Tok::Star) => BinOp::Mul,
                (3, Tok::Slash) => BinOp::Div,
                (3, Tok::Percent) => BinOp::Rem,
                _ => return Ok(lhs),
            };
            self.advance();
            let rhs = self.binary(level + 1)?;
            let span = lhs.span;
            lhs = self.mk(ExprKind::Binary(op, Box::new(lhs), Box::new(rhs)), span);
        }
    }

    fn unary(&mut self) -> PResult<Expr> {
        let span = self.span();
        let op = match self.peek() {
            Tok::Minus => UnOp::Neg,
            Tok::Star => UnOp::Deref,
            Tok::Amp => UnOp::AddrOf,
            _ => return self.postfix(),
        };
        self.advance();
        let inner = self.unary()?;
        Ok(self.mk(ExprKind::Unary(op, Box::new(inner)), span))
    }

    fn postfix(&mut self) -> PResult<Expr> {
        let mut e = self.primary()?;
        loop {
            let span = e.span;
            match self.peek() {
                Tok::LBracket => {
                    self.advance();
                    let idx = self.expr()?;
                    self.expect(Tok::RBracket)?;
                    e = self.mk(ExprKind::Index(Box::new(e), Box::new(idx)), span);
                }
                Tok::Arrow | Tok::Dot => {
                    let arrow = *self.peek() == Tok::Arrow;
                    self.advance();
                    let field = self.ident()?;
                    e = self.mk(ExprKind::Field { base: Box::new(e), field, arrow }, span);
                }
                _ => return Ok(e),
            }
        }
    }

    fn primary(&mut self) -> PResult<Expr> {
        let span = self.span();
        match self.peek().clone() {
            Tok::Int(v) => {
                self.advance();
                Ok(self.mk(ExprKind::Int(v), span))
            }
            Tok::Ident(name) => {
                self.advance();
                if *self.peek() == Tok::LParen {
                    self.advance();
                    let mut args = Vec::new();
                    if *self.peek() != Tok::RParen {
                        loop {
                            args.push(self.expr()?);
                            if !self.eat(&Tok::Comma) {
                                break;
                            }
                        }
                    }
                    self.expect(Tok::RParen)?;
                    Ok(self.mk(ExprKind::Call { name, args }, span))
                } else {
                    Ok(self.mk(ExprKind::Var(name), span))
                }
            }
            Tok::LParen => {
                self.advance();
                let e = self.expr()?;
                self.expect(Tok::RParen)?;
                Ok(e)
            }
            _ => self.unexpected("expression"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_kernel() {
        let p = parse("kernel k() {}").unwrap();
        assert!(p.kernel.body.stmts.is_empty());
        assert!(p.structs.is_empty());
    }

    #[test]
    fn precedence() {
        let p = parse("kernel k() { int x = 1 + 2 * 3 - 4; }").unwrap();
        let StmtKind::Decl { init: Some(e), .. } = &p.kernel.body.stmts[0].kind else { panic!() };
        let ExprKind::Binary(BinOp::Sub, lhs, _) = &e.kind else { panic!("{e:?}") };
        assert!(matches!(lhs.kind, ExprKind::Binary(BinOp::Add, _, _)));
    }

    #[test]
    fn malformed_token_named() {
        let err = parse("kernel k() { int x = ; }").unwrap_err();
        assert_eq!(err.kind, DiagnosticKind::Syntax);
        assert!(err.message.contains("`;`"), "{}", err.message);
        assert_eq!((err.span.line, err.span.col), (1, 22));
    }

    #[test]
    fn else_if_desugars_to_block() {
        let p = parse("kernel k(int a) { if (a < 1) { } else if (a < 2) { } else { } }").unwrap();
        let StmtKind::If { else_block: Some(b), .. } = &p.kernel.body.stmts[0].kind else { panic!() };
        assert_eq!(b.stmts.len(), 1);
        assert!(matches!(b.stmts[0].kind, StmtKind::If { .. }));
    }

    #[test]
    fn chained_comparison_rejected() {
        assert!(parse("kernel k(int a) { int b = a < 1 < 2; }").is_err());
    }
}
