//! Executes lowered kernels against a [`Host`] that supplies memory, DMA and time.

use std::collections::BTreeSet;
use std::future::Future;
use std::pin::Pin;

use crate::ast::{BinOp, LoopKind, Span};
use crate::error::ExecError;
use crate::lower::{Access, Code, DmaDir, LStmt, Lowered, Narrow, Op};

/// Machine services used by an executing kernel.
#[allow(async_fn_in_trait)]
pub trait Host {
    async fn svm_load(&mut self, va: u32, size: u8) -> Result<u64, ExecError>;
    async fn svm_store(&mut self, va: u32, size: u8, value: u64) -> Result<(), ExecError>;
    async fn local_load(&mut self, addr: u32, size: u8) -> Result<u64, ExecError>;
    async fn local_store(&mut self, addr: u32, size: u8, value: u64) -> Result<(), ExecError>;
    /// Reserves the kernel's scratchpad frame and returns its base address.
    fn frame(&mut self, bytes: u32) -> Result<u32, ExecError>;
    /// Charges `ops` arithmetic steps.
    async fn alu(&mut self, ops: u64);
    /// Starts a transfer and returns its handle (never 0).
    async fn dma(&mut self, dir: DmaDir, local: u32, va: u32, len: u32) -> Result<i64, ExecError>;
    /// Waits for a transfer; handle 0 is a no-op.
    async fn dma_wait(&mut self, handle: i64) -> Result<(), ExecError>;
    async fn dma_barrier(&mut self) -> Result<(), ExecError>;
    async fn compute(&mut self, cycles: u64);
    async fn transform(&mut self, dst: u32, src: u32, len: u32) -> Result<(), ExecError>;
    async fn prefetch(&mut self, va: u32, len: u32) -> Result<(), ExecError>;
    async fn progress(&mut self, index: i64) -> Result<(), ExecError>;
    fn wt_id(&self) -> i64;
    fn wt_count(&self) -> i64;
    /// First index and stride of this worker's share of `lo..hi`.
    fn parallel_share(&mut self, lo: i64, hi: i64) -> (i64, i64);
    async fn parallel_done(&mut self, lo: i64, hi: i64) -> Result<(), ExecError>;
    /// Next iteration a helper thread should run, or `None` when all workers are covered.
    async fn window_next(&mut self, lo: i64, hi: i64) -> Result<Option<i64>, ExecError>;
    fn begin_iteration(&mut self, _index: i64) {}
    /// Overwrites scratchpad bytes; used only by the removal oracle.
    fn corrupt_local(&mut self, _addr: u32, _len: u32, _delta: i64) {}
}

/// Byte function applied by the `transform` intrinsic.
pub fn transform_byte(b: u8) -> u8 {
    (b ^ 0x5a).wrapping_mul(3).wrapping_add(1)
}

/// Value perturbation for the statements in `spans`.
#[derive(Debug, Clone)]
pub struct Perturb {
    pub spans: BTreeSet<Span>,
    pub delta: i64,
}

pub struct Interp<'p, H> {
    prog: &'p Lowered,
    pub host: H,
    regs: Vec<i64>,
    frame: u32,
    pending_alu: u64,
    perturb: Option<Perturb>,
}

type Flow<'a> = Pin<Box<dyn Future<Output = Result<(), ExecError>> + 'a>>;

const STACK: usize = 32;

impl<'p, H: Host> Interp<'p, H> {
    pub fn new(prog: &'p Lowered, host: H) -> Self {
        Self { prog, host, regs: vec![0; prog.regs], frame: 0, pending_alu: 0, perturb: None }
    }

    pub fn with_perturbation(mut self, p: Perturb) -> Self {
        self.perturb = Some(p);
        self
    }

    pub async fn run(&mut self, args: &[i64]) -> Result<(), ExecError> {
        if args.len() != self.prog.params.len() {
            return Err(ExecError::new(format!(
                "kernel `{}` takes {} arguments, got {}",
                self.prog.name,
                self.prog.params.len(),
                args.len()
            )));
        }
        self.regs[..args.len()].copy_from_slice(args);
        self.frame = self.host.frame(self.prog.frame_bytes)?;
        let prog = self.prog;
        self.block(&prog.body).await?;
        self.flush().await;
        Ok(())
    }

    /// Under perturbation, scratchpad addresses wrap into the frame so a
    /// corrupted index cannot fault before the shared-memory trace diverges.
    fn local_addr(&self, v: i64, len: u32) -> Result<u32, ExecError> {
        if self.perturb.is_none() {
            return addr32(v);
        }
        let room = (self.prog.frame_bytes.saturating_sub(len)).max(1) as i64;
        Ok(self.frame + (v - self.frame as i64).rem_euclid(room) as u32)
    }

    async fn flush(&mut self) {
        if self.pending_alu > 0 {
            let n = std::mem::take(&mut self.pending_alu);
            self.host.alu(n).await;
        }
    }

    async fn eval(&mut self, code: &Code) -> Result<i64, ExecError> {
        let mut stack = [0i64; STACK];
        let mut sp = 0usize;
        self.pending_alu += code.alu_ops();
        for op in &code.0 {
            let v = match *op {
                Op::Const(v) => v,
                Op::Reg(r) => self.regs[r as usize],
                Op::Local(off) => (self.frame + off) as i64,
                Op::WtId => self.host.wt_id(),
                Op::WtCount => self.host.wt_count(),
                Op::Neg => {
                    sp -= 1;
                    stack[sp].wrapping_neg()
                }
                Op::Bin(b) => {
                    sp -= 2;
                    binop(b, stack[sp], stack[sp + 1])?
                }
                Op::SvmLoad(a) => {
                    sp -= 1;
                    let addr = addr32(stack[sp])?;
                    self.flush().await;
                    extend(a, self.host.svm_load(addr, a.size).await?)
                }
                Op::LocalLoad(a) => {
                    sp -= 1;
                    let addr = self.local_addr(stack[sp], a.size as u32)?;
                    self.flush().await;
                    extend(a, self.host.local_load(addr, a.size).await?)
                }
            };
            if sp == STACK {
                return Err(ExecError::new("expression too deep"));
            }
            stack[sp] = v;
            sp += 1;
        }
        debug_assert_eq!(sp, 1);
        Ok(stack[0])
    }

    fn perturbed(&self, span: Span) -> Option<i64> {
        self.perturb.as_ref().filter(|p| p.spans.contains(&span)).map(|p| p.delta)
    }

    fn block<'a>(&'a mut self, stmts: &'a [LStmt]) -> Flow<'a> {
        Box::pin(async move {
            for s in stmts {
                self.stmt(s).await?;
            }
            Ok(())
        })
    }

    async fn stmt(&mut self, s: &LStmt) -> Result<(), ExecError> {
        self.pending_alu += 1;
        match s {
            LStmt::Set { reg, value, narrow, span } => {
                let mut v = self.eval(value).await?;
                if let Some(d) = self.perturbed(*span) {
                    v = v.wrapping_add(d);
                }
                self.regs[*reg as usize] = narrow.apply(v);
            }
            LStmt::SvmStore { addr, value, access, .. } => {
                let v = self.eval(value).await?;
                let a = addr32(self.eval(addr).await?)?;
                self.flush().await;
                self.host.svm_store(a, access.size, truncate(*access, v)).await?;
            }
            LStmt::LocalStore { addr, value, access, span } => {
                let mut v = self.eval(value).await?;
                if let Some(d) = self.perturbed(*span) {
                    v = v.wrapping_add(d);
                }
                let a = self.eval(addr).await?;
                let a = self.local_addr(a, access.size as u32)?;
                self.flush().await;
                self.host.local_store(a, access.size, truncate(*access, v)).await?;
            }
            LStmt::Dma { dir, local, svm, len, dst, span } => {
                let l = self.eval(local).await?;
                let va = addr32(self.eval(svm).await?)?;
                let n = length(self.eval(len).await?)?;
                let l = self.local_addr(l, n)?;
                self.flush().await;
                let h = if n == 0 { 0 } else { self.host.dma(*dir, l, va, n).await? };
                if let Some(r) = dst {
                    self.regs[*r as usize] = h;
                }
                if let (Some(d), DmaDir::In) = (self.perturbed(*span), dir) {
                    self.host.dma_wait(h).await?;
                    self.host.corrupt_local(l, n, d);
                }
            }
            LStmt::DmaWait { handle, .. } => {
                let h = self.eval(handle).await?;
                self.flush().await;
                self.host.dma_wait(h).await?;
            }
            LStmt::DmaBarrier { .. } => {
                self.flush().await;
                self.host.dma_barrier().await?;
            }
            LStmt::Compute { cycles, .. } => {
                let c = self.eval(cycles).await?.max(0) as u64;
                self.flush().await;
                self.host.compute(c).await;
            }
            LStmt::Transform { dst, src, len, span } => {
                let d = self.eval(dst).await?;
                let s = self.eval(src).await?;
                let n = length(self.eval(len).await?)?;
                let (d, s) = (self.local_addr(d, n)?, self.local_addr(s, n)?);
                self.flush().await;
                self.host.transform(d, s, n).await?;
                if let Some(delta) = self.perturbed(*span) {
                    self.host.corrupt_local(d, n, delta);
                }
            }
            LStmt::Prefetch { addr, len, .. } => {
                let a = addr32(self.eval(addr).await?)?;
                let n = length(self.eval(len).await?)?;
                self.flush().await;
                if n > 0 {
                    self.host.prefetch(a, n).await?;
                }
            }
            LStmt::Progress { index, .. } => {
                let i = self.eval(index).await?;
                self.flush().await;
                self.host.progress(i).await?;
            }
            LStmt::If { cond, then_body, else_body, .. } => {
                if self.eval(cond).await? != 0 {
                    self.block(then_body).await?;
                } else {
                    self.block(else_body).await?;
                }
            }
            LStmt::For { kind, reg, lo, hi, body, .. } => {
                let lo = self.eval(lo).await?;
                let hi = self.eval(hi).await?;
                match kind {
                    LoopKind::Seq => {
                        for i in lo..hi {
                            self.regs[*reg as usize] = i;
                            self.pending_alu += 1;
                            self.block(body).await?;
                        }
                    }
                    LoopKind::Parallel => {
                        let (start, step) = self.host.parallel_share(lo, hi);
                        let mut i = start;
                        while i < hi {
                            self.host.begin_iteration(i);
                            self.regs[*reg as usize] = i;
                            self.pending_alu += 1;
                            self.block(body).await?;
                            i += step.max(1);
                        }
                        self.flush().await;
                        self.host.parallel_done(lo, hi).await?;
                    }
                    LoopKind::Window => loop {
                        self.flush().await;
                        let Some(i) = self.host.window_next(lo, hi).await? else { break };
                        self.host.begin_iteration(i);
                        self.regs[*reg as usize] = i;
                        self.block(body).await?;
                    },
                }
            }
        }
        Ok(())
    }
}

fn binop(op: BinOp, a: i64, b: i64) -> Result<i64, ExecError> {
    Ok(match op {
        BinOp::Add => a.wrapping_add(b),
        BinOp::Sub => a.wrapping_sub(b),
        BinOp::Mul => a.wrapping_mul(b),
        BinOp::Div | BinOp::Rem if b == 0 => return Err(ExecError::new("division by zero")),
        BinOp::Div => a.wrapping_div(b),
        BinOp::Rem => a.wrapping_rem(b),
        BinOp::Lt => (a < b) as i64,
        BinOp::Le => (a <= b) as i64,
        BinOp::Gt => (a > b) as i64,
        BinOp::Ge => (a >= b) as i64,
        BinOp::Eq => (a == b) as i64,
        BinOp::Ne => (a != b) as i64,
    })
}

fn addr32(v: i64) -> Result<u32, ExecError> {
    u32::try_from(v).map_err(|_| ExecError::new(format!("address {v:#x} outside the 32-bit space")))
}

fn length(v: i64) -> Result<u32, ExecError> {
    u32::try_from(v).map_err(|_| ExecError::new(format!("invalid length {v}")))
}

fn extend(a: Access, raw: u64) -> i64 {
    match (a.size, a.signed) {
        (1, _) => (raw & 0xff) as i64,
        (4, true) => raw as u32 as i32 as i64,
        _ => (raw & 0xffff_ffff) as i64,
    }
}

fn truncate(a: Access, v: i64) -> u64 {
    match a.size {
        1 => Narrow::U8.apply(v) as u64,
        _ => Narrow::U32.apply(v) as u64,
    }
}
