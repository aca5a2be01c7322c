//! One simulation point: a workload instance on a machine in one mode.

use std::rc::Rc;

use svmsim_lang::compile::Compiled;
use svmsim_lang::lower::{lower, Lowered};

use crate::config::{ConfigError, Mode, ModeKind, Platform};
use crate::engine::{ProcKind, SimError, Time};
use crate::machine::Machine;
use crate::mem::{VirtAddr, PAGE_BYTES};
use crate::pe::{spawn_kernel, Role};
use crate::stats::Stats;
use crate::workloads::{generate, Instance, WorkloadSpec};

/// A workload compiled once and shared by every point of a sweep.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub instance: Instance,
    pub compiled: Compiled,
    pub wt: Lowered,
    pub pht: Lowered,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RunError {
    #[error("configuration error: {0}")]
    Config(#[from] ConfigError),
    #[error("kernel compilation failed: {0}")]
    Compile(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("output check failed: {0}")]
    Output(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
}

pub fn prepare_instance(instance: Instance) -> Result<Prepared, RunError> {
    let compiled = svmsim_lang::compile(&instance.source).map_err(|d| RunError::Compile(d.to_string()))?;
    let wt = lower(&compiled.wt).map_err(|d| RunError::Compile(d.to_string()))?;
    let pht = lower(&compiled.pht).map_err(|d| RunError::Compile(d.to_string()))?;
    Ok(Prepared { instance, compiled, wt, pht })
}

pub fn prepare(spec: &WorkloadSpec, platform: &Platform) -> Result<Prepared, RunError> {
    prepare_instance(generate(spec, platform)?)
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub mode: Mode,
    pub intensity: f64,
    /// Latest worker finish time.
    pub elapsed: Time,
    pub stats: Stats,
    pub digest: u64,
    pub events: u64,
    /// Busy cycles of every process, by name.
    pub busy: Vec<(String, Time)>,
    pub locked_entries: usize,
}

/// Knobs for tests that need to look inside a run.
#[derive(Default)]
pub struct Hooks {
    pub trace_translations: bool,
    pub inject: Option<crate::machine::Injector>,
    pub skip_output_check: bool,
}

pub const DEFAULT_LIMIT: Time = 1 << 40;

pub fn run(prep: &Prepared, platform: &Platform, mode: Mode, intensity: f64) -> Result<Outcome, RunError> {
    run_with(prep, platform, mode, intensity, DEFAULT_LIMIT, Hooks::default())
}

pub fn run_with(prep: &Prepared, platform: &Platform, mode: Mode, intensity: f64, limit: Time, hooks: Hooks) -> Result<Outcome, RunError> {
    platform.validate()?;
    let mode = mode.normalized();
    mode.validate(platform.cluster.pes)?;
    let inst = &prep.instance;
    let m = Machine::new(*platform, mode, inst.space.clone());
    if hooks.trace_translations {
        m.trace_translations();
    }
    *m.inject.borrow_mut() = hooks.inject;
    let result = drive(&m, prep, mode, intensity, limit, hooks.skip_output_check);
    m.sim.shutdown();
    result
}

fn drive(m: &Rc<Machine>, prep: &Prepared, mode: Mode, intensity: f64, limit: Time, skip_check: bool) -> Result<Outcome, RunError> {
    let inst = &prep.instance;
    let args = inst.args(intensity);
    let mut workers = Vec::new();
    if inst.iterations > 0 {
        m.start();
        let wt = Rc::new(prep.wt.clone());
        for k in 0..mode.wt as usize {
            workers.push(spawn_kernel(m, Role::Worker(k), k, wt.clone(), args.clone()));
        }
        if mode.kind == ModeKind::Vdma && mode.pht > 0 {
            let pht = Rc::new(prep.pht.clone());
            for j in 0..mode.pht as usize {
                spawn_kernel(m, Role::Helper(j, mode.pht as usize), mode.wt as usize + j, pht.clone(), args.clone());
            }
        }
    }
    let end = m.sim.run(limit)?;
    let elapsed = workers.iter().filter_map(|&p| m.sim.finished_at(p)).max().unwrap_or(end);
    let stats = m.stats.borrow().clone();
    if let Some(v) = stats.order_violations.first() {
        return Err(RunError::Invariant(v.clone()));
    }
    let locked_entries = m.tlb.borrow().locked_entries();
    if locked_entries > 0 {
        return Err(RunError::Invariant(format!("{locked_entries} TLB entries still locked at the end of the run")));
    }
    if !skip_check {
        inst.check(&|va, buf| read_virtual(m, va, buf)).map_err(RunError::Output)?;
    }
    let busy = (0..m.sim.process_count())
        .filter(|&p| m.sim.kind(p) != ProcKind::Harness)
        .map(|p| (m.sim.name(p), m.sim.busy(p)))
        .collect();
    Ok(Outcome { mode, intensity, elapsed, stats, digest: m.sim.trace_digest(), events: m.sim.events_fired(), busy, locked_entries })
}

/// Reads the machine's DRAM through the page table, without timing.
pub fn read_virtual(m: &Machine, va: u32, out: &mut [u8]) {
    let dram = m.dram.borrow();
    let mut done = 0usize;
    while done < out.len() {
        let a = va + done as u32;
        let chunk = ((PAGE_BYTES - (a & (PAGE_BYTES - 1))) as usize).min(out.len() - done);
        let ppn = m.page_table.walk(a >> 12).unwrap_or_else(|| panic!("unmapped {}", VirtAddr(a)));
        dram.data.read(VirtAddr(a).translate(ppn).0, &mut out[done..done + chunk]);
        done += chunk;
    }
}
