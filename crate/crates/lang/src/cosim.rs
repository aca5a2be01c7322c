//! Oracles that execute a worker kernel and its helper thread side by side.

use std::collections::{BTreeMap, BTreeSet};

use crate::compile::{Checked, Compiled};
use crate::error::ExecError;
use crate::host::{run_now, AccessKind, FunctionalHost, Role, SparseMemory, TraceEntry};
use crate::interp::{Interp, Perturb};
use crate::lower::lower;

fn lowered(c: &Checked) -> Result<crate::lower::Lowered, ExecError> {
    lower(c).map_err(|d| ExecError::new(d.to_string()))
}

/// Runs every worker in turn on `mem` and returns the concatenated trace.
pub fn run_workers(
    program: &Checked,
    mem: &mut SparseMemory,
    args: &[i64],
    workers: i64,
    perturb: Option<Perturb>,
) -> Result<Vec<TraceEntry>, ExecError> {
    let code = lowered(program)?;
    let mut trace = Vec::new();
    for id in 0..workers {
        let host = FunctionalHost::new(mem, Role::Worker { id }, workers);
        let mut interp = Interp::new(&code, host);
        if let Some(p) = &perturb {
            interp = interp.with_perturbation(p.clone());
        }
        run_now(interp.run(args))?;
        trace.extend(interp.host.trace);
    }
    Ok(trace)
}

pub fn run_helper(program: &Checked, mem: &mut SparseMemory, args: &[i64], workers: i64) -> Result<Vec<TraceEntry>, ExecError> {
    let code = lowered(program)?;
    let host = FunctionalHost::new(mem, Role::Helper, workers);
    let mut interp = Interp::new(&code, host);
    run_now(interp.run(args))?;
    Ok(interp.host.trace)
}

pub fn pages_by_iteration(trace: &[TraceEntry]) -> BTreeMap<i64, BTreeSet<u32>> {
    let mut out: BTreeMap<i64, BTreeSet<u32>> = BTreeMap::new();
    for t in trace {
        if let Some(i) = t.iteration {
            out.entry(i).or_default().extend(t.pages());
        }
    }
    out
}

#[derive(Debug, Clone, Default)]
pub struct Coverage {
    pub iterations: usize,
    /// `(iteration, page)` touched by a worker but never by the helper thread.
    pub missing: Vec<(i64, u32)>,
}

impl Coverage {
    pub fn sound(&self) -> bool {
        self.missing.is_empty()
    }
}

/// Checks that, per iteration, the helper thread touches every page the worker touches.
pub fn check_coverage(c: &Compiled, mem: &SparseMemory, args: &[i64], workers: i64) -> Result<Coverage, ExecError> {
    let mut helper_mem = mem.clone();
    let helper = pages_by_iteration(&run_helper(&c.pht, &mut helper_mem, args, workers)?);
    if helper_mem != *mem {
        return Err(ExecError::new("helper thread modified shared memory"));
    }
    let mut worker_mem = mem.clone();
    let worker = pages_by_iteration(&run_workers(&c.wt, &mut worker_mem, args, workers, None)?);
    let empty = BTreeSet::new();
    let mut cov = Coverage { iterations: worker.len(), missing: Vec::new() };
    for (i, pages) in &worker {
        let h = helper.get(i).unwrap_or(&empty);
        cov.missing.extend(pages.difference(h).map(|&p| (*i, p)));
    }
    Ok(cov)
}

fn address_trace(trace: &[TraceEntry]) -> Vec<(AccessKind, u32, u32)> {
    trace.iter().map(|t| (t.kind, t.va, t.len)).collect()
}

/// Perturbs every value the helper thread does not compute and confirms the
/// worker's shared-memory address trace is unchanged.
pub fn check_removal(
    c: &Compiled,
    mem: &SparseMemory,
    args: &[i64],
    workers: i64,
    deltas: &[i64],
) -> Result<Vec<String>, ExecError> {
    let reference = address_trace(&run_workers(&c.source, &mut mem.clone(), args, workers, None)?);
    let mut failures = Vec::new();
    for &delta in deltas {
        let p = Perturb { spans: c.deleted.clone(), delta };
        match run_workers(&c.source, &mut mem.clone(), args, workers, Some(p)) {
            Ok(t) if address_trace(&t) == reference => {}
            Ok(_) => failures.push(format!("delta {delta}: address trace changed")),
            Err(e) => failures.push(format!("delta {delta}: {e}")),
        }
    }
    Ok(failures)
}
