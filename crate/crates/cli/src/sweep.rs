//! Sweep orchestration and the metrics file.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;
use svmsim_core::config::{Mode, ModeKind};
use svmsim_core::run::{prepare, run_with, Hooks, Outcome, Prepared, RunError};

use crate::config::{RunConfig, Workload};

pub const SCHEMA: &str = "# svmsim-metrics v1";

/// One CSV row; field order is the column order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRow {
    pub config_hash: String,
    pub workload: &'static str,
    pub mode: &'static str,
    /// `wt/pht/mht`.
    pub config: String,
    pub wt: u32,
    pub pht: u32,
    pub mht: u32,
    pub intensity: f64,
    pub elapsed_cycles: u64,
    /// Ideal-IOMMU run with the same number of workers.
    pub ideal_cycles: u64,
    pub relative_performance: f64,
    /// Best relative performance of any non-ideal mode at this point.
    pub optimum: f64,
    pub misses: u64,
    pub walks: u64,
    pub dedup_hits: u64,
    pub map_check_hits: u64,
    pub prefetch_hits: u64,
    pub prefetch_misses: u64,
    pub dma_drain_stall_cycles: u64,
}

impl MetricsRow {
    pub fn mode(&self) -> Mode {
        format!("{}:{}", self.mode, self.config).parse().expect("row holds a valid mode")
    }
}

#[derive(Debug)]
pub struct PointFailure {
    pub workload: Workload,
    pub mode: Mode,
    pub intensity: f64,
    pub error: RunError,
}

#[derive(Debug, Default)]
pub struct SweepResult {
    pub rows: Vec<MetricsRow>,
    pub failures: Vec<PointFailure>,
}

#[derive(Debug, thiserror::Error)]
#[error("preparing {workload}: {error}")]
pub struct PrepareError {
    pub workload: &'static str,
    pub error: RunError,
}

fn relative(ideal: u64, elapsed: u64) -> f64 {
    if elapsed == 0 {
        1.0
    } else {
        ideal as f64 / elapsed as f64
    }
}

/// Runs every requested (workload, mode, intensity) point plus the ideal
/// baselines they are normalized against.
pub fn simulate(cfg: &RunConfig) -> Result<SweepResult, PrepareError> {
    let platform = cfg.platform();
    let hash = cfg.hash();
    let s = &cfg.sweep;
    let mut result = SweepResult::default();
    for &w in &s.workloads {
        let prep = prepare(&cfg.workload(w), &platform).map_err(|error| PrepareError { workload: w.name(), error })?;
        let mut modes: Vec<Mode> = s.modes.iter().map(|m| m.normalized()).collect();
        modes.sort();
        modes.dedup();
        let mut jobs: Vec<Mode> = modes.iter().map(|m| Mode::ideal(m.wt)).chain(modes.iter().copied()).collect();
        jobs.sort();
        jobs.dedup();
        let points: Vec<(Mode, usize)> = jobs.iter().flat_map(|&m| (0..s.intensities.len()).map(move |i| (m, i))).collect();
        let outcomes: Vec<((Mode, usize), Result<Outcome, RunError>)> = points
            .par_iter()
            .map(|&(m, i)| ((m, i), run_one(&prep, cfg, m, s.intensities[i])))
            .collect();
        let mut done = BTreeMap::new();
        for ((m, i), r) in outcomes {
            match r {
                Ok(o) => {
                    done.insert((m, i), o);
                }
                Err(error) => result.failures.push(PointFailure { workload: w, mode: m, intensity: s.intensities[i], error }),
            }
        }
        let mut rows = Vec::new();
        for &m in &modes {
            for (i, &x) in s.intensities.iter().enumerate() {
                let (Some(o), Some(ideal)) = (done.get(&(m, i)), done.get(&(Mode::ideal(m.wt), i))) else { continue };
                let st = &o.stats;
                rows.push(MetricsRow {
                    config_hash: hash.clone(),
                    workload: w.name(),
                    mode: m.kind.name(),
                    config: m.split(),
                    wt: m.wt,
                    pht: m.pht,
                    mht: m.mht,
                    intensity: x,
                    elapsed_cycles: o.elapsed,
                    ideal_cycles: ideal.elapsed,
                    relative_performance: relative(ideal.elapsed, o.elapsed),
                    optimum: 0.0,
                    misses: st.misses,
                    walks: st.walks,
                    dedup_hits: st.dedup_hits,
                    map_check_hits: st.map_check_hits,
                    prefetch_hits: st.prefetch_hits,
                    prefetch_misses: st.prefetch_misses,
                    dma_drain_stall_cycles: st.dma_drain_stall_cycles,
                });
            }
        }
        fill_optimum(&mut rows, s.intensities.len());
        result.rows.extend(rows);
    }
    result.rows.sort_by(|a, b| {
        let ka = (a.workload, a.mode(), a.intensity);
        let kb = (b.workload, b.mode(), b.intensity);
        ka.partial_cmp(&kb).expect("finite intensities")
    });
    Ok(result)
}

fn run_one(prep: &Prepared, cfg: &RunConfig, mode: Mode, intensity: f64) -> Result<Outcome, RunError> {
    run_with(prep, &cfg.platform(), mode, intensity, cfg.sweep.limit, Hooks::default())
}

/// The envelope over non-ideal modes; an ideal-only sweep is its own envelope.
fn fill_optimum(rows: &mut [MetricsRow], points: usize) {
    let mut best: BTreeMap<u64, f64> = BTreeMap::new();
    let translating = rows.iter().any(|r| r.mode != ModeKind::Ideal.name());
    for r in rows.iter().filter(|r| !translating || r.mode != ModeKind::Ideal.name()) {
        let e = best.entry(r.intensity.to_bits()).or_insert(0.0);
        *e = e.max(r.relative_performance);
    }
    debug_assert!(best.len() <= points);
    for r in rows.iter_mut() {
        r.optimum = best.get(&r.intensity.to_bits()).copied().unwrap_or(0.0);
    }
}

pub fn write_csv<W: Write>(mut out: W, rows: &[MetricsRow]) -> std::io::Result<()> {
    writeln!(out, "{SCHEMA}")?;
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(std::io::Error::other)?;
    }
    w.flush()
}

/// Per workload: each mode's relative performance by intensity and the
/// configuration that attains the optimum.
pub fn summary(rows: &[MetricsRow]) -> String {
    let mut out = String::new();
    let mut workloads: Vec<&str> = rows.iter().map(|r| r.workload).collect();
    workloads.dedup();
    for w in workloads {
        let mine: Vec<&MetricsRow> = rows.iter().filter(|r| r.workload == w).collect();
        let mut modes: Vec<Mode> = mine.iter().map(|r| r.mode()).collect();
        modes.sort();
        modes.dedup();
        let mut xs: Vec<f64> = mine.iter().map(|r| r.intensity).collect();
        xs.sort_by(f64::total_cmp);
        xs.dedup();
        out += &format!("{w}: relative performance\n{:>10}", "cyc/B");
        for m in &modes {
            out += &format!(" {:>12}", m.to_string());
        }
        out += &format!(" {:>8}  best\n", "optimum");
        for x in xs {
            out += &format!("{x:>10}");
            let at: Vec<&&MetricsRow> = mine.iter().filter(|r| r.intensity == x).collect();
            for m in &modes {
                match at.iter().find(|r| r.mode() == *m) {
                    Some(r) => out += &format!(" {:>12.3}", r.relative_performance),
                    None => out += &format!(" {:>12}", "-"),
                }
            }
            let opt = at.first().map(|r| r.optimum).unwrap_or(0.0);
            let best = at
                .iter()
                .filter(|r| r.relative_performance == opt)
                .map(|r| r.mode().to_string())
                .next()
                .unwrap_or_default();
            out += &format!(" {opt:>8.3}  {best}\n");
        }
    }
    out
}
