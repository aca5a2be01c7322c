//! The command-line surface: exit codes, metrics files, compile and selftest.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use svmsim_cli::config::RunConfig;
use svmsim_cli::sweep::{simulate, SCHEMA};

const BIN: &str = env!("CARGO_BIN_EXE_svmsim");

fn svmsim(args: &[&str], out_dir: &Path) -> Output {
    Command::new(BIN).args(args).env("SVMSIM_OUTPUT_DIR", out_dir).output().unwrap()
}

fn scratch(name: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("svmsim-cli-{}-{name}", std::process::id()));
    std::fs::create_dir_all(&d).unwrap();
    d
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn read_rows(path: &Path) -> (String, Vec<csv::StringRecord>, csv::StringRecord) {
    let text = std::fs::read_to_string(path).unwrap();
    let (first, rest) = text.split_once('\n').unwrap();
    let mut r = csv::Reader::from_reader(rest.as_bytes());
    let header = r.headers().unwrap().clone();
    (first.to_string(), r.records().map(Result::unwrap).collect(), header)
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn fixture(name: &str) -> String {
    format!("{}/../lang/fixtures/{name}", env!("CARGO_MANIFEST_DIR"))
}

const SMALL_PC: &str = "[pc]\nvertices = 400\n";

#[test]
fn ideal_only_sweep_writes_one_row_per_grid_point() {
    let dir = scratch("ideal");
    let cfg = write(&dir, "ideal.toml", &format!("output = \"ideal.csv\"\n[sweep]\nworkloads = [\"pc\"]\nmodes = [\"ideal:7\"]\n{SMALL_PC}"));
    let o = svmsim(&["simulate", "--config", cfg.to_str().unwrap()], &dir);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let (stamp, rows, header) = read_rows(&dir.join("ideal.csv"));
    assert_eq!(stamp, SCHEMA);
    assert_eq!(
        header.iter().collect::<Vec<_>>(),
        [
            "config_hash", "workload", "mode", "config", "wt", "pht", "mht", "intensity", "elapsed_cycles", "ideal_cycles",
            "relative_performance", "optimum", "misses", "walks", "dedup_hits", "map_check_hits", "prefetch_hits",
            "prefetch_misses", "dma_drain_stall_cycles",
        ]
    );
    assert_eq!(rows.len(), 10);
    for r in &rows {
        assert_eq!(&r[10], "1.0");
        assert_eq!(&r[11], "1.0");
    }
}

#[test]
fn full_mode_sweep_has_fifty_rows_and_the_envelope() {
    let cfg = RunConfig::parse(&format!("[sweep]\nworkloads = [\"pc\"]\n{SMALL_PC}")).unwrap();
    let res = simulate(&cfg).unwrap();
    assert!(res.failures.is_empty(), "{:?}", res.failures);
    assert_eq!(res.rows.len(), 5 * 10);
    for x in &cfg.sweep.intensities {
        let at: Vec<_> = res.rows.iter().filter(|r| r.intensity == *x).collect();
        assert_eq!(at.len(), 5);
        let max = at.iter().map(|r| r.relative_performance).fold(0.0, f64::max);
        assert!(at.iter().all(|r| r.optimum == max));
    }
    // Canonical order: mode kind, configuration, intensity.
    let keys: Vec<_> = res.rows.iter().map(|r| (r.mode(), r.intensity)).collect();
    let mut sorted = keys.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    assert_eq!(keys, sorted);
    for r in &res.rows {
        assert!(r.relative_performance <= 1.0, "{r:?}");
        assert!(r.relative_performance > 0.0);
    }
}

#[test]
fn override_changes_the_hash_and_the_results() {
    let base = format!("[sweep]\nworkloads = [\"pc\"]\nmodes = [\"vdma:7/0/1\"]\nintensities = [1.0]\n{SMALL_PC}");
    let a = RunConfig::parse(&base).unwrap();
    let dir = scratch("override");
    let path = write(&dir, "base.toml", &base);
    let b = RunConfig::load(Some(&path), &["latency.dram_access=200".into()]).unwrap();
    assert_eq!(b.latency.dram_access, 200);
    assert_ne!(a.hash(), b.hash());
    let ra = simulate(&a).unwrap();
    let rb = simulate(&b).unwrap();
    assert_ne!(ra.rows[0].elapsed_cycles, rb.rows[0].elapsed_cycles);
    assert_ne!(ra.rows[0].config_hash, rb.rows[0].config_hash);

    let o = svmsim(&["simulate", "--config", path.to_str().unwrap(), "--override", "latency.dram_access=200", "--output", "o.csv"], &dir);
    assert!(o.status.success());
    let (_, rows, _) = read_rows(&dir.join("o.csv"));
    assert_eq!(&rows[0][0], b.hash());
}

#[test]
fn bad_configs_exit_with_usage_status() {
    let dir = scratch("bad");
    let cfg = write(&dir, "bad.toml", "[latency]\ndram = 5\n");
    let o = svmsim(&["simulate", "--config", cfg.to_str().unwrap()], &dir);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown field"));
    let o = svmsim(&["simulate", "--override", "sweep.modes=[\"vdma:6/1/2\"]"], &dir);
    assert_eq!(o.status.code(), Some(2));
    let o = svmsim(&["simulate", "--config", dir.join("missing.toml").to_str().unwrap()], &dir);
    assert_eq!(o.status.code(), Some(2));
    let o = svmsim(&["frobnicate"], &dir);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn compile_matches_the_golden_helper() {
    let dir = scratch("compile");
    let o = svmsim(&["compile", &fixture("sp.kernel"), "--emit", "pht"], &dir);
    assert!(o.status.success());
    assert_eq!(stdout(&o), std::fs::read_to_string(fixture("sp.pht")).unwrap());
    let ast = svmsim(&["compile", &fixture("sp.kernel"), "--emit", "ast"], &dir);
    assert_eq!(stdout(&ast), std::fs::read_to_string(fixture("sp.ast")).unwrap());
}

#[test]
fn ddg_dump_is_deterministic() {
    let dir = scratch("ddg");
    let a = svmsim(&["compile", &fixture("pc.kernel"), "--emit", "ddg"], &dir);
    let b = svmsim(&["compile", &fixture("pc.kernel"), "--emit", "ddg"], &dir);
    assert!(a.status.success());
    assert_eq!(stdout(&a), stdout(&b));
    assert_eq!(stdout(&a), std::fs::read_to_string(fixture("pc.ddg")).unwrap());
}

#[test]
fn compile_failures_exit_non_zero() {
    let dir = scratch("compile-bad");
    let o = svmsim(&["compile", dir.join("nope.kernel").to_str().unwrap()], &dir);
    assert_eq!(o.status.code(), Some(2));
    let bad = write(&dir, "bad.kernel", "kernel k(int n) { parallel_for (i in 0 .. n) { x = 1; } }\n");
    let o = svmsim(&["compile", bad.to_str().unwrap()], &dir);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("bad.kernel:1:"));
}

#[test]
fn selftest_passes_on_the_default_build() {
    let dir = scratch("selftest");
    let o = svmsim(&["selftest"], &dir);
    let out = stdout(&o);
    assert!(o.status.success(), "{out}");
    for name in ["retirement-buffer", "dma-integrity", "burst-split", "miss-dedup", "tlb-replay", "memory-arithmetic", "helper-thread-corpus"] {
        assert!(out.lines().any(|l| l.starts_with("PASS") && l.contains(name)), "{name} missing:\n{out}");
    }
    assert!(out.contains("64 B of burst metadata vs 16384 B of data buffer, a factor of 256"), "{out}");
}

#[test]
fn injected_reissue_bug_is_named() {
    let dir = scratch("inject");
    let o = svmsim(&["selftest", "--inject-bug", "reissue-order"], &dir);
    let out = stdout(&o);
    assert_eq!(o.status.code(), Some(1), "{out}");
    let failed: Vec<&str> = out.lines().filter(|l| l.starts_with("FAIL")).collect();
    assert!(failed.iter().any(|l| l.contains("retirement-buffer") && l.contains("order preservation")), "{out}");
    assert!(failed.iter().any(|l| l.contains("dma-integrity") && l.contains("order preservation")), "{out}");
}

#[test]
fn selftest_recomputes_arithmetic_for_sixteen_bursts() {
    let dir = scratch("sixteen");
    let o = svmsim(&["selftest", "--override", "dma.max_in_flight=16"], &dir);
    let out = stdout(&o);
    assert!(o.status.success(), "{out}");
    assert!(out.contains("128 B of burst metadata vs 32768 B of data buffer, a factor of 256"), "{out}");
}

#[test]
fn shipped_config_spells_out_the_defaults() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/default.toml");
    let c = RunConfig::load(Some(&path), &[]).unwrap();
    assert_eq!(c, RunConfig::default());
}

#[test]
fn reference_metrics_match_the_default_config() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("reference/metrics.csv");
    let (stamp, rows, _) = read_rows(&path);
    assert_eq!(stamp, SCHEMA);
    assert_eq!(rows.len(), 2 * 5 * 10);
    let hash = RunConfig::default().hash();
    assert!(rows.iter().all(|r| r[0] == *hash), "reference CSV is stale; regenerate it with `svmsim simulate`");
}

/// Relative performance per mode, in intensity order, from metrics rows.
fn curves(rows: &[svmsim_cli::sweep::MetricsRow]) -> std::collections::BTreeMap<(String, String), Vec<f64>> {
    let mut out: std::collections::BTreeMap<(String, String), Vec<f64>> = Default::default();
    for r in rows {
        out.entry((r.workload.to_string(), r.mode().to_string())).or_default().push(r.relative_performance);
    }
    out
}

/// Beyond the curve's minimum, at most one step may go down.
fn converges(curve: &[f64]) -> bool {
    let knee = curve.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
    curve[knee..].windows(2).filter(|w| w[1] < w[0]).count() <= 1
}

#[test]
fn curves_rise_beyond_the_memory_bound_knee() {
    let cfg = RunConfig::parse(&format!("[sp]\nbuffer_bytes = 262144\n{SMALL_PC}")).unwrap();
    let res = simulate(&cfg).unwrap();
    for ((w, m), c) in curves(&res.rows) {
        assert!(converges(&c), "{w} {m}: {c:?}");
        assert!(c.iter().all(|&r| r > 0.0 && r <= 1.0), "{w} {m}: {c:?}");
    }
}
