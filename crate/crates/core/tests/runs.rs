//! Benchmark images and whole runs: layouts, output oracles, normalization
//! and the compute-bound limit.

use svmsim_core::config::{Mode, ModeKind, Platform};
use svmsim_core::mem::PAGE_BYTES;
use svmsim_core::pe::iterations;
use svmsim_core::run::{prepare, run, Prepared};
use svmsim_core::workloads::{check_pc_layout, gen_pc, gen_sp, pc_footprint_pages, Expect, PcSpec, SpSpec, Topology, WorkloadSpec};

fn small_pc() -> WorkloadSpec {
    WorkloadSpec::Pc(PcSpec { vertices: 500, ..PcSpec::default() })
}

fn small_sp() -> WorkloadSpec {
    WorkloadSpec::Sp(SpSpec { buffer_bytes: 128 << 10, ..SpSpec::default() })
}

fn modes() -> Vec<Mode> {
    let mut m = Mode::defaults();
    m.push(Mode::ideal(7));
    m
}

#[test]
fn pc_image_layout_and_footprint() {
    let platform = Platform::default();
    let inst = gen_pc(&PcSpec { vertices: 1000, degree_min: 4, degree_max: 4, payload: 64, ..PcSpec::default() }, &platform).unwrap();
    let Expect::Pc { layout, .. } = &inst.expect else { panic!() };
    // nsucc, succ pointer, payload, inbox.
    assert_eq!(layout.size, 4 + 4 + 64 + 64);
    assert_eq!(check_pc_layout(&inst).unwrap(), 1000 + 4000);
    let pages = (1000u64 * 136).div_ceil(4096) + (4000u64 * 4).div_ceil(4096);
    assert_eq!(pages, 38);
    assert_eq!(inst.space.mapped_pages() as u64, pages);
    assert_eq!(pc_footprint_pages(layout, 1000, 4000), pages);
}

#[test]
fn ring_image_is_deterministic_and_fully_traversed() {
    let platform = Platform::default();
    let spec = PcSpec { vertices: 4, degree_min: 1, degree_max: 1, topology: Topology::Ring, seed: 9, ..PcSpec::default() };
    let a = gen_pc(&spec, &platform).unwrap();
    let b = gen_pc(&spec, &platform).unwrap();
    let dump = |i: &svmsim_core::workloads::Instance| {
        let mut buf = vec![0u8; (4 * 136 + 16) as usize];
        i.space.read(i.base, &mut buf[..4 * 136]);
        buf
    };
    assert_eq!(dump(&a), dump(&b));
    let prep = svmsim_core::run::prepare_instance(a).unwrap();
    // The output oracle checks every inbox, so all four vertices were visited.
    let o = run(&prep, &platform, Mode::vdma(2, 0, 1), 1.0).unwrap();
    assert!(o.stats.transfers >= 4 * 3);
}

#[test]
fn random_graph_needs_enough_vertices() {
    let platform = Platform::default();
    assert!(gen_pc(&PcSpec { vertices: 4, degree_min: 4, degree_max: 4, ..PcSpec::default() }, &platform).is_err());
    assert!(gen_pc(&PcSpec { vertices: 4, degree_min: 5, degree_max: 5, topology: Topology::Ring, ..PcSpec::default() }, &platform).is_err());
}

#[test]
fn stream_of_one_mebibyte_maps_256_pages() {
    let platform = Platform::default();
    let inst = gen_sp(&SpSpec { buffer_bytes: 1 << 20, ..SpSpec::default() }, &platform).unwrap();
    assert_eq!(inst.space.mapped_pages(), (1usize << 20).div_ceil(PAGE_BYTES as usize));
    assert_eq!(inst.space.mapped_pages(), 256);
}

#[test]
fn oversized_block_is_rejected() {
    let platform = Platform::default();
    assert!(gen_sp(&SpSpec { buffer_bytes: 1 << 20, block_bytes: 16 << 10, seed: 1 }, &platform).is_err());
}

#[test]
fn empty_workload_ends_at_time_zero() {
    let platform = Platform::default();
    let prep = prepare(&WorkloadSpec::Sp(SpSpec { buffer_bytes: 0, ..SpSpec::default() }), &platform).unwrap();
    assert!(prep.instance.space.page_table.is_empty());
    let o = run(&prep, &platform, Mode::vdma(7, 0, 1), 1.0).unwrap();
    assert_eq!((o.elapsed, o.events), (0, 0));
}

#[test]
fn static_distribution_of_sixteen_blocks() {
    for k in 0..4 {
        assert_eq!(iterations(0, 16, k, 4), 4);
    }
    let total: u64 = (0..7).map(|k| iterations(0, 100, k, 7)).sum();
    assert_eq!(total, 100);
}

fn all_modes(prep: &Prepared, intensity: f64) -> Vec<(Mode, svmsim_core::run::Outcome)> {
    let platform = Platform::default();
    modes().into_iter().map(|m| (m, run(prep, &platform, m, intensity).unwrap_or_else(|e| panic!("{m}: {e}")))).collect()
}

#[test]
fn ideal_mode_never_misses() {
    let platform = Platform::default();
    for spec in [small_pc(), small_sp()] {
        let prep = prepare(&spec, &platform).unwrap();
        let o = run(&prep, &platform, Mode::ideal(7), 0.5).unwrap();
        assert_eq!((o.stats.misses, o.stats.walks, o.stats.bursts_failed), (0, 0, 0));
    }
}

#[test]
fn cold_stream_misses_at_least_once_per_page() {
    let platform = Platform::default();
    let prep = prepare(&small_sp(), &platform).unwrap();
    let o = run(&prep, &platform, Mode::vdma(7, 0, 1), 0.5).unwrap();
    assert!(o.stats.walks >= prep.instance.space.mapped_pages() as u64);
    assert!(o.stats.misses >= o.stats.walks);
}

#[test]
fn every_mode_produces_correct_output_and_is_not_faster_than_ideal() {
    let platform = Platform::default();
    for spec in [small_pc(), small_sp()] {
        let prep = prepare(&spec, &platform).unwrap();
        for intensity in [0.25, 4.0] {
            for (mode, o) in all_modes(&prep, intensity) {
                if mode.kind == ModeKind::Ideal {
                    continue;
                }
                let ideal = run(&prep, &platform, Mode::ideal(mode.wt), intensity).unwrap();
                assert!(ideal.elapsed <= o.elapsed, "{} {mode} at {intensity}: {} < ideal {}", spec.name(), o.elapsed, ideal.elapsed);
            }
        }
    }
}

#[test]
fn virtual_dma_beats_locking_on_pointer_chasing() {
    let platform = Platform::default();
    let prep = prepare(&small_pc(), &platform).unwrap();
    let soa = run(&prep, &platform, Mode::soa(7), 0.25).unwrap();
    let vdma = run(&prep, &platform, Mode::vdma(7, 0, 1), 0.25).unwrap();
    assert!(vdma.elapsed < soa.elapsed, "vdma {} soa {}", vdma.elapsed, soa.elapsed);
}

#[test]
fn streaming_without_compute_is_bandwidth_bound() {
    let platform = Platform::default();
    let prep = prepare(&small_sp(), &platform).unwrap();
    let bytes = 2 * (128u64 << 10);
    let bound = bytes / 64 * platform.latency.dram_gap_per_64b;
    for (mode, o) in all_modes(&prep, 0.0) {
        assert!(o.elapsed >= bound, "{mode}: {} below the port bound {bound}", o.elapsed);
    }
}

#[test]
fn compute_bound_runs_converge_on_compute_time() {
    let platform = Platform::default();
    let prep = prepare(&WorkloadSpec::Sp(SpSpec { buffer_bytes: 64 << 10, ..SpSpec::default() }), &platform).unwrap();
    let intensity = 10_000.0;
    let work = prep.instance.work(intensity) as u64;
    let blocks = prep.instance.iterations as i64;
    for (mode, o) in all_modes(&prep, intensity) {
        let compute = iterations(0, blocks, 0, mode.wt as usize) * work;
        let ratio = o.elapsed as f64 / compute as f64;
        assert!((1.0..1.05).contains(&ratio), "{mode}: elapsed {} vs compute {compute}", o.elapsed);
    }
}
