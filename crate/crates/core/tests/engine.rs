//! Event ordering, mutex hand-off and run determinism.

use std::cell::RefCell;
use std::rc::Rc;

use proptest::prelude::*;
use svmsim_core::config::{Mode, Platform};
use svmsim_core::engine::{ProcKind, Sim, SimMutex, Time};
use svmsim_core::run::{prepare, run};
use svmsim_core::workloads::{PcSpec, SpSpec, WorkloadSpec};

const WAKE: Time = 2;
const TAS: Time = 1;

/// Waiters arrive at the given times while the holder keeps the mutex for
/// 100 cycles. Returns (waiter index, acquisition time) in acquisition order.
fn contend(arrivals: &[Time]) -> Vec<(usize, Time)> {
    let sim = Sim::new(WAKE, TAS);
    let mutex = Rc::new(SimMutex::new("m"));
    let log = Rc::new(RefCell::new(Vec::new()));
    {
        let (s, m) = (sim.clone(), mutex.clone());
        sim.spawn("holder", ProcKind::Harness, false, async move {
            m.acquire(&s).await?;
            s.sleep(100).await;
            m.release(&s)
        });
    }
    for (k, &t) in arrivals.iter().enumerate() {
        let (s, m, l) = (sim.clone(), mutex.clone(), log.clone());
        sim.spawn(format!("w{k}"), ProcKind::Harness, false, async move {
            s.sleep(t).await;
            m.acquire(&s).await?;
            l.borrow_mut().push((k, s.now()));
            s.sleep(10).await;
            m.release(&s)
        });
    }
    sim.run(1 << 20).unwrap();
    Rc::try_unwrap(log).unwrap().into_inner()
}

fn permutations(v: &[Time]) -> Vec<Vec<Time>> {
    if v.len() <= 1 {
        return vec![v.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..v.len() {
        let mut rest = v.to_vec();
        let x = rest.remove(i);
        for mut p in permutations(&rest) {
            p.insert(0, x);
            out.push(p);
        }
    }
    out
}

#[test]
fn waiters_acquire_in_arrival_order() {
    for arrivals in permutations(&[10, 20, 30]) {
        let got: Vec<usize> = contend(&arrivals).into_iter().map(|(k, _)| k).collect();
        let mut want: Vec<usize> = (0..arrivals.len()).collect();
        want.sort_by_key(|&k| arrivals[k]);
        assert_eq!(got, want, "arrivals {arrivals:?}");
    }
}

#[test]
fn hand_off_costs_the_wake_latency() {
    let got = contend(&[10, 20, 30]);
    // The holder acquires after one test-and-set and releases 100 later;
    // each waiter holds for 10 after waking.
    let r = TAS + 100;
    assert_eq!(got, [(0, r + WAKE), (1, r + 2 * WAKE + 10), (2, r + 3 * WAKE + 20)]);
}

#[test]
fn free_mutex_is_acquired_after_one_test_and_set() {
    let got = contend(&[200]);
    assert_eq!(got, [(0, 200 + TAS)]);
}

#[test]
fn identical_runs_have_identical_traces() {
    let platform = Platform::default();
    for spec in [
        WorkloadSpec::Pc(PcSpec { vertices: 400, ..PcSpec::default() }),
        WorkloadSpec::Sp(SpSpec { buffer_bytes: 64 << 10, ..SpSpec::default() }),
    ] {
        let prep = prepare(&spec, &platform).unwrap();
        for mode in [Mode::soa(7), Mode::vdma(5, 1, 2)] {
            let a = run(&prep, &platform, mode, 1.0).unwrap();
            let b = run(&prep, &platform, mode, 1.0).unwrap();
            assert_eq!((a.digest, a.elapsed, a.events), (b.digest, b.elapsed, b.events), "{} {mode}", spec.name());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn run_ends_at_the_last_wake(sleeps in prop::collection::vec(0u64..10_000, 1..12)) {
        let sim = Sim::new(WAKE, TAS);
        for (k, &d) in sleeps.iter().enumerate() {
            let s = sim.clone();
            sim.spawn(format!("p{k}"), ProcKind::Harness, false, async move {
                s.sleep(d).await;
                Ok(())
            });
        }
        prop_assert_eq!(sim.run(u64::MAX).unwrap(), *sleeps.iter().max().unwrap());
    }

    #[test]
    fn callbacks_fire_in_time_then_schedule_order(times in prop::collection::vec(0u64..50, 1..40)) {
        let sim = Sim::new(WAKE, TAS);
        let log = Rc::new(RefCell::new(Vec::new()));
        for (k, &t) in times.iter().enumerate() {
            let l = log.clone();
            sim.at(t, move || {
                l.borrow_mut().push(k);
                Ok(())
            }).unwrap();
        }
        let s = sim.clone();
        sim.spawn("keepalive", ProcKind::Harness, false, async move {
            s.sleep(100).await;
            Ok(())
        });
        sim.run(1000).unwrap();
        let mut want: Vec<usize> = (0..times.len()).collect();
        want.sort_by_key(|&k| (times[k], k));
        prop_assert_eq!(log.borrow().clone(), want);
    }

    #[test]
    fn mutex_order_is_first_come_first_served(arrivals in prop::collection::vec(1u64..90, 1..7)) {
        let got: Vec<usize> = contend(&arrivals).into_iter().map(|(k, _)| k).collect();
        let mut want: Vec<usize> = (0..arrivals.len()).collect();
        want.sort_by_key(|&k| (arrivals[k], k));
        prop_assert_eq!(got, want);
    }
}
