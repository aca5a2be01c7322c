//! The shipped kernel corpus with its golden dumps and memory images for
//! co-simulation.

use crate::compile::{compile, Emit};
use crate::cosim::check_coverage;
use crate::host::SparseMemory;

pub struct Fixture {
    pub name: &'static str,
    pub kernel: &'static str,
    pub pht: &'static str,
}

macro_rules! fixture {
    ($name:literal) => {
        Fixture {
            name: $name,
            kernel: include_str!(concat!("../fixtures/", $name, ".kernel")),
            pht: include_str!(concat!("../fixtures/", $name, ".pht")),
        }
    };
}

pub const FIXTURES: &[Fixture] = &[
    fixture!("sp"),
    fixture!("pc"),
    fixture!("simple_array"),
    fixture!("no_svm"),
    fixture!("struct_fold"),
    fixture!("conditional"),
    fixture!("duplicate"),
    fixture!("gather"),
];

/// Small deterministic generator for test images.
pub struct Lcg(u64);

impl Lcg {
    pub fn new(seed: u64) -> Self {
        Self(seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407))
    }

    pub fn next(&mut self, bound: u64) -> u64 {
        self.0 = self.0.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (self.0 >> 33) % bound
    }
}

fn ints(mem: &mut SparseMemory, base: u32, values: impl IntoIterator<Item = i64>) {
    for (k, v) in values.into_iter().enumerate() {
        mem.write_u(base + 4 * k as u32, 4, v as u32 as u64);
    }
}

/// Memory image and kernel arguments for a fixture.
pub fn image_for(name: &str) -> Option<(SparseMemory, Vec<i64>)> {
    let mut mem = SparseMemory::new();
    let mut rng = Lcg::new(name.len() as u64);
    let args = match name {
        "simple_array" => {
            let n = 3000;
            ints(&mut mem, 0x1000_0000, (0..n).map(|k| k * 3 - 7));
            vec![0x1000_0000, 0x2000_0000, n]
        }
        "duplicate" => {
            let n = 2500;
            ints(&mut mem, 0x1000_0000, (0..n).map(|k| k ^ 5));
            vec![0x1000_0000, 0x3000_0000, n]
        }
        "conditional" => {
            let n = 2000;
            ints(&mut mem, 0x1000_0000, (0..n).map(|_| rng.next(3) as i64 - 1));
            ints(&mut mem, 0x2000_0000, 0..n);
            ints(&mut mem, 0x3000_0000, (0..n).map(|k| -k));
            vec![0x1000_0000, 0x2000_0000, 0x3000_0000, n]
        }
        "gather" => {
            let (n, m) = (1500, 20000);
            ints(&mut mem, 0x1000_0000, (0..n).map(|_| rng.next(m) as i64));
            ints(&mut mem, 0x2000_0000, (0..m as i64).map(|k| (k % 7) - 3));
            vec![0x1000_0000, 0x2000_0000, 0x3000_0000, n]
        }
        "struct_fold" => {
            let n = 1000;
            for k in 0..=n as u32 {
                mem.write_u(0x1000_0000 + 16 * k, 4, k as u64);
                mem.write_u(0x2000_0000 + 12 * k, 4, 2 * k as u64);
            }
            vec![0x1000_0000, 0x2000_0000, n]
        }
        "no_svm" => vec![500],
        "sp" => {
            let (block, nblocks) = (1024u32, 64u32);
            let data: Vec<u8> = (0..block * nblocks).map(|k| (k * 13 % 251) as u8).collect();
            mem.write(0x4000_0000, &data);
            vec![0x4000_0000, nblocks as i64, block as i64, 5]
        }
        "pc" => {
            let n = 300u32;
            let (vbase, sbase) = (0x1000_0000u32, 0x2000_0000u32);
            let mut next = sbase;
            for v in 0..n {
                let addr = vbase + 136 * v;
                let deg = 1 + rng.next(4) as u32;
                mem.write_u(addr, 4, deg as u64);
                mem.write_u(addr + 4, 4, next as u64);
                for d in 0..deg {
                    let target = rng.next(n as u64) as u32;
                    mem.write_u(next + 4 * d, 4, (vbase + 136 * target) as u64);
                }
                next += 4 * deg;
                for b in 0..64 {
                    mem.write_u(addr + 8 + b, 1, ((v + b) % 256) as u64);
                }
            }
            vec![vbase as i64, n as i64, 3]
        }
        _ => return None,
    };
    Some((mem, args))
}

/// Compiles every fixture, compares its helper thread with the golden dump
/// and co-simulates page coverage for several worker counts.
pub fn check_corpus() -> Result<String, String> {
    let mut iterations = 0;
    for f in FIXTURES {
        let c = compile(f.kernel).map_err(|d| format!("{}: {d}", f.name))?;
        if c.emit(Emit::Pht) != f.pht {
            return Err(format!("{}: helper thread differs from the golden dump", f.name));
        }
        let (mem, args) = image_for(f.name).ok_or_else(|| format!("{}: no image", f.name))?;
        for workers in [1, 3, 5] {
            let cov = check_coverage(&c, &mem, &args, workers).map_err(|e| format!("{}: {e}", f.name))?;
            if let Some((i, p)) = cov.missing.first() {
                return Err(format!("{} with {workers} workers: iteration {i} touches page {p:#x} the helper never does", f.name));
            }
            iterations += cov.iterations;
        }
    }
    Ok(format!("{} kernels match their goldens, {iterations} worker iterations covered", FIXTURES.len()))
}
