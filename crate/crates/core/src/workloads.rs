//! Pointer-chasing and stream-processing benchmarks: host-side image
//! generation, kernel instantiation and output oracles.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use svmsim_lang::interp::transform_byte;
use svmsim_lang::Checked;

use crate::config::{ConfigError, Platform};
use crate::mem::{AddressSpace, PAGE_BYTES};

const PC_TEMPLATE: &str = include_str!("../kernels/pc.kernel");
const SP_TEMPLATE: &str = include_str!("../kernels/sp.kernel");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Topology {
    #[default]
    Random,
    /// Vertex `i` points at `i+1 .. i+degree` modulo the vertex count.
    Ring,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PcSpec {
    pub vertices: u32,
    pub degree_min: u32,
    pub degree_max: u32,
    pub payload: u32,
    pub topology: Topology,
    pub seed: u64,
}

impl Default for PcSpec {
    fn default() -> Self {
        Self { vertices: 10_000, degree_min: 4, degree_max: 4, payload: 64, topology: Topology::Random, seed: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpSpec {
    pub buffer_bytes: u32,
    pub block_bytes: u32,
    pub seed: u64,
}

impl Default for SpSpec {
    fn default() -> Self {
        Self { buffer_bytes: 4 << 20, block_bytes: 1024, seed: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WorkloadSpec {
    Pc(PcSpec),
    Sp(SpSpec),
}

impl WorkloadSpec {
    pub fn name(&self) -> &'static str {
        match self {
            WorkloadSpec::Pc(_) => "pc",
            WorkloadSpec::Sp(_) => "sp",
        }
    }
}

/// Field offsets of the vertex struct as laid out by the compiler.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VertexLayout {
    pub size: u32,
    pub nsucc: u32,
    pub succ: u32,
    pub payload: u32,
    pub inbox: u32,
}

#[derive(Debug, Clone)]
pub enum Expect {
    Pc { layout: VertexLayout, vertices: u32, succ_base: u32, payload: u32, payloads: Vec<Vec<u8>>, succs: Vec<Vec<u32>> },
    Sp { original: Vec<u8> },
}

/// A generated benchmark ready to offload.
#[derive(Debug, Clone)]
pub struct Instance {
    pub name: &'static str,
    pub space: AddressSpace,
    pub source: String,
    /// Kernel arguments without the trailing `work` argument.
    pub args: Vec<i64>,
    pub iterations: u64,
    /// Bytes of payload processed per iteration; `work = intensity × this`.
    pub bytes_per_iteration: u32,
    pub base: u32,
    pub expect: Expect,
}

impl Instance {
    pub fn work(&self, intensity: f64) -> i64 {
        (intensity * self.bytes_per_iteration as f64).round() as i64
    }

    pub fn args(&self, intensity: f64) -> Vec<i64> {
        let mut a = self.args.clone();
        a.push(self.work(intensity));
        a
    }

    /// Checks the final memory image against a plain sequential computation.
    pub fn check(&self, read: &dyn Fn(u32, &mut [u8])) -> Result<(), String> {
        match &self.expect {
            Expect::Sp { original } => {
                let mut got = vec![0u8; original.len()];
                read(self.base, &mut got);
                match original.iter().zip(&got).position(|(&o, &g)| transform_byte(o) != g) {
                    None => Ok(()),
                    Some(i) => Err(format!("stream byte {i} is {:#04x}, expected {:#04x}", got[i], transform_byte(original[i]))),
                }
            }
            Expect::Pc { layout, vertices, payload, payloads, succs, .. } => {
                let n = *vertices as usize;
                let mut preds: Vec<Vec<usize>> = vec![Vec::new(); n];
                for (u, s) in succs.iter().enumerate() {
                    for &v in s {
                        preds[v as usize].push(u);
                    }
                }
                let mut buf = vec![0u8; *payload as usize];
                for v in 0..n {
                    let addr = self.base + v as u32 * layout.size;
                    read(addr + layout.payload, &mut buf);
                    if buf != payloads[v] {
                        return Err(format!("payload of vertex {v} changed"));
                    }
                    read(addr + layout.inbox, &mut buf);
                    let ok = if preds[v].is_empty() {
                        buf.iter().all(|&b| b == 0)
                    } else {
                        preds[v].iter().any(|&u| payloads[u].iter().zip(&buf).all(|(&p, &b)| transform_byte(p) == b))
                    };
                    if !ok {
                        return Err(format!("inbox of vertex {v} holds no predecessor's transformed payload"));
                    }
                }
                Ok(())
            }
        }
    }
}

fn bad(msg: impl Into<String>) -> ConfigError {
    ConfigError(msg.into())
}

pub fn pc_source(payload: u32, degree: u32) -> String {
    PC_TEMPLATE.replace("@PAYLOAD@", &payload.to_string()).replace("@DEGREE@", &degree.max(1).to_string())
}

pub fn sp_source(block: u32) -> String {
    SP_TEMPLATE.replace("@TILE@", &(2 * block).to_string())
}

pub fn vertex_layout(source: &str) -> Result<VertexLayout, ConfigError> {
    let checked = Checked::parse(source).map_err(|d| bad(format!("kernel template: {d}")))?;
    let s = checked.sema.struct_index.get("vertex").map(|&i| &checked.sema.structs[i]).ok_or_else(|| bad("kernel template lacks the vertex struct"))?;
    let off = |f: &str| s.field(f).map(|x| x.offset).ok_or_else(|| bad(format!("vertex struct lacks `{f}`")));
    Ok(VertexLayout { size: s.size, nsucc: off("nsucc")?, succ: off("succ")?, payload: off("payload")?, inbox: off("inbox")? })
}

/// Closed-form number of pages a PC image maps.
pub fn pc_footprint_pages(layout: &VertexLayout, vertices: u32, total_edges: u64) -> u64 {
    let vbytes = vertices as u64 * layout.size as u64;
    let sbytes = total_edges * 4;
    vbytes.div_ceil(PAGE_BYTES as u64) + sbytes.div_ceil(PAGE_BYTES as u64)
}

pub fn gen_pc(spec: &PcSpec, platform: &Platform) -> Result<Instance, ConfigError> {
    let n = spec.vertices;
    if spec.degree_min > spec.degree_max {
        return Err(bad("pc: degree_min exceeds degree_max"));
    }
    if n > 0 && spec.degree_max >= n.max(1) && spec.topology == Topology::Random {
        return Err(bad(format!("pc: degree {} needs more than {} vertices", spec.degree_max, n)));
    }
    if n > 0 && spec.degree_max > n {
        return Err(bad(format!("pc: degree {} exceeds the vertex count {}", spec.degree_max, n)));
    }
    if spec.payload == 0 || spec.payload % 4 != 0 {
        return Err(bad("pc: payload must be a positive multiple of 4 bytes"));
    }
    if spec.payload > platform.dma.max_transfer || spec.degree_max * 4 > platform.dma.max_transfer {
        return Err(bad("pc: per-vertex transfers exceed the DMA command limit"));
    }
    let source = pc_source(spec.payload, spec.degree_max);
    let layout = vertex_layout(&source)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let succs: Vec<Vec<u32>> = (0..n)
        .map(|v| {
            let d = rng.random_range(spec.degree_min..=spec.degree_max);
            match spec.topology {
                Topology::Ring => (1..=d).map(|k| (v + k) % n).collect(),
                Topology::Random => {
                    sample(&mut rng, n as usize - 1, d as usize).into_iter().map(|x| (v + 1 + x as u32) % n).collect()
                }
            }
        })
        .collect();
    let edges: u64 = succs.iter().map(|s| s.len() as u64).sum();
    let mut space = AddressSpace::new(&platform.mem);
    let vbytes = u32::try_from(n as u64 * layout.size as u64).map_err(|_| bad("pc: vertex array exceeds the address space"))?;
    let base = if n > 0 { space.alloc(vbytes)?.0 } else { 0 };
    let succ_base = if edges > 0 { space.alloc((edges * 4) as u32)?.0 } else { 0 };
    let mut payloads = Vec::with_capacity(n as usize);
    let mut next = succ_base;
    let mut payload = vec![0u8; spec.payload as usize];
    for (v, s) in succs.iter().enumerate() {
        let addr = base + v as u32 * layout.size;
        rng.fill(&mut payload[..]);
        space.write_u(addr + layout.nsucc, 4, s.len() as u64);
        space.write_u(addr + layout.succ, 4, next as u64);
        space.write(addr + layout.payload, &payload);
        for (k, &t) in s.iter().enumerate() {
            space.write_u(next + 4 * k as u32, 4, (base + t * layout.size) as u64);
        }
        next += 4 * s.len() as u32;
        payloads.push(payload.clone());
    }
    Ok(Instance {
        name: "pc",
        space,
        source,
        args: vec![base as i64, n as i64],
        iterations: n as u64,
        bytes_per_iteration: spec.payload,
        base,
        expect: Expect::Pc { layout, vertices: n, succ_base, payload: spec.payload, payloads, succs },
    })
}

pub fn gen_sp(spec: &SpSpec, platform: &Platform) -> Result<Instance, ConfigError> {
    let b = spec.block_bytes;
    if b == 0 || spec.buffer_bytes % b != 0 {
        return Err(bad("sp: block size must divide the buffer size"));
    }
    let per_pe = platform.cluster.l1_bytes / platform.cluster.pes.max(1);
    if b > per_pe / 4 {
        return Err(bad(format!("sp: block of {b} bytes does not fit double-buffered in {per_pe} bytes of scratchpad per PE")));
    }
    if b > platform.dma.max_transfer {
        return Err(bad("sp: block exceeds the DMA command limit"));
    }
    let mut space = AddressSpace::new(&platform.mem);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut original = vec![0u8; spec.buffer_bytes as usize];
    rng.fill(&mut original[..]);
    let base = if spec.buffer_bytes == 0 { 0 } else { space.alloc(spec.buffer_bytes)?.0 };
    if spec.buffer_bytes > 0 {
        space.write(base, &original);
    }
    let nblocks = spec.buffer_bytes / b;
    Ok(Instance {
        name: "sp",
        space,
        source: sp_source(b),
        args: vec![base as i64, nblocks as i64, b as i64],
        iterations: nblocks as u64,
        bytes_per_iteration: b,
        base,
        expect: Expect::Sp { original },
    })
}

pub fn generate(spec: &WorkloadSpec, platform: &Platform) -> Result<Instance, ConfigError> {
    match spec {
        WorkloadSpec::Pc(s) => gen_pc(s, platform),
        WorkloadSpec::Sp(s) => gen_sp(s, platform),
    }
}

/// Walks every pointer of a PC image and checks it lands on a mapped vertex
/// or successor slot. Returns the number of pointers checked.
pub fn check_pc_layout(inst: &Instance) -> Result<u64, String> {
    let Expect::Pc { layout, vertices, succ_base, succs, .. } = &inst.expect else {
        return Err("not a pointer-chasing image".into());
    };
    let space = &inst.space;
    let mapped = |va: u32| space.page_table.walk(va >> 12).is_some();
    let vend = inst.base + vertices * layout.size;
    let mut checked = 0;
    for v in 0..*vertices {
        let addr = inst.base + v * layout.size;
        let ns = space.read_u(addr + layout.nsucc, 4) as u32;
        let sp = space.read_u(addr + layout.succ, 4) as u32;
        if ns as usize != succs[v as usize].len() {
            return Err(format!("vertex {v}: successor count {ns}"));
        }
        if ns > 0 && (!mapped(sp) || !mapped(sp + 4 * ns - 1) || sp < *succ_base) {
            return Err(format!("vertex {v}: successor array {sp:#x} not mapped"));
        }
        checked += 1;
        for k in 0..ns {
            let t = space.read_u(sp + 4 * k, 4) as u32;
            if t < inst.base || t >= vend || (t - inst.base) % layout.size != 0 || !mapped(t) || !mapped(t + layout.size - 1) {
                return Err(format!("vertex {v}: successor pointer {t:#x} is not a mapped vertex"));
            }
            checked += 1;
        }
    }
    Ok(checked)
}
