pub mod checks;
pub mod config;
pub mod dma;
pub mod dmac;
pub mod engine;
pub mod machine;
pub mod mem;
pub mod oracle;
pub mod pe;
pub mod run;
pub mod stats;
pub mod tlb;
pub mod workloads;
