#![allow(dead_code)]

use svmsim_lang::host::SparseMemory;

pub const FIXTURES: &[&str] =
    &["sp", "pc", "simple_array", "no_svm", "struct_fold", "conditional", "duplicate", "gather"];

pub fn fixture(file: &str) -> String {
    let path = format!("{}/fixtures/{file}", env!("CARGO_MANIFEST_DIR"));
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{path}: {e}"))
}

pub fn image_for(name: &str) -> (SparseMemory, Vec<i64>) {
    svmsim_lang::corpus::image_for(name).unwrap_or_else(|| panic!("no image for {name}"))
}
