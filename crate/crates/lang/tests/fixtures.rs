//! Golden outputs and co-simulation oracles over the shipped kernel corpus.

mod common;

use common::{fixture, image_for, FIXTURES};
use svmsim_lang::cosim::{check_coverage, check_removal};
use svmsim_lang::{compile, Emit};

fn golden(name: &str, ext: &str) -> String {
    fixture(&format!("{name}.{ext}"))
}

#[test]
fn corpus_has_at_least_six_kernels() {
    assert!(FIXTURES.len() >= 6);
    assert!(FIXTURES.contains(&"sp") && FIXTURES.contains(&"pc"));
}

#[test]
fn helper_threads_match_goldens() {
    for name in FIXTURES {
        let c = compile(&fixture(&format!("{name}.kernel"))).unwrap();
        assert_eq!(c.emit(Emit::Pht), golden(name, "pht"), "helper thread for {name}");
    }
}

#[test]
fn codegen_is_deterministic() {
    for name in FIXTURES {
        let src = fixture(&format!("{name}.kernel"));
        let a = compile(&src).unwrap();
        let b = compile(&src).unwrap();
        for e in [Emit::Ast, Emit::Ddg, Emit::Pht, Emit::Wt] {
            assert_eq!(a.emit(e), b.emit(e));
        }
    }
}

#[test]
fn stream_kernel_ast_matches_golden() {
    let c = compile(&fixture("sp.kernel")).unwrap();
    let dump = c.emit(Emit::Ast);
    assert_eq!(dump, golden("sp", "ast"));
    assert_eq!(dump.matches("For parallel_for").count(), 1);
}

#[test]
fn ddg_dumps_match_goldens() {
    for name in ["pc", "simple_array"] {
        let c = compile(&fixture(&format!("{name}.kernel"))).unwrap();
        assert_eq!(c.emit(Emit::Ddg), golden(name, "ddg"), "ddg for {name}");
    }
}

#[test]
fn simple_array_value_chain_is_not_address_feeding() {
    let c = compile(&fixture("simple_array.kernel")).unwrap();
    let ddg = c.emit(Emit::Ddg);
    assert!(ddg.contains("  v#1 <- {A#0, i#1} def svm-leaf svm\n"), "{ddg}");
    assert!(ddg.contains("  s#2 <- {s#1, v#1} def svm\n"), "{ddg}");
    assert!(!c.address_vars.contains("s"));
    assert!(c.address_vars.contains("i"));
}

#[test]
fn helper_output_reparses_to_itself() {
    for name in FIXTURES {
        let c = compile(&fixture(&format!("{name}.kernel"))).unwrap();
        let text = c.emit(Emit::Pht);
        let again = svmsim_lang::Checked::parse(&text).unwrap();
        assert_eq!(svmsim_lang::print::program_str(&again.program), text);
    }
}

#[test]
fn helper_threads_cover_worker_pages() {
    for name in FIXTURES {
        let c = compile(&fixture(&format!("{name}.kernel"))).unwrap();
        let (mem, args) = image_for(name);
        for workers in [1, 3, 5] {
            let cov = check_coverage(&c, &mem, &args, workers).unwrap();
            assert!(cov.sound(), "{name} with {workers} workers misses {:?}", &cov.missing[..cov.missing.len().min(5)]);
            if *name != "no_svm" {
                assert!(cov.iterations > 0, "{name}: no worker iterations touched shared memory");
            }
        }
    }
}

#[test]
fn removed_statements_never_feed_addresses() {
    for name in FIXTURES {
        let c = compile(&fixture(&format!("{name}.kernel"))).unwrap();
        let (mem, args) = image_for(name);
        let failures = check_removal(&c, &mem, &args, 3, &[1, 7, -13]).unwrap();
        assert!(failures.is_empty(), "{name}: {failures:?}");
    }
}

#[test]
fn removal_oracle_detects_a_wrongly_removed_statement() {
    let mut c = compile(&fixture("pc.kernel")).unwrap();
    // Pretend the successor count was dropped: it bounds the inner loop.
    let ns_decl = c
        .source
        .program
        .kernel
        .body
        .stmts
        .iter()
        .find_map(|s| match &s.kind {
            svmsim_lang::ast::StmtKind::For { body, .. } => Some(body.stmts[1].span),
            _ => None,
        })
        .unwrap();
    c.deleted.insert(ns_decl);
    let (mem, args) = image_for("pc");
    let failures = check_removal(&c, &mem, &args, 2, &[1]).unwrap();
    assert!(!failures.is_empty());
}

#[test]
fn coverage_oracle_detects_a_missing_prefetch() {
    let src = fixture("simple_array.kernel");
    let mut c = compile(&src).unwrap();
    let pht = fixture("simple_array.pht").replace("        prefetch(&B[i], 4);\n", "");
    c.pht = svmsim_lang::Checked::parse(&pht).unwrap();
    let (mem, args) = image_for("simple_array");
    let cov = check_coverage(&c, &mem, &args, 2).unwrap();
    assert!(!cov.sound());
}

#[test]
fn embedded_corpus_matches_the_files() {
    let names: Vec<&str> = svmsim_lang::corpus::FIXTURES.iter().map(|f| f.name).collect();
    assert_eq!(names, FIXTURES);
    for f in svmsim_lang::corpus::FIXTURES {
        assert_eq!(f.kernel, fixture(&format!("{}.kernel", f.name)));
    }
    svmsim_lang::corpus::check_corpus().unwrap();
}
