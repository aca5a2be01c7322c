use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use svmsim_cli::config::RunConfig;
use svmsim_cli::selftest::{selftest, SelftestOptions};
use svmsim_cli::sweep::{simulate, summary, write_csv};
use svmsim_lang::{compile, Emit};

/// Directory that replaces the directory part of the metrics path.
const OUTPUT_DIR_VAR: &str = "SVMSIM_OUTPUT_DIR";

#[derive(Parser)]
#[command(name = "svmsim", version, about = "Shared virtual memory cluster simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a sweep and write the metrics CSV.
    Simulate {
        #[arg(long)]
        config: Option<PathBuf>,
        /// `section.key=value`, applied after the file.
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Metrics path, taking precedence over the config's `output`.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Compile a kernel and print one stage.
    Compile {
        file: PathBuf,
        #[arg(long, value_enum, default_value_t = EmitArg::Pht)]
        emit: EmitArg,
    },
    /// Run the mechanism checks.
    Selftest {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long, value_enum)]
        inject_bug: Option<Bug>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum EmitArg {
    Ast,
    Ddg,
    Pht,
    Wt,
}

#[derive(Clone, Copy, ValueEnum)]
enum Bug {
    /// Reissue failed bursts newest first.
    ReissueOrder,
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Simulate { config, overrides, output } => cmd_simulate(config.as_deref(), &overrides, output),
        Command::Compile { file, emit } => cmd_compile(&file, emit),
        Command::Selftest { config, overrides, inject_bug } => cmd_selftest(config.as_deref(), &overrides, inject_bug),
    }
}

fn load(config: Option<&Path>, overrides: &[String]) -> Result<RunConfig, ExitCode> {
    RunConfig::load(config, overrides).map_err(|e| {
        eprintln!("svmsim: {e}");
        ExitCode::from(2)
    })
}

fn output_path(cfg: &RunConfig, flag: Option<PathBuf>) -> PathBuf {
    let path = flag.unwrap_or_else(|| cfg.output.clone());
    match std::env::var_os(OUTPUT_DIR_VAR) {
        Some(dir) if !dir.is_empty() => Path::new(&dir).join(path.file_name().unwrap_or("metrics.csv".as_ref())),
        _ => path,
    }
}

fn cmd_simulate(config: Option<&Path>, overrides: &[String], output: Option<PathBuf>) -> ExitCode {
    let cfg = match load(config, overrides) {
        Ok(c) => c,
        Err(code) => return code,
    };
    let path = output_path(&cfg, output);
    let result = match simulate(&cfg) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("svmsim: {e}");
            return ExitCode::from(1);
        }
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        if let Err(e) = std::fs::create_dir_all(dir) {
            eprintln!("svmsim: cannot create {}: {e}", dir.display());
            return ExitCode::from(2);
        }
    }
    let written = std::fs::File::create(&path).and_then(|f| write_csv(std::io::BufWriter::new(f), &result.rows));
    if let Err(e) = written {
        eprintln!("svmsim: cannot write {}: {e}", path.display());
        return ExitCode::from(2);
    }
    print!("{}", summary(&result.rows));
    println!("config {}: {} rows written to {}", cfg.hash(), result.rows.len(), path.display());
    if result.failures.is_empty() {
        return ExitCode::SUCCESS;
    }
    for f in &result.failures {
        eprintln!("svmsim: {} {} at {} cycles/B failed: {}", f.workload.name(), f.mode, f.intensity, f.error);
    }
    ExitCode::from(1)
}

fn cmd_compile(file: &Path, emit: EmitArg) -> ExitCode {
    let src = match std::fs::read_to_string(file) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("svmsim: cannot read {}: {e}", file.display());
            return ExitCode::from(2);
        }
    };
    let what = match emit {
        EmitArg::Ast => Emit::Ast,
        EmitArg::Ddg => Emit::Ddg,
        EmitArg::Pht => Emit::Pht,
        EmitArg::Wt => Emit::Wt,
    };
    match compile(&src) {
        Ok(c) => {
            print!("{}", c.emit(what));
            ExitCode::SUCCESS
        }
        Err(d) => {
            eprintln!("{}:{d}", file.display());
            ExitCode::from(1)
        }
    }
}

fn cmd_selftest(config: Option<&Path>, overrides: &[String], bug: Option<Bug>) -> ExitCode {
    let cfg = match load(config, overrides) {
        Ok(c) => c,
        Err(code) => return code,
    };
    let opts = SelftestOptions { reversed_reissue: matches!(bug, Some(Bug::ReissueOrder)), ..SelftestOptions::standard() };
    let lines = selftest(&cfg.platform(), opts, |l| println!("{l}"));
    let failed = lines.iter().filter(|l| l.result.is_err()).count();
    if failed == 0 {
        println!("selftest passed: {} checks", lines.len());
        ExitCode::SUCCESS
    } else {
        println!("selftest failed: {failed} of {} checks", lines.len());
        ExitCode::from(1)
    }
}
