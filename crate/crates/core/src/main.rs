use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use rehost::archspec::{lift_block, ImageView, LiftOptions, ProcessorSpec};
use rehost::ir::{count_ops, render_block};
use rehost::symsolve::{parse_constraints, solve, SolveOptions, SolverResult};
use rehost::vxe::{describe_goals, load_config, run_fuzz, run_vxe};

#[derive(Parser)]
#[command(name = "rehost", version, about = "Firmware rehosting toolkit")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a virtual execution environment.
    Run { config: PathBuf },
    /// Run the fuzzing campaign of a config.
    Fuzz { config: PathBuf },
    /// Lift one block and print its IR or op counts.
    Lift(LiftArgs),
    /// Assemble a source file for a processor spec.
    Asm {
        spec: PathBuf,
        source: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long, default_value = "0", value_parser = parse_u64)]
        base: u64,
    },
    /// Run an environment and write its traces.
    Trace {
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Solve constraints given one expression per line.
    Solve {
        file: PathBuf,
        /// External SMT-LIB solver command, e.g. "z3 -in".
        #[arg(long)]
        external: Option<String>,
    },
}

#[derive(Args)]
struct LiftArgs {
    spec: PathBuf,
    image: PathBuf,
    #[arg(long, default_value = "0", value_parser = parse_u64)]
    addr: u64,
    #[arg(long, default_value = "0", value_parser = parse_u64)]
    base: u64,
    #[arg(long, overrides_with = "no_optimize")]
    optimize: bool,
    #[arg(long)]
    no_optimize: bool,
    /// Print op counts before and after optimization instead of IR.
    #[arg(long)]
    stats: bool,
}

fn parse_u64(s: &str) -> Result<u64, String> {
    match s.strip_prefix("0x") {
        Some(h) => u64::from_str_radix(h, 16),
        None => s.parse(),
    }
    .map_err(|e| e.to_string())
}

enum Failure {
    User(String),
    Internal(String),
}

type CmdResult = Result<(), Failure>;

fn user<E: ToString>(e: E) -> Failure {
    Failure::User(e.to_string())
}

fn read(p: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(p).map_err(|e| Failure::User(format!("{}: {}", p.display(), e)))
}

fn load_spec(p: &Path) -> Result<ProcessorSpec, Failure> {
    ProcessorSpec::parse(&read(p)?).map_err(|e| Failure::User(format!("{}: {}", p.display(), e)))
}

fn cmd_run(config: &Path, trace_out: Option<&Path>) -> CmdResult {
    let mut cfg = load_config(config).map_err(user)?;
    if let (Some(out), Some(t)) = (trace_out, cfg.trace.as_mut()) {
        t.out = std::env::current_dir().map_err(user)?.join(out);
    }
    let report = run_vxe(&cfg).map_err(user)?;
    for (name, stop) in &report.stops {
        println!("device {}: {:?}", name, stop);
    }
    for dev in &report.devices {
        if let Some(f) = &dev.flood {
            println!(
                "[{}] flood: paths={} branches={} faults={} ops={}",
                dev.name,
                f.paths,
                f.visited.len(),
                f.faults.len(),
                f.ops
            );
        }
        if let Some(cs) = dev.check_solver() {
            for i in &cs.injections {
                println!("[{}] injected 0x{:x} at read 0x{:x} (pc 0x{:x})", dev.name, i.value, i.addr, i.read_pc);
            }
        }
        if let Some(w) = dev.write_log() {
            let values: std::collections::BTreeSet<u64> = w.writes.iter().map(|&(_, _, v)| v).collect();
            let shown: Vec<String> = values.iter().map(|v| format!("0x{:x}", v)).collect();
            println!(
                "[{}] writes to 0x{:x}..0x{:x}: {} (distinct values: {})",
                dev.name,
                w.lo,
                w.hi,
                w.writes.len(),
                shown.join(" ")
            );
        }
        for (port, bytes) in dev.transcripts() {
            if !bytes.is_empty() {
                println!("[{}/{}] {}", dev.name, port, String::from_utf8_lossy(&bytes).escape_debug());
            }
        }
    }
    if let Some(out) = trace_out {
        if cfg.trace.is_none() {
            let mut report = report;
            for dev in &mut report.devices {
                let dir = out.join(&dev.name);
                if let Some(t) = dev.trace_mut() {
                    let files = t.dump(&dir, 0).map_err(|e| Failure::Internal(e.to_string()))?;
                    println!("{}: {} traces", dev.name, files.len());
                }
            }
            return Ok(());
        }
    }
    for (i, t) in &report.pairs {
        println!("pair {} {}", i.display(), t.display());
    }
    for d in &report.diagnostics {
        eprintln!("{}", d);
    }
    Ok(())
}

fn cmd_fuzz(config: &Path) -> CmdResult {
    let cfg = load_config(config).map_err(user)?;
    if cfg.fuzz.is_none() {
        return Err(Failure::User(format!("{}: no [fuzz] section", config.display())));
    }
    let r = run_fuzz(&cfg).map_err(user)?;
    println!("{}", r.line());
    print!("{}", describe_goals(&r));
    Ok(())
}

fn cmd_lift(a: &LiftArgs) -> CmdResult {
    let spec = load_spec(&a.spec)?;
    let bytes = std::fs::read(&a.image).map_err(|e| Failure::User(format!("{}: {}", a.image.display(), e)))?;
    let view = ImageView { base: a.base, bytes: &bytes };
    let optimize = !a.no_optimize || a.optimize;
    let opts = LiftOptions {
        optimize: optimize || a.stats,
        ..LiftOptions::default()
    };
    let lifted = lift_block(&spec, &view, a.addr, opts, None).map_err(user)?;
    if a.stats {
        let after = count_ops(&lifted.block);
        let before = lifted.raw_ops;
        let pct = if before == 0 {
            0.0
        } else {
            100.0 * (before - after.min(before)) as f64 / before as f64
        };
        println!("before={} after={} reduction={:.1}%", before, after, pct);
    } else {
        print!("{}", render_block(&lifted.block, &spec.spaces));
    }
    if let Some(d) = &lifted.diagnostic {
        eprintln!("note: {}", d);
    }
    Ok(())
}

fn cmd_asm(spec: &Path, source: &Path, output: &Path, base: u64) -> CmdResult {
    let spec = load_spec(spec)?;
    let a = rehost::asm::assemble(&spec, &read(source)?, base).map_err(|e| Failure::User(format!("{}: {}", source.display(), e)))?;
    std::fs::write(output, &a.bytes).map_err(|e| Failure::User(format!("{}: {}", output.display(), e)))?;
    let sym = output.with_extension("sym");
    std::fs::write(&sym, a.symbol_listing()).map_err(|e| Failure::User(format!("{}: {}", sym.display(), e)))?;
    println!("{} bytes, {} symbols", a.bytes.len(), a.symbols.len());
    Ok(())
}

fn cmd_solve(file: &Path, external: Option<&str>) -> CmdResult {
    let cs = parse_constraints(&read(file)?).map_err(|e| Failure::User(format!("{}: {}", file.display(), e)))?;
    let opts = SolveOptions {
        external: external.map(|c| c.split_whitespace().map(String::from).collect()),
    };
    match solve(&cs, &opts) {
        SolverResult::Sat(m) => {
            let vals: Vec<String> = m.iter().map(|(id, v)| format!("v{}=0x{:x}", id, v)).collect();
            println!("sat {}", vals.join(" "));
        }
        SolverResult::Unsat => println!("unsat"),
        SolverResult::Unknown(why) => println!("unknown: {}", why),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let res = std::panic::catch_unwind(|| match &cli.cmd {
        Cmd::Run { config } => cmd_run(config, None),
        Cmd::Fuzz { config } => cmd_fuzz(config),
        Cmd::Lift(a) => cmd_lift(a),
        Cmd::Asm { spec, source, output, base } => cmd_asm(spec, source, output, *base),
        Cmd::Trace { config, out } => cmd_run(config, Some(out)),
        Cmd::Solve { file, external } => cmd_solve(file, external.as_deref()),
    });
    match res {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(Failure::User(m))) => {
            eprintln!("error: {}", m);
            ExitCode::from(1)
        }
        Ok(Err(Failure::Internal(m))) => {
            eprintln!("internal error: {}", m);
            ExitCode::from(2)
        }
        Err(_) => ExitCode::from(2),
    }
}
