//! Command-line frontend: load a guest ELF, run it under the configured
//! models, and report statistics.

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use rvcycle_core::config::{EmulationTarget, ExecMode, MemoryModelKind, PipelineKind, SimConfig};
use rvcycle_cli::guests;
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "rvcycle",
    about = "Cycle-level multi-core RISC-V system simulator with cached block translation",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Option<Command>,

    /// Guest ELF image to run.
    image: Option<PathBuf>,

    /// Config file (TOML); flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Number of simulated cores.
    #[arg(long)]
    cores: Option<usize>,

    /// Emulation target.
    #[arg(long, value_parser = parse_target)]
    target: Option<EmulationTarget>,

    /// Pipeline model, either one name or one per core (comma separated):
    /// atomic, simple, inorder.
    #[arg(long, value_delimiter = ',')]
    pipeline: Option<Vec<String>>,

    /// Memory model: atomic, tlb, cache, mesi.
    #[arg(long, value_parser = parse_memory)]
    memory: Option<MemoryModelKind>,

    /// L0 cache line size (64 or 4096).
    #[arg(long)]
    line_size: Option<u64>,

    /// Execution mode: lockstep or parallel.
    #[arg(long, value_parser = parse_mode)]
    mode: Option<ExecMode>,

    /// Write machine-readable statistics to this file.
    #[arg(long)]
    stats: Option<PathBuf>,

    /// Stop after N retired instructions (all cores).
    #[arg(long)]
    max_insns: Option<u64>,

    /// Dump translated blocks to stderr.
    #[arg(long)]
    dump_blocks: bool,

    /// Require a deterministic (lockstep-only) run.
    #[arg(long)]
    deterministic: bool,

    /// Guest RAM size in bytes.
    #[arg(long)]
    memory_size: Option<u64>,

    /// Report N guest doublewords starting at ADDR in the stats
    /// (format: ADDR:N, e.g. 0x80400000:8).
    #[arg(long, value_parser = parse_probe)]
    probe: Option<(u64, u64)>,

    /// Arguments passed to user-target guests (argv[1..]).
    #[arg(last = true)]
    guest_args: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the bundled micro-benchmark guest images into a directory.
    GenGuests { dir: PathBuf },
}

fn parse_target(s: &str) -> Result<EmulationTarget, String> {
    match s {
        "user" => Ok(EmulationTarget::User),
        "supervisor" => Ok(EmulationTarget::Supervisor),
        "machine" => Ok(EmulationTarget::Machine),
        _ => Err(format!("unknown target '{s}' (user|supervisor|machine)")),
    }
}

fn parse_memory(s: &str) -> Result<MemoryModelKind, String> {
    match s {
        "atomic" => Ok(MemoryModelKind::Atomic),
        "tlb" => Ok(MemoryModelKind::Tlb),
        "cache" => Ok(MemoryModelKind::Cache),
        "mesi" => Ok(MemoryModelKind::Mesi),
        _ => Err(format!("unknown memory model '{s}' (atomic|tlb|cache|mesi)")),
    }
}

fn parse_mode(s: &str) -> Result<ExecMode, String> {
    match s {
        "lockstep" => Ok(ExecMode::Lockstep),
        "parallel" => Ok(ExecMode::Parallel),
        _ => Err(format!("unknown mode '{s}' (lockstep|parallel)")),
    }
}

fn parse_pipeline(s: &str) -> Result<PipelineKind, String> {
    match s {
        "atomic" => Ok(PipelineKind::Atomic),
        "simple" => Ok(PipelineKind::Simple),
        "inorder" => Ok(PipelineKind::InOrder),
        _ => Err(format!("unknown pipeline model '{s}' (atomic|simple|inorder)")),
    }
}

fn parse_probe(s: &str) -> Result<(u64, u64), String> {
    let (addr, count) = s.split_once(':').ok_or("probe format is ADDR:COUNT")?;
    let addr = parse_u64(addr).map_err(|e| e.to_string())?;
    let count = parse_u64(count).map_err(|e| e.to_string())?;
    Ok((addr, count))
}

fn parse_u64(s: &str) -> Result<u64> {
    if let Some(hex) = s.strip_prefix("0x") {
        u64::from_str_radix(hex, 16).context("bad hex number")
    } else {
        s.parse().context("bad number")
    }
}

fn main() -> Result<()> {
    env_logger::init();
    let cli = Cli::parse();

    if let Some(Command::GenGuests { dir }) = &cli.command {
        std::fs::create_dir_all(dir)?;
        for (name, image) in guests::all_guests() {
            let path = dir.join(name);
            std::fs::write(&path, image)?;
            println!("wrote {}", path.display());
        }
        return Ok(());
    }

    let Some(image_path) = &cli.image else {
        bail!("no guest image given (try --help)");
    };

    let mut cfg = match &cli.config {
        Some(p) => rvcycle_cli::load_config(p)?,
        None => SimConfig::default(),
    };
    if let Some(n) = cli.cores {
        cfg.cores = n;
    }
    if let Some(t) = cli.target {
        cfg.target = t;
    }
    if let Some(p) = &cli.pipeline {
        cfg.pipeline = p
            .iter()
            .map(|s| parse_pipeline(s).map_err(anyhow::Error::msg))
            .collect::<Result<_>>()?;
    }
    if let Some(mk) = cli.memory {
        cfg.memory.model = mk;
    }
    if let Some(ls) = cli.line_size {
        cfg.memory.line_size = ls;
    }
    if let Some(mode) = cli.mode {
        cfg.mode = mode;
    }
    if let Some(n) = cli.max_insns {
        cfg.max_insns = Some(n);
    }
    if let Some(sz) = cli.memory_size {
        cfg.memory_size = sz;
    }
    if cli.dump_blocks || std::env::var_os("RVCYCLE_DUMP_BLOCKS").is_some() {
        cfg.dump_blocks = true;
    }
    if cli.deterministic {
        cfg.deterministic = true;
    }
    if let Some(p) = cli.probe {
        cfg.probe = Some(p);
    }
    if !cli.guest_args.is_empty() {
        let name = image_path.file_name().map(|s| s.to_string_lossy().into_owned());
        cfg.args = std::iter::once(name.unwrap_or_else(|| "guest".into()))
            .chain(cli.guest_args.iter().cloned())
            .collect();
    } else if cfg.args.is_empty() {
        cfg.args = vec!["guest".into()];
    }

    let cfg = cfg.validate().map_err(|e| anyhow::anyhow!("invalid configuration: {e}"))?;
    let image = std::fs::read(image_path)
        .with_context(|| format!("reading {}", image_path.display()))?;

    let mut m = rvcycle_core::machine::Machine::with_console(cfg, &image, true)?;
    // Piped stdin becomes guest console input.
    if !std::io::IsTerminal::is_terminal(&std::io::stdin()) {
        use std::io::Read;
        let mut input = Vec::new();
        let _ = std::io::stdin().read_to_end(&mut input);
        m.feed_console_input(&input);
    }
    let out = rvcycle_core::sched::run(&mut m);
    let _machine = m;
    if let Some(f) = &out.fatal {
        eprintln!("simulation error: {f}");
        eprintln!("{}", out.stats.human_readable());
        std::process::exit(2);
    }
    eprintln!("{}", out.stats.human_readable());
    if let Some(path) = &cli.stats {
        std::fs::write(path, out.stats.machine_readable())
            .with_context(|| format!("writing stats to {}", path.display()))?;
    }
    std::process::exit(out.exit_code.clamp(0, 255) as i32);
}
