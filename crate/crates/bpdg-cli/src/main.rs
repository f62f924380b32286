use bpdg::config::{AlphaPolicy, SimulationConfig};
use bpdg::driver::{self, band_of};
use bpdg::integrator::RkOrder;
use bpdg::{Error, Result};
use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

const DEFAULT_CONFIG: &str = include_str!("../../../presets/periodic-relaxation.cfg");

#[derive(Parser)]
#[command(name = "bpdg", version, about = "DG solver for the 1D-x / 2D-p Boltzmann-Poisson system")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Args, Clone)]
struct Overrides {
    /// Configuration file; the periodic-relaxation preset when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    t_final: Option<f64>,
    #[arg(long)]
    max_steps: Option<usize>,
    /// on|off
    #[arg(long, value_parser = on_off)]
    limiter: Option<bool>,
    #[arg(long)]
    cfl_safety: Option<f64>,
    /// Fixed collision/transport split in (0, 1), or "auto".
    #[arg(long)]
    alpha: Option<String>,
    #[arg(long)]
    rk: Option<u32>,
    #[arg(long)]
    snapshot_every: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Time loop with diagnostics CSV and snapshots.
    Run(Overrides),
    /// Divergence and H-orthogonality of the transport fields.
    VerifyBeta(Overrides),
    /// Property batteries of every module.
    VerifyInvariants(Overrides),
    /// Free-streaming refinement study in N_x.
    Convergence {
        #[arg(long, default_value_t = 3)]
        levels: usize,
        #[arg(long, default_value_t = 16)]
        base_nx: usize,
    },
}

fn on_off(s: &str) -> std::result::Result<bool, String> {
    match s {
        "on" | "true" => Ok(true),
        "off" | "false" => Ok(false),
        _ => Err(format!("expected on or off, got {s:?}")),
    }
}

fn load(o: &Overrides) -> Result<SimulationConfig> {
    let mut cfg = match &o.config {
        Some(p) => SimulationConfig::from_file(p)?,
        None => SimulationConfig::parse_str(DEFAULT_CONFIG)?,
    };
    if let Some(v) = o.t_final {
        cfg.run.t_final = v;
    }
    if let Some(v) = o.max_steps {
        cfg.run.max_steps = v;
    }
    if let Some(v) = o.limiter {
        cfg.numerics.limiter = v;
    }
    if let Some(v) = o.cfl_safety {
        cfg.numerics.cfl_safety = v;
    }
    if let Some(a) = &o.alpha {
        cfg.numerics.alpha = match a.as_str() {
            "auto" => AlphaPolicy::Auto,
            s => AlphaPolicy::Fixed(s.parse().map_err(|_| Error::Config(format!("--alpha: expected auto or a number, got {s:?}")))?),
        };
    }
    if let Some(v) = o.rk {
        cfg.numerics.rk = RkOrder::from_int(v)?;
    }
    if let Some(v) = o.snapshot_every {
        cfg.run.snapshot_every = v;
    }
    if let Some(v) = o.seed {
        cfg.run.seed = v;
    }
    if let Some(d) = &o.output_dir {
        cfg.run.output_dir = d.to_string_lossy().into_owned();
    }
    // overrides go through the same validation as the file
    SimulationConfig::parse_str(&cfg.to_text())
}

fn run(o: &Overrides) -> Result<()> {
    let cfg = load(o)?;
    let dir = PathBuf::from(&cfg.run.output_dir);
    let s = driver::run(&cfg, Some(&dir))?;
    let last = s.reports.last().expect("initial row");
    println!("steps {}  t {:.6e}  mass {:.12e}  entropy {:.12e}", s.steps, s.t, last.mass, last.entropy_norm);
    println!("min control / max control over run: {:.3e}", s.worst_min_rel);
    match s.monitor.flattened_at {
        Some(t) => println!("current flattened at t = {t:.6e}"),
        None => println!("current not flattened"),
    }
    println!(
        "entropy: {} checked steps, {} violations, {} increases before flattening",
        s.monitor.checked_steps,
        s.monitor.violations.len(),
        s.monitor.pre_flat_increases.len()
    );
    println!("output: {}", dir.display());
    s.outcome()
}

fn verify_beta(o: &Overrides) -> Result<()> {
    let cfg = load(o)?;
    let band = band_of(&cfg)?;
    let alpha_k = if cfg.band.alpha_k > 0.0 { cfg.band.alpha_k } else { 0.5 };
    let reports = bpdg::curvilinear::verify_beta(band, cfg.poisson.q, alpha_k, cfg.run.seed, 1000, 1e-4)?;
    println!("{:<10} {:>7} {:>12} {:>14}  result", "family", "points", "max|div|/β", "max|β·∂H|/sc");
    for r in &reports {
        println!(
            "{:<10} {:>7} {:>12.3e} {:>14.3e}  {}",
            r.family,
            r.points,
            r.max_div_rel,
            r.max_orth_rel,
            if r.pass { "pass" } else { "FAIL" }
        );
    }
    if reports.iter().all(|r| r.pass) {
        Ok(())
    } else {
        Err(Error::Invariant("transport field identities".into()))
    }
}

fn verify_invariants(o: &Overrides) -> Result<()> {
    let cfg = load(o)?;
    let checks = bpdg::verify::verify_invariants(&cfg)?;
    for c in &checks {
        println!("{} {:<24} {}", if c.pass { "pass" } else { "FAIL" }, c.name, c.detail);
    }
    let failed: Vec<&str> = checks.iter().filter(|c| !c.pass).map(|c| c.name.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::Invariant(failed.join(", ")))
    }
}

fn convergence(levels: usize, base_nx: usize) -> Result<()> {
    let rows = driver::convergence(levels, base_nx)?;
    println!("{:>6} {:>7} {:>14} {:>7}", "N_x", "steps", "L2 error", "order");
    for r in &rows {
        let order = r.order.map(|o| format!("{o:.3}")).unwrap_or_else(|| "-".into());
        println!("{:>6} {:>7} {:>14.6e} {:>7}", r.nx, r.steps, r.error, order);
    }
    match rows.last().and_then(|r| r.order) {
        Some(o) if o < 1.5 => Err(Error::Invariant(format!("observed order {o:.3} below 1.5"))),
        _ => Ok(()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            // exit code 2 is reserved for step failures
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    let res = match &cli.cmd {
        Command::Run(o) => run(o),
        Command::VerifyBeta(o) => verify_beta(o),
        Command::VerifyInvariants(o) => verify_invariants(o),
        Command::Convergence { levels, base_nx } => convergence(*levels, *base_nx),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
