//! `stmg`: convergence studies, single solves and section profiles.

mod config;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use log::info;

use config::{Config, ProblemKind};
use stmg_core::driver::{march, RunReport, SectionTimes};

const GIT_REVISION: &str = env!("STMG_GIT_REVISION");

#[derive(Parser)]
#[command(name = "stmg", version, about = "Space-time finite element solver with space-time multigrid")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a configuration entry, e.g. `--set problem.k=2`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    /// Output directory (overrides `output.dir`).
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Print the multigrid hierarchy and exit without solving.
    #[arg(long, global = true)]
    dry_run: bool,
}

#[derive(Subcommand, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Run every configured refinement and write the EOC table.
    Convergence,
    /// Run the finest configured refinement once.
    Solve,
    /// Like `solve`, reporting the time spent per program section.
    Profile,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Convergence => "convergence",
            Command::Solve => "solve",
            Command::Profile => "profile",
        }
    }
}

fn load(cli: &Cli) -> Result<Config> {
    let text = match &cli.config {
        Some(p) => Some(std::fs::read_to_string(p).with_context(|| format!("cannot read {}", p.display()))?),
        None => None,
    };
    let mut overrides = cli.set.clone();
    if let Some(o) = &cli.output {
        overrides.push(format!("output.dir={}", toml::Value::String(o.display().to_string())));
    }
    if let Some(t) = cli.threads {
        overrides.push(format!("threads={t}"));
    }
    if let Some(s) = cli.seed {
        overrides.push(format!("seed={s}"));
    }
    Config::load(text.as_deref(), &overrides)
}

fn refinements(cfg: &Config, cmd: Command) -> Vec<usize> {
    match cmd {
        Command::Convergence => cfg.problem.refinements.clone(),
        _ => vec![cfg.finest_refinement()],
    }
}

fn dry_run(cfg: &Config, cmd: Command) -> Result<()> {
    for r in refinements(cfg, cmd) {
        let spec = cfg.spec(r)?;
        println!(
            "r={r}: {} steps of size {:.6e}, {} cells per axis, batch {}",
            spec.n_steps(),
            spec.tau(),
            spec.cells_per_axis(),
            spec.batch
        );
        println!("  {:>5} {:>10} {:>10} {:>2} {:>2} {:>7} {:>9}", "level", "coarsening", "mesh_level", "p", "k", "n_steps", "unknowns");
        for (l, d) in spec.plan()?.iter().enumerate() {
            let nodes = (spec.base_cells << d.mesh_level) * d.p + 1;
            let n_x = nodes.pow(spec.dim as u32);
            let kind = d.coarsening.map_or("-".to_string(), |c| format!("{c:?}").to_lowercase());
            println!(
                "  {l:>5} {kind:>10} {:>10} {:>2} {:>2} {:>7} {:>9}",
                d.mesh_level,
                d.p,
                d.k,
                d.n_steps,
                d.n_steps * spec.scheme.n_t(d.k) * n_x
            );
        }
    }
    Ok(())
}

fn run(cfg: &Config, cmd: Command) -> Result<Vec<RunReport>> {
    let mut runs = Vec::new();
    for r in refinements(cfg, cmd) {
        let spec = cfg.spec(r)?;
        info!("solving r={r} ({} steps)", spec.n_steps());
        let mut rep = march(&spec).with_context(|| format!("run at refinement {r} failed"))?;
        if cfg.problem.kind == ProblemKind::Shm {
            rep.notes.push(format!(
                "initial pulse radius s = {} widened from the unresolvable 0.01 for desk-scale meshes",
                cfg.problem.pulse_width
            ));
        }
        println!(
            "r={r} dofs={} mean_iterations={:.2} l2_l2_u={} time={:.3}s",
            rep.total_dofs,
            rep.mean_iterations,
            rep.errors_u.map_or("-".into(), |e| format!("{:.4e}", e.l2_l2)),
            rep.sections.total
        );
        runs.push(rep);
    }
    Ok(runs)
}

fn write(cfg: &Config, cmd: Command, runs: &[RunReport]) -> Result<()> {
    let dir = Path::new(&cfg.output.dir);
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let doc = output::Document {
        version: env!("CARGO_PKG_VERSION"),
        git_revision: GIT_REVISION,
        command: cmd.name(),
        csv_schema: output::CSV_SCHEMA,
        config: cfg,
        converged: runs.iter().all(|r| r.converged),
        runs,
    };
    output::write_json(&dir.join("report.json"), &doc)?;
    let last = runs.last().context("no runs")?;
    match cmd {
        Command::Convergence => output::write_eoc(&dir.join("eoc.csv"), runs)?,
        Command::Profile => {
            output::write_sections(&dir.join("sections.csv"), &last.sections)?;
            let s = &last.sections;
            for (name, v) in SectionTimes::NAMES.iter().zip(s.values()) {
                println!("{name:<18} {v:>10.4}s {:>6.1}%", 100.0 * v / s.total.max(f64::MIN_POSITIVE));
            }
            println!("{:<18} {:>10.4}s", "Total", s.total);
            println!("{:<18} {:>10.4e}", "DoFs/s", s.dofs_per_second);
        }
        Command::Solve => {}
    }
    if let Some(p) = &last.probes {
        output::write_probes(&dir.join("probes.csv"), p)?;
    }
    if cfg.output.trajectory && cmd != Command::Convergence {
        output::write_trajectory(&dir.join("trajectory.csv"), last)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let cmd = cli.command;
    let cfg = match load(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    if cli.dry_run {
        return match dry_run(&cfg, cmd) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("error: {e:#}");
                ExitCode::from(2)
            }
        };
    }
    if cfg.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cfg.threads).build_global() {
            eprintln!("error: cannot start thread pool: {e}");
            return ExitCode::from(1);
        }
    }
    let result = run(&cfg, cmd).and_then(|runs| write(&cfg, cmd, &runs));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
