use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rsm_cli::*;
use rsm_core::corrections;
use rsm_core::repair::{Mode, RepairConfig};
use rsm_core::residual::classify_params;
use rsm_sim::fixtures::StopRule;

/// Repair the transition functions of robot state machines from corrections.
#[derive(Parser)]
#[command(name = "rsm", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one episode and record its trace; exits 1 if the episode fails.
    Simulate {
        #[command(flatten)]
        m: Machine,
        #[arg(long)]
        scenario: PathBuf,
        /// Trace output (`*.trace.jsonl`).
        #[arg(long, default_value = "episode.trace.jsonl")]
        out: PathBuf,
    },
    /// Repair parameters so the corrections hold.
    Repair {
        #[command(flatten)]
        m: Machine,
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        corrections: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Write the SMT-LIB encoding here.
        #[arg(long)]
        dump_smt: Option<PathBuf>,
        /// Write every correction's residual transition function here.
        #[arg(long)]
        dump_residual: Option<PathBuf>,
        /// Solutions output; stdout if absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Success-rate heatmap over a grid of scenarios (CSV).
    Evaluate {
        #[command(flatten)]
        m: Machine,
        /// `attacker`, `docker`, or a grid spec file.
        #[arg(long)]
        grid: String,
        /// Overrides the grid's jitter seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-cell difference of two heatmaps (after − before).
    Compare {
        before: PathBuf,
        after: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fork at a premature transition, suppress it until the stop rule holds,
    /// and emit the resulting corrections.
    Continue {
        #[command(flatten)]
        m: Machine,
        #[arg(long)]
        trace: PathBuf,
        /// Timestep of the premature transition.
        #[arg(long)]
        t: usize,
        /// The state that should not have been entered.
        #[arg(long)]
        forbidden: String,
        /// kick-ready<R | ball-dist<R | docked | time>S | step>=N
        #[arg(long)]
        stop: StopRule,
        #[arg(long, default_value_t = 1800)]
        max_steps: usize,
        #[arg(long, value_delimiter = ',')]
        designated: Option<Vec<String>>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Parse, check and classify a transition function.
    Check {
        #[arg(long)]
        rsm: String,
        #[arg(long)]
        nonlinear: bool,
    },
}

#[derive(Args)]
struct Machine {
    /// `.rsm` file or corpus name.
    #[arg(long)]
    rsm: String,
    /// Parameter values, a JSON object.
    #[arg(long)]
    params: PathBuf,
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON file with RepairConfig keys; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long = "H")]
    h: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    backend: Option<String>,
    #[arg(long, value_delimiter = ',')]
    designated: Option<Vec<String>>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    normalize: bool,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RepairConfig, CliError> {
        let mut c = load_config(self.config.as_deref())?;
        if let Some(m) = self.mode {
            c.mode = m;
        }
        if let Some(h) = self.h {
            c.h = h;
        }
        if let Some(e) = self.epsilon {
            c.epsilon = e;
        }
        if let Some(k) = self.k {
            c.k = k;
        }
        if let Some(b) = &self.backend {
            c.backend = b.clone();
        }
        if let Some(d) = &self.designated {
            c.designated = Some(d.clone());
        }
        if let Some(s) = self.seed {
            c.seed = s;
        }
        c.normalize |= self.normalize;
        c.validate()?;
        Ok(c)
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(p) => fs::write(p, text).map_err(|e| CliError::Usage(format!("{}: {e}", p.display()))),
        None => {
            // a closed pipe is not worth a panic
            let _ = std::io::stdout().write_all(text.as_bytes());
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.cmd {
        Cmd::Simulate { m, scenario, out } => {
            let t = load_rsm(&m.rsm)?;
            let p = load_params(&m.params, &t)?;
            let s = load_scenario(&scenario)?;
            let ep = simulate(&t, &p, &s)?;
            ep.trace.save(&out).map_err(|e| CliError::Usage(format!("{}: {e}", out.display())))?;
            let summary = EpisodeSummary::of(&ep);
            println!("{}", serde_json::to_string(&summary).expect("summary serializes"));
            if !ep.success {
                return Err(CliError::Domain(format!("episode failed: {:?}", ep.outcome).to_lowercase()));
            }
        }
        Cmd::Repair { m, trace, corrections, cfg, dump_smt: smt, dump_residual: res, out } => {
            let t = load_rsm(&m.rsm)?;
            let p = load_params(&m.params, &t)?;
            let trace = load_trace(&trace, &t)?;
            let cs = load_corrections(&corrections, &t, &trace)?;
            let cfg = cfg.resolve()?;
            if let Some(path) = res {
                emit(Some(&path), &dump_residuals(&t, &p, &trace, &cs, &cfg)?)?;
            }
            if let Some(path) = smt {
                emit(Some(&path), &dump_smt(&t, &p, &trace, &cs, &cfg)?)?;
            }
            let sols = repair(&t, &p, &trace, &cs, &cfg)?;
            emit(out.as_deref(), &sols.to_json())?;
        }
        Cmd::Evaluate { m, grid, seed, out } => {
            let t = load_rsm(&m.rsm)?;
            let p = load_params(&m.params, &t)?;
            let mut g = load_grid(&grid)?;
            if let Some(s) = seed {
                g.seed = s;
            }
            let h = evaluate(&t, &p, &g)?;
            emit(out.as_deref(), &h.to_csv())?;
            let n: usize = h.cells.iter().map(|c| c.samples).sum();
            eprintln!("aggregate success {:.4} over {n} episodes", h.aggregate());
        }
        Cmd::Compare { before, after, out } => {
            let (a, b) = (load_heatmap(&before)?, load_heatmap(&after)?);
            let d = compare(&a, &b)?;
            emit(out.as_deref(), &d.to_csv())?;
            eprint!("{}", compare_summary(&a, &b));
        }
        Cmd::Continue { m, trace, t: at, forbidden, stop, max_steps, designated, out } => {
            let t = load_rsm(&m.rsm)?;
            let p = load_params(&m.params, &t)?;
            let trace = load_trace(&trace, &t)?;
            let cs = continue_fork(&t, &p, &trace, at, &forbidden, stop, max_steps, designated.as_deref())?;
            emit(out.as_deref(), &corrections::to_json(&cs))?;
        }
        Cmd::Check { rsm, nonlinear } => {
            let t = load_rsm(&rsm)?;
            let c = classify_params(&t, nonlinear);
            println!(
                "{}: {} states, start {}, end {}",
                t.name,
                t.states.len(),
                t.start_state(),
                t.end_state()
            );
            println!("repairable: {}", c.repairable.iter().cloned().collect::<Vec<_>>().join(", "));
            println!("unrepairable: {}", c.unrepairable.iter().cloned().collect::<Vec<_>>().join(", "));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("rsm: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
