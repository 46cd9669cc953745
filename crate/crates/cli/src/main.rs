//! `phasecorr` command line. Every subcommand builds an experiment config
//! (file, then `--set` overrides, then dedicated flags) and hands it to the
//! runner. Lab units at this boundary: mA, GHz, ps.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use phasecorr::runner::{self, ExperimentConfig, ExperimentKind, EXIT_VALIDATION};

#[derive(Parser)]
#[command(name = "phasecorr", version, about = "Phase-correlation characterisation of gain-switched laser pulse trains")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Pulse (or round) budget.
    #[arg(long, value_name = "N")]
    pulses: Option<usize>,
    /// Worker threads; also the number of concurrent sweep cells.
    #[arg(long, value_name = "N")]
    threads: Option<usize>,
    /// Sets any config key, e.g. `--set model.sigma=0.5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args, Clone, Default)]
struct ModelArgs {
    /// Correlation length.
    #[arg(long)]
    lc: Option<usize>,
    /// Lag weights, comma separated, lag 1 first.
    #[arg(long, value_delimiter = ',')]
    r: Option<Vec<f64>>,
    /// Geometric weight ratio.
    #[arg(long)]
    r0: Option<f64>,
    /// Phase-noise spread (rad).
    #[arg(long)]
    sigma: Option<f64>,
    /// Mean phase increment (rad).
    #[arg(long)]
    delta: Option<f64>,
}

#[derive(Args, Clone, Default)]
struct LaserArgs {
    #[arg(long, value_name = "GHZ")]
    nu_ghz: Option<f64>,
    #[arg(long, value_name = "MA")]
    i_on_ma: Option<f64>,
    #[arg(long, value_name = "MA")]
    i_off_ma: Option<f64>,
    #[arg(long, value_name = "PS")]
    dt_ps: Option<f64>,
}

#[derive(Args, Clone, Default)]
struct NetworkArgs {
    /// Phase CSV (`round_index,phase`) used instead of synthesising.
    #[arg(long, value_name = "PATH")]
    input: Option<PathBuf>,
    /// mzi, cascade or feedback.
    #[arg(long)]
    topology: Option<String>,
    #[arg(long)]
    ell_c: Option<usize>,
    #[arg(long)]
    phase_shift: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    attenuators: Option<Vec<f64>>,
}

#[derive(Args, Clone, Default)]
struct SweepArgs {
    /// Repetition rates (GHz), comma separated.
    #[arg(long, value_delimiter = ',', value_name = "GHZ")]
    nus_ghz: Option<Vec<f64>>,
    /// Off currents (mA), comma separated.
    #[arg(long, value_delimiter = ',', value_name = "MA")]
    i_offs_ma: Option<Vec<f64>>,
}

#[derive(Args, Clone, Default)]
struct Fig3Args {
    #[arg(long, value_delimiter = ',')]
    sigmas: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    r2s: Option<Vec<f64>>,
}

#[derive(Subcommand)]
enum Command {
    /// Runs the experiment named by the config's `kind`.
    Run {
        #[command(flatten)]
        common: Common,
    },
    /// Synthesises a correlated phase sequence.
    SynthPhases {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Integrates the laser rate equations and extracts pulse phases.
    SimulateLaser {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        laser: LaserArgs,
    },
    /// Visibility statistic at fixed interferometer settings.
    Visibility {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        network: NetworkArgs,
    },
    /// Sweeps interferometer settings and estimates the phase model.
    Calibrate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        network: NetworkArgs,
    },
    /// Min-entropy bound `q` for a phase model.
    EstimateQ {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Second-order laser table over repetition rates and off currents.
    Table1 {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        laser: LaserArgs,
        #[command(flatten)]
        sweep: SweepArgs,
    },
    /// First-order laser table over repetition rates and off currents.
    Table2 {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        laser: LaserArgs,
        #[command(flatten)]
        sweep: SweepArgs,
    },
    /// `q` over a grid of spreads and lag-2 weights.
    Fig3 {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        grid: Fig3Args,
    },
    /// Visibility surfaces over phase shift and attenuation per laser setting.
    Fig4 {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        laser: LaserArgs,
        #[command(flatten)]
        sweep: SweepArgs,
    },
}

fn list(v: &[f64]) -> String {
    let items: Vec<String> = v.iter().map(|x| format!("{x:?}")).collect();
    format!("[{}]", items.join(", "))
}

fn push<T: std::fmt::Debug>(sets: &mut Vec<String>, key: &str, v: &Option<T>) {
    if let Some(v) = v {
        sets.push(format!("{key}={v:?}"));
    }
}

impl ModelArgs {
    fn sets(&self, out: &mut Vec<String>) {
        push(out, "model.lc", &self.lc);
        if let Some(r) = &self.r {
            out.push(format!("model.r={}", list(r)));
        }
        push(out, "model.r0", &self.r0);
        push(out, "model.sigma", &self.sigma);
        push(out, "model.delta_phi_bar", &self.delta);
    }
}

impl LaserArgs {
    fn sets(&self, out: &mut Vec<String>) {
        push(out, "laser.nu_ghz", &self.nu_ghz);
        push(out, "laser.i_on_ma", &self.i_on_ma);
        push(out, "laser.i_off_ma", &self.i_off_ma);
        push(out, "laser.dt_ps", &self.dt_ps);
    }
}

impl NetworkArgs {
    fn sets(&self, out: &mut Vec<String>) {
        if let Some(p) = &self.input {
            out.push(format!("sequence.input={:?}", p.display().to_string()));
        }
        push(out, "network.topology", &self.topology);
        push(out, "network.ell_c", &self.ell_c);
        push(out, "network.phase_shift", &self.phase_shift);
        if let Some(a) = &self.attenuators {
            out.push(format!("network.attenuators={}", list(a)));
        }
    }
}

impl SweepArgs {
    fn sets(&self, out: &mut Vec<String>) {
        if let Some(v) = &self.nus_ghz {
            out.push(format!("tables.nus_ghz={}", list(v)));
        }
        if let Some(v) = &self.i_offs_ma {
            out.push(format!("tables.i_offs_ma={}", list(v)));
        }
    }
}

impl Fig3Args {
    fn sets(&self, out: &mut Vec<String>) {
        if let Some(v) = &self.sigmas {
            out.push(format!("fig3.sigmas={}", list(v)));
        }
        if let Some(v) = &self.r2s {
            out.push(format!("fig3.r2s={}", list(v)));
        }
    }
}

/// Config key that `--pulses` sets for each experiment kind.
fn pulses_key(kind: ExperimentKind) -> Option<&'static str> {
    use ExperimentKind::*;
    match kind {
        SimulateLaser => Some("laser.pulses"),
        Table1 | Table2 | Fig4 => Some("tables.pulses"),
        SynthPhases | Visibility | Calibrate => Some("sequence.rounds"),
        EstimateQ | Fig3 => None,
    }
}

fn build(command: Command) -> anyhow::Result<(ExperimentConfig, Option<usize>)> {
    let mut sets = Vec::new();
    let (kind, common) = match command {
        Command::Run { common } => (None, common),
        Command::SynthPhases { common, model } => {
            model.sets(&mut sets);
            (Some(ExperimentKind::SynthPhases), common)
        }
        Command::SimulateLaser { common, laser } => {
            laser.sets(&mut sets);
            (Some(ExperimentKind::SimulateLaser), common)
        }
        Command::Visibility { common, model, network } => {
            model.sets(&mut sets);
            network.sets(&mut sets);
            (Some(ExperimentKind::Visibility), common)
        }
        Command::Calibrate { common, model, network } => {
            model.sets(&mut sets);
            network.sets(&mut sets);
            (Some(ExperimentKind::Calibrate), common)
        }
        Command::EstimateQ { common, model } => {
            model.sets(&mut sets);
            (Some(ExperimentKind::EstimateQ), common)
        }
        Command::Table1 { common, laser, sweep } => {
            laser.sets(&mut sets);
            sweep.sets(&mut sets);
            (Some(ExperimentKind::Table1), common)
        }
        Command::Table2 { common, laser, sweep } => {
            laser.sets(&mut sets);
            sweep.sets(&mut sets);
            (Some(ExperimentKind::Table2), common)
        }
        Command::Fig3 { common, grid } => {
            grid.sets(&mut sets);
            (Some(ExperimentKind::Fig3), common)
        }
        Command::Fig4 { common, laser, sweep } => {
            laser.sets(&mut sets);
            sweep.sets(&mut sets);
            (Some(ExperimentKind::Fig4), common)
        }
    };
    if kind.is_none() && common.config.is_none() {
        anyhow::bail!("`run` needs --config");
    }
    let mut overrides = common.set.clone();
    overrides.extend(sets);
    let kind = ExperimentConfig::assemble(common.config.as_deref(), kind, &overrides)?.kind;
    if let Some(n) = common.pulses {
        let key = pulses_key(kind).ok_or_else(|| anyhow::anyhow!("--pulses does not apply to {}", kind.name()))?;
        overrides.push(format!("{key}={n}"));
    }
    if let Some(n) = common.threads {
        if matches!(kind, ExperimentKind::Table1 | ExperimentKind::Table2 | ExperimentKind::Fig4) {
            overrides.push(format!("tables.parallelism={n}"));
        }
    }
    let mut cfg = ExperimentConfig::assemble(common.config.as_deref(), Some(kind), &overrides)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = common.out {
        cfg.out_dir = out;
    }
    Ok((cfg, common.threads))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (cfg, threads) = match build(cli.command) {
        Ok(x) => x,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(EXIT_VALIDATION as u8);
        }
    };
    if let Some(n) = threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_VALIDATION as u8);
        }
    }
    let result = runner::run_config(cfg);
    let code = runner::exit_code(&result);
    match &result {
        Ok(outcome) => {
            let m = &outcome.manifest;
            println!(
                "{}: {:?}, {} files in {}",
                m.kind.name(),
                m.status,
                m.outputs.len() + 1,
                outcome.out_dir.display()
            );
            for e in &m.outputs {
                println!("  {}  {}", &e.sha256[..12], e.path);
            }
        }
        Err(e) => eprintln!("error: {e}"),
    }
    ExitCode::from(code as u8)
}
