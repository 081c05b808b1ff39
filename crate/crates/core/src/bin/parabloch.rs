use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use parabloch::harness::{
    cmd_evolve, cmd_reconstruct, cmd_spectrum, cmd_validate, EvolveOptions, PropagatorChoice,
    RunConfig, RunOptions, SpectrumOptions,
};

/// Wavepacket dynamics in a tilted lattice and reconstruction of the initial
/// packet from the spectrum of a single momentum probe.
#[derive(Parser)]
#[command(name = "parabloch", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML run configuration; defaults apply to anything left out.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory, overriding the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Assert that the run uses no random numbers.
    #[arg(long)]
    seedless: bool,
    /// Propagator for the recorded signal, overriding the config.
    #[arg(long, value_parser = ["eigen", "splitstep"])]
    propagator: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the lattice, classify states and cache the site basis.
    Spectrum {
        #[command(flatten)]
        common: Common,
        /// Choose the reduced mass by scanning for one doublet per well.
        #[arg(long)]
        calibrate: bool,
        /// Also write every site state to states/.
        #[arg(long)]
        states: bool,
    },
    /// Synthesize the packet and record the probe signal.
    Evolve {
        #[command(flatten)]
        common: Common,
        /// Also write the mean position trace.
        #[arg(long)]
        xbar: bool,
    },
    /// Reconstruct the packet from its signal and score it.
    Reconstruct {
        #[command(flatten)]
        common: Common,
    },
    /// Run the invariant suite.
    Validate {
        #[command(flatten)]
        common: Common,
    },
}

fn load(common: &Common) -> parabloch::Result<(RunConfig, RunOptions)> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(out) = &common.out {
        cfg.output.dir = out.clone();
    }
    if let Some(p) = &common.propagator {
        cfg.evolution.propagator = p.parse::<PropagatorChoice>()?;
    }
    Ok((cfg, RunOptions { seedless: common.seedless }))
}

fn run(cli: Cli) -> parabloch::Result<bool> {
    match cli.command {
        Command::Spectrum { common, calibrate, states } => {
            let (cfg, run) = load(&common)?;
            let out = cmd_spectrum(&cfg, &SpectrumOptions { calibrate, states }, &run)?;
            let s = &out.summary;
            if let Some(c) = &out.calibration {
                println!(
                    "calibrated M* = {} (passing interval {}..{})",
                    c.chosen, c.interval.0, c.interval.1
                );
            }
            println!(
                "{} states: {} localized, {} delocalized; epsilon_L = {}",
                s.states,
                s.localized,
                s.delocalized,
                s.epsilon_l.map_or("none".into(), |e| e.to_string())
            );
            match &s.pairing_error {
                None => println!("site basis {}..={} cached", s.basis_sites.0, s.basis_sites.1),
                Some(e) => println!("no site basis: {e}"),
            }
        }
        Command::Evolve { common, xbar } => {
            let (cfg, run) = load(&common)?;
            let out = cmd_evolve(&cfg, &EvolveOptions { xbar }, &run)?;
            println!(
                "{} samples over t = {} with the {} propagator; reference {}",
                out.meta.samples, out.meta.t_total, out.meta.propagator, out.meta.reference
            );
        }
        Command::Reconstruct { common } => {
            let (cfg, run) = load(&common)?;
            let out = cmd_reconstruct(&cfg, &run)?;
            let s = &out.summary;
            println!(
                "sites {}..={}: {} + {} significant coherences, noise floor {:e}",
                s.sites.0, s.sites.1, s.significant_first_fold, s.significant_second_fold, s.noise_floor
            );
            if let Some(f) = s.fidelity {
                println!("fidelity {f}");
            }
            if !s.relative_phase_known {
                println!("warning: phases known only within segments {:?}", s.segments);
            }
        }
        Command::Validate { common } => {
            let (cfg, run) = load(&common)?;
            let report = cmd_validate(&cfg, &run)?;
            for c in &report.checks {
                let status = match (c.passed, c.gating) {
                    (true, _) => "pass",
                    (false, true) => "FAIL",
                    (false, false) => "note",
                };
                let measured = c.measured.map_or("n/a".into(), |v| format!("{v:e}"));
                println!("{status}  {}::{}  {measured}  bound {:?}", c.module, c.name, c.bound);
                if !c.passed {
                    if let Some(d) = &c.detail {
                        println!("      {d}");
                    }
                }
            }
            return Ok(report.passed);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(4),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
