//! Command-line driver for scenarios.
//!
//! Exit status: 0 on success, 1 on usage or input errors, 2 on numerical
//! failures. Errors print one `error code=<code> message=<text>` line on stderr.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use eit_core::harness::{
    export, gradient_check, run_stage1, run_stage2, Scenario, ScenarioConfig,
};

/// Gradient-check acceptance threshold on the relative error.
const GRADCHECK_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Parser)]
#[command(name = "eit", version, about = "Complete-electrode-model EIT reconstruction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Scenario file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Number of rotations used by the cost (1 = single pattern).
    #[arg(long, global = true)]
    rotations: Option<usize>,
    /// Regularization weight.
    #[arg(long, global = true)]
    beta: Option<f64>,
    /// Seed for gradcheck perturbations.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads for the solves (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the mesh and electrodes and write mesh.txt.
    Mesh,
    /// Fit U* at the true conductivity.
    Stage1,
    /// Reconstruct from the stage-1 outputs found in --out.
    Stage2,
    /// Stage 1 followed by stage 2.
    Reconstruct,
    /// Finite-difference check of the gradient at random feasible points.
    Gradcheck {
        #[arg(long, default_value_t = 3)]
        samples: usize,
        #[arg(long, default_value_t = 1e-6)]
        step: f64,
    },
    /// Print the metrics of a finished run in --out.
    Report,
}

fn main() -> ExitCode {
    cli_main(std::env::args_os())
}

fn cli_main<I: IntoIterator<Item = std::ffi::OsString>>(argv: I) -> ExitCode {
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            if usage {
                eprintln!("error code=usage message={}", first_line(&e.to_string()));
                return ExitCode::from(1);
            }
            return ExitCode::SUCCESS;
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            let (code, status) = match err.downcast_ref::<eit_core::Error>() {
                Some(e) if e.is_numerical() => (e.code(), 2),
                Some(e) => (e.code(), 1),
                None => ("usage", 1),
            };
            eprintln!("error code={code} message={}", first_line(&format!("{err:#}")));
            ExitCode::from(status)
        }
    }
}

fn first_line(s: &str) -> &str {
    s.lines().next().unwrap_or("")
}

fn load_scenario(cli: &Cli) -> anyhow::Result<Scenario> {
    let Some(path) = &cli.config else {
        bail!("--config is required for this command");
    };
    let mut config = ScenarioConfig::load(path).with_context(|| format!("loading {}", path.display()))?;
    if let Some(r) = cli.rotations {
        config.gpm.rotations = Some(r);
    }
    if let Some(b) = cli.beta {
        config.gpm.beta = b;
    }
    Ok(Scenario::build(config)?)
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    let out: &Path = &cli.out;
    match cli.command {
        Command::Mesh => {
            let scenario = load_scenario(&cli)?;
            export::write_mesh_file(out, &scenario.disc)?;
            println!(
                "mesh: {} nodes, {} elements, {} electrodes -> {}",
                scenario.disc.num_nodes(),
                scenario.disc.num_elements(),
                scenario.disc.num_electrodes(),
                out.join(export::MESH_FILE).display()
            );
        }
        Command::Stage1 => {
            let scenario = load_scenario(&cli)?;
            let s1 = run_stage1(&scenario)?;
            export::write_stage1(out, &scenario, &s1)?;
            println!(
                "stage1: residual {:.3e} (relative {:.3e}), rank {}",
                s1.fit.residual, s1.fit.relative_residual, s1.fit.rank
            );
        }
        Command::Stage2 => {
            let scenario = load_scenario(&cli)?;
            let s1 = export::read_stage1(out, &scenario)?;
            stage2(&scenario, &s1, out)?;
        }
        Command::Reconstruct => {
            let scenario = load_scenario(&cli)?;
            let s1 = run_stage1(&scenario)?;
            export::write_stage1(out, &scenario, &s1)?;
            stage2(&scenario, &s1, out)?;
        }
        Command::Gradcheck { samples, step } => {
            let scenario = load_scenario(&cli)?;
            let s1 = run_stage1(&scenario)?;
            let system = scenario.disc.assemble(s1.sigma_true.values())?;
            let meas = eit_core::electrode_model::generate_measurements(&system, s1.u_star())?;
            let gpm = scenario.config.gpm_config()?;
            let check = gradient_check(
                &scenario.disc,
                &meas,
                scenario.bounds,
                gpm.beta,
                gpm.rotations,
                samples,
                step,
                cli.seed,
            )?;
            let max = check.max_error();
            println!("gradcheck: max relative error {max:.3e} over {samples} samples");
            if !(max <= GRADCHECK_TOLERANCE) {
                eprintln!("error code=gradcheck message=relative error {max:e} exceeds {GRADCHECK_TOLERANCE:e}");
                return Ok(ExitCode::from(2));
            }
        }
        Command::Report => {
            let m = export::read_metrics(out)?;
            println!("final cost            {:.6e}", m.final_cost);
            println!("voltage rel. error    {:.6}", m.voltage_relative_error);
            println!("conductivity rel. err {:.6}", m.conductivity_relative_error);
            println!("iterations            {} ({})", m.iterations, m.stop_reason);
            println!("rotations / beta      {} / {:e}", m.rotations, m.beta);
            println!("wall time             {:.2} s", m.wall_time_s);
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn stage2(scenario: &Scenario, s1: &eit_core::harness::Stage1Result, out: &Path) -> anyhow::Result<()> {
    let gpm = scenario.config.gpm_config()?;
    let s2 = run_stage2(scenario, s1, &gpm, None)?;
    export::write_stage2(out, scenario, s1, &s2)?;
    let m = &s2.metrics;
    println!(
        "stage2: N={} cost {:.4e} -> {:.4e}, voltage err {:.4}, conductivity err {:.4}",
        m.iterations, m.initial_cost, m.final_cost, m.voltage_relative_error, m.conductivity_relative_error
    );
    Ok(())
}
