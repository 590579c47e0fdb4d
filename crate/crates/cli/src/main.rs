//! `qdefect`: configuration-driven pipeline over Q-tensor fields on the unit
//! ball — synthesize or minimize, analyze the defect set, verify invariants.
//!
//! Exit codes: 0 success, 1 usage/configuration/IO error, 2 solver hit the
//! iteration cap without converging.

mod config;
mod verify;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use nalgebra::Vector3;
use qdefect::defects::run_analysis;
use qdefect::field::{
    hedgehog_boundary, min_boundary_beta, synthetic_disclination, DisclinationCase, GridSpec,
    QField,
};
use qdefect::io::{read_snapshot, write_snapshot, write_trace_csv, write_vtk_scalar};
use qdefect::minimize::{apply_random_tangent_perturbation, minimize, SolverReport, StopReason};
use qdefect::qtensor::{make_uniaxial, UniaxialSign};
use serde::Serialize;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use config::{BoundaryConfig, InitConfig, LoadedConfig, SyntheticConfig};

#[derive(Parser)]
#[command(name = "qdefect", version, about)]
struct Cli {
    /// Worker threads for the data-parallel kernels (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Minimize the constrained energy from the configured boundary data.
    Minimize {
        #[arg(long)]
        config: PathBuf,
        /// Override the output directory from the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic field snapshot described by the config.
    Synthesize {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Analyze a field snapshot: defect report plus β and s exports.
    Analyze {
        #[arg(long)]
        snapshot: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the built-in property batteries and print a pass/fail table.
    Verify {
        /// Test hook: additive perturbation injected into the tau-order check.
        #[arg(long, hide = true, default_value_t = 0.0)]
        tau_perturb: f64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        // A failure here only means a pool already exists (e.g. in tests).
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    let outcome = match cli.command {
        Command::Minimize { config, out } => cmd_minimize(&config, out.as_deref()),
        Command::Synthesize { config, out } => cmd_synthesize(&config, out.as_deref()),
        Command::Analyze {
            snapshot,
            config,
            out,
        } => cmd_analyze(&snapshot, &config, out.as_deref()),
        Command::Verify { tau_perturb } => cmd_verify(tau_perturb),
    };
    match outcome {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}

fn output_dir(loaded: &LoadedConfig, out: Option<&Path>) -> Result<PathBuf> {
    let dir = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| loaded.config.output.dir.clone());
    std::fs::create_dir_all(&dir)
        .with_context(|| format!("cannot create output directory {}", dir.display()))?;
    Ok(dir)
}

#[derive(Serialize)]
struct SolverReportFile {
    config_hash: String,
    grid_n: usize,
    #[serde(flatten)]
    report: SolverReport,
}

fn build_initial_field(loaded: &LoadedConfig) -> Result<QField> {
    let spec = GridSpec::new(loaded.config.grid.n)?;
    let mut field = match loaded.config.boundary {
        BoundaryConfig::Hedgehog => hedgehog_boundary(spec),
    };
    let min_beta = min_boundary_beta(&field);
    if min_beta < -1.0 + loaded.config.boundary_beta_margin {
        anyhow::bail!(
            "boundary data rejected: min β = {min_beta:.4} is below -1 + {}",
            loaded.config.boundary_beta_margin
        );
    }
    if let InitConfig::Random { eps } = loaded.config.init {
        apply_random_tangent_perturbation(&mut field, eps, loaded.config.solver.seed);
    }
    Ok(field)
}

fn cmd_minimize(config_path: &Path, out: Option<&Path>) -> Result<ExitCode> {
    let loaded = config::load(config_path)?;
    let dir = output_dir(&loaded, out)?;
    let mut field = build_initial_field(&loaded)?;
    let (report, trace) = minimize(&mut field, &loaded.config.solver)?;

    write_snapshot(&field, &dir.join(&loaded.config.output.snapshot))?;
    write_trace_csv(&trace, &dir.join(&loaded.config.output.trace))?;
    let report_file = SolverReportFile {
        config_hash: loaded.hash.clone(),
        grid_n: loaded.config.grid.n,
        report,
    };
    std::fs::write(
        dir.join(&loaded.config.output.solver_report),
        serde_json::to_vec_pretty(&report_file)?,
    )?;
    println!(
        "minimize: {} iterations, energy {:.6}, grad sup {:.3e}, stop {:?}",
        report.iterations, report.final_total, report.final_grad_sup, report.stop
    );
    Ok(match report.stop {
        StopReason::MaxIters => ExitCode::from(2),
        _ => ExitCode::SUCCESS,
    })
}

fn cmd_synthesize(config_path: &Path, out: Option<&Path>) -> Result<ExitCode> {
    let loaded = config::load(config_path)?;
    let dir = output_dir(&loaded, out)?;
    let spec = GridSpec::new(loaded.config.grid.n)?;
    let field = match loaded.config.synthetic {
        SyntheticConfig::HalfDegree { axis, amplitude } => synthetic_disclination(
            spec,
            &Vector3::from(axis),
            amplitude,
            DisclinationCase::HalfDegree,
        )?,
        SyntheticConfig::Exchange {
            axis,
            amplitude,
            lambda,
        } => synthetic_disclination(
            spec,
            &Vector3::from(axis),
            amplitude,
            DisclinationCase::Exchange { lambda },
        )?,
        SyntheticConfig::Uniform { director } => {
            let n = Vector3::from(director).normalize();
            QField::uniform(spec, make_uniaxial(&n, UniaxialSign::Positive)?)
        }
    };
    let path = dir.join(&loaded.config.output.snapshot);
    write_snapshot(&field, &path)?;
    println!("synthesize: wrote {}", path.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_analyze(snapshot: &Path, config_path: &Path, out: Option<&Path>) -> Result<ExitCode> {
    let loaded = config::load(config_path)?;
    let dir = output_dir(&loaded, out)?;
    let field = read_snapshot(snapshot)
        .with_context(|| format!("cannot load snapshot {}", snapshot.display()))?;
    let mut report = run_analysis(&field, &loaded.config.analysis);
    report.config_hash = loaded.hash.clone();

    std::fs::write(
        dir.join(&loaded.config.output.report),
        serde_json::to_vec_pretty(&report)?,
    )?;
    let beta = qdefect::defects::beta_field(&field);
    write_vtk_scalar(&beta, "beta", &dir.join(&loaded.config.output.beta_vtk))?;
    let s = qdefect::defects::s_field(&field);
    write_vtk_scalar(&s, "s", &dir.join(&loaded.config.output.s_vtk))?;
    println!(
        "analyze: {} clusters, {} candidates ({} analyzed), min interior beta {:.4}",
        report.cluster_count,
        report.total_candidates,
        report.candidates.len(),
        report.min_beta_interior
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_verify(tau_perturb: f64) -> Result<ExitCode> {
    let results = verify::run_all(tau_perturb);
    let mut all_pass = true;
    println!("{:<26} {:<6} detail", "check", "status");
    for r in &results {
        all_pass &= r.pass;
        println!(
            "{:<26} {:<6} {}",
            r.name,
            if r.pass { "PASS" } else { "FAIL" },
            r.detail
        );
    }
    if all_pass {
        println!("verify: all {} checks passed", results.len());
        Ok(ExitCode::SUCCESS)
    } else {
        let failed: Vec<&str> = results.iter().filter(|r| !r.pass).map(|r| r.name).collect();
        println!("verify: FAILED ({})", failed.join(", "));
        Ok(ExitCode::from(1))
    }
}
