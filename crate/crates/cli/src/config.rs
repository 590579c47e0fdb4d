//! JSON run configuration. Unknown keys are rejected so that typos surface
//! as load errors naming the offending key; every tunable has a documented
//! default and all output paths live in the `output` section.

use anyhow::{Context, Result};
use qdefect::defects::AnalysisParams;
use qdefect::minimize::SolverConfig;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub grid: GridConfig,
    pub boundary: BoundaryConfig,
    /// Boundary data is rejected when its minimal β falls below -1 + margin
    /// (the leading eigenvalue must stay simple on the shell).
    pub boundary_beta_margin: f64,
    pub init: InitConfig,
    pub synthetic: SyntheticConfig,
    pub solver: SolverConfig,
    pub analysis: AnalysisParams,
    pub output: OutputConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            grid: GridConfig::default(),
            boundary: BoundaryConfig::default(),
            boundary_beta_margin: 0.1,
            init: InitConfig::default(),
            synthetic: SyntheticConfig::default(),
            solver: SolverConfig::default(),
            analysis: AnalysisParams::default(),
            output: OutputConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    /// Nodes per axis; odd, at least 9.
    pub n: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig { n: 33 }
    }
}

#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, tag = "type", rename_all = "snake_case")]
pub enum BoundaryConfig {
    /// Radial positive-uniaxial data of boundary degree one.
    #[default]
    Hedgehog,
}

#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, tag = "type", rename_all = "snake_case")]
pub enum InitConfig {
    /// Radially interpolated extension of the boundary data.
    #[default]
    Radial,
    /// Radial extension plus a seeded tangent perturbation (uses solver.seed).
    Random { eps: f64 },
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "snake_case")]
pub enum SyntheticConfig {
    /// Half-degree disclination along `axis` with slope `amplitude`.
    HalfDegree { axis: [f64; 3], amplitude: f64 },
    /// Planar eigenvalue-exchange profile with collinearity factor `lambda`.
    Exchange {
        axis: [f64; 3],
        amplitude: f64,
        lambda: f64,
    },
    /// Constant positive-uniaxial state along `director`.
    Uniform { director: [f64; 3] },
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig::HalfDegree {
            axis: [0.0, 0.0, 1.0],
            amplitude: 0.1,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub snapshot: String,
    pub trace: String,
    pub solver_report: String,
    pub report: String,
    pub beta_vtk: String,
    pub s_vtk: String,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: PathBuf::from("out"),
            snapshot: "field.qfld".into(),
            trace: "trace.csv".into(),
            solver_report: "solver.json".into(),
            report: "report.json".into(),
            beta_vtk: "beta.vtk".into(),
            s_vtk: "s.vtk".into(),
        }
    }
}

pub struct LoadedConfig {
    pub config: RunConfig,
    /// SHA-256 of the raw config file, embedded in reports for provenance.
    pub hash: String,
}

pub fn load(path: &Path) -> Result<LoadedConfig> {
    let bytes =
        std::fs::read(path).with_context(|| format!("cannot read config {}", path.display()))?;
    let config: RunConfig = serde_json::from_slice(&bytes)
        .with_context(|| format!("invalid config {}", path.display()))?;
    config.solver.validate()?;
    if config.grid.n < 9 || config.grid.n % 2 == 0 {
        anyhow::bail!("invalid config: grid.n must be odd and at least 9");
    }
    use sha2::Digest;
    let hash = hex::encode(sha2::Sha256::digest(&bytes));
    Ok(LoadedConfig { config, hash })
}
