//! Run configuration read from TOML.

use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::compiler::ScheduleMode;
use crate::error::{AqError, Result};
use crate::kinetics::{Backend, EngineConfig};
use crate::linalg::CMatrix;
use crate::membrane::MembraneConfig;
use crate::model::{StateVector, Vec3};
use crate::multiparticle::{DecoherenceMode, Identity};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    Compile,
    Single,
    Measure,
    Multi,
    Faulty,
}

/// Complex entries as `[re, im]` pairs, row-major.
pub type MatrixRows = Vec<Vec<[f64; 2]>>;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixSource {
    pub matrix: Option<MatrixRows>,
    /// Real matrix shorthand.
    pub real: Option<Vec<Vec<f64>>>,
    /// File holding a `matrix` or `real` table, relative to the config.
    pub file: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineSection {
    pub backend: Backend,
    pub omega: f64,
    pub total_per_type: u64,
    pub dt: Option<f64>,
    pub schedule: ScheduleMode,
    pub trotter_dt: Option<f64>,
    pub replenish: bool,
    pub speed: f64,
}

impl Default for EngineSection {
    fn default() -> Self {
        EngineSection {
            backend: Backend::Wellmixed,
            omega: 1.0,
            total_per_type: 10_000,
            dt: None,
            schedule: ScheduleMode::Division,
            trotter_dt: None,
            replenish: true,
            speed: 0.05,
        }
    }
}

impl EngineSection {
    pub fn engine(&self, seed: u64) -> EngineConfig {
        let base = EngineConfig::new(self.omega, self.total_per_type);
        EngineConfig {
            backend: self.backend,
            dt: self.dt.unwrap_or(base.dt),
            trotter_dt: self.trotter_dt.unwrap_or(base.trotter_dt),
            schedule: self.schedule,
            replenish: self.replenish,
            speed: self.speed,
            seed,
            ..base
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeSection {
    pub grains: Vec<Vec3>,
    #[serde(default)]
    pub membrane: Option<MembraneConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeasureSection {
    pub trials: u64,
    pub max_arrivals: u64,
    pub labels: u64,
}

impl Default for MeasureSection {
    fn default() -> Self {
        MeasureSection { trials: 1000, max_arrivals: 1_000_000, labels: 64 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MultiSection {
    /// One amplitude list per particle.
    pub particles: Vec<Vec<[f64; 2]>>,
    #[serde(default = "distinct")]
    pub identity: Identity,
    /// Touching pairs; a line by default.
    #[serde(default)]
    pub touches: Option<Vec<(usize, usize)>>,
    #[serde(default)]
    pub decoherence: Option<DecoherenceMode>,
    /// Touch graph after separation, for bubble connectivity.
    #[serde(default)]
    pub separated: Vec<(usize, usize)>,
}

fn distinct() -> Identity {
    Identity::Distinct
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FaultySection {
    pub workers: usize,
    pub eps: Vec<f64>,
    pub seeds: u64,
    pub hang_seed: u64,
}

impl Default for FaultySection {
    fn default() -> Self {
        FaultySection { workers: 8, eps: vec![0.0, 0.02, 0.05, 0.1], seeds: 20, hang_seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    /// Ticks between trajectory records.
    pub record_every: u64,
    /// Ticks between frames; no frames when zero.
    pub frame_every: u64,
    pub frame_size: usize,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { record_every: 10, frame_every: 0, frame_size: 128 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: Scenario,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub t: f64,
    #[serde(default)]
    pub hamiltonian: MatrixSource,
    /// Initial amplitudes as `[re, im]` pairs; normalized on load.
    #[serde(default)]
    pub state: Vec<[f64; 2]>,
    #[serde(default)]
    pub engine: EngineSection,
    #[serde(default)]
    pub lattice: Option<LatticeSection>,
    #[serde(default)]
    pub measure: MeasureSection,
    #[serde(default)]
    pub multi: Option<MultiSection>,
    #[serde(default)]
    pub faulty: FaultySection,
    #[serde(default)]
    pub output: OutputSection,
    /// Directory for relative file references.
    #[serde(skip)]
    pub base: PathBuf,
}

fn io_error(path: &Path, e: impl std::fmt::Display) -> AqError {
    AqError::Io { path: path.display().to_string(), message: e.to_string() }
}

pub fn complex_rows(rows: &MatrixRows) -> Result<CMatrix> {
    let rows: Vec<Vec<Complex64>> = rows.iter().map(|r| r.iter().map(|&[a, b]| Complex64::new(a, b)).collect()).collect();
    CMatrix::from_rows(&rows)
}

pub fn amplitudes(values: &[[f64; 2]]) -> Result<StateVector> {
    let v = StateVector::new(values.iter().map(|&[a, b]| Complex64::new(a, b)).collect());
    if v.dim() == 0 || v.norm() == 0.0 {
        return Err(AqError::Config("state needs at least one nonzero amplitude".into()));
    }
    Ok(v.normalized())
}

impl MatrixSource {
    pub fn load(&self, base: &Path) -> Result<CMatrix> {
        match (&self.matrix, &self.real, &self.file) {
            (Some(m), None, None) => complex_rows(m),
            (None, Some(r), None) => {
                let rows: Vec<Vec<Complex64>> = r.iter().map(|row| row.iter().map(|&x| x.into()).collect()).collect();
                CMatrix::from_rows(&rows)
            }
            (None, None, Some(f)) => {
                let path = base.join(f);
                let text = std::fs::read_to_string(&path).map_err(|e| io_error(&path, e))?;
                let inner: MatrixSource = toml::from_str(&text).map_err(|e| io_error(&path, e))?;
                if inner.file.is_some() {
                    return Err(AqError::Config(format!("{}: nested file reference", path.display())));
                }
                inner.load(base)
            }
            _ => Err(AqError::Config("hamiltonian needs exactly one of matrix, real or file".into())),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| AqError::Config(e.to_string()))?;
        cfg.base = base.to_path_buf();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base).map_err(|e| match e {
            AqError::Config(m) => AqError::Io { path: path.display().to_string(), message: m },
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t >= 0.0 && self.t.is_finite()) {
            return Err(AqError::Config(format!("t = {} must be finite and non-negative", self.t)));
        }
        if self.engine.omega <= 0.0 || self.engine.total_per_type == 0 {
            return Err(AqError::Config("engine needs omega > 0 and total_per_type > 0".into()));
        }
        if self.output.record_every == 0 {
            return Err(AqError::Config("record_every must be positive".into()));
        }
        match self.scenario {
            Scenario::Multi if self.multi.is_none() => Err(AqError::Config("multi scenario needs a [multi] table".into())),
            Scenario::Single | Scenario::Measure | Scenario::Faulty if self.state.is_empty() => {
                Err(AqError::Config("scenario needs an initial state".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn hamiltonian(&self) -> Result<CMatrix> {
        self.hamiltonian.load(&self.base)
    }

    pub fn initial_state(&self) -> Result<StateVector> {
        amplitudes(&self.state)
    }

    pub fn engine(&self) -> EngineConfig {
        self.engine.engine(self.seed)
    }
}
