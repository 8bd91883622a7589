//! Time evolution of a bubble under reaction lists.
//!
//! Three backends share one configuration: a well-mixed stochastic
//! mass-action backend on counts, a spatial ballistic backend on explicit
//! quanta, and a deterministic mean-field integrator.

pub mod meanfield;
pub mod spatial;
pub mod wellmixed;

use serde::{Deserialize, Serialize};

use crate::compiler::{self, MembraneSchedule, ReactionList, ScheduleMode, SqTerm};
use crate::error::{AqError, Result};
use crate::linalg::CMatrix;
use crate::model::{Bubble, CountTable, Part, Population, Sign, Species};

pub use meanfield::{meanfield_evolve, MeanFieldConfig, Trajectory};
pub use spatial::{populate, step_spatial, SpatialPlan};
pub use wellmixed::step_wellmixed;

/// Largest `γ0·A·Δt` accepted by [`EngineConfig::validate`].
pub const STABILITY_LIMIT: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    Wellmixed,
    Spatial,
    Meanfield,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub backend: Backend,
    /// Tick length in time units.
    pub dt: f64,
    /// Collision propensity of two fixed quanta per unit time.
    pub gamma0: f64,
    /// Target total `{x_j} = A` per type.
    pub total_per_type: u64,
    pub replenish: bool,
    pub seed: u64,
    /// Spatial collision radius; calibrated from the rate when absent.
    pub collision_radius: Option<f64>,
    pub bubble_radius: f64,
    /// Spatial displacement per tick, as a fraction of the bubble radius.
    pub speed: f64,
    pub count_cap: u64,
    pub schedule: ScheduleMode,
    /// Trotter cycle length in time units.
    pub trotter_dt: f64,
}

impl EngineConfig {
    /// Configuration with `γ0 = ω/A` and `γ0·A·Δt = 0.01`.
    pub fn new(omega: f64, total_per_type: u64) -> Self {
        EngineConfig {
            backend: Backend::Wellmixed,
            dt: 0.01 / omega,
            gamma0: omega / total_per_type as f64,
            total_per_type,
            replenish: true,
            seed: 0,
            collision_radius: None,
            bubble_radius: 1.0,
            speed: 0.05,
            count_cap: 1 << 40,
            schedule: ScheduleMode::Division,
            trotter_dt: 0.01 / omega,
        }
    }

    pub fn omega(&self) -> f64 {
        self.gamma0 * self.total_per_type as f64
    }

    pub fn validate(&self) -> Result<()> {
        let guard = self.dt * self.omega();
        if !(self.dt > 0.0) || !(self.gamma0 >= 0.0) || !(guard <= STABILITY_LIMIT) {
            return Err(AqError::Config(format!("γ0·A·Δt = {guard} outside (0, {STABILITY_LIMIT}]")));
        }
        if self.total_per_type == 0 || !(self.bubble_radius > 0.0) || !(self.trotter_dt > 0.0) {
            return Err(AqError::Config("A, bubble radius and Trotter step must be positive".into()));
        }
        Ok(())
    }
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig::new(1.0, 10_000)
    }
}

/// Adds or removes `(x+, x−)` pairs so every supported type totals `A`
/// (to within parity). Net counts are untouched.
pub fn replenish_counts(counts: &mut CountTable, target: u64, support: &[bool]) {
    for (j, &inside) in support.iter().enumerate() {
        if !inside {
            continue;
        }
        for part in [Part::Re, Part::Im] {
            let (p, m) = (Species::new(part, Sign::Plus, j), Species::new(part, Sign::Minus, j));
            let total = counts.total(j, part);
            if total < target {
                let k = (target - total) / 2;
                counts.add(p, k);
                counts.add(m, k);
            } else {
                let k = ((total - target) / 2).min(counts.get(p)).min(counts.get(m));
                counts.remove(p, k);
                counts.remove(m, k);
            }
        }
    }
}

pub fn replenish_pairs(bubble: &mut Bubble, cfg: &EngineConfig, tick: u64) -> Result<()> {
    let support = bubble.support.clone();
    match &mut bubble.population {
        Population::Counts(c) => {
            replenish_counts(c, cfg.total_per_type, &support);
            Ok(())
        }
        Population::Particles(_) => spatial::replenish_particles(bubble, cfg, tick, None),
    }
}

/// What runs during one stretch of time.
#[derive(Debug, Clone)]
enum Stage {
    /// All lists at once for the whole duration.
    Concurrent { list: ReactionList, spatial: Option<SpatialPlan> },
    /// Lists applied in turn, each for `rate·trotter_dt`-weighted time.
    Trotter { lists: Vec<(ReactionList, Option<SpatialPlan>)> },
}

/// Ticks a bubble forward; keeps the tick counter across calls so that
/// piecewise runs reproduce a single run.
#[derive(Debug, Clone)]
pub struct Runner {
    pub cfg: EngineConfig,
    stage: Stage,
    pub schedule: Option<MembraneSchedule>,
    pub tick: u64,
    pub time: f64,
    creation: bool,
}

impl Runner {
    /// Compiles `H` and prepares the configured backend.
    pub fn new(h: &CMatrix, cfg: &EngineConfig, bubble: &Bubble) -> Result<Self> {
        cfg.validate()?;
        let compiled = compiler::compile(h)?;
        if compiled.decomposition.blocks.is_empty() {
            return Self::from_list(ReactionList::empty(), cfg, bubble);
        }
        let schedule = compiler::membrane_schedule(&compiled.decomposition, cfg.schedule, cfg.trotter_dt)?;
        let stage = match cfg.schedule {
            ScheduleMode::Division => {
                let list = ReactionList::union(&compiled.lists);
                let spatial = match cfg.backend {
                    Backend::Spatial => Some(SpatialPlan::division(&compiled, &schedule, cfg, bubble)?),
                    _ => None,
                };
                Stage::Concurrent { list, spatial }
            }
            ScheduleMode::Trotter => {
                let mut lists = Vec::new();
                for l in &compiled.lists {
                    let spatial = match cfg.backend {
                        Backend::Spatial => Some(SpatialPlan::single(l, cfg, bubble)?),
                        _ => None,
                    };
                    lists.push((l.clone(), spatial));
                }
                Stage::Trotter { lists }
            }
        };
        Ok(Runner { cfg: cfg.clone(), stage, schedule: Some(schedule), tick: 0, time: 0.0, creation: false })
    }

    /// Runs an arbitrary list, e.g. nonequilibrium creation rules.
    pub fn from_list(list: ReactionList, cfg: &EngineConfig, bubble: &Bubble) -> Result<Self> {
        cfg.validate()?;
        let creation = list.rules.iter().any(|r| r.kind == compiler::RuleKind::Nonequilibrium);
        let spatial = match cfg.backend {
            Backend::Spatial if !list.is_empty() => Some(SpatialPlan::single(&list, cfg, bubble)?),
            _ => None,
        };
        Ok(Runner {
            cfg: cfg.clone(),
            stage: Stage::Concurrent { list, spatial },
            schedule: None,
            tick: 0,
            time: 0.0,
            creation,
        })
    }

    /// Collision plan of a concurrent spatial run.
    pub fn spatial_plan(&self) -> Option<&SpatialPlan> {
        match &self.stage {
            Stage::Concurrent { spatial, .. } => spatial.as_ref(),
            Stage::Trotter { .. } => None,
        }
    }

    pub fn second_quantized(terms: &[SqTerm], cfg: &EngineConfig, bubble: &Bubble) -> Result<Self> {
        Self::from_list(compiler::sq_reactions(terms, bubble.dim)?, cfg, bubble)
    }

    /// Evolves for `duration`, calling `observe` after every tick.
    pub fn advance<F>(&mut self, bubble: &mut Bubble, duration: f64, mut observe: F) -> Result<()>
    where
        F: FnMut(u64, f64, &Bubble) -> Result<()>,
    {
        if !(duration >= 0.0) {
            return Err(AqError::Config(format!("negative duration {duration}")));
        }
        if self.cfg.backend == Backend::Meanfield {
            return self.advance_meanfield(bubble, duration, observe);
        }
        if let (Backend::Spatial, Population::Counts(_)) = (self.cfg.backend, &bubble.population) {
            *bubble = populate(bubble, &self.cfg, self.schedule.as_ref())?;
        }
        let cfg = self.cfg.clone();
        match self.stage.clone() {
            Stage::Concurrent { list, spatial } => {
                let ticks = (duration / cfg.dt - 1e-9).ceil().max(0.0) as u64;
                let mut left = duration;
                for _ in 0..ticks {
                    let tau = left.min(cfg.dt);
                    left -= tau;
                    self.one_tick(bubble, &list, spatial.as_ref(), tau)?;
                    self.time += tau;
                    observe(self.tick, self.time, bubble)?;
                }
            }
            Stage::Trotter { lists } => {
                let cycles = (duration / cfg.trotter_dt - 1e-9).ceil().max(0.0) as u64;
                let mut left = duration;
                for _ in 0..cycles {
                    let cycle = left.min(cfg.trotter_dt);
                    left -= cycle;
                    for (list, spatial) in &lists {
                        let n = (cycle / cfg.dt - 1e-9).ceil().max(1.0) as u64;
                        let tau = cycle / n as f64;
                        for _ in 0..n {
                            self.one_tick(bubble, list, spatial.as_ref(), tau)?;
                        }
                    }
                    self.time += cycle;
                    observe(self.tick, self.time, bubble)?;
                }
            }
        }
        Ok(())
    }

    fn one_tick(&mut self, bubble: &mut Bubble, list: &ReactionList, spatial: Option<&SpatialPlan>, tau: f64) -> Result<()> {
        let cfg = &self.cfg;
        match cfg.backend {
            Backend::Wellmixed => {
                step_wellmixed(bubble, list, cfg, self.tick, tau)?;
                if self.creation {
                    *bubble = crate::model::reduce_all(bubble);
                }
            }
            Backend::Spatial => match spatial {
                Some(plan) => step_spatial(bubble, plan, cfg, self.tick, tau)?,
                None => spatial::drift(bubble, cfg, self.tick, self.schedule.as_ref())?,
            },
            Backend::Meanfield => unreachable!(),
        }
        if cfg.replenish {
            match &mut bubble.population {
                Population::Counts(c) => {
                    let support = bubble.support.clone();
                    replenish_counts(c, cfg.total_per_type, &support);
                }
                Population::Particles(_) => {
                    spatial::replenish_particles(bubble, cfg, self.tick, self.schedule.as_ref())?
                }
            }
        }
        self.tick += 1;
        Ok(())
    }

    fn advance_meanfield<F>(&mut self, bubble: &mut Bubble, duration: f64, mut observe: F) -> Result<()>
    where
        F: FnMut(u64, f64, &Bubble) -> Result<()>,
    {
        let lists: Vec<ReactionList> = match &self.stage {
            Stage::Concurrent { list, .. } => vec![list.clone()],
            Stage::Trotter { lists } => lists.iter().map(|(l, _)| l.clone()).collect(),
        };
        let mf = MeanFieldConfig {
            omega: self.cfg.omega(),
            total_per_type: self.cfg.total_per_type,
            hold_totals: self.cfg.replenish,
            step: self.cfg.dt / 10.0,
        };
        let ticks = (duration / self.cfg.dt - 1e-9).ceil().max(0.0) as u64;
        let mut state = meanfield::to_real(&bubble.counts());
        let mut left = duration;
        for _ in 0..ticks {
            let tau = left.min(self.cfg.dt);
            left -= tau;
            for l in &lists {
                state = meanfield::integrate(&state, l, &mf, tau);
            }
            if self.creation {
                meanfield::reduce(&mut state);
            }
            bubble.population = Population::Counts(meanfield::to_counts(&state));
            self.tick += 1;
            self.time += tau;
            observe(self.tick, self.time, bubble)?;
        }
        Ok(())
    }
}

/// Compiles `H` and evolves for `t`.
pub fn evolve(bubble: &Bubble, h: &CMatrix, t: f64, cfg: &EngineConfig) -> Result<Bubble> {
    if h.dim() != bubble.dim {
        return Err(AqError::DimensionMismatch(h.dim(), bubble.dim));
    }
    let mut b = bubble.clone();
    if t == 0.0 {
        return Ok(b);
    }
    let mut runner = Runner::new(h, cfg, &b)?;
    runner.advance(&mut b, t, |_, _, _| Ok(()))?;
    Ok(b)
}
