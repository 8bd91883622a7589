//! Scenario runner, fault experiment and artifact output.

pub mod config;
pub mod faulty;
pub mod frames;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::Serialize;

use crate::compiler::{compile, Compiled};
use crate::error::{AqError, Result};
use crate::kinetics::{Backend, EngineConfig, Runner};
use crate::linalg::CMatrix;
use crate::measurement::{measure, MeasureConfig};
use crate::membrane::{bubble_centroid, lattice_bubble, run_with_membrane, MembraneTracker};
use crate::model::{probability_weights, state_from_bubble, Bubble, Loading, StateVector, Vec3};
use crate::multiparticle::{
    couple_line, decohere_components, evolve_joint_observed, exchange, reduced_density_matrix, swap_defect,
    DecoherenceConfig, ExchangeConfig, Identity,
};
use crate::oracle::{centroid, chi_square_test, exact_propagate, fidelity};
use config::{amplitudes, RunConfig, Scenario};
use faulty::{degradation_sweep, Degradation};

pub const TRAJECTORY_FILE: &str = "trajectory.jsonl";
pub const REPORT_FILE: &str = "report.json";
pub const FRAMES_DIR: &str = "frames";

pub type Amplitudes = Vec<[f64; 2]>;

fn pairs(v: &StateVector) -> Amplitudes {
    v.amplitudes.iter().map(|a| [a.re, a.im]).collect()
}

fn matrix_rows(m: &CMatrix) -> Vec<Amplitudes> {
    (0..m.dim()).map(|i| (0..m.dim()).map(|j| [m[(i, j)].re, m[(i, j)].im]).collect()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub trials: u64,
    pub counts: Vec<u64>,
    pub expected: Vec<f64>,
    pub chi_square: f64,
    pub critical: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MultiReport {
    pub identity: Identity,
    pub joint_state: Amplitudes,
    pub exchange_ticks: u64,
    pub swap_defect: f64,
    /// One-particle density matrices, row-major.
    pub reduced: Vec<Vec<Amplitudes>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub component: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub decohered: Option<Vec<Amplitudes>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub scenario: Scenario,
    pub seed: u64,
    pub t: f64,
    pub ticks: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub compiled: Option<Compiled>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_state: Option<Amplitudes>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub probabilities: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle_state: Option<Amplitudes>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fidelity: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub centroid: Option<Vec3>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle_centroid: Option<Vec3>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub histogram: Option<Histogram>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub multi: Option<MultiReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub degradation: Option<Degradation>,
    pub frames: usize,
}

impl Report {
    fn new(cfg: &RunConfig) -> Self {
        Report {
            scenario: cfg.scenario,
            seed: cfg.seed,
            t: cfg.t,
            ticks: 0,
            compiled: None,
            final_state: None,
            probabilities: None,
            oracle_state: None,
            fidelity: None,
            centroid: None,
            oracle_centroid: None,
            histogram: None,
            multi: None,
            degradation: None,
            frames: 0,
        }
    }
}

#[derive(Serialize)]
struct TickRecord {
    tick: u64,
    time: f64,
    quanta: u64,
    nets: Vec<(i64, i64)>,
    probabilities: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    centroid: Option<Vec3>,
}

#[derive(Serialize)]
struct TrialRecord {
    trial: u64,
    outcome: usize,
    arrivals: usize,
}

#[derive(Serialize)]
struct JointRecord {
    tick: u64,
    time: f64,
    chains: u64,
    probabilities: Vec<f64>,
}

#[derive(Serialize)]
struct SweepRecord {
    eps: f64,
    seed: u64,
    distance: f64,
}

/// Output directory with the trajectory writer and frame counter.
struct Sink {
    out: PathBuf,
    trajectory: BufWriter<File>,
    frames: usize,
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> AqError {
    AqError::Io { path: path.display().to_string(), message: e.to_string() }
}

impl Sink {
    fn open(out: &Path) -> Result<Self> {
        std::fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
        let path = out.join(TRAJECTORY_FILE);
        let file = File::create(&path).map_err(|e| io_err(&path, e))?;
        Ok(Sink { out: out.to_path_buf(), trajectory: BufWriter::new(file), frames: 0 })
    }

    fn record<T: Serialize>(&mut self, rec: &T) -> Result<()> {
        let path = self.out.join(TRAJECTORY_FILE);
        serde_json::to_writer(&mut self.trajectory, rec).map_err(|e| io_err(&path, e))?;
        self.trajectory.write_all(b"\n").map_err(|e| io_err(&path, e))
    }

    fn frame(&mut self, bubble: &Bubble, size: usize) -> Result<()> {
        let dir = self.out.join(FRAMES_DIR);
        std::fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        frames::render(bubble, size)?.write(&dir.join(format!("{:04}.ppm", self.frames)))?;
        self.frames += 1;
        Ok(())
    }

    fn finish(mut self, report: &mut Report) -> Result<()> {
        let path = self.out.join(TRAJECTORY_FILE);
        self.trajectory.flush().map_err(|e| io_err(&path, e))?;
        report.frames = self.frames;
        let path = self.out.join(REPORT_FILE);
        let text = serde_json::to_string_pretty(report).map_err(|e| io_err(&path, e))?;
        std::fs::write(&path, text + "\n").map_err(|e| io_err(&path, e))
    }
}

fn tick_record(tick: u64, time: f64, b: &Bubble) -> Result<TickRecord> {
    let counts = b.counts();
    Ok(TickRecord {
        tick,
        time,
        quanta: counts.quanta(),
        nets: counts.nets(),
        probabilities: probability_weights(b)?,
        centroid: if b.grain_coords.is_some() { Some(bubble_centroid(b)?) } else { None },
    })
}

fn loading(engine: &EngineConfig) -> Loading {
    Loading { total_per_type: engine.total_per_type, ..Loading::default() }
}

/// Runs the configured scenario, writing `trajectory.jsonl`, `report.json`
/// and optional frames into `out`.
pub fn run(cfg: &RunConfig, out: &Path) -> Result<Report> {
    cfg.validate()?;
    let mut sink = Sink::open(out)?;
    let mut report = Report::new(cfg);
    match cfg.scenario {
        Scenario::Compile => report.compiled = Some(compile(&cfg.hamiltonian()?)?),
        Scenario::Single => run_single(cfg, &mut sink, &mut report)?,
        Scenario::Measure => run_measure(cfg, &mut sink, &mut report)?,
        Scenario::Multi => run_multi(cfg, &mut sink, &mut report)?,
        Scenario::Faulty => run_faulty(cfg, &mut sink, &mut report)?,
    }
    sink.finish(&mut report)?;
    Ok(report)
}

/// Evolves the initial bubble for `t`, recording ticks and frames.
fn evolve_recorded(cfg: &RunConfig, sink: &mut Sink, report: &mut Report) -> Result<Bubble> {
    let h = cfg.hamiltonian()?;
    let psi0 = cfg.initial_state()?;
    if h.dim() != psi0.dim() {
        return Err(AqError::DimensionMismatch(h.dim(), psi0.dim()));
    }
    let engine = cfg.engine();
    let out = &cfg.output;
    let lattice = cfg.lattice.as_ref();
    let b0 = match lattice {
        Some(l) => lattice_bubble(&psi0, l.grains.clone(), &loading(&engine), &l.membrane.unwrap_or_default())?,
        None => Bubble::from_state(&psi0, &loading(&engine)),
    };
    sink.record(&tick_record(0, 0.0, &b0)?)?;
    if out.frame_every > 0 {
        sink.frame(&b0, out.frame_size)?;
    }
    let mut ticks = 0;
    let mut observe = |tick: u64, time: f64, b: &Bubble| -> Result<()> {
        ticks = tick;
        if tick % out.record_every == 0 {
            sink.record(&tick_record(tick, time, b)?)?;
        }
        if out.frame_every > 0 && tick % out.frame_every == 0 {
            sink.frame(b, out.frame_size)?;
        }
        Ok(())
    };
    let b = match lattice {
        Some(l) => {
            let mut tracker = MembraneTracker::new(l.membrane.unwrap_or_default(), psi0.dim(), engine.total_per_type);
            run_with_membrane(&b0, &h, cfg.t, &engine, &mut tracker, &mut observe)?
        }
        None => {
            let mut b = b0;
            Runner::new(&h, &engine, &b)?.advance(&mut b, cfg.t, &mut observe)?;
            b
        }
    };
    report.ticks = ticks;
    let oracle = exact_propagate(&h, &psi0, cfg.t)?;
    if let Some(l) = lattice {
        report.centroid = Some(bubble_centroid(&b)?);
        report.oracle_centroid = Some(centroid(&oracle.probabilities(), &l.grains));
    }
    report.oracle_state = Some(pairs(&oracle));
    Ok(b)
}

fn run_single(cfg: &RunConfig, sink: &mut Sink, report: &mut Report) -> Result<()> {
    let b = evolve_recorded(cfg, sink, report)?;
    let psi = state_from_bubble(&b)?;
    let oracle = exact_propagate(&cfg.hamiltonian()?, &cfg.initial_state()?, cfg.t)?;
    report.fidelity = Some(fidelity(&psi, &oracle)?);
    report.final_state = Some(pairs(&psi));
    report.probabilities = Some(probability_weights(&b)?);
    Ok(())
}

fn run_measure(cfg: &RunConfig, sink: &mut Sink, report: &mut Report) -> Result<()> {
    let b = evolve_recorded(cfg, sink, report)?;
    let expected = probability_weights(&b)?;
    let m = &cfg.measure;
    let mut counts = vec![0u64; b.dim];
    for trial in 0..m.trials {
        let mc = MeasureConfig {
            seed: cfg.seed.wrapping_add(trial),
            max_arrivals: m.max_arrivals,
            labels: m.labels,
            ..MeasureConfig::default()
        };
        let (rec, _) = measure(&b, &mc)?;
        counts[rec.outcome] += 1;
        sink.record(&TrialRecord { trial, outcome: rec.outcome, arrivals: rec.arrivals.len() })?;
    }
    let chi = chi_square_test(&counts, &expected)?;
    report.histogram = Some(Histogram {
        trials: m.trials,
        counts,
        expected: expected.clone(),
        chi_square: chi.statistic,
        critical: chi.critical,
        pass: chi.pass,
    });
    report.probabilities = Some(expected);
    Ok(())
}

fn kron(states: &[StateVector]) -> StateVector {
    let mut amps = vec![Complex64::new(1.0, 0.0)];
    for s in states {
        amps = amps.iter().flat_map(|a| s.amplitudes.iter().map(move |b| a * b)).collect();
    }
    StateVector::new(amps)
}

fn run_multi(cfg: &RunConfig, sink: &mut Sink, report: &mut Report) -> Result<()> {
    let Some(mc) = &cfg.multi else {
        return Err(AqError::Config("multi scenario needs a [multi] table".into()));
    };
    let states = mc.particles.iter().map(|p| amplitudes(p)).collect::<Result<Vec<_>>>()?;
    let engine = cfg.engine();
    let bubbles: Vec<Bubble> = states.iter().map(|s| Bubble::from_state(s, &loading(&engine))).collect();
    let sys = couple_line(&bubbles, mc.identity, cfg.seed)?;
    let h = cfg.hamiltonian()?;
    let jcfg = EngineConfig { replenish: engine.replenish, dt: engine.dt, ..sys.engine(engine.omega(), cfg.seed) };
    let every = cfg.output.record_every;
    let joint_record = |tick: u64, time: f64, s: &crate::multiparticle::JointSystem| -> Result<JointRecord> {
        Ok(JointRecord { tick, time, chains: s.chains.len(), probabilities: s.state()?.probabilities() })
    };
    sink.record(&joint_record(0, 0.0, &sys)?)?;
    let mut ticks = 0;
    let mut sys = evolve_joint_observed(&sys, &h, cfg.t, &jcfg, |tick, time, s| {
        ticks = tick;
        if tick % every == 0 {
            sink.record(&joint_record(tick, time, s)?)?;
        }
        Ok(())
    })?;
    report.ticks = ticks;
    let exchange_ticks = exchange(&mut sys, &ExchangeConfig { seed: cfg.seed, ..ExchangeConfig::default() })?;
    let (n, dim) = (sys.chains.n, sys.chains.dim);
    let psi = sys.state()?;
    if mc.identity == Identity::Distinct {
        let oracle = exact_propagate(&h, &kron(&states), cfg.t)?;
        report.fidelity = Some(fidelity(&psi, &oracle)?);
        report.oracle_state = Some(pairs(&oracle));
    }
    let reduced = (0..n).map(|k| reduced_density_matrix(&sys.chains, k).map(|m| matrix_rows(&m))).collect::<Result<_>>()?;
    let mut mr = MultiReport {
        identity: mc.identity,
        joint_state: pairs(&psi),
        exchange_ticks,
        swap_defect: swap_defect(&psi, n, dim, mc.identity),
        reduced,
        component: None,
        decohered: None,
    };
    if let Some(mode) = mc.decoherence {
        let d = decohere_components(&sys, &mc.separated, &DecoherenceConfig { mode, seed: cfg.seed, ..DecoherenceConfig::default() })?;
        mr.component = d.component;
        mr.decohered = Some(d.particles.iter().map(pairs).collect());
    }
    report.final_state = Some(pairs(&psi));
    report.probabilities = Some(psi.probabilities());
    report.multi = Some(mr);
    Ok(())
}

fn run_faulty(cfg: &RunConfig, sink: &mut Sink, report: &mut Report) -> Result<()> {
    let engine = cfg.engine();
    if engine.backend != Backend::Spatial {
        return Err(AqError::Config("faulty scenario needs the spatial backend".into()));
    }
    let h = cfg.hamiltonian()?;
    let psi0 = cfg.initial_state()?;
    let b = Bubble::from_state(&psi0, &loading(&engine));
    let f = &cfg.faulty;
    let d = degradation_sweep(&b, &h, cfg.t, &engine, f.workers, &f.eps, f.seeds, f.hang_seed)?;
    for p in &d.points {
        for (s, &distance) in p.distances.iter().enumerate() {
            sink.record(&SweepRecord { eps: p.eps, seed: cfg.seed.wrapping_add(s as u64), distance })?;
        }
    }
    report.oracle_state = Some(pairs(&exact_propagate(&h, &psi0, cfg.t)?));
    report.degradation = Some(d);
    Ok(())
}
