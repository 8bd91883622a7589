//! Spatial run split over worker threads, some of which go silent.
//!
//! The bubble is cut into `k` equal slabs along x. Each worker owns the
//! quanta in its slab and talks only to its two neighbours and the
//! coordinator, over bounded channels, with a barrier between phases:
//!
//! 1. move own quanta, hand emigrants to the neighbour that now owns them;
//! 2. send a halo of quanta within `2·r0` of each face;
//! 3. pair and react, then report own quanta to the coordinator;
//! 4. the coordinator merges by id, replenishes, and sends back the changes.
//!
//! A hung worker keeps draining its inbox but never sends anything, so its
//! slab freezes, the quanta flying into it vanish, and the coordinator
//! stops seeing its share of the population.

use std::collections::{BTreeMap, HashSet};
use std::sync::mpsc::{sync_channel, Receiver, SyncSender};
use std::sync::{Barrier, Mutex};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::Serialize;

use crate::error::{AqError, Result};
use crate::kinetics::spatial::{move_quantum, mutual_pairs, react_pair, replenish_particles};
use crate::kinetics::{populate, Backend, EngineConfig, Runner, SpatialPlan};
use crate::compiler::{MembraneSchedule, ScheduleMode};
use crate::linalg::CMatrix;
use crate::model::{probability_weights, AmplitudeQuantum, Bubble, Population, Vec3};
use crate::rng::{self, streams};

pub const MIN_WORKERS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaultConfig {
    pub workers: usize,
    /// Fraction of workers that hang.
    pub eps: f64,
    pub hang_seed: u64,
    /// Fixed dither `u` in `[0, 1)`; drawn from the hang seed when absent.
    pub dither: Option<f64>,
    /// Messages a channel holds before the sender blocks.
    pub capacity: usize,
}

impl Default for FaultConfig {
    fn default() -> Self {
        FaultConfig { workers: 8, eps: 0.0, hang_seed: 0, dither: None, capacity: 4 }
    }
}

/// Workers that hang: `⌊εk + u⌋` of them, `u` uniform, chosen by the hang seed.
pub fn hung_workers(k: usize, eps: f64, seed: u64) -> Vec<usize> {
    hung_set(k, eps, seed, None)
}

/// [`hung_workers`] with an optional fixed `u`. The chosen workers are a
/// prefix of a seeded permutation, so sets are nested in `εk + u`.
pub fn hung_set(k: usize, eps: f64, seed: u64, dither: Option<f64>) -> Vec<usize> {
    let mut r = rng::stream(seed, streams::HANG);
    let drawn: f64 = r.random();
    let u = dither.unwrap_or(drawn);
    let k0 = ((eps * k as f64 + u).floor() as usize).min(k);
    let mut all: Vec<usize> = (0..k).collect();
    all.shuffle(&mut r);
    let mut out = all[..k0].to_vec();
    out.sort_unstable();
    out
}

#[derive(Debug)]
enum Msg {
    Migrants(Vec<AmplitudeQuantum>),
    Halo(Vec<AmplitudeQuantum>),
    Delta { added: Vec<AmplitudeQuantum>, removed: Vec<u64> },
}

/// Equal-volume slabs of the bubble ball along x.
#[derive(Debug, Clone)]
struct Slabs {
    /// `k + 1` cut positions from `-r` to `r`.
    cuts: Vec<f64>,
}

impl Slabs {
    fn equal_volume(r: f64, k: usize) -> Self {
        // fraction of the ball volume with x below `x`
        let below = |x: f64| (x + r).powi(2) * (2.0 * r - x) / (4.0 * r.powi(3));
        let mut cuts = vec![-r];
        for i in 1..k {
            let target = i as f64 / k as f64;
            let (mut lo, mut hi) = (-r, r);
            for _ in 0..100 {
                let mid = 0.5 * (lo + hi);
                if below(mid) < target {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            cuts.push(0.5 * (lo + hi));
        }
        cuts.push(r);
        Slabs { cuts }
    }

    fn k(&self) -> usize {
        self.cuts.len() - 1
    }

    fn owner(&self, p: Vec3) -> usize {
        self.cuts[1..self.k()].partition_point(|&c| c <= p[0])
    }

    fn bounds(&self, i: usize) -> (f64, f64) {
        (self.cuts[i], self.cuts[i + 1])
    }

    fn narrowest(&self) -> f64 {
        self.cuts.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartitionedRun {
    pub bubble: Bubble,
    pub hung: Vec<usize>,
}

struct Shared<'a> {
    shell: &'a Bubble,
    plan: &'a SpatialPlan,
    schedule: Option<&'a MembraneSchedule>,
    cfg: &'a EngineConfig,
    slabs: Slabs,
    halo: f64,
    taus: &'a [f64],
    barrier: Barrier,
    failure: Mutex<Option<AqError>>,
}

impl Shared<'_> {
    fn fail(&self, e: AqError) {
        let mut f = self.failure.lock().expect("failure lock");
        f.get_or_insert(e);
    }

    fn failed(&self) -> bool {
        self.failure.lock().expect("failure lock").is_some()
    }
}

fn send(tx: &SyncSender<Msg>, m: Msg) {
    // a worker that has already returned cannot hang the others
    let _ = tx.send(m);
}

#[allow(clippy::too_many_arguments)]
fn worker(
    id: usize,
    hung: bool,
    mut own: Vec<AmplitudeQuantum>,
    inbox: Receiver<Msg>,
    left: Option<SyncSender<Msg>>,
    right: Option<SyncSender<Msg>>,
    report: SyncSender<(usize, Vec<AmplitudeQuantum>)>,
    sh: &Shared<'_>,
) {
    let (lo, hi) = sh.slabs.bounds(id);
    // neighbours run ahead within a phase, so any message can show up early
    let mut migrants: Vec<AmplitudeQuantum> = Vec::new();
    let mut halo_in: Vec<AmplitudeQuantum> = Vec::new();
    let drain = |own: &mut Vec<AmplitudeQuantum>, migrants: &mut Vec<AmplitudeQuantum>, halo_in: &mut Vec<AmplitudeQuantum>| {
        for m in inbox.try_iter() {
            if hung {
                continue;
            }
            match m {
                Msg::Migrants(qs) => migrants.extend(qs),
                Msg::Halo(qs) => halo_in.extend(qs),
                Msg::Delta { added, removed } => {
                    let gone: HashSet<u64> = removed.into_iter().collect();
                    own.retain(|q| !gone.contains(&q.id));
                    own.extend(added);
                }
            }
        }
    };
    for (tick, &tau) in sh.taus.iter().enumerate() {
        let tick = tick as u64;
        // phase 1: apply coordinator changes, move, hand over emigrants
        let mut failed = None;
        drain(&mut own, &mut migrants, &mut halo_in);
        if !hung {
            for q in &mut own {
                if let Err(e) = move_quantum(q, sh.shell, sh.schedule) {
                    failed = Some(e);
                    break;
                }
            }
            let (mut to_left, mut to_right) = (Vec::new(), Vec::new());
            let mut stay = Vec::with_capacity(own.len());
            for q in own.drain(..) {
                let o = sh.slabs.owner(q.position);
                if o == id {
                    stay.push(q);
                } else if o + 1 == id {
                    to_left.push(q);
                } else if o == id + 1 {
                    to_right.push(q);
                } else {
                    failed = Some(AqError::Config(format!("quantum {} crossed more than one slab", q.id)));
                }
            }
            own = stay;
            if let Some(tx) = &left {
                send(tx, Msg::Migrants(to_left));
            }
            if let Some(tx) = &right {
                send(tx, Msg::Migrants(to_right));
            }
        }
        if let Some(e) = failed {
            sh.fail(e);
        }
        sh.barrier.wait();

        // phase 2: take in migrants, publish the halo
        drain(&mut own, &mut migrants, &mut halo_in);
        own.append(&mut migrants);
        if !hung {
            own.sort_by_key(|q| q.id);
            if let Some(tx) = &left {
                send(tx, Msg::Halo(own.iter().filter(|q| q.position[0] < lo + sh.halo).cloned().collect()));
            }
            if let Some(tx) = &right {
                send(tx, Msg::Halo(own.iter().filter(|q| q.position[0] >= hi - sh.halo).cloned().collect()));
            }
        }
        sh.barrier.wait();

        // phase 3: collide pairs that touch an own quantum, report
        drain(&mut own, &mut migrants, &mut halo_in);
        if !hung {
            let n_own = own.len();
            let mut all = own.clone();
            all.append(&mut halo_in);
            let positions: Vec<Vec3> = all.iter().map(|q| q.position).collect();
            let ids: Vec<u64> = all.iter().map(|q| q.id).collect();
            let fraction = (tau / sh.cfg.dt).min(1.0);
            for (a, b) in mutual_pairs(&positions, &ids, sh.plan.r0) {
                if a >= n_own && b >= n_own {
                    continue;
                }
                let (mut x, mut y) = (all[a].clone(), all[b].clone());
                react_pair(sh.plan, &mut x, &mut y, sh.cfg.seed, tick, fraction);
                if a < n_own {
                    own[a] = x;
                }
                if b < n_own {
                    own[b] = y;
                }
            }
            let _ = report.send((id, own.clone()));
        }
        sh.barrier.wait();
        // phase 4 belongs to the coordinator
        sh.barrier.wait();
        if sh.failed() {
            return;
        }
    }
}

/// Runs `H` for time `t` on the spatial backend split over `fc.workers`
/// slabs. With no hung workers the result equals the serial run.
pub fn run_partitioned(bubble: &Bubble, h: &CMatrix, t: f64, cfg: &EngineConfig, fc: &FaultConfig) -> Result<PartitionedRun> {
    let k = fc.workers;
    if k < MIN_WORKERS {
        return Err(AqError::TooFewWorkers { min: MIN_WORKERS, got: k });
    }
    if cfg.backend != Backend::Spatial || cfg.schedule != ScheduleMode::Division {
        return Err(AqError::Config("partitioned runs need the spatial backend with the division schedule".into()));
    }
    if !(0.0..0.5).contains(&fc.eps) {
        return Err(AqError::Config(format!("hang fraction {} outside [0, 0.5)", fc.eps)));
    }
    let runner = Runner::new(h, cfg, bubble)?;
    let plan = runner.spatial_plan().ok_or_else(|| AqError::Config("Hamiltonian compiles to no reactions".into()))?.clone();
    let schedule = runner.schedule.clone();
    let mut start = match bubble.population {
        Population::Counts(_) => populate(bubble, cfg, schedule.as_ref())?,
        Population::Particles(_) => bubble.clone(),
    };
    let Population::Particles(mut quanta) = std::mem::replace(&mut start.population, Population::Particles(Vec::new())) else {
        unreachable!()
    };
    quanta.sort_by_key(|q| q.id);
    let r = start.radius;
    let slabs = Slabs::equal_volume(r, k);
    let halo = 2.0 * plan.r0;
    let width = slabs.narrowest();
    if halo > width || cfg.speed * r > width {
        return Err(AqError::Config(format!("slab width {width} is below the halo {halo} or the step {}", cfg.speed * r)));
    }
    let ticks = (t / cfg.dt - 1e-9).ceil().max(0.0) as usize;
    let mut taus = Vec::with_capacity(ticks);
    let mut left = t;
    for _ in 0..ticks {
        let tau = left.min(cfg.dt);
        left -= tau;
        taus.push(tau);
    }
    let hung = hung_set(k, fc.eps, fc.hang_seed, fc.dither);
    let shared = Shared {
        shell: &start,
        plan: &plan,
        schedule: schedule.as_ref(),
        cfg,
        slabs: slabs.clone(),
        halo,
        taus: &taus,
        barrier: Barrier::new(k + 1),
        failure: Mutex::new(None),
    };
    let mut regions: Vec<Vec<AmplitudeQuantum>> = vec![Vec::new(); k];
    for q in &quanta {
        regions[slabs.owner(q.position)].push(q.clone());
    }
    let (txs, rxs): (Vec<_>, Vec<_>) = (0..k).map(|_| sync_channel::<Msg>(fc.capacity)).unzip();
    let (report_tx, report_rx) = sync_channel(k);
    let mut merged = start.clone();
    merged.population = Population::Particles(quanta);

    std::thread::scope(|scope| {
        let sh = &shared;
        for (i, (inbox, own)) in rxs.into_iter().zip(regions).enumerate() {
            let left = (i > 0).then(|| txs[i - 1].clone());
            let right = (i + 1 < k).then(|| txs[i + 1].clone());
            let report = report_tx.clone();
            let is_hung = hung.contains(&i);
            scope.spawn(move || worker(i, is_hung, own, inbox, left, right, report, sh));
        }
        for (tick, _) in taus.iter().enumerate() {
            sh.barrier.wait();
            sh.barrier.wait();
            sh.barrier.wait();
            // phase 4: merge, replenish, send the changes back
            let mut reports: BTreeMap<usize, Vec<AmplitudeQuantum>> = BTreeMap::new();
            for (i, qs) in report_rx.try_iter() {
                reports.insert(i, qs);
            }
            let mut all: Vec<AmplitudeQuantum> = reports.into_values().flatten().collect();
            all.sort_by_key(|q| q.id);
            let before: HashSet<u64> = all.iter().map(|q| q.id).collect();
            let owner_of: BTreeMap<u64, usize> = all.iter().map(|q| (q.id, slabs.owner(q.position))).collect();
            merged.population = Population::Particles(all);
            if !sh.failed() && cfg.replenish {
                if let Err(e) = replenish_particles(&mut merged, cfg, tick as u64, schedule.as_ref()) {
                    sh.fail(e);
                }
            }
            let Population::Particles(qs) = &mut merged.population else { unreachable!() };
            qs.sort_by_key(|q| q.id);
            let after: HashSet<u64> = qs.iter().map(|q| q.id).collect();
            let mut added: Vec<Vec<AmplitudeQuantum>> = vec![Vec::new(); k];
            for q in qs.iter().filter(|q| !before.contains(&q.id)) {
                added[slabs.owner(q.position)].push(q.clone());
            }
            let mut removed: Vec<Vec<u64>> = vec![Vec::new(); k];
            for id in before.iter().filter(|id| !after.contains(id)) {
                removed[owner_of[id]].push(*id);
            }
            for (i, (a, r)) in added.into_iter().zip(removed).enumerate() {
                send(&txs[i], Msg::Delta { added: a, removed: r });
            }
            sh.barrier.wait();
            if sh.failed() {
                break;
            }
        }
    });
    if let Some(e) = shared.failure.into_inner().expect("failure lock") {
        return Err(e);
    }
    Ok(PartitionedRun { bubble: merged, hung })
}

/// Serial spatial run on the same footing, quanta sorted by id.
pub fn run_serial(bubble: &Bubble, h: &CMatrix, t: f64, cfg: &EngineConfig) -> Result<Bubble> {
    let mut b = bubble.clone();
    Runner::new(h, cfg, &b)?.advance(&mut b, t, |_, _, _| Ok(()))?;
    if let Population::Particles(qs) = &mut b.population {
        qs.sort_by_key(|q| q.id);
    }
    Ok(b)
}

pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub eps: f64,
    pub distances: Vec<f64>,
    pub mean: f64,
    pub median: f64,
    pub mean_hung: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Degradation {
    pub workers: usize,
    pub points: Vec<SweepPoint>,
    /// Least-squares fit `mean distance = slope·ε + intercept`.
    pub slope: f64,
    pub intercept: f64,
    pub max_residual: f64,
    /// `d/ε` at the smallest nonzero ε.
    pub calibrated_c: f64,
    pub bound_holds: bool,
    pub monotone: bool,
    /// Fault-free partitioned run equals the serial run.
    pub serial_identical: bool,
}

impl Degradation {
    pub fn linear(&self) -> bool {
        self.slope >= 0.0 && self.intercept <= 0.01 && self.max_residual <= 0.02
    }
}

fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        0.0
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Least-squares line through `(x, y)`; returns slope, intercept and the
/// largest absolute residual.
pub fn fit_line(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let res = xs.iter().zip(ys).map(|(x, y)| (y - slope * x - intercept).abs()).fold(0.0, f64::max);
    (slope, intercept, res)
}

/// Fault-free versus faulty final weights over `seeds` paired seeds for each ε.
pub fn degradation_sweep(
    bubble: &Bubble,
    h: &CMatrix,
    t: f64,
    cfg: &EngineConfig,
    workers: usize,
    eps: &[f64],
    seeds: u64,
    hang_seed: u64,
) -> Result<Degradation> {
    let mut serial_identical = true;
    let mut baselines = Vec::new();
    for s in 0..seeds {
        let c = EngineConfig { seed: cfg.seed.wrapping_add(s), ..cfg.clone() };
        let base = run_partitioned(bubble, h, t, &c, &FaultConfig { workers, ..FaultConfig::default() })?;
        if s == 0 {
            serial_identical = run_serial(bubble, h, t, &c)? == base.bubble;
        }
        baselines.push(probability_weights(&base.bubble)?);
    }
    // stratified dither: seed s gets u in its own slice of [0, 1)
    let mut strata: Vec<u64> = (0..seeds).collect();
    strata.shuffle(&mut rng::stream(hang_seed, streams::HANG));
    let mut points = Vec::new();
    for &e in eps {
        let mut distances = Vec::new();
        let mut hung_total = 0usize;
        for s in 0..seeds {
            let c = EngineConfig { seed: cfg.seed.wrapping_add(s), ..cfg.clone() };
            let dither = Some((strata[s as usize] as f64 + 0.5) / seeds as f64);
            let fc = FaultConfig { workers, eps: e, hang_seed: hang_seed.wrapping_add(s), dither, ..FaultConfig::default() };
            let d = if hung_set(workers, e, fc.hang_seed, dither).is_empty() {
                0.0
            } else {
                let run = run_partitioned(bubble, h, t, &c, &fc)?;
                hung_total += run.hung.len();
                total_variation(&baselines[s as usize], &probability_weights(&run.bubble)?)
            };
            distances.push(d);
        }
        let mean = distances.iter().sum::<f64>() / distances.len().max(1) as f64;
        points.push(SweepPoint { eps: e, median: median(&distances), mean, mean_hung: hung_total as f64 / seeds as f64, distances });
    }
    let xs: Vec<f64> = points.iter().map(|p| p.eps).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.mean).collect();
    let (slope, intercept, max_residual) = fit_line(&xs, &ys);
    let smallest = points.iter().filter(|p| p.eps > 0.0).min_by(|a, b| a.eps.total_cmp(&b.eps));
    let calibrated_c = smallest.map(|p| p.mean / p.eps).unwrap_or(0.0);
    let bound_holds = points.iter().all(|p| p.mean <= calibrated_c * p.eps + 0.01 + 1e-12);
    let monotone = ys.windows(2).all(|w| w[1] >= w[0]);
    Ok(Degradation { workers, points, slope, intercept, max_residual, calibrated_c, bound_holds, monotone, serial_identical })
}
