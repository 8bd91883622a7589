//! Membrane motion on a grain lattice.
//!
//! Every basic state is a grain with a position. The bubble occupies the
//! supported grains; membrane cells sit on the faces between a supported
//! grain and the outside. A boundary grain whose amplitude modulus falls
//! below `X0` is given up and its quanta deleted; a boundary grain above `X1`
//! pushes the membrane one grain outward, and the new grains are seeded with
//! zero-net pairs so the kinetics can feed them.

use serde::{Deserialize, Serialize};

use crate::error::{AqError, Result};
use crate::kinetics::{replenish_counts, EngineConfig, Runner};
use crate::linalg::CMatrix;
use crate::model::{
    probability_weights, split_total, Bubble, CountTable, Loading, MembraneCell, Part, Population, Sign,
    Species, StateVector, Vec3,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MembraneConfig {
    pub x0: f64,
    pub x1: f64,
    /// Distance between neighbouring grains.
    pub spacing: f64,
    pub retract_first: bool,
    /// Ticks a freshly extended grain is kept before it may retract.
    pub grace: u32,
}

impl Default for MembraneConfig {
    fn default() -> Self {
        MembraneConfig { x0: 0.01, x1: 0.1, spacing: 1.0, retract_first: true, grace: 20 }
    }
}

impl MembraneConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.x0 && self.x0 < self.x1) || !(self.spacing > 0.0) {
            return Err(AqError::Config(format!("need 0 < X0 < X1 and a positive spacing, got {self:?}")));
        }
        Ok(())
    }
}

const FACES: [Vec3; 6] = [[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, 1.0], [0.0, 0.0, -1.0]];

fn coords(bubble: &Bubble) -> Result<&[Vec3]> {
    bubble.grain_coords.as_deref().ok_or_else(|| AqError::Config("bubble has no grain coordinates".into()))
}

fn close(a: Vec3, b: Vec3, tol: f64) -> bool {
    (0..3).all(|k| (a[k] - b[k]).abs() <= tol)
}

/// Grain adjacent to `j` across face `f`, if the lattice has one.
fn across(grains: &[Vec3], j: usize, f: Vec3, spacing: f64) -> Option<usize> {
    let p: Vec3 = std::array::from_fn(|k| grains[j][k] + f[k] * spacing);
    grains.iter().position(|&g| close(g, p, 1e-6 * spacing))
}

pub fn neighbours(grains: &[Vec3], j: usize, spacing: f64) -> Vec<usize> {
    FACES.iter().filter_map(|&f| across(grains, j, f, spacing)).collect()
}

/// Normalized amplitude modulus `|ψ_j|` of every grain.
pub fn moduli(bubble: &Bubble) -> Result<Vec<f64>> {
    Ok(probability_weights(bubble)?.into_iter().map(f64::sqrt).collect())
}

/// Supported grains with at least one face to the outside.
pub fn boundary_grains(bubble: &Bubble, spacing: f64) -> Result<Vec<usize>> {
    let grains = coords(bubble)?;
    Ok((0..bubble.dim)
        .filter(|&j| bubble.support[j])
        .filter(|&j| FACES.iter().any(|&f| across(grains, j, f, spacing).is_none_or(|o| !bubble.support[o])))
        .collect())
}

/// Face cells of the supported region, with amplitude meters from counts.
pub fn membrane_cells(bubble: &Bubble, spacing: f64) -> Result<Vec<MembraneCell>> {
    let grains = coords(bubble)?;
    let counts = bubble.counts();
    let mut cells = Vec::new();
    for j in (0..bubble.dim).filter(|&j| bubble.support[j]) {
        for f in FACES {
            if across(grains, j, f, spacing).is_some_and(|o| bubble.support[o]) {
                continue;
            }
            let p: Vec3 = std::array::from_fn(|k| grains[j][k] + f[k] * spacing / 2.0);
            let mut c = MembraneCell::at(cells.len(), p);
            c.amplitude_meter = (counts.net(j, Part::Re), counts.net(j, Part::Im));
            cells.push(c);
        }
    }
    Ok(cells)
}

fn refresh(bubble: &mut Bubble, spacing: f64) -> Result<()> {
    bubble.membrane = membrane_cells(bubble, spacing)?;
    bubble.collision_radius = 1.01 * spacing;
    Ok(())
}

/// Lattice bubble for `psi`: grains with modulus at least `X0` are
/// supported and padded to `A` quanta per type; the rest stay empty.
pub fn lattice_bubble(psi: &StateVector, grains: Vec<Vec3>, loading: &Loading, cfg: &MembraneConfig) -> Result<Bubble> {
    cfg.validate()?;
    if grains.len() != psi.dim() {
        return Err(AqError::DimensionMismatch(grains.len(), psi.dim()));
    }
    let mut b = Bubble::from_state(psi, loading);
    let m = moduli(&b)?;
    let Population::Counts(c) = &mut b.population else { unreachable!() };
    for (j, &mj) in m.iter().enumerate() {
        if mj < cfg.x0 {
            for k in 0..4 {
                c.set(Species::from_slot(j, k), 0);
            }
        }
    }
    b.support = m.iter().map(|&mj| mj >= cfg.x0).collect();
    b.grain_coords = Some(grains);
    refresh(&mut b, cfg.spacing)?;
    Ok(b)
}

fn clear_grain(counts: &mut CountTable, j: usize) {
    for k in 0..4 {
        counts.set(Species::from_slot(j, k), 0);
    }
}

fn seed_grain(counts: &mut CountTable, j: usize, pad: u64) {
    let (p, m) = split_total(0, pad);
    for part in [Part::Re, Part::Im] {
        counts.set(Species::new(part, Sign::Plus, j), p);
        counts.set(Species::new(part, Sign::Minus, j), m);
    }
}

/// Membrane state carried between ticks: the age of extended grains.
#[derive(Debug, Clone, PartialEq)]
pub struct MembraneTracker {
    pub cfg: MembraneConfig,
    /// Pair padding per type for newly supported grains.
    pub pad: u64,
    age: Vec<u32>,
}

impl MembraneTracker {
    pub fn new(cfg: MembraneConfig, dim: usize, pad: u64) -> Self {
        MembraneTracker { cfg, pad, age: vec![u32::MAX; dim] }
    }

    fn retract(&mut self, b: &mut Bubble) -> Result<bool> {
        let mut changed = false;
        loop {
            let m = moduli(b)?;
            let doomed: Vec<usize> = boundary_grains(b, self.cfg.spacing)?
                .into_iter()
                .filter(|&j| m[j] < self.cfg.x0 && self.age[j] >= self.cfg.grace)
                .collect();
            if doomed.is_empty() {
                return Ok(changed);
            }
            let live = b.support.iter().filter(|&&s| s).count();
            if doomed.len() >= live {
                return Err(AqError::EmptyBubble);
            }
            let Population::Counts(c) = &mut b.population else {
                return Err(AqError::Config("membrane motion needs a count population".into()));
            };
            for &j in &doomed {
                clear_grain(c, j);
                b.support[j] = false;
            }
            changed = true;
        }
    }

    fn extend(&mut self, b: &mut Bubble) -> Result<bool> {
        let m = moduli(b)?;
        let grains = coords(b)?.to_vec();
        let mut fresh = Vec::new();
        for j in boundary_grains(b, self.cfg.spacing)? {
            if m[j] > self.cfg.x1 {
                fresh.extend(neighbours(&grains, j, self.cfg.spacing).into_iter().filter(|&o| !b.support[o]));
            }
        }
        fresh.sort_unstable();
        fresh.dedup();
        let Population::Counts(c) = &mut b.population else {
            return Err(AqError::Config("membrane motion needs a count population".into()));
        };
        for &j in &fresh {
            seed_grain(c, j, self.pad);
            b.support[j] = true;
            self.age[j] = 0;
        }
        Ok(!fresh.is_empty())
    }

    /// One membrane update.
    pub fn update(&mut self, bubble: &Bubble) -> Result<Bubble> {
        self.cfg.validate()?;
        let mut b = bubble.clone();
        if self.cfg.retract_first {
            self.retract(&mut b)?;
            self.extend(&mut b)?;
        } else {
            self.extend(&mut b)?;
            self.retract(&mut b)?;
        }
        for a in &mut self.age {
            *a = a.saturating_add(1);
        }
        refresh(&mut b, self.cfg.spacing)?;
        Ok(b)
    }
}

/// Stateless update: no grace period for freshly extended grains.
pub fn update_membrane(bubble: &Bubble, cfg: &MembraneConfig, pad: u64) -> Result<Bubble> {
    MembraneTracker::new(MembraneConfig { grace: 0, ..*cfg }, bubble.dim, pad).update(bubble)
}

/// Probability-weighted mean of grain coordinates.
pub fn bubble_centroid(bubble: &Bubble) -> Result<Vec3> {
    let p = probability_weights(bubble)?;
    let grains = coords(bubble)?;
    let mut c = [0.0; 3];
    for (w, g) in p.iter().zip(grains) {
        for k in 0..3 {
            c[k] += w * g[k];
        }
    }
    Ok(c)
}

/// Nearest-neighbour hopping `−J Σ (|j⟩⟨j+1| + h.c.)` on an open chain.
pub fn chain_hamiltonian(n: usize, hop: f64) -> CMatrix {
    let mut h = CMatrix::zeros(n);
    for j in 0..n.saturating_sub(1) {
        h[(j, j + 1)] = (-hop).into();
        h[(j + 1, j)] = (-hop).into();
    }
    h
}

/// Evolves under `H` with a membrane update after every tick.
pub fn run_with_membrane<F>(
    bubble: &Bubble,
    h: &CMatrix,
    t: f64,
    engine: &EngineConfig,
    tracker: &mut MembraneTracker,
    mut observe: F,
) -> Result<Bubble>
where
    F: FnMut(u64, f64, &Bubble) -> Result<()>,
{
    let mut b = bubble.clone();
    let mut runner = Runner::new(h, engine, &b)?;
    let ticks = (t / engine.dt - 1e-9).ceil().max(0.0) as u64;
    let mut left = t;
    for _ in 0..ticks {
        let tau = left.min(engine.dt);
        left -= tau;
        runner.advance(&mut b, tau, |_, _, _| Ok(()))?;
        b = tracker.update(&b)?;
        observe(runner.tick, runner.time, &b)?;
    }
    Ok(b)
}

/// Pads supported grains to `A` quanta per type.
pub fn pad_support(bubble: &mut Bubble, total: u64) {
    let support = bubble.support.clone();
    if let Population::Counts(c) = &mut bubble.population {
        replenish_counts(c, total, &support);
    }
}
