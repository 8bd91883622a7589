//! Amplitude quanta, bubbles and the bubble/state-vector correspondence.
//!
//! A bubble stores integer counts of quanta per type `x^s_j`: part `x` (real
//! `α` or imaginary `β`), sign `s` and basic state `j`. Amplitudes only appear
//! at readout, as `λ_j ∝ ([α_j] + i[β_j])·g` with `[x_j] = [x^+_j] − [x^-_j]`.

use std::fmt;
use std::io::{BufRead, Write};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{AqError, Result};

/// Layout version of bubble snapshots. Adding an auxiliary option bumps it.
pub const SNAPSHOT_FORMAT: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Part {
    #[serde(rename = "re")]
    Re,
    #[serde(rename = "im")]
    Im,
}

impl Part {
    pub fn other(self) -> Part {
        match self {
            Part::Re => Part::Im,
            Part::Im => Part::Re,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Sign {
    #[serde(rename = "+")]
    Plus,
    #[serde(rename = "-")]
    Minus,
}

impl Sign {
    pub fn flip(self) -> Sign {
        match self {
            Sign::Plus => Sign::Minus,
            Sign::Minus => Sign::Plus,
        }
    }

    pub fn times(self, other: Sign) -> Sign {
        if self == other {
            Sign::Plus
        } else {
            Sign::Minus
        }
    }

    pub fn value(self) -> i64 {
        match self {
            Sign::Plus => 1,
            Sign::Minus => -1,
        }
    }

    pub fn of(x: f64) -> Sign {
        if x < 0.0 {
            Sign::Minus
        } else {
            Sign::Plus
        }
    }
}

/// The type `x^s_j` of a quantum without its auxiliary options.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Species {
    pub part: Part,
    pub sign: Sign,
    pub state: usize,
}

impl Species {
    pub const fn new(part: Part, sign: Sign, state: usize) -> Self {
        Species { part, sign, state }
    }

    pub const fn re(sign: Sign, state: usize) -> Self {
        Species::new(Part::Re, sign, state)
    }

    pub const fn im(sign: Sign, state: usize) -> Self {
        Species::new(Part::Im, sign, state)
    }

    /// Column of this species inside a [`CountTable`] row.
    pub fn slot(&self) -> usize {
        slot_of(self.part, self.sign)
    }

    pub fn from_slot(state: usize, slot: usize) -> Self {
        let part = if slot < 2 { Part::Re } else { Part::Im };
        let sign = if slot % 2 == 0 { Sign::Plus } else { Sign::Minus };
        Species { part, sign, state }
    }

    /// The sign-opposite twin `x^{-s}_j`.
    pub fn twin(&self) -> Self {
        Species { sign: self.sign.flip(), ..*self }
    }

    /// Amplitude carried by one quantum, in grains: `±1` or `±i`.
    pub fn unit(&self) -> Complex64 {
        let s = self.sign.value() as f64;
        match self.part {
            Part::Re => Complex64::new(s, 0.0),
            Part::Im => Complex64::new(0.0, s),
        }
    }

    /// Species whose unit equals `unit` (must be one of `±1, ±i`).
    pub fn with_unit(unit: Complex64, state: usize) -> Self {
        if unit.im.abs() > unit.re.abs() {
            Species::im(Sign::of(unit.im), state)
        } else {
            Species::re(Sign::of(unit.re), state)
        }
    }
}

pub fn slot_of(part: Part, sign: Sign) -> usize {
    let p = match part {
        Part::Re => 0,
        Part::Im => 2,
    };
    p + match sign {
        Sign::Plus => 0,
        Sign::Minus => 1,
    }
}

impl fmt::Display for Species {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let p = match self.part {
            Part::Re => 'α',
            Part::Im => 'β',
        };
        let s = match self.sign {
            Sign::Plus => '+',
            Sign::Minus => '-',
        };
        write!(f, "{p}_{}^{s}", self.state)
    }
}

/// Auxiliary options of a quantum type, in fixed order.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AuxOptions {
    pub block: Option<(usize, usize)>,
    pub color: Option<u8>,
    pub ident: Option<u64>,
}

/// Full quantum type `x^s_r` with `r = j r_1 … r_k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct QuantumType {
    pub species: Species,
    pub aux: AuxOptions,
}

impl QuantumType {
    pub fn bare(species: Species) -> Self {
        QuantumType { species, aux: AuxOptions::default() }
    }

    pub fn check(&self, dim: usize) -> Result<()> {
        if self.species.state >= dim {
            return Err(AqError::InvalidOutcome { outcome: self.species.state, dim });
        }
        if let Some((i, j)) = self.aux.block {
            if i > j || j >= dim {
                return Err(AqError::Config(format!("block ({i},{j}) invalid for dimension {dim}")));
            }
        }
        Ok(())
    }
}

impl fmt::Display for QuantumType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.species)?;
        if let Some((i, j)) = self.aux.block {
            write!(f, "[{i},{j}]")?;
        }
        if let Some(c) = self.aux.color {
            write!(f, "c{c}")?;
        }
        if let Some(id) = self.aux.ident {
            write!(f, "#{id}")?;
        }
        Ok(())
    }
}

pub type Vec3 = [f64; 3];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmplitudeQuantum {
    pub id: u64,
    pub kind: QuantumType,
    pub position: Vec3,
    pub velocity: Vec3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MembraneCell {
    pub id: usize,
    pub coords: Vec3,
    pub division_label: Option<(usize, usize)>,
    pub color: Option<u8>,
    pub ident: Option<u64>,
    /// `([α], [β])` of the grain adjacent to this cell.
    pub amplitude_meter: (i64, i64),
}

impl MembraneCell {
    pub fn at(id: usize, coords: Vec3) -> Self {
        MembraneCell { id, coords, division_label: None, color: None, ident: None, amplitude_meter: (0, 0) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VirtualStatus {
    Empty,
    Half,
    Real,
}

/// A two-slot membrane cell waiting for two equal arrivals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VirtualState {
    pub cell: usize,
    pub slot1: Option<QuantumType>,
    pub slot2: Option<QuantumType>,
}

impl VirtualState {
    pub fn empty(cell: usize) -> Self {
        VirtualState { cell, slot1: None, slot2: None }
    }

    pub fn status(&self) -> VirtualStatus {
        match (self.slot1, self.slot2) {
            (None, _) => VirtualStatus::Empty,
            (Some(_), None) => VirtualStatus::Half,
            (Some(_), Some(_)) => VirtualStatus::Real,
        }
    }

    pub fn is_consistent(&self) -> bool {
        match (self.slot1, self.slot2) {
            (None, Some(_)) => false,
            (Some(a), Some(b)) => a == b,
            _ => true,
        }
    }
}

/// Integer counts `[x^s_j]`, one row of four columns per basic state.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountTable {
    rows: Vec<[u64; 4]>,
}

impl CountTable {
    pub fn zeros(dim: usize) -> Self {
        CountTable { rows: vec![[0; 4]; dim] }
    }

    pub fn dim(&self) -> usize {
        self.rows.len()
    }

    pub fn rows(&self) -> &[[u64; 4]] {
        &self.rows
    }

    pub fn get(&self, s: Species) -> u64 {
        self.rows[s.state][s.slot()]
    }

    pub fn set(&mut self, s: Species, n: u64) {
        self.rows[s.state][s.slot()] = n;
    }

    pub fn add(&mut self, s: Species, n: u64) {
        self.rows[s.state][s.slot()] += n;
    }

    pub fn remove(&mut self, s: Species, n: u64) {
        let c = &mut self.rows[s.state][s.slot()];
        *c = c.saturating_sub(n);
    }

    /// Net count `[x_j] = [x^+_j] − [x^-_j]`.
    pub fn net(&self, state: usize, part: Part) -> i64 {
        let r = &self.rows[state];
        let (p, m) = match part {
            Part::Re => (r[0], r[1]),
            Part::Im => (r[2], r[3]),
        };
        p as i64 - m as i64
    }

    /// Total count `{x_j} = [x^+_j] + [x^-_j]`.
    pub fn total(&self, state: usize, part: Part) -> u64 {
        let r = &self.rows[state];
        match part {
            Part::Re => r[0] + r[1],
            Part::Im => r[2] + r[3],
        }
    }

    pub fn quanta(&self) -> u64 {
        self.rows.iter().flatten().sum()
    }

    /// Builds a table whose net counts are the given `(re, im)` pairs, with
    /// no opposite-sign padding.
    pub fn from_nets(nets: &[(i64, i64)]) -> Self {
        let mut t = CountTable::zeros(nets.len());
        for (j, &(a, b)) in nets.iter().enumerate() {
            t.set(Species::re(Sign::of(a as f64), j), a.unsigned_abs());
            t.set(Species::im(Sign::of(b as f64), j), b.unsigned_abs());
        }
        t
    }

    pub fn nets(&self) -> Vec<(i64, i64)> {
        (0..self.dim()).map(|j| (self.net(j, Part::Re), self.net(j, Part::Im))).collect()
    }

    pub fn species(&self) -> impl Iterator<Item = (Species, u64)> + '_ {
        self.rows
            .iter()
            .enumerate()
            .flat_map(|(j, r)| (0..4).map(move |k| (Species::from_slot(j, k), r[k])))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Population {
    /// Well-mixed bubble: only counts matter.
    Counts(CountTable),
    /// Spatial bubble: explicit pointwise quanta.
    Particles(Vec<AmplitudeQuantum>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bubble {
    pub dim: usize,
    pub grain: f64,
    pub population: Population,
    pub membrane: Vec<MembraneCell>,
    pub virtual_state: Option<VirtualState>,
    /// Distance within which membrane cells count as adjacent.
    pub collision_radius: f64,
    pub radius: f64,
    /// Basic states currently inside the membrane.
    pub support: Vec<bool>,
    /// Spatial coordinates of the grain of each basic state, if any.
    pub grain_coords: Option<Vec<Vec3>>,
    pub next_id: u64,
}

/// Parameters for loading a state vector into integer counts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Loading {
    /// Target total `{x_j} = A` per type (part, state).
    pub total_per_type: u64,
    /// Net count of a unit amplitude, as a fraction of `A`.
    pub load: f64,
    pub membrane_cells: usize,
    pub radius: f64,
}

impl Default for Loading {
    fn default() -> Self {
        Loading { total_per_type: 10_000, load: 1.0, membrane_cells: 1024, radius: 1.0 }
    }
}

impl Bubble {
    pub fn from_counts(counts: CountTable, grain: f64) -> Self {
        let dim = counts.dim();
        Bubble {
            dim,
            grain,
            population: Population::Counts(counts),
            membrane: sphere_membrane(256, 1.0),
            virtual_state: None,
            collision_radius: membrane_reach(256, 1.0),
            radius: 1.0,
            support: vec![true; dim],
            grain_coords: None,
            next_id: 0,
        }
    }

    /// Well-mixed bubble representing `state`, padded with complementary
    /// pairs so that every type holds about `A` quanta.
    pub fn from_state(state: &StateVector, loading: &Loading) -> Self {
        let scale = loading.load * loading.total_per_type as f64;
        let mut counts = CountTable::zeros(state.dim());
        for (j, amp) in state.amplitudes.iter().enumerate() {
            for (part, x) in [(Part::Re, amp.re), (Part::Im, amp.im)] {
                let net = (x * scale).round() as i64;
                let (p, m) = split_total(net, loading.total_per_type);
                counts.set(Species::new(part, Sign::Plus, j), p);
                counts.set(Species::new(part, Sign::Minus, j), m);
            }
        }
        let mut b = Bubble::from_counts(counts, 1.0 / scale.max(1.0));
        b.radius = loading.radius;
        b.membrane = sphere_membrane(loading.membrane_cells.max(1), loading.radius);
        b.collision_radius = membrane_reach(loading.membrane_cells.max(1), loading.radius);
        b
    }

    pub fn counts(&self) -> CountTable {
        match &self.population {
            Population::Counts(c) => c.clone(),
            Population::Particles(qs) => {
                let mut t = CountTable::zeros(self.dim);
                for q in qs {
                    t.add(q.kind.species, 1);
                }
                t
            }
        }
    }

    pub fn quanta(&self) -> u64 {
        match &self.population {
            Population::Counts(c) => c.quanta(),
            Population::Particles(qs) => qs.len() as u64,
        }
    }

    pub fn state(&self) -> Result<StateVector> {
        state_from_bubble(self)
    }

    pub fn check(&self) -> Result<()> {
        if let Population::Particles(qs) = &self.population {
            for q in qs {
                q.kind.check(self.dim)?;
            }
        }
        if let Some(vs) = &self.virtual_state {
            if !vs.is_consistent() {
                return Err(AqError::Config("inconsistent virtual state".into()));
            }
        }
        Ok(())
    }
}

/// `(n+, n-)` with `n+ − n- = net` and `n+ + n-` equal to `total` (or
/// `total + 1` when parities differ), never below `|net|`.
pub fn split_total(net: i64, total: u64) -> (u64, u64) {
    let mag = net.unsigned_abs();
    let mut t = total.max(mag);
    if (t - mag) % 2 == 1 {
        t += 1;
    }
    let pad = (t - mag) / 2;
    if net >= 0 {
        (mag + pad, pad)
    } else {
        (pad, mag + pad)
    }
}

/// Roughly uniform cells on a sphere (Fibonacci lattice), ids in order.
/// Adjacency distance that keeps a Fibonacci sphere of `cells` cells connected.
pub fn membrane_reach(cells: usize, radius: f64) -> f64 {
    2.0 * radius * (4.0 * std::f64::consts::PI / cells.max(1) as f64).sqrt()
}

pub fn sphere_membrane(cells: usize, radius: f64) -> Vec<MembraneCell> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..cells)
        .map(|k| {
            let z = 1.0 - 2.0 * (k as f64 + 0.5) / cells as f64;
            let r = (1.0 - z * z).max(0.0).sqrt();
            let phi = golden * k as f64;
            MembraneCell::at(k, [radius * r * phi.cos(), radius * r * phi.sin(), radius * z])
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateVector {
    pub amplitudes: Vec<Complex64>,
}

impl StateVector {
    pub fn new(amplitudes: Vec<Complex64>) -> Self {
        StateVector { amplitudes }
    }

    pub fn basis(dim: usize, j: usize) -> Self {
        let mut a = vec![Complex64::new(0.0, 0.0); dim];
        a[j] = Complex64::new(1.0, 0.0);
        StateVector { amplitudes: a }
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn norm(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn normalized(mut self) -> Self {
        let n = self.norm();
        if n > 0.0 {
            for a in &mut self.amplitudes {
                *a /= n;
            }
        }
        self
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.amplitudes.iter().map(|a| a.norm_sqr()).collect()
    }
}

/// Normalized state corresponding to net counts `[α_j] + i[β_j]`.
pub fn state_from_counts(counts: &CountTable, grain: f64) -> Result<StateVector> {
    let amps: Vec<Complex64> = (0..counts.dim())
        .map(|j| Complex64::new(counts.net(j, Part::Re) as f64, counts.net(j, Part::Im) as f64) * grain)
        .collect();
    if amps.iter().all(|a| a.re == 0.0 && a.im == 0.0) {
        return Err(AqError::AllCountsZero);
    }
    Ok(StateVector::new(amps).normalized())
}

pub fn state_from_bubble(bubble: &Bubble) -> Result<StateVector> {
    state_from_counts(&bubble.counts(), bubble.grain)
}

/// `p_j = ([α_j]² + [β_j]²) / Σ_k ([α_k]² + [β_k]²)`.
pub fn weights_from_counts(counts: &CountTable) -> Result<Vec<f64>> {
    let sq: Vec<u128> = (0..counts.dim())
        .map(|j| {
            let a = counts.net(j, Part::Re).unsigned_abs() as u128;
            let b = counts.net(j, Part::Im).unsigned_abs() as u128;
            a * a + b * b
        })
        .collect();
    let total: u128 = sq.iter().sum();
    if total == 0 {
        return Err(AqError::AllCountsZero);
    }
    Ok(sq.iter().map(|&s| s as f64 / total as f64).collect())
}

pub fn probability_weights(bubble: &Bubble) -> Result<Vec<f64>> {
    weights_from_counts(&bubble.counts())
}

/// Annihilates every `(x^+_j, x^-_j)` pair of basic state `j`.
pub fn reduce_counts(counts: &mut CountTable, j: usize) {
    for part in [Part::Re, Part::Im] {
        let p = Species::new(part, Sign::Plus, j);
        let m = Species::new(part, Sign::Minus, j);
        let k = counts.get(p).min(counts.get(m));
        counts.remove(p, k);
        counts.remove(m, k);
    }
}

/// `j`-reduction of a bubble. In a particle population the lowest-id quanta
/// of each sign are paired off first.
pub fn apply_reduction(bubble: &Bubble, j: usize) -> Bubble {
    let mut out = bubble.clone();
    match &mut out.population {
        Population::Counts(c) => reduce_counts(c, j),
        Population::Particles(qs) => {
            qs.sort_by_key(|q| q.id);
            let mut doomed = std::collections::HashSet::new();
            for part in [Part::Re, Part::Im] {
                let plus: Vec<u64> = qs
                    .iter()
                    .filter(|q| q.kind.species == Species::new(part, Sign::Plus, j))
                    .map(|q| q.id)
                    .collect();
                let minus: Vec<u64> = qs
                    .iter()
                    .filter(|q| q.kind.species == Species::new(part, Sign::Minus, j))
                    .map(|q| q.id)
                    .collect();
                for (a, b) in plus.iter().zip(&minus) {
                    doomed.insert(*a);
                    doomed.insert(*b);
                }
            }
            qs.retain(|q| !doomed.contains(&q.id));
        }
    }
    out
}

pub fn reduce_all(bubble: &Bubble) -> Bubble {
    (0..bubble.dim).fold(bubble.clone(), |b, j| apply_reduction(&b, j))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "lowercase")]
enum SnapshotRecord {
    Quantum {
        id: u64,
        part: Part,
        sign: Sign,
        state: usize,
        block: Option<(usize, usize)>,
        color: Option<u8>,
        ident: Option<u64>,
        position: Vec3,
        velocity: Vec3,
    },
    Count {
        state: usize,
        part: Part,
        sign: Sign,
        n: u64,
    },
    Membrane {
        format: u32,
        dim: usize,
        grain: f64,
        radius: f64,
        collision_radius: f64,
        support: Vec<bool>,
        grain_coords: Option<Vec<Vec3>>,
        next_id: u64,
        cells: Vec<MembraneCell>,
        virtual_state: Option<VirtualState>,
    },
}

/// Writes a bubble as JSON Lines: quanta (or counts) first, membrane last.
/// Quanta are ordered by id so equal bubbles give equal bytes.
pub fn write_snapshot<W: Write>(bubble: &Bubble, mut w: W) -> std::io::Result<()> {
    let line = |w: &mut W, r: &SnapshotRecord| -> std::io::Result<()> {
        serde_json::to_writer(&mut *w, r)?;
        w.write_all(b"\n")
    };
    match &bubble.population {
        Population::Particles(qs) => {
            let mut sorted: Vec<&AmplitudeQuantum> = qs.iter().collect();
            sorted.sort_by_key(|q| q.id);
            for q in sorted {
                line(
                    &mut w,
                    &SnapshotRecord::Quantum {
                        id: q.id,
                        part: q.kind.species.part,
                        sign: q.kind.species.sign,
                        state: q.kind.species.state,
                        block: q.kind.aux.block,
                        color: q.kind.aux.color,
                        ident: q.kind.aux.ident,
                        position: q.position,
                        velocity: q.velocity,
                    },
                )?;
            }
        }
        Population::Counts(c) => {
            for (s, n) in c.species() {
                line(&mut w, &SnapshotRecord::Count { state: s.state, part: s.part, sign: s.sign, n })?;
            }
        }
    }
    line(
        &mut w,
        &SnapshotRecord::Membrane {
            format: SNAPSHOT_FORMAT,
            dim: bubble.dim,
            grain: bubble.grain,
            radius: bubble.radius,
            collision_radius: bubble.collision_radius,
            support: bubble.support.clone(),
            grain_coords: bubble.grain_coords.clone(),
            next_id: bubble.next_id,
            cells: bubble.membrane.clone(),
            virtual_state: bubble.virtual_state,
        },
    )
}

pub fn read_snapshot<R: BufRead>(r: R) -> Result<Bubble> {
    let mut quanta = Vec::new();
    let mut counts: Vec<(Species, u64)> = Vec::new();
    let mut bubble = None;
    for (k, line) in r.lines().enumerate() {
        let line = line.map_err(|e| AqError::Io { path: format!("line {}", k + 1), message: e.to_string() })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SnapshotRecord = serde_json::from_str(&line)
            .map_err(|e| AqError::Io { path: format!("line {}", k + 1), message: e.to_string() })?;
        match rec {
            SnapshotRecord::Quantum { id, part, sign, state, block, color, ident, position, velocity } => {
                quanta.push(AmplitudeQuantum {
                    id,
                    kind: QuantumType { species: Species::new(part, sign, state), aux: AuxOptions { block, color, ident } },
                    position,
                    velocity,
                })
            }
            SnapshotRecord::Count { state, part, sign, n } => counts.push((Species::new(part, sign, state), n)),
            SnapshotRecord::Membrane {
                format,
                dim,
                grain,
                radius,
                collision_radius,
                support,
                grain_coords,
                next_id,
                cells,
                virtual_state,
            } => {
                if format != SNAPSHOT_FORMAT {
                    return Err(AqError::Config(format!("unsupported snapshot format {format}")));
                }
                bubble = Some(Bubble {
                    dim,
                    grain,
                    population: Population::Counts(CountTable::zeros(dim)),
                    membrane: cells,
                    virtual_state,
                    collision_radius,
                    radius,
                    support,
                    grain_coords,
                    next_id,
                })
            }
        }
    }
    let mut b = bubble.ok_or_else(|| AqError::Config("snapshot has no membrane record".into()))?;
    if counts.is_empty() && !quanta.is_empty() {
        b.population = Population::Particles(quanta);
    } else {
        let mut t = CountTable::zeros(b.dim);
        for (s, n) in counts {
            t.set(s, n);
        }
        b.population = Population::Counts(t);
    }
    Ok(b)
}
