//! Several particles coupled into chains of quanta.
//!
//! When two membranes touch, quanta of both bubbles are paired through
//! identification numbers. A chain `x¹, …, xⁿ` holds one quantum per
//! particle; it carries the product of their units on the joint basis list
//! `(l₁, …, lₙ)`. Chains are kept as counts per component tuple, so the joint
//! vector over `Nⁿ` entries is only formed for readout.

use std::collections::BTreeMap;

use num_complex::Complex64;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::compiler::{self, ReactionList, RuleKind};
use crate::error::{AqError, Result};
use crate::kinetics::{replenish_counts, EngineConfig};
use crate::linalg::CMatrix;
use crate::measurement::{measure, MeasureConfig};
use crate::model::{reduce_all, Bubble, CountTable, Loading, Part, Sign, Species, StateVector};
use crate::rng::{self, streams};

pub type Chain = Vec<Species>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Identity {
    Distinct,
    Boson,
    Fermion,
}

/// Counts of chains of `n` particles with `dim` basic states each.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ChainSet {
    pub n: usize,
    pub dim: usize,
    pub chains: BTreeMap<Chain, u64>,
}

fn unit_product(chain: &[Species]) -> Complex64 {
    chain.iter().fold(Complex64::new(1.0, 0.0), |acc, s| acc * s.unit())
}

impl ChainSet {
    pub fn new(n: usize, dim: usize) -> Self {
        ChainSet { n, dim, chains: BTreeMap::new() }
    }

    pub fn joint_dim(&self) -> usize {
        self.dim.pow(self.n as u32)
    }

    /// Number of chains.
    pub fn len(&self) -> u64 {
        self.chains.values().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn add(&mut self, chain: Chain, k: u64) {
        if k > 0 {
            *self.chains.entry(chain).or_default() += k;
        }
    }

    pub fn remove(&mut self, chain: &Chain, k: u64) {
        let left = self.chains.get(chain).copied().unwrap_or(0).saturating_sub(k);
        if left == 0 {
            self.chains.remove(chain);
        } else {
            self.chains.insert(chain.clone(), left);
        }
    }

    /// Basis list of a chain, flattened with particle 0 most significant.
    pub fn joint_index(&self, chain: &[Species]) -> usize {
        chain.iter().fold(0, |acc, s| acc * self.dim + s.state)
    }

    pub fn basis_list(&self, index: usize) -> Vec<usize> {
        let mut l = vec![0; self.n];
        let mut r = index;
        for k in (0..self.n).rev() {
            l[k] = r % self.dim;
            r /= self.dim;
        }
        l
    }

    /// Joint species a chain stands for.
    pub fn joint_species(&self, chain: &[Species]) -> Species {
        Species::with_unit(unit_product(chain), self.joint_index(chain))
    }

    /// Chains aggregated into one count table over the joint basis.
    pub fn joint_counts(&self) -> CountTable {
        let mut t = CountTable::zeros(self.joint_dim());
        for (c, &k) in &self.chains {
            t.add(self.joint_species(c), k);
        }
        t
    }

    /// Normalized joint readout.
    pub fn joint_state(&self) -> Result<StateVector> {
        let t = self.joint_counts();
        let amps: Vec<Complex64> =
            (0..t.dim()).map(|j| Complex64::new(t.net(j, Part::Re) as f64, t.net(j, Part::Im) as f64)).collect();
        let v = StateVector::new(amps);
        if v.norm() == 0.0 {
            return Err(AqError::AllCountsZero);
        }
        Ok(v.normalized())
    }

    /// Basis lists with a nonzero net amplitude.
    pub fn support(&self) -> Vec<usize> {
        let t = self.joint_counts();
        (0..t.dim()).filter(|&j| t.net(j, Part::Re) != 0 || t.net(j, Part::Im) != 0).collect()
    }

    /// Chain standing for `species` with every other component `α⁺`.
    pub fn canonical(&self, species: Species) -> Chain {
        let l = self.basis_list(species.state);
        let mut c: Chain = l.iter().map(|&s| Species::re(Sign::Plus, s)).collect();
        c[0] = Species::new(species.part, species.sign, l[0]);
        c
    }

    /// Loads net counts of a joint state as canonical chains.
    pub fn from_state(psi: &StateVector, n: usize, dim: usize, scale: f64) -> Result<Self> {
        if psi.dim() != dim.pow(n as u32) {
            return Err(AqError::DimensionMismatch(psi.dim(), dim.pow(n as u32)));
        }
        let mut set = ChainSet::new(n, dim);
        for (j, a) in psi.amplitudes.iter().enumerate() {
            for (part, x) in [(Part::Re, a.re), (Part::Im, a.im)] {
                let net = (x * scale).round() as i64;
                if net != 0 {
                    let s = Species::new(part, if net > 0 { Sign::Plus } else { Sign::Minus }, j);
                    set.add(set.canonical(s), net.unsigned_abs());
                }
            }
        }
        Ok(set)
    }

    /// Removes chains of `species` in key order.
    fn take(&mut self, species: Species, mut k: u64) {
        let keys: Vec<Chain> =
            self.chains.keys().filter(|c| self.joint_species(c) == species).cloned().collect();
        for c in keys {
            if k == 0 {
                break;
            }
            let m = self.chains[&c].min(k);
            self.remove(&c, m);
            k -= m;
        }
    }

    /// Annihilates opposite chains on every basis list.
    pub fn reduce(&mut self) {
        let t = self.joint_counts();
        for j in 0..t.dim() {
            for part in [Part::Re, Part::Im] {
                let (p, m) = (Species::new(part, Sign::Plus, j), Species::new(part, Sign::Minus, j));
                let k = t.get(p).min(t.get(m));
                self.take(p, k);
                self.take(m, k);
            }
        }
    }

    /// Adds or removes zero-net chain pairs so each joint type totals `target`.
    pub fn replenish(&mut self, target: u64) {
        let before = self.joint_counts();
        let mut after = before.clone();
        replenish_counts(&mut after, target, &vec![true; before.dim()]);
        for (s, want) in after.species() {
            let have = before.get(s);
            if want > have {
                self.add(self.canonical(s), want - have);
            } else if have > want {
                self.take(s, have - want);
            }
        }
    }

    /// Same chain with components `a` and `b` exchanged; for fermions the
    /// component moving to `b` changes sign.
    pub fn exchanged(chain: &[Species], a: usize, b: usize, identity: Identity) -> Chain {
        let mut c = chain.to_vec();
        c.swap(a, b);
        if identity == Identity::Fermion {
            c[b] = c[b].twin();
        }
        c
    }
}

/// Coupled particles and what they were built from.
#[derive(Debug, Clone, PartialEq)]
pub struct JointSystem {
    pub chains: ChainSet,
    pub identity: Identity,
    /// Touching pairs of particles.
    pub touches: Vec<(usize, usize)>,
    /// Quanta in the bubbles before coupling; bounds the chain count.
    pub budget: u64,
    /// Pair padding per joint type.
    pub per_type: u64,
}

impl JointSystem {
    pub fn new(chains: ChainSet, identity: Identity, touches: Vec<(usize, usize)>, budget: u64) -> Self {
        let per_type = (budget / (2 * chains.joint_dim() as u64)).max(1);
        JointSystem { chains, identity, touches, budget, per_type }
    }

    /// Engine settings matched to this system's padding.
    pub fn engine(&self, omega: f64, seed: u64) -> EngineConfig {
        EngineConfig { seed, ..EngineConfig::new(omega, self.per_type) }
    }

    pub fn state(&self) -> Result<StateVector> {
        self.chains.joint_state()
    }

    /// Pads every joint type to `target`, then gives pairs back until the
    /// chain count fits the budget again.
    pub fn replenish(&mut self, target: u64) {
        self.chains.replenish(target);
        let mut over = self.chains.len().saturating_sub(self.budget);
        while over > 0 {
            let t = self.chains.joint_counts();
            let Some((j, part)) = (0..t.dim())
                .flat_map(|j| [(j, Part::Re), (j, Part::Im)])
                .filter(|&(j, part)| t.total(j, part) > t.net(j, part).unsigned_abs())
                .max_by_key(|&(j, part)| (t.total(j, part), std::cmp::Reverse(j)))
            else {
                break;
            };
            let (p, m) = (Species::new(part, Sign::Plus, j), Species::new(part, Sign::Minus, j));
            let k = t.get(p).min(t.get(m)).min(over.div_ceil(2)).max(1);
            self.chains.take(p, k);
            self.chains.take(m, k);
            over = over.saturating_sub(2 * k);
        }
    }
}

fn touching(a: &Bubble, b: &Bubble) -> bool {
    let r = a.collision_radius.max(b.collision_radius);
    a.membrane.iter().any(|x| {
        b.membrane.iter().any(|y| (0..3).map(|k| (x.coords[k] - y.coords[k]).powi(2)).sum::<f64>() <= r * r)
    })
}

/// Reduced quanta of a bubble, one entry per quantum.
fn quanta_list(b: &Bubble) -> Vec<Species> {
    let r = reduce_all(b).counts();
    r.species().flat_map(|(s, k)| std::iter::repeat_n(s, k as usize)).collect()
}

/// Couples a line of bubbles, each touching the next. Quanta are paired by
/// a seeded random matching; leftovers of the larger side stay uncoupled.
pub fn couple_line(bubbles: &[Bubble], identity: Identity, seed: u64) -> Result<JointSystem> {
    let first = bubbles.first().ok_or(AqError::EmptyDecomposition)?;
    let dim = first.dim;
    let mut touches = Vec::new();
    for (k, pair) in bubbles.windows(2).enumerate() {
        if pair[1].dim != dim {
            return Err(AqError::DimensionMismatch(dim, pair[1].dim));
        }
        if !touching(&pair[0], &pair[1]) {
            return Err(AqError::NoTouchingArea);
        }
        touches.push((k, k + 1));
    }
    let mut chains: Vec<Chain> = quanta_list(first).into_iter().map(|s| vec![s]).collect();
    for (k, b) in bubbles.iter().enumerate().skip(1) {
        let mut r = rng::substream(seed, streams::COUPLING, k as u64);
        chains.shuffle(&mut r);
        let mut q = quanta_list(b);
        q.shuffle(&mut r);
        chains = chains
            .into_iter()
            .zip(q)
            .map(|(mut c, s)| {
                c.push(s);
                c
            })
            .collect();
    }
    let mut set = ChainSet::new(bubbles.len(), dim);
    for c in chains {
        set.add(c, 1);
    }
    let budget = bubbles.iter().map(Bubble::quanta).sum();
    Ok(JointSystem::new(set, identity, touches, budget))
}

pub fn couple_bubbles(b1: &Bubble, b2: &Bubble, identity: Identity, seed: u64) -> Result<JointSystem> {
    couple_line(&[b1.clone(), b2.clone()], identity, seed)
}

/// Chain reached from `chain` when its joint species becomes `target`:
/// the changed slots take the new basic states and the first of them
/// absorbs the unit, spectators are kept.
pub fn retarget(set: &ChainSet, chain: &[Species], target: Species) -> Result<Chain> {
    let from = set.basis_list(set.joint_index(chain));
    let to = set.basis_list(target.state);
    let changed: Vec<usize> = (0..set.n).filter(|&k| from[k] != to[k]).collect();
    if changed.len() > 2 {
        return Err(AqError::SpectatorMismatch(changed[2]));
    }
    let mut c = chain.to_vec();
    for &k in &changed {
        c[k].state = to[k];
    }
    let lead = changed.first().copied().unwrap_or(0);
    let others = c.iter().enumerate().filter(|&(k, _)| k != lead).fold(Complex64::new(1.0, 0.0), |acc, (_, s)| acc * s.unit());
    c[lead] = Species::with_unit(target.unit() / others, to[lead]);
    Ok(c)
}

/// Reaction list of a joint Hamiltonian over `Nⁿ` basis lists.
pub fn joint_list(h: &CMatrix) -> Result<ReactionList> {
    Ok(ReactionList::union(&compiler::compile(h)?.lists))
}

fn binomial<R: rand::Rng>(rng: &mut R, n: u64, p: f64) -> u64 {
    use rand_distr::{Binomial, Distribution};
    if n == 0 || p <= 0.0 {
        0
    } else if p >= 1.0 {
        n
    } else {
        Binomial::new(n, p).expect("valid binomial").sample(rng)
    }
}

/// One tick of catalysis between chains. A chain converts with probability
/// `γ0·l·τ·[catalyst]` where counts are those of joint species at the start
/// of the tick; products inherit the reagent chain's other components.
pub fn apply_two_particle_list(sys: &mut JointSystem, list: &ReactionList, cfg: &EngineConfig, tick: u64, tau: f64) -> Result<()> {
    if list.is_empty() {
        return Ok(());
    }
    let set = &sys.chains;
    let start = set.joint_counts();
    let mut options: BTreeMap<Species, Vec<(Species, f64)>> = BTreeMap::new();
    for rule in &list.rules {
        if rule.kind != RuleKind::Catalysis {
            continue;
        }
        if let Some((k, product, cat)) = rule.conversion() {
            let reagent = rule.reagents[k];
            if reagent.state >= set.joint_dim() || product.state >= set.joint_dim() {
                return Err(AqError::DimensionMismatch(reagent.state.max(product.state), set.joint_dim()));
            }
            let p = cfg.gamma0 * rule.rate * tau * start.get(rule.reagents[cat]) as f64;
            options.entry(reagent).or_default().push((product, p));
        }
    }
    let mut r = rng::substream(cfg.seed, streams::KINETICS, tick);
    let mut next = set.clone();
    for (chain, &count) in &set.chains {
        let Some(opts) = options.get(&set.joint_species(chain)) else { continue };
        let total: f64 = opts.iter().map(|(_, p)| p).sum();
        let shrink = if total > 1.0 { 1.0 / total } else { 1.0 };
        let (mut left, mut mass) = (count, 1.0);
        for &(product, p) in opts {
            let p = p * shrink;
            let k = binomial(&mut r, left, (p / mass).min(1.0));
            if k > 0 {
                let made = retarget(set, chain, product)?;
                next.remove(chain, k);
                next.add(made, k);
            }
            left -= k;
            mass -= p;
            if mass <= 0.0 {
                break;
            }
        }
    }
    sys.chains = next;
    Ok(())
}

/// Evolves the joint system under `H` (dimension `Nⁿ`) for time `t`.
pub fn evolve_joint(sys: &JointSystem, h: &CMatrix, t: f64, cfg: &EngineConfig) -> Result<JointSystem> {
    evolve_joint_observed(sys, h, t, cfg, |_, _, _| Ok(()))
}

/// [`evolve_joint`], calling `observe` after every tick.
pub fn evolve_joint_observed<F>(sys: &JointSystem, h: &CMatrix, t: f64, cfg: &EngineConfig, mut observe: F) -> Result<JointSystem>
where
    F: FnMut(u64, f64, &JointSystem) -> Result<()>,
{
    cfg.validate()?;
    if h.dim() != sys.chains.joint_dim() {
        return Err(AqError::DimensionMismatch(h.dim(), sys.chains.joint_dim()));
    }
    let list = joint_list(h)?;
    for rule in &list.rules {
        if let Some((k, product, _)) = rule.conversion() {
            retarget(&sys.chains, &sys.chains.canonical(rule.reagents[k]), product)?;
        }
    }
    let mut out = sys.clone();
    let ticks = (t / cfg.dt - 1e-9).ceil().max(0.0) as u64;
    let mut left = t;
    for tick in 0..ticks {
        let tau = left.min(cfg.dt);
        left -= tau;
        apply_two_particle_list(&mut out, &list, cfg, tick, tau)?;
        if cfg.replenish {
            out.replenish(cfg.total_per_type);
        }
        observe(tick + 1, t - left, &out)?;
    }
    Ok(out)
}

/// Settings for the exchange of identical particles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExchangeConfig {
    /// Swap probability per adjacent pair per tick.
    pub probability: f64,
    pub check_every: u64,
    /// Checkpoints without a new smallest defect before stopping.
    pub patience: u32,
    pub max_ticks: u64,
    pub seed: u64,
}

impl Default for ExchangeConfig {
    fn default() -> Self {
        ExchangeConfig { probability: 0.25, check_every: 1, patience: 10, max_ticks: 10_000, seed: 0 }
    }
}

/// Joint vector with particles `a` and `b` swapped.
pub fn swap_particles(psi: &StateVector, n: usize, dim: usize, a: usize, b: usize) -> StateVector {
    let set = ChainSet::new(n, dim);
    let mut out = vec![Complex64::new(0.0, 0.0); psi.dim()];
    for (j, &amp) in psi.amplitudes.iter().enumerate() {
        let mut l = set.basis_list(j);
        l.swap(a, b);
        out[l.iter().fold(0, |acc, &s| acc * dim + s)] = amp;
    }
    StateVector::new(out)
}

/// Largest `‖Ψ ∓ SWAP·Ψ‖` over adjacent transpositions: minus for bosons,
/// plus for fermions.
pub fn swap_defect(psi: &StateVector, n: usize, dim: usize, identity: Identity) -> f64 {
    let sign = if identity == Identity::Fermion { 1.0 } else { -1.0 };
    (0..n.saturating_sub(1))
        .map(|a| {
            let s = swap_particles(psi, n, dim, a, a + 1);
            psi.amplitudes.iter().zip(&s.amplitudes).map(|(x, y)| (x + y * sign).norm_sqr()).sum::<f64>().sqrt()
        })
        .fold(0.0, f64::max)
}

/// One round of exchange reactions on every adjacent pair of particles.
pub fn exchange_step(sys: &mut JointSystem, p: f64, seed: u64, tick: u64) {
    if sys.identity == Identity::Distinct {
        return;
    }
    let mut r = rng::substream(seed, streams::EXCHANGE, tick);
    for a in 0..sys.chains.n.saturating_sub(1) {
        let before = sys.chains.chains.clone();
        for (c, &k) in &before {
            let m = binomial(&mut r, k, p);
            if m > 0 {
                sys.chains.remove(c, m);
                sys.chains.add(ChainSet::exchanged(c, a, a + 1, sys.identity), m);
            }
        }
    }
}

/// Runs exchange until the swap defect stops improving, then reduces.
/// Returns the number of exchange ticks.
pub fn exchange(sys: &mut JointSystem, cfg: &ExchangeConfig) -> Result<u64> {
    if sys.identity == Identity::Distinct || sys.chains.n < 2 {
        return Ok(0);
    }
    let (n, dim, id) = (sys.chains.n, sys.chains.dim, sys.identity);
    let defect = |s: &JointSystem| s.state().map(|psi| swap_defect(&psi, n, dim, id)).unwrap_or(0.0);
    let mut best = defect(sys);
    let mut stale = 0;
    let mut tick = 0;
    while tick < cfg.max_ticks && stale < cfg.patience {
        for _ in 0..cfg.check_every.max(1) {
            exchange_step(sys, cfg.probability, cfg.seed, tick);
            tick += 1;
        }
        let d = defect(sys);
        if d < best {
            best = d;
            stale = 0;
        } else {
            stale += 1;
        }
    }
    sys.chains.reduce();
    Ok(tick)
}

/// Boson exchange; a no-op for other identities.
pub fn exchange_bosons(sys: &JointSystem, cfg: &ExchangeConfig) -> Result<JointSystem> {
    let mut out = sys.clone();
    if out.identity == Identity::Boson {
        exchange(&mut out, cfg)?;
    }
    Ok(out)
}

pub fn exchange_fermions(sys: &JointSystem, cfg: &ExchangeConfig) -> Result<JointSystem> {
    let mut out = sys.clone();
    if out.identity == Identity::Fermion {
        exchange(&mut out, cfg)?;
    }
    Ok(out)
}

/// Density matrix of the particles in `keep` (in that order) with the rest
/// traced out.
pub fn reduced_density(psi: &StateVector, n: usize, dim: usize, keep: &[usize]) -> CMatrix {
    let set = ChainSet::new(n, dim);
    let rest: Vec<usize> = (0..n).filter(|k| !keep.contains(k)).collect();
    let index = |l: &[usize], ks: &[usize]| ks.iter().fold(0, |acc, &k| acc * dim + l[k]);
    let m = dim.pow(keep.len() as u32);
    let mut groups: BTreeMap<usize, Vec<(usize, Complex64)>> = BTreeMap::new();
    for (j, &a) in psi.amplitudes.iter().enumerate() {
        let l = set.basis_list(j);
        groups.entry(index(&l, &rest)).or_default().push((index(&l, keep), a));
    }
    let mut rho = CMatrix::zeros(m);
    for g in groups.values() {
        for &(x, a) in g {
            for &(y, b) in g {
                rho[(x, y)] += a * b.conj();
            }
        }
    }
    rho
}

pub fn reduced_density_matrix(chains: &ChainSet, particle: usize) -> Result<CMatrix> {
    Ok(reduced_density(&chains.joint_state()?, chains.n, chains.dim, &[particle]))
}

/// Eigenvector of the largest eigenvalue of a Hermitian positive matrix,
/// phased so its largest entry is real and positive.
pub fn principal_state(rho: &CMatrix) -> StateVector {
    let n = rho.dim();
    let mut v = StateVector::new((0..n).map(|k| Complex64::new(1.0, 0.01 * k as f64)).collect()).normalized();
    for _ in 0..2000 {
        let w = StateVector::new(rho.apply(&v.amplitudes));
        if w.norm() == 0.0 {
            break;
        }
        let w = w.normalized();
        let diff: f64 = w.amplitudes.iter().zip(&v.amplitudes).map(|(a, b)| (a - b).norm_sqr()).sum();
        v = w;
        if diff < 1e-28 {
            break;
        }
    }
    let big = v.amplitudes.iter().copied().max_by(|a, b| a.norm().total_cmp(&b.norm())).unwrap_or_default();
    if big.norm() > 0.0 {
        let phase = big.conj() / big.norm();
        v.amplitudes.iter_mut().for_each(|a| *a *= phase);
    }
    v
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecoherenceMode {
    /// Components of the touch graph become independent systems.
    BubbleConnectivity,
    /// A split of the chain support triggers a measurement.
    SupportConnectivity,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecoherenceConfig {
    pub mode: DecoherenceMode,
    /// Connectivity threshold in units of `1/A`.
    pub c: f64,
    pub seed: u64,
}

impl Default for DecoherenceConfig {
    fn default() -> Self {
        DecoherenceConfig { mode: DecoherenceMode::SupportConnectivity, c: 1.0, seed: 0 }
    }
}

impl DecoherenceConfig {
    pub fn eps0(&self, per_type: u64) -> f64 {
        self.c / per_type as f64
    }

    pub fn eps1(&self, per_type: u64) -> f64 {
        2.0 * self.eps0(per_type)
    }
}

/// Single-linkage groups of basis lists whose max-norm gap is at most `eps`.
pub fn support_components(lists: &[Vec<usize>], eps: f64) -> Vec<Vec<usize>> {
    let near = |a: &[usize], b: &[usize]| a.iter().zip(b).map(|(x, y)| x.abs_diff(*y) as f64).fold(0.0, f64::max) <= eps;
    let mut seen = vec![false; lists.len()];
    let mut out = Vec::new();
    for s in 0..lists.len() {
        if seen[s] {
            continue;
        }
        seen[s] = true;
        let mut group = vec![s];
        let mut k = 0;
        while k < group.len() {
            let a = group[k];
            for b in 0..lists.len() {
                if !seen[b] && near(&lists[a], &lists[b]) {
                    seen[b] = true;
                    group.push(b);
                }
            }
            k += 1;
        }
        group.sort_unstable();
        out.push(group);
    }
    out
}

/// Independent pieces left after decoherence.
#[derive(Debug, Clone, PartialEq)]
pub struct Decohered {
    /// Selected support component, for the measurement pathway.
    pub component: Option<usize>,
    pub systems: Vec<JointSystem>,
    /// One-particle states rebuilt from the reduced density matrices.
    pub particles: Vec<StateVector>,
}

fn rebuild_particles(psi: &StateVector, n: usize, dim: usize) -> Vec<StateVector> {
    (0..n).map(|j| principal_state(&reduced_density(psi, n, dim, &[j]))).collect()
}

/// Splits a joint system. With bubble connectivity `touches` is the touch
/// graph after the motion; with support connectivity one component of the
/// chain support is selected through the urn.
pub fn decohere_components(sys: &JointSystem, touches: &[(usize, usize)], cfg: &DecoherenceConfig) -> Result<Decohered> {
    let (n, dim) = (sys.chains.n, sys.chains.dim);
    let psi = sys.state()?;
    match cfg.mode {
        DecoherenceMode::BubbleConnectivity => {
            let mut label: Vec<usize> = (0..n).collect();
            fn root(l: &mut [usize], x: usize) -> usize {
                let mut r = x;
                while l[r] != r {
                    r = l[r];
                }
                l[x] = r;
                r
            }
            for &(a, b) in touches {
                let (ra, rb) = (root(&mut label, a), root(&mut label, b));
                label[ra.max(rb)] = ra.min(rb);
            }
            let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
            for k in 0..n {
                groups.entry(root(&mut label, k)).or_default().push(k);
            }
            if groups.len() < 2 {
                return Err(AqError::NoSplit);
            }
            let mut systems = Vec::new();
            for members in groups.values() {
                let part = principal_state(&reduced_density(&psi, n, dim, members));
                let set = ChainSet::from_state(&part, members.len(), dim, sys.per_type as f64)?;
                let inner: Vec<(usize, usize)> = touches
                    .iter()
                    .filter(|(a, b)| members.contains(a) && members.contains(b))
                    .map(|(a, b)| {
                        let pos = |x: &usize| members.iter().position(|m| m == x).unwrap();
                        (pos(a), pos(b))
                    })
                    .collect();
                let budget = sys.budget * members.len() as u64 / n as u64;
                systems.push(JointSystem::new(set, sys.identity, inner, budget));
            }
            Ok(Decohered { component: None, systems, particles: rebuild_particles(&psi, n, dim) })
        }
        DecoherenceMode::SupportConnectivity => {
            let support = sys.chains.support();
            let lists: Vec<Vec<usize>> = support.iter().map(|&j| sys.chains.basis_list(j)).collect();
            let groups = support_components(&lists, cfg.eps1(sys.per_type));
            if groups.len() < 2 {
                return Err(AqError::NoSplit);
            }
            let p = psi.probabilities();
            let weights: Vec<f64> = groups.iter().map(|g| g.iter().map(|&k| p[support[k]]).sum()).collect();
            // one urn draw over component-aggregated types
            let agg = StateVector::new(weights.iter().map(|w| Complex64::new(w.sqrt(), 0.0)).collect());
            let loading = Loading { total_per_type: 1000, ..Loading::default() };
            let (record, _) = measure(&Bubble::from_state(&agg, &loading), &MeasureConfig { seed: cfg.seed, ..MeasureConfig::default() })?;
            let keep: Vec<usize> = groups[record.outcome].iter().map(|&k| support[k]).collect();
            let mut chains = sys.chains.clone();
            let doomed: Vec<Chain> =
                chains.chains.keys().filter(|c| !keep.contains(&sys.chains.joint_index(c))).cloned().collect();
            for c in doomed {
                chains.chains.remove(&c);
            }
            let kept = JointSystem { chains, ..sys.clone() };
            let psi = kept.state()?;
            Ok(Decohered { component: Some(record.outcome), systems: vec![kept], particles: rebuild_particles(&psi, n, dim) })
        }
    }
}
