//! Ballistic quanta in a spherical bubble.
//!
//! Quanta fly in straight lines and reflect specularly off the membrane.
//! A membrane hit tags the quantum with the Hamiltonian block owning that
//! area and hands it the cell's identification number if it has none. After
//! the move, quanta that are each other's nearest neighbour within `r0`
//! collide; the matching rule rewrites their types, never their trajectories.
//!
//! `r0` is calibrated so that a given pair collides in one tick with
//! probability `κ = γ0·Λ·Δt`, `Λ` being the list's reference rate. A rule of
//! rate `l` then fires on collision with probability `l / (Λ·f)`, `f` the
//! fraction of quanta carrying the pair's block tag.

use std::collections::HashMap;

use rand::Rng;

use super::EngineConfig;
use crate::compiler::{Compiled, MembraneSchedule, ReactionList, RuleKind};
use crate::error::{AqError, Result};
use crate::model::{AmplitudeQuantum, AuxOptions, Bubble, Part, Population, QuantumType, Sign, Species, Vec3};
use crate::rng::{self, streams};

/// Union of two balls of radius `d` whose centres are `d` apart, as a
/// fraction of the bubble volume: `EXCLUSION·(d/R)³`.
const EXCLUSION: f64 = 27.0 / 16.0;

#[derive(Debug, Clone, PartialEq)]
struct Outcome {
    products: (Species, Species),
    accept: f64,
}

#[derive(Debug, Clone, PartialEq)]
struct Region {
    /// Block tag served; `None` matches every quantum.
    label: Option<(usize, usize)>,
    rules: HashMap<(Species, Species), Outcome>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpatialPlan {
    pub r0: f64,
    /// Collision probability per pair per full tick.
    pub kappa: f64,
    regions: Vec<Region>,
    /// Division schedule used for membrane tagging.
    pub schedule: Option<MembraneSchedule>,
}

/// Density of the distance between two uniform points of the unit ball.
fn distance_density(s: f64) -> f64 {
    if s >= 2.0 {
        return 0.0;
    }
    3.0 * s * s - 2.25 * s.powi(3) + 0.1875 * s.powi(5)
}

/// Probability that two given quanta, among `n` others, are mutual nearest
/// neighbours within `r0` of each other.
pub fn pair_probability(r0: f64, radius: f64, n: u64) -> f64 {
    let s0 = (r0 / radius).min(2.0);
    let steps = 400;
    let h = s0 / steps as f64;
    let f = |s: f64| distance_density(s) * (-(n as f64) * EXCLUSION * s.powi(3)).exp();
    // Simpson
    let mut acc = f(0.0) + f(s0);
    for k in 1..steps {
        acc += f(k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
    }
    acc * h / 3.0
}

/// Collision radius giving pair probability `kappa`.
pub fn calibrate_radius(kappa: f64, radius: f64, n: u64) -> Result<f64> {
    let (mut lo, mut hi) = (0.0, 2.0 * radius);
    if !(kappa > 0.0) || pair_probability(hi, radius, n) < kappa {
        return Err(AqError::Config(format!("no collision radius yields pair probability {kappa}")));
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if pair_probability(mid, radius, n) < kappa {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

fn expected_quanta(bubble: &Bubble, cfg: &EngineConfig) -> u64 {
    let target = if cfg.replenish { 2 * bubble.support.iter().filter(|&&s| s).count() as u64 * cfg.total_per_type } else { 0 };
    bubble.quanta().max(target).max(2)
}

fn insert(rules: &mut HashMap<(Species, Species), Outcome>, list: &ReactionList, accept: impl Fn(f64) -> f64) -> Result<()> {
    for r in &list.rules {
        match r.kind {
            RuleKind::Catalysis => {
                let (a, b) = (r.reagents[0], r.reagents[1]);
                let (pa, pb) = (r.products[0], r.products[1]);
                let p = accept(r.rate);
                rules.insert((a, b), Outcome { products: (pa, pb), accept: p });
                rules.insert((b, a), Outcome { products: (pb, pa), accept: p });
            }
            RuleKind::MembraneTransform => {}
            _ => return Err(AqError::UnsupportedKind(format!("{:?} rules in the spatial backend", r.kind))),
        }
    }
    Ok(())
}

impl SpatialPlan {
    fn finish(mut self, cfg: &EngineConfig, bubble: &Bubble, reference: f64) -> Result<Self> {
        let n = expected_quanta(bubble, cfg) - 1;
        let kappa = cfg.gamma0 * reference * cfg.dt;
        let r0 = match cfg.collision_radius {
            Some(r0) => r0,
            None => calibrate_radius(kappa, cfg.bubble_radius, n)?,
        };
        let actual = pair_probability(r0, cfg.bubble_radius, n);
        let scale = kappa / actual;
        for region in &mut self.regions {
            for o in region.rules.values_mut() {
                o.accept *= scale;
                if o.accept > 1.0 + 1e-9 {
                    return Err(AqError::Config(format!("collision radius {r0} too small for the requested rate")));
                }
            }
        }
        self.r0 = r0;
        self.kappa = actual;
        Ok(self)
    }

    /// One region per block pair; quanta react under the tag of the lower-id partner.
    pub fn division(compiled: &Compiled, schedule: &MembraneSchedule, cfg: &EngineConfig, bubble: &Bubble) -> Result<Self> {
        let total = compiled.decomposition.total_weight();
        let mut regions = Vec::new();
        for area in &schedule.division {
            let weight = area.fraction * total;
            let mut rules = HashMap::new();
            for (b, l) in compiled.decomposition.blocks.iter().zip(&compiled.lists) {
                if (b.i, b.j) == area.block {
                    insert(&mut rules, l, |rate| rate / weight)?;
                }
            }
            regions.push(Region { label: Some(area.block), rules });
        }
        let plan = SpatialPlan { r0: 0.0, kappa: 0.0, regions, schedule: Some(schedule.clone()) };
        plan.finish(cfg, bubble, total)
    }

    /// A single list acting on every pair regardless of tags.
    pub fn single(list: &ReactionList, cfg: &EngineConfig, bubble: &Bubble) -> Result<Self> {
        let reference = list.rules.iter().map(|r| r.rate).fold(0.0, f64::max);
        if !(reference > 0.0) {
            return Err(AqError::Config("spatial list has no positive rate".into()));
        }
        let mut rules = HashMap::new();
        insert(&mut rules, list, |rate| rate / reference)?;
        let plan = SpatialPlan { r0: 0.0, kappa: 0.0, regions: vec![Region { label: None, rules }], schedule: None };
        plan.finish(cfg, bubble, reference)
    }

    /// Outcome for an ordered pair whose reacting block is `tag`.
    pub fn outcome(&self, tag: Option<(usize, usize)>, a: Species, b: Species) -> Option<((Species, Species), f64)> {
        let region = self.regions.iter().find(|r| r.label.is_none() || r.label == tag)?;
        region.rules.get(&(a, b)).map(|o| (o.products, o.accept))
    }
}

fn norm(v: Vec3) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Moves a point one tick inside a ball of radius `r`, reflecting
/// specularly. Returns the last membrane hit point, if any.
pub fn fly(position: &mut Vec3, velocity: &mut Vec3, r: f64) -> Option<Vec3> {
    let mut left = 1.0;
    let mut hit = None;
    for _ in 0..64 {
        let q = std::array::from_fn(|k| position[k] + velocity[k] * left);
        if norm(q) <= r {
            *position = q;
            return hit;
        }
        let a = dot(*velocity, *velocity);
        let b = 2.0 * dot(*position, *velocity);
        let c = dot(*position, *position) - r * r;
        let tau = ((-b + (b * b - 4.0 * a * c).max(0.0).sqrt()) / (2.0 * a)).clamp(0.0, left);
        let h: Vec3 = std::array::from_fn(|k| position[k] + velocity[k] * tau);
        let hn = norm(h);
        let n: Vec3 = std::array::from_fn(|k| h[k] / hn);
        let vn = dot(*velocity, n);
        *velocity = std::array::from_fn(|k| velocity[k] - 2.0 * vn * n[k]);
        *position = std::array::from_fn(|k| n[k] * r * (1.0 - 1e-12));
        left -= tau;
        hit = Some(h);
    }
    hit
}

fn nearest_cell(bubble: &Bubble, p: Vec3) -> Option<usize> {
    bubble
        .membrane
        .iter()
        .map(|c| {
            let d: f64 = (0..3).map(|k| (c.coords[k] - p[k]).powi(2)).sum();
            (d, c.id)
        })
        .min_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)))
        .map(|(_, id)| id)
}

/// Moves one quantum and applies membrane tagging.
pub fn move_quantum(q: &mut AmplitudeQuantum, bubble: &Bubble, schedule: Option<&MembraneSchedule>) -> Result<()> {
    let r = bubble.radius;
    if let Some(h) = fly(&mut q.position, &mut q.velocity, r) {
        if let Some(s) = schedule {
            q.kind.aux.block = s.area_at(h[2] / r);
        }
        if q.kind.aux.ident.is_none() {
            q.kind.aux.ident = nearest_cell(bubble, h).map(|id| id as u64);
        }
    }
    let d = norm(q.position);
    if !(d <= r * (1.0 + 1e-9)) {
        return Err(AqError::EscapedQuantum { id: q.id, radius: d });
    }
    Ok(())
}

fn cell_key(p: Vec3, h: f64) -> (i64, i64, i64) {
    ((p[0] / h).floor() as i64, (p[1] / h).floor() as i64, (p[2] / h).floor() as i64)
}

/// Pairs of indices that are mutual nearest neighbours within `r0`,
/// distance ties broken by lower id; sorted by the lower partner id.
pub fn mutual_pairs(positions: &[Vec3], ids: &[u64], r0: f64) -> Vec<(usize, usize)> {
    let mut grid: HashMap<(i64, i64, i64), Vec<usize>> = HashMap::new();
    for (k, &p) in positions.iter().enumerate() {
        grid.entry(cell_key(p, r0)).or_default().push(k);
    }
    let r2 = r0 * r0;
    let nearest: Vec<Option<usize>> = positions
        .iter()
        .enumerate()
        .map(|(k, &p)| {
            let (cx, cy, cz) = cell_key(p, r0);
            let mut best: Option<(f64, u64, usize)> = None;
            for dx in -1..=1 {
                for dy in -1..=1 {
                    for dz in -1..=1 {
                        let Some(cell) = grid.get(&(cx + dx, cy + dy, cz + dz)) else { continue };
                        for &o in cell {
                            if o == k {
                                continue;
                            }
                            let d: f64 = (0..3).map(|a| (positions[o][a] - p[a]).powi(2)).sum();
                            if d > r2 {
                                continue;
                            }
                            let cand = (d, ids[o], o);
                            if best.is_none_or(|b| (cand.0, cand.1) < (b.0, b.1)) {
                                best = Some(cand);
                            }
                        }
                    }
                }
            }
            best.map(|b| b.2)
        })
        .collect();
    let mut pairs: Vec<(usize, usize)> = nearest
        .iter()
        .enumerate()
        .filter_map(|(k, &n)| {
            let o = n?;
            (nearest[o] == Some(k) && ids[k] < ids[o]).then_some((k, o))
        })
        .collect();
    pairs.sort_by_key(|&(a, _)| ids[a]);
    pairs
}

/// Uniform number in `[0, 1)` keyed by the run seed, tick and pair.
pub fn pair_uniform(seed: u64, tick: u64, a: u64, b: u64) -> f64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    let h = mix(mix(mix(mix(seed) ^ tick) ^ a) ^ b);
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Applies the plan's rule to a colliding pair; `a` has the lower id.
pub fn react_pair(plan: &SpatialPlan, a: &mut AmplitudeQuantum, b: &mut AmplitudeQuantum, seed: u64, tick: u64, fraction: f64) {
    let tag = a.kind.aux.block;
    if plan.schedule.is_some() && tag.is_none() {
        return;
    }
    let Some(((pa, pb), accept)) = plan.outcome(tag, a.kind.species, b.kind.species) else { return };
    let p = accept * fraction;
    if p < 1.0 && pair_uniform(seed, tick, a.id, b.id) >= p {
        return;
    }
    a.kind.species = pa;
    b.kind.species = pb;
}

/// One tick of length `tau` (at most `cfg.dt`): move, then collide.
pub fn step_spatial(bubble: &mut Bubble, plan: &SpatialPlan, cfg: &EngineConfig, tick: u64, tau: f64) -> Result<()> {
    drift(bubble, cfg, tick, plan.schedule.as_ref())?;
    let Population::Particles(qs) = &mut bubble.population else { unreachable!() };
    let positions: Vec<Vec3> = qs.iter().map(|q| q.position).collect();
    let ids: Vec<u64> = qs.iter().map(|q| q.id).collect();
    let fraction = (tau / cfg.dt).min(1.0);
    for (i, j) in mutual_pairs(&positions, &ids, plan.r0) {
        let (x, y) = if i < j {
            let (l, r) = qs.split_at_mut(j);
            (&mut l[i], &mut r[0])
        } else {
            let (l, r) = qs.split_at_mut(i);
            (&mut r[0], &mut l[j])
        };
        react_pair(plan, x, y, cfg.seed, tick, fraction);
    }
    Ok(())
}

/// Motion and membrane tagging only.
pub fn drift(bubble: &mut Bubble, _cfg: &EngineConfig, _tick: u64, schedule: Option<&MembraneSchedule>) -> Result<()> {
    let mut qs = match std::mem::replace(&mut bubble.population, Population::Particles(Vec::new())) {
        Population::Particles(qs) => qs,
        Population::Counts(_) => return Err(AqError::Config("spatial backend needs a particle population".into())),
    };
    let result = qs.iter_mut().try_for_each(|q| move_quantum(q, bubble, schedule));
    bubble.population = Population::Particles(qs);
    result
}

fn random_point<R: Rng>(rng: &mut R, r: f64) -> Vec3 {
    loop {
        let p: Vec3 = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        if dot(p, p) <= 1.0 {
            return p.map(|x| x * r * (1.0 - 1e-9));
        }
    }
}

fn random_direction<R: Rng>(rng: &mut R, speed: f64) -> Vec3 {
    loop {
        let p: Vec3 = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        let n = norm(p);
        if n > 1e-6 && n <= 1.0 {
            return p.map(|x| x / n * speed);
        }
    }
}

fn random_tag<R: Rng>(rng: &mut R, schedule: Option<&MembraneSchedule>) -> Option<(usize, usize)> {
    let s = schedule?;
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for a in &s.division {
        acc += a.fraction;
        if u < acc {
            return Some(a.block);
        }
    }
    s.division.last().map(|a| a.block)
}

fn spawn<R: Rng>(bubble: &mut Bubble, species: Species, cfg: &EngineConfig, rng: &mut R, schedule: Option<&MembraneSchedule>) -> AmplitudeQuantum {
    let r = bubble.radius;
    let q = AmplitudeQuantum {
        id: bubble.next_id,
        kind: QuantumType { species, aux: AuxOptions { block: random_tag(rng, schedule), color: None, ident: None } },
        position: random_point(rng, r),
        velocity: random_direction(rng, cfg.speed * r),
    };
    bubble.next_id += 1;
    q
}

/// Spreads a count bubble into explicit quanta, uniform in the ball with
/// isotropic velocities, and labels the membrane by the division schedule.
pub fn populate(bubble: &Bubble, cfg: &EngineConfig, schedule: Option<&MembraneSchedule>) -> Result<Bubble> {
    let counts = bubble.counts();
    let mut out = bubble.clone();
    out.radius = cfg.bubble_radius;
    let scale = cfg.bubble_radius / bubble.radius;
    out.collision_radius *= scale;
    for c in &mut out.membrane {
        c.coords = c.coords.map(|x| x * scale);
        if let Some(s) = schedule {
            c.division_label = s.area_at(c.coords[2] / cfg.bubble_radius);
        }
    }
    let mut rng = rng::stream(cfg.seed, streams::INIT);
    let mut qs = Vec::with_capacity(counts.quanta() as usize);
    for (s, n) in counts.species() {
        for _ in 0..n {
            qs.push(spawn(&mut out, s, cfg, &mut rng, schedule));
        }
    }
    out.population = Population::Particles(qs);
    Ok(out)
}

/// Keeps every supported type near `A` quanta by adding pairs at random
/// points or deleting the newest pairs.
pub fn replenish_particles(bubble: &mut Bubble, cfg: &EngineConfig, tick: u64, schedule: Option<&MembraneSchedule>) -> Result<()> {
    let counts = bubble.counts();
    let mut rng = rng::substream(cfg.seed, streams::REPLENISH, tick);
    let mut added = Vec::new();
    let mut doomed: std::collections::HashSet<u64> = std::collections::HashSet::new();
    let Population::Particles(qs) = &bubble.population else { unreachable!() };
    let mut by_species: HashMap<Species, Vec<u64>> = HashMap::new();
    for q in qs {
        by_species.entry(q.kind.species).or_default().push(q.id);
    }
    for v in by_species.values_mut() {
        v.sort_unstable();
    }
    for j in 0..bubble.dim {
        if !bubble.support[j] {
            continue;
        }
        for part in [Part::Re, Part::Im] {
            let (p, m) = (Species::new(part, Sign::Plus, j), Species::new(part, Sign::Minus, j));
            let total = counts.total(j, part);
            if total < cfg.total_per_type {
                for _ in 0..(cfg.total_per_type - total) / 2 {
                    added.push(spawn(bubble, p, cfg, &mut rng, schedule));
                    added.push(spawn(bubble, m, cfg, &mut rng, schedule));
                }
            } else {
                let k = ((total - cfg.total_per_type) / 2).min(counts.get(p)).min(counts.get(m)) as usize;
                for s in [p, m] {
                    let ids = by_species.get(&s).map(|v| v.as_slice()).unwrap_or(&[]);
                    doomed.extend(ids.iter().rev().take(k));
                }
            }
        }
    }
    let Population::Particles(qs) = &mut bubble.population else { unreachable!() };
    if !doomed.is_empty() {
        qs.retain(|q| !doomed.contains(&q.id));
    }
    qs.extend(added);
    Ok(())
}
