//! Measurement: coloring, reduction, the virtual-state automaton, split
//! detection and rebuild.
//!
//! After every `(+, −)` pair is annihilated, quanta hit the virtual state
//! in an order drawn from the seed stream in proportion to what is left in
//! the bubble. The quantum sitting in the virtual state is out of the bubble
//! until displaced. The arrival type carries the identification label of
//! the membrane cell the quantum came through, so two consecutive arrivals
//! match only if they share species and label; with many labels this makes
//! outcome `l` occur with probability `([α_l]² + [β_l]²) / Σ`.

use std::collections::{BTreeMap, HashMap, VecDeque};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{AqError, Result};
use crate::model::{reduce_all, AuxOptions, Bubble, Population, QuantumType, Species, Vec3, VirtualState, VirtualStatus};
use crate::rng::{self, streams};

/// Color spread over the membrane when a measurement starts.
pub const MEASURE_COLOR: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    LowestId,
    /// The membrane cell nearest to a point, e.g. where the split happens.
    SplitPoint(Vec3),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasureConfig {
    pub seed: u64,
    pub max_arrivals: u64,
    /// Number of identification labels arrivals are spread over.
    pub labels: u64,
    pub placement: Placement,
}

impl Default for MeasureConfig {
    fn default() -> Self {
        MeasureConfig { seed: 0, max_arrivals: 1_000_000, labels: 64, placement: Placement::LowestId }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementRecord {
    pub outcome: usize,
    pub arrivals: Vec<QuantumType>,
    pub ticks_to_completion: u64,
}

/// One arrival at the virtual state. Returns the new state and the quantum
/// it released, if any.
pub fn virtual_state_step(vs: VirtualState, arrival: QuantumType) -> Result<(VirtualState, Option<QuantumType>)> {
    match (vs.slot1, vs.slot2) {
        (_, Some(_)) => Err(AqError::AlreadyReal),
        (None, None) => Ok((VirtualState { slot1: Some(arrival), ..vs }, None)),
        (Some(held), None) if held == arrival => Ok((VirtualState { slot2: Some(arrival), ..vs }, None)),
        (Some(held), None) => Ok((VirtualState { slot1: Some(arrival), ..vs }, Some(held))),
    }
}

/// Marks every membrane cell, and every quantum, with the measurement color.
pub fn color_all(bubble: &mut Bubble) {
    for c in &mut bubble.membrane {
        c.color = Some(MEASURE_COLOR);
    }
    if let Population::Particles(qs) = &mut bubble.population {
        for q in qs {
            q.kind.aux.color = Some(MEASURE_COLOR);
        }
    }
}

/// Arrival types with their multiplicities, in a fixed order.
#[derive(Debug, Clone)]
pub struct Urn {
    kinds: Vec<QuantumType>,
    cumulative: Vec<u64>,
}

impl Urn {
    pub fn from_bubble(bubble: &Bubble, labels: u64, color: Option<u8>) -> Self {
        let labels = labels.max(1);
        let mut tally: BTreeMap<(Species, u64), u64> = BTreeMap::new();
        match &bubble.population {
            Population::Counts(c) => {
                for (s, n) in c.species() {
                    // spread round-robin over the labels
                    for k in 0..labels.min(n) {
                        let share = n / labels + u64::from(k < n % labels);
                        tally.insert((s, k), share);
                    }
                }
            }
            Population::Particles(qs) => {
                for q in qs {
                    let label = q.kind.aux.ident.unwrap_or(0) % labels;
                    *tally.entry((q.kind.species, label)).or_default() += 1;
                }
            }
        }
        let mut kinds = Vec::new();
        let mut cumulative = Vec::new();
        let mut acc = 0;
        for ((species, label), n) in tally {
            if n == 0 {
                continue;
            }
            acc += n;
            kinds.push(QuantumType { species, aux: AuxOptions { block: None, color, ident: Some(label) } });
            cumulative.push(acc);
        }
        Urn { kinds, cumulative }
    }

    pub fn total(&self) -> u64 {
        self.cumulative.last().copied().unwrap_or(0)
    }

    fn start(&self, k: usize) -> u64 {
        if k == 0 {
            0
        } else {
            self.cumulative[k - 1]
        }
    }

    /// Draws a quantum uniformly, skipping one unit of kind `held`.
    fn draw<R: Rng>(&self, rng: &mut R, held: Option<usize>) -> usize {
        let n = self.total() - u64::from(held.is_some());
        let mut r = rng.random_range(0..n);
        if let Some(h) = held {
            if r >= self.start(h) {
                r += 1;
            }
        }
        self.cumulative.partition_point(|&c| c <= r)
    }

    /// Feeds arrivals to an empty virtual state until it becomes real.
    pub fn run(&self, vs: VirtualState, seed: u64, max_arrivals: u64) -> Result<(MeasurementRecord, VirtualState)> {
        if self.total() < 2 {
            return Err(AqError::Timeout(0));
        }
        let mut rng = rng::stream(seed, streams::MEASURE);
        let mut vs = vs;
        let mut held: Option<usize> = None;
        let mut arrivals = Vec::new();
        for tick in 1..=max_arrivals {
            let k = self.draw(&mut rng, held);
            let kind = self.kinds[k];
            arrivals.push(kind);
            vs = virtual_state_step(vs, kind)?.0;
            if vs.status() == VirtualStatus::Real {
                let record = MeasurementRecord { outcome: kind.species.state, arrivals, ticks_to_completion: tick };
                return Ok((record, vs));
            }
            held = Some(k);
        }
        Err(AqError::Timeout(max_arrivals))
    }
}

fn virtual_cell(bubble: &Bubble, placement: Placement) -> usize {
    match placement {
        Placement::LowestId => bubble.membrane.iter().map(|c| c.id).min().unwrap_or(0),
        Placement::SplitPoint(p) => bubble
            .membrane
            .iter()
            .map(|c| ((0..3).map(|k| (c.coords[k] - p[k]).powi(2)).sum::<f64>(), c.id))
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
            .map(|(_, id)| id)
            .unwrap_or(0),
    }
}

/// Runs the full measurement and returns the record with the rebuilt bubble.
pub fn measure(bubble: &Bubble, cfg: &MeasureConfig) -> Result<(MeasurementRecord, Bubble)> {
    let mut b = bubble.clone();
    color_all(&mut b);
    let b = reduce_all(&b);
    if b.counts().quanta() == 0 {
        return Err(AqError::AllCountsZero);
    }
    let urn = Urn::from_bubble(&b, cfg.labels, Some(MEASURE_COLOR));
    let vs = VirtualState::empty(virtual_cell(&b, cfg.placement));
    let (record, _) = urn.run(vs, cfg.seed, cfg.max_arrivals)?;
    let rebuilt = rebuild_after_measurement(&b, record.outcome)?;
    Ok((record, rebuilt))
}

fn cell_key(p: Vec3, h: f64) -> (i64, i64, i64) {
    ((p[0] / h).floor() as i64, (p[1] / h).floor() as i64, (p[2] / h).floor() as i64)
}

/// Connected components of points joined when closer than `r0`; each
/// component sorted, components ordered by their first index.
pub fn components(points: &[Vec3], r0: f64) -> Vec<Vec<usize>> {
    let mut grid: HashMap<(i64, i64, i64), Vec<usize>> = HashMap::new();
    for (k, &p) in points.iter().enumerate() {
        grid.entry(cell_key(p, r0)).or_default().push(k);
    }
    let mut seen = vec![false; points.len()];
    let mut out = Vec::new();
    for start in 0..points.len() {
        if seen[start] {
            continue;
        }
        seen[start] = true;
        let mut comp = vec![start];
        let mut queue = VecDeque::from([start]);
        while let Some(k) = queue.pop_front() {
            let p = points[k];
            let (cx, cy, cz) = cell_key(p, r0);
            for dx in -1..=1 {
                for dy in -1..=1 {
                    for dz in -1..=1 {
                        let Some(cell) = grid.get(&(cx + dx, cy + dy, cz + dz)) else { continue };
                        for &o in cell {
                            if !seen[o] && (0..3).map(|a| (points[o][a] - p[a]).powi(2)).sum::<f64>() <= r0 * r0 {
                                seen[o] = true;
                                comp.push(o);
                                queue.push_back(o);
                            }
                        }
                    }
                }
            }
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out
}

/// Membrane components, as lists of cell ids.
pub fn detect_split(bubble: &Bubble) -> Vec<Vec<usize>> {
    let points: Vec<Vec3> = bubble.membrane.iter().map(|c| c.coords).collect();
    components(&points, bubble.collision_radius)
        .into_iter()
        .map(|comp| comp.into_iter().map(|k| bubble.membrane[k].id).collect())
        .collect()
}

/// Keeps only basic state `l` and, for a bubble with grain positions, the
/// membrane component nearest to grain `l`. Colors are cleared.
pub fn rebuild_after_measurement(bubble: &Bubble, l: usize) -> Result<Bubble> {
    if l >= bubble.dim {
        return Err(AqError::InvalidOutcome { outcome: l, dim: bubble.dim });
    }
    let mut b = bubble.clone();
    match &mut b.population {
        Population::Counts(c) => {
            for (s, _) in c.clone().species() {
                if s.state != l {
                    c.set(s, 0);
                }
            }
        }
        Population::Particles(qs) => {
            qs.retain(|q| q.kind.species.state == l);
            for q in qs.iter_mut() {
                q.kind.aux.color = None;
            }
        }
    }
    if let Some(coords) = &bubble.grain_coords {
        let g = coords[l];
        let comps = detect_split(bubble);
        if comps.len() > 1 {
            let dist = |id: usize| {
                let c = bubble.membrane.iter().find(|c| c.id == id).expect("cell");
                (0..3).map(|k| (c.coords[k] - g[k]).powi(2)).sum::<f64>()
            };
            let keep = comps
                .iter()
                .min_by(|a, b| {
                    let da = a.iter().map(|&i| dist(i)).fold(f64::INFINITY, f64::min);
                    let db = b.iter().map(|&i| dist(i)).fold(f64::INFINITY, f64::min);
                    da.total_cmp(&db)
                })
                .cloned()
                .unwrap_or_default();
            b.membrane.retain(|c| keep.binary_search(&c.id).is_ok());
        }
        b.support = (0..b.dim).map(|j| j == l).collect();
    }
    for c in &mut b.membrane {
        c.color = None;
    }
    b.virtual_state = None;
    Ok(b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{probability_weights, CountTable, Loading, MembraneCell, Sign, StateVector};
    use crate::oracle::chi_square_test;
    use num_complex::Complex64;
    use proptest::prelude::*;
    use rand::Rng;

    fn qt(s: Species) -> QuantumType {
        QuantumType::bare(s)
    }

    #[test]
    fn virtual_state_rules() {
        let a = qt(Species::re(Sign::Plus, 1));
        let b = qt(Species::im(Sign::Minus, 0));
        let (vs, out) = virtual_state_step(VirtualState::empty(0), a).unwrap();
        assert_eq!((vs.slot1, vs.slot2, out), (Some(a), None, None));
        let (real, _) = virtual_state_step(vs, a).unwrap();
        assert_eq!(real.status(), VirtualStatus::Real);
        let (vs2, out) = virtual_state_step(vs, b).unwrap();
        assert_eq!((vs2.slot1, vs2.slot2, out), (Some(b), None, Some(a)));
        assert_eq!(virtual_state_step(real, a), Err(AqError::AlreadyReal));
    }

    proptest! {
        #[test]
        fn virtual_state_stays_consistent(seq in proptest::collection::vec(0usize..6, 1..60)) {
            let mut vs = VirtualState::empty(3);
            for k in seq {
                if vs.status() == VirtualStatus::Real {
                    break;
                }
                let kind = qt(Species::from_slot(k / 4, k % 4));
                vs = virtual_state_step(vs, kind).unwrap().0;
                prop_assert!(vs.is_consistent());
            }
        }
    }

    fn bubble_for(psi: &[Complex64]) -> Bubble {
        Bubble::from_state(&StateVector::new(psi.to_vec()), &Loading::default())
    }

    #[test]
    fn basis_state_always_gives_its_index() {
        let b = bubble_for(&[Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)]);
        for seed in 0..50 {
            let (r, rebuilt) = measure(&b, &MeasureConfig { seed, ..Default::default() }).unwrap();
            assert_eq!(r.outcome, 0);
            let n = r.arrivals.len();
            assert_eq!(r.arrivals[n - 1], r.arrivals[n - 2]);
            assert_eq!(r.ticks_to_completion, n as u64);
            assert_eq!(probability_weights(&rebuilt).unwrap(), vec![1.0, 0.0]);
        }
    }

    fn frequencies(b: &Bubble, seeds: u64) -> Vec<u64> {
        let mut h = vec![0; b.dim];
        for seed in 0..seeds {
            h[measure(b, &MeasureConfig { seed, ..Default::default() }).unwrap().0.outcome] += 1;
        }
        h
    }

    #[test]
    fn urn_statistics_pass_chi_square() {
        let cases = [
            vec![Complex64::new(0.6, 0.0), Complex64::new(0.0, 0.8)],
            vec![Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0), Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0)],
        ];
        for psi in cases {
            let b = bubble_for(&psi);
            let h = frequencies(&b, 4000);
            let p = probability_weights(&b).unwrap();
            let r = chi_square_test(&h, &p).unwrap();
            assert!(r.pass, "{h:?} vs {p:?}: {r:?}");
        }
    }

    #[test]
    fn random_count_tables_pass_chi_square() {
        let mut rng = rng::stream(2024, 0);
        for _ in 0..4 {
            let dim = rng.random_range(2..=8);
            let mut c = CountTable::zeros(dim);
            for j in 0..dim {
                for k in 0..4 {
                    c.set(Species::from_slot(j, k), rng.random_range(0..3000));
                }
            }
            let b = Bubble::from_counts(c, 1e-3);
            let h = frequencies(&b, 3000);
            let p = probability_weights(&b).unwrap();
            let r = chi_square_test(&h, &p).unwrap();
            assert!(r.pass, "{h:?} vs {p:?}: {r:?}");
        }
    }

    #[test]
    fn same_seed_same_record() {
        let b = bubble_for(&[Complex64::new(0.6, 0.0), Complex64::new(0.0, 0.8)]);
        let cfg = MeasureConfig { seed: 99, ..Default::default() };
        assert_eq!(measure(&b, &cfg).unwrap(), measure(&b, &cfg).unwrap());
    }

    #[test]
    fn too_few_quanta_times_out() {
        let mut c = CountTable::zeros(2);
        c.set(Species::re(Sign::Plus, 0), 1);
        c.set(Species::re(Sign::Plus, 1), 1);
        let b = Bubble::from_counts(c, 1.0);
        let cfg = MeasureConfig { max_arrivals: 100, labels: 1, ..Default::default() };
        assert_eq!(measure(&b, &cfg), Err(AqError::Timeout(100)));
    }

    #[test]
    fn rebuild_rejects_bad_outcome() {
        let b = bubble_for(&[Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)]);
        assert_eq!(rebuild_after_measurement(&b, 2), Err(AqError::InvalidOutcome { outcome: 2, dim: 2 }));
    }

    #[test]
    fn rebuild_on_mixed_counts() {
        let mut c = CountTable::zeros(3);
        c.set(Species::re(Sign::Plus, 0), 10);
        c.set(Species::im(Sign::Minus, 1), 7);
        c.set(Species::re(Sign::Plus, 2), 4);
        let b = rebuild_after_measurement(&Bubble::from_counts(c, 0.1), 1).unwrap();
        assert_eq!(probability_weights(&b).unwrap(), vec![0.0, 1.0, 0.0]);
    }

    /// Brute-force union-find over all pairs.
    fn union_find_components(points: &[Vec3], r0: f64) -> Vec<Vec<usize>> {
        let n = points.len();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], x: usize) -> usize {
            let mut r = x;
            while p[r] != r {
                r = p[r];
            }
            let mut y = x;
            while p[y] != r {
                let next = p[y];
                p[y] = r;
                y = next;
            }
            r
        }
        for i in 0..n {
            for j in i + 1..n {
                if (0..3).map(|a| (points[i][a] - points[j][a]).powi(2)).sum::<f64>() <= r0 * r0 {
                    let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for i in 0..n {
            let r = find(&mut parent, i);
            groups.entry(r).or_default().push(i);
        }
        groups.into_values().collect()
    }

    #[test]
    fn components_match_union_find() {
        let mut rng = rng::stream(17, 0);
        for trial in 0..30 {
            let n = 20 + trial * 40;
            let pts: Vec<Vec3> = (0..n).map(|_| std::array::from_fn(|_| rng.random_range(-1.0..1.0))).collect();
            let r0 = rng.random_range(0.05..0.4);
            assert_eq!(components(&pts, r0), union_find_components(&pts, r0));
        }
    }

    #[test]
    fn sphere_is_one_component() {
        let b = bubble_for(&[Complex64::new(1.0, 0.0)]);
        assert_eq!(detect_split(&b).len(), 1);
    }

    fn dumbbell(bridge: bool) -> Bubble {
        // two rings of cells along x joined (or not) by a row of cells
        let mut cells = Vec::new();
        let mut push = |p: Vec3| {
            let id = cells.len();
            cells.push(MembraneCell::at(id, p));
        };
        for side in [-1.0, 1.0] {
            for k in 0..24 {
                let a = k as f64 * std::f64::consts::TAU / 24.0;
                push([side * 2.0 + 0.5 * a.cos(), 0.5 * a.sin(), 0.0]);
            }
        }
        if bridge {
            for k in 0..12 {
                push([-1.5 + 3.0 * k as f64 / 11.0, 0.0, 0.0]);
            }
        }
        let mut b = Bubble::from_counts(CountTable::zeros(2), 1.0);
        b.membrane = cells;
        b.collision_radius = 0.3;
        b.grain_coords = Some(vec![[-2.0, 0.0, 0.0], [2.0, 0.0, 0.0]]);
        b
    }

    #[test]
    fn dumbbell_split_and_rebuild() {
        assert_eq!(detect_split(&dumbbell(true)).len(), 1);
        let cut = dumbbell(false);
        let comps = detect_split(&cut);
        assert_eq!(comps.len(), 2);
        let rebuilt = rebuild_after_measurement(&cut, 0).unwrap();
        assert!(rebuilt.membrane.iter().all(|c| c.coords[0] < 0.0));
        assert_eq!(rebuilt.membrane.len(), 24);
        assert_eq!(rebuilt.support, vec![true, false]);
    }

    #[test]
    fn coloring_reaches_every_cell_and_is_cleared() {
        let mut b = bubble_for(&[Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)]);
        color_all(&mut b);
        assert!(b.membrane.iter().all(|c| c.color == Some(MEASURE_COLOR)));
        let (_, rebuilt) = measure(&b, &MeasureConfig::default()).unwrap();
        assert!(rebuilt.membrane.iter().all(|c| c.color.is_none()));
    }
}
