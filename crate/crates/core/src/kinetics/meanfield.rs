//! Deterministic mean-field limit of a reaction list, integrated with RK4.

use serde::{Deserialize, Serialize};

use crate::compiler::{ReactionList, RuleKind};
use crate::model::{CountTable, Part, Species};

/// Real-valued counts, one `[α+, α−, β+, β−]` row per basic state.
pub type Counts = Vec<[f64; 4]>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanFieldConfig {
    pub omega: f64,
    pub total_per_type: u64,
    /// Project the drift so every type total stays fixed, as perfect
    /// replenishment would.
    pub hold_totals: bool,
    /// Largest integration step.
    pub step: f64,
}

impl MeanFieldConfig {
    pub fn gamma0(&self) -> f64 {
        self.omega / self.total_per_type as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Counts>,
}

impl Trajectory {
    /// Net count `[x_j]` along the trajectory.
    pub fn net(&self, state: usize, part: Part) -> Vec<f64> {
        self.states.iter().map(|s| net(s, state, part)).collect()
    }
}

pub fn net(s: &Counts, state: usize, part: Part) -> f64 {
    let r = &s[state];
    match part {
        Part::Re => r[0] - r[1],
        Part::Im => r[2] - r[3],
    }
}

pub fn to_real(c: &CountTable) -> Counts {
    c.rows().iter().map(|r| r.map(|n| n as f64)).collect()
}

pub fn to_counts(s: &Counts) -> CountTable {
    let mut t = CountTable::zeros(s.len());
    for (j, r) in s.iter().enumerate() {
        for (k, &x) in r.iter().enumerate() {
            t.set(Species::from_slot(j, k), x.max(0.0).round() as u64);
        }
    }
    t
}

/// Removes opposite-sign pairs, keeping net values.
pub fn reduce(s: &mut Counts) {
    for r in s.iter_mut() {
        for k in [0, 2] {
            let m = r[k].min(r[k + 1]);
            r[k] -= m;
            r[k + 1] -= m;
        }
    }
}

fn get(s: &Counts, sp: Species) -> f64 {
    s[sp.state][sp.slot()]
}

/// Right-hand side of the rate equations.
pub fn rhs(s: &Counts, list: &ReactionList, cfg: &MeanFieldConfig) -> Counts {
    let g0 = cfg.gamma0();
    let mut d = vec![[0.0; 4]; s.len()];
    for rule in &list.rules {
        match rule.kind {
            RuleKind::Catalysis => {
                if let Some((k, product, cat)) = rule.conversion() {
                    let r = rule.reagents[k];
                    let flux = g0 * rule.rate * get(s, r) * get(s, rule.reagents[cat]);
                    d[r.state][r.slot()] -= flux;
                    d[product.state][product.slot()] += flux;
                }
            }
            RuleKind::Nonequilibrium => {
                let made = rule.products[1];
                d[made.state][made.slot()] += cfg.omega * rule.rate * get(s, rule.reagents[0]);
            }
            RuleKind::Annihilation | RuleKind::MembraneTransform => {}
        }
    }
    if cfg.hold_totals {
        for r in d.iter_mut() {
            for k in [0, 2] {
                let dn = (r[k] - r[k + 1]) / 2.0;
                r[k] = dn;
                r[k + 1] = -dn;
            }
        }
    }
    d
}

fn axpy(s: &Counts, a: f64, d: &Counts) -> Counts {
    s.iter().zip(d).map(|(x, y)| std::array::from_fn(|k| x[k] + a * y[k])).collect()
}

/// Integrates for `duration` with equal RK4 steps no longer than `cfg.step`.
pub fn integrate(s0: &Counts, list: &ReactionList, cfg: &MeanFieldConfig, duration: f64) -> Counts {
    if duration <= 0.0 || list.is_empty() {
        return s0.clone();
    }
    let n = (duration / cfg.step - 1e-9).ceil().max(1.0) as usize;
    let h = duration / n as f64;
    let mut s = s0.clone();
    for _ in 0..n {
        let k1 = rhs(&s, list, cfg);
        let k2 = rhs(&axpy(&s, h / 2.0, &k1), list, cfg);
        let k3 = rhs(&axpy(&s, h / 2.0, &k2), list, cfg);
        let k4 = rhs(&axpy(&s, h, &k3), list, cfg);
        s = s
            .iter()
            .enumerate()
            .map(|(j, x)| std::array::from_fn(|k| x[k] + h / 6.0 * (k1[j][k] + 2.0 * k2[j][k] + 2.0 * k3[j][k] + k4[j][k])))
            .collect();
    }
    s
}

/// Trajectory sampled at `samples + 1` equally spaced times in `[0, t]`.
pub fn meanfield_evolve(initial: &CountTable, list: &ReactionList, cfg: &MeanFieldConfig, t: f64, samples: usize) -> Trajectory {
    let samples = samples.max(1);
    let mut s = to_real(initial);
    let mut traj = Trajectory { times: vec![0.0], states: vec![s.clone()] };
    for k in 1..=samples {
        s = integrate(&s, list, cfg, t / samples as f64);
        traj.times.push(t * k as f64 / samples as f64);
        traj.states.push(s.clone());
    }
    traj
}
