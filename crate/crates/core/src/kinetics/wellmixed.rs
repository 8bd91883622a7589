//! Stochastic mass-action kinetics on counts.
//!
//! Per tick a reagent quantum of species `r` converts under a catalysis rule
//! with catalyst `c` with probability `γ0·l·τ·[c]`, so the expected number of
//! events is `γ·[r][c]` with `γ = γ0·l·τ`. Rules competing for the same
//! reagent share it through one multinomial draw. Catalyst counts are taken
//! at the start of the tick.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Binomial, Distribution};

use super::EngineConfig;
use crate::compiler::{ReactionList, RuleKind};
use crate::error::{AqError, Result};
use crate::model::{reduce_counts, Bubble, CountTable, Population, Species};
use crate::rng::{self, streams};

fn binomial<R: Rng>(rng: &mut R, n: u64, p: f64) -> u64 {
    if n == 0 || p <= 0.0 {
        return 0;
    }
    if p >= 1.0 {
        return n;
    }
    Binomial::new(n, p).expect("valid binomial").sample(rng)
}

/// One tick of length `tau` on a count population.
pub fn step_counts<R: Rng>(counts: &mut CountTable, list: &ReactionList, gamma0: f64, omega: f64, tau: f64, rng: &mut R) {
    let start = counts.clone();
    // converted species → [(product, probability)]
    let mut conversions: BTreeMap<Species, Vec<(Species, f64)>> = BTreeMap::new();
    let mut creations: Vec<(Species, Species, f64)> = Vec::new();
    let mut annihilate: Vec<usize> = Vec::new();
    for rule in &list.rules {
        match rule.kind {
            RuleKind::Catalysis => {
                if let Some((k, product, cat)) = rule.conversion() {
                    let p = gamma0 * rule.rate * tau * start.get(rule.reagents[cat]) as f64;
                    conversions.entry(rule.reagents[k]).or_default().push((product, p));
                }
            }
            RuleKind::Nonequilibrium => {
                if let (Some(&src), Some(&made)) = (rule.reagents.first(), rule.products.get(1)) {
                    creations.push((src, made, omega * rule.rate * tau));
                }
            }
            RuleKind::Annihilation => annihilate.push(rule.reagents[0].state),
            RuleKind::MembraneTransform => {}
        }
    }
    let mut gained: Vec<(Species, u64)> = Vec::new();
    for (reagent, options) in &conversions {
        let total: f64 = options.iter().map(|(_, p)| p).sum();
        // several rules on one reagent: keep the proportions if they overflow
        let shrink = if total > 1.0 { 1.0 / total } else { 1.0 };
        let mut left = start.get(*reagent);
        let mut mass = 1.0;
        for (product, p) in options {
            let p = p * shrink;
            let k = binomial(rng, left, (p / mass).min(1.0));
            left -= k;
            mass -= p;
            counts.remove(*reagent, k);
            gained.push((*product, k));
            if mass <= 0.0 {
                break;
            }
        }
    }
    for (src, made, p) in creations {
        let k = binomial(rng, start.get(src), p);
        gained.push((made, k));
    }
    for (s, k) in gained {
        counts.add(s, k);
    }
    annihilate.sort_unstable();
    annihilate.dedup();
    for j in annihilate {
        reduce_counts(counts, j);
    }
}

/// Advances a count bubble by one tick of length `tau`; randomness comes
/// from the tick's own substream of the seed.
pub fn step_wellmixed(bubble: &mut Bubble, list: &ReactionList, cfg: &EngineConfig, tick: u64, tau: f64) -> Result<()> {
    let Population::Counts(counts) = &mut bubble.population else {
        return Err(AqError::Config("well-mixed backend needs a count population".into()));
    };
    if list.is_empty() {
        return Ok(());
    }
    let mut rng = rng::substream(cfg.seed, streams::KINETICS, tick);
    step_counts(counts, list, cfg.gamma0, cfg.omega(), tau, &mut rng);
    for (s, n) in counts.species() {
        if n > cfg.count_cap {
            return Err(AqError::CountOverflow { what: s.to_string(), cap: cfg.count_cap });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compiler::{reactions_for_block, PauliBlock, PauliKind, PauliOp};
    use crate::model::Sign;

    fn minus_sigma_x() -> ReactionList {
        reactions_for_block(&PauliBlock::new(0, 1, PauliKind::minus(PauliOp::X), 1.0)).unwrap()
    }

    fn counts(a0p: u64, b1p: u64, b1m: u64) -> CountTable {
        let mut c = CountTable::zeros(2);
        c.set(Species::re(Sign::Plus, 0), a0p);
        c.set(Species::im(Sign::Plus, 1), b1p);
        c.set(Species::im(Sign::Minus, 1), b1m);
        c
    }

    /// Expected `[α_0^+]` after one tick: loss `γ[α_0^+][β_1^+]`, gain `γ[α_0^+][β_1^−]`.
    fn expected_a0p(c: &CountTable, gamma: f64) -> f64 {
        let a = c.get(Species::re(Sign::Plus, 0)) as f64;
        a - gamma * a * c.get(Species::im(Sign::Plus, 1)) as f64 + gamma * a * c.get(Species::im(Sign::Minus, 1)) as f64
    }

    fn mean_after(c0: &CountTable, gamma: f64, runs: u64) -> (f64, f64) {
        let list = minus_sigma_x();
        let mut xs = Vec::new();
        for seed in 0..runs {
            let mut c = c0.clone();
            let mut rng = rng::substream(seed, streams::KINETICS, 0);
            step_counts(&mut c, &list, gamma, 0.0, 1.0, &mut rng);
            xs.push(c.get(Species::re(Sign::Plus, 0)) as f64);
        }
        let m = xs.iter().sum::<f64>() / runs as f64;
        let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (runs - 1) as f64;
        (m, (var / runs as f64).sqrt())
    }

    #[test]
    fn balanced_partners_cancel() {
        let c = counts(100, 50, 50);
        let (m, se) = mean_after(&c, 0.001, 4000);
        assert!((m - expected_a0p(&c, 0.001)).abs() <= 3.0 * se + 1e-9, "{m} ± {se}");
        assert_eq!(expected_a0p(&c, 0.001), 100.0);
    }

    #[test]
    fn one_sided_partner_loses_five() {
        let c = counts(100, 50, 0);
        assert!((expected_a0p(&c, 0.001) - 95.0).abs() < 1e-12);
        let (m, se) = mean_after(&c, 0.001, 4000);
        assert!((m - 95.0).abs() <= 3.0 * se, "{m} ± {se}");
    }

    #[test]
    fn mass_action_mean_changes_over_many_seeds() {
        // A richer population: every rule of −σx participates.
        let mut c0 = CountTable::zeros(2);
        let init = [[300, 120, 80, 40], [60, 90, 210, 150]];
        for (j, row) in init.iter().enumerate() {
            for (k, &n) in row.iter().enumerate() {
                c0.set(Species::from_slot(j, k), n);
            }
        }
        let gamma = 2e-4;
        let list = minus_sigma_x();
        // independent oracle: Σ over rules of ±γ·[reagent][catalyst]
        let mut drift = [[0.0f64; 4]; 2];
        for r in &list.rules {
            let (k, product, cat) = r.conversion().unwrap();
            let rate = gamma * c0.get(r.reagents[k]) as f64 * c0.get(r.reagents[cat]) as f64;
            drift[r.reagents[k].state][r.reagents[k].slot()] -= rate;
            drift[product.state][product.slot()] += rate;
        }
        let runs = 2000;
        let mut sums = [[0.0f64; 4]; 2];
        let mut sq = [[0.0f64; 4]; 2];
        for seed in 0..runs {
            let mut c = c0.clone();
            let mut rng = rng::substream(seed, streams::KINETICS, 7);
            step_counts(&mut c, &list, gamma, 0.0, 1.0, &mut rng);
            for (s, n) in c.species() {
                let d = n as f64 - c0.get(s) as f64;
                sums[s.state][s.slot()] += d;
                sq[s.state][s.slot()] += d * d;
            }
        }
        for j in 0..2 {
            for k in 0..4 {
                let m = sums[j][k] / runs as f64;
                let var = sq[j][k] / runs as f64 - m * m;
                let se = (var / runs as f64).sqrt();
                assert!((m - drift[j][k]).abs() <= 3.0 * se + 1e-9, "({j},{k}) {m} vs {} ± {se}", drift[j][k]);
            }
        }
        // quanta are conserved by equilibrium rules
        let mut c = c0.clone();
        step_counts(&mut c, &list, gamma, 0.0, 1.0, &mut rng::stream(1, 1));
        assert_eq!(c.quanta(), c0.quanta());
    }

    #[test]
    fn empty_list_is_identity() {
        let mut b = Bubble::from_counts(counts(10, 5, 5), 0.1);
        let before = b.clone();
        step_wellmixed(&mut b, &ReactionList::empty(), &EngineConfig::default(), 0, 0.01).unwrap();
        assert_eq!(b, before);
    }

    #[test]
    fn same_seed_same_tick_is_reproducible() {
        let cfg = EngineConfig { seed: 42, ..EngineConfig::new(1.0, 1000) };
        let mut a = Bubble::from_counts(counts(1000, 600, 400), 0.001);
        let mut b = a.clone();
        step_wellmixed(&mut a, &minus_sigma_x(), &cfg, 3, cfg.dt).unwrap();
        step_wellmixed(&mut b, &minus_sigma_x(), &cfg, 3, cfg.dt).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn cap_is_enforced() {
        let cfg = EngineConfig { count_cap: 50, ..EngineConfig::new(1.0, 1000) };
        let mut b = Bubble::from_counts(counts(100, 5, 0), 0.01);
        let r = step_wellmixed(&mut b, &minus_sigma_x(), &cfg, 0, cfg.dt);
        assert!(matches!(r, Err(AqError::CountOverflow { .. })));
    }
}
