use std::f64::consts::FRAC_PI_2;

use aq::compiler::{self, SqTerm};
use aq::kinetics::{evolve, meanfield, Backend, EngineConfig, MeanFieldConfig, Runner};
use aq::linalg::{sigma_x, sigma_y, sigma_z, CMatrix};
use aq::model::{Bubble, Loading, Part, StateVector};
use aq::oracle::{exact_propagate, fidelity};
use num_complex::Complex64;

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn loading(a: u64) -> Loading {
    Loading { total_per_type: a, ..Loading::default() }
}

#[test]
fn zero_time_is_identity() {
    let b = Bubble::from_state(&StateVector::basis(2, 0), &loading(1000));
    let out = evolve(&b, &sigma_x(), 0.0, &EngineConfig::new(1.0, 1000)).unwrap();
    assert_eq!(out, b);
}

#[test]
fn minus_sigma_x_reaches_i_ket1() {
    let b = Bubble::from_state(&StateVector::basis(2, 0), &loading(10_000));
    let h = sigma_x().scale(c(-1.0, 0.0));
    let out = evolve(&b, &h, FRAC_PI_2, &EngineConfig { seed: 11, ..EngineConfig::new(1.0, 10_000) }).unwrap();
    let want = StateVector::new(vec![c(0.0, 0.0), c(0.0, 1.0)]);
    let f = fidelity(&out.state().unwrap(), &want).unwrap();
    assert!(f >= 0.99, "fidelity {f}");
}

#[test]
fn minus_sigma_z_keeps_weights() {
    let b = Bubble::from_state(&StateVector::new(vec![c(0.6, 0.0), c(0.0, 0.8)]), &loading(10_000));
    let h = sigma_z().scale(c(-1.0, 0.0));
    let t = 1.0;
    let out = evolve(&b, &h, t, &EngineConfig { seed: 2, ..EngineConfig::new(1.0, 10_000) }).unwrap();
    let psi = out.state().unwrap();
    let p = psi.probabilities();
    assert!((p[0] - 0.36).abs() < 0.02, "{p:?}");
    let want = exact_propagate(&h, &b.state().unwrap(), t).unwrap();
    assert!(fidelity(&psi, &want).unwrap() >= 0.99);
}

#[test]
fn every_signed_pauli_tracks_the_oracle() {
    let psi0 = StateVector::new(vec![c(0.6, 0.0), c(0.0, 0.8)]);
    for (k, p) in [sigma_x(), sigma_y(), sigma_z()].iter().enumerate() {
        for sign in [1.0, -1.0] {
            let h = p.scale(c(sign, 0.0));
            let b = Bubble::from_state(&psi0, &loading(10_000));
            let cfg = EngineConfig { seed: 100 + k as u64, ..EngineConfig::new(1.0, 10_000) };
            let out = evolve(&b, &h, 0.7, &cfg).unwrap();
            let want = exact_propagate(&h, &psi0, 0.7).unwrap();
            let f = fidelity(&out.state().unwrap(), &want).unwrap();
            assert!(f >= 0.99, "kind {k} sign {sign}: {f}");
        }
    }
}

#[test]
fn same_seed_is_bit_identical() {
    let b = Bubble::from_state(&StateVector::basis(2, 0), &loading(2000));
    let cfg = EngineConfig { seed: 77, ..EngineConfig::new(1.0, 2000) };
    let h = sigma_y();
    assert_eq!(evolve(&b, &h, 0.5, &cfg).unwrap(), evolve(&b, &h, 0.5, &cfg).unwrap());
}

#[test]
fn piecewise_runner_equals_single_run() {
    let b = Bubble::from_state(&StateVector::basis(2, 0), &loading(2000));
    let cfg = EngineConfig { seed: 3, ..EngineConfig::new(1.0, 2000) };
    let h = sigma_x();
    let mut a = b.clone();
    let mut r = Runner::new(&h, &cfg, &a).unwrap();
    r.advance(&mut a, 0.3, |_, _, _| Ok(())).unwrap();
    r.advance(&mut a, 0.2, |_, _, _| Ok(())).unwrap();
    let mut one = b.clone();
    Runner::new(&h, &cfg, &one).unwrap().advance(&mut one, 0.5, |_, _, _| Ok(())).unwrap();
    assert_eq!(a, one);
}

#[test]
fn second_quantized_route_reaches_quarter_period() {
    let b = Bubble::from_state(&StateVector::basis(2, 0), &loading(10_000));
    let terms = [SqTerm::OneBody { c: c(-1.0, 0.0), p: 1, q: 0 }, SqTerm::OneBody { c: c(-1.0, 0.0), p: 0, q: 1 }];
    let cfg = EngineConfig { seed: 5, replenish: false, ..EngineConfig::new(1.0, 10_000) };
    let mut out = b.clone();
    Runner::second_quantized(&terms, &cfg, &b).unwrap().advance(&mut out, FRAC_PI_2, |_, _, _| Ok(())).unwrap();
    let want = exact_propagate(&sigma_x().scale(c(-1.0, 0.0)), &StateVector::basis(2, 0), FRAC_PI_2).unwrap();
    let f = fidelity(&out.state().unwrap(), &want).unwrap();
    assert!(f >= 0.98, "{f}");
}

#[test]
fn normalization_drift_per_period_is_small() {
    let psi0 = StateVector::new(vec![c(0.6, 0.0), c(0.0, 0.8)]);
    let b = Bubble::from_state(&psi0, &loading(10_000));
    let h = sigma_x().scale(c(-1.0, 0.0));
    // The tick update is an Euler step in expectation: Σ[x]² grows by about
    // 2π·ωΔt per period, so the tick is shortened below the default here.
    let cfg = EngineConfig { seed: 8, dt: 0.002, ..EngineConfig::new(1.0, 10_000) };
    let q = |b: &Bubble| b.counts().nets().iter().map(|&(a, b)| (a * a + b * b) as f64).sum::<f64>();
    let out = evolve(&b, &h, 2.0 * std::f64::consts::PI, &cfg).unwrap();
    let drift = (q(&out) - q(&b)).abs() / q(&b);
    assert!(drift <= 0.02, "{drift}");
}

#[test]
fn error_shrinks_as_quanta_grow() {
    // Mean over seeds of the trajectory error against the closed form.
    let h = sigma_x().scale(c(-1.0, 0.0));
    let mut errors = Vec::new();
    for a in [500u64, 1000, 2000, 4000] {
        let mut total = 0.0;
        for seed in 0..8 {
            let b = Bubble::from_state(&StateVector::basis(2, 0), &loading(a));
            let out = evolve(&b, &h, 1.0, &EngineConfig { seed, ..EngineConfig::new(1.0, a) }).unwrap();
            let n = out.counts();
            let (x, y) = (n.net(0, Part::Re) as f64 / a as f64, n.net(1, Part::Im) as f64 / a as f64);
            total += ((x - 1f64.cos()).powi(2) + (y - 1f64.sin()).powi(2)).sqrt();
        }
        errors.push(total / 8.0);
    }
    assert!(errors.windows(2).all(|w| w[1] < w[0]), "{errors:?}");
}

fn meanfield_nets(b: &Bubble, h: &CMatrix, t: f64, a: u64, samples: usize) -> Vec<Vec<(f64, f64)>> {
    let compiled = compiler::compile(h).unwrap();
    let list = compiler::ReactionList::union(&compiled.lists);
    let cfg = MeanFieldConfig { omega: 1.0, total_per_type: a, hold_totals: true, step: 1e-3 };
    let tr = aq::kinetics::meanfield_evolve(&b.counts(), &list, &cfg, t, samples);
    tr.states
        .iter()
        .map(|s| (0..b.dim).map(|j| (meanfield::net(s, j, Part::Re), meanfield::net(s, j, Part::Im))).collect())
        .collect()
}

fn relative_l2(got: &[Vec<(f64, f64)>], want: &[Vec<(f64, f64)>]) -> f64 {
    let (mut e, mut n) = (0.0, 0.0);
    for (g, w) in got.iter().zip(want) {
        for (x, y) in g.iter().zip(w) {
            e += (x.0 - y.0).powi(2) + (x.1 - y.1).powi(2);
            n += y.0.powi(2) + y.1.powi(2);
        }
    }
    (e / n).sqrt()
}

fn sampled_run(b: &Bubble, h: &CMatrix, cfg: &EngineConfig, t: f64, samples: usize) -> Vec<Vec<(f64, f64)>> {
    let mut out = vec![b.counts().nets().iter().map(|&(a, b)| (a as f64, b as f64)).collect()];
    let mut bubble = b.clone();
    let mut r = Runner::new(h, cfg, &bubble).unwrap();
    for _ in 0..samples {
        r.advance(&mut bubble, t / samples as f64, |_, _, _| Ok(())).unwrap();
        out.push(bubble.counts().nets().iter().map(|&(a, b)| (a as f64, b as f64)).collect());
    }
    out
}

#[test]
fn wellmixed_agrees_with_meanfield() {
    let a = 10_000;
    let b = Bubble::from_state(&StateVector::new(vec![c(0.6, 0.0), c(0.0, 0.8)]), &loading(a));
    let h = sigma_y().scale(c(-1.0, 0.0));
    let cfg = EngineConfig { seed: 21, ..EngineConfig::new(1.0, a) };
    let got = sampled_run(&b, &h, &cfg, 3.0, 10);
    let want = meanfield_nets(&b, &h, 3.0, a, 10);
    let e = relative_l2(&got, &want);
    assert!(e <= 0.05, "{e}");
}

#[test]
fn spatial_agrees_with_meanfield() {
    let a = 5_000;
    let b = Bubble::from_state(&StateVector::basis(2, 0), &loading(a));
    let h = sigma_x().scale(c(-1.0, 0.0));
    let cfg = EngineConfig { seed: 4, backend: Backend::Spatial, ..EngineConfig::new(1.0, a) };
    let got = sampled_run(&b, &h, &cfg, FRAC_PI_2, 5);
    let want = meanfield_nets(&b, &h, FRAC_PI_2, a, 5);
    let e = relative_l2(&got, &want);
    assert!(e <= 0.05, "{e}");
}

#[test]
fn spatial_is_bit_deterministic() {
    let b = Bubble::from_state(&StateVector::basis(2, 0), &loading(500));
    let cfg = EngineConfig { seed: 9, backend: Backend::Spatial, ..EngineConfig::new(1.0, 500) };
    let h = sigma_x();
    assert_eq!(evolve(&b, &h, 0.2, &cfg).unwrap(), evolve(&b, &h, 0.2, &cfg).unwrap());
}

#[test]
fn meanfield_backend_runs_through_evolve() {
    let b = Bubble::from_state(&StateVector::basis(2, 0), &loading(10_000));
    let h = sigma_x().scale(c(-1.0, 0.0));
    let cfg = EngineConfig { backend: Backend::Meanfield, ..EngineConfig::new(1.0, 10_000) };
    let out = evolve(&b, &h, FRAC_PI_2, &cfg).unwrap();
    let want = StateVector::new(vec![c(0.0, 0.0), c(0.0, 1.0)]);
    assert!(fidelity(&out.state().unwrap(), &want).unwrap() > 0.9999);
}

#[test]
fn stability_guard_rejects_large_ticks() {
    let b = Bubble::from_state(&StateVector::basis(2, 0), &loading(100));
    let cfg = EngineConfig { dt: 0.1, ..EngineConfig::new(1.0, 100) };
    assert!(matches!(evolve(&b, &sigma_x(), 1.0, &cfg), Err(aq::AqError::Config(_))));
}
