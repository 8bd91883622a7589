use aq::kinetics::EngineConfig;
use aq::membrane::{bubble_centroid, chain_hamiltonian, lattice_bubble, run_with_membrane, MembraneConfig, MembraneTracker};
use aq::model::{Loading, StateVector};
use aq::oracle::{centroid, exact_propagate};
use num_complex::Complex64;

fn packet(n: usize, x0: f64, sigma: f64, k: f64) -> StateVector {
    let amps = (0..n)
        .map(|j| {
            let d = j as f64 - x0;
            Complex64::from_polar((-d * d / (4.0 * sigma * sigma)).exp(), k * j as f64)
        })
        .collect();
    StateVector::new(amps).normalized()
}

#[test]
fn centroid_follows_the_packet() {
    let n = 16;
    let a = 100_000;
    let grains: Vec<[f64; 3]> = (0..n).map(|j| [j as f64, 0.0, 0.0]).collect();
    let psi0 = packet(n, 4.0, 1.5, std::f64::consts::FRAC_PI_4);
    let h = chain_hamiltonian(n, 1.0);
    let mcfg = MembraneConfig::default();
    let loading = Loading { total_per_type: a, ..Loading::default() };
    let b = lattice_bubble(&psi0, grains.clone(), &loading, &mcfg).unwrap();
    let start = bubble_centroid(&b).unwrap()[0];
    let cfg = EngineConfig { seed: 12, ..EngineConfig::new(1.0, a) };
    let mut tracker = MembraneTracker::new(mcfg, n, a);
    let mut got = Vec::new();
    let per_hop = (1.0 / cfg.dt).round() as u64;
    run_with_membrane(&b, &h, 5.0, &cfg, &mut tracker, |tick, time, bubble| {
        if tick % per_hop == 0 {
            got.push((time, bubble_centroid(bubble)?[0]));
        }
        Ok(())
    })
    .unwrap();
    assert_eq!(got.len(), 5);
    let (mut e, mut norm) = (0.0, 0.0);
    for (t, x) in &got {
        let want = centroid(&exact_propagate(&h, &psi0, *t).unwrap().probabilities(), &grains)[0];
        e += ((x - start) - (want - start)).powi(2);
        norm += (want - start).powi(2);
    }
    let rel = (e / norm).sqrt();
    assert!(rel <= 0.10, "displacement error {rel}: {got:?}");
}
