//! Ground truth: dense propagation, fidelity and goodness-of-fit tests.
//!
//! Nothing here touches the kinetics code; acceptance tests compare the bubble
//! model against these routines.

use num_complex::Complex64;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{AqError, Result};
use crate::linalg::CMatrix;
use crate::model::StateVector;

const HERMITIAN_TOL: f64 = 1e-10;

/// `exp(A)` by scaling and squaring with a Taylor core.
pub fn expm(a: &CMatrix) -> CMatrix {
    let n = a.dim();
    let norm = a.norm_inf();
    let mut squarings = 0u32;
    if norm > 0.5 {
        squarings = (norm / 0.5).log2().ceil() as u32;
    }
    let scaled = a.scale(Complex64::new(0.5f64.powi(squarings as i32), 0.0));
    // ‖scaled‖ ≤ 1/2: 20 terms leave a remainder far below 1e-16.
    let mut result = CMatrix::identity(n);
    let mut term = CMatrix::identity(n);
    for k in 1..=20 {
        term = (&term * &scaled).scale(Complex64::new(1.0 / k as f64, 0.0));
        result = &result + &term;
    }
    for _ in 0..squarings {
        result = &result * &result;
    }
    result
}

/// `U(t) = exp(−iHt)`.
pub fn propagator(h: &CMatrix, t: f64) -> Result<CMatrix> {
    h.check_hermitian(HERMITIAN_TOL)?;
    Ok(expm(&h.scale(Complex64::new(0.0, -t))))
}

pub fn exact_propagate(h: &CMatrix, psi0: &StateVector, t: f64) -> Result<StateVector> {
    if h.dim() != psi0.dim() {
        return Err(AqError::DimensionMismatch(h.dim(), psi0.dim()));
    }
    let u = propagator(h, t)?;
    Ok(StateVector::new(u.apply(&psi0.amplitudes)))
}

/// Piecewise-constant propagation: each `(H_k, τ_k)` applied in order.
pub fn propagate_slices(slices: &[(CMatrix, f64)], psi0: &StateVector) -> Result<StateVector> {
    let mut psi = psi0.clone();
    for (h, tau) in slices {
        psi = exact_propagate(h, &psi, *tau)?;
    }
    Ok(psi)
}

/// `|⟨a|b⟩|²`.
pub fn fidelity(a: &StateVector, b: &StateVector) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(AqError::DimensionMismatch(a.dim(), b.dim()));
    }
    let ip: Complex64 = a.amplitudes.iter().zip(&b.amplitudes).map(|(x, y)| x.conj() * y).sum();
    Ok(ip.norm_sqr().min(1.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChiSquare {
    pub statistic: f64,
    pub dof: usize,
    pub critical: f64,
    pub pass: bool,
}

/// Pearson test at significance 0.01. Cells with zero expectation must be
/// empty; they are dropped from the degrees of freedom.
pub fn chi_square_test(observed: &[u64], expected: &[f64]) -> Result<ChiSquare> {
    if observed.len() != expected.len() {
        return Err(AqError::DimensionMismatch(observed.len(), expected.len()));
    }
    let total: u64 = observed.iter().sum();
    let mass: f64 = expected.iter().sum();
    if total == 0 || !(mass > 0.0) || expected.iter().any(|&p| p < 0.0) {
        return Err(AqError::DegenerateExpected);
    }
    let mut stat = 0.0;
    let mut cells = 0;
    for (&o, &p) in observed.iter().zip(expected) {
        let e = total as f64 * p / mass;
        if e == 0.0 {
            if o > 0 {
                return Ok(ChiSquare { statistic: f64::INFINITY, dof: 0, critical: 0.0, pass: false });
            }
            continue;
        }
        cells += 1;
        stat += (o as f64 - e).powi(2) / e;
    }
    if cells < 2 {
        return Ok(ChiSquare { statistic: stat, dof: 0, critical: 0.0, pass: stat == 0.0 });
    }
    let dof = cells - 1;
    let critical = ChiSquared::new(dof as f64).map_err(|_| AqError::DegenerateExpected)?.inverse_cdf(0.99);
    Ok(ChiSquare { statistic: stat, dof, critical, pass: stat <= critical })
}

/// Reduced density matrix of subsystem `keep` of a dense `n`-party state with
/// local dimension `d` (party 0 is the most significant digit).
pub fn partial_trace(psi: &[Complex64], d: usize, n: usize, keep: usize) -> CMatrix {
    let mut rho = CMatrix::zeros(d);
    let total = d.pow(n as u32);
    let stride = d.pow((n - 1 - keep) as u32);
    for a in 0..total {
        let ia = (a / stride) % d;
        for b in 0..total {
            let ib = (b / stride) % d;
            // other digits must coincide
            if a - ia * stride != b - ib * stride {
                continue;
            }
            rho[(ia, ib)] += psi[a] * psi[b].conj();
        }
    }
    rho
}

/// Probability-weighted centroid of grain coordinates.
pub fn centroid(probabilities: &[f64], coords: &[[f64; 3]]) -> [f64; 3] {
    let mass: f64 = probabilities.iter().sum();
    let mut c = [0.0; 3];
    for (p, r) in probabilities.iter().zip(coords) {
        for k in 0..3 {
            c[k] += p * r[k] / mass;
        }
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{sigma_x, sigma_y, sigma_z};
    use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_2, FRAC_PI_4, PI};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn ket0() -> StateVector {
        StateVector::basis(2, 0)
    }

    #[test]
    fn zero_hamiltonian_is_identity() {
        let psi = StateVector::new(vec![c(0.6, 0.0), c(0.0, 0.8)]);
        let out = exact_propagate(&CMatrix::zeros(2), &psi, 3.0).unwrap();
        assert_eq!(out, psi);
    }

    #[test]
    fn closed_forms_for_pauli_generators() {
        // exp(−iθP) = cos θ·I − i sin θ·P for every Pauli P; ±P flips the sine.
        let gens = [CMatrix::identity(2), sigma_x(), sigma_y(), sigma_z()];
        let psi = StateVector::new(vec![c(0.6, 0.0), c(0.0, 0.8)]);
        for g in &gens {
            for sign in [1.0, -1.0] {
                let h = g.scale(c(sign, 0.0));
                for t in [FRAC_PI_4, FRAC_PI_2, PI] {
                    let got = exact_propagate(&h, &psi, t).unwrap();
                    let gp = h.apply(&psi.amplitudes);
                    for k in 0..2 {
                        let want = psi.amplitudes[k] * t.cos() - c(0.0, t.sin()) * gp[k];
                        assert!((got.amplitudes[k] - want).norm() < 1e-9);
                    }
                }
            }
        }
    }

    #[test]
    fn minus_sigma_x_quarter_period() {
        let h = sigma_x().scale(c(-1.0, 0.0));
        let out = exact_propagate(&h, &ket0(), FRAC_PI_2).unwrap();
        assert!((out.amplitudes[0]).norm() < 1e-12);
        assert!((out.amplitudes[1] - c(0.0, 1.0)).norm() < 1e-12);
    }

    #[test]
    fn minus_sigma_z_is_a_phase() {
        let h = sigma_z().scale(c(-1.0, 0.0));
        for t in [0.3, 1.0, 2.5] {
            let out = exact_propagate(&h, &ket0(), t).unwrap();
            assert!((out.amplitudes[0] - c(t.cos(), t.sin())).norm() < 1e-12);
        }
    }

    #[test]
    fn propagator_is_unitary_and_composes() {
        let h = CMatrix::from_rows(&[
            vec![c(0.3, 0.0), c(1.0, -2.0), c(0.0, 0.5)],
            vec![c(1.0, 2.0), c(-1.0, 0.0), c(0.7, 0.0)],
            vec![c(0.0, -0.5), c(0.7, 0.0), c(2.0, 0.0)],
        ])
        .unwrap();
        let u = propagator(&h, 1.7).unwrap();
        assert!((&u.adjoint() * &u).max_abs_diff(&CMatrix::identity(3)) < 1e-10);
        let psi = StateVector::new(vec![c(0.6, 0.0), c(0.0, 0.8), c(0.0, 0.0)]);
        let direct = exact_propagate(&h, &psi, 1.7).unwrap();
        let stepped = exact_propagate(&h, &exact_propagate(&h, &psi, 0.4).unwrap(), 1.3).unwrap();
        for (a, b) in direct.amplitudes.iter().zip(&stepped.amplitudes) {
            assert!((a - b).norm() < 1e-9);
        }
        assert!((direct.norm() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn rejects_non_hermitian() {
        let h = CMatrix::real(&[&[0.0, 1.0], &[0.0, 0.0]]);
        assert!(matches!(exact_propagate(&h, &ket0(), 1.0), Err(AqError::NotHermitian { .. })));
    }

    #[test]
    fn fidelity_examples() {
        let plus = StateVector::new(vec![c(FRAC_1_SQRT_2, 0.0), c(FRAC_1_SQRT_2, 0.0)]);
        assert!((fidelity(&plus, &plus).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(fidelity(&ket0(), &StateVector::basis(2, 1)).unwrap(), 0.0);
        assert!((fidelity(&ket0(), &plus).unwrap() - 0.5).abs() < 1e-15);
        assert!(matches!(fidelity(&ket0(), &StateVector::basis(3, 0)), Err(AqError::DimensionMismatch(2, 3))));
    }

    #[test]
    fn chi_square_examples() {
        let r = chi_square_test(&[360, 640], &[0.36, 0.64]).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert!(r.pass);
        let r = chi_square_test(&[5000, 5000], &[0.5, 0.5]).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert!(r.pass);
        // (4000² + 4000²)/5000 = 6400 ≫ 6.63
        let r = chi_square_test(&[9000, 1000], &[0.5, 0.5]).unwrap();
        assert!((r.statistic - 6400.0).abs() < 1e-9);
        assert!((r.critical - 6.634_896_6).abs() < 1e-5);
        assert!(!r.pass);
        assert_eq!(chi_square_test(&[0, 0], &[0.5, 0.5]), Err(AqError::DegenerateExpected));
    }

    #[test]
    fn partial_trace_of_bell_state() {
        let h = FRAC_1_SQRT_2;
        let psi = [c(h, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(h, 0.0)];
        let rho = partial_trace(&psi, 2, 2, 0);
        assert!(rho.max_abs_diff(&CMatrix::real(&[&[0.5, 0.0], &[0.0, 0.5]])) < 1e-15);
    }
}
