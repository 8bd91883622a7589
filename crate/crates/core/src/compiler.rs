//! Hamiltonian → reaction lists.
//!
//! A Hermitian `H` is written as `Σ l_{ij}·H_{ij}` with `l ≥ 0` and every
//! `H_{ij}` a signed Pauli matrix on the `(i, j)` subspace. Each block becomes
//! an equilibrium list of catalysis rules built from one primitive, the
//! rotation list `R(x, y)` whose mean-field limit is
//! `d[x]/dt = −γ₀{x}[y]`, `d[y]/dt = γ₀{y}[x]`:
//!
//! ```text
//! x+, y+ → y+, y+
//! x+, y- → x+, x+
//! x-, y+ → x-, x-
//! x-, y- → y-, y-
//! ```
//!
//! `R(y, x)` rotates the other way, which is how a block and its negative
//! differ.

use std::collections::BTreeSet;
use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{AqError, Result};
use crate::linalg::CMatrix;
use crate::model::{Part, Sign, Species};

const HERMITIAN_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PauliOp {
    I,
    X,
    Y,
    Z,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PauliKind {
    pub op: PauliOp,
    pub negative: bool,
}

impl PauliKind {
    pub const fn plus(op: PauliOp) -> Self {
        PauliKind { op, negative: false }
    }

    pub const fn minus(op: PauliOp) -> Self {
        PauliKind { op, negative: true }
    }

    fn sign(&self) -> f64 {
        if self.negative {
            -1.0
        } else {
            1.0
        }
    }
}

impl fmt::Display for PauliKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = if self.negative { "-" } else { "+" };
        let op = match self.op {
            PauliOp::I => "I",
            PauliOp::X => "σx",
            PauliOp::Y => "σy",
            PauliOp::Z => "σz",
        };
        write!(f, "{s}{op}")
    }
}

/// One term `l·H_{ij}` of the decomposition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PauliBlock {
    pub i: usize,
    pub j: usize,
    pub kind: PauliKind,
    pub coefficient: f64,
}

impl PauliBlock {
    pub fn new(i: usize, j: usize, kind: PauliKind, coefficient: f64) -> Self {
        PauliBlock { i, j, kind, coefficient }
    }

    fn check(&self) -> Result<()> {
        let bad = self.i > self.j || (self.i == self.j && self.kind.op != PauliOp::I) || !(self.coefficient >= 0.0);
        if bad {
            return Err(AqError::UnsupportedKind(format!("{} on ({}, {})", self.kind, self.i, self.j)));
        }
        Ok(())
    }

    /// `l·H_{ij}` embedded in an `n × n` matrix.
    pub fn matrix(&self, n: usize) -> CMatrix {
        let mut m = CMatrix::zeros(n);
        let v = self.coefficient * self.kind.sign();
        let (i, j) = (self.i, self.j);
        match self.kind.op {
            PauliOp::I => {
                m[(i, i)] += v;
                if j != i {
                    m[(j, j)] += v;
                }
            }
            PauliOp::X => {
                m[(i, j)] += v;
                m[(j, i)] += v;
            }
            PauliOp::Y => {
                m[(i, j)] += Complex64::new(0.0, -v);
                m[(j, i)] += Complex64::new(0.0, v);
            }
            PauliOp::Z => {
                m[(i, i)] += v;
                m[(j, j)] -= v;
            }
        }
        m
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PauliDecomposition {
    pub dim: usize,
    pub blocks: Vec<PauliBlock>,
}

impl PauliDecomposition {
    pub fn reconstruct(&self) -> CMatrix {
        self.blocks.iter().fold(CMatrix::zeros(self.dim), |acc, b| &acc + &b.matrix(self.dim))
    }

    pub fn total_weight(&self) -> f64 {
        self.blocks.iter().map(|b| b.coefficient).sum()
    }
}

/// Splits `H` into signed Pauli blocks with non-negative coefficients.
///
/// Diagonal entries become per-index `±I` phase blocks; an off-diagonal
/// `h_{ij} = a − ic` becomes `±σx` with `l = |a|` and `±σy` with `l = |c|`.
pub fn pauli_decompose(h: &CMatrix) -> Result<PauliDecomposition> {
    h.check_hermitian(HERMITIAN_TOL)?;
    let n = h.dim();
    let mut blocks = Vec::new();
    for i in 0..n {
        for j in i..n {
            if i == j {
                let d = h[(i, i)].re;
                if d != 0.0 {
                    let kind = PauliKind { op: PauliOp::I, negative: d < 0.0 };
                    blocks.push(PauliBlock::new(i, i, kind, d.abs()));
                }
                continue;
            }
            let hij = h[(i, j)];
            let (a, c) = (hij.re, -hij.im);
            if a != 0.0 {
                blocks.push(PauliBlock::new(i, j, PauliKind { op: PauliOp::X, negative: a < 0.0 }, a.abs()));
            }
            if c != 0.0 {
                blocks.push(PauliBlock::new(i, j, PauliKind { op: PauliOp::Y, negative: c < 0.0 }, c.abs()));
            }
        }
    }
    Ok(PauliDecomposition { dim: n, blocks })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RuleKind {
    /// `τ, M → τ', M'`
    MembraneTransform,
    /// `x^s, x^{-s} → ∅`
    Annihilation,
    /// `τ₁, τ → τ₁', τ`
    Catalysis,
    /// `τ → τ, τ'`
    Nonequilibrium,
}

/// A rewrite rule. Product `k` takes the trajectory and options of reagent
/// `inherit[k]`; `None` marks a newly created quantum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReactionRule {
    pub kind: RuleKind,
    pub reagents: Vec<Species>,
    pub membrane: Option<(usize, usize)>,
    pub products: Vec<Species>,
    pub inherit: Vec<Option<usize>>,
    /// Rate scale in energy units (the block coefficient `l`, or `|c|`).
    pub rate: f64,
}

impl ReactionRule {
    pub fn catalysis(reagents: [Species; 2], products: [Species; 2], rate: f64) -> Self {
        ReactionRule {
            kind: RuleKind::Catalysis,
            reagents: reagents.to_vec(),
            membrane: None,
            products: products.to_vec(),
            inherit: vec![Some(0), Some(1)],
            rate,
        }
    }

    pub fn creation(source: Species, created: Species, rate: f64) -> Self {
        ReactionRule {
            kind: RuleKind::Nonequilibrium,
            reagents: vec![source],
            membrane: None,
            products: vec![source, created],
            inherit: vec![Some(0), None],
            rate,
        }
    }

    pub fn annihilation(s: Species, rate: f64) -> Self {
        ReactionRule {
            kind: RuleKind::Annihilation,
            reagents: vec![s, s.twin()],
            membrane: None,
            products: vec![],
            inherit: vec![],
            rate,
        }
    }

    /// For a catalysis rule: `(converted reagent index, its product, catalyst index)`.
    pub fn conversion(&self) -> Option<(usize, Species, usize)> {
        if self.kind != RuleKind::Catalysis || self.reagents.len() != 2 {
            return None;
        }
        for k in 0..2 {
            let other = 1 - k;
            if self.products[other] == self.reagents[other] && self.products[k] != self.reagents[k] {
                return Some((k, self.products[k], other));
            }
        }
        None
    }

    /// Unordered reagent pattern, used to check dispatch uniqueness.
    pub fn pattern(&self) -> (Vec<Species>, Option<(usize, usize)>) {
        let mut r = self.reagents.clone();
        r.sort();
        (r, self.membrane)
    }

    /// Change in quanta count per firing.
    pub fn count_change(&self) -> i64 {
        self.products.len() as i64 - self.reagents.len() as i64
    }
}

impl fmt::Display for ReactionRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let join = |v: &[Species]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(", ");
        let lhs = join(&self.reagents);
        let rhs = if self.products.is_empty() { "∅".to_string() } else { join(&self.products) };
        match self.membrane {
            Some((i, j)) => write!(f, "{lhs}, ∂B({i},{j}) -> {rhs}"),
            None => write!(f, "{lhs} -> {rhs}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReactionList {
    pub rules: Vec<ReactionRule>,
    /// Hamiltonian block served by this list, if any.
    pub scope: Option<(usize, usize)>,
}

impl ReactionList {
    pub fn empty() -> Self {
        ReactionList { rules: Vec::new(), scope: None }
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    /// Whether every reagent pattern dispatches to one rule.
    pub fn is_deterministic(&self) -> bool {
        let mut seen = BTreeSet::new();
        self.rules.iter().all(|r| seen.insert(r.pattern()))
    }

    pub fn with_rate(mut self, rate: f64) -> Self {
        for r in &mut self.rules {
            r.rate = rate;
        }
        self
    }

    pub fn union(lists: &[ReactionList]) -> Self {
        ReactionList { rules: lists.iter().flat_map(|l| l.rules.iter().cloned()).collect(), scope: None }
    }
}

/// The rotation list `R(x, y)` on amplitude components `x = (part, state)`.
pub fn rotation_rules(x: (Part, usize), y: (Part, usize), rate: f64) -> Vec<ReactionRule> {
    use Sign::{Minus as M, Plus as P};
    let xs = |s| Species::new(x.0, s, x.1);
    let ys = |s| Species::new(y.0, s, y.1);
    vec![
        ReactionRule::catalysis([xs(P), ys(P)], [ys(P), ys(P)], rate),
        ReactionRule::catalysis([xs(P), ys(M)], [xs(P), xs(P)], rate),
        ReactionRule::catalysis([xs(M), ys(P)], [xs(M), xs(M)], rate),
        ReactionRule::catalysis([xs(M), ys(M)], [ys(M), ys(M)], rate),
    ]
}

/// Rotation pairs `(x, y)` realizing `exp(−i·kind·t)` on `(i, j)`.
fn rotation_pairs(block: &PauliBlock) -> Vec<((Part, usize), (Part, usize))> {
    use Part::{Im as B, Re as A};
    let (i, j) = (block.i, block.j);
    let pairs = match block.kind.op {
        // −σx: dα_i = −β_j, dβ_j = α_i and dα_j = −β_i, dβ_i = α_j
        PauliOp::X => vec![((A, i), (B, j)), ((A, j), (B, i))],
        // −σy: dα_i = α_j, dα_j = −α_i (likewise for β)
        PauliOp::Y => vec![((A, j), (A, i)), ((B, j), (B, i))],
        // −σz: phase e^{+it} on i, e^{−it} on j
        PauliOp::Z => vec![((A, i), (B, i)), ((B, j), (A, j))],
        // −I: phase e^{+it} on every index of the block
        PauliOp::I => {
            let mut v = vec![((A, i), (B, i))];
            if j != i {
                v.push(((A, j), (B, j)));
            }
            v
        }
    };
    if block.kind.negative {
        pairs
    } else {
        pairs.into_iter().map(|(x, y)| (y, x)).collect()
    }
}

/// Equilibrium catalysis list for one block; rule rates carry `l`.
pub fn reactions_for_block(block: &PauliBlock) -> Result<ReactionList> {
    block.check()?;
    let rules = rotation_pairs(block)
        .into_iter()
        .flat_map(|(x, y)| rotation_rules(x, y, block.coefficient))
        .collect();
    Ok(ReactionList { rules, scope: Some((block.i, block.j)) })
}

/// The phase list `L_φ`: `R(α_j, β_j)` on every index, a uniform `e^{iφ}` turn.
pub fn phase_list(dim: usize, rate: f64) -> ReactionList {
    let rules = (0..dim).flat_map(|j| rotation_rules((Part::Re, j), (Part::Im, j), rate)).collect();
    ReactionList { rules, scope: None }
}

/// A Hamiltonian term in creation/annihilation operators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SqTerm {
    /// `c·a_p⁺ a_q`
    OneBody { c: Complex64, p: usize, q: usize },
    /// `c·a_p⁺ a_q⁺ a_r a_s` for two distinguishable particles: moves the
    /// pair from `(r, s)` to `(p, q)` in the joint basis `first·dim + second`.
    TwoBody { c: Complex64, p: usize, q: usize, r: usize, s: usize },
}

/// Nonequilibrium creation rules from `−iH`: every quantum of the source
/// amplitude spawns a quantum of the target amplitude.
pub fn sq_reactions(terms: &[SqTerm], dim: usize) -> Result<ReactionList> {
    let mut rules = Vec::new();
    for term in terms {
        let (c, target, source) = match *term {
            SqTerm::OneBody { c, p, q } => (c, p, q),
            SqTerm::TwoBody { c, p, q, r, s } => (c, p * dim + q, r * dim + s),
        };
        if c.re != 0.0 && c.im != 0.0 {
            return Err(AqError::NonRealCoefficient { re: c.re, im: c.im });
        }
        for sign in [Sign::Plus, Sign::Minus] {
            if c.re != 0.0 {
                // dα_p = c·β_q, dβ_p = −c·α_q
                let k = Sign::of(c.re);
                rules.push(ReactionRule::creation(
                    Species::im(sign, source),
                    Species::re(k.times(sign), target),
                    c.re.abs(),
                ));
                rules.push(ReactionRule::creation(
                    Species::re(sign, source),
                    Species::im(k.flip().times(sign), target),
                    c.re.abs(),
                ));
            } else if c.im != 0.0 {
                // c = ib: dα_p = b·α_q, dβ_p = b·β_q
                let k = Sign::of(c.im);
                rules.push(ReactionRule::creation(
                    Species::re(sign, source),
                    Species::re(k.times(sign), target),
                    c.im.abs(),
                ));
                rules.push(ReactionRule::creation(
                    Species::im(sign, source),
                    Species::im(k.times(sign), target),
                    c.im.abs(),
                ));
            }
        }
    }
    Ok(ReactionList { rules, scope: None })
}

/// One-body terms of a Hermitian matrix, each coefficient real or imaginary.
pub fn sq_terms_from_matrix(h: &CMatrix) -> Result<Vec<SqTerm>> {
    h.check_hermitian(HERMITIAN_TOL)?;
    let n = h.dim();
    let mut terms = Vec::new();
    for p in 0..n {
        for q in 0..n {
            let v = h[(p, q)];
            if v.re != 0.0 {
                terms.push(SqTerm::OneBody { c: Complex64::new(v.re, 0.0), p, q });
            }
            if v.im != 0.0 {
                terms.push(SqTerm::OneBody { c: Complex64::new(0.0, v.im), p, q });
            }
        }
    }
    Ok(terms)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleMode {
    Division,
    Trotter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivisionArea {
    pub block: (usize, usize),
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Slice {
    /// Index into the decomposition's blocks.
    pub block: usize,
    pub duration: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MembraneSchedule {
    pub mode: ScheduleMode,
    pub division: Vec<DivisionArea>,
    pub slices: Vec<Slice>,
    pub dt: f64,
    /// Block-tagging rules applied when a quantum hits area `(i, j)`.
    pub reflection: Vec<ReactionRule>,
}

impl MembraneSchedule {
    pub fn cycle_length(&self) -> f64 {
        self.slices.iter().map(|s| s.duration).sum()
    }

    /// Area label for a point on the unit sphere with height `z ∈ [−1, 1]`.
    /// Zones of equal height have equal area, so fractions map to bands.
    pub fn area_at(&self, z: f64) -> Option<(usize, usize)> {
        let u = ((1.0 - z) / 2.0).clamp(0.0, 1.0);
        let mut acc = 0.0;
        for a in &self.division {
            acc += a.fraction;
            if u < acc {
                return Some(a.block);
            }
        }
        self.division.last().map(|a| a.block)
    }
}

pub fn membrane_schedule(decomp: &PauliDecomposition, mode: ScheduleMode, dt: f64) -> Result<MembraneSchedule> {
    if decomp.blocks.is_empty() {
        return Err(AqError::EmptyDecomposition);
    }
    let total = decomp.total_weight();
    let mut division: Vec<DivisionArea> = Vec::new();
    for b in &decomp.blocks {
        let f = b.coefficient / total;
        match division.iter_mut().find(|a| a.block == (b.i, b.j)) {
            Some(a) => a.fraction += f,
            None => division.push(DivisionArea { block: (b.i, b.j), fraction: f }),
        }
    }
    let slices = match mode {
        ScheduleMode::Trotter => decomp
            .blocks
            .iter()
            .enumerate()
            .map(|(k, b)| Slice { block: k, duration: b.coefficient * dt })
            .collect(),
        ScheduleMode::Division => Vec::new(),
    };
    let mut reflection = Vec::new();
    for a in &division {
        let (i, j) = a.block;
        let states: Vec<usize> = if i == j { vec![i] } else { vec![i, j] };
        for &k in &states {
            for part in [Part::Re, Part::Im] {
                for sign in [Sign::Plus, Sign::Minus] {
                    let s = Species::new(part, sign, k);
                    reflection.push(ReactionRule {
                        kind: RuleKind::MembraneTransform,
                        reagents: vec![s],
                        membrane: Some(a.block),
                        products: vec![s],
                        inherit: vec![Some(0)],
                        rate: 1.0,
                    });
                }
            }
        }
    }
    Ok(MembraneSchedule { mode, division, slices, dt, reflection })
}

/// Decomposition plus one list per block, in block order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Compiled {
    pub decomposition: PauliDecomposition,
    pub lists: Vec<ReactionList>,
}

pub fn compile(h: &CMatrix) -> Result<Compiled> {
    let decomposition = pauli_decompose(h)?;
    let lists = decomposition.blocks.iter().map(reactions_for_block).collect::<Result<Vec<_>>>()?;
    Ok(Compiled { decomposition, lists })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{sigma_x, sigma_y, sigma_z};
    use proptest::prelude::*;
    use Sign::{Minus as M, Plus as P};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn a(s: Sign, j: usize) -> Species {
        Species::re(s, j)
    }

    fn b(s: Sign, j: usize) -> Species {
        Species::im(s, j)
    }

    #[test]
    fn decompose_minus_sigma_x() {
        let d = pauli_decompose(&sigma_x().scale(c(-1.0, 0.0))).unwrap();
        assert_eq!(d.blocks, vec![PauliBlock::new(0, 1, PauliKind::minus(PauliOp::X), 1.0)]);
    }

    #[test]
    fn decompose_zero() {
        assert!(pauli_decompose(&CMatrix::zeros(3)).unwrap().blocks.is_empty());
    }

    #[test]
    fn decompose_complex_offdiagonal() {
        let h = CMatrix::from_rows(&[vec![c(0.0, 0.0), c(1.0, -1.0)], vec![c(1.0, 1.0), c(0.0, 0.0)]]).unwrap();
        let d = pauli_decompose(&h).unwrap();
        assert_eq!(
            d.blocks,
            vec![
                PauliBlock::new(0, 1, PauliKind::plus(PauliOp::X), 1.0),
                PauliBlock::new(0, 1, PauliKind::plus(PauliOp::Y), 1.0),
            ]
        );
        assert!(d.reconstruct().max_abs_diff(&h) < 1e-15);
    }

    #[test]
    fn decompose_rejects_non_hermitian() {
        let h = CMatrix::from_rows(&[vec![c(0.0, 0.0), c(1.0, 0.0)], vec![c(2.0, 0.0), c(0.0, 0.0)]]).unwrap();
        assert!(matches!(pauli_decompose(&h), Err(AqError::NotHermitian { .. })));
    }

    #[test]
    fn minus_sigma_x_list_matches_golden() {
        let l = reactions_for_block(&PauliBlock::new(0, 1, PauliKind::minus(PauliOp::X), 1.0)).unwrap();
        let want = [
            ([a(P, 0), b(P, 1)], [b(P, 1), b(P, 1)]),
            ([a(P, 0), b(M, 1)], [a(P, 0), a(P, 0)]),
            ([a(M, 0), b(P, 1)], [a(M, 0), a(M, 0)]),
            ([a(M, 0), b(M, 1)], [b(M, 1), b(M, 1)]),
            ([a(P, 1), b(P, 0)], [b(P, 0), b(P, 0)]),
            ([a(P, 1), b(M, 0)], [a(P, 1), a(P, 1)]),
            ([a(M, 1), b(P, 0)], [a(M, 1), a(M, 1)]),
            ([a(M, 1), b(M, 0)], [b(M, 0), b(M, 0)]),
        ];
        assert_eq!(l.rules.len(), 8);
        for (rule, (r, p)) in l.rules.iter().zip(want) {
            assert_eq!(rule.reagents, r.to_vec());
            assert_eq!(rule.products, p.to_vec());
            assert_eq!(rule.kind, RuleKind::Catalysis);
        }
        assert_eq!(l.rules[0].to_string(), "α_0^+, β_1^+ -> β_1^+, β_1^+");
        assert!(l.is_deterministic());
    }

    #[test]
    fn minus_sigma_z_list_matches_golden() {
        let l = reactions_for_block(&PauliBlock::new(0, 1, PauliKind::minus(PauliOp::Z), 1.0)).unwrap();
        assert_eq!(l.rules.len(), 8);
        assert_eq!(l.rules[0].reagents, vec![a(P, 0), b(P, 0)]);
        assert_eq!(l.rules[0].products, vec![b(P, 0), b(P, 0)]);
        // second half is the inverse rotation on index 1: α_1^+, β_1^+ → α_1^+, α_1^+
        let r = l.rules.iter().find(|r| r.pattern().0 == vec![a(P, 1), b(P, 1)]).unwrap();
        assert_eq!(r.conversion().unwrap().1, a(P, 1));
    }

    #[test]
    fn minus_sigma_y_first_half_converts_alpha() {
        let l = reactions_for_block(&PauliBlock::new(0, 1, PauliKind::minus(PauliOp::Y), 1.0)).unwrap();
        // α_1^+, α_0^+ → α_0^+, α_0^+ : the α_1 quantum turns into α_0.
        assert_eq!(l.rules[0].reagents, vec![a(P, 1), a(P, 0)]);
        assert_eq!(l.rules[0].products, vec![a(P, 0), a(P, 0)]);
        // β half: β_1^+, β_0^+ → β_0^+, β_0^+
        assert_eq!(l.rules[4].reagents, vec![b(P, 1), b(P, 0)]);
        assert_eq!(l.rules[4].products, vec![b(P, 0), b(P, 0)]);
    }

    #[test]
    fn positive_kind_reverses_every_rotation() {
        let neg = reactions_for_block(&PauliBlock::new(0, 1, PauliKind::minus(PauliOp::X), 1.0)).unwrap();
        let pos = reactions_for_block(&PauliBlock::new(0, 1, PauliKind::plus(PauliOp::X), 1.0)).unwrap();
        // +σx: β_1 rotates into α_0, so β_1^+ meeting α_0^+ becomes α_0^+.
        assert_eq!(pos.rules[0].reagents, vec![b(P, 1), a(P, 0)]);
        assert_eq!(pos.rules[0].products, vec![a(P, 0), a(P, 0)]);
        let np: BTreeSet<_> = neg.rules.iter().map(|r| r.pattern()).collect();
        let pp: BTreeSet<_> = pos.rules.iter().map(|r| r.pattern()).collect();
        assert_eq!(np, pp, "same reagent pairs, opposite conversions");
    }

    #[test]
    fn equilibrium_rules_conserve_quanta() {
        for op in [PauliOp::X, PauliOp::Y, PauliOp::Z, PauliOp::I] {
            for negative in [false, true] {
                let (i, j) = if op == PauliOp::I { (1, 1) } else { (0, 2) };
                let l = reactions_for_block(&PauliBlock::new(i, j, PauliKind { op, negative }, 0.5)).unwrap();
                assert!(l.is_deterministic());
                for r in &l.rules {
                    assert_eq!(r.count_change(), 0);
                    let (k, _, cat) = r.conversion().expect("catalysis form");
                    assert_eq!(r.products[cat], r.reagents[cat]);
                    assert_ne!(r.products[k], r.reagents[k]);
                }
            }
        }
    }

    #[test]
    fn unsupported_kinds() {
        assert!(matches!(
            reactions_for_block(&PauliBlock::new(0, 0, PauliKind::minus(PauliOp::X), 1.0)),
            Err(AqError::UnsupportedKind(_))
        ));
        assert!(matches!(
            reactions_for_block(&PauliBlock::new(1, 0, PauliKind::minus(PauliOp::X), 1.0)),
            Err(AqError::UnsupportedKind(_))
        ));
    }

    #[test]
    fn phase_list_substitutes_first_example() {
        let l = phase_list(2, 1.0);
        assert_eq!(l.rules.len(), 8);
        assert_eq!(l.rules[0].reagents, vec![a(P, 0), b(P, 0)]);
        assert_eq!(l.rules[0].products, vec![b(P, 0), b(P, 0)]);
        let minus_i = reactions_for_block(&PauliBlock::new(0, 1, PauliKind::minus(PauliOp::I), 1.0)).unwrap();
        assert_eq!(minus_i.rules, l.rules);
    }

    #[test]
    fn second_quantized_minus_sigma_x() {
        // H = −(a_1⁺a_0 + a_0⁺a_1)
        let terms = [
            SqTerm::OneBody { c: c(-1.0, 0.0), p: 1, q: 0 },
            SqTerm::OneBody { c: c(-1.0, 0.0), p: 0, q: 1 },
        ];
        let l = sq_reactions(&terms, 2).unwrap();
        assert_eq!(l.rules.len(), 8);
        let got: BTreeSet<(Species, Species)> =
            l.rules.iter().map(|r| (r.reagents[0], r.products[1])).collect();
        let mut want = BTreeSet::new();
        for s in [P, M] {
            want.insert((b(s, 1), a(s.flip(), 0)));
            want.insert((a(s, 0), b(s, 1)));
            want.insert((b(s, 0), a(s.flip(), 1)));
            want.insert((a(s, 1), b(s, 0)));
        }
        assert_eq!(got, want);
        for r in &l.rules {
            assert_eq!(r.kind, RuleKind::Nonequilibrium);
            assert_eq!(r.products[0], r.reagents[0]);
        }
        assert!(sq_reactions(&[], 2).unwrap().is_empty());
    }

    #[test]
    fn second_quantized_rejects_mixed_coefficients() {
        let t = [SqTerm::OneBody { c: c(1.0, 1.0), p: 0, q: 1 }];
        assert!(matches!(sq_reactions(&t, 2), Err(AqError::NonRealCoefficient { .. })));
    }

    /// Mean-field drift of net counts for creation rules: each firing adds
    /// `unit(created)` to the target amplitude at rate `rate·n(source)`.
    fn creation_drift(l: &ReactionList, psi: &[Complex64]) -> Vec<Complex64> {
        let mut d = vec![c(0.0, 0.0); psi.len()];
        for r in &l.rules {
            let src = r.reagents[0];
            let comp = match src.part {
                Part::Re => psi[src.state].re,
                Part::Im => psi[src.state].im,
            };
            // only the count of the rule's own sign contributes, with weight |comp|
            let n = if Sign::of(comp) == src.sign { comp.abs() } else { 0.0 };
            d[r.products[1].state] += r.products[1].unit() * r.rate * n;
        }
        d
    }

    #[test]
    fn second_quantized_drift_is_schrodinger() {
        for h in [sigma_x().scale(c(-1.0, 0.0)), sigma_y().scale(c(-1.0, 0.0)), sigma_z(), {
            CMatrix::from_rows(&[vec![c(0.5, 0.0), c(0.0, 2.0)], vec![c(0.0, -2.0), c(-1.0, 0.0)]]).unwrap()
        }] {
            let l = sq_reactions(&sq_terms_from_matrix(&h).unwrap(), 2).unwrap();
            let psi = [c(0.3, -0.7), c(-0.5, 0.2)];
            let want: Vec<Complex64> = h.apply(&psi).iter().map(|v| v * c(0.0, -1.0)).collect();
            let got = creation_drift(&l, &psi);
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).norm() < 1e-12, "{g} vs {w}");
            }
        }
    }

    #[test]
    fn minus_sigma_y_second_quantized_odes() {
        // −σy = −i(a_1⁺a_0 − a_0⁺a_1): dα_0 = α_1, dα_1 = −α_0, dβ_0 = β_1, dβ_1 = −β_0
        let terms = [
            SqTerm::OneBody { c: c(0.0, -1.0), p: 1, q: 0 },
            SqTerm::OneBody { c: c(0.0, 1.0), p: 0, q: 1 },
        ];
        let l = sq_reactions(&terms, 2).unwrap();
        let psi = [c(0.4, 0.1), c(-0.3, 0.8)];
        let d = creation_drift(&l, &psi);
        assert!((d[0] - c(psi[1].re, psi[1].im)).norm() < 1e-12);
        assert!((d[1] - c(-psi[0].re, -psi[0].im)).norm() < 1e-12);
    }

    #[test]
    fn schedule_examples() {
        let d1 = PauliDecomposition { dim: 2, blocks: vec![PauliBlock::new(0, 1, PauliKind::minus(PauliOp::X), 2.0)] };
        let s = membrane_schedule(&d1, ScheduleMode::Division, 0.01).unwrap();
        assert_eq!(s.division, vec![DivisionArea { block: (0, 1), fraction: 1.0 }]);
        assert_eq!(s.reflection.len(), 8);

        let d2 = PauliDecomposition {
            dim: 3,
            blocks: vec![
                PauliBlock::new(0, 1, PauliKind::minus(PauliOp::X), 1.0),
                PauliBlock::new(1, 2, PauliKind::plus(PauliOp::Z), 3.0),
            ],
        };
        let s = membrane_schedule(&d2, ScheduleMode::Division, 0.01).unwrap();
        assert_eq!(s.division[0].fraction, 0.25);
        assert_eq!(s.division[1].fraction, 0.75);
        assert_eq!(s.area_at(0.9), Some((0, 1)));
        assert_eq!(s.area_at(-0.9), Some((1, 2)));

        let d3 = PauliDecomposition {
            dim: 3,
            blocks: vec![
                PauliBlock::new(0, 1, PauliKind::minus(PauliOp::X), 1.0),
                PauliBlock::new(1, 2, PauliKind::minus(PauliOp::X), 1.0),
            ],
        };
        let s = membrane_schedule(&d3, ScheduleMode::Trotter, 0.01).unwrap();
        assert_eq!(s.slices, vec![Slice { block: 0, duration: 0.01 }, Slice { block: 1, duration: 0.01 }]);
        assert!((s.cycle_length() - 0.02).abs() < 1e-15);

        let empty = PauliDecomposition { dim: 2, blocks: vec![] };
        assert_eq!(membrane_schedule(&empty, ScheduleMode::Division, 0.01), Err(AqError::EmptyDecomposition));
    }

    fn hermitian(n: usize, vals: &[f64]) -> CMatrix {
        let mut h = CMatrix::zeros(n);
        let mut k = 0;
        for i in 0..n {
            for j in i..n {
                if i == j {
                    h[(i, i)] = c(vals[k], 0.0);
                    k += 1;
                } else {
                    let v = c(vals[k], vals[k + 1]);
                    k += 2;
                    h[(i, j)] = v;
                    h[(j, i)] = v.conj();
                }
            }
        }
        h
    }

    proptest! {
        #[test]
        fn decomposition_reconstructs(n in 1usize..=16, seed in proptest::collection::vec(-3.0f64..3.0, 256)) {
            let h = hermitian(n, &seed);
            let d = pauli_decompose(&h).unwrap();
            prop_assert!(d.blocks.iter().all(|b| b.coefficient >= 0.0 && b.i <= b.j));
            prop_assert!(d.reconstruct().max_abs_diff(&h) <= 1e-10);
            if !d.blocks.is_empty() {
                let s = membrane_schedule(&d, ScheduleMode::Division, 0.01).unwrap();
                let total: f64 = s.division.iter().map(|a| a.fraction).sum();
                prop_assert!((total - 1.0).abs() < 1e-12);
                let s = membrane_schedule(&d, ScheduleMode::Trotter, 0.01).unwrap();
                prop_assert!((s.cycle_length() - 0.01 * d.total_weight()).abs() < 1e-12);
            }
        }
    }
}
