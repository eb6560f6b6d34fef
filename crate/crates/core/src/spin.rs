//! Spin configuration space, collective pair operators and the network Hamiltonian.
//!
//! Basis convention (used everywhere in the crate): a configuration index is an
//! 8-bit integer, ion 1 is the most significant bit, bit value 1 is spin-up.
//! All-up is therefore index 255 and all-down index 0.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const N_SPINS: usize = 8;
pub const DIM: usize = 1 << N_SPINS;
pub const N_PAIRS: usize = 4;

pub type StateVector = DVector<Complex64>;

/// One basis configuration of the eight spins.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SpinConfig(u8);

impl SpinConfig {
    pub const ALL_UP: SpinConfig = SpinConfig(0xFF);
    pub const ALL_DOWN: SpinConfig = SpinConfig(0x00);
    /// ↑↑↑↑↓↓↓↓
    pub const UP_DOWN: SpinConfig = SpinConfig(0xF0);
    /// ↓↓↓↓↑↑↑↑
    pub const DOWN_UP: SpinConfig = SpinConfig(0x0F);

    pub fn from_index(index: usize) -> Result<Self> {
        if index >= DIM {
            return Err(Error::InvalidInput(format!("configuration index {index} out of range 0..256")));
        }
        Ok(SpinConfig(index as u8))
    }

    /// `bits[0]` is ion 1.
    pub fn from_bits(bits: [bool; N_SPINS]) -> Self {
        let mut idx = 0u8;
        for b in bits {
            idx = (idx << 1) | b as u8;
        }
        SpinConfig(idx)
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn bits(self) -> [bool; N_SPINS] {
        let mut out = [false; N_SPINS];
        for (k, b) in out.iter_mut().enumerate() {
            *b = self.is_up(k + 1);
        }
        out
    }

    /// `ion` counts from 1.
    pub fn is_up(self, ion: usize) -> bool {
        (self.0 >> (N_SPINS - ion)) & 1 == 1
    }

    /// σᶻ eigenvalue of `ion` (1-based).
    pub fn sz(self, ion: usize) -> f64 {
        if self.is_up(ion) {
            1.0
        } else {
            -1.0
        }
    }

    /// Eigenvalue of S_{z,pair} for pair 1..=4.
    pub fn pair_sz(self, pair: usize) -> f64 {
        self.sz(2 * pair - 1) + self.sz(2 * pair)
    }

    pub fn flip(self, ion: usize) -> Self {
        SpinConfig(self.0 ^ (1 << (N_SPINS - ion)))
    }

    pub fn all() -> impl Iterator<Item = SpinConfig> {
        (0..=255u8).map(SpinConfig)
    }
}

impl std::fmt::Display for SpinConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for b in self.bits() {
            f.write_str(if b { "↑" } else { "↓" })?;
        }
        Ok(())
    }
}

pub fn basis_state(c: SpinConfig) -> StateVector {
    let mut v = StateVector::zeros(DIM);
    v[c.index()] = Complex64::new(1.0, 0.0);
    v
}

/// Which form of the r₃ term is used.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum R3Form {
    /// ((S_z1 − S_z2) − (S_z3 + S_z4))²
    #[default]
    Printed,
    /// ((S_z1 − S_z2) − (S_z3 − S_z4))²
    Symmetric,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HamiltonianParams {
    pub lambda: f64,
    pub r1: f64,
    pub r2: f64,
    pub r3: f64,
    pub a: f64,
    pub b1: f64,
    pub b2: f64,
    #[serde(default)]
    pub r3_form: R3Form,
}

impl HamiltonianParams {
    pub fn new(lambda: f64, r1: f64, r2: f64, r3: f64) -> Self {
        HamiltonianParams { lambda, r1, r2, r3, a: 0.0, b1: 0.0, b2: 0.0, r3_form: R3Form::Printed }
    }

    pub fn with_fields(mut self, a: f64, b1: f64, b2: f64) -> Self {
        self.a = a;
        self.b1 = b1;
        self.b2 = b2;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda, self.r1, self.r2, self.r3, self.a, self.b1, self.b2];
        if all.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("Hamiltonian parameters must be finite".into()));
        }
        if self.lambda <= 0.0 {
            return Err(Error::InvalidInput(format!("lambda must be > 0, got {}", self.lambda)));
        }
        for (name, v) in [("r1", self.r1), ("r2", self.r2), ("r3", self.r3)] {
            if v < 0.0 {
                return Err(Error::InvalidInput(format!("{name} must be >= 0, got {v}")));
            }
        }
        Ok(())
    }

    /// Coupling-only part of the diagonal (the r₁, r₂, r₃ terms without the fields)
    /// evaluated on pair S_z eigenvalues.
    fn couplings(&self, s: [f64; 4]) -> f64 {
        let tot = s[0] + s[1] + s[2] + s[3];
        let p = s[0] + s[1];
        let q = s[2] + s[3];
        let r3arg = match self.r3_form {
            R3Form::Printed => (s[0] - s[1]) - (s[2] + s[3]),
            R3Form::Symmetric => (s[0] - s[1]) - (s[2] - s[3]),
        };
        self.r1 * tot * tot + self.r2 * (p - q) * (p - q) + self.r3 * r3arg * r3arg
    }

    fn diag_from_pairs(&self, s: [f64; 4]) -> f64 {
        let p = s[0] + s[1];
        let q = s[2] + s[3];
        -self.lambda * (self.couplings(s) + self.b1 * p + self.b2 * q)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrapKind {
    Fountain,
    Harmonic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrapPreset {
    pub kind: TrapKind,
}

impl TrapPreset {
    pub fn fountain() -> Self {
        TrapPreset { kind: TrapKind::Fountain }
    }

    pub fn harmonic() -> Self {
        TrapPreset { kind: TrapKind::Harmonic }
    }

    /// Default couplings with zero fields (λ = 1). For the harmonic trap r₂ is
    /// the distributed-noise knob and defaults to 0.
    pub fn params(&self) -> HamiltonianParams {
        match self.kind {
            TrapKind::Fountain => HamiltonianParams::new(1.0, 10.0, 9.5, 0.0),
            TrapKind::Harmonic => HamiltonianParams::new(1.0, 10.0, 0.0, 0.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Z,
}

/// Hermitian matrix on the 256-dimensional configuration space.
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianOperator {
    pub entries: DMatrix<Complex64>,
}

impl HermitianOperator {
    pub fn from_real(m: &DMatrix<f64>) -> Self {
        HermitianOperator { entries: m.map(|x| Complex64::new(x, 0.0)) }
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn max_abs(&self) -> f64 {
        self.entries.iter().fold(0.0, |m, z| m.max(z.norm()))
    }

    /// max |H − H†| relative to max |H| (0 for the zero matrix).
    pub fn hermiticity_defect(&self) -> f64 {
        let n = self.dim();
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in i..n {
                worst = worst.max((self.entries[(i, j)] - self.entries[(j, i)].conj()).norm());
            }
        }
        let scale = self.max_abs();
        if scale == 0.0 {
            0.0
        } else {
            worst / scale
        }
    }

    pub fn apply(&self, v: &StateVector) -> StateVector {
        &self.entries * v
    }

    /// Largest singular value.
    pub fn operator_norm(&self) -> f64 {
        let h = &self.entries;
        // Hermitian: the norm is the largest |eigenvalue|.
        let eig = h.clone().symmetric_eigenvalues();
        eig.iter().fold(0.0, |m, e| m.max(e.abs()))
    }
}

pub fn build_collective(axis: Axis, pair_index: usize) -> Result<HermitianOperator> {
    if !(1..=N_PAIRS).contains(&pair_index) {
        return Err(Error::InvalidInput(format!("pair index {pair_index} not in 1..=4")));
    }
    let mut m = DMatrix::<f64>::zeros(DIM, DIM);
    for c in SpinConfig::all() {
        for ion in [2 * pair_index - 1, 2 * pair_index] {
            match axis {
                Axis::Z => m[(c.index(), c.index())] += c.sz(ion),
                Axis::X => m[(c.flip(ion).index(), c.index())] += 1.0,
            }
        }
    }
    Ok(HermitianOperator::from_real(&m))
}

/// Real symmetric matrix of H/1 in the configuration basis.
pub fn build_hamiltonian_real(params: &HamiltonianParams) -> Result<DMatrix<f64>> {
    params.validate()?;
    let mut m = DMatrix::<f64>::zeros(DIM, DIM);
    for c in SpinConfig::all() {
        let i = c.index();
        m[(i, i)] = params.diag_from_pairs(pair_values(c));
        if params.a != 0.0 {
            for ion in 1..=N_SPINS {
                m[(c.flip(ion).index(), i)] -= params.lambda * params.a;
            }
        }
    }
    Ok(m)
}

pub fn build_hamiltonian(params: &HamiltonianParams) -> Result<HermitianOperator> {
    Ok(HermitianOperator::from_real(&build_hamiltonian_real(params)?))
}

/// Field-derivative operator −λ[A'·ΣS_x + B₁'(S_z1+S_z2) + B₂'(S_z3+S_z4)].
pub fn build_field_derivative(lambda: f64, da: f64, db1: f64, db2: f64) -> DMatrix<f64> {
    let mut m = DMatrix::<f64>::zeros(DIM, DIM);
    for c in SpinConfig::all() {
        let i = c.index();
        let s = pair_values(c);
        m[(i, i)] = -lambda * (db1 * (s[0] + s[1]) + db2 * (s[2] + s[3]));
        if da != 0.0 {
            for ion in 1..=N_SPINS {
                m[(c.flip(ion).index(), i)] -= lambda * da;
            }
        }
    }
    m
}

fn pair_values(c: SpinConfig) -> [f64; 4] {
    [c.pair_sz(1), c.pair_sz(2), c.pair_sz(3), c.pair_sz(4)]
}

/// ⟨c|H|c⟩ with A forced to zero, by direct arithmetic on the pair S_z values.
pub fn diagonal_energy(config: SpinConfig, params: &HamiltonianParams) -> f64 {
    params.diag_from_pairs(pair_values(config))
}

// ---------------------------------------------------------------------------
// Exchange-symmetry sectors.
//
// H only contains pair operators σ_{2i−1} + σ_{2i}, so it commutes with swapping
// the two ions of each pair. Each pair is either in its triplet (3 states) or its
// singlet, giving 16 invariant blocks of dimension 3^(#triplet pairs).

/// Local pair states: 0 = ↑↑, 1 = (↑↓+↓↑)/√2, 2 = ↓↓, 3 = singlet (↑↓−↓↑)/√2.
const PAIR_SZ: [f64; 4] = [2.0, 0.0, -2.0, 0.0];

#[derive(Debug, Clone)]
pub struct Sector {
    /// Bit p set ⇔ pair p+1 is in its singlet.
    pub singlet_mask: u8,
    /// Local pair labels of each block basis vector.
    pub labels: Vec<[u8; 4]>,
    /// Expansion of each block basis vector over configurations.
    pub columns: Vec<Vec<(usize, f64)>>,
    /// ΣS_x restricted to the block.
    pub sx: DMatrix<f64>,
}

impl Sector {
    pub fn dim(&self) -> usize {
        self.labels.len()
    }

    /// Block of H (real symmetric).
    pub fn hamiltonian(&self, p: &HamiltonianParams) -> DMatrix<f64> {
        let n = self.dim();
        let mut h = &self.sx * (-p.lambda * p.a);
        for j in 0..n {
            let l = self.labels[j];
            let s = [PAIR_SZ[l[0] as usize], PAIR_SZ[l[1] as usize], PAIR_SZ[l[2] as usize], PAIR_SZ[l[3] as usize]];
            h[(j, j)] += p.diag_from_pairs(s);
        }
        h
    }

    pub fn project(&self, v: &StateVector) -> DVector<Complex64> {
        DVector::from_iterator(
            self.dim(),
            self.columns.iter().map(|col| col.iter().map(|&(i, a)| v[i] * a).sum::<Complex64>()),
        )
    }

    pub fn embed_into(&self, coeffs: &DVector<Complex64>, out: &mut StateVector) {
        for (col, c) in self.columns.iter().zip(coeffs.iter()) {
            for &(i, a) in col {
                out[i] += c * a;
            }
        }
    }

    pub fn embed_real(&self, coeffs: &[f64]) -> StateVector {
        let mut out = StateVector::zeros(DIM);
        for (col, c) in self.columns.iter().zip(coeffs) {
            for &(i, a) in col {
                out[i] += Complex64::new(c * a, 0.0);
            }
        }
        out
    }
}

fn pair_expansion(label: u8) -> Vec<([bool; 2], f64)> {
    let r = std::f64::consts::FRAC_1_SQRT_2;
    match label {
        0 => vec![([true, true], 1.0)],
        1 => vec![([true, false], r), ([false, true], r)],
        2 => vec![([false, false], 1.0)],
        _ => vec![([true, false], r), ([false, true], -r)],
    }
}

fn build_sector(mask: u8) -> Sector {
    let choices: Vec<Vec<u8>> =
        (0..N_PAIRS).map(|p| if mask >> p & 1 == 1 { vec![3] } else { vec![0, 1, 2] }).collect();
    let mut labels = Vec::new();
    for &a in &choices[0] {
        for &b in &choices[1] {
            for &c in &choices[2] {
                for &d in &choices[3] {
                    labels.push([a, b, c, d]);
                }
            }
        }
    }
    let columns = labels
        .iter()
        .map(|l| {
            let mut terms: Vec<(usize, f64)> = vec![(0, 1.0)];
            for &pl in l {
                let mut next = Vec::new();
                for &(idx, amp) in &terms {
                    for (bits, a) in pair_expansion(pl) {
                        next.push(((idx << 2) | ((bits[0] as usize) << 1) | bits[1] as usize, amp * a));
                    }
                }
                terms = next;
            }
            terms
        })
        .collect::<Vec<_>>();
    // ΣS_x on a triplet pair: ↑↑ ↔ √2·T₀ ↔ ↓↓; the singlet is annihilated.
    let n = labels.len();
    let mut sx = DMatrix::<f64>::zeros(n, n);
    let s2 = std::f64::consts::SQRT_2;
    for (j, l) in labels.iter().enumerate() {
        for p in 0..N_PAIRS {
            let targets: &[u8] = match l[p] {
                0 | 2 => &[1],
                1 => &[0, 2],
                _ => &[],
            };
            for &t in targets {
                let mut m = *l;
                m[p] = t;
                let k = labels.iter().position(|x| *x == m).expect("label in sector");
                sx[(k, j)] += s2;
            }
        }
    }
    Sector { singlet_mask: mask, labels, columns, sx }
}

/// The 16 exchange-symmetry blocks; index 0 is the all-triplet block (dim 81).
pub fn sectors() -> &'static [Sector] {
    static SECTORS: OnceLock<Vec<Sector>> = OnceLock::new();
    SECTORS.get_or_init(|| (0u8..16).map(build_sector).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fountain() -> HamiltonianParams {
        HamiltonianParams::new(1.0, 10.0, 9.5, 0.0).with_fields(0.0, 1.0, 0.1)
    }

    #[test]
    fn index_conventions() {
        assert_eq!(SpinConfig::ALL_UP.index(), 255);
        assert_eq!(SpinConfig::ALL_DOWN.index(), 0);
        assert_eq!(SpinConfig::UP_DOWN.to_string(), "↑↑↑↑↓↓↓↓");
        for c in SpinConfig::all() {
            assert_eq!(SpinConfig::from_bits(c.bits()), c);
        }
        assert!(SpinConfig::from_index(256).is_err());
    }

    #[test]
    fn collective_examples() {
        let up = basis_state(SpinConfig::ALL_UP);
        let z1 = build_collective(Axis::Z, 1).unwrap();
        assert!((z1.apply(&up) - &up * Complex64::new(2.0, 0.0)).norm() < 1e-15);
        let ud = basis_state(SpinConfig::UP_DOWN);
        let z3 = build_collective(Axis::Z, 3).unwrap();
        assert!((z3.apply(&ud) + &ud * Complex64::new(2.0, 0.0)).norm() < 1e-15);
        let x1 = build_collective(Axis::X, 1).unwrap();
        let out = x1.apply(&up);
        let expect = basis_state(SpinConfig::ALL_UP.flip(1)) + basis_state(SpinConfig::ALL_UP.flip(2));
        assert!((out - expect).norm() < 1e-15);
        assert!(build_collective(Axis::X, 0).is_err());
        assert!(build_collective(Axis::Z, 5).is_err());
    }

    #[test]
    fn hamiltonian_diagonal_examples() {
        let h = build_hamiltonian_real(&fountain()).unwrap();
        assert!((h[(255, 255)] + 644.4).abs() < 1e-12);
        assert!((h[(0xF0, 0xF0)] + 611.6).abs() < 1e-12);
        let mut p = fountain();
        p.r3 = 0.5;
        let h2 = build_hamiltonian_real(&p).unwrap();
        assert!((h2[(255, 255)] - h[(255, 255)] + 8.0).abs() < 1e-12);
        // A = 0 ⇒ diagonal
        assert!(h.iter().enumerate().all(|(k, x)| k % (DIM + 1) == 0 || *x == 0.0));
    }

    #[test]
    fn diagonal_energy_examples() {
        let p = fountain();
        assert!((diagonal_energy(SpinConfig::ALL_DOWN, &p) + 635.6).abs() < 1e-12);
        assert!((diagonal_energy(SpinConfig::DOWN_UP, &p) + 604.4).abs() < 1e-12);
        let z = HamiltonianParams::new(1.0, 0.0, 0.0, 0.0);
        assert!(SpinConfig::all().all(|c| diagonal_energy(c, &z) == 0.0));
    }

    #[test]
    fn validation() {
        assert!(HamiltonianParams::new(0.0, 1.0, 1.0, 0.0).validate().is_err());
        assert!(HamiltonianParams::new(1.0, -1.0, 1.0, 0.0).validate().is_err());
        assert!(build_hamiltonian(&HamiltonianParams::new(1.0, 1.0, 1.0, -0.1)).is_err());
    }

    #[test]
    fn global_flip_symmetry_without_bias() {
        let p = HamiltonianParams::new(1.0, 10.0, 9.5, 0.7).with_fields(3.3, 0.0, 0.0);
        let h = build_hamiltonian_real(&p).unwrap();
        for i in 0..DIM {
            for j in 0..DIM {
                assert_eq!(h[(i, j)], h[(255 - i, 255 - j)]);
            }
        }
    }

    #[test]
    fn sectors_block_diagonalize() {
        let secs = sectors();
        let dims: Vec<usize> = secs.iter().map(|s| s.dim()).collect();
        assert_eq!(dims.iter().sum::<usize>(), DIM);
        assert_eq!(dims[0], 81);
        let mut p = HamiltonianParams::new(1.0, 10.0, 9.5, 1.3).with_fields(7.0, 0.3, 0.02);
        for form in [R3Form::Printed, R3Form::Symmetric] {
            p.r3_form = form;
            let h = build_hamiltonian_real(&p).unwrap();
            for sec in secs {
                let n = sec.dim();
                let mut v = DMatrix::<f64>::zeros(DIM, n);
                for (j, col) in sec.columns.iter().enumerate() {
                    for &(i, a) in col {
                        v[(i, j)] = a;
                    }
                }
                assert!((v.transpose() * &v - DMatrix::identity(n, n)).amax() < 1e-14);
                let hv = &h * &v;
                let block = sec.hamiltonian(&p);
                assert!((&hv - &v * &block).amax() < 1e-11, "sector {} not invariant", sec.singlet_mask);
            }
        }
    }
}
