//! Logical encodings, gate targets, noise models and Haar-averaged gate fidelity.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::evolution::{self, EvolutionResult, IntegratorConfig};
use crate::schedule::FieldSchedule;
use crate::spectral;
use crate::spin::{basis_state, HamiltonianParams, SpinConfig, StateVector, DIM, N_SPINS};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LogicalEncoding {
    /// Product state of each logical basis vector.
    pub states: Vec<SpinConfig>,
    /// Instantaneous level expected to host each logical basis vector at s = 0.
    pub levels: Vec<usize>,
}

impl LogicalEncoding {
    /// |0⟩ = all-up, |1⟩ = all-down.
    pub fn one_qubit() -> Self {
        LogicalEncoding { states: vec![SpinConfig::ALL_UP, SpinConfig::ALL_DOWN], levels: vec![0, 1] }
    }

    /// |00⟩ = all-up, |01⟩ = ↑↑↑↑↓↓↓↓, |10⟩ = ↓↓↓↓↑↑↑↑, |11⟩ = all-down;
    /// energy order |00⟩, |11⟩, |01⟩, |10⟩.
    pub fn two_qubit() -> Self {
        LogicalEncoding {
            states: vec![SpinConfig::ALL_UP, SpinConfig::UP_DOWN, SpinConfig::DOWN_UP, SpinConfig::ALL_DOWN],
            levels: vec![0, 2, 3, 1],
        }
    }

    pub fn dim(&self) -> usize {
        self.states.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateKind {
    H,
    Bell,
}

impl GateKind {
    pub fn name(self) -> &'static str {
        match self {
            GateKind::H => "h",
            GateKind::Bell => "bell",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GateSpec {
    pub kind: GateKind,
    pub encoding: LogicalEncoding,
    /// Column k is the image of logical |k⟩ in the logical basis.
    pub target: DMatrix<Complex64>,
}

fn real_matrix(d: usize, rows: &[f64]) -> DMatrix<Complex64> {
    DMatrix::from_row_slice(d, d, rows).map(|x| Complex64::new(x, 0.0))
}

impl GateSpec {
    /// |0⟩ → (|0⟩+|1⟩)/√2, |1⟩ → −(|0⟩−|1⟩)/√2.
    pub fn h() -> Self {
        let r = std::f64::consts::FRAC_1_SQRT_2;
        GateSpec { kind: GateKind::H, encoding: LogicalEncoding::one_qubit(), target: real_matrix(2, &[r, -r, r, r]) }
    }

    /// Basis order |00⟩, |01⟩, |10⟩, |11⟩.
    pub fn bell() -> Self {
        let r = std::f64::consts::FRAC_1_SQRT_2;
        #[rustfmt::skip]
        let rows = [
            r,   0.0, 0.0, -r,
            0.0, r,   -r,  0.0,
            0.0, r,   r,   0.0,
            r,   0.0, 0.0, r,
        ];
        GateSpec { kind: GateKind::Bell, encoding: LogicalEncoding::two_qubit(), target: real_matrix(4, &rows) }
    }

    pub fn of(kind: GateKind) -> Self {
        match kind {
            GateKind::H => Self::h(),
            GateKind::Bell => Self::bell(),
        }
    }

    pub fn dim(&self) -> usize {
        self.encoding.dim()
    }

    /// Target image of logical |k⟩ as a configuration-space state.
    pub fn target_state(&self, k: usize) -> StateVector {
        let mut v = StateVector::zeros(DIM);
        for (j, c) in self.encoding.states.iter().enumerate() {
            v[c.index()] += self.target[(j, k)];
        }
        v
    }

    pub fn target_states(&self) -> Vec<StateVector> {
        (0..self.dim()).map(|k| self.target_state(k)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct NoiseConfig {
    pub epsilon: f64,
}

/// (1/√8) Σₖ |base with spin k flipped⟩.
pub fn w_state(base: SpinConfig) -> StateVector {
    let amp = Complex64::new(1.0 / (N_SPINS as f64).sqrt(), 0.0);
    let mut v = StateVector::zeros(DIM);
    for ion in 1..=N_SPINS {
        v[base.flip(ion).index()] += amp;
    }
    v
}

/// (|base⟩ + ε·W(base)) / √(1+ε²).
pub fn apply_local_noise(base: SpinConfig, epsilon: f64) -> Result<StateVector> {
    if !(epsilon >= 0.0) || !epsilon.is_finite() {
        return Err(Error::InvalidInput(format!("epsilon must be finite and >= 0, got {epsilon}")));
    }
    let v = (basis_state(base) + w_state(base) * Complex64::new(epsilon, 0.0)) / Complex64::new((1.0 + epsilon * epsilon).sqrt(), 0.0);
    Ok(v)
}

#[derive(Debug, Clone, Serialize)]
pub struct EncodingReport {
    pub overlaps: Vec<f64>,
    pub pass: bool,
}

pub const ENCODING_THRESHOLD: f64 = 0.99;

/// Overlap |⟨encoded_k | E_{level_k}(s=0)⟩| for every logical state.
pub fn verify_encoding(
    encoding: &LogicalEncoding,
    schedule: &FieldSchedule,
    params: &HamiltonianParams,
) -> Result<EncodingReport> {
    let keep = encoding.levels.iter().max().map_or(0, |m| m + 1);
    let snap = spectral::qnn_snapshot(&schedule.params_at(params, 0.0)?, 0.0, keep)?;
    let overlaps: Vec<f64> = encoding
        .states
        .iter()
        .zip(&encoding.levels)
        .map(|(c, &l)| snap.vectors[(c.index(), l)].norm())
        .collect();
    let pass = overlaps.iter().all(|&o| o >= ENCODING_THRESHOLD);
    Ok(EncodingReport { overlaps, pass })
}

pub fn classical_limit(d: usize) -> f64 {
    2.0 / (d as f64 + 1.0)
}

/// (|Tr M|² + Tr M†M) / (d(d+1)).
pub fn gate_fidelity_closed_form(m: &DMatrix<Complex64>) -> Result<f64> {
    let d = m.nrows();
    if m.ncols() != d || !(d == 2 || d == 4) {
        return Err(Error::InvalidInput(format!("logical block must be 2×2 or 4×4, got {}×{}", d, m.ncols())));
    }
    let tr = m.trace().norm_sqr();
    let hs: f64 = m.iter().map(|z| z.norm_sqr()).sum();
    Ok(((tr + hs) / (d * (d + 1)) as f64).clamp(0.0, 1.0))
}

/// M_ij = ⟨target_i | evolved_j⟩.
pub fn logical_block(targets: &[StateVector], evolved: &[&StateVector]) -> DMatrix<Complex64> {
    let d = targets.len();
    DMatrix::from_fn(d, d, |i, j| targets[i].dotc(evolved[j]))
}

/// Normalized vector of i.i.d. standard complex Gaussians.
pub fn haar_state<R: rand::Rng>(d: usize, rng: &mut R) -> DVector<Complex64> {
    let v = DVector::from_fn(d, |_, _| {
        Complex64::new(StandardNormal.sample(&mut *rng), StandardNormal.sample(&mut *rng))
    });
    let n = v.norm();
    v / Complex64::new(n, 0.0)
}

const MC_CHUNK: usize = 1024;

/// Monte-Carlo Haar average of |⟨target(a)|evolved(a)⟩|² with
/// target(a) = Σ aᵢ targetᵢ, evolved(a) = Σ aᵢ evolvedᵢ. Samples are drawn in
/// fixed chunks, each with its own ChaCha stream, so results do not depend on
/// the thread count.
pub fn gate_fidelity_mc(evolved: &[&StateVector], targets: &[StateVector], samples: usize, seed: u64) -> Result<(f64, f64)> {
    let d = targets.len();
    if samples == 0 {
        return Err(Error::InvalidInput("need at least one sample".into()));
    }
    if evolved.len() != d {
        return Err(Error::InvalidInput("evolved basis and targets differ in size".into()));
    }
    let m = logical_block(targets, evolved);
    let chunks = samples.div_ceil(MC_CHUNK);
    let sums: Vec<(f64, f64)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let n = MC_CHUNK.min(samples - c * MC_CHUNK);
            let (mut s1, mut s2) = (0.0, 0.0);
            for _ in 0..n {
                let a = haar_state(d, &mut rng);
                let f = a.dotc(&(&m * &a)).norm_sqr();
                s1 += f;
                s2 += f * f;
            }
            (s1, s2)
        })
        .collect();
    let (s1, s2) = sums.iter().fold((0.0, 0.0), |acc, x| (acc.0 + x.0, acc.1 + x.1));
    let n = samples as f64;
    let mean = s1 / n;
    let var = if samples > 1 { ((s2 / n - mean * mean) * n / (n - 1.0)).max(0.0) } else { 0.0 };
    Ok((mean, (var / n).sqrt()))
}

#[derive(Debug, Clone, Serialize)]
pub struct FidelityPoint {
    pub s: f64,
    pub fidelity: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct FidelityTrace {
    pub gate: GateKind,
    pub r2: f64,
    pub r3: f64,
    pub epsilon: f64,
    pub t_total: f64,
    pub classical_limit: f64,
    pub points: Vec<FidelityPoint>,
    pub peak_fidelity: f64,
    pub peak_s: f64,
    pub steps: usize,
    pub convergence: f64,
}

impl FidelityTrace {
    pub fn fidelity_at(&self, s: f64) -> Option<f64> {
        self.points.iter().find(|p| (p.s - s).abs() < 1e-12).map(|p| p.fidelity)
    }
}

/// A gate run together with the evolved basis map it was computed from.
#[derive(Debug, Clone)]
pub struct GateExperiment {
    pub trace: FidelityTrace,
    pub targets: Vec<StateVector>,
    pub evolved: Vec<EvolutionResult>,
}

impl GateExperiment {
    /// Evolved basis states at sample index k.
    pub fn evolved_at(&self, k: usize) -> Vec<&StateVector> {
        self.evolved.iter().map(|r| &r.samples[k].1).collect()
    }

    pub fn block_at(&self, k: usize) -> DMatrix<Complex64> {
        logical_block(&self.targets, &self.evolved_at(k))
    }
}

fn peak(points: &[FidelityPoint]) -> (f64, f64) {
    points.iter().fold((f64::NEG_INFINITY, 0.0), |(f, s), p| if p.fidelity > f { (p.fidelity, p.s) } else { (f, s) })
}

/// Evolves each (noise-perturbed) encoded basis state once and records f(s)
/// against the fixed target at every sample point.
pub fn run_gate_experiment(
    gate: &GateSpec,
    schedule: &FieldSchedule,
    params: &HamiltonianParams,
    noise: &NoiseConfig,
    t_total: f64,
    samples: &[f64],
    integrator: &IntegratorConfig,
) -> Result<GateExperiment> {
    let mut v = run_gate_experiments(gate, schedule, params, &[noise.epsilon], t_total, samples, integrator)?;
    Ok(v.swap_remove(0))
}

/// One experiment per local-noise level from a single evolution: the
/// encoded states and their W admixtures are evolved once, and each noisy
/// input (|c⟩ + ε·W)/√(1+ε²) is recombined by linearity.
pub fn run_gate_experiments(
    gate: &GateSpec,
    schedule: &FieldSchedule,
    params: &HamiltonianParams,
    epsilons: &[f64],
    t_total: f64,
    samples: &[f64],
    integrator: &IntegratorConfig,
) -> Result<Vec<GateExperiment>> {
    if epsilons.is_empty() {
        return Err(Error::InvalidInput("no noise levels given".into()));
    }
    for &eps in epsilons {
        apply_local_noise(SpinConfig::ALL_UP, eps)?;
    }
    let report = verify_encoding(&gate.encoding, schedule, params)?;
    if !report.pass {
        return Err(Error::EncodingFailed(format!(
            "{} encoding overlaps at s=0: {:?} (need >= {})",
            gate.kind.name(),
            report.overlaps,
            ENCODING_THRESHOLD
        )));
    }
    let d = gate.dim();
    let noisy = epsilons.iter().any(|&e| e != 0.0);
    let mut inputs: Vec<StateVector> = gate.encoding.states.iter().map(|&c| basis_state(c)).collect();
    if noisy {
        // W(c) is normalized and orthogonal to |c⟩.
        inputs.extend(gate.encoding.states.iter().map(|&c| w_state(c)));
    }
    let cfg = IntegratorConfig { samples: samples.to_vec(), ..integrator.clone() };
    let raw = evolution::evolve_many(&inputs, schedule, params, t_total, &cfg)?;
    let targets = gate.target_states();
    epsilons
        .iter()
        .map(|&eps| {
            let evolved: Vec<EvolutionResult> = if eps == 0.0 {
                raw[..d].to_vec()
            } else {
                let norm = (1.0 + eps * eps).sqrt();
                let (a, b) = (Complex64::new(1.0 / norm, 0.0), Complex64::new(eps / norm, 0.0));
                (0..d)
                    .map(|k| EvolutionResult {
                        samples: raw[k]
                            .samples
                            .iter()
                            .zip(&raw[d + k].samples)
                            .map(|((s, u), (_, w))| (*s, u * a + w * b))
                            .collect(),
                        ..raw[k].clone()
                    })
                    .collect()
            };
            experiment(gate, params, eps, t_total, targets.clone(), evolved)
        })
        .collect()
}

fn experiment(
    gate: &GateSpec,
    params: &HamiltonianParams,
    epsilon: f64,
    t_total: f64,
    targets: Vec<StateVector>,
    evolved: Vec<EvolutionResult>,
) -> Result<GateExperiment> {
    let n_samples = evolved[0].samples.len();
    let points = (0..n_samples)
        .map(|k| {
            let ev: Vec<&StateVector> = evolved.iter().map(|r| &r.samples[k].1).collect();
            let f = gate_fidelity_closed_form(&logical_block(&targets, &ev))?;
            Ok(FidelityPoint { s: evolved[0].samples[k].0, fidelity: f })
        })
        .collect::<Result<Vec<_>>>()?;
    let (peak_fidelity, peak_s) = peak(&points);
    let trace = FidelityTrace {
        gate: gate.kind,
        r2: params.r2,
        r3: params.r3,
        epsilon,
        t_total,
        classical_limit: classical_limit(gate.dim()),
        points,
        peak_fidelity,
        peak_s,
        steps: evolved[0].steps,
        convergence: evolved[0].distance,
    };
    Ok(GateExperiment { trace, targets, evolved })
}
