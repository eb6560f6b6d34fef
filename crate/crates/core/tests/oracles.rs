//! Independent reference values: Haar averages, solid-angle Berry phases,
//! quadrature convergence and linearity of the evolution.

use adiaqnn::evolution::{self, berry_phase_of_trace, dynamical_phase_of_trace, IntegratorConfig};
use adiaqnn::gates::{self, gate_fidelity_closed_form, gate_fidelity_mc, GateSpec, NoiseConfig};
use adiaqnn::schedule::{FieldSchedule, Node};
use adiaqnn::spectral::{SpectrumSnapshot, SpectrumTrace};
use adiaqnn::spin::{basis_state, SpinConfig, StateVector, TrapPreset, DIM};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// Plain Monte-Carlo Haar average of |⟨Ua|Ma⟩|², written out
/// without the library's sampler.
fn brute_haar(m: &DMatrix<Complex64>, u: &DMatrix<Complex64>, n: usize, seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gauss = || {
        // Box–Muller
        let (u1, u2): (f64, f64) = (rng.gen::<f64>().max(1e-300), rng.gen());
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    };
    let (mut s1, mut s2) = (0.0, 0.0);
    for _ in 0..n {
        let v: Vec<Complex64> = (0..m.nrows()).map(|_| c(gauss(), gauss())).collect();
        let a = DVector::from_vec(v).normalize();
        let f = (u * &a).dotc(&(m * &a)).norm_sqr();
        s1 += f;
        s2 += f * f;
    }
    let mean = s1 / n as f64;
    (mean, ((s2 / n as f64 - mean * mean) / n as f64).sqrt())
}

#[test]
fn phase_flip_haar_average_is_one_third() {
    let m = DMatrix::from_diagonal(&DVector::from_vec(vec![c(1.0, 0.0), c(-1.0, 0.0)]));
    let id = DMatrix::<Complex64>::identity(2, 2);
    assert!((gate_fidelity_closed_form(&m).unwrap() - 1.0 / 3.0).abs() < 1e-15);
    let (f, se) = brute_haar(&m, &id, 20_000, 7);
    assert!((f - 1.0 / 3.0).abs() < 3.0 * se, "{f} ± {se}");

    // Same map through the library estimator on configuration-space states.
    let targets = vec![basis_state(SpinConfig::ALL_UP), basis_state(SpinConfig::ALL_DOWN)];
    let flipped = [targets[0].clone(), -targets[1].clone()];
    let refs: Vec<&StateVector> = flipped.iter().collect();
    let (f, se) = gate_fidelity_mc(&refs, &targets, 10_000, 11).unwrap();
    assert!((f - 1.0 / 3.0).abs() < 3.0 * se, "{f} ± {se}");
}

#[test]
fn closed_form_matches_brute_haar_for_random_maps() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for d in [2usize, 4] {
        let m = DMatrix::from_fn(d, d, |_, _| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))) * c(0.5, 0.0);
        let id = DMatrix::<Complex64>::identity(d, d);
        let exact = gate_fidelity_closed_form(&m).unwrap();
        let (f, se) = brute_haar(&m, &id, 20_000, 5);
        assert!((f - exact).abs() < 3.0 * se, "d={d}: {f} ± {se} vs {exact}");
    }
}

/// |n(φ)⟩ = (cos θ/2, e^{iφ} sin θ/2): the aligned state of a spin-½ in a
/// field on a cone of half-angle θ.
fn cone_trace(theta: f64, n: usize) -> SpectrumTrace {
    let snapshots = (0..=n)
        .map(|k| {
            let s = k as f64 / n as f64;
            let phi = 2.0 * std::f64::consts::PI * s;
            let v = DMatrix::from_column_slice(
                2,
                1,
                &[c((theta / 2.0).cos(), 0.0), Complex64::from_polar((theta / 2.0).sin(), phi)],
            );
            SpectrumSnapshot { s, energies: vec![-1.0, 1.0], vectors: v }
        })
        .collect();
    SpectrumTrace { snapshots }
}

#[test]
fn berry_phase_is_minus_half_the_solid_angle() {
    for theta in [0.3, 1.0, 1.4] {
        let omega = 2.0 * std::f64::consts::PI * (1.0 - f64::cos(theta));
        let phi = berry_phase_of_trace(&cone_trace(theta, 2000), 0, true);
        assert!((phi + omega / 2.0).abs() < 1e-4, "θ={theta}: {phi} vs {}", -omega / 2.0);
    }
}

#[test]
fn berry_phase_is_gauge_invariant_on_a_closed_loop() {
    let mut tr = cone_trace(0.8, 500);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let n = tr.len();
    for snap in tr.snapshots.iter_mut().take(n - 1).skip(1) {
        let g = Complex64::from_polar(1.0, rng.gen_range(0.0..6.28));
        snap.vectors *= g;
    }
    let a = berry_phase_of_trace(&cone_trace(0.8, 500), 0, true);
    assert!((berry_phase_of_trace(&tr, 0, true) - a).abs() < 1e-12);
}

#[test]
fn trapezoid_dynamical_phase_converges_at_second_order() {
    // E(s) = −cos(πs/2): −T∫E ds = 2T/π exactly.
    let t = 3.0;
    let exact = 2.0 * t / std::f64::consts::PI;
    let err = |n: usize| {
        let snapshots = (0..=n)
            .map(|k| {
                let s = k as f64 / n as f64;
                SpectrumSnapshot {
                    s,
                    energies: vec![-(std::f64::consts::FRAC_PI_2 * s).cos()],
                    vectors: DMatrix::zeros(1, 0),
                }
            })
            .collect();
        (dynamical_phase_of_trace(&SpectrumTrace { snapshots }, 0, t) - exact).abs()
    };
    let (e1, e2, e3) = (err(16), err(32), err(64));
    for r in [e1 / e2, e2 / e3] {
        assert!((r - 4.0).abs() < 0.05, "error ratio {r}");
    }
}

#[test]
fn evolution_is_linear() {
    let sch = FieldSchedule::new(vec![Node::new(0.0, 0.0, 1e5), Node::new(1.0, 6.0, 2e4)]).unwrap();
    let p = TrapPreset::fountain().params();
    let cfg = IntegratorConfig { samples: vec![0.5], ..Default::default() };
    let up = basis_state(SpinConfig::ALL_UP);
    let down = gates::apply_local_noise(SpinConfig::ALL_DOWN, 0.3).unwrap();
    let (a, b) = (c(0.6, 0.3), c(-0.2, (1.0f64 - 0.45 - 0.04).sqrt()));
    // |a|² + |b|² = 1 and up ⟂ down.
    let mix = &up * a + &down * b;
    assert!((mix.norm() - 1.0).abs() < 1e-12 && mix.len() == DIM);
    let out = evolution::evolve_many(&[up, down, mix], &sch, &p, 40.0, &cfg).unwrap();
    let lin = out[0].final_state() * a + out[1].final_state() * b;
    let direct = out[2].final_state();
    assert!((direct - &lin).norm() < 1e-9, "{}", (direct - &lin).norm());
}

#[test]
fn zero_time_h_gate_sits_on_the_classical_line() {
    let sch = FieldSchedule::new(vec![Node::new(0.0, 0.0, 1e5), Node::new(1.0, 30.0, 0.0)]).unwrap();
    let p = TrapPreset::fountain().params();
    let x = gates::run_gate_experiment(&GateSpec::h(), &sch, &p, &NoiseConfig::default(), 0.0, &[0.3, 0.7], &IntegratorConfig::default())
        .unwrap();
    for pt in &x.trace.points {
        assert!((pt.fidelity - 2.0 / 3.0).abs() < 1e-12);
    }
}
