use adiaqnn::evolution::{self, IntegratorConfig};
use adiaqnn::gates::{gate_fidelity_closed_form, gate_fidelity_mc};
use adiaqnn::output::fmt_f64;
use adiaqnn::schedule::{FieldSchedule, Node};
use adiaqnn::spin::{
    basis_state, build_hamiltonian, build_hamiltonian_real, diagonal_energy, HamiltonianParams, R3Form, SpinConfig,
    StateVector, DIM,
};
use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use proptest::prelude::*;

fn params() -> impl Strategy<Value = HamiltonianParams> {
    (0.1f64..3.0, 0.0f64..20.0, 0.0f64..20.0, 0.0f64..10.0, -5.0f64..5.0, -5.0f64..5.0, any::<bool>()).prop_map(
        |(l, r1, r2, r3, b1, b2, sym)| {
            let mut p = HamiltonianParams::new(l, r1, r2, r3).with_fields(0.0, b1, b2);
            p.r3_form = if sym { R3Form::Symmetric } else { R3Form::Printed };
            p
        },
    )
}

fn schedule() -> impl Strategy<Value = FieldSchedule> {
    fields(40.0, 2e5)
}

fn fields(a: f64, b: f64) -> impl Strategy<Value = FieldSchedule> {
    (prop::collection::vec((0.01f64..1.0, -a..a, 0.0..b), 0..4), -a..a, 0.0..b, -a..a, 0.0..b)
        .prop_map(|(mid, a0, b0, a1, b1)| {
            let mut s: Vec<f64> = mid.iter().map(|x| x.0).collect();
            s.sort_by(f64::total_cmp);
            s.dedup_by(|a, b| (*a - *b).abs() < 1e-3);
            let mut nodes = vec![Node::new(0.0, a0, b0)];
            for (k, x) in s.iter().enumerate() {
                if *x < 0.999 {
                    nodes.push(Node::new(*x, mid[k].1, mid[k].2));
                }
            }
            nodes.push(Node::new(1.0, a1, b1));
            FieldSchedule::new(nodes).unwrap()
        })
}

fn state(d: usize) -> impl Strategy<Value = Vec<Complex64>> {
    prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), d).prop_map(|v| v.into_iter().map(|(a, b)| Complex64::new(a, b)).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn zero_field_spectrum_is_the_diagonal(p in params()) {
        let h = build_hamiltonian_real(&p).unwrap();
        let mut e: Vec<f64> = SymmetricEigen::new(h.clone()).eigenvalues.iter().copied().collect();
        let mut d: Vec<f64> = SpinConfig::all().map(|c| diagonal_energy(c, &p)).collect();
        e.sort_by(f64::total_cmp);
        d.sort_by(f64::total_cmp);
        let scale = h.amax().max(1.0);
        for (x, y) in e.iter().zip(&d) {
            prop_assert!((x - y).abs() <= 1e-10 * scale);
        }
    }

    #[test]
    fn hamiltonian_is_real_symmetric(p in params(), a in -50.0f64..50.0) {
        let q = p.with_fields(a, p.b1, p.b2);
        let h = build_hamiltonian(&q).unwrap();
        prop_assert!(h.hermiticity_defect() <= 1e-14);
        let r = build_hamiltonian_real(&q).unwrap();
        prop_assert!((&r - r.transpose()).amax() == 0.0);
    }

    #[test]
    fn fields_are_linear_on_segments(sch in schedule(), k in 0usize..8, t in 0.0f64..1.0) {
        let k = k % (sch.nodes.len() - 1);
        let (n0, n1) = (sch.nodes[k], sch.nodes[k + 1]);
        let s = n0.s + t * (n1.s - n0.s);
        let (f0, f1) = (sch.fields_at(n0.s).unwrap(), sch.fields_at(n1.s).unwrap());
        let f = sch.fields_at(s).unwrap();
        let tol = 1e-12 * (1.0 + n0.a.abs() + n1.a.abs() + n0.b.abs() + n1.b.abs());
        prop_assert!((f.a - (f0.a + t * (f1.a - f0.a))).abs() <= tol);
        let mid = sch.fields_at(0.5 * (n0.s + n1.s)).unwrap();
        prop_assert!((mid.a - 0.5 * (n0.a + n1.a)).abs() <= tol);
        prop_assert!((mid.b1 - sch.ratio1 * 0.5 * (n0.b + n1.b)).abs() <= tol * sch.ratio1 + 1e-15);
        if f.b2 != 0.0 {
            prop_assert!((f.b1 / f.b2 - sch.ratio1 / sch.ratio2).abs() <= 1e-9 * sch.ratio1 / sch.ratio2);
        }
    }

    #[test]
    fn hamiltonian_is_continuous_in_s(sch in schedule(), s in 0.0f64..0.999) {
        let p = HamiltonianParams::new(1.0, 10.0, 9.5, 0.0);
        let h = |x: f64| build_hamiltonian_real(&sch.params_at(&p, x).unwrap()).unwrap();
        // Largest segment slope in Frobenius norm bounds every increment.
        let lip = sch
            .nodes
            .windows(2)
            .map(|w| (h(w[1].s) - h(w[0].s)).norm() / (w[1].s - w[0].s))
            .fold(0.0, f64::max);
        for d in [1e-3, 1e-6, 1e-9] {
            prop_assert!((h(s + d) - h(s)).norm() <= lip * d * (1.0 + 1e-6) + 1e-9);
        }
    }

    #[test]
    fn fidelity_is_bounded_and_phase_invariant(v in state(16), phase in 0.0f64..6.3) {
        let m = DMatrix::from_row_slice(4, 4, &v);
        let m = &m / Complex64::new(m.norm().max(1e-9) / 2.0, 0.0);
        let f = gate_fidelity_closed_form(&m).unwrap();
        prop_assert!((0.0..=1.0 + 1e-15).contains(&f));
        let g = gate_fidelity_closed_form(&(&m * Complex64::from_polar(1.0, phase))).unwrap();
        prop_assert!((f - g).abs() <= 1e-14);
    }

    #[test]
    fn csv_numbers_round_trip(x in any::<f64>().prop_filter("finite", |x| x.is_finite())) {
        prop_assert_eq!(fmt_f64(x).parse::<f64>().unwrap().to_bits(), x.to_bits());
    }
}

proptest! {
    // Fixed seed: the 3σ check is statistical and must not flake.
    #![proptest_config(ProptestConfig { cases: 8, rng_seed: proptest::test_runner::RngSeed::Fixed(7), ..ProptestConfig::default() })]

    #[test]
    fn closed_form_and_monte_carlo_agree(v in state(4), w in state(4), seed in any::<u64>()) {
        // Evolved images as arbitrary (sub-normalized) combinations of the
        // two logical configuration states.
        let up = basis_state(SpinConfig::ALL_UP);
        let dn = basis_state(SpinConfig::ALL_DOWN);
        let n = (v.iter().chain(&w).map(|z| z.norm_sqr()).sum::<f64>()).sqrt().max(1e-9);
        let e0: StateVector = &up * (v[0] / n) + &dn * (v[1] / n);
        let e1: StateVector = &up * (w[0] / n) + &dn * (w[1] / n);
        let targets = vec![&up * Complex64::new(0.6, 0.0) + &dn * Complex64::new(0.8, 0.0), &up * Complex64::new(-0.8, 0.0) + &dn * Complex64::new(0.6, 0.0)];
        let m = DMatrix::from_fn(2, 2, |i, j| targets[i].dotc(if j == 0 { &e0 } else { &e1 }));
        let exact = gate_fidelity_closed_form(&m).unwrap();
        let (f, se) = gate_fidelity_mc(&[&e0, &e1], &targets, 10_000, seed).unwrap();
        prop_assert!((f - exact).abs() <= 3.0 * se + 1e-12, "{} vs {} ± {}", exact, f, se);
    }

    #[test]
    fn short_evolutions_stay_normalized(sch in fields(10.0, 50.0), t in 0.0f64..20.0, k in 0usize..256) {
        let p = HamiltonianParams::new(1.0, 10.0, 9.5, 1.0);
        let psi = basis_state(SpinConfig::from_index(k).unwrap());
        // Unitarity does not depend on convergence; keep the step search cheap.
        let cfg = IntegratorConfig { tol: 1e-2, monitor_levels: 4, samples: vec![0.25, 0.5, 0.75], ..Default::default() };
        let r = evolution::evolve(&psi, &sch, &p, t, &cfg).unwrap();
        for (_, v) in &r.samples {
            prop_assert!((v.norm() - 1.0).abs() <= 1e-9);
            prop_assert_eq!(v.len(), DIM);
        }
    }
}
