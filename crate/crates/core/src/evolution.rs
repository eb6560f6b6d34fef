//! Scaled-time Schrödinger integration, i d/ds |ψ⟩ = T H(s) |ψ⟩ (ħ = 1),
//! and the dynamical/Berry phases of instantaneous eigenstates.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::schedule::FieldSchedule;
use crate::spectral::{self, SpectrumTrace};
use crate::spin::{self, HamiltonianParams, StateVector, DIM};
use crate::{Error, Result};

/// Stepping scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Coefficients in the instantaneous eigenbasis; dynamical phases are
    /// integrated exactly along each level and only the small
    /// nonadiabatic couplings are stepped. Stays accurate when T·ΔE·δ ≫ 1.
    #[default]
    AdiabaticFrame,
    /// exp(−i·T·δ·H(s+δ/2)) per step.
    Midpoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegratorConfig {
    pub method: Method,
    /// Steps per base cell at the first refinement level.
    pub initial_steps: usize,
    /// Steps are multiplied by this factor between refinements.
    pub refine_factor: usize,
    /// Convergence tolerance on the final-state distance between refinements.
    pub tol: f64,
    /// Give up once a refinement would exceed this many steps.
    pub max_steps: usize,
    /// Largest eigenbasis rotation of a monitored level across one base cell.
    pub theta: f64,
    /// Largest base cell.
    pub h_max: f64,
    /// Base cells are never bisected below this length.
    pub h_min: f64,
    /// Lowest levels of each sector whose rotation sets the base cells
    /// (default: all of them).
    pub monitor_levels: usize,
    /// Scaled times at which the state is recorded (s = 0 and 1 are always added).
    pub samples: Vec<f64>,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig {
            method: Method::AdiabaticFrame,
            initial_steps: 1,
            refine_factor: 2,
            tol: 1e-3,
            max_steps: 2_000_000,
            theta: 0.05,
            h_max: 0.01,
            h_min: 1e-7,
            monitor_levels: 81,
            samples: Vec::new(),
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::InvalidInput("integrator tol must be > 0".into()));
        }
        if self.initial_steps < 1 {
            return Err(Error::InvalidInput("integrator initial_steps must be >= 1".into()));
        }
        if self.refine_factor < 2 {
            return Err(Error::InvalidInput("integrator refine_factor must be >= 2".into()));
        }
        if !(self.theta > 0.0) || !(self.h_max > 0.0) || !(self.h_min > 0.0) || self.monitor_levels == 0 {
            return Err(Error::InvalidInput("integrator theta, h_max, h_min, monitor_levels must be positive".into()));
        }
        if self.samples.iter().any(|s| !(0.0..=1.0).contains(s)) {
            return Err(Error::InvalidInput("sample points must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct EvolutionResult {
    pub samples: Vec<(f64, StateVector)>,
    /// Total time T in ħ/λ.
    pub t_total: f64,
    pub steps: usize,
    /// Final-state distance between the last two refinements.
    pub distance: f64,
}

impl EvolutionResult {
    pub fn final_state(&self) -> &StateVector {
        &self.samples.last().expect("at least one sample").1
    }

    pub fn state_at(&self, s: f64) -> Option<&StateVector> {
        self.samples.iter().find(|(x, _)| (x - s).abs() < 1e-12).map(|(_, v)| v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PhaseRecord {
    pub level: usize,
    pub dynamical: f64,
    pub berry: f64,
}

// ---------------------------------------------------------------------------
// Instantaneous eigenframes of one sector block.

#[derive(Debug, Clone)]
struct Frame {
    e: Vec<f64>,
    v: DMatrix<f64>,
}

fn frame_at(sector: usize, params: &HamiltonianParams) -> Frame {
    let eig = SymmetricEigen::new(spin::sectors()[sector].hamiltonian(params));
    let n = eig.eigenvalues.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    Frame {
        e: idx.iter().map(|&i| eig.eigenvalues[i]).collect(),
        v: DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, idx[c])]),
    }
}

/// Relabels the (sorted) `next` frame so each vector continues a column of
/// `prev`: degenerate clusters are rotated onto their predecessors
/// (orthogonal Procrustes), the rest matched by largest overlap, signs fixed
/// so that the diagonal overlaps are positive.
///
/// Returns the relabelled frame, O = Vnextᵀ·Vprev in the new labels, and
/// the label given to each sorted index of `next`.
fn align(prev: &Frame, next: Frame) -> (Frame, DMatrix<f64>, Vec<usize>) {
    let n = next.e.len();
    let Frame { e, mut v } = next;
    let mut o = v.tr_mul(&prev.v);
    let scale = e.iter().fold(1.0f64, |m, x| m.max(x.abs()));
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && e[j] - e[j - 1] < 1e-9 * scale {
            j += 1;
        }
        let k = j - i;
        if k > 1 {
            let mut weight: Vec<(usize, f64)> =
                (0..n).map(|c| (c, (i..j).map(|r| o[(r, c)] * o[(r, c)]).sum::<f64>())).collect();
            weight.sort_by(|a, b| b.1.total_cmp(&a.1));
            let mut cols: Vec<usize> = weight[..k].iter().map(|w| w.0).collect();
            cols.sort_unstable();
            let block = DMatrix::from_fn(k, k, |r, c| o[(i + r, cols[c])]);
            let svd = block.svd(true, true);
            let r = svd.u.unwrap() * svd.v_t.unwrap();
            let vc = v.columns(i, k) * &r;
            v.columns_mut(i, k).copy_from(&vc);
            let oc = r.tr_mul(&o.rows(i, k));
            o.rows_mut(i, k).copy_from(&oc);
        }
        i = j;
    }

    // Row-wise argmax is a permutation in all but pathological steps.
    let mut label: Vec<usize> =
        (0..n).map(|r| (0..n).max_by(|&a, &b| o[(r, a)].abs().total_cmp(&o[(r, b)].abs())).unwrap()).collect();
    let mut seen = vec![false; n];
    if !label.iter().all(|&l| !std::mem::replace(&mut seen[l], true)) {
        let mut entries: Vec<(usize, usize)> = (0..n).flat_map(|r| (0..n).map(move |c| (r, c))).collect();
        entries.sort_by(|a, b| o[*b].abs().total_cmp(&o[*a].abs()));
        let (mut row_done, mut col_done) = (vec![false; n], vec![false; n]);
        for (r, c) in entries {
            if !row_done[r] && !col_done[c] {
                label[r] = c;
                row_done[r] = true;
                col_done[c] = true;
            }
        }
    }

    let mut fe = vec![0.0; n];
    let mut fv = DMatrix::<f64>::zeros(n, n);
    let mut fo = DMatrix::<f64>::zeros(n, n);
    for r in 0..n {
        let l = label[r];
        let sign = if o[(r, l)] < 0.0 { -1.0 } else { 1.0 };
        fe[l] = e[r];
        fv.set_column(l, &(v.column(r) * sign));
        fo.set_row(l, &(o.row(r) * sign));
    }
    (Frame { e: fe, v: fv }, fo, label)
}

/// Base partition of [0,1]. Breakpoints include the schedule nodes and
/// `extra`; each base cell is bisected until δ ≤ h_max and none of the
/// monitored eigenvectors rotates by more than `theta` (largest
/// off-diagonal overlap) towards a level it dephases from within the cell,
/// or until δ ≤ h_min.
///
/// A cell across which two monitored levels swap energy order contains a
/// whole avoided crossing. It is bisected until the crossing is resolved or
/// it is too narrow to matter at this T: once δ ≤ 0.03·√(2/(π·T·v)), with v
/// the rate at which the pair's splitting changes, any gap hidden inside
/// the cell has Landau–Zener exponent π·T·g²/(2v) < 10⁻³, so following the
/// levels diabatically is correct.
pub fn base_partition(
    schedule: &FieldSchedule,
    params: &HamiltonianParams,
    t_total: f64,
    cfg: &IntegratorConfig,
    extra: &[f64],
    sector_ids: &[usize],
) -> Result<Vec<f64>> {
    let mut pts: Vec<f64> = schedule.node_positions();
    pts.extend(extra.iter().copied());
    pts.sort_by(f64::total_cmp);
    pts.dedup_by(|a, b| (*a - *b).abs() < 1e-14);
    let frames = |s: f64| -> Result<Vec<Frame>> {
        let p = schedule.params_at(params, s)?;
        Ok(sector_ids.iter().map(|&k| frame_at(k, &p)).collect())
    };
    let fine = |fa: &[Frame], fb: &[Frame], len: f64| -> bool {
        fa.iter().zip(fb).all(|(a, b)| {
            let l = cfg.monitor_levels.min(a.e.len());
            let (_, o, label) = align(a, b.clone());
            for (r, &c) in label.iter().enumerate() {
                if r != c && (r < l || c < l) {
                    let v = ((a.e[c] - a.e[r]).abs() + (b.e[r] - b.e[c]).abs()) / len;
                    if !(len * len * t_total * v * std::f64::consts::PI <= 2.0 * 0.03 * 0.03) {
                        return false;
                    }
                }
            }
            // Rotations between levels whose relative phase barely moves
            // across the cell are reproduced exactly by the sudden overlap.
            (0..l).all(|c| {
                (0..o.nrows()).all(|r| {
                    r == c || o[(r, c)].abs() <= cfg.theta || t_total * len * (a.e[r] - a.e[c]).abs() <= 0.1
                })
            })
        })
    };

    let mut out = vec![pts[0]];
    let mut fa = frames(pts[0])?;
    for w in pts.windows(2) {
        let fb = frames(w[1])?;
        // Depth-first bisection; the stack holds right halves still to do.
        let mut stack = vec![(w[1], fb.clone())];
        let mut a = w[0];
        while let Some((b, fb)) = stack.pop() {
            let len = b - a;
            if len <= cfg.h_min || (len <= cfg.h_max && fine(&fa, &fb, len)) {
                out.push(b);
                a = b;
                fa = fb;
            } else {
                let m = 0.5 * (a + b);
                let fm = frames(m)?;
                stack.push((b, fb));
                stack.push((m, fm));
            }
        }
        fa = fb;
    }
    Ok(out)
}

fn supported_sectors(states: &[StateVector]) -> Vec<usize> {
    spin::sectors()
        .iter()
        .enumerate()
        .filter(|(_, sec)| states.iter().any(|psi| sec.project(psi).iter().any(|c| c.norm_sqr() > 0.0)))
        .map(|(k, _)| k)
        .collect()
}

fn refined(cells: &[f64], per_cell: usize) -> Vec<f64> {
    let mut g = Vec::with_capacity((cells.len() - 1) * per_cell + 1);
    g.push(cells[0]);
    for w in cells.windows(2) {
        let h = (w[1] - w[0]) / per_cell as f64;
        for k in 1..per_cell {
            g.push(w[0] + k as f64 * h);
        }
        g.push(w[1]);
    }
    g
}

type Trajectories = Vec<Vec<(f64, StateVector)>>;

fn record_into(out: &mut Trajectories, s: f64, states: Vec<StateVector>) {
    for (c, v) in states.into_iter().enumerate() {
        out[c].push((s, v));
    }
}

fn is_sample(sample_set: &[f64], s: f64) -> bool {
    sample_set.iter().any(|x| (x - s).abs() < 1e-12)
}

// ---------------------------------------------------------------------------
// Midpoint exponential.

/// Per-sector state coefficients, stored as real and imaginary parts
/// (dim × n_states each).
struct SectorState {
    sector: usize,
    re: DMatrix<f64>,
    im: DMatrix<f64>,
}

fn split_into_sectors(states: &[StateVector], sector_ids: &[usize]) -> Vec<SectorState> {
    sector_ids
        .iter()
        .map(|&k| {
            let sec = &spin::sectors()[k];
            let n = sec.dim();
            let mut re = DMatrix::<f64>::zeros(n, states.len());
            let mut im = DMatrix::<f64>::zeros(n, states.len());
            for (c, psi) in states.iter().enumerate() {
                let p = sec.project(psi);
                for j in 0..n {
                    re[(j, c)] = p[j].re;
                    im[(j, c)] = p[j].im;
                }
            }
            SectorState { sector: k, re, im }
        })
        .collect()
}

fn assemble(parts: &[SectorState], n_states: usize) -> Vec<StateVector> {
    (0..n_states)
        .map(|c| {
            let mut v = StateVector::zeros(DIM);
            for p in parts {
                let coeffs = nalgebra::DVector::from_iterator(
                    p.re.nrows(),
                    (0..p.re.nrows()).map(|j| Complex64::new(p.re[(j, c)], p.im[(j, c)])),
                );
                spin::sectors()[p.sector].embed_into(&coeffs, &mut v);
            }
            v
        })
        .collect()
}

fn midpoint_step(parts: &mut [SectorState], params: &HamiltonianParams, t_delta: f64) {
    for p in parts.iter_mut() {
        let h = spin::sectors()[p.sector].hamiltonian(params);
        let eig = SymmetricEigen::new(h);
        let v = &eig.eigenvectors;
        let yr = v.tr_mul(&p.re);
        let yi = v.tr_mul(&p.im);
        let mut zr = yr.clone();
        let mut zi = yi.clone();
        for (j, e) in eig.eigenvalues.iter().enumerate() {
            let (sn, cs) = (-t_delta * e).sin_cos();
            for c in 0..yr.ncols() {
                let (a, b) = (yr[(j, c)], yi[(j, c)]);
                zr[(j, c)] = cs * a - sn * b;
                zi[(j, c)] = sn * a + cs * b;
            }
        }
        p.re = v * zr;
        p.im = v * zi;
    }
}

fn run_midpoint(
    states: &[StateVector],
    sector_ids: &[usize],
    schedule: &FieldSchedule,
    params: &HamiltonianParams,
    t_total: f64,
    grid: &[f64],
    sample_set: &[f64],
) -> Result<Trajectories> {
    let mut parts = split_into_sectors(states, sector_ids);
    let mut out: Trajectories = vec![Vec::new(); states.len()];
    record_into(&mut out, grid[0], assemble(&parts, states.len()));
    for w in grid.windows(2) {
        let p = schedule.params_at(params, 0.5 * (w[0] + w[1]))?;
        midpoint_step(&mut parts, &p, t_total * (w[1] - w[0]));
        if is_sample(sample_set, w[1]) {
            record_into(&mut out, w[1], assemble(&parts, states.len()));
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Adiabatic-frame stepping.
//
// ψ = Σₙ bₙ e^{−iTθₙ} |n(s)⟩ with θₙ = ∫Eₙ ds. Across a cell [a,b] the
// coefficients change only through the nonadiabatic coupling ⟨m|∂n⟩δ,
// taken as the Cayley generator X of O = V(b)ᵀV(a) (X ≈ (O − Oᵀ)/2 for
// small rotations), weighted by the cell average of the phase
// factor e^{iT(θₘ−θₙ)}: its value at the cell midpoint times
// sinc(T·ΔEₘₙ·δ/2). The step is the Cayley transform of that
// anti-Hermitian generator, so norms are preserved exactly; the phases use
// the end-corrected trapezoid rule with Hellmann–Feynman slopes.

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-8 {
        1.0
    } else {
        x.sin() / x
    }
}

/// ⟨n|H'|n⟩ for every column of the frame.
fn slopes(frame: &Frame, dh: &DMatrix<f64>) -> Vec<f64> {
    let hv = dh * &frame.v;
    (0..frame.e.len()).map(|n| frame.v.column(n).dot(&hv.column(n))).collect()
}

/// X = 2(O + I)⁻¹(O − I): the antisymmetric generator whose Cayley
/// transform is exactly the orthogonal overlap O, so the T → 0 limit
/// reproduces the sudden projection onto the new basis.
fn cayley_log(o: &DMatrix<f64>) -> DMatrix<f64> {
    let n = o.nrows();
    let id = DMatrix::<f64>::identity(n, n);
    let x = (o + &id).lu().solve(&((o - &id) * 2.0)).expect("aligned overlap has no eigenvalue −1");
    // Antisymmetrize away the rounding.
    (&x - x.transpose()) * 0.5
}

/// x = (I − Ω/2)⁻¹(I + Ω/2)·b in place.
fn cayley_apply(omega: &DMatrix<Complex64>, b: &mut DMatrix<Complex64>) {
    let half = omega * Complex64::new(0.5, 0.0);
    let rhs = &*b + &half * &*b;
    if half.norm() < 0.25 {
        let mut x = rhs.clone();
        for _ in 0..60 {
            let next = &rhs + &half * &x;
            let change = (&next - &x).norm();
            x = next;
            if change <= 1e-15 * (1.0 + x.norm()) {
                break;
            }
        }
        *b = x;
    } else {
        let n = half.nrows();
        let lhs = DMatrix::<Complex64>::identity(n, n) - &half;
        *b = lhs.lu().solve(&rhs).expect("I − Ω/2 is invertible for anti-Hermitian Ω");
    }
}

struct FrameState {
    sector: usize,
    frame: Frame,
    theta: Vec<f64>,
    b: DMatrix<Complex64>,
}

impl FrameState {
    fn embed(&self, t_total: f64, out: &mut [StateVector]) {
        let sec = &spin::sectors()[self.sector];
        let n = self.theta.len();
        let rot: Vec<Complex64> = self.theta.iter().map(|th| Complex64::from_polar(1.0, -t_total * th)).collect();
        for (c, psi) in out.iter_mut().enumerate() {
            let mut coeffs = nalgebra::DVector::<Complex64>::zeros(n);
            for m in 0..n {
                let a = self.b[(m, c)] * rot[m];
                for j in 0..n {
                    coeffs[j] += a * self.frame.v[(j, m)];
                }
            }
            sec.embed_into(&coeffs, psi);
        }
    }
}

fn run_frame(
    states: &[StateVector],
    sector_ids: &[usize],
    schedule: &FieldSchedule,
    params: &HamiltonianParams,
    t_total: f64,
    grid: &[f64],
    sample_set: &[f64],
) -> Result<Trajectories> {
    let p0 = schedule.params_at(params, grid[0])?;
    let mut parts: Vec<FrameState> = sector_ids
        .iter()
        .map(|&k| {
            let frame = frame_at(k, &p0);
            let sec = &spin::sectors()[k];
            let n = sec.dim();
            let mut b = DMatrix::<Complex64>::zeros(n, states.len());
            for (c, psi) in states.iter().enumerate() {
                let proj = sec.project(psi);
                for m in 0..n {
                    b[(m, c)] = (0..n).map(|j| proj[j] * frame.v[(j, m)]).sum();
                }
            }
            FrameState { sector: k, frame, theta: vec![0.0; n], b }
        })
        .collect();
    let emit = |parts: &[FrameState]| {
        let mut v = vec![StateVector::zeros(DIM); states.len()];
        for p in parts {
            p.embed(t_total, &mut v);
        }
        v
    };

    let mut out: Trajectories = vec![Vec::new(); states.len()];
    record_into(&mut out, grid[0], emit(&parts));
    let zero = HamiltonianParams::new(params.lambda, 0.0, 0.0, 0.0);
    for w in grid.windows(2) {
        let (a, b) = (w[0], w[1]);
        let d = b - a;
        let slope = schedule.field_slope(0.5 * (a + b))?;
        let dparams = zero.with_fields(slope.a, slope.b1, slope.b2);
        let pb = schedule.params_at(params, b)?;
        for part in parts.iter_mut() {
            let (next, o, _) = align(&part.frame, frame_at(part.sector, &pb));
            let dh = spin::sectors()[part.sector].hamiltonian(&dparams);
            let (da, db) = (slopes(&part.frame, &dh), slopes(&next, &dh));
            let (ea, eb) = (&part.frame.e, &next.e);
            let n = ea.len();
            let mid: Vec<f64> = (0..n)
                .map(|k| {
                    part.theta[k]
                        + d * (13.0 / 32.0 * ea[k] + 3.0 / 32.0 * eb[k])
                        + d * d * (11.0 / 192.0 * da[k] - 5.0 / 192.0 * db[k])
                })
                .collect();
            let x = cayley_log(&o);
            let mut omega = DMatrix::<Complex64>::zeros(n, n);
            for c in 0..n {
                for r in (c + 1)..n {
                    let coupling = x[(r, c)];
                    if coupling == 0.0 {
                        continue;
                    }
                    let de = 0.5 * ((ea[r] + eb[r]) - (ea[c] + eb[c]));
                    let amp = coupling * sinc(0.5 * t_total * de * d);
                    let w = Complex64::from_polar(amp, t_total * (mid[r] - mid[c]));
                    omega[(r, c)] = w;
                    omega[(c, r)] = -w.conj();
                }
            }
            cayley_apply(&omega, &mut part.b);
            for k in 0..n {
                part.theta[k] += 0.5 * d * (ea[k] + eb[k]) + d * d * (da[k] - db[k]) / 12.0;
            }
            part.frame = next;
        }
        if is_sample(sample_set, b) {
            record_into(&mut out, b, emit(&parts));
        }
    }
    Ok(out)
}

/// Evolves several initial states under the same schedule, sharing the
/// per-step eigendecompositions. Returns one result per input.
pub fn evolve_many(
    psi0: &[StateVector],
    schedule: &FieldSchedule,
    params: &HamiltonianParams,
    t_total: f64,
    cfg: &IntegratorConfig,
) -> Result<Vec<EvolutionResult>> {
    cfg.validate()?;
    params.validate()?;
    schedule.validate()?;
    if !(t_total >= 0.0) || !t_total.is_finite() {
        return Err(Error::InvalidInput(format!("total time must be finite and >= 0, got {t_total}")));
    }
    if psi0.is_empty() {
        return Err(Error::InvalidInput("no initial states".into()));
    }
    for psi in psi0 {
        if psi.len() != DIM || (psi.norm() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput("initial state must be a normalized 256-vector".into()));
        }
    }
    let mut sample_set = cfg.samples.clone();
    sample_set.extend([0.0, 1.0]);
    sample_set.sort_by(f64::total_cmp);
    sample_set.dedup_by(|a, b| (*a - *b).abs() < 1e-12);

    let finish = |samples: Trajectories, steps: usize, distance: f64| {
        samples
            .into_iter()
            .map(|s| EvolutionResult { samples: s, t_total, steps, distance })
            .collect::<Vec<_>>()
    };
    if t_total == 0.0 {
        let out = psi0.iter().map(|p| sample_set.iter().map(|&s| (s, p.clone())).collect()).collect();
        return Ok(finish(out, 0, 0.0));
    }

    let sector_ids = supported_sectors(psi0);
    let cells = base_partition(schedule, params, t_total, cfg, &sample_set, &sector_ids)?;
    let n_cells = cells.len() - 1;
    let trace = std::env::var_os("ADIAQNN_TRACE").is_some();
    if trace {
        let min = cells.windows(2).map(|w| w[1] - w[0]).fold(1.0, f64::min);
        eprintln!("evolve: {n_cells} base cells, smallest {min:.2e}");
    }
    let run = |per_cell: usize| {
        let grid = refined(&cells, per_cell);
        match cfg.method {
            Method::AdiabaticFrame => run_frame(psi0, &sector_ids, schedule, params, t_total, &grid, &sample_set),
            Method::Midpoint => run_midpoint(psi0, &sector_ids, schedule, params, t_total, &grid, &sample_set),
        }
    };

    let mut per_cell = cfg.initial_steps;
    if per_cell * n_cells > cfg.max_steps {
        return Err(Error::InvalidInput(format!(
            "base partition alone needs {} steps, above max_steps {}",
            per_cell * n_cells,
            cfg.max_steps
        )));
    }
    let mut prev = run(per_cell)?;
    loop {
        let next_per_cell = per_cell * cfg.refine_factor;
        if next_per_cell * n_cells > cfg.max_steps {
            let best = finish(prev, per_cell * n_cells, f64::INFINITY).swap_remove(0);
            return Err(Error::NoConvergence {
                distance: f64::INFINITY,
                tol: cfg.tol,
                steps: per_cell * n_cells,
                best: Box::new(best),
            });
        }
        let cur = run(next_per_cell)?;
        let distance = prev
            .iter()
            .zip(&cur)
            .map(|(a, b)| (&a.last().unwrap().1 - &b.last().unwrap().1).norm())
            .fold(0.0, f64::max);
        per_cell = next_per_cell;
        if trace {
            eprintln!("evolve: {} steps, distance {:.3e}", per_cell * n_cells, distance);
        }
        if distance <= cfg.tol {
            return Ok(finish(cur, per_cell * n_cells, distance));
        }
        if per_cell * cfg.refine_factor * n_cells > cfg.max_steps {
            let best = finish(cur, per_cell * n_cells, distance).swap_remove(0);
            return Err(Error::NoConvergence { distance, tol: cfg.tol, steps: per_cell * n_cells, best: Box::new(best) });
        }
        prev = cur;
    }
}

pub fn evolve(
    psi0: &StateVector,
    schedule: &FieldSchedule,
    params: &HamiltonianParams,
    t_total: f64,
    cfg: &IntegratorConfig,
) -> Result<EvolutionResult> {
    Ok(evolve_many(std::slice::from_ref(psi0), schedule, params, t_total, cfg)?.swap_remove(0))
}

/// Composite trapezoid −T∫E ds on the trace grid.
pub fn dynamical_phase_of_trace(trace: &SpectrumTrace, level: usize, t_total: f64) -> f64 {
    let s = trace.grid();
    let e = trace.energies(level);
    let integral: f64 = (1..s.len()).map(|k| 0.5 * (e[k] + e[k - 1]) * (s[k] - s[k - 1])).sum();
    -t_total * integral
}

fn check_continuity(trace: &SpectrumTrace, level: usize) -> Result<()> {
    for w in trace.snapshots.windows(2) {
        let ov = w[0].overlap(&w[1], level).norm();
        if ov < 0.5 {
            return Err(Error::LevelAmbiguity { level, s: w[1].s, overlap: ov });
        }
    }
    Ok(())
}

/// −arg Π⟨v_k|v_{k+1}⟩ over consecutive snapshots; `closed` appends ⟨v_last|v_first⟩.
pub fn berry_phase_of_trace(trace: &SpectrumTrace, level: usize, closed: bool) -> f64 {
    let mut prod = Complex64::new(1.0, 0.0);
    for w in trace.snapshots.windows(2) {
        let ov = w[0].overlap(&w[1], level);
        prod *= ov / ov.norm();
    }
    if closed && trace.len() > 1 {
        let first = &trace.snapshots[0];
        let last = &trace.snapshots[trace.len() - 1];
        let ov = last.overlap(first, level);
        prod *= ov / ov.norm();
    }
    let phi = -prod.arg();
    // Report in (−π, π].
    if phi <= -std::f64::consts::PI {
        phi + 2.0 * std::f64::consts::PI
    } else {
        phi
    }
}

pub fn dynamical_phase(
    level: usize,
    schedule: &FieldSchedule,
    params: &HamiltonianParams,
    t_total: f64,
    grid: &[f64],
) -> Result<f64> {
    let trace = spectral::trace_spectrum(schedule, params, grid, level + 1)?;
    check_continuity(&trace, level)?;
    Ok(dynamical_phase_of_trace(&trace, level, t_total))
}

fn schedule_is_closed(schedule: &FieldSchedule) -> bool {
    let (a, b) = (schedule.nodes[0], schedule.nodes[schedule.nodes.len() - 1]);
    a.a == b.a && a.b == b.b
}

pub fn berry_phase(level: usize, schedule: &FieldSchedule, params: &HamiltonianParams, grid: &[f64]) -> Result<f64> {
    let trace = spectral::trace_spectrum(schedule, params, grid, level + 1)?;
    check_continuity(&trace, level)?;
    Ok(berry_phase_of_trace(&trace, level, schedule_is_closed(schedule) && trace.len() > 2))
}

pub fn phase_record(
    level: usize,
    schedule: &FieldSchedule,
    params: &HamiltonianParams,
    t_total: f64,
    grid: &[f64],
) -> Result<PhaseRecord> {
    let trace = spectral::trace_spectrum(schedule, params, grid, level + 1)?;
    check_continuity(&trace, level)?;
    Ok(PhaseRecord {
        level,
        dynamical: dynamical_phase_of_trace(&trace, level, t_total),
        berry: berry_phase_of_trace(&trace, level, schedule_is_closed(schedule) && trace.len() > 2),
    })
}

/// Σ aᵢ|Eᵢ(s=grid[0])⟩ in the canonical gauge — the input matching [`adiabatic_reference`].
pub fn instantaneous_superposition(
    amplitudes: &[Complex64],
    schedule: &FieldSchedule,
    params: &HamiltonianParams,
    s: f64,
) -> Result<StateVector> {
    let snap = spectral::qnn_snapshot(&schedule.params_at(params, s)?, s, amplitudes.len())?;
    let mut v = StateVector::zeros(DIM);
    for (i, a) in amplitudes.iter().enumerate() {
        v += snap.vectors.column(i) * *a;
    }
    Ok(v)
}

/// Ideal adiabatic transport Σ aᵢ e^{i(Φᴰᵢ+Φᴮᵢ)} |Eᵢ(1)⟩ along the grid.
pub fn adiabatic_reference(
    amplitudes: &[Complex64],
    schedule: &FieldSchedule,
    params: &HamiltonianParams,
    t_total: f64,
    grid: &[f64],
) -> Result<StateVector> {
    let norm: f64 = amplitudes.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidInput("amplitudes must be normalized".into()));
    }
    let trace = spectral::trace_spectrum(schedule, params, grid, amplitudes.len())?;
    let last = &trace.snapshots[trace.len() - 1];
    let mut v = StateVector::zeros(DIM);
    for (i, a) in amplitudes.iter().enumerate() {
        if *a == Complex64::new(0.0, 0.0) {
            continue;
        }
        check_continuity(&trace, i)?;
        let phi = dynamical_phase_of_trace(&trace, i, t_total) + berry_phase_of_trace(&trace, i, false);
        v += last.vectors.column(i) * (*a * Complex64::from_polar(1.0, phi));
    }
    Ok(v)
}
