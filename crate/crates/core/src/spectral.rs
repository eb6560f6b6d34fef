//! Instantaneous spectra along a schedule: gauge-fixed snapshots, gaps,
//! avoided crossings and the adiabatic time bound.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::schedule::FieldSchedule;
use crate::spin::{self, HamiltonianParams, HermitianOperator, SpinConfig, DIM};
use crate::{Error, Result};

/// Relative tolerance for accepting an operator as Hermitian.
pub const HERMITIAN_TOL: f64 = 1e-12;
/// Energies closer than this (relative) are treated as tied.
const TIE_TOL: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct SpectrumSnapshot {
    pub s: f64,
    /// All eigenvalues, ascending.
    pub energies: Vec<f64>,
    /// Eigenvectors (columns) of the lowest `vectors.ncols()` levels, gauge-fixed.
    pub vectors: DMatrix<Complex64>,
}

impl SpectrumSnapshot {
    pub fn gap(&self, i: usize) -> f64 {
        self.energies[i + 1] - self.energies[i]
    }

    pub fn n_vectors(&self) -> usize {
        self.vectors.ncols()
    }

    /// ⟨self_i | other_i⟩
    pub fn overlap(&self, other: &SpectrumSnapshot, i: usize) -> Complex64 {
        self.vectors.column(i).dotc(&other.vectors.column(i))
    }
}

#[derive(Debug, Clone)]
pub struct SpectrumTrace {
    pub snapshots: Vec<SpectrumSnapshot>,
}

impl SpectrumTrace {
    pub fn grid(&self) -> Vec<f64> {
        self.snapshots.iter().map(|x| x.s).collect()
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    pub fn energies(&self, level: usize) -> Vec<f64> {
        self.snapshots.iter().map(|x| x.energies[level]).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AvoidedCrossing {
    pub level_pair: (usize, usize),
    pub s_min: f64,
    pub gap_min: f64,
    /// The minimum sits on the first or last grid interval.
    pub boundary: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AdiabaticityPoint {
    pub s: f64,
    pub dh_norm: f64,
    pub gap: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct AdiabaticityReport {
    pub levels: (usize, usize),
    pub points: Vec<AdiabaticityPoint>,
    pub t_bound: f64,
    pub s_at_bound: f64,
    /// Grid points where the gap vanished.
    pub divergent: Vec<f64>,
}

/// Product states used to break exact ties: all-up, all-down, ↑↑↑↑↓↓↓↓, ↓↓↓↓↑↑↑↑.
const TIE_PRIORITY: [SpinConfig; 4] =
    [SpinConfig::ALL_UP, SpinConfig::ALL_DOWN, SpinConfig::UP_DOWN, SpinConfig::DOWN_UP];

fn tie_rank(v: nalgebra::DVectorView<'_, Complex64>) -> usize {
    TIE_PRIORITY.iter().position(|c| v[c.index()].norm_sqr() > 0.5).unwrap_or(TIE_PRIORITY.len())
}

/// Reorders columns inside groups of tied energies by the product-state priority.
fn break_ties(energies: &mut [f64], vectors: &mut DMatrix<Complex64>) {
    let n = vectors.ncols().min(energies.len());
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < energies.len() && energies[end] - energies[start] <= TIE_TOL * energies[start].abs().max(1.0) {
            end += 1;
        }
        let stop = end.min(n);
        if stop - start > 1 {
            let mut order: Vec<usize> = (start..stop).collect();
            order.sort_by_key(|&k| (tie_rank(vectors.column(k)), k));
            let cols: Vec<_> = order.iter().map(|&k| vectors.column(k).into_owned()).collect();
            for (off, c) in cols.into_iter().enumerate() {
                vectors.set_column(start + off, &c);
            }
        }
        start = end;
    }
}

/// Canonical gauge: largest-magnitude amplitude real and positive.
fn canonical_phase(v: nalgebra::DVectorView<'_, Complex64>) -> Complex64 {
    let max = v.iter().fold(0.0f64, |m, z| m.max(z.norm()));
    if max == 0.0 {
        return Complex64::new(1.0, 0.0);
    }
    let z = v.iter().find(|z| z.norm() >= max * (1.0 - 1e-12)).copied().unwrap();
    z.conj() / z.norm()
}

fn gauge_fix(vectors: &mut DMatrix<Complex64>, previous: Option<&DMatrix<Complex64>>) {
    for i in 0..vectors.ncols() {
        let factor = match previous {
            Some(p) if i < p.ncols() => {
                let ov = p.column(i).dotc(&vectors.column(i));
                if ov.norm() > 1e-300 {
                    ov.conj() / ov.norm()
                } else {
                    canonical_phase(vectors.column(i))
                }
            }
            _ => canonical_phase(vectors.column(i)),
        };
        let mut col = vectors.column_mut(i);
        col *= factor;
    }
}

/// Full eigendecomposition of a Hermitian operator, sorted ascending and gauge-fixed.
pub fn diagonalize(h: &HermitianOperator, previous: Option<&SpectrumSnapshot>) -> Result<SpectrumSnapshot> {
    let defect = h.hermiticity_defect();
    if defect > HERMITIAN_TOL {
        return Err(Error::NotHermitian(defect));
    }
    let eig = SymmetricEigen::new(h.entries.clone());
    let n = h.dim();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let mut energies: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let mut vectors = DMatrix::<Complex64>::zeros(n, n);
    for (j, &k) in order.iter().enumerate() {
        vectors.set_column(j, &eig.eigenvectors.column(k));
    }
    if n == DIM {
        break_ties(&mut energies, &mut vectors);
    }
    gauge_fix(&mut vectors, previous.map(|p| &p.vectors));
    Ok(SpectrumSnapshot { s: previous.map_or(0.0, |p| p.s), energies, vectors })
}

/// Sorted eigenvalues of the network Hamiltonian via the symmetry blocks.
pub fn qnn_energies(params: &HamiltonianParams) -> Result<Vec<f64>> {
    params.validate()?;
    let mut e: Vec<f64> = spin::sectors()
        .iter()
        .flat_map(|sec| sec.hamiltonian(params).symmetric_eigenvalues().iter().copied().collect::<Vec<_>>())
        .collect();
    e.sort_by(f64::total_cmp);
    Ok(e)
}

/// Snapshot of the network Hamiltonian keeping the lowest `keep` eigenvectors,
/// computed block by block. Not gauge-fixed against any predecessor.
pub fn qnn_snapshot(params: &HamiltonianParams, s: f64, keep: usize) -> Result<SpectrumSnapshot> {
    params.validate()?;
    let mut pairs: Vec<(f64, usize, usize)> = Vec::with_capacity(DIM);
    let mut eigs = Vec::new();
    for (k, sec) in spin::sectors().iter().enumerate() {
        let eig = SymmetricEigen::new(sec.hamiltonian(params));
        for (j, &e) in eig.eigenvalues.iter().enumerate() {
            pairs.push((e, k, j));
        }
        eigs.push(eig);
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let keep = keep.min(DIM);
    let mut energies: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let mut vectors = DMatrix::<Complex64>::zeros(DIM, keep);
    for (col, &(_, k, j)) in pairs.iter().take(keep).enumerate() {
        let coeffs: Vec<f64> = eigs[k].eigenvectors.column(j).iter().copied().collect();
        vectors.set_column(col, &spin::sectors()[k].embed_real(&coeffs));
    }
    break_ties(&mut energies, &mut vectors);
    gauge_fix(&mut vectors, None);
    Ok(SpectrumSnapshot { s, energies, vectors })
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::InvalidInput("empty grid".into()));
    }
    if grid.iter().any(|s| !(0.0..=1.0).contains(s)) {
        return Err(Error::InvalidInput("grid points must lie in [0, 1]".into()));
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidInput("grid must be strictly increasing".into()));
    }
    Ok(())
}

/// `n` uniform points on [0,1] merged with the schedule nodes.
pub fn default_grid(schedule: &FieldSchedule, n: usize) -> Vec<f64> {
    let n = n.max(2);
    let mut g: Vec<f64> = (0..n).map(|k| k as f64 / (n - 1) as f64).collect();
    g.extend(schedule.node_positions());
    g.sort_by(f64::total_cmp);
    g.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    g
}

/// Snapshots along the grid, each gauge-fixed against its predecessor.
pub fn trace_spectrum(
    schedule: &FieldSchedule,
    params: &HamiltonianParams,
    grid: &[f64],
    keep: usize,
) -> Result<SpectrumTrace> {
    check_grid(grid)?;
    let mut snaps = grid
        .par_iter()
        .map(|&s| qnn_snapshot(&schedule.params_at(params, s)?, s, keep))
        .collect::<Result<Vec<_>>>()?;
    for k in 1..snaps.len() {
        let (done, rest) = snaps.split_at_mut(k);
        gauge_fix(&mut rest[0].vectors, Some(&done[k - 1].vectors));
    }
    Ok(SpectrumTrace { snapshots: snaps })
}

/// Like [`trace_spectrum`], but bisects any interval where a tracked level's
/// consecutive overlap drops below `min_overlap`, up to `max_depth` times.
pub fn trace_spectrum_refined(
    schedule: &FieldSchedule,
    params: &HamiltonianParams,
    grid: &[f64],
    keep: usize,
    min_overlap: f64,
    max_depth: usize,
) -> Result<SpectrumTrace> {
    let mut trace = trace_spectrum(schedule, params, grid, keep)?;
    for _ in 0..max_depth {
        let snaps = &trace.snapshots;
        let mut extra = Vec::new();
        for w in snaps.windows(2) {
            let bad = (0..keep.min(w[0].n_vectors())).any(|i| w[0].overlap(&w[1], i).norm() < min_overlap);
            if bad {
                extra.push(0.5 * (w[0].s + w[1].s));
            }
        }
        if extra.is_empty() {
            break;
        }
        let mut g = trace.grid();
        g.extend(extra);
        g.sort_by(f64::total_cmp);
        trace = trace_spectrum(schedule, params, &g, keep)?;
    }
    Ok(trace)
}

/// Minimum gap bounding the contiguous band `levels = (i, j)`.
pub fn relevant_gap(snapshot: &SpectrumSnapshot, levels: &[usize]) -> Result<f64> {
    if levels.is_empty() || levels.windows(2).any(|w| w[1] != w[0] + 1) {
        return Err(Error::InvalidInput("level set must be contiguous and ascending".into()));
    }
    let (i, j) = (levels[0], levels[levels.len() - 1]);
    let e = &snapshot.energies;
    if j >= e.len() {
        return Err(Error::InvalidInput(format!("level {j} not in snapshot")));
    }
    let mut g = f64::INFINITY;
    if i > 0 {
        g = g.min(e[i] - e[i - 1]);
    }
    for k in i..j {
        g = g.min(e[k + 1] - e[k]);
    }
    if j + 1 < e.len() {
        g = g.min(e[j + 1] - e[j]);
    }
    Ok(g)
}

/// Interior local minima of a sampled function, refined by a three-point parabola.
pub fn local_minima(s: &[f64], g: &[f64]) -> Vec<(f64, f64, bool)> {
    let n = s.len();
    let mut out = Vec::new();
    if n < 3 {
        return out;
    }
    for k in 1..n - 1 {
        if !(g[k] < g[k - 1] && g[k] <= g[k + 1]) {
            continue;
        }
        let (x0, x1, x2) = (s[k - 1], s[k], s[k + 1]);
        let (y0, y1, y2) = (g[k - 1], g[k], g[k + 1]);
        // Newton form of the interpolating parabola.
        let d01 = (y1 - y0) / (x1 - x0);
        let d12 = (y2 - y1) / (x2 - x1);
        let c = (d12 - d01) / (x2 - x0);
        let (mut xm, mut ym) = (x1, y1);
        if c > 0.0 {
            let b = d01 - c * (x0 + x1);
            let v = -b / (2.0 * c);
            if v >= x0 && v <= x2 {
                let yv = y0 + d01 * (v - x0) + c * (v - x0) * (v - x1);
                if yv > 0.0 && yv <= y1 {
                    xm = v;
                    ym = yv;
                }
            }
        }
        out.push((xm, ym, k == 1 || k == n - 2));
    }
    out
}

pub fn detect_avoided_crossings(trace: &SpectrumTrace, level_pair: (usize, usize)) -> Result<Vec<AvoidedCrossing>> {
    let (i, j) = level_pair;
    if j != i + 1 {
        return Err(Error::InvalidInput("level pair must be adjacent (i, i+1)".into()));
    }
    if trace.len() < 3 {
        return Err(Error::InvalidInput("need at least 3 snapshots to locate a minimum".into()));
    }
    let s = trace.grid();
    let g: Vec<f64> = trace.snapshots.iter().map(|x| x.gap(i)).collect();
    Ok(local_minima(&s, &g)
        .into_iter()
        .map(|(s_min, gap_min, boundary)| AvoidedCrossing { level_pair, s_min, gap_min, boundary })
        .collect())
}

/// Sharpens a grid-detected crossing by golden-section search of the exact gap
/// between the grid neighbours of the sampled minimum. The parabolic estimate
/// undershoots when the minimum sits on a schedule kink.
pub fn refine_avoided_crossing(
    schedule: &FieldSchedule,
    params: &HamiltonianParams,
    grid: &[f64],
    crossing: &AvoidedCrossing,
) -> Result<AvoidedCrossing> {
    check_grid(grid)?;
    let i = crossing.level_pair.0;
    let gap = |s: f64| -> Result<f64> {
        let e = qnn_energies(&schedule.params_at(params, s)?)?;
        Ok(e[i + 1] - e[i])
    };
    let k = grid
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1 - crossing.s_min).abs().total_cmp(&(b.1 - crossing.s_min).abs()))
        .map(|x| x.0)
        .unwrap_or(0);
    let (mut lo, mut hi) = (grid[k.saturating_sub(1)], grid[(k + 1).min(grid.len() - 1)]);
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let (mut x1, mut x2) = (hi - r * (hi - lo), lo + r * (hi - lo));
    let (mut g1, mut g2) = (gap(x1)?, gap(x2)?);
    for _ in 0..80 {
        if hi - lo <= 1e-13 {
            break;
        }
        if g1 <= g2 {
            hi = x2;
            (x2, g2) = (x1, g1);
            x1 = hi - r * (hi - lo);
            g1 = gap(x1)?;
        } else {
            lo = x1;
            (x1, g1) = (x2, g2);
            x2 = lo + r * (hi - lo);
            g2 = gap(x2)?;
        }
    }
    let mut best = if g1 <= g2 { (x1, g1) } else { (x2, g2) };
    for s in [grid[k], lo, hi] {
        let g = gap(s)?;
        if g < best.1 {
            best = (s, g);
        }
    }
    Ok(AvoidedCrossing { s_min: best.0, gap_min: best.1, ..*crossing })
}

/// Operator norm of −λ[A'·ΣS_x + B₁'(S_z1+S_z2) + B₂'(S_z3+S_z4)], block by block.
pub fn field_derivative_norm(lambda: f64, da: f64, db1: f64, db2: f64) -> f64 {
    let p = HamiltonianParams::new(lambda, 0.0, 0.0, 0.0).with_fields(da, db1, db2);
    spin::sectors()
        .iter()
        .map(|sec| {
            sec.hamiltonian(&p).symmetric_eigenvalues().iter().fold(0.0f64, |m, e| m.max(e.abs()))
        })
        .fold(0.0, f64::max)
}

pub fn adiabatic_time_bound(
    schedule: &FieldSchedule,
    params: &HamiltonianParams,
    levels: &[usize],
    grid: &[f64],
) -> Result<AdiabaticityReport> {
    check_grid(grid)?;
    if levels.is_empty() || levels.windows(2).any(|w| w[1] != w[0] + 1) {
        return Err(Error::InvalidInput("level set must be contiguous and ascending".into()));
    }
    let points = grid
        .par_iter()
        .map(|&s| {
            let d = schedule.field_slope(s)?;
            let dh_norm = field_derivative_norm(params.lambda, d.a, d.b1, d.b2);
            let e = qnn_energies(&schedule.params_at(params, s)?)?;
            let snap = SpectrumSnapshot { s, energies: e, vectors: DMatrix::zeros(0, 0) };
            let gap = relevant_gap(&snap, levels)?;
            let ratio = if dh_norm == 0.0 {
                0.0
            } else if gap <= 0.0 {
                f64::INFINITY
            } else {
                dh_norm / (gap * gap)
            };
            Ok(AdiabaticityPoint { s, dh_norm, gap, ratio })
        })
        .collect::<Result<Vec<_>>>()?;
    let divergent: Vec<f64> = points.iter().filter(|p| !p.ratio.is_finite()).map(|p| p.s).collect();
    let (mut t_bound, mut s_at_bound) = (0.0, points[0].s);
    for p in &points {
        if p.ratio > t_bound {
            t_bound = p.ratio;
            s_at_bound = p.s;
        }
    }
    Ok(AdiabaticityReport {
        levels: (levels[0], levels[levels.len() - 1]),
        points,
        t_bound,
        s_at_bound,
        divergent,
    })
}
