//! Grid search over schedule amplitudes (and optionally one interior node
//! position) for the schedule whose worst gate peak fidelity is highest.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::evolution::IntegratorConfig;
use crate::gates::{classical_limit, run_gate_experiment, GateKind, GateSpec, NoiseConfig};
use crate::schedule::{FieldSchedule, SchedulePreset};
use crate::spectral::{self, AvoidedCrossing};
use crate::spin::HamiltonianParams;
use crate::{Error, Result};

/// Axes of the search grid. An empty axis keeps the base value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSpace {
    /// Candidate maxima of |A(s)|; node A-values are rescaled proportionally.
    pub a_max: Vec<f64>,
    /// Candidate maxima of |B(s)|, rescaled the same way.
    pub b_max: Vec<f64>,
    /// Index of the interior node whose position is searched.
    pub interior_node: Option<usize>,
    pub interior_s: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct CalibrationSettings {
    pub name: String,
    /// Each candidate runs at T = t_multiplier · T_bound(candidate).
    pub t_multiplier: f64,
    pub samples: Vec<f64>,
    pub integrator: IntegratorConfig,
    /// Maximum number of candidates evaluated (the base schedule counts).
    pub budget: usize,
    /// Uniform points of the spectral grid used for T_bound and gap minima.
    pub spectral_points: usize,
    /// Gates run on the winner only, to record their readout fractions.
    pub readout_gates: Vec<GateKind>,
}

impl CalibrationSettings {
    pub fn new(name: &str) -> Self {
        CalibrationSettings {
            name: name.to_string(),
            t_multiplier: 100.0,
            samples: (0..=400).map(|k| k as f64 / 400.0).collect(),
            integrator: IntegratorConfig::default(),
            budget: 16,
            spectral_points: 2001,
            readout_gates: Vec::new(),
        }
    }
}

/// Candidate coordinates; the derived ordering is the tie-break order.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize)]
pub struct CandidateKey {
    pub a_max: f64,
    pub b_max: f64,
    pub interior_s: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct GatePeak {
    pub gate: GateKind,
    pub peak_fidelity: f64,
    pub peak_s: f64,
    pub classical_limit: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Candidate {
    pub key: CandidateKey,
    pub schedule: FieldSchedule,
    pub t_bound: Option<f64>,
    pub t_total: Option<f64>,
    pub crossings: Vec<AvoidedCrossing>,
    pub peaks: Vec<GatePeak>,
    /// Minimum peak fidelity over the searched gates.
    pub objective: Option<f64>,
    pub beats_classical: bool,
    pub error: Option<String>,
}

impl Candidate {
    fn failed(key: CandidateKey, schedule: FieldSchedule, e: &Error) -> Self {
        Candidate {
            key,
            schedule,
            t_bound: None,
            t_total: None,
            crossings: Vec::new(),
            peaks: Vec::new(),
            objective: None,
            beats_classical: false,
            error: Some(e.to_string()),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CalibrationOutcome {
    pub preset: SchedulePreset,
    pub best: Candidate,
    /// Every evaluated candidate, best first.
    pub candidates: Vec<Candidate>,
}

/// A peak must clear the classical line by more than rounding noise.
const CLASSICAL_MARGIN: f64 = 1e-9;

fn max_abs(v: impl Iterator<Item = f64>) -> f64 {
    v.fold(0.0, |m, x| m.max(x.abs()))
}

fn rescale(base: &FieldSchedule, space: &SearchSpace, key: &CandidateKey) -> Result<FieldSchedule> {
    let a0 = max_abs(base.nodes.iter().map(|n| n.a));
    let b0 = max_abs(base.nodes.iter().map(|n| n.b));
    let scale = |x0: f64, x: f64, what: &str| {
        if x0 == 0.0 {
            if x == 0.0 {
                Ok(1.0)
            } else {
                Err(Error::InvalidInput(format!("base schedule has {what} = 0 everywhere; cannot rescale")))
            }
        } else {
            Ok(x / x0)
        }
    };
    let (fa, fb) = (scale(a0, key.a_max, "A")?, scale(b0, key.b_max, "B")?);
    let mut s = base.clone();
    for n in &mut s.nodes {
        n.a *= fa;
        n.b *= fb;
    }
    if let (Some(i), Some(x)) = (space.interior_node, key.interior_s) {
        s.nodes[i].s = x;
    }
    s.validate()?;
    Ok(s)
}

fn candidate_keys(base: &FieldSchedule, space: &SearchSpace) -> Result<Vec<CandidateKey>> {
    let n = base.nodes.len();
    let base_key = CandidateKey {
        a_max: max_abs(base.nodes.iter().map(|x| x.a)),
        b_max: max_abs(base.nodes.iter().map(|x| x.b)),
        interior_s: match space.interior_node {
            Some(i) if i == 0 || i + 1 >= n => {
                return Err(Error::InvalidInput(format!("interior_node {i} is not an interior node of a {n}-node schedule")))
            }
            Some(i) => Some(base.nodes[i].s),
            None => None,
        },
    };
    if space.interior_node.is_none() && !space.interior_s.is_empty() {
        return Err(Error::InvalidInput("interior_s given without interior_node".into()));
    }
    let or_base = |v: &[f64], b: f64| if v.is_empty() { vec![b] } else { v.to_vec() };
    let avals = or_base(&space.a_max, base_key.a_max);
    let bvals = or_base(&space.b_max, base_key.b_max);
    let svals: Vec<Option<f64>> = if space.interior_s.is_empty() {
        vec![base_key.interior_s]
    } else {
        space.interior_s.iter().map(|&x| Some(x)).collect()
    };
    if avals.iter().chain(&bvals).chain(svals.iter().flatten()).any(|x| !x.is_finite() || *x < 0.0) {
        return Err(Error::InvalidInput("search values must be finite and >= 0".into()));
    }
    let mut grid = Vec::new();
    for &a_max in &avals {
        for &b_max in &bvals {
            for &interior_s in &svals {
                grid.push(CandidateKey { a_max, b_max, interior_s });
            }
        }
    }
    grid.sort_by(|x, y| x.partial_cmp(y).unwrap());
    grid.dedup();
    let mut keys = vec![base_key];
    keys.extend(grid.into_iter().filter(|k| *k != base_key));
    Ok(keys)
}

/// T_bound over `levels` and the refined gap minima of pairs (0,1) and (2,3).
pub fn schedule_metrics(
    schedule: &FieldSchedule,
    params: &HamiltonianParams,
    levels: &[usize],
    points: usize,
) -> Result<(f64, Vec<AvoidedCrossing>)> {
    let grid = spectral::default_grid(schedule, points);
    let report = spectral::adiabatic_time_bound(schedule, params, levels, &grid)?;
    let trace = spectral::trace_spectrum(schedule, params, &grid, 0)?;
    let mut crossings = Vec::new();
    for i in [0, 2] {
        for c in spectral::detect_avoided_crossings(&trace, (i, i + 1))? {
            crossings.push(spectral::refine_avoided_crossing(schedule, params, &grid, &c)?);
        }
    }
    Ok((report.t_bound, crossings))
}

fn evaluate(
    key: CandidateKey,
    schedule: FieldSchedule,
    params: &HamiltonianParams,
    gates: &[GateSpec],
    settings: &CalibrationSettings,
) -> Candidate {
    let d = gates.iter().map(GateSpec::dim).max().unwrap_or(2);
    let levels: Vec<usize> = (0..d).collect();
    let (t_bound, crossings) = match schedule_metrics(&schedule, params, &levels, settings.spectral_points) {
        Ok(x) => x,
        Err(e) => return Candidate::failed(key, schedule, &e),
    };
    let t_total = settings.t_multiplier * t_bound;
    let mut peaks = Vec::new();
    for g in gates {
        match run_gate_experiment(g, &schedule, params, &NoiseConfig::default(), t_total, &settings.samples, &settings.integrator) {
            Ok(x) => peaks.push(GatePeak {
                gate: g.kind,
                peak_fidelity: x.trace.peak_fidelity,
                peak_s: x.trace.peak_s,
                classical_limit: x.trace.classical_limit,
            }),
            Err(e) => {
                let mut c = Candidate::failed(key, schedule, &e);
                c.t_bound = Some(t_bound);
                c.t_total = Some(t_total);
                c.crossings = crossings;
                return c;
            }
        }
    }
    let objective = peaks.iter().map(|p| p.peak_fidelity).fold(f64::INFINITY, f64::min);
    let beats_classical = peaks.iter().all(|p| p.peak_fidelity > p.classical_limit + CLASSICAL_MARGIN);
    Candidate {
        key,
        schedule,
        t_bound: Some(t_bound),
        t_total: Some(t_total),
        crossings,
        peaks,
        objective: Some(objective),
        beats_classical,
        error: None,
    }
}

fn preset_for(best: &Candidate, extra: &[GatePeak], settings: &CalibrationSettings, evaluated: usize) -> SchedulePreset {
    let all: Vec<&GatePeak> = best.peaks.iter().chain(extra).collect();
    let readout = |k: GateKind| all.iter().find(|p| p.gate == k).map(|p| p.peak_s);
    let mut metrics = Map::new();
    metrics.insert("t_bound".into(), json!(best.t_bound));
    metrics.insert("t_total".into(), json!(best.t_total));
    metrics.insert("objective".into(), json!(best.objective));
    metrics.insert("candidates_evaluated".into(), json!(evaluated));
    metrics.insert("search_key".into(), json!(best.key));
    metrics.insert("crossings".into(), json!(best.crossings));
    metrics.insert("peaks".into(), Value::Array(all.iter().map(|p| json!(p)).collect()));
    SchedulePreset {
        name: settings.name.clone(),
        schedule: best.schedule.clone(),
        s_h: readout(GateKind::H),
        s_bell: readout(GateKind::Bell),
        t_multiplier: settings.t_multiplier,
        metrics,
    }
}

fn rank(a: &Candidate, b: &Candidate) -> std::cmp::Ordering {
    let o = |c: &Candidate| c.objective.unwrap_or(f64::NEG_INFINITY);
    o(b).total_cmp(&o(a)).then_with(|| a.key.partial_cmp(&b.key).unwrap())
}

/// Evaluates the base schedule and then the search grid in lexicographic
/// order of (a_max, b_max, interior_s), up to `budget` candidates. The
/// objective is the minimum over `gates` of the peak fidelity at
/// T = t_multiplier·T_bound; the readout fraction of each gate is its peak.
pub fn calibrate(
    base: &FieldSchedule,
    params: &HamiltonianParams,
    gates: &[GateSpec],
    space: &SearchSpace,
    settings: &CalibrationSettings,
) -> Result<CalibrationOutcome> {
    base.validate()?;
    params.validate()?;
    settings.integrator.validate()?;
    if gates.is_empty() {
        return Err(Error::InvalidInput("calibration needs at least one gate".into()));
    }
    if settings.budget == 0 {
        return Err(Error::InvalidInput("calibration budget must be >= 1".into()));
    }
    if !(settings.t_multiplier > 0.0) || !settings.t_multiplier.is_finite() {
        return Err(Error::InvalidInput("t_multiplier must be finite and > 0".into()));
    }
    let mut keys = candidate_keys(base, space)?;
    keys.truncate(settings.budget);
    let mut candidates: Vec<Candidate> = keys
        .par_iter()
        .map(|&k| match rescale(base, space, &k) {
            Ok(s) => evaluate(k, s, params, gates, settings),
            Err(e) => Candidate::failed(k, base.clone(), &e),
        })
        .collect();
    candidates.sort_by(rank);
    let best = candidates[0].clone();

    let mut extra = Vec::new();
    if let (Some(t), None) = (best.t_total, &best.error) {
        for &kind in &settings.readout_gates {
            if gates.iter().any(|g| g.kind == kind) {
                continue;
            }
            let g = GateSpec::of(kind);
            let x = run_gate_experiment(&g, &best.schedule, params, &NoiseConfig::default(), t, &settings.samples, &settings.integrator)?;
            extra.push(GatePeak {
                gate: kind,
                peak_fidelity: x.trace.peak_fidelity,
                peak_s: x.trace.peak_s,
                classical_limit: classical_limit(g.dim()),
            });
        }
    }
    let preset = preset_for(&best, &extra, settings, candidates.len());
    let outcome = CalibrationOutcome { preset, best, candidates };
    if !outcome.best.beats_classical {
        return Err(Error::CalibrationFailed(Box::new(outcome)));
    }
    Ok(outcome)
}
