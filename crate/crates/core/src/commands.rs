//! The four experiment commands. Each writes its CSVs into the output
//! directory and finishes with the manifest.

use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::json;

use crate::calibrate::{self, CalibrationOutcome, CalibrationSettings};
use crate::config::{ExperimentConfig, ScheduleSource, SweepPoint, TimeSpec};
use crate::gates::{self, GateExperiment, GateKind, GateSpec};
use crate::output::{fmt_f64, timestamp, FileHash, RunManifest, Table};
use crate::schedule::FieldSchedule;
use crate::spectral::{self, AdiabaticityReport};
use crate::spin::HamiltonianParams;
use crate::{Error, Result};

/// Levels written to spectrum.csv.
pub const SPECTRUM_LEVELS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Spectrum,
    Fidelity,
    Adiabaticity,
    Calibrate,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Spectrum => "spectrum",
            Command::Fidelity => "fidelity",
            Command::Adiabaticity => "adiabaticity",
            Command::Calibrate => "calibrate",
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    /// Overrides the config seed.
    pub seed: Option<u64>,
    /// Hashed into the manifest when given.
    pub config_path: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub outputs: Vec<String>,
    pub manifest: PathBuf,
    /// Human-readable result lines.
    pub lines: Vec<String>,
}

struct Produced {
    files: Vec<String>,
    resolved: serde_json::Value,
    lines: Vec<String>,
    /// Deferred error (calibration failure) reported after the manifest.
    error: Option<Error>,
}

/// Resolves T; the bound is computed whenever T is given as a multiplier.
pub fn resolve_time(
    cfg: &ExperimentConfig,
    schedule: &FieldSchedule,
    params: &HamiltonianParams,
) -> Result<(f64, Option<AdiabaticityReport>)> {
    match cfg.time_spec()? {
        TimeSpec::Total(t) => Ok((t, None)),
        TimeSpec::Multiplier(m) => {
            let grid = spectral::default_grid(schedule, cfg.spectral_points);
            let r = spectral::adiabatic_time_bound(schedule, params, &cfg.t_bound_levels(), &grid)?;
            if !r.t_bound.is_finite() {
                return Err(Error::InvalidInput(format!("T_bound diverges (gap closes at s = {:?})", r.divergent)));
            }
            Ok((m * r.t_bound, Some(r)))
        }
    }
}

pub fn run(cmd: Command, cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunSummary> {
    let started = timestamp();
    std::fs::create_dir_all(&opts.out_dir)?;
    let seed = opts.seed.unwrap_or(cfg.seed);
    let out = &opts.out_dir;
    let p = match cmd {
        Command::Spectrum => spectrum(cfg, out)?,
        Command::Fidelity => fidelity(cfg, out, seed)?,
        Command::Adiabaticity => adiabaticity(cfg, out)?,
        Command::Calibrate => calibrate_cmd(cfg, out)?,
    };
    let mut inputs = Vec::new();
    if let Some(c) = &opts.config_path {
        inputs.push(FileHash::of_path(c)?);
    }
    if let Some(ScheduleSource::File { file }) = &cfg.schedule {
        inputs.push(FileHash::of_path(&cfg.resolve_path(file))?);
    }
    let outputs = p.files.iter().map(|f| FileHash::of(out, f)).collect::<Result<Vec<_>>>()?;
    let mut resolved = p.resolved;
    resolved["seed"] = json!(seed);
    let manifest = RunManifest {
        command: cmd.name().into(),
        version: env!("CARGO_PKG_VERSION").into(),
        started,
        finished: timestamp(),
        config: serde_json::to_value(cfg)?,
        resolved,
        inputs,
        outputs,
    }
    .write(out)?;
    match p.error {
        Some(e) => Err(e),
        None => Ok(RunSummary { outputs: p.files, manifest, lines: p.lines }),
    }
}

fn params_json(p: &HamiltonianParams) -> serde_json::Value {
    json!({ "lambda": p.lambda, "r1": p.r1, "r2": p.r2, "r3": p.r3, "r3_form": p.r3_form })
}

fn spectrum(cfg: &ExperimentConfig, out: &Path) -> Result<Produced> {
    let schedule = cfg.schedule()?;
    let params = cfg.params();
    let grid = spectral::default_grid(&schedule, cfg.spectral_points);
    let trace = spectral::trace_spectrum(&schedule, &params, &grid, 0)?;

    let mut spec = Table::new(&["s", "E0", "E1", "E2", "E3", "E4"]);
    let mut gaps = Table::new(&["s", "gap01", "gap12", "gap23", "gap34"]);
    for snap in &trace.snapshots {
        let e = &snap.energies[..SPECTRUM_LEVELS];
        spec.push_nums(&[&[snap.s], e].concat());
        let g: Vec<f64> = (0..SPECTRUM_LEVELS - 1).map(|i| snap.gap(i)).collect();
        gaps.push_nums(&[&[snap.s], &g[..]].concat());
    }
    let mut cross = Table::new(&["pair", "s_min", "gap_min"]);
    let mut lines = Vec::new();
    for i in 0..SPECTRUM_LEVELS - 1 {
        for c in spectral::detect_avoided_crossings(&trace, (i, i + 1))? {
            let c = spectral::refine_avoided_crossing(&schedule, &params, &grid, &c)?;
            cross.push(vec![format!("{}-{}", i, i + 1), fmt_f64(c.s_min), fmt_f64(c.gap_min)]);
            lines.push(format!("crossing {}-{}: s = {:.6}, gap = {:.6e}", i, i + 1, c.s_min, c.gap_min));
        }
    }
    spec.write(&out.join("spectrum.csv"))?;
    gaps.write(&out.join("gaps.csv"))?;
    cross.write(&out.join("crossings.csv"))?;
    Ok(Produced {
        files: vec!["spectrum.csv".into(), "gaps.csv".into(), "crossings.csv".into()],
        resolved: json!({ "params": params_json(&params), "schedule": schedule, "grid_points": grid.len() }),
        lines,
        error: None,
    })
}

/// Runs every sweep point; points sharing (r₂, r₃) share one evolution.
fn run_points(
    cfg: &ExperimentConfig,
    gate: &GateSpec,
    schedule: &FieldSchedule,
    base: &HamiltonianParams,
    points: &[SweepPoint],
    t_total: f64,
) -> Result<Vec<GateExperiment>> {
    let mut groups: Vec<(f64, f64, Vec<usize>)> = Vec::new();
    for (i, pt) in points.iter().enumerate() {
        match groups.iter_mut().find(|g| g.0 == pt.r2 && g.1 == pt.r3) {
            Some(g) => g.2.push(i),
            None => groups.push((pt.r2, pt.r3, vec![i])),
        }
    }
    let done = groups
        .par_iter()
        .map(|(r2, r3, idx)| {
            let params = HamiltonianParams { r2: *r2, r3: *r3, ..*base };
            let eps: Vec<f64> = idx.iter().map(|&i| points[i].epsilon).collect();
            gates::run_gate_experiments(gate, schedule, &params, &eps, t_total, &cfg.samples.points(), &cfg.integrator)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out: Vec<Option<GateExperiment>> = vec![None; points.len()];
    for ((_, _, idx), runs) in groups.iter().zip(done) {
        for (&i, r) in idx.iter().zip(runs) {
            out[i] = Some(r);
        }
    }
    Ok(out.into_iter().map(Option::unwrap).collect())
}

fn fidelity(cfg: &ExperimentConfig, out: &Path, seed: u64) -> Result<Produced> {
    let schedule = cfg.schedule()?;
    let params = cfg.params();
    let gate = cfg.gate_spec();
    let (t_total, bound) = resolve_time(cfg, &schedule, &params)?;
    let points = cfg.sweep_points()?;
    let runs = run_points(cfg, &gate, &schedule, &params, &points, t_total)?;

    let mut fid = Table::new(&["s", "t_over_T", "fidelity", "gate", "r3", "epsilon", "classical_limit", "r2"]);
    let mut peaks = Table::new(&["r2", "r3", "epsilon", "peak_fidelity", "peak_s", "classical_limit"]);
    let mut lines = Vec::new();
    for (pt, run) in points.iter().zip(&runs) {
        let tr = &run.trace;
        for p in &tr.points {
            fid.push(vec![
                fmt_f64(p.s),
                fmt_f64(p.s),
                fmt_f64(p.fidelity),
                tr.gate.name().into(),
                fmt_f64(pt.r3),
                fmt_f64(pt.epsilon),
                fmt_f64(tr.classical_limit),
                fmt_f64(pt.r2),
            ]);
        }
        peaks.push_nums(&[pt.r2, pt.r3, pt.epsilon, tr.peak_fidelity, tr.peak_s, tr.classical_limit]);
        lines.push(format!(
            "{} r2={} r3={} eps={}: peak {:.6} at s = {:.4} (classical {:.4})",
            tr.gate.name(),
            pt.r2,
            pt.r3,
            pt.epsilon,
            tr.peak_fidelity,
            tr.peak_s,
            tr.classical_limit
        ));
    }
    fid.write(&out.join("fidelity.csv"))?;
    let mut files = vec!["fidelity.csv".to_string()];
    if cfg.sweep.is_some() {
        peaks.write(&out.join("peaks.csv"))?;
        files.push("peaks.csv".into());
    }
    if let Some(mc) = &cfg.mc_check {
        let mut t = Table::new(&["r2", "r3", "epsilon", "s", "closed_form", "monte_carlo", "std_error"]);
        for (j, (pt, run)) in points.iter().zip(&runs).enumerate() {
            let stream = seed.wrapping_add((j as u64) << 32);
            let n = run.trace.points.len();
            let mut rng = ChaCha8Rng::seed_from_u64(stream);
            let mut idx = sample(&mut rng, n, mc.points.min(n)).into_vec();
            idx.sort_unstable();
            for (m, &k) in idx.iter().enumerate() {
                let ev = run.evolved_at(k);
                let (f, se) = gates::gate_fidelity_mc(&ev, &run.targets, mc.samples, stream.wrapping_add(1 + m as u64))?;
                let p = &run.trace.points[k];
                t.push_nums(&[pt.r2, pt.r3, pt.epsilon, p.s, p.fidelity, f, se]);
            }
        }
        t.write(&out.join("mc_check.csv"))?;
        files.push("mc_check.csv".into());
    }
    let resolved = json!({
        "params": params_json(&params),
        "schedule": schedule,
        "t_total": t_total,
        "t_bound": bound.as_ref().map(|b| b.t_bound),
        "t_bound_levels": cfg.t_bound_levels(),
        "sweep": points,
        "steps": runs.iter().map(|r| r.trace.steps).collect::<Vec<_>>(),
        "convergence": runs.iter().map(|r| r.trace.convergence).collect::<Vec<_>>(),
    });
    lines.insert(0, format!("T = {t_total:.6e}"));
    Ok(Produced { files, resolved, lines, error: None })
}

fn adiabaticity(cfg: &ExperimentConfig, out: &Path) -> Result<Produced> {
    let schedule = cfg.schedule()?;
    let params = cfg.params();
    let levels = cfg.t_bound_levels();
    let grid = spectral::default_grid(&schedule, cfg.spectral_points);
    let r = spectral::adiabatic_time_bound(&schedule, &params, &levels, &grid)?;
    let mut t = Table::new(&["s", "dH_ds_norm", "gap", "ratio"]);
    for p in &r.points {
        t.push_nums(&[p.s, p.dh_norm, p.gap, p.ratio]);
    }
    t.write(&out.join("adiabaticity.csv"))?;
    let recommended = 100.0 * r.t_bound;
    let mut sum = Table::new(&["level_lo", "level_hi", "t_bound", "s_at_bound", "recommended_t", "divergent_points"]);
    sum.push(vec![
        r.levels.0.to_string(),
        r.levels.1.to_string(),
        fmt_f64(r.t_bound),
        fmt_f64(r.s_at_bound),
        fmt_f64(recommended),
        r.divergent.len().to_string(),
    ]);
    sum.write(&out.join("adiabaticity_summary.csv"))?;
    Ok(Produced {
        files: vec!["adiabaticity.csv".into(), "adiabaticity_summary.csv".into()],
        resolved: json!({
            "params": params_json(&params),
            "schedule": schedule,
            "levels": levels,
            "t_bound": r.t_bound,
            "s_at_bound": r.s_at_bound,
            "recommended_t": recommended,
            "divergent": r.divergent,
        }),
        lines: vec![
            format!("T_bound = {:.6e} at s = {:.6} (levels {}..{})", r.t_bound, r.s_at_bound, r.levels.0, r.levels.1),
            format!("recommended T = {recommended:.6e}"),
        ],
        error: None,
    })
}

fn opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

fn report_table(o: &CalibrationOutcome) -> Table {
    let mut t = Table::new(&[
        "rank", "a_max", "b_max", "interior_s", "t_bound", "t_total", "objective", "beats_classical", "peak_h", "peak_s_h",
        "peak_bell", "peak_s_bell", "s01", "gap01", "s23", "gap23", "error",
    ]);
    for (k, c) in o.candidates.iter().enumerate() {
        let peak = |g: GateKind| c.peaks.iter().find(|p| p.gate == g);
        let cross = |i: usize| {
            c.crossings.iter().filter(|x| x.level_pair.0 == i).min_by(|a, b| a.gap_min.total_cmp(&b.gap_min))
        };
        t.push(vec![
            (k + 1).to_string(),
            fmt_f64(c.key.a_max),
            fmt_f64(c.key.b_max),
            opt(c.key.interior_s),
            opt(c.t_bound),
            opt(c.t_total),
            opt(c.objective),
            c.beats_classical.to_string(),
            opt(peak(GateKind::H).map(|p| p.peak_fidelity)),
            opt(peak(GateKind::H).map(|p| p.peak_s)),
            opt(peak(GateKind::Bell).map(|p| p.peak_fidelity)),
            opt(peak(GateKind::Bell).map(|p| p.peak_s)),
            opt(cross(0).map(|x| x.s_min)),
            opt(cross(0).map(|x| x.gap_min)),
            opt(cross(2).map(|x| x.s_min)),
            opt(cross(2).map(|x| x.gap_min)),
            c.error.clone().unwrap_or_default(),
        ]);
    }
    t
}

fn calibrate_cmd(cfg: &ExperimentConfig, out: &Path) -> Result<Produced> {
    let cal = cfg.calibrate.as_ref().ok_or_else(|| Error::Config {
        field: "calibrate".into(),
        message: "the calibrate command needs a `calibrate` search-space block".into(),
    })?;
    let t_multiplier = match cfg.time_spec()? {
        TimeSpec::Multiplier(m) => m,
        TimeSpec::Total(_) => {
            return Err(Error::Config {
                field: "t_total".into(),
                message: "calibration scales T with each candidate's T_bound; use t_multiplier".into(),
            })
        }
    };
    let schedule = cfg.schedule()?;
    let params = cfg.params();
    let kinds = if cal.gates.is_empty() { vec![cfg.gate] } else { cal.gates.clone() };
    let gate_specs: Vec<GateSpec> = kinds.iter().map(|&k| GateSpec::of(k)).collect();
    let settings = CalibrationSettings {
        name: cal.name.clone(),
        t_multiplier,
        samples: cfg.samples.points(),
        integrator: cfg.integrator.clone(),
        budget: cal.budget,
        spectral_points: cfg.spectral_points,
        readout_gates: cal.readout_gates.clone(),
    };
    let (outcome, error) = match calibrate::calibrate(&schedule, &params, &gate_specs, &cal.search, &settings) {
        Ok(o) => (o, None),
        Err(Error::CalibrationFailed(o)) => {
            let o = (*o).clone();
            (o.clone(), Some(Error::CalibrationFailed(Box::new(o))))
        }
        Err(e) => return Err(e),
    };
    let preset_file = if error.is_none() { format!("{}.json", cal.name) } else { format!("{}.best-attempt.json", cal.name) };
    std::fs::write(out.join(&preset_file), serde_json::to_string_pretty(&outcome.preset)? + "\n")?;
    report_table(&outcome).write(&out.join("calibration_report.csv"))?;
    let b = &outcome.best;
    let mut lines = vec![format!(
        "{} of {} candidates; best objective {:?} at a_max={} b_max={} interior_s={:?}",
        if error.is_none() { "calibrated" } else { "FAILED" },
        outcome.candidates.len(),
        b.objective,
        b.key.a_max,
        b.key.b_max,
        b.key.interior_s
    )];
    for p in &b.peaks {
        lines.push(format!("  {}: peak {:.6} at s = {:.4}", p.gate.name(), p.peak_fidelity, p.peak_s));
    }
    Ok(Produced {
        files: vec![preset_file, "calibration_report.csv".into()],
        resolved: json!({
            "params": params_json(&params),
            "base_schedule": schedule,
            "gates": kinds,
            "t_multiplier": t_multiplier,
            "best": outcome.best,
        }),
        lines,
        error,
    })
}
