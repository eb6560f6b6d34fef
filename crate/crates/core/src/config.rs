//! JSON experiment configuration: parsing, defaults and validation.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::calibrate::SearchSpace;
use crate::evolution::IntegratorConfig;
use crate::gates::{GateKind, GateSpec, NoiseConfig};
use crate::schedule::{self, FieldSchedule, SchedulePreset};
use crate::spin::{HamiltonianParams, R3Form, TrapKind, TrapPreset};
use crate::{Error, Result};

/// r₃/r₁ values of the distributed-noise figure family.
pub const DEFAULT_R3_RATIOS: [f64; 10] = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];
/// Local-noise grid.
pub const DEFAULT_EPSILONS: [f64; 7] = [0.0, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3];

fn cfg_err(field: &str, message: impl Into<String>) -> Error {
    Error::Config { field: field.to_string(), message: message.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Couplings {
    pub r1: f64,
    pub r2: f64,
    #[serde(default)]
    pub r3: f64,
}

/// Preset name, path to a preset JSON file, or inline nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScheduleSource {
    Preset(String),
    File { file: PathBuf },
    Inline(FieldSchedule),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSettings {
    pub epsilon: f64,
    /// Overrides r₃ (distributed noise, fountain trap).
    pub r3: Option<f64>,
    /// Overrides r₂ (distributed noise, harmonic trap).
    pub r2: Option<f64>,
}

/// Either explicit values or `"default"` for the figure grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Axis {
    Named(String),
    Values(Vec<f64>),
}

impl Axis {
    fn resolve(&self, field: &str, default: &[f64]) -> Result<Vec<f64>> {
        let v = match self {
            Axis::Named(n) if n == "default" => default.to_vec(),
            Axis::Named(n) => return Err(cfg_err(field, format!("expected a list or \"default\", got \"{n}\""))),
            Axis::Values(v) => v.clone(),
        };
        if v.is_empty() {
            return Err(cfg_err(field, "sweep axis is empty"));
        }
        if v.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(cfg_err(field, "sweep values must be finite and >= 0"));
        }
        Ok(v)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub r3_over_r1: Option<Axis>,
    pub r3: Option<Axis>,
    pub r2: Option<Axis>,
    pub epsilon: Option<Axis>,
}

/// One sweep grid point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepPoint {
    pub r2: f64,
    pub r3: f64,
    pub epsilon: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McCheck {
    /// Haar samples per checked point.
    pub samples: usize,
    /// Number of randomly chosen trace points.
    pub points: usize,
}

impl Default for McCheck {
    fn default() -> Self {
        McCheck { samples: 10_000, points: 20 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrateConfig {
    /// Name of the produced preset (also its file name).
    pub name: String,
    pub search: SearchSpace,
    pub budget: usize,
    /// Gates in the objective; defaults to the top-level gate.
    pub gates: Vec<GateKind>,
    /// Gates run on the winner only to record readout fractions.
    pub readout_gates: Vec<GateKind>,
}

impl Default for CalibrateConfig {
    fn default() -> Self {
        CalibrateConfig {
            name: "calibrated".into(),
            search: SearchSpace::default(),
            budget: 16,
            gates: Vec::new(),
            readout_gates: Vec::new(),
        }
    }
}

/// Sample grid: a point count (uniform on [0, 1]) or explicit s-values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Samples {
    Count(usize),
    Points(Vec<f64>),
}

impl Default for Samples {
    fn default() -> Self {
        Samples::Count(1001)
    }
}

impl Samples {
    pub fn points(&self) -> Vec<f64> {
        match self {
            Samples::Count(n) => {
                let n = (*n).max(2);
                (0..n).map(|k| k as f64 / (n - 1) as f64).collect()
            }
            Samples::Points(p) => p.clone(),
        }
    }
}

fn one() -> f64 {
    1.0
}
fn default_spectral_points() -> usize {
    1001
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Trap preset supplying (r₁, r₂, r₃); exclusive with `couplings`.
    #[serde(default)]
    pub trap: Option<TrapKind>,
    #[serde(default)]
    pub couplings: Option<Couplings>,
    #[serde(default = "one")]
    pub lambda: f64,
    #[serde(default)]
    pub r3_form: R3Form,
    /// Defaults to the shipped preset of the trap.
    #[serde(default)]
    pub schedule: Option<ScheduleSource>,
    #[serde(default = "default_gate")]
    pub gate: GateKind,
    #[serde(default)]
    pub noise: NoiseSettings,
    /// Total time in ħ/λ; exclusive with `t_multiplier`.
    #[serde(default)]
    pub t_total: Option<f64>,
    /// T as a multiple of T_bound; defaults to the preset's multiplier.
    #[serde(default)]
    pub t_multiplier: Option<f64>,
    /// Band for T_bound; defaults to the gate's logical levels.
    #[serde(default)]
    pub t_bound_levels: Option<Vec<usize>>,
    #[serde(default)]
    pub integrator: IntegratorConfig,
    #[serde(default)]
    pub samples: Samples,
    /// Uniform points of the spectral grid (schedule nodes are added).
    #[serde(default = "default_spectral_points")]
    pub spectral_points: usize,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
    #[serde(default)]
    pub mc_check: Option<McCheck>,
    #[serde(default)]
    pub calibrate: Option<CalibrateConfig>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    /// Directory relative paths are resolved against (the config's own).
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_gate() -> GateKind {
    GateKind::H
}

impl ExperimentConfig {
    pub fn from_json(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| cfg_err("<json>", e.to_string()))?;
        cfg.base_dir = base_dir.to_path_buf();
        cfg.fill_defaults();
        cfg.validate()?;
        Ok(cfg)
    }

    fn fill_defaults(&mut self) {
        if self.trap.is_none() && self.couplings.is_none() {
            self.trap = Some(TrapKind::Fountain);
        }
        if self.schedule.is_none() {
            let name = match self.trap {
                Some(TrapKind::Harmonic) => "harmonic-default",
                _ => "fountain-default",
            };
            self.schedule = Some(ScheduleSource::Preset(name.into()));
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.trap.is_some() && self.couplings.is_some() {
            return Err(cfg_err("trap", "give either a trap preset or explicit couplings, not both"));
        }
        if self.t_total.is_some() && self.t_multiplier.is_some() {
            return Err(cfg_err("t_total", "give either t_total or t_multiplier, not both"));
        }
        if let Some(t) = self.t_total {
            if !(t >= 0.0) || !t.is_finite() {
                return Err(cfg_err("t_total", format!("must be finite and >= 0, got {t}")));
            }
        }
        if let Some(m) = self.t_multiplier {
            if !(m > 0.0) || !m.is_finite() {
                return Err(cfg_err("t_multiplier", format!("must be finite and > 0, got {m}")));
            }
        }
        if !(self.noise.epsilon >= 0.0) || !self.noise.epsilon.is_finite() {
            return Err(cfg_err("noise.epsilon", format!("must be finite and >= 0, got {}", self.noise.epsilon)));
        }
        for (f, v) in [("noise.r2", self.noise.r2), ("noise.r3", self.noise.r3)] {
            if let Some(x) = v {
                if !(x >= 0.0) || !x.is_finite() {
                    return Err(cfg_err(f, format!("must be finite and >= 0, got {x}")));
                }
            }
        }
        if let Some(c) = &self.couplings {
            for (f, v) in [("couplings.r1", c.r1), ("couplings.r2", c.r2), ("couplings.r3", c.r3)] {
                if !(v >= 0.0) || !v.is_finite() {
                    return Err(cfg_err(f, format!("must be finite and >= 0, got {v}")));
                }
            }
        }
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return Err(cfg_err("lambda", "must be finite and > 0"));
        }
        if !self.integrator.samples.is_empty() {
            return Err(cfg_err("integrator.samples", "set the top-level `samples` instead"));
        }
        self.integrator.validate().map_err(|e| cfg_err("integrator", e.to_string()))?;
        let pts = self.samples.points();
        if pts.is_empty() || pts.iter().any(|s| !(0.0..=1.0).contains(s)) || pts.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(cfg_err("samples", "sample points must be strictly increasing in [0, 1]"));
        }
        if self.spectral_points < 3 {
            return Err(cfg_err("spectral_points", "need at least 3"));
        }
        if let Some(l) = &self.t_bound_levels {
            if l.is_empty() || l.windows(2).any(|w| w[1] != w[0] + 1) {
                return Err(cfg_err("t_bound_levels", "must be contiguous and ascending"));
            }
        }
        if let Some(m) = &self.mc_check {
            if m.samples == 0 || m.points == 0 {
                return Err(cfg_err("mc_check", "samples and points must be >= 1"));
            }
        }
        if let Some(c) = &self.calibrate {
            if c.budget == 0 {
                return Err(cfg_err("calibrate.budget", "must be >= 1"));
            }
            if c.name.is_empty() || c.name.contains(['/', '\\']) {
                return Err(cfg_err("calibrate.name", "must be a plain file stem"));
            }
        }
        self.sweep_points()?;
        self.schedule_preset()?;
        self.params().validate().map_err(|e| cfg_err("couplings", e.to_string()))?;
        Ok(())
    }

    /// Couplings with noise overrides applied; fields zero.
    pub fn params(&self) -> HamiltonianParams {
        let mut p = match (&self.couplings, self.trap) {
            (Some(c), _) => HamiltonianParams::new(1.0, c.r1, c.r2, c.r3),
            (None, Some(k)) => TrapPreset { kind: k }.params(),
            (None, None) => TrapPreset::fountain().params(),
        };
        p.lambda = self.lambda;
        p.r3_form = self.r3_form;
        if let Some(r3) = self.noise.r3 {
            p.r3 = r3;
        }
        if let Some(r2) = self.noise.r2 {
            p.r2 = r2;
        }
        p
    }

    pub fn noise(&self) -> NoiseConfig {
        NoiseConfig { epsilon: self.noise.epsilon }
    }

    pub fn gate_spec(&self) -> GateSpec {
        GateSpec::of(self.gate)
    }

    pub fn resolve_path(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// The schedule wrapped as a preset (inline schedules get neutral metadata).
    pub fn schedule_preset(&self) -> Result<SchedulePreset> {
        let src = self.schedule.as_ref().ok_or_else(|| cfg_err("schedule", "missing"))?;
        let p = match src {
            ScheduleSource::Preset(name) => schedule::preset(name).map_err(|e| cfg_err("schedule", e.to_string()))?,
            ScheduleSource::File { file } => {
                let path = self.resolve_path(file);
                let text = std::fs::read_to_string(&path)
                    .map_err(|e| cfg_err("schedule.file", format!("{}: {e}", path.display())))?;
                let p: SchedulePreset =
                    serde_json::from_str(&text).map_err(|e| cfg_err("schedule.file", e.to_string()))?;
                p
            }
            ScheduleSource::Inline(s) => SchedulePreset {
                name: "inline".into(),
                schedule: s.clone(),
                s_h: None,
                s_bell: None,
                t_multiplier: 100.0,
                metrics: Default::default(),
            },
        };
        p.schedule.validate().map_err(|e| cfg_err("schedule", e.to_string()))?;
        Ok(p)
    }

    pub fn schedule(&self) -> Result<FieldSchedule> {
        Ok(self.schedule_preset()?.schedule)
    }

    /// Explicit T if given, else the multiplier (config or preset).
    pub fn time_spec(&self) -> Result<TimeSpec> {
        Ok(match (self.t_total, self.t_multiplier) {
            (Some(t), _) => TimeSpec::Total(t),
            (None, Some(m)) => TimeSpec::Multiplier(m),
            (None, None) => TimeSpec::Multiplier(self.schedule_preset()?.t_multiplier),
        })
    }

    pub fn t_bound_levels(&self) -> Vec<usize> {
        self.t_bound_levels.clone().unwrap_or_else(|| (0..self.gate_spec().dim()).collect())
    }

    /// Cartesian product of the sweep axes, or the single configured point.
    pub fn sweep_points(&self) -> Result<Vec<SweepPoint>> {
        let p = self.params();
        let Some(sw) = &self.sweep else {
            return Ok(vec![SweepPoint { r2: p.r2, r3: p.r3, epsilon: self.noise.epsilon }]);
        };
        if sw.r3.is_some() && sw.r3_over_r1.is_some() {
            return Err(cfg_err("sweep.r3", "give either r3 or r3_over_r1, not both"));
        }
        if sw.r3.is_none() && sw.r3_over_r1.is_none() && sw.r2.is_none() && sw.epsilon.is_none() {
            return Err(cfg_err("sweep", "needs at least one axis"));
        }
        let r3s = match (&sw.r3, &sw.r3_over_r1) {
            (Some(a), _) => a.resolve("sweep.r3", &DEFAULT_R3_RATIOS.map(|x| x * p.r1))?,
            (None, Some(a)) => a.resolve("sweep.r3_over_r1", &DEFAULT_R3_RATIOS)?.iter().map(|x| x * p.r1).collect(),
            (None, None) => vec![p.r3],
        };
        let r2s = match &sw.r2 {
            Some(a) => a.resolve("sweep.r2", &[0.0, 0.5])?,
            None => vec![p.r2],
        };
        let eps = match &sw.epsilon {
            Some(a) => a.resolve("sweep.epsilon", &DEFAULT_EPSILONS)?,
            None => vec![self.noise.epsilon],
        };
        let mut out = Vec::new();
        for &r2 in &r2s {
            for &r3 in &r3s {
                for &epsilon in &eps {
                    out.push(SweepPoint { r2, r3, epsilon });
                }
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeSpec {
    Total(f64),
    Multiplier(f64),
}

pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| cfg_err("<file>", format!("{}: {e}", path.display())))?;
    let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    ExperimentConfig::from_json(&text, &dir)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Result<ExperimentConfig> {
        ExperimentConfig::from_json(s, Path::new("."))
    }

    fn field_of(e: Error) -> String {
        match e {
            Error::Config { field, .. } => field,
            other => panic!("expected a config error, got {other}"),
        }
    }

    #[test]
    fn minimal_config_gets_fountain_defaults() {
        let c = parse(r#"{"gate":"h"}"#).unwrap();
        let p = c.params();
        assert_eq!((p.r1, p.r2, p.r3), (10.0, 9.5, 0.0));
        assert_eq!(c.trap, Some(TrapKind::Fountain));
        assert_eq!(c.schedule, Some(ScheduleSource::Preset("fountain-default".into())));
        let s = c.schedule().unwrap();
        assert_eq!((s.ratio1, s.ratio2), (1e-5, 1e-6));
        assert_eq!(c.noise.epsilon, 0.0);
        assert!(matches!(c.time_spec().unwrap(), TimeSpec::Multiplier(_)));
        assert_eq!(c.samples.points().len(), 1001);
    }

    #[test]
    fn exclusive_choices_are_enforced() {
        let e = parse(r#"{"trap":"fountain","couplings":{"r1":10,"r2":9.5}}"#).unwrap_err();
        assert_eq!(field_of(e), "trap");
        let e = parse(r#"{"t_total":10,"t_multiplier":100}"#).unwrap_err();
        assert_eq!(field_of(e), "t_total");
        assert!(parse(r#"{"couplings":{"r1":10,"r2":9.5}}"#).is_ok());
    }

    #[test]
    fn bad_values_name_their_field() {
        assert_eq!(field_of(parse(r#"{"noise":{"epsilon":-0.1}}"#).unwrap_err()), "noise.epsilon");
        assert_eq!(field_of(parse(r#"{"t_total":-1}"#).unwrap_err()), "t_total");
        assert_eq!(field_of(parse(r#"{"samples":[0.5,0.2]}"#).unwrap_err()), "samples");
        assert_eq!(field_of(parse(r#"{"schedule":"nope"}"#).unwrap_err()), "schedule");
        assert_eq!(field_of(parse(r#"{"sweep":{}}"#).unwrap_err()), "sweep");
        assert_eq!(field_of(parse(r#"{"sweep":{"epsilon":"some"}}"#).unwrap_err()), "sweep.epsilon");
        assert_eq!(field_of(parse(r#"{"gate":"cnot"}"#).unwrap_err()), "<json>");
        assert_eq!(field_of(parse(r#"{"gaet":"h"}"#).unwrap_err()), "<json>");
        let e = parse(r#"{"schedule":{"nodes":[{"s":0,"A":0,"B":1},{"s":0.5,"A":0,"B":1}]}}"#).unwrap_err();
        assert_eq!(field_of(e), "schedule");
    }

    #[test]
    fn harmonic_trap_uses_its_own_schedule() {
        let c = parse(r#"{"trap":"harmonic","noise":{"r2":0.5}}"#).unwrap();
        assert_eq!(c.schedule, Some(ScheduleSource::Preset("harmonic-default".into())));
        assert_eq!(c.params().r2, 0.5);
    }

    #[test]
    fn sweeps_expand_to_products() {
        let c = parse(r#"{"gate":"bell","sweep":{"r3_over_r1":"default"}}"#).unwrap();
        let pts = c.sweep_points().unwrap();
        assert_eq!(pts.len(), 10);
        assert!((pts[9].r3 - 9.0).abs() < 1e-12);
        let c = parse(r#"{"sweep":{"r3":[0,0.5],"epsilon":"default"}}"#).unwrap();
        let pts = c.sweep_points().unwrap();
        assert_eq!(pts.len(), 14);
        assert_eq!((pts[7].r3, pts[7].epsilon), (0.5, 0.0));
    }

    #[test]
    fn inline_schedule_and_explicit_time() {
        let c = parse(
            r#"{"schedule":{"nodes":[{"s":0,"A":0,"B":1e5},{"s":1,"A":50,"B":0}],"ratio1":2e-5},
                "t_total":123.0,"samples":11}"#,
        )
        .unwrap();
        let s = c.schedule().unwrap();
        assert_eq!((s.ratio1, s.ratio2), (2e-5, 1e-6));
        assert_eq!(c.time_spec().unwrap(), TimeSpec::Total(123.0));
        assert_eq!(c.samples.points()[1], 0.1);
    }
}
