//! Piecewise-linear field schedules over scaled time s = t/T.

use serde::{Deserialize, Serialize};

use crate::spin::HamiltonianParams;
use crate::{Error, Result};

pub const DEFAULT_RATIO1: f64 = 1e-5;
pub const DEFAULT_RATIO2: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub s: f64,
    #[serde(rename = "A")]
    pub a: f64,
    #[serde(rename = "B")]
    pub b: f64,
}

impl Node {
    pub fn new(s: f64, a: f64, b: f64) -> Self {
        Node { s, a, b }
    }
}

fn default_ratio1() -> f64 {
    DEFAULT_RATIO1
}
fn default_ratio2() -> f64 {
    DEFAULT_RATIO2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSchedule {
    pub nodes: Vec<Node>,
    #[serde(default = "default_ratio1")]
    pub ratio1: f64,
    #[serde(default = "default_ratio2")]
    pub ratio2: f64,
}

/// Instantaneous (A, B₁, B₂).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fields {
    pub a: f64,
    pub b1: f64,
    pub b2: f64,
}

impl FieldSchedule {
    pub fn new(nodes: Vec<Node>) -> Result<Self> {
        Self::with_ratios(nodes, DEFAULT_RATIO1, DEFAULT_RATIO2)
    }

    pub fn with_ratios(nodes: Vec<Node>, ratio1: f64, ratio2: f64) -> Result<Self> {
        let s = FieldSchedule { nodes, ratio1, ratio2 };
        s.validate()?;
        Ok(s)
    }

    pub fn constant(a: f64, b: f64) -> Self {
        FieldSchedule {
            nodes: vec![Node::new(0.0, a, b), Node::new(1.0, a, b)],
            ratio1: DEFAULT_RATIO1,
            ratio2: DEFAULT_RATIO2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = &self.nodes;
        if n.len() < 2 {
            return Err(Error::InvalidInput("schedule needs at least two nodes".into()));
        }
        if n[0].s != 0.0 || n[n.len() - 1].s != 1.0 {
            return Err(Error::InvalidInput("schedule must start at s=0 and end at s=1".into()));
        }
        if n.windows(2).any(|w| !(w[1].s > w[0].s)) {
            return Err(Error::InvalidInput("schedule node s-values must be strictly increasing".into()));
        }
        if n.iter().any(|x| !x.a.is_finite() || !x.b.is_finite()) {
            return Err(Error::InvalidInput("schedule node values must be finite".into()));
        }
        if !self.ratio1.is_finite() || !self.ratio2.is_finite() {
            return Err(Error::InvalidInput("field ratios must be finite".into()));
        }
        Ok(())
    }

    fn check_s(s: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&s) {
            return Err(Error::InvalidInput(format!("scaled time {s} outside [0, 1]")));
        }
        Ok(())
    }

    /// Segment containing s; at an interior node the segment to its right.
    fn segment(&self, s: f64) -> usize {
        let last = self.nodes.len() - 2;
        match self.nodes.iter().rposition(|n| n.s <= s) {
            Some(k) => k.min(last),
            None => 0,
        }
    }

    pub fn fields_at(&self, s: f64) -> Result<Fields> {
        Self::check_s(s)?;
        let k = self.segment(s);
        let (n0, n1) = (self.nodes[k], self.nodes[k + 1]);
        let t = (s - n0.s) / (n1.s - n0.s);
        let a = n0.a + t * (n1.a - n0.a);
        let b = n0.b + t * (n1.b - n0.b);
        Ok(Fields { a, b1: self.ratio1 * b, b2: self.ratio2 * b })
    }

    pub fn field_slope(&self, s: f64) -> Result<Fields> {
        Self::check_s(s)?;
        let k = self.segment(s);
        let (n0, n1) = (self.nodes[k], self.nodes[k + 1]);
        let ds = n1.s - n0.s;
        let db = (n1.b - n0.b) / ds;
        Ok(Fields { a: (n1.a - n0.a) / ds, b1: self.ratio1 * db, b2: self.ratio2 * db })
    }

    /// Coupling parameters with the instantaneous fields at s.
    pub fn params_at(&self, base: &HamiltonianParams, s: f64) -> Result<HamiltonianParams> {
        let f = self.fields_at(s)?;
        Ok(base.with_fields(f.a, f.b1, f.b2))
    }

    pub fn node_positions(&self) -> Vec<f64> {
        self.nodes.iter().map(|n| n.s).collect()
    }

    pub fn is_constant(&self) -> bool {
        self.nodes.windows(2).all(|w| w[0].a == w[1].a && w[0].b == w[1].b)
    }
}

/// A named, calibrated schedule together with its readout fractions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchedulePreset {
    pub name: String,
    pub schedule: FieldSchedule,
    /// Readout fraction of the 𝓗-gate peak, if that gate was run.
    #[serde(default)]
    pub s_h: Option<f64>,
    /// Readout fraction of the Bell-gate peak, if that gate was run.
    #[serde(default)]
    pub s_bell: Option<f64>,
    /// Evolution time as a multiple of the adiabatic bound.
    pub t_multiplier: f64,
    /// Free-form metrics recorded when the preset was produced.
    #[serde(default)]
    pub metrics: serde_json::Map<String, serde_json::Value>,
}

const FOUNTAIN_DEFAULT: &str = include_str!("../presets/fountain-default.json");
const HARMONIC_DEFAULT: &str = include_str!("../presets/harmonic-default.json");

/// Names of the shipped presets.
pub const PRESET_NAMES: [&str; 2] = ["fountain-default", "harmonic-default"];

pub fn preset(name: &str) -> Result<SchedulePreset> {
    let text = match name {
        "fountain-default" => FOUNTAIN_DEFAULT,
        "harmonic-default" => HARMONIC_DEFAULT,
        _ => return Err(Error::InvalidInput(format!("unknown schedule preset `{name}`"))),
    };
    let p: SchedulePreset = serde_json::from_str(text)?;
    p.schedule.validate()?;
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp() -> FieldSchedule {
        FieldSchedule::new(vec![Node::new(0.0, 0.0, 1e5), Node::new(1.0, 50.0, 0.0)]).unwrap()
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-12 * (1.0 + b.abs())
    }

    #[test]
    fn fields_examples() {
        let s = ramp();
        let f = s.fields_at(0.0).unwrap();
        assert!(close(f.a, 0.0) && close(f.b1, 1.0) && close(f.b2, 0.1));
        let f = s.fields_at(0.5).unwrap();
        assert!(close(f.a, 25.0) && close(f.b1, 0.5) && close(f.b2, 0.05));
        let f = s.fields_at(1.0).unwrap();
        assert!(close(f.a, 50.0) && close(f.b1, 0.0) && close(f.b2, 0.0));
        assert!(s.fields_at(1.5).is_err());
        assert!(s.fields_at(-1e-9).is_err());
    }

    #[test]
    fn slope_examples() {
        for x in [0.0, 0.3, 1.0] {
            let d = ramp().field_slope(x).unwrap();
            assert!(close(d.a, 50.0) && close(d.b1, -1.0) && close(d.b2, -0.1));
        }
        let three = FieldSchedule::new(vec![
            Node::new(0.0, 0.0, 0.0),
            Node::new(0.5, 0.0, 0.0),
            Node::new(1.0, 50.0, 0.0),
        ])
        .unwrap();
        assert_eq!(three.field_slope(0.2).unwrap().a, 0.0);
        assert_eq!(three.field_slope(0.5).unwrap().a, 100.0);
        assert_eq!(three.field_slope(1.0).unwrap().a, 100.0);
        let c = FieldSchedule::constant(3.0, 7.0).field_slope(0.4).unwrap();
        assert_eq!((c.a, c.b1, c.b2), (0.0, 0.0, 0.0));
    }

    #[test]
    fn invalid_schedules() {
        assert!(FieldSchedule::new(vec![Node::new(0.0, 0.0, 0.0)]).is_err());
        assert!(FieldSchedule::new(vec![Node::new(0.1, 0.0, 0.0), Node::new(1.0, 0.0, 0.0)]).is_err());
        assert!(FieldSchedule::new(vec![
            Node::new(0.0, 0.0, 0.0),
            Node::new(0.5, 0.0, 0.0),
            Node::new(0.5, 0.0, 0.0),
            Node::new(1.0, 0.0, 0.0)
        ])
        .is_err());
    }

    #[test]
    fn shipped_presets_are_valid() {
        for name in PRESET_NAMES {
            let p = preset(name).unwrap();
            let n0 = p.schedule.nodes[0];
            assert_eq!(n0.a, 0.0);
            assert!(n0.b > 0.0);
            assert!(p.schedule.ratio1 > p.schedule.ratio2 && p.schedule.ratio2 > 0.0);
        }
        assert!(preset("nope").is_err());
    }
}
