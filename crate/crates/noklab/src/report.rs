//! Run reports and trajectory exports.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use noklab_core::{DescentReport, Trajectory};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;

use crate::error::Result;
use crate::io;

pub const REPORT_VERSION: &str = "1";

/// JSON has no infinities; non-finite reals are written as strings.
pub fn real(v: f64) -> Value {
    if v.is_finite() {
        Value::from(v)
    } else if v.is_nan() {
        Value::from("NaN")
    } else if v > 0.0 {
        Value::from("inf")
    } else {
        Value::from("-inf")
    }
}

pub fn reals(vs: &[f64]) -> Value {
    Value::Array(vs.iter().map(|v| real(*v)).collect())
}

fn ser_real<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    real(*v).serialize(s)
}

fn de_real<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    match Value::deserialize(d)? {
        Value::Number(n) => n.as_f64().ok_or_else(|| serde::de::Error::custom("bad number")),
        Value::String(s) => match s.as_str() {
            "inf" => Ok(f64::INFINITY),
            "-inf" => Ok(f64::NEG_INFINITY),
            "NaN" => Ok(f64::NAN),
            _ => Err(serde::de::Error::custom(format!("expected a real, got {s:?}"))),
        },
        other => Err(serde::de::Error::custom(format!("expected a real, got {other}"))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    #[serde(serialize_with = "ser_real", deserialize_with = "de_real")]
    pub max_violation: f64,
    #[serde(serialize_with = "ser_real", deserialize_with = "de_real")]
    pub tolerance: f64,
}

impl Check {
    pub fn from_descent(name: impl Into<String>, r: &DescentReport) -> Self {
        // the identity tolerance is reported through the violation when it fails
        let identity_excess = r.max_identity_gap - r.identity_tolerance;
        let max_violation = if identity_excess > 0.0 {
            r.max_violation.max(r.tolerance + identity_excess)
        } else {
            r.max_violation
        };
        Self {
            name: name.into(),
            passed: r.passed,
            max_violation,
            tolerance: r.tolerance,
        }
    }

    pub fn summary(&self) -> String {
        format!(
            "{} {} max_violation={:.6e} tolerance={:.6e}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.max_violation,
            self.tolerance
        )
    }
}

/// `{"version", "config", "checks", "traces", "bounds", "timestamp"}`. Maps are
/// ordered so the output is byte-stable apart from `timestamp`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub version: String,
    pub config: Value,
    pub checks: Vec<Check>,
    pub traces: BTreeMap<String, Value>,
    pub bounds: BTreeMap<String, Value>,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
}

impl Report {
    pub fn new(config: Value) -> Self {
        let timestamp = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        Self {
            version: REPORT_VERSION.into(),
            config,
            checks: Vec::new(),
            traces: BTreeMap::new(),
            bounds: BTreeMap::new(),
            timestamp,
        }
    }

    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn bound(&mut self, name: &str, v: f64) {
        self.bounds.insert(name.into(), real(v));
    }

    pub fn trace(&mut self, name: &str, v: Value) {
        self.traces.insert(name.into(), v);
    }

    pub fn to_json(&self) -> String {
        io::to_json_string(self)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        io::write_json(path, self)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        io::read_json(path)
    }
}

/// `{"Q": [...], "violations": [...], "passed": bool}`.
pub fn trajectory_json(traj: &Trajectory, check: &DescentReport) -> Value {
    serde_json::json!({
        "Q": reals(&traj.objectives),
        "violations": reals(&check.violations),
        "passed": check.passed,
    })
}

/// One row per iterate: `t, y_1, ..., y_N`.
pub fn write_iterates(path: impl AsRef<Path>, traj: &Trajectory) -> Result<()> {
    let n = traj.iterates.first().map_or(0, |y| y.len());
    let header: Vec<String> = std::iter::once("t".to_string())
        .chain((1..=n).map(|i| format!("y{i}")))
        .collect();
    let rows = traj
        .iterates
        .iter()
        .enumerate()
        .map(|(t, y)| std::iter::once(t as f64).chain(y.iter().copied()).collect());
    io::write_rows(path, Some(&header), rows)
}
