//! JSON descriptions of designs, penalties and runs.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use noklab_core::engine::Tolerances;
use noklab_core::{Family, Penalty, StructuredDesign};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::io;

/// `{"n", "m", "lambda_set", "seed_or_null"}`. `B` itself is never stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignSpec {
    pub n: usize,
    pub m: usize,
    /// Optional on input; checked against the closed form when present.
    #[serde(default)]
    pub lambda_set: Option<Vec<u64>>,
    #[serde(default, alias = "seed")]
    pub seed_or_null: Option<u64>,
}

impl Default for DesignSpec {
    fn default() -> Self {
        Self {
            n: 13,
            m: 4,
            lambda_set: None,
            seed_or_null: None,
        }
    }
}

impl DesignSpec {
    pub fn from_design(design: &StructuredDesign) -> Self {
        Self {
            n: design.n(),
            m: design.m(),
            lambda_set: Some(design.lambda_set().to_vec()),
            seed_or_null: design.seed(),
        }
    }

    pub fn build(&self) -> Result<Arc<StructuredDesign>> {
        let design = match &self.lambda_set {
            Some(set) => StructuredDesign::from_parts(self.n, self.m, set, self.seed_or_null)?,
            None => {
                let base = StructuredDesign::new(self.n, self.m)?;
                match self.seed_or_null {
                    Some(s) => noklab_core::sampler::randomize_design(&base, s),
                    None => base,
                }
            }
        };
        Ok(Arc::new(design))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        io::read_json(path)
    }
}

/// `{"family", "lambda", "gamma"?, "k"?}`. `"relu"` is accepted for the
/// nonnegative indicator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PenaltySpec {
    pub family: String,
    #[serde(default)]
    pub lambda: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
}

impl Default for PenaltySpec {
    fn default() -> Self {
        Self {
            family: "L1".into(),
            lambda: 0.1,
            gamma: None,
            k: None,
        }
    }
}

impl PenaltySpec {
    pub fn from_penalty(p: &Penalty) -> Self {
        Self {
            family: p.family().name().into(),
            lambda: p.lambda(),
            gamma: p.gamma(),
            k: p.k(),
        }
    }

    pub fn build(&self) -> Result<Penalty> {
        let family = if self.family.eq_ignore_ascii_case("relu") {
            Family::IndicatorNonneg
        } else {
            Family::from_name(&self.family)
                .ok_or_else(|| Error::Usage(format!("unknown penalty family {:?}", self.family)))?
        };
        Ok(Penalty::new(family, self.lambda, self.gamma, self.k)?)
    }
}

/// Input gain `g` in `g W^T x`: `1` or `"inv_sqrt_N"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InputGain {
    #[default]
    One,
    InvSqrtN,
}

impl InputGain {
    pub fn value(self, samples: usize) -> f64 {
        match self {
            InputGain::One => 1.0,
            InputGain::InvSqrtN => 1.0 / (samples as f64).sqrt(),
        }
    }
}

impl Serialize for InputGain {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            InputGain::One => s.serialize_u8(1),
            InputGain::InvSqrtN => s.serialize_str("inv_sqrt_N"),
        }
    }
}

impl<'de> Deserialize<'de> for InputGain {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Name(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) if v == 1.0 => Ok(InputGain::One),
            Repr::Name(s) if s == "inv_sqrt_N" => Ok(InputGain::InvSqrtN),
            _ => Err(serde::de::Error::custom("input_gain must be 1 or \"inv_sqrt_N\"")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToleranceSpec {
    pub descent: f64,
    pub identity: f64,
    pub rate: f64,
}

impl Default for ToleranceSpec {
    fn default() -> Self {
        let t = Tolerances::default();
        Self {
            descent: t.descent,
            identity: t.identity,
            rate: t.rate,
        }
    }
}

impl ToleranceSpec {
    pub fn to_core(self) -> Tolerances {
        Tolerances {
            descent: self.descent,
            identity: self.identity,
            rate: self.rate,
        }
    }
}

/// Optional artifact paths. The report itself goes to `--out`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Outputs {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trajectory: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iterates: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gram: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rotation: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub codes: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<PathBuf>,
}

/// Everything a command needs besides its data file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub design: DesignSpec,
    pub penalty: PenaltySpec,
    #[serde(rename = "T")]
    pub steps: usize,
    #[serde(rename = "T1")]
    pub inner_steps: usize,
    #[serde(rename = "T2")]
    pub phases: usize,
    pub input_gain: InputGain,
    pub tolerances: ToleranceSpec,
    pub outputs: Outputs,
    pub seed: u64,
    /// Random instances per verification suite.
    pub trials: usize,
    /// Samples drawn when no data file is given.
    pub samples: usize,
    /// Sparsity level for the k-sparse suite when the penalty is not top-k.
    pub k: usize,
    /// Kernel ridge strength.
    pub ridge: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            design: DesignSpec::default(),
            penalty: PenaltySpec::default(),
            steps: 50,
            inner_steps: 5,
            phases: 10,
            input_gain: InputGain::One,
            tolerances: ToleranceSpec::default(),
            outputs: Outputs::default(),
            seed: 0,
            trials: 5,
            samples: 20,
            k: 1,
            ridge: 1e-3,
        }
    }
}

impl RunConfig {
    /// Loads and validates; cross-field errors such as `m` not dividing `n - 1`
    /// surface here.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let cfg: RunConfig = io::read_json(path)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.design.build()?;
        self.penalty.build()?;
        if self.inner_steps == 0 {
            return Err(Error::Usage("T1 must be at least 1".into()));
        }
        if self.trials == 0 || self.samples == 0 {
            return Err(Error::Usage("trials and samples must be positive".into()));
        }
        let t = self.tolerances;
        if [t.descent, t.identity, t.rate].iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::Usage("tolerances must be nonnegative".into()));
        }
        if !(self.ridge >= 0.0 && self.ridge.is_finite()) {
            return Err(Error::Usage("ridge must be nonnegative".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn design_json_round_trip() {
        let d = StructuredDesign::new(13, 4).unwrap();
        let spec = DesignSpec::from_design(&d);
        let text = serde_json::to_string(&spec).unwrap();
        assert_eq!(text, r#"{"n":13,"m":4,"lambda_set":[1,5,8,12],"seed_or_null":null}"#);
        let back: DesignSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(back.build().unwrap().matrix(), d.matrix());
        let wrong: DesignSpec = serde_json::from_str(r#"{"n":13,"m":4,"lambda_set":[1,2,3,4]}"#).unwrap();
        assert!(wrong.build().is_err());
    }

    #[test]
    fn penalty_json() {
        let p: PenaltySpec = serde_json::from_str(r#"{"family":"scad","lambda":0.5,"gamma":3.7}"#).unwrap();
        assert_eq!(p.build().unwrap(), Penalty::scad(0.5, 3.7).unwrap());
        let relu: PenaltySpec = serde_json::from_str(r#"{"family":"relu"}"#).unwrap();
        assert_eq!(relu.build().unwrap(), Penalty::relu());
        let text = serde_json::to_string(&PenaltySpec::from_penalty(&Penalty::top_k(3).unwrap())).unwrap();
        assert_eq!(text, r#"{"family":"TopK","lambda":0.0,"k":3}"#);
        let bad: PenaltySpec = serde_json::from_str(r#"{"family":"mcp","lambda":0.5,"gamma":0.5}"#).unwrap();
        assert!(bad.build().is_err());
    }

    #[test]
    fn run_config_defaults_and_gain() {
        let cfg: RunConfig = serde_json::from_str(r#"{"input_gain":"inv_sqrt_N","T":7}"#).unwrap();
        assert_eq!(cfg.input_gain, InputGain::InvSqrtN);
        assert_eq!(cfg.steps, 7);
        assert_eq!(cfg.inner_steps, 5);
        let cfg: RunConfig = serde_json::from_str(r#"{"input_gain":1}"#).unwrap();
        assert_eq!(cfg.input_gain, InputGain::One);
        assert!(serde_json::from_str::<RunConfig>(r#"{"input_gain":2}"#).is_err());
        assert!(serde_json::from_str::<RunConfig>(r#"{"unknown":2}"#).is_err());
        let cfg: RunConfig = serde_json::from_str(r#"{"design":{"n":13,"m":5}}"#).unwrap();
        assert!(cfg.validate().unwrap_err().to_string().contains("m must divide n−1"));
    }
}
