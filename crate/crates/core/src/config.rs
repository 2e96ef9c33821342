//! TOML configuration: parsing, key=value overrides, canonical digest, and
//! conversion into [`ModelParams`].

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::kmt::CouplerMethod;
use crate::model::{InitLaw, JumpLaw, ModelParams, RateFunction, RateKind};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub alpha: f64,
    pub n_neurons: usize,
    pub horizon: f64,
    pub epsilon: f64,
    /// Coupling grid step; omit to use (ln N)^{4/5} N^{-2/5}.
    pub delta: Option<f64>,
    pub substeps_per_delta: usize,
    pub seed: u64,
    pub coupler: CouplerMethod,
    pub aux_freeze_per_delta: bool,
    pub f: RateSpec,
    pub nu: NuSpec,
    pub nu0: Nu0Spec,
    pub experiment: ExperimentSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RateSpec {
    pub kind: RateKind,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NuSpec {
    pub kind: String,
    pub support: Option<Vec<f64>>,
    pub probs: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Nu0Spec {
    pub kind: String,
    pub std: Option<f64>,
    pub value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSpec {
    pub n_values: Vec<usize>,
    pub replicates: u64,
}

impl Default for Config {
    fn default() -> Self {
        let p = ModelParams::default();
        Config {
            alpha: p.alpha,
            n_neurons: p.n_neurons,
            horizon: p.horizon,
            epsilon: p.epsilon,
            delta: None,
            substeps_per_delta: p.substeps_per_delta,
            seed: p.base_seed,
            coupler: p.coupler,
            aux_freeze_per_delta: false,
            f: RateSpec::default(),
            nu: NuSpec::default(),
            nu0: Nu0Spec::default(),
            experiment: ExperimentSpec::default(),
        }
    }
}

impl Default for RateSpec {
    fn default() -> Self {
        RateSpec { kind: RateKind::CauchyBump, min: 1.0, max: 2.0 }
    }
}

impl Default for NuSpec {
    fn default() -> Self {
        NuSpec { kind: "rademacher".into(), support: None, probs: None }
    }
}

impl Default for Nu0Spec {
    fn default() -> Self {
        Nu0Spec { kind: "uniform".into(), std: None, value: None }
    }
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec { n_values: vec![64, 128, 256, 512, 1024], replicates: 200 }
    }
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        let value: toml::Value =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Self::from_value(value)
    }

    fn from_value(value: toml::Value) -> Result<Self> {
        value.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))
    }

    /// Applies repeatable `--set key=value` overrides. Keys are dotted TOML
    /// paths (`f.min=0.5`), values parsed as TOML scalars or arrays.
    pub fn apply_overrides(self, overrides: &[String]) -> Result<Self> {
        let mut value = toml::Value::try_from(&self).map_err(|e| Error::Config(e.to_string()))?;
        for entry in overrides {
            let (key, raw) = entry
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{entry}` is not key=value")))?;
            let parsed: toml::Value = toml::from_str(&format!("v = {raw}"))
                .or_else(|_| toml::from_str(&format!("v = \"{raw}\"")))
                .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
            let parsed = parsed["v"].clone();
            let mut node = &mut value;
            let parts: Vec<&str> = key.split('.').collect();
            for part in &parts[..parts.len() - 1] {
                node = node
                    .as_table_mut()
                    .ok_or_else(|| Error::Config(format!("`{key}` path through non-table")))?
                    .entry(part.to_string())
                    .or_insert(toml::Value::Table(Default::default()));
            }
            node.as_table_mut()
                .ok_or_else(|| Error::Config(format!("`{key}` path through non-table")))?
                .insert(parts.last().unwrap().to_string(), parsed);
        }
        Self::from_value(value)
    }

    /// Stable hex digest of the canonicalized config, used to name artifact
    /// directories.
    pub fn digest(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        let hash = Sha256::digest(canonical.as_bytes());
        hash.iter().take(6).map(|b| format!("{b:02x}")).collect()
    }

    pub fn to_params(&self) -> Result<ModelParams> {
        let jump_law = match self.nu.kind.as_str() {
            "rademacher" => JumpLaw::Rademacher,
            "standard-gaussian" => JumpLaw::StandardGaussian,
            "lattice" => JumpLaw::Lattice {
                support: self
                    .nu
                    .support
                    .clone()
                    .ok_or_else(|| Error::Config("nu.kind=lattice needs nu.support".into()))?,
                probs: self
                    .nu
                    .probs
                    .clone()
                    .ok_or_else(|| Error::Config("nu.kind=lattice needs nu.probs".into()))?,
            },
            other => return Err(Error::Config(format!("unknown nu.kind `{other}`"))),
        };
        let init_law = match self.nu0.kind.as_str() {
            "uniform" => InitLaw::Uniform,
            "gaussian" => InitLaw::Gaussian { std: self.nu0.std.unwrap_or(1.0) },
            "point-mass" => InitLaw::PointMass { value: self.nu0.value.unwrap_or(0.0) },
            other => return Err(Error::Config(format!("unknown nu0.kind `{other}`"))),
        };
        let params = ModelParams {
            alpha: self.alpha,
            n_neurons: self.n_neurons,
            rate_fn: RateFunction { kind: self.f.kind, f_min: self.f.min, f_max: self.f.max },
            jump_law,
            init_law,
            epsilon: self.epsilon,
            horizon: self.horizon,
            delta: self.delta,
            substeps_per_delta: self.substeps_per_delta,
            base_seed: self.seed,
            coupler: self.coupler,
            aux_freeze_per_delta: self.aux_freeze_per_delta,
        };
        params.check_structure()?;
        Ok(params)
    }
}
