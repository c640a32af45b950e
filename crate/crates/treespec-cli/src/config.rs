//! Run configuration: JSON schema, dotted-key overrides and validation.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use treespec::inflated::DEFAULT_APEX;
use treespec::operator1d::PotentialProfile;
use treespec::tree::TreeSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreeBlock {
    pub k: usize,
    pub l0: f64,
    pub r: f64,
    pub delta: f64,
    #[serde(rename = "N", default = "default_dimension")]
    pub dimension: usize,
    #[serde(rename = "J")]
    pub depth: usize,
    #[serde(default = "one")]
    pub omega: f64,
}

impl TreeBlock {
    pub fn spec(&self) -> TreeSpec<f64> {
        TreeSpec::new(self.k, self.l0, self.r, self.delta, self.depth)
            .with_dimension(self.dimension)
            .with_cross_section(self.omega)
    }
}

/// Weights of the 1-D operators. Without `zone_eps` both weights are `rho*`;
/// with it, `rho*` is multiplied by the factors on vertex zones of that size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WeightsBlock {
    pub zone_eps: Option<f64>,
    pub stiffness_factor: f64,
    pub mass_factor: f64,
    /// Zone refinements `n` of `converge-weights`.
    pub refinements: Vec<usize>,
}

impl Default for WeightsBlock {
    fn default() -> Self {
        WeightsBlock { zone_eps: None, stiffness_factor: 2.0, mass_factor: 1.0, refinements: vec![4, 8, 16, 32] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeometryBlock {
    pub eps: Vec<f64>,
    pub apex: f64,
    /// Elements across each cross section; each subcommand has its own default.
    pub segments: Option<usize>,
    pub connector_segments: usize,
}

impl Default for GeometryBlock {
    fn default() -> Self {
        GeometryBlock { eps: vec![0.2, 0.1, 0.05], apex: DEFAULT_APEX, segments: None, connector_segments: 8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentBlock {
    pub h: f64,
    pub modes: usize,
    /// Target mode of `project`.
    pub mode: usize,
    pub tol: f64,
    /// Largest accepted final relative error of `converge-weights`.
    pub max_relative_error: f64,
    /// Largest accepted final distance of `project`.
    pub max_distance: f64,
    /// Random samples per eps for the Rayleigh bound check of `sandwich`; needs a seed.
    pub rayleigh_samples: usize,
    pub dump_mesh: bool,
}

impl Default for ExperimentBlock {
    fn default() -> Self {
        ExperimentBlock {
            h: 1.0 / 512.0,
            modes: 5,
            mode: 1,
            tol: 1e-10,
            max_relative_error: 0.02,
            max_distance: 0.05,
            rayleigh_samples: 0,
            dump_mesh: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub tree: TreeBlock,
    #[serde(default)]
    pub weights: WeightsBlock,
    #[serde(default)]
    pub potential: PotentialProfile,
    #[serde(default)]
    pub geometry: GeometryBlock,
    #[serde(default)]
    pub experiment: ExperimentBlock,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    #[serde(default)]
    pub seed: Option<u64>,
    /// Worker threads; all cores when absent.
    #[serde(default)]
    pub threads: Option<usize>,
}

fn default_dimension() -> usize {
    2
}

fn one() -> f64 {
    1.0
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

impl RunConfig {
    pub fn from_value(value: Value) -> Result<Self> {
        let cfg: RunConfig = serde_path_to_error::deserialize(value)
            .map_err(|e| anyhow!("config key `{}`: {}", e.path(), e.inner()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_str_with(text: &str, overrides: &[String]) -> Result<Self> {
        let mut value: Value = serde_json::from_str(text).context("config is not valid JSON")?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        Self::from_value(value)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_str_with(&text, overrides)
    }

    pub fn validate(&self) -> Result<()> {
        self.tree.spec().validate().map_err(|e| anyhow!("config key `tree`: {e}"))?;
        let positive = |x: f64| x > 0.0 && x.is_finite();
        let checks: [(&str, bool); 8] = [
            ("weights.stiffness_factor", positive(self.weights.stiffness_factor)),
            ("weights.mass_factor", positive(self.weights.mass_factor)),
            ("weights.zone_eps", self.weights.zone_eps.is_none_or(positive)),
            ("geometry.eps", !self.geometry.eps.is_empty() && self.geometry.eps.iter().all(|&e| positive(e) && e < 1.0)),
            ("geometry.apex", positive(self.geometry.apex) && self.geometry.apex < 0.5),
            ("experiment.h", positive(self.experiment.h)),
            ("experiment.modes", self.experiment.modes > 0 && self.experiment.mode > 0),
            ("threads", self.threads != Some(0)),
        ];
        if let Some((key, _)) = checks.iter().find(|c| !c.1) {
            bail!("config key `{key}`: value out of range");
        }
        if self.experiment.rayleigh_samples > 0 && self.seed.is_none() {
            bail!("config key `seed`: required when experiment.rayleigh_samples > 0");
        }
        Ok(())
    }

    /// Thread count: TREESPEC_THREADS, then the config key.
    pub fn thread_count(&self) -> Result<Option<usize>> {
        match std::env::var("TREESPEC_THREADS") {
            Ok(v) => {
                let n: usize = v.trim().parse().with_context(|| format!("TREESPEC_THREADS={v:?} is not a count"))?;
                if n == 0 {
                    bail!("TREESPEC_THREADS must be positive");
                }
                Ok(Some(n))
            }
            Err(_) => Ok(self.threads),
        }
    }

    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}

/// `a.b.c=value`; the value is read as JSON and falls back to a string.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| anyhow!("override `{assignment}` is not key=value"))?;
    let parsed = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if part.is_empty() {
            bail!("override key `{key}` has an empty segment");
        }
        let map = match node {
            Value::Object(m) => m,
            Value::Null => {
                *node = Value::Object(Default::default());
                node.as_object_mut().unwrap()
            }
            _ => bail!("override key `{key}`: `{}` is not an object", parts[..i].join(".")),
        };
        if i + 1 == parts.len() {
            map.insert(part.to_string(), parsed);
            return Ok(());
        }
        node = map.entry(part.to_string()).or_insert(Value::Null);
    }
    unreachable!("split yields at least one segment")
}
