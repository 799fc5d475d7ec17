//! Run configuration. Every field has the library default; a JSON file given
//! with `--config` overrides any subset, and command-line flags override both.

use std::path::{Path, PathBuf};

use moser_core::cube::DmOptions;
use moser_core::torus::{ParametricOptions, TorusOptions};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{CliError, CliResult};
use crate::format::read_json;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Recorded only; the numerical core runs on one thread.
    pub threads: Option<usize>,
    pub cube: CubeConfig,
    pub sweep: SweepConfig,
    pub torus: TorusConfig,
    pub smooth: SmoothConfig,
    pub metric: MetricConfig,
}

/// Cube solve. Without `f` and `g` files the interior-bump instance is built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CubeConfig {
    pub f: Option<PathBuf>,
    pub g: Option<PathBuf>,
    pub res: usize,
    pub amp: f64,
    pub eta: f64,
    pub eps0: f64,
    pub root_tol: f64,
    pub mass_tol: f64,
    pub fiber_tol: f64,
    pub support_tol: f64,
    pub enforce_epsilon: bool,
    pub metric_atoms: usize,
    pub mc_samples: usize,
    pub boxes: usize,
}

impl Default for CubeConfig {
    fn default() -> Self {
        let d = DmOptions::default();
        CubeConfig {
            f: None,
            g: None,
            res: 129,
            amp: 0.2,
            eta: 0.1,
            eps0: 0.3,
            root_tol: d.root_tol,
            mass_tol: d.mass_tol,
            fiber_tol: d.fiber_tol,
            support_tol: d.support_tol,
            enforce_epsilon: d.enforce_epsilon,
            metric_atoms: d.metric_atoms,
            mc_samples: d.mc_samples,
            boxes: d.boxes,
        }
    }
}

impl CubeConfig {
    pub fn options(&self, seed: u64) -> DmOptions {
        DmOptions {
            root_tol: self.root_tol,
            mass_tol: self.mass_tol,
            fiber_tol: self.fiber_tol,
            support_tol: self.support_tol,
            enforce_epsilon: self.enforce_epsilon,
            metric_atoms: self.metric_atoms,
            mc_samples: self.mc_samples,
            boxes: self.boxes,
            seed,
            warm_start: None,
        }
    }
}

/// `f_ε = (1 − ε) g + ε f` over the listed `ε`, on the cube instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub eps: Vec<f64>,
    pub metric_atoms: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig { eps: vec![1.0, 0.5, 0.25, 0.125, 0.0625], metric_atoms: 2000 }
    }
}

/// Torus solve. Without files, `sigma = 1 + amp sin sin` and `tau = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TorusConfig {
    pub sigma: Option<PathBuf>,
    pub tau: Option<PathBuf>,
    pub res: usize,
    pub amp: f64,
    pub charts_per_axis: usize,
    pub eta: f64,
    pub chart_res: Option<usize>,
    pub eps0: f64,
}

impl Default for TorusConfig {
    fn default() -> Self {
        let t = TorusOptions::default();
        TorusConfig { sigma: None, tau: None, res: 64, amp: 0.1, charts_per_axis: 2, eta: 0.1, chart_res: t.chart_res, eps0: t.eps0 }
    }
}

impl TorusConfig {
    pub fn options(&self) -> TorusOptions {
        TorusOptions { chart_res: self.chart_res, eps0: self.eps0, ..TorusOptions::default() }
    }
}

/// Smoothing. Without files the sheared cellular-flow map (or its isotopy
/// `t ↦ h_t` with `flow·t`, `shear·t`) is sampled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmoothConfig {
    pub homeo: Option<PathBuf>,
    pub members: Vec<PathBuf>,
    pub res: usize,
    pub flow: f64,
    pub shear: f64,
    pub count: usize,
    pub scale: f64,
    /// Box-discrepancy tolerance on the input; `8 / res` when absent.
    pub area_tol: Option<f64>,
    pub max_step: f64,
    pub metric_atoms: usize,
    pub step_bound: f64,
    pub max_refinements: usize,
}

impl Default for SmoothConfig {
    fn default() -> Self {
        let p = ParametricOptions::default();
        SmoothConfig {
            homeo: None,
            members: Vec::new(),
            res: 128,
            flow: 0.05,
            shear: 0.03,
            count: 6,
            scale: 0.04,
            area_tol: None,
            max_step: 0.05,
            metric_atoms: p.metric_atoms,
            step_bound: p.step_bound,
            max_refinements: p.max_refinements,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DomainKind {
    Cube,
    Torus,
}

/// Inputs are CSV measures or density manifests (`.json`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricConfig {
    pub a: Option<PathBuf>,
    pub b: Option<PathBuf>,
    pub domain: DomainKind,
    pub side: f64,
    pub lid_b: f64,
    pub atom_cap: usize,
    /// Lattice resolution for the box discrepancy of CSV measures.
    pub box_res: usize,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig {
            a: None,
            b: None,
            domain: DomainKind::Cube,
            side: 1.0,
            lid_b: 1.0,
            atom_cap: moser_core::measure::DEFAULT_ATOM_CAP,
            box_res: 65,
        }
    }
}

/// The resolved config and the dotted keys that differ from the defaults' source.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Resolved {
    pub config: RunConfig,
    pub overrides: Vec<String>,
}

fn leaves(prefix: &str, v: &Value, out: &mut Vec<String>) {
    match v {
        Value::Object(map) => {
            for (k, child) in map {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                leaves(&key, child, out);
            }
        }
        _ => out.push(prefix.to_string()),
    }
}

impl Resolved {
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        let Some(path) = path else {
            return Ok(Resolved { config: RunConfig::default(), overrides: Vec::new() });
        };
        let raw: Value = read_json(path)?;
        let mut overrides = Vec::new();
        leaves("", &raw, &mut overrides);
        let mut config: RunConfig = serde_json::from_value(raw).map_err(|e| CliError::format(path, e))?;
        // relative inputs resolve against the config file's directory
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(q) = p {
                if q.is_relative() {
                    *q = base.join(&*q);
                }
            }
        };
        fix(&mut config.cube.f);
        fix(&mut config.cube.g);
        fix(&mut config.torus.sigma);
        fix(&mut config.torus.tau);
        fix(&mut config.smooth.homeo);
        fix(&mut config.metric.a);
        fix(&mut config.metric.b);
        for m in &mut config.smooth.members {
            if m.is_relative() {
                *m = base.join(&*m);
            }
        }
        Ok(Resolved { config, overrides })
    }

    pub fn record(&mut self, key: &str) {
        if !self.overrides.iter().any(|k| k == key) {
            self.overrides.push(key.to_string());
        }
    }
}
