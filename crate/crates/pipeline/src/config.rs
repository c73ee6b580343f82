//! Run configuration: one TOML file fully determines a run.

use std::path::{Path, PathBuf};

use phasemap_core::autoencoder::{Activation, EPOCH_BUDGET};
use phasemap_core::ctm::CtmSettings;
use phasemap_core::ipeps::SuConfig;
use phasemap_core::mapper::{Axis, FeatureKind, MapperConfig, Region, TrainSettings};
use phasemap_core::model::{Bond, ModelParams};
use serde::{Deserialize, Serialize};

use crate::error::{PipelineError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coupling {
    JPerp,
    JPar,
    JX,
}

impl Coupling {
    pub fn name(self) -> &'static str {
        match self {
            Coupling::JPerp => "j_perp",
            Coupling::JPar => "j_par",
            Coupling::JX => "j_x",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxisSpec {
    pub coupling: Coupling,
    pub start: f64,
    /// Defaults to `start`.
    #[serde(default)]
    pub stop: Option<f64>,
    /// Number of intervals; 0 gives the single value `start`.
    #[serde(default)]
    pub steps: usize,
}

impl AxisSpec {
    /// Evenly spaced values rounded to 10 decimals, so that overlapping
    /// grids produce bit-identical couplings.
    pub fn values(&self) -> Vec<f64> {
        let stop = self.stop.unwrap_or(self.start);
        Axis::linspace("", self.start, stop, self.steps)
            .values
            .into_iter()
            .map(|v| (v * 1e10).round() / 1e10)
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub axis1: AxisSpec,
    pub axis2: AxisSpec,
    /// Couplings not swept by an axis.
    #[serde(default)]
    pub j_perp: f64,
    #[serde(default = "one")]
    pub j_par: f64,
    #[serde(default)]
    pub j_x: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SuSpec {
    pub bond_dim: usize,
    /// Defaults to twice `bond_dim`.
    pub anneal_d: Option<usize>,
    pub anneal_sweeps: usize,
    pub tau_schedule: Vec<f64>,
    pub sweeps_per_tau: usize,
    pub convergence_tol: f64,
    pub max_restarts: usize,
}

impl Default for SuSpec {
    fn default() -> Self {
        let c = SuConfig::new(4, 0);
        Self {
            bond_dim: c.target_d,
            anneal_d: None,
            anneal_sweeps: c.anneal_sweeps,
            tau_schedule: c.tau_schedule,
            sweeps_per_tau: c.sweeps_per_tau,
            convergence_tol: c.convergence_tol,
            max_restarts: c.max_restarts,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CtmSpec {
    /// Defaults to `2·D²`.
    pub chi: Option<usize>,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for CtmSpec {
    fn default() -> Self {
        let s = CtmSettings::for_bond_dim(1);
        Self { chi: None, tol: s.tol, max_iter: s.max_iter }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepMode {
    /// Several candidates per cell, collapsed to the lowest energy.
    PostSelected,
    /// Independent random-start replicas, all kept.
    RandomInit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSpec {
    pub mode: SweepMode,
    /// Random-start runs per cell.
    pub replicas: usize,
    /// Post-selected mode: also continue the neighbouring cells' selected
    /// states along axis 2, in both directions.
    pub warm_start: bool,
    /// Store site tensors (needed for energies and ρ²).
    pub save_states: bool,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self { mode: SweepMode::PostSelected, replicas: 3, warm_start: true, save_states: true }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSpec {
    Lambda,
    Rho2,
}

impl From<FeatureSpec> for FeatureKind {
    fn from(f: FeatureSpec) -> Self {
        match f {
            FeatureSpec::Lambda => FeatureKind::Lambda,
            FeatureSpec::Rho2 => FeatureKind::Rho2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationSpec {
    Softplus,
    Tanh,
    Identity,
}

impl From<ActivationSpec> for Activation {
    fn from(a: ActivationSpec) -> Self {
        match a {
            ActivationSpec::Softplus => Activation::Softplus,
            ActivationSpec::Tanh => Activation::Tanh,
            ActivationSpec::Identity => Activation::Identity,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BondSpec {
    ARight,
    ADown,
    ALeft,
    AUp,
}

impl From<BondSpec> for Bond {
    fn from(b: BondSpec) -> Self {
        match b {
            BondSpec::ARight => Bond::ARight,
            BondSpec::ADown => Bond::ADown,
            BondSpec::ALeft => Bond::ALeft,
            BondSpec::AUp => Bond::AUp,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MapperSpec {
    pub feature: FeatureSpec,
    /// Bond whose ρ² is used for `rho2` features.
    pub rho2_bond: BondSpec,
    pub region_size: usize,
    /// `[i0, i1, j0, j1]`, half-open grid index ranges.
    pub initial_region: Option<[usize; 4]>,
    pub anomaly_threshold: f64,
    pub score_floor: f64,
    pub max_iterations: usize,
    pub hidden: Vec<usize>,
    pub latent: usize,
    pub activation: ActivationSpec,
    pub learning_rate: f64,
    pub epoch_budget: usize,
    pub seed: u64,
}

impl Default for MapperSpec {
    fn default() -> Self {
        let m = MapperConfig::default();
        Self {
            feature: FeatureSpec::Lambda,
            rho2_bond: BondSpec::ARight,
            region_size: m.region_size,
            initial_region: None,
            anomaly_threshold: m.anomaly_threshold,
            score_floor: m.score_floor,
            max_iterations: m.max_iterations,
            hidden: m.train.hidden,
            latent: m.train.latent,
            activation: ActivationSpec::Softplus,
            learning_rate: m.train.learning_rate,
            epoch_budget: EPOCH_BUDGET,
            seed: m.train.seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    pub grid: GridSpec,
    #[serde(default)]
    pub su: SuSpec,
    #[serde(default)]
    pub ctm: CtmSpec,
    #[serde(default)]
    pub sweep: SweepSpec,
    #[serde(default)]
    pub mapper: MapperSpec,
}

fn one() -> f64 {
    1.0
}

fn default_seed() -> u64 {
    1
}

fn default_workers() -> usize {
    1
}

fn default_output() -> PathBuf {
    PathBuf::from("phasemap-out")
}

const MAX_CELLS: usize = 1 << 20;

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(PipelineError::Config(m));
        let g = &self.grid;
        if g.axis1.coupling == g.axis2.coupling {
            return bad("the two grid axes must sweep different couplings".into());
        }
        for (name, a) in [("axis1", &g.axis1), ("axis2", &g.axis2)] {
            if !a.start.is_finite() || !a.stop.unwrap_or(a.start).is_finite() {
                return bad(format!("{name} bounds must be finite"));
            }
            if a.steps > 0 && a.stop.is_none() {
                return bad(format!("{name} has steps but no stop"));
            }
            if a.steps >= MAX_CELLS {
                return bad(format!("{name} has too many steps"));
            }
            let v = a.values();
            if v.windows(2).any(|w| !(w[0] < w[1])) {
                return bad(format!("{name} values must be strictly increasing"));
            }
        }
        if (g.axis1.steps + 1).saturating_mul(g.axis2.steps + 1) > MAX_CELLS {
            return bad("grid too large".into());
        }
        if ![g.j_perp, g.j_par, g.j_x].iter().all(|v| v.is_finite()) {
            return bad("fixed couplings must be finite".into());
        }
        if self.workers == 0 {
            return bad("workers must be positive".into());
        }
        let su = &self.su;
        if su.bond_dim == 0 || su.bond_dim > 16 || su.anneal_d.is_some_and(|d| d == 0 || d > 32) {
            return bad("bond dimensions out of range".into());
        }
        self.su_config(0).validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        if self.ctm.chi == Some(0) || !(self.ctm.tol > 0.0) || self.ctm.max_iter == 0 {
            return bad("ctm chi, tol and max_iter must be positive".into());
        }
        if self.sweep.mode == SweepMode::PostSelected && !self.sweep.save_states {
            return bad("post-selected sweeps need save_states = true".into());
        }
        if self.sweep.replicas == 0 {
            return bad("replicas must be positive".into());
        }
        let m = &self.mapper;
        if m.latent == 0 || m.hidden.iter().any(|&h| h == 0) || m.epoch_budget == 0 || !(m.learning_rate > 0.0) {
            return bad("mapper network settings must be positive".into());
        }
        let shape = self.shape();
        self.mapper_config().validate(shape).map_err(|e| PipelineError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn axes(&self) -> (Axis, Axis) {
        let g = &self.grid;
        (
            Axis::new(g.axis1.coupling.name(), g.axis1.values()),
            Axis::new(g.axis2.coupling.name(), g.axis2.values()),
        )
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.grid.axis1.steps + 1, self.grid.axis2.steps + 1)
    }

    pub fn params_at(&self, i: usize, j: usize) -> ModelParams {
        let g = &self.grid;
        let mut c = [g.j_perp, g.j_par, g.j_x];
        let slot = |k: Coupling| match k {
            Coupling::JPerp => 0,
            Coupling::JPar => 1,
            Coupling::JX => 2,
        };
        c[slot(g.axis1.coupling)] = g.axis1.values()[i];
        c[slot(g.axis2.coupling)] = g.axis2.values()[j];
        ModelParams::new(c[0], c[1], c[2])
    }

    pub fn su_config(&self, seed: u64) -> SuConfig {
        let s = &self.su;
        let mut c = SuConfig::new(s.bond_dim, seed);
        c.anneal_d = s.anneal_d.unwrap_or(2 * s.bond_dim);
        c.anneal_sweeps = s.anneal_sweeps;
        c.tau_schedule = s.tau_schedule.clone();
        c.sweeps_per_tau = s.sweeps_per_tau;
        c.convergence_tol = s.convergence_tol;
        c.max_restarts = s.max_restarts;
        c
    }

    pub fn ctm_settings(&self) -> CtmSettings {
        let d = self.su.bond_dim;
        let base = CtmSettings::for_bond_dim(d);
        CtmSettings { chi: self.ctm.chi.unwrap_or(base.chi), tol: self.ctm.tol, max_iter: self.ctm.max_iter }
    }

    pub fn feature_kind(&self) -> FeatureKind {
        self.mapper.feature.into()
    }

    pub fn mapper_config(&self) -> MapperConfig {
        let m = &self.mapper;
        MapperConfig {
            initial_region: m.initial_region.map(|[i0, i1, j0, j1]| Region::new(i0, i1, j0, j1)),
            region_size: m.region_size,
            anomaly_threshold: m.anomaly_threshold,
            score_floor: m.score_floor,
            max_iterations: m.max_iterations,
            train: TrainSettings {
                hidden: m.hidden.clone(),
                latent: m.latent,
                activation: m.activation.into(),
                learning_rate: m.learning_rate,
                epoch_budget: m.epoch_budget,
                seed: m.seed,
            },
        }
    }

    pub fn store_dir(&self) -> PathBuf {
        self.output.join("store")
    }

    pub fn maps_dir(&self) -> PathBuf {
        self.output.join("maps").join(self.feature_kind().name())
    }

    /// Identifies the optimization settings a stored record was produced with.
    pub fn su_fingerprint(&self) -> String {
        let resolved = SuSpec { anneal_d: Some(self.su.anneal_d.unwrap_or(2 * self.su.bond_dim)), ..self.su.clone() };
        serde_json::to_string(&resolved).expect("serializable")
    }
}
