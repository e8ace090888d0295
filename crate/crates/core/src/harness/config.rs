//! Scenario configuration, read from TOML.
//!
//! ```toml
//! [geometry]
//! kind = "disk"            # or "cylinder" with `height`
//! radius = 0.1
//!
//! [mesh]
//! target_edge = 0.005
//! boundary_edge = 0.0024   # optional
//! grading = 0.3            # optional
//! conforming = true        # boundary nodes at electrode ends
//!
//! [electrodes]
//! per_layer = 16
//! layers = 1
//! width = 0.024            # rad
//! height = 0.012           # cylinder only
//! impedance = 0.1
//!
//! [current]
//! values = [ ... ]         # one per electrode, or per layer with replicate_layers
//! replicate_layers = false
//!
//! [phantom]
//! background = 0.2
//! [[phantom.inclusions]]
//! center = [0.0, -0.05]
//! radius = 0.03
//! value = 0.4
//!
//! [initial]
//! sigma = 0.3
//! voltages = "alternating" # "zero", or an explicit list
//! warm_start = "run0"      # optional directory of a previous run
//!
//! [gpm]
//! beta = 0.0
//! mu = 0.05
//! upper = 1.0
//! epsilon = 1e-6
//! max_iterations = 250
//! rotations = 16           # optional, defaults to the electrode count
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::electrode_model::Pattern;
use crate::error::{Error, Result};
use crate::fem::Bounds;
use crate::gpm::GpmConfig;
use crate::gradient::InitialStep;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub geometry: Geometry,
    pub mesh: MeshConfig,
    pub electrodes: ElectrodeConfig,
    pub current: CurrentConfig,
    pub phantom: Phantom,
    pub initial: InitialConfig,
    pub gpm: GpmSection,
    #[serde(default)]
    pub measurements: MeasurementConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Geometry {
    Disk { radius: f64 },
    Cylinder { radius: f64, height: f64 },
}

impl Geometry {
    pub fn dim(&self) -> usize {
        match self {
            Geometry::Disk { .. } => 2,
            Geometry::Cylinder { .. } => 3,
        }
    }

    pub fn radius(&self) -> f64 {
        match *self {
            Geometry::Disk { radius } | Geometry::Cylinder { radius, .. } => radius,
        }
    }

    /// Whether `p` lies strictly inside the domain.
    pub fn contains(&self, p: &[f64]) -> bool {
        match *self {
            Geometry::Disk { radius } => p.len() == 2 && p[0].hypot(p[1]) < radius,
            Geometry::Cylinder { radius, height } => {
                p.len() == 3 && p[0].hypot(p[1]) < radius && p[2] > 0.0 && p[2] < height
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshConfig {
    pub target_edge: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boundary_edge: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grading: Option<f64>,
    #[serde(default = "yes")]
    pub conforming: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ElectrodeConfig {
    pub per_layer: usize,
    #[serde(default = "one")]
    pub layers: usize,
    pub width: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub height: Option<f64>,
    pub impedance: f64,
}

impl ElectrodeConfig {
    pub fn count(&self) -> usize {
        self.per_layer * self.layers
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurrentConfig {
    pub values: Vec<f64>,
    #[serde(default)]
    pub replicate_layers: bool,
}

/// Background conductivity with ball-shaped inclusions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Phantom {
    pub background: f64,
    #[serde(default)]
    pub inclusions: Vec<Inclusion>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Inclusion {
    pub center: Vec<f64>,
    pub radius: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialConfig {
    pub sigma: f64,
    pub voltages: InitialVoltages,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warm_start: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InitialVoltages {
    Preset(VoltagePreset),
    Explicit(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VoltagePreset {
    /// `U_l = 1` for even `l`, `-1` for odd `l` (1-based).
    Alternating,
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GpmSection {
    pub beta: f64,
    pub mu: f64,
    pub upper: f64,
    pub epsilon: f64,
    pub max_iterations: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rotations: Option<usize>,
    #[serde(default = "one_percent")]
    pub sigma_step_fraction: f64,
    #[serde(default = "one_percent")]
    pub voltage_step_fraction: f64,
    #[serde(default = "step_cap")]
    pub max_step_factor: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasurementConfig {
    /// Standard deviation of additive Gaussian noise on the currents.
    #[serde(default)]
    pub noise_std: f64,
    #[serde(default)]
    pub noise_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// Fill the `wall_ms` column of `history.csv`.
    #[serde(default)]
    pub record_wall_time: bool,
}

fn yes() -> bool {
    true
}
fn one() -> usize {
    1
}
fn one_percent() -> f64 {
    0.01
}
fn step_cap() -> f64 {
    1e6
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut config = Self::from_toml(&text)?;
        if let (Some(ws), Some(dir)) = (&config.initial.warm_start, path.parent()) {
            if ws.is_relative() {
                config.initial.warm_start = Some(dir.join(ws));
            }
        }
        Ok(config)
    }

    pub fn electrode_count(&self) -> usize {
        self.electrodes.count()
    }

    pub fn bounds(&self) -> Result<Bounds> {
        Bounds::new(self.gpm.mu, self.gpm.upper)
    }

    pub fn rotations(&self) -> usize {
        self.gpm.rotations.unwrap_or(self.electrode_count())
    }

    pub fn gpm_config(&self) -> Result<GpmConfig> {
        let config = GpmConfig {
            beta: self.gpm.beta,
            bounds: self.bounds()?,
            epsilon: self.gpm.epsilon,
            max_iterations: self.gpm.max_iterations,
            rotations: self.rotations(),
            initial_step: InitialStep {
                sigma_fraction: self.gpm.sigma_step_fraction,
                voltage_fraction: self.gpm.voltage_step_fraction,
                max_factor: self.gpm.max_step_factor,
            },
        };
        config.validate(self.electrode_count())?;
        Ok(config)
    }

    /// The current pattern with one value per electrode.
    pub fn current_pattern(&self) -> Result<Pattern> {
        let m = self.electrode_count();
        let values = if self.current.replicate_layers {
            if self.current.values.len() != self.electrodes.per_layer {
                return Err(Error::InvalidInput(format!(
                    "replicated current pattern needs {} values, got {}",
                    self.electrodes.per_layer,
                    self.current.values.len()
                )));
            }
            self.current.values.repeat(self.electrodes.layers)
        } else {
            self.current.values.clone()
        };
        if values.len() != m {
            return Err(Error::InvalidInput(format!(
                "current pattern needs {m} values, got {}",
                values.len()
            )));
        }
        Pattern::current(values)
    }

    /// Initial voltages from the preset or explicit list.
    pub fn initial_voltages(&self) -> Result<Vec<f64>> {
        let m = self.electrode_count();
        let values = match &self.initial.voltages {
            InitialVoltages::Preset(VoltagePreset::Alternating) => {
                (1..=m).map(|l| if l % 2 == 0 { 1.0 } else { -1.0 }).collect()
            }
            InitialVoltages::Preset(VoltagePreset::Zero) => vec![0.0; m],
            InitialVoltages::Explicit(v) => v.clone(),
        };
        if values.len() != m {
            return Err(Error::InvalidInput(format!(
                "initial voltages need {m} values, got {}",
                values.len()
            )));
        }
        if !Pattern::voltage(values.clone()).is_grounded() {
            return Err(Error::InvalidInput("initial voltages must sum to zero".into()));
        }
        Ok(values)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidInput(msg));
        match self.geometry {
            Geometry::Disk { radius } if !(radius > 0.0) => return bad(format!("radius {radius}")),
            Geometry::Cylinder { radius, height } if !(radius > 0.0 && height > 0.0) => {
                return bad(format!("cylinder {radius} x {height}"))
            }
            _ => {}
        }
        let dim = self.geometry.dim();
        let el = &self.electrodes;
        if dim == 2 && el.layers != 1 {
            return bad("a disk has exactly one electrode layer".into());
        }
        if dim == 3 && el.height.is_none() {
            return bad("cylinder electrodes need a height".into());
        }
        if el.count() < 2 {
            return bad("need at least two electrodes".into());
        }
        let bounds = self.bounds()?;
        self.gpm_config()?;
        self.current_pattern()?;
        self.initial_voltages()?;
        if !bounds.contains(self.initial.sigma) {
            return bad(format!("initial conductivity {} outside bounds", self.initial.sigma));
        }
        self.phantom.validate(&self.geometry, bounds)?;
        if !(self.measurements.noise_std >= 0.0) {
            return bad("noise standard deviation must be >= 0".into());
        }
        Ok(())
    }
}

impl Phantom {
    pub fn uniform(background: f64) -> Self {
        Phantom {
            background,
            inclusions: Vec::new(),
        }
    }

    pub fn validate(&self, geometry: &Geometry, bounds: Bounds) -> Result<()> {
        if !bounds.contains(self.background) {
            return Err(Error::InvalidInput(format!(
                "background {} outside conductivity bounds",
                self.background
            )));
        }
        for (i, inc) in self.inclusions.iter().enumerate() {
            if !(inc.radius > 0.0) {
                return Err(Error::InvalidInput(format!("inclusion {i} radius must be positive")));
            }
            if !bounds.contains(inc.value) {
                return Err(Error::InvalidInput(format!("inclusion {i} value outside bounds")));
            }
            if !geometry.contains(&inc.center) {
                return Err(Error::InvalidInput(format!("inclusion {i} centre lies outside the domain")));
            }
        }
        Ok(())
    }
}
