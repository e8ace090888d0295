//! Scenarios, the two-stage simulation driver and run exports.
//!
//! Stage 1 fits the electrode voltages `U*` that the true conductivity
//! produces for the configured current pattern. Stage 2 generates the
//! currents of every rotation of `U*` and reconstructs `(sigma, U)` from them
//! with the projected gradient iteration.

mod config;
pub mod export;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub use config::{
    CurrentConfig, ElectrodeConfig, Geometry, GpmSection, InitialConfig, InitialVoltages, Inclusion,
    MeasurementConfig, MeshConfig, OutputConfig, Phantom, ScenarioConfig, VoltagePreset,
};

use crate::electrode_model::{generate_measurements, response_matrix, solve_problem_i, MeasurementSet, Pattern, VoltageFit};
use crate::error::{Error, Result};
use crate::fem::{Bounds, ConductivityField, Discretization};
use crate::gpm::{project_voltage, run_gpm, GpmConfig, GpmOutcome, StopReason};
use crate::gradient::{grad_sigma, grad_u, weighted_dot};
use crate::mesh::{place_electrodes_2d, place_electrodes_3d, CylinderMesher, DiskMesher, ElectrodeLayout, Mesh};
use crate::objective::cost_k;

/// Element value is that of the last inclusion containing the element
/// centroid, or the background.
pub fn rasterize_phantom(phantom: &Phantom, mesh: &Mesh, bounds: Bounds) -> Result<ConductivityField> {
    let values = (0..mesh.num_elements())
        .map(|e| {
            let c = mesh.element_centroid(e);
            phantom
                .inclusions
                .iter()
                .rev()
                .find(|inc| {
                    let d2: f64 = inc.center.iter().zip(&c).map(|(a, b)| (a - b) * (a - b)).sum();
                    d2 <= inc.radius * inc.radius
                })
                .map_or(phantom.background, |inc| inc.value)
        })
        .collect();
    ConductivityField::new(values, bounds)
}

/// Mesh and electrodes described by a scenario.
pub fn build_geometry(config: &ScenarioConfig) -> Result<(Mesh, ElectrodeLayout)> {
    let mc = &config.mesh;
    let el = &config.electrodes;
    match config.geometry {
        Geometry::Disk { radius } => {
            let mut mesher = DiskMesher::new(radius, mc.target_edge);
            if let Some(h) = mc.boundary_edge {
                mesher = mesher.boundary_edge(h);
            }
            if let Some(g) = mc.grading {
                mesher = mesher.grading(g);
            }
            if mc.conforming {
                mesher = mesher.conforming_electrodes(el.per_layer, el.width);
            }
            let mesh = mesher.build()?;
            let layout = place_electrodes_2d(&mesh, el.per_layer, el.width, el.impedance)?;
            Ok((mesh, layout))
        }
        Geometry::Cylinder { radius, height } => {
            let band = el.height.ok_or_else(|| Error::InvalidInput("electrode height missing".into()))?;
            let mut mesher = CylinderMesher::new(radius, height, mc.target_edge);
            if let Some(h) = mc.boundary_edge {
                mesher = mesher.boundary_edge(h);
            }
            if let Some(g) = mc.grading {
                mesher = mesher.grading(g);
            }
            if mc.conforming {
                mesher = mesher.conforming_electrodes(el.layers, el.per_layer, el.width, band);
            }
            let mesh = mesher.build()?;
            let layout = place_electrodes_3d(&mesh, el.layers, el.per_layer, el.width, band, el.impedance)?;
            Ok((mesh, layout))
        }
    }
}

/// A validated scenario with its discretization.
#[derive(Debug)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub disc: Discretization,
    pub bounds: Bounds,
    pub current: Pattern,
}

impl Scenario {
    pub fn build(config: ScenarioConfig) -> Result<Self> {
        config.validate()?;
        let (mesh, layout) = build_geometry(&config)?;
        Ok(Scenario {
            bounds: config.bounds()?,
            current: config.current_pattern()?,
            disc: Discretization::new(mesh, layout)?,
            config,
        })
    }

    pub fn mesh(&self) -> &Mesh {
        self.disc.mesh()
    }

    pub fn sigma_true(&self) -> Result<ConductivityField> {
        rasterize_phantom(&self.config.phantom, self.mesh(), self.bounds)
    }

    /// Measure-weighted `|a - b|_{L2} / |b|_{L2}`.
    pub fn relative_l2(&self, a: &[f64], b: &[f64]) -> f64 {
        let w = self.disc.element_measures();
        let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        (weighted_dot(w, &d, &d) / weighted_dot(w, b, b)).sqrt()
    }
}

#[derive(Debug, Clone)]
pub struct Stage1Result {
    pub sigma_true: ConductivityField,
    pub fit: VoltageFit,
}

impl Stage1Result {
    pub fn u_star(&self) -> &[f64] {
        &self.fit.voltages
    }
}

/// Fits `U*` to the configured currents at the true conductivity.
pub fn run_stage1(scenario: &Scenario) -> Result<Stage1Result> {
    let sigma_true = scenario.sigma_true()?;
    let system = scenario.disc.assemble(sigma_true.values())?;
    let response = response_matrix(&system)?;
    let mut fit = solve_problem_i(&response, scenario.current.values())?;
    fit.voltages = project_voltage(&fit.voltages);
    Ok(Stage1Result { sigma_true, fit })
}

/// Endpoint metrics of a reconstruction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub final_cost: f64,
    pub initial_cost: f64,
    /// `|U_end - U*| / |U*|`.
    pub voltage_relative_error: f64,
    /// `|sigma_end - sigma_true|_{L2} / |sigma_true|_{L2}`.
    pub conductivity_relative_error: f64,
    pub iterations: usize,
    pub stop_reason: String,
    pub rotations: usize,
    pub beta: f64,
    pub wall_time_s: f64,
    pub assemblies: usize,
    pub nodes: usize,
    pub elements: usize,
    pub electrodes: usize,
    pub stage1_relative_residual: f64,
}

#[derive(Debug, Clone)]
pub struct Stage2Result {
    pub measurements: MeasurementSet,
    pub initial_sigma: ConductivityField,
    pub initial_voltages: Vec<f64>,
    pub outcome: GpmOutcome,
    pub metrics: Metrics,
}

/// Initial iterate from the config: uniform conductivity and the voltage
/// preset, or the endpoint of a previous run when `warm_start` is set.
pub fn initial_iterate(scenario: &Scenario) -> Result<(ConductivityField, Vec<f64>)> {
    let cfg = &scenario.config;
    if let Some(dir) = &cfg.initial.warm_start {
        let (sigma, voltages) = export::read_endpoint(dir, &scenario.disc)?;
        return Ok((ConductivityField::new(sigma, scenario.bounds)?, project_voltage(&voltages)));
    }
    Ok((
        ConductivityField::uniform(scenario.disc.num_elements(), cfg.initial.sigma, scenario.bounds)?,
        cfg.initial_voltages()?,
    ))
}

/// Generates the rotated measurements and runs the reconstruction from
/// `start`, or from [`initial_iterate`] when `start` is `None`.
pub fn run_stage2(
    scenario: &Scenario,
    stage1: &Stage1Result,
    gpm: &GpmConfig,
    start: Option<(ConductivityField, Vec<f64>)>,
) -> Result<Stage2Result> {
    let started = std::time::Instant::now();
    let system = scenario.disc.assemble(stage1.sigma_true.values())?;
    let mut measurements = generate_measurements(&system, stage1.u_star())?;
    drop(system);
    let noise = &scenario.config.measurements;
    if noise.noise_std > 0.0 {
        measurements = measurements.with_noise(noise.noise_std, noise.noise_seed)?;
    }
    let (sigma0, u0) = match start {
        Some(s) => s,
        None => initial_iterate(scenario)?,
    };
    let outcome = run_gpm(&scenario.disc, &measurements, sigma0.clone(), u0.clone(), gpm)?;

    let u_star = stage1.u_star();
    let du: f64 = outcome.state.voltages.iter().zip(u_star).map(|(a, b)| (a - b) * (a - b)).sum();
    let us: f64 = u_star.iter().map(|v| v * v).sum();
    let metrics = Metrics {
        final_cost: outcome.state.cost.total,
        initial_cost: outcome.history[0].cost,
        voltage_relative_error: (du / us).sqrt(),
        conductivity_relative_error: scenario
            .relative_l2(outcome.state.sigma.values(), stage1.sigma_true.values()),
        iterations: outcome.state.iteration,
        stop_reason: match outcome.reason {
            StopReason::Converged => "converged".into(),
            StopReason::MaxIterations => "max_iterations".into(),
        },
        rotations: gpm.rotations,
        beta: gpm.beta,
        wall_time_s: started.elapsed().as_secs_f64(),
        assemblies: outcome.assemblies,
        nodes: scenario.disc.num_nodes(),
        elements: scenario.disc.num_elements(),
        electrodes: scenario.disc.num_electrodes(),
        stage1_relative_residual: stage1.fit.relative_residual,
    };
    Ok(Stage2Result {
        measurements,
        initial_sigma: sigma0,
        initial_voltages: u0,
        outcome,
        metrics,
    })
}

/// Finite-difference validation of the gradient at random feasible points.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientCheck {
    /// Per sample, `|fd - <g, d>| / |<g, d>|` for a conductivity direction.
    pub sigma_errors: Vec<f64>,
    /// Same for a zero-mean voltage direction.
    pub voltage_errors: Vec<f64>,
}

impl GradientCheck {
    pub fn max_error(&self) -> f64 {
        self.sigma_errors
            .iter()
            .chain(&self.voltage_errors)
            .fold(0.0, |m, &e| m.max(e))
    }
}

/// Central differences with step `t` along random directions at `samples`
/// random iterates: conductivity uniform in the lower half of the bounds,
/// voltages a perturbation of `U*`.
#[allow(clippy::too_many_arguments)]
pub fn gradient_check(
    disc: &Discretization,
    meas: &MeasurementSet,
    bounds: Bounds,
    beta: f64,
    rotations: usize,
    samples: usize,
    t: f64,
    seed: u64,
) -> Result<GradientCheck> {
    let mut rng = StdRng::seed_from_u64(seed);
    let n = disc.num_elements();
    let m = disc.num_electrodes();
    let span = bounds.upper - bounds.lower;
    let scale = meas.u_star().iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-3);
    let cost_at = |sigma: &[f64], u: &[f64]| -> Result<f64> {
        let system = disc.assemble(sigma)?;
        Ok(cost_k(&system, u, meas, beta, rotations)?.total())
    };
    let rel = |fd: f64, an: f64| (fd - an).abs() / an.abs().max(f64::MIN_POSITIVE);

    let mut check = GradientCheck {
        sigma_errors: Vec::with_capacity(samples),
        voltage_errors: Vec::with_capacity(samples),
    };
    for _ in 0..samples {
        let sigma: Vec<f64> = (0..n)
            .map(|_| bounds.lower + span * rng.random_range(0.1..0.5))
            .collect();
        let noise: Vec<f64> = (0..m)
            .map(|k| meas.u_star()[k] + 0.3 * scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let u = project_voltage(&noise);

        let system = disc.assemble(&sigma)?;
        let eval = cost_k(&system, &u, meas, beta, rotations)?;
        let w = system.unit_solves()?;
        let psi = eval
            .residuals
            .iter()
            .map(|r| system.adjoint_from_residuals(r))
            .collect::<Result<Vec<_>>>()?;
        let gs = grad_sigma(disc, &eval.potentials, &psi)?;
        let gu = grad_u(disc, &eval.residuals, &w, &u, meas.u_star(), beta)?;

        let ds: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let plus: Vec<f64> = sigma.iter().zip(&ds).map(|(s, d)| s + t * d).collect();
        let minus: Vec<f64> = sigma.iter().zip(&ds).map(|(s, d)| s - t * d).collect();
        let fd = (cost_at(&plus, &u)? - cost_at(&minus, &u)?) / (2.0 * t);
        check.sigma_errors.push(rel(fd, weighted_dot(disc.element_measures(), &gs, &ds)));

        let raw: Vec<f64> = (0..m).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let du = project_voltage(&raw);
        let norm = du.iter().map(|x| x * x).sum::<f64>().sqrt();
        let du: Vec<f64> = du.iter().map(|x| scale * x / norm).collect();
        let plus: Vec<f64> = u.iter().zip(&du).map(|(a, d)| a + t * d).collect();
        let minus: Vec<f64> = u.iter().zip(&du).map(|(a, d)| a - t * d).collect();
        let fd = (cost_at(&sigma, &plus)? - cost_at(&sigma, &minus)?) / (2.0 * t);
        let an: f64 = gu.iter().zip(&du).map(|(g, d)| g * d).sum();
        check.voltage_errors.push(rel(fd, an));
    }
    Ok(check)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const DISK: &str = r#"
[geometry]
kind = "disk"
radius = 0.1

[mesh]
target_edge = 0.02
boundary_edge = 0.006

[electrodes]
per_layer = 8
width = 0.1
impedance = 0.1

[current]
values = [1.0, -1.0, 0.5, -0.5, 0.0, 0.0, 0.25, -0.25]

[phantom]
background = 0.2

[[phantom.inclusions]]
center = [0.0, -0.05]
radius = 0.03
value = 0.4

[initial]
sigma = 0.3
voltages = "alternating"

[gpm]
beta = 0.0
mu = 0.05
upper = 1.0
epsilon = 1e-6
max_iterations = 5
"#;

    #[test]
    fn config_round_trips_through_toml() {
        let a = ScenarioConfig::from_toml(DISK).unwrap();
        let b = ScenarioConfig::from_toml(&a.to_toml().unwrap()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.rotations(), 8);
        assert_eq!(a.initial_voltages().unwrap()[..2], [-1.0, 1.0]);
    }

    #[test]
    fn config_rejects_inconsistent_patterns() {
        let bad = DISK.replace("0.25, -0.25]", "0.25, 0.25]");
        assert!(ScenarioConfig::from_toml(&bad).is_err());
        let short = DISK.replace(", 0.25, -0.25]", "]");
        assert!(ScenarioConfig::from_toml(&short).is_err());
        let outside = DISK.replace("center = [0.0, -0.05]", "center = [0.0, -0.2]");
        assert!(ScenarioConfig::from_toml(&outside).is_err());
        let unknown = DISK.replace("[gpm]", "[gpm]\nfoo = 1");
        assert!(ScenarioConfig::from_toml(&unknown).is_err());
    }

    #[test]
    fn uniform_phantom_rasterizes_to_background() {
        let cfg = ScenarioConfig::from_toml(DISK).unwrap();
        let (mesh, _) = build_geometry(&cfg).unwrap();
        let b = cfg.bounds().unwrap();
        let f = rasterize_phantom(&Phantom::uniform(0.2), &mesh, b).unwrap();
        assert!(f.values().iter().all(|&v| v == 0.2));
    }

    #[test]
    fn later_inclusions_win() {
        let cfg = ScenarioConfig::from_toml(DISK).unwrap();
        let (mesh, _) = build_geometry(&cfg).unwrap();
        let b = cfg.bounds().unwrap();
        let ball = |value| Inclusion { center: vec![0.0, 0.0], radius: 0.05, value };
        let p = Phantom { background: 0.2, inclusions: vec![ball(0.4), ball(0.6)] };
        let f = rasterize_phantom(&p, &mesh, b).unwrap();
        assert!(f.values().iter().any(|&v| v == 0.6));
        assert!(!f.values().iter().any(|&v| v == 0.4));
    }

    #[test]
    fn stage1_with_zero_current_gives_zero_voltages() {
        let text = DISK.replace(
            "values = [1.0, -1.0, 0.5, -0.5, 0.0, 0.0, 0.25, -0.25]",
            "values = [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]",
        );
        let scenario = Scenario::build(ScenarioConfig::from_toml(&text).unwrap()).unwrap();
        let s1 = run_stage1(&scenario).unwrap();
        assert!(s1.u_star().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn short_reconstruction_reduces_cost() {
        let scenario = Scenario::build(ScenarioConfig::from_toml(DISK).unwrap()).unwrap();
        let s1 = run_stage1(&scenario).unwrap();
        assert!(s1.fit.relative_residual < 1e-8);
        let gpm = scenario.config.gpm_config().unwrap();
        let s2 = run_stage2(&scenario, &s1, &gpm, None).unwrap();
        assert_eq!(s2.metrics.iterations, 5);
        assert_eq!(s2.outcome.assemblies, s2.outcome.history.len());
        assert!(s2.metrics.final_cost < s2.metrics.initial_cost);
    }
}
