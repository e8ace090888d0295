//! Scenario files, phantoms, stage 1 and the exported run files.

mod common;

use std::f64::consts::PI;

use common::*;
use eit_core::electrode_model::{response_matrix, solve_problem_i};
use eit_core::harness::{
    export, initial_iterate, rasterize_phantom, run_stage1, run_stage2, Phantom, Scenario, ScenarioConfig,
};
use eit_core::mesh::read_mesh;
use eit_core::objective::rotate;

fn coarse() -> Scenario {
    Scenario::build(ScenarioConfig::from_toml(COARSE_TOML).unwrap()).unwrap()
}

fn inclusion_area(scenario: &Scenario, field: &[f64], value: f64) -> f64 {
    field
        .iter()
        .zip(scenario.disc.element_measures())
        .filter(|(v, _)| **v == value)
        .map(|(_, w)| w)
        .sum()
}

#[test]
fn shipped_configs_load_and_round_trip() {
    let mut seen = 0;
    for entry in std::fs::read_dir(configs_dir()).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let cfg = ScenarioConfig::load(&path).unwrap();
            let again = ScenarioConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
            assert_eq!(cfg, again, "{}", path.display());
            seen += 1;
        }
    }
    assert!(seen >= 3);
}

#[test]
fn shipped_disk_mesh_matches_its_description() {
    let cfg = ScenarioConfig::load(&configs_dir().join("disk1tumor.toml")).unwrap();
    let scenario = Scenario::build(cfg).unwrap();
    let n = scenario.disc.num_nodes();
    assert!((1800..=2300).contains(&n), "{n} nodes");
    assert_eq!(scenario.disc.num_electrodes(), 16);
    // Conforming electrodes are inscribed polygons of the configured arc.
    let arc = 0.024 * 0.1;
    for &a in scenario.disc.layout().area() {
        assert!(a <= arc && a >= arc * (1.0 - 1e-4), "{a}");
    }
    // Inclusion of radius 0.03 rasterizes to within 10% of its area.
    let sigma = scenario.sigma_true().unwrap();
    let area = inclusion_area(&scenario, sigma.values(), 0.4);
    let exact = PI * 0.03 * 0.03;
    assert!((area - exact).abs() <= 0.1 * exact, "{area} vs {exact}");
}

#[test]
fn four_inclusions_are_disjoint_and_resolved() {
    let cfg = ScenarioConfig::load(&configs_dir().join("disk4tumor.toml")).unwrap();
    let incs = cfg.phantom.inclusions.clone();
    assert_eq!(incs.len(), 4);
    for (i, a) in incs.iter().enumerate() {
        for b in &incs[i + 1..] {
            let d = (a.center[0] - b.center[0]).hypot(a.center[1] - b.center[1]);
            assert!(d > a.radius + b.radius, "inclusions overlap");
        }
    }
    let scenario = Scenario::build(cfg).unwrap();
    let mesh = scenario.mesh();
    // Every inclusion owns at least one element, including the smallest.
    for inc in &incs {
        let single = Phantom {
            background: 0.2,
            inclusions: vec![inc.clone()],
        };
        let f = rasterize_phantom(&single, mesh, scenario.bounds).unwrap();
        assert!(f.values().iter().any(|&v| v == inc.value), "radius {} not resolved", inc.radius);
    }
}

#[test]
fn cylinder_config_fits_the_smoke_budget() {
    let cfg = ScenarioConfig::load(&configs_dir().join("cylinder1tumor.toml")).unwrap();
    let scenario = Scenario::build(cfg).unwrap();
    assert!(scenario.disc.num_nodes() <= 4000);
    assert_eq!(scenario.disc.num_electrodes(), 64);
    assert_eq!(scenario.current.values().len(), 64);
}

#[test]
fn stage1_is_rotation_equivariant_on_a_symmetric_mesh() {
    // Uniform conductivity on a mesh with 16-fold symmetry: rotating the
    // current pattern rotates the fitted voltages.
    let mut cfg = ScenarioConfig::from_toml(COARSE_TOML).unwrap();
    cfg.phantom = Phantom::uniform(0.2);
    let scenario = Scenario::build(cfg).unwrap();
    let s1 = run_stage1(&scenario).unwrap();
    let system = scenario.disc.assemble(s1.sigma_true.values()).unwrap();
    let response = response_matrix(&system).unwrap();
    for j in [2, 5, 16] {
        let rotated_current = rotate(scenario.current.values(), j).unwrap();
        let fit = solve_problem_i(&response, &rotated_current).unwrap();
        let expected = rotate(s1.u_star(), j).unwrap();
        assert!(rel_diff(&fit.voltages, &expected) <= 1e-6, "rotation {j}");
    }
}

#[test]
fn stage1_reproduces_the_configured_currents() {
    let scenario = coarse();
    let s1 = run_stage1(&scenario).unwrap();
    assert_eq!(s1.fit.rank, 15);
    assert!(s1.fit.relative_residual <= 1e-8);
    assert!(s1.u_star().iter().sum::<f64>().abs() <= 1e-14);
}

#[test]
fn exports_round_trip_and_warm_start_resumes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let scenario = coarse();
    let s1 = run_stage1(&scenario).unwrap();
    export::write_stage1(out, &scenario, &s1).unwrap();
    let back = export::read_stage1(out, &scenario).unwrap();
    assert_eq!(back.u_star(), s1.u_star());
    assert_eq!(back.sigma_true.values(), s1.sigma_true.values());

    let gpm = scenario.config.gpm_config().unwrap();
    let s2 = run_stage2(&scenario, &s1, &gpm, None).unwrap();
    export::write_stage2(out, &scenario, &s1, &s2).unwrap();

    for name in [
        export::MESH_FILE,
        export::SIGMA_TRUE_FILE,
        export::SIGMA_FINAL_FILE,
        export::VOLTAGES_FILE,
        export::MEASUREMENTS_FILE,
        export::HISTORY_FILE,
        export::METRICS_FILE,
        export::STAGE1_FILE,
    ] {
        assert!(out.join(name).is_file(), "{name} missing");
    }
    let (mesh, labels) = read_mesh(std::io::BufReader::new(std::fs::File::open(out.join(export::MESH_FILE)).unwrap())).unwrap();
    assert_eq!(&mesh, scenario.mesh());
    assert_eq!(labels.iter().filter(|&&l| l >= 0).count(), (0..16).map(|l| scenario.disc.layout().facets(l).len()).sum::<usize>());

    assert_eq!(export::read_measurements(out).unwrap(), s2.measurements);
    let metrics = export::read_metrics(out).unwrap();
    assert_eq!(metrics, s2.metrics);
    assert_eq!(metrics.iterations + 1, s2.outcome.history.len());
    let history = std::fs::read_to_string(out.join(export::HISTORY_FILE)).unwrap();
    assert_eq!(history.lines().count(), s2.outcome.history.len() + 1);

    let (sigma_end, u_end) = export::read_endpoint(out, &scenario.disc).unwrap();
    assert_eq!(sigma_end, s2.outcome.state.sigma.values());
    assert_eq!(u_end, s2.outcome.state.voltages);

    // Warm start from the exported endpoint picks up where the run stopped.
    let mut cfg = scenario.config.clone();
    cfg.initial.warm_start = Some(out.to_path_buf());
    let warm = Scenario::build(cfg).unwrap();
    let (sigma0, u0) = initial_iterate(&warm).unwrap();
    assert_eq!(sigma0.values(), sigma_end.as_slice());
    assert_eq!(u0, u_end);
    let resumed = run_stage2(&warm, &s1, &gpm, None).unwrap();
    assert_eq!(resumed.metrics.initial_cost, s2.metrics.final_cost);
}

#[test]
fn measurement_noise_is_seeded() {
    let scenario = coarse();
    let s1 = run_stage1(&scenario).unwrap();
    let system = scenario.disc.assemble(s1.sigma_true.values()).unwrap();
    let clean = eit_core::electrode_model::generate_measurements(&system, s1.u_star()).unwrap();
    let a = clean.clone().with_noise(1e-4, 3).unwrap();
    let b = clean.clone().with_noise(1e-4, 3).unwrap();
    let c = clean.clone().with_noise(1e-4, 4).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
    let diffs: Vec<f64> = a.currents().iter().flatten().zip(clean.currents().iter().flatten()).map(|(x, y)| x - y).collect();
    let rms = (diffs.iter().map(|d| d * d).sum::<f64>() / diffs.len() as f64).sqrt();
    assert!((rms - 1e-4).abs() < 3e-5, "{rms}");
}
