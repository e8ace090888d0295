//! Projected gradient iteration over conductivity and electrode voltages.
//!
//! Each iteration `N` assembles and factors the system at `sigma^N` once,
//! evaluates the cost (rotation forward solves), checks the stopping rule,
//! runs the unit and adjoint solves, takes a Barzilai-Borwein step and
//! projects back onto the feasible set.

use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;

use crate::electrode_model::MeasurementSet;
use crate::error::{check_len, Error, Result};
use crate::fem::{Bounds, ConductivityField, Discretization};
use crate::gradient::{grad_sigma, grad_u, weighted_dot, BbHistory, Gradient, InitialStep, StepSizes};
use crate::objective::{cost_k, CostBreakdown};

#[derive(Debug, Clone, PartialEq)]
pub struct GpmConfig {
    pub beta: f64,
    pub bounds: Bounds,
    pub epsilon: f64,
    pub max_iterations: usize,
    pub rotations: usize,
    pub initial_step: InitialStep,
}

impl GpmConfig {
    pub fn validate(&self, electrodes: usize) -> Result<()> {
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::InvalidInput(format!("beta must be >= 0, got {}", self.beta)));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidInput(format!("epsilon must be > 0, got {}", self.epsilon)));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidInput("max_iterations must be >= 1".into()));
        }
        if self.rotations == 0 || self.rotations > electrodes {
            return Err(Error::InvalidInput(format!(
                "rotations must be in 1..={electrodes}, got {}",
                self.rotations
            )));
        }
        Bounds::new(self.bounds.lower, self.bounds.upper)?;
        self.initial_step.validate()
    }
}

/// Optimizer iterate at the moment the loop stopped.
#[derive(Debug, Clone)]
pub struct GpmState {
    pub iteration: usize,
    pub sigma: ConductivityField,
    pub voltages: Vec<f64>,
    pub cost: CostBreakdown,
    /// Gradient at the last iterate that took a step.
    pub gradient: Option<Gradient>,
    pub bb: BbHistory,
}

/// Relative changes between consecutive iterates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelativeChanges {
    pub cost: f64,
    pub voltage: f64,
    pub sigma: f64,
}

impl RelativeChanges {
    pub fn max(&self) -> f64 {
        self.cost.max(self.voltage).max(self.sigma)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub cost: f64,
    /// `None` at iteration 0.
    pub changes: Option<RelativeChanges>,
    /// `None` on the iteration that stopped.
    pub steps: Option<StepSizes>,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Converged,
    MaxIterations,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Continue,
    Stop(StopReason),
}

#[derive(Debug, Clone)]
pub struct GpmOutcome {
    pub state: GpmState,
    pub history: Vec<IterationRecord>,
    pub reason: StopReason,
    /// System assemblies performed by this run.
    pub assemblies: usize,
}

/// Elementwise clamp to `[mu, R]`.
pub fn project_sigma(sigma_tilde: &[f64], bounds: Bounds) -> ConductivityField {
    let values = sigma_tilde.iter().map(|v| v.clamp(bounds.lower, bounds.upper)).collect();
    ConductivityField::new(values, bounds).expect("clamped values lie in bounds")
}

/// Subtracts the mean. Input whose sum is already zero to rounding
/// (`|sum| <= m eps sum |x|`) is returned unchanged, so the projection is
/// idempotent in floating point.
pub fn project_voltage(u_tilde: &[f64]) -> Vec<f64> {
    let m = u_tilde.len() as f64;
    let sum: f64 = u_tilde.iter().sum();
    let abs: f64 = u_tilde.iter().map(|v| v.abs()).sum();
    if sum.abs() <= m * f64::EPSILON * abs {
        return u_tilde.to_vec();
    }
    let mean = sum / m;
    u_tilde.iter().map(|v| v - mean).collect()
}

/// `|a - b| / |b|`, with `0/0 = 0` and `x/0 = inf`.
fn ratio(num: f64, den: f64) -> f64 {
    if num == 0.0 {
        0.0
    } else if den == 0.0 {
        f64::INFINITY
    } else {
        num / den
    }
}

/// Changes of cost, voltage (Euclidean) and conductivity (measure-weighted
/// L2) from `previous` to `current`.
pub fn relative_changes(
    (cost, voltages, sigma): (f64, &[f64], &[f64]),
    (prev_cost, prev_voltages, prev_sigma): (f64, &[f64], &[f64]),
    measures: &[f64],
) -> RelativeChanges {
    let du: Vec<f64> = voltages.iter().zip(prev_voltages).map(|(a, b)| a - b).collect();
    let ds: Vec<f64> = sigma.iter().zip(prev_sigma).map(|(a, b)| a - b).collect();
    RelativeChanges {
        cost: ratio((cost - prev_cost).abs(), prev_cost.abs()),
        voltage: ratio(du.iter().map(|x| x * x).sum::<f64>().sqrt(), prev_voltages.iter().map(|x| x * x).sum::<f64>().sqrt()),
        sigma: ratio(
            weighted_dot(measures, &ds, &ds).sqrt(),
            weighted_dot(measures, prev_sigma, prev_sigma).sqrt(),
        ),
    }
}

/// Stopping rule at iteration `iteration >= 1`.
pub fn should_stop(changes: &RelativeChanges, iteration: usize, config: &GpmConfig) -> Decision {
    if changes.max() < config.epsilon {
        Decision::Stop(StopReason::Converged)
    } else if iteration >= config.max_iterations {
        Decision::Stop(StopReason::MaxIterations)
    } else {
        Decision::Continue
    }
}

/// Runs the projected gradient iteration from a feasible `(sigma0, u0)`.
pub fn run_gpm(
    disc: &Discretization,
    meas: &MeasurementSet,
    sigma0: ConductivityField,
    u0: Vec<f64>,
    config: &GpmConfig,
) -> Result<GpmOutcome> {
    let m = disc.num_electrodes();
    config.validate(m)?;
    check_len("conductivity", disc.num_elements(), sigma0.len())?;
    check_len("voltage pattern", m, u0.len())?;
    check_len("measurement electrodes", m, meas.electrodes())?;
    if sigma0.bounds() != config.bounds {
        return Err(Error::InvalidInput("initial conductivity bounds differ from the config".into()));
    }
    let umax = u0.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    if u0.iter().sum::<f64>().abs() > 1e-12 * umax {
        return Err(Error::InvalidInput("initial voltages must have zero sum".into()));
    }

    let measures = disc.element_measures();
    let start_count = disc.assembly_count();
    let mut sigma = sigma0;
    let mut voltages = u0;
    let mut bb = BbHistory::new(config.initial_step);
    let mut history: Vec<IterationRecord> = Vec::new();
    let mut last_gradient = None;
    let mut previous: Option<(f64, Vec<f64>, Vec<f64>)> = None;

    for n in 0.. {
        let started = Instant::now();
        let fail = |e: Error| match e {
            e @ Error::Iteration { .. } => e,
            e => Error::Iteration {
                iteration: n,
                reason: e.to_string(),
            },
        };
        let system = disc.assemble(sigma.values()).map_err(fail)?;
        let eval = cost_k(&system, &voltages, meas, config.beta, config.rotations).map_err(fail)?;
        let cost = eval.total();
        if !cost.is_finite() {
            return Err(fail(Error::InvalidInput(format!("non-finite cost {cost}"))));
        }

        let changes = previous.as_ref().map(|(pc, pu, ps)| {
            relative_changes((cost, &voltages, sigma.values()), (*pc, pu, ps), measures)
        });
        let decision = match &changes {
            Some(c) => should_stop(c, n, config),
            None => Decision::Continue,
        };
        if let Decision::Stop(reason) = decision {
            history.push(IterationRecord {
                iteration: n,
                cost,
                changes,
                steps: None,
                wall_ms: elapsed_ms(started),
            });
            let assemblies = disc.assembly_count() - start_count;
            return Ok(GpmOutcome {
                state: GpmState {
                    iteration: n,
                    sigma,
                    voltages,
                    cost: eval.breakdown,
                    gradient: last_gradient,
                    bb,
                },
                history,
                reason,
                assemblies,
            });
        }

        let w = system.unit_solves().map_err(fail)?;
        let psi = eval
            .residuals
            .par_iter()
            .map(|r| system.adjoint_from_residuals(r))
            .collect::<Result<Vec<_>>>()
            .map_err(fail)?;
        let gradient = Gradient {
            wrt_sigma: grad_sigma(disc, &eval.potentials, &psi).map_err(fail)?,
            wrt_u: grad_u(disc, &eval.residuals, &w, &voltages, meas.u_star(), config.beta).map_err(fail)?,
        };
        if !gradient.is_finite() {
            return Err(fail(Error::InvalidInput("non-finite gradient".into())));
        }
        let steps = bb
            .next_step(sigma.values(), &voltages, &gradient, measures, config.bounds)
            .map_err(fail)?;

        let sigma_tilde: Vec<f64> = sigma
            .values()
            .iter()
            .zip(&gradient.wrt_sigma)
            .map(|(s, g)| s - steps.sigma * g)
            .collect();
        let u_tilde: Vec<f64> = voltages
            .iter()
            .zip(&gradient.wrt_u)
            .map(|(u, g)| u - steps.voltage * g)
            .collect();

        history.push(IterationRecord {
            iteration: n,
            cost,
            changes,
            steps: Some(steps),
            wall_ms: elapsed_ms(started),
        });
        previous = Some((cost, voltages, sigma.values().to_vec()));
        sigma = project_sigma(&sigma_tilde, config.bounds);
        voltages = project_voltage(&u_tilde);
        last_gradient = Some(gradient);
    }
    unreachable!("loop only exits by returning")
}

fn elapsed_ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1e3
}

/// Iteration history as CSV. `wall_ms` is left empty unless
/// `include_wall_time`, so that exports are reproducible byte for byte.
pub fn write_history<W: Write>(mut w: W, history: &[IterationRecord], include_wall_time: bool) -> Result<()> {
    writeln!(w, "N,cost,rel_cost,rel_U,rel_sigma,alpha_U,alpha_sigma,wall_ms")?;
    let num = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.16e}"));
    for r in history {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            r.iteration,
            num(Some(r.cost)),
            num(r.changes.map(|c| c.cost)),
            num(r.changes.map(|c| c.voltage)),
            num(r.changes.map(|c| c.sigma)),
            num(r.steps.map(|s| s.voltage)),
            num(r.steps.map(|s| s.sigma)),
            if include_wall_time { format!("{:.3}", r.wall_ms) } else { String::new() },
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(eps: f64, nmax: usize) -> GpmConfig {
        GpmConfig {
            beta: 0.0,
            bounds: Bounds::new(0.05, 1.0).unwrap(),
            epsilon: eps,
            max_iterations: nmax,
            rotations: 1,
            initial_step: InitialStep::default(),
        }
    }

    #[test]
    fn sigma_projection_clamps() {
        let b = Bounds::new(0.05, 1.0).unwrap();
        let p = project_sigma(&[0.05 - 1.0, 0.3, 2.0], b);
        assert_eq!(p.values(), &[0.05, 0.3, 1.0]);
        assert_eq!(project_sigma(p.values(), b), p);
    }

    #[test]
    fn voltage_projection_removes_mean() {
        assert_eq!(project_voltage(&[1.0; 4]), vec![0.0; 4]);
        assert_eq!(project_voltage(&[1.0, -1.0]), vec![1.0, -1.0]);
    }

    #[test]
    fn max_of_ratios_decides() {
        let c = config(1e-6, 250);
        let small = RelativeChanges { cost: 1e-7, voltage: 1e-7, sigma: 1e-5 };
        assert_eq!(should_stop(&small, 3, &c), Decision::Continue);
        let zero = RelativeChanges { cost: 0.0, voltage: 0.0, sigma: 0.0 };
        assert_eq!(should_stop(&zero, 3, &c), Decision::Stop(StopReason::Converged));
        assert_eq!(should_stop(&small, 250, &c), Decision::Stop(StopReason::MaxIterations));
    }

    #[test]
    fn ratio_guards_zero_denominators() {
        let m = [1.0];
        let same = relative_changes((0.0, &[0.0], &[0.2]), (0.0, &[0.0], &[0.2]), &m);
        assert_eq!(same.max(), 0.0);
        let grew = relative_changes((1.0, &[1.0], &[0.2]), (0.0, &[0.0], &[0.2]), &m);
        assert_eq!(grew.cost, f64::INFINITY);
        assert_eq!(grew.voltage, f64::INFINITY);
    }

    #[test]
    fn history_csv_has_empty_wall_time_by_default() {
        let rec = IterationRecord {
            iteration: 0,
            cost: 1.5,
            changes: None,
            steps: Some(StepSizes { voltage: 2.0, sigma: 3.0 }),
            wall_ms: 12.0,
        };
        let mut buf = Vec::new();
        write_history(&mut buf, &[rec], false).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text.lines().nth(1).unwrap(),
            "0,1.5000000000000000e0,,,,2.0000000000000000e0,3.0000000000000000e0,"
        );
    }
}
