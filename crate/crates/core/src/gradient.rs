//! Gradients of the cost with respect to conductivity and voltages, and the
//! averaged Barzilai-Borwein step sizes.
//!
//! The conductivity gradient is a density: the derivative of the cost with
//! respect to the value on element `e` is `|e| g_e`, so it pairs with a
//! perturbation through the element-measure-weighted inner product
//! [`weighted_dot`].

use crate::error::{check_len, Error, Result};
use crate::fem::{Bounds, Discretization, Potential};

/// Curvature denominators below this fall back to the initial step.
pub const BB_DENOMINATOR_FLOOR: f64 = 1e-30;

#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub wrt_sigma: Vec<f64>,
    pub wrt_u: Vec<f64>,
}

impl Gradient {
    pub fn is_finite(&self) -> bool {
        self.wrt_sigma.iter().chain(&self.wrt_u).all(|v| v.is_finite())
    }
}

/// `g_e = -sum_j grad(psi^j) . grad(u^j)` on each element.
pub fn grad_sigma(disc: &Discretization, u_list: &[Potential], psi_list: &[Potential]) -> Result<Vec<f64>> {
    check_len("adjoint potentials", u_list.len(), psi_list.len())?;
    for (u, psi) in u_list.iter().zip(psi_list) {
        check_len("potential", disc.num_nodes(), u.len())?;
        check_len("adjoint potential", disc.num_nodes(), psi.len())?;
    }
    Ok((0..disc.num_elements())
        .map(|e| {
            -u_list
                .iter()
                .zip(psi_list)
                .map(|(u, psi)| {
                    let gu = disc.gradient_on(e, u);
                    let gp = disc.gradient_on(e, psi);
                    gu[0] * gp[0] + gu[1] * gp[1] + gu[2] * gp[2]
                })
                .sum::<f64>()
        })
        .collect())
}

/// Component `k` is
/// `sum_{j,l} 2 r_jl (delta_{l,theta(k,j)} |E_l| - int_{E_l} w_theta dS) / Z_l + 2 beta (U_k - U*_k)`.
pub fn grad_u(
    disc: &Discretization,
    residuals: &[Vec<f64>],
    w_list: &[Potential],
    voltages: &[f64],
    u_star: &[f64],
    beta: f64,
) -> Result<Vec<f64>> {
    let layout = disc.layout();
    let m = layout.count();
    check_len("unit potentials", m, w_list.len())?;
    check_len("voltage pattern", m, voltages.len())?;
    check_len("U*", m, u_star.len())?;
    for r in residuals {
        check_len("residual row", m, r.len())?;
    }
    // response[l][t] = d I_l / d U_t
    let response: Vec<Vec<f64>> = (0..m)
        .map(|l| {
            let z = layout.impedance()[l];
            (0..m)
                .map(|t| {
                    let delta = if l == t { layout.area()[l] } else { 0.0 };
                    (delta - disc.electrode_integral(&w_list[t], l)) / z
                })
                .collect()
        })
        .collect();
    Ok((0..m)
        .map(|k| {
            let data: f64 = residuals
                .iter()
                .enumerate()
                .map(|(j, r)| {
                    let t = (k + m - j) % m;
                    (0..m).map(|l| 2.0 * r[l] * response[l][t]).sum::<f64>()
                })
                .sum();
            data + 2.0 * beta * (voltages[k] - u_star[k])
        })
        .collect())
}

/// `sum_e w_e a_e b_e`.
pub fn weighted_dot(weights: &[f64], a: &[f64], b: &[f64]) -> f64 {
    weights.iter().zip(a).zip(b).map(|((w, x), y)| w * x * y).sum()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSizes {
    pub voltage: f64,
    pub sigma: f64,
}

/// Scale of the first move and of the step cap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitialStep {
    /// First conductivity move has max amplitude `sigma_fraction (R - mu)`.
    pub sigma_fraction: f64,
    /// First voltage move has max amplitude `voltage_fraction max |U^0|`.
    pub voltage_fraction: f64,
    /// Steps are capped at `max_factor` times the initial step.
    pub max_factor: f64,
}

impl Default for InitialStep {
    fn default() -> Self {
        InitialStep {
            sigma_fraction: 0.01,
            voltage_fraction: 0.01,
            max_factor: 1e6,
        }
    }
}

impl InitialStep {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v > 0.0 && v.is_finite();
        if ok(self.sigma_fraction) && ok(self.voltage_fraction) && ok(self.max_factor) {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("initial step parameters must be positive: {self:?}")))
        }
    }

    /// Step whose move `step * max |g|` equals `amplitude`; `None` if `g = 0`.
    fn scaled(amplitude: f64, g: &[f64]) -> Option<f64> {
        let gmax = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        (gmax > 0.0).then(|| amplitude / gmax)
    }

    /// Conductivity step for the first move along `g`.
    pub fn sigma_step(&self, g: &[f64], bounds: Bounds) -> Option<f64> {
        Self::scaled(self.sigma_fraction * (bounds.upper - bounds.lower), g)
    }

    /// Voltage step for the first move along `g`. A zero initial voltage uses
    /// a 1 V reference amplitude.
    pub fn voltage_step(&self, g: &[f64], u0: &[f64]) -> Option<f64> {
        let umax = u0.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let reference = if umax > 0.0 { umax } else { 1.0 };
        Self::scaled(self.voltage_fraction * reference, g)
    }
}

/// Previous iterate and gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub sigma: Vec<f64>,
    pub voltages: Vec<f64>,
    pub gradient: Gradient,
}

/// `mean(|dx|^2 / |dx.dg|, |dx.dg| / |dg|^2)`, or `None` when a
/// denominator is below [`BB_DENOMINATOR_FLOOR`].
pub fn averaged_bb(dxdx: f64, dxdg: f64, dgdg: f64) -> Option<f64> {
    let curvature = dxdg.abs();
    if curvature < BB_DENOMINATOR_FLOOR || dgdg < BB_DENOMINATOR_FLOOR {
        return None;
    }
    Some(0.5 * (dxdx / curvature + curvature / dgdg))
}

/// Averaged BB step sizes from the previous snapshot, falling back to
/// `fallback` on a degenerate denominator and capped at `cap`.
pub fn bb_step(
    previous: &Snapshot,
    sigma: &[f64],
    voltages: &[f64],
    gradient: &Gradient,
    measures: &[f64],
    fallback: StepSizes,
    cap: StepSizes,
) -> Result<StepSizes> {
    check_len("conductivity", previous.sigma.len(), sigma.len())?;
    check_len("element measures", sigma.len(), measures.len())?;
    check_len("voltage pattern", previous.voltages.len(), voltages.len())?;
    check_len("sigma gradient", sigma.len(), gradient.wrt_sigma.len())?;
    check_len("voltage gradient", voltages.len(), gradient.wrt_u.len())?;
    let diff = |a: &[f64], b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(x, y)| x - y).collect() };

    let du = diff(voltages, &previous.voltages);
    let dgu = diff(&gradient.wrt_u, &previous.gradient.wrt_u);
    let voltage = averaged_bb(dot(&du, &du), dot(&du, &dgu), dot(&dgu, &dgu))
        .map_or(fallback.voltage, |a| a.min(cap.voltage));

    let ds = diff(sigma, &previous.sigma);
    let dgs = diff(&gradient.wrt_sigma, &previous.gradient.wrt_sigma);
    let sigma_step = averaged_bb(
        weighted_dot(measures, &ds, &ds),
        weighted_dot(measures, &ds, &dgs),
        weighted_dot(measures, &dgs, &dgs),
    )
    .map_or(fallback.sigma, |a| a.min(cap.sigma));

    Ok(StepSizes {
        voltage,
        sigma: sigma_step,
    })
}

/// Step-size state carried across iterations.
#[derive(Debug, Clone)]
pub struct BbHistory {
    policy: InitialStep,
    initial: [Option<f64>; 2],
    previous: Option<Snapshot>,
}

impl BbHistory {
    pub fn new(policy: InitialStep) -> Self {
        BbHistory {
            policy,
            initial: [None, None],
            previous: None,
        }
    }

    /// True once an iterate has been recorded.
    pub fn is_valid(&self) -> bool {
        self.previous.is_some()
    }

    pub fn previous(&self) -> Option<&Snapshot> {
        self.previous.as_ref()
    }

    /// Initial steps `(voltage, sigma)`, once a nonzero gradient has set them.
    pub fn initial(&self) -> [Option<f64>; 2] {
        self.initial
    }

    /// Step sizes for the current iterate, then records it. The initial step
    /// of each variable is fixed by its first nonzero gradient and used until
    /// a BB step is available.
    pub fn next_step(
        &mut self,
        sigma: &[f64],
        voltages: &[f64],
        gradient: &Gradient,
        measures: &[f64],
        bounds: Bounds,
    ) -> Result<StepSizes> {
        let fresh_u = self.initial[0].is_none();
        let fresh_s = self.initial[1].is_none();
        if fresh_u {
            self.initial[0] = self.policy.voltage_step(&gradient.wrt_u, voltages);
        }
        if fresh_s {
            self.initial[1] = self.policy.sigma_step(&gradient.wrt_sigma, bounds);
        }
        let g0 = StepSizes {
            voltage: self.initial[0].unwrap_or(0.0),
            sigma: self.initial[1].unwrap_or(0.0),
        };
        let mut step = match &self.previous {
            Some(prev) => {
                let cap = StepSizes {
                    voltage: self.policy.max_factor * g0.voltage,
                    sigma: self.policy.max_factor * g0.sigma,
                };
                bb_step(prev, sigma, voltages, gradient, measures, g0, cap)?
            }
            None => g0,
        };
        if fresh_u {
            step.voltage = g0.voltage;
        }
        if fresh_s {
            step.sigma = g0.sigma;
        }
        self.previous = Some(Snapshot {
            sigma: sigma.to_vec(),
            voltages: voltages.to_vec(),
            gradient: gradient.clone(),
        });
        Ok(step)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn snapshot(sigma: Vec<f64>, u: Vec<f64>, gs: Vec<f64>, gu: Vec<f64>) -> Snapshot {
        Snapshot {
            sigma,
            voltages: u,
            gradient: Gradient { wrt_sigma: gs, wrt_u: gu },
        }
    }

    const UNCAPPED: StepSizes = StepSizes {
        voltage: f64::INFINITY,
        sigma: f64::INFINITY,
    };
    const ONES: StepSizes = StepSizes { voltage: 1.0, sigma: 1.0 };

    #[test]
    fn equal_differences_give_unit_voltage_step() {
        let prev = snapshot(vec![0.2], vec![0.0, 0.0], vec![0.0], vec![0.0, 0.0]);
        let g = Gradient { wrt_sigma: vec![1.0], wrt_u: vec![0.3, -0.1] };
        let s = bb_step(&prev, &[0.4], &[0.3, -0.1], &g, &[1.0], ONES, UNCAPPED).unwrap();
        assert_eq!(s.voltage, 1.0);
    }

    #[test]
    fn proportional_sigma_difference_gives_ratio() {
        let prev = snapshot(vec![0.2, 0.3], vec![0.0], vec![0.0, 0.0], vec![0.0]);
        let g = Gradient { wrt_sigma: vec![0.05, -0.1], wrt_u: vec![1.0] };
        let s = bb_step(&prev, &[0.3, 0.1], &[1.0], &g, &[0.5, 2.0], ONES, UNCAPPED).unwrap();
        assert!((s.sigma - 2.0).abs() < 1e-14);
    }

    #[test]
    fn degenerate_curvature_falls_back() {
        let prev = snapshot(vec![0.2], vec![1.0], vec![0.5], vec![1.0]);
        let g = Gradient { wrt_sigma: vec![0.5], wrt_u: vec![1.0] };
        let fb = StepSizes { voltage: 0.25, sigma: 0.125 };
        let s = bb_step(&prev, &[0.3], &[2.0], &g, &[1.0], fb, UNCAPPED).unwrap();
        assert_eq!(s, fb);
    }

    #[test]
    fn cap_limits_step() {
        let prev = snapshot(vec![0.0], vec![0.0], vec![0.0], vec![0.0]);
        let g = Gradient { wrt_sigma: vec![1e-6], wrt_u: vec![1e-6] };
        let cap = StepSizes { voltage: 10.0, sigma: 20.0 };
        let s = bb_step(&prev, &[1.0], &[1.0], &g, &[1.0], ONES, cap).unwrap();
        assert_eq!(s, cap);
    }

    #[test]
    fn first_step_moves_by_the_policy_amplitude() {
        let bounds = Bounds::new(0.05, 1.0).unwrap();
        let mut h = BbHistory::new(InitialStep::default());
        let g = Gradient { wrt_sigma: vec![2.0, -4.0], wrt_u: vec![0.5, -0.5] };
        let s = h.next_step(&[0.3, 0.3], &[1.0, -1.0], &g, &[1.0, 1.0], bounds).unwrap();
        assert!((s.sigma * 4.0 - 0.01 * 0.95).abs() < 1e-15);
        assert!((s.voltage * 0.5 - 0.01).abs() < 1e-15);
        assert!(h.is_valid());
    }

    #[test]
    fn zero_gradient_takes_no_step() {
        let bounds = Bounds::new(0.05, 1.0).unwrap();
        let mut h = BbHistory::new(InitialStep::default());
        let g = Gradient { wrt_sigma: vec![0.0], wrt_u: vec![0.0, 0.0] };
        let s = h.next_step(&[0.3], &[1.0, -1.0], &g, &[1.0], bounds).unwrap();
        assert_eq!(s, StepSizes { voltage: 0.0, sigma: 0.0 });
        assert_eq!(h.initial(), [None, None]);
    }
}
