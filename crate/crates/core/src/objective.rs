//! The rotation scheme and the least-squares cost over rotated data.
//!
//! Indices `j`, `k` in [`rotate`] and [`theta`] are 1-based, matching the
//! electrode numbering `1..=m`.

use rayon::prelude::*;

use crate::electrode_model::{electrode_currents, MeasurementSet};
use crate::error::{check_len, Error, Result};
use crate::fem::{FemSystem, Potential};

/// `rotate(U, j)_l = U_{((l + j - 2) mod m) + 1}`, so `rotate(U, 2) = (U_2, ..., U_m, U_1)`.
pub fn rotate(u: &[f64], j: usize) -> Result<Vec<f64>> {
    let m = u.len();
    check_index("rotation", j, m)?;
    Ok((0..m).map(|l| u[(l + j - 1) % m]).collect())
}

/// Position of `U_k` inside `rotate(U, j)`: `k - j + 1` if `j <= k`, else `m + k - j + 1`.
pub fn theta(k: usize, j: usize, m: usize) -> Result<usize> {
    check_index("electrode", k, m)?;
    check_index("rotation", j, m)?;
    Ok(if j <= k { k - j + 1 } else { m + k - j + 1 })
}

fn check_index(what: &str, i: usize, m: usize) -> Result<()> {
    if i == 0 || i > m {
        return Err(Error::InvalidInput(format!("{what} index {i} outside 1..={m}")));
    }
    Ok(())
}

/// Cost split into its data and regularization parts.
#[derive(Debug, Clone, PartialEq)]
pub struct CostBreakdown {
    pub total: f64,
    /// `per_pattern[j][l]` is the squared residual of rotation `j + 1` on electrode `l + 1`.
    pub per_pattern: Vec<Vec<f64>>,
    /// `beta |U - U*|^2`.
    pub regularization: f64,
}

/// Cost plus the by-products the gradient needs.
#[derive(Debug, Clone)]
pub struct CostEvaluation {
    pub breakdown: CostBreakdown,
    /// `residuals[j][l] = int_{E_l}(U^j_l - u^j)/Z_l dS - I^j_l`.
    pub residuals: Vec<Vec<f64>>,
    /// Forward potentials `u^j`.
    pub potentials: Vec<Potential>,
}

impl CostEvaluation {
    pub fn total(&self) -> f64 {
        self.breakdown.total
    }
}

/// `sum_{j <= rotations} sum_l r_jl^2 + beta |U - U*|^2` at the conductivity
/// `system` was assembled with. `rotations = 1` gives the single-pattern cost.
pub fn cost_k(
    system: &FemSystem<'_>,
    voltages: &[f64],
    meas: &MeasurementSet,
    beta: f64,
    rotations: usize,
) -> Result<CostEvaluation> {
    let disc = system.discretization();
    let m = disc.num_electrodes();
    check_len("voltage pattern", m, voltages.len())?;
    check_len("measurement electrodes", m, meas.electrodes())?;
    if rotations == 0 || rotations > meas.rows() {
        return Err(Error::InvalidInput(format!(
            "rotations must be in 1..={}, got {rotations}",
            meas.rows()
        )));
    }
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(Error::InvalidInput(format!("beta must be finite and >= 0, got {beta}")));
    }

    let solved = (1..=rotations)
        .into_par_iter()
        .map(|j| {
            let uj = rotate(voltages, j)?;
            let potential = system.forward_solve(&uj)?;
            let computed = electrode_currents(disc, &potential, &uj)?;
            let residual: Vec<f64> = computed.iter().zip(meas.row(j - 1)).map(|(c, i)| c - i).collect();
            Ok((potential, residual))
        })
        .collect::<Result<Vec<_>>>()?;
    let (potentials, residuals): (Vec<_>, Vec<_>) = solved.into_iter().unzip();

    let per_pattern: Vec<Vec<f64>> = residuals
        .iter()
        .map(|r| r.iter().map(|x| x * x).collect())
        .collect();
    let regularization = beta
        * compensated_sum(voltages.iter().zip(meas.u_star()).map(|(u, s)| (u - s) * (u - s)));
    let total = compensated_sum(per_pattern.iter().flatten().copied().chain([regularization]));
    Ok(CostEvaluation {
        breakdown: CostBreakdown {
            total,
            per_pattern,
            regularization,
        },
        residuals,
        potentials,
    })
}

/// Neumaier-compensated summation.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0f64;
    let mut carry = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            carry += (sum - t) + v;
        } else {
            carry += (v - t) + sum;
        }
        sum = t;
    }
    sum + carry
}
