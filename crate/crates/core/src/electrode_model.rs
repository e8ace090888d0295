//! Electrode currents, the voltage-to-current response matrix, the convex
//! voltage fit and synthetic measurement generation.

use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{check_len, Error, Result};
use crate::fem::{Discretization, FemSystem};
use crate::objective::rotate;

/// Relative tolerance for charge conservation of a current pattern.
pub const CONSERVATION_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Voltage,
    Current,
}

/// Electrode vector in voltage (volts) or current (amperes) role.
#[derive(Debug, Clone, PartialEq)]
pub struct Pattern {
    values: Vec<f64>,
    role: Role,
}

impl Pattern {
    pub fn voltage(values: Vec<f64>) -> Self {
        Pattern {
            values,
            role: Role::Voltage,
        }
    }

    /// Current pattern; rejected unless `|sum| <= 1e-10 sum |I_l|`.
    pub fn current(values: Vec<f64>) -> Result<Self> {
        let sum: f64 = values.iter().sum();
        let scale: f64 = values.iter().map(|v| v.abs()).sum();
        if sum.abs() > CONSERVATION_TOLERANCE * scale {
            return Err(Error::InvalidInput(format!(
                "current pattern must sum to zero, got {sum:e}"
            )));
        }
        Ok(Pattern {
            values,
            role: Role::Current,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Grounded voltages: `|sum| <= 1e-12 max(1, max |U_l|)`.
    pub fn is_grounded(&self) -> bool {
        let max = self.values.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        self.values.iter().sum::<f64>().abs() <= 1e-12 * max
    }
}

/// `I_l = (U_l |E_l| - int_{E_l} u dS) / Z_l`.
pub fn electrode_currents(disc: &Discretization, u: &[f64], voltages: &[f64]) -> Result<Vec<f64>> {
    let layout = disc.layout();
    check_len("potential", disc.num_nodes(), u.len())?;
    check_len("voltage pattern", layout.count(), voltages.len())?;
    Ok((0..layout.count())
        .map(|l| (voltages[l] * layout.area()[l] - disc.electrode_integral(u, l)) / layout.impedance()[l])
        .collect())
}

/// Column `k` holds the currents produced by unit voltage on electrode `k`.
pub fn response_matrix(system: &FemSystem<'_>) -> Result<DMatrix<f64>> {
    let disc = system.discretization();
    let m = disc.num_electrodes();
    let w = system.unit_solves()?;
    let mut out = DMatrix::zeros(m, m);
    for (k, wk) in w.iter().enumerate() {
        let mut e = vec![0.0; m];
        e[k] = 1.0;
        let col = electrode_currents(disc, wk, &e)?;
        out.set_column(k, &DVector::from_vec(col));
    }
    Ok(out)
}

/// Result of the zero-mean voltage fit `min |M U - I|`.
#[derive(Debug, Clone)]
pub struct VoltageFit {
    pub voltages: Vec<f64>,
    /// `|M U - I|`.
    pub residual: f64,
    /// `|M U - I| / |I|`, zero when `I = 0`.
    pub relative_residual: f64,
    /// Numerical rank of `M` on the zero-mean subspace (full rank is `m - 1`).
    pub rank: usize,
}

impl VoltageFit {
    pub fn rank_deficient(&self) -> bool {
        self.rank + 1 < self.voltages.len()
    }

    /// The fit's cost `sum_l (M U - I)_l^2`.
    pub fn cost(&self) -> f64 {
        self.residual * self.residual
    }
}

/// Orthonormal basis of `{x : sum x = 0}` as the columns of an `m x (m-1)`
/// matrix.
pub fn zero_mean_basis(m: usize) -> DMatrix<f64> {
    let mut b = DMatrix::identity(m, m);
    b.set_column(0, &DVector::from_element(m, 1.0));
    let q = b.qr().q();
    q.columns(1, m - 1).into_owned()
}

/// Zero-mean least-squares minimizer of `|M U - I|`.
pub fn solve_problem_i(response: &DMatrix<f64>, currents: &[f64]) -> Result<VoltageFit> {
    let m = response.nrows();
    if response.ncols() != m || m < 2 {
        return Err(Error::InvalidInput(format!(
            "response matrix must be square with m >= 2, got {}x{}",
            response.nrows(),
            response.ncols()
        )));
    }
    check_len("current pattern", m, currents.len())?;
    let rhs = DVector::from_column_slice(currents);
    let q = zero_mean_basis(m);
    let svd = (response * &q).svd(true, true);
    let smax = svd.singular_values.max();
    let cutoff = 1e-12 * smax;
    let rank = svd.singular_values.iter().filter(|&&s| s > cutoff).count();
    let y = if smax > 0.0 {
        svd.solve(&rhs, cutoff).map_err(|e| Error::InvalidInput(e.to_string()))?
    } else {
        DVector::zeros(m - 1)
    };
    let mut u = &q * y;
    let mean = u.mean();
    u.add_scalar_mut(-mean);
    let residual = (response * &u - &rhs).norm();
    let norm = rhs.norm();
    Ok(VoltageFit {
        voltages: u.iter().copied().collect(),
        residual,
        relative_residual: if norm > 0.0 { residual / norm } else { 0.0 },
        rank,
    })
}

/// Currents of all cyclic rotations of a reference voltage vector.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSet {
    /// Row `j` is the current vector of rotation `j + 1`.
    currents: Vec<Vec<f64>>,
    u_star: Vec<f64>,
}

impl MeasurementSet {
    pub fn new(currents: Vec<Vec<f64>>, u_star: Vec<f64>) -> Result<Self> {
        let m = u_star.len();
        if m < 2 {
            return Err(Error::InvalidInput("measurement set needs m >= 2".into()));
        }
        if currents.is_empty() || currents.len() > m {
            return Err(Error::InvalidInput(format!(
                "measurement set needs 1..={m} current rows, got {}",
                currents.len()
            )));
        }
        for row in &currents {
            check_len("current row", m, row.len())?;
        }
        Ok(MeasurementSet { currents, u_star })
    }

    pub fn electrodes(&self) -> usize {
        self.u_star.len()
    }

    pub fn rows(&self) -> usize {
        self.currents.len()
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.currents[j]
    }

    pub fn currents(&self) -> &[Vec<f64>] {
        &self.currents
    }

    pub fn u_star(&self) -> &[f64] {
        &self.u_star
    }

    /// Adds independent `N(0, std^2)` noise to every current.
    pub fn with_noise(mut self, std: f64, seed: u64) -> Result<Self> {
        let normal = Normal::new(0.0, std).map_err(|e| Error::InvalidInput(e.to_string()))?;
        let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
        for row in &mut self.currents {
            for v in row.iter_mut() {
                *v += normal.sample(&mut rng);
            }
        }
        Ok(self)
    }

    /// `m`, then `U*`, then one line per current row.
    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{} {}", self.electrodes(), self.rows())?;
        write_row(&mut w, &self.u_star)?;
        for row in &self.currents {
            write_row(&mut w, row)?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let mut next = |what: &str| -> Result<String> {
            loop {
                match lines.next() {
                    Some(line) => {
                        let line = line?;
                        if !line.trim().is_empty() {
                            return Ok(line);
                        }
                    }
                    None => return Err(Error::Parse(format!("unexpected end of file reading {what}"))),
                }
            }
        };
        let header: Vec<usize> = parse_row(&next("header")?)?;
        let [m, rows] = header[..] else {
            return Err(Error::Parse("measurement header must be `m rows`".into()));
        };
        let u_star: Vec<f64> = parse_row(&next("U*")?)?;
        check_len("U*", m, u_star.len())?;
        let currents = (0..rows)
            .map(|_| parse_row(&next("current row")?))
            .collect::<Result<Vec<Vec<f64>>>>()?;
        Self::new(currents, u_star)
    }
}

fn write_row<W: Write>(w: &mut W, row: &[f64]) -> Result<()> {
    let text: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
    writeln!(w, "{}", text.join(" "))?;
    Ok(())
}

fn parse_row<T: std::str::FromStr>(line: &str) -> Result<Vec<T>> {
    line.split_whitespace()
        .map(|t| t.parse().map_err(|_| Error::Parse(format!("cannot parse {t:?}"))))
        .collect()
}

/// Currents `I^j` for every rotation `U^j` of `u_star`, at the conductivity
/// the system was assembled with.
pub fn generate_measurements(system: &FemSystem<'_>, u_star: &[f64]) -> Result<MeasurementSet> {
    let disc = system.discretization();
    let m = disc.num_electrodes();
    check_len("U*", m, u_star.len())?;
    let currents = (1..=m)
        .into_par_iter()
        .map(|j| {
            let uj = rotate(u_star, j)?;
            let potential = system.forward_solve(&uj)?;
            electrode_currents(disc, &potential, &uj)
        })
        .collect::<Result<Vec<_>>>()?;
    MeasurementSet::new(currents, u_star.to_vec())
}
