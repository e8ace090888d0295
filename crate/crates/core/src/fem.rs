//! P1 finite elements for the complete electrode model.
//!
//! For a conductivity `sigma` (constant per element) and contact impedances
//! `Z`, the system matrix is
//!
//! `A_ij = sum_e sigma_e |e| grad(phi_i).grad(phi_j) + sum_l (1/Z_l) int_{E_l} phi_i phi_j`
//!
//! and the state equation for electrode voltages `U` is `A u = sum_l U_l b_l`
//! with `(b_l)_j = (1/Z_l) int_{E_l} phi_j`. The adjoint problem uses the same
//! matrix, so one factorization serves every solve at a given `sigma`.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};

use rayon::prelude::*;

use crate::error::{check_len, Error, Result};
use crate::mesh::{ElectrodeLayout, Mesh};
use crate::sparse::{reverse_cuthill_mckee, CsrMatrix, EnvelopeCholesky};

/// Relative residual accepted from a linear solve.
pub const SOLVE_TOLERANCE: f64 = 1e-10;

/// Nodal values of a P1 function, one per mesh node (volts).
pub type Potential = Vec<f64>;

/// Box bounds `lower <= sigma <= upper` on the conductivity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds {
    pub lower: f64,
    pub upper: f64,
}

impl Bounds {
    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        if !(lower > 0.0 && lower < upper && upper.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "conductivity bounds need 0 < lower < upper, got [{lower}, {upper}]"
            )));
        }
        Ok(Bounds { lower, upper })
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lower && v <= self.upper
    }
}

/// Per-element conductivity inside its bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct ConductivityField {
    values: Vec<f64>,
    bounds: Bounds,
}

impl ConductivityField {
    pub fn new(values: Vec<f64>, bounds: Bounds) -> Result<Self> {
        if let Some((e, v)) = values.iter().enumerate().find(|(_, v)| !bounds.contains(**v)) {
            return Err(Error::InvalidInput(format!(
                "conductivity {v} on element {e} outside [{}, {}]",
                bounds.lower, bounds.upper
            )));
        }
        Ok(ConductivityField { values, bounds })
    }

    pub fn uniform(elements: usize, value: f64, bounds: Bounds) -> Result<Self> {
        Self::new(vec![value; elements], bounds)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn bounds(&self) -> Bounds {
        self.bounds
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

/// Mesh-dependent data shared by every assembly: element geometry, the
/// sparsity pattern with per-element scatter slots, the electrode terms and
/// the fill-reducing ordering.
#[derive(Debug)]
pub struct Discretization {
    mesh: Mesh,
    layout: ElectrodeLayout,
    measures: Vec<f64>,
    gradients: Vec<[f64; 3]>,
    scatter: Vec<usize>,
    pattern: CsrMatrix,
    robin: Vec<f64>,
    electrode_weights: Vec<Vec<(usize, f64)>>,
    ordering: Vec<usize>,
    assemblies: AtomicUsize,
}

impl Discretization {
    pub fn new(mesh: Mesh, layout: ElectrodeLayout) -> Result<Self> {
        let k = mesh.dim() + 1;
        let adjacency = mesh.node_adjacency();
        let pattern = CsrMatrix::from_adjacency(&adjacency);
        let ordering = reverse_cuthill_mckee(&adjacency);

        let mut measures = Vec::with_capacity(mesh.num_elements());
        let mut gradients = Vec::with_capacity(mesh.num_elements() * k);
        let mut scatter = Vec::with_capacity(mesh.num_elements() * k * k);
        for e in 0..mesh.num_elements() {
            measures.push(mesh.element_signed_measure(e));
            gradients.extend(mesh.element_gradients(e));
            let el = mesh.element(e);
            for &a in el {
                for &b in el {
                    scatter.push(pattern.position(a, b).expect("element pair in pattern"));
                }
            }
        }

        let mut robin = vec![0.0; pattern.nnz()];
        let mut electrode_weights = Vec::with_capacity(layout.count());
        for l in 0..layout.count() {
            let inv_z = 1.0 / layout.impedance()[l];
            let mut weights: BTreeMap<usize, f64> = BTreeMap::new();
            for &f in layout.facets(l) {
                let nodes = mesh.facet(f);
                let kf = nodes.len() as f64;
                let size = mesh.facet_measure(f);
                // exact P1 facet mass: |f| (1 + delta_ab) / (kf (kf + 1))
                for &a in nodes {
                    *weights.entry(a).or_insert(0.0) += size / kf;
                    for &b in nodes {
                        let mass = if a == b { 2.0 } else { 1.0 } * size / (kf * (kf + 1.0));
                        let slot = pattern.position(a, b).expect("facet pair in pattern");
                        robin[slot] += inv_z * mass;
                    }
                }
            }
            electrode_weights.push(weights.into_iter().collect());
        }

        Ok(Discretization {
            mesh,
            layout,
            measures,
            gradients,
            scatter,
            pattern,
            robin,
            electrode_weights,
            ordering,
            assemblies: AtomicUsize::new(0),
        })
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn layout(&self) -> &ElectrodeLayout {
        &self.layout
    }

    pub fn num_electrodes(&self) -> usize {
        self.layout.count()
    }

    pub fn num_nodes(&self) -> usize {
        self.mesh.num_nodes()
    }

    pub fn num_elements(&self) -> usize {
        self.mesh.num_elements()
    }

    /// Element areas/volumes, the weights of the discrete L2 inner product.
    pub fn element_measures(&self) -> &[f64] {
        &self.measures
    }

    /// Gradients of the local hat functions on element `e`.
    pub fn element_gradients(&self, e: usize) -> &[[f64; 3]] {
        let k = self.mesh.dim() + 1;
        &self.gradients[e * k..(e + 1) * k]
    }

    /// Constant gradient of the P1 function `u` on element `e`.
    pub fn gradient_on(&self, e: usize, u: &[f64]) -> [f64; 3] {
        let mut g = [0.0; 3];
        for (&node, grad) in self.mesh.element(e).iter().zip(self.element_gradients(e)) {
            for d in 0..3 {
                g[d] += u[node] * grad[d];
            }
        }
        g
    }

    /// `(node, int_{E_l} phi_node dS)` for the nodes of electrode `l`.
    pub fn electrode_weights(&self, l: usize) -> &[(usize, f64)] {
        &self.electrode_weights[l]
    }

    /// Exact `int_{E_l} u dS` for a P1 function `u`.
    pub fn electrode_integral(&self, u: &[f64], l: usize) -> f64 {
        self.electrode_weights[l].iter().map(|&(i, w)| w * u[i]).sum()
    }

    /// How many systems have been assembled against this discretization.
    pub fn assembly_count(&self) -> usize {
        self.assemblies.load(Ordering::Relaxed)
    }

    /// Assembles and factors the system matrix for per-element `sigma`.
    pub fn assemble(&self, sigma: &[f64]) -> Result<FemSystem<'_>> {
        check_len("conductivity", self.num_elements(), sigma.len())?;
        if let Some((e, s)) = sigma.iter().enumerate().find(|(_, s)| !(**s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidInput(format!(
                "conductivity must be positive and finite, element {e} has {s}"
            )));
        }
        self.assemblies.fetch_add(1, Ordering::Relaxed);
        let k = self.mesh.dim() + 1;
        let mut matrix = self.pattern.clone();
        let values = matrix.values_mut();
        values.copy_from_slice(&self.robin);
        for (e, &s) in sigma.iter().enumerate() {
            let grads = self.element_gradients(e);
            let scale = s * self.measures[e];
            let slots = &self.scatter[e * k * k..(e + 1) * k * k];
            for a in 0..k {
                for b in 0..k {
                    let ga = grads[a];
                    let gb = grads[b];
                    values[slots[a * k + b]] += scale * (ga[0] * gb[0] + ga[1] * gb[1] + ga[2] * gb[2]);
                }
            }
        }
        let factor = EnvelopeCholesky::factor(&matrix, &self.ordering)?;
        Ok(FemSystem {
            disc: self,
            matrix,
            factor,
        })
    }
}

/// Assembled and factored system at one conductivity.
#[derive(Debug)]
pub struct FemSystem<'a> {
    disc: &'a Discretization,
    matrix: CsrMatrix,
    factor: EnvelopeCholesky,
}

/// Assembles and factors the system for a bounded conductivity field.
pub fn assemble_system<'a>(disc: &'a Discretization, sigma: &ConductivityField) -> Result<FemSystem<'a>> {
    disc.assemble(sigma.values())
}

impl<'a> FemSystem<'a> {
    pub fn discretization(&self) -> &'a Discretization {
        self.disc
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    /// Solves `A x = rhs`, verifying the residual (with one refinement step
    /// if needed).
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        check_len("right-hand side", self.matrix.size(), rhs.len())?;
        let norm = l2(rhs);
        if norm == 0.0 {
            return Ok(vec![0.0; rhs.len()]);
        }
        let mut x = self.factor.solve(rhs);
        let mut res = self.residual(&x, rhs);
        if l2(&res) > SOLVE_TOLERANCE * norm {
            let dx = self.factor.solve(&res);
            for (xi, d) in x.iter_mut().zip(dx) {
                *xi += d;
            }
            res = self.residual(&x, rhs);
        }
        let rel = l2(&res) / norm;
        if !(rel <= SOLVE_TOLERANCE) {
            return Err(Error::SolveFailed {
                residual: rel,
                tolerance: SOLVE_TOLERANCE,
            });
        }
        Ok(x)
    }

    fn residual(&self, x: &[f64], rhs: &[f64]) -> Vec<f64> {
        self.matrix
            .mul_vec(x)
            .iter()
            .zip(rhs)
            .map(|(ax, b)| b - ax)
            .collect()
    }

    /// `sum_l c_l b_l` with `(b_l)_j = (1/Z_l) int_{E_l} phi_j`.
    pub fn electrode_rhs(&self, coeffs: &[f64]) -> Vec<f64> {
        let mut rhs = vec![0.0; self.disc.num_nodes()];
        for (l, &c) in coeffs.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            let scale = c / self.disc.layout.impedance()[l];
            for &(i, w) in self.disc.electrode_weights(l) {
                rhs[i] += scale * w;
            }
        }
        rhs
    }

    /// State potential for electrode voltages `voltages`.
    pub fn forward_solve(&self, voltages: &[f64]) -> Result<Potential> {
        check_len("voltage pattern", self.disc.num_electrodes(), voltages.len())?;
        self.solve(&self.electrode_rhs(voltages))
    }

    /// Forward solves for several voltage patterns, in parallel.
    pub fn forward_solve_many(&self, patterns: &[Vec<f64>]) -> Result<Vec<Potential>> {
        patterns.par_iter().map(|u| self.forward_solve(u)).collect()
    }

    /// Adjoint potential with boundary data
    /// `2 int_{E_l} (u - U_l)/Z_l dS + 2 I_l` on electrode `l`.
    pub fn adjoint_solve(&self, u: &[f64], voltages: &[f64], currents: &[f64]) -> Result<Potential> {
        let m = self.disc.num_electrodes();
        check_len("potential", self.disc.num_nodes(), u.len())?;
        check_len("voltage pattern", m, voltages.len())?;
        check_len("current pattern", m, currents.len())?;
        let coeffs: Vec<f64> = (0..m)
            .map(|l| {
                let z = self.disc.layout.impedance()[l];
                let area = self.disc.layout.area()[l];
                2.0 * (self.disc.electrode_integral(u, l) - voltages[l] * area) / z + 2.0 * currents[l]
            })
            .collect();
        self.solve(&self.electrode_rhs(&coeffs))
    }

    /// Adjoint potential from the current residuals
    /// `r_l = int_{E_l}(U_l - u)/Z_l dS - I_l`; the boundary data is `-2 r_l`.
    pub fn adjoint_from_residuals(&self, residuals: &[f64]) -> Result<Potential> {
        check_len("residuals", self.disc.num_electrodes(), residuals.len())?;
        let coeffs: Vec<f64> = residuals.iter().map(|r| -2.0 * r).collect();
        self.solve(&self.electrode_rhs(&coeffs))
    }

    /// Potentials `w_k` for unit voltage on electrode `k` and zero elsewhere.
    pub fn unit_solves(&self) -> Result<Vec<Potential>> {
        let m = self.disc.num_electrodes();
        (0..m)
            .into_par_iter()
            .map(|k| {
                let mut e = vec![0.0; m];
                e[k] = 1.0;
                self.forward_solve(&e)
            })
            .collect()
    }
}

/// Exact integral of the P1 function `u` over electrode `l`.
pub fn boundary_integral(mesh: &Mesh, layout: &ElectrodeLayout, u: &[f64], l: usize) -> Result<f64> {
    if l >= layout.count() {
        return Err(Error::InvalidInput(format!(
            "electrode index {l} out of range (count {})",
            layout.count()
        )));
    }
    check_len("potential", mesh.num_nodes(), u.len())?;
    Ok(layout
        .facets(l)
        .iter()
        .map(|&f| {
            let nodes = mesh.facet(f);
            let mean = nodes.iter().map(|&i| u[i]).sum::<f64>() / nodes.len() as f64;
            mesh.facet_measure(f) * mean
        })
        .sum())
}

pub(crate) fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}
