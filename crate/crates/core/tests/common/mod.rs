//! Shared fixtures and a dense brute-force reference implementation.
//!
//! The reference builds every quantity from scratch: hat-function gradients
//! by inverting the vertex matrix, facet integrals by Gauss quadrature and
//! solves by dense LU. It shares no code with the library beyond the mesh
//! and electrode layout it is given.
#![allow(dead_code)]

use eit_core::fem::Discretization;
use eit_core::mesh::{place_electrodes_2d, place_electrodes_3d, CylinderMesher, DiskMesher, ElectrodeLayout, Mesh};
use nalgebra::{DMatrix, DVector};

/// Unit square split along its diagonal, with one electrode on the bottom
/// edge and one on the top edge.
pub fn two_triangle_square(z: [f64; 2]) -> Discretization {
    let mesh = Mesh::new(2, vec![0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0, 1.0], vec![0, 1, 2, 0, 2, 3]).unwrap();
    let bottom = find_facet(&mesh, &[0, 1]);
    let top = find_facet(&mesh, &[2, 3]);
    let layout = ElectrodeLayout::new(&mesh, vec![vec![bottom], vec![top]], z.to_vec()).unwrap();
    Discretization::new(mesh, layout).unwrap()
}

/// Unit cube split into six tetrahedra around the main diagonal, with
/// electrodes on the faces `z = 0` and `z = 1`.
pub fn kuhn_cube(z: [f64; 2]) -> Discretization {
    let mut coords = Vec::new();
    for k in 0..8 {
        coords.extend([(k & 1) as f64, ((k >> 1) & 1) as f64, ((k >> 2) & 1) as f64]);
    }
    let mut elements = Vec::new();
    let at = |k: usize, axis: usize| coords[3 * k + axis];
    for (a, b) in [(1, 2), (1, 4), (2, 1), (2, 4), (4, 1), (4, 2)] {
        let mut tet = [0, a, a | b, 7];
        let edge = |p: usize| -> Vec<f64> { (0..3).map(|k| at(tet[p], k) - at(tet[0], k)).collect() };
        let (u, v, w) = (edge(1), edge(2), edge(3));
        let det = u[0] * (v[1] * w[2] - v[2] * w[1]) - u[1] * (v[0] * w[2] - v[2] * w[0]) + u[2] * (v[0] * w[1] - v[1] * w[0]);
        if det < 0.0 {
            tet.swap(2, 3);
        }
        elements.extend(tet);
    }
    let mesh = Mesh::new(3, coords, elements).unwrap();
    let on_face = |axis_value: f64| -> Vec<usize> {
        (0..mesh.num_facets())
            .filter(|&f| mesh.facet(f).iter().all(|&i| mesh.node(i)[2] == axis_value))
            .collect()
    };
    let layout = ElectrodeLayout::new(&mesh, vec![on_face(0.0), on_face(1.0)], z.to_vec()).unwrap();
    Discretization::new(mesh, layout).unwrap()
}

/// Disk with at most 50 nodes and `m` electrodes.
pub fn tiny_disk(m: usize) -> Discretization {
    let mesh = DiskMesher::new(0.1, 0.05).boundary_edge(0.03).build().unwrap();
    assert!(mesh.num_nodes() <= 50, "{} nodes", mesh.num_nodes());
    let layout = place_electrodes_2d(&mesh, m, 0.5, 0.1).unwrap();
    Discretization::new(mesh, layout).unwrap()
}

/// Cylinder with at most 50 nodes and one ring of four electrodes.
pub fn tiny_cylinder() -> Discretization {
    let mesh = CylinderMesher::new(0.1, 0.1, 0.1).build().unwrap();
    assert!(mesh.num_nodes() <= 50, "{} nodes", mesh.num_nodes());
    let layout = place_electrodes_3d(&mesh, 1, 4, 1.5, 0.08, 0.1).unwrap();
    Discretization::new(mesh, layout).unwrap()
}

/// Disk with 16 conforming electrodes and 400 triangles.
pub fn coarse_disk() -> Discretization {
    let mesh = DiskMesher::new(0.1, 0.025)
        .boundary_edge(0.01)
        .conforming_electrodes(16, 0.06)
        .build()
        .unwrap();
    let layout = place_electrodes_2d(&mesh, 16, 0.06, 0.1).unwrap();
    Discretization::new(mesh, layout).unwrap()
}

/// Two- and three-dimensional meshes with at most 50 nodes.
pub fn small_fixtures() -> Vec<(&'static str, Discretization)> {
    vec![
        ("square", two_triangle_square([0.5, 2.0])),
        ("cube", kuhn_cube([0.3, 1.5])),
        ("disk", tiny_disk(6)),
        ("cylinder", tiny_cylinder()),
    ]
}

pub fn find_facet(mesh: &Mesh, nodes: &[usize]) -> usize {
    (0..mesh.num_facets())
        .find(|&f| {
            let mut a = mesh.facet(f).to_vec();
            let mut b = nodes.to_vec();
            a.sort_unstable();
            b.sort_unstable();
            a == b
        })
        .expect("facet exists")
}

/// Smooth positive conductivity varying across elements.
pub fn varied_sigma(mesh: &Mesh) -> Vec<f64> {
    (0..mesh.num_elements())
        .map(|e| {
            let c = mesh.element_centroid(e);
            0.5 + 0.3 * (13.0 * c[0]).sin() * (7.0 * c[1] + 1.0).cos() + 0.1 * c[2]
        })
        .collect()
}

/// Deterministic zero-sum pattern with distinct entries.
pub fn test_voltages(m: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..m).map(|l| ((l * 7 + 3) % m) as f64 * 0.37 - 0.2 * l as f64).collect();
    let mean = raw.iter().sum::<f64>() / m as f64;
    raw.iter().map(|v| v - mean).collect()
}

pub fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    if num == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Quadrature on a facet: `(weight, barycentric coordinates)` pairs, exact
/// for polynomials of degree 3 (segments) or 2 (triangles).
fn facet_rule(mesh: &Mesh, f: usize) -> Vec<(f64, Vec<f64>)> {
    let p: Vec<&[f64]> = mesh.facet(f).iter().map(|&i| mesh.node(i)).collect();
    if mesh.dim() == 2 {
        let len = ((p[1][0] - p[0][0]).powi(2) + (p[1][1] - p[0][1]).powi(2)).sqrt();
        let g = 0.5 / 3f64.sqrt();
        [0.5 - g, 0.5 + g]
            .iter()
            .map(|&t| (len / 2.0, vec![1.0 - t, t]))
            .collect()
    } else {
        let u: Vec<f64> = (0..3).map(|k| p[1][k] - p[0][k]).collect();
        let v: Vec<f64> = (0..3).map(|k| p[2][k] - p[0][k]).collect();
        let cross = [u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0]];
        let area = 0.5 * cross.iter().map(|c| c * c).sum::<f64>().sqrt();
        let (a, b) = (2.0 / 3.0, 1.0 / 6.0);
        [[a, b, b], [b, a, b], [b, b, a]]
            .iter()
            .map(|w| (area / 3.0, w.to_vec()))
            .collect()
    }
}

/// Dense reference system at a fixed conductivity.
pub struct DenseReference {
    pub n: usize,
    pub m: usize,
    pub matrix: DMatrix<f64>,
    /// `c[l][i] = int_{E_l} phi_i`.
    pub c: Vec<DVector<f64>>,
    pub z: Vec<f64>,
    pub area: Vec<f64>,
    /// Element stiffness `K_e` (unit conductivity) as dense `n x n` blocks.
    pub stiffness: Vec<DMatrix<f64>>,
    /// `|T_e|`.
    pub measure: Vec<f64>,
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl DenseReference {
    pub fn new(mesh: &Mesh, layout: &ElectrodeLayout, sigma: &[f64]) -> Self {
        let n = mesh.num_nodes();
        let d = mesh.dim();
        let m = layout.count();
        let mut matrix = DMatrix::zeros(n, n);
        let mut stiffness = Vec::new();
        let mut measure = Vec::new();
        for e in 0..mesh.num_elements() {
            let nodes = mesh.element(e);
            // Rows (1, x_a): column a of the inverse holds the coefficients of phi_a.
            let t = DMatrix::from_fn(d + 1, d + 1, |a, k| if k == 0 { 1.0 } else { mesh.node(nodes[a])[k - 1] });
            let vol = t.determinant().abs() / if d == 2 { 2.0 } else { 6.0 };
            let inv = t.try_inverse().unwrap();
            let mut k_e = DMatrix::zeros(n, n);
            for a in 0..=d {
                for b in 0..=d {
                    let g: f64 = (1..=d).map(|k| inv[(k, a)] * inv[(k, b)]).sum();
                    k_e[(nodes[a], nodes[b])] += vol * g;
                }
            }
            matrix += sigma[e] * &k_e;
            stiffness.push(k_e);
            measure.push(vol);
        }
        let mut c = Vec::new();
        let mut area = Vec::new();
        for l in 0..m {
            let mut cl = DVector::zeros(n);
            let mut a = 0.0;
            for &f in layout.facets(l) {
                let nodes = mesh.facet(f);
                for (w, bary) in facet_rule(mesh, f) {
                    a += w;
                    for (i, &ni) in nodes.iter().enumerate() {
                        cl[ni] += w * bary[i];
                        for (j, &nj) in nodes.iter().enumerate() {
                            matrix[(ni, nj)] += w * bary[i] * bary[j] / layout.impedance()[l];
                        }
                    }
                }
            }
            c.push(cl);
            area.push(a);
        }
        let lu = matrix.clone().lu();
        DenseReference {
            n,
            m,
            matrix,
            c,
            z: layout.impedance().to_vec(),
            area,
            stiffness,
            measure,
            lu,
        }
    }

    pub fn from_disc(disc: &Discretization, sigma: &[f64]) -> Self {
        Self::new(disc.mesh(), disc.layout(), sigma)
    }

    fn rhs(&self, coeffs: &[f64]) -> DVector<f64> {
        let mut b = DVector::zeros(self.n);
        for l in 0..self.m {
            b += (coeffs[l] / self.z[l]) * &self.c[l];
        }
        b
    }

    pub fn forward(&self, voltages: &[f64]) -> Vec<f64> {
        self.lu.solve(&self.rhs(voltages)).unwrap().iter().copied().collect()
    }

    pub fn currents(&self, u: &[f64], voltages: &[f64]) -> Vec<f64> {
        let u = DVector::from_column_slice(u);
        (0..self.m)
            .map(|l| (voltages[l] * self.area[l] - self.c[l].dot(&u)) / self.z[l])
            .collect()
    }

    /// Single-pattern cost and its residuals.
    pub fn cost_j(&self, voltages: &[f64], measured: &[f64]) -> (f64, Vec<f64>) {
        let u = self.forward(voltages);
        let r: Vec<f64> = self.currents(&u, voltages).iter().zip(measured).map(|(a, b)| a - b).collect();
        (r.iter().map(|x| x * x).sum(), r)
    }

    /// Adjoint state: `A psi = -2 sum_l r_l c_l / Z_l`.
    pub fn adjoint(&self, residuals: &[f64]) -> Vec<f64> {
        let coeffs: Vec<f64> = residuals.iter().map(|r| -2.0 * r).collect();
        self.lu.solve(&self.rhs(&coeffs)).unwrap().iter().copied().collect()
    }

    /// `dJ/dsigma_e` by the chain rule through `du/dsigma_e = -A^{-1} K_e u`.
    pub fn cost_derivative(&self, voltages: &[f64], measured: &[f64]) -> Vec<f64> {
        let (_, r) = self.cost_j(voltages, measured);
        let u = DVector::from_vec(self.forward(voltages));
        self.stiffness
            .iter()
            .map(|k_e| {
                let du = -self.lu.solve(&(k_e * &u)).unwrap();
                (0..self.m).map(|l| -2.0 * r[l] * self.c[l].dot(&du) / self.z[l]).sum()
            })
            .collect()
    }
}

/// Coarse 16-electrode disk scenario (400 triangles) for fast end-to-end runs.
pub const COARSE_TOML: &str = r#"
[geometry]
kind = "disk"
radius = 0.1

[mesh]
target_edge = 0.025
boundary_edge = 0.01
conforming = true

[electrodes]
per_layer = 16
width = 0.06
impedance = 0.1

[current]
values = [0.025, 0.025, 0.025, 0.025, 0.025, -0.025, -0.025, 0.025, -0.025, -0.025, 0.025, -0.025, 0.025, -0.025, -0.025, -0.025]

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
max_iterations = 20
"#;

/// Directory holding the shipped scenario files.
pub fn configs_dir() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}
