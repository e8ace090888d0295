//! Simplicial meshes of the body and the electrode geometry attached to them.
//!
//! A [`Mesh`] stores triangles (2D) or tetrahedra (3D) with positive
//! orientation. Boundary facets are derived from the element list, keep a
//! reference to their owning element and are stored with outward orientation.

mod electrodes;
mod generate;
mod io;

pub use electrodes::{place_electrodes_2d, place_electrodes_3d, ElectrodeLayout};
pub use generate::{
    generate_cylinder_mesh, generate_disk_mesh, CylinderMesher, DiskMesher,
};
pub use io::{read_mesh, write_mesh};

use std::collections::HashMap;

use crate::error::{Error, Result};

/// Local faces of a positively oriented simplex, listed so that each face is
/// outward oriented.
const TRI_FACES: [[usize; 2]; 3] = [[0, 1], [1, 2], [2, 0]];
const TET_FACES: [[usize; 3]; 4] = [[1, 2, 3], [0, 3, 2], [0, 1, 3], [0, 2, 1]];

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    dim: usize,
    coords: Vec<f64>,
    elements: Vec<usize>,
    facets: Vec<usize>,
    facet_owner: Vec<usize>,
}

impl Mesh {
    /// Builds a mesh from flat coordinate and connectivity arrays.
    ///
    /// `coords` has stride `dim`, `elements` stride `dim + 1`. Every element
    /// must have strictly positive signed measure. Boundary facets are
    /// extracted from the connectivity; a facet shared by more than two
    /// elements is rejected.
    pub fn new(dim: usize, coords: Vec<f64>, elements: Vec<usize>) -> Result<Self> {
        if dim != 2 && dim != 3 {
            return Err(Error::InvalidMesh(format!("unsupported dimension {dim}")));
        }
        if coords.len() % dim != 0 || elements.len() % (dim + 1) != 0 {
            return Err(Error::InvalidMesh("ragged coordinate or element array".into()));
        }
        let n_nodes = coords.len() / dim;
        if let Some(&bad) = elements.iter().find(|&&i| i >= n_nodes) {
            return Err(Error::InvalidMesh(format!("node index {bad} out of range")));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidMesh("non-finite coordinate".into()));
        }
        let mut mesh = Mesh {
            dim,
            coords,
            elements,
            facets: Vec::new(),
            facet_owner: Vec::new(),
        };
        for e in 0..mesh.num_elements() {
            let vol = mesh.element_signed_measure(e);
            if vol <= 0.0 || !vol.is_finite() {
                return Err(Error::InvalidMesh(format!(
                    "element {e} has non-positive measure {vol:e}"
                )));
            }
        }
        mesh.build_boundary()?;
        Ok(mesh)
    }

    fn build_boundary(&mut self) -> Result<()> {
        let mut count: HashMap<[usize; 3], u32> = HashMap::new();
        for e in 0..self.num_elements() {
            for face in self.local_faces(e) {
                *count.entry(facet_key(&face)).or_insert(0) += 1;
            }
        }
        if let Some((k, c)) = count.iter().find(|(_, &c)| c > 2) {
            return Err(Error::InvalidMesh(format!(
                "facet {k:?} shared by {c} elements"
            )));
        }
        let mut facets = Vec::new();
        let mut owner = Vec::new();
        for e in 0..self.num_elements() {
            for face in self.local_faces(e) {
                if count[&facet_key(&face)] == 1 {
                    facets.extend_from_slice(&face);
                    owner.push(e);
                }
            }
        }
        self.facets = facets;
        self.facet_owner = owner;
        Ok(())
    }

    fn local_faces(&self, e: usize) -> Vec<Vec<usize>> {
        let el = self.element(e);
        if self.dim == 2 {
            TRI_FACES.iter().map(|f| vec![el[f[0]], el[f[1]]]).collect()
        } else {
            TET_FACES
                .iter()
                .map(|f| vec![el[f[0]], el[f[1]], el[f[2]]])
                .collect()
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_nodes(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn num_elements(&self) -> usize {
        self.elements.len() / (self.dim + 1)
    }

    pub fn num_facets(&self) -> usize {
        self.facet_owner.len()
    }

    pub fn node(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn element(&self, e: usize) -> &[usize] {
        let k = self.dim + 1;
        &self.elements[e * k..(e + 1) * k]
    }

    /// Boundary facet `f`, outward oriented.
    pub fn facet(&self, f: usize) -> &[usize] {
        &self.facets[f * self.dim..(f + 1) * self.dim]
    }

    pub fn facet_owner(&self, f: usize) -> usize {
        self.facet_owner[f]
    }

    /// Area (2D) or volume (3D) of element `e` under its stored node order.
    pub fn element_signed_measure(&self, e: usize) -> f64 {
        let el = self.element(e);
        let p0 = self.node(el[0]);
        if self.dim == 2 {
            let p1 = self.node(el[1]);
            let p2 = self.node(el[2]);
            0.5 * ((p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1]))
        } else {
            let a = sub3(self.node(el[1]), p0);
            let b = sub3(self.node(el[2]), p0);
            let c = sub3(self.node(el[3]), p0);
            dot3(&a, &cross3(&b, &c)) / 6.0
        }
    }

    pub fn element_measures(&self) -> Vec<f64> {
        (0..self.num_elements())
            .map(|e| self.element_signed_measure(e))
            .collect()
    }

    pub fn total_measure(&self) -> f64 {
        self.element_measures().iter().sum()
    }

    /// Length (2D) or area (3D) of boundary facet `f`.
    pub fn facet_measure(&self, f: usize) -> f64 {
        let fc = self.facet(f);
        if self.dim == 2 {
            let a = self.node(fc[0]);
            let b = self.node(fc[1]);
            ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt()
        } else {
            let p0 = self.node(fc[0]);
            let a = sub3(self.node(fc[1]), p0);
            let b = sub3(self.node(fc[2]), p0);
            let n = cross3(&a, &b);
            0.5 * dot3(&n, &n).sqrt()
        }
    }

    /// Outward unit normal of boundary facet `f` (z component 0 in 2D).
    pub fn facet_normal(&self, f: usize) -> [f64; 3] {
        let fc = self.facet(f);
        let n = if self.dim == 2 {
            let a = self.node(fc[0]);
            let b = self.node(fc[1]);
            [b[1] - a[1], -(b[0] - a[0]), 0.0]
        } else {
            let p0 = self.node(fc[0]);
            cross3(&sub3(self.node(fc[1]), p0), &sub3(self.node(fc[2]), p0))
        };
        let len = dot3(&n, &n).sqrt();
        [n[0] / len, n[1] / len, n[2] / len]
    }

    pub fn facet_centroid(&self, f: usize) -> [f64; 3] {
        self.centroid_of(self.facet(f))
    }

    pub fn element_centroid(&self, e: usize) -> [f64; 3] {
        self.centroid_of(self.element(e))
    }

    fn centroid_of(&self, nodes: &[usize]) -> [f64; 3] {
        let mut c = [0.0; 3];
        for &i in nodes {
            for (d, x) in self.node(i).iter().enumerate() {
                c[d] += x;
            }
        }
        let k = nodes.len() as f64;
        [c[0] / k, c[1] / k, c[2] / k]
    }

    /// Gradients of the barycentric (P1 hat) functions on element `e`, one
    /// row per local vertex. Rows are padded with zeros to length 3 in 2D.
    pub fn element_gradients(&self, e: usize) -> Vec<[f64; 3]> {
        let el = self.element(e);
        let p0 = self.node(el[0]);
        if self.dim == 2 {
            let p1 = self.node(el[1]);
            let p2 = self.node(el[2]);
            let (ax, ay) = (p1[0] - p0[0], p1[1] - p0[1]);
            let (bx, by) = (p2[0] - p0[0], p2[1] - p0[1]);
            let det = ax * by - bx * ay;
            // rows of the inverse Jacobian
            let g1 = [by / det, -bx / det, 0.0];
            let g2 = [-ay / det, ax / det, 0.0];
            let g0 = [-g1[0] - g2[0], -g1[1] - g2[1], 0.0];
            vec![g0, g1, g2]
        } else {
            let a = sub3(self.node(el[1]), p0);
            let b = sub3(self.node(el[2]), p0);
            let c = sub3(self.node(el[3]), p0);
            let det = dot3(&a, &cross3(&b, &c));
            let bc = cross3(&b, &c);
            let ca = cross3(&c, &a);
            let ab = cross3(&a, &b);
            let g1 = [bc[0] / det, bc[1] / det, bc[2] / det];
            let g2 = [ca[0] / det, ca[1] / det, ca[2] / det];
            let g3 = [ab[0] / det, ab[1] / det, ab[2] / det];
            let g0 = [
                -g1[0] - g2[0] - g3[0],
                -g1[1] - g2[1] - g3[1],
                -g1[2] - g2[2] - g3[2],
            ];
            vec![g0, g1, g2, g3]
        }
    }

    /// Node-to-node adjacency through shared elements (excluding self).
    pub fn node_adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); self.num_nodes()];
        for e in 0..self.num_elements() {
            let el = self.element(e);
            for &a in el {
                for &b in el {
                    if a != b {
                        adj[a].push(b);
                    }
                }
            }
        }
        for row in adj.iter_mut() {
            row.sort_unstable();
            row.dedup();
        }
        adj
    }

    /// Largest distance of any node from the z axis.
    pub fn max_radius(&self) -> f64 {
        (0..self.num_nodes())
            .map(|i| {
                let p = self.node(i);
                p[0].hypot(p[1])
            })
            .fold(0.0, f64::max)
    }
}

pub(crate) fn facet_key(face: &[usize]) -> [usize; 3] {
    let mut k = [usize::MAX; 3];
    k[..face.len()].copy_from_slice(face);
    k.sort_unstable();
    k
}

fn sub3(a: &[f64], b: &[f64]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross3(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn dot3(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}
