use std::f64::consts::{PI, TAU};

use super::Mesh;
use crate::error::{Error, Result};

/// Electrodes as disjoint sets of boundary facets with contact impedances.
#[derive(Debug, Clone, PartialEq)]
pub struct ElectrodeLayout {
    facets_of: Vec<Vec<usize>>,
    impedance: Vec<f64>,
    area: Vec<f64>,
}

impl ElectrodeLayout {
    pub fn new(mesh: &Mesh, facets_of: Vec<Vec<usize>>, impedance: Vec<f64>) -> Result<Self> {
        let m = facets_of.len();
        if impedance.len() != m {
            return Err(Error::Shape {
                what: "impedance vector",
                expected: m,
                got: impedance.len(),
            });
        }
        if let Some(z) = impedance.iter().find(|z| !(**z > 0.0 && z.is_finite())) {
            return Err(Error::Electrode(format!("contact impedance must be positive, got {z}")));
        }
        let mut owner = vec![usize::MAX; mesh.num_facets()];
        let mut area = Vec::with_capacity(m);
        for (l, facets) in facets_of.iter().enumerate() {
            if facets.is_empty() {
                return Err(Error::Electrode(format!("electrode {} has no facets", l + 1)));
            }
            let mut a = 0.0;
            for &f in facets {
                if f >= mesh.num_facets() {
                    return Err(Error::Electrode(format!("facet {f} out of range")));
                }
                if owner[f] != usize::MAX {
                    return Err(Error::Electrode(format!(
                        "facet {f} claimed by electrodes {} and {}",
                        owner[f] + 1,
                        l + 1
                    )));
                }
                owner[f] = l;
                a += mesh.facet_measure(f);
            }
            area.push(a);
        }
        Ok(ElectrodeLayout {
            facets_of,
            impedance,
            area,
        })
    }

    /// Builds a layout from a per-facet label (`-1` for no electrode).
    pub fn from_labels(mesh: &Mesh, labels: &[i64], impedance: Vec<f64>) -> Result<Self> {
        if labels.len() != mesh.num_facets() {
            return Err(Error::Shape {
                what: "facet labels",
                expected: mesh.num_facets(),
                got: labels.len(),
            });
        }
        let m = impedance.len();
        let mut facets_of = vec![Vec::new(); m];
        for (f, &lab) in labels.iter().enumerate() {
            if lab < 0 {
                continue;
            }
            let l = lab as usize;
            if l >= m {
                return Err(Error::Electrode(format!("label {lab} exceeds electrode count {m}")));
            }
            facets_of[l].push(f);
        }
        Self::new(mesh, facets_of, impedance)
    }

    /// Per-facet electrode label, `-1` where no electrode is attached.
    pub fn labels(&self, num_facets: usize) -> Vec<i64> {
        let mut labels = vec![-1; num_facets];
        for (l, facets) in self.facets_of.iter().enumerate() {
            for &f in facets {
                labels[f] = l as i64;
            }
        }
        labels
    }

    pub fn count(&self) -> usize {
        self.facets_of.len()
    }

    pub fn facets(&self, l: usize) -> &[usize] {
        &self.facets_of[l]
    }

    pub fn impedance(&self) -> &[f64] {
        &self.impedance
    }

    pub fn area(&self) -> &[f64] {
        &self.area
    }
}

fn wrap_angle(a: f64) -> f64 {
    let mut x = a % TAU;
    if x > PI {
        x -= TAU;
    } else if x <= -PI {
        x += TAU;
    }
    x
}

/// `m` electrodes of angular `width` centred at `2*pi*l/m` (`l = 0..m`) on
/// the boundary of a 2D disk mesh. A boundary edge belongs to an electrode
/// when its midpoint angle lies within the arc.
pub fn place_electrodes_2d(
    mesh: &Mesh,
    m: usize,
    width: f64,
    impedance: f64,
) -> Result<ElectrodeLayout> {
    if mesh.dim() != 2 {
        return Err(Error::InvalidInput("2D electrodes need a 2D mesh".into()));
    }
    if m < 2 {
        return Err(Error::InvalidInput("need at least two electrodes".into()));
    }
    if !(width > 0.0 && width < TAU / m as f64) {
        return Err(Error::InvalidInput(format!(
            "electrode width {width} rad does not leave gaps between {m} electrodes"
        )));
    }
    let mut facets_of = vec![Vec::new(); m];
    let mut in_gap = vec![false; m];
    for f in 0..mesh.num_facets() {
        let c = mesh.facet_centroid(f);
        let phi = c[1].atan2(c[0]);
        let mut hit = None;
        for (l, facets) in facets_of.iter_mut().enumerate() {
            let centre = TAU * l as f64 / m as f64;
            if wrap_angle(phi - centre).abs() <= 0.5 * width {
                if let Some(prev) = hit {
                    return Err(Error::Electrode(format!(
                        "boundary edge {f} lies on electrodes {} and {}",
                        prev + 1,
                        l + 1
                    )));
                }
                facets.push(f);
                hit = Some(l);
            }
        }
        if hit.is_none() {
            // gap after electrode floor(phi / pitch)
            let slot = (phi.rem_euclid(TAU) / (TAU / m as f64)).floor() as usize % m;
            in_gap[slot] = true;
        }
    }
    if let Some(l) = facets_of.iter().position(|f| f.is_empty()) {
        return Err(Error::Electrode(format!(
            "electrode {} captures no boundary edge; refine the boundary",
            l + 1
        )));
    }
    if in_gap.iter().any(|g| !g) {
        return Err(Error::Electrode("two electrodes touch without a gap".into()));
    }
    ElectrodeLayout::new(mesh, facets_of, vec![impedance; m])
}

/// `layers * per_layer` rectangular patches on the lateral surface of a
/// cylinder mesh, numbered layer by layer from the bottom. Layer `i` is
/// centred at `z = height_of_body * (i + 1/2) / layers`; within a layer the
/// patches are centred at angles `2*pi*k/per_layer`. A lateral facet belongs
/// to a patch when its centroid lies in the patch's (angle, z) box.
pub fn place_electrodes_3d(
    mesh: &Mesh,
    layers: usize,
    per_layer: usize,
    width: f64,
    height: f64,
    impedance: f64,
) -> Result<ElectrodeLayout> {
    if mesh.dim() != 3 {
        return Err(Error::InvalidInput("3D electrodes need a 3D mesh".into()));
    }
    if layers == 0 || per_layer == 0 || layers * per_layer < 2 {
        return Err(Error::InvalidInput("need at least two electrodes".into()));
    }
    let radius = mesh.max_radius();
    let (zmin, zmax) = (0..mesh.num_nodes())
        .map(|i| mesh.node(i)[2])
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), z| (a.min(z), b.max(z)));
    let pitch = (zmax - zmin) / layers as f64;
    if !(width > 0.0 && width < TAU / per_layer as f64) || !(height > 0.0 && height < pitch) {
        return Err(Error::Electrode("electrode patches overlap".into()));
    }
    let m = layers * per_layer;
    let mut facets_of = vec![Vec::new(); m];
    for f in 0..mesh.num_facets() {
        let lateral = mesh.facet(f).iter().all(|&v| {
            let p = mesh.node(v);
            (p[0].hypot(p[1]) - radius).abs() <= 1e-9 * radius
        });
        if !lateral {
            continue;
        }
        let c = mesh.facet_centroid(f);
        let phi = c[1].atan2(c[0]);
        let mut hit = None;
        for layer in 0..layers {
            let zc = zmin + pitch * (layer as f64 + 0.5);
            if (c[2] - zc).abs() > 0.5 * height {
                continue;
            }
            for k in 0..per_layer {
                let centre = TAU * k as f64 / per_layer as f64;
                if wrap_angle(phi - centre).abs() <= 0.5 * width {
                    let l = layer * per_layer + k;
                    if hit.is_some() {
                        return Err(Error::Electrode(format!("facet {f} lies on two patches")));
                    }
                    facets_of[l].push(f);
                    hit = Some(l);
                }
            }
        }
    }
    if let Some(l) = facets_of.iter().position(|f| f.is_empty()) {
        return Err(Error::Electrode(format!(
            "electrode {} captures no lateral facet; refine the surface mesh",
            l + 1
        )));
    }
    ElectrodeLayout::new(mesh, facets_of, vec![impedance; m])
}
