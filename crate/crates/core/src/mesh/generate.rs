//! Structured generators for the disk and the cylinder.
//!
//! The disk is built from concentric rings of nodes. The boundary ring is laid
//! out first (optionally with nodes at electrode ends), interior rings reuse a
//! thinned subset of the boundary angles so the mesh coarsens smoothly toward
//! the centre, and neighbouring rings are stitched by an angular merge. Every
//! ring repeats one angular pattern over `symmetry` sectors and the stitching
//! is done on the pattern, so the mesh has exact combinatorial rotational
//! symmetry of that order. The cylinder extrudes the disk through a stack of
//! planes and splits every prism into three tetrahedra using the global node
//! order, which keeps the shared quad diagonals conforming.

use std::f64::consts::TAU;

use super::Mesh;
use crate::error::{Error, Result};

/// Ratio of radial ring spacing to tangential node spacing (equilateral rows).
const RADIAL_FACTOR: f64 = 0.866_025_403_784_438_6;
/// Interior ring nodes closer than this fraction of the local size are dropped.
const THINNING: f64 = 0.8;
const DEFAULT_GRADING: f64 = 0.3;

/// Disk of `radius` with interior edge length about `target_edge` and a
/// boundary twice as fine.
pub fn generate_disk_mesh(radius: f64, target_edge: f64) -> Result<Mesh> {
    DiskMesher::new(radius, target_edge).build()
}

/// Cylinder `x^2 + y^2 < radius^2, 0 < z < height` with edges up to about
/// `max_edge`.
pub fn generate_cylinder_mesh(radius: f64, height: f64, max_edge: f64) -> Result<Mesh> {
    CylinderMesher::new(radius, height, max_edge).build()
}

#[derive(Debug, Clone)]
pub struct DiskMesher {
    radius: f64,
    target_edge: f64,
    boundary_edge: Option<f64>,
    grading: f64,
    symmetry: usize,
    electrodes: Option<(usize, f64)>,
}

struct Ring {
    radius: f64,
    /// Angles within one sector, ascending, in `[0, 2*pi/sectors)`.
    offsets: Vec<f64>,
}

struct RingLayout {
    sectors: usize,
    /// Outermost (the boundary) first.
    rings: Vec<Ring>,
}

impl DiskMesher {
    pub fn new(radius: f64, target_edge: f64) -> Self {
        DiskMesher {
            radius,
            target_edge,
            boundary_edge: None,
            grading: DEFAULT_GRADING,
            symmetry: 1,
            electrodes: None,
        }
    }

    /// Boundary node spacing; defaults to half of `target_edge`.
    pub fn boundary_edge(mut self, h: f64) -> Self {
        self.boundary_edge = Some(h);
        self
    }

    /// Growth rate of the element size per unit distance from the boundary.
    pub fn grading(mut self, rate: f64) -> Self {
        self.grading = rate;
        self
    }

    /// Order of the rotational symmetry of the generated mesh.
    pub fn symmetry(mut self, order: usize) -> Self {
        self.symmetry = order;
        self
    }

    /// Puts boundary nodes exactly at the ends of `count` uniformly spaced
    /// arcs of angular `width`, the first centred at angle 0. Sets the
    /// symmetry order to `count`.
    pub fn conforming_electrodes(mut self, count: usize, width: f64) -> Self {
        self.electrodes = Some((count, width));
        self.symmetry = count;
        self
    }

    fn validate(&self) -> Result<()> {
        let (r, h) = (self.radius, self.target_edge);
        if !(r > 0.0 && r.is_finite()) {
            return Err(Error::InvalidInput(format!("radius must be positive, got {r}")));
        }
        if !(h > 0.0 && h < r) {
            return Err(Error::InvalidInput(format!(
                "target edge must lie in (0, radius), got {h}"
            )));
        }
        if let Some(hb) = self.boundary_edge {
            if !(hb > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "boundary edge must be positive, got {hb}"
                )));
            }
        }
        if !(self.grading > 0.0) {
            return Err(Error::InvalidInput("grading must be positive".into()));
        }
        if self.symmetry == 0 {
            return Err(Error::InvalidInput("symmetry order must be at least 1".into()));
        }
        if let Some((m, w)) = self.electrodes {
            if m < 2 {
                return Err(Error::InvalidInput("need at least two electrodes".into()));
            }
            if !(w > 0.0 && w < TAU / m as f64) {
                return Err(Error::InvalidInput(format!(
                    "electrode width {w} rad does not fit {m} electrodes"
                )));
            }
        }
        Ok(())
    }

    fn boundary_spacing(&self) -> f64 {
        self.boundary_edge
            .unwrap_or(0.5 * self.target_edge)
            .min(self.target_edge)
    }

    fn boundary_offsets(&self) -> Vec<f64> {
        let r = self.radius;
        let hb = self.boundary_spacing();
        let sector = TAU / self.symmetry as f64;
        match self.electrodes {
            Some((_, w)) => {
                let segments = ((w * r / hb) - 1e-9).ceil().max(1.0) as usize;
                let seg = w / segments as f64;
                let mut offsets = Vec::new();
                for i in 0..=segments {
                    let a = -0.5 * w + i as f64 * seg;
                    offsets.push(if a < 0.0 { a + sector } else { a });
                }
                let gap = (sector - w) * r;
                for x in graded_points(gap, seg * r, seg * r, hb, self.grading) {
                    offsets.push(0.5 * w + x / r);
                }
                // `-w/2 + segments*seg` lands on `w/2`; an exact 0 may appear
                // from the middle node, anything equal to `sector` wraps to 0
                for a in offsets.iter_mut() {
                    if *a >= sector {
                        *a -= sector;
                    }
                }
                offsets.sort_by(f64::total_cmp);
                offsets.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
                offsets
            }
            None => {
                let min_per_sector = 3usize.div_ceil(self.symmetry);
                let n = ((sector * r / hb).round() as usize).max(min_per_sector);
                (0..n).map(|i| i as f64 * sector / n as f64).collect()
            }
        }
    }

    fn layout(&self) -> Result<RingLayout> {
        self.validate()?;
        let r = self.radius;
        let h = self.target_edge;
        let sectors = self.symmetry;
        let sector = TAU / sectors as f64;
        let boundary = self.boundary_offsets();
        let n = boundary.len();

        // boundary arc spacing around each boundary node
        let local: Vec<f64> = (0..n)
            .map(|i| {
                let prev = if i == 0 {
                    boundary[0] + sector - boundary[n - 1]
                } else {
                    boundary[i] - boundary[i - 1]
                };
                let next = if i + 1 == n {
                    boundary[0] + sector - boundary[i]
                } else {
                    boundary[i + 1] - boundary[i]
                };
                0.5 * (prev + next) * r
            })
            .collect();
        let finest = (0..n)
            .map(|i| {
                let next = if i + 1 == n {
                    boundary[0] + sector
                } else {
                    boundary[i + 1]
                };
                (next - boundary[i]) * r
            })
            .fold(f64::INFINITY, f64::min);

        let depths = graded_points(
            r,
            RADIAL_FACTOR * finest.min(h),
            RADIAL_FACTOR * h,
            RADIAL_FACTOR * h,
            RADIAL_FACTOR * self.grading,
        );

        let mut rings = vec![Ring {
            radius: r,
            offsets: boundary.clone(),
        }];
        for d in depths {
            let rho = r - d;
            let target: Vec<f64> = local.iter().map(|e| h.min(e + self.grading * d)).collect();
            let mut kept = vec![0usize];
            for i in 1..n {
                let last = *kept.last().unwrap();
                let gap = rho * (boundary[i] - boundary[last]);
                let tail = rho * (boundary[0] + sector - boundary[i]);
                let need_gap = THINNING * 0.5 * (target[i] + target[last]);
                let need_tail = THINNING * 0.5 * (target[i] + target[0]);
                if gap >= need_gap && tail >= need_tail {
                    kept.push(i);
                }
            }
            let min_total = 3usize.div_ceil(sectors);
            if kept.len() < min_total {
                kept = (0..min_total).map(|k| k * n / min_total).collect();
            }
            rings.push(Ring {
                radius: rho,
                offsets: kept.iter().map(|&i| boundary[i]).collect(),
            });
        }
        Ok(RingLayout { sectors, rings })
    }

    pub fn build(&self) -> Result<Mesh> {
        let layout = self.layout()?;
        let (coords, tris) = layout.triangulate();
        Mesh::new(2, coords, tris)
    }
}

impl RingLayout {
    fn sector(&self) -> f64 {
        TAU / self.sectors as f64
    }

    /// Flat 2D coordinates and CCW triangles; the centre node is last.
    fn triangulate(&self) -> (Vec<f64>, Vec<usize>) {
        let s = self.sectors;
        let sector = self.sector();
        let mut coords = Vec::new();
        let mut base = Vec::with_capacity(self.rings.len());
        for ring in &self.rings {
            base.push(coords.len() / 2);
            for j in 0..s {
                for &a in &ring.offsets {
                    let theta = j as f64 * sector + a;
                    coords.push(ring.radius * theta.cos());
                    coords.push(ring.radius * theta.sin());
                }
            }
        }
        let centre = coords.len() / 2;
        coords.extend_from_slice(&[0.0, 0.0]);

        let index = |k: usize, j: usize, i: usize| -> usize {
            let n = self.rings[k].offsets.len();
            if i == n {
                base[k] + ((j + 1) % s) * n
            } else {
                base[k] + j * n + i
            }
        };
        let angle = |k: usize, i: usize| -> f64 {
            let off = &self.rings[k].offsets;
            if i == off.len() {
                off[0] + sector
            } else {
                off[i]
            }
        };

        let mut tris = Vec::new();
        let mut push = |tri: [usize; 3], coords: &[f64]| {
            let p = |v: usize| (coords[2 * v], coords[2 * v + 1]);
            let (a, b, c) = (p(tri[0]), p(tri[1]), p(tri[2]));
            let area = (b.0 - a.0) * (c.1 - a.1) - (c.0 - a.0) * (b.1 - a.1);
            if area >= 0.0 {
                tris.extend_from_slice(&tri);
            } else {
                tris.extend_from_slice(&[tri[0], tri[2], tri[1]]);
            }
        };

        for k in 0..self.rings.len() - 1 {
            let (outer, inner) = (k, k + 1);
            let p = self.rings[outer].offsets.len();
            let q = self.rings[inner].offsets.len();
            for j in 0..s {
                let (mut i, mut l) = (0, 0);
                while i < p || l < q {
                    let advance_outer = if i == p {
                        false
                    } else if l == q {
                        true
                    } else {
                        angle(outer, i + 1) <= angle(inner, l + 1)
                    };
                    if advance_outer {
                        push(
                            [index(outer, j, i), index(outer, j, i + 1), index(inner, j, l)],
                            &coords,
                        );
                        i += 1;
                    } else {
                        push(
                            [index(outer, j, i), index(inner, j, l + 1), index(inner, j, l)],
                            &coords,
                        );
                        l += 1;
                    }
                }
            }
        }
        let last = self.rings.len() - 1;
        let q = self.rings[last].offsets.len();
        for j in 0..s {
            for l in 0..q {
                push([centre, index(last, j, l), index(last, j, l + 1)], &coords);
            }
        }
        (coords, tris)
    }
}

#[derive(Debug, Clone)]
pub struct CylinderMesher {
    radius: f64,
    height: f64,
    max_edge: f64,
    boundary_edge: Option<f64>,
    grading: f64,
    symmetry: usize,
    electrodes: Option<ElectrodeRings>,
}

#[derive(Debug, Clone, Copy)]
struct ElectrodeRings {
    layers: usize,
    per_layer: usize,
    width: f64,
    band: f64,
}

impl CylinderMesher {
    pub fn new(radius: f64, height: f64, max_edge: f64) -> Self {
        CylinderMesher {
            radius,
            height,
            max_edge,
            boundary_edge: None,
            grading: DEFAULT_GRADING,
            symmetry: 1,
            electrodes: None,
        }
    }

    pub fn boundary_edge(mut self, h: f64) -> Self {
        self.boundary_edge = Some(h);
        self
    }

    pub fn grading(mut self, rate: f64) -> Self {
        self.grading = rate;
        self
    }

    pub fn symmetry(mut self, order: usize) -> Self {
        self.symmetry = order;
        self
    }

    /// Makes the lateral mesh conform to `layers` rings of `per_layer`
    /// electrodes of angular `width` and axial extent `band`. Ring `i`
    /// (from the bottom) is centred at `z = height * (i + 1/2) / layers`.
    pub fn conforming_electrodes(
        mut self,
        layers: usize,
        per_layer: usize,
        width: f64,
        band: f64,
    ) -> Self {
        self.electrodes = Some(ElectrodeRings {
            layers,
            per_layer,
            width,
            band,
        });
        self.symmetry = per_layer;
        self
    }

    fn z_planes(&self) -> Result<Vec<f64>> {
        let h = self.height;
        let cap = self.max_edge;
        let Some(el) = self.electrodes else {
            let n = ((h / cap) - 1e-9).ceil().max(1.0) as usize;
            return Ok((0..=n).map(|i| h * i as f64 / n as f64).collect());
        };
        if el.layers == 0 {
            return Err(Error::InvalidInput("need at least one electrode layer".into()));
        }
        let pitch = h / el.layers as f64;
        if !(el.band > 0.0 && el.band < pitch) {
            return Err(Error::InvalidInput(format!(
                "electrode height {} does not fit {} layers",
                el.band, el.layers
            )));
        }
        let hb = self.boundary_edge.unwrap_or(0.5 * cap).min(cap);
        let band_n = ((el.band / hb) - 1e-9).ceil().max(1.0) as usize;
        let band_step = el.band / band_n as f64;
        let mut planes = vec![0.0];
        let mut z = 0.0;
        for i in 0..el.layers {
            let lo = pitch * (i as f64 + 0.5) - 0.5 * el.band;
            let hi = lo + el.band;
            let left = if i == 0 { cap } else { band_step };
            for x in graded_points(lo - z, left, band_step, cap, self.grading) {
                planes.push(z + x);
            }
            planes.push(lo);
            for k in 1..=band_n {
                planes.push(lo + k as f64 * band_step);
            }
            planes.pop();
            planes.push(hi);
            z = hi;
        }
        for x in graded_points(h - z, band_step, cap, cap, self.grading) {
            planes.push(z + x);
        }
        planes.push(h);
        Ok(planes)
    }

    pub fn build(&self) -> Result<Mesh> {
        let (r, h, e) = (self.radius, self.height, self.max_edge);
        if !(r > 0.0 && h > 0.0 && e > 0.0) {
            return Err(Error::InvalidInput(format!(
                "radius, height and max edge must be positive (got {r}, {h}, {e})"
            )));
        }
        let mut disk = DiskMesher::new(r, e.min(0.99 * r))
            .grading(self.grading)
            .symmetry(self.symmetry);
        if let Some(hb) = self.boundary_edge {
            disk = disk.boundary_edge(hb);
        }
        if let Some(el) = self.electrodes {
            disk = disk.conforming_electrodes(el.per_layer, el.width);
        }
        let (coords2, tris) = disk.layout()?.triangulate();
        let planes = self.z_planes()?;
        let np = coords2.len() / 2;

        let mut coords = Vec::with_capacity(3 * np * planes.len());
        for &z in &planes {
            for v in 0..np {
                coords.extend_from_slice(&[coords2[2 * v], coords2[2 * v + 1], z]);
            }
        }
        let mut tets = Vec::with_capacity(3 * 4 * tris.len() * (planes.len() - 1));
        for layer in 0..planes.len() - 1 {
            let lo = layer * np;
            let hi = (layer + 1) * np;
            for t in tris.chunks(3) {
                let mut v = [t[0], t[1], t[2]];
                v.sort_unstable();
                let (a, b, c) = (v[0], v[1], v[2]);
                for tet in [
                    [a + lo, b + lo, c + lo, c + hi],
                    [a + lo, b + lo, b + hi, c + hi],
                    [a + lo, a + hi, b + hi, c + hi],
                ] {
                    tets.push(orient_tet(tet, &coords));
                }
            }
        }
        Mesh::new(3, coords, tets.concat())
    }
}

fn orient_tet(t: [usize; 4], coords: &[f64]) -> [usize; 4] {
    let p = |v: usize| [coords[3 * v], coords[3 * v + 1], coords[3 * v + 2]];
    let (p0, p1, p2, p3) = (p(t[0]), p(t[1]), p(t[2]), p(t[3]));
    let a = [p1[0] - p0[0], p1[1] - p0[1], p1[2] - p0[2]];
    let b = [p2[0] - p0[0], p2[1] - p0[1], p2[2] - p0[2]];
    let c = [p3[0] - p0[0], p3[1] - p0[1], p3[2] - p0[2]];
    let det = a[0] * (b[1] * c[2] - b[2] * c[1]) - a[1] * (b[0] * c[2] - b[2] * c[0])
        + a[2] * (b[0] * c[1] - b[1] * c[0]);
    if det >= 0.0 {
        t
    } else {
        [t[0], t[2], t[1], t[3]]
    }
}

/// Interior points of `[0, length]` for a size field that grows linearly at
/// `rate` away from both ends (starting at `left`/`right`) and is capped at
/// `cap`. Points are equidistributed in the integral of `1/size`.
fn graded_points(length: f64, left: f64, right: f64, cap: f64, rate: f64) -> Vec<f64> {
    const SAMPLES: usize = 4096;
    let size = |x: f64| cap.min(left + rate * x).min(right + rate * (length - x));
    let dx = length / SAMPLES as f64;
    let mut cum = Vec::with_capacity(SAMPLES + 1);
    cum.push(0.0);
    for k in 0..SAMPLES {
        let x = (k as f64 + 0.5) * dx;
        cum.push(cum[k] + dx / size(x));
    }
    let total = cum[SAMPLES];
    let n = (total.round() as usize).max(1);
    let mut points = Vec::with_capacity(n - 1);
    let mut k = 0;
    for i in 1..n {
        let goal = total * i as f64 / n as f64;
        while cum[k + 1] < goal {
            k += 1;
        }
        let frac = (goal - cum[k]) / (cum[k + 1] - cum[k]);
        points.push((k as f64 + frac) * dx);
    }
    points
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn graded_points_are_increasing_and_inside() {
        let pts = graded_points(1.0, 0.01, 0.05, 0.2, 0.5);
        assert!(pts.windows(2).all(|w| w[0] < w[1]));
        assert!(pts.iter().all(|&x| x > 0.0 && x < 1.0));
        // finer near the left end
        assert!(pts[0] < 1.0 - pts[pts.len() - 1]);
    }

    #[test]
    fn disk_node_count_matches_reference_scale() {
        let m = generate_disk_mesh(0.1, 0.005).unwrap();
        assert!(
            (1500..=3000).contains(&m.num_nodes()),
            "nodes = {}",
            m.num_nodes()
        );
    }

    #[test]
    fn coarse_disk_is_valid() {
        let m = generate_disk_mesh(0.1, 0.09).unwrap();
        assert!(m.element_measures().iter().all(|&a| a > 0.0));
    }

    #[test]
    fn disk_area_close_to_analytic() {
        let m = generate_disk_mesh(0.1, 0.02).unwrap();
        let exact = PI * 0.01;
        assert!((m.total_measure() - exact).abs() < 0.005 * exact);
    }

    #[test]
    fn disk_boundary_nodes_on_circle() {
        let r = 0.1;
        let m = generate_disk_mesh(r, 0.01).unwrap();
        for f in 0..m.num_facets() {
            for &v in m.facet(f) {
                let p = m.node(v);
                assert!((p[0].hypot(p[1]) - r).abs() <= 1e-12 * r);
            }
        }
    }

    #[test]
    fn refinement_never_loses_nodes() {
        let counts: Vec<usize> = [0.04, 0.02, 0.01, 0.005]
            .iter()
            .map(|&h| generate_disk_mesh(0.1, h).unwrap().num_nodes())
            .collect();
        assert!(counts.windows(2).all(|w| w[0] <= w[1]), "{counts:?}");
    }

    #[test]
    fn rejects_bad_disk_inputs() {
        assert!(generate_disk_mesh(0.0, 0.01).is_err());
        assert!(generate_disk_mesh(0.1, -0.01).is_err());
        assert!(generate_disk_mesh(0.1, 0.2).is_err());
    }

    #[test]
    fn electrode_conforming_disk_has_nodes_at_arc_ends() {
        let (m, w) = (16, 0.024);
        let mesh = DiskMesher::new(0.1, 0.005)
            .boundary_edge(0.0024)
            .conforming_electrodes(m, w)
            .build()
            .unwrap();
        for l in 0..m {
            let c = TAU * l as f64 / m as f64;
            for end in [c - 0.5 * w, c + 0.5 * w] {
                let hit = (0..mesh.num_nodes()).any(|v| {
                    let p = mesh.node(v);
                    (p[0] - 0.1 * end.cos()).hypot(p[1] - 0.1 * end.sin()) < 1e-12
                });
                assert!(hit, "no node at angle {end}");
            }
        }
    }

    #[test]
    fn cylinder_counts_and_volume() {
        let m = generate_cylinder_mesh(0.1, 0.2, 0.01).unwrap();
        assert!(
            (6000..=15000).contains(&m.num_nodes()),
            "nodes = {}",
            m.num_nodes()
        );
        let c = generate_cylinder_mesh(0.1, 0.2, 0.03).unwrap();
        let exact = PI * 0.01 * 0.2;
        assert!((c.total_measure() - exact).abs() < 0.01 * exact);
    }

    #[test]
    fn minimal_cylinder_is_valid() {
        let m = generate_cylinder_mesh(0.1, 0.2, 0.15).unwrap();
        assert!(m.element_measures().iter().all(|&v| v > 0.0));
        assert!(generate_cylinder_mesh(0.1, 0.0, 0.1).is_err());
    }

    #[test]
    fn cylinder_lateral_nodes_on_surface() {
        let r = 0.1;
        let m = generate_cylinder_mesh(r, 0.2, 0.05).unwrap();
        for f in 0..m.num_facets() {
            let n = m.facet_normal(f);
            if n[2].abs() < 0.5 {
                for &v in m.facet(f) {
                    let p = m.node(v);
                    assert!((p[0].hypot(p[1]) - r).abs() <= 1e-12 * r);
                }
            }
        }
    }
}
