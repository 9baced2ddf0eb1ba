//! Axially extruded geometry: a 2D radial layout (rectangular lattice of
//! box/pin cells) swept along a 1D axial mesh.
//!
//! Flat source regions (FSRs) are the product of radial zones and axial
//! slabs: `fsr = region * num_slabs + slab`. Radial zones are per lattice
//! cell: each concentric ring is one zone, plus one zone for the remainder
//! of the cell outside the last ring. Materials may vary per axial slab
//! within a zone, but the radial shapes themselves never change with z.

use crate::{Error, Result};

/// Boundary condition on one face of the domain box.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Bc {
    Vacuum,
    Reflective,
}

/// Per-face boundary conditions.
#[derive(Debug, Clone, Copy)]
pub struct BoundaryConds {
    pub x_min: Bc,
    pub x_max: Bc,
    pub y_min: Bc,
    pub y_max: Bc,
    pub z_min: Bc,
    pub z_max: Bc,
}

impl BoundaryConds {
    pub fn all(bc: Bc) -> Self {
        BoundaryConds { x_min: bc, x_max: bc, y_min: bc, y_max: bc, z_min: bc, z_max: bc }
    }
}

/// Multigroup macroscopic cross sections for one material.
///
/// `sigma_s[g][g2]` is scattering *from* group `g` *to* group `g2` (1/cm).
/// Data is assumed transport-corrected P0, so a total cross section
/// slightly below the scattering row sum is tolerated (reported as a
/// warning, not an error).
#[derive(Debug, Clone)]
pub struct MaterialXS {
    pub name: String,
    pub sigma_t: Vec<f64>,
    pub sigma_s: Vec<Vec<f64>>,
    pub nu_sigma_f: Vec<f64>,
    pub chi: Vec<f64>,
}

impl MaterialXS {
    pub fn num_groups(&self) -> usize {
        self.sigma_t.len()
    }

    pub fn is_fissile(&self) -> bool {
        self.nu_sigma_f.iter().any(|&v| v > 0.0)
    }

    /// Absorption cross section by balance: sigma_t minus total outscatter.
    pub fn sigma_a(&self, g: usize) -> f64 {
        self.sigma_t[g] - self.sigma_s[g].iter().sum::<f64>()
    }

    fn validate(&self, expected_groups: usize) -> Result<Vec<String>> {
        let g = self.num_groups();
        if g == 0 {
            return Err(Error::Geometry(format!("material '{}' has zero groups", self.name)));
        }
        if g != expected_groups {
            return Err(Error::Geometry(format!(
                "material '{}' has {} groups, expected {}",
                self.name, g, expected_groups
            )));
        }
        if self.sigma_s.len() != g
            || self.sigma_s.iter().any(|row| row.len() != g)
            || self.nu_sigma_f.len() != g
            || self.chi.len() != g
        {
            return Err(Error::Geometry(format!(
                "material '{}': cross-section array shapes disagree with {} groups",
                self.name, g
            )));
        }
        for gi in 0..g {
            if !(self.sigma_t[gi] > 0.0) {
                return Err(Error::Geometry(format!(
                    "material '{}': sigma_t[{}] must be positive",
                    self.name, gi
                )));
            }
            if self.nu_sigma_f[gi] < 0.0 || self.chi[gi] < 0.0 {
                return Err(Error::Geometry(format!(
                    "material '{}': negative fission data in group {}",
                    self.name, gi
                )));
            }
            if self.sigma_s[gi].iter().any(|&s| s < 0.0) {
                return Err(Error::Geometry(format!(
                    "material '{}': negative scattering entry in row {}",
                    self.name, gi
                )));
            }
        }
        let chi_sum: f64 = self.chi.iter().sum();
        if self.is_fissile() {
            // Published library data often carries a rounded chi that sums
            // to 1 only to a few decimal places; accept that and normalize
            // at build time. Beyond 1e-4 it is a data error, not rounding.
            if (chi_sum - 1.0).abs() > 1e-4 {
                return Err(Error::Geometry(format!(
                    "material '{}': chi sums to {chi_sum}, expected 1",
                    self.name
                )));
            }
        } else if chi_sum != 0.0 {
            return Err(Error::Geometry(format!(
                "material '{}': non-fissile material with nonzero chi",
                self.name
            )));
        }
        let mut warnings = Vec::new();
        for gi in 0..g {
            let out: f64 = self.sigma_s[gi].iter().sum();
            if self.sigma_t[gi] < out - 1e-12 {
                warnings.push(format!(
                    "material '{}': sigma_t[{gi}] = {} < scattering row sum {} \
                     (negative absorption; typical of transport-corrected data)",
                    self.name, self.sigma_t[gi], out
                ));
            }
        }
        Ok(warnings)
    }
}

/// 1D axial mesh: strictly ascending plane coordinates. Slab `i` spans
/// `[planes[i], planes[i+1])`; the top boundary is closed so `z = z_max`
/// belongs to the last slab.
#[derive(Debug, Clone)]
pub struct AxialMesh {
    planes: Vec<f64>,
}

impl AxialMesh {
    pub fn new(planes: Vec<f64>) -> Result<Self> {
        if planes.len() < 2 {
            return Err(Error::Mesh("axial mesh needs at least 2 planes".into()));
        }
        if planes.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Mesh("axial planes must be strictly ascending".into()));
        }
        Ok(AxialMesh { planes })
    }

    pub fn num_slabs(&self) -> usize {
        self.planes.len() - 1
    }

    pub fn planes(&self) -> &[f64] {
        &self.planes
    }

    pub fn z_min(&self) -> f64 {
        self.planes[0]
    }

    pub fn z_max(&self) -> f64 {
        *self.planes.last().unwrap()
    }

    pub fn slab_bounds(&self, slab: usize) -> (f64, f64) {
        (self.planes[slab], self.planes[slab + 1])
    }

    /// Slab containing `z`. Half-open slabs, closed top.
    pub fn slab_of(&self, z: f64) -> Result<usize> {
        if z < self.z_min() || z > self.z_max() {
            return Err(Error::Mesh(format!(
                "z = {z} outside axial extent [{}, {}]",
                self.z_min(),
                self.z_max()
            )));
        }
        let i = self.planes.partition_point(|&p| p <= z);
        Ok((i - 1).min(self.num_slabs() - 1))
    }
}

/// Materials of one radial zone: uniform along z or one entry per slab.
#[derive(Debug, Clone)]
pub enum ZoneMaterials {
    Uniform(usize),
    PerSlab(Vec<usize>),
}

impl ZoneMaterials {
    fn material(&self, slab: usize) -> usize {
        match self {
            ZoneMaterials::Uniform(m) => *m,
            ZoneMaterials::PerSlab(v) => v[slab],
        }
    }

    fn validate(&self, num_materials: usize, num_slabs: usize, ctx: &str) -> Result<()> {
        match self {
            ZoneMaterials::Uniform(m) => {
                if *m >= num_materials {
                    return Err(Error::Geometry(format!("{ctx}: material index {m} out of range")));
                }
            }
            ZoneMaterials::PerSlab(v) => {
                if v.len() != num_slabs {
                    return Err(Error::Geometry(format!(
                        "{ctx}: per-slab material list has {} entries, mesh has {} slabs",
                        v.len(),
                        num_slabs
                    )));
                }
                if let Some(m) = v.iter().find(|&&m| m >= num_materials) {
                    return Err(Error::Geometry(format!("{ctx}: material index {m} out of range")));
                }
            }
        }
        Ok(())
    }
}

/// One concentric ring of a pin cell.
#[derive(Debug, Clone)]
pub struct RingSpec {
    pub radius: f64,
    pub material: ZoneMaterials,
}

/// A lattice cell: zero or more concentric rings centered in the cell,
/// plus the material filling the rest of the cell. `rings` is ordered
/// innermost first.
#[derive(Debug, Clone)]
pub struct CellSpec {
    pub rings: Vec<RingSpec>,
    pub outer: ZoneMaterials,
}

impl CellSpec {
    pub fn num_zones(&self) -> usize {
        self.rings.len() + 1
    }
}

/// Everything needed to build an [`ExtrudedGeometry`].
///
/// `lattice[row][col]` indexes into `cells`; row 0 is the **top** row
/// (maximum y), matching how a lattice is drawn in an input file.
#[derive(Debug, Clone)]
pub struct GeometrySpec {
    pub materials: Vec<MaterialXS>,
    pub cells: Vec<CellSpec>,
    pub lattice: Vec<Vec<usize>>,
    pub pitch: (f64, f64),
    pub origin: (f64, f64),
    pub axial_planes: Vec<f64>,
    pub boundary: BoundaryConds,
}

/// Built geometry: validated, indexed, ready for tracing.
#[derive(Debug)]
pub struct ExtrudedGeometry {
    materials: Vec<MaterialXS>,
    cells: Vec<CellSpec>,
    /// Cell index per lattice slot, row-major from the *bottom-left*
    /// (slot = iy * nx + ix, iy increasing with y).
    grid: Vec<usize>,
    nx: usize,
    ny: usize,
    pitch: (f64, f64),
    origin: (f64, f64),
    mesh: AxialMesh,
    boundary: BoundaryConds,
    /// First radial region id of each lattice slot.
    region_offset: Vec<usize>,
    num_radial_regions: usize,
    num_groups: usize,
    warnings: Vec<String>,
}

/// Point queries that land within this distance of a surface are treated
/// as being on it; directional queries nudge by this much to break ties.
pub const BOUNDARY_EPS: f64 = 1e-10;

impl ExtrudedGeometry {
    pub fn build(spec: GeometrySpec) -> Result<Self> {
        let GeometrySpec { materials, cells, lattice, pitch, origin, axial_planes, boundary } =
            spec;

        if materials.is_empty() {
            return Err(Error::Geometry("no materials defined".into()));
        }
        let mut materials = materials;
        let num_groups = materials[0].num_groups();
        let mut warnings = Vec::new();
        for m in &materials {
            warnings.extend(m.validate(num_groups)?);
        }
        // Renormalize chi so emission exactly balances production even when
        // the input data carries rounding error in its last digit.
        for m in &mut materials {
            let chi_sum: f64 = m.chi.iter().sum();
            if m.is_fissile() && chi_sum != 1.0 {
                for c in &mut m.chi {
                    *c /= chi_sum;
                }
            }
        }

        let mesh = AxialMesh::new(axial_planes)?;
        let num_slabs = mesh.num_slabs();

        if !(pitch.0 > 0.0 && pitch.1 > 0.0) {
            return Err(Error::Geometry("lattice pitch must be positive".into()));
        }
        let ny = lattice.len();
        if ny == 0 {
            return Err(Error::Geometry("empty lattice".into()));
        }
        let nx = lattice[0].len();
        if nx == 0 || lattice.iter().any(|row| row.len() != nx) {
            return Err(Error::Geometry("lattice rows must be non-empty and equal length".into()));
        }

        let max_ring = 0.5 * pitch.0.min(pitch.1);
        for (ci, cell) in cells.iter().enumerate() {
            let mut prev = 0.0;
            for (ri, ring) in cell.rings.iter().enumerate() {
                if !(ring.radius > prev) {
                    return Err(Error::Geometry(format!(
                        "cell {ci}: ring radii must be positive and strictly increasing"
                    )));
                }
                if ring.radius > max_ring + 1e-12 {
                    return Err(Error::Geometry(format!(
                        "cell {ci}: ring {ri} radius {} exceeds half the pitch {max_ring}; \
                         the ring would overlap the neighboring cell",
                        ring.radius
                    )));
                }
                ring.material.validate(
                    materials.len(),
                    num_slabs,
                    &format!("cell {ci} ring {ri}"),
                )?;
                prev = ring.radius;
            }
            cell.outer.validate(materials.len(), num_slabs, &format!("cell {ci} outer"))?;
        }

        // Flip rows so the grid is stored bottom-up, and count zones.
        let mut grid = Vec::with_capacity(nx * ny);
        for row in lattice.iter().rev() {
            for &c in row {
                if c >= cells.len() {
                    return Err(Error::Geometry(format!("lattice references unknown cell {c}")));
                }
                grid.push(c);
            }
        }
        let mut region_offset = Vec::with_capacity(grid.len());
        let mut acc = 0;
        for &c in &grid {
            region_offset.push(acc);
            acc += cells[c].num_zones();
        }

        Ok(ExtrudedGeometry {
            materials,
            cells,
            grid,
            nx,
            ny,
            pitch,
            origin,
            mesh,
            boundary,
            region_offset,
            num_radial_regions: acc,
            num_groups,
            warnings,
        })
    }

    pub fn num_groups(&self) -> usize {
        self.num_groups
    }

    pub fn materials(&self) -> &[MaterialXS] {
        &self.materials
    }

    pub fn boundary(&self) -> BoundaryConds {
        self.boundary
    }

    pub fn mesh(&self) -> &AxialMesh {
        &self.mesh
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn num_radial_regions(&self) -> usize {
        self.num_radial_regions
    }

    pub fn num_fsrs(&self) -> usize {
        self.num_radial_regions * self.mesh.num_slabs()
    }

    /// Radial extent: (x_min, x_max, y_min, y_max).
    pub fn radial_extent(&self) -> (f64, f64, f64, f64) {
        (
            self.origin.0,
            self.origin.0 + self.nx as f64 * self.pitch.0,
            self.origin.1,
            self.origin.1 + self.ny as f64 * self.pitch.1,
        )
    }

    pub fn lattice_shape(&self) -> (usize, usize) {
        (self.nx, self.ny)
    }

    pub fn pitch(&self) -> (f64, f64) {
        self.pitch
    }

    /// Ring radii (innermost first) of the cell occupying lattice slot
    /// (ix, iy). Empty for unringed cells.
    pub fn ring_radii_at(&self, ix: usize, iy: usize) -> Vec<f64> {
        let cell = &self.cells[self.grid[iy * self.nx + ix]];
        cell.rings.iter().map(|r| r.radius).collect()
    }

    /// FSR id from (radial region, axial slab). Bijective; slab varies
    /// fastest so one 2D segment maps to consecutive FSRs along z.
    pub fn fsr_index(&self, region: usize, slab: usize) -> usize {
        debug_assert!(region < self.num_radial_regions && slab < self.mesh.num_slabs());
        region * self.mesh.num_slabs() + slab
    }

    pub fn fsr_region_slab(&self, fsr: usize) -> (usize, usize) {
        (fsr / self.mesh.num_slabs(), fsr % self.mesh.num_slabs())
    }

    pub fn fsr_at(&self, x: f64, y: f64, z: f64) -> Result<usize> {
        let region = self.find_radial_region(x, y)?;
        let slab = self.mesh.slab_of(z)?;
        Ok(self.fsr_index(region, slab))
    }

    /// Material index of an FSR in a given axial slab.
    pub fn material_of(&self, fsr: usize) -> usize {
        let (region, slab) = self.fsr_region_slab(fsr);
        let (slot, zone) = self.region_slot_zone(region);
        let cell = &self.cells[self.grid[slot]];
        if zone < cell.rings.len() {
            cell.rings[zone].material.material(slab)
        } else {
            cell.outer.material(slab)
        }
    }

    /// Inverse of the region numbering: (lattice slot, zone within cell).
    fn region_slot_zone(&self, region: usize) -> (usize, usize) {
        let slot = match self.region_offset.binary_search(&region) {
            Ok(mut i) => {
                // Several slots may share an offset only if a cell had zero
                // zones, which cannot happen; still, take the last match.
                while i + 1 < self.region_offset.len() && self.region_offset[i + 1] == region {
                    i += 1;
                }
                i
            }
            Err(i) => i - 1,
        };
        (slot, region - self.region_offset[slot])
    }

    /// Radial region containing (x, y). Points on shared surfaces resolve
    /// to the region on the +x/+y (outward-radius) side; use
    /// [`Self::find_radial_region_along`] to control the tie-break.
    pub fn find_radial_region(&self, x: f64, y: f64) -> Result<usize> {
        self.find_radial_region_along(x, y, std::f64::consts::FRAC_1_SQRT_2, std::f64::consts::FRAC_1_SQRT_2)
    }

    /// Radial region at (x, y) nudged by `BOUNDARY_EPS` along the unit
    /// direction (ux, uy) — the tie-break used by tracers, which know
    /// their direction of travel.
    pub fn find_radial_region_along(&self, x: f64, y: f64, ux: f64, uy: f64) -> Result<usize> {
        let (x0, x1, y0, y1) = self.radial_extent();
        if x < x0 - BOUNDARY_EPS || x > x1 + BOUNDARY_EPS || y < y0 - BOUNDARY_EPS || y > y1 + BOUNDARY_EPS
        {
            return Err(Error::OutOfDomain { x, y });
        }
        let px = x + BOUNDARY_EPS * ux;
        let py = y + BOUNDARY_EPS * uy;
        let ix = (((px - x0) / self.pitch.0).floor() as isize).clamp(0, self.nx as isize - 1) as usize;
        let iy = (((py - y0) / self.pitch.1).floor() as isize).clamp(0, self.ny as isize - 1) as usize;
        let slot = iy * self.nx + ix;
        let cell = &self.cells[self.grid[slot]];
        let cx = x0 + (ix as f64 + 0.5) * self.pitch.0;
        let cy = y0 + (iy as f64 + 0.5) * self.pitch.1;
        let r = ((px - cx).powi(2) + (py - cy).powi(2)).sqrt();
        let zone = cell
            .rings
            .iter()
            .position(|ring| r <= ring.radius)
            .unwrap_or(cell.rings.len());
        Ok(self.region_offset[slot] + zone)
    }

    /// Exact containment test for one radial region (closed boundaries).
    /// Used as an independent check on `find_radial_region`; points on
    /// shared surfaces legitimately satisfy several regions.
    pub fn region_contains(&self, region: usize, x: f64, y: f64) -> bool {
        let (slot, zone) = self.region_slot_zone(region);
        let (ix, iy) = (slot % self.nx, slot / self.nx);
        let (x0, _, y0, _) = self.radial_extent();
        let (lx, hx) = (x0 + ix as f64 * self.pitch.0, x0 + (ix + 1) as f64 * self.pitch.0);
        let (ly, hy) = (y0 + iy as f64 * self.pitch.1, y0 + (iy + 1) as f64 * self.pitch.1);
        if x < lx || x > hx || y < ly || y > hy {
            return false;
        }
        let cell = &self.cells[self.grid[slot]];
        let r = ((x - 0.5 * (lx + hx)).powi(2) + (y - 0.5 * (ly + hy)).powi(2)).sqrt();
        let inner = if zone == 0 { 0.0 } else { cell.rings[zone - 1].radius };
        if zone < cell.rings.len() {
            r >= inner && r <= cell.rings[zone].radius
        } else {
            r >= inner
        }
    }

    /// Analytic FSR volume: exact zone area times slab height.
    pub fn analytic_volume(&self, fsr: usize) -> f64 {
        let (region, slab) = self.fsr_region_slab(fsr);
        let (lo, hi) = self.mesh.slab_bounds(slab);
        self.zone_area(region) * (hi - lo)
    }

    /// Exact area of a radial region.
    pub fn zone_area(&self, region: usize) -> f64 {
        let (slot, zone) = self.region_slot_zone(region);
        let cell = &self.cells[self.grid[slot]];
        let inner = if zone == 0 { 0.0 } else { cell.rings[zone - 1].radius };
        if zone < cell.rings.len() {
            std::f64::consts::PI * (cell.rings[zone].radius.powi(2) - inner.powi(2))
        } else {
            self.pitch.0 * self.pitch.1 - std::f64::consts::PI * inner.powi(2)
        }
    }

    /// Geometry of the cell containing lattice slot data, for tracers:
    /// (cell spec, center x, center y, cell bounds).
    pub(crate) fn slot_at(&self, ix: usize, iy: usize) -> (&CellSpec, f64, f64, usize) {
        let slot = iy * self.nx + ix;
        let (x0, _, y0, _) = self.radial_extent();
        let cx = x0 + (ix as f64 + 0.5) * self.pitch.0;
        let cy = y0 + (iy as f64 + 0.5) * self.pitch.1;
        (&self.cells[self.grid[slot]], cx, cy, slot)
    }

}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn one_group_material(name: &str) -> MaterialXS {
        MaterialXS {
            name: name.into(),
            sigma_t: vec![0.5],
            sigma_s: vec![vec![0.3]],
            nu_sigma_f: vec![0.3],
            chi: vec![1.0],
        }
    }

    fn pin_spec() -> GeometrySpec {
        GeometrySpec {
            materials: vec![one_group_material("fuel"), {
                let mut m = one_group_material("water");
                m.nu_sigma_f = vec![0.0];
                m.chi = vec![0.0];
                m
            }],
            cells: vec![CellSpec {
                rings: vec![RingSpec { radius: 0.4, material: ZoneMaterials::Uniform(0) }],
                outer: ZoneMaterials::Uniform(1),
            }],
            lattice: vec![vec![0]],
            pitch: (1.0, 1.0),
            origin: (0.0, 0.0),
            axial_planes: vec![0.0, 2.0],
            boundary: BoundaryConds::all(Bc::Reflective),
        }
    }

    #[test]
    fn fsr_count_is_regions_times_slabs() {
        // 3x3 lattice of 2-zone pin cells over 5 slabs -> 9 * 2 * 5 = 90.
        let mut spec = pin_spec();
        spec.lattice = vec![vec![0, 0, 0], vec![0, 0, 0], vec![0, 0, 0]];
        spec.axial_planes = vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0];
        let g = ExtrudedGeometry::build(spec).unwrap();
        assert_eq!(g.num_radial_regions(), 18);
        assert_eq!(g.num_fsrs(), 90);
    }

    #[test]
    fn fsr_index_is_bijective() {
        let mut spec = pin_spec();
        spec.lattice = vec![vec![0, 0], vec![0, 0]];
        spec.axial_planes = vec![0.0, 1.0, 2.0, 3.0];
        let g = ExtrudedGeometry::build(spec).unwrap();
        let mut seen = vec![false; g.num_fsrs()];
        for region in 0..g.num_radial_regions() {
            for slab in 0..g.mesh().num_slabs() {
                let f = g.fsr_index(region, slab);
                assert!(!seen[f], "fsr {f} hit twice");
                seen[f] = true;
                assert_eq!(g.fsr_region_slab(f), (region, slab));
            }
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn slab_lookup_is_half_open_with_closed_top() {
        let mesh = AxialMesh::new(vec![0.0, 1.0, 2.5, 4.0]).unwrap();
        assert_eq!(mesh.num_slabs(), 3);
        assert_eq!(mesh.slab_of(0.0).unwrap(), 0);
        assert_eq!(mesh.slab_of(1.0).unwrap(), 1);
        assert_eq!(mesh.slab_of(2.5).unwrap(), 2);
        assert_eq!(mesh.slab_of(4.0).unwrap(), 2, "top boundary is closed");
        assert!(mesh.slab_of(4.0001).is_err());
        assert!(mesh.slab_of(-0.0001).is_err());
    }

    #[test]
    fn mesh_rejects_bad_planes() {
        assert!(AxialMesh::new(vec![0.0]).is_err());
        assert!(AxialMesh::new(vec![0.0, 1.0, 1.0]).is_err());
        assert!(AxialMesh::new(vec![0.0, 2.0, 1.0]).is_err());
    }

    #[test]
    fn ring_zone_lookup() {
        let g = ExtrudedGeometry::build(pin_spec()).unwrap();
        assert_eq!(g.find_radial_region(0.5, 0.5).unwrap(), 0, "center is fuel");
        assert_eq!(g.find_radial_region(0.05, 0.05).unwrap(), 1, "corner is water");
        // Point exactly on the ring: closed ring boundary, but the default
        // +x/+y nudge pushes it outward on the +x side.
        assert_eq!(g.find_radial_region(0.5, 0.9).unwrap(), 1);
        assert_eq!(g.find_radial_region_along(0.9, 0.5, -1.0, 0.0).unwrap(), 0);
    }

    #[test]
    fn oversized_ring_is_rejected() {
        let mut spec = pin_spec();
        spec.cells[0].rings[0].radius = 0.51;
        let err = ExtrudedGeometry::build(spec).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("overlap"), "got: {msg}");
    }

    #[test]
    fn per_slab_material_length_must_match_mesh() {
        let mut spec = pin_spec();
        spec.cells[0].rings[0].material = ZoneMaterials::PerSlab(vec![0, 0, 0]);
        assert!(ExtrudedGeometry::build(spec).is_err());
    }

    #[test]
    fn per_slab_materials_resolve_by_slab() {
        let mut spec = pin_spec();
        spec.axial_planes = vec![0.0, 1.0, 2.0];
        spec.cells[0].rings[0].material = ZoneMaterials::PerSlab(vec![0, 1]);
        let g = ExtrudedGeometry::build(spec).unwrap();
        assert_eq!(g.material_of(g.fsr_index(0, 0)), 0);
        assert_eq!(g.material_of(g.fsr_index(0, 1)), 1);
        assert_eq!(g.material_of(g.fsr_index(1, 0)), 1);
    }

    #[test]
    fn analytic_volumes_match_closed_forms() {
        // 1x1x2 homogeneous box.
        let mut spec = pin_spec();
        spec.cells[0] = CellSpec { rings: vec![], outer: ZoneMaterials::Uniform(1) };
        let g = ExtrudedGeometry::build(spec).unwrap();
        assert!((g.analytic_volume(0) - 2.0).abs() < 1e-14);

        // Pin cell: ring area pi r^2, remainder 1 - pi r^2, over height 2.
        let g = ExtrudedGeometry::build(pin_spec()).unwrap();
        let fuel = std::f64::consts::PI * 0.16;
        assert!((g.analytic_volume(g.fsr_index(0, 0)) - 2.0 * fuel).abs() < 1e-12);
        assert!((g.analytic_volume(g.fsr_index(1, 0)) - 2.0 * (1.0 - fuel)).abs() < 1e-12);
    }

    #[test]
    fn zone_areas_match_monte_carlo() {
        let g = ExtrudedGeometry::build(pin_spec()).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        let n = 200_000;
        let mut hits = vec![0u64; g.num_radial_regions()];
        for _ in 0..n {
            let x: f64 = rng.gen_range(0.0..1.0);
            let y: f64 = rng.gen_range(0.0..1.0);
            hits[g.find_radial_region(x, y).unwrap()] += 1;
        }
        for region in 0..g.num_radial_regions() {
            let mc = hits[region] as f64 / n as f64;
            let exact = g.zone_area(region);
            // 3-sigma binomial band.
            let sigma = (exact * (1.0 - exact) / n as f64).sqrt();
            assert!(
                (mc - exact).abs() < 3.5 * sigma,
                "region {region}: mc {mc} vs exact {exact}"
            );
        }
    }

    #[test]
    fn every_point_maps_to_a_containing_region() {
        let mut spec = pin_spec();
        spec.lattice = vec![vec![0, 0, 0], vec![0, 0, 0], vec![0, 0, 0]];
        spec.pitch = (1.26, 1.26);
        spec.cells[0].rings[0].radius = 0.54;
        let g = ExtrudedGeometry::build(spec).unwrap();
        let (x0, x1, y0, y1) = g.radial_extent();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10_000 {
            let x = rng.gen_range(x0..x1);
            let y = rng.gen_range(y0..y1);
            let region = g.find_radial_region(x, y).unwrap();
            assert!(g.region_contains(region, x, y), "point ({x}, {y}) -> region {region}");
            let containing: Vec<usize> =
                (0..g.num_radial_regions()).filter(|&r| g.region_contains(r, x, y)).collect();
            // Random points essentially never land on a surface, so the
            // containment sets must be singletons.
            assert_eq!(containing, vec![region]);
        }
    }

    #[test]
    fn out_of_domain_point_is_an_error() {
        let g = ExtrudedGeometry::build(pin_spec()).unwrap();
        assert!(matches!(g.find_radial_region(1.5, 0.5), Err(Error::OutOfDomain { .. })));
        assert!(g.fsr_at(0.5, 0.5, 3.0).is_err());
    }

    #[test]
    fn transport_corrected_total_is_a_warning_not_an_error() {
        let mut spec = pin_spec();
        spec.materials[1].sigma_s = vec![vec![0.6]]; // row sum above sigma_t
        let g = ExtrudedGeometry::build(spec).unwrap();
        assert_eq!(g.warnings().len(), 1);
        assert!(g.warnings()[0].contains("transport-corrected"));
    }

    #[test]
    fn chi_must_normalize_for_fissile_materials() {
        let mut spec = pin_spec();
        spec.materials[0].chi = vec![0.7];
        assert!(ExtrudedGeometry::build(spec).is_err());
    }

    #[test]
    fn group_count_mismatch_is_rejected() {
        let mut spec = pin_spec();
        spec.materials[1].sigma_t = vec![0.5, 0.5];
        assert!(ExtrudedGeometry::build(spec).is_err());
    }
}
