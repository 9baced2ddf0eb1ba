//! Geometry file loading: a YAML description of materials, pin cells,
//! lattice layout, axial planes, and boundary conditions, with materials
//! referenced by name.

use std::collections::HashMap;
use std::path::Path;

use anyhow::{bail, Context, Result};
use moc3d_core::geometry::{
    Bc, BoundaryConds, CellSpec, ExtrudedGeometry, GeometrySpec, MaterialXS, RingSpec,
    ZoneMaterials,
};
use serde::Deserialize;

/// Geometry file as written on disk.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryFile {
    pub materials: Vec<MaterialEntry>,
    pub cells: Vec<CellEntry>,
    /// `lattice[row][col]` indexes into `cells`; the first row is the top
    /// of the lattice (largest y), as drawn.
    pub lattice: Vec<Vec<usize>>,
    /// Cell pitch: a single number for square cells or `[x, y]`.
    pub pitch: PitchEntry,
    /// Coordinates of the lattice's lower-left corner. Defaults to the
    /// origin.
    #[serde(default)]
    pub origin: [f64; 2],
    /// Axial plane elevations, ascending. `n` planes make `n - 1` slabs.
    pub axial_planes: Vec<f64>,
    /// Either one condition for all six faces (`reflective` / `vacuum`)
    /// or a per-face mapping.
    pub boundary: BoundaryEntry,
}

/// One material: name plus multigroup cross sections. `scatter[g]` is the
/// row of scattering cross sections *from* group `g` into each group.
/// `nu_fission` and `chi` may be omitted for non-fissile materials.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialEntry {
    pub name: String,
    pub total: Vec<f64>,
    pub scatter: Vec<Vec<f64>>,
    #[serde(default)]
    pub nu_fission: Vec<f64>,
    #[serde(default)]
    pub chi: Vec<f64>,
}

/// One cell: optional concentric rings (innermost first) and the material
/// filling the remainder of the cell.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellEntry {
    #[serde(default)]
    pub rings: Vec<RingEntry>,
    pub outer: MaterialRef,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RingEntry {
    pub radius: f64,
    pub material: MaterialRef,
}

/// A material reference: one name for the whole height, or one name per
/// axial slab.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum MaterialRef {
    Uniform(String),
    PerSlab(Vec<String>),
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(untagged)]
pub enum PitchEntry {
    Square(f64),
    Rect([f64; 2]),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum BoundaryEntry {
    All(String),
    PerFace {
        x_min: String,
        x_max: String,
        y_min: String,
        y_max: String,
        z_min: String,
        z_max: String,
    },
}

impl GeometryFile {
    /// Parse geometry YAML text.
    pub fn parse(text: &str) -> Result<GeometryFile> {
        let file: GeometryFile = serde_yaml::from_str(text)?;
        Ok(file)
    }

    /// Resolve material names to indices and produce a geometry spec.
    pub fn resolve(&self) -> Result<GeometrySpec> {
        if self.materials.is_empty() {
            bail!("geometry defines no materials");
        }
        let num_groups = self.materials[0].total.len();
        let mut by_name: HashMap<&str, usize> = HashMap::new();
        for (i, m) in self.materials.iter().enumerate() {
            if by_name.insert(m.name.as_str(), i).is_some() {
                bail!("duplicate material name '{}'", m.name);
            }
        }

        let materials: Vec<MaterialXS> = self
            .materials
            .iter()
            .map(|m| MaterialXS {
                name: m.name.clone(),
                sigma_t: m.total.clone(),
                sigma_s: m.scatter.clone(),
                nu_sigma_f: if m.nu_fission.is_empty() {
                    vec![0.0; num_groups]
                } else {
                    m.nu_fission.clone()
                },
                chi: if m.chi.is_empty() {
                    vec![0.0; num_groups]
                } else {
                    m.chi.clone()
                },
            })
            .collect();

        let resolve_ref = |r: &MaterialRef| -> Result<ZoneMaterials> {
            let lookup = |name: &str| -> Result<usize> {
                by_name
                    .get(name)
                    .copied()
                    .ok_or_else(|| anyhow::anyhow!("unknown material '{name}'"))
            };
            match r {
                MaterialRef::Uniform(name) => Ok(ZoneMaterials::Uniform(lookup(name)?)),
                MaterialRef::PerSlab(names) => Ok(ZoneMaterials::PerSlab(
                    names
                        .iter()
                        .map(|n| lookup(n))
                        .collect::<Result<Vec<usize>>>()?,
                )),
            }
        };

        let mut cells = Vec::with_capacity(self.cells.len());
        for (i, c) in self.cells.iter().enumerate() {
            let ctx = || format!("cell {i}");
            let mut rings = Vec::with_capacity(c.rings.len());
            for ring in &c.rings {
                rings.push(RingSpec {
                    radius: ring.radius,
                    material: resolve_ref(&ring.material).with_context(ctx)?,
                });
            }
            cells.push(CellSpec {
                rings,
                outer: resolve_ref(&c.outer).with_context(ctx)?,
            });
        }

        let pitch = match self.pitch {
            PitchEntry::Square(p) => (p, p),
            PitchEntry::Rect([px, py]) => (px, py),
        };

        Ok(GeometrySpec {
            materials,
            cells,
            lattice: self.lattice.clone(),
            pitch,
            origin: (self.origin[0], self.origin[1]),
            axial_planes: self.axial_planes.clone(),
            boundary: self.boundary.resolve()?,
        })
    }
}

impl BoundaryEntry {
    fn resolve(&self) -> Result<BoundaryConds> {
        match self {
            BoundaryEntry::All(name) => Ok(BoundaryConds::all(parse_bc(name)?)),
            BoundaryEntry::PerFace {
                x_min,
                x_max,
                y_min,
                y_max,
                z_min,
                z_max,
            } => Ok(BoundaryConds {
                x_min: parse_bc(x_min)?,
                x_max: parse_bc(x_max)?,
                y_min: parse_bc(y_min)?,
                y_max: parse_bc(y_max)?,
                z_min: parse_bc(z_min)?,
                z_max: parse_bc(z_max)?,
            }),
        }
    }
}

fn parse_bc(name: &str) -> Result<Bc> {
    match name.to_ascii_lowercase().as_str() {
        "vacuum" => Ok(Bc::Vacuum),
        "reflective" | "reflect" | "mirror" => Ok(Bc::Reflective),
        other => bail!("unknown boundary condition '{other}' (expected 'vacuum' or 'reflective')"),
    }
}

/// Load a geometry file from disk and build the validated geometry.
pub fn load_geometry(path: &Path) -> Result<ExtrudedGeometry> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading geometry file {}", path.display()))?;
    let file = GeometryFile::parse(&text)
        .with_context(|| format!("parsing geometry file {}", path.display()))?;
    let spec = file
        .resolve()
        .with_context(|| format!("resolving geometry file {}", path.display()))?;
    let geom = ExtrudedGeometry::build(spec)
        .with_context(|| format!("building geometry from {}", path.display()))?;
    Ok(geom)
}
