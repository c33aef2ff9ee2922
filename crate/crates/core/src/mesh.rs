//! Tetrahedral meshes, materials, lumped mass and the simulation state.

use std::collections::{BTreeMap, HashMap};
use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, M3};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeshError {
    #[error("element {element} has non-positive rest volume {volume:e}")]
    DegenerateElement { element: usize, volume: f64 },
    #[error("element {element} references vertex {vertex} but the mesh has {num_vertices} vertices")]
    IndexOutOfRange { element: usize, vertex: usize, num_vertices: usize },
    #[error("invalid material: {field} = {value} ({reason})")]
    InvalidMaterial { field: &'static str, value: f64, reason: &'static str },
    #[error("length mismatch: {what} has length {got}, expected {expected}")]
    LengthMismatch { what: &'static str, got: usize, expected: usize },
    #[error("surface region `{0}` is not closed and consistently oriented")]
    OpenRegion(String),
    #[error("vertex {0} has zero mass (not referenced by any element)")]
    MasslessVertex(usize),
}

/// Per-element material parameters, SI units.
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaterialParams {
    /// kg/m³
    pub density: f64,
    /// Pa
    pub youngs_modulus: f64,
    pub poisson_ratio: f64,
    /// Mass-proportional Rayleigh coefficient (1/s).
    #[serde(default)]
    pub rayleigh_alpha: f64,
    /// Stiffness-proportional Rayleigh coefficient (s).
    #[serde(default)]
    pub rayleigh_beta: f64,
}

impl MaterialParams {
    pub fn new(density: f64, youngs_modulus: f64, poisson_ratio: f64) -> Self {
        MaterialParams {
            density,
            youngs_modulus,
            poisson_ratio,
            rayleigh_alpha: 0.0,
            rayleigh_beta: 0.0,
        }
    }

    pub fn with_damping(mut self, alpha: f64, beta: f64) -> Self {
        self.rayleigh_alpha = alpha;
        self.rayleigh_beta = beta;
        self
    }

    pub fn validate(&self) -> Result<(), MeshError> {
        let bad = |field, value, reason| Err(MeshError::InvalidMaterial { field, value, reason });
        if !(self.density > 0.0 && self.density.is_finite()) {
            return bad("density", self.density, "must be positive");
        }
        if !(self.youngs_modulus > 0.0 && self.youngs_modulus.is_finite()) {
            return bad("youngs_modulus", self.youngs_modulus, "must be positive");
        }
        if !(0.0..0.5).contains(&self.poisson_ratio) {
            return bad("poisson_ratio", self.poisson_ratio, "must lie in [0, 0.5)");
        }
        if !(self.rayleigh_alpha >= 0.0 && self.rayleigh_alpha.is_finite()) {
            return bad("rayleigh_alpha", self.rayleigh_alpha, "must be non-negative");
        }
        if !(self.rayleigh_beta >= 0.0 && self.rayleigh_beta.is_finite()) {
            return bad("rayleigh_beta", self.rayleigh_beta, "must be non-negative");
        }
        Ok(())
    }

    /// Lamé parameters `(μ, λ)`.
    pub fn lame(&self) -> (f64, f64) {
        let e = self.youngs_modulus;
        let nu = self.poisson_ratio;
        let mu = e / (2.0 * (1.0 + nu));
        let lambda = e * nu / ((1.0 + nu) * (1.0 - 2.0 * nu));
        (mu, lambda)
    }
}

/// Signed volume of the tetrahedron `(a, b, c, d)`.
pub fn tet_volume(a: [f64; 3], b: [f64; 3], c: [f64; 3], d: [f64; 3]) -> f64 {
    let m = [
        linalg::sub(b, a),
        linalg::sub(c, a),
        linalg::sub(d, a),
    ];
    linalg::det(&m) / 6.0
}

/// Raw tetrahedral geometry with named surface groups.
#[derive(Clone, Debug, Default)]
pub struct TetMesh {
    pub positions: Vec<[f64; 3]>,
    pub tets: Vec<[usize; 4]>,
    /// Named triangle groups. `"surface"` is always the outward boundary.
    pub groups: BTreeMap<String, Vec<[usize; 3]>>,
}

impl TetMesh {
    /// Builds a mesh from vertices and tets, flipping negatively oriented tets
    /// and extracting the boundary into the `"surface"` group.
    pub fn new(positions: Vec<[f64; 3]>, tets: Vec<[usize; 4]>) -> Self {
        let mut mesh = TetMesh { positions, tets, groups: BTreeMap::new() };
        mesh.orient();
        let surface = boundary_triangles(&mesh.tets);
        mesh.groups.insert("surface".into(), surface);
        mesh
    }

    fn orient(&mut self) {
        for t in &mut self.tets {
            let p = |i: usize| self.positions[t[i]];
            if tet_volume(p(0), p(1), p(2), p(3)) < 0.0 {
                t.swap(2, 3);
            }
        }
    }

    pub fn surface(&self) -> &[[usize; 3]] {
        self.groups.get("surface").map(|v| v.as_slice()).unwrap_or(&[])
    }

    pub fn single_tet(edge: f64) -> Self {
        TetMesh::new(
            vec![[0.0, 0.0, 0.0], [edge, 0.0, 0.0], [0.0, edge, 0.0], [0.0, 0.0, edge]],
            vec![[0, 1, 2, 3]],
        )
    }

    /// Axis-aligned box `[0, size]` split into `cells` hexahedra, six tets each.
    pub fn box_grid(size: [f64; 3], cells: [usize; 3]) -> Self {
        let [nx, ny, nz] = cells.map(|c| c.max(1));
        let idx = |i: usize, j: usize, k: usize| (i * (ny + 1) + j) * (nz + 1) + k;
        let mut positions = Vec::with_capacity((nx + 1) * (ny + 1) * (nz + 1));
        for i in 0..=nx {
            for j in 0..=ny {
                for k in 0..=nz {
                    positions.push([
                        size[0] * i as f64 / nx as f64,
                        size[1] * j as f64 / ny as f64,
                        size[2] * k as f64 / nz as f64,
                    ]);
                }
            }
        }
        // Freudenthal/Kuhn split: one tet per axis permutation along the main diagonal.
        const PERMS: [[usize; 3]; 6] =
            [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
        let mut tets = Vec::with_capacity(6 * nx * ny * nz);
        for i in 0..nx {
            for j in 0..ny {
                for k in 0..nz {
                    for perm in PERMS {
                        let mut c = [i, j, k];
                        let mut tet = [idx(c[0], c[1], c[2]); 4];
                        for (s, &axis) in perm.iter().enumerate() {
                            c[axis] += 1;
                            tet[s + 1] = idx(c[0], c[1], c[2]);
                        }
                        tets.push(tet);
                    }
                }
            }
        }
        TetMesh::new(positions, tets)
    }

    /// Hollow ball between radii `inner` and `outer` centered at the origin.
    ///
    /// The shell is built from an icosphere with `subdivisions` refinement
    /// levels and `layers` radial layers. Besides `"surface"`, it exposes the
    /// groups `"outer"` and `"cavity"`; the latter is oriented away from the
    /// center so its enclosed volume is the (positive) cavity volume.
    pub fn hollow_sphere(inner: f64, outer: f64, subdivisions: usize, layers: usize) -> Self {
        let (sphere, tris) = icosphere(subdivisions);
        let layers = layers.max(1);
        let ns = sphere.len();
        let mut positions = Vec::with_capacity(ns * (layers + 1));
        for l in 0..=layers {
            let r = inner + (outer - inner) * l as f64 / layers as f64;
            positions.extend(sphere.iter().map(|p| linalg::scale(*p, r)));
        }
        let mut tets = Vec::with_capacity(3 * tris.len() * layers);
        for l in 0..layers {
            for tri in &tris {
                let mut s = *tri;
                s.sort_unstable();
                let lo = |i: usize| l * ns + s[i];
                let hi = |i: usize| (l + 1) * ns + s[i];
                // Splitting every prism by sorted vertex index keeps shared quads conforming.
                tets.push([lo(0), lo(1), lo(2), hi(0)]);
                tets.push([lo(1), lo(2), hi(0), hi(1)]);
                tets.push([lo(2), hi(0), hi(1), hi(2)]);
            }
        }
        let mut mesh = TetMesh::new(positions, tets);
        let outer_tris = tris
            .iter()
            .map(|t| t.map(|i| layers * ns + i))
            .collect();
        mesh.groups.insert("outer".into(), outer_tris);
        mesh.groups.insert("cavity".into(), tris.clone());
        mesh
    }

    /// Applies `x ↦ R x + t` to every vertex.
    pub fn transformed(mut self, rotation: &M3<f64>, translation: [f64; 3]) -> Self {
        for p in &mut self.positions {
            *p = linalg::add(linalg::mat_vec(rotation, *p), translation);
        }
        self
    }

    pub fn translated(self, translation: [f64; 3]) -> Self {
        self.transformed(&linalg::IDENTITY, translation)
    }
}

/// Outward-oriented boundary faces of a positively oriented tet list.
pub fn boundary_triangles(tets: &[[usize; 4]]) -> Vec<[usize; 3]> {
    let mut count: HashMap<[usize; 3], (usize, [usize; 3])> = HashMap::new();
    let mut order = Vec::new();
    for t in tets {
        let faces = [
            [t[0], t[2], t[1]],
            [t[0], t[1], t[3]],
            [t[0], t[3], t[2]],
            [t[1], t[2], t[3]],
        ];
        for f in faces {
            let mut key = f;
            key.sort_unstable();
            let e = count.entry(key).or_insert_with(|| {
                order.push(key);
                (0, f)
            });
            e.0 += 1;
        }
    }
    order
        .into_iter()
        .filter_map(|k| {
            let (n, f) = count[&k];
            (n == 1).then_some(f)
        })
        .collect()
}

/// True when every directed edge of `tris` is matched by its reverse exactly once.
pub fn is_closed_and_oriented(tris: &[[usize; 3]]) -> bool {
    let mut edges: HashMap<(usize, usize), i32> = HashMap::new();
    for t in tris {
        for k in 0..3 {
            *edges.entry((t[k], t[(k + 1) % 3])).or_default() += 1;
        }
    }
    !tris.is_empty()
        && edges
            .iter()
            .all(|(&(a, b), &n)| n == 1 && edges.get(&(b, a)) == Some(&1))
}

fn icosphere(subdivisions: usize) -> (Vec<[f64; 3]>, Vec<[usize; 3]>) {
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    let mut verts: Vec<[f64; 3]> = vec![
        [-1.0, phi, 0.0],
        [1.0, phi, 0.0],
        [-1.0, -phi, 0.0],
        [1.0, -phi, 0.0],
        [0.0, -1.0, phi],
        [0.0, 1.0, phi],
        [0.0, -1.0, -phi],
        [0.0, 1.0, -phi],
        [phi, 0.0, -1.0],
        [phi, 0.0, 1.0],
        [-phi, 0.0, -1.0],
        [-phi, 0.0, 1.0],
    ];
    let mut tris: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for v in &mut verts {
        *v = linalg::scale(*v, 1.0 / linalg::norm(*v));
    }
    for _ in 0..subdivisions {
        let mut mid: HashMap<(usize, usize), usize> = HashMap::new();
        let mut next = Vec::with_capacity(tris.len() * 4);
        let mut midpoint = |a: usize, b: usize, verts: &mut Vec<[f64; 3]>| {
            let key = (a.min(b), a.max(b));
            *mid.entry(key).or_insert_with(|| {
                let m = linalg::scale(linalg::add(verts[a], verts[b]), 0.5);
                verts.push(linalg::scale(m, 1.0 / linalg::norm(m)));
                verts.len() - 1
            })
        };
        for [a, b, c] in tris {
            let ab = midpoint(a, b, &mut verts);
            let bc = midpoint(b, c, &mut verts);
            let ca = midpoint(c, a, &mut verts);
            next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        tris = next;
    }
    (verts, tris)
}

/// One body inside a [`TetMeshModel`].
#[derive(Clone, Debug)]
pub struct Body {
    pub name: String,
    pub vertices: Range<usize>,
    pub tets: Range<usize>,
    /// Named triangle groups in global vertex numbering.
    pub groups: BTreeMap<String, Vec<[usize; 3]>>,
}

/// All simulated bodies combined into one global vertex numbering.
#[derive(Clone, Debug)]
pub struct TetMeshModel {
    pub rest_positions: Vec<[f64; 3]>,
    pub tets: Vec<[usize; 4]>,
    /// Outward boundary triangles of all bodies.
    pub surface_tris: Vec<[usize; 3]>,
    pub element_material: Vec<MaterialParams>,
    /// Lumped mass repeated per coordinate, length `3·n_verts`.
    pub vertex_mass: Vec<f64>,
    pub bodies: Vec<Body>,
    /// Sorted unique vertices of `surface_tris`.
    pub surface_vertices: Vec<usize>,
}

impl TetMeshModel {
    pub fn from_single(name: &str, mesh: TetMesh, material: MaterialParams) -> Result<Self, MeshError> {
        Self::from_bodies(vec![(name.to_string(), mesh, material)])
    }

    pub fn from_bodies(bodies: Vec<(String, TetMesh, MaterialParams)>) -> Result<Self, MeshError> {
        let mut rest_positions = Vec::new();
        let mut tets = Vec::new();
        let mut surface_tris = Vec::new();
        let mut element_material = Vec::new();
        let mut out_bodies = Vec::new();
        for (name, mesh, material) in bodies {
            material.validate()?;
            let v0 = rest_positions.len();
            let t0 = tets.len();
            let nv = mesh.positions.len();
            for (e, t) in mesh.tets.iter().enumerate() {
                if let Some(&bad) = t.iter().find(|&&i| i >= nv) {
                    return Err(MeshError::IndexOutOfRange {
                        element: t0 + e,
                        vertex: bad,
                        num_vertices: nv,
                    });
                }
            }
            rest_positions.extend_from_slice(&mesh.positions);
            tets.extend(mesh.tets.iter().map(|t| t.map(|i| i + v0)));
            element_material.extend(std::iter::repeat_n(material, mesh.tets.len()));
            let groups: BTreeMap<String, Vec<[usize; 3]>> = mesh
                .groups
                .iter()
                .map(|(k, tris)| (k.clone(), tris.iter().map(|t| t.map(|i| i + v0)).collect()))
                .collect();
            if let Some(s) = groups.get("surface") {
                surface_tris.extend_from_slice(s);
            }
            out_bodies.push(Body {
                name,
                vertices: v0..rest_positions.len(),
                tets: t0..tets.len(),
                groups,
            });
        }
        let mut surface_vertices: Vec<usize> = surface_tris.iter().flatten().copied().collect();
        surface_vertices.sort_unstable();
        surface_vertices.dedup();
        let mut model = TetMeshModel {
            rest_positions,
            tets,
            surface_tris,
            element_material,
            vertex_mass: Vec::new(),
            bodies: out_bodies,
            surface_vertices,
        };
        model.vertex_mass = build_lumped_mass(&model)?;
        Ok(model)
    }

    pub fn num_vertices(&self) -> usize {
        self.rest_positions.len()
    }

    pub fn num_dofs(&self) -> usize {
        3 * self.rest_positions.len()
    }

    pub fn body(&self, name: &str) -> Option<&Body> {
        self.bodies.iter().find(|b| b.name == name)
    }

    pub fn rest_volume(&self, e: usize) -> f64 {
        let t = self.tets[e];
        let p = |i: usize| self.rest_positions[t[i]];
        tet_volume(p(0), p(1), p(2), p(3))
    }

    /// Stacked rest positions.
    pub fn rest_q(&self) -> Vec<f64> {
        self.rest_positions.iter().flatten().copied().collect()
    }

    pub fn total_mass(&self) -> f64 {
        self.vertex_mass.iter().step_by(3).sum()
    }
}

/// Diagonal lumped mass: each tet spreads `ρ·vol/4` to its vertices.
pub fn build_lumped_mass(mesh: &TetMeshModel) -> Result<Vec<f64>, MeshError> {
    let n = mesh.num_vertices();
    let mut m = vec![0.0; n];
    for (e, t) in mesh.tets.iter().enumerate() {
        let vol = mesh.rest_volume(e);
        if !(vol > 0.0) {
            return Err(MeshError::DegenerateElement { element: e, volume: vol });
        }
        let share = mesh.element_material[e].density * vol / 4.0;
        for &i in t {
            m[i] += share;
        }
    }
    if let Some(i) = m.iter().position(|&x| x <= 0.0) {
        return Err(MeshError::MasslessVertex(i));
    }
    Ok(m.iter().flat_map(|&x| [x; 3]).collect())
}

/// `q + h·v`.
pub fn advance_positions(q: &[f64], v: &[f64], h: f64) -> Result<Vec<f64>, MeshError> {
    if q.len() != v.len() {
        return Err(MeshError::LengthMismatch { what: "velocities", got: v.len(), expected: q.len() });
    }
    Ok(q.iter().zip(v).map(|(a, b)| a + h * b).collect())
}

/// Generalized positions and velocities at time `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct SystemState {
    pub q: Vec<f64>,
    pub v: Vec<f64>,
    pub t: f64,
}

impl SystemState {
    pub fn new(q: Vec<f64>, v: Vec<f64>, t: f64) -> Result<Self, MeshError> {
        if q.len() != v.len() {
            return Err(MeshError::LengthMismatch { what: "velocities", got: v.len(), expected: q.len() });
        }
        if !q.len().is_multiple_of(3) {
            return Err(MeshError::LengthMismatch {
                what: "positions",
                got: q.len(),
                expected: 3 * (q.len() / 3),
            });
        }
        Ok(SystemState { q, v, t })
    }

    pub fn at_rest(mesh: &TetMeshModel) -> Self {
        SystemState { q: mesh.rest_q(), v: vec![0.0; mesh.num_dofs()], t: 0.0 }
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().chain(&self.v).all(|x| x.is_finite())
    }

    pub fn position(&self, i: usize) -> [f64; 3] {
        [self.q[3 * i], self.q[3 * i + 1], self.q[3 * i + 2]]
    }

    pub fn velocity(&self, i: usize) -> [f64; 3] {
        [self.v[3 * i], self.v[3 * i + 1], self.v[3 * i + 2]]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_material(density: f64) -> MaterialParams {
        MaterialParams::new(density, 1e5, 0.3)
    }

    #[test]
    fn unit_tet_mass_split() {
        let model = TetMeshModel::from_single("t", TetMesh::single_tet(1.0), unit_material(6.0)).unwrap();
        for i in 0..4 {
            assert!((model.vertex_mass[3 * i] - 0.25).abs() < 1e-15);
        }
        assert!((model.total_mass() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn shared_face_accumulates() {
        let pos = vec![
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, 0.0, 1.0],
            [0.0, 0.0, -1.0],
        ];
        let mesh = TetMesh::new(pos, vec![[0, 1, 2, 3], [0, 2, 1, 4]]);
        let model = TetMeshModel::from_single("t", mesh, unit_material(6.0)).unwrap();
        // vertices 0, 1, 2 are shared by both tets
        for i in 0..3 {
            assert!((model.vertex_mass[3 * i] - 0.5).abs() < 1e-14);
        }
        assert!((model.vertex_mass[9] - 0.25).abs() < 1e-14);
        assert!((model.vertex_mass[12] - 0.25).abs() < 1e-14);
    }

    #[test]
    fn degenerate_element_is_named() {
        let mesh = TetMesh {
            positions: vec![[0.0; 3], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0], [3.0, 0.0, 0.0]],
            tets: vec![[0, 1, 2, 3]],
            groups: BTreeMap::new(),
        };
        let err = TetMeshModel::from_single("flat", mesh, unit_material(1.0)).unwrap_err();
        assert!(matches!(err, MeshError::DegenerateElement { element: 0, .. }));
    }

    #[test]
    fn invalid_poisson_ratio_rejected() {
        let m = MaterialParams::new(1.0, 1.0, 0.6);
        match m.validate() {
            Err(MeshError::InvalidMaterial { field, .. }) => assert_eq!(field, "poisson_ratio"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn box_grid_is_watertight_with_positive_volumes() {
        let mesh = TetMesh::box_grid([0.3, 0.2, 0.1], [3, 2, 1]);
        assert_eq!(mesh.tets.len(), 36);
        let total: f64 = mesh
            .tets
            .iter()
            .map(|t| {
                let v = tet_volume(
                    mesh.positions[t[0]],
                    mesh.positions[t[1]],
                    mesh.positions[t[2]],
                    mesh.positions[t[3]],
                );
                assert!(v > 0.0);
                v
            })
            .sum();
        assert!((total - 0.006).abs() < 1e-15);
        assert!(is_closed_and_oriented(mesh.surface()));
        // 2 triangles per boundary quad
        assert_eq!(mesh.surface().len(), 2 * (2 * (3 * 2 + 3 + 2)));
    }

    #[test]
    fn hollow_sphere_is_conforming() {
        let mesh = TetMesh::hollow_sphere(0.8, 1.0, 1, 2);
        for t in &mesh.tets {
            let p = |i: usize| mesh.positions[t[i]];
            assert!(tet_volume(p(0), p(1), p(2), p(3)) > 0.0);
        }
        // A conforming shell has exactly the two spheres as boundary.
        assert_eq!(mesh.surface().len(), 2 * 80);
        assert!(is_closed_and_oriented(mesh.surface()));
        assert!(is_closed_and_oriented(&mesh.groups["cavity"]));
        assert!(is_closed_and_oriented(&mesh.groups["outer"]));
    }

    #[test]
    fn refinement_preserves_total_mass() {
        let rho = 1234.5;
        let coarse =
            TetMeshModel::from_single("b", TetMesh::box_grid([0.2, 0.1, 0.3], [1, 1, 1]), unit_material(rho))
                .unwrap();
        let fine =
            TetMeshModel::from_single("b", TetMesh::box_grid([0.2, 0.1, 0.3], [4, 3, 5]), unit_material(rho))
                .unwrap();
        let exact = rho * 0.2 * 0.1 * 0.3;
        assert!((coarse.total_mass() - exact).abs() / exact < 1e-10);
        assert!((fine.total_mass() - exact).abs() / exact < 1e-10);
    }

    #[test]
    fn advance_positions_cases() {
        assert_eq!(advance_positions(&[0.0; 3], &[0.0; 3], 0.01).unwrap(), vec![0.0; 3]);
        assert_eq!(
            advance_positions(&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], 0.5).unwrap(),
            vec![1.0, 0.5, 0.0]
        );
        assert!(advance_positions(&[0.0; 3], &[0.0; 6], 0.1).is_err());
    }
}
