//! Stable neo-Hookean elasticity on linear tetrahedra and Rayleigh damping.
//!
//! Energy density, with `J = det F`:
//!
//! ```text
//! Ψ(F) = μ/2 (tr FᵀF − 3) − μ ln J + λ/2 (ln J)²
//! ```
//!
//! Element kernels are generic over [`Real`] so that dual-number evaluation
//! of the same code yields exact directional derivatives.

use thiserror::Error;

use crate::autodiff::{Dual, Real};
use crate::linalg::{self, Triplets, M3, V3};
use crate::mesh::TetMeshModel;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ElasticError {
    #[error("element {element} is inverted or degenerate (det F = {det:e})")]
    Inverted { element: usize, det: f64 },
    #[error("element {element} has a non-finite deformation gradient")]
    NonFinite { element: usize },
    #[error("position vector has length {got}, expected {expected}")]
    Length { got: usize, expected: usize },
}

/// Per-element rest data: inverse rest shape matrix, rest volume and Lamé pair.
#[derive(Clone, Debug)]
pub struct ElasticScratch {
    pub dm_inv: Vec<M3<f64>>,
    pub rest_volume: Vec<f64>,
    /// `(μ, λ)` per element.
    pub lame: Vec<(f64, f64)>,
    /// `(α, β)` Rayleigh coefficients per element.
    pub rayleigh: Vec<(f64, f64)>,
    pub tets: Vec<[usize; 4]>,
}

impl ElasticScratch {
    pub fn new(mesh: &TetMeshModel) -> Self {
        let n = mesh.tets.len();
        let mut dm_inv = Vec::with_capacity(n);
        let mut rest_volume = Vec::with_capacity(n);
        for (e, t) in mesh.tets.iter().enumerate() {
            let x: [[f64; 3]; 4] = t.map(|i| mesh.rest_positions[i]);
            dm_inv.push(linalg::inverse(&shape_matrix(&x)));
            rest_volume.push(mesh.rest_volume(e));
        }
        ElasticScratch {
            dm_inv,
            rest_volume,
            lame: mesh.element_material.iter().map(|m| m.lame()).collect(),
            rayleigh: mesh
                .element_material
                .iter()
                .map(|m| (m.rayleigh_alpha, m.rayleigh_beta))
                .collect(),
            tets: mesh.tets.clone(),
        }
    }

    pub fn num_elements(&self) -> usize {
        self.tets.len()
    }

    /// Shape-function gradients `β_a`; `F = Σ_a x_a ⊗ β_a`.
    pub fn shape_gradients(&self, e: usize) -> [[f64; 3]; 4] {
        let d = &self.dm_inv[e];
        let b0 = [-(d[0][0] + d[1][0] + d[2][0]), -(d[0][1] + d[1][1] + d[2][1]), -(d[0][2] + d[1][2] + d[2][2])];
        [b0, d[0], d[1], d[2]]
    }

    fn element_positions<T: Real>(&self, e: usize, q: &[T]) -> [V3<T>; 4] {
        self.tets[e].map(|i| [q[3 * i], q[3 * i + 1], q[3 * i + 2]])
    }

    /// Deformation gradient of element `e`.
    pub fn deformation_gradient<T: Real>(&self, e: usize, q: &[T]) -> M3<T> {
        let x = self.element_positions(e, q);
        let dm_inv = self.dm_inv[e].map(|r| r.map(T::from_f64));
        linalg::mat_mul(&shape_matrix(&x), &dm_inv)
    }

    /// Deformation gradients of all elements.
    pub fn deformation_gradients(&self, q: &[f64]) -> Vec<M3<f64>> {
        (0..self.num_elements()).map(|e| self.deformation_gradient(e, q)).collect()
    }

    fn check_len(&self, len: usize, dofs: usize) -> Result<(), ElasticError> {
        if len != dofs {
            return Err(ElasticError::Length { got: len, expected: dofs });
        }
        Ok(())
    }

    fn checked_f<T: Real>(&self, e: usize, q: &[T]) -> Result<(M3<T>, ElementInverse<T>), ElasticError> {
        let f = self.deformation_gradient(e, q);
        if f.iter().flatten().any(|x| !x.re().is_finite()) {
            return Err(ElasticError::NonFinite { element: e });
        }
        let j = linalg::det(&f);
        if !(j.re() > 0.0) {
            return Err(ElasticError::Inverted { element: e, det: j.re() });
        }
        let inv = ElementInverse { f_inv_t: linalg::transpose(&linalg::inverse(&f)), ln_j: j.ln() };
        Ok((f, inv))
    }
}

struct ElementInverse<T> {
    f_inv_t: M3<T>,
    ln_j: T,
}

/// Matrix whose columns are `x_a − x_0` for `a = 1, 2, 3`.
fn shape_matrix<T: Real>(x: &[V3<T>; 4]) -> M3<T> {
    let e1 = linalg::sub(x[1], x[0]);
    let e2 = linalg::sub(x[2], x[0]);
    let e3 = linalg::sub(x[3], x[0]);
    [[e1[0], e2[0], e3[0]], [e1[1], e2[1], e3[1]], [e1[2], e2[2], e3[2]]]
}

fn frobenius<T: Real>(a: &M3<T>, b: &M3<T>) -> T {
    let mut s = T::zero();
    for i in 0..3 {
        for j in 0..3 {
            s += a[i][j] * b[i][j];
        }
    }
    s
}

/// Energy density Ψ(F); `+∞` when `det F ≤ 0`.
pub fn energy_density(f: &M3<f64>, mu: f64, lambda: f64) -> f64 {
    let j = linalg::det(f);
    if !(j > 0.0) {
        return f64::INFINITY;
    }
    let ln_j = j.ln();
    0.5 * mu * (frobenius(f, f) - 3.0) - mu * ln_j + 0.5 * lambda * ln_j * ln_j
}

/// First Piola-Kirchhoff stress `P = μF − μF⁻ᵀ + λ ln J F⁻ᵀ`.
fn pk1<T: Real>(f: &M3<T>, inv: &ElementInverse<T>, mu: f64, lambda: f64) -> M3<T> {
    let c = inv.ln_j * lambda - mu;
    let mut p = [[T::zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            p[i][j] = f[i][j] * mu + inv.f_inv_t[i][j] * c;
        }
    }
    p
}

/// Stress differential `dP = μ dF + (μ − λ ln J) F⁻ᵀ dFᵀ F⁻ᵀ + λ tr(F⁻¹ dF) F⁻ᵀ`.
fn pk1_differential<T: Real>(inv: &ElementInverse<T>, df: &M3<T>, mu: f64, lambda: f64) -> M3<T> {
    let fit = &inv.f_inv_t;
    let m = linalg::mat_mul(&linalg::mat_mul(fit, &linalg::transpose(df)), fit);
    // tr(F⁻¹ dF) = F⁻ᵀ : dF
    let tr = frobenius(fit, df);
    let c = -(inv.ln_j * lambda) + mu;
    let mut dp = [[T::zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            dp[i][j] = df[i][j] * mu + m[i][j] * c + fit[i][j] * (tr * lambda);
        }
    }
    dp
}

/// Total elastic energy. Inverted elements give `+∞`.
pub fn elastic_energy(scratch: &ElasticScratch, q: &[f64]) -> Result<f64, ElasticError> {
    let mut total = 0.0;
    for e in 0..scratch.num_elements() {
        let f = scratch.deformation_gradient(e, q);
        if f.iter().flatten().any(|x| !x.is_finite()) {
            return Err(ElasticError::NonFinite { element: e });
        }
        let (mu, lambda) = scratch.lame[e];
        total += scratch.rest_volume[e] * energy_density(&f, mu, lambda);
    }
    Ok(total)
}

/// Adds `f_e = −∂W/∂q` into `out`.
pub fn add_elastic_force<T: Real>(scratch: &ElasticScratch, q: &[T], out: &mut [T]) -> Result<(), ElasticError> {
    scratch.check_len(out.len(), q.len())?;
    for e in 0..scratch.num_elements() {
        let (f, inv) = scratch.checked_f(e, q)?;
        let (mu, lambda) = scratch.lame[e];
        let p = pk1(&f, &inv, mu, lambda);
        scatter_stress(scratch, e, &p, -scratch.rest_volume[e], out);
    }
    Ok(())
}

pub fn elastic_force(scratch: &ElasticScratch, q: &[f64]) -> Result<Vec<f64>, ElasticError> {
    let mut out = vec![0.0; q.len()];
    add_elastic_force(scratch, q, &mut out)?;
    Ok(out)
}

/// Adds `s · vol · P β_a` to the rows of every vertex `a` of element `e`.
fn scatter_stress<T: Real>(scratch: &ElasticScratch, e: usize, p: &M3<T>, s: f64, out: &mut [T]) {
    let betas = scratch.shape_gradients(e);
    for (a, &vi) in scratch.tets[e].iter().enumerate() {
        let g = linalg::mat_vec(p, linalg::v3(betas[a]));
        for k in 0..3 {
            out[3 * vi + k] += g[k] * s;
        }
    }
}

fn element_direction<T: Real>(scratch: &ElasticScratch, e: usize, dx: &[T]) -> M3<T> {
    let betas = scratch.shape_gradients(e);
    let mut df = [[T::zero(); 3]; 3];
    for (a, &vi) in scratch.tets[e].iter().enumerate() {
        for i in 0..3 {
            for j in 0..3 {
                df[i][j] += dx[3 * vi + i] * betas[a][j];
            }
        }
    }
    df
}

/// Adds `s · (∂f_e/∂q) · dx = −s K(q) dx` into `out`.
///
/// Both `q` and `dx` may carry dual parts, which is how the stiffness-damping
/// term is differentiated with respect to positions.
pub fn add_stiffness_product<T: Real>(
    scratch: &ElasticScratch,
    q: &[T],
    dx: &[T],
    s: impl Fn(usize) -> f64,
    out: &mut [T],
) -> Result<(), ElasticError> {
    scratch.check_len(out.len(), q.len())?;
    scratch.check_len(dx.len(), q.len())?;
    for e in 0..scratch.num_elements() {
        let se = s(e);
        if se == 0.0 {
            continue;
        }
        let (_, inv) = scratch.checked_f(e, q)?;
        let (mu, lambda) = scratch.lame[e];
        let df = element_direction(scratch, e, dx);
        let dp = pk1_differential(&inv, &df, mu, lambda);
        scatter_stress(scratch, e, &dp, -scratch.rest_volume[e] * se, out);
    }
    Ok(())
}

/// `K(q) = −∂f_e/∂q` as triplets.
pub fn stiffness_triplets(scratch: &ElasticScratch, q: &[f64]) -> Result<Triplets, ElasticError> {
    let n = q.len();
    let mut t = Triplets::new(n, n);
    add_stiffness_triplets(scratch, q, |_| 1.0, &mut t)?;
    Ok(t)
}

/// Adds `s(e) · K_e(q)` for every element into `t`.
pub fn add_stiffness_triplets(
    scratch: &ElasticScratch,
    q: &[f64],
    s: impl Fn(usize) -> f64,
    t: &mut Triplets,
) -> Result<(), ElasticError> {
    for e in 0..scratch.num_elements() {
        let se = s(e);
        if se == 0.0 {
            continue;
        }
        let (_, inv) = scratch.checked_f(e, q)?;
        let (mu, lambda) = scratch.lame[e];
        let betas = scratch.shape_gradients(e);
        let vol = scratch.rest_volume[e];
        let tet = scratch.tets[e];
        for (b, &vb) in tet.iter().enumerate() {
            for k in 0..3 {
                let mut df = [[0.0; 3]; 3];
                df[k] = betas[b];
                let dp = pk1_differential(&inv, &df, mu, lambda);
                for (a, &va) in tet.iter().enumerate() {
                    let g = linalg::mat_vec(&dp, betas[a]);
                    for i in 0..3 {
                        t.push(3 * va + i, 3 * vb + k, se * vol * g[i]);
                    }
                }
            }
        }
    }
    Ok(())
}

pub fn stiffness_matrix(scratch: &ElasticScratch, q: &[f64]) -> Result<linalg::CsrMatrix, ElasticError> {
    Ok(stiffness_triplets(scratch, q)?.to_csr())
}

/// Adds the Rayleigh damping force `−(αM + βK(q)) v` into `out`.
pub fn add_damping_force<T: Real>(
    scratch: &ElasticScratch,
    mass: &[f64],
    alpha_per_dof: &[f64],
    q: &[T],
    v: &[T],
    out: &mut [T],
) -> Result<(), ElasticError> {
    for i in 0..out.len() {
        let a = alpha_per_dof[i];
        if a != 0.0 {
            out[i] -= v[i] * (a * mass[i]);
        }
    }
    add_stiffness_product(scratch, q, v, |e| scratch.rayleigh[e].1, out)
}

pub fn damping_force(
    scratch: &ElasticScratch,
    mass: &[f64],
    alpha_per_dof: &[f64],
    q: &[f64],
    v: &[f64],
) -> Result<Vec<f64>, ElasticError> {
    let mut out = vec![0.0; q.len()];
    add_damping_force(scratch, mass, alpha_per_dof, q, v, &mut out)?;
    Ok(out)
}

/// Per-dof mass-proportional coefficient: each vertex takes the mass-weighted
/// average α of its incident elements.
pub fn alpha_per_dof(mesh: &TetMeshModel) -> Vec<f64> {
    let n = mesh.num_vertices();
    let mut num = vec![0.0; n];
    let mut den = vec![0.0; n];
    for (e, t) in mesh.tets.iter().enumerate() {
        let mat = &mesh.element_material[e];
        let m = mat.density * mesh.rest_volume(e) / 4.0;
        for &i in t {
            num[i] += m * mat.rayleigh_alpha;
            den[i] += m;
        }
    }
    (0..n)
        .flat_map(|i| [if den[i] > 0.0 { num[i] / den[i] } else { 0.0 }; 3])
        .collect()
}

/// `∂/∂q [−β K(q) v]` as triplets: the position derivative of stiffness damping.
///
/// Evaluated element-locally with dual numbers, seeding one of the twelve
/// element coordinates at a time.
pub fn add_damping_position_triplets(
    scratch: &ElasticScratch,
    q: &[f64],
    v: &[f64],
    s: f64,
    t: &mut Triplets,
) -> Result<(), ElasticError> {
    for e in 0..scratch.num_elements() {
        let beta = scratch.rayleigh[e].1;
        if beta == 0.0 {
            continue;
        }
        let tet = scratch.tets[e];
        let (mu, lambda) = scratch.lame[e];
        let betas = scratch.shape_gradients(e);
        let vol = scratch.rest_volume[e];
        let mut dv = [[0.0; 3]; 3];
        for (a, &va) in tet.iter().enumerate() {
            for i in 0..3 {
                for j in 0..3 {
                    dv[i][j] += v[3 * va + i] * betas[a][j];
                }
            }
        }
        let dv_dual = dv.map(|r| r.map(Dual::constant));
        let xe: [[f64; 3]; 4] = tet.map(|i| [q[3 * i], q[3 * i + 1], q[3 * i + 2]]);
        for (b, &vb) in tet.iter().enumerate() {
            for k in 0..3 {
                let mut xd: [V3<Dual>; 4] = xe.map(|p| p.map(Dual::constant));
                xd[b][k].eps = 1.0;
                let dm_inv = scratch.dm_inv[e].map(|r| r.map(Dual::constant));
                let f = linalg::mat_mul(&shape_matrix(&xd), &dm_inv);
                let j = linalg::det(&f);
                if !(j.re > 0.0) {
                    return Err(ElasticError::Inverted { element: e, det: j.re });
                }
                let inv = ElementInverse { f_inv_t: linalg::transpose(&linalg::inverse(&f)), ln_j: j.ln() };
                let dp = pk1_differential(&inv, &dv_dual, mu, lambda);
                for (a, &va) in tet.iter().enumerate() {
                    let g = linalg::mat_vec(&dp, linalg::v3(betas[a]));
                    for i in 0..3 {
                        t.push(3 * va + i, 3 * vb + k, -s * beta * vol * g[i].eps);
                    }
                }
            }
        }
    }
    Ok(())
}
