//! Unpreconditioned BiCGSTAB for non-symmetric systems.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::linalg::{axpy, dot_n, norm2};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KrylovError<E> {
    #[error("operator evaluation failed: {0}")]
    Operator(E),
    #[error("BiCGSTAB broke down twice (relative residual {0:e})")]
    Breakdown(f64),
}

/// Outcome of a BiCGSTAB run; `converged` is false when the iteration limit
/// was hit before reaching the tolerance.
#[derive(Clone, Debug, PartialEq)]
pub struct KrylovResult {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub relative_residual: f64,
    pub converged: bool,
}

/// Solves `J x = b` to `‖b − J x‖ ≤ tol ‖b‖` starting from `x = 0`.
///
/// On a breakdown the iteration restarts once from the current iterate with a
/// perturbed shadow residual drawn from a fixed-seed generator.
pub fn bicgstab<E, F>(mut apply: F, b: &[f64], tol: f64, max_iters: usize) -> Result<KrylovResult, KrylovError<E>>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>, E>,
{
    let n = b.len();
    let b_norm = norm2(b);
    let mut x = vec![0.0; n];
    if b_norm == 0.0 {
        return Ok(KrylovResult { x, iterations: 0, relative_residual: 0.0, converged: true });
    }
    let target = tol * b_norm;
    let mut r = b.to_vec();
    let mut r_hat = r.clone();
    let mut restarted = false;
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut iterations = 0;

    'outer: loop {
        let mut rho_old = 1.0;
        let mut alpha = 1.0;
        let mut omega = 1.0;
        let mut v = vec![0.0; n];
        let mut p = vec![0.0; n];
        let tiny = f64::EPSILON * f64::EPSILON;
        while iterations < max_iters {
            iterations += 1;
            let rho = dot_n(&r_hat, &r);
            if rho.abs() <= tiny * norm2(&r_hat) * norm2(&r) || omega == 0.0 {
                if restarted {
                    return Err(KrylovError::Breakdown(norm2(&r) / b_norm));
                }
                restarted = true;
                r_hat = r.iter().map(|&ri| ri * (1.0 + 0.5 * rng.random_range(-1.0..1.0))).collect();
                continue 'outer;
            }
            let beta = (rho / rho_old) * (alpha / omega);
            for i in 0..n {
                p[i] = r[i] + beta * (p[i] - omega * v[i]);
            }
            v = apply(&p).map_err(KrylovError::Operator)?;
            let denom = dot_n(&r_hat, &v);
            if denom == 0.0 || !denom.is_finite() {
                if restarted {
                    return Err(KrylovError::Breakdown(norm2(&r) / b_norm));
                }
                restarted = true;
                r_hat = r.iter().map(|&ri| ri * (1.0 + 0.5 * rng.random_range(-1.0..1.0))).collect();
                continue 'outer;
            }
            alpha = rho / denom;
            let mut s = r.clone();
            axpy(-alpha, &v, &mut s);
            if norm2(&s) <= target {
                axpy(alpha, &p, &mut x);
                return Ok(KrylovResult { x, iterations, relative_residual: norm2(&s) / b_norm, converged: true });
            }
            let t = apply(&s).map_err(KrylovError::Operator)?;
            let tt = dot_n(&t, &t);
            omega = if tt > 0.0 { dot_n(&t, &s) / tt } else { 0.0 };
            axpy(alpha, &p, &mut x);
            axpy(omega, &s, &mut x);
            r = s;
            axpy(-omega, &t, &mut r);
            rho_old = rho;
            let rel = norm2(&r) / b_norm;
            if rel <= tol {
                return Ok(KrylovResult { x, iterations, relative_residual: rel, converged: true });
            }
        }
        let rel = norm2(&r) / b_norm;
        return Ok(KrylovResult { x, iterations, relative_residual: rel, converged: false });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{sparse_lu_solve, Triplets};

    fn dense_apply(a: &[Vec<f64>]) -> impl FnMut(&[f64]) -> Result<Vec<f64>, ()> + '_ {
        move |x: &[f64]| Ok(a.iter().map(|row| dot_n(row, x)).collect())
    }

    #[test]
    fn identity_in_one_iteration() {
        let b = vec![1.0, -2.0, 3.0];
        let out = bicgstab(|x: &[f64]| Ok::<_, ()>(x.to_vec()), &b, 1e-12, 10).unwrap();
        assert_eq!(out.iterations, 1);
        assert_eq!(out.x, b);
    }

    #[test]
    fn small_nonsymmetric_system() {
        let a = vec![vec![2.0, 1.0], vec![0.0, 3.0]];
        let out = bicgstab(dense_apply(&a), &[1.0, 1.0], 1e-14, 10).unwrap();
        assert!((out.x[0] - 1.0 / 3.0).abs() < 1e-13);
        assert!((out.x[1] - 1.0 / 3.0).abs() < 1e-13);
    }

    #[test]
    fn random_diagonally_dominant_matches_direct() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 50;
        let mut a = vec![vec![0.0; n]; n];
        let mut t = Triplets::new(n, n);
        for i in 0..n {
            for j in 0..n {
                let v = if i == j { 30.0 + rng.random::<f64>() } else { rng.random_range(-0.5..0.5) };
                a[i][j] = v;
                t.push(i, j, v);
            }
        }
        let b: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let tol = 1e-10;
        let out = bicgstab(dense_apply(&a), &b, tol, 200).unwrap();
        assert!(out.converged);
        let ax: Vec<f64> = a.iter().map(|row| dot_n(row, &out.x)).collect();
        let res: Vec<f64> = ax.iter().zip(&b).map(|(p, q)| p - q).collect();
        assert!(norm2(&res) <= tol * norm2(&b) * 1.0001);
        let direct = sparse_lu_solve(&t.to_csr(), &b).unwrap();
        for (x, y) in out.x.iter().zip(&direct) {
            assert!((x - y).abs() < 1e-8);
        }
    }
}
