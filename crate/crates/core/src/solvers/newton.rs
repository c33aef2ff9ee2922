//! Exact (sparse LU) and inexact (BiCGSTAB) damped Newton iterations.

use super::{bicgstab, should_stop, LinearSolverKind, NonlinearSystem, SolveReport, SolveStatus, SolverConfig};
use crate::linalg::{norm2, norm_inf, sparse_lu_solve};

/// Dispatches on `cfg.kind`.
pub fn solve<S: NonlinearSystem>(
    sys: &S,
    v0: &[f64],
    cfg: &SolverConfig,
) -> Result<(Vec<f64>, SolveReport), S::Error> {
    match cfg.kind {
        LinearSolverKind::Direct => damped_newton(sys, v0, cfg),
        LinearSolverKind::Iterative => inexact_damped_newton(sys, v0, cfg),
    }
}

/// Newton with a direct sparse factorization of the assembled Jacobian and
/// residual-norm backtracking (forcing term zero).
pub fn damped_newton<S: NonlinearSystem>(
    sys: &S,
    v0: &[f64],
    cfg: &SolverConfig,
) -> Result<(Vec<f64>, SolveReport), S::Error> {
    run(sys, v0, cfg, LinearSolverKind::Direct)
}

/// Newton with BiCGSTAB on dual-number Jacobian-vector products and the
/// adaptive forcing term `σ_k = min((‖r_k‖/‖r_{k−1}‖)^φ, σ)`.
pub fn inexact_damped_newton<S: NonlinearSystem>(
    sys: &S,
    v0: &[f64],
    cfg: &SolverConfig,
) -> Result<(Vec<f64>, SolveReport), S::Error> {
    run(sys, v0, cfg, LinearSolverKind::Iterative)
}

struct Accepted {
    alpha: f64,
    v: Vec<f64>,
    r: Vec<f64>,
    norm: f64,
}

fn line_search<S: NonlinearSystem>(
    sys: &S,
    v: &[f64],
    p: &[f64],
    r_norm: f64,
    sigma: f64,
    cfg: &SolverConfig,
) -> Option<Accepted> {
    let mut alpha = 1.0;
    while alpha >= cfg.min_alpha {
        let trial: Vec<f64> = v.iter().zip(p).map(|(a, b)| a + alpha * b).collect();
        // Evaluation failures (for example inverted elements) reject the trial point.
        if let Ok(r) = sys.residual(&trial) {
            let norm = norm2(&r);
            if norm.is_finite() && norm <= (1.0 - cfg.c1 * alpha * (1.0 - sigma)) * r_norm {
                return Some(Accepted { alpha, v: trial, r, norm });
            }
        }
        alpha *= cfg.rho;
    }
    None
}

fn run<S: NonlinearSystem>(
    sys: &S,
    v0: &[f64],
    cfg: &SolverConfig,
    kind: LinearSolverKind,
) -> Result<(Vec<f64>, SolveReport), S::Error> {
    let mut v = v0.to_vec();
    let mut r = sys.residual(&v)?;
    let mut r_norm = norm2(&r);
    let r0_inf = norm_inf(&r);
    let mut report = SolveReport::new(r_norm, r0_inf, cfg);
    if should_stop(r0_inf, r0_inf, None, cfg) {
        report.status = SolveStatus::Converged;
        return Ok((v, report));
    }
    let mut prev_norm: Option<f64> = None;
    for _ in 0..cfg.max_iterations {
        let neg_r: Vec<f64> = r.iter().map(|x| -x).collect();
        let (direction, sigma, lin_iters) = match kind {
            LinearSolverKind::Direct => {
                let jac = match sys.jacobian(&v) {
                    Ok(j) => j,
                    Err(e) => {
                        report.status = SolveStatus::LinearSolveFailed;
                        report.message = Some(format!("Jacobian assembly failed: {e}"));
                        return Ok((v, report));
                    }
                };
                match sparse_lu_solve(&jac.sparse, &neg_r) {
                    Ok(p) => (Some(p), 0.0, 1),
                    Err(e) => {
                        report.status = SolveStatus::LinearSolveFailed;
                        report.message = Some(format!("{e}; try reducing the time step"));
                        return Ok((v, report));
                    }
                }
            }
            LinearSolverKind::Iterative => {
                let sigma = match prev_norm {
                    Some(prev) => (r_norm / prev).powf(cfg.phi).min(cfg.sigma),
                    None => cfg.sigma,
                };
                let vk = v.clone();
                match bicgstab(|x| sys.jvp(&vk, x), &neg_r, sigma, cfg.max_krylov_iterations) {
                    Ok(k) if k.converged => (Some(k.x), sigma, k.iterations),
                    Ok(k) => (None, sigma, k.iterations),
                    Err(_) => (None, sigma, cfg.max_krylov_iterations),
                }
            }
        };
        let accepted = match direction {
            Some(p) => line_search(sys, &v, &p, r_norm, sigma, cfg).map(|a| (a, p)),
            None => {
                report.fallbacks += 1;
                match line_search(sys, &v, &neg_r, r_norm, sigma, cfg) {
                    Some(a) => Some((a, neg_r)),
                    None => {
                        report.status = SolveStatus::LinearSolveFailed;
                        report.message =
                            Some("Krylov solve stagnated and the fallback direction made no progress".into());
                        return Ok((v, report));
                    }
                }
            }
        };
        let Some((acc, p)) = accepted else {
            report.status = SolveStatus::LineSearchFailed;
            report.message = Some(format!("step length fell below {:e}", cfg.min_alpha));
            return Ok((v, report));
        };
        debug_assert!(acc.norm <= (1.0 - cfg.c1 * acc.alpha * (1.0 - sigma)) * r_norm);
        let dv_inf = acc.alpha * norm_inf(&p);
        report.iterations += 1;
        report.alphas.push(acc.alpha);
        report.forcing_terms.push(sigma);
        report.post_forcing.push(1.0 - acc.alpha * (1.0 - sigma));
        report.linear_iterations.push(lin_iters);
        report.residual_norms.push(acc.norm);
        prev_norm = Some(r_norm);
        r_norm = acc.norm;
        v = acc.v;
        r = acc.r;
        report.final_residual_inf = norm_inf(&r);
        if should_stop(report.final_residual_inf, r0_inf, Some(dv_inf), cfg) {
            report.status = SolveStatus::Converged;
            return Ok((v, report));
        }
    }
    report.status = SolveStatus::MaxIters;
    Ok((v, report))
}

#[cfg(test)]
mod tests {
    use super::super::AssembledJacobian;
    use super::*;
    use crate::linalg::{CsrMatrix, Triplets};

    #[derive(Debug, Clone, thiserror::Error)]
    #[error("never")]
    struct Never;

    struct Linear {
        a: CsrMatrix,
        b: Vec<f64>,
    }

    impl NonlinearSystem for Linear {
        type Error = Never;
        fn dim(&self) -> usize {
            self.b.len()
        }
        fn residual(&self, v: &[f64]) -> Result<Vec<f64>, Never> {
            Ok(self.a.mul_vec(v).iter().zip(&self.b).map(|(x, y)| x - y).collect())
        }
        fn jvp(&self, _v: &[f64], p: &[f64]) -> Result<Vec<f64>, Never> {
            Ok(self.a.mul_vec(p))
        }
        fn jacobian(&self, _v: &[f64]) -> Result<AssembledJacobian, Never> {
            Ok(AssembledJacobian { sparse: self.a.clone(), low_rank: vec![] })
        }
    }

    /// `r_i(v) = v_i³ + 2 v_i + c·v_{i+1} − b_i`.
    struct Cubic {
        b: Vec<f64>,
    }

    impl NonlinearSystem for Cubic {
        type Error = Never;
        fn dim(&self) -> usize {
            self.b.len()
        }
        fn residual(&self, v: &[f64]) -> Result<Vec<f64>, Never> {
            let n = v.len();
            Ok((0..n).map(|i| v[i].powi(3) + 2.0 * v[i] + 0.5 * v[(i + 1) % n] - self.b[i]).collect())
        }
        fn jvp(&self, v: &[f64], p: &[f64]) -> Result<Vec<f64>, Never> {
            let n = v.len();
            Ok((0..n).map(|i| (3.0 * v[i] * v[i] + 2.0) * p[i] + 0.5 * p[(i + 1) % n]).collect())
        }
        fn jacobian(&self, v: &[f64]) -> Result<AssembledJacobian, Never> {
            let n = v.len();
            let mut t = Triplets::new(n, n);
            for i in 0..n {
                t.push(i, i, 3.0 * v[i] * v[i] + 2.0);
                t.push(i, (i + 1) % n, 0.5);
            }
            Ok(AssembledJacobian { sparse: t.to_csr(), low_rank: vec![] })
        }
    }

    fn spd() -> Linear {
        let mut t = Triplets::new(3, 3);
        for (i, j, v) in [(0, 0, 4.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, 3.0), (2, 2, 2.0), (1, 2, 0.5), (2, 1, 0.5)] {
            t.push(i, j, v);
        }
        Linear { a: t.to_csr(), b: vec![1.0, 2.0, 3.0] }
    }

    fn tight() -> SolverConfig {
        SolverConfig { r_tol_abs: 1e-12, r_tol_rel: 1e-14, v_tol: 1e-300, ..Default::default() }
    }

    #[test]
    fn direct_newton_solves_linear_in_one_step() {
        let sys = spd();
        let (v, rep) = damped_newton(&sys, &[0.0; 3], &tight()).unwrap();
        assert_eq!(rep.iterations, 1);
        assert_eq!(rep.alphas, vec![1.0]);
        assert!(rep.converged());
        assert!(norm_inf(&sys.residual(&v).unwrap()) < 1e-12);
    }

    #[test]
    fn root_start_needs_no_iterations() {
        let sys = Linear { a: CsrMatrix::identity(2), b: vec![1.0, 2.0] };
        let (_, rep) = damped_newton(&sys, &[1.0, 2.0], &tight()).unwrap();
        assert_eq!(rep.iterations, 0);
        assert!(rep.converged());
    }

    #[test]
    fn inexact_linear_first_forcing_term() {
        let sys = spd();
        let cfg = SolverConfig { r_tol_rel: 0.02, ..tight() };
        let (_, rep) = inexact_damped_newton(&sys, &[0.0; 3], &cfg).unwrap();
        assert_eq!(rep.forcing_terms[0], 0.01);
        assert_eq!(rep.iterations, 1);
        assert!(rep.residual_norms[1] <= 0.01 * rep.residual_norms[0]);
    }

    #[test]
    fn inexact_forcing_terms_follow_residual_ratio() {
        let sys = Cubic { b: (0..20).map(|i| 3.0 + (i as f64).sin() * 5.0).collect() };
        let cfg = tight();
        let (v, rep) = inexact_damped_newton(&sys, &[0.0; 20], &cfg).unwrap();
        assert!(rep.converged(), "{rep:?}");
        for k in 1..rep.forcing_terms.len() {
            let want = (rep.residual_norms[k] / rep.residual_norms[k - 1]).powf(cfg.phi).min(cfg.sigma);
            assert_eq!(rep.forcing_terms[k], want);
        }
        for k in 0..rep.iterations {
            let bound = (1.0 - cfg.c1 * rep.alphas[k] * (1.0 - rep.forcing_terms[k])) * rep.residual_norms[k];
            assert!(rep.residual_norms[k + 1] <= bound);
        }
        let (vd, _) = damped_newton(&sys, &[0.0; 20], &cfg).unwrap();
        for (a, b) in v.iter().zip(&vd) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn superlinear_tail() {
        let sys = Cubic { b: (0..10).map(|i| 20.0 + i as f64).collect() };
        let (_, rep) = inexact_damped_newton(&sys, &[0.0; 10], &tight()).unwrap();
        let r = &rep.residual_norms;
        let n = r.len();
        assert!(n >= 5, "{r:?}");
        let q: Vec<f64> = (n - 4..n - 1).map(|k| r[k + 1] / r[k]).collect();
        assert!(q[1] < q[0] && q[2] < q[1], "{q:?}");
    }
}
