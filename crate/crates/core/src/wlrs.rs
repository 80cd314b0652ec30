//! Weighted low-rank and sparse decomposition.
//!
//! Solves
//!
//! ```text
//! min_{U,V,E} ||W o E||_1 + lambda ||V||_*   s.t.  X^ = U V + E,  U^T U = I_r
//! ```
//!
//! with an inexact augmented Lagrangian. Each outer iteration runs
//! Gauss-Seidel sweeps over `U` (orthogonal Procrustes), `V` (singular value
//! shrinkage) and `E` (entry-wise shrinkage with threshold `W / mu`; exact
//! residual on unobserved entries), then updates the multiplier
//! `L += mu (X^ - E - U V)` and grows `mu` geometrically.

use alloc::boxed::Box;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::graph::BlockMotionMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct WlrsConfig {
    /// Rank of the factorization.
    pub rank: usize,
    /// Nuclear-norm weight; `None` uses `1 / sqrt(4N)`.
    pub lambda_nuclear: Option<f64>,
    pub rho: f64,
    /// Initial penalty; `None` uses `1 / ||X^||_2`.
    pub mu_init: Option<f64>,
    pub mu_cap: f64,
    /// Relative change of `(U, V, E)` ending an inner loop.
    pub inner_tol: f64,
    /// Relative constraint residual `||X^ - UV - E|| / ||X^||` ending the run.
    pub outer_tol: f64,
    pub max_inner: usize,
    pub max_outer: usize,
}

impl Default for WlrsConfig {
    fn default() -> Self {
        Self {
            rank: 4,
            lambda_nuclear: None,
            rho: 1.05,
            mu_init: None,
            mu_cap: 1e20,
            inner_tol: 1e-6,
            outer_tol: 1e-7,
            max_inner: 100,
            max_outer: 500,
        }
    }
}

impl WlrsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return Err(Error::InvalidConfig("rank must be at least 1"));
        }
        if !(self.rho > 1.0) {
            return Err(Error::InvalidConfig("rho must exceed 1"));
        }
        if let Some(mu) = self.mu_init {
            if !(mu > 0.0) {
                return Err(Error::InvalidConfig("mu_init must be positive"));
            }
        }
        if let Some(l) = self.lambda_nuclear {
            if !(l >= 0.0) {
                return Err(Error::InvalidConfig("lambda_nuclear must be non-negative"));
            }
        }
        if self.max_outer == 0 || self.max_inner == 0 {
            return Err(Error::InvalidConfig("iteration caps must be positive"));
        }
        Ok(())
    }
}

/// Per outer iteration diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OuterDiagnostics {
    pub iteration: usize,
    /// Penalty used during this iteration.
    pub mu: f64,
    /// `||X^ - UV - E||_F` before the multiplier update.
    pub residual: f64,
    /// Entries of `E` with magnitude above `1e-6`.
    pub nnz_e: usize,
    pub inner_iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecompositionResult {
    pub u: DMatrix<f64>,
    pub v: DMatrix<f64>,
    pub e: DMatrix<f64>,
    pub lagrange: DMatrix<f64>,
    pub residual_history: Vec<f64>,
    pub diagnostics: Vec<OuterDiagnostics>,
    /// Largest `||U^T U - I||_F` seen after any `U` update.
    pub max_orthogonality_error: f64,
    pub converged: bool,
}

impl DecompositionResult {
    pub fn low_rank(&self) -> DMatrix<f64> {
        &self.u * &self.v
    }

    /// `(sum |W o E|, nuclear norm of V)`.
    pub fn objective_terms(&self, w: &DMatrix<f64>) -> (f64, f64) {
        let l1 = w.component_mul(&self.e).abs().sum();
        let nuclear = self.v.clone().svd(false, false).singular_values.sum();
        (l1, nuclear)
    }
}

/// `max(|q| - eps, 0) sgn(q)`.
pub fn soft_threshold(q: f64, eps: f64) -> f64 {
    if q > eps {
        q - eps
    } else if q < -eps {
        q + eps
    } else {
        0.0
    }
}

fn shifted_target(
    x_hat: &DMatrix<f64>,
    e: &DMatrix<f64>,
    l: &DMatrix<f64>,
    mu: f64,
) -> DMatrix<f64> {
    let inv_mu = 1.0 / mu;
    let mut y = x_hat - e;
    y.zip_apply(l, |a, b| *a += b * inv_mu);
    y
}

/// Orthogonal Procrustes step: `U = U_1 V_1^T` from the SVD of
/// `(X^ - E + L / mu) V^T`.
pub fn update_u(
    x_hat: &DMatrix<f64>,
    e: &DMatrix<f64>,
    l: &DMatrix<f64>,
    mu: f64,
    v: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    procrustes(&shifted_target(x_hat, e, l, mu), v)
}

fn procrustes(y: &DMatrix<f64>, v: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let r = v.nrows();
    let p = y * v.transpose();
    let svd = p.svd(true, true);
    let s = &svd.singular_values;
    let smax = s.max();
    let rank = if smax > 0.0 {
        s.iter().filter(|&&x| x > 1e-12 * smax).count()
    } else {
        0
    };
    if rank < r {
        return Err(Error::RankDeficient { rank, expected: r });
    }
    let u1 = svd.u.expect("left singular vectors requested");
    let v1t = svd.v_t.expect("right singular vectors requested");
    Ok(u1 * v1t)
}

/// Nuclear-norm proximal step: SVD of `U^T (X^ - E + L / mu)` with singular
/// values shrunk by `lambda / mu`.
pub fn update_v(
    x_hat: &DMatrix<f64>,
    e: &DMatrix<f64>,
    l: &DMatrix<f64>,
    mu: f64,
    u: &DMatrix<f64>,
    lambda_nuclear: f64,
) -> DMatrix<f64> {
    shrink_singular_values(
        &(u.transpose() * shifted_target(x_hat, e, l, mu)),
        lambda_nuclear / mu,
    )
}

/// `U_2 S_eps[S_2] V_2^T` for the SVD `z = U_2 S_2 V_2^T`.
pub fn shrink_singular_values(z: &DMatrix<f64>, eps: f64) -> DMatrix<f64> {
    let svd = z.clone().svd(true, true);
    let shrunk = DVector::from_iterator(
        svd.singular_values.len(),
        svd.singular_values.iter().map(|&s| soft_threshold(s, eps)),
    );
    let u2 = svd.u.expect("left singular vectors requested");
    let v2t = svd.v_t.expect("right singular vectors requested");
    u2 * DMatrix::from_diagonal(&shrunk) * v2t
}

/// Error update. On observed entries (`omega = 1`) the residual
/// `X^ - UV + L / mu` is soft-thresholded by `w / mu`; unobserved entries
/// take the residual unchanged.
pub fn update_e(
    x_hat: &DMatrix<f64>,
    u: &DMatrix<f64>,
    v: &DMatrix<f64>,
    l: &DMatrix<f64>,
    mu: f64,
    w: &DMatrix<f64>,
    omega: &DMatrix<f64>,
) -> DMatrix<f64> {
    shrink_errors(x_hat - u * v, l, mu, w, omega)
}

fn shrink_errors(
    mut residual: DMatrix<f64>,
    l: &DMatrix<f64>,
    mu: f64,
    w: &DMatrix<f64>,
    omega: &DMatrix<f64>,
) -> DMatrix<f64> {
    let inv_mu = 1.0 / mu;
    for (k, r) in residual.iter_mut().enumerate() {
        let q = *r + l[k] * inv_mu;
        *r = if omega[k] > 0.0 {
            soft_threshold(q, w[k] * inv_mu)
        } else {
            q
        };
    }
    residual
}

fn nnz(e: &DMatrix<f64>) -> usize {
    e.iter().filter(|x| x.abs() > 1e-6).count()
}

fn orthogonality_error(u: &DMatrix<f64>) -> f64 {
    (u.transpose() * u - DMatrix::identity(u.ncols(), u.ncols())).norm()
}

/// Runs the augmented Lagrangian scheme on a block motion matrix.
///
/// Returns [`Error::NotConverged`] carrying the last iterate when
/// `max_outer` is exhausted before the relative residual drops below
/// `outer_tol`.
pub fn decompose(m: &BlockMotionMatrix, cfg: &WlrsConfig) -> Result<DecompositionResult> {
    decompose_matrix(m.x_hat(), m.weights(), m.omega(), cfg)
}

/// [`decompose`] on raw matrices. `omega` must equal `ceil(w)`.
pub fn decompose_matrix(
    x_hat: &DMatrix<f64>,
    w: &DMatrix<f64>,
    omega: &DMatrix<f64>,
    cfg: &WlrsConfig,
) -> Result<DecompositionResult> {
    cfg.validate()?;
    let (rows, cols) = x_hat.shape();
    if w.shape() != (rows, cols) || omega.shape() != (rows, cols) {
        return Err(Error::Dimension(
            "weight and mask must match the motion matrix",
        ));
    }
    if cfg.rank > rows.min(cols) {
        return Err(Error::Dimension("rank exceeds matrix size"));
    }
    let x_norm = x_hat.norm();
    if x_norm == 0.0 {
        return Err(Error::RankDeficient {
            rank: 0,
            expected: cfg.rank,
        });
    }

    let svd = x_hat.clone().svd(true, false);
    let spectral = svd.singular_values.max();
    let lambda = cfg.lambda_nuclear.unwrap_or(1.0 / libm::sqrt(rows as f64));
    let mut mu = cfg.mu_init.unwrap_or(1.0 / spectral);

    let mut u = svd
        .u
        .expect("left singular vectors requested")
        .columns(0, cfg.rank)
        .into_owned();
    let mut v = u.transpose() * x_hat;
    let mut e = DMatrix::zeros(rows, cols);
    let mut l = DMatrix::zeros(rows, cols);

    let mut result = DecompositionResult {
        u: u.clone(),
        v: v.clone(),
        e: e.clone(),
        lagrange: l.clone(),
        residual_history: Vec::new(),
        diagnostics: Vec::new(),
        max_orthogonality_error: orthogonality_error(&u),
        converged: false,
    };

    for outer in 1..=cfg.max_outer {
        let mut inner_iterations = 0;
        let mut uv = &u * &v;
        for _ in 0..cfg.max_inner {
            inner_iterations += 1;
            let y = shifted_target(x_hat, &e, &l, mu);
            let u_next = procrustes(&y, &v)?;
            result.max_orthogonality_error = result
                .max_orthogonality_error
                .max(orthogonality_error(&u_next));
            let v_next = shrink_singular_values(&(u_next.transpose() * &y), lambda / mu);
            uv = &u_next * &v_next;
            let e_next = shrink_errors(x_hat - &uv, &l, mu, w, omega);

            let change = libm::sqrt(
                (&u_next - &u).norm_squared()
                    + (&v_next - &v).norm_squared()
                    + (&e_next - &e).norm_squared(),
            );
            let scale =
                libm::sqrt(u_next.norm_squared() + v_next.norm_squared() + e_next.norm_squared());
            u = u_next;
            v = v_next;
            e = e_next;
            if change <= cfg.inner_tol * scale {
                break;
            }
        }

        let constraint = x_hat - &e - &uv;
        let residual = constraint.norm();
        l.zip_apply(&constraint, |a, c| *a += mu * c);
        result.residual_history.push(residual);
        result.diagnostics.push(OuterDiagnostics {
            iteration: outer,
            mu,
            residual,
            nnz_e: nnz(&e),
            inner_iterations,
        });
        mu = (cfg.rho * mu).min(cfg.mu_cap);
        if residual <= cfg.outer_tol * x_norm {
            result.converged = true;
            break;
        }
    }

    result.u = u;
    result.v = v;
    result.e = e;
    result.lagrange = l;
    if result.converged {
        Ok(result)
    } else {
        Err(Error::NotConverged {
            iterations: result.residual_history.len(),
            partial: Box::new(result),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{exact_matrix, BlockMotionMatrix, Observation};
    use crate::se3::RigidMotion;
    use alloc::vec;
    use nalgebra::Vector3;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    fn random_orthonormal(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
        random_matrix(rng, r, c).qr().q()
    }

    fn random_motions(seed: u64, n: usize) -> Vec<RigidMotion> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v = || {
            Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            )
        };
        let mut m: Vec<RigidMotion> = (0..n)
            .map(|_| RigidMotion::from_axis_angle(v() * 1.5, v() * 2.0))
            .collect();
        m[0] = RigidMotion::identity();
        m
    }

    fn full_observations(gt: &[RigidMotion]) -> Vec<Observation> {
        let n = gt.len();
        (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .filter(|(i, j)| i != j)
            .map(|(i, j)| Observation {
                i,
                j,
                motion: gt[i].invert() * gt[j],
                weight: 1.0,
            })
            .collect()
    }

    fn run(m: &BlockMotionMatrix, cfg: &WlrsConfig) -> DecompositionResult {
        match decompose(m, cfg) {
            Ok(r) => r,
            Err(Error::NotConverged { partial, .. }) => *partial,
            Err(e) => panic!("decomposition failed: {e}"),
        }
    }

    fn block(m: &DMatrix<f64>, i: usize, j: usize) -> DMatrix<f64> {
        m.view((4 * i, 4 * j), (4, 4)).into_owned()
    }

    #[test]
    fn soft_threshold_examples() {
        assert_eq!(soft_threshold(0.5, 1.0), 0.0);
        assert_eq!(soft_threshold(2.0, 0.5), 1.5);
        assert_eq!(soft_threshold(-2.0, 0.5), -1.5);
        assert_eq!(soft_threshold(3.0, 0.0), 3.0);
    }

    #[test]
    fn update_u_recovers_column_space() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let u0 = random_orthonormal(&mut rng, 16, 4);
        let x_hat = &u0 * random_matrix(&mut rng, 4, 16);
        let zero = DMatrix::zeros(16, 16);
        let v = random_matrix(&mut rng, 4, 16);
        let u = update_u(&x_hat, &zero, &zero, 1.0, &v).unwrap();
        // sines of the principal angles are the singular values of (I - U0 U0^T) U
        let off = (DMatrix::identity(16, 16) - &u0 * u0.transpose()) * &u;
        assert!(off.norm() < 1e-8);
        assert!((u.transpose() * &u - DMatrix::identity(4, 4)).norm() < 1e-12);
    }

    #[test]
    fn update_u_block_identity() {
        let r = 4;
        let mut v = DMatrix::zeros(r, 10);
        v.view_mut((0, 0), (r, r)).fill_with_identity();
        let mut x_hat = DMatrix::zeros(10, 10);
        x_hat.view_mut((0, 0), (r, r)).fill_with_identity();
        let zero = DMatrix::zeros(10, 10);
        let u = update_u(&x_hat, &zero, &zero, 1.0, &v).unwrap();
        let mut expected = DMatrix::zeros(10, r);
        expected.view_mut((0, 0), (r, r)).fill_with_identity();
        assert!((u - expected).norm() < 1e-14);
    }

    #[test]
    fn update_u_rejects_rank_deficient_v() {
        let zero = DMatrix::zeros(8, 8);
        let x = DMatrix::identity(8, 8);
        let mut v = DMatrix::zeros(4, 8);
        v[(0, 0)] = 1.0;
        assert!(matches!(
            update_u(&x, &zero, &zero, 1.0, &v),
            Err(Error::RankDeficient {
                rank: 1,
                expected: 4
            })
        ));
    }

    #[test]
    fn update_v_full_and_no_shrink() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_matrix(&mut rng, 8, 8);
        let zero = DMatrix::zeros(8, 8);
        let u = random_orthonormal(&mut rng, 8, 4);
        let big = update_v(&x, &zero, &zero, 1.0, &u, 1e3);
        assert_eq!(big.norm(), 0.0);
        let none = update_v(&x, &zero, &zero, 1.0, &u, 0.0);
        assert!((none - u.transpose() * &x).norm() < 1e-13);
    }

    #[test]
    fn update_v_shrinks_known_spectrum() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_orthonormal(&mut rng, 4, 2);
        let b = random_orthonormal(&mut rng, 6, 2);
        let z = &a * DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 1.0])) * b.transpose();
        let out = shrink_singular_values(&z, 0.5);
        let s = out.clone().svd(false, false).singular_values;
        assert!((s[0] - 2.5).abs() < 1e-12);
        assert!((s[1] - 0.5).abs() < 1e-12);
        assert!(s.iter().skip(2).all(|&x| x < 1e-12));
        // oracle: shrinkage applied along the known singular directions
        let expected =
            &a * DMatrix::from_diagonal(&DVector::from_vec(vec![2.5, 0.5])) * b.transpose();
        assert!((out - expected).norm() < 1e-12);
    }

    /// Nuclear-norm prox by a route that never takes an SVD: alternating
    /// ridge regressions on `V = A B^T`, using
    /// `||V||_* = min_{A B^T = V} (||A||^2 + ||B||^2) / 2`.
    fn prox_by_factored_als(z: &DMatrix<f64>, eps: f64, iters: usize) -> DMatrix<f64> {
        let k = z.ncols();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut b = random_matrix(&mut rng, z.ncols(), k);
        let mut a = DMatrix::zeros(z.nrows(), k);
        let ridge = DMatrix::identity(k, k) * eps;
        for _ in 0..iters {
            a = z * &b * (b.transpose() * &b + &ridge).try_inverse().unwrap();
            b = z.transpose() * &a * (a.transpose() * &a + &ridge).try_inverse().unwrap();
        }
        a * b.transpose()
    }

    #[test]
    fn update_v_matches_direct_proximal_minimization() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..10 {
            let z = random_matrix(&mut rng, 8, 8);
            let sv = z.clone().svd(false, false).singular_values;
            // keep eps away from every singular value so the oracle converges fast
            let mut eps = 0.5 * (sv[3] + sv[4]);
            if sv.iter().any(|s| (s - eps).abs() < 0.05) {
                eps = 0.5 * (sv[2] + sv[3]);
            }
            let zero = DMatrix::zeros(8, 8);
            let ours = update_v(&z, &zero, &zero, 1.0, &DMatrix::identity(8, 8), eps);
            let oracle = prox_by_factored_als(&z, eps, 20_000);
            assert!(
                (&ours - &oracle).norm() < 1e-8,
                "diff {}",
                (&ours - &oracle).norm()
            );
            // optimality certificate: G = (Z - V)/eps has spectral norm <= 1
            // and <G, V> = ||V||_*
            let g = (&z - &ours) / eps;
            let g_norm = g.clone().svd(false, false).singular_values.max();
            let nuclear = ours.clone().svd(false, false).singular_values.sum();
            assert!(g_norm <= 1.0 + 1e-10);
            assert!((g.dot(&ours) - nuclear).abs() < 1e-10);
        }
    }

    #[test]
    fn update_e_examples() {
        let x = DMatrix::from_element(1, 1, 0.5);
        let zero = DMatrix::zeros(1, 1);
        let u = DMatrix::zeros(1, 1);
        let mu = 2.0;
        let w = DMatrix::from_element(1, 1, mu);
        let ones = DMatrix::from_element(1, 1, 1.0);
        assert_eq!(update_e(&x, &u, &u, &zero, mu, &w, &ones)[(0, 0)], 0.0);
        let l = DMatrix::from_element(1, 1, 0.3);
        let e = update_e(&x, &u, &u, &l, mu, &zero, &zero);
        assert!((e[(0, 0)] - (0.5 + 0.3 / mu)).abs() < 1e-15);
    }

    // Minimizes w |e| + mu/2 (e - q)^2 by a two-level grid search.
    fn grid_prox(q: f64, w: f64, mu: f64) -> f64 {
        let f = |e: f64| w * e.abs() + 0.5 * mu * (e - q) * (e - q);
        let mut best = 0.0;
        let mut best_val = f(0.0);
        let span = q.abs() + 1.0;
        let coarse = 1e-3;
        let mut e = -span;
        while e <= span {
            if f(e) < best_val {
                best = e;
                best_val = f(e);
            }
            e += coarse;
        }
        let centre = best;
        let fine = 1e-7;
        let steps = (2.0 * coarse / fine) as i64;
        for k in -steps..=steps {
            let e = centre + k as f64 * fine;
            if f(e) < best_val {
                best = e;
                best_val = f(e);
            }
        }
        best
    }

    #[test]
    fn update_e_matches_grid_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_matrix(&mut rng, 8, 8);
        let u = random_matrix(&mut rng, 8, 4) * 0.5;
        let v = random_matrix(&mut rng, 4, 8) * 0.5;
        let l = random_matrix(&mut rng, 8, 8);
        let mu = 1.7;
        let w = DMatrix::from_fn(8, 8, |_, _| {
            if rng.random_bool(0.25) {
                0.0
            } else {
                rng.random_range(0.01..1.0)
            }
        });
        let omega = w.map(libm::ceil);
        let e = update_e(&x, &u, &v, &l, mu, &w, &omega);
        let q = &x - &u * &v + &l / mu;
        for k in 0..64 {
            let oracle = grid_prox(q[k], w[k], mu);
            assert!(
                (e[k] - oracle).abs() < 1e-6,
                "entry {k}: {} vs {oracle}",
                e[k]
            );
        }
    }

    #[test]
    fn exact_matrix_is_recovered() {
        for (seed, n) in [(10u64, 4usize), (11, 6)] {
            let gt = random_motions(seed, n);
            let m = BlockMotionMatrix::assemble(n, &full_observations(&gt)).unwrap();
            let r = decompose(&m, &WlrsConfig::default()).unwrap();
            let x = exact_matrix(&gt);
            assert!((r.low_rank() - &x).norm() / x.norm() < 1e-6);
            assert!(r.e.amax() < 1e-6);
            assert!(r.max_orthogonality_error < 1e-12);
            assert_eq!((r.u.ncols(), r.v.nrows()), (4, 4));
        }
    }

    #[test]
    fn masked_blocks_are_completed() {
        let n = 6;
        let gt = random_motions(12, n);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut obs = full_observations(&gt);
        // hide 30% of the off-diagonal blocks, keeping each hidden block's
        // transpose observed so the scan graph stays connected
        let mut hidden = Vec::new();
        let target = (0.3 * obs.len() as f64).round() as usize;
        while hidden.len() < target {
            let k = rng.random_range(0..obs.len());
            let (i, j) = (obs[k].i, obs[k].j);
            if hidden.contains(&(j, i)) || hidden.contains(&(i, j)) {
                continue;
            }
            hidden.push((i, j));
            obs.remove(k);
        }
        let m = BlockMotionMatrix::assemble(n, &obs).unwrap();
        let r = decompose(&m, &WlrsConfig::default()).unwrap();
        let x = exact_matrix(&gt);
        let uv = r.low_rank();
        for &(i, j) in &hidden {
            let rel = (block(&uv, i, j) - block(&x, i, j)).norm() / block(&x, i, j).norm();
            assert!(rel < 1e-4, "block ({i}, {j}) relative error {rel}");
        }
        // missing entries are absorbed exactly by E
        let gap = (m.x_hat() - &uv - &r.e).component_mul(&m.omega().map(|o| 1.0 - o));
        assert!(gap.norm() < 1e-8);
    }

    #[test]
    fn down_weighted_corruption_lands_in_e() {
        let n = 6;
        let gt = random_motions(13, n);
        let mut obs = full_observations(&gt);
        let bad = RigidMotion::from_axis_angle(
            Vector3::new(1.0, -2.0, 0.5),
            Vector3::new(0.3, 0.2, -1.0),
        );
        let k = obs.iter().position(|o| (o.i, o.j) == (1, 4)).unwrap();
        obs[k].motion = bad;
        obs[k].weight = 0.01;
        let m = BlockMotionMatrix::assemble(n, &obs).unwrap();
        let r = decompose(&m, &WlrsConfig::default()).unwrap();
        let x = exact_matrix(&gt);
        let uv = r.low_rank();
        assert!((block(&uv, 1, 4) - block(&x, 1, 4)).amax() < 1e-3);
        let corrupted = block(&r.e, 1, 4).norm();
        let injected = (bad.to_homogeneous() - x.fixed_view::<4, 4>(4, 16)).norm();
        assert!((corrupted - injected).abs() < 1e-3 * injected);
        assert!(r.e.norm() - corrupted < 1e-3);
    }

    #[test]
    fn residual_settles_monotonically() {
        let n = 8;
        let gt = random_motions(14, n);
        let mut obs = full_observations(&gt);
        obs.retain(|o| (o.i + o.j) % 3 != 0);
        let m = BlockMotionMatrix::assemble(n, &obs).unwrap().complete();
        let r = run(&m, &WlrsConfig::default());
        let h = &r.residual_history;
        let start = h.len() / 5;
        for w in h[start..].windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-9), "{} then {}", w[0], w[1]);
        }
        assert!(r.converged);
        assert!(*h.last().unwrap() <= 1e-7 * m.x_hat().norm());
    }

    #[test]
    fn exhausted_iterations_report_partial_result() {
        let gt = random_motions(15, 4);
        let m = BlockMotionMatrix::assemble(4, &full_observations(&gt)).unwrap();
        let cfg = WlrsConfig {
            max_outer: 1,
            outer_tol: 0.0,
            ..Default::default()
        };
        match decompose(&m, &cfg) {
            Err(Error::NotConverged {
                iterations,
                partial,
            }) => {
                assert_eq!(iterations, 1);
                assert_eq!(partial.residual_history.len(), 1);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn config_validation() {
        assert!(WlrsConfig::default().validate().is_ok());
        for cfg in [
            WlrsConfig {
                rank: 0,
                ..Default::default()
            },
            WlrsConfig {
                rho: 1.0,
                ..Default::default()
            },
            WlrsConfig {
                mu_init: Some(0.0),
                ..Default::default()
            },
            WlrsConfig {
                lambda_nuclear: Some(-1.0),
                ..Default::default()
            },
        ] {
            assert!(matches!(cfg.validate(), Err(Error::InvalidConfig(_))));
        }
    }

    /// Plain unweighted robust-PCA style ALM written from scratch: no shared
    /// helpers with the solver under test.
    fn reference_unweighted(
        x: &DMatrix<f64>,
        rank: usize,
        lambda: f64,
    ) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
        let (rows, cols) = x.shape();
        let svd = x.clone().svd(true, false);
        let mut mu = 1.0 / svd.singular_values.max();
        let mut u: DMatrix<f64> = svd.u.unwrap().columns(0, rank).into_owned();
        let mut v = u.transpose() * x;
        let mut e = DMatrix::<f64>::zeros(rows, cols);
        let mut l = DMatrix::<f64>::zeros(rows, cols);
        for _ in 0..500 {
            for _ in 0..100 {
                let y = x - &e + &l * (1.0 / mu);
                let p = (&y * v.transpose()).svd(true, true);
                let u_new = p.u.unwrap() * p.v_t.unwrap();
                let q = (u_new.transpose() * &y).svd(true, true);
                let s = q.singular_values.map(|s| (s - lambda / mu).max(0.0));
                let v_new = q.u.unwrap() * DMatrix::from_diagonal(&s) * q.v_t.unwrap();
                let t = x - &u_new * &v_new + &l * (1.0 / mu);
                let e_new = t.map(|t| t.signum() * (t.abs() - 1.0 / mu).max(0.0));
                let change = ((&u_new - &u).norm_squared()
                    + (&v_new - &v).norm_squared()
                    + (&e_new - &e).norm_squared())
                .sqrt();
                let scale =
                    (u_new.norm_squared() + v_new.norm_squared() + e_new.norm_squared()).sqrt();
                u = u_new;
                v = v_new;
                e = e_new;
                if change <= 1e-6 * scale {
                    break;
                }
            }
            let c = x - &e - &u * &v;
            l += &c * mu;
            mu = (1.05 * mu).min(1e20);
            if c.norm() <= 1e-7 * x.norm() {
                break;
            }
        }
        (u, v, e)
    }

    #[test]
    fn unit_weights_match_reference_unweighted_alm() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        for _ in 0..20 {
            let n = rng.random_range(2..5);
            let dim = 4 * n;
            // well-conditioned rank 4 plus a few gross errors
            let spectrum = DVector::from_fn(4, |_, _| rng.random_range(1.0..2.0));
            let mut x = random_orthonormal(&mut rng, dim, 4)
                * DMatrix::from_diagonal(&spectrum)
                * random_orthonormal(&mut rng, dim, 4).transpose();
            for _ in 0..3 {
                let (i, j) = (rng.random_range(0..dim), rng.random_range(0..dim));
                x[(i, j)] += rng.random_range(-1.5..1.5);
            }
            let ones = DMatrix::from_element(dim, dim, 1.0);
            let lambda = 1.0 / (dim as f64).sqrt();
            let r = match decompose_matrix(&x, &ones, &ones, &WlrsConfig::default()) {
                Ok(r) => r,
                Err(Error::NotConverged { partial, .. }) => *partial,
                Err(e) => panic!("{e}"),
            };
            let (_, rv, re) = reference_unweighted(&x, 4, lambda);
            let ours = {
                let (l1, nuc) = r.objective_terms(&ones);
                l1 + lambda * nuc
            };
            let theirs = re.abs().sum() + lambda * rv.svd(false, false).singular_values.sum();
            assert!(
                (ours - theirs).abs() <= 1e-6 * theirs.max(1.0),
                "{ours} vs {theirs}"
            );
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn soft_threshold_is_odd_and_nonexpansive(a in -10.0f64..10.0, b in -10.0f64..10.0, eps in 0.0f64..5.0) {
            prop_assert_eq!(soft_threshold(-a, eps), -soft_threshold(a, eps));
            prop_assert!((soft_threshold(a, eps) - soft_threshold(b, eps)).abs() <= (a - b).abs() + 1e-15);
        }

        #[test]
        fn update_u_is_orthonormal(seed in any::<u64>(), n in 1usize..5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let dim = 4 * n;
            let x = random_matrix(&mut rng, dim, dim);
            let e = random_matrix(&mut rng, dim, dim) * 0.1;
            let l = random_matrix(&mut rng, dim, dim);
            let v = random_matrix(&mut rng, 4, dim);
            let u = update_u(&x, &e, &l, rng.random_range(0.1..10.0), &v).unwrap();
            prop_assert!((u.transpose() * &u - DMatrix::identity(4, 4)).norm() < 1e-12);
        }

        #[test]
        fn larger_weight_never_grows_error(seed in any::<u64>(), bump in 0.0f64..1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = random_matrix(&mut rng, 8, 8);
            let u = random_matrix(&mut rng, 8, 4);
            let v = random_matrix(&mut rng, 4, 8);
            let l = random_matrix(&mut rng, 8, 8);
            let mu = rng.random_range(0.1..10.0);
            let w = DMatrix::from_fn(8, 8, |_, _| rng.random_range(0.01..1.0));
            let ones = DMatrix::from_element(8, 8, 1.0);
            let (i, j) = (rng.random_range(0..8), rng.random_range(0..8));
            let mut heavier = w.clone();
            heavier[(i, j)] += bump;
            let before = update_e(&x, &u, &v, &l, mu, &w, &ones)[(i, j)].abs();
            let after = update_e(&x, &u, &v, &l, mu, &heavier, &ones)[(i, j)].abs();
            prop_assert!(after <= before);
        }
    }
}
