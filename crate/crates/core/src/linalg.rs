//! Iterative kernels: restarted GMRES, Lanczos for extreme eigenpairs and the
//! Krylov action of the matrix exponential. Dense fallbacks live with their
//! callers and use nalgebra directly.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;

pub trait LinearOperator: Sync {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64], y: &mut [f64]);
}

impl LinearOperator for CsrMatrix {
    fn dim(&self) -> usize {
        CsrMatrix::dim(self)
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.mul_vec_into(x, y)
    }
}

/// Operator given by a closure.
pub struct FnOperator<F> {
    pub n: usize,
    pub f: F,
}

impl<F: Fn(&[f64], &mut [f64]) + Sync> LinearOperator for FnOperator<F> {
    fn dim(&self) -> usize {
        self.n
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        (self.f)(x, y)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GmresOptions {
    pub restart: usize,
    pub max_iterations: usize,
    /// Target for `‖b − Ax‖ / ‖b‖`.
    pub tolerance: f64,
}

impl Default for GmresOptions {
    fn default() -> Self {
        Self {
            restart: 80,
            max_iterations: 20_000,
            tolerance: 1e-13,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GmresOutcome {
    pub solution: Vec<f64>,
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Restarted GMRES with modified Gram-Schmidt (twice) and Givens rotations.
pub fn gmres(
    op: &dyn LinearOperator,
    b: &[f64],
    x0: Option<&[f64]>,
    opts: &GmresOptions,
) -> Result<GmresOutcome> {
    let n = op.dim();
    if b.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: b.len(),
        });
    }
    let bnorm = norm(b);
    let mut x = x0.map_or_else(|| vec![0.0; n], <[f64]>::to_vec);
    if bnorm == 0.0 {
        return Ok(GmresOutcome {
            solution: vec![0.0; n],
            iterations: 0,
            relative_residual: 0.0,
        });
    }
    let m = opts.restart.min(n).max(1);
    let mut iterations = 0;
    let mut r = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    loop {
        op.apply(&x, &mut tmp);
        for i in 0..n {
            r[i] = b[i] - tmp[i];
        }
        let beta = norm(&r);
        let rel = beta / bnorm;
        if rel <= opts.tolerance {
            return Ok(GmresOutcome {
                solution: x,
                iterations,
                relative_residual: rel,
            });
        }
        if iterations >= opts.max_iterations {
            return Err(Error::NoConvergence {
                method: "gmres",
                iterations,
                residual: rel,
            });
        }
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(m + 1);
        basis.push(r.iter().map(|v| v / beta).collect());
        let mut hess = vec![vec![0.0; m]; m + 1];
        let mut cs = vec![0.0; m];
        let mut sn = vec![0.0; m];
        let mut g = vec![0.0; m + 1];
        g[0] = beta;
        let mut k = 0;
        while k < m && iterations < opts.max_iterations {
            let mut w = vec![0.0; n];
            op.apply(&basis[k], &mut w);
            for _ in 0..2 {
                for (j, v) in basis.iter().enumerate() {
                    let h = dot(&w, v);
                    hess[j][k] += h;
                    axpy(-h, v, &mut w);
                }
            }
            let wn = norm(&w);
            hess[k + 1][k] = wn;
            for j in 0..k {
                let t = cs[j] * hess[j][k] + sn[j] * hess[j + 1][k];
                hess[j + 1][k] = -sn[j] * hess[j][k] + cs[j] * hess[j + 1][k];
                hess[j][k] = t;
            }
            let denom = hess[k][k].hypot(hess[k + 1][k]);
            if denom == 0.0 {
                cs[k] = 1.0;
                sn[k] = 0.0;
            } else {
                cs[k] = hess[k][k] / denom;
                sn[k] = hess[k + 1][k] / denom;
            }
            hess[k][k] = denom;
            hess[k + 1][k] = 0.0;
            g[k + 1] = -sn[k] * g[k];
            g[k] *= cs[k];
            iterations += 1;
            k += 1;
            // 0.1: the recurrence residual drifts from the true one near machine precision
            if g[k].abs() / bnorm <= 0.1 * opts.tolerance || wn <= 1e-300 {
                break;
            }
            basis.push(w.iter().map(|v| v / wn).collect());
        }
        // back substitution for the k×k triangular system
        let mut y = vec![0.0; k];
        for i in (0..k).rev() {
            let mut s = g[i];
            for j in i + 1..k {
                s -= hess[i][j] * y[j];
            }
            y[i] = if hess[i][i] != 0.0 {
                s / hess[i][i]
            } else {
                0.0
            };
        }
        for (j, yj) in y.iter().enumerate() {
            axpy(*yj, &basis[j], &mut x);
        }
    }
}

#[derive(Debug, Clone)]
pub struct EigenPair {
    pub value: f64,
    pub vector: Vec<f64>,
    pub residual: f64,
}

/// Smallest eigenpair of a symmetric positive semidefinite operator restricted
/// to the orthogonal complement of the unit vectors in `deflate`.
///
/// Lanczos with full reorthogonalization on `σI − B`, `σ` an upper bound on
/// the spectrum, so the wanted eigenvalue becomes the largest.
pub fn lanczos_smallest(
    op: &dyn LinearOperator,
    deflate: &[Vec<f64>],
    upper_bound: f64,
    max_steps: usize,
    tolerance: f64,
    start: &[f64],
) -> Result<EigenPair> {
    let n = op.dim();
    let project = |v: &mut Vec<f64>| {
        for d in deflate {
            let c = dot(v, d);
            axpy(-c, d, v);
        }
    };
    let mut q = start.to_vec();
    project(&mut q);
    let qn = norm(&q);
    if qn == 0.0 {
        return Err(Error::InvalidInput(
            "Lanczos start vector lies in the deflated space".into(),
        ));
    }
    q.iter_mut().for_each(|v| *v /= qn);
    let mut basis = vec![q];
    let mut alpha = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    let mut w = vec![0.0; n];
    let steps = max_steps.min(n - deflate.len());
    let mut best = None;
    for k in 0..steps {
        op.apply(&basis[k], &mut w);
        // w = (σ − B) q_k
        for (wi, qi) in w.iter_mut().zip(&basis[k]) {
            *wi = upper_bound * qi - *wi;
        }
        let a = dot(&w, &basis[k]);
        alpha.push(a);
        for _ in 0..2 {
            project(&mut w);
            for v in &basis {
                let c = dot(&w, v);
                axpy(-c, v, &mut w);
            }
        }
        let b = norm(&w);
        let last = k + 1 == steps || b <= 1e-14;
        if (k + 1) % 10 != 0 && !last {
            beta.push(b);
            basis.push(w.iter().map(|x| x / b).collect());
            continue;
        }
        let dim = k + 1;
        let mut t = DMatrix::zeros(dim, dim);
        for i in 0..dim {
            t[(i, i)] = alpha[i];
            if i + 1 < dim {
                t[(i, i + 1)] = beta[i];
                t[(i + 1, i)] = beta[i];
            }
        }
        let eig = SymmetricEigen::new(t);
        let (imax, &theta) = eig
            .eigenvalues
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .expect("nonempty");
        let s = eig.eigenvectors.column(imax);
        let ritz_residual = (b * s[dim - 1]).abs();
        if ritz_residual <= tolerance || last {
            let mut v = vec![0.0; n];
            for (j, q) in basis.iter().enumerate() {
                axpy(s[j], q, &mut v);
            }
            let vn = norm(&v);
            v.iter_mut().for_each(|x| *x /= vn);
            let value = upper_bound - theta;
            let mut bv = vec![0.0; n];
            op.apply(&v, &mut bv);
            let residual = bv
                .iter()
                .zip(&v)
                .map(|(a, b)| (a - value * b).powi(2))
                .sum::<f64>()
                .sqrt();
            best = Some(EigenPair {
                value,
                vector: v,
                residual,
            });
            if ritz_residual <= tolerance || b <= 1e-14 {
                break;
            }
        }
        beta.push(b);
        basis.push(w.iter().map(|x| x / b).collect());
    }
    let pair = best.expect("at least one Lanczos step");
    if pair.residual > tolerance.max(1e-8) {
        return Err(Error::NoConvergence {
            method: "lanczos",
            iterations: alpha.len(),
            residual: pair.residual,
        });
    }
    Ok(pair)
}

/// `exp(tA) v` by Krylov projection with adaptive substeps.
pub fn krylov_expmv(
    op: &dyn LinearOperator,
    v: &[f64],
    t: f64,
    krylov_dim: usize,
    tolerance: f64,
) -> Result<Vec<f64>> {
    let n = op.dim();
    let mut w = v.to_vec();
    if t == 0.0 || norm(&w) == 0.0 {
        return Ok(w);
    }
    let m = krylov_dim.min(n);
    let mut done = 0.0;
    let mut tau = t;
    let mut av = vec![0.0; n];
    let mut steps = 0usize;
    while done < t {
        let beta = norm(&w);
        if beta == 0.0 {
            break;
        }
        let mut basis: Vec<Vec<f64>> = vec![w.iter().map(|x| x / beta).collect()];
        let mut h = DMatrix::<f64>::zeros(m + 1, m);
        let mut k = m;
        let mut breakdown = false;
        for j in 0..m {
            op.apply(&basis[j], &mut av);
            for _ in 0..2 {
                for (i, q) in basis.iter().enumerate() {
                    let c = dot(&av, q);
                    h[(i, j)] += c;
                    axpy(-c, q, &mut av);
                }
            }
            let hn = norm(&av);
            h[(j + 1, j)] = hn;
            if hn <= 1e-13 * beta.max(1.0) * h.abs().max() {
                k = j + 1;
                breakdown = true;
                break;
            }
            basis.push(av.iter().map(|x| x / hn).collect());
        }
        let hk = h.view((0, 0), (k, k)).into_owned();
        let h_next = if breakdown { 0.0 } else { h[(k, k - 1)] };
        tau = tau.min(t - done);
        let mut attempts = 0;
        let coeffs = loop {
            let e = (&hk * tau).exp();
            let col = e.column(0).into_owned();
            // residual estimate of the projected exponential
            let err = if breakdown {
                0.0
            } else {
                beta * h_next * tau * col[k - 1].abs()
            };
            if err <= tolerance * beta || attempts > 60 {
                if attempts > 60 {
                    return Err(Error::NoConvergence {
                        method: "krylov expmv",
                        iterations: steps,
                        residual: err / beta,
                    });
                }
                break col;
            }
            tau *= 0.5;
            attempts += 1;
        };
        let mut next = vec![0.0; n];
        for (j, c) in coeffs.iter().enumerate() {
            axpy(beta * c, &basis[j], &mut next);
        }
        w = next;
        done += tau;
        steps += 1;
        if attempts == 0 {
            tau *= 2.0;
        }
    }
    Ok(w)
}

/// Dense `A x = b` by partial-pivot LU with one step of iterative refinement.
pub fn dense_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let lu = a.clone().lu();
    let mut x = lu.solve(b)?;
    let r = b - a * &x;
    if let Some(dx) = lu.solve(&r) {
        x += dx;
    }
    Some(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tridiag(n: usize) -> CsrMatrix {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 4.0));
            if i > 0 {
                t.push((i, i - 1, -1.0));
            }
            if i + 1 < n {
                t.push((i, i + 1, -1.5));
            }
        }
        CsrMatrix::from_triplets(n, &t)
    }

    #[test]
    fn gmres_matches_dense_solve() {
        let a = tridiag(200);
        let b: Vec<f64> = (0..200).map(|i| (i as f64).sin()).collect();
        let out = gmres(
            &a,
            &b,
            None,
            &GmresOptions {
                restart: 20,
                ..Default::default()
            },
        )
        .unwrap();
        let dense = dense_solve(&a.to_dense(), &DVector::from_vec(b.clone())).unwrap();
        let diff = out
            .solution
            .iter()
            .zip(dense.iter())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        assert!(diff < 1e-11, "{diff}");
    }

    #[test]
    fn lanczos_finds_smallest_nonzero_eigenvalue_of_cycle_laplacian() {
        let n = 40;
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.0));
            t.push((i, (i + 1) % n, -1.0));
            t.push((i, (i + n - 1) % n, -1.0));
        }
        let a = CsrMatrix::from_triplets(n, &t);
        let ones = vec![1.0 / (n as f64).sqrt(); n];
        let start: Vec<f64> = (0..n).map(|i| ((i * 7 % 13) as f64) - 6.0).collect();
        let pair = lanczos_smallest(&a, &[ones], 4.0, 200, 1e-10, &start).unwrap();
        let exact = 2.0 * (1.0 - (2.0 * std::f64::consts::PI / n as f64).cos());
        assert!(
            (pair.value - exact).abs() < 1e-9,
            "{} vs {exact}",
            pair.value
        );
    }

    #[test]
    fn krylov_exponential_matches_dense() {
        let a = tridiag(60).map(|_, _, v| -v);
        let v: Vec<f64> = (0..60).map(|i| ((i as f64) * 0.3).cos()).collect();
        for t in [0.0, 0.1, 1.0, 5.0] {
            let k = krylov_expmv(&a, &v, t, 30, 1e-14).unwrap();
            let d = (a.to_dense() * t).exp() * DVector::from_vec(v.clone());
            let diff = k
                .iter()
                .zip(d.iter())
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max);
            assert!(diff < 1e-12, "t = {t}: {diff}");
        }
    }
}
