//! Smallest eigenvalues of the discrete Dirichlet Laplacian.
//!
//! Small problems go through a dense symmetric eigensolver. Larger ones use
//! block Lanczos on `A^{-1}` (shift-invert at zero, which is safe because `-Δ`
//! with Dirichlet conditions is positive definite) with full
//! reorthogonalization. The block form resolves exact degeneracies such as the
//! square's `(m, n)` / `(n, m)` pairs, which a single-vector Krylov space
//! cannot see.

use faer::linalg::solvers::Solve;
use faer::sparse::{SparseColMat, Triplet};
use faer::{Mat, Side};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::billiard::grid::CsrMatrix;
use crate::error::{Error, Result};

/// Above this many nodes the sparse solver is used.
pub const DENSE_LIMIT: usize = 2000;

/// Relative residual target on the Ritz values of `A^{-1}`.
pub const RITZ_TOL: f64 = 1e-8;

const BLOCK: usize = 8;

pub fn smallest_eigenvalues(lap: &CsrMatrix, k: usize) -> Result<Vec<f64>> {
    if k == 0 || k > lap.dim() {
        return Err(Error::InvalidParameter(format!(
            "requested {k} eigenvalues of a {}-dimensional operator",
            lap.dim()
        )));
    }
    if lap.dim() <= DENSE_LIMIT {
        dense_smallest(lap, k)
    } else {
        block_lanczos_smallest(lap, k)
    }
}

pub(crate) fn dense_smallest(lap: &CsrMatrix, k: usize) -> Result<Vec<f64>> {
    let n = lap.dim();
    let mut a = Mat::<f64>::zeros(n, n);
    for (i, j, v) in lap.triplets() {
        a[(i, j)] = v;
    }
    let mut vals = a
        .self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| Error::LinearAlgebra(format!("dense eigensolver: {e:?}")))?;
    vals.truncate(k);
    Ok(vals)
}

pub(crate) fn block_lanczos_smallest(lap: &CsrMatrix, k: usize) -> Result<Vec<f64>> {
    let n = lap.dim();
    let triplets: Vec<Triplet<usize, usize, f64>> = lap
        .triplets()
        .filter(|&(i, j, _)| i >= j)
        .map(|(i, j, v)| Triplet::new(i, j, v))
        .collect();
    let a = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &triplets)
        .map_err(|e| Error::LinearAlgebra(format!("sparse assembly: {e:?}")))?;
    let llt = a
        .sp_cholesky(Side::Lower)
        .map_err(|e| Error::LinearAlgebra(format!("sparse Cholesky: {e:?}")))?;

    let p = BLOCK.min(n);
    let max_dim = n.min(8 * k + 20 * p);
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_1a9c);

    let mut start = Mat::<f64>::from_fn(n, p, |_, _| StandardNormal.sample(&mut rng));
    orthonormalize(&mut start, &[], &mut rng);

    let mut basis: Vec<Mat<f64>> = vec![start];
    let mut alphas: Vec<Mat<f64>> = Vec::new();
    let mut betas: Vec<Mat<f64>> = Vec::new();
    let mut worst = f64::INFINITY;
    let mut iterations = 0;

    loop {
        let j = basis.len() - 1;
        iterations += 1;
        let mut w = basis[j].clone();
        llt.solve_in_place(w.as_mut());

        if j > 0 {
            let b = &betas[j - 1];
            w -= &basis[j - 1] * b.transpose();
        }
        let alpha = basis[j].transpose() * &w;
        w -= &basis[j] * &alpha;
        for _ in 0..2 {
            for v in &basis {
                let c = v.transpose() * &w;
                w -= v * &c;
            }
        }
        let beta = orthonormalize(&mut w, &basis, &mut rng);
        alphas.push(symmetrized(&alpha));
        betas.push(beta);

        let m = alphas.len() * p;
        let ready = m >= k + p;
        let exhausted = m + p > max_dim;
        if ready && (alphas.len() % 2 == 0 || exhausted) {
            let (theta, residual) = ritz(&alphas, &betas, p, k)?;
            worst = theta
                .iter()
                .zip(&residual)
                .map(|(t, r)| r / t)
                .fold(0.0, f64::max);
            if worst <= RITZ_TOL {
                let mut lambdas: Vec<f64> = theta.iter().map(|t| 1.0 / t).collect();
                lambdas.sort_by(f64::total_cmp);
                return Ok(lambdas);
            }
        }
        if exhausted {
            return Err(Error::NoConvergence {
                iterations,
                residual: worst,
            });
        }
        basis.push(w);
    }
}

fn symmetrized(m: &Mat<f64>) -> Mat<f64> {
    Mat::from_fn(m.nrows(), m.ncols(), |i, j| 0.5 * (m[(i, j)] + m[(j, i)]))
}

/// Largest `k` Ritz values of the block tridiagonal projection and their residual norms.
fn ritz(
    alphas: &[Mat<f64>],
    betas: &[Mat<f64>],
    p: usize,
    k: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let nb = alphas.len();
    let m = nb * p;
    let mut t = Mat::<f64>::zeros(m, m);
    for (b, alpha) in alphas.iter().enumerate() {
        for i in 0..p {
            for j in 0..p {
                t[(b * p + i, b * p + j)] = alpha[(i, j)];
            }
        }
        if b + 1 < nb {
            let beta = &betas[b];
            for i in 0..p {
                for j in 0..p {
                    t[((b + 1) * p + i, b * p + j)] = beta[(i, j)];
                    t[(b * p + j, (b + 1) * p + i)] = beta[(i, j)];
                }
            }
        }
    }
    let evd = t
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::LinearAlgebra(format!("projected eigensolver: {e:?}")))?;
    let s = evd.S().column_vector();
    let u = evd.U();
    let last = &betas[nb - 1];
    let mut theta = Vec::with_capacity(k);
    let mut residual = Vec::with_capacity(k);
    for col in (m - k..m).rev() {
        theta.push(s[col]);
        let mut r2 = 0.0;
        for i in 0..p {
            let mut acc = 0.0;
            for j in 0..p {
                acc += last[(i, j)] * u[((nb - 1) * p + j, col)];
            }
            r2 += acc * acc;
        }
        residual.push(r2.sqrt());
    }
    Ok((theta, residual))
}

/// In-place modified Gram-Schmidt QR of `w` against `previous` and itself.
/// Returns the upper-triangular factor. Rank-deficient columns are replaced by
/// fresh random directions with a zero coupling.
fn orthonormalize(w: &mut Mat<f64>, previous: &[Mat<f64>], rng: &mut ChaCha8Rng) -> Mat<f64> {
    let (n, p) = (w.nrows(), w.ncols());
    let mut r = Mat::<f64>::zeros(p, p);
    let scale = (0..p)
        .map(|c| col_norm(w, c))
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    for c in 0..p {
        for _ in 0..2 {
            for q in 0..c {
                let d = col_dot(w, q, w, c);
                r[(q, c)] += d;
                col_axpy(w, c, -d, q);
            }
        }
        let mut norm = col_norm(w, c);
        if norm <= 1e-12 * scale {
            loop {
                for i in 0..n {
                    w[(i, c)] = StandardNormal.sample(rng);
                }
                for _ in 0..2 {
                    for v in previous {
                        for q in 0..v.ncols() {
                            let d = col_dot(v, q, w, c);
                            for i in 0..n {
                                w[(i, c)] -= d * v[(i, q)];
                            }
                        }
                    }
                    for q in 0..c {
                        let d = col_dot(w, q, w, c);
                        col_axpy(w, c, -d, q);
                    }
                }
                norm = col_norm(w, c);
                if norm > 1e-8 {
                    break;
                }
            }
            r[(c, c)] = 0.0;
        } else {
            r[(c, c)] = norm;
        }
        let inv = 1.0 / norm;
        for i in 0..n {
            w[(i, c)] *= inv;
        }
    }
    r
}

fn col_dot(a: &Mat<f64>, ca: usize, b: &Mat<f64>, cb: usize) -> f64 {
    let x = a.col(ca);
    let y = b.col(cb);
    x.iter().zip(y.iter()).map(|(u, v)| u * v).sum()
}

fn col_norm(a: &Mat<f64>, c: usize) -> f64 {
    col_dot(a, c, a, c).sqrt()
}

fn col_axpy(w: &mut Mat<f64>, target: usize, alpha: f64, source: usize) {
    for i in 0..w.nrows() {
        let s = w[(i, source)];
        w[(i, target)] += alpha * s;
    }
}
