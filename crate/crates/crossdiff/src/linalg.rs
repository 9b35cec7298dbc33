//! Small dense kernels and the two linear solvers backing the implicit steps:
//! a block-tridiagonal direct factorization for 1D meshes and conjugate
//! gradient on the normal equations (CGLS) for 2D stencil operators.

use crate::error::{CrossDiffError, Result};

/// y = M x for a row-major m x m matrix.
pub fn mat_vec(m: usize, mat: &[f64], x: &[f64], y: &mut [f64]) {
    for r in 0..m {
        let mut acc = 0.0;
        for c in 0..m {
            acc += mat[r * m + c] * x[c];
        }
        y[r] = acc;
    }
}

/// y = M^T x for a row-major m x m matrix.
pub fn mat_t_vec(m: usize, mat: &[f64], x: &[f64], y: &mut [f64]) {
    for c in 0..m {
        y[c] = 0.0;
    }
    for r in 0..m {
        for c in 0..m {
            y[c] += mat[r * m + c] * x[r];
        }
    }
}

/// C = A * B, all row-major m x m.
pub fn mat_mul(m: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    for i in 0..m {
        for j in 0..m {
            let mut acc = 0.0;
            for k in 0..m {
                acc += a[i * m + k] * b[k * m + j];
            }
            c[i * m + j] = acc;
        }
    }
}

/// In-place LU factorization with partial pivoting; returns the pivot vector.
pub fn lu_factor(m: usize, a: &mut [f64]) -> Result<Vec<usize>> {
    let mut piv: Vec<usize> = (0..m).collect();
    for k in 0..m {
        let mut p = k;
        let mut best = a[k * m + k].abs();
        for r in (k + 1)..m {
            let v = a[r * m + k].abs();
            if v > best {
                best = v;
                p = r;
            }
        }
        if best == 0.0 {
            return Err(CrossDiffError::LinearSolveFailed(format!(
                "singular {m}x{m} block at column {k}"
            )));
        }
        if p != k {
            for c in 0..m {
                a.swap(k * m + c, p * m + c);
            }
            piv.swap(k, p);
        }
        let pivot = a[k * m + k];
        for r in (k + 1)..m {
            let factor = a[r * m + k] / pivot;
            a[r * m + k] = factor;
            for c in (k + 1)..m {
                a[r * m + c] -= factor * a[k * m + c];
            }
        }
    }
    Ok(piv)
}

/// Solves L U x = P b given a factorization from [`lu_factor`]; x overwrites b's permuted copy.
pub fn lu_solve(m: usize, lu: &[f64], piv: &[usize], b: &[f64], x: &mut [f64]) {
    for r in 0..m {
        x[r] = b[piv[r]];
    }
    for r in 1..m {
        for c in 0..r {
            x[r] -= lu[r * m + c] * x[c];
        }
    }
    for r in (0..m).rev() {
        for c in (r + 1)..m {
            x[r] -= lu[r * m + c] * x[c];
        }
        x[r] /= lu[r * m + r];
    }
}

/// Eigen-decomposition of a symmetric m x m matrix by cyclic Jacobi rotations.
/// Returns (eigenvalues, eigenvectors as rows), both in ascending eigenvalue order.
pub fn sym_eigen(m: usize, mat: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut a = mat.to_vec();
    // v starts as identity; rows accumulate the eigenvectors.
    let mut v = vec![0.0; m * m];
    for i in 0..m {
        v[i * m + i] = 1.0;
    }
    if m == 1 {
        return (vec![a[0]], v);
    }
    for _sweep in 0..64 {
        let mut off = 0.0;
        for p in 0..m {
            for q in (p + 1)..m {
                off += a[p * m + q] * a[p * m + q];
            }
        }
        if off.sqrt() < 1e-14 * (1.0 + frob_norm(&a)) {
            break;
        }
        for p in 0..m {
            for q in (p + 1)..m {
                let apq = a[p * m + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let app = a[p * m + p];
                let aqq = a[q * m + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    1.0 / (theta - (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..m {
                    let akp = a[k * m + p];
                    let akq = a[k * m + q];
                    a[k * m + p] = c * akp - s * akq;
                    a[k * m + q] = s * akp + c * akq;
                }
                for k in 0..m {
                    let apk = a[p * m + k];
                    let aqk = a[q * m + k];
                    a[p * m + k] = c * apk - s * aqk;
                    a[q * m + k] = s * apk + c * aqk;
                }
                for k in 0..m {
                    let vpk = v[p * m + k];
                    let vqk = v[q * m + k];
                    v[p * m + k] = c * vpk - s * vqk;
                    v[q * m + k] = s * vpk + c * vqk;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| a[i * m + i].partial_cmp(&a[j * m + j]).unwrap());
    let vals: Vec<f64> = order.iter().map(|&i| a[i * m + i]).collect();
    let mut vecs = vec![0.0; m * m];
    for (row, &i) in order.iter().enumerate() {
        vecs[row * m..(row + 1) * m].copy_from_slice(&v[i * m..(i + 1) * m]);
    }
    (vals, vecs)
}

fn frob_norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Largest singular value of an m x m matrix, via the spectrum of A^T A.
pub fn operator_norm(m: usize, mat: &[f64]) -> f64 {
    let mut ata = vec![0.0; m * m];
    for i in 0..m {
        for j in 0..m {
            let mut acc = 0.0;
            for k in 0..m {
                acc += mat[k * m + i] * mat[k * m + j];
            }
            ata[i * m + j] = acc;
        }
    }
    let (vals, _) = sym_eigen(m, &ata);
    vals.last().copied().unwrap_or(0.0).max(0.0).sqrt()
}

/// Block-tridiagonal system with n blocks of size m: lower[i] x_{i-1} + diag[i] x_i + upper[i] x_{i+1} = b_i.
/// lower[0] and upper[n-1] are ignored. Solved by block Thomas elimination.
pub struct BlockTridiag {
    pub m: usize,
    pub n: usize,
    pub lower: Vec<f64>,
    pub diag: Vec<f64>,
    pub upper: Vec<f64>,
}

impl BlockTridiag {
    pub fn zeros(m: usize, n: usize) -> Self {
        BlockTridiag {
            m,
            n,
            lower: vec![0.0; m * m * n],
            diag: vec![0.0; m * m * n],
            upper: vec![0.0; m * m * n],
        }
    }

    pub fn block_mut(vec: &mut [f64], m: usize, i: usize) -> &mut [f64] {
        &mut vec[i * m * m..(i + 1) * m * m]
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let (m, n) = (self.m, self.n);
        let mm = m * m;
        assert_eq!(b.len(), m * n);
        // Forward elimination: dhat_i = diag_i - lower_i * dhat_{i-1}^{-1} * upper_{i-1}.
        let mut dhat = self.diag.clone();
        let mut pivs: Vec<Vec<usize>> = Vec::with_capacity(n);
        let mut y = b.to_vec();
        let mut tmp_col = vec![0.0; m];
        let mut inv_upper = vec![0.0; mm];
        for i in 0..n {
            if i > 0 {
                // inv_upper = dhat_{i-1}^{-1} upper_{i-1}, column by column.
                let lu_prev = &dhat[(i - 1) * mm..i * mm].to_vec();
                let piv_prev = &pivs[i - 1];
                for c in 0..m {
                    let col: Vec<f64> = (0..m).map(|r| self.upper[(i - 1) * mm + r * m + c]).collect();
                    lu_solve(m, lu_prev, piv_prev, &col, &mut tmp_col);
                    for r in 0..m {
                        inv_upper[r * m + c] = tmp_col[r];
                    }
                }
                let low = &self.lower[i * mm..(i + 1) * mm];
                let mut prod = vec![0.0; mm];
                mat_mul(m, low, &inv_upper, &mut prod);
                for k in 0..mm {
                    dhat[i * mm + k] -= prod[k];
                }
                // y_i -= lower_i * dhat_{i-1}^{-1} y_{i-1}
                let yprev: Vec<f64> = y[(i - 1) * m..i * m].to_vec();
                lu_solve(m, lu_prev, piv_prev, &yprev, &mut tmp_col);
                let mut lv = vec![0.0; m];
                mat_vec(m, low, &tmp_col, &mut lv);
                for r in 0..m {
                    y[i * m + r] -= lv[r];
                }
            }
            let piv = lu_factor(m, &mut dhat[i * mm..(i + 1) * mm])?;
            pivs.push(piv);
        }
        // Back substitution.
        let mut x = vec![0.0; m * n];
        for i in (0..n).rev() {
            let mut rhs: Vec<f64> = y[i * m..(i + 1) * m].to_vec();
            if i + 1 < n {
                let up = &self.upper[i * mm..(i + 1) * mm];
                let mut uv = vec![0.0; m];
                mat_vec(m, up, &x[(i + 1) * m..(i + 2) * m], &mut uv);
                for r in 0..m {
                    rhs[r] -= uv[r];
                }
            }
            let mut xi = vec![0.0; m];
            lu_solve(m, &dhat[i * mm..(i + 1) * mm], &pivs[i], &rhs, &mut xi);
            x[i * m..(i + 1) * m].copy_from_slice(&xi);
        }
        Ok(x)
    }
}

/// CGLS (conjugate gradient on the normal equations) for a nonsymmetric operator,
/// right-preconditioned by a diagonal scaling. `apply` is x -> Ax, `apply_t` is x -> A^T x,
/// `col_scale` holds 1/sqrt(diag(A^T A)). Returns the solution and the iteration count.
pub fn cgls<F, G>(
    size: usize,
    apply: F,
    apply_t: G,
    col_scale: &[f64],
    b: &[f64],
    x0: &[f64],
    rel_tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, usize)>
where
    F: Fn(&[f64], &mut [f64]),
    G: Fn(&[f64], &mut [f64]),
{
    // Solve min || A D y - b || with x = D y, D = diag(col_scale).
    let mut x = x0.to_vec();
    let mut ax = vec![0.0; size];
    apply(&x, &mut ax);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
    let bnorm = norm2(b).max(1e-300);
    if norm2(&r) <= rel_tol * bnorm {
        return Ok((x, 0));
    }
    let mut s = vec![0.0; size];
    apply_t(&r, &mut s);
    for i in 0..size {
        s[i] *= col_scale[i];
    }
    let mut p = s.clone();
    let mut gamma = dot(&s, &s);
    let mut q = vec![0.0; size];
    let mut pd = vec![0.0; size];
    for it in 0..max_iter {
        for i in 0..size {
            pd[i] = p[i] * col_scale[i];
        }
        apply(&pd, &mut q);
        let qq = dot(&q, &q);
        if qq == 0.0 {
            break;
        }
        let alpha = gamma / qq;
        for i in 0..size {
            x[i] += alpha * pd[i];
            r[i] -= alpha * q[i];
        }
        if norm2(&r) <= rel_tol * bnorm {
            return Ok((x, it + 1));
        }
        apply_t(&r, &mut s);
        for i in 0..size {
            s[i] *= col_scale[i];
        }
        let gamma_new = dot(&s, &s);
        let beta = gamma_new / gamma;
        gamma = gamma_new;
        for i in 0..size {
            p[i] = s[i] + beta * p[i];
        }
    }
    // Accept stagnated iterations only if the residual is already small in absolute terms.
    let rn = norm2(&r);
    if rn <= 1e-9 * (1.0 + bnorm) {
        return Ok((x, max_iter));
    }
    Err(CrossDiffError::LinearSolveFailed(format!(
        "cgls stalled at residual {rn:.3e} (rhs norm {bnorm:.3e})"
    )))
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn lu_solves_small_system() {
        let mut a = vec![4.0, 1.0, 2.0, -1.0, 3.0, 0.5, 1.0, -2.0, 5.0];
        let b = vec![7.0, 3.5, 4.0];
        let a_orig = a.clone();
        let piv = lu_factor(3, &mut a).unwrap();
        let mut x = vec![0.0; 3];
        lu_solve(3, &a, &piv, &b, &mut x);
        let mut check = vec![0.0; 3];
        mat_vec(3, &a_orig, &x, &mut check);
        for i in 0..3 {
            assert!((check[i] - b[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn sym_eigen_matches_known_spectrum() {
        // Eigenvalues of [[6.8, 2.4], [2.4, 8.2]] are {5, 10} by the characteristic polynomial:
        // x^2 - 15x + 50 = 0.
        let a = vec![6.8, 2.4, 2.4, 8.2];
        let (vals, vecs) = sym_eigen(2, &a);
        assert!((vals[0] - 5.0).abs() < 1e-12);
        assert!((vals[1] - 10.0).abs() < 1e-12);
        // Residual check A v = lambda v.
        for e in 0..2 {
            let v = &vecs[e * 2..(e + 1) * 2];
            let mut av = vec![0.0; 2];
            mat_vec(2, &a, v, &mut av);
            for i in 0..2 {
                assert!((av[i] - vals[e] * v[i]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn operator_norm_of_scaled_rotation() {
        // A = 3 * rotation has all singular values 3.
        let c = (0.3f64).cos();
        let s = (0.3f64).sin();
        let a = vec![3.0 * c, -3.0 * s, 3.0 * s, 3.0 * c];
        assert!((operator_norm(2, &a) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn block_tridiag_matches_dense_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let m = 2;
        let n = 9;
        let mut sys = BlockTridiag::zeros(m, n);
        for i in 0..n {
            for k in 0..m * m {
                sys.diag[i * m * m + k] = rng.gen_range(-0.3..0.3);
                sys.lower[i * m * m + k] = rng.gen_range(-0.3..0.3);
                sys.upper[i * m * m + k] = rng.gen_range(-0.3..0.3);
            }
            // Diagonal dominance keeps the test system comfortably nonsingular.
            for d in 0..m {
                sys.diag[i * m * m + d * m + d] += 3.0;
            }
        }
        let b: Vec<f64> = (0..m * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x = sys.solve(&b).unwrap();
        // Residual against the block-tridiagonal action.
        let mut res = b.clone();
        for i in 0..n {
            let mut acc = vec![0.0; m];
            let mut tmp = vec![0.0; m];
            mat_vec(m, &sys.diag[i * m * m..(i + 1) * m * m], &x[i * m..(i + 1) * m], &mut tmp);
            for r in 0..m {
                acc[r] += tmp[r];
            }
            if i > 0 {
                mat_vec(m, &sys.lower[i * m * m..(i + 1) * m * m], &x[(i - 1) * m..i * m], &mut tmp);
                for r in 0..m {
                    acc[r] += tmp[r];
                }
            }
            if i + 1 < n {
                mat_vec(m, &sys.upper[i * m * m..(i + 1) * m * m], &x[(i + 1) * m..(i + 2) * m], &mut tmp);
                for r in 0..m {
                    acc[r] += tmp[r];
                }
            }
            for r in 0..m {
                res[i * m + r] -= acc[r];
            }
        }
        assert!(norm2(&res) < 1e-11 * (1.0 + norm2(&b)));
    }

    #[test]
    fn cgls_solves_nonsymmetric_system() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 40;
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                a[i * n + j] = rng.gen_range(-0.2..0.2);
            }
            a[i * n + i] += 2.0;
        }
        let xtrue: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut b = vec![0.0; n];
        mat_vec(n, &a, &xtrue, &mut b);
        let mut colnorm = vec![0.0; n];
        for j in 0..n {
            let mut acc = 0.0;
            for i in 0..n {
                acc += a[i * n + j] * a[i * n + j];
            }
            colnorm[j] = 1.0 / acc.sqrt();
        }
        let a_ref = a.clone();
        let apply = |x: &[f64], y: &mut [f64]| mat_vec(n, &a_ref, x, y);
        let a_ref2 = a.clone();
        let apply_t = |x: &[f64], y: &mut [f64]| mat_t_vec(n, &a_ref2, x, y);
        let (x, _iters) = cgls(n, apply, apply_t, &colnorm, &b, &vec![0.0; n], 1e-13, 4000).unwrap();
        for i in 0..n {
            assert!((x[i] - xtrue[i]).abs() < 1e-9);
        }
    }
}
