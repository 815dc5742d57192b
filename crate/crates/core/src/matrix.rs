//! Dense row-major matrices sized for small control problems (n <= ~8).
//!
//! Provides exactly the numerics the rest of the crate needs: arithmetic,
//! a cyclic Jacobi eigensolver for symmetric matrices, Gaussian-elimination
//! inversion with a condition estimate, and symmetric 2x2 block assembly for
//! LMI constraints. Nothing here is tuned for large n.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Mat> {
        if rows == 0 || cols == 0 {
            return Err(Error::domain("matrix dimensions must be at least 1x1"));
        }
        if data.len() != rows * cols {
            return Err(Error::domain(format!(
                "expected {} entries for a {}x{} matrix, got {}",
                rows * cols,
                rows,
                cols,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("matrix entries must be finite"));
        }
        Ok(Mat { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Mat> {
        if rows.is_empty() {
            return Err(Error::domain("matrix needs at least one row"));
        }
        let cols = rows[0].len();
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::domain("ragged rows in matrix literal"));
        }
        Mat::new(rows.len(), cols, rows.concat())
    }

    pub fn zeros(rows: usize, cols: usize) -> Mat {
        Mat { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Mat {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn diag(d: &[f64]) -> Mat {
        let mut m = Mat::zeros(d.len(), d.len());
        for (i, v) in d.iter().enumerate() {
            m[(i, i)] = *v;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows)
            .map(|i| self.data[i * self.cols..(i + 1) * self.cols].to_vec())
            .collect()
    }

    pub fn transpose(&self) -> Mat {
        let mut t = Mat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn add(&self, other: &Mat) -> Mat {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols), "add: shape mismatch");
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Mat { rows: self.rows, cols: self.cols, data }
    }

    pub fn sub(&self, other: &Mat) -> Mat {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols), "sub: shape mismatch");
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Mat { rows: self.rows, cols: self.cols, data }
    }

    pub fn scale(&self, c: f64) -> Mat {
        let data = self.data.iter().map(|a| c * a).collect();
        Mat { rows: self.rows, cols: self.cols, data }
    }

    pub fn matmul(&self, other: &Mat) -> Mat {
        assert_eq!(self.cols, other.rows, "matmul: shape mismatch");
        let mut out = Mat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let aik = self[(i, k)];
                if aik == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out[(i, j)] += aik * other[(k, j)];
                }
            }
        }
        out
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, x.len(), "matvec: shape mismatch");
        (0..self.rows)
            .map(|i| (0..self.cols).map(|j| self[(i, j)] * x[j]).sum())
            .collect()
    }

    /// Frobenius inner product `<self, other> = sum_ij a_ij b_ij`.
    pub fn frob_dot(&self, other: &Mat) -> f64 {
        assert!(
            self.rows == other.rows && self.cols == other.cols,
            "frob_dot shape mismatch"
        );
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn frob(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// max_i sum_j |a_ij|
    pub fn norm_inf(&self) -> f64 {
        (0..self.rows)
            .map(|i| (0..self.cols).map(|j| self[(i, j)].abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn trace(&self) -> f64 {
        assert!(self.is_square(), "trace: matrix not square");
        (0..self.rows).map(|i| self[(i, i)]).sum()
    }

    /// Frobenius norm of S - S^T.
    pub fn sym_defect(&self) -> f64 {
        assert!(self.is_square());
        let mut acc = 0.0;
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                let d = self[(i, j)] - self[(j, i)];
                acc += 2.0 * d * d;
            }
        }
        acc.sqrt()
    }

    /// (S + S^T)/2, used to clean up round-off on products that are symmetric
    /// in exact arithmetic.
    pub fn symmetrize(&self) -> Mat {
        assert!(self.is_square());
        let mut out = self.clone();
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                let v = 0.5 * (self[(i, j)] + self[(j, i)]);
                out[(i, j)] = v;
                out[(j, i)] = v;
            }
        }
        out
    }

    pub fn check_symmetric(&self, what: &str) -> Result<()> {
        if !self.is_square() {
            return Err(Error::domain(format!("{what}: matrix must be square")));
        }
        if self.sym_defect() > 1e-12 * (1.0 + self.frob()) {
            return Err(Error::domain(format!("{what}: matrix is not symmetric")));
        }
        Ok(())
    }
}

impl std::ops::Index<(usize, usize)> for Mat {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Mat {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// Eigendecomposition of a symmetric matrix: S = V diag(values) V^T.
#[derive(Clone, Debug)]
pub struct SymEig {
    /// Ascending.
    pub values: Vec<f64>,
    /// Orthonormal eigenvectors, one per column, ordered like `values`.
    pub vectors: Mat,
}

impl SymEig {
    /// Rebuild `V diag(values) V'` with replacement eigenvalues, e.g. after
    /// clipping them against a floor.
    pub fn assemble(&self, values: &[f64]) -> Mat {
        let n = self.vectors.rows();
        assert_eq!(values.len(), n, "assemble needs one value per eigenvector");
        let mut out = Mat::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let mut s = 0.0;
                for (k, &v) in values.iter().enumerate() {
                    s += self.vectors[(i, k)] * v * self.vectors[(j, k)];
                }
                out[(i, j)] = s;
                out[(j, i)] = s;
            }
        }
        out
    }
}

const JACOBI_MAX_SWEEPS: usize = 100;
const JACOBI_OFF_TOL: f64 = 1e-13;

/// Symmetric eigendecomposition by cyclic Jacobi sweeps.
///
/// Converges when the off-diagonal Frobenius mass drops below
/// `1e-13 * ||S||_F`; at the sizes used here that takes a handful of sweeps.
pub fn sym_eig(s: &Mat) -> Result<SymEig> {
    s.check_symmetric("sym_eig")?;
    let n = s.rows();
    let norm = s.frob();
    let mut a = s.symmetrize();
    let mut v = Mat::identity(n);

    let off = |a: &Mat| -> f64 {
        let mut acc = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                acc += 2.0 * a[(i, j)] * a[(i, j)];
            }
        }
        acc.sqrt()
    };

    let mut converged = off(&a) <= JACOBI_OFF_TOL * norm;
    for _ in 0..JACOBI_MAX_SWEEPS {
        if converged {
            break;
        }
        for p in 0..n - 1 {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let tau = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                // tan of the rotation angle; series form for huge tau to
                // avoid overflow in tau^2.
                let t = if tau.abs() > 1e150 {
                    0.5 / tau
                } else if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let sn = t * c;
                // A <- J^T A J with J = I except J[p,p]=J[q,q]=c,
                // J[p,q]=sn, J[q,p]=-sn.
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - sn * akq;
                    a[(k, q)] = sn * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - sn * aqk;
                    a[(q, k)] = sn * apk + c * aqk;
                }
                a[(p, q)] = 0.0;
                a[(q, p)] = 0.0;
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - sn * vkq;
                    v[(k, q)] = sn * vkp + c * vkq;
                }
            }
        }
        converged = off(&a) <= JACOBI_OFF_TOL * norm;
    }
    if !converged {
        return Err(Error::domain("sym_eig: Jacobi sweeps did not converge"));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].total_cmp(&a[(j, j)]));
    let values: Vec<f64> = order.iter().map(|&i| a[(i, i)]).collect();
    let mut vectors = Mat::zeros(n, n);
    for (new_col, &old_col) in order.iter().enumerate() {
        for k in 0..n {
            vectors[(k, new_col)] = v[(k, old_col)];
        }
    }
    Ok(SymEig { values, vectors })
}

/// Smallest eigenvalue plus a positive-semidefiniteness verdict at relative
/// tolerance `tol`: PSD iff lambda_min >= -tol * (1 + ||S||_F).
pub fn min_eig_psd(s: &Mat, tol: f64) -> Result<(bool, f64)> {
    let eig = sym_eig(s)?;
    let lambda_min = eig.values[0];
    Ok((lambda_min >= -tol * (1.0 + s.frob()), lambda_min))
}

/// Inverse by Gaussian elimination with partial pivoting.
///
/// Rejects singular and severely ill-conditioned inputs (infinity-norm
/// condition estimate above 1e12).
pub fn inverse(s: &Mat) -> Result<Mat> {
    if !s.is_square() {
        return Err(Error::domain("inverse: matrix must be square"));
    }
    let n = s.rows();
    let mut a = s.clone();
    let mut inv = Mat::identity(n);

    for col in 0..n {
        let pivot_row = (col..n)
            .max_by(|&i, &j| a[(i, col)].abs().total_cmp(&a[(j, col)].abs()))
            .unwrap();
        let pivot = a[(pivot_row, col)];
        if pivot == 0.0 {
            return Err(Error::Singular("inverse: zero pivot".into()));
        }
        if pivot_row != col {
            for j in 0..n {
                let tmp = a[(col, j)];
                a[(col, j)] = a[(pivot_row, j)];
                a[(pivot_row, j)] = tmp;
                let tmp = inv[(col, j)];
                inv[(col, j)] = inv[(pivot_row, j)];
                inv[(pivot_row, j)] = tmp;
            }
        }
        let inv_pivot = 1.0 / pivot;
        for j in 0..n {
            a[(col, j)] *= inv_pivot;
            inv[(col, j)] *= inv_pivot;
        }
        for i in 0..n {
            if i == col {
                continue;
            }
            let factor = a[(i, col)];
            if factor == 0.0 {
                continue;
            }
            for j in 0..n {
                a[(i, j)] -= factor * a[(col, j)];
                inv[(i, j)] -= factor * inv[(col, j)];
            }
        }
    }

    let cond = s.norm_inf() * inv.norm_inf();
    if !cond.is_finite() || cond > 1e12 {
        return Err(Error::Singular(format!(
            "inverse: condition estimate {cond:.3e} exceeds 1e12"
        )));
    }
    Ok(inv)
}

/// Assemble the symmetric block matrix [[X, Y^T], [Y, Z]] from X (n x n),
/// Y (p x n, the lower-left block) and Z (p x p).
pub fn block2x2(x: &Mat, y: &Mat, z: &Mat) -> Result<Mat> {
    if !x.is_square() || !z.is_square() {
        return Err(Error::domain("block2x2: diagonal blocks must be square"));
    }
    let n = x.rows();
    let p = z.rows();
    if y.rows() != p || y.cols() != n {
        return Err(Error::domain(format!(
            "block2x2: off-diagonal block must be {p}x{n}, got {}x{}",
            y.rows(),
            y.cols()
        )));
    }
    let mut out = Mat::zeros(n + p, n + p);
    for i in 0..n {
        for j in 0..n {
            out[(i, j)] = x[(i, j)];
        }
    }
    for i in 0..p {
        for j in 0..p {
            out[(n + i, n + j)] = z[(i, j)];
        }
    }
    for i in 0..p {
        for j in 0..n {
            out[(n + i, j)] = y[(i, j)];
            out[(j, n + i)] = y[(i, j)];
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    #[test]
    fn eig_identity() {
        let e = sym_eig(&Mat::identity(2)).unwrap();
        assert_eq!(e.values, vec![1.0, 1.0]);
    }

    #[test]
    fn eig_diagonal_sorted() {
        let e = sym_eig(&Mat::diag(&[2.0, 1.0])).unwrap();
        assert_eq!(e.values, vec![1.0, 2.0]);
    }

    #[test]
    fn eig_offdiagonal_pair() {
        let s = Mat::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let e = sym_eig(&s).unwrap();
        assert_close(e.values[0], -1.0, 1e-14);
        assert_close(e.values[1], 1.0, 1e-14);
    }

    #[test]
    fn eig_rejects_asymmetric() {
        let s = Mat::from_rows(&[vec![0.0, 1.0], vec![0.0, 0.0]]).unwrap();
        assert!(matches!(sym_eig(&s), Err(Error::Domain(_))));
    }

    #[test]
    fn eig_zero_matrix() {
        let e = sym_eig(&Mat::zeros(3, 3)).unwrap();
        assert_eq!(e.values, vec![0.0; 3]);
    }

    #[test]
    fn psd_examples() {
        assert_eq!(min_eig_psd(&Mat::identity(2), 1e-9).unwrap(), (true, 1.0));
        let (ok, lam) = min_eig_psd(&Mat::diag(&[1.0, -1.0]), 1e-9).unwrap();
        assert!(!ok);
        assert_close(lam, -1.0, 1e-14);
        assert_eq!(min_eig_psd(&Mat::zeros(2, 2), 1e-9).unwrap(), (true, 0.0));
    }

    #[test]
    fn inverse_examples() {
        let inv = inverse(&Mat::identity(2)).unwrap();
        assert_eq!(inv, Mat::identity(2));
        let inv = inverse(&Mat::diag(&[2.0, 4.0])).unwrap();
        assert_eq!(inv, Mat::diag(&[0.5, 0.25]));
    }

    #[test]
    fn inverse_reference_q_round_trip() {
        let q = Mat::from_rows(&[vec![0.618, -2.119], vec![-2.119, 28.214]]).unwrap();
        let qinv = inverse(&q).unwrap();
        let delta = q.matmul(&qinv).sub(&Mat::identity(2));
        assert!(delta.frob() <= 1e-9, "round trip error {}", delta.frob());
        // Independent 2x2 closed form: adj(Q)/det(Q).
        let det = 0.618 * 28.214 - 2.119 * 2.119;
        assert_close(qinv[(0, 0)], 28.214 / det, 1e-12);
        assert_close(qinv[(0, 1)], 2.119 / det, 1e-12);
        assert_close(qinv[(1, 1)], 0.618 / det, 1e-12);
    }

    #[test]
    fn inverse_rejects_singular() {
        let s = Mat::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0]]).unwrap();
        assert!(matches!(inverse(&s), Err(Error::Singular(_))));
    }

    #[test]
    fn block_identity() {
        let b = block2x2(&Mat::identity(2), &Mat::zeros(2, 2), &Mat::identity(2)).unwrap();
        assert_eq!(b, Mat::identity(4));
    }

    #[test]
    fn block_scalar() {
        let b = block2x2(
            &Mat::diag(&[2.0]),
            &Mat::new(1, 1, vec![1.0]).unwrap(),
            &Mat::diag(&[2.0]),
        )
        .unwrap();
        assert_eq!(b, Mat::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap());
    }

    #[test]
    fn block_dimension_mismatch() {
        let r = block2x2(&Mat::identity(2), &Mat::zeros(1, 3), &Mat::identity(1));
        assert!(matches!(r, Err(Error::Domain(_))));
    }

    fn sym_strategy(max_n: usize) -> impl Strategy<Value = Mat> {
        (2..=max_n).prop_flat_map(|n| {
            proptest::collection::vec(-1.0..1.0f64, n * n).prop_map(move |v| {
                let raw = Mat::new(n, n, v).unwrap();
                raw.add(&raw.transpose()).scale(0.5)
            })
        })
    }

    proptest! {
        #[test]
        fn eig_reconstruction(s in sym_strategy(6)) {
            let e = sym_eig(&s).unwrap();
            let lam = Mat::diag(&e.values);
            let rebuilt = e.vectors.matmul(&lam).matmul(&e.vectors.transpose());
            let err = s.sub(&rebuilt).frob();
            prop_assert!(err <= 1e-10 * (1.0 + s.frob()), "reconstruction error {err}");
        }

        #[test]
        fn eig_orthonormal(s in sym_strategy(6)) {
            let e = sym_eig(&s).unwrap();
            let n = s.rows();
            let gram = e.vectors.transpose().matmul(&e.vectors);
            prop_assert!(gram.sub(&Mat::identity(n)).frob() <= 1e-10);
        }

        #[test]
        fn inverse_round_trip(s in sym_strategy(6)) {
            // Diagonal shift keeps the condition number modest.
            let n = s.rows();
            let shifted = s.add(&Mat::identity(n).scale(n as f64 + 1.5));
            let inv = inverse(&shifted).unwrap();
            let err = shifted.matmul(&inv).sub(&Mat::identity(n)).frob();
            prop_assert!(err <= 1e-9, "round trip error {err}");
        }

        #[test]
        fn psd_matches_2x2_closed_form(a in -1.0..1.0f64, b in -1.0..1.0f64, c in -1.0..1.0f64) {
            let s = Mat::from_rows(&[vec![a, b], vec![b, c]]).unwrap();
            let half_diff = 0.5 * (a - c);
            let closed = 0.5 * (a + c) - (half_diff * half_diff + b * b).sqrt();
            let (is_psd, lam) = min_eig_psd(&s, 1e-9).unwrap();
            prop_assert!((lam - closed).abs() <= 1e-12);
            // Compare verdicts only away from the tolerance band.
            if closed.abs() > 1e-6 {
                prop_assert_eq!(is_psd, closed > 0.0);
            }
        }
    }
}
