//! Dense square matrices specialised for the upper-triangular generators that
//! appear in phase-type calculations: products, back-substitution and the
//! matrix exponential.

use crate::error::{Error, Result};

/// Row-major dense square matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    dim: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(dim: usize) -> Self {
        Matrix {
            dim,
            data: vec![0.0; dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Matrix::zeros(dim);
        for i in 0..dim {
            m[(i, i)] = 1.0;
        }
        m
    }

    /// Builds a matrix from rows. Fails unless every row has `rows.len()` entries.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.len();
        let mut data = Vec::with_capacity(dim * dim);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != dim {
                return Err(Error::domain(format!(
                    "row {i} has {} entries, expected {dim}",
                    row.len()
                )));
            }
            data.extend_from_slice(row);
        }
        Ok(Matrix { dim, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.dim).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn is_upper_triangular(&self) -> bool {
        (0..self.dim).all(|i| (0..i).all(|j| self[(i, j)] == 0.0))
    }

    /// Leading `k x k` block.
    pub fn leading_block(&self, k: usize) -> Matrix {
        assert!(k <= self.dim);
        let mut out = Matrix::zeros(k);
        for i in 0..k {
            out.data[i * k..(i + 1) * k].copy_from_slice(&self.row(i)[..k]);
        }
        out
    }

    /// Copy of `self` embedded in the top-left corner of a larger zero matrix.
    pub fn grown(&self, new_dim: usize) -> Matrix {
        assert!(new_dim >= self.dim);
        let mut out = Matrix::zeros(new_dim);
        for i in 0..self.dim {
            out.data[i * new_dim..i * new_dim + self.dim].copy_from_slice(self.row(i));
        }
        out
    }

    /// `self * 1`, the row sums.
    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.dim).map(|i| self.row(i).iter().sum()).collect()
    }

    /// Maximum absolute column sum.
    pub fn norm1(&self) -> f64 {
        let mut cols = vec![0.0; self.dim];
        for i in 0..self.dim {
            for (c, v) in cols.iter_mut().zip(self.row(i)) {
                *c += v.abs();
            }
        }
        cols.into_iter().fold(0.0, f64::max)
    }

    pub fn scaled(&self, s: f64) -> Matrix {
        Matrix {
            dim: self.dim,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    /// Product of two upper-triangular matrices (entries below the diagonal
    /// of either factor are ignored).
    pub fn mul_upper(&self, other: &Matrix) -> Matrix {
        let n = self.dim;
        assert_eq!(n, other.dim);
        let mut out = Matrix::zeros(n);
        for i in 0..n {
            let out_row = &mut out.data[i * n..(i + 1) * n];
            for j in i..n {
                let a = self.data[i * n + j];
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[j * n..(j + 1) * n];
                for k in j..n {
                    out_row[k] += a * b_row[k];
                }
            }
        }
        out
    }

    /// Row vector times matrix.
    pub fn left_mul(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.dim);
        let mut out = vec![0.0; self.dim];
        for (i, &vi) in v.iter().enumerate() {
            if vi == 0.0 {
                continue;
            }
            for (o, a) in out.iter_mut().zip(self.row(i)) {
                *o += vi * a;
            }
        }
        out
    }

    /// Solves `self * z = rhs` for upper-triangular `self` by back-substitution.
    pub fn solve_upper(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let n = self.dim;
        assert_eq!(rhs.len(), n);
        let mut z = vec![0.0; n];
        for i in (0..n).rev() {
            let row = self.row(i);
            let mut acc = rhs[i];
            for k in i + 1..n {
                acc -= row[k] * z[k];
            }
            let d = row[i];
            if d == 0.0 || !d.is_finite() {
                return Err(Error::Numerical(format!("singular triangular matrix at row {i}")));
            }
            z[i] = acc / d;
        }
        Ok(z)
    }

    /// Solves `self * X = rhs` for upper-triangular `self` and `rhs`.
    fn solve_upper_matrix(&self, rhs: &Matrix) -> Result<Matrix> {
        let n = self.dim;
        let mut x = Matrix::zeros(n);
        for i in (0..n).rev() {
            let d = self.data[i * n + i];
            if d == 0.0 || !d.is_finite() {
                return Err(Error::Numerical(format!("singular Padé denominator at row {i}")));
            }
            let mut acc: Vec<f64> = rhs.row(i)[i..].to_vec();
            for j in i + 1..n {
                let q = self.data[i * n + j];
                if q == 0.0 {
                    continue;
                }
                let x_row = &x.data[j * n + i..(j + 1) * n];
                for (a, xv) in acc.iter_mut().zip(x_row) {
                    *a -= q * xv;
                }
            }
            for (k, a) in acc.into_iter().enumerate() {
                x.data[i * n + i + k] = a / d;
            }
        }
        Ok(x)
    }

    fn add_scaled(&mut self, other: &Matrix, s: f64) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
    }

    fn add_identity(&mut self, s: f64) {
        for i in 0..self.dim {
            self.data[i * self.dim + i] += s;
        }
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.dim + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.dim + j]
    }
}

const THETA_13: f64 = 5.371920351148152;

const PADE_13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

/// `exp(m)` for an upper-triangular matrix, by scaling and squaring with the
/// degree-13 Padé approximant. Diagonal entries are recomputed exactly after
/// every squaring.
pub fn matrix_exponential(m: &Matrix) -> Result<Matrix> {
    if !m.is_finite() {
        return Err(Error::domain("matrix exponential of a non-finite matrix"));
    }
    if !m.is_upper_triangular() {
        return Err(Error::domain("matrix exponential requires an upper-triangular matrix"));
    }
    let n = m.dim();
    if n == 0 {
        return Ok(Matrix::zeros(0));
    }

    let norm = m.norm1();
    let squarings = if norm > THETA_13 {
        (norm / THETA_13).log2().ceil().max(0.0) as i32
    } else {
        0
    };
    let a = m.scaled(0.5f64.powi(squarings));

    let b = &PADE_13;
    let a2 = a.mul_upper(&a);
    let a4 = a2.mul_upper(&a2);
    let a6 = a4.mul_upper(&a2);

    let mut u_inner = a6.scaled(b[13]);
    u_inner.add_scaled(&a4, b[11]);
    u_inner.add_scaled(&a2, b[9]);
    let mut u_tmp = a6.mul_upper(&u_inner);
    u_tmp.add_scaled(&a6, b[7]);
    u_tmp.add_scaled(&a4, b[5]);
    u_tmp.add_scaled(&a2, b[3]);
    u_tmp.add_identity(b[1]);
    let u = a.mul_upper(&u_tmp);

    let mut v_inner = a6.scaled(b[12]);
    v_inner.add_scaled(&a4, b[10]);
    v_inner.add_scaled(&a2, b[8]);
    let mut v = a6.mul_upper(&v_inner);
    v.add_scaled(&a6, b[6]);
    v.add_scaled(&a4, b[4]);
    v.add_scaled(&a2, b[2]);
    v.add_identity(b[0]);

    // (V - U)^{-1} (V + U)
    let mut num = v.clone();
    num.add_scaled(&u, 1.0);
    let mut den = v;
    den.add_scaled(&u, -1.0);
    let mut r = den.solve_upper_matrix(&num)?;

    let diag: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
    set_exact_diagonal(&mut r, &diag, 1.0);
    for s in 1..=squarings {
        r = r.mul_upper(&r);
        set_exact_diagonal(&mut r, &diag, 2f64.powi(s));
    }
    Ok(r)
}

fn set_exact_diagonal(r: &mut Matrix, diag: &[f64], scale: f64) {
    for (i, d) in diag.iter().enumerate() {
        r[(i, i)] = (d * scale).exp();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Plain Taylor series with enough terms for small-norm matrices.
    fn series_exp(m: &Matrix) -> Matrix {
        let n = m.dim();
        let mut term = Matrix::identity(n);
        let mut sum = Matrix::identity(n);
        for k in 1..80 {
            let mut next = Matrix::zeros(n);
            for i in 0..n {
                for j in 0..n {
                    next[(i, j)] = (0..n).map(|l| term[(i, l)] * m[(l, j)]).sum::<f64>() / k as f64;
                }
            }
            term = next;
            sum.add_scaled(&term, 1.0);
        }
        sum
    }

    fn max_rel_err(a: &Matrix, b: &Matrix) -> f64 {
        let scale = b.data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        a.data
            .iter()
            .zip(&b.data)
            .fold(0.0f64, |m, (x, y)| m.max((x - y).abs() / scale))
    }

    #[test]
    fn zero_matrix_gives_identity() {
        let e = matrix_exponential(&Matrix::zeros(4)).unwrap();
        assert_eq!(e, Matrix::identity(4));
    }

    #[test]
    fn diagonal_matrix() {
        let t = 1.7;
        let m = Matrix::from_rows(&[vec![-t, 0.0], vec![0.0, -2.0 * t]]).unwrap();
        let e = matrix_exponential(&m).unwrap();
        assert!((e[(0, 0)] - (-t).exp()).abs() < 1e-15);
        assert!((e[(1, 1)] - (-2.0 * t).exp()).abs() < 1e-15);
        assert_eq!(e[(0, 1)], 0.0);
    }

    #[test]
    fn erlang_jordan_block() {
        for &(mu, x) in &[(1.0, 1.0), (0.3, 7.0), (4.0, 12.5)] {
            let m = Matrix::from_rows(&[vec![-mu * x, mu * x], vec![0.0, -mu * x]]).unwrap();
            let e = matrix_exponential(&m).unwrap();
            let d = (-mu * x).exp();
            assert!((e[(0, 0)] - d).abs() <= 1e-14 * d.max(1e-300) + 1e-300);
            assert!((e[(0, 1)] - mu * x * d).abs() <= 1e-12 * (mu * x * d));
            assert_eq!(e[(1, 0)], 0.0);
        }
    }

    #[test]
    fn matches_series_on_3x3() {
        let cases = [
            vec![vec![-1.0, 0.5, 0.2], vec![0.0, -0.7, 0.4], vec![0.0, 0.0, -2.0]],
            vec![vec![-3.0, 3.0, 0.0], vec![0.0, -3.0, 3.0], vec![0.0, 0.0, -3.0]],
            vec![vec![0.2, -0.1, 0.3], vec![0.0, 0.1, 0.9], vec![0.0, 0.0, -0.4]],
            vec![vec![-6.0, 2.0, 1.0], vec![0.0, -5.5, 5.0], vec![0.0, 0.0, -4.0]],
        ];
        for rows in cases {
            let m = Matrix::from_rows(&rows).unwrap();
            let got = matrix_exponential(&m).unwrap();
            // split into 8 steps so the series stays well conditioned
            let step = series_exp(&m.scaled(0.125));
            let mut want = step.clone();
            for _ in 0..3 {
                want = want.mul_upper(&want);
            }
            assert!(max_rel_err(&got, &want) <= 1e-10, "{:?}", rows);
        }
    }

    #[test]
    fn rejects_lower_entries_and_nan() {
        let lower = Matrix::from_rows(&[vec![-1.0, 0.0], vec![1.0, -1.0]]).unwrap();
        assert!(matches!(matrix_exponential(&lower), Err(Error::Domain(_))));
        let nan = Matrix::from_rows(&[vec![f64::NAN, 0.0], vec![0.0, -1.0]]).unwrap();
        assert!(matches!(matrix_exponential(&nan), Err(Error::Domain(_))));
    }

    #[test]
    fn back_substitution() {
        let m = Matrix::from_rows(&[vec![-2.0, 1.0, 0.5], vec![0.0, -1.0, 1.0], vec![0.0, 0.0, -4.0]])
            .unwrap();
        let z = m.solve_upper(&[1.0, 2.0, 3.0]).unwrap();
        for i in 0..3 {
            let lhs: f64 = (0..3).map(|k| m[(i, k)] * z[k]).sum();
            assert!((lhs - [1.0, 2.0, 3.0][i]).abs() < 1e-14);
        }
    }
}
