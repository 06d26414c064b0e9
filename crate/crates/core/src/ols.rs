//! Least squares by Householder QR.

use crate::error::{Error, Result};

/// Dense column-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let n = rows.len();
        let p = rows.first().map_or(0, Vec::len);
        let mut m = Self::zeros(n, p);
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), p, "ragged rows");
            for (j, v) in row.iter().enumerate() {
                m.set(i, j, *v);
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[j * self.rows + i]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[j * self.rows + i] = v;
    }

    fn col(&self, j: usize) -> &[f64] {
        &self.data[j * self.rows..(j + 1) * self.rows]
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.rows];
        for (j, &c) in v.iter().enumerate() {
            for (o, x) in out.iter_mut().zip(self.col(j)) {
                *o += x * c;
            }
        }
        out
    }

    pub fn t_mul_vec(&self, v: &[f64]) -> Vec<f64> {
        (0..self.cols)
            .map(|j| self.col(j).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }
}

/// Relative threshold on `|R_kk|` below which a column counts as dependent.
const RANK_TOL: f64 = 1e-10;

/// Minimizes `||y - X theta||` for full-column-rank `X`.
///
/// `names` labels the columns for the rank-deficiency error.
pub fn least_squares(x: &Matrix, y: &[f64], names: &[String]) -> Result<Vec<f64>> {
    let (n, p) = (x.rows(), x.cols());
    assert_eq!(y.len(), n);
    assert_eq!(names.len(), p);
    if n < p {
        return Err(Error::TooFewRows { rows: n, params: p });
    }
    let mut a = x.clone();
    let mut b = y.to_vec();
    let scale = (0..p)
        .map(|j| norm(a.col(j)))
        .fold(0.0_f64, f64::max)
        .max(f64::MIN_POSITIVE);
    let mut dependent = Vec::new();
    let mut v = vec![0.0; n];

    for k in 0..p {
        let alpha = {
            let col = &a.col(k)[k..];
            let s = norm(col);
            if a.get(k, k) > 0.0 {
                -s
            } else {
                s
            }
        };
        if alpha.abs() <= RANK_TOL * scale {
            dependent.push(names[k].clone());
            continue;
        }
        // v = x - alpha e1, normalized
        v[..k].iter_mut().for_each(|e| *e = 0.0);
        for i in k..n {
            v[i] = a.get(i, k);
        }
        v[k] -= alpha;
        let vnorm = norm(&v[k..]);
        if vnorm == 0.0 {
            continue;
        }
        v[k..].iter_mut().for_each(|e| *e /= vnorm);
        for j in k..p {
            let dot: f64 = (k..n).map(|i| v[i] * a.get(i, j)).sum();
            for i in k..n {
                let val = a.get(i, j) - 2.0 * v[i] * dot;
                a.set(i, j, val);
            }
        }
        let dot: f64 = (k..n).map(|i| v[i] * b[i]).sum();
        for i in k..n {
            b[i] -= 2.0 * v[i] * dot;
        }
    }
    if !dependent.is_empty() {
        return Err(Error::RankDeficient { columns: dependent });
    }

    let mut theta = vec![0.0; p];
    for k in (0..p).rev() {
        let s: f64 = ((k + 1)..p).map(|j| a.get(k, j) * theta[j]).sum();
        theta[k] = (b[k] - s) / a.get(k, k);
    }
    Ok(theta)
}

fn norm(v: &[f64]) -> f64 {
    let m = v.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    if m == 0.0 {
        return 0.0;
    }
    m * v.iter().map(|x| (x / m) * (x / m)).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(k: usize) -> Vec<String> {
        (0..k).map(|i| format!("c{i}")).collect()
    }

    // Gaussian elimination with partial pivoting on a square system.
    fn solve_square(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
        let n = b.len();
        for k in 0..n {
            let piv = (k..n)
                .max_by(|&i, &j| a[i][k].abs().total_cmp(&a[j][k].abs()))
                .unwrap();
            a.swap(k, piv);
            b.swap(k, piv);
            for i in (k + 1)..n {
                let f = a[i][k] / a[k][k];
                for j in k..n {
                    a[i][j] -= f * a[k][j];
                }
                b[i] -= f * b[k];
            }
        }
        let mut x = vec![0.0; n];
        for k in (0..n).rev() {
            let s: f64 = ((k + 1)..n).map(|j| a[k][j] * x[j]).sum();
            x[k] = (b[k] - s) / a[k][k];
        }
        x
    }

    #[test]
    fn interpolating_fit_matches_direct_solve() {
        // columns: intercept, h, a2, h*a2
        let rows = vec![
            vec![1.0, 0.5, 1.0, 0.5],
            vec![1.0, -1.0, -1.0, 1.0],
            vec![1.0, 2.0, 1.0, 2.0],
            vec![1.0, 0.0, -1.0, 0.0],
        ];
        let y = vec![3.0, -1.0, 4.5, 0.25];
        let theta = least_squares(&Matrix::from_rows(&rows), &y, &names(4)).unwrap();
        let direct = solve_square(rows.clone(), y.clone());
        for (a, b) in theta.iter().zip(&direct) {
            assert!((a - b).abs() < 1e-10);
        }
        let fitted = Matrix::from_rows(&rows).mul_vec(&theta);
        for (f, t) in fitted.iter().zip(&y) {
            assert!((f - t).abs() < 1e-10);
        }
    }

    #[test]
    fn duplicated_column_is_reported() {
        let rows = vec![
            vec![1.0, 2.0, 2.0],
            vec![1.0, 3.0, 3.0],
            vec![1.0, 5.0, 5.0],
            vec![1.0, 7.0, 7.0],
        ];
        let err = least_squares(&Matrix::from_rows(&rows), &[1.0, 2.0, 3.0, 4.0], &names(3))
            .unwrap_err();
        match err {
            Error::RankDeficient { columns } => assert_eq!(columns, vec!["c2".to_string()]),
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn too_few_rows() {
        let rows = vec![vec![1.0, 2.0, 3.0, 4.0]; 3];
        assert!(matches!(
            least_squares(&Matrix::from_rows(&rows), &[1.0, 2.0, 3.0], &names(4)),
            Err(Error::TooFewRows { rows: 3, params: 4 })
        ));
    }

    proptest::proptest! {
        #[test]
        fn residuals_orthogonal_to_columns(
            data in proptest::collection::vec((-3.0f64..3.0, -3.0f64..3.0, -10.0f64..10.0), 8..60)
        ) {
            let rows: Vec<Vec<f64>> = data.iter().map(|(a, b, _)| vec![1.0, *a, *b, a * b]).collect();
            let y: Vec<f64> = data.iter().map(|t| t.2).collect();
            let x = Matrix::from_rows(&rows);
            if let Ok(theta) = least_squares(&x, &y, &names(4)) {
                let fitted = x.mul_vec(&theta);
                let resid: Vec<f64> = y.iter().zip(&fitted).map(|(a, b)| a - b).collect();
                let ynorm = norm(&y);
                for g in x.t_mul_vec(&resid) {
                    proptest::prop_assert!(g.abs() <= 1e-8 * ynorm + 1e-12);
                }
            }
        }
    }
}
