//! Dense least squares with an optional Tikhonov term.
//!
//! Minimises `||A x - b||^2 + ridge * ||x - prior||^2` through a
//! column-pivoted QR of the augmented matrix `[A D; sqrt(ridge) D]`, where
//! `D` scales every column of `A` to unit norm and `x = D y`. When the pivots
//! indicate a condition number above [`MAX_CONDITION`] the SVD
//! pseudo-inverse is used instead. The scaling leaves the minimiser
//! unchanged but makes the rank decision independent of column units.

use nalgebra::{ColPivQR, DMatrix, DVector, SVD};

pub const MAX_CONDITION: f64 = 1e12;

enum Factor {
    Qr(ColPivQR<f64, nalgebra::Dyn, nalgebra::Dyn>),
    Svd(SVD<f64, nalgebra::Dyn, nalgebra::Dyn>, f64),
    Empty,
}

pub(crate) struct Factorized {
    rows: usize,
    cols: usize,
    ridge_sqrt: f64,
    /// Diagonal of `D`.
    scale: DVector<f64>,
    factor: Factor,
    pub rank_deficient: bool,
}

impl Factorized {
    pub fn new(a: &DMatrix<f64>, ridge: f64) -> Self {
        let (rows, cols) = a.shape();
        let ridge_sqrt = ridge.max(0.0).sqrt();
        let scale = DVector::from_fn(cols, |j, _| {
            let n = a.column(j).norm();
            if n > 0.0 && n.is_finite() {
                1.0 / n
            } else {
                1.0
            }
        });
        if cols == 0 {
            return Self { rows, cols, ridge_sqrt, scale, factor: Factor::Empty, rank_deficient: false };
        }
        let mut scaled = a.clone();
        for j in 0..cols {
            scaled.column_mut(j).scale_mut(scale[j]);
        }
        let aug = if ridge_sqrt > 0.0 {
            let mut m = DMatrix::zeros(rows + cols, cols);
            m.rows_mut(0, rows).copy_from(&scaled);
            for j in 0..cols {
                m[(rows + j, j)] = ridge_sqrt * scale[j];
            }
            m
        } else {
            scaled
        };
        if aug.nrows() >= cols {
            let qr = ColPivQR::new(aug.clone());
            let diag: Vec<f64> = (0..cols).map(|i| qr.r()[(i, i)].abs()).collect();
            let max = diag.iter().copied().fold(0.0, f64::max);
            let min = diag.iter().copied().fold(f64::INFINITY, f64::min);
            if min > 0.0 && max / min <= MAX_CONDITION {
                return Self { rows, cols, ridge_sqrt, scale, factor: Factor::Qr(qr), rank_deficient: false };
            }
        }
        let svd = SVD::new(aug, true, true);
        let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
        let eps = smax / MAX_CONDITION;
        Self { rows, cols, ridge_sqrt, scale, factor: Factor::Svd(svd, eps), rank_deficient: true }
    }

    /// Solves for the right-hand side `b`, shrinking towards `prior` (zero if `None`).
    pub fn solve(&self, b: &DVector<f64>, prior: Option<&DVector<f64>>) -> DVector<f64> {
        debug_assert_eq!(b.len(), self.rows);
        let rhs = if self.ridge_sqrt > 0.0 {
            let mut r = DVector::zeros(self.rows + self.cols);
            r.rows_mut(0, self.rows).copy_from(b);
            if let Some(prior) = prior {
                for j in 0..self.cols {
                    r[self.rows + j] = self.ridge_sqrt * prior[j];
                }
            }
            r
        } else {
            b.clone()
        };
        let y = match &self.factor {
            Factor::Empty => DVector::zeros(0),
            Factor::Qr(qr) => {
                let mut c = rhs;
                qr.q_tr_mul(&mut c);
                let r = qr.r();
                let r = r.view((0, 0), (self.cols, self.cols));
                let mut x = r
                    .solve_upper_triangular(&c.rows(0, self.cols).into_owned())
                    .expect("nonzero pivots");
                qr.p().inv_permute_rows(&mut x);
                x
            }
            Factor::Svd(svd, eps) => svd.solve(&rhs, *eps).expect("svd with u and v"),
        };
        y.component_mul(&self.scale)
    }
}

pub(crate) fn lstsq(a: &DMatrix<f64>, b: &DVector<f64>, ridge: f64) -> (DVector<f64>, bool) {
    let f = Factorized::new(a, ridge);
    (f.solve(b, None), f.rank_deficient)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_overdetermined_solution() {
        let a = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 2.0, 1.0, 3.0]);
        let b = DVector::from_row_slice(&[1.0, 3.0, 5.0, 7.0]);
        let (x, deficient) = lstsq(&a, &b, 0.0);
        assert!(!deficient);
        assert!((x[0] - 1.0).abs() < 1e-12 && (x[1] - 2.0).abs() < 1e-12, "{x}");
    }

    #[test]
    fn ridge_matches_normal_equations() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 7.0]);
        let b = DVector::from_row_slice(&[1.0, -1.0, 2.0]);
        let alpha = 0.7;
        let (x, _) = lstsq(&a, &b, alpha);
        let g = a.transpose() * &a + DMatrix::identity(2, 2) * alpha;
        let expect = g.lu().solve(&(a.transpose() * &b)).unwrap();
        assert!((x - expect).norm() < 1e-12);
    }

    #[test]
    fn rank_deficient_falls_back_to_pseudo_inverse() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0]);
        let b = DVector::from_row_slice(&[1.0, 2.0, 3.0]);
        let (x, deficient) = lstsq(&a, &b, 0.0);
        assert!(deficient);
        // x0 + 2 x1 = 1 with minimal ||D^-1 x||, D = diag(1/sqrt(14), 1/sqrt(56))
        assert!((x[0] - 0.5).abs() < 1e-10 && (x[1] - 0.25).abs() < 1e-10, "{x}");
    }

    #[test]
    fn column_units_do_not_change_the_rank_decision() {
        // Same design as `exact_overdetermined_solution` with one column in tiny units.
        let a = DMatrix::from_row_slice(4, 3, &[1.0, 0.0, 1e20, 1.0, 1e-9, 2e20, 1.0, 2e-9, 0.5e20, 1.0, 3e-9, 1e20]);
        let x_true = DVector::from_row_slice(&[1.0, 2e9, 3e-20]);
        let b = &a * &x_true;
        let (x, deficient) = lstsq(&a, &b, 0.0);
        assert!(!deficient);
        for j in 0..3 {
            assert!((x[j] - x_true[j]).abs() <= 1e-9 * x_true[j].abs(), "{x}");
        }
        let (r, _) = lstsq(&a, &b, 0.3);
        let g = a.transpose() * &a + DMatrix::identity(3, 3) * 0.3;
        let expect = g.lu().solve(&(a.transpose() * &b)).unwrap();
        assert!((r[0] - expect[0]).abs() < 1e-6 * expect[0].abs().max(1.0), "{r} vs {expect}");
    }

    #[test]
    fn underdetermined_without_ridge() {
        let a = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let (x, deficient) = lstsq(&a, &DVector::from_row_slice(&[2.0]), 0.0);
        assert!(deficient);
        assert!((x[0] - 1.0).abs() < 1e-12 && (x[1] - 1.0).abs() < 1e-12);
    }
}
