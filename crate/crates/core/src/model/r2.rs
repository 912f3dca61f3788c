use nalgebra::DMatrix;

use super::ModelError;

/// Coefficient of determination of each column of `yhat` against `y`.
///
/// A column with zero total variance scores 1 when matched exactly and
/// `-inf` otherwise.
pub fn r2_per_column(y: &DMatrix<f64>, yhat: &DMatrix<f64>) -> Result<Vec<f64>, ModelError> {
    if y.shape() != yhat.shape() {
        return Err(ModelError::Shape(format!(
            "r2 of {:?} against {:?}",
            y.shape(),
            yhat.shape()
        )));
    }
    if y.nrows() < 2 || y.ncols() == 0 {
        return Err(ModelError::Shape(format!("r2 needs at least 2 rows, got {:?}", y.shape())));
    }
    Ok((0..y.ncols())
        .map(|j| {
            let (a, b) = (y.column(j), yhat.column(j));
            let mean = a.mean();
            let ss_tot: f64 = a.iter().map(|v| (v - mean).powi(2)).sum();
            let ss_res: f64 = a.iter().zip(b.iter()).map(|(v, w)| (v - w).powi(2)).sum();
            if !ss_res.is_finite() {
                f64::NEG_INFINITY
            } else if ss_tot == 0.0 {
                if ss_res == 0.0 {
                    1.0
                } else {
                    f64::NEG_INFINITY
                }
            } else {
                1.0 - ss_res / ss_tot
            }
        })
        .collect())
}

/// Unweighted mean of [`r2_per_column`].
pub fn r2(y: &DMatrix<f64>, yhat: &DMatrix<f64>) -> Result<f64, ModelError> {
    let cols = r2_per_column(y, yhat)?;
    Ok(cols.iter().sum::<f64>() / cols.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn col(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_column_slice(v.len(), 1, v)
    }

    #[test]
    fn hand_evaluated_cases() {
        let y = col(&[1.0, 2.0, 3.0]);
        assert_eq!(r2(&y, &y).unwrap(), 1.0);
        assert_eq!(r2(&y, &col(&[2.0, 2.0, 2.0])).unwrap(), 0.0);
        assert_eq!(r2(&y, &col(&[1.0, 2.0, 4.0])).unwrap(), 0.5);
    }

    #[test]
    fn constant_columns() {
        let y = col(&[4.0, 4.0]);
        assert_eq!(r2(&y, &y).unwrap(), 1.0);
        assert_eq!(r2(&y, &col(&[4.0, 4.5])).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn aggregate_is_column_mean() {
        let y = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 2.0, 1.0, 3.0, 0.0]);
        let yhat = DMatrix::from_row_slice(3, 2, &[1.0, 1.0 / 3.0, 2.0, 1.0 / 3.0, 4.0, 1.0 / 3.0]);
        let per = r2_per_column(&y, &yhat).unwrap();
        assert!((per[1]).abs() < 1e-15);
        assert!((r2(&y, &yhat).unwrap() - (per[0] + per[1]) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn shape_errors() {
        assert!(r2(&col(&[1.0, 2.0]), &col(&[1.0, 2.0, 3.0])).is_err());
        assert!(r2(&col(&[1.0]), &col(&[1.0])).is_err());
    }
}
