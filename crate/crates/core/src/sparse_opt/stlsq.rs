use nalgebra::{DMatrix, DVector};

use super::lstsq::lstsq;
use super::{
    check_max_iter, check_threshold, residual_on, Coefficients, DimensionDiagnostics,
    OptimizerError, OptimizerSpec, SolveDiagnostics, SolveOutput, SparseOptimizer,
};

/// Sequentially thresholded least squares.
///
/// Alternates a ridge fit on the active set with hard thresholding until the
/// support stops changing, then refits without regularisation. The refit is
/// repeated (pruning anything that drops below the threshold) so every
/// returned nonzero clears the threshold and equals the ordinary least-squares
/// solution on its support.
#[derive(Debug, Clone, PartialEq)]
pub struct Stlsq {
    pub threshold: f64,
    pub ridge_alpha: f64,
    pub max_iter: usize,
}

impl Stlsq {
    pub const NAME: &'static str = "STLSQ";

    pub fn from_spec(spec: &OptimizerSpec) -> Result<Self, OptimizerError> {
        check_threshold(Self::NAME, spec.threshold)?;
        check_max_iter(Self::NAME, spec.max_iter)?;
        if !(spec.ridge_alpha.is_finite() && spec.ridge_alpha >= 0.0) {
            return Err(OptimizerError::InvalidParameter {
                kind: Self::NAME.into(),
                field: "alpha",
                reason: format!("must be non-negative, got {}", spec.ridge_alpha),
            });
        }
        Ok(Self {
            threshold: spec.threshold,
            ridge_alpha: spec.ridge_alpha,
            max_iter: spec.max_iter,
        })
    }

    fn fit_column(&self, theta: &DMatrix<f64>, y: &DVector<f64>) -> (DVector<f64>, DimensionDiagnostics) {
        let p = theta.ncols();
        let mut diag = DimensionDiagnostics::default();
        let mut active: Vec<usize> = (0..p).collect();

        for _ in 0..self.max_iter {
            if active.is_empty() {
                break;
            }
            let sub = theta.select_columns(&active);
            let (coef, deficient) = lstsq(&sub, y, self.ridge_alpha);
            diag.rank_deficient |= deficient;
            let keep: Vec<usize> = active
                .iter()
                .zip(coef.iter())
                .filter(|(_, c)| c.abs() >= self.threshold)
                .map(|(&i, _)| i)
                .collect();
            let kept: DVector<f64> = DVector::from_iterator(
                keep.len(),
                coef.iter().copied().filter(|c| c.abs() >= self.threshold),
            );
            diag.residual_history.push(residual_on(theta, &keep, &kept, y));
            let stable = keep.len() == active.len();
            diag.support_history.push(keep.clone());
            active = keep;
            if stable {
                diag.converged = true;
                break;
            }
        }

        // Unregularised refit, pruning until the support is a fixed point.
        let mut xi = DVector::zeros(p);
        loop {
            if active.is_empty() {
                diag.zeroed = true;
                break;
            }
            let sub = theta.select_columns(&active);
            let (coef, deficient) = lstsq(&sub, y, 0.0);
            diag.rank_deficient |= deficient;
            let keep: Vec<usize> = active
                .iter()
                .zip(coef.iter())
                .filter(|(_, c)| c.abs() >= self.threshold && **c != 0.0)
                .map(|(&i, _)| i)
                .collect();
            if keep.len() == active.len() {
                for (&i, c) in active.iter().zip(coef.iter()) {
                    xi[i] = *c;
                }
                diag.residual_history.push(residual_on(theta, &active, &coef, y));
                diag.support_history.push(active.clone());
                break;
            }
            active = keep;
        }
        (xi, diag)
    }
}

impl SparseOptimizer for Stlsq {
    fn name(&self) -> &'static str {
        Self::NAME
    }

    fn fit(&self, theta: &DMatrix<f64>, xdot: &DMatrix<f64>) -> SolveOutput {
        let mut xi = DMatrix::zeros(theta.ncols(), xdot.ncols());
        let mut dims = Vec::with_capacity(xdot.ncols());
        for j in 0..xdot.ncols() {
            let (coef, d) = self.fit_column(theta, &xdot.column(j).into_owned());
            xi.set_column(j, &coef);
            dims.push(d);
        }
        SolveOutput {
            coefficients: Coefficients::from_xi(xi),
            diagnostics: SolveDiagnostics {
                optimizer: Self::NAME.into(),
                dimensions: dims,
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse_opt::solve;

    fn decay_data() -> (DMatrix<f64>, DMatrix<f64>) {
        let xs: Vec<f64> = (0..50).map(|k| (-(k as f64) * 0.02).exp()).collect();
        let theta = DMatrix::from_fn(50, 2, |i, j| if j == 0 { 1.0 } else { xs[i] });
        let y = DMatrix::from_fn(50, 1, |i, _| -2.0 * xs[i]);
        (theta, y)
    }

    #[test]
    fn recovers_linear_decay() {
        let (theta, y) = decay_data();
        let out = solve(&theta, &y, &OptimizerSpec::stlsq(0.5)).unwrap();
        let xi = &out.coefficients.xi;
        assert_eq!(xi[(0, 0)], 0.0);
        assert!((xi[(1, 0)] + 2.0).abs() < 1e-8, "{xi}");
        assert!(out.diagnostics.dimensions[0].converged);
    }

    #[test]
    fn zero_targets_give_zero_model() {
        let (theta, _) = decay_data();
        let out = solve(&theta, &DMatrix::zeros(50, 2), &OptimizerSpec::stlsq(0.1)).unwrap();
        assert!(out.coefficients.xi.iter().all(|&v| v == 0.0));
        assert_eq!(out.diagnostics.zeroed_dimensions(), vec![0, 1]);
    }

    #[test]
    fn support_never_grows() {
        let (theta, y) = decay_data();
        let out = solve(&theta, &y, &OptimizerSpec::stlsq(0.5)).unwrap();
        let h = &out.diagnostics.dimensions[0].support_history;
        for w in h.windows(2) {
            assert!(w[1].iter().all(|i| w[0].contains(i)));
        }
    }

    #[test]
    fn threshold_zero_keeps_full_support() {
        let (theta, mut y) = decay_data();
        y[(3, 0)] += 0.1;
        let out = solve(&theta, &y, &OptimizerSpec::stlsq(0.0)).unwrap();
        assert_eq!(out.coefficients.active_terms(), 2);
    }
}
