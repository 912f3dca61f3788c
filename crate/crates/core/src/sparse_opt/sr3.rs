use nalgebra::{DMatrix, DVector};

use super::lstsq::Factorized;
use super::{
    check_max_iter, check_threshold, residual, Coefficients, DimensionDiagnostics, OptimizerError,
    OptimizerSpec, SolveDiagnostics, SolveOutput, SparseOptimizer,
};

/// Change in the auxiliary variable below which SR3 stops.
pub const SR3_TOLERANCE: f64 = 1e-10;

/// Sparse relaxed regularised regression with an L0 (hard-threshold) prox.
///
/// Minimises `0.5 ||Theta xi - y||^2 + 1/(2 nu) ||xi - w||^2` in `xi` and
/// hard-thresholds `w = H(xi)` alternately, starting from the thresholded
/// least-squares solution. The sparse iterate `w` is returned.
#[derive(Debug, Clone, PartialEq)]
pub struct Sr3 {
    pub threshold: f64,
    pub nu: f64,
    pub max_iter: usize,
}

impl Sr3 {
    pub const NAME: &'static str = "SR3";

    pub fn from_spec(spec: &OptimizerSpec) -> Result<Self, OptimizerError> {
        check_threshold(Self::NAME, spec.threshold)?;
        check_max_iter(Self::NAME, spec.max_iter)?;
        if !(spec.nu.is_finite() && spec.nu > 0.0) {
            return Err(OptimizerError::InvalidParameter {
                kind: Self::NAME.into(),
                field: "nu",
                reason: format!("must be positive, got {}", spec.nu),
            });
        }
        Ok(Self {
            threshold: spec.threshold,
            nu: spec.nu,
            max_iter: spec.max_iter,
        })
    }

    fn hard(&self, v: &DVector<f64>) -> DVector<f64> {
        v.map(|c| if c.abs() >= self.threshold { c } else { 0.0 })
    }
}

fn support(v: &DVector<f64>) -> Vec<usize> {
    (0..v.len()).filter(|&i| v[i] != 0.0).collect()
}

impl SparseOptimizer for Sr3 {
    fn name(&self) -> &'static str {
        Self::NAME
    }

    fn fit(&self, theta: &DMatrix<f64>, xdot: &DMatrix<f64>) -> SolveOutput {
        let plain = Factorized::new(theta, 0.0);
        let relaxed = Factorized::new(theta, 1.0 / self.nu);
        let mut xi = DMatrix::zeros(theta.ncols(), xdot.ncols());
        let mut dims = Vec::new();
        for j in 0..xdot.ncols() {
            let y = xdot.column(j).into_owned();
            let mut diag = DimensionDiagnostics {
                rank_deficient: plain.rank_deficient || relaxed.rank_deficient,
                ..Default::default()
            };
            let mut w = self.hard(&plain.solve(&y, None));
            for _ in 0..self.max_iter {
                let v = relaxed.solve(&y, Some(&w));
                let next = self.hard(&v);
                let change = (&next - &w).norm();
                w = next;
                diag.support_history.push(support(&w));
                diag.residual_history.push(residual(theta, &w, &y));
                if change < SR3_TOLERANCE {
                    diag.converged = true;
                    break;
                }
            }
            diag.zeroed = w.iter().all(|&c| c == 0.0);
            xi.set_column(j, &w);
            dims.push(diag);
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

    #[test]
    fn recovers_linear_decay() {
        let xs: Vec<f64> = (0..50).map(|k| (-(k as f64) * 0.02).exp()).collect();
        let theta = DMatrix::from_fn(50, 2, |i, j| if j == 0 { 1.0 } else { xs[i] });
        let y = DMatrix::from_fn(50, 1, |i, _| -2.0 * xs[i]);
        let out = solve(&theta, &y, &OptimizerSpec::sr3(0.03)).unwrap();
        let xi = &out.coefficients.xi;
        assert_eq!(xi[(0, 0)], 0.0);
        assert!((xi[(1, 0)] + 2.0).abs() < 1e-8, "{xi}");
    }

    #[test]
    fn threshold_zero_is_least_squares() {
        let theta = DMatrix::from_fn(30, 3, |i, j| ((i * 7 + j * 3) % 11) as f64 - 5.0 + j as f64 * 0.1);
        let y = DMatrix::from_fn(30, 1, |i, _| (i as f64).sin());
        let out = solve(&theta, &y, &OptimizerSpec::sr3(0.0)).unwrap();
        let ls = solve(&theta, &y, &OptimizerSpec::least_squares()).unwrap();
        assert!((out.coefficients.xi - ls.coefficients.xi).amax() < 1e-6);
    }

    #[test]
    fn identity_design_recovers_sparse_vector() {
        let c = DVector::from_row_slice(&[0.0, 1.5, 0.0, -0.7, 0.0, 2.0]);
        let theta = DMatrix::identity(6, 6);
        let y = DMatrix::from_column_slice(6, 1, c.as_slice());
        let out = solve(&theta, &y, &OptimizerSpec::sr3(0.5)).unwrap();
        let xi = out.coefficients.xi.column(0);
        assert!((xi - c.column(0)).amax() < 1e-12, "{xi}");
        assert_eq!(out.coefficients.active_terms(), 3);
    }
}
