//! Sparse regression `Xdot ~= Theta(X) Xi`.
//!
//! Each solver implements [`SparseOptimizer`] and is registered by name in an
//! [`OptimizerRegistry`]; an [`OptimizerSpec`] selects one at runtime.

mod lstsq;
mod sr3;
mod stlsq;

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use sr3::Sr3;
pub use stlsq::Stlsq;

pub const DEFAULT_STLSQ_THRESHOLD: f64 = 0.1;
pub const DEFAULT_SR3_THRESHOLD: f64 = 0.03;
pub const DEFAULT_RIDGE_ALPHA: f64 = 0.05;
pub const DEFAULT_NU: f64 = 1.0;
pub const DEFAULT_MAX_ITER: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSpec {
    /// Registered solver name, e.g. `STLSQ`.
    pub kind: String,
    pub threshold: f64,
    pub ridge_alpha: f64,
    pub nu: f64,
    pub max_iter: usize,
}

impl OptimizerSpec {
    fn with_kind(kind: &str, threshold: f64) -> Self {
        Self {
            kind: kind.to_string(),
            threshold,
            ridge_alpha: DEFAULT_RIDGE_ALPHA,
            nu: DEFAULT_NU,
            max_iter: DEFAULT_MAX_ITER,
        }
    }

    pub fn stlsq(threshold: f64) -> Self {
        Self::with_kind(Stlsq::NAME, threshold)
    }

    pub fn sr3(threshold: f64) -> Self {
        Self::with_kind(Sr3::NAME, threshold)
    }

    pub fn least_squares() -> Self {
        Self::with_kind(LeastSquares::NAME, 0.0)
    }

    /// Default parameters for a registered kind.
    pub fn default_for(kind: &str) -> Option<Self> {
        let canonical = OptimizerRegistry::builtin().canonical_name(kind)?;
        Some(match canonical {
            Stlsq::NAME => Self::stlsq(DEFAULT_STLSQ_THRESHOLD),
            Sr3::NAME => Self::sr3(DEFAULT_SR3_THRESHOLD),
            other => Self::with_kind(other, 0.0),
        })
    }
}

impl Default for OptimizerSpec {
    fn default() -> Self {
        Self::stlsq(DEFAULT_STLSQ_THRESHOLD)
    }
}

impl fmt::Display for OptimizerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(threshold={}, max_iter={})", self.kind, self.threshold, self.max_iter)
    }
}

/// Fitted `p x n` coefficient matrix and its nonzero mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficients {
    pub xi: DMatrix<f64>,
    pub support: DMatrix<bool>,
}

impl Coefficients {
    pub fn from_xi(xi: DMatrix<f64>) -> Self {
        let support = xi.map(|v| v != 0.0);
        Self { xi, support }
    }

    pub fn active_terms(&self) -> usize {
        self.support.iter().filter(|&&s| s).count()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DimensionDiagnostics {
    /// Active feature indices after each iteration.
    pub support_history: Vec<Vec<usize>>,
    /// Residual norm `||Theta xi - xdot||` after each iteration.
    pub residual_history: Vec<f64>,
    pub converged: bool,
    pub rank_deficient: bool,
    /// Every coefficient of this output dimension was thresholded away.
    pub zeroed: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveDiagnostics {
    pub optimizer: String,
    pub dimensions: Vec<DimensionDiagnostics>,
}

impl SolveDiagnostics {
    pub fn zeroed_dimensions(&self) -> Vec<usize> {
        self.dimensions
            .iter()
            .enumerate()
            .filter(|(_, d)| d.zeroed)
            .map(|(j, _)| j)
            .collect()
    }

    pub fn rank_deficient(&self) -> bool {
        self.dimensions.iter().any(|d| d.rank_deficient)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveOutput {
    pub coefficients: Coefficients,
    pub diagnostics: SolveDiagnostics,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OptimizerError {
    #[error("unknown optimizer {0:?}")]
    UnknownKind(String),
    #[error("invalid {field} for {kind}: {reason}")]
    InvalidParameter {
        kind: String,
        field: &'static str,
        reason: String,
    },
    #[error("theta has {theta} rows but xdot has {xdot}")]
    DimensionMismatch { theta: usize, xdot: usize },
    #[error("non-finite values in regression inputs")]
    NonFinite,
}

pub trait SparseOptimizer: Send + Sync {
    fn name(&self) -> &'static str;

    /// Solves every output column of `xdot` against `theta`.
    fn fit(&self, theta: &DMatrix<f64>, xdot: &DMatrix<f64>) -> SolveOutput;
}

pub type OptimizerFactory = fn(&OptimizerSpec) -> Result<Box<dyn SparseOptimizer>, OptimizerError>;

/// Name-indexed table of solver constructors.
#[derive(Clone)]
pub struct OptimizerRegistry {
    entries: Vec<(&'static str, OptimizerFactory)>,
}

impl OptimizerRegistry {
    pub fn empty() -> Self {
        Self { entries: Vec::new() }
    }

    /// `STLSQ`, `SR3` and `LeastSquares`.
    pub fn builtin() -> Self {
        let mut r = Self::empty();
        r.register(Stlsq::NAME, |s| Ok(Box::new(Stlsq::from_spec(s)?)));
        r.register(Sr3::NAME, |s| Ok(Box::new(Sr3::from_spec(s)?)));
        r.register(LeastSquares::NAME, |_| Ok(Box::new(LeastSquares)));
        r
    }

    /// Adds or replaces the solver registered under `name`.
    pub fn register(&mut self, name: &'static str, factory: OptimizerFactory) {
        self.entries.retain(|(n, _)| !n.eq_ignore_ascii_case(name));
        self.entries.push((name, factory));
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.iter().map(|(n, _)| *n).collect()
    }

    /// Case-insensitive lookup of the registered spelling.
    pub fn canonical_name(&self, name: &str) -> Option<&'static str> {
        self.entries
            .iter()
            .find(|(n, _)| n.eq_ignore_ascii_case(name))
            .map(|(n, _)| *n)
    }

    pub fn build(&self, spec: &OptimizerSpec) -> Result<Box<dyn SparseOptimizer>, OptimizerError> {
        let (_, factory) = self
            .entries
            .iter()
            .find(|(n, _)| n.eq_ignore_ascii_case(&spec.kind))
            .ok_or_else(|| OptimizerError::UnknownKind(spec.kind.clone()))?;
        factory(spec)
    }

    pub fn solve(
        &self,
        theta: &DMatrix<f64>,
        xdot: &DMatrix<f64>,
        spec: &OptimizerSpec,
    ) -> Result<SolveOutput, OptimizerError> {
        if theta.nrows() != xdot.nrows() {
            return Err(OptimizerError::DimensionMismatch {
                theta: theta.nrows(),
                xdot: xdot.nrows(),
            });
        }
        if theta.iter().chain(xdot.iter()).any(|v| !v.is_finite()) {
            return Err(OptimizerError::NonFinite);
        }
        Ok(self.build(spec)?.fit(theta, xdot))
    }
}

impl Default for OptimizerRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}

/// Dispatches `spec` through the builtin registry.
pub fn solve(
    theta: &DMatrix<f64>,
    xdot: &DMatrix<f64>,
    spec: &OptimizerSpec,
) -> Result<SolveOutput, OptimizerError> {
    OptimizerRegistry::builtin().solve(theta, xdot, spec)
}

pub fn stlsq(theta: &DMatrix<f64>, xdot: &DMatrix<f64>, spec: &OptimizerSpec) -> Result<SolveOutput, OptimizerError> {
    check_kind(spec, Stlsq::NAME)?;
    solve(theta, xdot, spec)
}

pub fn sr3(theta: &DMatrix<f64>, xdot: &DMatrix<f64>, spec: &OptimizerSpec) -> Result<SolveOutput, OptimizerError> {
    check_kind(spec, Sr3::NAME)?;
    solve(theta, xdot, spec)
}

fn check_kind(spec: &OptimizerSpec, kind: &str) -> Result<(), OptimizerError> {
    if spec.kind.eq_ignore_ascii_case(kind) {
        Ok(())
    } else {
        Err(OptimizerError::InvalidParameter {
            kind: kind.to_string(),
            field: "kind",
            reason: format!("spec selects {}", spec.kind),
        })
    }
}

pub(crate) fn check_threshold(kind: &str, t: f64) -> Result<(), OptimizerError> {
    if t.is_finite() && t >= 0.0 {
        Ok(())
    } else {
        Err(OptimizerError::InvalidParameter {
            kind: kind.into(),
            field: "threshold",
            reason: format!("must be a non-negative number, got {t}"),
        })
    }
}

pub(crate) fn check_max_iter(kind: &str, m: usize) -> Result<(), OptimizerError> {
    if m > 0 {
        Ok(())
    } else {
        Err(OptimizerError::InvalidParameter {
            kind: kind.into(),
            field: "max_iter",
            reason: "must be positive".into(),
        })
    }
}

/// Plain least squares on the full library.
pub struct LeastSquares;

impl LeastSquares {
    pub const NAME: &'static str = "LeastSquares";
}

impl SparseOptimizer for LeastSquares {
    fn name(&self) -> &'static str {
        Self::NAME
    }

    fn fit(&self, theta: &DMatrix<f64>, xdot: &DMatrix<f64>) -> SolveOutput {
        let p = theta.ncols();
        let factor = lstsq::Factorized::new(theta, 0.0);
        let mut xi = DMatrix::zeros(p, xdot.ncols());
        let mut dims = Vec::new();
        for j in 0..xdot.ncols() {
            let y = xdot.column(j).into_owned();
            let coef = factor.solve(&y, None);
            xi.set_column(j, &coef);
            let support: Vec<usize> = (0..p).filter(|&i| coef[i] != 0.0).collect();
            dims.push(DimensionDiagnostics {
                residual_history: vec![residual(theta, &coef, &y)],
                zeroed: support.is_empty(),
                support_history: vec![support],
                converged: true,
                rank_deficient: factor.rank_deficient,
            });
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

pub(crate) fn residual(theta: &DMatrix<f64>, coef: &DVector<f64>, y: &DVector<f64>) -> f64 {
    (theta * coef - y).norm()
}

/// Residual of a coefficient vector defined only on `active` columns.
pub(crate) fn residual_on(theta: &DMatrix<f64>, active: &[usize], coef: &DVector<f64>, y: &DVector<f64>) -> f64 {
    let mut r = -y.clone();
    for (c, &i) in coef.iter().zip(active) {
        r.axpy(*c, &theta.column(i), 1.0);
    }
    r.norm()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_resolves_names_case_insensitively() {
        let r = OptimizerRegistry::builtin();
        assert_eq!(r.names(), ["STLSQ", "SR3", "LeastSquares"]);
        assert_eq!(r.canonical_name("stlsq"), Some("STLSQ"));
        assert_eq!(r.canonical_name("FROLS"), None);
        let mut bad = OptimizerSpec::stlsq(0.1);
        bad.kind = "TrappingSR3".into();
        assert!(matches!(r.build(&bad), Err(OptimizerError::UnknownKind(_))));
    }

    #[test]
    fn factories_validate_parameters() {
        let r = OptimizerRegistry::builtin();
        assert!(r.build(&OptimizerSpec::stlsq(-1.0)).is_err());
        let mut s = OptimizerSpec::sr3(0.1);
        s.nu = 0.0;
        assert!(r.build(&s).is_err());
        let mut s = OptimizerSpec::stlsq(0.1);
        s.max_iter = 0;
        assert!(r.build(&s).is_err());
    }

    #[test]
    fn custom_solver_can_be_registered() {
        struct Zero;
        impl SparseOptimizer for Zero {
            fn name(&self) -> &'static str {
                "Zero"
            }
            fn fit(&self, theta: &DMatrix<f64>, xdot: &DMatrix<f64>) -> SolveOutput {
                SolveOutput {
                    coefficients: Coefficients::from_xi(DMatrix::zeros(theta.ncols(), xdot.ncols())),
                    diagnostics: SolveDiagnostics::default(),
                }
            }
        }
        let mut r = OptimizerRegistry::builtin();
        r.register("Zero", |_| Ok(Box::new(Zero)));
        let mut spec = OptimizerSpec::least_squares();
        spec.kind = "zero".into();
        let out = r.solve(&DMatrix::identity(3, 2), &DMatrix::zeros(3, 1), &spec).unwrap();
        assert_eq!(out.coefficients.active_terms(), 0);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let e = solve(&DMatrix::zeros(3, 2), &DMatrix::zeros(4, 1), &OptimizerSpec::default());
        assert_eq!(e.unwrap_err(), OptimizerError::DimensionMismatch { theta: 3, xdot: 4 });
    }

    #[test]
    fn kind_specific_entry_points_check_kind() {
        let theta = DMatrix::identity(2, 2);
        let y = DMatrix::zeros(2, 1);
        assert!(stlsq(&theta, &y, &OptimizerSpec::sr3(0.1)).is_err());
        assert!(sr3(&theta, &y, &OptimizerSpec::sr3(0.1)).is_ok());
    }

    #[test]
    fn least_squares_is_unthresholded() {
        let theta = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 2.0]);
        let y = DMatrix::from_row_slice(3, 1, &[0.01, 1.01, 2.01]);
        let out = solve(&theta, &y, &OptimizerSpec::least_squares()).unwrap();
        assert!((out.coefficients.xi[(0, 0)] - 0.01).abs() < 1e-12);
        assert!((out.coefficients.xi[(1, 0)] - 1.0).abs() < 1e-12);
    }
}
