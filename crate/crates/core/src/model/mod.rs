//! Fitting, scoring, simulation and printing of SINDy models.

mod r2;
pub mod serde_r2;

use std::cmp::Ordering;
use std::fmt;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{integrate, Dataset, DynamicsError, Trajectory, VectorField};
use crate::features::{parse_term, CompiledLibrary, FeatureError, FeatureLibrarySpec};
use crate::fmt::sig;
use crate::sparse_opt::{self, Coefficients, OptimizerError, OptimizerSpec, SolveDiagnostics};

pub use r2::{r2, r2_per_column};

/// Test R2 values closer than this are ties.
pub const SCORE_TIE_TOLERANCE: f64 = 1e-12;
pub const MODEL_FORMAT_VERSION: u32 = 1;
pub const EQUATION_DIGITS: usize = 6;

/// Which proposal produced a model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub candidate_id: String,
    pub iteration: usize,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} (iteration {})", self.candidate_id, self.iteration)
    }
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Optimizer(#[from] OptimizerError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error("{split} trajectory #{index} has no derivatives")]
    MissingDerivatives { split: &'static str, index: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("candidate {provenance}: {source}")]
    Candidate {
        provenance: Provenance,
        #[source]
        source: Box<ModelError>,
    },
    #[error("model file: {0}")]
    Format(String),
    #[error("model file io: {0}")]
    Io(#[from] std::io::Error),
}

/// A fitted model `dx/dt = Xi^T Theta(x)`. Immutable after fitting.
#[derive(Debug, Clone)]
pub struct SindyModel {
    library: FeatureLibrarySpec,
    optimizer: OptimizerSpec,
    compiled: CompiledLibrary,
    coefficients: Coefficients,
    diagnostics: SolveDiagnostics,
    provenance: Option<Provenance>,
}

impl PartialEq for SindyModel {
    fn eq(&self, other: &Self) -> bool {
        self.library == other.library
            && self.optimizer == other.optimizer
            && self.coefficients == other.coefficients
            && self.provenance == other.provenance
    }
}

fn stack<'a>(
    split: &'static str,
    trajs: impl Iterator<Item = &'a Trajectory>,
) -> Result<(DMatrix<f64>, DMatrix<f64>), ModelError> {
    let trajs: Vec<&Trajectory> = trajs.collect();
    let n = trajs.first().map_or(0, |t| t.dimension());
    let rows: usize = trajs.iter().map(|t| t.len()).sum();
    let mut x = DMatrix::zeros(rows, n);
    let mut dx = DMatrix::zeros(rows, n);
    let mut at = 0;
    for (index, t) in trajs.iter().enumerate() {
        let d = t.derivatives().ok_or(ModelError::MissingDerivatives { split, index })?;
        let k = t.len();
        x.rows_mut(at, k).copy_from(t.states());
        dx.rows_mut(at, k).copy_from(d);
        at += k;
    }
    Ok((x, dx))
}

impl SindyModel {
    /// Fits on all train trajectories stacked row-wise.
    pub fn fit(
        dataset: &Dataset,
        library: &FeatureLibrarySpec,
        optimizer: &OptimizerSpec,
    ) -> Result<Self, ModelError> {
        let (x, dx) = stack("train", dataset.train.iter())?;
        Self::fit_matrices(&x, &dx, library, optimizer)
    }

    /// As [`SindyModel::fit`], tagging errors and the model with `provenance`.
    pub fn fit_candidate(
        dataset: &Dataset,
        library: &FeatureLibrarySpec,
        optimizer: &OptimizerSpec,
        provenance: Provenance,
    ) -> Result<Self, ModelError> {
        match Self::fit(dataset, library, optimizer) {
            Ok(mut m) => {
                m.provenance = Some(provenance);
                Ok(m)
            }
            Err(e) => Err(ModelError::Candidate {
                provenance,
                source: Box::new(e),
            }),
        }
    }

    /// Fits `dx ~= Theta(x) Xi` for `K x n` states and derivatives.
    pub fn fit_matrices(
        x: &DMatrix<f64>,
        dx: &DMatrix<f64>,
        library: &FeatureLibrarySpec,
        optimizer: &OptimizerSpec,
    ) -> Result<Self, ModelError> {
        if x.shape() != dx.shape() {
            return Err(ModelError::Shape(format!(
                "states are {:?} but derivatives are {:?}",
                x.shape(),
                dx.shape()
            )));
        }
        let compiled = library.compile(x.ncols())?;
        let theta = compiled.design_matrix(x)?;
        let out = sparse_opt::solve(&theta.values, dx, optimizer)?;
        Ok(Self {
            library: library.clone(),
            optimizer: optimizer.clone(),
            compiled,
            coefficients: out.coefficients,
            diagnostics: out.diagnostics,
            provenance: None,
        })
    }

    /// Builds a model from explicit coefficients (`p x n`).
    pub fn from_coefficients(
        library: &FeatureLibrarySpec,
        optimizer: &OptimizerSpec,
        dimension: usize,
        xi: DMatrix<f64>,
    ) -> Result<Self, ModelError> {
        let compiled = library.compile(dimension)?;
        if xi.shape() != (compiled.len(), dimension) {
            return Err(ModelError::Shape(format!(
                "coefficients are {:?}, library needs ({}, {dimension})",
                xi.shape(),
                compiled.len()
            )));
        }
        Ok(Self {
            library: library.clone(),
            optimizer: optimizer.clone(),
            compiled,
            coefficients: Coefficients::from_xi(xi),
            diagnostics: SolveDiagnostics::default(),
            provenance: None,
        })
    }

    pub fn library(&self) -> &FeatureLibrarySpec {
        &self.library
    }

    pub fn optimizer(&self) -> &OptimizerSpec {
        &self.optimizer
    }

    pub fn coefficients(&self) -> &Coefficients {
        &self.coefficients
    }

    pub fn diagnostics(&self) -> &SolveDiagnostics {
        &self.diagnostics
    }

    pub fn provenance(&self) -> Option<&Provenance> {
        self.provenance.as_ref()
    }

    /// The same fit attributed to another proposal.
    pub fn with_provenance(&self, provenance: Provenance) -> Self {
        Self { provenance: Some(provenance), ..self.clone() }
    }

    pub fn feature_names(&self) -> &[String] {
        self.compiled.names()
    }

    pub fn dimension(&self) -> usize {
        self.compiled.dimension()
    }

    pub fn active_terms(&self) -> usize {
        self.coefficients.active_terms()
    }

    /// Coefficient of `feature` in output `dim`, zero if absent.
    pub fn coefficient(&self, dim: usize, feature: &str) -> f64 {
        self.feature_names()
            .iter()
            .position(|n| n == feature)
            .map_or(0.0, |i| self.coefficients.xi[(i, dim)])
    }

    /// Nonzero `(feature, coefficient)` pairs per output dimension.
    pub fn terms(&self) -> Vec<Vec<(String, f64)>> {
        let xi = &self.coefficients.xi;
        (0..xi.ncols())
            .map(|j| {
                self.feature_names()
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| xi[(*i, j)] != 0.0)
                    .map(|(i, n)| (n.clone(), xi[(i, j)]))
                    .collect()
            })
            .collect()
    }

    /// `Theta(X) Xi` for a `K x n` state matrix.
    pub fn predict_derivatives(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>, ModelError> {
        let theta = self.compiled.design_matrix(x)?;
        Ok(theta.values * &self.coefficients.xi)
    }

    pub fn simulate(&self, x0: &[f64], dt: f64, steps: usize) -> Result<Trajectory, ModelError> {
        Ok(integrate(self, x0, dt, steps)?)
    }

    /// Derivative R2 on both splits plus simulation R2 on the first test
    /// trajectory. Evaluation failures yield a sentinel score.
    pub fn score(&self, dataset: &Dataset) -> Score {
        match self.try_score(dataset) {
            Ok(s) => s,
            Err(e) => Score::failed(e.to_string(), self.dimension()).with_active_terms(self.active_terms()),
        }
    }

    fn try_score(&self, dataset: &Dataset) -> Result<Score, ModelError> {
        let split = |name, trajs: &[Trajectory]| -> Result<Vec<f64>, ModelError> {
            let (x, dx) = stack(name, trajs.iter())?;
            let pred = self.predict_derivatives(&x)?;
            r2_per_column(&dx, &pred)
        };
        let train = split("train", &dataset.train)?;
        let test = split("test", &dataset.test)?;
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        Ok(Score {
            r2_train: mean(&train),
            r2_test: mean(&test),
            per_dimension: train
                .iter()
                .zip(&test)
                .map(|(&train, &test)| DimensionScore { train, test })
                .collect(),
            active_terms: self.active_terms(),
            simulation_r2: Some(self.simulation_r2(&dataset.test[0])),
            error: None,
        })
    }

    /// State R2 of a simulation from `reference`'s first sample on its grid.
    pub fn simulation_r2(&self, reference: &Trajectory) -> f64 {
        let t = reference.times();
        if t.len() < 3 {
            return f64::NEG_INFINITY;
        }
        let dt = (t[t.len() - 1] - t[0]) / (t.len() - 1) as f64;
        match self.simulate(&reference.state(0), dt, t.len() - 1) {
            Ok(sim) => r2(reference.states(), sim.states()).unwrap_or(f64::NEG_INFINITY),
            Err(_) => f64::NEG_INFINITY,
        }
    }

    /// One `dx{j}/dt = ...` line per output dimension.
    pub fn equation_text(&self) -> Vec<String> {
        self.equation_text_with_digits(EQUATION_DIGITS)
    }

    pub fn equation_text_with_digits(&self, digits: usize) -> Vec<String> {
        self.terms()
            .iter()
            .enumerate()
            .map(|(j, terms)| format!("dx{j}/dt = {}", format_rhs(terms, digits)))
            .collect()
    }

    pub fn to_file(&self) -> ModelFile {
        let xi = &self.coefficients.xi;
        ModelFile {
            format_version: MODEL_FORMAT_VERSION,
            library: self.library.clone(),
            optimizer: self.optimizer.clone(),
            dimension: self.dimension(),
            feature_names: self.feature_names().to_vec(),
            xi: (0..xi.nrows()).map(|i| xi.row(i).iter().copied().collect()).collect(),
            equations: self.equation_text(),
            provenance: self.provenance.clone(),
        }
    }

    pub fn from_file(file: &ModelFile) -> Result<Self, ModelError> {
        if file.format_version != MODEL_FORMAT_VERSION {
            return Err(ModelError::Format(format!(
                "unsupported format_version {}",
                file.format_version
            )));
        }
        let p = file.xi.len();
        let n = file.dimension;
        if file.xi.iter().any(|r| r.len() != n) {
            return Err(ModelError::Format(format!("coefficient rows must have {n} entries")));
        }
        let xi = DMatrix::from_fn(p, n, |i, j| file.xi[i][j]);
        let mut m = Self::from_coefficients(&file.library, &file.optimizer, n, xi)?;
        if m.feature_names() != file.feature_names.as_slice() {
            return Err(ModelError::Format("feature names do not match the library".into()));
        }
        m.provenance = file.provenance.clone();
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let text = serde_json::to_string_pretty(&self.to_file())
            .map_err(|e| ModelError::Format(e.to_string()))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let text = std::fs::read_to_string(path)?;
        let file: ModelFile =
            serde_json::from_str(&text).map_err(|e| ModelError::Format(e.to_string()))?;
        Self::from_file(&file)
    }
}

impl VectorField for SindyModel {
    fn dimension(&self) -> usize {
        self.compiled.dimension()
    }

    fn eval(&self, x: &[f64], dx: &mut [f64]) -> Result<(), String> {
        let mut theta = vec![0.0; self.compiled.len()];
        self.compiled
            .eval_row(x, &mut theta)
            .map_err(|(j, e)| format!("{}: {e}", self.compiled.names()[j]))?;
        let xi = &self.coefficients.xi;
        for (j, d) in dx.iter_mut().enumerate() {
            *d = theta.iter().enumerate().map(|(i, t)| t * xi[(i, j)]).sum();
        }
        Ok(())
    }
}

fn needs_parens(name: &str) -> bool {
    name.starts_with('-')
        || parse_term(name, usize::MAX).map_or(true, |t| t.ast.is_additive())
}

fn format_rhs(terms: &[(String, f64)], digits: usize) -> String {
    if terms.is_empty() {
        return "0".into();
    }
    let mut out = String::new();
    for (k, (name, c)) in terms.iter().enumerate() {
        let magnitude = if k == 0 { *c } else { c.abs() };
        if k > 0 {
            out.push_str(if *c < 0.0 { " - " } else { " + " });
        }
        out.push_str(&sig(magnitude, digits));
        if name != "1" {
            out.push(' ');
            if needs_parens(name) {
                out.push_str(&format!("({name})"));
            } else {
                out.push_str(name);
            }
        }
    }
    out
}

/// Splits the right-hand side of a printed equation into
/// `(coefficient, term)` pairs; the bias term is reported as `"1"`.
pub fn parse_equation_rhs(rhs: &str) -> Result<Vec<(f64, String)>, String> {
    let rhs = rhs.split_once('=').map_or(rhs, |(_, r)| r).trim();
    if rhs == "0" {
        return Ok(Vec::new());
    }
    let mut pieces = Vec::new();
    let mut depth = 0i32;
    let mut start = 0;
    let mut sign = 1.0;
    let bytes = rhs.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'(' => depth += 1,
            b')' => depth -= 1,
            b' ' if depth == 0
                && i + 2 < bytes.len()
                && matches!(bytes[i + 1], b'+' | b'-')
                && bytes[i + 2] == b' ' =>
            {
                pieces.push((sign, &rhs[start..i]));
                sign = if bytes[i + 1] == b'-' { -1.0 } else { 1.0 };
                i += 3;
                start = i;
                continue;
            }
            _ => {}
        }
        i += 1;
    }
    pieces.push((sign, &rhs[start..]));
    pieces
        .into_iter()
        .map(|(s, piece)| {
            let (num, name) = piece.split_once(' ').unwrap_or((piece, "1"));
            let c: f64 = num.parse().map_err(|_| format!("bad coefficient {num:?}"))?;
            let name = name.trim();
            let name = name
                .strip_prefix('(')
                .and_then(|n| n.strip_suffix(')'))
                .unwrap_or(name);
            Ok((s * c, name.to_string()))
        })
        .collect()
}

/// Train and test R2 of one output dimension.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DimensionScore {
    #[serde(with = "serde_r2")]
    pub train: f64,
    #[serde(with = "serde_r2")]
    pub test: f64,
}

/// Derivative R2 of a model per split. Failures carry `-inf` and the error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Score {
    #[serde(with = "serde_r2")]
    pub r2_train: f64,
    #[serde(with = "serde_r2")]
    pub r2_test: f64,
    pub per_dimension: Vec<DimensionScore>,
    pub active_terms: usize,
    #[serde(default, with = "serde_r2::option", skip_serializing_if = "Option::is_none")]
    pub simulation_r2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Score {
    pub fn failed(error: impl Into<String>, dimension: usize) -> Self {
        let s = f64::NEG_INFINITY;
        Self {
            r2_train: s,
            r2_test: s,
            per_dimension: vec![DimensionScore { train: s, test: s }; dimension],
            active_terms: 0,
            simulation_r2: None,
            error: Some(error.into()),
        }
    }

    fn with_active_terms(mut self, n: usize) -> Self {
        self.active_terms = n;
        self
    }

    pub fn is_failure(&self) -> bool {
        self.error.is_some()
    }

    /// Ranking by test R2, ties toward fewer active terms. `Greater` is better.
    pub fn rank(&self, other: &Score) -> Ordering {
        let (a, b) = (self.r2_test, other.r2_test);
        let tie = a == b || (a - b).abs() <= SCORE_TIE_TOLERANCE;
        if tie {
            other.active_terms.cmp(&self.active_terms)
        } else if a > b {
            Ordering::Greater
        } else {
            Ordering::Less
        }
    }

    pub fn better_than(&self, other: &Score) -> bool {
        self.rank(other) == Ordering::Greater
    }
}

/// Versioned on-disk model representation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: u32,
    pub library: FeatureLibrarySpec,
    pub optimizer: OptimizerSpec,
    pub dimension: usize,
    pub feature_names: Vec<String>,
    /// Row `i` holds the coefficients of feature `i`.
    pub xi: Vec<Vec<f64>>,
    pub equations: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

/// Fits and scores in one step; fit errors become a failed score.
pub fn fit_and_score(
    dataset: &Dataset,
    library: &FeatureLibrarySpec,
    optimizer: &OptimizerSpec,
) -> (Option<SindyModel>, Score) {
    match SindyModel::fit(dataset, library, optimizer) {
        Ok(m) => {
            let s = m.score(dataset);
            (Some(m), s)
        }
        Err(e) => (None, Score::failed(e.to_string(), dataset.dimension())),
    }
}
