//! Feature libraries: the design matrix of candidate primitive functions.

mod expr;

use std::collections::HashSet;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use expr::{
    parse_term, BinOp, EvalError, Expr, Func, ParseError, TermExpr, MAX_TERM_DEPTH, MAX_TERM_LENGTH,
};

pub const MAX_POLYNOMIAL_DEGREE: u32 = 6;
pub const MAX_FOURIER_FREQUENCIES: u32 = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum LibraryPart {
    Polynomial {
        degree: u32,
        include_interaction: bool,
        include_bias: bool,
    },
    Fourier {
        n_frequencies: u32,
        include_sin: bool,
        include_cos: bool,
    },
    Custom { terms: Vec<TermExpr> },
}

impl LibraryPart {
    pub fn polynomial(degree: u32) -> Self {
        LibraryPart::Polynomial {
            degree,
            include_interaction: true,
            include_bias: true,
        }
    }

    pub fn fourier(n_frequencies: u32) -> Self {
        LibraryPart::Fourier {
            n_frequencies,
            include_sin: true,
            include_cos: true,
        }
    }

    fn validate(&self) -> Result<(), FeatureError> {
        match self {
            LibraryPart::Polynomial { degree, .. } if *degree > MAX_POLYNOMIAL_DEGREE => {
                Err(FeatureError::DegreeCap(*degree))
            }
            LibraryPart::Fourier { n_frequencies, .. }
                if *n_frequencies == 0 || *n_frequencies > MAX_FOURIER_FREQUENCIES =>
            {
                Err(FeatureError::FrequencyCap(*n_frequencies))
            }
            _ => Ok(()),
        }
    }
}

/// Ordered concatenation of library parts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<LibraryPart>", into = "Vec<LibraryPart>")]
pub struct FeatureLibrarySpec {
    parts: Vec<LibraryPart>,
}

impl FeatureLibrarySpec {
    pub fn new(parts: Vec<LibraryPart>) -> Result<Self, FeatureError> {
        if parts.is_empty() {
            return Err(FeatureError::EmptyLibrary);
        }
        for p in &parts {
            p.validate()?;
        }
        Ok(Self { parts })
    }

    /// Degree-`d` polynomial with interactions and bias.
    pub fn polynomial(degree: u32) -> Self {
        Self::new(vec![LibraryPart::polynomial(degree)]).expect("valid polynomial library")
    }

    pub fn parts(&self) -> &[LibraryPart] {
        &self.parts
    }

    /// Resolves the library against a state dimension.
    pub fn compile(&self, n: usize) -> Result<CompiledLibrary, FeatureError> {
        if n == 0 {
            return Err(FeatureError::Dimension(n));
        }
        let mut features = Vec::new();
        for part in &self.parts {
            match part {
                LibraryPart::Polynomial {
                    degree,
                    include_interaction,
                    include_bias,
                } => {
                    for d in 0..=*degree {
                        if d == 0 && !include_bias {
                            continue;
                        }
                        for exps in exponent_vectors(n, d) {
                            let nonzero = exps.iter().filter(|&&e| e > 0).count();
                            if *include_interaction || nonzero <= 1 {
                                features.push(Feature::Monomial(exps));
                            }
                        }
                    }
                }
                LibraryPart::Fourier {
                    n_frequencies,
                    include_sin,
                    include_cos,
                } => {
                    for k in 1..=*n_frequencies {
                        if *include_sin {
                            features.extend((0..n).map(|var| Feature::Sin { k, var }));
                        }
                        if *include_cos {
                            features.extend((0..n).map(|var| Feature::Cos { k, var }));
                        }
                    }
                }
                LibraryPart::Custom { terms } => {
                    for term in terms {
                        if let Some(index) = term.max_variable().filter(|&i| i >= n) {
                            return Err(FeatureError::VariableOutOfRange {
                                term: term.source.clone(),
                                index,
                                dimension: n,
                            });
                        }
                        features.push(Feature::Custom(term.clone()));
                    }
                }
            }
        }
        if features.is_empty() {
            return Err(FeatureError::NoFeatures);
        }
        let names: Vec<String> = features.iter().map(Feature::name).collect();
        let mut seen = HashSet::new();
        for name in &names {
            if !seen.insert(name.as_str()) {
                return Err(FeatureError::DuplicateName(name.clone()));
            }
        }
        Ok(CompiledLibrary {
            dimension: n,
            features,
            names,
        })
    }
}

impl TryFrom<Vec<LibraryPart>> for FeatureLibrarySpec {
    type Error = FeatureError;

    fn try_from(parts: Vec<LibraryPart>) -> Result<Self, Self::Error> {
        Self::new(parts)
    }
}

impl From<FeatureLibrarySpec> for Vec<LibraryPart> {
    fn from(spec: FeatureLibrarySpec) -> Self {
        spec.parts
    }
}

impl TryFrom<String> for TermExpr {
    type Error = ParseError;

    fn try_from(source: String) -> Result<Self, Self::Error> {
        parse_term(&source, usize::MAX)
    }
}

impl From<TermExpr> for String {
    fn from(t: TermExpr) -> Self {
        t.source
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FeatureError {
    #[error("feature library has no parts")]
    EmptyLibrary,
    #[error("polynomial degree {0} exceeds cap {MAX_POLYNOMIAL_DEGREE}")]
    DegreeCap(u32),
    #[error("n_frequencies {0} outside 1..={MAX_FOURIER_FREQUENCIES}")]
    FrequencyCap(u32),
    #[error("feature library produces no features")]
    NoFeatures,
    #[error("duplicate feature name {0:?}")]
    DuplicateName(String),
    #[error("state dimension must be positive, got {0}")]
    Dimension(usize),
    #[error("term {term:?} references x{index} but the state has dimension {dimension}")]
    VariableOutOfRange {
        term: String,
        index: usize,
        dimension: usize,
    },
    #[error("data has {got} columns, library was built for dimension {expected}")]
    ColumnMismatch { expected: usize, got: usize },
    #[error("feature {term:?} failed at row {row}: {error}")]
    TermEval {
        term: String,
        row: usize,
        error: EvalError,
    },
}

#[derive(Debug, Clone, PartialEq)]
enum Feature {
    Monomial(Vec<u32>),
    Sin { k: u32, var: usize },
    Cos { k: u32, var: usize },
    Custom(TermExpr),
}

impl Feature {
    fn name(&self) -> String {
        fn trig(f: &str, k: u32, var: usize) -> String {
            if k == 1 {
                format!("{f}(x{var})")
            } else {
                format!("{f}({k} x{var})")
            }
        }
        match self {
            Feature::Monomial(exps) => {
                let factors: Vec<String> = exps
                    .iter()
                    .enumerate()
                    .filter(|(_, &e)| e > 0)
                    .map(|(i, &e)| if e == 1 { format!("x{i}") } else { format!("x{i}^{e}") })
                    .collect();
                if factors.is_empty() {
                    "1".into()
                } else {
                    factors.join(" ")
                }
            }
            Feature::Sin { k, var } => trig("sin", *k, *var),
            Feature::Cos { k, var } => trig("cos", *k, *var),
            Feature::Custom(t) => t.source.clone(),
        }
    }

    fn eval(&self, x: &[f64]) -> Result<f64, EvalError> {
        match self {
            Feature::Monomial(exps) => Ok(exps
                .iter()
                .zip(x)
                .filter(|(&e, _)| e > 0)
                .map(|(&e, &v)| v.powi(e as i32))
                .product()),
            Feature::Sin { k, var } => Ok((*k as f64 * x[*var]).sin()),
            Feature::Cos { k, var } => Ok((*k as f64 * x[*var]).cos()),
            Feature::Custom(t) => t.eval(x),
        }
    }
}

/// All exponent vectors of `n` variables with total degree `d`, in
/// descending lexicographic order (`x0^2`, `x0 x1`, `x1^2`, ...).
fn exponent_vectors(n: usize, d: u32) -> Vec<Vec<u32>> {
    fn rec(n: usize, d: u32, prefix: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if n == 1 {
            prefix.push(d);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for e in (0..=d).rev() {
            prefix.push(e);
            rec(n - 1, d - e, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    rec(n, d, &mut Vec::with_capacity(n), &mut out);
    out
}

/// A library resolved against a state dimension, ready to evaluate.
#[derive(Debug, Clone, PartialEq)]
pub struct CompiledLibrary {
    dimension: usize,
    features: Vec<Feature>,
    names: Vec<String>,
}

impl CompiledLibrary {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Evaluates all features at one state.
    pub fn eval_row(&self, x: &[f64], out: &mut [f64]) -> Result<(), (usize, EvalError)> {
        for (j, (f, o)) in self.features.iter().zip(out.iter_mut()).enumerate() {
            let v = f.eval(x).map_err(|e| (j, e))?;
            if !v.is_finite() {
                return Err((j, EvalError::NonFinite));
            }
            *o = v;
        }
        Ok(())
    }

    pub fn design_matrix(&self, x: &DMatrix<f64>) -> Result<DesignMatrix, FeatureError> {
        if x.ncols() != self.dimension {
            return Err(FeatureError::ColumnMismatch {
                expected: self.dimension,
                got: x.ncols(),
            });
        }
        let (k, p) = (x.nrows(), self.len());
        let mut values = DMatrix::zeros(k, p);
        let mut state = vec![0.0; self.dimension];
        let mut row = vec![0.0; p];
        for i in 0..k {
            for (s, v) in state.iter_mut().zip(x.row(i).iter()) {
                *s = *v;
            }
            self.eval_row(&state, &mut row).map_err(|(j, error)| FeatureError::TermEval {
                term: self.names[j].clone(),
                row: i,
                error,
            })?;
            values.row_mut(i).copy_from_slice(&row);
        }
        Ok(DesignMatrix {
            values,
            feature_names: self.names.clone(),
        })
    }
}

/// `K x p` evaluation of the library with its column names.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    pub values: DMatrix<f64>,
    pub feature_names: Vec<String>,
}

/// Number of features `spec` produces for dimension `n`.
pub fn feature_count(spec: &FeatureLibrarySpec, n: usize) -> Result<usize, FeatureError> {
    Ok(spec.compile(n)?.len())
}

/// Builds `Theta(X)` for the `K x n` data matrix `x`.
pub fn build_design_matrix(
    spec: &FeatureLibrarySpec,
    x: &DMatrix<f64>,
) -> Result<DesignMatrix, FeatureError> {
    spec.compile(x.ncols())?.design_matrix(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn binom(n: u64, k: u64) -> u64 {
        (1..=k).fold(1, |acc, i| acc * (n + 1 - i) / i)
    }

    /// Brute-force monomial enumeration: every exponent tuple in
    /// `0..=d` per variable whose sum is at most `d`.
    fn brute_monomials(n: usize, d: u32) -> usize {
        let mut count = 0;
        let total = (d as usize + 1).pow(n as u32);
        for code in 0..total {
            let mut c = code;
            let mut sum = 0;
            for _ in 0..n {
                sum += c % (d as usize + 1);
                c /= d as usize + 1;
            }
            if sum <= d as usize {
                count += 1;
            }
        }
        count
    }

    #[test]
    fn polynomial_counts() {
        assert_eq!(feature_count(&FeatureLibrarySpec::polynomial(2), 2).unwrap(), 6);
        assert_eq!(feature_count(&FeatureLibrarySpec::polynomial(0), 3).unwrap(), 1);
        for n in 1..=4 {
            for d in 0..=4 {
                let p = feature_count(&FeatureLibrarySpec::polynomial(d), n).unwrap();
                assert_eq!(p, brute_monomials(n, d), "n={n} d={d}");
                assert_eq!(p as u64, binom((n as u64) + d as u64, d as u64));
            }
        }
    }

    #[test]
    fn fourier_count() {
        let spec = FeatureLibrarySpec::new(vec![LibraryPart::fourier(2)]).unwrap();
        assert_eq!(feature_count(&spec, 1).unwrap(), 4);
        let lib = spec.compile(1).unwrap();
        assert_eq!(lib.names(), ["sin(x0)", "cos(x0)", "sin(2 x0)", "cos(2 x0)"]);
    }

    #[test]
    fn pure_powers_without_interaction() {
        let spec = FeatureLibrarySpec::new(vec![LibraryPart::Polynomial {
            degree: 2,
            include_interaction: false,
            include_bias: false,
        }])
        .unwrap();
        assert_eq!(spec.compile(2).unwrap().names(), ["x0", "x1", "x0^2", "x1^2"]);
    }

    #[test]
    fn design_matrix_examples() {
        let x = DMatrix::from_row_slice(1, 2, &[2.0, 3.0]);
        let m = build_design_matrix(&FeatureLibrarySpec::polynomial(1), &x).unwrap();
        assert_eq!(m.feature_names, ["1", "x0", "x1"]);
        assert_eq!(m.values.as_slice(), &[1.0, 2.0, 3.0]);

        let x = DMatrix::from_row_slice(1, 2, &[1.0, 2.0]);
        let m = build_design_matrix(&FeatureLibrarySpec::polynomial(2), &x).unwrap();
        assert_eq!(m.feature_names, ["1", "x0", "x1", "x0^2", "x0 x1", "x1^2"]);
        assert_eq!(m.values.as_slice(), &[1.0, 1.0, 2.0, 1.0, 2.0, 4.0]);

        let sin_only = FeatureLibrarySpec::new(vec![LibraryPart::Fourier {
            n_frequencies: 1,
            include_sin: true,
            include_cos: false,
        }])
        .unwrap();
        let m = build_design_matrix(&sin_only, &DMatrix::zeros(1, 1)).unwrap();
        assert_eq!(m.values.as_slice(), &[0.0]);
    }

    #[test]
    fn validation_errors() {
        assert_eq!(FeatureLibrarySpec::new(vec![]), Err(FeatureError::EmptyLibrary));
        let err = FeatureLibrarySpec::new(vec![LibraryPart::polynomial(99)]).unwrap_err();
        assert_eq!(err.to_string(), "polynomial degree 99 exceeds cap 6");
        assert!(FeatureLibrarySpec::new(vec![LibraryPart::fourier(9)]).is_err());
        let dup = FeatureLibrarySpec::new(vec![
            LibraryPart::polynomial(1),
            LibraryPart::Custom { terms: vec![parse_term("x0", 1).unwrap()] },
        ])
        .unwrap();
        assert_eq!(dup.compile(1), Err(FeatureError::DuplicateName("x0".into())));
        let none = FeatureLibrarySpec::new(vec![LibraryPart::Polynomial {
            degree: 0,
            include_interaction: true,
            include_bias: false,
        }])
        .unwrap();
        assert_eq!(none.compile(2), Err(FeatureError::NoFeatures));
        let far = FeatureLibrarySpec::new(vec![LibraryPart::Custom {
            terms: vec![parse_term("x4", 9).unwrap()],
        }])
        .unwrap();
        assert!(matches!(far.compile(2), Err(FeatureError::VariableOutOfRange { index: 4, .. })));
    }

    #[test]
    fn custom_log_domain_is_an_error() {
        let spec = FeatureLibrarySpec::new(vec![LibraryPart::Custom {
            terms: vec![parse_term("log(x0)", 1).unwrap()],
        }])
        .unwrap();
        let x = DMatrix::from_column_slice(3, 1, &[1.0, 2.0, -1.0]);
        match build_design_matrix(&spec, &x) {
            Err(FeatureError::TermEval { term, row, .. }) => {
                assert_eq!(term, "log(x0)");
                assert_eq!(row, 2);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn spec_serde_round_trip() {
        let spec = FeatureLibrarySpec::new(vec![
            LibraryPart::polynomial(2),
            LibraryPart::fourier(3),
            LibraryPart::Custom { terms: vec![parse_term("exp(-x1)", 2).unwrap()] },
        ])
        .unwrap();
        let json = serde_json::to_string(&spec).unwrap();
        let back: FeatureLibrarySpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back, spec);
        assert!(serde_json::from_str::<FeatureLibrarySpec>("[]").is_err());
    }
}
