//! Benchmark dynamical systems, trajectory generation and derivative estimates.

mod csv_io;
mod diff;
mod integrate;
mod registry;

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use thiserror::Error;

pub use csv_io::{read_csv, write_csv};
pub use diff::finite_difference;
pub use integrate::integrate;
pub use registry::{find_system, registry};

/// Right-hand side `f(x)` of an autonomous ODE `dx/dt = f(x)`.
pub trait VectorField {
    fn dimension(&self) -> usize;

    /// Writes `f(x)` into `dx`. Errors carry a human-readable reason.
    fn eval(&self, x: &[f64], dx: &mut [f64]) -> Result<(), String>;
}

impl<T: VectorField + ?Sized> VectorField for &T {
    fn dimension(&self) -> usize {
        (**self).dimension()
    }

    fn eval(&self, x: &[f64], dx: &mut [f64]) -> Result<(), String> {
        (**self).eval(x, dx)
    }
}

pub type Rhs = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// Per-output-dimension list of `(feature name, coefficient)` pairs.
pub type GroundTruth = Vec<Vec<(String, f64)>>;

/// Default data-generation protocol of a benchmark system.
#[derive(Debug, Clone, PartialEq)]
pub struct Protocol {
    pub train_inits: Vec<Vec<f64>>,
    pub test_inits: Vec<Vec<f64>>,
    pub dt: f64,
    pub steps: usize,
}

#[derive(Clone)]
pub struct SystemDefinition {
    pub id: String,
    pub dimension: usize,
    pub rhs: Rhs,
    pub params: Vec<(String, f64)>,
    /// Free-text description used as the text part of the observation.
    pub description: String,
    pub ground_truth_terms: Option<GroundTruth>,
    pub protocol: Protocol,
}

impl fmt::Debug for SystemDefinition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SystemDefinition")
            .field("id", &self.id)
            .field("dimension", &self.dimension)
            .field("params", &self.params)
            .field("ground_truth_terms", &self.ground_truth_terms)
            .field("protocol", &self.protocol)
            .finish_non_exhaustive()
    }
}

impl VectorField for SystemDefinition {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn eval(&self, x: &[f64], dx: &mut [f64]) -> Result<(), String> {
        (self.rhs)(x, dx);
        Ok(())
    }
}

impl SystemDefinition {
    pub fn param(&self, name: &str) -> Option<f64> {
        self.params.iter().find(|(k, _)| k == name).map(|(_, v)| *v)
    }

    /// Evaluates the right-hand side at a single state.
    pub fn eval_at(&self, x: &[f64]) -> Vec<f64> {
        let mut dx = vec![0.0; self.dimension];
        (self.rhs)(x, &mut dx);
        dx
    }

    /// Builds the train/test dataset of the system's default protocol.
    pub fn default_dataset(&self) -> Result<Dataset, DynamicsError> {
        let p = &self.protocol;
        make_dataset(self, &p.train_inits, &p.test_inits, p.dt, p.steps)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("integration diverged at step {step}")]
    Diverged { step: usize },
    #[error("vector field failed at step {step}: {message}")]
    Field { step: usize, message: String },
    #[error("time grid is not uniform (max relative deviation {max_deviation:e})")]
    NonUniformGrid { max_deviation: f64 },
    #[error("{split} initial condition #{index}: {source}")]
    Init {
        split: &'static str,
        index: usize,
        #[source]
        source: Box<DynamicsError>,
    },
    #[error("csv: {0}")]
    Csv(String),
}

/// Time-stamped samples of an `n`-dimensional state.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    times: Vec<f64>,
    states: DMatrix<f64>,
    derivatives: Option<DMatrix<f64>>,
}

impl Trajectory {
    pub fn new(times: Vec<f64>, states: DMatrix<f64>) -> Result<Self, DynamicsError> {
        if times.len() != states.nrows() {
            return Err(DynamicsError::InvalidArgument(format!(
                "{} timestamps for {} state rows",
                times.len(),
                states.nrows()
            )));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(DynamicsError::InvalidArgument(
                "timestamps must be strictly increasing".into(),
            ));
        }
        if times.iter().chain(states.iter()).any(|v| !v.is_finite()) {
            return Err(DynamicsError::InvalidArgument(
                "trajectory contains non-finite values".into(),
            ));
        }
        Ok(Self {
            times,
            states,
            derivatives: None,
        })
    }

    pub fn with_derivatives(mut self, derivatives: DMatrix<f64>) -> Result<Self, DynamicsError> {
        if derivatives.shape() != self.states.shape() {
            return Err(DynamicsError::InvalidArgument(format!(
                "derivative shape {:?} differs from state shape {:?}",
                derivatives.shape(),
                self.states.shape()
            )));
        }
        if derivatives.iter().any(|v| !v.is_finite()) {
            return Err(DynamicsError::InvalidArgument(
                "derivatives contain non-finite values".into(),
            ));
        }
        self.derivatives = Some(derivatives);
        Ok(self)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// `K x n` state matrix.
    pub fn states(&self) -> &DMatrix<f64> {
        &self.states
    }

    pub fn derivatives(&self) -> Option<&DMatrix<f64>> {
        self.derivatives.as_ref()
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dimension(&self) -> usize {
        self.states.ncols()
    }

    pub fn state(&self, k: usize) -> Vec<f64> {
        self.states.row(k).iter().copied().collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub system_id: String,
    pub train: Vec<Trajectory>,
    pub test: Vec<Trajectory>,
}

impl Dataset {
    pub fn new(
        system_id: impl Into<String>,
        train: Vec<Trajectory>,
        test: Vec<Trajectory>,
    ) -> Result<Self, DynamicsError> {
        if train.is_empty() || test.is_empty() {
            return Err(DynamicsError::InvalidArgument(
                "dataset needs at least one train and one test trajectory".into(),
            ));
        }
        let n = train[0].dimension();
        if train.iter().chain(&test).any(|t| t.dimension() != n) {
            return Err(DynamicsError::InvalidArgument(
                "all trajectories must share one dimension".into(),
            ));
        }
        Ok(Self {
            system_id: system_id.into(),
            train,
            test,
        })
    }

    pub fn dimension(&self) -> usize {
        self.train[0].dimension()
    }
}

/// Integrates every initial condition and fills derivatives by finite
/// differences.
pub fn make_dataset(
    system: &SystemDefinition,
    train_inits: &[Vec<f64>],
    test_inits: &[Vec<f64>],
    dt: f64,
    steps: usize,
) -> Result<Dataset, DynamicsError> {
    if train_inits.is_empty() || test_inits.is_empty() {
        return Err(DynamicsError::InvalidArgument(
            "need at least one train and one test initial condition".into(),
        ));
    }
    let run = |split: &'static str, inits: &[Vec<f64>]| -> Result<Vec<Trajectory>, DynamicsError> {
        inits
            .iter()
            .enumerate()
            .map(|(index, x0)| {
                integrate(system, x0, dt, steps)
                    .and_then(|t| finite_difference(&t))
                    .map_err(|e| DynamicsError::Init {
                        split,
                        index,
                        source: Box::new(e),
                    })
            })
            .collect()
    };
    let train = run("train", train_inits)?;
    let test = run("test", test_inits)?;
    Dataset::new(system.id.clone(), train, test)
}
