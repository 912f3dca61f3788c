use nalgebra::DMatrix;

use super::{DynamicsError, Trajectory, VectorField};

/// States with any component above this magnitude count as divergence.
pub const DIVERGENCE_LIMIT: f64 = 1e9;

/// Fixed-step classical fourth-order Runge-Kutta.
///
/// Returns `steps + 1` samples at `t = 0, dt, ..., steps * dt`.
pub fn integrate<F: VectorField + ?Sized>(
    field: &F,
    x0: &[f64],
    dt: f64,
    steps: usize,
) -> Result<Trajectory, DynamicsError> {
    let n = field.dimension();
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(DynamicsError::InvalidArgument(format!("dt must be positive, got {dt}")));
    }
    if steps < 2 {
        return Err(DynamicsError::InvalidArgument(format!("steps must be >= 2, got {steps}")));
    }
    if x0.len() != n {
        return Err(DynamicsError::InvalidArgument(format!(
            "initial state has dimension {}, system has {n}",
            x0.len()
        )));
    }
    if x0.iter().any(|v| !v.is_finite() || v.abs() > DIVERGENCE_LIMIT) {
        return Err(DynamicsError::Diverged { step: 0 });
    }

    let mut states = DMatrix::zeros(steps + 1, n);
    let mut x = x0.to_vec();
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut tmp = vec![0.0; n];
    states.row_mut(0).copy_from_slice(&x);

    for step in 1..=steps {
        let eval = |x: &[f64], out: &mut [f64]| {
            field
                .eval(x, out)
                .map_err(|message| DynamicsError::Field { step, message })
        };
        eval(&x, &mut k1)?;
        axpy(&x, 0.5 * dt, &k1, &mut tmp);
        eval(&tmp, &mut k2)?;
        axpy(&x, 0.5 * dt, &k2, &mut tmp);
        eval(&tmp, &mut k3)?;
        axpy(&x, dt, &k3, &mut tmp);
        eval(&tmp, &mut k4)?;
        for i in 0..n {
            x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if x.iter().any(|v| !v.is_finite() || v.abs() > DIVERGENCE_LIMIT) {
            return Err(DynamicsError::Diverged { step });
        }
        states.row_mut(step).copy_from_slice(&x);
    }

    let times = (0..=steps).map(|k| k as f64 * dt).collect();
    Trajectory::new(times, states)
}

fn axpy(x: &[f64], a: f64, k: &[f64], out: &mut [f64]) {
    for ((o, xi), ki) in out.iter_mut().zip(x).zip(k) {
        *o = xi + a * ki;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Field<F>(usize, F);

    impl<F: Fn(&[f64], &mut [f64])> VectorField for Field<F> {
        fn dimension(&self) -> usize {
            self.0
        }
        fn eval(&self, x: &[f64], dx: &mut [f64]) -> Result<(), String> {
            (self.1)(x, dx);
            Ok(())
        }
    }

    fn decay() -> Field<impl Fn(&[f64], &mut [f64])> {
        Field(1, |x: &[f64], dx: &mut [f64]| dx[0] = -x[0])
    }

    #[test]
    fn zero_field_is_stationary() {
        let f = Field(2, |_: &[f64], dx: &mut [f64]| dx.fill(0.0));
        let t = integrate(&f, &[1.0, 2.0], 0.1, 10).unwrap();
        assert_eq!(t.len(), 11);
        for k in 0..t.len() {
            assert_eq!(t.state(k), vec![1.0, 2.0]);
        }
        assert!(t.derivatives().is_none());
    }

    #[test]
    fn exponential_decay_matches_closed_form() {
        let t = integrate(&decay(), &[1.0], 1e-3, 1000).unwrap();
        let x1 = t.states()[(1000, 0)];
        assert!((x1 - (-1.0f64).exp()).abs() < 1e-9, "x(1) = {x1}");
        assert!((t.times()[1000] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn error_shrinks_at_fourth_order() {
        let err = |dt: f64, steps: usize| {
            let t = integrate(&decay(), &[1.0], dt, steps).unwrap();
            (t.states()[(steps, 0)] - (-1.0f64).exp()).abs()
        };
        let ratio = err(0.1, 10) / err(0.05, 20);
        assert!(ratio >= 14.0, "ratio {ratio}");
    }

    #[test]
    fn deterministic() {
        let a = integrate(&decay(), &[0.3], 0.01, 50).unwrap();
        let b = integrate(&decay(), &[0.3], 0.01, 50).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn divergence_names_step() {
        let blowup = Field(1, |x: &[f64], dx: &mut [f64]| dx[0] = x[0] * x[0]);
        match integrate(&blowup, &[1.0], 0.1, 100) {
            Err(DynamicsError::Diverged { step }) => assert!(step > 1 && step <= 11, "step {step}"),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(integrate(&decay(), &[1.0], 0.0, 10).is_err());
        assert!(integrate(&decay(), &[1.0], 0.1, 1).is_err());
        assert!(integrate(&decay(), &[1.0, 2.0], 0.1, 10).is_err());
    }
}
