use nalgebra::DMatrix;

use super::{DynamicsError, Trajectory};

const UNIFORM_TOLERANCE: f64 = 1e-9;

/// Second-order finite differences: central in the interior, one-sided at
/// both endpoints. Requires a uniform grid with at least three samples.
pub fn finite_difference(traj: &Trajectory) -> Result<Trajectory, DynamicsError> {
    let times = traj.times();
    let k = times.len();
    if k < 3 {
        return Err(DynamicsError::InvalidArgument(format!(
            "finite differences need at least 3 samples, got {k}"
        )));
    }
    let dt = (times[k - 1] - times[0]) / (k - 1) as f64;
    let max_deviation = times
        .windows(2)
        .map(|w| ((w[1] - w[0]) - dt).abs() / dt)
        .fold(0.0, f64::max);
    if max_deviation > UNIFORM_TOLERANCE {
        return Err(DynamicsError::NonUniformGrid { max_deviation });
    }

    let x = traj.states();
    let n = x.ncols();
    let mut d = DMatrix::zeros(k, n);
    let h2 = 2.0 * dt;
    for j in 0..n {
        d[(0, j)] = (4.0 * (x[(1, j)] - x[(0, j)]) - (x[(2, j)] - x[(0, j)])) / h2;
        for i in 1..k - 1 {
            d[(i, j)] = (x[(i + 1, j)] - x[(i - 1, j)]) / h2;
        }
        d[(k - 1, j)] = (4.0 * (x[(k - 1, j)] - x[(k - 2, j)]) - (x[(k - 1, j)] - x[(k - 3, j)])) / h2;
    }
    traj.clone().with_derivatives(d)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sampled(dt: f64, k: usize, f: impl Fn(f64) -> f64) -> Trajectory {
        let times: Vec<f64> = (0..k).map(|i| i as f64 * dt).collect();
        let states = DMatrix::from_iterator(k, 1, times.iter().map(|&t| f(t)));
        Trajectory::new(times, states).unwrap()
    }

    #[test]
    fn exact_for_quadratics() {
        let t = finite_difference(&sampled(0.37, 12, |t| t * t)).unwrap();
        let d = t.derivatives().unwrap();
        for i in 0..12 {
            let expect = 2.0 * t.times()[i];
            assert!((d[(i, 0)] - expect).abs() < 1e-12, "row {i}: {} vs {expect}", d[(i, 0)]);
        }
        assert_eq!(t.states(), sampled(0.37, 12, |t| t * t).states());
    }

    #[test]
    fn constant_has_zero_derivative() {
        let t = finite_difference(&sampled(0.1, 5, |_| 4.2)).unwrap();
        assert!(t.derivatives().unwrap().iter().all(|&v| v == 0.0));
    }

    fn max_interior_sin_error(dt: f64) -> f64 {
        let k = (6.0 / dt) as usize;
        let t = finite_difference(&sampled(dt, k, f64::sin)).unwrap();
        let d = t.derivatives().unwrap();
        (1..k - 1)
            .map(|i| (d[(i, 0)] - t.times()[i].cos()).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn sine_error_within_taylor_bound() {
        let err = max_interior_sin_error(1e-2);
        assert!(err <= 1e-4 / 6.0, "err {err}");
    }

    #[test]
    fn central_difference_is_second_order() {
        let ratio = max_interior_sin_error(0.02) / max_interior_sin_error(0.01);
        assert!(ratio >= 3.5, "ratio {ratio}");
    }

    #[test]
    fn rejects_non_uniform_grid() {
        let times = vec![0.0, 0.1, 0.25, 0.3];
        let states = DMatrix::from_element(4, 1, 1.0);
        let t = Trajectory::new(times, states).unwrap();
        assert!(matches!(
            finite_difference(&t),
            Err(DynamicsError::NonUniformGrid { max_deviation }) if max_deviation > 0.4
        ));
    }

    #[test]
    fn rejects_short_trajectory() {
        assert!(finite_difference(&sampled(0.1, 2, |t| t)).is_err());
    }
}
