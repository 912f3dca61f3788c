//! Desk-scale benchmark registry.
//!
//! Constants, integration lengths and initial conditions are fixed per system
//! and listed in each constructor. Ground-truth terms use the feature names
//! emitted by the polynomial and Fourier libraries.

use std::sync::Arc;

use super::{GroundTruth, Protocol, SystemDefinition};

/// All registered benchmark systems, in a stable order.
pub fn registry() -> Vec<SystemDefinition> {
    vec![
        lorenz(),
        logistic(),
        lotka_volterra(),
        van_der_pol(),
        rossler(),
        duffing(),
        damped_oscillator(),
        pendulum(),
        thomas(),
        sigmoid_growth(),
        gompertz(),
    ]
}

pub fn find_system(id: &str) -> Option<SystemDefinition> {
    registry().into_iter().find(|s| s.id == id)
}

fn terms(dims: &[&[(&str, f64)]]) -> Option<GroundTruth> {
    Some(
        dims.iter()
            .map(|d| d.iter().map(|(n, c)| (n.to_string(), *c)).collect())
            .collect(),
    )
}

fn params(p: &[(&str, f64)]) -> Vec<(String, f64)> {
    p.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

/// Lorenz convection model; t in [0, 10].
pub fn lorenz() -> SystemDefinition {
    let (sigma, rho, beta) = (10.0, 28.0, 2.66667);
    SystemDefinition {
        id: "lorenz".into(),
        dimension: 3,
        rhs: Arc::new(move |x, dx| {
            dx[0] = sigma * (x[1] - x[0]);
            dx[1] = x[0] * (rho - x[2]) - x[1];
            dx[2] = x[0] * x[1] - beta * x[2];
        }),
        params: params(&[("sigma", sigma), ("rho", rho), ("beta", beta)]),
        description: "The Lorenz system: three coupled nonlinear ordinary differential equations \
            modelling atmospheric convection. x0 is proportional to the rate of convection, x1 to \
            the horizontal temperature variation and x2 to the vertical temperature variation. \
            For the classical parameters the trajectory is chaotic and settles on a \
            butterfly-shaped strange attractor."
            .into(),
        ground_truth_terms: terms(&[
            &[("x0", -sigma), ("x1", sigma)],
            &[("x0", rho), ("x1", -1.0), ("x0 x2", -1.0)],
            &[("x2", -beta), ("x0 x1", 1.0)],
        ]),
        protocol: Protocol {
            train_inits: vec![vec![-8.0, 8.0, 27.0]],
            test_inits: vec![vec![8.0, 7.0, 15.0]],
            dt: 2e-3,
            steps: 5000,
        },
    }
}

/// Logistic growth with rate 1 and carrying capacity 5; t in [0, 10].
pub fn logistic() -> SystemDefinition {
    let (r, k) = (1.0, 5.0);
    SystemDefinition {
        id: "logistic".into(),
        dimension: 1,
        rhs: Arc::new(move |x, dx| dx[0] = r * x[0] * (1.0 - x[0] / k)),
        params: params(&[("r", r), ("K", k)]),
        description: "Logistic population growth: a single population grows at a rate \
            proportional to its size while competition for resources saturates it at a \
            carrying capacity."
            .into(),
        ground_truth_terms: terms(&[&[("x0", r), ("x0^2", -r / k)]]),
        protocol: Protocol {
            train_inits: vec![vec![0.5]],
            test_inits: vec![vec![8.0]],
            dt: 1e-2,
            steps: 1000,
        },
    }
}

/// Predator-prey model; t in [0, 20].
pub fn lotka_volterra() -> SystemDefinition {
    let (alpha, beta, delta, gamma) = (1.0, 0.5, 0.2, 0.6);
    SystemDefinition {
        id: "lotka_volterra".into(),
        dimension: 2,
        rhs: Arc::new(move |x, dx| {
            dx[0] = alpha * x[0] - beta * x[0] * x[1];
            dx[1] = delta * x[0] * x[1] - gamma * x[1];
        }),
        params: params(&[("alpha", alpha), ("beta", beta), ("delta", delta), ("gamma", gamma)]),
        description: "Lotka-Volterra predator-prey dynamics: x0 is the prey population which \
            grows exponentially without predators, x1 is the predator population which decays \
            without prey. Encounters between the two convert prey into predators, producing \
            closed periodic orbits."
            .into(),
        ground_truth_terms: terms(&[
            &[("x0", alpha), ("x0 x1", -beta)],
            &[("x1", -gamma), ("x0 x1", delta)],
        ]),
        protocol: Protocol {
            train_inits: vec![vec![4.0, 2.0]],
            test_inits: vec![vec![2.0, 3.0]],
            dt: 1e-2,
            steps: 2000,
        },
    }
}

/// Van der Pol relaxation oscillator, mu = 1.5; t in [0, 20].
pub fn van_der_pol() -> SystemDefinition {
    let mu = 1.5;
    SystemDefinition {
        id: "van_der_pol".into(),
        dimension: 2,
        rhs: Arc::new(move |x, dx| {
            dx[0] = x[1];
            dx[1] = mu * (1.0 - x[0] * x[0]) * x[1] - x[0];
        }),
        params: params(&[("mu", mu)]),
        description: "The Van der Pol oscillator: a nonconservative oscillator with nonlinear \
            damping that pumps energy in at small amplitude and dissipates it at large \
            amplitude, converging to a stable limit cycle. x0 is position and x1 velocity."
            .into(),
        ground_truth_terms: terms(&[
            &[("x1", 1.0)],
            &[("x0", -1.0), ("x1", mu), ("x0^2 x1", -mu)],
        ]),
        protocol: Protocol {
            train_inits: vec![vec![2.0, 0.0]],
            test_inits: vec![vec![-1.0, 1.0]],
            dt: 1e-2,
            steps: 2000,
        },
    }
}

/// Rossler attractor, a = b = 0.2, c = 5.7; t in [0, 50].
pub fn rossler() -> SystemDefinition {
    let (a, b, c) = (0.2, 0.2, 5.7);
    SystemDefinition {
        id: "rossler".into(),
        dimension: 3,
        rhs: Arc::new(move |x, dx| {
            dx[0] = -x[1] - x[2];
            dx[1] = x[0] + a * x[1];
            dx[2] = b + x[2] * (x[0] - c);
        }),
        params: params(&[("a", a), ("b", b), ("c", c)]),
        description: "The Rossler system: a three-dimensional flow with a single quadratic \
            nonlinearity. The state spirals outward in the x0-x1 plane and is occasionally \
            lifted and reinjected along x2, giving a chaotic band-shaped attractor."
            .into(),
        ground_truth_terms: terms(&[
            &[("x1", -1.0), ("x2", -1.0)],
            &[("x0", 1.0), ("x1", a)],
            &[("1", b), ("x2", -c), ("x0 x2", 1.0)],
        ]),
        protocol: Protocol {
            train_inits: vec![vec![1.0, 1.0, 0.0]],
            test_inits: vec![vec![-2.0, 0.0, 0.5]],
            dt: 1e-2,
            steps: 5000,
        },
    }
}

/// Unforced damped Duffing oscillator with a double-well potential; t in [0, 20].
pub fn duffing() -> SystemDefinition {
    let (delta, alpha, beta) = (0.3, -1.0, 1.0);
    SystemDefinition {
        id: "duffing".into(),
        dimension: 2,
        rhs: Arc::new(move |x, dx| {
            dx[0] = x[1];
            dx[1] = -delta * x[1] - alpha * x[0] - beta * x[0].powi(3);
        }),
        params: params(&[("delta", delta), ("alpha", alpha), ("beta", beta)]),
        description: "A damped Duffing oscillator: a particle in a double-well potential with \
            linear friction. x0 is displacement and x1 velocity; oscillations decay into one of \
            the two wells."
            .into(),
        ground_truth_terms: terms(&[
            &[("x1", 1.0)],
            &[("x0", -alpha), ("x1", -delta), ("x0^3", -beta)],
        ]),
        protocol: Protocol {
            train_inits: vec![vec![1.5, 0.0]],
            test_inits: vec![vec![-0.5, 0.8]],
            dt: 1e-2,
            steps: 2000,
        },
    }
}

/// Linear damped oscillator; t in [0, 10].
pub fn damped_oscillator() -> SystemDefinition {
    let (damping, omega) = (0.5, 2.0);
    SystemDefinition {
        id: "damped_oscillator".into(),
        dimension: 2,
        rhs: Arc::new(move |x, dx| {
            dx[0] = -damping * x[0] + omega * x[1];
            dx[1] = -omega * x[0] - damping * x[1];
        }),
        params: params(&[("damping", damping), ("omega", omega)]),
        description: "A linear damped harmonic oscillator written in rotating coordinates: both \
            states oscillate at a fixed angular frequency while their amplitude decays \
            exponentially towards the origin."
            .into(),
        ground_truth_terms: terms(&[
            &[("x0", -damping), ("x1", omega)],
            &[("x0", -omega), ("x1", -damping)],
        ]),
        protocol: Protocol {
            train_inits: vec![vec![2.0, 0.0]],
            test_inits: vec![vec![0.0, -1.0]],
            dt: 1e-2,
            steps: 1000,
        },
    }
}

/// Frictionless pendulum, g / L = 9.81; t in [0, 10].
pub fn pendulum() -> SystemDefinition {
    let g_over_l = 9.81;
    SystemDefinition {
        id: "pendulum".into(),
        dimension: 2,
        rhs: Arc::new(move |x, dx| {
            dx[0] = x[1];
            dx[1] = -g_over_l * x[0].sin();
        }),
        params: params(&[("g_over_l", g_over_l)]),
        description: "A frictionless simple pendulum: x0 is the angle from the vertical and x1 \
            the angular velocity. The restoring torque is proportional to the sine of the angle, \
            so large swings are anharmonic."
            .into(),
        ground_truth_terms: terms(&[&[("x1", 1.0)], &[("sin(x0)", -g_over_l)]]),
        protocol: Protocol {
            train_inits: vec![vec![1.0, 0.0]],
            test_inits: vec![vec![-0.5, 1.5]],
            dt: 1e-2,
            steps: 1000,
        },
    }
}

/// Thomas cyclically symmetric attractor, b = 0.208186; t in [0, 100].
pub fn thomas() -> SystemDefinition {
    let b = 0.208186;
    SystemDefinition {
        id: "thomas".into(),
        dimension: 3,
        rhs: Arc::new(move |x, dx| {
            dx[0] = x[1].sin() - b * x[0];
            dx[1] = x[2].sin() - b * x[1];
            dx[2] = x[0].sin() - b * x[2];
        }),
        params: params(&[("b", b)]),
        description: "Thomas' cyclically symmetric attractor: each state is driven by the sine \
            of the next state and damped linearly. The flow is invariant under cyclic \
            permutation of the three coordinates and wanders chaotically through a lattice of \
            cells."
            .into(),
        ground_truth_terms: terms(&[
            &[("x0", -b), ("sin(x1)", 1.0)],
            &[("x1", -b), ("sin(x2)", 1.0)],
            &[("x2", -b), ("sin(x0)", 1.0)],
        ]),
        protocol: Protocol {
            train_inits: vec![vec![0.1, 0.0, 0.0]],
            test_inits: vec![vec![1.0, -1.0, 0.5]],
            dt: 2e-2,
            steps: 5000,
        },
    }
}

/// Sigmoidal growth rate `1 / (1 + exp(c0 - x / c1))`, c0 = 0.5, c1 = 0.96; t in [0, 5].
///
/// Not a linear combination of library primitives.
pub fn sigmoid_growth() -> SystemDefinition {
    let (c0, c1) = (0.5, 0.96);
    SystemDefinition {
        id: "sigmoid_growth".into(),
        dimension: 1,
        rhs: Arc::new(move |x, dx| dx[0] = 1.0 / (1.0 + (c0 - x[0] / c1).exp())),
        params: params(&[("c0", c0), ("c1", c1)]),
        description: "A one-dimensional growth process whose rate is a logistic sigmoid of the \
            current state: growth is slow for small values, accelerates and saturates at a \
            constant maximal rate."
            .into(),
        ground_truth_terms: None,
        protocol: Protocol {
            train_inits: vec![vec![0.0]],
            test_inits: vec![vec![6.0]],
            dt: 1e-2,
            steps: 500,
        },
    }
}

/// Gompertz-type law `c0 x log(c1 x)`, c0 = -0.5, c1 = 1.5; t in [0, 10].
///
/// Not a linear combination of library primitives.
pub fn gompertz() -> SystemDefinition {
    let (c0, c1) = (-0.5, 1.5);
    SystemDefinition {
        id: "gompertz".into(),
        dimension: 1,
        rhs: Arc::new(move |x, dx| dx[0] = c0 * x[0] * (c1 * x[0]).ln()),
        params: params(&[("c0", c0), ("c1", c1)]),
        description: "Gompertz growth: a population or tumour volume whose relative growth rate \
            declines logarithmically with size, approaching a fixed saturation level."
            .into(),
        ground_truth_terms: None,
        protocol: Protocol {
            train_inits: vec![vec![0.2]],
            test_inits: vec![vec![3.0]],
            dt: 1e-2,
            steps: 1000,
        },
    }
}
