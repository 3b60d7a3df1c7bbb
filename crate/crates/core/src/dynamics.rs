//! Benchmark chaotic systems, integrated with fixed-step RK4.

use crate::error::{Error, Result};
use crate::series::{TimeSeries, TimeUnit};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

/// Classic fourth-order Runge-Kutta step for a 3-dimensional autonomous flow.
fn rk4_step<F: Fn(&[f64; 3]) -> [f64; 3]>(f: &F, y: &[f64; 3], dt: f64) -> [f64; 3] {
    let k1 = f(y);
    let y2 = [
        y[0] + 0.5 * dt * k1[0],
        y[1] + 0.5 * dt * k1[1],
        y[2] + 0.5 * dt * k1[2],
    ];
    let k2 = f(&y2);
    let y3 = [
        y[0] + 0.5 * dt * k2[0],
        y[1] + 0.5 * dt * k2[1],
        y[2] + 0.5 * dt * k2[2],
    ];
    let k3 = f(&y3);
    let y4 = [y[0] + dt * k3[0], y[1] + dt * k3[1], y[2] + dt * k3[2]];
    let k4 = f(&y4);
    [
        y[0] + dt / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
        y[1] + dt / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
        y[2] + dt / 6.0 * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2]),
    ]
}

fn integrate<F: Fn(&[f64; 3]) -> [f64; 3]>(
    f: F,
    initial: [f64; 3],
    dt: f64,
    n_samples: usize,
    discard: usize,
    unit_dt: f64,
) -> Result<TimeSeries> {
    let mut y = initial;
    for _ in 0..discard {
        y = rk4_step(&f, &y, dt);
        if !y.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                context: "trajectory integration (transient)",
            });
        }
    }
    let mut values = DMatrix::zeros(n_samples, 3);
    for k in 0..n_samples {
        if k > 0 {
            y = rk4_step(&f, &y, dt);
        }
        if !y.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                context: "trajectory integration",
            });
        }
        values[(k, 0)] = y[0];
        values[(k, 1)] = y[1];
        values[(k, 2)] = y[2];
    }
    TimeSeries::new(unit_dt, TimeUnit::Seconds, values)
}

fn check_common(dt: f64, n_samples: usize) -> Result<()> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidParameter {
            name: "dt",
            reason: format!("integration step must be positive and finite, got {dt}"),
        });
    }
    if n_samples == 0 {
        return Err(Error::InvalidParameter {
            name: "n_samples",
            reason: "need at least one sample".into(),
        });
    }
    Ok(())
}

/// Lorenz-63 parameters. Defaults are the usual chaotic setting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LorenzParams {
    pub sigma: f64,
    pub rho: f64,
    pub beta: f64,
    pub initial: [f64; 3],
    pub dt: f64,
    pub n_samples: usize,
    /// Integration steps dropped before the first recorded sample, letting the
    /// trajectory settle onto the attractor.
    pub discard: usize,
}

impl Default for LorenzParams {
    fn default() -> Self {
        LorenzParams {
            sigma: 10.0,
            rho: 28.0,
            beta: 8.0 / 3.0,
            initial: [1.0, 1.0, 1.0],
            dt: 0.02,
            n_samples: 5000,
            discard: 1000,
        }
    }
}

/// Integrate the Lorenz system
/// `x' = sigma (y - x), y' = x (rho - z) - y, z' = x y - beta z`.
///
/// Sample 0 is the state after `discard` steps; with `discard = 0` it is the
/// initial condition itself.
pub fn generate_lorenz(p: &LorenzParams) -> Result<TimeSeries> {
    check_common(p.dt, p.n_samples)?;
    for (name, v) in [("sigma", p.sigma), ("rho", p.rho), ("beta", p.beta)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "lorenz",
                reason: format!("{name} must be positive and finite, got {v}"),
            });
        }
    }
    let (sigma, rho, beta) = (p.sigma, p.rho, p.beta);
    integrate(
        move |y| {
            [
                sigma * (y[1] - y[0]),
                y[0] * (rho - y[2]) - y[1],
                y[0] * y[1] - beta * y[2],
            ]
        },
        p.initial,
        p.dt,
        p.n_samples,
        p.discard,
        p.dt,
    )
}

/// Rossler system parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RosslerParams {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub initial: [f64; 3],
    pub dt: f64,
    pub n_samples: usize,
    pub discard: usize,
    /// Replace the standard first equation `x' = -y - z` with the damped
    /// variant `x' = -y - x`. Off by default; kept for comparison runs.
    pub damped_x: bool,
}

impl Default for RosslerParams {
    fn default() -> Self {
        RosslerParams {
            a: 0.5,
            b: 2.0,
            c: 4.0,
            initial: [1.0, 1.0, 1.0],
            dt: 0.1,
            n_samples: 1000,
            discard: 1000,
            damped_x: false,
        }
    }
}

/// Integrate the Rossler system
/// `x' = -y - z, y' = x + a y, z' = b + z (x - c)`.
pub fn generate_rossler(p: &RosslerParams) -> Result<TimeSeries> {
    check_common(p.dt, p.n_samples)?;
    for (name, v) in [("a", p.a), ("b", p.b), ("c", p.c)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "rossler",
                reason: format!("{name} must be positive and finite, got {v}"),
            });
        }
    }
    let (a, b, c) = (p.a, p.b, p.c);
    let damped = p.damped_x;
    integrate(
        move |y| {
            let xdot = if damped { -y[1] - y[0] } else { -y[1] - y[2] };
            [xdot, y[0] + a * y[1], b + y[2] * (y[0] - c)]
        },
        p.initial,
        p.dt,
        p.n_samples,
        p.discard,
        p.dt,
    )
}

/// Fixed points of the standard Rossler flow, for verification. Returns the
/// inner fixed point (x, y, z) with `z = (c - sqrt(c^2 - 4ab)) / (2a)`.
pub fn rossler_inner_fixed_point(a: f64, b: f64, c: f64) -> Option<[f64; 3]> {
    let disc = c * c - 4.0 * a * b;
    if disc < 0.0 {
        return None;
    }
    let z = (c - disc.sqrt()) / (2.0 * a);
    Some([a * z, -z, z])
}
