//! Asymmetrically weighted Hermite basis.
//!
//! With `x = v/√T` the basis functions are
//! `ψ_m(v) = e^{-x²} T^{-1/2} (2^m m! √π)^{-1/2} H_m(x)` and the dual family is
//! `ψ^m(v) = (2^m m! √π)^{-1/2} H_m(x)`, so that `∫ ψ_m ψ^n dv = δ_mn`.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Degrees above this use a log-space normalization constant.
const DIRECT_NORM_MAX_DEGREE: usize = 30;

/// Reference temperature and truncation degree of a moment expansion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BasisParams {
    temperature: f64,
    max_degree: usize,
}

impl BasisParams {
    pub fn new(temperature: f64, max_degree: usize) -> Result<Self> {
        check_temperature(temperature)?;
        Ok(Self {
            temperature,
            max_degree,
        })
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    /// Highest moment index N.
    pub fn max_degree(&self) -> usize {
        self.max_degree
    }

    /// N + 1.
    pub fn n_moments(&self) -> usize {
        self.max_degree + 1
    }
}

pub(crate) fn check_temperature(temperature: f64) -> Result<()> {
    if temperature.is_finite() && temperature > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(
            "temperature",
            format!("must be positive and finite, got {temperature}"),
        ))
    }
}

/// Strictly increasing velocity samples.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityGrid {
    points: Vec<f64>,
}

impl VelocityGrid {
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid("velocity grid", "no points"));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("velocity grid", "non-finite point"));
        }
        if points.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("velocity grid", "points must be strictly increasing"));
        }
        Ok(Self { points })
    }

    /// `n` equispaced points covering `[v_min, v_max]`, endpoints included.
    pub fn uniform(v_min: f64, v_max: f64, n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::invalid("velocity grid", format!("need at least 2 points, got {n}")));
        }
        if !(v_min.is_finite() && v_max.is_finite() && v_max > v_min) {
            return Err(Error::invalid(
                "velocity grid",
                format!("invalid range [{v_min}, {v_max}]"),
            ));
        }
        let h = (v_max - v_min) / (n - 1) as f64;
        let mut points: Vec<f64> = (0..n).map(|i| v_min + h * i as f64).collect();
        points[n - 1] = v_max;
        Self::new(points)
    }

    /// Quadrature grid on `[-12√T, 12√T]`.
    pub fn quadrature(temperature: f64, n: usize) -> Result<Self> {
        check_temperature(temperature)?;
        let w = 12.0 * temperature.sqrt();
        Self::uniform(-w, w, n)
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Physicists' Hermite polynomial `H_m(x)` by the three-term recurrence.
pub fn hermite_poly(m: usize, x: f64) -> f64 {
    let mut prev = 1.0;
    if m == 0 {
        return prev;
    }
    let mut cur = 2.0 * x;
    for k in 1..m {
        let next = 2.0 * x * cur - 2.0 * k as f64 * prev;
        prev = cur;
        cur = next;
    }
    cur
}

/// `(2^m m! √π)^{-1/2}`.
pub fn hermite_norm(m: usize) -> f64 {
    if m <= DIRECT_NORM_MAX_DEGREE {
        let mut p = PI.sqrt();
        for k in 1..=m {
            p *= 2.0 * k as f64;
        }
        1.0 / p.sqrt()
    } else {
        let ln_fact: f64 = (2..=m).map(|k| (k as f64).ln()).sum();
        let ln_p = m as f64 * std::f64::consts::LN_2 + ln_fact + 0.5 * PI.ln();
        (-0.5 * ln_p).exp()
    }
}

/// Dual function `ψ^m(v)`, evaluated from the polynomial form.
pub fn psi_dual(m: usize, v: f64, temperature: f64) -> f64 {
    hermite_norm(m) * hermite_poly(m, v / temperature.sqrt())
}

/// Basis function `ψ_m(v)`.
pub fn psi(m: usize, v: f64, temperature: f64) -> f64 {
    let x = v / temperature.sqrt();
    (-x * x).exp() / temperature.sqrt() * psi_dual(m, v, temperature)
}

/// Symmetric functions `φ_m(v) = e^{-v²/(2T)} T^{-1/4} ψ^m(v)`, orthonormal in L².
pub fn phi(m: usize, v: f64, temperature: f64) -> f64 {
    let x = v / temperature.sqrt();
    (-0.5 * x * x).exp() * temperature.powf(-0.25) * psi_dual(m, v, temperature)
}

/// `ψ_0(v), …, ψ_N(v)` at one velocity, by the normalized recurrence.
pub fn psi_column(max_degree: usize, v: f64, temperature: f64) -> Vec<f64> {
    let x = v / temperature.sqrt();
    let start = PI.powf(-0.25) * (-x * x).exp() / temperature.sqrt();
    normalized_column(max_degree, x, start)
}

/// `ψ^0(v), …, ψ^N(v)` at one velocity, by the normalized recurrence.
pub fn psi_dual_column(max_degree: usize, v: f64, temperature: f64) -> Vec<f64> {
    normalized_column(max_degree, v / temperature.sqrt(), PI.powf(-0.25))
}

fn normalized_column(max_degree: usize, x: f64, start: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(max_degree + 1);
    out.push(start);
    if max_degree == 0 {
        return out;
    }
    out.push(std::f64::consts::SQRT_2 * x * start);
    for m in 1..max_degree {
        let mf = m as f64;
        let next = (std::f64::consts::SQRT_2 * x * out[m] - mf.sqrt() * out[m - 1]) / (mf + 1.0).sqrt();
        out.push(next);
    }
    out
}

/// `f(v_j) = Σ_m u_m ψ_m(v_j)` on every grid point.
pub fn reconstruct(moments: &[f64], grid: &VelocityGrid, temperature: f64) -> Vec<f64> {
    if moments.is_empty() {
        return vec![0.0; grid.len()];
    }
    let n = moments.len() - 1;
    grid.points()
        .iter()
        .map(|&v| {
            psi_column(n, v, temperature)
                .iter()
                .zip(moments)
                .map(|(p, u)| p * u)
                .sum()
        })
        .collect()
}

/// Composite trapezoid rule over the grid.
pub fn trapezoid(grid: &VelocityGrid, values: &[f64]) -> f64 {
    let v = grid.points();
    assert_eq!(v.len(), values.len(), "samples must match the grid");
    v.windows(2)
        .zip(values.windows(2))
        .map(|(x, f)| 0.5 * (x[1] - x[0]) * (f[0] + f[1]))
        .sum()
}

/// Quadrature approximation of the moment `∫ f ψ^m dv`.
pub fn project(samples: &[f64], grid: &VelocityGrid, m: usize, temperature: f64) -> f64 {
    let weighted: Vec<f64> = grid
        .points()
        .iter()
        .zip(samples)
        .map(|(&v, &f)| f * psi_dual(m, v, temperature))
        .collect();
    trapezoid(grid, &weighted)
}
