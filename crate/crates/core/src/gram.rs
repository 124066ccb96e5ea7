//! Gram matrix `a_mn = ∫ ψ_m ψ_n dv` of the asymmetric Hermite basis.
//!
//! The stable builder runs the diagonal and off-diagonal recurrences in
//! double-double arithmetic and keeps the low-order part of every entry, so
//! quadratic forms can be evaluated without the cancellation that large moment
//! vectors otherwise suffer.

use nalgebra::{DMatrix, SymmetricEigen};
use twofloat::TwoFloat;

use crate::error::Result;
use crate::hermite_basis::{check_temperature, hermite_norm, hermite_poly, VelocityGrid};

/// Default number of trapezoid points of the quadrature oracle.
pub const ORACLE_POINTS: usize = 8001;

/// Truncated Gram matrix `A^N` at temperature `T`.
#[derive(Debug, Clone)]
pub struct GramMatrix {
    temperature: f64,
    entries: DMatrix<f64>,
    low: DMatrix<f64>,
}

impl GramMatrix {
    /// `A^N` from the stable recurrences.
    pub fn stable(max_degree: usize, temperature: f64) -> Result<Self> {
        check_temperature(temperature)?;
        let n = max_degree + 1;
        let diag = diagonal_dd(max_degree, temperature);
        let mut entries = DMatrix::zeros(n, n);
        let mut low = DMatrix::zeros(n, n);
        for (c, &d) in diag.iter().enumerate() {
            let mut a = d;
            let mut l = 0;
            loop {
                let (m, k) = (c - l, c + l);
                entries[(m, k)] = a.hi();
                low[(m, k)] = a.lo();
                entries[(k, m)] = a.hi();
                low[(k, m)] = a.lo();
                if l == c || k + 1 >= n {
                    break;
                }
                let ratio = TwoFloat::new_div((c - l) as f64, (c + l + 1) as f64).sqrt();
                a = -(a * ratio);
                l += 1;
            }
        }
        let a00 = (2.0 * temperature).sqrt().recip();
        entries[(0, 0)] = a00;
        low[(0, 0)] = (diag[0] - TwoFloat::from(a00)).hi();
        Ok(Self {
            temperature,
            entries,
            low,
        })
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    /// N + 1.
    pub fn n_moments(&self) -> usize {
        self.entries.nrows()
    }

    /// Entries rounded to double precision.
    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    /// Residual `a_mn − entries[m][n]` carried by the double-double build.
    pub fn low_order(&self) -> &DMatrix<f64> {
        &self.low
    }

    pub fn get(&self, m: usize, n: usize) -> f64 {
        self.entries[(m, n)]
    }

    /// `⟨U, A U⟩` with double-double accumulation over the exact entries.
    pub fn quadratic_form(&self, u: &[f64]) -> f64 {
        assert_eq!(u.len(), self.n_moments(), "moment vector length");
        let n = u.len();
        let mut total = TwoFloat::from(0.0);
        for m in 0..n {
            if u[m] == 0.0 {
                continue;
            }
            let mut row = TwoFloat::from(0.0);
            for k in (m % 2..n).step_by(2) {
                row += TwoFloat::new_mul(self.entries[(m, k)], u[k]) + self.low[(m, k)] * u[k];
            }
            total += row * u[m];
        }
        total.hi()
    }

    /// Eigenvalues of the double-precision entries, ascending.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = SymmetricEigen::new(self.entries.clone())
            .eigenvalues
            .iter()
            .copied()
            .collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    /// Spectral condition number estimate of the double-precision entries.
    pub fn condition_number(&self) -> f64 {
        let ev = self.eigenvalues();
        let lo = ev[0];
        let hi = ev[ev.len() - 1];
        if lo <= 0.0 {
            f64::INFINITY
        } else {
            hi / lo
        }
    }
}

fn diagonal_dd(max_degree: usize, temperature: f64) -> Vec<TwoFloat> {
    let mut d = Vec::with_capacity(max_degree + 1);
    let mut a = TwoFloat::from(2.0 * temperature).sqrt().recip();
    d.push(a);
    for m in 0..max_degree {
        a *= TwoFloat::new_div((2 * m + 1) as f64, (2 * m + 2) as f64);
        d.push(a);
    }
    d
}

/// `a_{m,N+1}` for `0 ≤ m ≤ N`: the coupling of the retained moments to the
/// first discarded one.
pub fn coupling_column(max_degree: usize, temperature: f64) -> Result<Vec<f64>> {
    let a = GramMatrix::stable(max_degree + 1, temperature)?;
    Ok((0..=max_degree).map(|m| a.get(m, max_degree + 1)).collect())
}

fn ln_factorial(n: usize) -> f64 {
    (2..=n).map(|k| (k as f64).ln()).sum()
}

/// Closed formula for `a_mn`, with the factorial ratio taken in log-space.
pub fn entry_closed(m: usize, n: usize, temperature: f64) -> f64 {
    if (m + n) % 2 == 1 {
        return 0.0;
    }
    let s = m + n;
    let ln_abs = -0.5 * temperature.ln() - (s as f64 + 0.5) * std::f64::consts::LN_2 + ln_factorial(s)
        - ln_factorial(s / 2)
        - 0.5 * (ln_factorial(m) + ln_factorial(n));
    let sign = if m.abs_diff(n).is_multiple_of(4) { 1.0 } else { -1.0 };
    sign * ln_abs.exp()
}

/// Trapezoid quadrature of `ψ_m ψ_n` on `[-12√T, 12√T]`.
pub fn entry_oracle(m: usize, n: usize, temperature: f64) -> f64 {
    let grid = VelocityGrid::quadrature(temperature, ORACLE_POINTS).expect("valid temperature");
    let sqrt_t = temperature.sqrt();
    let (cm, cn) = (hermite_norm(m), hermite_norm(n));
    let f: Vec<f64> = grid
        .points()
        .iter()
        .map(|&v| {
            let x = v / sqrt_t;
            (-2.0 * x * x).exp() / temperature * cm * hermite_poly(m, x) * cn * hermite_poly(n, x)
        })
        .collect();
    crate::hermite_basis::trapezoid(&grid, &f)
}

/// Quadrature oracle for the whole `A^N` (same rule as [`entry_oracle`]).
pub fn oracle_matrix(max_degree: usize, temperature: f64, points: usize) -> Result<DMatrix<f64>> {
    let grid = VelocityGrid::quadrature(temperature, points)?;
    let n = max_degree + 1;
    let sqrt_t = temperature.sqrt();
    let v = grid.points();
    let h = v[1] - v[0];
    let norms: Vec<f64> = (0..n).map(hermite_norm).collect();
    let mut acc = DMatrix::zeros(n, n);
    let mut col = vec![0.0; n];
    for (i, &vi) in v.iter().enumerate() {
        let x = vi / sqrt_t;
        let w = if i == 0 || i + 1 == v.len() { 0.5 * h } else { h };
        let g = (-x * x).exp() / sqrt_t;
        for m in 0..n {
            col[m] = g * norms[m] * hermite_poly(m, x);
        }
        for a in 0..n {
            for b in a..n {
                acc[(a, b)] += w * col[a] * col[b];
            }
        }
    }
    for a in 0..n {
        for b in 0..a {
            acc[(a, b)] = acc[(b, a)];
        }
    }
    Ok(acc)
}

/// `a_mm √(2πTm)`, which tends to 1 as m grows.
pub fn asymptotic_ratio(m: usize, temperature: f64) -> f64 {
    let d = diagonal_dd(m, temperature)[m];
    let s = TwoFloat::from(2.0 * std::f64::consts::PI * temperature * m as f64).sqrt();
    (d * s).hi()
}
