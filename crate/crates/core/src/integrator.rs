//! Crank–Nicolson stepping, restarted GMRES and quadratic-norm monitors.

use nalgebra::{DMatrix, DVector, Dyn, LU};

use crate::error::{Error, Result};
use crate::gram::GramMatrix;
use crate::operators::TransportOperator;

/// Above this many unknowns the automatic choice switches to GMRES.
pub const DENSE_LIMIT: usize = 512;

/// Moment coefficients `u_0, …, u_N` of one cell.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentVector(DVector<f64>);

impl MomentVector {
    pub fn new(coefficients: Vec<f64>) -> Result<Self> {
        if coefficients.is_empty() {
            return Err(Error::invalid("moments", "empty moment vector"));
        }
        if let Some(i) = coefficients.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid("moments", format!("non-finite coefficient u_{i}")));
        }
        Ok(Self(DVector::from_vec(coefficients)))
    }

    pub fn zeros(n_moments: usize) -> Self {
        Self(DVector::zeros(n_moments))
    }

    /// The k-th unit vector.
    pub fn unit(n_moments: usize, k: usize) -> Self {
        let mut v = DVector::zeros(n_moments);
        v[k] = 1.0;
        Self(v)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        self.0.as_mut_slice()
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn into_vector(self) -> DVector<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl From<DVector<f64>> for MomentVector {
    fn from(v: DVector<f64>) -> Self {
        Self(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverMethod {
    DenseLu,
    Gmres,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearSolverConfig {
    pub method: SolverMethod,
    /// Relative residual target for GMRES.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub restart: usize,
}

impl Default for LinearSolverConfig {
    fn default() -> Self {
        Self {
            method: SolverMethod::DenseLu,
            tolerance: 1e-12,
            max_iterations: 1000,
            restart: 50,
        }
    }
}

impl LinearSolverConfig {
    pub fn dense() -> Self {
        Self::default()
    }

    pub fn gmres(tolerance: f64, max_iterations: usize, restart: usize) -> Result<Self> {
        let cfg = Self {
            method: SolverMethod::Gmres,
            tolerance,
            max_iterations,
            restart,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Dense LU up to [`DENSE_LIMIT`] unknowns, GMRES(50) at 1e-12 above.
    pub fn automatic(unknowns: usize) -> Self {
        if unknowns <= DENSE_LIMIT {
            Self::dense()
        } else {
            Self {
                method: SolverMethod::Gmres,
                ..Self::default()
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0 && self.tolerance < 1.0) {
            return Err(Error::invalid("tol", format!("must lie in (0, 1), got {}", self.tolerance)));
        }
        if self.max_iterations == 0 || self.restart == 0 {
            return Err(Error::invalid("max_iter", "iteration counts must be positive"));
        }
        if self.restart > self.max_iterations {
            return Err(Error::invalid(
                "restart",
                format!("restart {} exceeds max_iter {}", self.restart, self.max_iterations),
            ));
        }
        Ok(())
    }
}

/// Matrix-free operator for GMRES.
pub trait LinearOperator {
    fn dim(&self) -> usize;
    /// `y = A x`.
    fn apply(&self, x: &[f64], y: &mut [f64]);
}

impl LinearOperator for DMatrix<f64> {
    fn dim(&self) -> usize {
        self.nrows()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            *yi = self.row(i).iter().zip(x).map(|(a, b)| a * b).sum();
        }
    }
}

#[derive(Debug, Clone)]
pub struct GmresOutcome {
    pub solution: Vec<f64>,
    pub iterations: usize,
    /// Final relative residual `‖b − A x‖ / ‖b‖`.
    pub residual: f64,
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Restarted GMRES with modified Gram–Schmidt and Givens rotations.
pub fn gmres<A: LinearOperator + ?Sized>(
    a: &A,
    b: &[f64],
    guess: Option<&[f64]>,
    config: &LinearSolverConfig,
) -> Result<GmresOutcome> {
    config.validate()?;
    let n = a.dim();
    if b.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: b.len() });
    }
    let mut x = match guess {
        Some(g) if g.len() == n => g.to_vec(),
        Some(g) => return Err(Error::DimensionMismatch { expected: n, got: g.len() }),
        None => vec![0.0; n],
    };
    let bnorm = norm(b);
    if bnorm == 0.0 {
        return Ok(GmresOutcome {
            solution: vec![0.0; n],
            iterations: 0,
            residual: 0.0,
        });
    }
    let target = config.tolerance * bnorm;
    let m = config.restart.min(n.max(1));
    let mut iterations = 0;
    let mut r = vec![0.0; n];
    let mut w = vec![0.0; n];
    loop {
        a.apply(&x, &mut r);
        for (ri, bi) in r.iter_mut().zip(b) {
            *ri = bi - *ri;
        }
        let beta = norm(&r);
        if !beta.is_finite() {
            return Err(Error::NonConvergence { iterations, residual: f64::INFINITY });
        }
        if beta <= target {
            return Ok(GmresOutcome {
                solution: x,
                iterations,
                residual: beta / bnorm,
            });
        }
        if iterations >= config.max_iterations {
            return Err(Error::NonConvergence {
                iterations,
                residual: beta / bnorm,
            });
        }

        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(m + 1);
        basis.push(r.iter().map(|v| v / beta).collect());
        let mut h = vec![vec![0.0; m]; m + 1];
        let mut cs = vec![0.0; m];
        let mut sn = vec![0.0; m];
        let mut g = vec![0.0; m + 1];
        g[0] = beta;
        let mut k = 0;
        for j in 0..m {
            a.apply(&basis[j], &mut w);
            for i in 0..=j {
                let hij: f64 = w.iter().zip(&basis[i]).map(|(p, q)| p * q).sum();
                h[i][j] = hij;
                for (wv, q) in w.iter_mut().zip(&basis[i]) {
                    *wv -= hij * q;
                }
            }
            let hn = norm(&w);
            h[j + 1][j] = hn;
            for i in 0..j {
                let t = cs[i] * h[i][j] + sn[i] * h[i + 1][j];
                h[i + 1][j] = -sn[i] * h[i][j] + cs[i] * h[i + 1][j];
                h[i][j] = t;
            }
            let rho = h[j][j].hypot(h[j + 1][j]);
            if rho == 0.0 {
                cs[j] = 1.0;
                sn[j] = 0.0;
            } else {
                cs[j] = h[j][j] / rho;
                sn[j] = h[j + 1][j] / rho;
            }
            h[j][j] = rho;
            h[j + 1][j] = 0.0;
            g[j + 1] = -sn[j] * g[j];
            g[j] *= cs[j];
            iterations += 1;
            k = j + 1;
            if g[j + 1].abs() <= target || iterations >= config.max_iterations || hn == 0.0 {
                break;
            }
            basis.push(w.iter().map(|v| v / hn).collect());
        }

        let mut y = vec![0.0; k];
        for i in (0..k).rev() {
            let s: f64 = (i + 1..k).map(|l| h[i][l] * y[l]).sum();
            if h[i][i] == 0.0 {
                return Err(Error::SingularSystem { condition: None });
            }
            y[i] = (g[i] - s) / h[i][i];
        }
        for (i, yi) in y.iter().enumerate() {
            for (xv, q) in x.iter_mut().zip(&basis[i]) {
                *xv += yi * q;
            }
        }
    }
}

/// Solves `M x = rhs` with the configured method. `guess` seeds GMRES only.
pub fn linear_solve(
    m: &DMatrix<f64>,
    rhs: &DVector<f64>,
    config: &LinearSolverConfig,
    guess: Option<&DVector<f64>>,
) -> Result<DVector<f64>> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch { expected: m.nrows(), got: m.ncols() });
    }
    if rhs.len() != m.nrows() {
        return Err(Error::DimensionMismatch { expected: m.nrows(), got: rhs.len() });
    }
    match config.method {
        SolverMethod::DenseLu => dense_solve(&m.clone().lu(), rhs),
        SolverMethod::Gmres => {
            let out = gmres(m, rhs.as_slice(), guess.map(|g| g.as_slice()), config)?;
            Ok(DVector::from_vec(out.solution))
        }
    }
}

fn dense_solve(lu: &LU<f64, Dyn, Dyn>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    let x = lu.solve(rhs).ok_or(Error::SingularSystem { condition: None })?;
    if x.iter().all(|v| v.is_finite()) {
        Ok(x)
    } else {
        Err(Error::SingularSystem { condition: None })
    }
}

/// Crank–Nicolson map for a fixed operator and step, with cached factorization.
///
/// Standard operators step `(I + h/2·Op) U' = (I − h/2·Op) U`. Operators
/// carrying a metric form `P = L Lᵀ` step `W = Lᵀ U` with the reduced
/// operator `S`, `(I + h/2·S) W' = (I − h/2·S) W`; this is the same scheme,
/// written so that the conserved `Uᵀ P U = ‖W‖²` is not swamped by rounding
/// when `U` itself grows large.
#[derive(Debug, Clone)]
pub struct CrankNicolson {
    left: DMatrix<f64>,
    right: DMatrix<f64>,
    factor: Option<DMatrix<f64>>,
    lu: Option<LU<f64, Dyn, Dyn>>,
    config: LinearSolverConfig,
}

impl CrankNicolson {
    pub fn new(op: &TransportOperator, dt: f64, config: LinearSolverConfig) -> Result<Self> {
        Self::with_scale(op, 1.0, dt, config)
    }

    /// Map for the operator `scale·Op`, without materializing it.
    pub fn with_scale(op: &TransportOperator, scale: f64, dt: f64, config: LinearSolverConfig) -> Result<Self> {
        if !(dt.is_finite() && dt >= 0.0) {
            return Err(Error::invalid("dt", format!("must be nonnegative and finite, got {dt}")));
        }
        config.validate()?;
        let n = op.n_moments();
        let h = 0.5 * dt * scale;
        let id = DMatrix::<f64>::identity(n, n);
        let (generator, factor) = match op.metric_form() {
            Some(form) => (&form.reduced, Some(form.factor.clone())),
            None => (op.matrix(), None),
        };
        let (left, right) = (&id + generator * h, &id - generator * h);
        let lu = match config.method {
            SolverMethod::DenseLu => {
                let lu = left.clone().lu();
                if !lu.is_invertible() {
                    return Err(Error::SingularSystem { condition: None });
                }
                Some(lu)
            }
            SolverMethod::Gmres => None,
        };
        Ok(Self {
            left,
            right,
            factor,
            lu,
            config,
        })
    }

    pub fn n_moments(&self) -> usize {
        self.left.nrows()
    }

    /// Left-hand matrix of the implicit system (in reduced coordinates for
    /// metric-form operators).
    pub fn system_matrix(&self) -> &DMatrix<f64> {
        &self.left
    }

    pub fn explicit_matrix(&self) -> &DMatrix<f64> {
        &self.right
    }

    pub fn step(&self, u: &MomentVector, warm_start: Option<&MomentVector>) -> Result<MomentVector> {
        if u.len() != self.n_moments() {
            return Err(Error::DimensionMismatch { expected: self.n_moments(), got: u.len() });
        }
        let to_reduced = |v: &DVector<f64>| match &self.factor {
            Some(l) => l.tr_mul(v),
            None => v.clone(),
        };
        let rhs = &self.right * to_reduced(u.as_vector());
        let x = match &self.lu {
            Some(lu) => dense_solve(lu, &rhs)?,
            None => {
                let guess = to_reduced(warm_start.unwrap_or(u).as_vector());
                let out = gmres(&self.left, rhs.as_slice(), Some(guess.as_slice()), &self.config)?;
                DVector::from_vec(out.solution)
            }
        };
        match &self.factor {
            Some(l) => l
                .tr_solve_lower_triangular(&x)
                .map(MomentVector)
                .ok_or(Error::SingularSystem { condition: None }),
            None => Ok(MomentVector(x)),
        }
    }
}

/// One Crank–Nicolson step `U^n → U^{n+1}`.
pub fn cn_step(
    u: &MomentVector,
    op: &TransportOperator,
    dt: f64,
    solver: &LinearSolverConfig,
    warm_start: Option<&MomentVector>,
) -> Result<MomentVector> {
    CrankNicolson::new(op, dt, *solver)?.step(u, warm_start)
}

/// `⟨U, A U⟩ + ε‖U‖²`.
pub fn weighted_norm(u: &MomentVector, a: &GramMatrix, epsilon: f64) -> f64 {
    let base = a.quadratic_form(u.as_slice());
    if epsilon == 0.0 {
        base
    } else {
        base + epsilon * u.as_slice().iter().map(|v| v * v).sum::<f64>()
    }
}
