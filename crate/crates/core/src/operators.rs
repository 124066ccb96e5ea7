//! Truncated transport matrices and their L²-stable modifications.
//!
//! `D` is the velocity-advection matrix (`u_m' − e√(2m/T) u_{m−1} = 0`) and `B`
//! the space-advection matrix (`∂_t U + B ∂_x U = 0`). Truncation destroys the
//! skew-symmetry of `D` and the symmetry of `B` with respect to the Gram matrix;
//! the projection method repairs the last column with the vector `z`, the
//! penalized method conjugates with the regularized metric `A + εI`.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use twofloat::TwoFloat;

use crate::error::{Error, Result};
use crate::gram::{coupling_column, GramMatrix};
use crate::hermite_basis::check_temperature;

/// Condition estimate above which factorizations are reported.
pub const CONDITION_WARNING: f64 = 1e14;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OperatorKind {
    VelocityD,
    SpaceB,
}

impl FromStr for OperatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "d" | "D" => Ok(Self::VelocityD),
            "b" | "B" => Ok(Self::SpaceB),
            other => Err(Error::invalid("kind", format!("expected d or b, got `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Raw,
    Projection,
    ProjectionConservative,
    Penalized,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Raw => "raw",
            Method::Projection => "proj",
            Method::ProjectionConservative => "proj-cons",
            Method::Penalized => "pen",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw" => Ok(Self::Raw),
            "proj" => Ok(Self::Projection),
            "proj-cons" | "proj_cons" => Ok(Self::ProjectionConservative),
            "pen" => Ok(Self::Penalized),
            other => Err(Error::invalid(
                "method",
                format!("expected raw, proj, proj-cons or pen, got `{other}`"),
            )),
        }
    }
}

/// Metric representation of a penalized operator.
///
/// With `P = A + εI = L Lᵀ`, `generator` is `G = P·Op` and `reduced` is
/// `S = L^{-1} G L^{-ᵀ}`, the operator in the coordinates `W = Lᵀ U` where the
/// conserved norm is `‖W‖²`. Both are exactly skew-symmetric (for `D`) or
/// symmetric (for `B`) in floating point.
#[derive(Debug, Clone)]
pub struct MetricForm {
    pub metric: DMatrix<f64>,
    pub generator: DMatrix<f64>,
    /// Lower Cholesky factor `L` of the metric.
    pub factor: DMatrix<f64>,
    pub reduced: DMatrix<f64>,
}

impl MetricForm {
    fn new(metric: DMatrix<f64>, generator: DMatrix<f64>, skew: bool) -> Result<Self> {
        let factor = metric
            .clone()
            .cholesky()
            .ok_or(Error::SingularSystem { condition: None })?
            .unpack();
        let y = factor
            .solve_lower_triangular(&generator)
            .ok_or(Error::SingularSystem { condition: None })?;
        let s = factor
            .solve_lower_triangular(&y.transpose())
            .ok_or(Error::SingularSystem { condition: None })?
            .transpose();
        let reduced = if skew {
            (&s - s.transpose()) * 0.5
        } else {
            (&s + s.transpose()) * 0.5
        };
        Ok(Self {
            metric,
            generator,
            factor,
            reduced,
        })
    }
}

#[derive(Debug, Clone)]
pub struct TransportOperator {
    kind: OperatorKind,
    method: Method,
    temperature: f64,
    field: Option<f64>,
    epsilon: Option<f64>,
    matrix: DMatrix<f64>,
    metric: Option<MetricForm>,
}

impl TransportOperator {
    pub fn kind(&self) -> OperatorKind {
        self.kind
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    /// Field sign `e`, for velocity operators.
    pub fn field(&self) -> Option<f64> {
        self.field
    }

    pub fn epsilon(&self) -> Option<f64> {
        self.epsilon
    }

    pub fn n_moments(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn metric_form(&self) -> Option<&MetricForm> {
        self.metric.as_ref()
    }

    /// The operator multiplied by `s`. For `D` this is the operator for field `s·e`.
    pub fn scaled(&self, s: f64) -> Self {
        Self {
            kind: self.kind,
            method: self.method,
            temperature: self.temperature,
            field: self.field.map(|e| e * s),
            epsilon: self.epsilon,
            matrix: &self.matrix * s,
            metric: self.metric.as_ref().map(|m| MetricForm {
                metric: m.metric.clone(),
                generator: &m.generator * s,
                factor: m.factor.clone(),
                reduced: &m.reduced * s,
            }),
        }
    }

    /// Wraps an arbitrary square matrix, for experiments and tests.
    pub fn from_matrix(kind: OperatorKind, temperature: f64, matrix: DMatrix<f64>) -> Result<Self> {
        check_temperature(temperature)?;
        if matrix.nrows() != matrix.ncols() || matrix.nrows() == 0 {
            return Err(Error::DimensionMismatch {
                expected: matrix.nrows(),
                got: matrix.ncols(),
            });
        }
        Ok(Self {
            kind,
            method: Method::Raw,
            temperature,
            field: None,
            epsilon: None,
            matrix,
            metric: None,
        })
    }
}

/// Closure vector `z^N`, the unique solution of `A^N z = g^N`.
#[derive(Debug, Clone, PartialEq)]
pub struct StabilizationVector {
    values: Vec<f64>,
}

impl StabilizationVector {
    pub fn n_moments(&self) -> usize {
        self.values.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    /// Parity of the indices that may be nonzero (0 even, 1 odd).
    pub fn parity(&self) -> usize {
        self.values.len() % 2
    }

    /// Copy with `z_0`, `z_1`, `z_2` set to zero.
    pub fn conservative(&self) -> Self {
        let mut values = self.values.clone();
        for v in values.iter_mut().take(3) {
            *v = 0.0;
        }
        Self { values }
    }
}

fn check_field(e: f64) -> Result<()> {
    if e.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid("field", format!("must be finite, got {e}")))
    }
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if epsilon.is_finite() && epsilon > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid("epsilon", format!("must be positive, got {epsilon}")))
    }
}

fn check_gram(a: &GramMatrix, max_degree: usize, temperature: f64) -> Result<()> {
    if a.n_moments() != max_degree + 1 {
        return Err(Error::DimensionMismatch {
            expected: max_degree + 1,
            got: a.n_moments(),
        });
    }
    if a.temperature() != temperature {
        return Err(Error::invalid(
            "gram",
            format!("built for T = {}, operator uses T = {temperature}", a.temperature()),
        ));
    }
    Ok(())
}

fn stabilized_degree(max_degree: usize) -> Result<()> {
    if max_degree == 0 {
        Err(Error::invalid("n", "stabilized operators need N ≥ 1"))
    } else {
        Ok(())
    }
}

/// Raw truncated `D^N`: entry `(m, m−1) = −e√(2m/T)`.
pub fn build_d(max_degree: usize, e: f64, temperature: f64) -> Result<TransportOperator> {
    check_temperature(temperature)?;
    check_field(e)?;
    let n = max_degree + 1;
    let mut d = DMatrix::zeros(n, n);
    for m in 1..n {
        d[(m, m - 1)] = -e * (2.0 * m as f64 / temperature).sqrt();
    }
    Ok(TransportOperator {
        kind: OperatorKind::VelocityD,
        method: Method::Raw,
        temperature,
        field: Some(e),
        epsilon: None,
        matrix: d,
        metric: None,
    })
}

/// Raw truncated `B^N`: entries `(m+1, m) = (m, m+1) = √(T(m+1)/2)`.
pub fn build_b(max_degree: usize, temperature: f64) -> Result<TransportOperator> {
    check_temperature(temperature)?;
    let n = max_degree + 1;
    let mut b = DMatrix::zeros(n, n);
    for m in 0..max_degree {
        let v = (temperature * (m + 1) as f64 / 2.0).sqrt();
        b[(m + 1, m)] = v;
        b[(m, m + 1)] = v;
    }
    Ok(TransportOperator {
        kind: OperatorKind::SpaceB,
        method: Method::Raw,
        temperature,
        field: None,
        epsilon: None,
        matrix: b,
        metric: None,
    })
}

/// Closed form of `z^N`.
///
/// Only the parity class of `N − 1` is nonzero. Starting from the entry next to
/// the diagonal, `z_{N−1} = −√(N(N+1))/4`, each step down by two multiplies by
/// `√(i(i−1)) / (2(N−i+3))`; the product is carried in double-double so the
/// result is correctly rounded.
pub fn build_z(max_degree: usize) -> Result<StabilizationVector> {
    stabilized_degree(max_degree)?;
    let n = max_degree;
    let mut values = vec![0.0; n + 1];
    let top = n - 1;
    let mut z = -(TwoFloat::new_mul((top + 1) as f64, (top + 2) as f64).sqrt() / 4.0);
    values[top] = z.hi();
    let mut i = top;
    while i >= 2 {
        let ratio = TwoFloat::new_mul(i as f64, (i - 1) as f64).sqrt() / (2 * (n - i + 3)) as f64;
        z *= ratio;
        i -= 2;
        values[i] = z.hi();
    }
    Ok(StabilizationVector { values })
}

/// `z^N` from a dense double-precision solve of `A^N z = g^N`.
pub fn build_z_by_solve(max_degree: usize, temperature: f64, a: &GramMatrix) -> Result<StabilizationVector> {
    stabilized_degree(max_degree)?;
    check_gram(a, max_degree, temperature)?;
    let g = DVector::from_vec(coupling_column(max_degree, temperature)?);
    let lu = a.entries().clone().lu();
    let z = lu.solve(&g).ok_or_else(|| Error::SingularSystem {
        condition: Some(a.condition_number()),
    })?;
    let mut values: Vec<f64> = z.iter().copied().collect();
    // the checkerboard structure of A and g makes the other class vanish identically
    let parity = max_degree % 2;
    for (k, v) in values.iter_mut().enumerate() {
        if k % 2 == parity {
            *v = 0.0;
        }
    }
    Ok(StabilizationVector { values })
}

/// Projection-stabilized `D̄^N = D^N − e√(2(N+1)/T)·z e_Nᵀ`.
pub fn build_d_projection(
    max_degree: usize,
    e: f64,
    temperature: f64,
    conservative: bool,
) -> Result<TransportOperator> {
    stabilized_degree(max_degree)?;
    let mut op = build_d(max_degree, e, temperature)?;
    let mut z = build_z(max_degree)?;
    if conservative {
        z = z.conservative();
    }
    let c = -e * (2.0 * (max_degree + 1) as f64 / temperature).sqrt();
    for (m, zm) in z.as_slice().iter().enumerate() {
        op.matrix[(m, max_degree)] += c * zm;
    }
    op.method = if conservative {
        Method::ProjectionConservative
    } else {
        Method::Projection
    };
    Ok(op)
}

/// Projection-stabilized `B̄^N = B^N + √(T(N+1)/2)·z e_Nᵀ`.
pub fn build_b_projection(max_degree: usize, temperature: f64, conservative: bool) -> Result<TransportOperator> {
    stabilized_degree(max_degree)?;
    let mut op = build_b(max_degree, temperature)?;
    let mut z = build_z(max_degree)?;
    if conservative {
        z = z.conservative();
    }
    let c = (temperature * (max_degree + 1) as f64 / 2.0).sqrt();
    for (m, zm) in z.as_slice().iter().enumerate() {
        op.matrix[(m, max_degree)] += c * zm;
    }
    op.method = if conservative {
        Method::ProjectionConservative
    } else {
        Method::Projection
    };
    Ok(op)
}

fn regularized_metric(a: &GramMatrix, epsilon: f64) -> DMatrix<f64> {
    let n = a.n_moments();
    let p = a.entries() + DMatrix::identity(n, n) * epsilon;
    let ev = SymmetricEigen::new(p.clone()).eigenvalues;
    let lo = ev.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = ev.iter().copied().fold(0.0, f64::max);
    let cond = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if cond > CONDITION_WARNING {
        log::warn!("A + εI is ill conditioned (condition estimate {cond:e}, ε = {epsilon:e})");
    }
    p
}

fn conjugate(p: &DMatrix<f64>, rhs: DMatrix<f64>) -> Result<DMatrix<f64>> {
    p.clone().lu().solve(&rhs).ok_or(Error::SingularSystem { condition: None })
}

/// Penalized `D̄ = ½D − ½(A+εI)^{-1} Dᵀ (A+εI)`.
pub fn build_d_penalized(
    max_degree: usize,
    e: f64,
    temperature: f64,
    epsilon: f64,
    a: &GramMatrix,
) -> Result<TransportOperator> {
    check_epsilon(epsilon)?;
    check_gram(a, max_degree, temperature)?;
    let mut op = build_d(max_degree, e, temperature)?;
    let d = op.matrix.clone();
    let p = regularized_metric(a, epsilon);
    let x = conjugate(&p, d.transpose() * &p)?;
    op.matrix = (&d - x) * 0.5;
    let pd = &p * &d;
    let generator = (&pd - pd.transpose()) * 0.5;
    op.metric = Some(MetricForm::new(p, generator, true)?);
    op.method = Method::Penalized;
    op.epsilon = Some(epsilon);
    Ok(op)
}

/// Penalized `B̄ = ½B + ½(A+εI)^{-1} B (A+εI)`.
pub fn build_b_penalized(max_degree: usize, temperature: f64, epsilon: f64, a: &GramMatrix) -> Result<TransportOperator> {
    check_epsilon(epsilon)?;
    check_gram(a, max_degree, temperature)?;
    let mut op = build_b(max_degree, temperature)?;
    let b = op.matrix.clone();
    let p = regularized_metric(a, epsilon);
    let x = conjugate(&p, &b * &p)?;
    op.matrix = (&b + x) * 0.5;
    let pb = &p * &b;
    let generator = (&pb + pb.transpose()) * 0.5;
    op.metric = Some(MetricForm::new(p, generator, false)?);
    op.method = Method::Penalized;
    op.epsilon = Some(epsilon);
    Ok(op)
}

/// Velocity operator of the requested method.
pub fn build_velocity(
    method: Method,
    max_degree: usize,
    e: f64,
    temperature: f64,
    epsilon: Option<f64>,
) -> Result<TransportOperator> {
    match method {
        Method::Raw => build_d(max_degree, e, temperature),
        Method::Projection => build_d_projection(max_degree, e, temperature, false),
        Method::ProjectionConservative => build_d_projection(max_degree, e, temperature, true),
        Method::Penalized => {
            let eps = epsilon.ok_or_else(|| Error::invalid("epsilon", "required by the penalized method"))?;
            let a = GramMatrix::stable(max_degree, temperature)?;
            build_d_penalized(max_degree, e, temperature, eps, &a)
        }
    }
}

/// Space operator of the requested method.
pub fn build_space(method: Method, max_degree: usize, temperature: f64, epsilon: Option<f64>) -> Result<TransportOperator> {
    match method {
        Method::Raw => build_b(max_degree, temperature),
        Method::Projection => build_b_projection(max_degree, temperature, false),
        Method::ProjectionConservative => build_b_projection(max_degree, temperature, true),
        Method::Penalized => {
            let eps = epsilon.ok_or_else(|| Error::invalid("epsilon", "required by the penalized method"))?;
            let a = GramMatrix::stable(max_degree, temperature)?;
            build_b_penalized(max_degree, temperature, eps, &a)
        }
    }
}

/// `‖P·Op + Opᵀ·P‖_max`.
pub fn skew_residual(p: &DMatrix<f64>, op: &DMatrix<f64>) -> f64 {
    let pd = p * op;
    (&pd + pd.transpose()).abs().max()
}

/// `‖P·Op − Opᵀ·P‖_max`.
pub fn symmetry_residual(p: &DMatrix<f64>, op: &DMatrix<f64>) -> f64 {
    let pd = p * op;
    (&pd - pd.transpose()).abs().max()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn raw_d_examples() {
        let d = build_d(2, 1.0, 2.0).unwrap();
        assert_relative_eq!(d.matrix()[(1, 0)], -1.0, max_relative = 1e-15);
        assert_relative_eq!(d.matrix()[(2, 1)], -std::f64::consts::SQRT_2, max_relative = 1e-15);
        assert_eq!(d.matrix().iter().filter(|v| **v != 0.0).count(), 2);
        let dm = build_d(2, -1.0, 2.0).unwrap();
        assert_eq!(dm.matrix(), &(-d.matrix()));
        assert_eq!(build_d(0, 3.0, 1.5).unwrap().matrix(), &DMatrix::zeros(1, 1));
    }

    #[test]
    fn raw_b_examples() {
        let b = build_b(1, 2.0).unwrap();
        assert_eq!(b.matrix(), &DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]));
        let b = build_b(2, 1.0).unwrap();
        assert_relative_eq!(b.matrix()[(1, 0)], 0.5f64.sqrt(), max_relative = 1e-15);
        assert_relative_eq!(b.matrix()[(2, 1)], 1.0, max_relative = 1e-15);
        for n in [0, 5, 64] {
            let b = build_b(n, 1.7).unwrap();
            assert_eq!(b.matrix(), &b.matrix().transpose());
        }
    }

    #[test]
    fn z_examples() {
        let z = build_z(2).unwrap();
        assert_eq!(z.as_slice()[0], 0.0);
        assert_relative_eq!(z.as_slice()[1], -0.612_372_435_695_794_5, max_relative = 1e-16);
        assert_eq!(z.as_slice()[2], 0.0);
        let z = build_z(1).unwrap();
        assert_relative_eq!(z.as_slice()[0], -0.353_553_390_593_273_8, max_relative = 1e-16);
        assert_eq!(z.as_slice()[1], 0.0);
        let z = build_z(3).unwrap();
        assert_relative_eq!(z.as_slice()[0], -0.153_093_108_923_948_63, max_relative = 1e-15);
        assert_relative_eq!(z.as_slice()[2], -0.866_025_403_784_438_6, max_relative = 1e-15);
        let z = build_z(4).unwrap();
        assert_relative_eq!(z.as_slice()[1], -0.342_326_598_440_728_8, max_relative = 1e-15);
        assert_relative_eq!(z.as_slice()[3], -1.118_033_988_749_895, max_relative = 1e-15);
        assert!(build_z(0).is_err());
    }

    #[test]
    fn z_by_solve_examples() {
        let a = GramMatrix::stable(2, 1.0).unwrap();
        let z = build_z_by_solve(2, 1.0, &a).unwrap();
        assert!((z.as_slice()[1] + 0.612_372_435_695_794_5).abs() < 1e-8);
        let a = GramMatrix::stable(1, 1.0).unwrap();
        let z = build_z_by_solve(1, 1.0, &a).unwrap();
        assert!((z.as_slice()[0] + 0.353_553_390_593_273_8).abs() < 1e-10);
    }

    #[test]
    fn projection_examples() {
        let dp = build_d_projection(2, 1.0, 2.0, false).unwrap();
        assert_relative_eq!(dp.matrix()[(1, 2)], 1.060_660_171_779_821_3, max_relative = 1e-15);
        let bp = build_b_projection(2, 2.0, false).unwrap();
        assert_relative_eq!(bp.matrix()[(1, 2)], 0.353_553_390_593_273_8, max_relative = 1e-14);
        assert_eq!(bp.method(), Method::Projection);
    }

    #[test]
    fn penalized_identity_small() {
        let a = GramMatrix::stable(8, 1.0).unwrap();
        let d = build_d_penalized(8, 1.0, 1.0, 1e-10, &a).unwrap();
        let p = &d.metric_form().unwrap().metric;
        assert!(skew_residual(p, d.matrix()) <= 1e-11);
        let b = build_b_penalized(8, 1.0, 1e-10, &a).unwrap();
        assert!(symmetry_residual(p, b.matrix()) <= 1e-11);
        assert!(b.matrix().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn penalized_large_epsilon_limit() {
        let a = GramMatrix::stable(1, 1.0).unwrap();
        let d = build_d_penalized(1, 1.0, 1.0, 1e12, &a).unwrap();
        let raw = build_d(1, 1.0, 1.0).unwrap();
        let half = (raw.matrix() - raw.matrix().transpose()) * 0.5;
        assert!((d.matrix() - half).abs().max() < 1e-10);
    }

    #[test]
    fn method_parsing() {
        for m in [Method::Raw, Method::Projection, Method::ProjectionConservative, Method::Penalized] {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
        }
        assert_eq!("proj_cons".parse::<Method>().unwrap(), Method::ProjectionConservative);
        assert!("nope".parse::<Method>().is_err());
        assert_eq!("d".parse::<OperatorKind>().unwrap(), OperatorKind::VelocityD);
        assert!("x".parse::<OperatorKind>().is_err());
    }

    #[test]
    fn scaled_is_linear_in_field() {
        let d1 = build_d_projection(6, 1.0, 2.0, false).unwrap();
        let d2 = build_d_projection(6, -0.75, 2.0, false).unwrap();
        assert!((d1.scaled(-0.75).matrix() - d2.matrix()).abs().max() < 1e-15);
        assert_eq!(d1.scaled(-0.75).field(), Some(-0.75));
    }

    #[test]
    fn penalized_requires_positive_epsilon() {
        let a = GramMatrix::stable(4, 1.0).unwrap();
        assert!(build_d_penalized(4, 1.0, 1.0, 0.0, &a).is_err());
        assert!(build_b_penalized(4, 1.0, -1.0, &a).is_err());
        assert!(build_velocity(Method::Penalized, 4, 1.0, 1.0, None).is_err());
        let wrong = GramMatrix::stable(3, 1.0).unwrap();
        assert!(build_d_penalized(4, 1.0, 1.0, 1e-10, &wrong).is_err());
    }
}
