//! 1D1V Vlasov–Poisson by Strang splitting of the moment system.
//!
//! The velocity block `∂_t U + e(x) D̄ U = 0` is stepped cell by cell, the space
//! block `∂_t U + B̄ ∂_x U = 0` with centered periodic differences, and the
//! field comes from a spectral periodic Poisson solve.
//!
//! Sign convention: `∂_x E = ρ − ρ̄` and the force on the species is `+E`.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Dyn, LU};
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::gram::GramMatrix;
use crate::hermite_basis::BasisParams;
use crate::integrator::{gmres, CrankNicolson, LinearOperator, LinearSolverConfig, MomentVector};
use crate::operators::{OperatorKind, TransportOperator};

/// Minimum number of cells for space advection.
pub const MIN_CELLS: usize = 4;

/// Uniform periodic grid with nodes `x_j = j·dx`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpatialGrid {
    length: f64,
    n_cells: usize,
}

impl SpatialGrid {
    pub fn new(length: f64, n_cells: usize) -> Result<Self> {
        if !(length.is_finite() && length > 0.0) {
            return Err(Error::invalid("length", format!("must be positive, got {length}")));
        }
        if n_cells < MIN_CELLS {
            return Err(Error::invalid(
                "cells",
                format!("need at least {MIN_CELLS} cells, got {n_cells}"),
            ));
        }
        Ok(Self { length, n_cells })
    }

    /// One cell of the given width, for spatially homogeneous problems.
    pub fn single_cell(length: f64) -> Result<Self> {
        if !(length.is_finite() && length > 0.0) {
            return Err(Error::invalid("length", format!("must be positive, got {length}")));
        }
        Ok(Self { length, n_cells: 1 })
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn dx(&self) -> f64 {
        self.length / self.n_cells as f64
    }

    pub fn position(&self, j: usize) -> f64 {
        j as f64 * self.dx()
    }

    pub fn positions(&self) -> Vec<f64> {
        (0..self.n_cells).map(|j| self.position(j)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KineticState {
    grid: SpatialGrid,
    basis: BasisParams,
    moments: Vec<MomentVector>,
    pub time: f64,
}

impl KineticState {
    pub fn new(grid: SpatialGrid, basis: BasisParams, moments: Vec<MomentVector>) -> Result<Self> {
        if moments.len() != grid.n_cells() {
            return Err(Error::DimensionMismatch {
                expected: grid.n_cells(),
                got: moments.len(),
            });
        }
        if let Some(bad) = moments.iter().find(|u| u.len() != basis.n_moments()) {
            return Err(Error::DimensionMismatch {
                expected: basis.n_moments(),
                got: bad.len(),
            });
        }
        Ok(Self {
            grid,
            basis,
            moments,
            time: 0.0,
        })
    }

    /// The same moment vector in every cell.
    pub fn uniform(grid: SpatialGrid, basis: BasisParams, u: MomentVector) -> Result<Self> {
        Self::new(grid, basis, vec![u; grid.n_cells()])
    }

    pub fn grid(&self) -> &SpatialGrid {
        &self.grid
    }

    pub fn basis(&self) -> &BasisParams {
        &self.basis
    }

    pub fn moments(&self) -> &[MomentVector] {
        &self.moments
    }

    pub fn moments_mut(&mut self) -> &mut [MomentVector] {
        &mut self.moments
    }

    /// `u_k(x_j)` over all cells.
    pub fn profile(&self, k: usize) -> Vec<f64> {
        self.moments.iter().map(|u| u.as_slice()[k]).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.moments.iter().all(MomentVector::is_finite)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldState {
    pub electric_field: Vec<f64>,
    pub potential: Vec<f64>,
    pub background_density: f64,
}

impl FieldState {
    pub fn zeros(n_cells: usize) -> Self {
        Self {
            electric_field: vec![0.0; n_cells],
            potential: vec![0.0; n_cells],
            background_density: 0.0,
        }
    }

    /// Prescribed spatially constant field.
    pub fn constant(n_cells: usize, e: f64) -> Self {
        Self {
            electric_field: vec![e; n_cells],
            ..Self::zeros(n_cells)
        }
    }
}

/// `∫ ψ_0 dv = π^{1/4}`.
pub fn mass_coefficient() -> f64 {
    PI.powf(0.25)
}

/// `∫ v ψ_1 dv = √(T/2) π^{1/4}`.
pub fn momentum_coefficient(temperature: f64) -> f64 {
    (0.5 * temperature).sqrt() * PI.powf(0.25)
}

/// `(∫ v²/2 ψ_0 dv, ∫ v²/2 ψ_2 dv)`.
pub fn energy_coefficients(temperature: f64) -> (f64, f64) {
    let c = temperature * PI.powf(0.25) / 4.0;
    (c, c * std::f64::consts::SQRT_2)
}

/// Field of the sign-reversal test: `+1` before the switch, `−1` from it on.
pub fn reversal_field(t: f64, switch_time: f64) -> f64 {
    if t < switch_time {
        1.0
    } else {
        -1.0
    }
}

/// Periodic Poisson solve `∂_x E = ρ − ρ̄`, `E = −∂_x φ`, with `ρ = π^{1/4} u_0`.
pub fn poisson_solve(state: &KineticState) -> FieldState {
    let rho: Vec<f64> = state.profile(0).iter().map(|u| mass_coefficient() * u).collect();
    poisson_from_density(&rho, state.grid().length())
}

/// Spectral solve for a sampled density on a periodic domain of the given length.
pub fn poisson_from_density(rho: &[f64], length: f64) -> FieldState {
    let n = rho.len();
    let mean = rho.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return FieldState {
            background_density: mean,
            ..FieldState::zeros(n)
        };
    }
    let mut planner = FftPlanner::new();
    let forward = planner.plan_fft_forward(n);
    let inverse = planner.plan_fft_inverse(n);
    let mut hat: Vec<Complex<f64>> = rho.iter().map(|&r| Complex::new(r - mean, 0.0)).collect();
    forward.process(&mut hat);
    let mut e_hat = vec![Complex::new(0.0, 0.0); n];
    let mut phi_hat = vec![Complex::new(0.0, 0.0); n];
    for q in 1..n {
        let signed = if 2 * q < n { q as f64 } else { q as f64 - n as f64 };
        let kappa = 2.0 * PI * signed / length;
        phi_hat[q] = hat[q] / (kappa * kappa);
        if 2 * q != n {
            e_hat[q] = hat[q] / Complex::new(0.0, kappa);
        }
    }
    inverse.process(&mut e_hat);
    inverse.process(&mut phi_hat);
    let scale = 1.0 / n as f64;
    FieldState {
        electric_field: e_hat.iter().map(|c| c.re * scale).collect(),
        potential: phi_hat.iter().map(|c| c.re * scale).collect(),
        background_density: mean,
    }
}

/// Advances every cell by one Crank–Nicolson step of `E_j·D̄_unit`.
pub fn v_advection_step(
    state: &mut KineticState,
    field: &FieldState,
    unit_op: &TransportOperator,
    dt: f64,
    solver: &LinearSolverConfig,
) -> Result<()> {
    if field.electric_field.len() != state.grid().n_cells() {
        return Err(Error::DimensionMismatch {
            expected: state.grid().n_cells(),
            got: field.electric_field.len(),
        });
    }
    if unit_op.n_moments() != state.basis().n_moments() {
        return Err(Error::DimensionMismatch {
            expected: state.basis().n_moments(),
            got: unit_op.n_moments(),
        });
    }
    state
        .moments
        .par_iter_mut()
        .zip(field.electric_field.par_iter())
        .enumerate()
        .try_for_each(|(cell, (u, &e))| {
            if e == 0.0 {
                return Ok(());
            }
            let wrap = |source| Error::Cell {
                cell,
                source: Box::new(source),
            };
            let stepper = CrankNicolson::with_scale(unit_op, e, dt, *solver).map_err(wrap)?;
            *u = stepper.step(u, Some(u)).map_err(wrap)?;
            Ok(())
        })
}

/// Linear solver used for the coupled space-advection system.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum XSolver {
    /// Exact block-circulant solve: DFT in x, one dense complex system per mode.
    Spectral,
    /// Matrix-free GMRES on the real-space system, warm-started from `U^n`.
    Gmres(LinearSolverConfig),
}

/// Factored left matrix and explicit right matrix of one Fourier mode.
type ModeSystem = (LU<Complex<f64>, Dyn, Dyn>, DMatrix<Complex<f64>>);

/// Cached Crank–Nicolson map of `∂_t U + B̄ ∂_x U = 0` on a periodic grid.
pub struct SpaceAdvection {
    grid: SpatialGrid,
    n_moments: usize,
    base: DMatrix<f64>,
    generator: DMatrix<f64>,
    factor: Option<DMatrix<f64>>,
    half_step: f64,
    solver: XSolver,
    modes: Vec<ModeSystem>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for SpaceAdvection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SpaceAdvection")
            .field("grid", &self.grid)
            .field("n_moments", &self.n_moments)
            .field("half_step", &self.half_step)
            .field("solver", &self.solver)
            .finish()
    }
}

impl SpaceAdvection {
    pub fn new(op: &TransportOperator, grid: SpatialGrid, dt: f64, solver: XSolver) -> Result<Self> {
        if op.kind() != OperatorKind::SpaceB {
            return Err(Error::invalid("operator", "space advection needs a B-family operator"));
        }
        if grid.n_cells() < MIN_CELLS {
            return Err(Error::invalid(
                "cells",
                format!("space advection needs at least {MIN_CELLS} cells"),
            ));
        }
        if !(dt.is_finite() && dt >= 0.0) {
            return Err(Error::invalid("dt", format!("must be nonnegative and finite, got {dt}")));
        }
        if let XSolver::Gmres(cfg) = &solver {
            cfg.validate()?;
        }
        let n_moments = op.n_moments();
        let (generator, factor) = match op.metric_form() {
            Some(form) => (form.reduced.clone(), Some(form.factor.clone())),
            None => (op.matrix().clone(), None),
        };
        let base = DMatrix::identity(n_moments, n_moments);
        let half_step = 0.5 * dt;
        let n = grid.n_cells();
        let mut modes = Vec::new();
        if solver == XSolver::Spectral {
            for q in 0..n {
                let s = (2.0 * PI * q as f64 / n as f64).sin() / grid.dx() * half_step;
                let left = DMatrix::from_fn(n_moments, n_moments, |r, c| {
                    Complex::new(base[(r, c)], s * generator[(r, c)])
                });
                let right = DMatrix::from_fn(n_moments, n_moments, |r, c| {
                    Complex::new(base[(r, c)], -s * generator[(r, c)])
                });
                let lu = left.lu();
                if !lu.is_invertible() {
                    return Err(Error::SingularSystem { condition: None });
                }
                modes.push((lu, right));
            }
        }
        let mut planner = FftPlanner::new();
        Ok(Self {
            grid,
            n_moments,
            base,
            generator,
            factor,
            half_step,
            solver,
            modes,
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
        })
    }

    pub fn step(&self, state: &mut KineticState) -> Result<()> {
        if state.grid().n_cells() != self.grid.n_cells() || state.basis().n_moments() != self.n_moments {
            return Err(Error::DimensionMismatch {
                expected: self.grid.n_cells() * self.n_moments,
                got: state.grid().n_cells() * state.basis().n_moments(),
            });
        }
        if self.half_step == 0.0 {
            return Ok(());
        }
        if let Some(l) = &self.factor {
            for u in state.moments.iter_mut() {
                *u = MomentVector::from(l.tr_mul(u.as_vector()));
            }
        }
        match self.solver {
            XSolver::Spectral => self.step_spectral(state),
            XSolver::Gmres(cfg) => self.step_gmres(state, &cfg)?,
        }
        if let Some(l) = &self.factor {
            for u in state.moments.iter_mut() {
                *u = l
                    .tr_solve_lower_triangular(u.as_vector())
                    .map(MomentVector::from)
                    .ok_or(Error::SingularSystem { condition: None })?;
            }
        }
        Ok(())
    }

    fn step_spectral(&self, state: &mut KineticState) {
        let n = self.grid.n_cells();
        let nm = self.n_moments;
        // hat[k][q]: mode q of moment k
        let mut hat: Vec<Vec<Complex<f64>>> = (0..nm)
            .map(|k| {
                let mut row: Vec<Complex<f64>> =
                    state.moments.iter().map(|u| Complex::new(u.as_slice()[k], 0.0)).collect();
                self.forward.process(&mut row);
                row
            })
            .collect();
        let solved: Vec<DVector<Complex<f64>>> = (0..n)
            .into_par_iter()
            .map(|q| {
                let w = DVector::from_fn(nm, |k, _| hat[k][q]);
                let (lu, right) = &self.modes[q];
                lu.solve(&(right * w)).expect("factorization checked at construction")
            })
            .collect();
        for (q, w) in solved.iter().enumerate() {
            for k in 0..nm {
                hat[k][q] = w[k];
            }
        }
        let scale = 1.0 / n as f64;
        for (k, row) in hat.iter_mut().enumerate() {
            self.inverse.process(row);
            for (u, c) in state.moments.iter_mut().zip(row.iter()) {
                u.as_mut_slice()[k] = c.re * scale;
            }
        }
    }

    fn step_gmres(&self, state: &mut KineticState, cfg: &LinearSolverConfig) -> Result<()> {
        let system = CoupledSystem {
            base: &self.base,
            generator: &self.generator,
            coef: self.half_step / (2.0 * self.grid.dx()),
            n_cells: self.grid.n_cells(),
            n_moments: self.n_moments,
        };
        let flat: Vec<f64> = state.moments.iter().flat_map(|u| u.as_slice().iter().copied()).collect();
        let rhs = system.explicit(&flat);
        let out = gmres(&system, &rhs, Some(&flat), cfg)?;
        for (j, u) in state.moments.iter_mut().enumerate() {
            u.as_mut_slice().copy_from_slice(&out.solution[j * self.n_moments..(j + 1) * self.n_moments]);
        }
        Ok(())
    }
}

/// `x ↦ base·x_j + c·G(x_{j+1} − x_{j−1})` with periodic wrap.
struct CoupledSystem<'a> {
    base: &'a DMatrix<f64>,
    generator: &'a DMatrix<f64>,
    coef: f64,
    n_cells: usize,
    n_moments: usize,
}

impl CoupledSystem<'_> {
    fn apply_signed(&self, x: &[f64], y: &mut [f64], sign: f64) {
        let nm = self.n_moments;
        let n = self.n_cells;
        y.par_chunks_mut(nm).enumerate().for_each(|(j, yj)| {
            let xj = DVector::from_column_slice(&x[j * nm..(j + 1) * nm]);
            let next = (j + 1) % n;
            let prev = (j + n - 1) % n;
            let diff = DVector::from_fn(nm, |k, _| x[next * nm + k] - x[prev * nm + k]);
            let out = self.base * xj + self.generator * diff * (sign * self.coef);
            yj.copy_from_slice(out.as_slice());
        });
    }

    fn explicit(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; x.len()];
        self.apply_signed(x, &mut y, -1.0);
        y
    }
}

impl LinearOperator for CoupledSystem<'_> {
    fn dim(&self) -> usize {
        self.n_cells * self.n_moments
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.apply_signed(x, y, 1.0);
    }
}

/// Strang splitting `v(dt/2) → x(dt) → v(dt/2)`, with a Poisson refresh after
/// every sub-step unless the field is frozen.
#[derive(Debug)]
pub struct SplitStepper {
    velocity: TransportOperator,
    space: SpaceAdvection,
    dt: f64,
    solver: LinearSolverConfig,
    frozen_field: bool,
}

impl SplitStepper {
    /// `velocity` is the stabilized D-family operator built for `e = 1`.
    pub fn new(
        velocity: TransportOperator,
        space_op: &TransportOperator,
        grid: SpatialGrid,
        dt: f64,
        solver: LinearSolverConfig,
        x_solver: XSolver,
    ) -> Result<Self> {
        if velocity.kind() != OperatorKind::VelocityD {
            return Err(Error::invalid("operator", "velocity advection needs a D-family operator"));
        }
        if velocity.field() != Some(1.0) {
            return Err(Error::invalid("operator", "velocity operator must be built for e = 1"));
        }
        solver.validate()?;
        let space = SpaceAdvection::new(space_op, grid, dt, x_solver)?;
        Ok(Self {
            velocity,
            space,
            dt,
            solver,
            frozen_field: false,
        })
    }

    /// Keep the field fixed instead of refreshing it from the density.
    pub fn with_frozen_field(mut self, frozen: bool) -> Self {
        self.frozen_field = frozen;
        self
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn step(&self, state: &mut KineticState, field: &mut FieldState) -> Result<()> {
        if self.dt == 0.0 {
            return Ok(());
        }
        let half = 0.5 * self.dt;
        v_advection_step(state, field, &self.velocity, half, &self.solver)?;
        self.refresh(state, field);
        self.space.step(state)?;
        self.refresh(state, field);
        v_advection_step(state, field, &self.velocity, half, &self.solver)?;
        self.refresh(state, field);
        state.time += self.dt;
        Ok(())
    }

    fn refresh(&self, state: &KineticState, field: &mut FieldState) {
        if !self.frozen_field {
            *field = poisson_solve(state);
        }
    }
}

/// Conserved and physical quantities of a state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Diagnostics {
    pub mass: f64,
    pub momentum: f64,
    pub l2_a: f64,
    pub l2_eps: f64,
    pub kinetic_energy: f64,
    pub potential_energy: f64,
}

pub fn diagnostics(state: &KineticState, field: &FieldState, a: &GramMatrix, epsilon: f64) -> Diagnostics {
    let dx = state.grid().dx();
    let t = state.basis().temperature();
    let (k0, k2) = energy_coefficients(t);
    let c_mom = momentum_coefficient(t);
    let mut d = Diagnostics {
        mass: 0.0,
        momentum: 0.0,
        l2_a: 0.0,
        l2_eps: 0.0,
        kinetic_energy: 0.0,
        potential_energy: 0.0,
    };
    let per_cell: Vec<(f64, f64)> = state
        .moments()
        .par_iter()
        .map(|u| {
            let q = a.quadratic_form(u.as_slice());
            (q, u.as_slice().iter().map(|v| v * v).sum::<f64>())
        })
        .collect();
    for (u, (q, sq)) in state.moments().iter().zip(per_cell) {
        let s = u.as_slice();
        d.mass += mass_coefficient() * s[0];
        if s.len() > 1 {
            d.momentum += c_mom * s[1];
        }
        d.kinetic_energy += k0 * s[0] + if s.len() > 2 { k2 * s[2] } else { 0.0 };
        d.l2_a += q;
        d.l2_eps += q + epsilon * sq;
    }
    d.mass *= dx;
    d.momentum *= dx;
    d.kinetic_energy *= dx;
    d.l2_a *= dx;
    d.l2_eps *= dx;
    d.potential_energy = 0.5 * dx * field.electric_field.iter().map(|e| e * e).sum::<f64>();
    d
}

/// Spatial shape of the two-stream perturbation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Perturbation {
    /// `1 + α(cos kx + (cos 2kx + cos 3kx)/1.2)`.
    Benchmark,
    /// `1 + cos kx + α(cos 2kx + cos 3kx)/1.2`.
    Printed,
}

impl Perturbation {
    pub fn as_str(&self) -> &'static str {
        match self {
            Perturbation::Benchmark => "benchmark",
            Perturbation::Printed => "printed",
        }
    }
}

impl std::str::FromStr for Perturbation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "benchmark" => Ok(Self::Benchmark),
            "printed" => Ok(Self::Printed),
            other => Err(Error::invalid(
                "perturbation",
                format!("expected benchmark or printed, got `{other}`"),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoStreamInit {
    pub wavenumber: f64,
    pub amplitude: f64,
    pub perturbation: Perturbation,
}

impl Default for TwoStreamInit {
    fn default() -> Self {
        Self {
            wavenumber: 0.5,
            amplitude: 0.01,
            perturbation: Perturbation::Benchmark,
        }
    }
}

impl TwoStreamInit {
    pub fn profile(&self, x: f64) -> f64 {
        let k = self.wavenumber;
        let tail = ((2.0 * k * x).cos() + (3.0 * k * x).cos()) / 1.2;
        match self.perturbation {
            Perturbation::Benchmark => 1.0 + self.amplitude * ((k * x).cos() + tail),
            Perturbation::Printed => 1.0 + (k * x).cos() + self.amplitude * tail,
        }
    }
}

/// `u_0 = (12/7)·p(x)`, `u_2 = (10√2/7)·p(x)`, other moments zero.
pub fn init_two_stream(grid: SpatialGrid, basis: BasisParams, init: &TwoStreamInit) -> Result<KineticState> {
    if basis.max_degree() < 2 {
        return Err(Error::invalid("n", "two-stream data needs N ≥ 2"));
    }
    if !(init.wavenumber.is_finite() && init.wavenumber > 0.0) {
        return Err(Error::invalid("k", format!("must be positive, got {}", init.wavenumber)));
    }
    let periods = grid.length() * init.wavenumber / (2.0 * PI);
    if (periods - periods.round()).abs() > 1e-9 || periods.round() < 1.0 {
        return Err(Error::invalid(
            "length",
            format!("L = {} is not a multiple of 2π/k", grid.length()),
        ));
    }
    let moments = grid
        .positions()
        .iter()
        .map(|&x| {
            let p = init.profile(x);
            let mut u = MomentVector::zeros(basis.n_moments());
            u.as_mut_slice()[0] = 12.0 / 7.0 * p;
            u.as_mut_slice()[2] = 10.0 * std::f64::consts::SQRT_2 / 7.0 * p;
            u
        })
        .collect();
    KineticState::new(grid, basis, moments)
}

/// Single-cell pure Gaussian `U = (1, 0, …, 0)`.
pub fn init_advection(basis: BasisParams) -> KineticState {
    let grid = SpatialGrid::single_cell(1.0).expect("unit cell");
    KineticState::new(grid, basis, vec![MomentVector::unit(basis.n_moments(), 0)]).expect("consistent sizes")
}
