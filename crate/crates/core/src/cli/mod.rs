//! Scenario orchestration and CSV output.

mod config;

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use thiserror::Error;

pub use config::{parse_entries, RunConfig, Scenario, SolverChoice, KEYS};

use crate::error::Error;
use crate::gram::GramMatrix;
use crate::hermite_basis::{reconstruct, BasisParams, VelocityGrid};
use crate::integrator::CrankNicolson;
use crate::operators::{self, OperatorKind};
use crate::vlasov1d::{
    diagnostics, init_advection, init_two_stream, poisson_solve, reversal_field, Diagnostics, FieldState,
    KineticState, SpatialGrid, SplitStepper, TwoStreamInit,
};

pub const NORMS_HEADER: &str = "step,time,l2_A,l2_eps,mass,momentum,kinetic_energy,potential_energy";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{}: {message}", if *line == 0 { "command line".to_string() } else { format!("config line {line}") })]
    Parse { line: usize, message: String },

    #[error("invalid config `{field}`: {constraint}")]
    Validation { field: String, constraint: String },

    #[error("{context}: {source}")]
    Numerical {
        context: String,
        #[source]
        source: Error,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    /// 2 for configuration problems, 3 for solver failures, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Parse { .. } | CliError::Validation { .. } => 2,
            CliError::Numerical { source, .. } if source.is_solver_failure() => 3,
            CliError::Numerical { source: Error::InvalidParameter { .. }, .. } => 2,
            CliError::Numerical { .. } => 3,
            CliError::Io { .. } => 1,
        }
    }

    fn numerical(context: impl Into<String>) -> impl FnOnce(Error) -> CliError {
        let context = context.into();
        move |source| CliError::Numerical { context, source }
    }

    fn io(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
        move |source| CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Diagnostics after a given step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Record {
    pub step: usize,
    pub time: f64,
    pub diagnostics: Diagnostics,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub records: Vec<Record>,
    pub snapshots: Vec<(usize, KineticState)>,
    pub final_state: KineticState,
}

fn wants_snapshot(cfg: &RunConfig, step: usize, steps: usize) -> bool {
    step == 0 || step == steps || (cfg.snapshot_every > 0 && step.is_multiple_of(cfg.snapshot_every))
}

/// Runs a time-dependent scenario in memory.
pub fn simulate(cfg: &RunConfig) -> Result<RunOutput, CliError> {
    cfg.validate()?;
    match cfg.scenario {
        Scenario::Advection => simulate_advection(cfg),
        Scenario::TwoStream => simulate_two_stream(cfg),
        Scenario::GramDump | Scenario::OpDump => Err(CliError::Validation {
            field: "scenario".into(),
            constraint: format!("`{}` is not a time-dependent scenario", cfg.scenario.as_str()),
        }),
    }
}

fn simulate_advection(cfg: &RunConfig) -> Result<RunOutput, CliError> {
    let setup = CliError::numerical("advection setup");
    let basis = BasisParams::new(cfg.temperature, cfg.n).map_err(setup)?;
    let a = GramMatrix::stable(cfg.n, cfg.temperature).map_err(CliError::numerical("gram"))?;
    let op = operators::build_velocity(cfg.method, cfg.n, 1.0, cfg.temperature, cfg.epsilon)
        .map_err(CliError::numerical("operator"))?;
    let solver = cfg.velocity_solver();
    let forward = CrankNicolson::with_scale(&op, 1.0, cfg.dt, solver).map_err(CliError::numerical("operator"))?;
    let backward = CrankNicolson::with_scale(&op, -1.0, cfg.dt, solver).map_err(CliError::numerical("operator"))?;
    let eps = cfg.epsilon.unwrap_or(0.0);
    let steps = cfg.steps();
    let no_field = FieldState::zeros(1);

    let mut state = init_advection(basis);
    let mut records = vec![Record {
        step: 0,
        time: 0.0,
        diagnostics: diagnostics(&state, &no_field, &a, eps),
    }];
    let mut snapshots = vec![(0, state.clone())];
    for step in 1..=steps {
        let t_mid = (step as f64 - 0.5) * cfg.dt;
        let stepper = if reversal_field(t_mid, cfg.reversal_time) > 0.0 {
            &forward
        } else {
            &backward
        };
        let u = &state.moments()[0];
        let next = stepper.step(u, Some(u)).map_err(|source| CliError::Numerical {
            context: format!("advection step {step}"),
            source,
        })?;
        state.moments_mut()[0] = next;
        state.time = step as f64 * cfg.dt;
        records.push(Record {
            step,
            time: state.time,
            diagnostics: diagnostics(&state, &no_field, &a, eps),
        });
        if wants_snapshot(cfg, step, steps) {
            snapshots.push((step, state.clone()));
        }
    }
    Ok(RunOutput {
        records,
        snapshots,
        final_state: state,
    })
}

fn simulate_two_stream(cfg: &RunConfig) -> Result<RunOutput, CliError> {
    let setup = CliError::numerical("two-stream setup");
    let basis = BasisParams::new(cfg.temperature, cfg.n).map_err(CliError::numerical("two-stream setup"))?;
    let grid = SpatialGrid::new(cfg.length, cfg.cells).map_err(CliError::numerical("two-stream setup"))?;
    let init = TwoStreamInit {
        wavenumber: cfg.wavenumber,
        amplitude: cfg.amplitude,
        perturbation: cfg.perturbation,
    };
    let mut state = init_two_stream(grid, basis, &init).map_err(setup)?;
    let a = GramMatrix::stable(cfg.n, cfg.temperature).map_err(CliError::numerical("gram"))?;
    let velocity = operators::build_velocity(cfg.method, cfg.n, 1.0, cfg.temperature, cfg.epsilon)
        .map_err(CliError::numerical("velocity operator"))?;
    let space = operators::build_space(cfg.method, cfg.n, cfg.temperature, cfg.epsilon)
        .map_err(CliError::numerical("space operator"))?;
    let stepper = SplitStepper::new(velocity, &space, grid, cfg.dt, cfg.velocity_solver(), cfg.space_solver())
        .map_err(CliError::numerical("splitting"))?;
    let eps = cfg.epsilon.unwrap_or(0.0);
    let steps = cfg.steps();

    let mut field = poisson_solve(&state);
    let d0 = diagnostics(&state, &field, &a, eps);
    log::info!("initial potential energy {:e}", d0.potential_energy);
    let mut records = vec![Record {
        step: 0,
        time: 0.0,
        diagnostics: d0,
    }];
    let mut snapshots = vec![(0, state.clone())];
    for step in 1..=steps {
        stepper.step(&mut state, &mut field).map_err(|source| CliError::Numerical {
            context: format!("two-stream step {step}"),
            source: Error::Step {
                step,
                time: state.time,
                source: Box::new(source),
            },
        })?;
        state.time = step as f64 * cfg.dt;
        if !state.is_finite() {
            return Err(CliError::Numerical {
                context: format!("two-stream step {step}"),
                source: Error::NonFinite("moment state".into()),
            });
        }
        records.push(Record {
            step,
            time: state.time,
            diagnostics: diagnostics(&state, &field, &a, eps),
        });
        if wants_snapshot(cfg, step, steps) {
            snapshots.push((step, state.clone()));
        }
    }
    Ok(RunOutput {
        records,
        snapshots,
        final_state: state,
    })
}

fn fmt_real(v: f64) -> String {
    format!("{v:.16e}")
}

fn create(path: &Path) -> Result<BufWriter<fs::File>, CliError> {
    Ok(BufWriter::new(fs::File::create(path).map_err(CliError::io(path))?))
}

/// Writes `norms.csv`, the snapshots and `config_echo` into the output directory.
pub fn write_outputs(cfg: &RunConfig, out: &RunOutput) -> Result<(), CliError> {
    let dir = cfg.output.as_path();
    fs::create_dir_all(dir).map_err(CliError::io(dir))?;

    let path = dir.join("norms.csv");
    let mut w = create(&path)?;
    let mut body = String::with_capacity(out.records.len() * 200);
    body.push_str(NORMS_HEADER);
    body.push('\n');
    for r in &out.records {
        let d = &r.diagnostics;
        body.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.step,
            fmt_real(r.time),
            fmt_real(d.l2_a),
            fmt_real(d.l2_eps),
            fmt_real(d.mass),
            fmt_real(d.momentum),
            fmt_real(d.kinetic_energy),
            fmt_real(d.potential_energy)
        ));
    }
    w.write_all(body.as_bytes()).map_err(CliError::io(&path))?;
    w.flush().map_err(CliError::io(&path))?;

    let grid = VelocityGrid::uniform(cfg.v_min, cfg.v_max, cfg.v_points).map_err(CliError::numerical("velocity grid"))?;
    for (step, state) in &out.snapshots {
        let path = dir.join(format!("snapshot_{step}.csv"));
        let mut w = create(&path)?;
        let mut body = String::from("x,v,f\n");
        let t = state.basis().temperature();
        for (j, u) in state.moments().iter().enumerate() {
            let x = fmt_real(state.grid().position(j));
            let f = reconstruct(u.as_slice(), &grid, t);
            for (v, fv) in grid.points().iter().zip(f) {
                body.push_str(&format!("{x},{},{}\n", fmt_real(*v), fmt_real(fv)));
            }
        }
        w.write_all(body.as_bytes()).map_err(CliError::io(&path))?;
        w.flush().map_err(CliError::io(&path))?;
    }

    let path = dir.join("config_echo");
    fs::write(&path, cfg.echo()).map_err(CliError::io(&path))?;
    Ok(())
}

/// Runs the configured scenario and writes its outputs.
pub fn run(cfg: &RunConfig) -> Result<RunOutput, CliError> {
    let out = simulate(cfg)?;
    write_outputs(cfg, &out)?;
    Ok(out)
}

/// Row-major CSV of a matrix, 17 significant digits.
pub fn matrix_csv(m: &DMatrix<f64>) -> String {
    let mut s = String::new();
    for r in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|c| fmt_real(m[(r, c)])).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

/// `A^N` as configured.
pub fn gram_matrix(cfg: &RunConfig) -> Result<DMatrix<f64>, CliError> {
    Ok(GramMatrix::stable(cfg.n, cfg.temperature)
        .map_err(CliError::numerical("gram"))?
        .entries()
        .clone())
}

/// The transport operator selected by `kind`, `method`, `e` and `eps`.
pub fn operator_matrix(cfg: &RunConfig) -> Result<DMatrix<f64>, CliError> {
    let op = match cfg.kind {
        OperatorKind::VelocityD => operators::build_velocity(cfg.method, cfg.n, cfg.field, cfg.temperature, cfg.epsilon),
        OperatorKind::SpaceB => operators::build_space(cfg.method, cfg.n, cfg.temperature, cfg.epsilon),
    }
    .map_err(CliError::numerical("operator"))?;
    Ok(op.matrix().clone())
}

/// Writes a matrix CSV to `path`.
pub fn write_matrix(path: &Path, m: &DMatrix<f64>) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(CliError::io(parent))?;
    }
    fs::write(path, matrix_csv(m)).map_err(CliError::io(path))
}
