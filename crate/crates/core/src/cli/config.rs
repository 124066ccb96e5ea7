//! `key = value` run configuration.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::PathBuf;

use super::CliError;
use crate::integrator::{LinearSolverConfig, SolverMethod};
use crate::operators::{Method, OperatorKind};
use crate::vlasov1d::{Perturbation, XSolver};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    Advection,
    TwoStream,
    GramDump,
    OpDump,
}

impl Scenario {
    pub fn as_str(&self) -> &'static str {
        match self {
            Scenario::Advection => "advection",
            Scenario::TwoStream => "two_stream",
            Scenario::GramDump => "gram_dump",
            Scenario::OpDump => "op_dump",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "advection" => Some(Self::Advection),
            "two_stream" | "two-stream" => Some(Self::TwoStream),
            "gram_dump" | "gram" => Some(Self::GramDump),
            "op_dump" | "op" => Some(Self::OpDump),
            _ => None,
        }
    }
}

/// Linear solver selection. `Auto` and `Lu` use dense LU per cell and the
/// exact spectral solve in x; `Gmres` uses GMRES for both.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverChoice {
    Auto,
    Lu,
    Gmres,
}

impl SolverChoice {
    pub fn as_str(&self) -> &'static str {
        match self {
            SolverChoice::Auto => "auto",
            SolverChoice::Lu => "lu",
            SolverChoice::Gmres => "gmres",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "auto" => Some(Self::Auto),
            "lu" | "dense" => Some(Self::Lu),
            "gmres" => Some(Self::Gmres),
            _ => None,
        }
    }
}

/// Fully resolved run configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub scenario: Scenario,
    pub n: usize,
    pub temperature: f64,
    pub dt: f64,
    pub t_final: f64,
    pub reversal_time: f64,
    pub method: Method,
    pub epsilon: Option<f64>,
    pub cells: usize,
    pub length: f64,
    pub output: PathBuf,
    pub solver: SolverChoice,
    pub tolerance: f64,
    pub max_iterations: usize,
    pub restart: usize,
    pub v_min: f64,
    pub v_max: f64,
    pub v_points: usize,
    pub snapshot_every: usize,
    pub wavenumber: f64,
    pub amplitude: f64,
    pub perturbation: Perturbation,
    pub kind: OperatorKind,
    pub field: f64,
}

/// Accepted keys, in echo order.
pub const KEYS: &[&str] = &[
    "scenario",
    "n",
    "temp",
    "dt",
    "t_final",
    "reversal_time",
    "method",
    "eps",
    "cells",
    "length",
    "out",
    "solver",
    "tol",
    "max_iter",
    "restart",
    "v_min",
    "v_max",
    "v_points",
    "snapshot_every",
    "k",
    "alpha",
    "perturbation",
    "kind",
    "e",
];

impl RunConfig {
    /// Defaults of a scenario.
    pub fn defaults(scenario: Scenario) -> Self {
        let base = Self {
            scenario,
            n: 64,
            temperature: 2.0,
            dt: 0.1,
            t_final: 9.0,
            reversal_time: 4.5,
            method: Method::Projection,
            epsilon: None,
            cells: 1,
            length: 1.0,
            output: PathBuf::from("out"),
            solver: SolverChoice::Auto,
            tolerance: 1e-12,
            max_iterations: 1000,
            restart: 50,
            v_min: -8.0,
            v_max: 8.0,
            v_points: 401,
            snapshot_every: 15,
            wavenumber: 0.5,
            amplitude: 0.01,
            perturbation: Perturbation::Benchmark,
            kind: OperatorKind::VelocityD,
            field: 1.0,
        };
        match scenario {
            Scenario::TwoStream => Self {
                dt: 0.01,
                t_final: 20.0,
                cells: 32,
                length: 4.0 * PI,
                snapshot_every: 500,
                ..base
            },
            _ => base,
        }
    }

    /// Builds a configuration from ordered `(key, value, line)` entries; later
    /// entries override earlier ones. `scenario` is resolved first.
    pub fn from_entries(entries: &[(String, String, usize)]) -> Result<Self, CliError> {
        let mut latest: BTreeMap<&str, (&str, usize)> = BTreeMap::new();
        for (key, value, line) in entries {
            let key = key.as_str();
            if !KEYS.contains(&key) {
                return Err(CliError::Parse {
                    line: *line,
                    message: format!("unknown key `{key}`"),
                });
            }
            latest.insert(key, (value.as_str(), *line));
        }
        let scenario = match latest.get("scenario") {
            Some(&(v, line)) => Scenario::parse(v).ok_or_else(|| CliError::Parse {
                line,
                message: format!("unknown scenario `{v}`"),
            })?,
            None => Scenario::Advection,
        };
        let mut cfg = Self::defaults(scenario);
        for (key, value, line) in entries {
            cfg.set(key, value).map_err(|message| CliError::Parse { line: *line, message })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses configuration text.
    pub fn parse_str(text: &str) -> Result<Self, CliError> {
        Self::from_entries(&parse_entries(text)?)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, String> {
            value
                .parse::<T>()
                .map_err(|_| format!("`{key}`: cannot parse `{value}`"))
        }
        match key {
            "scenario" => {}
            "n" => self.n = num(key, value)?,
            "temp" => self.temperature = num(key, value)?,
            "dt" => self.dt = num(key, value)?,
            "t_final" => self.t_final = num(key, value)?,
            "reversal_time" => self.reversal_time = num(key, value)?,
            "method" => self.method = value.parse().map_err(|e| format!("{e}"))?,
            "eps" => self.epsilon = Some(num(key, value)?),
            "cells" => self.cells = num(key, value)?,
            "length" => self.length = num(key, value)?,
            "out" => self.output = PathBuf::from(value),
            "solver" => {
                self.solver =
                    SolverChoice::parse(value).ok_or_else(|| format!("`solver`: expected auto, lu or gmres, got `{value}`"))?
            }
            "tol" => self.tolerance = num(key, value)?,
            "max_iter" => self.max_iterations = num(key, value)?,
            "restart" => self.restart = num(key, value)?,
            "v_min" => self.v_min = num(key, value)?,
            "v_max" => self.v_max = num(key, value)?,
            "v_points" => self.v_points = num(key, value)?,
            "snapshot_every" => self.snapshot_every = num(key, value)?,
            "k" => self.wavenumber = num(key, value)?,
            "alpha" => self.amplitude = num(key, value)?,
            "perturbation" => self.perturbation = value.parse().map_err(|e| format!("{e}"))?,
            "kind" => self.kind = value.parse().map_err(|e| format!("{e}"))?,
            "e" => self.field = num(key, value)?,
            other => return Err(format!("unknown key `{other}`")),
        }
        Ok(())
    }

    /// Checks cross-field constraints.
    pub fn validate(&self) -> Result<(), CliError> {
        let fail = |field: &str, constraint: String| {
            Err(CliError::Validation {
                field: field.to_string(),
                constraint,
            })
        };
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.temperature) {
            return fail("temp", format!("must be positive, got {}", self.temperature));
        }
        match self.epsilon {
            Some(eps) if !(eps.is_finite() && eps >= 0.0) => {
                return fail("eps", format!("must be nonnegative, got {eps}"));
            }
            _ => {}
        }
        if self.method == Method::Penalized && !matches!(self.epsilon, Some(e) if e > 0.0) {
            return fail("eps", "method=pen requires eps > 0".into());
        }
        if !(self.tolerance > 0.0 && self.tolerance < 1.0) {
            return fail("tol", format!("must lie in (0, 1), got {}", self.tolerance));
        }
        if self.max_iterations == 0 || self.restart == 0 || self.restart > self.max_iterations {
            return fail("restart", "need 0 < restart ≤ max_iter".into());
        }
        if !self.field.is_finite() {
            return fail("e", "must be finite".into());
        }
        let stabilized = self.method != Method::Raw;
        if stabilized && self.n == 0 {
            return fail("n", "stabilized methods need n ≥ 1".into());
        }
        match self.scenario {
            Scenario::GramDump | Scenario::OpDump => return Ok(()),
            Scenario::Advection | Scenario::TwoStream => {}
        }
        if self.n == 0 {
            return fail("n", "runs need n ≥ 1".into());
        }
        if !positive(self.dt) {
            return fail("dt", format!("must be positive, got {}", self.dt));
        }
        if !(self.t_final.is_finite() && self.t_final >= 0.0) {
            return fail("t_final", format!("must be nonnegative, got {}", self.t_final));
        }
        let ratio = self.t_final / self.dt;
        if (ratio - ratio.round()).abs() > 1e-9 * ratio.max(1.0) {
            return fail("t_final", format!("must be a multiple of dt = {}", self.dt));
        }
        if !(self.v_min.is_finite() && self.v_max.is_finite() && self.v_max > self.v_min) {
            return fail("v_max", "need v_min < v_max".into());
        }
        if self.v_points < 2 {
            return fail("v_points", "need at least 2 points".into());
        }
        if !positive(self.length) {
            return fail("length", format!("must be positive, got {}", self.length));
        }
        if self.scenario == Scenario::TwoStream {
            if self.n < 2 {
                return fail("n", "two_stream needs n ≥ 2".into());
            }
            if self.cells < crate::vlasov1d::MIN_CELLS {
                return fail("cells", format!("need at least {} cells", crate::vlasov1d::MIN_CELLS));
            }
            if !positive(self.wavenumber) {
                return fail("k", "must be positive".into());
            }
            let periods = self.length * self.wavenumber / (2.0 * PI);
            if (periods - periods.round()).abs() > 1e-9 || periods.round() < 1.0 {
                return fail("length", "must be a multiple of 2π/k".into());
            }
        }
        Ok(())
    }

    /// Number of time steps of a run.
    pub fn steps(&self) -> usize {
        (self.t_final / self.dt).round() as usize
    }

    /// Solver for the per-cell velocity systems.
    pub fn velocity_solver(&self) -> LinearSolverConfig {
        let mut cfg = LinearSolverConfig {
            method: SolverMethod::DenseLu,
            tolerance: self.tolerance,
            max_iterations: self.max_iterations,
            restart: self.restart,
        };
        if self.solver == SolverChoice::Gmres {
            cfg.method = SolverMethod::Gmres;
        }
        cfg
    }

    /// Solver for the coupled space-advection system.
    pub fn space_solver(&self) -> XSolver {
        match self.solver {
            SolverChoice::Gmres => XSolver::Gmres(self.velocity_solver()),
            SolverChoice::Auto | SolverChoice::Lu => XSolver::Spectral,
        }
    }

    /// Configuration text that parses back to `self`.
    pub fn echo(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put("scenario", self.scenario.as_str().into());
        put("n", self.n.to_string());
        put("temp", fmt_f64(self.temperature));
        put("dt", fmt_f64(self.dt));
        put("t_final", fmt_f64(self.t_final));
        put("reversal_time", fmt_f64(self.reversal_time));
        put("method", self.method.as_str().into());
        if let Some(eps) = self.epsilon {
            put("eps", fmt_f64(eps));
        }
        put("cells", self.cells.to_string());
        put("length", fmt_f64(self.length));
        put("out", self.output.display().to_string());
        put("solver", self.solver.as_str().into());
        put("tol", fmt_f64(self.tolerance));
        put("max_iter", self.max_iterations.to_string());
        put("restart", self.restart.to_string());
        put("v_min", fmt_f64(self.v_min));
        put("v_max", fmt_f64(self.v_max));
        put("v_points", self.v_points.to_string());
        put("snapshot_every", self.snapshot_every.to_string());
        put("k", fmt_f64(self.wavenumber));
        put("alpha", fmt_f64(self.amplitude));
        put("perturbation", self.perturbation.as_str().into());
        put(
            "kind",
            match self.kind {
                OperatorKind::VelocityD => "d".into(),
                OperatorKind::SpaceB => "b".into(),
            },
        );
        put("e", fmt_f64(self.field));
        s
    }
}

/// Shortest representation that round-trips.
fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

/// Splits configuration text into `(key, value, line)` entries.
pub fn parse_entries(text: &str) -> Result<Vec<(String, String, usize)>, CliError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (k, v) = content.split_once('=').ok_or_else(|| CliError::Parse {
            line,
            message: format!("expected `key = value`, got `{content}`"),
        })?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() || v.is_empty() {
            return Err(CliError::Parse {
                line,
                message: format!("empty key or value in `{content}`"),
            });
        }
        out.push((k.to_string(), v.to_string(), line));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_advection_defaults() {
        let c = RunConfig::parse_str("").unwrap();
        assert_eq!(c.scenario, Scenario::Advection);
        assert_eq!((c.n, c.dt, c.temperature, c.t_final, c.reversal_time), (64, 0.1, 2.0, 9.0, 4.5));
        assert_eq!(c.steps(), 90);
    }

    #[test]
    fn two_stream_defaults() {
        let c = RunConfig::parse_str("scenario = two_stream").unwrap();
        assert_eq!((c.n, c.cells, c.dt, c.t_final), (64, 32, 0.01, 20.0));
        assert_eq!(c.steps(), 2000);
        assert_eq!(c.length, 4.0 * PI);
    }

    #[test]
    fn penalized_needs_epsilon() {
        assert!(matches!(
            RunConfig::parse_str("method = pen"),
            Err(CliError::Validation { ref field, .. }) if field == "eps"
        ));
        assert!(RunConfig::parse_str("method = pen\neps = 1e-10").is_ok());
    }

    #[test]
    fn unknown_key_reports_line() {
        let err = RunConfig::parse_str("n = 4\n# note\nbogus = 1\n").unwrap_err();
        assert!(matches!(err, CliError::Parse { line: 3, .. }));
        assert!(matches!(RunConfig::parse_str("n 4"), Err(CliError::Parse { line: 1, .. })));
        assert!(matches!(RunConfig::parse_str("n = four"), Err(CliError::Parse { line: 1, .. })));
    }

    #[test]
    fn comments_and_overrides() {
        let c = RunConfig::parse_str("n = 8 # small\nn = 12\n").unwrap();
        assert_eq!(c.n, 12);
    }

    #[test]
    fn echo_round_trip() {
        for text in [
            "",
            "scenario = two_stream\nmethod = pen\neps = 1e-10\nsolver = gmres\ntol = 1e-11",
            "scenario = op_dump\nkind = b\nmethod = proj-cons\nn = 40\ntemp = 1.3",
        ] {
            let c = RunConfig::parse_str(text).unwrap();
            assert_eq!(RunConfig::parse_str(&c.echo()).unwrap(), c);
        }
    }

    #[test]
    fn validation_failures() {
        for text in [
            "temp = 0",
            "dt = -1",
            "t_final = 0.35\ndt = 0.1\nt_final = 0.333",
            "scenario = two_stream\ncells = 3",
            "scenario = two_stream\nlength = 5",
            "tol = 2",
            "restart = 100\nmax_iter = 10",
            "v_min = 1\nv_max = -1",
        ] {
            assert!(matches!(RunConfig::parse_str(text), Err(CliError::Validation { .. })), "{text}");
        }
    }
}
