//! Command-line front end.
//!
//! ```text
//! adiavac <tower|modes|bogoliubov|probe|check> [--config FILE] [flags]
//! ```
//!
//! Model flags: `--model {constant,desitter,powerlaw,tanh,spline}`, `--A`,
//! `--B`, `--H`, `--p`, `--t-offset`, `--tau`, `--knots FILE`.
//! Mode flags: `--kappa {-1,0,1}`, `--k`, `--k-list 1,2,5`, `--m`.
//! Run flags: `--t0`, `--t1`, `--order`, `--tol` (default 1e-10),
//! `--samples`, `--h3-grid`, `--output FILE`, `--format {csv,json}`.
//!
//! A config file uses the model-file grammar (`key=value`, `#` comments) with
//! the keys `kind A B H p t_offset tau knots kappa k k_list m t0 t1 order tol
//! samples h3_grid output format`. Flags override file entries.
//!
//! Exit codes: 0 success, 2 non-positive `(Ω^[n])²`, 3 derivative budget
//! exhausted, 4 I/O or parse error, 5 invariant failure.
//!
//! `ADIAVAC_THREADS` caps the worker pool used for k sweeps (0 or unset =
//! one thread per core). Results are collected in input order.

use std::ffi::OsString;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adiabatic::{adiabatic_vacuum, omega_tower, AdiabaticError, TowerError};
use crate::cosmology::{CosmologyError, Curvature, ModeSpec, ModelParams, ScaleFactorModel};
use crate::modes::{
    bogoliubov_states, integrate_mode, integrate_mode_on_grid, quasifree_positivity_check, two_point_matrix,
    uniform_grid, write_trajectory_csv, ModeError, ModeSolution, ModeState, WRONSKIAN_TOLERANCE,
};
use crate::probe::{affine_decompose, fn_chain, probe_report, ProbeError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_HADAMARD: i32 = 2;
pub const EXIT_EXHAUSTED: i32 = 3;
pub const EXIT_IO: i32 = 4;
pub const EXIT_INVARIANT: i32 = 5;

#[derive(Debug, Parser)]
#[command(name = "adiavac", version, about = "Adiabatic vacuum states on Robertson-Walker backgrounds")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum CommandKind {
    Tower,
    Modes,
    Bogoliubov,
    Probe,
    Check,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Frequencies Ω^[0..n] and their status.
    Tower(RunArgs),
    /// Mode trajectory from t0 to t1.
    Modes(RunArgs),
    /// |β|² of the evolved order-n state against the order-n state at t1.
    Bogoliubov(RunArgs),
    /// Affine fit, f_n chain and maximal order as JSON.
    Probe(RunArgs),
    /// Runs the invariant suite; exits 5 on any violation.
    Check(RunArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long = "A", allow_negative_numbers = true)]
    pub a: Option<f64>,
    #[arg(long = "B", allow_negative_numbers = true)]
    pub b: Option<f64>,
    #[arg(long = "H", allow_negative_numbers = true)]
    pub h: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub p: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub t_offset: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub knots: Option<PathBuf>,
    #[arg(long, allow_negative_numbers = true)]
    pub kappa: Option<i8>,
    #[arg(long)]
    pub k: Option<f64>,
    #[arg(long)]
    pub k_list: Option<String>,
    #[arg(long)]
    pub m: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub t0: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub t1: Option<f64>,
    #[arg(long)]
    pub order: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
    /// Number of output samples between t0 and t1 (modes).
    #[arg(long)]
    pub samples: Option<usize>,
    /// Evaluate the tower on this many points of [t0, t1] (tower).
    #[arg(long)]
    pub h3_grid: Option<usize>,
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Io(String),
    Cosmology(CosmologyError),
    Adiabatic(AdiabaticError),
    Mode(ModeError),
    Probe(ProbeError),
    Invariant(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(msg) => write!(f, "usage error: {msg}"),
            CliError::Io(msg) => write!(f, "i/o error: {msg}"),
            CliError::Cosmology(e) => write!(f, "{e}"),
            CliError::Adiabatic(e) => write!(f, "{e}"),
            CliError::Mode(e) => write!(f, "{e}"),
            CliError::Probe(e) => write!(f, "{e}"),
            CliError::Invariant(msg) => write!(f, "invariant failure: {msg}"),
        }
    }
}

impl std::error::Error for CliError {}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Io(_) | CliError::Cosmology(_) => EXIT_IO,
            CliError::Adiabatic(e) => adiabatic_exit_code(e),
            CliError::Mode(ModeError::Cosmology(_)) | CliError::Mode(ModeError::InvalidTolerance(_)) => EXIT_IO,
            CliError::Mode(ModeError::InvalidGrid(_)) => EXIT_IO,
            CliError::Mode(_) => EXIT_INVARIANT,
            CliError::Probe(ProbeError::Tower(t)) => adiabatic_exit_code(&t.cause),
            CliError::Probe(ProbeError::Adiabatic(e)) => adiabatic_exit_code(e),
            CliError::Probe(ProbeError::Cosmology(_)) | CliError::Probe(ProbeError::InvalidInput(_)) => EXIT_IO,
            CliError::Probe(_) | CliError::Invariant(_) => EXIT_INVARIANT,
        }
    }
}

fn adiabatic_exit_code(err: &AdiabaticError) -> i32 {
    match err {
        AdiabaticError::HadamardViolation { .. } => EXIT_HADAMARD,
        AdiabaticError::OrderExhausted { .. } => EXIT_EXHAUSTED,
        AdiabaticError::Cosmology(CosmologyError::SmoothnessExceeded { .. }) => EXIT_EXHAUSTED,
        AdiabaticError::Cosmology(_) => EXIT_IO,
        AdiabaticError::Jet(_) => EXIT_INVARIANT,
    }
}

impl From<CosmologyError> for CliError {
    fn from(e: CosmologyError) -> Self {
        CliError::Cosmology(e)
    }
}

impl From<AdiabaticError> for CliError {
    fn from(e: AdiabaticError) -> Self {
        CliError::Adiabatic(e)
    }
}

impl From<TowerError> for CliError {
    fn from(e: TowerError) -> Self {
        CliError::Adiabatic(e.cause)
    }
}

impl From<ModeError> for CliError {
    fn from(e: ModeError) -> Self {
        CliError::Mode(e)
    }
}

impl From<ProbeError> for CliError {
    fn from(e: ProbeError) -> Self {
        CliError::Probe(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

/// Fully resolved settings of one invocation.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub command: CommandKind,
    pub model: ScaleFactorModel,
    pub kappa: Curvature,
    pub m: f64,
    /// Modes to run, in output order.
    pub ks: Vec<f64>,
    pub t0: f64,
    pub t1: Option<f64>,
    pub order: usize,
    pub tol: f64,
    pub samples: Option<usize>,
    pub h3_grid: Option<usize>,
    pub output: Option<PathBuf>,
    pub format: Format,
}

fn absolute(path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        std::env::current_dir().map(|d| d.join(path)).unwrap_or_else(|_| path.to_path_buf())
    }
}

impl RunArgs {
    /// Config-file entries overlaid with the flags that were given.
    pub fn merged_params(&self) -> Result<ModelParams, CliError> {
        let mut params = match &self.config {
            Some(path) => ModelParams::load(path)?,
            None => ModelParams::new(),
        };
        let mut set = |key: &str, value: Option<String>| {
            if let Some(v) = value {
                params.insert(key, &v);
            }
        };
        set("kind", self.model.clone());
        set("A", self.a.map(|x| x.to_string()));
        set("B", self.b.map(|x| x.to_string()));
        set("H", self.h.map(|x| x.to_string()));
        set("p", self.p.map(|x| x.to_string()));
        set("t_offset", self.t_offset.map(|x| x.to_string()));
        set("tau", self.tau.map(|x| x.to_string()));
        set("knots", self.knots.as_ref().map(|p| absolute(p).display().to_string()));
        set("kappa", self.kappa.map(|x| x.to_string()));
        set("k", self.k.map(|x| x.to_string()));
        set("k_list", self.k_list.clone());
        set("m", self.m.map(|x| x.to_string()));
        set("t0", self.t0.map(|x| x.to_string()));
        set("t1", self.t1.map(|x| x.to_string()));
        set("order", self.order.map(|x| x.to_string()));
        set("tol", self.tol.map(|x| x.to_string()));
        set("samples", self.samples.map(|x| x.to_string()));
        set("h3_grid", self.h3_grid.map(|x| x.to_string()));
        set("output", self.output.as_ref().map(|p| absolute(p).display().to_string()));
        set(
            "format",
            self.format.map(|f| match f {
                Format::Csv => "csv".to_string(),
                Format::Json => "json".to_string(),
            }),
        );
        Ok(params)
    }
}

fn count(params: &ModelParams, key: &str) -> Result<Option<usize>, CliError> {
    params
        .get(key)
        .map(|raw| {
            raw.parse::<usize>()
                .map_err(|_| CliError::Usage(format!("`{key}={raw}` is not a non-negative integer")))
        })
        .transpose()
}

fn parse_k_list(raw: &str) -> Result<Vec<f64>, CliError> {
    let ks = raw
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| CliError::Usage(format!("bad entry `{s}` in k list")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    if ks.is_empty() {
        return Err(CliError::Usage("empty k list".into()));
    }
    Ok(ks)
}

impl RunConfig {
    pub fn from_params(command: CommandKind, params: &ModelParams) -> Result<Self, CliError> {
        let model = ScaleFactorModel::from_params(params)?;
        let kappa_raw = params.number_or("kappa", 0.0)?;
        if kappa_raw.fract() != 0.0 {
            return Err(CliError::Usage(format!("kappa must be -1, 0 or 1, got {kappa_raw}")));
        }
        let kappa = Curvature::try_from(kappa_raw as i8)?;
        let m = params.number_or("m", 0.0)?;
        let ks = match params.get("k_list") {
            Some(raw) => parse_k_list(raw)?,
            None => vec![params.number("k")?],
        };
        for &k in &ks {
            ModeSpec::new(kappa, k, m)?;
        }
        let t0 = params.number_or("t0", 0.0)?;
        let t1 = params.get("t1").map(|_| params.number("t1")).transpose()?;
        let order = count(params, "order")?.unwrap_or(0);
        let tol = params.number_or("tol", 1e-10)?;
        let format = match params.get("format") {
            None if command == CommandKind::Probe => Format::Json,
            None | Some("csv") => Format::Csv,
            Some("json") => Format::Json,
            Some(other) => return Err(CliError::Usage(format!("unknown format `{other}`"))),
        };
        let config = Self {
            command,
            model,
            kappa,
            m,
            ks,
            t0,
            t1,
            order,
            tol,
            samples: count(params, "samples")?,
            h3_grid: count(params, "h3_grid")?,
            output: params.get("output").map(PathBuf::from),
            format,
        };
        config.validate()?;
        Ok(config)
    }

    fn validate(&self) -> Result<(), CliError> {
        let needs_t1 = matches!(self.command, CommandKind::Modes | CommandKind::Bogoliubov) || self.h3_grid.is_some();
        match self.t1 {
            Some(t1) if t1 == self.t0 && needs_t1 => Err(CliError::Usage("t1 must differ from t0".into())),
            None if needs_t1 => Err(CliError::Usage("this command needs --t1".into())),
            _ => Ok(()),
        }
    }

    pub fn spec(&self, k: f64) -> Result<ModeSpec, CliError> {
        Ok(ModeSpec::new(self.kappa, k, self.m)?)
    }
}

/// Everything a command produces: the artifact and the exit status it implies.
#[derive(Debug)]
pub struct Outcome {
    pub body: Vec<u8>,
    pub status: i32,
    pub diagnostics: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TowerStatus {
    Ok,
    HadamardViolation,
    OrderExhausted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TowerRow {
    pub t0: f64,
    pub k: f64,
    pub n: usize,
    pub omega_sq: Option<f64>,
    pub omega: Option<f64>,
    pub omega_dot: Option<f64>,
    pub status: TowerStatus,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BogoliubovRow {
    pub k: f64,
    pub n: usize,
    pub t0: f64,
    pub t1: f64,
    pub re_alpha: f64,
    pub im_alpha: f64,
    pub re_beta: f64,
    pub im_beta: f64,
    pub beta_sq: f64,
    pub norm_defect: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckRow {
    pub k: f64,
    pub name: String,
    pub value: f64,
    pub bound: f64,
    pub pass: bool,
}

/// Rows as CSV with a header, or a pretty JSON array.
pub fn encode_rows<T: Serialize>(rows: &[T], format: Format) -> Result<Vec<u8>, CliError> {
    match format {
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            for row in rows {
                w.serialize(row)?;
            }
            w.into_inner().map_err(|e| CliError::Io(e.to_string()))
        }
        Format::Json => {
            let mut out = serde_json::to_vec_pretty(rows)?;
            out.push(b'\n');
            Ok(out)
        }
    }
}

pub fn decode_rows<T: for<'de> Deserialize<'de>>(bytes: &[u8], format: Format) -> Result<Vec<T>, CliError> {
    match format {
        Format::Csv => Ok(csv::Reader::from_reader(bytes).deserialize().collect::<Result<_, _>>()?),
        Format::Json => Ok(serde_json::from_slice(bytes)?),
    }
}

fn thread_pool() -> Result<rayon::ThreadPool, CliError> {
    let threads = match std::env::var("ADIAVAC_THREADS") {
        Ok(raw) => raw
            .trim()
            .parse::<usize>()
            .map_err(|_| CliError::Usage(format!("ADIAVAC_THREADS=`{raw}` is not a count")))?,
        Err(_) => 0,
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Io(e.to_string()))
}

/// Runs `job` over `items` on the capped pool, keeping input order.
fn fan_out<T, R, F>(items: &[T], job: F) -> Result<Vec<R>, CliError>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    Ok(thread_pool()?.install(|| items.par_iter().map(&job).collect()))
}

fn tower_rows(cfg: &RunConfig, t0: f64, k: f64) -> Result<(Vec<TowerRow>, i32, Option<String>), CliError> {
    let spec = cfg.spec(k)?;
    let row = |n: usize, omega_sq: Option<f64>, omega: Option<f64>, omega_dot: Option<f64>, status| TowerRow {
        t0,
        k,
        n,
        omega_sq,
        omega,
        omega_dot,
        status,
    };
    let (levels, failure) = match omega_tower(&cfg.model, &spec, t0, cfg.order) {
        Ok(levels) => (levels, None),
        Err(err) => (err.partial, Some(err.cause)),
    };
    let mut rows: Vec<TowerRow> = levels
        .iter()
        .map(|f| row(f.order_n, Some(f.omega_squared()), Some(f.omega()), f.omega_dot(), TowerStatus::Ok))
        .collect();
    let (status, note) = match failure {
        None => (EXIT_OK, None),
        Some(AdiabaticError::HadamardViolation { n, omega_sq }) => {
            rows.push(row(n, Some(omega_sq), None, None, TowerStatus::HadamardViolation));
            (EXIT_HADAMARD, Some(format!("k = {k}, t0 = {t0}: (Omega^[{n}])^2 = {omega_sq} is not positive")))
        }
        Some(AdiabaticError::OrderExhausted { n, required, available }) => {
            rows.push(row(n, None, None, None, TowerStatus::OrderExhausted));
            (
                EXIT_EXHAUSTED,
                Some(format!(
                    "k = {k}, t0 = {t0}: order {n} needs {required} derivatives, model supplies {available}"
                )),
            )
        }
        Some(other) => return Err(other.into()),
    };
    Ok((rows, status, note))
}

fn run_tower(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let times = match cfg.h3_grid {
        Some(samples) => uniform_grid(cfg.t0, cfg.t1.unwrap_or(cfg.t0), samples),
        None => vec![cfg.t0],
    };
    let jobs: Vec<(f64, f64)> = cfg.ks.iter().flat_map(|&k| times.iter().map(move |&t| (t, k))).collect();
    let results = fan_out(&jobs, |&(t, k)| tower_rows(cfg, t, k))?;
    let mut rows = Vec::new();
    let mut status = EXIT_OK;
    let mut diagnostics = Vec::new();
    for result in results {
        let (part, code, note) = result?;
        rows.extend(part);
        if status == EXIT_OK {
            status = code;
        }
        diagnostics.extend(note);
    }
    Ok(Outcome {
        body: encode_rows(&rows, cfg.format)?,
        status,
        diagnostics,
    })
}

fn evolve(cfg: &RunConfig, spec: &ModeSpec) -> Result<ModeSolution, CliError> {
    let t1 = cfg.t1.ok_or_else(|| CliError::Usage("missing --t1".into()))?;
    let init = adiabatic_vacuum(&cfg.model, spec, cfg.t0, cfg.order)?;
    Ok(match cfg.samples {
        Some(n) => integrate_mode_on_grid(&cfg.model, spec, &init, &uniform_grid(cfg.t0, t1, n), cfg.tol)?,
        None => integrate_mode(&cfg.model, spec, &init, t1, cfg.tol)?,
    })
}

fn run_modes(cfg: &RunConfig) -> Result<Outcome, CliError> {
    if cfg.ks.len() != 1 {
        return Err(CliError::Usage("modes takes a single --k".into()));
    }
    let solution = evolve(cfg, &cfg.spec(cfg.ks[0])?)?;
    let rows = solution.trajectory_rows();
    let body = match cfg.format {
        Format::Csv => {
            let mut out = Vec::new();
            write_trajectory_csv(&rows, &mut out)?;
            out
        }
        Format::Json => encode_rows(&rows, Format::Json)?,
    };
    Ok(Outcome {
        body,
        status: EXIT_OK,
        diagnostics: Vec::new(),
    })
}

/// Order-n state from `t0` evolved to `t1` and projected on the order-n state at `t1`.
pub fn bogoliubov_row(cfg: &RunConfig, k: f64) -> Result<BogoliubovRow, CliError> {
    let spec = cfg.spec(k)?;
    let t1 = cfg.t1.ok_or_else(|| CliError::Usage("missing --t1".into()))?;
    let init = adiabatic_vacuum(&cfg.model, &spec, cfg.t0, cfg.order)?;
    let evolved = integrate_mode(&cfg.model, &spec, &init, t1, cfg.tol)?.last_state();
    let reference = ModeState::from(&adiabatic_vacuum(&cfg.model, &spec, t1, cfg.order)?);
    let pair = bogoliubov_states(&reference, &evolved, WRONSKIAN_TOLERANCE)?;
    Ok(BogoliubovRow {
        k,
        n: cfg.order,
        t0: cfg.t0,
        t1,
        re_alpha: pair.alpha.re,
        im_alpha: pair.alpha.im,
        re_beta: pair.beta.re,
        im_beta: pair.beta.im,
        beta_sq: pair.particle_number(),
        norm_defect: pair.norm_defect(),
    })
}

fn run_bogoliubov(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let rows = fan_out(&cfg.ks, |&k| bogoliubov_row(cfg, k))?
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Outcome {
        body: encode_rows(&rows, cfg.format)?,
        status: EXIT_OK,
        diagnostics: Vec::new(),
    })
}

fn run_probe(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let reports = fan_out(&cfg.ks, |&k| {
        let spec = cfg.spec(k)?;
        Ok::<_, CliError>(probe_report(&cfg.model, &spec, cfg.t0, cfg.order)?)
    })?
    .into_iter()
    .collect::<Result<Vec<_>, _>>()?;
    let body = match cfg.format {
        Format::Json if reports.len() == 1 => {
            let mut out = serde_json::to_vec_pretty(&reports[0])?;
            out.push(b'\n');
            out
        }
        Format::Json => encode_rows(&reports, Format::Json)?,
        Format::Csv => {
            #[derive(Serialize)]
            struct ChainRow {
                k: f64,
                index: usize,
                recursion: f64,
                closed_form: f64,
                measured: f64,
            }
            let rows: Vec<ChainRow> = reports
                .iter()
                .flat_map(|r| {
                    r.fn_chain.iter().map(move |e| ChainRow {
                        k: r.mode.k,
                        index: e.index,
                        recursion: e.recursion,
                        closed_form: e.closed_form,
                        measured: e.measured,
                    })
                })
                .collect();
            encode_rows(&rows, Format::Csv)?
        }
    };
    Ok(Outcome {
        body,
        status: EXIT_OK,
        diagnostics: Vec::new(),
    })
}

fn check_rows(cfg: &RunConfig, k: f64) -> Result<Vec<CheckRow>, CliError> {
    let spec = cfg.spec(k)?;
    let mut rows = Vec::new();
    let mut push = |name: &str, value: f64, bound: f64| {
        rows.push(CheckRow {
            k,
            name: name.to_string(),
            value,
            bound,
            pass: value <= bound,
        })
    };

    let init = adiabatic_vacuum(&cfg.model, &spec, cfg.t0, cfg.order)?;
    let state = ModeState::from(&init);
    push("initial_wronskian", state.wronskian_error(), 1e-12);

    let s = two_point_matrix(state.q, state.p)?;
    let scale = s.trace().max(1.0);
    push("s_hermiticity", s.hermiticity_error() / scale, 1e-12);
    push("s_determinant", s.determinant().norm() / (scale * scale), 1e-12);
    push("s_min_eigenvalue_deficit", (-s.eigenvalues()[0] / scale).max(0.0), 1e-12);
    let trials = cfg.samples.unwrap_or(1000);
    push("quasifree_violations", quasifree_positivity_check(&s, trials).violations as f64, 0.0);

    let a = cfg.model.scale_factor_jet(cfg.t0, 1)?;
    let fit = affine_decompose(a.value(), a.derivative(1), &spec)?;
    push("affine_residual", fit.quadratic_residual.abs() / fit.scale, 1e-12);
    push("slope_sign", if fit.slope < 0.0 { 0.0 } else { 1.0 }, 0.0);

    if cfg.order >= 1 {
        let chain = fn_chain(&cfg.model, &spec, cfg.t0, cfg.order + 1)?;
        push("fn_closed_form_gap", chain.max_closed_form_gap(), 1e-10);
    }

    if let Some(t1) = cfg.t1.filter(|t1| *t1 != cfg.t0) {
        let solution = integrate_mode(&cfg.model, &spec, &init, t1, cfg.tol)?;
        push("wronskian_drift", solution.max_wronskian_drift(), 10.0 * cfg.tol);
        let end = ModeState::from(&adiabatic_vacuum(&cfg.model, &spec, t1, cfg.order)?);
        let defect = bogoliubov_states(&end, &solution.last_state(), WRONSKIAN_TOLERANCE)?
            .norm_defect()
            .abs();
        push("bogoliubov_norm_defect", defect, 1e-8);
    }
    Ok(rows)
}

fn run_check(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let rows: Vec<CheckRow> = fan_out(&cfg.ks, |&k| check_rows(cfg, k))?
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .flatten()
        .collect();
    let failures: Vec<String> = rows
        .iter()
        .filter(|r| !r.pass)
        .map(|r| format!("k = {}: {} = {} exceeds {}", r.k, r.name, r.value, r.bound))
        .collect();
    Ok(Outcome {
        body: encode_rows(&rows, cfg.format)?,
        status: if failures.is_empty() { EXIT_OK } else { EXIT_INVARIANT },
        diagnostics: failures,
    })
}

pub fn execute(cfg: &RunConfig) -> Result<Outcome, CliError> {
    match cfg.command {
        CommandKind::Tower => run_tower(cfg),
        CommandKind::Modes => run_modes(cfg),
        CommandKind::Bogoliubov => run_bogoliubov(cfg),
        CommandKind::Probe => run_probe(cfg),
        CommandKind::Check => run_check(cfg),
    }
}

impl Command {
    fn split(&self) -> (CommandKind, &RunArgs) {
        match self {
            Command::Tower(a) => (CommandKind::Tower, a),
            Command::Modes(a) => (CommandKind::Modes, a),
            Command::Bogoliubov(a) => (CommandKind::Bogoliubov, a),
            Command::Probe(a) => (CommandKind::Probe, a),
            Command::Check(a) => (CommandKind::Check, a),
        }
    }
}

fn emit(cfg: &RunConfig, outcome: &Outcome) -> Result<(), CliError> {
    match &cfg.output {
        Some(path) => std::fs::write(path, &outcome.body)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?,
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(&outcome.body)?;
            stdout.flush()?;
        }
    }
    Ok(())
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(err) => {
            let code = if err.use_stderr() { EXIT_IO } else { EXIT_OK };
            let _ = err.print();
            return code;
        }
    };
    let (kind, args) = cli.command.split();
    let result = args
        .merged_params()
        .and_then(|params| RunConfig::from_params(kind, &params))
        .and_then(|cfg| {
            let outcome = execute(&cfg)?;
            emit(&cfg, &outcome)?;
            Ok(outcome)
        });
    match result {
        Ok(outcome) => {
            for line in &outcome.diagnostics {
                eprintln!("adiavac: {line}");
            }
            outcome.status
        }
        Err(err) => {
            eprintln!("adiavac: {err}");
            err.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(args: &[&str]) -> RunConfig {
        let cli = Cli::try_parse_from(std::iter::once("adiavac").chain(args.iter().copied())).unwrap();
        let (kind, run_args) = cli.command.split();
        RunConfig::from_params(kind, &run_args.merged_params().unwrap()).unwrap()
    }

    #[test]
    fn flags_resolve_to_model_and_mode() {
        let cfg = config(&["tower", "--model", "desitter", "--H", "1", "--kappa", "-1", "--k", "0", "--m", "1"]);
        assert_eq!(cfg.model, ScaleFactorModel::de_sitter(1.0).unwrap());
        assert_eq!(cfg.kappa, Curvature::Open);
        assert_eq!(cfg.ks, vec![0.0]);
        assert_eq!(cfg.tol, 1e-10);
        assert_eq!(cfg.format, Format::Csv);
    }

    #[test]
    fn flags_override_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(&path, "kind=tanh\nA=2\nB=1\nkappa=0\nk=3\nm=1\norder=2\n").unwrap();
        let path_str = path.to_str().unwrap();
        let cfg = config(&["probe", "--config", path_str, "--B", "0.5", "--k-list", "1, 2,5"]);
        assert_eq!(cfg.model, ScaleFactorModel::tanh_transition(2.0, 0.5, 1.0).unwrap());
        assert_eq!(cfg.ks, vec![1.0, 2.0, 5.0]);
        assert_eq!(cfg.order, 2);
    }

    #[test]
    fn integration_commands_need_distinct_t1() {
        let cli = Cli::try_parse_from(["adiavac", "modes", "--model", "constant", "--k", "1", "--t1", "0"]).unwrap();
        let (kind, args) = cli.command.split();
        let err = RunConfig::from_params(kind, &args.merged_params().unwrap()).unwrap_err();
        assert_eq!(err.exit_code(), EXIT_IO);
    }

    #[test]
    fn closed_universe_needs_integer_k() {
        let cli = Cli::try_parse_from(["adiavac", "tower", "--model", "constant", "--kappa", "1", "--k", "1.5"]).unwrap();
        let (kind, args) = cli.command.split();
        assert!(RunConfig::from_params(kind, &args.merged_params().unwrap()).is_err());
    }

    #[test]
    fn tower_rows_round_trip() {
        let cfg = config(&["tower", "--model", "tanh", "--A", "2", "--B", "1", "--k-list", "1,3", "--m", "1", "--order", "3"]);
        let outcome = execute(&cfg).unwrap();
        assert_eq!(outcome.status, EXIT_OK);
        let rows: Vec<TowerRow> = decode_rows(&outcome.body, Format::Csv).unwrap();
        assert_eq!(rows.len(), 8);
        assert_eq!(encode_rows(&rows, Format::Csv).unwrap(), outcome.body);
        let json = encode_rows(&rows, Format::Json).unwrap();
        let back: Vec<TowerRow> = decode_rows(&json, Format::Json).unwrap();
        assert_eq!(back, rows);
    }

    #[test]
    fn violation_row_and_status() {
        let cfg = config(&["tower", "--model", "desitter", "--H", "1", "--kappa", "-1", "--k", "0", "--m", "1", "--order", "1"]);
        let outcome = execute(&cfg).unwrap();
        assert_eq!(outcome.status, EXIT_HADAMARD);
        let rows: Vec<TowerRow> = decode_rows(&outcome.body, Format::Csv).unwrap();
        assert_eq!(rows[1].status, TowerStatus::HadamardViolation);
        assert!((rows[1].omega_sq.unwrap() + 0.4375).abs() < 1e-12);
        assert_eq!(rows[1].omega, None);
    }

    #[test]
    fn bogoliubov_of_static_background_is_trivial() {
        let cfg = config(&["bogoliubov", "--model", "constant", "--k-list", "1,2", "--m", "1", "--t1", "5", "--order", "2"]);
        let outcome = execute(&cfg).unwrap();
        let rows: Vec<BogoliubovRow> = decode_rows(&outcome.body, Format::Csv).unwrap();
        assert_eq!(rows.len(), 2);
        for row in rows {
            assert!(row.beta_sq < 1e-16);
            assert!(row.norm_defect.abs() < 1e-8);
        }
    }

    #[test]
    fn check_passes_on_smooth_background() {
        let cfg = config(&["check", "--model", "tanh", "--A", "2", "--B", "1", "--k", "2", "--m", "1", "--order", "2", "--t1", "3", "--tol", "1e-9"]);
        let outcome = execute(&cfg).unwrap();
        assert_eq!(outcome.status, EXIT_OK, "{:?}", outcome.diagnostics);
    }
}
