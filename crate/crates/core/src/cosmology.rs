//! Robertson–Walker background data: scale-factor models, spatial curvature,
//! mode energies and the instantaneous frequency `ω_k²(t) = E(k)/a²(t) + m²`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::jets::{Jet, JetError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CosmologyError {
    #[error("jet of order {requested} requested from a model of smoothness class {class}")]
    SmoothnessExceeded { requested: usize, class: usize },
    #[error("t = {t} lies outside the model domain")]
    OutOfDomain { t: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("invalid mode: {0}")]
    InvalidMode(String),
    #[error("model file line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error(transparent)]
    Jet(#[from] JetError),
}

/// Sign of the spatial curvature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "i8", try_from = "i8")]
pub enum Curvature {
    Open,
    Flat,
    Closed,
}

impl Curvature {
    pub fn sign(self) -> i8 {
        match self {
            Curvature::Open => -1,
            Curvature::Flat => 0,
            Curvature::Closed => 1,
        }
    }
}

impl From<Curvature> for i8 {
    fn from(c: Curvature) -> i8 {
        c.sign()
    }
}

impl TryFrom<i8> for Curvature {
    type Error = CosmologyError;

    fn try_from(value: i8) -> Result<Self, Self::Error> {
        match value {
            -1 => Ok(Curvature::Open),
            0 => Ok(Curvature::Flat),
            1 => Ok(Curvature::Closed),
            other => Err(CosmologyError::InvalidMode(format!(
                "kappa must be -1, 0 or 1, got {other}"
            ))),
        }
    }
}

/// One field mode: curvature sign, mode number and field mass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawModeSpec")]
pub struct ModeSpec {
    pub kappa: Curvature,
    pub k: f64,
    pub m: f64,
}

#[derive(Deserialize)]
struct RawModeSpec {
    kappa: Curvature,
    k: f64,
    m: f64,
}

impl TryFrom<RawModeSpec> for ModeSpec {
    type Error = CosmologyError;

    fn try_from(raw: RawModeSpec) -> Result<Self, Self::Error> {
        ModeSpec::new(raw.kappa, raw.k, raw.m)
    }
}

impl ModeSpec {
    pub fn new(kappa: Curvature, k: f64, m: f64) -> Result<Self, CosmologyError> {
        if !k.is_finite() || k < 0.0 {
            return Err(CosmologyError::InvalidMode(format!(
                "k must be finite and non-negative, got {k}"
            )));
        }
        if kappa == Curvature::Closed && k.fract() != 0.0 {
            return Err(CosmologyError::InvalidMode(format!(
                "closed slicing has a discrete spectrum, k must be an integer, got {k}"
            )));
        }
        if !m.is_finite() || m < 0.0 {
            return Err(CosmologyError::InvalidMode(format!(
                "m must be finite and non-negative, got {m}"
            )));
        }
        Ok(Self { kappa, k, m })
    }

    /// Eigenvalue `E(k)` of the spatial Laplacian for this curvature.
    pub fn energy_eigenvalue(&self) -> f64 {
        let k = self.k;
        match self.kappa {
            Curvature::Closed => k * (k + 2.0),
            Curvature::Flat => k * k,
            Curvature::Open => k * k + 1.0,
        }
    }

    pub fn with_k(&self, k: f64) -> Result<Self, CosmologyError> {
        Self::new(self.kappa, k, self.m)
    }

    /// `ω_k²` for a plain scale-factor value.
    pub fn omega_squared(&self, a: f64) -> f64 {
        self.energy_eigenvalue() / (a * a) + self.m * self.m
    }
}

/// `ω_k²(t) = E(k)/a² + m²` as a jet at the base point of `a`.
pub fn omega_squared_jet(a: &Jet, spec: &ModeSpec) -> Result<Jet, CosmologyError> {
    let inv_a2 = a.square().recip()?;
    Ok(inv_a2
        .scale(spec.energy_eigenvalue())
        .add_scalar(spec.m * spec.m))
}

/// Maximal derivative order a model can supply.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Smoothness {
    Analytic,
    Finite(usize),
}

impl Smoothness {
    pub fn allows(self, order: usize) -> bool {
        match self {
            Smoothness::Analytic => true,
            Smoothness::Finite(class) => order <= class,
        }
    }

    /// Caps a requested order at the class.
    pub fn cap(self, order: usize) -> usize {
        match self {
            Smoothness::Analytic => order,
            Smoothness::Finite(class) => order.min(class),
        }
    }
}

impl fmt::Display for Smoothness {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Smoothness::Analytic => write!(f, "C^inf"),
            Smoothness::Finite(c) => write!(f, "C^{c}"),
        }
    }
}

/// Natural cubic interpolant through `(t_i, a_i)`; globally C².
#[derive(Debug, Clone, PartialEq)]
pub struct CubicSpline {
    knots: Vec<f64>,
    values: Vec<f64>,
    // second derivatives at the knots
    curvatures: Vec<f64>,
}

impl CubicSpline {
    pub fn new(knots: Vec<f64>, values: Vec<f64>) -> Result<Self, CosmologyError> {
        let n = knots.len();
        if n < 3 || values.len() != n {
            return Err(CosmologyError::InvalidParameter(
                "spline needs at least three (t, a) knots".into(),
            ));
        }
        if knots.iter().chain(&values).any(|x| !x.is_finite()) {
            return Err(CosmologyError::InvalidParameter(
                "spline knots must be finite".into(),
            ));
        }
        if knots.windows(2).any(|w| w[1] <= w[0]) {
            return Err(CosmologyError::InvalidParameter(
                "spline knot times must be strictly increasing".into(),
            ));
        }

        // tridiagonal system for interior second derivatives, natural ends
        let h: Vec<f64> = knots.windows(2).map(|w| w[1] - w[0]).collect();
        let mut diag = vec![0.0; n];
        let mut rhs = vec![0.0; n];
        let mut upper = vec![0.0; n];
        for i in 1..n - 1 {
            diag[i] = 2.0 * (h[i - 1] + h[i]);
            upper[i] = h[i];
            rhs[i] = 6.0
                * ((values[i + 1] - values[i]) / h[i] - (values[i] - values[i - 1]) / h[i - 1]);
        }
        // Thomas sweep over rows 1..n-1
        for i in 2..n - 1 {
            let w = h[i - 1] / diag[i - 1];
            diag[i] -= w * upper[i - 1];
            rhs[i] -= w * rhs[i - 1];
        }
        let mut curvatures = vec![0.0; n];
        for i in (1..n - 1).rev() {
            curvatures[i] = (rhs[i] - upper[i] * curvatures[i + 1]) / diag[i];
        }

        let spline = Self {
            knots,
            values,
            curvatures,
        };
        spline.check_positive()?;
        Ok(spline)
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.knots[0], *self.knots.last().unwrap())
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    fn interval(&self, t: f64) -> Result<usize, CosmologyError> {
        let (lo, hi) = self.domain();
        if !(lo..=hi).contains(&t) {
            return Err(CosmologyError::OutOfDomain { t });
        }
        let idx = self.knots.partition_point(|&k| k <= t);
        Ok(idx.saturating_sub(1).min(self.knots.len() - 2))
    }

    /// Value, first and second derivative at `t`.
    pub fn eval(&self, t: f64) -> Result<[f64; 3], CosmologyError> {
        let i = self.interval(t)?;
        Ok(self.eval_piece(i, t))
    }

    fn eval_piece(&self, i: usize, t: f64) -> [f64; 3] {
        let h = self.knots[i + 1] - self.knots[i];
        let (m0, m1) = (self.curvatures[i], self.curvatures[i + 1]);
        let (y0, y1) = (self.values[i], self.values[i + 1]);
        let u = self.knots[i + 1] - t;
        let v = t - self.knots[i];
        let value = m0 * u.powi(3) / (6.0 * h)
            + m1 * v.powi(3) / (6.0 * h)
            + (y0 / h - m0 * h / 6.0) * u
            + (y1 / h - m1 * h / 6.0) * v;
        let slope = -m0 * u * u / (2.0 * h) + m1 * v * v / (2.0 * h) - y0 / h + m0 * h / 6.0
            + y1 / h
            - m1 * h / 6.0;
        let curvature = (m0 * u + m1 * v) / h;
        [value, slope, curvature]
    }

    fn check_positive(&self) -> Result<(), CosmologyError> {
        for i in 0..self.knots.len() - 1 {
            let (t0, t1) = (self.knots[i], self.knots[i + 1]);
            let mut candidates = vec![t0, t1];
            // stationary points of the cubic piece: slope is quadratic in v = t - t0
            let h = t1 - t0;
            let (m0, m1) = (self.curvatures[i], self.curvatures[i + 1]);
            let qa = (m1 - m0) / (2.0 * h);
            let qb = m0;
            let qc = self.eval_piece(i, t0)[1];
            let mut roots = Vec::new();
            if qa.abs() > f64::EPSILON * (qb.abs() + 1.0) {
                let disc = qb * qb - 4.0 * qa * qc;
                if disc >= 0.0 {
                    let s = disc.sqrt();
                    roots.push((-qb + s) / (2.0 * qa));
                    roots.push((-qb - s) / (2.0 * qa));
                }
            } else if qb != 0.0 {
                roots.push(-qc / qb);
            }
            candidates.extend(roots.into_iter().filter(|v| (0.0..=h).contains(v)).map(|v| t0 + v));
            if let Some(t) = candidates.into_iter().find(|&t| self.eval_piece(i, t)[0] <= 0.0) {
                return Err(CosmologyError::InvalidParameter(format!(
                    "spline scale factor is not positive near t = {t}"
                )));
            }
        }
        Ok(())
    }
}

/// Built-in scale-factor families.
#[derive(Debug, Clone, PartialEq)]
pub enum ScaleFactorModel {
    /// `a(t) = A`
    Constant { a: f64 },
    /// `a(t) = exp(H t)`
    DeSitter { hubble: f64 },
    /// `a(t) = (t + t_offset)^p` on `t > -t_offset`
    PowerLaw { exponent: f64, t_offset: f64 },
    /// `a(t) = A + B tanh(t/τ)` with `A > |B|`
    TanhTransition { a: f64, b: f64, tau: f64 },
    /// C² natural cubic spline through a knot table.
    Spline(CubicSpline),
}

fn require(cond: bool, msg: &str) -> Result<(), CosmologyError> {
    if cond {
        Ok(())
    } else {
        Err(CosmologyError::InvalidParameter(msg.to_string()))
    }
}

impl ScaleFactorModel {
    pub fn constant(a: f64) -> Result<Self, CosmologyError> {
        require(a.is_finite() && a > 0.0, "constant scale factor must be positive")?;
        Ok(Self::Constant { a })
    }

    pub fn de_sitter(hubble: f64) -> Result<Self, CosmologyError> {
        require(hubble.is_finite(), "H must be finite")?;
        Ok(Self::DeSitter { hubble })
    }

    pub fn power_law(exponent: f64, t_offset: f64) -> Result<Self, CosmologyError> {
        require(
            exponent.is_finite() && t_offset.is_finite(),
            "power-law parameters must be finite",
        )?;
        Ok(Self::PowerLaw { exponent, t_offset })
    }

    pub fn tanh_transition(a: f64, b: f64, tau: f64) -> Result<Self, CosmologyError> {
        require(
            a.is_finite() && b.is_finite() && tau.is_finite(),
            "tanh parameters must be finite",
        )?;
        require(a > b.abs(), "tanh transition needs A > |B| to keep a(t) > 0")?;
        require(tau > 0.0, "tanh transition needs tau > 0")?;
        Ok(Self::TanhTransition { a, b, tau })
    }

    pub fn spline(knots: Vec<f64>, values: Vec<f64>) -> Result<Self, CosmologyError> {
        Ok(Self::Spline(CubicSpline::new(knots, values)?))
    }

    pub fn smoothness(&self) -> Smoothness {
        match self {
            Self::Spline(_) => Smoothness::Finite(2),
            _ => Smoothness::Analytic,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Constant { .. } => "constant",
            Self::DeSitter { .. } => "de_sitter",
            Self::PowerLaw { .. } => "power_law",
            Self::TanhTransition { .. } => "tanh_transition",
            Self::Spline(_) => "spline",
        }
    }

    /// Scale factor value at `t`.
    pub fn value(&self, t: f64) -> Result<f64, CosmologyError> {
        let a = match self {
            Self::Constant { a } => *a,
            Self::DeSitter { hubble } => (hubble * t).exp(),
            Self::PowerLaw { exponent, t_offset } => {
                let x = t + t_offset;
                if !(x > 0.0) {
                    return Err(CosmologyError::OutOfDomain { t });
                }
                x.powf(*exponent)
            }
            Self::TanhTransition { a, b, tau } => a + b * (t / tau).tanh(),
            Self::Spline(s) => s.eval(t)?[0],
        };
        Ok(a)
    }

    /// Jet of `a` at `t` with the requested number of derivatives.
    pub fn scale_factor_jet(&self, t: f64, order: usize) -> Result<Jet, CosmologyError> {
        if let Smoothness::Finite(class) = self.smoothness() {
            if order > class {
                return Err(CosmologyError::SmoothnessExceeded {
                    requested: order,
                    class,
                });
            }
        }
        let jet = match self {
            Self::Constant { a } => Jet::constant(t, *a, order),
            Self::DeSitter { hubble } => Jet::variable(t, order).scale(*hubble).exp()?,
            Self::PowerLaw { exponent, t_offset } => {
                if !(t + t_offset > 0.0) {
                    return Err(CosmologyError::OutOfDomain { t });
                }
                Jet::variable(t, order).add_scalar(*t_offset).powf(*exponent)?
            }
            Self::TanhTransition { a, b, tau } => Jet::variable(t, order)
                .scale(1.0 / tau)
                .tanh()?
                .scale(*b)
                .add_scalar(*a),
            Self::Spline(s) => {
                let [v, d1, d2] = s.eval(t)?;
                Jet::from_derivatives(t, &[v, d1, d2][..=order])?
            }
        };
        Ok(jet)
    }

    pub fn descriptor(&self) -> ModelDescriptor {
        match self {
            Self::Constant { a } => ModelDescriptor::Constant { a: *a },
            Self::DeSitter { hubble } => ModelDescriptor::DeSitter { h: *hubble },
            Self::PowerLaw { exponent, t_offset } => ModelDescriptor::PowerLaw {
                p: *exponent,
                t_offset: *t_offset,
            },
            Self::TanhTransition { a, b, tau } => ModelDescriptor::TanhTransition {
                a: *a,
                b: *b,
                tau: *tau,
            },
            Self::Spline(s) => {
                let (t_min, t_max) = s.domain();
                ModelDescriptor::Spline {
                    knots: s.knots().len(),
                    t_min,
                    t_max,
                }
            }
        }
    }

    /// Builds a model from `key=value` parameters (see [`ModelParams`]).
    pub fn from_params(params: &ModelParams) -> Result<Self, CosmologyError> {
        let kind = params
            .get("kind")
            .ok_or_else(|| CosmologyError::InvalidParameter("missing `kind`".into()))?;
        match normalize_kind(kind).as_str() {
            "constant" => Self::constant(params.number_or("A", 1.0)?),
            "desitter" => Self::de_sitter(params.number("H")?),
            "powerlaw" => Self::power_law(params.number("p")?, params.number_or("t_offset", 0.0)?),
            "tanh" | "tanhtransition" => Self::tanh_transition(
                params.number("A")?,
                params.number("B")?,
                params.number_or("tau", 1.0)?,
            ),
            "spline" => {
                let path = params
                    .get("knots")
                    .ok_or_else(|| CosmologyError::InvalidParameter("spline needs `knots`".into()))?;
                let path = params.resolve(path);
                let (t, a) = read_knots(&path)?;
                Self::spline(t, a)
            }
            other => Err(CosmologyError::InvalidParameter(format!(
                "unknown model kind `{other}`"
            ))),
        }
    }
}

fn normalize_kind(kind: &str) -> String {
    kind.chars()
        .filter(|c| *c != '_' && *c != '-')
        .flat_map(char::to_lowercase)
        .collect()
}

/// Serializable summary of a model, used in reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelDescriptor {
    Constant {
        #[serde(rename = "A")]
        a: f64,
    },
    DeSitter {
        #[serde(rename = "H")]
        h: f64,
    },
    PowerLaw {
        p: f64,
        t_offset: f64,
    },
    TanhTransition {
        #[serde(rename = "A")]
        a: f64,
        #[serde(rename = "B")]
        b: f64,
        tau: f64,
    },
    Spline {
        knots: usize,
        t_min: f64,
        t_max: f64,
    },
}

/// `key=value` parameter set, as read from a model/config file or flags.
///
/// Grammar: one `key=value` per line, surrounding whitespace ignored, blank
/// lines and lines starting with `#` skipped. Later keys override earlier
/// ones. Relative paths (the spline `knots=` entry) resolve against the
/// directory of the file they came from.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ModelParams {
    entries: BTreeMap<String, String>,
    base_dir: Option<PathBuf>,
}

impl ModelParams {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self, CosmologyError> {
        let mut params = Self::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| CosmologyError::Parse {
                line: idx + 1,
                message: format!("expected key=value, got `{line}`"),
            })?;
            let key = key.trim();
            if key.is_empty() {
                return Err(CosmologyError::Parse {
                    line: idx + 1,
                    message: "empty key".into(),
                });
            }
            params.insert(key, value.trim());
        }
        Ok(params)
    }

    pub fn load(path: &Path) -> Result<Self, CosmologyError> {
        let text = std::fs::read_to_string(path).map_err(|e| CosmologyError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let mut params = Self::parse(&text)?;
        params.base_dir = path.parent().map(Path::to_path_buf);
        Ok(params)
    }

    pub fn insert(&mut self, key: &str, value: &str) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn number(&self, key: &str) -> Result<f64, CosmologyError> {
        let raw = self
            .get(key)
            .ok_or_else(|| CosmologyError::InvalidParameter(format!("missing `{key}`")))?;
        raw.parse::<f64>()
            .ok()
            .filter(|x| x.is_finite())
            .ok_or_else(|| CosmologyError::InvalidParameter(format!("`{key}={raw}` is not a finite number")))
    }

    pub fn number_or(&self, key: &str, default: f64) -> Result<f64, CosmologyError> {
        match self.get(key) {
            Some(_) => self.number(key),
            None => Ok(default),
        }
    }

    fn resolve(&self, path: &str) -> PathBuf {
        let p = PathBuf::from(path);
        match &self.base_dir {
            Some(dir) if p.is_relative() => dir.join(p),
            _ => p,
        }
    }
}

/// Reads a two-column `(t, a)` CSV. A non-numeric first row is taken as a header.
pub fn read_knots(path: &Path) -> Result<(Vec<f64>, Vec<f64>), CosmologyError> {
    let io_err = |message: String| CosmologyError::Io {
        path: path.display().to_string(),
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| io_err(e.to_string()))?;
    let (mut ts, mut ays) = (Vec::new(), Vec::new());
    for (idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| io_err(e.to_string()))?;
        if record.len() < 2 {
            return Err(CosmologyError::Parse {
                line: idx + 1,
                message: "knot rows need two columns (t, a)".into(),
            });
        }
        match (record[0].parse::<f64>(), record[1].parse::<f64>()) {
            (Ok(t), Ok(a)) => {
                ts.push(t);
                ays.push(a);
            }
            _ if idx == 0 => continue,
            _ => {
                return Err(CosmologyError::Parse {
                    line: idx + 1,
                    message: format!("cannot parse knot `{},{}`", &record[0], &record[1]),
                })
            }
        }
    }
    Ok((ts, ays))
}
