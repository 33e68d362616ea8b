//! Mode functions: integration of `T̈ + 3(ȧ/a)Ṫ + ω²T = 0`, the two-point
//! matrix built from `(q, p) = (T, a³Ṫ)`, and Bogoliubov coefficients between
//! mode bases.
//!
//! The equation is integrated in the canonical pair `(T, P = a³Ṫ)`:
//!
//! ```text
//! Ṫ = P / a³,    Ṗ = −a³ω²T = −(E a + m² a³) T
//! ```
//!
//! so the conserved Wronskian `T̄P − TP̄ = −i` is bilinear in the state and
//! only `a(t)` itself is needed along the way.

pub mod integrator;

use std::io::{Read, Write};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adiabatic::AdiabaticInitialData;
use crate::cosmology::{CosmologyError, ModeSpec, ScaleFactorModel};
use integrator::{integrate, Output};

/// Tolerance on `|q̄p − qp̄ + i|` accepted as "normalized".
pub const WRONSKIAN_TOLERANCE: f64 = 1e-8;

const I: Complex64 = Complex64::new(0.0, 1.0);

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModeError {
    #[error("step size underflow at t = {t} (h = {h})")]
    StepFailure { t: f64, h: f64 },
    #[error("scale factor lost positivity at t = {t} (a = {a})")]
    PositivityLoss { t: f64, a: f64 },
    #[error("tolerance {0} outside [1e-13, 1e-3]")]
    InvalidTolerance(f64),
    #[error("invalid output grid: {0}")]
    InvalidGrid(String),
    #[error("mode solutions belong to different modes")]
    ModeMismatch,
    #[error("Wronskian constraint broken: |q̄p − qp̄ + i| = {0}")]
    WronskianBroken(f64),
    #[error("no sample at t = {0}")]
    TimeNotSampled(f64),
    #[error(transparent)]
    Cosmology(#[from] CosmologyError),
}

/// Canonical mode data at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeState {
    pub t: f64,
    pub q: Complex64,
    pub p: Complex64,
}

impl ModeState {
    pub fn wronskian(&self) -> Complex64 {
        self.q.conj() * self.p - self.q * self.p.conj()
    }

    /// `|q̄p − qp̄ + i|`.
    pub fn wronskian_error(&self) -> f64 {
        (self.wronskian() + I).norm()
    }
}

impl From<&AdiabaticInitialData> for ModeState {
    fn from(init: &AdiabaticInitialData) -> Self {
        Self {
            t: init.t0,
            q: init.value,
            p: init.momentum(),
        }
    }
}

/// Sampled mode function with its canonical momentum.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeSolution {
    pub times: Vec<f64>,
    pub values: Vec<Complex64>,
    pub velocities: Vec<Complex64>,
    pub momenta: Vec<Complex64>,
    pub mode: ModeSpec,
    /// Adiabatic order of the initial data.
    pub order_n: usize,
    /// Time at which the initial data was imposed.
    pub t0: f64,
}

impl ModeSolution {
    /// One-sample solution holding just the initial data.
    pub fn from_initial_data(init: &AdiabaticInitialData, mode: ModeSpec) -> Self {
        Self {
            times: vec![init.t0],
            values: vec![init.value],
            velocities: vec![init.velocity],
            momenta: vec![init.momentum()],
            mode,
            order_n: init.order_n,
            t0: init.t0,
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn state(&self, i: usize) -> ModeState {
        ModeState {
            t: self.times[i],
            q: self.values[i],
            p: self.momenta[i],
        }
    }

    pub fn last_state(&self) -> ModeState {
        self.state(self.len() - 1)
    }

    pub fn states(&self) -> impl Iterator<Item = ModeState> + '_ {
        (0..self.len()).map(|i| self.state(i))
    }

    /// Sample at `t`, matched to within `1e-12·max(1, |t|)`.
    pub fn state_at(&self, t: f64) -> Option<ModeState> {
        let slack = 1e-12 * t.abs().max(1.0);
        self.times
            .iter()
            .position(|&s| (s - t).abs() <= slack)
            .map(|i| self.state(i))
    }

    /// `max_t |Im(q̄p) + 1/2|`.
    pub fn max_wronskian_drift(&self) -> f64 {
        self.states()
            .map(|s| (s.q.conj() * s.p).im + 0.5)
            .fold(0.0, |acc: f64, d| acc.max(d.abs()))
    }
}

fn check_tolerance(tol: f64) -> Result<(), ModeError> {
    if (1e-13..=1e-3).contains(&tol) {
        Ok(())
    } else {
        Err(ModeError::InvalidTolerance(tol))
    }
}

/// Right-hand side of the canonical system and the oscillation-based step cap.
struct ModeSystem<'a> {
    model: &'a ScaleFactorModel,
    energy: f64,
    mass_sq: f64,
}

impl ModeSystem<'_> {
    fn scale_factor(&self, t: f64) -> Result<f64, ModeError> {
        let a = self.model.value(t)?;
        if !(a > 0.0) {
            return Err(ModeError::PositivityLoss { t, a });
        }
        Ok(a)
    }

    fn rhs(&self, t: f64, y: &[Complex64; 2]) -> Result<[Complex64; 2], ModeError> {
        let a = self.scale_factor(t)?;
        let a3 = a * a * a;
        Ok([y[1] / a3, -y[0] * (self.energy * a + self.mass_sq * a3)])
    }

    /// A twentieth of the local oscillation period.
    fn max_step(&self, t: f64) -> f64 {
        match self.scale_factor(t) {
            Ok(a) => {
                let omega = (self.energy / (a * a) + self.mass_sq).sqrt();
                if omega > 0.0 {
                    std::f64::consts::TAU / omega / 20.0
                } else {
                    f64::INFINITY
                }
            }
            // the next rhs evaluation reports the problem
            Err(_) => f64::INFINITY,
        }
    }
}

fn run(
    model: &ScaleFactorModel,
    spec: &ModeSpec,
    init: &AdiabaticInitialData,
    t_end: f64,
    tol: f64,
    output: Output<'_>,
) -> Result<ModeSolution, ModeError> {
    check_tolerance(tol)?;
    let system = ModeSystem {
        model,
        energy: spec.energy_eigenvalue(),
        mass_sq: spec.m * spec.m,
    };
    let start = ModeState::from(init);
    let samples = integrate(
        |t, y| system.rhs(t, y),
        |t, _| system.max_step(t),
        init.t0,
        [start.q, start.p],
        t_end,
        tol,
        output,
    )?;

    let mut solution = ModeSolution {
        times: Vec::with_capacity(samples.len()),
        values: Vec::with_capacity(samples.len()),
        velocities: Vec::with_capacity(samples.len()),
        momenta: Vec::with_capacity(samples.len()),
        mode: *spec,
        order_n: init.order_n,
        t0: init.t0,
    };
    for (t, [q, p]) in samples {
        let a = system.scale_factor(t)?;
        solution.times.push(t);
        solution.values.push(q);
        solution.velocities.push(p / (a * a * a));
        solution.momenta.push(p);
    }
    Ok(solution)
}

/// Integrates the mode equation from `init` to `t_end`, keeping every
/// accepted step.
pub fn integrate_mode(
    model: &ScaleFactorModel,
    spec: &ModeSpec,
    init: &AdiabaticInitialData,
    t_end: f64,
    tol: f64,
) -> Result<ModeSolution, ModeError> {
    run(model, spec, init, t_end, tol, Output::Steps)
}

/// Integrates the mode equation and reports values on `grid`, which must
/// start at `init.t0` and be strictly monotone.
pub fn integrate_mode_on_grid(
    model: &ScaleFactorModel,
    spec: &ModeSpec,
    init: &AdiabaticInitialData,
    grid: &[f64],
    tol: f64,
) -> Result<ModeSolution, ModeError> {
    let (&first, &last) = match (grid.first(), grid.last()) {
        (Some(f), Some(l)) => (f, l),
        _ => return Err(ModeError::InvalidGrid("empty grid".into())),
    };
    if first != init.t0 {
        return Err(ModeError::InvalidGrid(format!(
            "grid starts at {first}, initial data at {}",
            init.t0
        )));
    }
    let dir = if last >= first { 1.0 } else { -1.0 };
    if grid.windows(2).any(|w| (w[1] - w[0]) * dir <= 0.0) {
        return Err(ModeError::InvalidGrid("grid must be strictly monotone".into()));
    }
    run(model, spec, init, last, tol, Output::Grid(grid))
}

/// Evenly spaced grid with `samples ≥ 2` points from `t0` to `t1` inclusive.
pub fn uniform_grid(t0: f64, t1: f64, samples: usize) -> Vec<f64> {
    let n = samples.max(2);
    (0..n)
        .map(|i| {
            if i == n - 1 {
                t1
            } else {
                t0 + (t1 - t0) * i as f64 / (n - 1) as f64
            }
        })
        .collect()
}

/// Two-point matrix `S = [[|p|², −q p̄], [−q̄ p, |q|²]]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoPointMatrix {
    pub entries: [[Complex64; 2]; 2],
}

pub fn two_point_matrix(q: Complex64, p: Complex64) -> Result<TwoPointMatrix, ModeError> {
    let state = ModeState { t: 0.0, q, p };
    let err = state.wronskian_error();
    if !(err <= WRONSKIAN_TOLERANCE) {
        return Err(ModeError::WronskianBroken(err));
    }
    Ok(TwoPointMatrix {
        entries: [
            [Complex64::new(p.norm_sqr(), 0.0), -q * p.conj()],
            [-q.conj() * p, Complex64::new(q.norm_sqr(), 0.0)],
        ],
    })
}

/// Per-mode symplectic form `ς(F, G) = −(F_q G_p − G_q F_p)`.
pub fn symplectic_form(f: [f64; 2], g: [f64; 2]) -> f64 {
    -(f[0] * g[1] - g[0] * f[1])
}

impl TwoPointMatrix {
    pub fn trace(&self) -> f64 {
        (self.entries[0][0] + self.entries[1][1]).re
    }

    pub fn determinant(&self) -> Complex64 {
        let s = &self.entries;
        s[0][0] * s[1][1] - s[0][1] * s[1][0]
    }

    /// Largest entrywise deviation from `S = S†`.
    pub fn hermiticity_error(&self) -> f64 {
        let s = &self.entries;
        let mut err: f64 = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                err = err.max((s[i][j] - s[j][i].conj()).norm());
            }
        }
        err
    }

    /// Eigenvalues, ascending, of the Hermitian part.
    pub fn eigenvalues(&self) -> [f64; 2] {
        let s = &self.entries;
        let half_trace = 0.5 * self.trace();
        let diff = 0.5 * (s[0][0].re - s[1][1].re);
        let off = 0.5 * (s[0][1] + s[1][0].conj());
        let radius = (diff * diff + off.norm_sqr()).sqrt();
        [half_trace - radius, half_trace + radius]
    }

    /// Two-point function `⟨F, S G⟩` for real test vectors.
    pub fn pairing(&self, f: [f64; 2], g: [f64; 2]) -> Complex64 {
        let s = &self.entries;
        let mut acc = Complex64::new(0.0, 0.0);
        for i in 0..2 {
            for j in 0..2 {
                acc += s[i][j] * (f[i] * g[j]);
            }
        }
        acc
    }

    /// Real scalar product `μ(F, G) = Re⟨F, S G⟩`.
    pub fn mu(&self, f: [f64; 2], g: [f64; 2]) -> f64 {
        self.pairing(f, g).re
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PositivityReport {
    pub trials: usize,
    /// `max(¼ς(F,G)² − μ(F,F)μ(G,G))`, clamped at zero.
    pub max_violation: f64,
    /// Number of trials with a violation above `1e-10`.
    pub violations: usize,
    /// Largest `¼ς² / (μ(F,F)μ(G,G))`; one means saturation.
    pub max_ratio: f64,
}

/// Default seed of [`quasifree_positivity_check`].
pub const POSITIVITY_SEED: u64 = 0x5eed_ada0;

/// Checks `¼|ς(F,G)|² ≤ μ(F,F)μ(G,G)` on random real test pairs.
pub fn quasifree_positivity_check(s: &TwoPointMatrix, trials: usize) -> PositivityReport {
    quasifree_positivity_check_seeded(s, trials, POSITIVITY_SEED)
}

pub fn quasifree_positivity_check_seeded(s: &TwoPointMatrix, trials: usize, seed: u64) -> PositivityReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = PositivityReport {
        trials,
        max_violation: 0.0,
        violations: 0,
        max_ratio: 0.0,
    };
    for _ in 0..trials {
        let f = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let g = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let sigma = symplectic_form(f, g);
        let lhs = 0.25 * sigma * sigma;
        let rhs = s.mu(f, f) * s.mu(g, g);
        let violation = (lhs - rhs).max(0.0);
        if violation > 1e-10 {
            report.violations += 1;
        }
        report.max_violation = report.max_violation.max(violation);
        if rhs > 0.0 {
            report.max_ratio = report.max_ratio.max(lhs / rhs);
        }
    }
    report
}

/// Coefficients expanding mode `b` as `α·u_a + β·ū_a`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BogoliubovPair {
    pub alpha: Complex64,
    pub beta: Complex64,
}

impl BogoliubovPair {
    pub fn identity() -> Self {
        Self {
            alpha: Complex64::new(1.0, 0.0),
            beta: Complex64::new(0.0, 0.0),
        }
    }

    /// `|α|² − |β|² − 1`.
    pub fn norm_defect(&self) -> f64 {
        self.alpha.norm_sqr() - self.beta.norm_sqr() - 1.0
    }

    pub fn particle_number(&self) -> f64 {
        self.beta.norm_sqr()
    }

    /// Composes `(a → b)` with `(b → c)` into `(a → c)`.
    pub fn then(&self, next: &Self) -> Self {
        Self {
            alpha: next.alpha * self.alpha + next.beta * self.beta.conj(),
            beta: next.alpha * self.beta + next.beta * self.alpha.conj(),
        }
    }
}

/// Symplectic projection of state `b` onto `(a, ā)` at a common time.
pub fn bogoliubov_states(a: &ModeState, b: &ModeState, wronskian_tol: f64) -> Result<BogoliubovPair, ModeError> {
    for s in [a, b] {
        let err = s.wronskian_error();
        if !(err <= wronskian_tol) {
            return Err(ModeError::WronskianBroken(err));
        }
    }
    Ok(BogoliubovPair {
        alpha: I * (a.q.conj() * b.p - a.p.conj() * b.q),
        beta: -I * (a.q * b.p - a.p * b.q),
    })
}

/// Bogoliubov coefficients of `sol_b` relative to `sol_a` at time `t`.
pub fn bogoliubov(sol_a: &ModeSolution, sol_b: &ModeSolution, t: f64) -> Result<BogoliubovPair, ModeError> {
    if sol_a.mode != sol_b.mode {
        return Err(ModeError::ModeMismatch);
    }
    let a = sol_a.state_at(t).ok_or(ModeError::TimeNotSampled(t))?;
    let b = sol_b.state_at(t).ok_or(ModeError::TimeNotSampled(t))?;
    bogoliubov_states(&a, &b, WRONSKIAN_TOLERANCE)
}

/// One row of the trajectory CSV.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub t: f64,
    #[serde(rename = "re_T")]
    pub re_t: f64,
    #[serde(rename = "im_T")]
    pub im_t: f64,
    #[serde(rename = "re_Tdot")]
    pub re_tdot: f64,
    #[serde(rename = "im_Tdot")]
    pub im_tdot: f64,
    pub wronskian_error: f64,
}

impl ModeSolution {
    pub fn trajectory_rows(&self) -> Vec<TrajectoryRow> {
        (0..self.len())
            .map(|i| TrajectoryRow {
                t: self.times[i],
                re_t: self.values[i].re,
                im_t: self.values[i].im,
                re_tdot: self.velocities[i].re,
                im_tdot: self.velocities[i].im,
                wronskian_error: self.state(i).wronskian_error(),
            })
            .collect()
    }
}

pub fn write_trajectory_csv<W: Write>(rows: &[TrajectoryRow], writer: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trajectory_csv<R: Read>(reader: R) -> Result<Vec<TrajectoryRow>, csv::Error> {
    csv::Reader::from_reader(reader).deserialize().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adiabatic::adiabatic_vacuum;
    use crate::cosmology::Curvature;
    use std::f64::consts::FRAC_1_SQRT_2;

    fn flat_state() -> (Complex64, Complex64) {
        (Complex64::new(FRAC_1_SQRT_2, 0.0), Complex64::new(0.0, -FRAC_1_SQRT_2))
    }

    #[test]
    fn flat_two_point_matrix() {
        let (q, p) = flat_state();
        let s = two_point_matrix(q, p).unwrap();
        let expected = [
            [Complex64::new(0.5, 0.0), Complex64::new(0.0, -0.5)],
            [Complex64::new(0.0, 0.5), Complex64::new(0.5, 0.0)],
        ];
        for i in 0..2 {
            for j in 0..2 {
                assert!((s.entries[i][j] - expected[i][j]).norm() < 1e-15);
            }
        }
        assert!(s.determinant().norm() < 1e-15);
        assert!((s.trace() - 1.0).abs() < 1e-15);
        let [lo, hi] = s.eigenvalues();
        assert!(lo.abs() < 1e-15 && (hi - 1.0).abs() < 1e-15);
    }

    #[test]
    fn broken_wronskian_is_rejected() {
        let err = two_point_matrix(Complex64::new(1.0, 0.0), Complex64::new(0.0, -1.0)).unwrap_err();
        assert!(matches!(err, ModeError::WronskianBroken(e) if (e - 1.0).abs() < 1e-15));
    }

    #[test]
    fn positivity_on_flat_state() {
        let (q, p) = flat_state();
        let s = two_point_matrix(q, p).unwrap();
        let report = quasifree_positivity_check(&s, 1000);
        assert_eq!(report.violations, 0);
        assert!(report.max_violation == 0.0);
        assert!(report.max_ratio <= 1.0 + 1e-12);
        // equal test vectors: the symplectic side vanishes
        let f = [0.3, -0.7];
        assert_eq!(symplectic_form(f, f), 0.0);
        assert!(s.mu(f, f) >= 0.0);
        // bilinearity: doubling F scales both sides by four
        let g = [0.1, 0.9];
        let ratio = |f: [f64; 2]| 0.25 * symplectic_form(f, g).powi(2) / (s.mu(f, f) * s.mu(g, g));
        assert!((ratio(f) - ratio([2.0 * f[0], 2.0 * f[1]])).abs() < 1e-14);
    }

    #[test]
    fn identity_bogoliubov() {
        let (q, p) = flat_state();
        let s = ModeState { t: 0.0, q, p };
        let pair = bogoliubov_states(&s, &s, WRONSKIAN_TOLERANCE).unwrap();
        assert!((pair.alpha - 1.0).norm() < 1e-15);
        assert!(pair.beta.norm() < 1e-15);
    }

    #[test]
    fn conjugate_mode_is_pure_beta() {
        // b = ā is not normalized with the same sign, so build b = α a + β ā by hand
        let (q, p) = flat_state();
        let a = ModeState { t: 0.0, q, p };
        let (alpha, beta) = (Complex64::new(1.25, 0.5), Complex64::new(0.3, -0.7));
        // rescale so |α|² − |β|² = 1
        let norm = (alpha.norm_sqr() - beta.norm_sqr()).sqrt();
        let (alpha, beta) = (alpha / norm, beta / norm);
        let b = ModeState {
            t: 0.0,
            q: alpha * q + beta * q.conj(),
            p: alpha * p + beta * p.conj(),
        };
        let pair = bogoliubov_states(&a, &b, WRONSKIAN_TOLERANCE).unwrap();
        assert!((pair.alpha - alpha).norm() < 1e-14);
        assert!((pair.beta - beta).norm() < 1e-14);
        assert!(pair.norm_defect().abs() < 1e-14);
    }

    #[test]
    fn flat_plane_wave() {
        let model = ScaleFactorModel::constant(1.0).unwrap();
        let spec = ModeSpec::new(Curvature::Flat, 1.0, 0.0).unwrap();
        let init = adiabatic_vacuum(&model, &spec, 0.0, 0).unwrap();
        let sol = integrate_mode(&model, &spec, &init, 10.0, 1e-10).unwrap();
        for (t, v) in sol.times.iter().zip(&sol.values) {
            let exact = Complex64::new(0.0, -t).exp() * FRAC_1_SQRT_2;
            assert!((v - exact).norm() < 1e-9, "t = {t}");
        }
        assert!(sol.max_wronskian_drift() <= 1e-9);
    }

    #[test]
    fn grid_output_and_validation() {
        let model = ScaleFactorModel::constant(1.0).unwrap();
        let spec = ModeSpec::new(Curvature::Flat, 1.0, 0.0).unwrap();
        let init = adiabatic_vacuum(&model, &spec, 0.0, 0).unwrap();
        let grid = uniform_grid(0.0, 2.0, 11);
        let sol = integrate_mode_on_grid(&model, &spec, &init, &grid, 1e-10).unwrap();
        assert_eq!(sol.times, grid);
        assert!(integrate_mode_on_grid(&model, &spec, &init, &[1.0, 2.0], 1e-10).is_err());
        assert!(integrate_mode_on_grid(&model, &spec, &init, &[0.0, 2.0, 1.0], 1e-10).is_err());
        assert!(matches!(
            integrate_mode(&model, &spec, &init, 1.0, 1e-2),
            Err(ModeError::InvalidTolerance(_))
        ));
    }

    #[test]
    fn leaving_the_spline_domain_fails_cleanly() {
        let ts: Vec<f64> = (0..5).map(f64::from).collect();
        let model = ScaleFactorModel::spline(ts.clone(), ts.iter().map(|t| 1.0 + 0.1 * t).collect()).unwrap();
        let spec = ModeSpec::new(Curvature::Flat, 1.0, 1.0).unwrap();
        let init = adiabatic_vacuum(&model, &spec, 1.0, 0).unwrap();
        assert!(integrate_mode(&model, &spec, &init, 3.5, 1e-10).is_ok());
        assert!(matches!(
            integrate_mode(&model, &spec, &init, 6.0, 1e-10),
            Err(ModeError::Cosmology(CosmologyError::OutOfDomain { .. }))
        ));
    }

    #[test]
    fn trajectory_csv_header() {
        let model = ScaleFactorModel::constant(1.0).unwrap();
        let spec = ModeSpec::new(Curvature::Flat, 1.0, 0.0).unwrap();
        let init = adiabatic_vacuum(&model, &spec, 0.0, 0).unwrap();
        let sol = ModeSolution::from_initial_data(&init, spec);
        let mut buf = Vec::new();
        write_trajectory_csv(&sol.trajectory_rows(), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,re_T,im_T,re_Tdot,im_Tdot,wronskian_error\n"));
        let rows = read_trajectory_csv(text.as_bytes()).unwrap();
        assert_eq!(rows, sol.trajectory_rows());
    }
}
