//! Adiabatic frequency iteration and adiabatic initial data.
//!
//! Starting from `Ω^[0] = ω_k`, each step forms
//!
//! ```text
//! (Ω^[n+1])² = ω² − ¾(ȧ/a)² − (3/2)(ä/a) + ¾(Ω̇^[n]/Ω^[n])² − ½(Ω̈^[n]/Ω^[n])
//! ```
//!
//! entirely in jet arithmetic, so every step consumes two derivative orders
//! of the scale-factor jet. A non-positive right-hand side at the base point
//! means the state of that order does not exist there
//! ([`AdiabaticError::HadamardViolation`]); running out of derivatives is
//! reported as [`AdiabaticError::OrderExhausted`].

use num_complex::Complex64;
use thiserror::Error;

use crate::cosmology::{omega_squared_jet, CosmologyError, ModeSpec, ScaleFactorModel};
use crate::jets::{Jet, JetError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AdiabaticError {
    #[error("(Omega^[{n}])^2 = {omega_sq} is not positive at the base point")]
    HadamardViolation { n: usize, omega_sq: f64 },
    #[error("order {n} needs a scale-factor jet of order {required}, only {available} available")]
    OrderExhausted {
        n: usize,
        required: usize,
        available: usize,
    },
    #[error(transparent)]
    Jet(#[from] JetError),
    #[error(transparent)]
    Cosmology(CosmologyError),
}

impl From<CosmologyError> for AdiabaticError {
    fn from(err: CosmologyError) -> Self {
        match err {
            CosmologyError::Jet(j) => AdiabaticError::Jet(j),
            other => AdiabaticError::Cosmology(other),
        }
    }
}

/// Scale-factor jet order needed to build `Ω^[n]` and still have `Ω̇^[n]`
/// and `Ω̈^[n]` at hand.
pub const fn jet_demand(n: usize) -> usize {
    2 * n + 2
}

/// `Ω_k^[n]` as a jet at `t0`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdiabaticFrequency {
    pub omega_jet: Jet,
    pub order_n: usize,
    pub mode: ModeSpec,
}

impl AdiabaticFrequency {
    pub fn omega(&self) -> f64 {
        self.omega_jet.value()
    }

    pub fn omega_squared(&self) -> f64 {
        let w = self.omega_jet.value();
        w * w
    }

    pub fn omega_dot(&self) -> Option<f64> {
        (self.omega_jet.order() >= 1).then(|| self.omega_jet.derivative(1))
    }

    pub fn jet_budget_consumed(&self) -> usize {
        2 * self.order_n
    }
}

/// `Ω^[0] = ω_k`.
pub fn base_frequency(a: &Jet, spec: &ModeSpec) -> Result<AdiabaticFrequency, AdiabaticError> {
    let omega_sq = omega_squared_jet(a, spec)?;
    if !(omega_sq.value() > 0.0) {
        return Err(AdiabaticError::HadamardViolation {
            n: 0,
            omega_sq: omega_sq.value(),
        });
    }
    Ok(AdiabaticFrequency {
        omega_jet: omega_sq.sqrt()?,
        order_n: 0,
        mode: *spec,
    })
}

/// Jet of `(Ω^[n+1])²` from `Ω^[n]`, before the positivity check.
pub fn next_omega_squared(prev: &AdiabaticFrequency, a: &Jet, spec: &ModeSpec) -> Result<Jet, AdiabaticError> {
    let n = prev.order_n + 1;
    let available = prev.omega_jet.order().min(a.order());
    if available < 2 {
        return Err(AdiabaticError::OrderExhausted {
            n,
            required: 2,
            available,
        });
    }
    let a = a.truncate(available);
    let omega = &prev.omega_jet;

    let a_dot = a.derivative_jet()?;
    let a_ddot = a_dot.derivative_jet()?;
    let hubble = a_dot.div(&a)?;
    let accel = a_ddot.div(&a)?;

    let omega_dot = omega.derivative_jet()?;
    let omega_ddot = omega_dot.derivative_jet()?;
    let log_rate = omega_dot.div(omega)?;
    let curvature = omega_ddot.div(omega)?;

    let omega_sq = omega_squared_jet(&a, spec)?
        .sub(&hubble.square().scale(0.75))?
        .sub(&accel.scale(1.5))?
        .add(&log_rate.square().scale(0.75))?
        .sub(&curvature.scale(0.5))?;
    Ok(omega_sq)
}

/// One step of the frequency iteration: `Ω^[n] → Ω^[n+1]`, order drops by two.
pub fn iterate_omega(
    prev: &AdiabaticFrequency,
    a: &Jet,
    spec: &ModeSpec,
) -> Result<AdiabaticFrequency, AdiabaticError> {
    let omega_sq = next_omega_squared(prev, a, spec)?;
    let n = prev.order_n + 1;
    if !(omega_sq.value() > 0.0) {
        return Err(AdiabaticError::HadamardViolation {
            n,
            omega_sq: omega_sq.value(),
        });
    }
    Ok(AdiabaticFrequency {
        omega_jet: omega_sq.sqrt()?,
        order_n: n,
        mode: *spec,
    })
}

/// A tower that stopped before reaching the requested order.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("{cause}")]
pub struct TowerError {
    /// Frequencies that were built before the failure.
    pub partial: Vec<AdiabaticFrequency>,
    pub cause: AdiabaticError,
}

impl TowerError {
    fn new(partial: Vec<AdiabaticFrequency>, cause: impl Into<AdiabaticError>) -> Self {
        Self {
            partial,
            cause: cause.into(),
        }
    }
}

/// `[Ω^[0], ..., Ω^[n_max]]` from a given scale-factor jet.
pub fn tower_from_jet(a: &Jet, spec: &ModeSpec, n_max: usize) -> Result<Vec<AdiabaticFrequency>, TowerError> {
    let mut levels = vec![base_frequency(a, spec).map_err(|e| TowerError::new(vec![], e))?];
    for n in 1..=n_max {
        if a.order() < jet_demand(n) {
            return Err(TowerError::new(
                levels,
                AdiabaticError::OrderExhausted {
                    n,
                    required: jet_demand(n),
                    available: a.order(),
                },
            ));
        }
        match iterate_omega(levels.last().unwrap(), a, spec) {
            Ok(next) => levels.push(next),
            Err(e) => return Err(TowerError::new(levels, e)),
        }
    }
    Ok(levels)
}

/// Builds the frequency tower of a model at `t0`, requesting as many
/// derivatives as the model can supply up to the tower's demand.
pub fn omega_tower(
    model: &ScaleFactorModel,
    spec: &ModeSpec,
    t0: f64,
    n_max: usize,
) -> Result<Vec<AdiabaticFrequency>, TowerError> {
    let order = model.smoothness().cap(jet_demand(n_max));
    let a = model
        .scale_factor_jet(t0, order)
        .map_err(|e| TowerError::new(vec![], e))?;
    tower_from_jet(&a, spec, n_max)
}

/// Mode value and velocity at `t0` for the adiabatic vacuum of order `n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdiabaticInitialData {
    pub t0: f64,
    pub value: Complex64,
    pub velocity: Complex64,
    pub order_n: usize,
    /// `a(t0)`, needed to form the conjugate momentum `a³Ṫ`.
    pub scale_factor: f64,
}

impl AdiabaticInitialData {
    pub fn momentum(&self) -> Complex64 {
        self.velocity * self.scale_factor.powi(3)
    }

    /// `q̄p − qp̄`, equal to `−i` for a normalized state.
    pub fn wronskian(&self) -> Complex64 {
        let (q, p) = (self.value, self.momentum());
        q.conj() * p - q * p.conj()
    }
}

/// Initial data from the WKB form `e^{−i∫Ω}/(a^{3/2}√(2Ω))` with the phase
/// integral taken from `t0` to `t0`:
///
/// `T = 1/(a^{3/2}√(2Ω))`, `Ṫ = T·(−iΩ − (3/2)ȧ/a − Ω̇/(2Ω))`.
pub fn adiabatic_initial_data(
    freq: &AdiabaticFrequency,
    a: &Jet,
    t0: f64,
) -> Result<AdiabaticInitialData, AdiabaticError> {
    for jet in [&freq.omega_jet, a] {
        if jet.base_point() != t0 {
            return Err(JetError::BasePointMismatch {
                left: jet.base_point(),
                right: t0,
            }
            .into());
        }
    }
    let available = freq.omega_jet.order().min(a.order());
    if available < 1 {
        return Err(AdiabaticError::OrderExhausted {
            n: freq.order_n,
            required: 1,
            available,
        });
    }
    let a0 = a.value();
    if !(a0 > 0.0) {
        return Err(JetError::NonPositiveLeadingCoefficient(a0).into());
    }
    let hubble = a.derivative(1) / a0;
    let omega = freq.omega();
    let omega_dot = freq.omega_jet.derivative(1);

    let value = Complex64::new(1.0 / (a0.powf(1.5) * (2.0 * omega).sqrt()), 0.0);
    let velocity = value * Complex64::new(-1.5 * hubble - omega_dot / (2.0 * omega), -omega);
    Ok(AdiabaticInitialData {
        t0,
        value,
        velocity,
        order_n: freq.order_n,
        scale_factor: a0,
    })
}

/// Tower plus initial data for the adiabatic vacuum of order `n` at `t0`.
pub fn adiabatic_vacuum(
    model: &ScaleFactorModel,
    spec: &ModeSpec,
    t0: f64,
    n: usize,
) -> Result<AdiabaticInitialData, TowerError> {
    let tower = omega_tower(model, spec, t0, n)?;
    let top = tower.last().unwrap();
    let a = model
        .scale_factor_jet(t0, top.omega_jet.order())
        .map_err(|e| TowerError::new(tower.clone(), e))?;
    adiabatic_initial_data(top, &a, t0).map_err(|e| TowerError::new(tower.clone(), e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cosmology::Curvature;

    fn mode(kappa: Curvature, k: f64, m: f64) -> ModeSpec {
        ModeSpec::new(kappa, k, m).unwrap()
    }

    /// `(Ω^[1])²` from hand-differentiated `ω² = E/a² + m²` for de Sitter at t = 0.
    fn de_sitter_first_iterate(h: f64, e: f64, m: f64) -> f64 {
        let w2 = e + m * m;
        let w2_dot = -2.0 * h * e;
        let w2_ddot = 4.0 * h * h * e;
        let rate = w2_dot / (2.0 * w2);
        let curv = w2_ddot / (2.0 * w2) - rate * rate;
        w2 - 0.75 * h * h - 1.5 * h * h + 0.75 * rate * rate - 0.5 * curv
    }

    #[test]
    fn minkowski_fixed_point() {
        let model = ScaleFactorModel::constant(1.0).unwrap();
        for spec in [mode(Curvature::Flat, 1.0, 1.0), mode(Curvature::Flat, 0.0, 1.0), mode(Curvature::Open, 0.0, 0.0)] {
            let tower = omega_tower(&model, &spec, 0.0, 4).unwrap();
            assert_eq!(tower.len(), 5);
            let w = spec.omega_squared(1.0).sqrt();
            for level in &tower {
                assert!((level.omega() - w).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn de_sitter_first_iterate_values() {
        assert!((de_sitter_first_iterate(0.1, 1.0, 1.0) - 1.975625).abs() < 1e-15);
        assert!((de_sitter_first_iterate(1.0, 1.0, 1.0) + 0.4375).abs() < 1e-15);

        let spec = mode(Curvature::Open, 0.0, 1.0);
        let slow = omega_tower(&ScaleFactorModel::de_sitter(0.1).unwrap(), &spec, 0.0, 1).unwrap();
        assert!((slow[1].omega_squared() - 1.975625).abs() < 1e-12);

        let fast = omega_tower(&ScaleFactorModel::de_sitter(1.0).unwrap(), &spec, 0.0, 1).unwrap_err();
        assert_eq!(fast.partial.len(), 1);
        match fast.cause {
            AdiabaticError::HadamardViolation { n, omega_sq } => {
                assert_eq!(n, 1);
                assert!((omega_sq + 0.4375).abs() < 1e-12);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn order_budget_drops_by_two() {
        let model = ScaleFactorModel::tanh_transition(2.0, 1.0, 1.0).unwrap();
        let spec = mode(Curvature::Flat, 1.0, 1.0);
        let a = model.scale_factor_jet(0.3, 9).unwrap();
        let mut f = base_frequency(&a, &spec).unwrap();
        assert_eq!(f.omega_jet.order(), 9);
        for n in 1..=4 {
            f = iterate_omega(&f, &a, &spec).unwrap();
            assert_eq!(f.omega_jet.order(), 9 - 2 * n);
            assert_eq!(f.jet_budget_consumed(), 2 * n);
        }
        assert!(matches!(
            iterate_omega(&f, &a, &spec),
            Err(AdiabaticError::OrderExhausted { n: 5, .. })
        ));
    }

    #[test]
    fn spline_runs_out_at_first_order() {
        let ts: Vec<f64> = (0..6).map(f64::from).collect();
        let model = ScaleFactorModel::spline(ts.clone(), ts.iter().map(|t| 1.0 + 0.1 * t).collect()).unwrap();
        let err = omega_tower(&model, &mode(Curvature::Flat, 1.0, 1.0), 2.5, 1).unwrap_err();
        assert_eq!(err.partial.len(), 1);
        assert_eq!(
            err.cause,
            AdiabaticError::OrderExhausted {
                n: 1,
                required: 4,
                available: 2
            }
        );
        // order 0 needs nothing beyond class 2
        assert!(omega_tower(&model, &mode(Curvature::Flat, 1.0, 1.0), 2.5, 0).is_ok());
    }

    #[test]
    fn massless_zero_mode_has_no_frequency() {
        let model = ScaleFactorModel::constant(1.0).unwrap();
        let err = omega_tower(&model, &mode(Curvature::Flat, 0.0, 0.0), 0.0, 2).unwrap_err();
        assert!(matches!(err.cause, AdiabaticError::HadamardViolation { n: 0, .. }));
    }

    #[test]
    fn flat_space_initial_data() {
        let model = ScaleFactorModel::constant(1.0).unwrap();
        let one = adiabatic_vacuum(&model, &mode(Curvature::Flat, 1.0, 0.0), 0.0, 0).unwrap();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert!((one.value - Complex64::new(s, 0.0)).norm() < 1e-15);
        assert!((one.velocity - Complex64::new(0.0, -s)).norm() < 1e-15);
        assert!((one.wronskian() - Complex64::new(0.0, -1.0)).norm() < 1e-15);

        let two = adiabatic_vacuum(&model, &mode(Curvature::Flat, 2.0, 0.0), 0.0, 3).unwrap();
        assert!((two.value - Complex64::new(0.5, 0.0)).norm() < 1e-15);
        assert!((two.velocity - Complex64::new(0.0, -1.0)).norm() < 1e-15);
    }

    #[test]
    fn expanding_initial_data_is_normalized() {
        let spec = mode(Curvature::Open, 0.0, 1.0);
        let data = adiabatic_vacuum(&ScaleFactorModel::de_sitter(0.1).unwrap(), &spec, 0.0, 1).unwrap();
        assert!((data.wronskian() - Complex64::new(0.0, -1.0)).norm() < 1e-12);
        assert!(data.velocity.re < 0.0);
    }

    #[test]
    fn initial_data_rejects_foreign_base_point() {
        let model = ScaleFactorModel::constant(1.0).unwrap();
        let spec = mode(Curvature::Flat, 1.0, 0.0);
        let tower = omega_tower(&model, &spec, 0.0, 0).unwrap();
        let a = model.scale_factor_jet(0.0, 2).unwrap();
        assert!(adiabatic_initial_data(&tower[0], &a, 1.0).is_err());
    }

    #[test]
    fn first_iterate_approaches_omega_at_large_k() {
        let model = ScaleFactorModel::tanh_transition(2.0, 1.0, 1.0).unwrap();
        let mut last = f64::INFINITY;
        for k in [1.0, 10.0, 100.0, 1000.0] {
            let spec = mode(Curvature::Flat, k, 1.0);
            let tower = omega_tower(&model, &spec, 0.2, 1).unwrap();
            let dev = (tower[1].omega_squared() / tower[0].omega_squared() - 1.0).abs();
            assert!(dev < last, "k = {k}: {dev} !< {last}");
            last = dev;
        }
        assert!(last < 1e-6);
    }
}
