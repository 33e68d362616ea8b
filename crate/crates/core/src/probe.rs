//! Numerical checks of how the frequency iteration depends on the highest
//! scale-factor derivative.
//!
//! * `(Ω^[1])²` is affine in `ä` at fixed `(a, ȧ)`, with a strictly negative
//!   slope; so `ä` can be recovered from `Ω^[1]`.
//! * The coefficient `f_{n+1}` of `a^(2n)` in `(Ω^[n])²` obeys
//!   `f_{n+1} = −¼ f_n / (Ω^[n−1])²`, i.e.
//!   `f_{n+1} = (−¼)^{n−1} f₂ ∏_{i=1}^{n−1} (Ω^[i])^{−2}`.
//!
//! [`fn_chain`] evaluates the recursion, the closed product and a direct
//! measurement of the coefficient by perturbing the top jet coefficient.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adiabatic::{base_frequency, iterate_omega, next_omega_squared, omega_tower, AdiabaticError, TowerError};
use crate::cosmology::{CosmologyError, ModeSpec, ModelDescriptor, ScaleFactorModel};
use crate::jets::Jet;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProbeError {
    #[error("(Omega^[1])^2 is not affine in the second derivative: residual {residual} at scale {scale}")]
    NotAffine { residual: f64, scale: f64 },
    #[error("slope of (Omega^[1])^2 with respect to the second derivative vanishes")]
    DegenerateSlope,
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Tower(#[from] TowerError),
    #[error(transparent)]
    Adiabatic(#[from] AdiabaticError),
    #[error(transparent)]
    Cosmology(#[from] CosmologyError),
}

/// `(Ω^[1])²` evaluated directly from `(a, ȧ, ä)` via the chain rule on
/// `ω² = E/a² + m²`.
pub fn omega1_squared_direct(a: f64, a_dot: f64, a_ddot: f64, spec: &ModeSpec) -> f64 {
    let e = spec.energy_eigenvalue();
    let w2 = e / (a * a) + spec.m * spec.m;
    let w2_dot = -2.0 * e * a_dot / a.powi(3);
    let w2_ddot = -2.0 * e * a_ddot / a.powi(3) + 6.0 * e * a_dot * a_dot / a.powi(4);
    // Ω̇/Ω and Ω̈/Ω at n = 0, written through ω²
    let rate = w2_dot / (2.0 * w2);
    let curvature = w2_ddot / (2.0 * w2) - rate * rate;
    let hubble = a_dot / a;
    w2 - 0.75 * hubble * hubble - 1.5 * a_ddot / a + 0.75 * rate * rate - 0.5 * curvature
}

/// `∂(Ω^[1])²/∂ä = −3/(2a) + E/(2a³ω²)`.
pub fn slope_closed_form(a: f64, spec: &ModeSpec) -> f64 {
    let e = spec.energy_eigenvalue();
    -1.5 / a + e / (2.0 * a.powi(3) * spec.omega_squared(a))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineDecomposition {
    pub slope: f64,
    /// `(Ω^[1])²` at `ä = 0`.
    pub intercept: f64,
    /// Second difference of the three-point fit.
    pub quadratic_residual: f64,
    /// Largest magnitude among the sampled values (at least one).
    pub scale: f64,
}

fn check_background(a: f64, a_dot: f64, spec: &ModeSpec) -> Result<(), ProbeError> {
    if !(a.is_finite() && a > 0.0 && a_dot.is_finite()) {
        return Err(ProbeError::InvalidInput(format!("need finite a > 0, got a = {a}, ȧ = {a_dot}")));
    }
    if !(spec.omega_squared(a) > 0.0) {
        return Err(ProbeError::InvalidInput("mode has E(k) + m² = 0".into()));
    }
    Ok(())
}

/// Three-point affine fit of `(Ω^[1])²` in `ä` around `ä = 0`.
pub fn affine_decompose(a: f64, a_dot: f64, spec: &ModeSpec) -> Result<AffineDecomposition, ProbeError> {
    affine_decompose_around(a, a_dot, 0.0, spec)
}

/// Three-point affine fit at `ä ∈ {c − h, c, c + h}` with `h = max(1, |c|)`.
pub fn affine_decompose_around(
    a: f64,
    a_dot: f64,
    center: f64,
    spec: &ModeSpec,
) -> Result<AffineDecomposition, ProbeError> {
    check_background(a, a_dot, spec)?;
    if !center.is_finite() {
        return Err(ProbeError::InvalidInput(format!("ä = {center}")));
    }
    let h = center.abs().max(1.0);
    let f = |x: f64| omega1_squared_direct(a, a_dot, x, spec);
    let (lo, mid, hi) = (f(center - h), f(center), f(center + h));
    let slope = (hi - lo) / (2.0 * h);
    let quadratic_residual = hi - 2.0 * mid + lo;
    let scale = lo.abs().max(mid.abs()).max(hi.abs()).max(1.0);
    if quadratic_residual.abs() > 1e-9 * scale {
        return Err(ProbeError::NotAffine {
            residual: quadratic_residual,
            scale,
        });
    }
    Ok(AffineDecomposition {
        slope,
        intercept: mid - slope * center,
        quadratic_residual,
        scale,
    })
}

/// Solves the affine relation for `ä` given `(Ω^[1])²`, `a` and `ȧ`.
pub fn recover_addot(omega1_sq: f64, a: f64, a_dot: f64, spec: &ModeSpec) -> Result<f64, ProbeError> {
    let fit = affine_decompose(a, a_dot, spec)?;
    if fit.slope == 0.0 {
        return Err(ProbeError::DegenerateSlope);
    }
    Ok((omega1_sq - fit.intercept) / fit.slope)
}

/// Coefficients `f₂..f_n` evaluated three ways at one point of a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FnChain {
    pub n: usize,
    /// `f_j` from the link-by-link recursion, `j = 2..=n`.
    pub values: Vec<f64>,
    /// `f_j` from the closed product.
    pub closed_form: Vec<f64>,
    /// `f_j` measured as `∂(Ω^[j−1])²/∂a^(2j−2)` by perturbing the jet.
    pub measured: Vec<f64>,
    /// `(Ω^[1])², ..., (Ω^[n−1])²`.
    pub omegas_sq: Vec<f64>,
}

fn relative_gap(x: f64, y: f64) -> f64 {
    let scale = x.abs().max(y.abs());
    if scale == 0.0 {
        0.0
    } else {
        (x - y).abs() / scale
    }
}

impl FnChain {
    pub fn max_closed_form_gap(&self) -> f64 {
        self.values
            .iter()
            .zip(&self.closed_form)
            .map(|(x, y)| relative_gap(*x, *y))
            .fold(0.0, f64::max)
    }

    pub fn max_measured_gap(&self) -> f64 {
        self.values
            .iter()
            .zip(&self.measured)
            .map(|(x, y)| relative_gap(*x, *y))
            .fold(0.0, f64::max)
    }

    pub fn entries(&self) -> Vec<FnEntry> {
        (0..self.values.len())
            .map(|i| FnEntry {
                index: i + 2,
                recursion: self.values[i],
                closed_form: self.closed_form[i],
                measured: self.measured[i],
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FnEntry {
    pub index: usize,
    pub recursion: f64,
    pub closed_form: f64,
    pub measured: f64,
}

/// `(Ω^[n])²` at the base point of `a`; earlier iterates must exist.
fn iterate_to_squared(a: &Jet, spec: &ModeSpec, n: usize) -> Result<f64, AdiabaticError> {
    let mut freq = base_frequency(a, spec)?;
    if n == 0 {
        return Ok(freq.omega_squared());
    }
    for _ in 1..n {
        freq = iterate_omega(&freq, a, spec)?;
    }
    Ok(next_omega_squared(&freq, a, spec)?.value())
}

/// `∂(Ω^[n])²/∂a^(2n)` by a symmetric perturbation of the top jet coefficient.
fn measure_top_coefficient(a: &Jet, spec: &ModeSpec, n: usize) -> Result<f64, AdiabaticError> {
    let top = 2 * n;
    let base = a.truncate(top);
    let delta = 1.0;
    let shifted = |sign: f64| -> Result<f64, AdiabaticError> {
        let mut coeffs = base.coeffs().to_vec();
        let unit = Jet::from_derivatives(0.0, &vec![1.0; top + 1])?.coeff(top);
        coeffs[top] += sign * delta * unit;
        iterate_to_squared(&Jet::new(base.base_point(), coeffs)?, spec, n)
    };
    Ok((shifted(1.0)? - shifted(-1.0)?) / (2.0 * delta))
}

/// Builds the `f_j` chain for `j = 2..=n` at `t0`.
pub fn fn_chain(model: &ScaleFactorModel, spec: &ModeSpec, t0: f64, n: usize) -> Result<FnChain, ProbeError> {
    if n < 2 {
        return Err(ProbeError::InvalidInput(format!("fn_chain needs n ≥ 2, got {n}")));
    }
    let tower = omega_tower(model, spec, t0, n - 1)?;
    let omegas_sq: Vec<f64> = tower[1..].iter().map(|f| f.omega_squared()).collect();

    let a1 = model.scale_factor_jet(t0, 1)?;
    let f2 = affine_decompose(a1.value(), a1.derivative(1), spec)?.slope;

    let mut values = vec![f2];
    let mut closed_form = vec![f2];
    for j in 3..=n {
        let prev = *values.last().unwrap();
        values.push(-0.25 * prev / omegas_sq[j - 3]);
        let product: f64 = omegas_sq[..j - 2].iter().map(|w| 1.0 / w).product();
        closed_form.push((-0.25f64).powi(j as i32 - 2) * f2 * product);
    }

    let a = model.scale_factor_jet(t0, model.smoothness().cap(2 * (n - 1)))?;
    let measured = (2..=n)
        .map(|j| measure_top_coefficient(&a, spec, j - 1))
        .collect::<Result<Vec<_>, _>>()?;

    Ok(FnChain {
        n,
        values,
        closed_form,
        measured,
        omegas_sq,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    HadamardViolation,
    OrderExhausted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub kind: FailureKind,
    pub n: usize,
    /// `(Ω^[n])²` for a positivity failure; absent when derivatives ran out.
    pub value: Option<f64>,
}

impl Failure {
    pub fn from_error(err: &AdiabaticError) -> Option<Self> {
        match *err {
            AdiabaticError::HadamardViolation { n, omega_sq } => Some(Self {
                kind: FailureKind::HadamardViolation,
                n,
                value: Some(omega_sq),
            }),
            AdiabaticError::OrderExhausted { n, .. } => Some(Self {
                kind: FailureKind::OrderExhausted,
                n,
                value: None,
            }),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrderReport {
    /// Largest `n ≤ n_cap` with `(Ω^[n])² > 0` at `t0`.
    pub max_order: Option<usize>,
    pub failure: Option<Failure>,
}

/// Largest adiabatic order that exists at `t0`, and why the next one does not.
pub fn max_adiabatic_order(
    model: &ScaleFactorModel,
    spec: &ModeSpec,
    t0: f64,
    n_cap: usize,
) -> Result<OrderReport, ProbeError> {
    match omega_tower(model, spec, t0, n_cap) {
        Ok(_) => Ok(OrderReport {
            max_order: Some(n_cap),
            failure: None,
        }),
        Err(err) => match Failure::from_error(&err.cause) {
            Some(failure) => Ok(OrderReport {
                max_order: failure.n.checked_sub(1),
                failure: Some(failure),
            }),
            None => Err(err.into()),
        },
    }
}

/// Weighted forms of the `f₂` coefficient, reported next to the slope.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalizations {
    /// `ω²(3a⁵ − E a³)`.
    pub f2_weighted: f64,
    /// `2ω²(3a⁵ + E a³)`.
    pub addot_denominator: f64,
    /// Coefficient of `ä` in `(Ω^[1])²`.
    pub f2_slope: f64,
}

pub fn normalizations(a: f64, spec: &ModeSpec, slope: f64) -> Normalizations {
    let e = spec.energy_eigenvalue();
    let w2 = spec.omega_squared(a);
    Normalizations {
        f2_weighted: w2 * (3.0 * a.powi(5) - e * a.powi(3)),
        addot_denominator: 2.0 * w2 * (3.0 * a.powi(5) + e * a.powi(3)),
        f2_slope: slope,
    }
}

/// JSON report of the `probe` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub model: ModelDescriptor,
    pub mode: ModeSpec,
    pub t0: f64,
    pub max_order: Option<usize>,
    pub failure: Option<Failure>,
    pub fn_chain: Vec<FnEntry>,
    pub slope: f64,
    pub intercept: f64,
    pub quadratic_residual: f64,
    pub normalizations: Normalizations,
}

/// Runs the order search, the affine fit at `(a(t0), ȧ(t0))` and the longest
/// `f_j` chain the tower supports.
pub fn probe_report(
    model: &ScaleFactorModel,
    spec: &ModeSpec,
    t0: f64,
    n_cap: usize,
) -> Result<ProbeReport, ProbeError> {
    let orders = max_adiabatic_order(model, spec, t0, n_cap)?;
    let a = model.scale_factor_jet(t0, 1)?;
    let fit = affine_decompose(a.value(), a.derivative(1), spec)?;
    let chain = match orders.max_order {
        Some(top) if top >= 1 => fn_chain(model, spec, t0, top + 1)?.entries(),
        _ => Vec::new(),
    };
    Ok(ProbeReport {
        model: model.descriptor(),
        mode: *spec,
        t0,
        max_order: orders.max_order,
        failure: orders.failure,
        fn_chain: chain,
        slope: fit.slope,
        intercept: fit.intercept,
        quadratic_residual: fit.quadratic_residual,
        normalizations: normalizations(a.value(), spec, fit.slope),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cosmology::Curvature;
    use proptest::prelude::*;

    fn mode(kappa: Curvature, k: f64, m: f64) -> ModeSpec {
        ModeSpec::new(kappa, k, m).unwrap()
    }

    #[test]
    fn slope_examples() {
        let fit = affine_decompose(1.0, 0.0, &mode(Curvature::Open, 0.0, 1.0)).unwrap();
        assert!((fit.slope + 1.25).abs() < 1e-14);
        for a in [0.5, 1.0, 3.0] {
            let fit = affine_decompose(a, 0.3, &mode(Curvature::Flat, 0.0, 1.0)).unwrap();
            assert!((fit.slope + 1.5 / a).abs() < 1e-14);
        }
    }

    #[test]
    fn de_sitter_recovery() {
        // a = 1, ȧ = H, ä = H² at t = 0
        let spec = mode(Curvature::Open, 0.0, 1.0);
        let addot = recover_addot(1.975625, 1.0, 0.1, &spec).unwrap();
        assert!((addot - 0.01).abs() < 1e-10);
        assert!(recover_addot(omega1_squared_direct(1.3, 0.2, 0.0, &spec), 1.3, 0.2, &spec).unwrap().abs() < 1e-12);
    }

    #[test]
    fn direct_formula_matches_jet_iteration() {
        let model = ScaleFactorModel::tanh_transition(2.0, 1.0, 1.0).unwrap();
        let spec = mode(Curvature::Closed, 3.0, 0.7);
        let t0 = 0.4;
        let a = model.scale_factor_jet(t0, 4).unwrap();
        let tower = omega_tower(&model, &spec, t0, 1).unwrap();
        let direct = omega1_squared_direct(a.value(), a.derivative(1), a.derivative(2), &spec);
        assert!((tower[1].omega_squared() - direct).abs() < 1e-13 * direct.abs());
    }

    #[test]
    fn degenerate_inputs() {
        assert!(matches!(
            affine_decompose(0.0, 0.0, &mode(Curvature::Flat, 1.0, 1.0)),
            Err(ProbeError::InvalidInput(_))
        ));
        assert!(matches!(
            affine_decompose(1.0, 0.0, &mode(Curvature::Flat, 0.0, 0.0)),
            Err(ProbeError::InvalidInput(_))
        ));
        assert!(fn_chain(&ScaleFactorModel::constant(1.0).unwrap(), &mode(Curvature::Flat, 1.0, 1.0), 0.0, 1).is_err());
    }

    #[test]
    fn static_chain_shrinks_by_one_eighth() {
        let model = ScaleFactorModel::constant(1.0).unwrap();
        let chain = fn_chain(&model, &mode(Curvature::Open, 0.0, 1.0), 0.0, 4).unwrap();
        assert_eq!(chain.values.len(), 3);
        assert!((chain.values[0] + 1.25).abs() < 1e-15);
        for w in chain.values.windows(2) {
            assert!((w[1] / w[0] + 0.125).abs() < 1e-14);
        }
        assert!(chain.max_closed_form_gap() < 1e-15);
        assert!(chain.max_measured_gap() < 1e-10, "{chain:?}");
    }

    #[test]
    fn short_chain_is_just_f2() {
        let model = ScaleFactorModel::tanh_transition(2.0, 1.0, 1.0).unwrap();
        let chain = fn_chain(&model, &mode(Curvature::Flat, 1.0, 1.0), 0.0, 2).unwrap();
        assert_eq!(chain.values.len(), 1);
        assert_eq!(chain.values, chain.closed_form);
        assert!(chain.max_measured_gap() < 1e-10);
    }

    #[test]
    fn tanh_chain_three_ways() {
        let model = ScaleFactorModel::tanh_transition(2.0, 1.0, 1.0).unwrap();
        let chain = fn_chain(&model, &mode(Curvature::Flat, 5.0, 1.0), 0.3, 5).unwrap();
        assert!(chain.max_closed_form_gap() < 1e-10);
        assert!(chain.max_measured_gap() < 1e-8, "{chain:?}");
    }

    #[test]
    fn order_reports() {
        let spec = mode(Curvature::Open, 0.0, 1.0);
        let flat = max_adiabatic_order(&ScaleFactorModel::constant(1.0).unwrap(), &spec, 0.0, 6).unwrap();
        assert_eq!(flat, OrderReport { max_order: Some(6), failure: None });

        let fast = max_adiabatic_order(&ScaleFactorModel::de_sitter(1.0).unwrap(), &spec, 0.0, 4).unwrap();
        assert_eq!(fast.max_order, Some(0));
        let failure = fast.failure.unwrap();
        assert_eq!(failure.kind, FailureKind::HadamardViolation);
        assert!((failure.value.unwrap() + 0.4375).abs() < 1e-12);

        let ts: Vec<f64> = (0..6).map(f64::from).collect();
        let spline = ScaleFactorModel::spline(ts.clone(), ts.iter().map(|t| 2.0 + (t * 0.7).sin()).collect()).unwrap();
        let rough = max_adiabatic_order(&spline, &spec, 2.2, 3).unwrap();
        assert_eq!(rough.max_order, Some(0));
        assert_eq!(
            rough.failure,
            Some(Failure { kind: FailureKind::OrderExhausted, n: 1, value: None })
        );
    }

    #[test]
    fn report_serializes_expected_keys() {
        let model = ScaleFactorModel::de_sitter(0.1).unwrap();
        let report = probe_report(&model, &mode(Curvature::Open, 0.0, 1.0), 0.0, 3).unwrap();
        let json = serde_json::to_value(&report).unwrap();
        for key in ["model", "mode", "t0", "max_order", "failure", "fn_chain", "slope", "intercept"] {
            assert!(json.get(key).is_some(), "missing {key}");
        }
        assert_eq!(json["mode"]["kappa"], -1);
        assert_eq!(report.fn_chain.len(), 3);
        let back: ProbeReport = serde_json::from_value(json).unwrap();
        assert_eq!(back, report);
    }

    proptest! {
        #[test]
        fn slope_is_negative_and_matches_closed_form(
            a in 0.05f64..20.0,
            a_dot in -5.0f64..5.0,
            k in 0.0f64..30.0,
            m in 0.0f64..3.0,
            kappa in prop::sample::select(vec![Curvature::Open, Curvature::Flat]),
        ) {
            let spec = mode(kappa, k, m);
            prop_assume!(spec.omega_squared(a) > 0.0);
            let fit = affine_decompose(a, a_dot, &spec).unwrap();
            let exact = slope_closed_form(a, &spec);
            prop_assert!(exact < 0.0);
            prop_assert!(fit.slope < 0.0);
            prop_assert!((fit.slope - exact).abs() <= 1e-9 * exact.abs());
        }
    }
}
