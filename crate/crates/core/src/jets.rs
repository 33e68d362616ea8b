//! Truncated Taylor series ("jets") of real functions of time.
//!
//! A [`Jet`] stores the normalized Taylor coefficients `c_j = f^(j)(t0) / j!`
//! of a function around a base point `t0`. Arithmetic follows the usual
//! power-series recurrences and truncates at the smaller order of its
//! operands, so every composite expression built from a scale factor carries
//! exact derivatives up to its order without finite differencing.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum JetError {
    #[error("jets expanded around different base points ({left} vs {right})")]
    BasePointMismatch { left: f64, right: f64 },
    #[error("division by a jet with vanishing leading coefficient")]
    DivisionByZeroJet,
    #[error("leading coefficient {0} must be strictly positive")]
    NonPositiveLeadingCoefficient(f64),
    #[error("jet of order 0 has no derivative left")]
    OrderExhausted,
    #[error("jet coefficients must be finite")]
    NonFinite,
    #[error("a jet needs at least one coefficient")]
    Empty,
}

/// Truncated Taylor expansion of a real function around `base_point`.
#[derive(Debug, Clone, PartialEq)]
pub struct Jet {
    base_point: f64,
    coeffs: Vec<f64>,
}

fn factorial(n: usize) -> f64 {
    (1..=n).fold(1.0, |acc, j| acc * j as f64)
}

impl Jet {
    /// Builds a jet from normalized coefficients `c_0..c_K`.
    pub fn new(base_point: f64, coeffs: Vec<f64>) -> Result<Self, JetError> {
        if coeffs.is_empty() {
            return Err(JetError::Empty);
        }
        if !base_point.is_finite() || coeffs.iter().any(|c| !c.is_finite()) {
            return Err(JetError::NonFinite);
        }
        Ok(Self { base_point, coeffs })
    }

    /// Builds a jet from plain derivatives `f(t0), f'(t0), ..., f^(K)(t0)`.
    pub fn from_derivatives(base_point: f64, derivatives: &[f64]) -> Result<Self, JetError> {
        let coeffs = derivatives
            .iter()
            .enumerate()
            .map(|(j, d)| d / factorial(j))
            .collect();
        Self::new(base_point, coeffs)
    }

    pub fn constant(base_point: f64, value: f64, order: usize) -> Self {
        let mut coeffs = vec![0.0; order + 1];
        coeffs[0] = value;
        Self { base_point, coeffs }
    }

    pub fn zero(base_point: f64, order: usize) -> Self {
        Self::constant(base_point, 0.0, order)
    }

    /// The identity function `t` expanded at `base_point`.
    pub fn variable(base_point: f64, order: usize) -> Self {
        let mut jet = Self::constant(base_point, base_point, order);
        if order >= 1 {
            jet.coeffs[1] = 1.0;
        }
        jet
    }

    pub fn base_point(&self) -> f64 {
        self.base_point
    }

    pub fn order(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeff(&self, j: usize) -> f64 {
        self.coeffs[j]
    }

    pub fn value(&self) -> f64 {
        self.coeffs[0]
    }

    /// `j!·c_j`, the `j`-th derivative at the base point. Panics if `j > order`.
    pub fn derivative(&self, j: usize) -> f64 {
        factorial(j) * self.coeffs[j]
    }

    /// Evaluates the truncated polynomial at `base_point + dt`.
    pub fn eval(&self, dt: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, c| acc * dt + c)
    }

    pub fn truncate(&self, order: usize) -> Self {
        let keep = order.min(self.order()) + 1;
        Self {
            base_point: self.base_point,
            coeffs: self.coeffs[..keep].to_vec(),
        }
    }

    fn common_order(&self, other: &Self) -> Result<usize, JetError> {
        if self.base_point != other.base_point {
            return Err(JetError::BasePointMismatch {
                left: self.base_point,
                right: other.base_point,
            });
        }
        Ok(self.order().min(other.order()))
    }

    fn with_coeffs(&self, coeffs: Vec<f64>) -> Result<Self, JetError> {
        Self::new(self.base_point, coeffs)
    }

    pub fn add(&self, other: &Self) -> Result<Self, JetError> {
        let k = self.common_order(other)?;
        self.with_coeffs((0..=k).map(|j| self.coeffs[j] + other.coeffs[j]).collect())
    }

    pub fn sub(&self, other: &Self) -> Result<Self, JetError> {
        let k = self.common_order(other)?;
        self.with_coeffs((0..=k).map(|j| self.coeffs[j] - other.coeffs[j]).collect())
    }

    /// Cauchy product truncated at the common order.
    pub fn mul(&self, other: &Self) -> Result<Self, JetError> {
        let k = self.common_order(other)?;
        let coeffs = (0..=k)
            .map(|n| (0..=n).map(|j| self.coeffs[j] * other.coeffs[n - j]).sum())
            .collect();
        self.with_coeffs(coeffs)
    }

    pub fn div(&self, other: &Self) -> Result<Self, JetError> {
        let k = self.common_order(other)?;
        let d0 = other.coeffs[0];
        if d0 == 0.0 {
            return Err(JetError::DivisionByZeroJet);
        }
        let mut q = Vec::with_capacity(k + 1);
        for n in 0..=k {
            let acc: f64 = (1..=n).map(|j| other.coeffs[j] * q[n - j]).sum();
            q.push((self.coeffs[n] - acc) / d0);
        }
        self.with_coeffs(q)
    }

    pub fn recip(&self) -> Result<Self, JetError> {
        Self::constant(self.base_point, 1.0, self.order()).div(self)
    }

    pub fn neg(&self) -> Self {
        self.scale(-1.0)
    }

    pub fn scale(&self, factor: f64) -> Self {
        Self {
            base_point: self.base_point,
            coeffs: self.coeffs.iter().map(|c| c * factor).collect(),
        }
    }

    pub fn add_scalar(&self, value: f64) -> Self {
        let mut out = self.clone();
        out.coeffs[0] += value;
        out
    }

    pub fn square(&self) -> Self {
        // same base point by construction
        self.mul(self).expect("jet squared against itself")
    }

    pub fn sqrt(&self) -> Result<Self, JetError> {
        let x0 = self.coeffs[0];
        if !(x0 > 0.0) {
            return Err(JetError::NonPositiveLeadingCoefficient(x0));
        }
        let mut y = Vec::with_capacity(self.coeffs.len());
        y.push(x0.sqrt());
        for n in 1..=self.order() {
            let acc: f64 = (1..n).map(|j| y[j] * y[n - j]).sum();
            y.push((self.coeffs[n] - acc) / (2.0 * y[0]));
        }
        self.with_coeffs(y)
    }

    pub fn exp(&self) -> Result<Self, JetError> {
        let mut y = Vec::with_capacity(self.coeffs.len());
        y.push(self.coeffs[0].exp());
        for n in 1..=self.order() {
            let acc: f64 = (1..=n).map(|j| j as f64 * self.coeffs[j] * y[n - j]).sum();
            y.push(acc / n as f64);
        }
        self.with_coeffs(y)
    }

    pub fn ln(&self) -> Result<Self, JetError> {
        let x0 = self.coeffs[0];
        if !(x0 > 0.0) {
            return Err(JetError::NonPositiveLeadingCoefficient(x0));
        }
        let mut y = Vec::with_capacity(self.coeffs.len());
        y.push(x0.ln());
        for n in 1..=self.order() {
            let acc: f64 = (1..n).map(|j| j as f64 * y[j] * self.coeffs[n - j]).sum();
            y.push((self.coeffs[n] - acc / n as f64) / x0);
        }
        self.with_coeffs(y)
    }

    pub fn tanh(&self) -> Result<Self, JetError> {
        // y' = (1 - y^2) u', with z = 1 - y^2 built alongside y
        let order = self.order();
        let mut y = Vec::with_capacity(order + 1);
        let mut z = Vec::with_capacity(order + 1);
        y.push(self.coeffs[0].tanh());
        z.push(1.0 - y[0] * y[0]);
        for n in 1..=order {
            let yn = (1..=n)
                .map(|j| j as f64 * self.coeffs[j] * z[n - j])
                .sum::<f64>()
                / n as f64;
            y.push(yn);
            let sq: f64 = (0..=n).map(|j| y[j] * y[n - j]).sum();
            z.push(-sq);
        }
        self.with_coeffs(y)
    }

    /// Integer power by repeated squaring; negative powers go through [`Jet::recip`].
    pub fn powi(&self, p: i32) -> Result<Self, JetError> {
        if p < 0 {
            return self.powi(-p)?.recip();
        }
        let mut result = Self::constant(self.base_point, 1.0, self.order());
        let mut base = self.clone();
        let mut e = p as u32;
        while e > 0 {
            if e & 1 == 1 {
                result = result.mul(&base)?;
            }
            e >>= 1;
            if e > 0 {
                base = base.square();
            }
        }
        Ok(result)
    }

    /// Real power via `x y' = p x' y`.
    pub fn powf(&self, p: f64) -> Result<Self, JetError> {
        let x0 = self.coeffs[0];
        if !(x0 > 0.0) {
            return Err(JetError::NonPositiveLeadingCoefficient(x0));
        }
        let mut y = Vec::with_capacity(self.coeffs.len());
        y.push(x0.powf(p));
        for n in 1..=self.order() {
            let acc: f64 = (1..=n)
                .map(|j| (p * j as f64 - (n - j) as f64) * self.coeffs[j] * y[n - j])
                .sum();
            y.push(acc / (n as f64 * x0));
        }
        self.with_coeffs(y)
    }

    /// Jet of the time derivative; the order drops by one.
    pub fn derivative_jet(&self) -> Result<Self, JetError> {
        if self.order() == 0 {
            return Err(JetError::OrderExhausted);
        }
        let coeffs = (0..self.order())
            .map(|j| (j + 1) as f64 * self.coeffs[j + 1])
            .collect();
        self.with_coeffs(coeffs)
    }
}
