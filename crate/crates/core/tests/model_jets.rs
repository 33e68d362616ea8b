//! Scale-factor jets against hand-derived derivative formulas and finite
//! differences.

use adiavac::adiabatic::omega_tower;
use adiavac::cosmology::{Curvature, ModeSpec, ScaleFactorModel};

const K: usize = 12;

fn assert_close(got: f64, want: f64, floor: f64, rel: f64, what: &str) {
    let scale = want.abs().max(floor);
    assert!(
        (got - want).abs() <= rel * scale,
        "{what}: got {got}, want {want}, rel err {}",
        (got - want).abs() / scale
    );
}

/// Coefficients of d^j tanh(u)/du^j as a polynomial in s = tanh(u).
fn tanh_derivative_polys(max: usize) -> Vec<Vec<f64>> {
    let mut polys = vec![vec![0.0, 1.0]];
    for _ in 0..max {
        let p = polys.last().unwrap();
        // d/du P(s) = P'(s) (1 − s²)
        let dp: Vec<f64> = (1..p.len()).map(|i| i as f64 * p[i]).collect();
        let mut next = vec![0.0; dp.len() + 2];
        for (i, c) in dp.iter().enumerate() {
            next[i] += c;
            next[i + 2] -= c;
        }
        polys.push(next);
    }
    polys
}

fn horner(p: &[f64], s: f64) -> f64 {
    p.iter().rev().fold(0.0, |acc, c| acc * s + c)
}

#[test]
fn de_sitter_derivatives() {
    for (h, t) in [(0.1, 0.0), (1.0, 0.7), (-0.5, 2.0)] {
        let jet = ScaleFactorModel::de_sitter(h).unwrap().scale_factor_jet(t, K).unwrap();
        for j in 0..=K {
            let want = h.powi(j as i32) * (h * t).exp();
            assert_close(jet.derivative(j), want, 0.0, 1e-10, &format!("de Sitter H={h} j={j}"));
        }
    }
}

#[test]
fn power_law_derivatives() {
    for (p, off, t) in [(0.5, 1.0, 0.3), (2.0 / 3.0, 5.0, -1.0), (2.0, 0.0, 1.5)] {
        let jet = ScaleFactorModel::power_law(p, off).unwrap().scale_factor_jet(t, K).unwrap();
        let x: f64 = t + off;
        let mut falling = 1.0;
        for j in 0..=K {
            let want = falling * x.powf(p - j as f64);
            assert_close(jet.derivative(j), want, 1e-300, 1e-10, &format!("power law p={p} j={j}"));
            falling *= p - j as f64;
        }
    }
}

#[test]
fn tanh_derivatives_from_polynomial_recurrence() {
    let polys = tanh_derivative_polys(K);
    for (a, b, tau, t) in [(2.0, 1.0, 1.0, 0.0), (2.0, 1.0, 1.0, 0.37), (3.0, -2.5, 0.5, -0.8), (1.5, 0.2, 2.0, 3.0)] {
        let jet = ScaleFactorModel::tanh_transition(a, b, tau).unwrap().scale_factor_jet(t, K).unwrap();
        let s = (t / tau).tanh();
        for j in 0..=K {
            let mut want = b * horner(&polys[j], s) / tau.powi(j as i32);
            if j == 0 {
                want += a;
            }
            // floor: size of the individual polynomial terms
            let floor = b.abs() * polys[j].iter().map(|c| c.abs()).sum::<f64>() / tau.powi(j as i32);
            assert_close(jet.derivative(j), want, floor, 1e-10, &format!("tanh t={t} j={j}"));
        }
    }
}

#[test]
fn jets_match_finite_differences() {
    let h = 1e-4;
    let models = [
        ScaleFactorModel::de_sitter(0.3).unwrap(),
        ScaleFactorModel::power_law(0.5, 2.0).unwrap(),
        ScaleFactorModel::tanh_transition(2.0, 1.0, 1.0).unwrap(),
    ];
    for model in &models {
        for t in [-0.5, 0.0, 0.8] {
            let jet = model.scale_factor_jet(t, 4).unwrap();
            let f = |x: f64| model.value(x).unwrap();
            let d1 = (f(t + h) - f(t - h)) / (2.0 * h);
            let d2 = (f(t + h) - 2.0 * f(t) + f(t - h)) / (h * h);
            // third and fourth orders difference lower-order jet derivatives
            let lower = |x: f64, j: usize| model.scale_factor_jet(x, 2).unwrap().derivative(j);
            let d3 = (lower(t + h, 2) - lower(t - h, 2)) / (2.0 * h);
            let d4 = (lower(t + h, 2) - 2.0 * lower(t, 2) + lower(t - h, 2)) / (h * h);
            for (j, fd) in [(1, d1), (2, d2), (3, d3), (4, d4)] {
                assert_close(jet.derivative(j), fd, 1e-3, 1e-5, &format!("{} t={t} j={j}", model.name()));
            }
        }
    }
}

#[test]
fn tanh_tower_rates_match_finite_differences() {
    let model = ScaleFactorModel::tanh_transition(2.0, 1.0, 1.0).unwrap();
    let spec = ModeSpec::new(Curvature::Flat, 3.0, 1.0).unwrap();
    let h = 1e-4;
    for t in [-0.6, 0.0, 0.45] {
        let at = |x: f64| omega_tower(&model, &spec, x, 2).unwrap();
        let (lo, mid, hi) = (at(t - h), at(t), at(t + h));
        for n in 0..=2 {
            let fd = (hi[n].omega() - lo[n].omega()) / (2.0 * h);
            assert_close(mid[n].omega_dot().unwrap(), fd, 1e-3, 1e-6, &format!("t={t} n={n}"));
        }
    }
}

#[test]
fn spline_jet_matches_its_pieces() {
    let ts: Vec<f64> = (0..8).map(|i| i as f64 * 0.5).collect();
    let values: Vec<f64> = ts.iter().map(|t| 1.0 + 0.1 * t * t).collect();
    let model = ScaleFactorModel::spline(ts, values).unwrap();
    let h = 1e-5;
    let t = 1.3;
    let jet = model.scale_factor_jet(t, 2).unwrap();
    let f = |x: f64| model.value(x).unwrap();
    assert_close(jet.derivative(1), (f(t + h) - f(t - h)) / (2.0 * h), 1e-3, 1e-7, "spline d1");
    assert!(model.scale_factor_jet(t, 3).is_err());
}
