//! Adaptive Dormand–Prince 5(4) stepper for small complex linear systems,
//! with the standard fourth-order continuous extension for grid output.

use num_complex::Complex64;

use super::ModeError;

pub type State<const N: usize> = [Complex64; N];

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

// fifth-order weights minus embedded fourth-order weights
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

// continuous extension
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

const SAFETY: f64 = 0.9;
const MIN_FACTOR: f64 = 0.2;
const MAX_FACTOR: f64 = 5.0;
const MAX_STEPS: usize = 10_000_000;

fn combine<const N: usize>(y: &State<N>, h: f64, terms: &[(f64, &State<N>)]) -> State<N> {
    let mut out = *y;
    for (w, k) in terms {
        if *w == 0.0 {
            continue;
        }
        for i in 0..N {
            out[i] += k[i] * (h * w);
        }
    }
    out
}

/// Weighted RMS norm over real and imaginary parts.
fn error_norm<const N: usize>(err: &State<N>, y0: &State<N>, y1: &State<N>, tol: f64) -> f64 {
    let mut acc = 0.0;
    for i in 0..N {
        let sc_re = tol + tol * y0[i].re.abs().max(y1[i].re.abs());
        let sc_im = tol + tol * y0[i].im.abs().max(y1[i].im.abs());
        acc += (err[i].re / sc_re).powi(2) + (err[i].im / sc_im).powi(2);
    }
    (acc / (2 * N) as f64).sqrt()
}

/// Where the stepper reports solution values.
pub enum Output<'a> {
    /// Every accepted step (plus the start point).
    Steps,
    /// Only the given times, which must run monotonically from the start.
    Grid(&'a [f64]),
}

/// Integrates `y' = f(t, y)` from `t0` to `t_end` (either direction).
///
/// `max_step(t, y)` caps the step size at the start of each step.
pub fn integrate<const N: usize, F, G>(
    mut rhs: F,
    mut max_step: G,
    t0: f64,
    y0: State<N>,
    t_end: f64,
    tol: f64,
    output: Output<'_>,
) -> Result<Vec<(f64, State<N>)>, ModeError>
where
    F: FnMut(f64, &State<N>) -> Result<State<N>, ModeError>,
    G: FnMut(f64, &State<N>) -> f64,
{
    let dir = if t_end >= t0 { 1.0 } else { -1.0 };
    let mut samples = Vec::new();
    let mut grid_iter = match output {
        Output::Steps => {
            samples.push((t0, y0));
            None
        }
        Output::Grid(grid) => Some(grid.iter().copied().peekable()),
    };
    // grid points at the start are emitted directly
    if let Some(it) = grid_iter.as_mut() {
        while let Some(&tg) = it.peek() {
            if (tg - t0) * dir <= 0.0 {
                samples.push((tg, y0));
                it.next();
            } else {
                break;
            }
        }
    }
    if t_end == t0 {
        return Ok(samples);
    }

    let mut t = t0;
    let mut y = y0;
    let mut k1 = rhs(t, &y)?;
    let span = (t_end - t0).abs();
    let mut h = initial_step(&mut rhs, t, &y, &k1, tol, dir)?
        .min(max_step(t, &y))
        .min(span);
    let mut rejected_last = false;

    for _ in 0..MAX_STEPS {
        let remaining = (t_end - t) * dir;
        if remaining <= 0.0 {
            return Ok(samples);
        }
        h = h.min(max_step(t, &y)).min(remaining);
        let last = h >= remaining;
        if h <= 1e-14 * t.abs().max(1.0) {
            return Err(ModeError::StepFailure { t, h });
        }
        let hs = h * dir;

        let k2 = rhs(t + C2 * hs, &combine(&y, hs, &[(A21, &k1)]))?;
        let k3 = rhs(t + C3 * hs, &combine(&y, hs, &[(A31, &k1), (A32, &k2)]))?;
        let k4 = rhs(t + C4 * hs, &combine(&y, hs, &[(A41, &k1), (A42, &k2), (A43, &k3)]))?;
        let k5 = rhs(
            t + C5 * hs,
            &combine(&y, hs, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)]),
        )?;
        let k6 = rhs(
            t + hs,
            &combine(&y, hs, &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)]),
        )?;
        let y_new = combine(&y, hs, &[(A71, &k1), (A73, &k3), (A74, &k4), (A75, &k5), (A76, &k6)]);
        let t_new = if last { t_end } else { t + hs };
        let k7 = rhs(t_new, &y_new)?;

        let zero = [Complex64::new(0.0, 0.0); N];
        let err = combine(&zero, hs, &[(E1, &k1), (E3, &k3), (E4, &k4), (E5, &k5), (E6, &k6), (E7, &k7)]);
        // error per unit step: a step of length h may contribute at most tol·min(1, h)
        let err_norm = error_norm(&err, &y, &y_new, tol * h.min(1.0));

        if err_norm <= 1.0 {
            if let Some(it) = grid_iter.as_mut() {
                while let Some(&tg) = it.peek() {
                    if (tg - t_new) * dir > 0.0 {
                        break;
                    }
                    let theta = (tg - t) / hs;
                    samples.push((tg, dense(&y, &y_new, &[&k1, &k3, &k4, &k5, &k6, &k7], hs, theta)));
                    it.next();
                }
            } else {
                samples.push((t_new, y_new));
            }
            t = t_new;
            y = y_new;
            k1 = k7;
            let mut factor = if err_norm == 0.0 {
                MAX_FACTOR
            } else {
                (SAFETY * err_norm.powf(-0.2)).clamp(MIN_FACTOR, MAX_FACTOR)
            };
            if rejected_last {
                factor = factor.min(1.0);
            }
            rejected_last = false;
            h *= factor;
        } else {
            rejected_last = true;
            h *= (SAFETY * err_norm.powf(-0.2)).max(MIN_FACTOR);
        }
    }
    Err(ModeError::StepFailure { t, h })
}

fn dense<const N: usize>(
    y0: &State<N>,
    y1: &State<N>,
    k: &[&State<N>; 6],
    h: f64,
    theta: f64,
) -> State<N> {
    let [k1, k3, k4, k5, k6, k7] = *k;
    let mut out = [Complex64::new(0.0, 0.0); N];
    let theta1 = 1.0 - theta;
    for i in 0..N {
        let r2 = y1[i] - y0[i];
        let r3 = k1[i] * h - r2;
        let r4 = r2 - k7[i] * h - r3;
        let r5 = (k1[i] * D1 + k3[i] * D3 + k4[i] * D4 + k5[i] * D5 + k6[i] * D6 + k7[i] * D7) * h;
        out[i] = y0[i] + (r2 + (r3 + (r4 + r5 * theta1) * theta) * theta1) * theta;
    }
    out
}

fn initial_step<const N: usize, F>(
    rhs: &mut F,
    t: f64,
    y: &State<N>,
    f0: &State<N>,
    tol: f64,
    dir: f64,
) -> Result<f64, ModeError>
where
    F: FnMut(f64, &State<N>) -> Result<State<N>, ModeError>,
{
    let zero = [Complex64::new(0.0, 0.0); N];
    let d0 = error_norm(y, &zero, &zero, tol);
    let d1 = error_norm(f0, &zero, &zero, tol);
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    let y1 = combine(y, h0 * dir, &[(1.0, f0)]);
    let f1 = rhs(t + h0 * dir, &y1)?;
    let mut diff = zero;
    for i in 0..N {
        diff[i] = f1[i] - f0[i];
    }
    let d2 = error_norm(&diff, &zero, &zero, tol) / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(0.2)
    };
    Ok((100.0 * h0).min(h1))
}
