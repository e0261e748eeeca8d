//! ODE integration and scalar root finding.
//!
//! Both integrators step exactly onto every requested output time, so the
//! returned [`Trajectory`] carries the caller's times bit-for-bit.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IntegrateError {
    #[error("non-finite state at t = {t}")]
    NonFinite { t: f64 },
    #[error("maximum step count {max_steps} exceeded at t = {t}")]
    MaxSteps { t: f64, max_steps: usize },
    #[error("step size underflow at t = {t}")]
    StepUnderflow { t: f64 },
    #[error("invalid time grid: {0}")]
    BadGrid(String),
    #[error("invalid integrator setting: {0}")]
    BadConfig(String),
    #[error("vector field failed at t = {t}: {msg}")]
    Field { t: f64, msg: String },
    #[error("root not bracketed: f({lo}) = {flo}, f({hi}) = {fhi}")]
    NoSignChange { lo: f64, hi: f64, flo: f64, fhi: f64 },
    #[error("non-finite residual at x = {x}")]
    NonFiniteResidual { x: f64 },
}

/// State trajectory reported at the requested times.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last(&self) -> Option<&[f64]> {
        self.states.last().map(Vec::as_slice)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    FixedRk4,
    #[default]
    Adaptive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegratorConfig {
    pub method: Method,
    /// Maximum step for the fixed-step method.
    pub step: f64,
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            method: Method::Adaptive,
            step: 0.01,
            rtol: 1e-8,
            atol: 1e-10,
            max_steps: 1_000_000,
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<(), IntegrateError> {
        if !(self.rtol > 0.0 && self.rtol < 1.0) {
            return Err(IntegrateError::BadConfig(format!("rtol must lie in (0,1), got {}", self.rtol)));
        }
        if !(self.atol > 0.0 && self.atol < 1.0) {
            return Err(IntegrateError::BadConfig(format!("atol must lie in (0,1), got {}", self.atol)));
        }
        if !(self.step > 0.0) || !self.step.is_finite() {
            return Err(IntegrateError::BadConfig(format!("step must be > 0, got {}", self.step)));
        }
        if self.max_steps == 0 {
            return Err(IntegrateError::BadConfig("max_steps must be >= 1".into()));
        }
        Ok(())
    }

    /// Integrate from `(t0, x0)` and report at `t_eval` with the configured method.
    pub fn integrate<F>(&self, field: F, x0: &[f64], t0: f64, t_eval: &[f64]) -> Result<Trajectory, IntegrateError>
    where
        F: Fn(f64, &[f64], &mut [f64]) -> Result<(), IntegrateError>,
    {
        self.validate()?;
        match self.method {
            Method::FixedRk4 => {
                // rk4 starts on the first grid point, so prepend t0 when needed.
                if t_eval.first() == Some(&t0) {
                    rk4_integrate(field, x0, t_eval, self.step)
                } else {
                    let mut grid = Vec::with_capacity(t_eval.len() + 1);
                    grid.push(t0);
                    grid.extend_from_slice(t_eval);
                    let mut traj = rk4_integrate(field, x0, &grid, self.step)?;
                    traj.times.remove(0);
                    traj.states.remove(0);
                    Ok(traj)
                }
            }
            Method::Adaptive => {
                let t1 = t_eval.last().copied().unwrap_or(t0);
                adaptive_integrate(field, x0, (t0, t1), t_eval, self.rtol, self.atol, self.max_steps)
            }
        }
    }
}

fn check_grid(grid: &[f64]) -> Result<(), IntegrateError> {
    if grid.is_empty() {
        return Err(IntegrateError::BadGrid("empty time grid".into()));
    }
    if grid.iter().any(|t| !t.is_finite()) {
        return Err(IntegrateError::BadGrid("non-finite time".into()));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(IntegrateError::BadGrid("times must be strictly increasing".into()));
    }
    Ok(())
}

fn finite_or(t: f64, x: &[f64]) -> Result<(), IntegrateError> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(IntegrateError::NonFinite { t })
    }
}

/// Classical fourth-order Runge–Kutta. Each interval of `t_grid` is split
/// into `ceil(Δt / h)` equal steps; the trajectory starts at `t_grid[0]`
/// with state `x0`.
pub fn rk4_integrate<F>(field: F, x0: &[f64], t_grid: &[f64], h: f64) -> Result<Trajectory, IntegrateError>
where
    F: Fn(f64, &[f64], &mut [f64]) -> Result<(), IntegrateError>,
{
    check_grid(t_grid)?;
    if !(h > 0.0) || !h.is_finite() {
        return Err(IntegrateError::BadConfig(format!("step must be > 0, got {h}")));
    }
    finite_or(t_grid[0], x0)?;
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    let mut states = Vec::with_capacity(t_grid.len());
    states.push(x.clone());
    for w in t_grid.windows(2) {
        let (ta, tb) = (w[0], w[1]);
        let steps = ((tb - ta) / h).ceil().max(1.0) as usize;
        let dt = (tb - ta) / steps as f64;
        for i in 0..steps {
            let t = ta + i as f64 * dt;
            field(t, &x, &mut k1)?;
            for j in 0..n {
                tmp[j] = x[j] + 0.5 * dt * k1[j];
            }
            field(t + 0.5 * dt, &tmp, &mut k2)?;
            for j in 0..n {
                tmp[j] = x[j] + 0.5 * dt * k2[j];
            }
            field(t + 0.5 * dt, &tmp, &mut k3)?;
            for j in 0..n {
                tmp[j] = x[j] + dt * k3[j];
            }
            field(t + dt, &tmp, &mut k4)?;
            for j in 0..n {
                x[j] += dt / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
            }
            finite_or(t + dt, &x)?;
        }
        states.push(x.clone());
    }
    Ok(Trajectory {
        times: t_grid.to_vec(),
        states,
    })
}

// Dormand–Prince 5(4) tableau.
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
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

/// Embedded Dormand–Prince 5(4) integration over `t_span`, reporting at
/// `t_eval` (which must lie inside the span).
pub fn adaptive_integrate<F>(
    field: F,
    x0: &[f64],
    t_span: (f64, f64),
    t_eval: &[f64],
    rtol: f64,
    atol: f64,
    max_steps: usize,
) -> Result<Trajectory, IntegrateError>
where
    F: Fn(f64, &[f64], &mut [f64]) -> Result<(), IntegrateError>,
{
    let (t0, t1) = t_span;
    check_grid(t_eval)?;
    if !(t0.is_finite() && t1.is_finite()) || t1 < t0 {
        return Err(IntegrateError::BadGrid(format!("bad span ({t0}, {t1})")));
    }
    if t_eval[0] < t0 || *t_eval.last().unwrap() > t1 {
        return Err(IntegrateError::BadGrid("t_eval outside t_span".into()));
    }
    if !(rtol > 0.0) || !(atol > 0.0) || max_steps == 0 {
        return Err(IntegrateError::BadConfig("tolerances must be > 0 and max_steps >= 1".into()));
    }
    finite_or(t0, x0)?;

    let n = x0.len();
    let mut x = x0.to_vec();
    let mut t = t0;
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut k5 = vec![0.0; n];
    let mut k6 = vec![0.0; n];
    let mut k7 = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    let mut x_new = vec![0.0; n];
    let mut states = Vec::with_capacity(t_eval.len());
    let mut next_out = 0;
    while next_out < t_eval.len() && t_eval[next_out] == t0 {
        states.push(x.clone());
        next_out += 1;
    }
    if next_out == t_eval.len() {
        return Ok(Trajectory {
            times: t_eval.to_vec(),
            states,
        });
    }

    field(t, &x, &mut k1)?;
    finite_or(t, &k1)?;
    let mut h = initial_step(&x, &k1, t_eval[t_eval.len() - 1] - t0, rtol, atol);
    let mut steps = 0usize;

    while next_out < t_eval.len() {
        if steps >= max_steps {
            return Err(IntegrateError::MaxSteps { t, max_steps });
        }
        let target = t_eval[next_out];
        let mut lands = false;
        if t + h >= target {
            h = target - t;
            lands = true;
        }
        if h <= f64::EPSILON * t.abs().max(1.0) {
            if lands {
                // Step already on target within rounding.
                states.push(x.clone());
                next_out += 1;
                continue;
            }
            return Err(IntegrateError::StepUnderflow { t });
        }
        let t_next = if lands { target } else { t + h };
        for j in 0..n {
            tmp[j] = x[j] + h * A21 * k1[j];
        }
        field(t + h / 5.0, &tmp, &mut k2)?;
        for j in 0..n {
            tmp[j] = x[j] + h * (A31 * k1[j] + A32 * k2[j]);
        }
        field(t + 3.0 * h / 10.0, &tmp, &mut k3)?;
        for j in 0..n {
            tmp[j] = x[j] + h * (A41 * k1[j] + A42 * k2[j] + A43 * k3[j]);
        }
        field(t + 4.0 * h / 5.0, &tmp, &mut k4)?;
        for j in 0..n {
            tmp[j] = x[j] + h * (A51 * k1[j] + A52 * k2[j] + A53 * k3[j] + A54 * k4[j]);
        }
        field(t + 8.0 * h / 9.0, &tmp, &mut k5)?;
        for j in 0..n {
            tmp[j] = x[j] + h * (A61 * k1[j] + A62 * k2[j] + A63 * k3[j] + A64 * k4[j] + A65 * k5[j]);
        }
        field(t + h, &tmp, &mut k6)?;
        for j in 0..n {
            x_new[j] = x[j] + h * (B1 * k1[j] + B3 * k3[j] + B4 * k4[j] + B5 * k5[j] + B6 * k6[j]);
        }
        let x_new_finite = x_new.iter().all(|v| v.is_finite());
        let mut err = f64::INFINITY;
        if x_new_finite && field(t_next, &x_new, &mut k7).is_ok() {
            let mut acc = 0.0;
            for j in 0..n {
                let e = h * (E1 * k1[j] + E3 * k3[j] + E4 * k4[j] + E5 * k5[j] + E6 * k6[j] + E7 * k7[j]);
                let sc = atol + rtol * x[j].abs().max(x_new[j].abs());
                acc += (e / sc) * (e / sc);
            }
            err = if n == 0 { 0.0 } else { (acc / n as f64).sqrt() };
        }
        steps += 1;
        if err <= 1.0 {
            t = t_next;
            std::mem::swap(&mut x, &mut x_new);
            std::mem::swap(&mut k1, &mut k7);
            if lands {
                states.push(x.clone());
                next_out += 1;
            }
            let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
            h *= fac;
        } else if err.is_finite() {
            h *= (0.9 * err.powf(-0.2)).clamp(0.1, 0.9);
        } else {
            h *= 0.25;
            if !x_new_finite && h <= f64::EPSILON * t.abs().max(1.0) {
                return Err(IntegrateError::NonFinite { t });
            }
        }
        if h < 1e-300 {
            return Err(IntegrateError::NonFinite { t });
        }
    }
    Ok(Trajectory {
        times: t_eval.to_vec(),
        states,
    })
}

fn initial_step(x: &[f64], dx: &[f64], span: f64, rtol: f64, atol: f64) -> f64 {
    let mut d0 = 0.0;
    let mut d1 = 0.0;
    for (xi, di) in x.iter().zip(dx) {
        let sc = atol + rtol * xi.abs();
        d0 += (xi / sc).powi(2);
        d1 += (di / sc).powi(2);
    }
    let n = x.len().max(1) as f64;
    let (d0, d1) = ((d0 / n).sqrt(), (d1 / n).sqrt());
    let h = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    h.min(span.abs().max(1e-12))
}

/// Root of a scalar function inside `bracket`, by safeguarded Newton steps
/// with a finite-difference slope, falling back to bisection.
pub fn solve_scalar_root<F>(residual: F, bracket: (f64, f64), tol: f64) -> Result<f64, IntegrateError>
where
    F: Fn(f64) -> f64,
{
    newton_bisect(
        |x| {
            let f = residual(x);
            let h = 1e-7 * x.abs().max(1.0);
            let slope = (residual(x + h) - residual(x - h)) / (2.0 * h);
            (f, slope)
        },
        bracket,
        tol,
    )
}

/// Safeguarded Newton–bisection for a residual that also returns its slope.
/// Never leaves the initial bracket.
pub fn newton_bisect<F>(eval: F, bracket: (f64, f64), tol: f64) -> Result<f64, IntegrateError>
where
    F: Fn(f64) -> (f64, f64),
{
    let (mut lo, mut hi) = if bracket.0 <= bracket.1 { bracket } else { (bracket.1, bracket.0) };
    let (flo, _) = eval(lo);
    let (fhi, _) = eval(hi);
    if !flo.is_finite() {
        return Err(IntegrateError::NonFiniteResidual { x: lo });
    }
    if !fhi.is_finite() {
        return Err(IntegrateError::NonFiniteResidual { x: hi });
    }
    if flo == 0.0 {
        return Ok(lo);
    }
    if fhi == 0.0 {
        return Ok(hi);
    }
    if flo * fhi > 0.0 {
        return Err(IntegrateError::NoSignChange { lo, hi, flo, fhi });
    }
    let lo_negative = flo < 0.0;
    let mut x = 0.5 * (lo + hi);
    for _ in 0..500 {
        let (f, slope) = eval(x);
        if !f.is_finite() {
            return Err(IntegrateError::NonFiniteResidual { x });
        }
        if f.abs() <= tol {
            return Ok(x);
        }
        if (f < 0.0) == lo_negative {
            lo = x;
        } else {
            hi = x;
        }
        if hi - lo <= tol {
            return Ok(0.5 * (lo + hi));
        }
        let newton = if slope != 0.0 && slope.is_finite() { x - f / slope } else { f64::NAN };
        x = if newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        if x <= lo || x >= hi {
            // Bracket collapsed to adjacent floats.
            return Ok(if eval(lo).0.abs() < eval(hi).0.abs() { lo } else { hi });
        }
    }
    Ok(x)
}
