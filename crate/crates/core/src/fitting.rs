//! Stretched-exponential fits of Ramsey signals,
//!
//! ```text
//! S(t) = C exp[−(t/T₂*)ⁿ] · [⅓ + ⅔ cos(A_N t + φ)]
//! ```
//!
//! by damped Gauss–Newton (Levenberg–Marquardt) with projection onto
//! parameter bounds. The optimizer works on rescaled parameters (times in
//! units of the window length, values in units of the largest sample) so
//! the normal equations stay well conditioned.

use std::f64::consts::{E, PI};

use faer::linalg::solvers::Solve;
use faer::{Mat, Side};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const N_PARAMS: usize = 5;
const IDX_C: usize = 0;
const IDX_T2: usize = 1;
const IDX_N: usize = 2;
const IDX_A: usize = 3;
const IDX_PHI: usize = 4;

pub const MIN_POINTS: usize = 8;
pub const DEFAULT_N_BOUNDS: (f64, f64) = (0.25, 6.0);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitModelParams {
    pub c: f64,
    /// Dephasing time (s).
    pub t2star: f64,
    /// Stretch exponent; 2 is Gaussian.
    pub n: f64,
    /// ¹⁴N beating frequency (rad/s).
    pub a14n: f64,
    /// Beating phase (rad).
    pub phi: f64,
}

impl FitModelParams {
    /// Parameters in the order (C, T₂*, n, A_N, φ) used by [`model_gradient`].
    pub fn to_array(self) -> [f64; N_PARAMS] {
        [self.c, self.t2star, self.n, self.a14n, self.phi]
    }

    pub fn from_array(p: [f64; N_PARAMS]) -> Self {
        Self {
            c: p[IDX_C],
            t2star: p[IDX_T2],
            n: p[IDX_N],
            a14n: p[IDX_A],
            phi: p[IDX_PHI],
        }
    }

    /// Same model in units where times are divided by `time` and values by `value`.
    fn rescaled(self, time: f64, value: f64) -> Self {
        Self {
            c: self.c / value,
            t2star: self.t2star / time,
            n: self.n,
            a14n: self.a14n * time,
            phi: self.phi,
        }
    }
}

fn bracket(p: &FitModelParams, t: f64) -> f64 {
    1.0 / 3.0 + 2.0 / 3.0 * (p.a14n * t + p.phi).cos()
}

fn stretch(p: &FitModelParams, t: f64) -> f64 {
    if t == 0.0 {
        0.0
    } else {
        (t / p.t2star).powf(p.n)
    }
}

pub fn model_eval(params: &FitModelParams, t: f64, envelope_only: bool) -> f64 {
    let decay = params.c * (-stretch(params, t)).exp();
    if envelope_only {
        decay
    } else {
        decay * bracket(params, t)
    }
}

/// Analytic partials with respect to (C, T₂*, n, A_N, φ). The A_N and φ
/// entries vanish in envelope-only mode.
pub fn model_gradient(params: &FitModelParams, t: f64, envelope_only: bool) -> [f64; N_PARAMS] {
    let u = stretch(params, t);
    let decay = (-u).exp();
    let b = if envelope_only { 1.0 } else { bracket(params, t) };
    let d_c = decay * b;
    let d_t2 = params.c * decay * u * params.n / params.t2star * b;
    let d_n = if t == 0.0 {
        0.0
    } else {
        -params.c * decay * u * (t / params.t2star).ln() * b
    };
    let (d_a, d_phi) = if envelope_only {
        (0.0, 0.0)
    } else {
        let s = -2.0 / 3.0 * (params.a14n * t + params.phi).sin() * params.c * decay;
        (s * t, s)
    };
    [d_c, d_t2, d_n, d_a, d_phi]
}

/// Closed intervals per parameter; `None` leaves that side unbounded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamBounds {
    pub lower: [Option<f64>; N_PARAMS],
    pub upper: [Option<f64>; N_PARAMS],
}

impl ParamBounds {
    /// n ∈ [0.25, 6], T₂* ∈ [spacing, 100·span], C > 0, A_N ≥ 0, φ free.
    pub fn defaults(spacing: f64, span: f64) -> Self {
        let mut lower = [None; N_PARAMS];
        let mut upper = [None; N_PARAMS];
        lower[IDX_C] = Some(f64::MIN_POSITIVE);
        lower[IDX_T2] = Some(spacing);
        upper[IDX_T2] = Some(100.0 * span);
        lower[IDX_N] = Some(DEFAULT_N_BOUNDS.0);
        upper[IDX_N] = Some(DEFAULT_N_BOUNDS.1);
        lower[IDX_A] = Some(0.0);
        Self { lower, upper }
    }

    fn project(&self, p: &mut [f64; N_PARAMS]) {
        for ((x, lo), hi) in p.iter_mut().zip(self.lower).zip(self.upper) {
            if let Some(lo) = lo {
                *x = x.max(lo);
            }
            if let Some(hi) = hi {
                *x = x.min(hi);
            }
        }
    }

    fn rescaled(&self, time: f64, value: f64) -> Self {
        let factor = [1.0 / value, 1.0 / time, 1.0, time, 1.0];
        let map = |b: [Option<f64>; N_PARAMS]| {
            let mut out = b;
            for k in 0..N_PARAMS {
                out[k] = b[k].map(|v| v * factor[k]);
            }
            out
        };
        Self {
            lower: map(self.lower),
            upper: map(self.upper),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub max_iterations: usize,
    pub relative_tolerance: f64,
    /// Defaults to [`ParamBounds::defaults`] for the fitted window.
    pub parameter_bounds: Option<ParamBounds>,
    pub initial_guess: Option<FitModelParams>,
    /// Inclusive time window (s).
    pub fit_window: Option<(f64, f64)>,
    pub envelope_only: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            relative_tolerance: 1e-10,
            parameter_bounds: None,
            initial_guess: None,
            fit_window: None,
            envelope_only: true,
        }
    }
}

impl FitOptions {
    pub fn full_signal() -> Self {
        Self {
            envelope_only: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.relative_tolerance.is_nan() || self.relative_tolerance <= 0.0 {
            return Err(Error::InvalidInput("relative_tolerance must be positive".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidInput("max_iterations must be positive".into()));
        }
        if let Some((lo, hi)) = self.fit_window {
            if !(lo >= 0.0 && hi > lo) {
                return Err(Error::InvalidInput(format!("invalid fit window [{lo}, {hi}]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitResult {
    pub params: FitModelParams,
    pub rms_residual: f64,
    pub iterations: usize,
    pub converged: bool,
    /// cond(J) at the solution, over the free parameters in rescaled units.
    pub jacobian_condition_estimate: f64,
    pub envelope_only: bool,
    pub n_points: usize,
    pub initial_guess: FitModelParams,
    /// Sum of squared residuals after each accepted step (rescaled units).
    pub cost_history: Vec<f64>,
}

/// Upper envelope of |values|: the running maximum taken from the end.
fn decay_envelope_estimate(values: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; values.len()];
    let mut running = 0.0f64;
    for i in (0..values.len()).rev() {
        running = running.max(values[i].abs());
        out[i] = running;
    }
    out
}

fn first_crossing(times: &[f64], curve: &[f64], level: f64) -> Option<f64> {
    let i = curve.iter().position(|v| *v < level)?;
    if i == 0 {
        return Some(times[0]);
    }
    let (t0, t1) = (times[i - 1], times[i]);
    let (v0, v1) = (curve[i - 1], curve[i]);
    Some(t0 + (v0 - level) / (v0 - v1) * (t1 - t0))
}

/// Dominant nonzero angular frequency of `samples` taken at `times`, from a
/// zero-padded FFT of the linearly resampled series.
fn dominant_frequency(times: &[f64], samples: &[f64]) -> Option<f64> {
    let m = samples.len();
    if m < 4 {
        return None;
    }
    let span = times[m - 1] - times[0];
    let dt = span / (m - 1) as f64;
    let mean = samples.iter().sum::<f64>() / m as f64;
    let mut j = 0;
    let resampled: Vec<f64> = (0..m)
        .map(|i| {
            let t = times[0] + i as f64 * dt;
            while j + 1 < m - 1 && times[j + 1] < t {
                j += 1;
            }
            let (ta, tb) = (times[j], times[j + 1]);
            let w = ((t - ta) / (tb - ta)).clamp(0.0, 1.0);
            samples[j] * (1.0 - w) + samples[j + 1] * w - mean
        })
        .collect();

    let len = (8 * m).next_power_of_two();
    let mut buffer: Vec<Complex<f64>> = resampled
        .iter()
        .map(|&x| Complex::new(x, 0.0))
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(len)
        .collect();
    FftPlanner::new().plan_fft_forward(len).process(&mut buffer);
    let power: Vec<f64> = buffer[..len / 2].iter().map(|z| z.norm_sqr()).collect();
    let k = (1..power.len() - 1).max_by(|&a, &b| power[a].total_cmp(&power[b]))?;
    if power[k] == 0.0 {
        return None;
    }
    // Parabolic refinement of the peak position.
    let (l, c, r) = (power[k - 1], power[k], power[k + 1]);
    let denom = l - 2.0 * c + r;
    let shift = if denom != 0.0 { 0.5 * (l - r) / denom } else { 0.0 };
    let bin = k as f64 + shift.clamp(-0.5, 0.5);
    Some(2.0 * PI * bin / (len as f64 * dt))
}

/// Linear least-squares projection of the signal onto
/// {E, E cos(A t), E sin(A t)} with a Gaussian E of width `t2star`; returns
/// (C, φ) of the oscillating part, or `None` if the system is degenerate.
fn amplitude_and_phase(times: &[f64], values: &[f64], t2star: f64, a14n: f64) -> Option<(f64, f64)> {
    let mut normal = [[0.0f64; 3]; 3];
    let mut rhs = [0.0f64; 3];
    for (&t, &v) in times.iter().zip(values) {
        let e = (-(t / t2star).powi(2)).exp();
        let (s, c) = (a14n * t).sin_cos();
        let basis = [e, e * c, e * s];
        for i in 0..3 {
            rhs[i] += basis[i] * v;
            for j in 0..3 {
                normal[i][j] += basis[i] * basis[j];
            }
        }
    }
    let gram = Mat::from_fn(3, 3, |i, j| normal[i][j]);
    let llt = gram.llt(Side::Lower).ok()?;
    let x = llt.solve(Mat::from_fn(3, 1, |i, _| rhs[i]));
    let (cos_part, sin_part) = (x[(1, 0)], x[(2, 0)]);
    let amplitude = 1.5 * cos_part.hypot(sin_part);
    (amplitude > 0.0 && amplitude.is_finite()).then(|| (amplitude, (-sin_part).atan2(cos_part)))
}

/// Heuristic starting point: T₂*₀ from the 1/e crossing of the decay
/// envelope and n₀ = 2. Envelope fits take C₀ from the first sample. Full
/// fits take A_N from the spectral peak of the envelope-normalized signal and
/// C₀, φ₀ from a linear projection onto the ¹⁴N beat.
pub fn initial_guess(times: &[f64], values: &[f64], envelope_only: bool) -> FitModelParams {
    let first = values[0];
    let peak = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let c = if first > 0.0 { first } else { peak };
    let envelope = if envelope_only {
        values.to_vec()
    } else {
        decay_envelope_estimate(values)
    };
    let span = times[times.len() - 1];
    let t2star = first_crossing(times, &envelope, c / E)
        .filter(|t| *t > 0.0)
        .unwrap_or(span);

    let a14n = if envelope_only {
        0.0
    } else {
        let cutoff = c / (E * E);
        let usable = envelope.iter().take_while(|e| **e >= cutoff).count().max(MIN_POINTS);
        let usable = usable.min(values.len());
        let ratio: Vec<f64> = values[..usable]
            .iter()
            .zip(&envelope[..usable])
            .map(|(v, e)| if *e > 0.0 { v / e } else { 0.0 })
            .collect();
        dominant_frequency(&times[..usable], &ratio).unwrap_or(0.0)
    };
    let (c, phi) = if envelope_only || a14n == 0.0 {
        (c, 0.0)
    } else {
        amplitude_and_phase(times, values, t2star, a14n).unwrap_or((c, 0.0))
    };
    FitModelParams {
        c,
        t2star,
        n: 2.0,
        a14n,
        phi,
    }
}

struct Problem<'a> {
    times: &'a [f64],
    values: &'a [f64],
    envelope_only: bool,
    free: Vec<usize>,
}

impl Problem<'_> {
    fn residuals(&self, p: &[f64; N_PARAMS]) -> Vec<f64> {
        let params = FitModelParams::from_array(*p);
        self.times
            .iter()
            .zip(self.values)
            .map(|(&t, &v)| model_eval(&params, t, self.envelope_only) - v)
            .collect()
    }

    fn jacobian(&self, p: &[f64; N_PARAMS]) -> Mat<f64> {
        let params = FitModelParams::from_array(*p);
        let mut j = Mat::<f64>::zeros(self.times.len(), self.free.len());
        for (i, &t) in self.times.iter().enumerate() {
            let g = model_gradient(&params, t, self.envelope_only);
            for (col, &k) in self.free.iter().enumerate() {
                j[(i, col)] = g[k];
            }
        }
        j
    }
}

fn cost(r: &[f64]) -> f64 {
    r.iter().map(|x| x * x).sum()
}

fn condition_number(jtj: &Mat<f64>) -> f64 {
    match jtj.self_adjoint_eigen(Side::Lower) {
        Ok(evd) => {
            let s = evd.S();
            let k = jtj.nrows();
            let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
            for i in 0..k {
                lo = lo.min(s[i].abs());
                hi = hi.max(s[i].abs());
            }
            if lo > 0.0 {
                (hi / lo).sqrt()
            } else {
                f64::INFINITY
            }
        }
        Err(_) => f64::NAN,
    }
}

fn solve_damped(jtj: &Mat<f64>, gradient: &[f64], lambda: f64) -> Option<Vec<f64>> {
    let k = gradient.len();
    let mut a = jtj.clone();
    for i in 0..k {
        let d = jtj[(i, i)].max(1e-12);
        a[(i, i)] += lambda * d;
    }
    let rhs = Mat::<f64>::from_fn(k, 1, |i, _| -gradient[i]);
    let chol = a.llt(Side::Lower).ok()?;
    let x = chol.solve(&rhs);
    let out: Vec<f64> = (0..k).map(|i| x[(i, 0)]).collect();
    out.iter().all(|v| v.is_finite()).then_some(out)
}

const LAMBDA_INITIAL: f64 = 1e-3;
const LAMBDA_MIN: f64 = 1e-12;
const LAMBDA_MAX: f64 = 1e32;

pub fn fit(times: &[f64], values: &[f64], options: &FitOptions) -> Result<FitResult> {
    options.validate()?;
    if times.len() != values.len() {
        return Err(Error::LengthMismatch {
            expected: times.len(),
            found: values.len(),
        });
    }
    if times.iter().chain(values).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite sample".into()));
    }
    let (times, values): (Vec<f64>, Vec<f64>) = times
        .iter()
        .zip(values)
        .filter(|(t, _)| match options.fit_window {
            Some((lo, hi)) => **t >= lo && **t <= hi,
            None => true,
        })
        .map(|(t, v)| (*t, *v))
        .unzip();
    if times.len() < MIN_POINTS {
        return Err(Error::InvalidInput(format!(
            "fit needs at least {MIN_POINTS} points, got {}",
            times.len()
        )));
    }
    if times.iter().any(|t| *t < 0.0) || !times.windows(2).all(|w| w[1] > w[0]) {
        return Err(Error::InvalidInput("times must be non-negative and increasing".into()));
    }
    if values.iter().all(|v| *v == values[0]) {
        return Err(Error::DegenerateData("all values are equal".into()));
    }

    let span = times[times.len() - 1];
    let spacing = times
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::INFINITY, f64::min);
    let value_scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let guess = options
        .initial_guess
        .unwrap_or_else(|| initial_guess(&times, &values, options.envelope_only));
    let bounds = options
        .parameter_bounds
        .unwrap_or_else(|| ParamBounds::defaults(spacing, span));

    let scaled_times: Vec<f64> = times.iter().map(|t| t / span).collect();
    let scaled_values: Vec<f64> = values.iter().map(|v| v / value_scale).collect();
    let scaled_bounds = bounds.rescaled(span, value_scale);
    let problem = Problem {
        times: &scaled_times,
        values: &scaled_values,
        envelope_only: options.envelope_only,
        free: if options.envelope_only {
            vec![IDX_C, IDX_T2, IDX_N]
        } else {
            (0..N_PARAMS).collect()
        },
    };
    // Scales for the relative step test; A_N and φ are O(1) after rescaling.
    let step_floor = [0.0, 0.0, 0.0, 1.0, 1.0];

    let mut p = guess.rescaled(span, value_scale).to_array();
    if options.envelope_only {
        p[IDX_A] = 0.0;
        p[IDX_PHI] = 0.0;
    }
    scaled_bounds.project(&mut p);
    let mut r = problem.residuals(&p);
    let mut current = cost(&r);
    let mut history = vec![current];
    let mut lambda = LAMBDA_INITIAL;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < options.max_iterations && !converged {
        iterations += 1;
        let j = problem.jacobian(&p);
        let jtj = j.transpose() * &j;
        let k = problem.free.len();
        let gradient: Vec<f64> = (0..k)
            .map(|c| (0..r.len()).map(|i| j[(i, c)] * r[i]).sum())
            .collect();

        loop {
            let Some(delta) = solve_damped(&jtj, &gradient, lambda) else {
                lambda *= 10.0;
                if lambda > LAMBDA_MAX {
                    break;
                }
                continue;
            };
            let mut trial = p;
            for (col, &idx) in problem.free.iter().enumerate() {
                trial[idx] += delta[col];
            }
            scaled_bounds.project(&mut trial);
            let relative_step = problem
                .free
                .iter()
                .map(|&idx| (trial[idx] - p[idx]).abs() / p[idx].abs().max(step_floor[idx]).max(1e-300))
                .fold(0.0, f64::max);
            let trial_r = problem.residuals(&trial);
            let trial_cost = cost(&trial_r);
            if trial_cost <= current && trial_cost.is_finite() {
                p = trial;
                r = trial_r;
                current = trial_cost;
                history.push(current);
                lambda = (lambda / 3.0).max(LAMBDA_MIN);
                converged = relative_step < options.relative_tolerance;
                break;
            }
            if relative_step < options.relative_tolerance {
                // No descent left at this resolution: p is a numerical minimum.
                converged = true;
                break;
            }
            lambda *= 4.0;
            if lambda > LAMBDA_MAX {
                break;
            }
        }
        if lambda > LAMBDA_MAX {
            break;
        }
    }

    let j = problem.jacobian(&p);
    let jtj = j.transpose() * &j;
    let condition = condition_number(&jtj);

    let mut params = FitModelParams::from_array(p).rescaled(1.0 / span, 1.0 / value_scale);
    if options.envelope_only {
        params.a14n = guess.a14n;
        params.phi = guess.phi;
    } else {
        params.phi = wrap_phase(params.phi);
    }
    let rms = (current / values.len() as f64).sqrt() * value_scale;
    Ok(FitResult {
        params,
        rms_residual: rms,
        iterations,
        converged,
        jacobian_condition_estimate: condition,
        envelope_only: options.envelope_only,
        n_points: values.len(),
        initial_guess: guess,
        cost_history: history,
    })
}

/// Maps an angle into (−π, π].
fn wrap_phase(phi: f64) -> f64 {
    let w = phi.rem_euclid(2.0 * PI);
    if w > PI {
        w - 2.0 * PI
    } else {
        w
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    fn synthetic(p: &FitModelParams, span: f64, points: usize, envelope_only: bool) -> (Vec<f64>, Vec<f64>) {
        let times: Vec<f64> = (0..points).map(|i| span * i as f64 / (points - 1) as f64).collect();
        let values = times.iter().map(|&t| model_eval(p, t, envelope_only)).collect();
        (times, values)
    }

    #[test]
    fn model_special_points() {
        let p = FitModelParams {
            c: 2.0,
            t2star: 3e-6,
            n: 2.0,
            a14n: 1e7,
            phi: 0.4,
        };
        assert_eq!(model_eval(&p, 0.0, true), 2.0);
        assert!((model_eval(&p, 0.0, false) - 2.0 * (1.0 / 3.0 + 2.0 / 3.0 * 0.4f64.cos())).abs() < 1e-15);
        assert!((model_eval(&p, 3e-6, true) - 2.0 / E).abs() < 1e-15);
        let half = 1.5e-6;
        let n1 = FitModelParams { n: 1.0, ..p };
        assert!((model_eval(&n1, half, true) / 2.0 - (-0.5f64).exp()).abs() < 1e-15);
        assert!((model_eval(&p, half, true) / 2.0 - (-0.25f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn gradient_special_cases() {
        let p = FitModelParams {
            c: 1.7,
            t2star: 2e-6,
            n: 1.6,
            a14n: 5e6,
            phi: 0.2,
        };
        let t = 1.3e-6;
        let g = model_gradient(&p, t, false);
        assert!(rel(g[0], model_eval(&p, t, false) / p.c) < 1e-14);
        assert_eq!(model_gradient(&p, p.t2star, true)[2], 0.0);
        let g0 = model_gradient(&p, 0.0, false);
        assert_eq!(g0[1], 0.0);
        assert_eq!(g0[2], 0.0);
        let env = model_gradient(&p, t, true);
        assert_eq!((env[3], env[4]), (0.0, 0.0));
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..300 {
            let p = FitModelParams {
                c: rng.random_range(0.2..3.0),
                t2star: rng.random_range(0.5e-6..20e-6),
                n: rng.random_range(0.5..4.0),
                a14n: rng.random_range(1e5..1e7),
                phi: rng.random_range(-PI..PI),
            };
            let t = rng.random_range(0.05..2.0) * p.t2star;
            let g = model_gradient(&p, t, false);
            let base = p.to_array();
            for k in 0..N_PARAMS {
                let h = 1e-6 * if k == IDX_PHI { base[k].abs().max(1.0) } else { base[k].abs() };
                let mut up = base;
                let mut dn = base;
                up[k] += h;
                dn[k] -= h;
                let fd = (model_eval(&FitModelParams::from_array(up), t, false)
                    - model_eval(&FitModelParams::from_array(dn), t, false))
                    / (2.0 * h);
                // Cancellation noise of the difference quotient is ~ε·C/h.
                let noise = 1e3 * f64::EPSILON * p.c / h;
                let scale = fd.abs().max(g[k].abs());
                assert!((fd - g[k]).abs() <= 1e-5 * scale + noise, "k={k} fd={fd} g={}", g[k]);
            }
        }
    }

    #[test]
    fn recovers_gaussian_envelope() {
        let truth = FitModelParams {
            c: 1.0,
            t2star: 2e-6,
            n: 2.0,
            a14n: 0.0,
            phi: 0.0,
        };
        let (t, v) = synthetic(&truth, 8e-6, 200, true);
        let r = fit(&t, &v, &FitOptions::default()).unwrap();
        assert!(r.converged);
        assert!(rel(r.params.c, 1.0) < 1e-3);
        assert!(rel(r.params.t2star, 2e-6) < 1e-3);
        assert!(rel(r.params.n, 2.0) < 1e-3);
        assert!(r.rms_residual < 1e-9);
    }

    #[test]
    fn recovers_full_signal() {
        let truth = FitModelParams {
            c: 0.8,
            t2star: 3e-6,
            n: 1.5,
            a14n: 2.0 * PI * 2.16e6,
            phi: 0.0,
        };
        let (t, v) = synthetic(&truth, 9e-6, 600, false);
        let r = fit(&t, &v, &FitOptions::full_signal()).unwrap();
        assert!(r.converged, "{r:?}");
        assert!(rel(r.params.a14n, truth.a14n) < 5e-3);
        assert!(rel(r.params.t2star, truth.t2star) < 1e-3);
        assert!(r.params.phi.abs() < 1e-3);
    }

    #[test]
    fn noisy_envelope_median_recovery() {
        let truth = FitModelParams {
            c: 1.0,
            t2star: 2e-6,
            n: 2.0,
            a14n: 0.0,
            phi: 0.0,
        };
        let (t, clean) = synthetic(&truth, 8e-6, 200, true);
        let noise = Normal::new(0.0, 0.01).unwrap();
        let mut t2_err = Vec::new();
        let mut n_err = Vec::new();
        for seed in 0..100 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let v: Vec<f64> = clean.iter().map(|x| x + noise.sample(&mut rng)).collect();
            let r = fit(&t, &v, &FitOptions::default()).unwrap();
            t2_err.push(rel(r.params.t2star, truth.t2star));
            n_err.push((r.params.n - truth.n).abs());
        }
        let median = |v: &mut Vec<f64>| {
            v.sort_by(f64::total_cmp);
            v[v.len() / 2]
        };
        assert!(median(&mut t2_err) < 0.02);
        assert!(median(&mut n_err) < 0.1);
    }

    #[test]
    fn cost_history_is_monotone() {
        let truth = FitModelParams {
            c: 1.3,
            t2star: 5e-6,
            n: 1.2,
            a14n: 4e6,
            phi: 0.7,
        };
        let (t, v) = synthetic(&truth, 15e-6, 400, false);
        let r = fit(&t, &v, &FitOptions::full_signal()).unwrap();
        assert!(r.cost_history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn scale_covariance() {
        let truth = FitModelParams {
            c: 1.0,
            t2star: 4e-6,
            n: 1.7,
            a14n: 0.0,
            phi: 0.0,
        };
        let (t, v) = synthetic(&truth, 12e-6, 300, true);
        let a = fit(&t, &v, &FitOptions::default()).unwrap();
        let scaled: Vec<f64> = v.iter().map(|x| 7.5 * x).collect();
        let b = fit(&t, &scaled, &FitOptions::default()).unwrap();
        assert!(rel(b.params.c, 7.5 * a.params.c) < 1e-9);
        assert!(rel(b.params.t2star, a.params.t2star) < 1e-9);
        assert!(rel(b.params.n, a.params.n) < 1e-9);
    }

    #[test]
    fn window_and_degenerate_inputs() {
        let (t, v) = synthetic(
            &FitModelParams {
                c: 1.0,
                t2star: 1e-6,
                n: 2.0,
                a14n: 0.0,
                phi: 0.0,
            },
            4e-6,
            100,
            true,
        );
        let windowed = FitOptions {
            fit_window: Some((0.0, 2e-6)),
            ..FitOptions::default()
        };
        let r = fit(&t, &v, &windowed).unwrap();
        assert_eq!(r.n_points, 50);
        assert!(matches!(
            fit(&t, &vec![0.5; t.len()], &FitOptions::default()),
            Err(Error::DegenerateData(_))
        ));
        assert!(fit(&t[..5], &v[..5], &FitOptions::default()).is_err());
        assert!(fit(&t, &v[..50], &FitOptions::default()).is_err());
    }

    #[test]
    fn iteration_cap_reports_unconverged() {
        let (t, v) = synthetic(
            &FitModelParams {
                c: 1.0,
                t2star: 1e-6,
                n: 1.3,
                a14n: 0.0,
                phi: 0.0,
            },
            4e-6,
            100,
            true,
        );
        let opts = FitOptions {
            max_iterations: 1,
            ..FitOptions::default()
        };
        let r = fit(&t, &v, &opts).unwrap();
        assert!(!r.converged);
        assert_eq!(r.iterations, 1);
    }

    #[test]
    fn guess_heuristics() {
        let truth = FitModelParams {
            c: 1.0,
            t2star: 2e-6,
            n: 2.0,
            a14n: 2.0 * PI * 1e6,
            phi: 0.0,
        };
        let (t, v) = synthetic(&truth, 8e-6, 400, false);
        let g = initial_guess(&t, &v, false);
        assert!(rel(g.c, 1.0) < 0.05, "{}", g.c);
        assert!(g.phi.abs() < 0.1, "{}", g.phi);
        assert_eq!(g.n, 2.0);
        assert!(rel(g.a14n, truth.a14n) < 0.1, "{}", g.a14n);
        // A beat starting in antiphase must not be read as φ = 0.
        let flipped = FitModelParams { phi: 3.0, ..truth };
        let (t, v) = synthetic(&flipped, 8e-6, 400, false);
        let g = initial_guess(&t, &v, false);
        assert!(wrap_phase(g.phi - 3.0).abs() < 0.2, "{}", g.phi);
        let (t, v) = synthetic(&truth, 8e-6, 400, true);
        let g = initial_guess(&t, &v, true);
        assert!(rel(g.t2star, 2e-6) < 0.01);
    }

    #[test]
    fn phase_wrapping() {
        assert!((wrap_phase(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
        assert!((wrap_phase(-0.3) + 0.3).abs() < 1e-12);
        assert_eq!(wrap_phase(PI), PI);
    }
}
