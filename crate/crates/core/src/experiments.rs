//! Field sweeps, bath-size convergence scans and Gaussian-limit predictions.

use std::fmt::Write as _;

use serde::Serialize;

use crate::dynamics::{self, FieldPoint, TimeGrid};
use crate::error::{Error, Result};
use crate::fitting::{self, FitOptions, FitResult};
use crate::geometry::BathConfiguration;
use crate::hyperfine::{self, BroadeningStats, HyperfineVector, PhysicalConstants, GAUSS};
use crate::par;

/// Legend set of the bath-size scan.
pub const DEFAULT_SIZES: [usize; 6] = [1, 3, 5, 10, 30, 100];
/// Upper end of the default sweep, the top of the experimentally accessible range.
pub const DEFAULT_MAX_GAUSS: f64 = 305.0;
pub const DEFAULT_SWEEP_POINTS: usize = 20;
/// Field multiple of max|𝐀ⱼ|/γ_C treated as the strong-field limit.
pub const STRONG_FIELD_FACTOR: f64 = 50.0;

/// `count` log-spaced fields on [lo, hi] tesla, preceded by B = 0.
pub fn log_fields_with_zero(lo: f64, hi: f64, count: usize) -> Result<Vec<FieldPoint>> {
    if !(lo > 0.0 && hi > lo) || count < 2 {
        return Err(Error::InvalidInput(format!(
            "log field grid needs 0 < lo < hi and at least 2 points (lo={lo}, hi={hi}, count={count})"
        )));
    }
    let mut fields = vec![FieldPoint::new(0.0)?];
    let ratio = (hi / lo).ln();
    for i in 0..count {
        let b = lo * (ratio * i as f64 / (count - 1) as f64).exp();
        fields.push(FieldPoint::new(b)?);
    }
    Ok(fields)
}

/// B = 0 plus 20 log-spaced fields from 1 G to 305 G.
pub fn default_sweep_fields() -> Vec<FieldPoint> {
    log_fields_with_zero(GAUSS, DEFAULT_MAX_GAUSS * GAUSS, DEFAULT_SWEEP_POINTS)
        .expect("static field grid is valid")
}

/// B = 50·max|𝐀ⱼ|/γ_C.
pub fn strong_field(couplings: &[HyperfineVector], constants: &PhysicalConstants) -> Result<FieldPoint> {
    let max = couplings.iter().map(|a| a.magnitude).fold(0.0, f64::max);
    if max == 0.0 {
        return Err(Error::ZeroCouplings);
    }
    FieldPoint::new(STRONG_FIELD_FACTOR * max / constants.gamma_c)
}

/// How each row of a sweep chooses its time grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum GridPolicy {
    Fixed(TimeGrid),
    /// `points` samples over `span_multiplier` times the 1/e time of that
    /// row's envelope.
    Adaptive { span_multiplier: f64, points: usize },
}

impl Default for GridPolicy {
    fn default() -> Self {
        GridPolicy::Adaptive {
            span_multiplier: 4.0,
            points: 400,
        }
    }
}

const PROBE_POINTS: usize = 4096;

/// First time the envelope drops below 1/e, found on a dense probe grid that
/// reaches four times the slower of the two Gaussian limits.
pub fn decay_time_estimate(
    couplings: &[HyperfineVector],
    field: FieldPoint,
    constants: &PhysicalConstants,
) -> Result<f64> {
    let stats = hyperfine::broadening_stats(couplings)?;
    let slow = stats.t2_strong.unwrap_or(10.0 * stats.t2_weak).max(stats.t2_weak);
    let probe = TimeGrid::uniform(4.0 * slow, PROBE_POINTS)?;
    let env = dynamics::envelope(couplings, field, &probe, constants)?;
    let level = (-1.0f64).exp();
    let t = probe.times();
    Ok(match env.iter().position(|e| *e < level) {
        Some(0) | None => probe.span(),
        Some(i) => t[i - 1] + (env[i - 1] - level) / (env[i - 1] - env[i]) * (t[i] - t[i - 1]),
    })
}

fn grid_for(
    policy: &GridPolicy,
    couplings: &[HyperfineVector],
    field: FieldPoint,
    constants: &PhysicalConstants,
) -> Result<TimeGrid> {
    match policy {
        GridPolicy::Fixed(grid) => Ok(grid.clone()),
        GridPolicy::Adaptive {
            span_multiplier,
            points,
        } => {
            let t_e = decay_time_estimate(couplings, field, constants)?;
            TimeGrid::uniform(span_multiplier * t_e, *points)
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub field: FieldPoint,
    pub t2star: f64,
    pub n: f64,
    pub rms_residual: f64,
    pub converged: bool,
    #[serde(skip)]
    pub grid: TimeGrid,
    #[serde(skip)]
    pub envelope: Vec<f64>,
    #[serde(skip)]
    pub fit: FitResult,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    pub seed: u64,
    pub n_spins: usize,
    pub constants: PhysicalConstants,
    pub prediction: BroadeningStats,
}

impl SweepTable {
    pub fn first(&self) -> &SweepRow {
        &self.rows[0]
    }

    pub fn last(&self) -> &SweepRow {
        &self.rows[self.rows.len() - 1]
    }

    /// Row with the smallest fitted exponent.
    pub fn min_n(&self) -> &SweepRow {
        self.rows
            .iter()
            .min_by(|a, b| a.n.total_cmp(&b.n))
            .expect("sweeps hold at least one row")
    }

    /// CSV with columns `b_tesla,b_gauss,t2star_s,n,rms_residual,converged`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("b_tesla,b_gauss,t2star_s,n,rms_residual,converged\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{}",
                r.field.tesla,
                r.field.gauss(),
                r.t2star,
                r.n,
                r.rms_residual,
                r.converged
            );
        }
        out
    }
}

fn sweep_row(
    couplings: &[HyperfineVector],
    field: FieldPoint,
    policy: &GridPolicy,
    options: &FitOptions,
    constants: &PhysicalConstants,
) -> Result<SweepRow> {
    let grid = grid_for(policy, couplings, field, constants)?;
    let envelope = dynamics::envelope(couplings, field, &grid, constants)?;
    let fit = fitting::fit(grid.times(), &envelope, options)?;
    Ok(SweepRow {
        field,
        t2star: fit.params.t2star,
        n: fit.params.n,
        rms_residual: fit.rms_residual,
        converged: fit.converged,
        grid,
        envelope,
        fit,
    })
}

/// Envelope and stretched-exponential fit at each field, rows in ascending B.
/// Unconverged fits are kept and flagged.
pub fn field_sweep(
    config: &BathConfiguration,
    fields: &[FieldPoint],
    grid: &GridPolicy,
    fit_options: &FitOptions,
    constants: &PhysicalConstants,
) -> Result<SweepTable> {
    if fields.is_empty() {
        return Err(Error::InvalidInput("field sweep needs at least one field".into()));
    }
    if fields.iter().any(|f| !(f.tesla >= 0.0 && f.tesla.is_finite())) {
        return Err(Error::InvalidInput("sweep fields must be finite and non-negative".into()));
    }
    let couplings = hyperfine::couplings_for(config, constants)?;
    let prediction = hyperfine::broadening_stats(&couplings)?;
    let mut fields = fields.to_vec();
    fields.sort_by(|a, b| a.tesla.total_cmp(&b.tesla));
    let rows = par::map_slice(&fields, |&f| {
        sweep_row(&couplings, f, grid, fit_options, constants)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(SweepTable {
        rows,
        seed: config.seed,
        n_spins: config.len(),
        constants: *constants,
        prediction,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceTable {
    pub sizes: Vec<usize>,
    pub grid: TimeGrid,
    pub envelopes: Vec<Vec<f64>>,
    pub field: FieldPoint,
}

impl ConvergenceTable {
    /// Wide CSV: `t_s,env_N1,env_N3,...`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t_s");
        for n in &self.sizes {
            let _ = write!(out, ",env_N{n}");
        }
        out.push('\n');
        for (i, t) in self.grid.times().iter().enumerate() {
            let _ = write!(out, "{t:.16e}");
            for env in &self.envelopes {
                let _ = write!(out, ",{:.16e}", env[i]);
            }
            out.push('\n');
        }
        out
    }

    pub fn envelope_for(&self, n_spins: usize) -> Option<&[f64]> {
        self.sizes
            .iter()
            .position(|&n| n == n_spins)
            .map(|i| self.envelopes[i].as_slice())
    }
}

/// Envelopes keeping only the nearest `n` nuclei, for each requested `n`.
pub fn bath_size_scan(
    config: &BathConfiguration,
    sizes: &[usize],
    field: FieldPoint,
    grid: &TimeGrid,
    constants: &PhysicalConstants,
) -> Result<ConvergenceTable> {
    if sizes.is_empty() {
        return Err(Error::InvalidInput("bath-size scan needs at least one size".into()));
    }
    if sizes[0] == 0 || !sizes.windows(2).all(|w| w[1] > w[0]) {
        return Err(Error::InvalidInput(
            "bath sizes must be positive and strictly increasing".into(),
        ));
    }
    let largest = *sizes.last().expect("nonempty");
    if largest > config.len() {
        return Err(Error::SizeExceedsConfiguration {
            requested: largest,
            max: config.len(),
        });
    }
    let couplings = hyperfine::couplings_for(config, constants)?;
    let envelopes = sizes
        .iter()
        .map(|&n| dynamics::envelope(&couplings[..n], field, grid, constants))
        .collect::<Result<Vec<_>>>()?;
    Ok(ConvergenceTable {
        sizes: sizes.to_vec(),
        grid: grid.clone(),
        envelopes,
        field,
    })
}

/// Gaussian-limit widths and dephasing times of a configuration.
pub fn gaussian_prediction(
    config: &BathConfiguration,
    constants: &PhysicalConstants,
) -> Result<BroadeningStats> {
    hyperfine::broadening_stats(&hyperfine::couplings_for(config, constants)?)
}

/// max |a − b| over samples with t ≤ `t_max`.
pub fn sup_gap(grid: &TimeGrid, a: &[f64], b: &[f64], t_max: f64) -> f64 {
    grid.times()
        .iter()
        .zip(a.iter().zip(b))
        .take_while(|(t, _)| **t <= t_max)
        .map(|(_, (x, y))| (x - y).abs())
        .fold(0.0, f64::max)
}
