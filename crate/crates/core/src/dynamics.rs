//! Exact free-induction decay of the central spin for a non-interacting
//! spin-½ bath.
//!
//! Conditioned on the central spin state, nucleus j precesses about
//! ω₀ = (0, 0, γ_C B) or ω₁ = 𝐀ⱼ − (0, 0, γ_C B). Its contribution to the
//! coherence is the normalized trace
//!
//! ```text
//! Lⱼ(t) = ½ Tr[e^{i ω₀·σ t/2} e^{i ω₁·σ t/2}]
//!       = cos θ₀ cos θ₁ − (n̂₀·n̂₁) sin θ₀ sin θ₁,   θ = |ω| t/2
//! ```
//!
//! and the envelope is the product over nuclei.

use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::hyperfine::{HyperfineVector, PhysicalConstants, GAUSS};
use crate::par;

/// External field along the NV axis.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize)]
pub struct FieldPoint {
    pub tesla: f64,
}

impl FieldPoint {
    pub fn new(tesla: f64) -> Result<Self> {
        if tesla >= 0.0 && tesla.is_finite() {
            Ok(Self { tesla })
        } else {
            Err(Error::InvalidInput(format!(
                "field must be finite and non-negative, got {tesla} T"
            )))
        }
    }

    pub fn from_gauss(gauss: f64) -> Result<Self> {
        Self::new(gauss * GAUSS)
    }

    pub fn gauss(&self) -> f64 {
        self.tesla / GAUSS
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimeGrid {
    t: Vec<f64>,
    uniform: bool,
}

impl TimeGrid {
    /// `points` samples evenly spaced on [0, span].
    pub fn uniform(span: f64, points: usize) -> Result<Self> {
        if !(span > 0.0 && span.is_finite()) {
            return Err(Error::InvalidInput(format!("grid span must be positive, got {span}")));
        }
        if points < 2 {
            return Err(Error::InvalidInput("a time grid needs at least 2 points".into()));
        }
        let dt = span / (points - 1) as f64;
        let t = (0..points).map(|i| i as f64 * dt).collect();
        Ok(Self { t, uniform: true })
    }

    pub fn from_times(t: Vec<f64>) -> Result<Self> {
        if t.len() < 2 {
            return Err(Error::InvalidInput("a time grid needs at least 2 points".into()));
        }
        if t[0] != 0.0 {
            return Err(Error::InvalidInput(format!("time grid must start at 0, got {}", t[0])));
        }
        if !t.windows(2).all(|w| w[1] > w[0] && w[1].is_finite()) {
            return Err(Error::InvalidInput("time grid must be strictly increasing".into()));
        }
        let dt = t[1] - t[0];
        let uniform = t
            .windows(2)
            .all(|w| ((w[1] - w[0]) - dt).abs() <= 1e-9 * dt);
        Ok(Self { t, uniform })
    }

    pub fn times(&self) -> &[f64] {
        &self.t
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn is_uniform(&self) -> bool {
        self.uniform
    }

    pub fn span(&self) -> f64 {
        *self.t.last().expect("grids hold at least 2 points")
    }

    /// Smallest spacing between consecutive samples.
    pub fn min_spacing(&self) -> f64 {
        self.t
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::INFINITY, f64::min)
    }
}

/// Normalized conditional-evolution trace of one nucleus at time `t ≥ 0`.
pub fn nucleus_factor(
    a: &HyperfineVector,
    field: FieldPoint,
    t: f64,
    constants: &PhysicalConstants,
) -> f64 {
    let larmor = constants.larmor(field.tesla);
    let w1z = a.az - larmor;
    let w0 = larmor.abs();
    let w1 = (a.ax * a.ax + a.ay * a.ay + w1z * w1z).sqrt();
    let (s0, c0) = (0.5 * w0 * t).sin_cos();
    let (s1, c1) = (0.5 * w1 * t).sin_cos();
    if w0 == 0.0 || w1 == 0.0 {
        return c0 * c1;
    }
    let cos_angle = larmor * w1z / (w0 * w1);
    (c0 * c1 - cos_angle * s0 * s1).clamp(-1.0, 1.0)
}

fn envelope_at(
    couplings: &[HyperfineVector],
    field: FieldPoint,
    t: f64,
    constants: &PhysicalConstants,
) -> f64 {
    // Index-ordered product: bitwise identical regardless of threading.
    couplings
        .iter()
        .fold(1.0, |acc, a| acc * nucleus_factor(a, field, t, constants))
}

fn check_couplings(couplings: &[HyperfineVector]) -> Result<()> {
    if couplings.is_empty() {
        Err(Error::InvalidInput("envelope needs at least one nucleus".into()))
    } else {
        Ok(())
    }
}

/// E(tᵢ) = ∏ⱼ Lⱼ(tᵢ), parallel over time points when the `parallel` feature is on.
pub fn envelope(
    couplings: &[HyperfineVector],
    field: FieldPoint,
    grid: &TimeGrid,
    constants: &PhysicalConstants,
) -> Result<Vec<f64>> {
    check_couplings(couplings)?;
    Ok(par::map_slice(grid.times(), |&t| {
        envelope_at(couplings, field, t, constants)
    }))
}

/// Single-threaded reference path for [`envelope`]; produces identical bits.
pub fn envelope_sequential(
    couplings: &[HyperfineVector],
    field: FieldPoint,
    grid: &TimeGrid,
    constants: &PhysicalConstants,
) -> Result<Vec<f64>> {
    check_couplings(couplings)?;
    Ok(grid
        .times()
        .iter()
        .map(|&t| envelope_at(couplings, field, t, constants))
        .collect())
}

/// Equal populations of the three ¹⁴N states.
pub const NITROGEN_WEIGHTS: [f64; 3] = [1.0 / 3.0; 3];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FidSignal {
    pub grid: TimeGrid,
    pub envelope: Vec<f64>,
    pub signal: Vec<f64>,
    /// ¹⁴N hyperfine splitting (rad/s).
    pub a14n: f64,
    pub phase: f64,
    /// Weights of the m = −1, 0, +1 lines.
    pub weights: [f64; 3],
}

/// Multiplies the bath envelope by the three-line ¹⁴N beating
/// Σₘ wₘ cos(m A_N t + m φ) = ⅓ + ⅔ cos(A_N t + φ).
pub fn ramsey_signal(envelope: &[f64], grid: &TimeGrid, a14n: f64, phase: f64) -> Result<FidSignal> {
    if envelope.len() != grid.len() {
        return Err(Error::LengthMismatch {
            expected: grid.len(),
            found: envelope.len(),
        });
    }
    let w = NITROGEN_WEIGHTS;
    let signal = grid
        .times()
        .iter()
        .zip(envelope)
        .map(|(&t, &e)| {
            let beat = w[1] + (w[0] + w[2]) * (a14n * t + phase).cos();
            e * beat
        })
        .collect();
    Ok(FidSignal {
        grid: grid.clone(),
        envelope: envelope.to_vec(),
        signal,
        a14n,
        phase,
        weights: w,
    })
}

/// Run metadata written as `# key = value` lines above FID tables.
#[derive(Debug, Clone, Default)]
pub struct FidMetadata {
    pub field: Option<FieldPoint>,
    pub n_spins: usize,
    pub seed: u64,
    pub extra: Vec<(String, String)>,
}

/// CSV with columns `t_s,envelope,signal`.
pub fn fid_csv(fid: &FidSignal, meta: &FidMetadata) -> String {
    let mut out = String::new();
    for (k, v) in &meta.extra {
        let _ = writeln!(out, "# {k} = {v}");
    }
    if let Some(b) = meta.field {
        let _ = writeln!(out, "# b_tesla = {:.16e}", b.tesla);
        let _ = writeln!(out, "# b_gauss = {:.16e}", b.gauss());
    }
    let _ = writeln!(out, "# n_spins = {}", meta.n_spins);
    let _ = writeln!(out, "# seed = {}", meta.seed);
    let _ = writeln!(out, "# a14n_rad_s = {:.16e}", fid.a14n);
    let _ = writeln!(out, "# phase_rad = {:.16e}", fid.phase);
    out.push_str("t_s,envelope,signal\n");
    for ((t, e), s) in fid.grid.times().iter().zip(&fid.envelope).zip(&fid.signal) {
        let _ = writeln!(out, "{t:.16e},{e:.16e},{s:.16e}");
    }
    out
}
