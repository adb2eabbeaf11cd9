//! Secular dipolar hyperfine couplings and the thermal (Gaussian) broadening
//! they imply.
//!
//! All frequencies are angular (rad/s). The coupling of a nucleus at 𝐫 = r n̂
//! is the z-row of the point-dipole tensor,
//!
//! ```text
//! A_k = D (δ_zk − 3 n_z n_k) / r³,   D = (μ₀/4π) γ_e γ_C ħ
//! ```

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BathConfiguration, Vec3};

/// 1 Gauss in tesla.
pub const GAUSS: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalConstants {
    /// Electron gyromagnetic ratio (rad s⁻¹ T⁻¹).
    pub gamma_e: f64,
    /// ¹³C gyromagnetic ratio (rad s⁻¹ T⁻¹).
    pub gamma_c: f64,
    /// Reduced Planck constant (J s).
    pub hbar: f64,
    /// μ₀/4π (T m A⁻¹).
    pub mu0_over_4pi: f64,
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        Self {
            gamma_e: 1.76e11,
            gamma_c: 6.73e7,
            hbar: 1.0546e-34,
            mu0_over_4pi: 1e-7,
        }
    }
}

impl PhysicalConstants {
    pub fn validate(&self) -> Result<()> {
        let all = [self.gamma_e, self.gamma_c, self.hbar, self.mu0_over_4pi];
        if all.iter().all(|v| *v > 0.0 && v.is_finite()) {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!(
                "physical constants must be strictly positive: {self:?}"
            )))
        }
    }

    /// D = (μ₀/4π) γ_e γ_C ħ, in rad s⁻¹ m³.
    pub fn dipolar_prefactor(&self) -> f64 {
        self.mu0_over_4pi * self.gamma_e * self.gamma_c * self.hbar
    }

    /// Nuclear Larmor frequency γ_C B (rad/s).
    pub fn larmor(&self, b_tesla: f64) -> f64 {
        self.gamma_c * b_tesla
    }
}

/// Hyperfine coupling vector 𝐀 of one nucleus (rad/s).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HyperfineVector {
    pub ax: f64,
    pub ay: f64,
    pub az: f64,
    pub magnitude: f64,
}

impl HyperfineVector {
    pub fn new(ax: f64, ay: f64, az: f64) -> Self {
        Self {
            ax,
            ay,
            az,
            magnitude: (ax * ax + ay * ay + az * az).sqrt(),
        }
    }

    pub fn transverse(&self) -> f64 {
        self.ax.hypot(self.ay)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self::new(self.ax * factor, self.ay * factor, self.az * factor)
    }
}

pub fn dipolar_coupling(position: Vec3, constants: &PhysicalConstants) -> Result<HyperfineVector> {
    let r = position.norm();
    if r == 0.0 {
        return Err(Error::ZeroPosition);
    }
    if !r.is_finite() {
        return Err(Error::InvalidInput(format!("non-finite position {position:?}")));
    }
    let n = position * (1.0 / r);
    let scale = constants.dipolar_prefactor() / (r * r * r);
    Ok(HyperfineVector::new(
        -3.0 * n.z * n.x * scale,
        -3.0 * n.z * n.y * scale,
        (1.0 - 3.0 * n.z * n.z) * scale,
    ))
}

pub fn couplings_for(
    config: &BathConfiguration,
    constants: &PhysicalConstants,
) -> Result<Vec<HyperfineVector>> {
    if config.is_empty() {
        return Err(Error::InvalidInput("configuration has no nuclei".into()));
    }
    config
        .positions
        .iter()
        .map(|p| dipolar_coupling(*p, constants))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BroadeningStats {
    /// ½ (Σ|𝐀ⱼ|²)^½, the zero-field Overhauser-field width (rad/s).
    pub sigma_full: f64,
    /// ½ (Σ (A_zⱼ)²)^½, the strong-field width (rad/s).
    pub sigma_z: f64,
    /// Gaussian dephasing time √2/σ_full (s).
    pub t2_weak: f64,
    /// √2/σ_z (s); `None` when every longitudinal component vanishes.
    pub t2_strong: Option<f64>,
}

pub fn broadening_stats(couplings: &[HyperfineVector]) -> Result<BroadeningStats> {
    if couplings.is_empty() {
        return Err(Error::InvalidInput("no couplings".into()));
    }
    let sum_full: f64 = couplings.iter().map(|a| a.magnitude * a.magnitude).sum();
    let sum_z: f64 = couplings.iter().map(|a| a.az * a.az).sum();
    if sum_full == 0.0 {
        return Err(Error::ZeroCouplings);
    }
    let sigma_full = 0.5 * sum_full.sqrt();
    let sigma_z = 0.5 * sum_z.sqrt();
    Ok(BroadeningStats {
        sigma_full,
        sigma_z,
        t2_weak: std::f64::consts::SQRT_2 / sigma_full,
        t2_strong: (sigma_z > 0.0).then(|| std::f64::consts::SQRT_2 / sigma_z),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Crossover {
    /// Number of dominant nuclei.
    pub k: usize,
    /// Mean coupling magnitude of the dominant nuclei (rad/s).
    pub a_bar: f64,
    /// Crossover field Ā/γ_C (T).
    pub b_c: f64,
}

pub const DEFAULT_VARIANCE_FRACTION: f64 = 0.8;

/// Field at which the nuclear Zeeman energy matches the mean coupling of the
/// nuclei that carry `variance_fraction` of Σ|𝐀ⱼ|².
pub fn crossover_estimate(
    couplings: &[HyperfineVector],
    variance_fraction: f64,
    constants: &PhysicalConstants,
) -> Result<Crossover> {
    if couplings.is_empty() {
        return Err(Error::InvalidInput("no couplings".into()));
    }
    if !(variance_fraction > 0.0 && variance_fraction <= 1.0) {
        return Err(Error::InvalidInput(format!(
            "variance_fraction must lie in (0, 1], got {variance_fraction}"
        )));
    }
    let mut magnitudes: Vec<f64> = couplings.iter().map(|a| a.magnitude).collect();
    magnitudes.sort_by(|a, b| b.total_cmp(a));
    let total: f64 = magnitudes.iter().map(|m| m * m).sum();
    if total == 0.0 {
        return Err(Error::ZeroCouplings);
    }
    let threshold = variance_fraction * total;
    let mut cumulative = 0.0;
    let mut k = magnitudes.len();
    for (i, m) in magnitudes.iter().enumerate() {
        cumulative += m * m;
        // Relative slack so that variance_fraction = 1 is reachable despite rounding.
        if cumulative >= threshold * (1.0 - 1e-12) {
            k = i + 1;
            break;
        }
    }
    let a_bar = magnitudes[..k].iter().sum::<f64>() / k as f64;
    Ok(crossover_from_mean(k, a_bar, constants))
}

/// B_c = Ā/γ_C for a given mean coupling.
pub fn crossover_from_mean(k: usize, a_bar: f64, constants: &PhysicalConstants) -> Crossover {
    Crossover {
        k,
        a_bar,
        b_c: a_bar / constants.gamma_c,
    }
}

/// CSV with columns `index,r_m,ax_rad_s,ay_rad_s,az_rad_s,magnitude_rad_s`.
pub fn couplings_csv(config: &BathConfiguration, couplings: &[HyperfineVector]) -> Result<String> {
    if config.len() != couplings.len() {
        return Err(Error::LengthMismatch {
            expected: config.len(),
            found: couplings.len(),
        });
    }
    let mut out = String::from("index,r_m,ax_rad_s,ay_rad_s,az_rad_s,magnitude_rad_s\n");
    for (i, (p, a)) in config.positions.iter().zip(couplings).enumerate() {
        let _ = writeln!(
            out,
            "{i},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            p.norm(),
            a.ax,
            a.ay,
            a.az,
            a.magnitude
        );
    }
    Ok(out)
}
