//! Run configuration: TOML with unit-tagged quantities.
//!
//! Every dimensioned value is written as a string `"<number> <unit>"`, e.g.
//! `field = "10.3 gauss"`. Bare numbers are rejected for dimensioned keys and
//! unknown keys are rejected everywhere. Values are converted to SI here and
//! nowhere else.

use std::f64::consts::PI;
use std::path::PathBuf;

use serde::Deserialize;

use super::CliError;
use crate::dynamics::FieldPoint;
use crate::experiments::{GridPolicy, DEFAULT_SIZES};
use crate::fitting::FitOptions;
use crate::geometry::{LatticeSpec, Vec3};
use crate::hyperfine::PhysicalConstants;

/// ¹⁴N hyperfine splitting, 2π × 2.16 MHz.
pub const DEFAULT_A14N: f64 = 2.0 * PI * 2.16e6;
pub const DEFAULT_SEED: u64 = 1;
pub const DEFAULT_N_KEEP: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dimension {
    MagneticField,
    Length,
    Time,
    AngularFrequency,
    Angle,
    Gyromagnetic,
    Action,
    MagneticConstant,
}

/// Conversion to SI: an exact power of ten, or a general factor.
#[derive(Debug, Clone, Copy)]
enum Scale {
    Pow10(i32),
    Factor(f64),
}

impl Scale {
    fn apply(self, value: f64) -> f64 {
        // Powers of ten up to 1e22 are exact, so dividing rounds the same way
        // as parsing "10.3e-4" directly.
        match self {
            Scale::Pow10(k) if k >= 0 => value * 10f64.powi(k),
            Scale::Pow10(k) => value / 10f64.powi(-k),
            Scale::Factor(f) => value * f,
        }
    }
}

impl Dimension {
    /// Accepted unit spellings and their conversion to SI.
    fn units(self) -> &'static [(&'static str, Scale)] {
        use Scale::Pow10;
        match self {
            Dimension::MagneticField => &[
                ("gauss", Pow10(-4)),
                ("G", Pow10(-4)),
                ("mT", Pow10(-3)),
                ("T", Pow10(0)),
                ("tesla", Pow10(0)),
            ],
            Dimension::Length => &[
                ("m", Pow10(0)),
                ("nm", Pow10(-9)),
                ("angstrom", Pow10(-10)),
                ("Å", Pow10(-10)),
            ],
            Dimension::Time => &[
                ("s", Pow10(0)),
                ("ms", Pow10(-3)),
                ("us", Pow10(-6)),
                ("µs", Pow10(-6)),
                ("ns", Pow10(-9)),
            ],
            Dimension::AngularFrequency => &[
                ("rad/s", Pow10(0)),
                ("rad/ms", Pow10(3)),
                ("rad/us", Pow10(6)),
                ("rad/µs", Pow10(6)),
                ("rad/ns", Pow10(9)),
            ],
            Dimension::Angle => &[("rad", Pow10(0)), ("deg", Scale::Factor(PI / 180.0))],
            Dimension::Gyromagnetic => &[("rad/s/T", Pow10(0))],
            Dimension::Action => &[("J*s", Pow10(0))],
            Dimension::MagneticConstant => &[("T*m/A", Pow10(0)), ("H/m", Pow10(0))],
        }
    }

    fn unit_list(self) -> String {
        self.units().iter().map(|(u, _)| *u).collect::<Vec<_>>().join(", ")
    }
}

/// Parses `"<number> <unit>"` into SI, naming `key` in every error.
pub fn parse_quantity(key: &str, text: &str, dim: Dimension) -> Result<f64, CliError> {
    let mut parts = text.split_whitespace();
    let number = parts.next().unwrap_or("");
    let unit: Vec<&str> = parts.collect();
    if unit.is_empty() {
        return Err(CliError::Validation(format!(
            "{key}: missing unit tag in \"{text}\" (expected one of: {})",
            dim.unit_list()
        )));
    }
    let unit = unit.join(" ");
    let value: f64 = number
        .parse()
        .map_err(|_| CliError::Validation(format!("{key}: \"{number}\" is not a number")))?;
    if !value.is_finite() {
        return Err(CliError::Validation(format!("{key}: value must be finite")));
    }
    let scale = dim
        .units()
        .iter()
        .find(|(u, _)| *u == unit)
        .map(|(_, s)| *s)
        .ok_or_else(|| {
            CliError::Validation(format!(
                "{key}: unknown unit \"{unit}\" (expected one of: {})",
                dim.unit_list()
            ))
        })?;
    Ok(scale.apply(value))
}

fn field(key: &str, text: &str) -> Result<FieldPoint, CliError> {
    let tesla = parse_quantity(key, text, Dimension::MagneticField)?;
    FieldPoint::new(tesla).map_err(|e| CliError::Validation(format!("{key}: {e}")))
}

fn optional(key: &str, text: &Option<String>, dim: Dimension) -> Result<Option<f64>, CliError> {
    text.as_deref().map(|t| parse_quantity(key, t, dim)).transpose()
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    seed: Option<u64>,
    n_keep: Option<usize>,
    a14n: Option<String>,
    phase: Option<String>,
    out_dir: Option<String>,
    #[serde(default)]
    lattice: RawLattice,
    #[serde(default)]
    constants: RawConstants,
    #[serde(default)]
    grid: RawGrid,
    #[serde(default)]
    fit: RawFit,
    #[serde(default)]
    simulate: RawSimulate,
    #[serde(default)]
    sweep: RawSweep,
    #[serde(default)]
    converge: RawConverge,
    #[serde(default)]
    oracle_check: RawOracle,
    filter: Option<RawFilter>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLattice {
    lattice_constant: Option<String>,
    supercell_radius: Option<String>,
    nv_axis: Option<[i32; 3]>,
    abundance: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConstants {
    gamma_e: Option<String>,
    gamma_c: Option<String>,
    hbar: Option<String>,
    mu0_over_4pi: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGrid {
    span: Option<String>,
    span_multiplier: Option<f64>,
    points: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFit {
    max_iterations: Option<usize>,
    relative_tolerance: Option<f64>,
    envelope_only: Option<bool>,
    window: Option<[String; 2]>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSimulate {
    field: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSweep {
    fields: Option<Vec<String>>,
    append_strong_field: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConverge {
    sizes: Option<Vec<usize>>,
    field: Option<String>,
    span: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOracle {
    n_spins: Option<usize>,
    fields: Option<Vec<String>>,
    points: Option<usize>,
    span: Option<String>,
    tolerance: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFilter {
    target_t2star: String,
    rel_tol: Option<f64>,
    max_trials: Option<usize>,
}

/// Time-grid settings shared by the commands. A fixed `span` overrides the
/// adaptive rule (span_multiplier × 1/e time of the envelope).
#[derive(Debug, Clone, PartialEq)]
pub struct GridSettings {
    pub span: Option<f64>,
    pub span_multiplier: f64,
    pub points: usize,
}

impl GridSettings {
    pub fn policy(&self) -> Result<GridPolicy, CliError> {
        Ok(match self.span {
            Some(span) => GridPolicy::Fixed(crate::dynamics::TimeGrid::uniform(span, self.points)?),
            None => GridPolicy::Adaptive {
                span_multiplier: self.span_multiplier,
                points: self.points,
            },
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSettings {
    /// `None` selects B = 0 plus 20 log-spaced fields from 1 G to 305 G.
    pub fields: Option<Vec<FieldPoint>>,
    pub append_strong_field: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergeSettings {
    pub sizes: Vec<usize>,
    pub field: FieldPoint,
    /// Defaults to 2·t2_weak of the full configuration.
    pub span: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleSettings {
    pub n_spins: usize,
    pub fields: Vec<FieldPoint>,
    pub points: usize,
    /// Defaults to 3·t2_weak of the checked configuration.
    pub span: Option<f64>,
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterSettings {
    pub target_t2star: f64,
    pub rel_tol: f64,
    pub max_trials: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub n_keep: usize,
    pub lattice: LatticeSpec,
    pub constants: PhysicalConstants,
    pub a14n: f64,
    pub phase: f64,
    pub grid: GridSettings,
    pub fit: FitOptions,
    pub simulate_field: FieldPoint,
    pub sweep: SweepSettings,
    pub converge: ConvergeSettings,
    pub oracle_check: OracleSettings,
    pub filter: Option<FilterSettings>,
    pub out_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig::from_toml("").expect("empty configuration is valid")
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let raw: RawConfig = toml::from_str(text)
            .map_err(|e| CliError::Validation(format!("configuration: {e}")))?;
        Self::from_raw(raw)
    }

    fn from_raw(raw: RawConfig) -> Result<Self, CliError> {
        use Dimension::*;

        let defaults = LatticeSpec::default();
        let lattice = LatticeSpec {
            lattice_constant: optional("lattice.lattice_constant", &raw.lattice.lattice_constant, Length)?
                .unwrap_or(defaults.lattice_constant),
            supercell_radius: optional("lattice.supercell_radius", &raw.lattice.supercell_radius, Length)?
                .unwrap_or(defaults.supercell_radius),
            nv_axis: raw
                .lattice
                .nv_axis
                .map(|[x, y, z]| Vec3::new(x as f64, y as f64, z as f64))
                .unwrap_or(defaults.nv_axis),
            abundance: raw.lattice.abundance.unwrap_or(defaults.abundance),
        };
        lattice.validate()?;

        let c = PhysicalConstants::default();
        let constants = PhysicalConstants {
            gamma_e: optional("constants.gamma_e", &raw.constants.gamma_e, Gyromagnetic)?.unwrap_or(c.gamma_e),
            gamma_c: optional("constants.gamma_c", &raw.constants.gamma_c, Gyromagnetic)?.unwrap_or(c.gamma_c),
            hbar: optional("constants.hbar", &raw.constants.hbar, Action)?.unwrap_or(c.hbar),
            mu0_over_4pi: optional("constants.mu0_over_4pi", &raw.constants.mu0_over_4pi, MagneticConstant)?
                .unwrap_or(c.mu0_over_4pi),
        };
        constants.validate()?;

        let grid = GridSettings {
            span: optional("grid.span", &raw.grid.span, Time)?,
            span_multiplier: raw.grid.span_multiplier.unwrap_or(4.0),
            points: raw.grid.points.unwrap_or(400),
        };
        if let Some(span) = grid.span {
            if span <= 0.0 {
                return Err(CliError::Validation("grid.span must be positive".into()));
            }
        }
        if !(grid.span_multiplier > 0.0 && grid.span_multiplier.is_finite()) {
            return Err(CliError::Validation("grid.span_multiplier must be positive".into()));
        }
        if grid.points < 2 {
            return Err(CliError::Validation("grid.points must be at least 2".into()));
        }

        let window = match &raw.fit.window {
            Some([lo, hi]) => Some((
                parse_quantity("fit.window[0]", lo, Time)?,
                parse_quantity("fit.window[1]", hi, Time)?,
            )),
            None => None,
        };
        let fit_defaults = FitOptions::default();
        let fit = FitOptions {
            max_iterations: raw.fit.max_iterations.unwrap_or(fit_defaults.max_iterations),
            relative_tolerance: raw.fit.relative_tolerance.unwrap_or(fit_defaults.relative_tolerance),
            envelope_only: raw.fit.envelope_only.unwrap_or(fit_defaults.envelope_only),
            fit_window: window,
            ..fit_defaults
        };
        fit.validate()?;

        let simulate_field = match &raw.simulate.field {
            Some(t) => field("simulate.field", t)?,
            None => FieldPoint::new(0.0)?,
        };

        let sweep = SweepSettings {
            fields: raw
                .sweep
                .fields
                .as_ref()
                .map(|list| {
                    list.iter()
                        .enumerate()
                        .map(|(i, t)| field(&format!("sweep.fields[{i}]"), t))
                        .collect::<Result<Vec<_>, _>>()
                })
                .transpose()?,
            append_strong_field: raw.sweep.append_strong_field.unwrap_or(false),
        };
        if sweep.fields.as_ref().is_some_and(|f| f.is_empty()) {
            return Err(CliError::Validation("sweep.fields must not be empty".into()));
        }

        let converge = ConvergeSettings {
            sizes: raw.converge.sizes.clone().unwrap_or_else(|| DEFAULT_SIZES.to_vec()),
            field: match &raw.converge.field {
                Some(t) => field("converge.field", t)?,
                None => FieldPoint::new(0.0)?,
            },
            span: optional("converge.span", &raw.converge.span, Time)?,
        };

        let oracle_check = OracleSettings {
            n_spins: raw.oracle_check.n_spins.unwrap_or(8),
            fields: match &raw.oracle_check.fields {
                Some(list) => list
                    .iter()
                    .enumerate()
                    .map(|(i, t)| field(&format!("oracle_check.fields[{i}]"), t))
                    .collect::<Result<Vec<_>, _>>()?,
                None => [0.0, 10.0, 100.0, 300.0]
                    .iter()
                    .map(|g| FieldPoint::from_gauss(*g))
                    .collect::<crate::Result<Vec<_>>>()?,
            },
            points: raw.oracle_check.points.unwrap_or(200),
            span: optional("oracle_check.span", &raw.oracle_check.span, Time)?,
            tolerance: raw.oracle_check.tolerance.unwrap_or(1e-9),
        };
        if oracle_check.fields.is_empty() || oracle_check.points < 2 || oracle_check.tolerance.is_nan() || oracle_check.tolerance <= 0.0 {
            return Err(CliError::Validation(
                "oracle_check needs fields, at least 2 points and a positive tolerance".into(),
            ));
        }

        let filter = raw
            .filter
            .as_ref()
            .map(|f| -> Result<FilterSettings, CliError> {
                let target_t2star = parse_quantity("filter.target_t2star", &f.target_t2star, Time)?;
                if target_t2star <= 0.0 {
                    return Err(CliError::Validation("filter.target_t2star must be positive".into()));
                }
                Ok(FilterSettings {
                    target_t2star,
                    rel_tol: f.rel_tol.unwrap_or(0.05),
                    max_trials: f.max_trials.unwrap_or(10_000),
                })
            })
            .transpose()?;

        let n_keep = raw.n_keep.unwrap_or(DEFAULT_N_KEEP);
        if n_keep == 0 {
            return Err(CliError::Validation("n_keep must be at least 1".into()));
        }

        Ok(RunConfig {
            seed: raw.seed.unwrap_or(DEFAULT_SEED),
            n_keep,
            lattice,
            constants,
            a14n: optional("a14n", &raw.a14n, AngularFrequency)?.unwrap_or(DEFAULT_A14N),
            phase: optional("phase", &raw.phase, Angle)?.unwrap_or(0.0),
            grid,
            fit,
            simulate_field,
            sweep,
            converge,
            oracle_check,
            filter,
            out_dir: raw.out_dir.map(PathBuf::from),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn units_convert_to_si() {
        use Dimension::*;
        assert_eq!(parse_quantity("k", "10.3 gauss", MagneticField).unwrap(), 10.3e-4);
        assert_eq!(parse_quantity("k", "2 mT", MagneticField).unwrap(), 2e-3);
        assert_eq!(parse_quantity("k", "0.5 T", MagneticField).unwrap(), 0.5);
        assert_eq!(parse_quantity("k", "5 us", Time).unwrap(), 5e-6);
        assert_eq!(parse_quantity("k", "3.567 angstrom", Length).unwrap(), 3.567e-10);
        assert_eq!(parse_quantity("k", "1.7 rad/us", AngularFrequency).unwrap(), 1.7e6);
        assert!((parse_quantity("k", "180 deg", Angle).unwrap() - PI).abs() < 1e-15);
    }

    #[test]
    fn missing_unit_names_the_key() {
        let err = RunConfig::from_toml("[simulate]\nfield = \"10.3\"\n").unwrap_err();
        assert!(err.to_string().contains("simulate.field"), "{err}");
        assert!(err.to_string().contains("missing unit"), "{err}");
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn wrong_dimension_is_rejected() {
        let err = RunConfig::from_toml("[simulate]\nfield = \"10 us\"\n").unwrap_err();
        assert!(err.to_string().contains("unknown unit"), "{err}");
    }

    #[test]
    fn bare_number_for_dimensioned_key_is_rejected() {
        let err = RunConfig::from_toml("[simulate]\nfield = 10.3\n").unwrap_err();
        assert!(err.to_string().contains("field"), "{err}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml("sede = 3\n").is_err());
        assert!(RunConfig::from_toml("[lattice]\nradius = \"1 nm\"\n").is_err());
    }

    #[test]
    fn defaults_match_library_defaults() {
        let c = RunConfig::default();
        assert_eq!(c.lattice, LatticeSpec::default());
        assert_eq!(c.constants, PhysicalConstants::default());
        assert_eq!(c.n_keep, 500);
        assert_eq!(c.converge.sizes, DEFAULT_SIZES.to_vec());
        assert_eq!(c.oracle_check.fields.len(), 4);
    }

    #[test]
    fn full_config_parses() {
        let text = r#"
            seed = 7
            n_keep = 100
            a14n = "0 rad/s"
            phase = "0.1 rad"
            out_dir = "out"
            [lattice]
            lattice_constant = "3.567 angstrom"
            supercell_radius = "3 nm"
            nv_axis = [1, -1, -1]
            abundance = 0.011
            [constants]
            gamma_c = "6.73e7 rad/s/T"
            hbar = "1.0546e-34 J*s"
            [grid]
            span = "20 us"
            points = 300
            [fit]
            envelope_only = false
            window = ["0 us", "10 us"]
            [simulate]
            field = "10.3 G"
            [sweep]
            fields = ["0 G", "1 mT"]
            append_strong_field = true
            [converge]
            sizes = [1, 3]
            [oracle_check]
            n_spins = 4
            [filter]
            target_t2star = "5 us"
        "#;
        let c = RunConfig::from_toml(text).unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.lattice.supercell_radius, 3e-9);
        assert_eq!(c.grid.span, Some(20e-6));
        assert_eq!(c.fit.fit_window, Some((0.0, 10e-6)));
        assert_eq!(c.sweep.fields.as_ref().unwrap()[1].tesla, 1e-3);
        assert_eq!(c.filter.as_ref().unwrap().target_t2star, 5e-6);
        assert_eq!(c.simulate_field.tesla, 10.3e-4);
    }
}
