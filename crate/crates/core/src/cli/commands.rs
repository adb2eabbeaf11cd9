//! The six subcommands: thin wrappers that build inputs from the run
//! configuration, call the library, and emit files.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use super::output::Emitter;
use super::{CliError, Context};
use crate::dynamics::{self, FidMetadata, FieldPoint, TimeGrid};
use crate::experiments::{self, GridPolicy};
use crate::fitting::{self, FitOptions, FitResult};
use crate::geometry::{self, BathConfiguration};
use crate::hyperfine::{self, HyperfineVector, DEFAULT_VARIANCE_FRACTION};
use crate::oracle;

fn emitter(ctx: &Context, command: &str) -> Result<Emitter, CliError> {
    Emitter::new(
        &ctx.out_dir,
        command,
        ctx.config_sha256.clone(),
        ctx.config.seed,
        ctx.config.constants,
    )
}

/// Samples the configuration described by the run config: either directly
/// from the master seed, or by scanning seeds for a target zero-field T₂*.
pub fn build_configuration(ctx: &Context) -> Result<BathConfiguration, CliError> {
    let c = &ctx.config;
    let config = match &c.filter {
        Some(f) => {
            let target_sigma = std::f64::consts::SQRT_2 / f.target_t2star;
            geometry::filter_by_target_sigma(
                &c.lattice,
                c.n_keep,
                target_sigma,
                f.rel_tol,
                c.seed,
                f.max_trials,
                &c.constants,
            )?
            .configuration
        }
        None => {
            let sites = geometry::generate_lattice_sites(&c.lattice)?;
            geometry::sample_configuration(&sites, c.lattice.abundance, c.n_keep, c.seed)?
        }
    };
    if config.is_truncated() {
        eprintln!("warning: {}", config.label);
    }
    Ok(config)
}

#[derive(Serialize)]
struct ConfigurationSummary<'a> {
    label: &'a str,
    sample_seed: u64,
    n_spins: usize,
    n_requested: usize,
    truncated: bool,
}

fn summarize(emit: &mut Emitter, config: &BathConfiguration) -> Result<(), CliError> {
    emit.detail(
        "configuration",
        ConfigurationSummary {
            label: &config.label,
            sample_seed: config.seed,
            n_spins: config.len(),
            n_requested: config.n_requested,
            truncated: config.is_truncated(),
        },
    )
}

fn prediction_lines(couplings: &[HyperfineVector]) -> Result<String, CliError> {
    let stats = hyperfine::broadening_stats(couplings)?;
    let mut out = String::new();
    let _ = writeln!(out, "# sigma_full_rad_s = {:.16e}", stats.sigma_full);
    let _ = writeln!(out, "# sigma_z_rad_s = {:.16e}", stats.sigma_z);
    let _ = writeln!(out, "# t2_weak_s = {:.16e}", stats.t2_weak);
    match stats.t2_strong {
        Some(t) => {
            let _ = writeln!(out, "# t2_strong_s = {t:.16e}");
        }
        None => out.push_str("# t2_strong_s = inf\n"),
    }
    Ok(out)
}

fn strict_fit_check(ctx: &Context, unconverged: usize, what: &str) -> Result<(), CliError> {
    if ctx.strict && unconverged > 0 {
        return Err(CliError::Numerical(format!(
            "{unconverged} unconverged fit(s) in {what} (--strict)"
        )));
    }
    if unconverged > 0 {
        eprintln!("warning: {unconverged} unconverged fit(s) in {what}");
    }
    Ok(())
}

pub fn generate(ctx: &Context) -> Result<(), CliError> {
    let c = &ctx.config;
    let config = build_configuration(ctx)?;
    let couplings = hyperfine::couplings_for(&config, &c.constants)?;
    let mut emit = emitter(ctx, "generate")?;
    summarize(&mut emit, &config)?;
    emit.detail("prediction", hyperfine::broadening_stats(&couplings)?)?;
    emit.detail(
        "crossover",
        hyperfine::crossover_estimate(&couplings, DEFAULT_VARIANCE_FRACTION, &c.constants)?,
    )?;
    emit.write("configuration.csv", &geometry::write_table(&config, &c.lattice))?;
    let body = format!(
        "{}{}",
        prediction_lines(&couplings)?,
        hyperfine::couplings_csv(&config, &couplings)?
    );
    emit.write("couplings.csv", &body)?;
    emit.finish()?;
    Ok(())
}

fn grid_for(
    ctx: &Context,
    couplings: &[HyperfineVector],
    field: FieldPoint,
) -> Result<TimeGrid, CliError> {
    let g = &ctx.config.grid;
    let span = match g.span {
        Some(span) => span,
        None => {
            g.span_multiplier
                * experiments::decay_time_estimate(couplings, field, &ctx.config.constants)?
        }
    };
    Ok(TimeGrid::uniform(span, g.points)?)
}

pub fn simulate(ctx: &Context) -> Result<(), CliError> {
    let c = &ctx.config;
    let config = build_configuration(ctx)?;
    let couplings = hyperfine::couplings_for(&config, &c.constants)?;
    let field = c.simulate_field;
    let grid = grid_for(ctx, &couplings, field)?;
    let envelope = dynamics::envelope(&couplings, field, &grid, &c.constants)?;
    let fid = dynamics::ramsey_signal(&envelope, &grid, c.a14n, c.phase)?;
    let meta = FidMetadata {
        field: Some(field),
        n_spins: config.len(),
        seed: config.seed,
        extra: Vec::new(),
    };
    let mut emit = emitter(ctx, "simulate")?;
    summarize(&mut emit, &config)?;
    emit.detail("grid", &grid)?;
    emit.write("fid.csv", &dynamics::fid_csv(&fid, &meta))?;
    emit.finish()?;
    Ok(())
}

/// A time series read from CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub column: String,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

/// Reads `t_s` and one value column; `#` lines and blank lines are skipped.
pub fn read_series(text: &str, column: Option<&str>, envelope_only: bool) -> Result<Series, CliError> {
    let bad = |msg: String| CliError::Validation(format!("input CSV: {msg}"));
    let mut lines = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'));
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| bad("no header line".into()))?
        .split(',')
        .map(str::trim)
        .collect();
    if header.first() != Some(&"t_s") {
        return Err(bad("first column must be t_s".into()));
    }
    let name = match column {
        Some(name) => name,
        None if header.len() == 2 => header[1],
        None if envelope_only => "envelope",
        None => "signal",
    };
    let index = header
        .iter()
        .position(|h| *h == name)
        .filter(|&i| i > 0)
        .ok_or_else(|| bad(format!("no value column '{name}' in header {header:?}")))?;

    let mut times = Vec::new();
    let mut values = Vec::new();
    for (row, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != header.len() {
            return Err(bad(format!("row {row} has {} fields, expected {}", fields.len(), header.len())));
        }
        let parse = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| bad(format!("row {row}: '{s}' is not a number")))
        };
        times.push(parse(fields[0])?);
        values.push(parse(fields[index])?);
    }
    Ok(Series {
        column: name.to_string(),
        times,
        values,
    })
}

/// One-row CSV of fitted parameters.
pub fn fit_csv(result: &FitResult) -> String {
    let p = &result.params;
    format!(
        "c,t2star_s,n,a14n_rad_s,phi_rad,rms_residual,iterations,converged,envelope_only\n\
         {:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{},{},{}\n",
        p.c,
        p.t2star,
        p.n,
        p.a14n,
        p.phi,
        result.rms_residual,
        result.iterations,
        result.converged,
        result.envelope_only
    )
}

pub fn fit(ctx: &Context, input: &Path, column: Option<&str>) -> Result<(), CliError> {
    let text = fs::read_to_string(input)
        .map_err(|e| CliError::io(format!("reading {}", input.display()), e))?;
    let options: &FitOptions = &ctx.config.fit;
    let series = read_series(&text, column, options.envelope_only)?;
    let result = fitting::fit(&series.times, &series.values, options)?;

    let mut emit = emitter(ctx, "fit")?;
    emit.detail("input_sha256", super::output::sha256_hex(text.as_bytes()))?;
    emit.detail("column", &series.column)?;
    emit.detail("fit", &result)?;
    emit.write("fit.csv", &fit_csv(&result))?;
    emit.finish()?;
    strict_fit_check(ctx, usize::from(!result.converged), "fit")
}

/// Envelope table written per sweep field; `fit` on it reproduces the row.
fn envelope_csv(field: FieldPoint, grid: &TimeGrid, envelope: &[f64]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# b_tesla = {:.16e}", field.tesla);
    let _ = writeln!(out, "# b_gauss = {:.16e}", field.gauss());
    out.push_str("t_s,envelope\n");
    for (t, e) in grid.times().iter().zip(envelope) {
        let _ = writeln!(out, "{t:.16e},{e:.16e}");
    }
    out
}

pub fn sweep(ctx: &Context) -> Result<(), CliError> {
    let c = &ctx.config;
    let config = build_configuration(ctx)?;
    let couplings = hyperfine::couplings_for(&config, &c.constants)?;
    let mut fields = c
        .sweep
        .fields
        .clone()
        .unwrap_or_else(experiments::default_sweep_fields);
    if c.sweep.append_strong_field {
        fields.push(experiments::strong_field(&couplings, &c.constants)?);
    }
    let policy: GridPolicy = c.grid.policy()?;
    let options = FitOptions {
        envelope_only: true,
        ..c.fit.clone()
    };
    let table = experiments::field_sweep(&config, &fields, &policy, &options, &c.constants)?;

    let mut emit = emitter(ctx, "sweep")?;
    summarize(&mut emit, &config)?;
    emit.detail("prediction", table.prediction)?;
    emit.detail(
        "crossover",
        hyperfine::crossover_estimate(&couplings, DEFAULT_VARIANCE_FRACTION, &c.constants)?,
    )?;
    emit.detail("grid_policy", &policy)?;
    emit.write(
        "sweep.csv",
        &format!("{}{}", prediction_lines(&couplings)?, table.to_csv()),
    )?;
    for (i, row) in table.rows.iter().enumerate() {
        emit.write(
            &format!("envelopes/field_{i:03}.csv"),
            &envelope_csv(row.field, &row.grid, &row.envelope),
        )?;
    }
    emit.finish()?;
    let unconverged = table.rows.iter().filter(|r| !r.converged).count();
    strict_fit_check(ctx, unconverged, "sweep")
}

pub fn converge(ctx: &Context) -> Result<(), CliError> {
    let c = &ctx.config;
    let config = build_configuration(ctx)?;
    let couplings = hyperfine::couplings_for(&config, &c.constants)?;
    let span = match c.converge.span {
        Some(span) => span,
        None => 2.0 * hyperfine::broadening_stats(&couplings)?.t2_weak,
    };
    let grid = TimeGrid::uniform(span, c.grid.points)?;
    let table = experiments::bath_size_scan(
        &config,
        &c.converge.sizes,
        c.converge.field,
        &grid,
        &c.constants,
    )?;

    let mut emit = emitter(ctx, "converge")?;
    summarize(&mut emit, &config)?;
    emit.detail("field", c.converge.field)?;
    emit.detail("grid", &grid)?;
    let mut body = String::new();
    let _ = writeln!(body, "# b_tesla = {:.16e}", c.converge.field.tesla);
    body.push_str(&table.to_csv());
    emit.write("convergence.csv", &body)?;
    emit.finish()?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleRow {
    pub field: FieldPoint,
    pub max_deviation: f64,
    pub pass: bool,
}

pub fn oracle_check(ctx: &Context) -> Result<(), CliError> {
    let c = &ctx.config;
    let settings = &c.oracle_check;
    if settings.n_spins > oracle::MAX_SPINS {
        return Err(crate::Error::OracleTooLarge {
            n: settings.n_spins,
            max: oracle::MAX_SPINS,
        }
        .into());
    }
    let config = build_configuration(ctx)?.nearest(settings.n_spins)?;
    let couplings = hyperfine::couplings_for(&config, &c.constants)?;
    let span = match settings.span {
        Some(span) => span,
        None => 3.0 * hyperfine::broadening_stats(&couplings)?.t2_weak,
    };
    let grid = TimeGrid::uniform(span, settings.points)?;
    let rows = settings
        .fields
        .iter()
        .map(|&field| -> Result<OracleRow, CliError> {
            let fast = dynamics::envelope(&couplings, field, &grid, &c.constants)?;
            let exact = oracle::fid_bruteforce(&couplings, field, &grid, &c.constants)?;
            let max_deviation = fast
                .iter()
                .zip(&exact)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            Ok(OracleRow {
                field,
                max_deviation,
                pass: max_deviation < settings.tolerance,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut body = String::new();
    let _ = writeln!(body, "# n_spins = {}", config.len());
    let _ = writeln!(body, "# tolerance = {:.16e}", settings.tolerance);
    body.push_str("b_tesla,b_gauss,max_deviation,pass\n");
    for r in &rows {
        let _ = writeln!(
            body,
            "{:.16e},{:.16e},{:.16e},{}",
            r.field.tesla,
            r.field.gauss(),
            r.max_deviation,
            r.pass
        );
    }
    let mut emit = emitter(ctx, "oracle-check")?;
    summarize(&mut emit, &config)?;
    emit.detail("grid", &grid)?;
    emit.detail("rows", &rows)?;
    emit.write("oracle.csv", &body)?;
    emit.finish()?;

    let worst = rows.iter().map(|r| r.max_deviation).fold(0.0, f64::max);
    if rows.iter().all(|r| r.pass) {
        println!("oracle-check PASS: max deviation {worst:.3e} (tolerance {:.1e})", settings.tolerance);
        Ok(())
    } else {
        Err(CliError::Numerical(format!(
            "oracle-check FAIL: max deviation {worst:.3e} exceeds tolerance {:.1e}",
            settings.tolerance
        )))
    }
}
