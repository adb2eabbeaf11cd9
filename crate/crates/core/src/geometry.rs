//! Diamond-lattice carbon sites around an NV center and random ¹³C
//! configurations drawn from them.
//!
//! Sites are enumerated on integer coordinates in units of a₀/4 so that
//! distances (and therefore the sort order) are exact. The vacancy sits at the
//! origin; its four bonded neighbours lie at −b for the bond vectors
//! b ∈ {[111], [1̄1̄1]…}. The nitrogen occupies the neighbour along −axis.
//! Positions are returned in the NV frame, where +z is the NV axis.

use std::fmt::Write as _;
use std::ops::{Add, Mul, Sub};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::hyperfine::{self, PhysicalConstants};
use crate::par;

/// Diamond lattice constant in meters.
pub const DIAMOND_LATTICE_CONSTANT: f64 = 3.567e-10;
/// Natural abundance of ¹³C.
pub const NATURAL_ABUNDANCE: f64 = 0.011;
/// Default supercell radius in units of a₀; holds ~1000 ¹³C at natural abundance.
pub const DEFAULT_RADIUS_IN_A0: f64 = 14.0;

/// Tie-break resolution for equidistant sites (m).
const TIE_BREAK_RESOLUTION: f64 = 1e-15;

const BOND_DIRECTIONS: [[i64; 3]; 4] = [[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn dot(&self, other: &Vec3) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn cross(&self, other: &Vec3) -> Vec3 {
        Vec3::new(
            self.y * other.z - self.z * other.y,
            self.z * other.x - self.x * other.z,
            self.x * other.y - self.y * other.x,
        )
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn normalized(&self) -> Option<Vec3> {
        let n = self.norm();
        (n > 0.0 && n.is_finite()).then(|| *self * (1.0 / n))
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatticeSpec {
    /// a₀ (m).
    pub lattice_constant: f64,
    /// Sites farther than this from the vacancy are dropped (m).
    pub supercell_radius: f64,
    /// NV axis in crystal coordinates; must be a vacancy bond direction.
    pub nv_axis: Vec3,
    pub abundance: f64,
}

impl Default for LatticeSpec {
    fn default() -> Self {
        Self {
            lattice_constant: DIAMOND_LATTICE_CONSTANT,
            supercell_radius: DEFAULT_RADIUS_IN_A0 * DIAMOND_LATTICE_CONSTANT,
            nv_axis: Vec3::new(1.0, 1.0, 1.0),
            abundance: NATURAL_ABUNDANCE,
        }
    }
}

impl LatticeSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.lattice_constant > 0.0 && self.lattice_constant.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "lattice_constant must be positive, got {}",
                self.lattice_constant
            )));
        }
        if !(self.supercell_radius > 0.0 && self.supercell_radius.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "supercell_radius must be positive, got {}",
                self.supercell_radius
            )));
        }
        validate_abundance(self.abundance)?;
        self.bond_index().map(|_| ())
    }

    fn bond_index(&self) -> Result<usize> {
        let axis = self
            .nv_axis
            .normalized()
            .ok_or_else(|| Error::InvalidInput("nv_axis must be a nonzero vector".into()))?;
        let s = 1.0 / 3f64.sqrt();
        BOND_DIRECTIONS
            .iter()
            .position(|b| {
                let d = axis - Vec3::new(b[0] as f64 * s, b[1] as f64 * s, b[2] as f64 * s);
                d.norm() < 1e-9
            })
            .ok_or_else(|| {
                Error::InvalidInput(
                    "nv_axis must be one of the vacancy bond directions [111], [1-1-1], [-11-1], [-1-11]"
                        .into(),
                )
            })
    }
}

fn validate_abundance(abundance: f64) -> Result<()> {
    if (0.0..=1.0).contains(&abundance) {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!(
            "abundance must lie in [0, 1], got {abundance}"
        )))
    }
}

/// Orthonormal NV frame (rows are the NV-frame axes in crystal coordinates).
#[derive(Debug, Clone, Copy)]
pub struct NvFrame {
    pub x: Vec3,
    pub y: Vec3,
    pub z: Vec3,
}

impl NvFrame {
    fn for_bond(bond: [i64; 3]) -> Self {
        let z = Vec3::new(bond[0] as f64, bond[1] as f64, bond[2] as f64)
            .normalized()
            .expect("bond vectors are nonzero");
        let reference = Vec3::new(1.0, 0.0, 0.0);
        let x = (reference - z * reference.dot(&z))
            .normalized()
            .expect("x axis is never parallel to a bond");
        let y = z.cross(&x);
        Self { x, y, z }
    }

    pub fn to_nv(&self, crystal: Vec3) -> Vec3 {
        Vec3::new(crystal.dot(&self.x), crystal.dot(&self.y), crystal.dot(&self.z))
    }
}

pub fn nv_frame(spec: &LatticeSpec) -> Result<NvFrame> {
    Ok(NvFrame::for_bond(BOND_DIRECTIONS[spec.bond_index()?]))
}

fn is_carbon_site(u: i64, v: i64, w: i64) -> bool {
    let sum = (u + v + w).rem_euclid(4);
    let all_even = u % 2 == 0 && v % 2 == 0 && w % 2 == 0;
    let all_odd = u % 2 != 0 && v % 2 != 0 && w % 2 != 0;
    (all_even && sum == 0) || (all_odd && sum == 1)
}

fn tie_key(p: &Vec3) -> [i64; 3] {
    [p.x, p.y, p.z].map(|c| (c / TIE_BREAK_RESOLUTION).round() as i64)
}

/// Distance first, then the rounded-coordinate tie-break. Squared distances
/// within 1e-12 relative count as equal (lattice shells are exact in integer
/// coordinates but not after rotation).
fn site_order(a: &Vec3, b: &Vec3) -> std::cmp::Ordering {
    let (ra, rb) = (a.dot(a), b.dot(b));
    if (ra - rb).abs() <= 1e-12 * ra.max(rb) {
        tie_key(a).cmp(&tie_key(b))
    } else {
        ra.total_cmp(&rb)
    }
}

/// All diamond carbon sites within the supercell, NV frame, nearest first.
/// The vacancy (origin) and nitrogen sites are excluded.
pub fn generate_lattice_sites(spec: &LatticeSpec) -> Result<Vec<Vec3>> {
    spec.validate()?;
    let bond = BOND_DIRECTIONS[spec.bond_index()?];
    let frame = NvFrame::for_bond(bond);
    let nitrogen = [-bond[0], -bond[1], -bond[2]];

    let quarter = spec.lattice_constant / 4.0;
    let reach = spec.supercell_radius / quarter;
    let limit = reach.ceil() as i64;
    let reach_sq = reach * reach;

    let mut sites: Vec<(i64, [i64; 3], Vec3)> = Vec::new();
    for u in -limit..=limit {
        for v in -limit..=limit {
            for w in -limit..=limit {
                if !is_carbon_site(u, v, w) || [u, v, w] == [0, 0, 0] || [u, v, w] == nitrogen {
                    continue;
                }
                let r_sq = u * u + v * v + w * w;
                if r_sq as f64 > reach_sq {
                    continue;
                }
                let crystal = Vec3::new(u as f64, v as f64, w as f64) * quarter;
                let nv = frame.to_nv(crystal);
                sites.push((r_sq, tie_key(&nv), nv));
            }
        }
    }
    if sites.is_empty() {
        return Err(Error::EmptyLattice {
            radius: spec.supercell_radius,
        });
    }
    sites.sort_by_key(|a| (a.0, a.1));
    Ok(sites.into_iter().map(|(_, _, p)| p).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct BathConfiguration {
    /// ¹³C positions in the NV frame (m), nearest first.
    pub positions: Vec<Vec3>,
    pub seed: u64,
    pub label: String,
    /// Number of nuclei requested when sampling.
    pub n_requested: usize,
}

impl BathConfiguration {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// True when the supercell yielded fewer occupied sites than requested.
    pub fn is_truncated(&self) -> bool {
        self.positions.len() < self.n_requested
    }

    /// The nearest `n` nuclei of this configuration.
    pub fn nearest(&self, n: usize) -> Result<BathConfiguration> {
        if n > self.len() {
            return Err(Error::SizeExceedsConfiguration {
                requested: n,
                max: self.len(),
            });
        }
        Ok(BathConfiguration {
            positions: self.positions[..n].to_vec(),
            seed: self.seed,
            label: format!("{} nearest={n}", self.label),
            n_requested: n,
        })
    }

    /// Adds a nucleus at `site`, keeping the distance ordering. Used to build
    /// configurations with a prescribed strongly coupled nucleus.
    pub fn with_site(&self, site: Vec3) -> Result<BathConfiguration> {
        if site.norm() == 0.0 {
            return Err(Error::ZeroPosition);
        }
        if self.positions.iter().any(|p| tie_key(p) == tie_key(&site)) {
            return Err(Error::InvalidInput("site is already occupied".into()));
        }
        let mut positions = self.positions.clone();
        let at = positions.partition_point(|p| site_order(p, &site).is_lt());
        positions.insert(at, site);
        Ok(BathConfiguration {
            positions,
            seed: self.seed,
            label: format!("{} +site", self.label),
            n_requested: self.n_requested + 1,
        })
    }
}

/// Independent Bernoulli occupancy per site with a seeded ChaCha8 stream,
/// keeping the `n_keep` occupied sites nearest the vacancy.
///
/// Sites are visited in the given order and one draw is consumed per visited
/// site, so the result is a pure function of `(sites, abundance, n_keep, seed)`.
pub fn sample_configuration(
    sites: &[Vec3],
    abundance: f64,
    n_keep: usize,
    seed: u64,
) -> Result<BathConfiguration> {
    if n_keep == 0 {
        return Err(Error::InvalidInput("n_keep must be at least 1".into()));
    }
    if sites.is_empty() {
        return Err(Error::InvalidInput("site list is empty".into()));
    }
    validate_abundance(abundance)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut positions = Vec::with_capacity(n_keep);
    for site in sites {
        if rng.random_bool(abundance) {
            positions.push(*site);
            if positions.len() == n_keep {
                break;
            }
        }
    }
    if positions.is_empty() {
        return Err(Error::NoOccupiedSites { seed, abundance });
    }
    let mut label = format!("seed={seed} n={} abundance={abundance}", positions.len());
    if positions.len() < n_keep {
        let _ = write!(
            label,
            " WARNING: only {} of {n_keep} requested sites occupied",
            positions.len()
        );
    }
    Ok(BathConfiguration {
        positions,
        seed,
        label,
        n_requested: n_keep,
    })
}

#[derive(Debug, Clone)]
pub struct SigmaMatch {
    pub configuration: BathConfiguration,
    pub seed: u64,
    /// Zero-field broadening width of the accepted configuration (rad/s).
    pub sigma: f64,
    /// Seeds examined, including the accepted one.
    pub trials: usize,
}

const FILTER_CHUNK: usize = 32;

/// Scans seeds `seed_start, seed_start + 1, …` for the first configuration
/// whose broadening width lies within `rel_tol` of `target_sigma`.
pub fn filter_by_target_sigma(
    spec: &LatticeSpec,
    n_keep: usize,
    target_sigma: f64,
    rel_tol: f64,
    seed_start: u64,
    max_trials: usize,
    constants: &PhysicalConstants,
) -> Result<SigmaMatch> {
    if !(target_sigma > 0.0 && target_sigma.is_finite()) {
        return Err(Error::InvalidInput("target_sigma must be positive".into()));
    }
    if !(rel_tol > 0.0 && rel_tol <= 1.0) {
        return Err(Error::InvalidInput("rel_tol must lie in (0, 1]".into()));
    }
    if max_trials == 0 {
        return Err(Error::InvalidInput("max_trials must be at least 1".into()));
    }
    let sites = generate_lattice_sites(spec)?;
    let sigma_of = |seed: u64| -> Result<(BathConfiguration, f64)> {
        let config = sample_configuration(&sites, spec.abundance, n_keep, seed)?;
        let couplings = hyperfine::couplings_for(&config, constants)?;
        let stats = hyperfine::broadening_stats(&couplings)?;
        Ok((config, stats.sigma_full))
    };

    let mut closest: Option<(f64, u64)> = None;
    let mut start = 0usize;
    while start < max_trials {
        let len = FILTER_CHUNK.min(max_trials - start);
        let results = par::map_range(len, |i| {
            let seed = seed_start.wrapping_add((start + i) as u64);
            (seed, sigma_of(seed))
        });
        for (offset, (seed, result)) in results.into_iter().enumerate() {
            // Empty draws and zero couplings are simply rejected trials.
            let Ok((configuration, sigma)) = result else {
                continue;
            };
            let gap = (sigma - target_sigma).abs();
            if gap <= rel_tol * target_sigma {
                return Ok(SigmaMatch {
                    configuration,
                    seed,
                    sigma,
                    trials: start + offset + 1,
                });
            }
            if closest.is_none_or(|(best, _)| gap < (best - target_sigma).abs()) {
                closest = Some((sigma, seed));
            }
        }
        start += len;
    }
    let (closest, closest_seed) = closest.unwrap_or((f64::NAN, seed_start));
    Err(Error::TargetNotReached {
        target: target_sigma,
        closest,
        closest_seed,
        trials: max_trials,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableHeader {
    pub seed: u64,
    pub lattice_constant: f64,
    pub abundance: f64,
    pub n_keep: usize,
    pub label: String,
}

/// Plain-text configuration table; numbers carry 17 significant digits so the
/// positions read back bit-exactly.
pub fn write_table(config: &BathConfiguration, spec: &LatticeSpec) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# spinbath bath configuration");
    let _ = writeln!(out, "# seed = {}", config.seed);
    let _ = writeln!(out, "# lattice_constant_m = {:.16e}", spec.lattice_constant);
    let _ = writeln!(out, "# abundance = {:.16e}", spec.abundance);
    let _ = writeln!(out, "# n_keep = {}", config.n_requested);
    let _ = writeln!(out, "# label = {}", config.label);
    let _ = writeln!(out, "index,x_m,y_m,z_m");
    for (i, p) in config.positions.iter().enumerate() {
        let _ = writeln!(out, "{i},{:.16e},{:.16e},{:.16e}", p.x, p.y, p.z);
    }
    out
}

pub fn read_table(text: &str) -> Result<(TableHeader, BathConfiguration)> {
    let bad = |msg: String| Error::InvalidInput(format!("configuration table: {msg}"));
    let mut seed = None;
    let mut lattice_constant = None;
    let mut abundance = None;
    let mut n_keep = None;
    let mut label = String::new();
    let mut positions = Vec::new();
    let mut seen_columns = false;

    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(meta) = line.strip_prefix('#') {
            if let Some((key, value)) = meta.split_once('=') {
                let value = value.trim();
                match key.trim() {
                    "seed" => seed = Some(value.parse().map_err(|e| bad(format!("seed: {e}")))?),
                    "lattice_constant_m" => {
                        lattice_constant =
                            Some(value.parse().map_err(|e| bad(format!("a0: {e}")))?)
                    }
                    "abundance" => {
                        abundance = Some(value.parse().map_err(|e| bad(format!("abundance: {e}")))?)
                    }
                    "n_keep" => n_keep = Some(value.parse().map_err(|e| bad(format!("n_keep: {e}")))?),
                    "label" => label = value.to_string(),
                    _ => {}
                }
            }
            continue;
        }
        if !seen_columns {
            if line != "index,x_m,y_m,z_m" {
                return Err(bad(format!("unexpected column header '{line}'")));
            }
            seen_columns = true;
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(bad(format!("row '{line}' does not have 4 fields")));
        }
        let index: usize = fields[0].parse().map_err(|e| bad(format!("index: {e}")))?;
        if index != positions.len() {
            return Err(bad(format!("row index {index} out of sequence")));
        }
        let coord = |s: &str| s.parse::<f64>().map_err(|e| bad(format!("coordinate '{s}': {e}")));
        positions.push(Vec3::new(coord(fields[1])?, coord(fields[2])?, coord(fields[3])?));
    }

    let header = TableHeader {
        seed: seed.ok_or_else(|| bad("missing seed".into()))?,
        lattice_constant: lattice_constant.ok_or_else(|| bad("missing lattice constant".into()))?,
        abundance: abundance.ok_or_else(|| bad("missing abundance".into()))?,
        n_keep: n_keep.ok_or_else(|| bad("missing n_keep".into()))?,
        label: label.clone(),
    };
    if positions.is_empty() {
        return Err(bad("no positions".into()));
    }
    let config = BathConfiguration {
        positions,
        seed: header.seed,
        label,
        n_requested: header.n_keep,
    };
    Ok((header, config))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec_with_radius(radius_in_a0: f64) -> LatticeSpec {
        LatticeSpec {
            supercell_radius: radius_in_a0 * DIAMOND_LATTICE_CONSTANT,
            ..LatticeSpec::default()
        }
    }

    /// Conventional cubic cell with the 8-atom basis, shifted so that a
    /// B-sublattice atom sits at the origin.
    fn brute_force_count(radius_in_a0: f64) -> usize {
        let basis = [
            [0.0, 0.0, 0.0],
            [0.0, 0.5, 0.5],
            [0.5, 0.0, 0.5],
            [0.5, 0.5, 0.0],
            [-0.25, -0.25, -0.25],
            [-0.25, 0.25, 0.25],
            [0.25, -0.25, 0.25],
            [0.25, 0.25, -0.25],
        ];
        let cells = radius_in_a0.ceil() as i64 + 1;
        let mut count = 0;
        for i in -cells..=cells {
            for j in -cells..=cells {
                for k in -cells..=cells {
                    for b in &basis {
                        let p = [i as f64 + b[0], j as f64 + b[1], k as f64 + b[2]];
                        let r = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
                        let is_vacancy = r == 0.0;
                        let is_nitrogen = p == [-0.25, -0.25, -0.25];
                        if r <= radius_in_a0 + 1e-12 && !is_vacancy && !is_nitrogen {
                            count += 1;
                        }
                    }
                }
            }
        }
        count
    }

    #[test]
    fn nearest_shell_has_three_carbons() {
        let sites = generate_lattice_sites(&spec_with_radius(0.9)).unwrap();
        let a0 = DIAMOND_LATTICE_CONSTANT;
        let bond = 3f64.sqrt() / 4.0 * a0;
        let shell: Vec<_> = sites.iter().filter(|p| (p.norm() - bond).abs() < 1e-15).collect();
        assert_eq!(shell.len(), 3);
        assert!((bond - 1.5446e-10).abs() < 1e-13);
        for p in &sites[..3] {
            assert!((p.norm() - bond).abs() < 1e-15);
        }
        assert!(sites[3].norm() > bond * 1.5);
    }

    #[test]
    fn site_count_matches_conventional_cell_enumeration() {
        let sites = generate_lattice_sites(&spec_with_radius(2.0)).unwrap();
        assert_eq!(sites.len(), brute_force_count(2.0));
        let volume = 4.0 / 3.0 * std::f64::consts::PI * 8.0;
        let ideal = 8.0 * volume - 2.0;
        assert!((sites.len() as f64 - ideal).abs() / ideal < 0.15);
    }

    #[test]
    fn sites_are_independent_of_abundance() {
        let a = generate_lattice_sites(&LatticeSpec {
            abundance: 0.011,
            ..spec_with_radius(3.0)
        })
        .unwrap();
        let b = generate_lattice_sites(&LatticeSpec {
            abundance: 1.0,
            ..spec_with_radius(3.0)
        })
        .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sites_sorted_unique_and_nonzero() {
        let sites = generate_lattice_sites(&spec_with_radius(4.0)).unwrap();
        for w in sites.windows(2) {
            let (ra, rb) = (w[0].norm(), w[1].norm());
            assert!(ra <= rb * (1.0 + 1e-12));
            assert_ne!(tie_key(&w[0]), tie_key(&w[1]));
        }
        assert!(sites.iter().all(|p| p.norm() > 0.0));
    }

    #[test]
    fn rotation_preserves_distances() {
        let spec = spec_with_radius(3.0);
        let frame = nv_frame(&spec).unwrap();
        let q = spec.lattice_constant / 4.0;
        for (u, v, w) in [(1, -1, 1), (2, 2, 0), (-3, 1, 1), (4, 0, -4), (3, 3, -1)] {
            let crystal = Vec3::new(u as f64, v as f64, w as f64) * q;
            let nv = frame.to_nv(crystal);
            assert!((nv.norm() - crystal.norm()).abs() / crystal.norm() < 1e-12);
        }
        // Nitrogen direction maps onto -z.
        let n = frame.to_nv(Vec3::new(-1.0, -1.0, -1.0));
        assert!((n.z + 3f64.sqrt()).abs() < 1e-12 && n.x.abs() < 1e-12 && n.y.abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_specs() {
        let spec = LatticeSpec {
            nv_axis: Vec3::new(0.0, 0.0, 1.0),
            ..LatticeSpec::default()
        };
        assert!(generate_lattice_sites(&spec).is_err());
        let spec = LatticeSpec {
            supercell_radius: 0.3 * DIAMOND_LATTICE_CONSTANT,
            ..LatticeSpec::default()
        };
        assert!(matches!(generate_lattice_sites(&spec), Err(Error::EmptyLattice { .. })));
        let spec = LatticeSpec {
            supercell_radius: -1.0,
            ..LatticeSpec::default()
        };
        assert!(spec.validate().is_err());
        let spec = LatticeSpec {
            abundance: 1.5,
            ..LatticeSpec::default()
        };
        assert!(spec.validate().is_err());
    }

    #[test]
    fn other_bond_axis_puts_nitrogen_on_axis() {
        let spec = LatticeSpec {
            nv_axis: Vec3::new(-1.0, 1.0, -1.0),
            ..spec_with_radius(1.2)
        };
        let sites = generate_lattice_sites(&spec).unwrap();
        let bond = 3f64.sqrt() / 4.0 * spec.lattice_constant;
        assert_eq!(sites.iter().filter(|p| (p.norm() - bond).abs() < 1e-15).count(), 3);
        // The three remaining bonds make cos θ = 1/3 with the NV axis.
        assert!(sites[..3].iter().all(|p| (p.z - bond / 3.0).abs() < 1e-15));
    }

    #[test]
    fn full_abundance_keeps_nearest_sites() {
        let sites = generate_lattice_sites(&spec_with_radius(3.0)).unwrap();
        let config = sample_configuration(&sites, 1.0, 5, 7).unwrap();
        assert_eq!(config.positions, sites[..5].to_vec());
        assert!(!config.is_truncated());
    }

    #[test]
    fn zero_abundance_is_an_error() {
        let sites = generate_lattice_sites(&spec_with_radius(3.0)).unwrap();
        assert!(matches!(
            sample_configuration(&sites, 0.0, 5, 1),
            Err(Error::NoOccupiedSites { .. })
        ));
        assert!(sample_configuration(&sites, 0.5, 0, 1).is_err());
        assert!(sample_configuration(&[], 0.5, 3, 1).is_err());
    }

    #[test]
    fn shortfall_is_flagged_in_label() {
        let sites = generate_lattice_sites(&spec_with_radius(2.0)).unwrap();
        let config = sample_configuration(&sites, 0.011, 500, 3).unwrap();
        assert!(config.is_truncated());
        assert!(config.label.contains("WARNING"));
    }

    #[test]
    fn sampling_is_deterministic_and_sorted() {
        let sites = generate_lattice_sites(&LatticeSpec::default()).unwrap();
        let a = sample_configuration(&sites, 0.011, 500, 42).unwrap();
        let b = sample_configuration(&sites, 0.011, 500, 42).unwrap();
        let c = sample_configuration(&sites, 0.011, 500, 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.positions, c.positions);
        assert_eq!(a.len(), 500);
        for w in a.positions.windows(2) {
            assert!(w[0].norm() <= w[1].norm() * (1.0 + 1e-12));
        }
    }

    #[test]
    fn mean_nearest_distance_matches_binomial_thinning() {
        let p = 0.011;
        let sites = generate_lattice_sites(&spec_with_radius(6.0)).unwrap();
        // P(first occupied site is i) = p (1-p)^i.
        let mut expected = 0.0;
        let mut survive = 1.0;
        let mut expected_sq = 0.0;
        for s in &sites {
            let r = s.norm();
            expected += r * p * survive;
            expected_sq += r * r * p * survive;
            survive *= 1.0 - p;
        }
        let std = (expected_sq - expected * expected).sqrt();
        let trials = 2000;
        let mean: f64 = (0..trials)
            .map(|seed| {
                sample_configuration(&sites, p, 1, seed as u64)
                    .unwrap()
                    .positions[0]
                    .norm()
            })
            .sum::<f64>()
            / trials as f64;
        // survive ~ 1e-15 here, so the truncated tail is negligible.
        assert!(survive < 1e-6);
        assert!(
            (mean - expected).abs() < 4.0 * std / (trials as f64).sqrt(),
            "mean {mean:e} expected {expected:e}"
        );
    }

    #[test]
    fn table_round_trip_is_exact() {
        let spec = LatticeSpec::default();
        let sites = generate_lattice_sites(&spec).unwrap();
        let config = sample_configuration(&sites, spec.abundance, 50, 11).unwrap();
        let text = write_table(&config, &spec);
        let (header, back) = read_table(&text).unwrap();
        assert_eq!(back, config);
        assert_eq!(header.seed, 11);
        assert_eq!(header.lattice_constant, spec.lattice_constant);
        assert_eq!(header.n_keep, 50);
    }

    #[test]
    fn with_site_keeps_order() {
        let sites = generate_lattice_sites(&spec_with_radius(3.0)).unwrap();
        let config = sample_configuration(&sites, 1.0, 10, 0).unwrap();
        let far = sample_configuration(&sites, 1.0, 20, 0).unwrap();
        let reduced = BathConfiguration {
            positions: config.positions[1..].to_vec(),
            ..config.clone()
        };
        let restored = reduced.with_site(config.positions[0]).unwrap();
        assert_eq!(restored.positions, config.positions);
        assert!(restored.with_site(config.positions[3]).is_err());
        assert_eq!(far.nearest(10).unwrap().positions, config.positions);
        assert!(config.nearest(11).is_err());
    }

    #[test]
    fn filter_accepts_first_seed_with_full_tolerance() {
        let spec = spec_with_radius(8.0);
        let constants = PhysicalConstants::default();
        let sites = generate_lattice_sites(&spec).unwrap();
        let first = sample_configuration(&sites, spec.abundance, 100, 900).unwrap();
        let sigma = hyperfine::broadening_stats(&hyperfine::couplings_for(&first, &constants).unwrap())
            .unwrap()
            .sigma_full;
        let m = filter_by_target_sigma(&spec, 100, 0.6 * sigma, 1.0, 900, 10, &constants).unwrap();
        assert_eq!(m.seed, 900);
        assert_eq!(m.trials, 1);
        assert_eq!(m.configuration, first);
        assert_eq!(m.sigma, sigma);
    }

    #[test]
    fn filter_scans_seeds_in_order() {
        let spec = spec_with_radius(8.0);
        let constants = PhysicalConstants::default();
        let sites = generate_lattice_sites(&spec).unwrap();
        let sigmas: Vec<f64> = (0..40u64)
            .map(|seed| {
                let c = sample_configuration(&sites, spec.abundance, 100, seed).unwrap();
                hyperfine::broadening_stats(&hyperfine::couplings_for(&c, &constants).unwrap())
                    .unwrap()
                    .sigma_full
            })
            .collect();
        let target = sigmas[37];
        let m = filter_by_target_sigma(&spec, 100, target, 1e-9, 0, 40, &constants).unwrap();
        let first = sigmas.iter().position(|s| (s - target).abs() <= 1e-9 * target).unwrap();
        assert_eq!(m.seed, first as u64);
    }

    #[test]
    fn unreachable_sigma_reports_closest() {
        let spec = spec_with_radius(6.0);
        let constants = PhysicalConstants::default();
        // Densest possible configuration bounds sigma from above.
        let sites = generate_lattice_sites(&spec).unwrap();
        let dense = sample_configuration(&sites, 1.0, 100, 0).unwrap();
        let bound = hyperfine::broadening_stats(&hyperfine::couplings_for(&dense, &constants).unwrap())
            .unwrap()
            .sigma_full;
        assert!(bound < 1e12 / 2.0);
        let err = filter_by_target_sigma(&spec, 100, 1e12, 0.1, 0, 20, &constants).unwrap_err();
        match err {
            Error::TargetNotReached { closest, trials, .. } => {
                assert_eq!(trials, 20);
                assert!(closest > 0.0 && closest <= bound);
            }
            other => panic!("unexpected {other}"),
        }
    }
}
