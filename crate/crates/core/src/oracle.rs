//! Brute-force free-induction decay on the full 2^N bath Hilbert space.
//!
//! Builds the two bath Hamiltonians conditioned on the central-spin state,
//!
//! ```text
//! H₀  = Σⱼ γ_C B Iⱼᶻ
//! H₋₁ = Σⱼ (−𝐀ⱼ·𝐈ⱼ + γ_C B Iⱼᶻ)
//! ```
//!
//! diagonalizes them, and evaluates L(t) = 2^{−N} Tr[e^{iH₀t} e^{−iH₋₁t}].
//! Nothing here uses the single-spin factorization, so agreement with
//! [`crate::dynamics::envelope`] is a real check of it.

use faer::{c64, Mat, Side};

use crate::dynamics::{FieldPoint, TimeGrid};
use crate::error::{Error, Result};
use crate::hyperfine::{HyperfineVector, PhysicalConstants};
use crate::par;

/// Largest bath the oracle accepts (dimension 4096).
pub const MAX_SPINS: usize = 12;

const IMAGINARY_TOLERANCE: f64 = 1e-10;

/// Dense Hermitian operator on the bath space. Bit j of a basis index is 0
/// for spin j up and 1 for spin j down.
#[derive(Debug, Clone)]
pub struct DenseOperator {
    pub n_spins: usize,
    pub matrix: Mat<c64>,
}

impl DenseOperator {
    pub fn dimension(&self) -> usize {
        1 << self.n_spins
    }

    /// max |H − H†| over all entries.
    pub fn hermiticity_defect(&self) -> f64 {
        let n = self.dimension();
        let m = &self.matrix;
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in 0..=i {
                let d = m[(i, j)] - m[(j, i)].conj();
                worst = worst.max(d.norm());
            }
        }
        worst
    }

    fn is_diagonal(&self) -> bool {
        let n = self.dimension();
        (0..n).all(|i| (0..n).all(|j| i == j || self.matrix[(i, j)] == c64::new(0.0, 0.0)))
    }
}

fn check_size(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidInput("oracle needs at least one nucleus".into()));
    }
    if n > MAX_SPINS {
        return Err(Error::OracleTooLarge { n, max: MAX_SPINS });
    }
    Ok(())
}

/// Σⱼ hⱼ with hⱼ = −𝐀ⱼ·𝐈ⱼ·`coupling_sign` + γ_C B Iⱼᶻ, where 𝐈 = σ/2.
fn assemble(
    couplings: &[HyperfineVector],
    larmor: f64,
    coupling_sign: f64,
) -> Result<DenseOperator> {
    let n_spins = couplings.len();
    check_size(n_spins)?;
    let dim = 1usize << n_spins;
    let mut m = Mat::<c64>::zeros(dim, dim);
    for s in 0..dim {
        let mut diag = 0.0;
        for (j, a) in couplings.iter().enumerate() {
            let up = s & (1 << j) == 0;
            let z = if up { 0.5 } else { -0.5 };
            diag += (larmor - coupling_sign * a.az) * z;
            if !up {
                // ⟨↑|hⱼ|↓⟩ = −(A_x − i A_y)/2 for the coupling term.
                let partner = s & !(1 << j);
                let element = c64::new(-coupling_sign * a.ax * 0.5, coupling_sign * a.ay * 0.5);
                m[(partner, s)] += element;
                m[(s, partner)] += element.conj();
            }
        }
        m[(s, s)] = c64::new(diag, 0.0);
    }
    let op = DenseOperator {
        n_spins,
        matrix: m,
    };
    let scale = couplings
        .iter()
        .map(|a| a.magnitude)
        .fold(larmor.abs(), f64::max)
        .max(f64::MIN_POSITIVE);
    let defect = op.hermiticity_defect();
    if defect > 1e-14 * scale * n_spins as f64 {
        return Err(Error::NonHermitian(defect));
    }
    Ok(op)
}

/// H₀ = Σⱼ γ_C B Iⱼᶻ on N spins.
pub fn zeeman_hamiltonian(
    n_spins: usize,
    field: FieldPoint,
    constants: &PhysicalConstants,
) -> Result<DenseOperator> {
    let zero = vec![HyperfineVector::new(0.0, 0.0, 0.0); n_spins];
    assemble(&zero, constants.larmor(field.tesla), 0.0)
}

/// H₋₁ = Σⱼ (−𝐀ⱼ·𝐈ⱼ + γ_C B Iⱼᶻ).
pub fn conditional_hamiltonian(
    couplings: &[HyperfineVector],
    field: FieldPoint,
    constants: &PhysicalConstants,
) -> Result<DenseOperator> {
    assemble(couplings, constants.larmor(field.tesla), 1.0)
}

#[derive(Debug, Clone)]
pub struct Eigensystem {
    pub values: Vec<f64>,
    /// Columns are eigenvectors; `None` when the operator is already diagonal
    /// in the computational basis.
    pub vectors: Option<Mat<c64>>,
}

pub fn eigensystem(op: &DenseOperator) -> Result<Eigensystem> {
    let n = op.dimension();
    if op.is_diagonal() {
        return Ok(Eigensystem {
            values: (0..n).map(|i| op.matrix[(i, i)].re).collect(),
            vectors: None,
        });
    }
    let evd = op
        .matrix
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Eigen(format!("{e:?}")))?;
    let s = evd.S();
    let values = (0..n).map(|i| s[i].re).collect();
    Ok(Eigensystem {
        values,
        vectors: Some(evd.U().to_owned()),
    })
}

impl Eigensystem {
    /// ‖V†V − I‖_max; zero for the computational basis.
    pub fn unitarity_defect(&self) -> f64 {
        let Some(v) = &self.vectors else {
            return 0.0;
        };
        let g = v.adjoint() * v;
        let n = g.nrows();
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((g[(i, j)] - c64::new(target, 0.0)).norm());
            }
        }
        worst
    }
}

/// |⟨a|k⟩|² between the eigenbases of H₀ (rows) and H₋₁ (columns), row-major.
fn overlap_weights(zeeman: &Eigensystem, conditional: &Eigensystem) -> Vec<f64> {
    let n = zeeman.values.len();
    let mut w = vec![0.0; n * n];
    match (&zeeman.vectors, &conditional.vectors) {
        (None, None) => {
            for a in 0..n {
                w[a * n + a] = 1.0;
            }
        }
        (None, Some(v1)) => {
            for a in 0..n {
                for k in 0..n {
                    w[a * n + k] = v1[(a, k)].norm_sqr();
                }
            }
        }
        (Some(v0), None) => {
            for a in 0..n {
                for k in 0..n {
                    w[a * n + k] = v0[(k, a)].norm_sqr();
                }
            }
        }
        (Some(v0), Some(v1)) => {
            let overlap = v0.adjoint() * v1;
            for a in 0..n {
                for k in 0..n {
                    w[a * n + k] = overlap[(a, k)].norm_sqr();
                }
            }
        }
    }
    w
}

/// Normalized trace 2^{−N} Tr[e^{iH₀t} e^{−iH₋₁t}] on the grid.
pub fn fid_bruteforce(
    couplings: &[HyperfineVector],
    field: FieldPoint,
    grid: &TimeGrid,
    constants: &PhysicalConstants,
) -> Result<Vec<f64>> {
    check_size(couplings.len())?;
    let h0 = zeeman_hamiltonian(couplings.len(), field, constants)?;
    let h1 = conditional_hamiltonian(couplings, field, constants)?;
    let e0 = eigensystem(&h0)?;
    let e1 = eigensystem(&h1)?;
    let weights = overlap_weights(&e0, &e1);
    let n = e0.values.len();
    let norm = 1.0 / n as f64;

    let traces = par::map_slice(grid.times(), |&t| {
        let phases1: Vec<c64> = e1
            .values
            .iter()
            .map(|&e| c64::from_polar(1.0, -e * t))
            .collect();
        let mut total = c64::new(0.0, 0.0);
        for (a, &e) in e0.values.iter().enumerate() {
            let row = &weights[a * n..(a + 1) * n];
            let mut inner = c64::new(0.0, 0.0);
            for (w, p) in row.iter().zip(&phases1) {
                inner += p * *w;
            }
            total += c64::from_polar(1.0, e * t) * inner;
        }
        total * norm
    });

    traces
        .into_iter()
        .map(|z| {
            if z.im.abs() > IMAGINARY_TOLERANCE {
                Err(Error::ComplexTrace(z.im))
            } else {
                Ok(z.re)
            }
        })
        .collect()
}
