//! Dense states, density operators, and unitaries for small qubit registers.
//!
//! Everything is stored densely: registers are capped at [`MAX_QUBITS`] qubits,
//! which keeps the largest state vector at 4096 amplitudes. Qubit 0 is the most
//! significant bit of a basis index throughout the crate, so for an `n`-qubit
//! register the basis label of index `x` reads off the qubits left to right:
//! `|q0 q1 ... q(n-1)>` with `q0 = x >> (n-1) & 1`.
//!
//! Haar-random sampling is deterministic given a seeded generator, which the
//! estimator and experiment layers rely on for reproducibility.

pub mod linalg;

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub use linalg::C64;

/// Largest register any state, operator, or circuit may act on.
/// Doubled two-copy registers for 4-qubit circuits need 8.
pub const MAX_QUBITS: usize = 12;

fn check_register(num_qubits: usize) -> Result<()> {
    if num_qubits == 0 || num_qubits > MAX_QUBITS {
        return Err(Error::InvalidArgument(format!(
            "register must have between 1 and {MAX_QUBITS} qubits, got {num_qubits}",
        )));
    }
    Ok(())
}

fn qubits_for_dim(dim: usize, what: &str) -> Result<usize> {
    if dim < 2 || !dim.is_power_of_two() {
        return Err(Error::DimensionMismatch(format!(
            "{what} dimension {dim} is not a power of two",
        )));
    }
    let n = dim.trailing_zeros() as usize;
    check_register(n)?;
    Ok(n)
}

/// Bit position (from the least significant end) of qubit `q` in an `n`-qubit index.
#[inline]
pub(crate) fn bit_pos(num_qubits: usize, qubit: usize) -> usize {
    num_qubits - 1 - qubit
}

/// A normalized pure state on a small register.
#[derive(Debug, Clone, PartialEq)]
pub struct PureState {
    num_qubits: usize,
    amplitudes: Array1<C64>,
}

impl PureState {
    /// The all-zeros computational basis state.
    pub fn zero(num_qubits: usize) -> Result<Self> {
        Self::basis_state(num_qubits, 0)
    }

    /// The computational basis state `|index>`.
    pub fn basis_state(num_qubits: usize, index: usize) -> Result<Self> {
        check_register(num_qubits)?;
        let dim = 1 << num_qubits;
        if index >= dim {
            return Err(Error::InvalidIndex(format!(
                "basis index {index} out of range for {num_qubits} qubits",
            )));
        }
        let mut amplitudes = Array1::zeros(dim);
        amplitudes[index] = C64::ONE;
        Ok(Self { num_qubits, amplitudes })
    }

    /// Builds a state from raw amplitudes. The vector must have power-of-two
    /// length and unit norm within 1e-8.
    pub fn from_amplitudes(amplitudes: Vec<C64>) -> Result<Self> {
        let num_qubits = qubits_for_dim(amplitudes.len(), "state")?;
        let amplitudes = Array1::from_vec(amplitudes);
        let norm = amplitudes.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-8 {
            return Err(Error::NotUnitary(format!("state norm {norm} differs from 1")));
        }
        Ok(Self { num_qubits, amplitudes })
    }

    pub(crate) fn from_raw(num_qubits: usize, amplitudes: Array1<C64>) -> Self {
        debug_assert_eq!(amplitudes.len(), 1 << num_qubits);
        Self { num_qubits, amplitudes }
    }

    pub fn num_qubits(&self) -> usize {
        self.num_qubits
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn amplitudes(&self) -> &Array1<C64> {
        &self.amplitudes
    }

    pub(crate) fn amplitudes_mut(&mut self) -> &mut Array1<C64> {
        &mut self.amplitudes
    }

    /// `<self|other>`.
    pub fn inner(&self, other: &Self) -> Result<C64> {
        if self.num_qubits != other.num_qubits {
            return Err(Error::DimensionMismatch(format!(
                "inner product between {} and {} qubit states",
                self.num_qubits, other.num_qubits
            )));
        }
        Ok(self
            .amplitudes
            .iter()
            .zip(other.amplitudes.iter())
            .map(|(a, b)| a.conj() * b)
            .sum())
    }

    /// Tensor product; `self` occupies the more significant qubits of the result.
    pub fn tensor(&self, other: &Self) -> Result<Self> {
        let num_qubits = self.num_qubits + other.num_qubits;
        check_register(num_qubits)?;
        Ok(Self {
            num_qubits,
            amplitudes: linalg::kron_vec(&self.amplitudes, &other.amplitudes),
        })
    }

    /// The rank-one projector `|self><self|`.
    pub fn outer(&self) -> DensityOperator {
        let d = self.dim();
        let mut matrix = Array2::zeros((d, d));
        for i in 0..d {
            for j in 0..d {
                matrix[[i, j]] = self.amplitudes[i] * self.amplitudes[j].conj();
            }
        }
        DensityOperator { num_qubits: self.num_qubits, matrix }
    }

    /// The reduced density operator on the `keep` qubits, tracing out the
    /// rest. Equivalent to `outer().partial_trace(keep)` but skips the full
    /// outer product.
    pub fn reduced_density(&self, keep: &[usize]) -> Result<DensityOperator> {
        if keep.is_empty() {
            return Err(Error::InvalidArgument("reduced_density keep set is empty".into()));
        }
        let mut kept: Vec<usize> = keep.to_vec();
        kept.sort_unstable();
        kept.dedup();
        if kept.len() != keep.len() {
            return Err(Error::InvalidArgument("reduced_density keep set repeats a qubit".into()));
        }
        if let Some(&bad) = kept.iter().find(|&&q| q >= self.num_qubits) {
            return Err(Error::InvalidIndex(format!(
                "reduced_density qubit {bad} out of range for {} qubits",
                self.num_qubits
            )));
        }
        let traced: Vec<usize> = (0..self.num_qubits).filter(|q| !kept.contains(q)).collect();
        let keep_positions: Vec<usize> =
            kept.iter().map(|&q| bit_pos(self.num_qubits, q)).collect();
        let traced_positions: Vec<usize> =
            traced.iter().map(|&q| bit_pos(self.num_qubits, q)).collect();
        let dk = 1usize << kept.len();
        let dt = 1usize << traced.len();
        let expand = |sub: usize, positions: &[usize]| -> usize {
            let mut out = 0usize;
            for (local, &pos) in positions.iter().enumerate() {
                let bit = (sub >> (positions.len() - 1 - local)) & 1;
                out |= bit << pos;
            }
            out
        };
        // rho = sum over traced assignments t of |v_t><v_t|, v_t[a] = psi[a|t]
        let mut reduced = Array2::zeros((dk, dk));
        let mut slice = vec![C64::ZERO; dk];
        for t in 0..dt {
            let tail = expand(t, &traced_positions);
            for (a, v) in slice.iter_mut().enumerate() {
                *v = self.amplitudes[expand(a, &keep_positions) | tail];
            }
            for a in 0..dk {
                for b in 0..dk {
                    reduced[[a, b]] += slice[a] * slice[b].conj();
                }
            }
        }
        Ok(DensityOperator { num_qubits: kept.len(), matrix: reduced })
    }
}

/// A density operator on a small register. Public constructors check
/// hermiticity and unit trace; positivity is checked by [`DensityOperator::validate`],
/// which is meant for tests rather than hot paths.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityOperator {
    num_qubits: usize,
    matrix: Array2<C64>,
}

impl DensityOperator {
    pub fn from_matrix(matrix: Array2<C64>) -> Result<Self> {
        let (r, c) = matrix.dim();
        if r != c {
            return Err(Error::DimensionMismatch(format!(
                "density operator must be square, got {r}x{c}",
            )));
        }
        let num_qubits = qubits_for_dim(r, "density operator")?;
        let trace: C64 = (0..r).map(|i| matrix[[i, i]]).sum();
        if (trace - C64::ONE).norm() > 1e-8 {
            return Err(Error::InvalidDensity(format!("trace {trace} differs from 1")));
        }
        for i in 0..r {
            for j in i..r {
                if (matrix[[i, j]] - matrix[[j, i]].conj()).norm() > 1e-8 {
                    return Err(Error::InvalidDensity(format!(
                        "not Hermitian at ({i},{j})",
                    )));
                }
            }
        }
        Ok(Self { num_qubits, matrix })
    }

    pub fn from_pure(state: &PureState) -> Self {
        state.outer()
    }

    pub fn maximally_mixed(num_qubits: usize) -> Result<Self> {
        check_register(num_qubits)?;
        let d = 1 << num_qubits;
        let matrix = Array2::eye(d) / C64::new(d as f64, 0.0);
        Ok(Self { num_qubits, matrix })
    }

    pub(crate) fn from_raw(num_qubits: usize, matrix: Array2<C64>) -> Self {
        debug_assert_eq!(matrix.nrows(), 1 << num_qubits);
        Self { num_qubits, matrix }
    }

    pub fn num_qubits(&self) -> usize {
        self.num_qubits
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &Array2<C64> {
        &self.matrix
    }

    /// Tensor product; `self` occupies the more significant qubits of the result.
    pub fn tensor(&self, other: &Self) -> Result<Self> {
        let num_qubits = self.num_qubits + other.num_qubits;
        check_register(num_qubits)?;
        Ok(Self {
            num_qubits,
            matrix: linalg::kron(&self.matrix, &other.matrix),
        })
    }

    /// Traces out every qubit not listed in `keep`. The kept qubits, in
    /// increasing index order, become the qubits of the reduced operator.
    pub fn partial_trace(&self, keep: &[usize]) -> Result<DensityOperator> {
        if keep.is_empty() {
            return Err(Error::InvalidArgument("partial_trace keep set is empty".into()));
        }
        let mut kept: Vec<usize> = keep.to_vec();
        kept.sort_unstable();
        kept.dedup();
        if kept.len() != keep.len() {
            return Err(Error::InvalidArgument("partial_trace keep set repeats a qubit".into()));
        }
        if let Some(&bad) = kept.iter().find(|&&q| q >= self.num_qubits) {
            return Err(Error::InvalidIndex(format!(
                "partial_trace qubit {bad} out of range for {} qubits",
                self.num_qubits
            )));
        }
        let traced: Vec<usize> =
            (0..self.num_qubits).filter(|q| !kept.contains(q)).collect();
        let keep_positions: Vec<usize> =
            kept.iter().map(|&q| bit_pos(self.num_qubits, q)).collect();
        let traced_positions: Vec<usize> =
            traced.iter().map(|&q| bit_pos(self.num_qubits, q)).collect();

        let dk = 1usize << kept.len();
        let dt = 1usize << traced.len();
        // expand a compact sub-index into the full index at the given positions
        let expand = |sub: usize, positions: &[usize]| -> usize {
            let mut out = 0usize;
            for (local, &pos) in positions.iter().enumerate() {
                // local bit 0 is the most significant kept qubit
                let bit = (sub >> (positions.len() - 1 - local)) & 1;
                out |= bit << pos;
            }
            out
        };
        let mut reduced = Array2::zeros((dk, dk));
        for i in 0..dk {
            let base_i = expand(i, &keep_positions);
            for j in 0..dk {
                let base_j = expand(j, &keep_positions);
                let mut sum = C64::ZERO;
                for t in 0..dt {
                    let tail = expand(t, &traced_positions);
                    sum += self.matrix[[base_i | tail, base_j | tail]];
                }
                reduced[[i, j]] = sum;
            }
        }
        Ok(DensityOperator { num_qubits: kept.len(), matrix: reduced })
    }

    /// `Tr[rho^2]`. Relies on hermiticity, which constructors enforce.
    pub fn purity(&self) -> f64 {
        self.matrix.iter().map(|c| c.norm_sqr()).sum()
    }

    /// Linear entropy `1 - Tr[rho^2]`.
    pub fn linear_entropy(&self) -> f64 {
        1.0 - self.purity()
    }

    /// Full validation: hermiticity, unit trace, positive semidefiniteness
    /// within 1e-10. Runs an eigenvalue decomposition, so keep it out of
    /// hot loops.
    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        let trace: C64 = (0..d).map(|i| self.matrix[[i, i]]).sum();
        if (trace - C64::ONE).norm() > 1e-8 {
            return Err(Error::InvalidDensity(format!("trace {trace}")));
        }
        let defect = linalg::max_abs_diff(&self.matrix, &linalg::adjoint(&self.matrix));
        if defect > 1e-8 {
            return Err(Error::InvalidDensity(format!("hermiticity defect {defect}")));
        }
        let min_ev = linalg::hermitian_eigenvalues(&self.matrix)
            .into_iter()
            .fold(f64::INFINITY, f64::min);
        if min_ev < -1e-10 {
            return Err(Error::InvalidDensity(format!("negative eigenvalue {min_ev}")));
        }
        Ok(())
    }
}

/// A unitary matrix on a small register. Construction checks unitarity to 1e-10.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitaryMatrix {
    num_qubits: usize,
    matrix: Array2<C64>,
}

impl UnitaryMatrix {
    pub fn identity(num_qubits: usize) -> Result<Self> {
        check_register(num_qubits)?;
        Ok(Self { num_qubits, matrix: Array2::eye(1 << num_qubits) })
    }

    pub fn from_matrix(matrix: Array2<C64>) -> Result<Self> {
        let (r, c) = matrix.dim();
        if r != c {
            return Err(Error::DimensionMismatch(format!(
                "unitary must be square, got {r}x{c}",
            )));
        }
        let num_qubits = qubits_for_dim(r, "unitary")?;
        let defect = linalg::unitarity_defect(&matrix);
        if defect > 1e-10 {
            return Err(Error::NotUnitary(format!("unitarity defect {defect}")));
        }
        Ok(Self { num_qubits, matrix })
    }

    pub(crate) fn from_raw(num_qubits: usize, matrix: Array2<C64>) -> Self {
        debug_assert!(linalg::unitarity_defect(&matrix) < 1e-8);
        Self { num_qubits, matrix }
    }

    pub fn num_qubits(&self) -> usize {
        self.num_qubits
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &Array2<C64> {
        &self.matrix
    }

    pub fn adjoint(&self) -> Self {
        Self { num_qubits: self.num_qubits, matrix: linalg::adjoint(&self.matrix) }
    }

    /// Tensor product; `self` occupies the more significant qubits of the result.
    pub fn tensor(&self, other: &Self) -> Result<Self> {
        let num_qubits = self.num_qubits + other.num_qubits;
        check_register(num_qubits)?;
        Ok(Self {
            num_qubits,
            matrix: linalg::kron(&self.matrix, &other.matrix),
        })
    }

    /// `self * other` as operators (`other` acts first).
    pub fn compose(&self, other: &Self) -> Result<Self> {
        if self.num_qubits != other.num_qubits {
            return Err(Error::DimensionMismatch(format!(
                "composing {} and {} qubit unitaries",
                self.num_qubits, other.num_qubits
            )));
        }
        Ok(Self { num_qubits: self.num_qubits, matrix: self.matrix.dot(&other.matrix) })
    }

    /// Applies the unitary to a pure state.
    pub fn apply(&self, state: &PureState) -> Result<PureState> {
        if self.num_qubits != state.num_qubits {
            return Err(Error::DimensionMismatch(format!(
                "applying a {} qubit unitary to a {} qubit state",
                self.num_qubits, state.num_qubits
            )));
        }
        Ok(PureState::from_raw(self.num_qubits, self.matrix.dot(&state.amplitudes)))
    }
}

/// Haar-random pure state: a normalized vector of iid complex Gaussians.
pub fn haar_random_state<R: Rng + ?Sized>(num_qubits: usize, rng: &mut R) -> Result<PureState> {
    check_register(num_qubits)?;
    let dim = 1 << num_qubits;
    let mut amplitudes = Array1::zeros(dim);
    let mut norm_sqr = 0.0;
    for i in 0..dim {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        let a = C64::new(re, im);
        norm_sqr += a.norm_sqr();
        amplitudes[i] = a;
    }
    let norm = norm_sqr.sqrt();
    amplitudes.mapv_inplace(|a| a / norm);
    Ok(PureState::from_raw(num_qubits, amplitudes))
}

/// Haar-random unitary: QR of an iid complex Gaussian matrix with the
/// R-diagonal phase correction.
pub fn haar_random_unitary<R: Rng + ?Sized>(
    num_qubits: usize,
    rng: &mut R,
) -> Result<UnitaryMatrix> {
    check_register(num_qubits)?;
    let dim = 1 << num_qubits;
    let gaussian = Array2::from_shape_fn((dim, dim), |_| {
        C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
    });
    let q = linalg::qr_haar(gaussian);
    Ok(UnitaryMatrix { num_qubits, matrix: q })
}
