//! Two-copy swap observables and symmetric-subspace state preparation.
//!
//! Throughout, a two-copy register of `2m` qubits pairs qubit `i` of copy
//! alpha (qubits `0..m`) with qubit `m+i` of copy beta.

use ndarray::Array2;
use rand::Rng;

use crate::circuit::{Circuit, GateOp, ParamVector};
use crate::error::{Error, Result};
use crate::statekit::{DensityOperator, PureState, UnitaryMatrix, C64, MAX_QUBITS};

fn check_copy_size(m: usize) -> Result<()> {
    if m == 0 || 2 * m > MAX_QUBITS {
        return Err(Error::InvalidArgument(format!(
            "two-copy register needs 1 <= m <= {}, got {m}",
            MAX_QUBITS / 2
        )));
    }
    Ok(())
}

/// The unitary, Hermitian operator exchanging the two m-qubit copies:
/// `S |x>|y> = |y>|x>`. Eigenvalues are +1 on the symmetric subspace and
/// -1 on the antisymmetric one.
pub fn swap_operator(m: usize) -> Result<UnitaryMatrix> {
    check_copy_size(m)?;
    let d = 1usize << m;
    let mut s = Array2::zeros((d * d, d * d));
    for x in 0..d {
        for y in 0..d {
            s[[y * d + x, x * d + y]] = C64::ONE;
        }
    }
    Ok(UnitaryMatrix::from_raw(2 * m, s))
}

/// The normalized projector onto the symmetric subspace of two m-qubit
/// copies: `tau = (I + S) / (d^2 + d)` with `d = 2^m`. This is the Haar
/// average of `|psi><psi| (x) |psi><psi|`.
pub fn symmetric_tau(m: usize) -> Result<DensityOperator> {
    check_copy_size(m)?;
    let d = 1usize << m;
    let s = swap_operator(m)?;
    let scale = C64::new(1.0 / ((d * d + d) as f64), 0.0);
    let matrix = (&Array2::<C64>::eye(d * d) + s.matrix()) * scale;
    Ok(DensityOperator::from_raw(2 * m, matrix))
}

pub(crate) fn sample_symmetric_pair_ints<R: Rng + ?Sized>(
    m: usize,
    rng: &mut R,
) -> (usize, usize, u64) {
    let d = 1u64 << m;
    let mut attempts = 0u64;
    loop {
        attempts += 1;
        let z1 = rng.random_range(0..d) as usize;
        let z2 = rng.random_range(0..d) as usize;
        if (z1 & z2).count_ones() % 2 == 0 {
            return (z1, z2, attempts);
        }
    }
}

fn int_to_bits(z: usize, m: usize) -> Vec<u8> {
    (0..m).map(|i| ((z >> (m - 1 - i)) & 1) as u8).collect()
}

pub(crate) fn bits_to_int(bits: &[u8]) -> usize {
    bits.iter().fold(0usize, |acc, &b| (acc << 1) | b as usize)
}

/// Draws `(z1, z2)` uniformly from the pairs of m-bit strings with even
/// overlap `z1 . z2`, by rejection. Bit `i` of each string belongs to
/// qubit `i` of the corresponding copy.
pub fn sample_symmetric_pair<R: Rng + ?Sized>(m: usize, rng: &mut R) -> (Vec<u8>, Vec<u8>) {
    let (z1, z2, _) = sample_symmetric_pair_ints(m, rng);
    (int_to_bits(z1, m), int_to_bits(z2, m))
}

/// Like [`sample_symmetric_pair`] but also reports how many candidate pairs
/// the rejection loop consumed (1 = accepted immediately).
pub fn sample_symmetric_pair_counted<R: Rng + ?Sized>(
    m: usize,
    rng: &mut R,
) -> ((Vec<u8>, Vec<u8>), u64) {
    let (z1, z2, attempts) = sample_symmetric_pair_ints(m, rng);
    ((int_to_bits(z1, m), int_to_bits(z2, m)), attempts)
}

/// Gate sequence turning `|z1>|z2>` into the Bell-basis state
/// `(X^z1 (x) Z^z2) |Phi+>` per pair: H on each beta qubit, then CNOT with
/// the beta qubit as control and its alpha partner as target.
pub(crate) fn bell_prep_circuit(m: usize) -> Circuit {
    let mut gates = Vec::with_capacity(2 * m);
    for i in 0..m {
        gates.push(GateOp::h(m + i));
        gates.push(GateOp::cnot(m + i, i));
    }
    Circuit::from_gates(2 * m, 0, gates).expect("static prep circuit is valid")
}

/// The inverse of [`bell_prep_circuit`]: CNOT (beta control, alpha target)
/// then H on beta, mapping each Bell-basis state back to `|z1>|z2>`. This is
/// the destructive swap test's basis change.
pub(crate) fn bell_measure_circuit(m: usize) -> Circuit {
    let mut gates = Vec::with_capacity(2 * m);
    for i in 0..m {
        gates.push(GateOp::cnot(m + i, i));
        gates.push(GateOp::h(m + i));
    }
    Circuit::from_gates(2 * m, 0, gates).expect("static measure circuit is valid")
}

/// Prepares the Bell-basis state labeled by `(z1, z2)` on `2m` qubits,
/// `|Psi_{z1,z2}> = prod_i (X^{z1_i} (x) Z^{z2_i}) |Phi+>_i`.
pub fn prepare_bell_pair_state(z1: &[u8], z2: &[u8]) -> Result<PureState> {
    let m = z1.len();
    if z2.len() != m {
        return Err(Error::DimensionMismatch(format!(
            "bit strings of length {m} and {}",
            z2.len()
        )));
    }
    check_copy_size(m)?;
    if z1.iter().chain(z2.iter()).any(|&b| b > 1) {
        return Err(Error::InvalidArgument("bit strings must be 0/1 valued".into()));
    }
    let index = (bits_to_int(z1) << m) | bits_to_int(z2);
    let basis = PureState::basis_state(2 * m, index)?;
    bell_prep_circuit(m).apply(&ParamVector::zeros(0), &basis)
}
