//! Cost functions: gate fidelity, HST/LHST, the decoupling cost in exact,
//! shot-sampled, and Monte-Carlo modes, and the fidelity bound.
//!
//! The decoupling cost of a circuit `W` with respect to a partition is the
//! normalized Haar-average linear entropy `W` generates between the
//! partition's blocks: `norm * (1 - mean_k <S_k>)`, where `S_k` swaps the two
//! copies of block `k` in a doubled register fed with symmetric two-copy
//! inputs. It is 0 exactly when `W` factors over the bipartition (possibly
//! composed with the block swap), which makes it a trainable proxy for
//! divide-and-conquer compilation.

mod mc;
mod realign;
mod shots;
mod swap;

pub use swap::{
    prepare_bell_pair_state, sample_symmetric_pair, sample_symmetric_pair_counted, swap_operator,
    symmetric_tau,
};

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::circuit::{Circuit, DoubledBinding, ParamVector, ShiftCopy};
use crate::error::{Error, Result};
use crate::statekit::{linalg, PureState, UnitaryMatrix, C64, MAX_QUBITS};

pub(crate) use realign::ExactEngine;
pub(crate) use shots::derive_seed;

/// A division of a register into disjoint, covering qubit blocks, plus the
/// subset of block indices that the decoupling cost scores. Non-scored blocks
/// still receive symmetric inputs but do not enter the cost; they act as
/// spectators when refining an earlier decoupling.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    blocks: Vec<Vec<usize>>,
    scored: Vec<usize>,
}

impl Partition {
    /// Validates that `blocks` are nonempty, disjoint, and cover `0..n`
    /// exactly, and that `scored` names existing blocks.
    pub fn new(blocks: Vec<Vec<usize>>, scored: Vec<usize>) -> Result<Self> {
        if blocks.is_empty() {
            return Err(Error::InvalidPartition("no blocks".into()));
        }
        let mut blocks: Vec<Vec<usize>> = blocks;
        let mut seen = std::collections::BTreeSet::new();
        for block in &mut blocks {
            if block.is_empty() {
                return Err(Error::InvalidPartition("empty block".into()));
            }
            block.sort_unstable();
            for &q in block.iter() {
                if !seen.insert(q) {
                    return Err(Error::InvalidPartition(format!("qubit {q} appears twice")));
                }
            }
        }
        let n = *seen.iter().next_back().expect("nonempty") + 1;
        if seen.len() != n {
            return Err(Error::InvalidPartition(format!(
                "blocks cover {} qubits but reach index {}",
                seen.len(),
                n - 1
            )));
        }
        let mut scored = scored;
        scored.sort_unstable();
        scored.dedup();
        if scored.is_empty() {
            return Err(Error::InvalidPartition("no scored blocks".into()));
        }
        if let Some(&bad) = scored.iter().find(|&&k| k >= blocks.len()) {
            return Err(Error::InvalidPartition(format!(
                "scored index {bad} out of range for {} blocks",
                blocks.len()
            )));
        }
        Ok(Self { blocks, scored })
    }

    /// Two contiguous blocks of `na` and `nb` qubits, both scored.
    pub fn bipartition(na: usize, nb: usize) -> Result<Self> {
        Self::new(
            vec![(0..na).collect(), (na..na + nb).collect()],
            vec![0, 1],
        )
    }

    /// One block per qubit, all scored.
    pub fn singletons(n: usize) -> Result<Self> {
        Self::new((0..n).map(|q| vec![q]).collect(), (0..n).collect())
    }

    /// Parses `"0,1;2,3"`-style text: blocks separated by `;`, qubit indices
    /// by `,`. Every block is scored.
    pub fn parse(text: &str) -> Result<Self> {
        let blocks: Vec<Vec<usize>> = text
            .split(';')
            .map(|block| {
                block
                    .split(',')
                    .map(|tok| {
                        tok.trim().parse::<usize>().map_err(|_| {
                            Error::Parse(format!("bad qubit index {:?} in partition", tok.trim()))
                        })
                    })
                    .collect()
            })
            .collect::<Result<_>>()?;
        let scored = (0..blocks.len()).collect();
        Self::new(blocks, scored)
    }

    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }

    pub fn scored(&self) -> &[usize] {
        &self.scored
    }

    pub fn num_qubits(&self) -> usize {
        self.blocks.iter().map(Vec::len).sum()
    }

    /// `4^m / (4^m - 1)` with `m` the smallest scored-block size: the factor
    /// that stretches the Haar-average linear entropy to reach 1 on
    /// maximally entangling circuits.
    pub fn norm_factor(&self) -> f64 {
        let m = self
            .scored
            .iter()
            .map(|&k| self.blocks[k].len())
            .min()
            .expect("scored is nonempty");
        let four_m = (1u64 << (2 * m)) as f64;
        four_m / (four_m - 1.0)
    }

    pub(crate) fn check_register(&self, num_qubits: usize) -> Result<()> {
        if self.num_qubits() != num_qubits {
            return Err(Error::InvalidPartition(format!(
                "partition covers {} qubits, circuit has {num_qubits}",
                self.num_qubits()
            )));
        }
        Ok(())
    }

    /// Whether every block of `self` lies inside one block of `coarser`.
    pub fn refines(&self, coarser: &Partition) -> bool {
        self.blocks.iter().all(|fine| {
            coarser
                .blocks
                .iter()
                .any(|coarse| fine.iter().all(|q| coarse.contains(q)))
        })
    }
}

/// A cost value with its sampling uncertainty. Exact evaluators report
/// `std_error = 0` and `shots_used = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostEstimate {
    pub value: f64,
    pub std_error: f64,
    pub shots_used: u64,
}

/// Average gate fidelity between two unitaries of equal dimension `d`:
/// `(d + |Tr[V^H U]|^2) / (d (d + 1))`.
pub fn gate_fidelity(u: &UnitaryMatrix, v: &UnitaryMatrix) -> Result<f64> {
    if u.num_qubits() != v.num_qubits() {
        return Err(Error::DimensionMismatch(format!(
            "gate fidelity between {} and {} qubit unitaries",
            u.num_qubits(),
            v.num_qubits()
        )));
    }
    let d = u.matrix().nrows() as f64;
    let overlap: C64 = v
        .matrix()
        .iter()
        .zip(u.matrix().iter())
        .map(|(vij, uij)| vij.conj() * uij)
        .sum();
    Ok((d + overlap.norm_sqr()) / (d * (d + 1.0)))
}

/// Hilbert-Schmidt test cost `(d+1)/d * (1 - gate_fidelity)`, equal to
/// `1 - |Tr[V^H U]|^2 / d^2`. Zero exactly at fidelity 1.
pub fn hst_cost(u: &UnitaryMatrix, v: &UnitaryMatrix) -> Result<f64> {
    let d = u.matrix().nrows() as f64;
    Ok((d + 1.0) / d * (1.0 - gate_fidelity(u, v)?))
}

/// Local Hilbert-Schmidt cost: builds the normalized Choi state
/// `|chi> = (V^H U (x) I)|Phi+>` pairing system qubit `i` with ancilla
/// `n + i`, and averages `1 - <Phi+_2| rho_(i, n+i) |Phi+_2>` over qubits.
pub fn lhst_cost(u: &UnitaryMatrix, v: &UnitaryMatrix) -> Result<f64> {
    if u.num_qubits() != v.num_qubits() {
        return Err(Error::DimensionMismatch(format!(
            "LHST between {} and {} qubit unitaries",
            u.num_qubits(),
            v.num_qubits()
        )));
    }
    let n = u.num_qubits();
    if 2 * n > MAX_QUBITS {
        return Err(Error::InvalidArgument(format!(
            "LHST Choi register {} exceeds the {MAX_QUBITS} qubit cap",
            2 * n
        )));
    }
    let d = 1usize << n;
    let m = linalg::adjoint(v.matrix()).dot(u.matrix());
    let scale = 1.0 / (d as f64).sqrt();
    let mut amps = Array1::<C64>::zeros(d * d);
    for y in 0..d {
        for x in 0..d {
            amps[y * d + x] = m[[y, x]] * scale;
        }
    }
    let chi = PureState::from_raw(2 * n, amps);
    let mut total = 0.0;
    for i in 0..n {
        let rho = chi.reduced_density(&[i, n + i])?;
        let r = rho.matrix();
        let pair_fidelity = 0.5 * (r[[0, 0]] + r[[0, 3]] + r[[3, 0]] + r[[3, 3]]).re;
        total += 1.0 - pair_fidelity;
    }
    Ok(total / n as f64)
}

/// Upper bound on the squared gate fidelity of the best local approximation
/// implied by a decoupling cost: `min(1 - c_d + 3/(2^n + 1), 1)`.
pub fn fidelity_upper_bound(c_d: f64, num_qubits: usize) -> f64 {
    (1.0 - c_d + 3.0 / ((1u64 << num_qubits) as f64 + 1.0)).min(1.0)
}

fn finalize_exact(raw: f64) -> Result<CostEstimate> {
    if !(-1e-10..=1.0 + 1e-10).contains(&raw) {
        return Err(Error::NumericalFailure {
            iteration: 0,
            message: format!("exact decoupling cost {raw} outside [0, 1]"),
        });
    }
    Ok(CostEstimate { value: raw.clamp(0.0, 1.0), std_error: 0.0, shots_used: 0 })
}

/// Exact decoupling cost of `w` at `params` for the given partition.
pub fn decoupling_cost_exact(
    w: &Circuit,
    params: &ParamVector,
    partition: &Partition,
) -> Result<CostEstimate> {
    partition.check_register(w.num_qubits())?;
    let engine = realign::ExactEngine::new(partition);
    let unitary = w.to_unitary(params)?;
    let grams = engine.gram_set(unitary.matrix());
    finalize_exact(engine.cost(&grams, &grams))
}

/// Exact cost with the two copies bound independently. With an unshifted
/// binding this is [`decoupling_cost_exact`]; with a shifted one it is the
/// shift-rule intermediate, which may leave `[0, 1]` and is therefore
/// returned unclamped.
pub fn decoupling_cost_exact_pair(
    w: &Circuit,
    binding: &DoubledBinding,
    partition: &Partition,
) -> Result<CostEstimate> {
    if binding.shift_copy == ShiftCopy::None {
        return decoupling_cost_exact(w, &binding.base, partition);
    }
    partition.check_register(w.num_qubits())?;
    let engine = realign::ExactEngine::new(partition);
    let alpha = w.to_unitary(&binding.alpha_params())?;
    let beta = w.to_unitary(&binding.beta_params())?;
    let grams_a = engine.gram_set(alpha.matrix());
    let grams_b = engine.gram_set(beta.matrix());
    Ok(CostEstimate {
        value: engine.cost(&grams_a, &grams_b),
        std_error: 0.0,
        shots_used: 0,
    })
}

/// Shot-sampled decoupling cost: simulates the measurable two-copy protocol
/// (symmetric-pair rejection sampling, Bell-pair preparation, both circuit
/// copies, destructive swap test) with one measurement record per shot.
/// Deterministic in `seed`; shot `i` uses generator stream `i`, so the
/// result does not depend on how a worker pool splits the loop.
pub fn decoupling_cost_sampled(
    w: &Circuit,
    params: &ParamVector,
    partition: &Partition,
    shots: u64,
    seed: u64,
) -> Result<CostEstimate> {
    shots::sampled_cost(
        w,
        &DoubledBinding::unshifted(params.clone()),
        partition,
        shots,
        seed,
    )
}

/// Shot-sampled analog of [`decoupling_cost_exact_pair`].
pub fn decoupling_cost_sampled_pair(
    w: &Circuit,
    binding: &DoubledBinding,
    partition: &Partition,
    shots: u64,
    seed: u64,
) -> Result<CostEstimate> {
    shots::sampled_cost(w, binding, partition, shots, seed)
}

/// Monte-Carlo decoupling cost: the literal Haar average of scored blocks'
/// linear entropy over independent product inputs. The independent oracle
/// for the other two evaluators.
pub fn decoupling_cost_mc(
    w: &Circuit,
    params: &ParamVector,
    partition: &Partition,
    samples: u64,
    seed: u64,
) -> Result<CostEstimate> {
    mc::mc_cost(w, params, partition, samples, seed)
}

/// Which decoupling-cost evaluator a training run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Evaluator {
    Exact,
    Sampled { shots: u64, seed: u64 },
}

impl Evaluator {
    pub fn evaluate(
        &self,
        w: &Circuit,
        params: &ParamVector,
        partition: &Partition,
    ) -> Result<CostEstimate> {
        match *self {
            Evaluator::Exact => decoupling_cost_exact(w, params, partition),
            Evaluator::Sampled { shots, seed } => {
                decoupling_cost_sampled(w, params, partition, shots, seed)
            }
        }
    }

    pub fn evaluate_pair(
        &self,
        w: &Circuit,
        binding: &DoubledBinding,
        partition: &Partition,
    ) -> Result<CostEstimate> {
        match *self {
            Evaluator::Exact => decoupling_cost_exact_pair(w, binding, partition),
            Evaluator::Sampled { shots, seed } => {
                decoupling_cost_sampled_pair(w, binding, partition, shots, seed)
            }
        }
    }

    /// A copy with an independent derived seed (no-op for the exact mode),
    /// so each gradient term consumes its own stream.
    pub(crate) fn reseeded(&self, salt: u64) -> Evaluator {
        match *self {
            Evaluator::Exact => Evaluator::Exact,
            Evaluator::Sampled { shots, seed } => {
                Evaluator::Sampled { shots, seed: derive_seed(seed, salt) }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::{doubled_circuit, universal_two_qubit_ansatz, GateOp};
    use crate::statekit::{haar_random_state, haar_random_unitary, DensityOperator};
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn constant_circuit(u: &UnitaryMatrix) -> Circuit {
        let n = u.num_qubits();
        Circuit::from_gates(n, 0, vec![GateOp::unitary(u.clone(), (0..n).collect())]).unwrap()
    }

    fn cnot_circuit() -> Circuit {
        Circuit::from_gates(2, 0, vec![GateOp::cnot(0, 1)]).unwrap()
    }

    fn no_params() -> ParamVector {
        ParamVector::zeros(0)
    }

    fn pauli_x() -> Array2<C64> {
        ndarray::array![[c(0.0, 0.0), c(1.0, 0.0)], [c(1.0, 0.0), c(0.0, 0.0)]]
    }

    fn pauli_z() -> Array2<C64> {
        ndarray::array![[c(1.0, 0.0), c(0.0, 0.0)], [c(0.0, 0.0), c(-1.0, 0.0)]]
    }

    /// A full-rank random density operator: the reduced state of a larger
    /// Haar-random pure state.
    fn random_density<R: Rng>(num_qubits: usize, rng: &mut R) -> DensityOperator {
        let psi = haar_random_state(2 * num_qubits, rng).unwrap();
        psi.reduced_density(&(0..num_qubits).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn partition_construction_and_parsing() {
        let p = Partition::parse("0,1;2,3").unwrap();
        assert_eq!(p.blocks(), &[vec![0, 1], vec![2, 3]]);
        assert_eq!(p.scored(), &[0, 1]);
        assert_eq!(p.num_qubits(), 4);
        assert_eq!(Partition::bipartition(1, 1).unwrap(), Partition::parse("0;1").unwrap());
        let s = Partition::singletons(3).unwrap();
        assert_eq!(s.blocks().len(), 3);
        // non-contiguous blocks are fine as long as they tile the register
        Partition::new(vec![vec![0, 2], vec![1, 3]], vec![0]).unwrap();
        // failures: overlap, gap, empty block, bad scored index
        assert!(Partition::new(vec![vec![0], vec![0, 1]], vec![0]).is_err());
        assert!(Partition::new(vec![vec![0], vec![2]], vec![0]).is_err());
        assert!(Partition::new(vec![vec![0], vec![]], vec![0]).is_err());
        assert!(Partition::new(vec![vec![0], vec![1]], vec![2]).is_err());
        assert!(Partition::new(vec![vec![0], vec![1]], vec![]).is_err());
        assert!(Partition::parse("0,x;1").is_err());
    }

    #[test]
    fn norm_factor_uses_smallest_scored_block() {
        assert!((Partition::bipartition(1, 1).unwrap().norm_factor() - 4.0 / 3.0).abs() < 1e-15);
        assert!((Partition::bipartition(2, 2).unwrap().norm_factor() - 16.0 / 15.0).abs() < 1e-15);
        // scored subset ignores the spectator block's size
        let p = Partition::new(vec![vec![0, 1], vec![2]], vec![0]).unwrap();
        assert!((p.norm_factor() - 16.0 / 15.0).abs() < 1e-15);
    }

    #[test]
    fn refinement_check() {
        let coarse = Partition::bipartition(2, 2).unwrap();
        let fine = Partition::singletons(4).unwrap();
        assert!(fine.refines(&coarse));
        assert!(coarse.refines(&coarse));
        assert!(!coarse.refines(&fine));
    }

    #[test]
    fn gate_fidelity_reference_values() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let u = haar_random_unitary(2, &mut rng).unwrap();
        assert!((gate_fidelity(&u, &u).unwrap() - 1.0).abs() < 1e-12);
        let i1 = UnitaryMatrix::identity(1).unwrap();
        let x = UnitaryMatrix::from_matrix(pauli_x()).unwrap();
        assert!((gate_fidelity(&i1, &x).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        let i2 = UnitaryMatrix::identity(2).unwrap();
        let z_i = UnitaryMatrix::from_matrix(pauli_z()).unwrap().tensor(&i1).unwrap();
        assert!((gate_fidelity(&i2, &z_i).unwrap() - 1.0 / 5.0).abs() < 1e-12);
        assert!(gate_fidelity(&i1, &i2).is_err());
    }

    #[test]
    fn hst_cost_reference_values() {
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let u = haar_random_unitary(2, &mut rng).unwrap();
        assert!(hst_cost(&u, &u).unwrap().abs() < 1e-12);
        let i1 = UnitaryMatrix::identity(1).unwrap();
        let x = UnitaryMatrix::from_matrix(pauli_x()).unwrap();
        assert!((hst_cost(&i1, &x).unwrap() - 1.0).abs() < 1e-12);
        let i2 = UnitaryMatrix::identity(2).unwrap();
        let z_i = UnitaryMatrix::from_matrix(pauli_z()).unwrap().tensor(&i1).unwrap();
        assert!((hst_cost(&i2, &z_i).unwrap() - 1.0).abs() < 1e-12);
        // equivalence with 1 - |tr|^2/d^2, vanishing exactly at fidelity 1
        for _ in 0..10 {
            let a = haar_random_unitary(2, &mut rng).unwrap();
            let b = haar_random_unitary(2, &mut rng).unwrap();
            let f = gate_fidelity(&a, &b).unwrap();
            let h = hst_cost(&a, &b).unwrap();
            assert!((h - (1.0 - (20.0 * f - 4.0) / 16.0)).abs() < 1e-12);
            assert_eq!(h.abs() < 1e-12, (f - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn lhst_cost_reference_values() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let u = haar_random_unitary(2, &mut rng).unwrap();
        assert!(lhst_cost(&u, &u).unwrap().abs() < 1e-12);
        let i1 = UnitaryMatrix::identity(1).unwrap();
        let x = UnitaryMatrix::from_matrix(pauli_x()).unwrap();
        assert!((lhst_cost(&i1, &x).unwrap() - 1.0).abs() < 1e-12);
        // joint faithfulness with HST on random pairs
        for _ in 0..10 {
            let a = haar_random_unitary(2, &mut rng).unwrap();
            let b = haar_random_unitary(2, &mut rng).unwrap();
            let h = hst_cost(&a, &b).unwrap();
            let l = lhst_cost(&a, &b).unwrap();
            assert!((0.0..=1.0 + 1e-12).contains(&l));
            assert_eq!(h < 1e-10, l < 1e-10);
        }
    }

    #[test]
    fn swap_operator_is_an_involution_certifying_purity() {
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        for m in 1..=2 {
            let s = swap_operator(m).unwrap();
            let d2 = s.matrix().nrows();
            let square = s.matrix().dot(s.matrix());
            assert!(linalg::max_abs_diff(&square, &Array2::eye(d2)) < 1e-12);
            for _ in 0..25 {
                let rho = random_density(m, &mut rng);
                let two_copy = rho.tensor(&rho).unwrap();
                let expectation: C64 = two_copy
                    .matrix()
                    .dot(s.matrix())
                    .diag()
                    .iter()
                    .sum();
                assert!((expectation.re - rho.purity()).abs() < 1e-12);
                assert!(expectation.im.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn swap_operator_splits_into_symmetric_minus_antisymmetric() {
        // build the projectors from an explicitly symmetrized basis
        for m in 1..=3 {
            let d = 1usize << m;
            let mut sym = Array2::<C64>::zeros((d * d, d * d));
            let mut anti = Array2::<C64>::zeros((d * d, d * d));
            for i in 0..d {
                for j in i..d {
                    let mut v = Array1::<C64>::zeros(d * d);
                    if i == j {
                        v[i * d + j] = C64::ONE;
                    } else {
                        let s = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
                        v[i * d + j] = s;
                        v[j * d + i] = s;
                    }
                    for a in 0..d * d {
                        for b in 0..d * d {
                            sym[[a, b]] += v[a] * v[b].conj();
                        }
                    }
                    if i < j {
                        let s = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
                        let mut w = Array1::<C64>::zeros(d * d);
                        w[i * d + j] = s;
                        w[j * d + i] = -s;
                        for a in 0..d * d {
                            for b in 0..d * d {
                                anti[[a, b]] += w[a] * w[b].conj();
                            }
                        }
                    }
                }
            }
            let s = swap_operator(m).unwrap();
            assert!(linalg::max_abs_diff(s.matrix(), &(&sym - &anti)) < 1e-12);
        }
    }

    #[test]
    fn symmetric_tau_matches_projector_normalization() {
        // m = 1: tau = (I - |singlet><singlet|) / 3
        let tau = symmetric_tau(1).unwrap();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let singlet =
            PureState::from_amplitudes(vec![c(0.0, 0.0), c(s, 0.0), c(-s, 0.0), c(0.0, 0.0)])
                .unwrap();
        let expected = (&Array2::<C64>::eye(4) - singlet.outer().matrix()) / c(3.0, 0.0);
        assert!(linalg::max_abs_diff(tau.matrix(), &expected) < 1e-12);
        // swap invariance S tau = tau, unit trace
        for m in 1..=2 {
            let tau = symmetric_tau(m).unwrap();
            let s_op = swap_operator(m).unwrap();
            let rotated = s_op.matrix().dot(tau.matrix());
            assert!(linalg::max_abs_diff(&rotated, tau.matrix()) < 1e-12);
            let trace: C64 = tau.matrix().diag().iter().sum();
            assert!((trace - C64::ONE).norm() < 1e-12);
        }
    }

    #[test]
    fn symmetric_tau_is_the_haar_two_copy_average() {
        // Monte-Carlo oracle: mean of |psi><psi| (x) |psi><psi| over Haar psi
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let samples = 100_000usize;
        let mut mean = Array2::<C64>::zeros((4, 4));
        let mut second_moment = Array2::<f64>::zeros((4, 4));
        for _ in 0..samples {
            let psi = haar_random_state(1, &mut rng).unwrap();
            let two = psi.tensor(&psi).unwrap().outer();
            mean += two.matrix();
            second_moment += &two.matrix().mapv(|z| z.norm_sqr());
        }
        mean /= c(samples as f64, 0.0);
        let tau = symmetric_tau(1).unwrap();
        for a in 0..4 {
            for b in 0..4 {
                let var = (second_moment[[a, b]] / samples as f64
                    - mean[[a, b]].norm_sqr())
                .max(0.0);
                let se = (var / samples as f64).sqrt();
                let diff = (mean[[a, b]] - tau.matrix()[[a, b]]).norm();
                assert!(
                    diff <= 3.0 * se + 1e-12,
                    "entry ({a},{b}): diff {diff}, se {se}"
                );
            }
        }
    }

    #[test]
    fn symmetric_pair_sampler_contract() {
        let mut rng = ChaCha12Rng::seed_from_u64(6);
        for _ in 0..1000 {
            let (z1, z2) = sample_symmetric_pair(3, &mut rng);
            let dot: u32 = z1.iter().zip(z2.iter()).map(|(&a, &b)| (a & b) as u32).sum();
            assert_eq!(dot % 2, 0);
        }
        // m = 1: exactly the pairs (0,0), (0,1), (1,0), empirically uniform
        let mut counts = [0u32; 4];
        let draws = 10_000;
        for _ in 0..draws {
            let (z1, z2) = sample_symmetric_pair(1, &mut rng);
            counts[(z1[0] * 2 + z2[0]) as usize] += 1;
        }
        assert_eq!(counts[3], 0);
        let p = 1.0 / 3.0;
        let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
        for &count in &counts[..3] {
            assert!((count as f64 - draws as f64 * p).abs() < 3.0 * sigma);
        }
    }

    #[test]
    fn rejection_sampler_accepts_at_least_half() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        for m in 1..=4 {
            let trials = 10_000u64;
            let mut attempts = 0u64;
            for _ in 0..trials {
                let (_, a) = sample_symmetric_pair_counted(m, &mut rng);
                attempts += a;
            }
            let acceptance = trials as f64 / attempts as f64;
            assert!(acceptance >= 0.5, "m={m}: acceptance {acceptance}");
        }
    }

    #[test]
    fn bell_pair_preparation_hits_the_bell_basis() {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        // (0,0) -> |Phi+>
        let phi = prepare_bell_pair_state(&[0], &[0]).unwrap();
        let expected =
            PureState::from_amplitudes(vec![c(s, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(s, 0.0)])
                .unwrap();
        assert!((phi.inner(&expected).unwrap().norm() - 1.0).abs() < 1e-12);
        // (1,1) -> the singlet up to phase
        let psi = prepare_bell_pair_state(&[1], &[1]).unwrap();
        let singlet =
            PureState::from_amplitudes(vec![c(0.0, 0.0), c(s, 0.0), c(-s, 0.0), c(0.0, 0.0)])
                .unwrap();
        assert!((psi.inner(&singlet).unwrap().norm() - 1.0).abs() < 1e-12);
        // matches (X^z1 (x) Z^z2)|Phi+> exactly for every pair, m = 1
        let x = UnitaryMatrix::from_matrix(pauli_x()).unwrap();
        let z = UnitaryMatrix::from_matrix(pauli_z()).unwrap();
        let i1 = UnitaryMatrix::identity(1).unwrap();
        for z1 in 0..2u8 {
            for z2 in 0..2u8 {
                let got = prepare_bell_pair_state(&[z1], &[z2]).unwrap();
                let op_a = if z1 == 1 { x.clone() } else { i1.clone() };
                let op_b = if z2 == 1 { z.clone() } else { i1.clone() };
                let want = op_a.tensor(&op_b).unwrap().apply(&expected).unwrap();
                let diff: f64 = got
                    .amplitudes()
                    .iter()
                    .zip(want.amplitudes().iter())
                    .map(|(a, b)| (a - b).norm())
                    .fold(0.0, f64::max);
                assert!(diff < 1e-12, "pair ({z1},{z2})");
            }
        }
        assert!(prepare_bell_pair_state(&[0], &[0, 1]).is_err());
        assert!(prepare_bell_pair_state(&[2], &[0]).is_err());
    }

    #[test]
    fn accepted_bell_mixture_averages_to_tau() {
        for m in 1..=2 {
            let d = 1usize << m;
            let mut mix = Array2::<C64>::zeros((d * d, d * d));
            let mut accepted = 0usize;
            for z1 in 0..d {
                for z2 in 0..d {
                    if (z1 & z2).count_ones() % 2 != 0 {
                        continue;
                    }
                    accepted += 1;
                    let bits = |z: usize| -> Vec<u8> {
                        (0..m).map(|i| ((z >> (m - 1 - i)) & 1) as u8).collect()
                    };
                    let state = prepare_bell_pair_state(&bits(z1), &bits(z2)).unwrap();
                    mix += state.outer().matrix();
                }
            }
            assert_eq!(accepted, (1 << (2 * m - 1)) + (1 << (m - 1)));
            mix /= c(accepted as f64, 0.0);
            let tau = symmetric_tau(m).unwrap();
            assert!(linalg::max_abs_diff(&mix, tau.matrix()) < 1e-12, "m={m}");
        }
    }

    #[test]
    fn pauli_masked_average_transposes() {
        // (1/2^n) sum_{z1,z2} (-1)^{z1.z2} sigma_{z1z2} rho sigma_{z1z2} = rho^T
        let mut rng = ChaCha12Rng::seed_from_u64(8);
        let x = pauli_x();
        let z = pauli_z();
        let sigma1 = |z1: usize, z2: usize| -> Array2<C64> {
            let mut out = Array2::<C64>::eye(2);
            if z1 == 1 {
                out = x.dot(&out);
            }
            if z2 == 1 {
                out = out.dot(&z);
            }
            out
        };
        for _ in 0..10 {
            let rho = random_density(1, &mut rng);
            let mut acc = Array2::<C64>::zeros((2, 2));
            for z1 in 0..2 {
                for z2 in 0..2 {
                    let sgn = if z1 * z2 == 1 { -1.0 } else { 1.0 };
                    let s = sigma1(z1, z2);
                    acc = acc + s.dot(rho.matrix()).dot(&linalg::adjoint(&s)) * c(sgn / 2.0, 0.0);
                }
            }
            assert!(linalg::max_abs_diff(&acc, &rho.matrix().t().to_owned()) < 1e-12);
        }
        // two-qubit analog with prefactor 1/4
        for _ in 0..5 {
            let rho = random_density(2, &mut rng);
            let mut acc = Array2::<C64>::zeros((4, 4));
            for z1 in 0..4usize {
                for z2 in 0..4usize {
                    let sgn = if (z1 & z2).count_ones() % 2 == 1 { -1.0 } else { 1.0 };
                    let s = linalg::kron(&sigma1(z1 >> 1, z2 >> 1), &sigma1(z1 & 1, z2 & 1));
                    acc = acc + s.dot(rho.matrix()).dot(&linalg::adjoint(&s)) * c(sgn / 4.0, 0.0);
                }
            }
            assert!(linalg::max_abs_diff(&acc, &rho.matrix().t().to_owned()) < 1e-12);
        }
    }

    #[test]
    fn exact_cost_anchors() {
        let bi = Partition::bipartition(1, 1).unwrap();
        // identity and SWAP decouple exactly
        let id = Circuit::empty(2).unwrap();
        assert!(decoupling_cost_exact(&id, &no_params(), &bi).unwrap().value < 1e-14);
        let swap = Circuit::from_gates(2, 0, vec![GateOp::swap(0, 1)]).unwrap();
        assert!(decoupling_cost_exact(&swap, &no_params(), &bi).unwrap().value < 1e-14);
        // CNOT sits at 8/27
        let got = decoupling_cost_exact(&cnot_circuit(), &no_params(), &bi).unwrap();
        assert!((got.value - 8.0 / 27.0).abs() < 1e-12);
        assert_eq!(got.std_error, 0.0);
        assert_eq!(got.shots_used, 0);
    }

    #[test]
    fn exact_cost_is_faithful_on_products_and_swaps() {
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let bi2 = Partition::bipartition(1, 1).unwrap();
        let bi4 = Partition::bipartition(2, 2).unwrap();
        for b in [false, true] {
            for _ in 0..5 {
                // 2 qubits
                let ua = haar_random_unitary(1, &mut rng).unwrap();
                let ub = haar_random_unitary(1, &mut rng).unwrap();
                let mut gates = vec![
                    GateOp::unitary(ua, vec![0]),
                    GateOp::unitary(ub, vec![1]),
                ];
                if b {
                    gates.push(GateOp::swap(0, 1));
                }
                let w = Circuit::from_gates(2, 0, gates).unwrap();
                assert!(decoupling_cost_exact(&w, &no_params(), &bi2).unwrap().value < 1e-10);
                // 4 qubits
                let ua = haar_random_unitary(2, &mut rng).unwrap();
                let ub = haar_random_unitary(2, &mut rng).unwrap();
                let mut gates = vec![
                    GateOp::unitary(ua, vec![0, 1]),
                    GateOp::unitary(ub, vec![2, 3]),
                ];
                if b {
                    gates.push(GateOp::swap(0, 2));
                    gates.push(GateOp::swap(1, 3));
                }
                let w = Circuit::from_gates(4, 0, gates).unwrap();
                assert!(decoupling_cost_exact(&w, &no_params(), &bi4).unwrap().value < 1e-10);
            }
        }
    }

    /// Literal two-copy reference: build the tensor product of symmetric
    /// block inputs on 2n qubits, conjugate by the doubled circuit, and read
    /// each scored block's swap expectation entrywise.
    fn literal_decoupling_cost(
        w: &Circuit,
        binding: &DoubledBinding,
        partition: &Partition,
    ) -> f64 {
        let n = w.num_qubits();
        let dim = 1usize << (2 * n);
        let blocks = partition.blocks();
        let taus: Vec<DensityOperator> =
            blocks.iter().map(|b| symmetric_tau(b.len()).unwrap()).collect();
        // sub-index of block j inside a full 2n-qubit index: alpha bits of
        // the block first, then beta bits, each most-significant-qubit first
        let sub_index = |x: usize, block: &[usize]| -> usize {
            let alpha = x >> n;
            let beta = x & ((1 << n) - 1);
            let mut idx = 0usize;
            for &q in block {
                idx = (idx << 1) | ((alpha >> (n - 1 - q)) & 1);
            }
            for &q in block {
                idx = (idx << 1) | ((beta >> (n - 1 - q)) & 1);
            }
            idx
        };
        let mut input = Array2::<C64>::zeros((dim, dim));
        for r in 0..dim {
            for cidx in 0..dim {
                let mut v = C64::ONE;
                for (block, tau) in blocks.iter().zip(taus.iter()) {
                    v *= tau.matrix()[[sub_index(r, block), sub_index(cidx, block)]];
                }
                input[[r, cidx]] = v;
            }
        }
        let doubled = doubled_circuit(w).unwrap();
        let rho = DensityOperator::from_raw(2 * n, input);
        let evolved = doubled.apply_density(&binding.doubled_params(), &rho).unwrap();
        let mut mean = 0.0;
        for &k in partition.scored() {
            // sigma(x): exchange the alpha and beta bits of block k
            let swap_k = |x: usize| -> usize {
                let mut y = x;
                for &q in &blocks[k] {
                    let pa = 2 * n - 1 - q;
                    let pb = n - 1 - q;
                    let ba = (x >> pa) & 1;
                    let bb = (x >> pb) & 1;
                    if ba != bb {
                        y ^= (1 << pa) | (1 << pb);
                    }
                }
                y
            };
            let mut expectation = C64::ZERO;
            for x in 0..dim {
                expectation += evolved.matrix()[[x, swap_k(x)]];
            }
            assert!(expectation.im.abs() < 1e-10);
            mean += expectation.re;
        }
        mean /= partition.scored().len() as f64;
        partition.norm_factor() * (1.0 - mean)
    }

    #[test]
    fn exact_engine_matches_literal_two_copy_evolution() {
        let mut rng = ChaCha12Rng::seed_from_u64(10);
        // 2-qubit random circuits
        let w = universal_two_qubit_ansatz();
        for _ in 0..4 {
            let params = ParamVector::random_uniform(w.num_params(), &mut rng);
            let binding = DoubledBinding::unshifted(params);
            let p = Partition::bipartition(1, 1).unwrap();
            let fast = decoupling_cost_exact_pair(&w, &binding, &p).unwrap().value;
            let slow = literal_decoupling_cost(&w, &binding, &p);
            assert!((fast - slow).abs() < 1e-12);
        }
        // shifted bindings (the gradient intermediates)
        let params = ParamVector::random_uniform(w.num_params(), &mut rng);
        for copy in [ShiftCopy::Alpha, ShiftCopy::Beta] {
            let binding = DoubledBinding::shifted(
                params.clone(),
                copy,
                3,
                std::f64::consts::FRAC_PI_2,
            )
            .unwrap();
            let p = Partition::bipartition(1, 1).unwrap();
            let fast = decoupling_cost_exact_pair(&w, &binding, &p).unwrap().value;
            let slow = literal_decoupling_cost(&w, &binding, &p);
            assert!((fast - slow).abs() < 1e-12);
        }
        // 4-qubit circuit against several partitions, including a
        // non-contiguous one and a spectator block
        let w4 = crate::circuit::layered_ansatz(4, 1).unwrap();
        let params = ParamVector::random_uniform(w4.num_params(), &mut rng);
        let binding = DoubledBinding::unshifted(params);
        for p in [
            Partition::bipartition(2, 2).unwrap(),
            Partition::singletons(4).unwrap(),
            Partition::new(vec![vec![0, 2], vec![1, 3]], vec![0, 1]).unwrap(),
            Partition::new(vec![vec![0, 1], vec![2, 3]], vec![0]).unwrap(),
            Partition::new(vec![vec![0], vec![1], vec![2, 3]], vec![0, 1]).unwrap(),
        ] {
            let fast = decoupling_cost_exact_pair(&w4, &binding, &p).unwrap().value;
            let slow = literal_decoupling_cost(&w4, &binding, &p);
            assert!((fast - slow).abs() < 1e-12, "partition {:?}", p.blocks());
        }
    }

    #[test]
    fn exact_cost_stays_in_range_on_random_circuits() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let w = universal_two_qubit_ansatz();
        let p = Partition::bipartition(1, 1).unwrap();
        for _ in 0..20 {
            let params = ParamVector::random_uniform(w.num_params(), &mut rng);
            let v = decoupling_cost_exact(&w, &params, &p).unwrap().value;
            assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn monte_carlo_oracle_agrees_with_exact() {
        let p = Partition::bipartition(1, 1).unwrap();
        // identity: every sample scores exactly zero
        let id = Circuit::empty(2).unwrap();
        let est = decoupling_cost_mc(&id, &no_params(), &p, 200, 1).unwrap();
        assert!(est.value.abs() < 1e-12);
        assert!(est.std_error < 1e-12);
        // SWAP: zero within noise (and in fact exactly zero per sample)
        let swap = Circuit::from_gates(2, 0, vec![GateOp::swap(0, 1)]).unwrap();
        let est = decoupling_cost_mc(&swap, &no_params(), &p, 200, 2).unwrap();
        assert!(est.value.abs() < 4.0 * est.std_error + 1e-12);
        // CNOT: 8/27 within 4 sigma at modest sample counts
        let est = decoupling_cost_mc(&cnot_circuit(), &no_params(), &p, 100_000, 3).unwrap();
        assert!((est.value - 8.0 / 27.0).abs() < 4.0 * est.std_error);
        // random circuits, 2 and 4 qubits
        let mut rng = ChaCha12Rng::seed_from_u64(12);
        let w = universal_two_qubit_ansatz();
        let params = ParamVector::random_uniform(w.num_params(), &mut rng);
        let exact = decoupling_cost_exact(&w, &params, &p).unwrap().value;
        let est = decoupling_cost_mc(&w, &params, &p, 50_000, 4).unwrap();
        assert!((est.value - exact).abs() < 4.0 * est.std_error);
        let w4 = crate::circuit::layered_ansatz(4, 1).unwrap();
        let params = ParamVector::random_uniform(w4.num_params(), &mut rng);
        let p4 = Partition::bipartition(2, 2).unwrap();
        let exact = decoupling_cost_exact(&w4, &params, &p4).unwrap().value;
        let est = decoupling_cost_mc(&w4, &params, &p4, 20_000, 5).unwrap();
        assert!((est.value - exact).abs() < 4.0 * est.std_error);
    }

    #[test]
    fn monte_carlo_is_seed_deterministic() {
        let w = cnot_circuit();
        let p = Partition::bipartition(1, 1).unwrap();
        let a = decoupling_cost_mc(&w, &no_params(), &p, 500, 42).unwrap();
        let b = decoupling_cost_mc(&w, &no_params(), &p, 500, 42).unwrap();
        assert_eq!(a.value, b.value);
        assert_eq!(a.std_error, b.std_error);
        let c = decoupling_cost_mc(&w, &no_params(), &p, 500, 43).unwrap();
        assert_ne!(a.value, c.value);
    }

    #[test]
    fn sampled_estimator_matches_exact() {
        let p = Partition::bipartition(1, 1).unwrap();
        // identity: Bell states are swap-test fixed points, estimate is 0
        let id = Circuit::empty(2).unwrap();
        let est = decoupling_cost_sampled(&id, &no_params(), &p, 500, 1).unwrap();
        assert_eq!(est.value, 0.0);
        assert_eq!(est.std_error, 0.0);
        assert_eq!(est.shots_used, 500);
        // CNOT within 4 standard errors
        let est = decoupling_cost_sampled(&cnot_circuit(), &no_params(), &p, 20_000, 2).unwrap();
        assert!((est.value - 8.0 / 27.0).abs() < 4.0 * est.std_error);
        // random parameterized circuit
        let mut rng = ChaCha12Rng::seed_from_u64(13);
        let w = universal_two_qubit_ansatz();
        let params = ParamVector::random_uniform(w.num_params(), &mut rng);
        let exact = decoupling_cost_exact(&w, &params, &p).unwrap().value;
        let est = decoupling_cost_sampled(&w, &params, &p, 50_000, 3).unwrap();
        assert!((est.value - exact).abs() < 4.0 * est.std_error);
        // 4-qubit bipartition
        let w4 = crate::circuit::layered_ansatz(4, 1).unwrap();
        let params = ParamVector::random_uniform(w4.num_params(), &mut rng);
        let p4 = Partition::bipartition(2, 2).unwrap();
        let exact = decoupling_cost_exact(&w4, &params, &p4).unwrap().value;
        let est = decoupling_cost_sampled(&w4, &params, &p4, 20_000, 4).unwrap();
        assert!((est.value - exact).abs() < 4.0 * est.std_error);
    }

    #[test]
    fn sampled_estimator_is_seed_deterministic() {
        let w = cnot_circuit();
        let p = Partition::bipartition(1, 1).unwrap();
        let a = decoupling_cost_sampled(&w, &no_params(), &p, 1000, 9).unwrap();
        let b = decoupling_cost_sampled(&w, &no_params(), &p, 1000, 9).unwrap();
        assert_eq!(a.value, b.value);
        assert_eq!(a.std_error, b.std_error);
        assert!(decoupling_cost_sampled(&w, &no_params(), &p, 0, 9).is_err());
    }

    #[test]
    fn shifted_sampled_pair_matches_shifted_exact_pair() {
        let mut rng = ChaCha12Rng::seed_from_u64(14);
        let w = universal_two_qubit_ansatz();
        let params = ParamVector::random_uniform(w.num_params(), &mut rng);
        let p = Partition::bipartition(1, 1).unwrap();
        let binding = DoubledBinding::shifted(
            params,
            ShiftCopy::Beta,
            7,
            -std::f64::consts::FRAC_PI_2,
        )
        .unwrap();
        let exact = decoupling_cost_exact_pair(&w, &binding, &p).unwrap().value;
        let est = decoupling_cost_sampled_pair(&w, &binding, &p, 50_000, 5).unwrap();
        assert!((est.value - exact).abs() < 4.0 * est.std_error);
    }

    #[test]
    fn partition_register_mismatch_is_rejected() {
        let w = cnot_circuit();
        let p = Partition::singletons(3).unwrap();
        assert!(decoupling_cost_exact(&w, &no_params(), &p).is_err());
        assert!(decoupling_cost_sampled(&w, &no_params(), &p, 10, 0).is_err());
        assert!(decoupling_cost_mc(&w, &no_params(), &p, 10, 0).is_err());
    }

    #[test]
    fn fidelity_upper_bound_reference_values() {
        assert!((fidelity_upper_bound(0.0, 2) - 1.0).abs() < 1e-15);
        assert!((fidelity_upper_bound(1.0, 2) - 0.6).abs() < 1e-15);
        assert!((fidelity_upper_bound(0.5, 4) - (0.5 + 3.0 / 17.0)).abs() < 1e-15);
    }

    #[test]
    fn fidelity_bound_holds_on_random_draws() {
        let mut rng = ChaCha12Rng::seed_from_u64(15);
        for _ in 0..20 {
            let w = haar_random_unitary(2, &mut rng).unwrap();
            let ua = haar_random_unitary(1, &mut rng).unwrap();
            let ub = haar_random_unitary(1, &mut rng).unwrap();
            let local = ua.tensor(&ub).unwrap();
            let f = gate_fidelity(&local, &w).unwrap();
            let cd = decoupling_cost_exact(
                &constant_circuit(&w),
                &no_params(),
                &Partition::bipartition(1, 1).unwrap(),
            )
            .unwrap()
            .value;
            assert!(f * f <= fidelity_upper_bound(cd, 2) + 1e-9);
        }
    }

    #[test]
    fn cost_estimate_serializes_to_plain_fields() {
        let est = CostEstimate { value: 0.25, std_error: 0.01, shots_used: 100 };
        let text = serde_json::to_string(&est).unwrap();
        assert_eq!(text, r#"{"value":0.25,"std_error":0.01,"shots_used":100}"#);
        let back: CostEstimate = serde_json::from_str(&text).unwrap();
        assert_eq!(back, est);
    }

    #[test]
    fn evaluator_dispatch_and_reseeding() {
        let w = cnot_circuit();
        let p = Partition::bipartition(1, 1).unwrap();
        let exact = Evaluator::Exact.evaluate(&w, &no_params(), &p).unwrap();
        assert!((exact.value - 8.0 / 27.0).abs() < 1e-12);
        let sampled = Evaluator::Sampled { shots: 1000, seed: 1 };
        let a = sampled.evaluate(&w, &no_params(), &p).unwrap();
        assert_eq!(a.shots_used, 1000);
        assert_eq!(sampled.reseeded(0), sampled.reseeded(0));
        assert_ne!(sampled.reseeded(0), sampled.reseeded(1));
        assert_eq!(Evaluator::Exact.reseeded(5), Evaluator::Exact);
    }
}
