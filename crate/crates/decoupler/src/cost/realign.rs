//! Exact decoupling-cost engine.
//!
//! The two-copy expectation behind the decoupling cost never needs a 2n-qubit
//! simulation. Each block's symmetric input expands as
//! `tau_j = (I + S_j) / (d_j (d_j + 1))`, so distributing the product over
//! blocks writes `<S_k>` as a sum over block subsets `G` of single-copy
//! contractions
//!
//! ```text
//! T(G, k) = Tr[ (Z_a Z_a^H) (Z_b Z_b^H) ],
//! ```
//!
//! where `Z_x` is the n-qubit unitary of copy `x` with its matrix entries
//! regrouped: rows are indexed by (output bits on block k, input bits on the
//! qubits of G) and columns by the complementary bits. The Gram matrices
//! `Z Z^H` depend only on one copy, so the two copies may carry different
//! parameters — exactly what the doubled shift rule evaluates.

use std::collections::HashMap;

use ndarray::Array2;

use crate::statekit::C64;

use super::Partition;

/// Bit positions (most significant first) of the qubits selected by
/// `qubit_mask` in an n-qubit amplitude index.
fn positions_of(qubit_mask: u64, n: usize) -> Vec<usize> {
    (0..n)
        .filter(|q| (qubit_mask >> q) & 1 == 1)
        .map(|q| n - 1 - q)
        .collect()
}

fn extract(x: usize, positions: &[usize]) -> usize {
    positions
        .iter()
        .fold(0usize, |acc, &pos| (acc << 1) | ((x >> pos) & 1))
}

/// `Z Z^H` for the realignment labeled by output qubits `q_mask` and input
/// qubits `p_mask`.
fn realigned_gram(u: &Array2<C64>, n: usize, q_mask: u64, p_mask: u64) -> Array2<C64> {
    let d = 1usize << n;
    let full: u64 = (1u64 << n) - 1;
    let q_pos = positions_of(q_mask, n);
    let qc_pos = positions_of(full & !q_mask, n);
    let p_pos = positions_of(p_mask, n);
    let pc_pos = positions_of(full & !p_mask, n);
    let (qb, pb) = (q_pos.len(), p_pos.len());
    let rows = 1usize << (qb + pb);
    let cols = 1usize << (2 * n - qb - pb);

    let mut out_row = vec![0usize; d];
    let mut out_col = vec![0usize; d];
    let mut in_row = vec![0usize; d];
    let mut in_col = vec![0usize; d];
    for x in 0..d {
        out_row[x] = extract(x, &q_pos) << pb;
        out_col[x] = extract(x, &qc_pos) << (n - pb);
        in_row[x] = extract(x, &p_pos);
        in_col[x] = extract(x, &pc_pos);
    }
    let mut z = Array2::<C64>::zeros((rows, cols));
    for o in 0..d {
        for i in 0..d {
            z[[out_row[o] | in_row[i], out_col[o] | in_col[i]]] = u[[o, i]];
        }
    }
    // gram[r1, r2] = sum_c z[r1, c] conj(z[r2, c]); Hermitian, so mirror
    let mut gram = Array2::<C64>::zeros((rows, rows));
    for r1 in 0..rows {
        for r2 in 0..=r1 {
            let mut acc = C64::ZERO;
            for c in 0..cols {
                acc += z[[r1, c]] * z[[r2, c]].conj();
            }
            gram[[r1, r2]] = acc;
            gram[[r2, r1]] = acc.conj();
        }
    }
    gram
}

/// Hilbert-Schmidt inner product `sum a[r1,r2] b[r2,r1]` of two Hermitian
/// matrices; real up to rounding.
fn trace_product(a: &Array2<C64>, b: &Array2<C64>) -> f64 {
    let acc: C64 = a
        .iter()
        .zip(b.iter())
        .map(|(x, y)| x * y.conj())
        .sum();
    debug_assert!(acc.im.abs() < 1e-9 * (1.0 + acc.re.abs()));
    acc.re
}

/// Gram matrices of one copy's unitary, one per realignment used by a
/// partition.
pub(crate) struct GramSet {
    map: HashMap<(u64, u64), Array2<C64>>,
}

/// Precomputed term structure for one partition: for every scored block, the
/// list of (output-qubit mask, input-qubit mask) realignments to contract.
pub(crate) struct ExactEngine {
    n: usize,
    denominator: f64,
    terms: Vec<Vec<(u64, u64)>>,
    norm: f64,
}

impl ExactEngine {
    pub(crate) fn new(partition: &Partition) -> Self {
        let n = partition.num_qubits();
        let blocks = partition.blocks();
        let masks: Vec<u64> = blocks
            .iter()
            .map(|b| b.iter().fold(0u64, |m, &q| m | (1 << q)))
            .collect();
        let denominator: f64 = blocks
            .iter()
            .map(|b| {
                let d = (1u64 << b.len()) as f64;
                d * (d + 1.0)
            })
            .product();
        let terms = partition
            .scored()
            .iter()
            .map(|&k| {
                (0..1usize << blocks.len())
                    .map(|g| {
                        let p = masks
                            .iter()
                            .enumerate()
                            .filter(|(j, _)| (g >> j) & 1 == 1)
                            .fold(0u64, |m, (_, &bm)| m | bm);
                        (masks[k], p)
                    })
                    .collect()
            })
            .collect();
        Self { n, denominator, terms, norm: partition.norm_factor() }
    }

    /// Builds every Gram matrix this partition needs from one copy's unitary.
    pub(crate) fn gram_set(&self, u: &Array2<C64>) -> GramSet {
        let mut map = HashMap::new();
        for list in &self.terms {
            for &(q, p) in list {
                map.entry((q, p))
                    .or_insert_with(|| realigned_gram(u, self.n, q, p));
            }
        }
        GramSet { map }
    }

    /// The raw decoupling cost given the Gram sets of the two copies. Pass
    /// the same set twice when both copies share parameters.
    pub(crate) fn cost(&self, alpha: &GramSet, beta: &GramSet) -> f64 {
        let mut mean_swap = 0.0;
        for list in &self.terms {
            let total: f64 = list
                .iter()
                .map(|key| trace_product(&alpha.map[key], &beta.map[key]))
                .sum();
            mean_swap += total / self.denominator;
        }
        mean_swap /= self.terms.len() as f64;
        self.norm * (1.0 - mean_swap)
    }
}
