//! Shot-sampled decoupling-cost estimator.
//!
//! Implements the measurable protocol: per shot, draw symmetric-pair labels
//! for every block, prepare the Bell pairs, run both circuit copies, apply
//! the destructive swap test, and sample one measurement record. Every scored
//! block's swap sign comes from the same record, so the per-shot score
//! `y = mean_k s_k` carries the cross-block covariance and the standard error
//! of the mean of `y` is the estimator's error.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::circuit::{doubled_circuit, Circuit, DoubledBinding};
use crate::error::{Error, Result};

use super::swap::{bell_measure_circuit, bell_prep_circuit, sample_symmetric_pair_ints};
use super::{CostEstimate, Partition};

/// Mixes a salt into a seed so derived generators are independent of the
/// parent and of each other.
pub(crate) fn derive_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) fn sampled_cost(
    w: &Circuit,
    binding: &DoubledBinding,
    partition: &Partition,
    shots: u64,
    seed: u64,
) -> Result<CostEstimate> {
    if shots == 0 {
        return Err(Error::InvalidArgument("sampled estimator needs shots >= 1".into()));
    }
    let n = w.num_qubits();
    partition.check_register(n)?;
    // prep, both copies, and the swap-test basis change fold into one
    // unitary; each shot then reads a single column of it
    let full = bell_prep_circuit(n)
        .then(&doubled_circuit(w)?)?
        .then(&bell_measure_circuit(n))?;
    let unitary = full.to_unitary(&binding.doubled_params())?;
    let matrix = unitary.matrix();
    let dim = matrix.nrows();
    let n_mask = (1usize << n) - 1;

    let blocks = partition.blocks();
    // per-qubit amplitude-bit masks of each block within one copy
    let block_position_masks: Vec<usize> = blocks
        .iter()
        .map(|b| b.iter().fold(0usize, |m, &q| m | (1 << (n - 1 - q))))
        .collect();
    let scored_masks: Vec<usize> = partition
        .scored()
        .iter()
        .map(|&k| block_position_masks[k])
        .collect();

    let mut sum = 0.0f64;
    let mut sum_sq = 0.0f64;
    for shot in 0..shots {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        rng.set_stream(shot);
        // input labels: one symmetric pair per block, assembled into full
        // z1 (alpha) and z2 (beta) registers
        let mut z1_full = 0usize;
        let mut z2_full = 0usize;
        for (block, _) in blocks.iter().zip(block_position_masks.iter()) {
            let (z1, z2, _) = sample_symmetric_pair_ints(block.len(), &mut rng);
            for (local, &q) in block.iter().enumerate() {
                let pos = n - 1 - q;
                z1_full |= ((z1 >> (block.len() - 1 - local)) & 1) << pos;
                z2_full |= ((z2 >> (block.len() - 1 - local)) & 1) << pos;
            }
        }
        let column = (z1_full << n) | z2_full;
        // sample one measurement outcome from the output distribution
        let mut draw: f64 = rng.random();
        let mut outcome = dim - 1;
        for row in 0..dim {
            draw -= matrix[[row, column]].norm_sqr();
            if draw < 0.0 {
                outcome = row;
                break;
            }
        }
        let alpha_bits = outcome >> n;
        let beta_bits = outcome & n_mask;
        let coincidences = alpha_bits & beta_bits;
        let y: f64 = scored_masks
            .iter()
            .map(|&mask| {
                if (coincidences & mask).count_ones() % 2 == 0 {
                    1.0
                } else {
                    -1.0
                }
            })
            .sum::<f64>()
            / scored_masks.len() as f64;
        sum += y;
        sum_sq += y * y;
    }
    let shots_f = shots as f64;
    let mean = sum / shots_f;
    let norm = partition.norm_factor();
    let variance = if shots > 1 {
        ((sum_sq - shots_f * mean * mean) / (shots_f - 1.0)).max(0.0)
    } else {
        0.0
    };
    Ok(CostEstimate {
        value: norm * (1.0 - mean),
        std_error: norm * (variance / shots_f).sqrt(),
        shots_used: shots,
    })
}
