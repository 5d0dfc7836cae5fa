//! Monte-Carlo oracle for the decoupling cost: the literal Haar average.
//!
//! Each sample draws an independent Haar state per partition block, runs the
//! single-copy circuit, and scores the linear entropy of every scored block's
//! reduced state. Slow but assumption-free, which makes it the reference the
//! exact and shot-sampled evaluators are validated against.

use ndarray::Array1;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::circuit::{Circuit, ParamVector};
use crate::error::{Error, Result};
use crate::statekit::{haar_random_state, PureState, C64};

use super::{CostEstimate, Partition};

pub(crate) fn mc_cost(
    w: &Circuit,
    params: &ParamVector,
    partition: &Partition,
    samples: u64,
    seed: u64,
) -> Result<CostEstimate> {
    if samples == 0 {
        return Err(Error::InvalidArgument("Monte-Carlo estimator needs samples >= 1".into()));
    }
    let n = w.num_qubits();
    partition.check_register(n)?;
    let unitary = w.to_unitary(params)?;
    let matrix = unitary.matrix();
    let d = 1usize << n;
    let blocks = partition.blocks();
    let norm = partition.norm_factor();
    // per block: bit positions of its qubits, most significant first
    let block_positions: Vec<Vec<usize>> = blocks
        .iter()
        .map(|b| b.iter().map(|&q| n - 1 - q).collect())
        .collect();

    let mut sum = 0.0f64;
    let mut sum_sq = 0.0f64;
    for sample in 0..samples {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        rng.set_stream(sample);
        let factors: Vec<PureState> = blocks
            .iter()
            .map(|b| haar_random_state(b.len(), &mut rng))
            .collect::<Result<_>>()?;
        // product state with each factor on its block's qubits
        let mut amps = Array1::<C64>::zeros(d);
        for (x, amp) in amps.iter_mut().enumerate() {
            let mut value = C64::ONE;
            for (factor, positions) in factors.iter().zip(block_positions.iter()) {
                let sub = positions
                    .iter()
                    .fold(0usize, |acc, &pos| (acc << 1) | ((x >> pos) & 1));
                value *= factor.amplitudes()[sub];
            }
            *amp = value;
        }
        let evolved = PureState::from_raw(n, matrix.dot(&amps));
        let score: f64 = partition
            .scored()
            .iter()
            .map(|&k| {
                evolved
                    .reduced_density(&blocks[k])
                    .expect("block indices validated against the register")
                    .linear_entropy()
            })
            .sum::<f64>()
            / partition.scored().len() as f64;
        let value = norm * score;
        sum += value;
        sum_sq += value * value;
    }
    let samples_f = samples as f64;
    let mean = sum / samples_f;
    let variance = if samples > 1 {
        ((sum_sq - samples_f * mean * mean) / (samples_f - 1.0)).max(0.0)
    } else {
        0.0
    };
    Ok(CostEstimate {
        value: mean,
        std_error: (variance / samples_f).sqrt(),
        shots_used: samples,
    })
}
