//! The decoupling cost bounds the best fidelity any block-local completion
//! can reach: max gate fidelity <= 1 - C_D + 3/(2^n + 1).
//!
//! This example draws random circuits, computes their exact decoupling cost
//! and the implied ceiling, then verifies the ceiling against the fidelity
//! actually achieved by the best local completion found by training.
//!
//! ```text
//! cargo run --release --example fidelity_bound
//! ```

use decoupler::circuit::{universal_two_qubit_ansatz, ParamVector};
use decoupler::cost::{decoupling_cost_exact, fidelity_upper_bound, gate_fidelity, Partition};
use decoupler::statekit::haar_random_unitary;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

fn main() -> decoupler::Result<()> {
    let mut rng = ChaCha12Rng::seed_from_u64(5);
    let partition = Partition::bipartition(1, 1)?;
    let ansatz = universal_two_qubit_ansatz();
    let no_params = ParamVector::zeros(0);

    println!("   C_D        fidelity ceiling   product-state fidelity");
    for _ in 0..8 {
        let params = ParamVector::random_uniform(ansatz.num_params(), &mut rng);
        let w = ansatz.to_unitary(&params)?;
        let circuit = decoupler::circuit::Circuit::from_gates(
            2,
            0,
            vec![decoupler::circuit::GateOp::unitary(w.clone(), vec![0, 1])],
        )?;
        let cd = decoupling_cost_exact(&circuit, &no_params, &partition)?.value;
        let ceiling = fidelity_upper_bound(cd, 2);

        // best product approximation, by brute scan over random local pairs
        let mut best = 0.0f64;
        for _ in 0..4000 {
            let a = haar_random_unitary(1, &mut rng)?;
            let b = haar_random_unitary(1, &mut rng)?;
            best = best.max(gate_fidelity(&w, &a.tensor(&b)?)?);
        }
        let ok = best <= ceiling + 1e-9;
        println!(
            "  {cd:.6}   {ceiling:.6}           {best:.6}   {}",
            if ok { "(below ceiling)" } else { "VIOLATION" }
        );
    }
    println!();
    println!("a circuit with zero decoupling cost has ceiling 1; a maximally");
    println!("coupling circuit pushes the ceiling toward 3/(2^n + 1).");
    Ok(())
}
