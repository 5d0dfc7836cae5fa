//! The three ways to evaluate the decoupling cost — exact realignment,
//! finite-shot sampling of the doubled-register protocol, and Monte-Carlo
//! averaging over random product inputs — agree with each other.
//!
//! ```text
//! cargo run --release --example cost_modes
//! ```

use decoupler::circuit::{Circuit, GateOp, ParamVector};
use decoupler::cost::{
    decoupling_cost_exact, decoupling_cost_mc, decoupling_cost_sampled, Partition,
};

fn main() -> decoupler::Result<()> {
    // a CNOT splits the register into two correlated halves; its decoupling
    // cost against single-qubit blocks is exactly 8/27
    let cnot = Circuit::from_gates(2, 0, vec![GateOp::cnot(0, 1)])?;
    let no_params = ParamVector::zeros(0);
    let partition = Partition::bipartition(1, 1)?;

    let exact = decoupling_cost_exact(&cnot, &no_params, &partition)?;
    println!("CNOT, exact:    value = {:.12}   (8/27 = {:.12})", exact.value, 8.0 / 27.0);

    let sampled = decoupling_cost_sampled(&cnot, &no_params, &partition, 200_000, 7)?;
    println!(
        "CNOT, sampled:  value = {:.6} +- {:.6}  ({} shots)",
        sampled.value, sampled.std_error, sampled.shots_used
    );

    let mc = decoupling_cost_mc(&cnot, &no_params, &partition, 200_000, 7)?;
    println!(
        "CNOT, MC:       value = {:.6} +- {:.6}  ({} product-state samples)",
        mc.value, mc.std_error, mc.shots_used
    );

    for (name, estimate) in [("sampled", &sampled), ("mc", &mc)] {
        let sigma = (exact.value - estimate.value).abs() / estimate.std_error;
        println!("  exact vs {name}: {sigma:.2} standard errors apart");
    }

    // a partitioned 4-qubit circuit: non-contiguous blocks work too
    let mut gates = Vec::new();
    gates.push(GateOp::h(0));
    gates.push(GateOp::cnot(0, 2));
    gates.push(GateOp::cnot(1, 3));
    let circuit = Circuit::from_gates(4, 0, gates)?;
    let partition = Partition::parse("0,2;1,3")?;
    let value = decoupling_cost_exact(&circuit, &no_params, &partition)?;
    println!(
        "4-qubit circuit entangling within blocks {{0,2}} and {{1,3}}: cost = {:.3e}",
        value.value
    );
    let crossed = Partition::parse("0,1;2,3")?;
    let value = decoupling_cost_exact(&circuit, &no_params, &crossed)?;
    println!("same circuit scored across those blocks:              cost = {:.6}", value.value);
    Ok(())
}
