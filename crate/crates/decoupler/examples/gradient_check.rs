//! Analytic parameter-shift gradients versus central finite differences.
//!
//! The decoupling cost is quadratic in the circuit (the angle enters once in
//! each copy of a doubled register), so its exact rule shifts each copy
//! separately: four evaluations per parameter. Fidelity costs are plain
//! expectations and need two.
//!
//! ```text
//! cargo run --release --example gradient_check
//! ```

use decoupler::circuit::{layered_ansatz, ParamVector};
use decoupler::cost::{decoupling_cost_exact, lhst_cost, Evaluator, Partition};
use decoupler::grad::{
    finite_difference_gradient, shift_rule_gradient_cd, shift_rule_gradient_expectation, Objective,
};
use decoupler::statekit::haar_random_unitary;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

fn main() -> decoupler::Result<()> {
    let mut rng = ChaCha12Rng::seed_from_u64(11);
    let circuit = layered_ansatz(3, 2)?;
    let partition = Partition::singletons(3)?;
    let params = ParamVector::random_uniform(circuit.num_params(), &mut rng);

    let cd_analytic = shift_rule_gradient_cd(&circuit, &params, &partition, Evaluator::Exact)?;
    let numeric = finite_difference_gradient(
        |p| Ok(decoupling_cost_exact(&circuit, p, &partition)?.value),
        &params,
        1e-5,
    )?;
    let worst = cd_analytic
        .partials
        .iter()
        .zip(&numeric.partials)
        .map(|(a, n)| (a - n).abs())
        .fold(0.0f64, f64::max);
    println!(
        "decoupling cost, {} parameters: max |shift - fd| = {worst:.3e}",
        circuit.num_params()
    );

    let target = haar_random_unitary(3, &mut rng)?;
    let objective = Objective::Lhst { target: target.clone() };
    let analytic = shift_rule_gradient_expectation(&objective, &circuit, &params)?;
    let numeric =
        finite_difference_gradient(|p| lhst_cost(&target, &circuit.to_unitary(p)?), &params, 1e-5)?;
    let worst = analytic
        .partials
        .iter()
        .zip(&numeric.partials)
        .map(|(a, n)| (a - n).abs())
        .fold(0.0f64, f64::max);
    println!(
        "local fidelity cost, same circuit: max |shift - fd| = {worst:.3e}"
    );

    // the sampled evaluator estimates the same gradient, with error bars
    let sampled = shift_rule_gradient_cd(
        &circuit,
        &params,
        &partition,
        Evaluator::Sampled { shots: 20_000, seed: 3 },
    )?;
    let mut worst_sigmas = 0.0f64;
    for ((s, e), a) in sampled.partials.iter().zip(&sampled.std_errors).zip(&cd_analytic.partials)
    {
        if *e > 0.0 {
            worst_sigmas = worst_sigmas.max((s - a).abs() / e);
        }
    }
    println!(
        "sampled decoupling gradient (20000 shots/evaluation): worst component {worst_sigmas:.2} standard errors from exact"
    );
    Ok(())
}
