//! Parameter-shift gradients for every training objective, plus a central
//! finite-difference oracle.
//!
//! All parameterized gates are Pauli rotations `exp(-i theta P / 2)`, so each
//! cost is trigonometric in every single angle and the +-pi/2 shift rule is
//! exact. Expectation-shaped costs (HST, LHST, plain observable averages)
//! need two evaluations per parameter. The decoupling cost is quadratic in
//! the circuit — the angle enters once in each copy of a doubled register —
//! so its rule shifts each copy separately and needs four.

use std::f64::consts::FRAC_PI_2;

use crate::circuit::{Circuit, DoubledBinding, ParamVector, ShiftCopy};
use crate::cost::{hst_cost, lhst_cost, CostEstimate, Evaluator, ExactEngine, Partition};
use crate::error::{Error, Result};
use crate::statekit::UnitaryMatrix;

/// A gradient with one entry per parameter and the sampling uncertainty of
/// each entry (zero for exact evaluators).
#[derive(Debug, Clone, PartialEq)]
pub struct GradientVector {
    pub partials: Vec<f64>,
    pub std_errors: Vec<f64>,
}

impl GradientVector {
    fn checked(partials: Vec<f64>, std_errors: Vec<f64>) -> Result<Self> {
        if let Some(bad) = partials.iter().find(|p| !p.is_finite()) {
            return Err(Error::NumericalFailure {
                iteration: 0,
                message: format!("non-finite gradient component {bad}"),
            });
        }
        Ok(Self { partials, std_errors })
    }

    pub fn len(&self) -> usize {
        self.partials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.partials.is_empty()
    }

    /// Largest absolute component, 0 for an empty gradient.
    pub fn max_abs(&self) -> f64 {
        self.partials.iter().fold(0.0, |acc, p| acc.max(p.abs()))
    }
}

/// A differentiable training objective over one parameterized circuit.
#[derive(Debug, Clone)]
pub enum Objective {
    /// Hilbert-Schmidt test cost against a fixed target unitary.
    Hst { target: UnitaryMatrix },
    /// Local Hilbert-Schmidt cost against a fixed target unitary.
    Lhst { target: UnitaryMatrix },
    /// Decoupling cost for a partition under the given evaluator.
    Decoupling { partition: Partition, evaluator: Evaluator },
}

impl Objective {
    pub fn evaluate(&self, w: &Circuit, params: &ParamVector) -> Result<CostEstimate> {
        match self {
            Objective::Hst { target } => {
                let candidate = w.to_unitary(params)?;
                Ok(exact_estimate(hst_cost(target, &candidate)?))
            }
            Objective::Lhst { target } => {
                let candidate = w.to_unitary(params)?;
                Ok(exact_estimate(lhst_cost(target, &candidate)?))
            }
            Objective::Decoupling { partition, evaluator } => {
                evaluator.evaluate(w, params, partition)
            }
        }
    }

    /// The exact-rule gradient: four-term doubled shifts for the decoupling
    /// cost, two-term shifts otherwise.
    pub fn gradient(&self, w: &Circuit, params: &ParamVector) -> Result<GradientVector> {
        match self {
            Objective::Decoupling { partition, evaluator } => {
                shift_rule_gradient_cd(w, params, partition, *evaluator)
            }
            _ => shift_rule_gradient_expectation(self, w, params),
        }
    }
}

fn exact_estimate(value: f64) -> CostEstimate {
    CostEstimate { value, std_error: 0.0, shots_used: 0 }
}

/// Gradient of the decoupling cost by the doubled shift rule:
/// `d_i = 1/2 [C(a_i+) - C(a_i-) + C(b_i+) - C(b_i-)]`, where `a`/`b` shift
/// parameter `i` by +-pi/2 in the first/second copy only. Exactly four cost
/// evaluations per parameter.
///
/// The exact evaluator reuses the unshifted side across all terms, so each
/// evaluation prices as half a full cost call; the sampled evaluator draws an
/// independent derived seed per term.
pub fn shift_rule_gradient_cd(
    w: &Circuit,
    params: &ParamVector,
    partition: &Partition,
    evaluator: Evaluator,
) -> Result<GradientVector> {
    match evaluator {
        Evaluator::Exact => {
            partition.check_register(w.num_qubits())?;
            let engine = ExactEngine::new(partition);
            let base = w.to_unitary(params)?;
            let base_grams = engine.gram_set(base.matrix());
            shift_rule_gradient_cd_with(params, |binding| {
                let shifted_params = match binding.shift_copy {
                    ShiftCopy::Alpha => binding.alpha_params(),
                    ShiftCopy::Beta => binding.beta_params(),
                    ShiftCopy::None => {
                        return Ok(exact_estimate(engine.cost(&base_grams, &base_grams)))
                    }
                };
                let shifted = w.to_unitary(&shifted_params)?;
                let shifted_grams = engine.gram_set(shifted.matrix());
                let value = match binding.shift_copy {
                    ShiftCopy::Alpha => engine.cost(&shifted_grams, &base_grams),
                    _ => engine.cost(&base_grams, &shifted_grams),
                };
                Ok(exact_estimate(value))
            })
        }
        Evaluator::Sampled { .. } => {
            let mut term = 0u64;
            shift_rule_gradient_cd_with(params, |binding| {
                let seeded = evaluator.reseeded(term);
                term += 1;
                seeded.evaluate_pair(w, binding, partition)
            })
        }
    }
}

/// The four-term assembly behind [`shift_rule_gradient_cd`], generic over the
/// pair evaluator so callers can count, cache, or instrument evaluations.
pub fn shift_rule_gradient_cd_with<F>(params: &ParamVector, mut eval: F) -> Result<GradientVector>
where
    F: FnMut(&DoubledBinding) -> Result<CostEstimate>,
{
    let n = params.len();
    let mut partials = Vec::with_capacity(n);
    let mut std_errors = Vec::with_capacity(n);
    let terms = [
        (ShiftCopy::Alpha, 1.0),
        (ShiftCopy::Alpha, -1.0),
        (ShiftCopy::Beta, 1.0),
        (ShiftCopy::Beta, -1.0),
    ];
    for i in 0..n {
        let mut sum = 0.0;
        let mut variance = 0.0;
        for (copy, sign) in terms {
            let binding = DoubledBinding::shifted(params.clone(), copy, i, sign * FRAC_PI_2)?;
            let est = eval(&binding)?;
            sum += sign * est.value;
            variance += est.std_error * est.std_error;
        }
        partials.push(0.5 * sum);
        std_errors.push(0.5 * variance.sqrt());
    }
    GradientVector::checked(partials, std_errors)
}

/// Gradient of an expectation-shaped objective by the standard shift rule
/// `d_i = 1/2 [E(theta_i + pi/2) - E(theta_i - pi/2)]`, two evaluations per
/// parameter. The decoupling objective is not expectation-shaped (its angle
/// appears in both copies) and is rejected.
pub fn shift_rule_gradient_expectation(
    objective: &Objective,
    w: &Circuit,
    params: &ParamVector,
) -> Result<GradientVector> {
    if matches!(objective, Objective::Decoupling { .. }) {
        return Err(Error::UnsupportedObjective(
            "the decoupling cost is quadratic in the circuit; use the doubled shift rule".into(),
        ));
    }
    shift_rule_gradient_expectation_with(params, |p| objective.evaluate(w, p))
}

/// The two-term assembly behind [`shift_rule_gradient_expectation`], generic
/// over the cost function. The function must be an expectation of a fixed
/// observable after the parameterized circuit for the result to be the exact
/// derivative.
pub fn shift_rule_gradient_expectation_with<F>(
    params: &ParamVector,
    mut eval: F,
) -> Result<GradientVector>
where
    F: FnMut(&ParamVector) -> Result<CostEstimate>,
{
    let n = params.len();
    let mut partials = Vec::with_capacity(n);
    let mut std_errors = Vec::with_capacity(n);
    for i in 0..n {
        let plus = eval(&params.shifted(i, FRAC_PI_2))?;
        let minus = eval(&params.shifted(i, -FRAC_PI_2))?;
        partials.push(0.5 * (plus.value - minus.value));
        std_errors.push(
            0.5 * (plus.std_error * plus.std_error + minus.std_error * minus.std_error).sqrt(),
        );
    }
    GradientVector::checked(partials, std_errors)
}

/// Central finite differences `(f(theta+h) - f(theta-h)) / 2h` per
/// coordinate: the model-free oracle the shift rules are tested against.
pub fn finite_difference_gradient<F>(
    mut objective: F,
    params: &ParamVector,
    h: f64,
) -> Result<GradientVector>
where
    F: FnMut(&ParamVector) -> Result<f64>,
{
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("finite-difference step {h} must be > 0")));
    }
    let n = params.len();
    let mut partials = Vec::with_capacity(n);
    for i in 0..n {
        let plus = objective(&params.shifted(i, h))?;
        let minus = objective(&params.shifted(i, -h))?;
        partials.push((plus - minus) / (2.0 * h));
    }
    GradientVector::checked(partials, vec![0.0; n])
}
