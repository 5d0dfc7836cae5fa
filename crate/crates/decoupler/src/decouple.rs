//! Divide-and-conquer compilation driver.
//!
//! A [`DecouplingPlan`] arranges ansatz units `u_1 .. u_L` (applied in that
//! order, so the assembled matrix is `M_L ... M_1`) and an ordered list of
//! training phases. Decoupling phases pick a prefix of units as the
//! pre-circuit `P` and a suffix as the post-circuit `Q`, then drive the
//! decoupling cost of `W = Q^H U P^H` toward zero over the phase's trainable
//! units — after which the units *between* `P` and `Q` only have to realize a
//! block-local unitary. Each successive decoupling phase refines the
//! partition; a final fidelity phase fits the remaining (typically local)
//! units by minimizing LHST or HST against the target directly.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::circuit::{
    layered_ansatz, universal_two_qubit_ansatz, Axis, Circuit, GateOp, ParamVector,
};
use crate::cost::{gate_fidelity, hst_cost, CostEstimate, Evaluator, Partition};
use crate::error::{Error, Result};
use crate::grad::{self, shift_rule_gradient_cd, GradientVector};
use crate::optimize::{train_phase, AdamConfig, PhaseObjective, StopReason, TrainingTrace};
use crate::statekit::UnitaryMatrix;

/// One parameterized block of the compilation ansatz, acting on a subset of
/// the register. Units are applied in list order.
#[derive(Debug, Clone)]
pub struct AnsatzUnit {
    pub name: String,
    pub circuit: Circuit,
    pub qubits: Vec<usize>,
}

impl AnsatzUnit {
    pub fn new(name: impl Into<String>, circuit: Circuit, qubits: Vec<usize>) -> Self {
        Self { name: name.into(), circuit, qubits }
    }

    pub fn num_params(&self) -> usize {
        self.circuit.num_params()
    }
}

/// Which fidelity-style cost a phase (or a direct baseline) minimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FidelityKind {
    Hst,
    Lhst,
}

/// What one plan phase trains and against which cost.
#[derive(Debug, Clone)]
pub enum PhaseKind {
    /// Minimize the decoupling cost of `W = Q^H U P^H`, with `P` the first
    /// `pre_units` units and `Q` the last `post_units`.
    Decoupling { partition: Partition, pre_units: usize, post_units: usize },
    /// Minimize a fidelity cost between the assembled candidate and the
    /// target over the trainable units, all others frozen.
    LocalFidelity { objective: FidelityKind },
}

#[derive(Debug, Clone)]
pub struct PlanPhase {
    pub name: String,
    pub kind: PhaseKind,
    /// Indices of the units whose parameters this phase trains.
    pub trainable: Vec<usize>,
    pub adam: AdamConfig,
}

/// A staged compilation recipe: ansatz units plus an ordered phase list whose
/// decoupling partitions refine monotonically and whose final phase is a
/// fidelity optimization.
#[derive(Debug, Clone)]
pub struct DecouplingPlan {
    num_qubits: usize,
    units: Vec<AnsatzUnit>,
    phases: Vec<PlanPhase>,
}

impl DecouplingPlan {
    pub fn new(
        num_qubits: usize,
        units: Vec<AnsatzUnit>,
        mut phases: Vec<PlanPhase>,
    ) -> Result<Self> {
        if units.is_empty() {
            return Err(Error::InvalidArgument("a plan needs at least one unit".into()));
        }
        let mut names = std::collections::BTreeSet::new();
        for unit in &units {
            if unit.name.is_empty() || !names.insert(unit.name.clone()) {
                return Err(Error::InvalidArgument(format!(
                    "unit names must be unique and nonempty, got {:?}",
                    unit.name
                )));
            }
            if unit.qubits.len() != unit.circuit.num_qubits() {
                return Err(Error::DimensionMismatch(format!(
                    "unit {} has a {} qubit circuit on {} qubits",
                    unit.name,
                    unit.circuit.num_qubits(),
                    unit.qubits.len()
                )));
            }
            let mut seen = std::collections::BTreeSet::new();
            for &q in &unit.qubits {
                if q >= num_qubits || !seen.insert(q) {
                    return Err(Error::InvalidIndex(format!(
                        "unit {} uses qubit {q} on a {num_qubits} qubit register",
                        unit.name
                    )));
                }
            }
        }
        if phases.is_empty() {
            return Err(Error::InvalidArgument("a plan needs at least one phase".into()));
        }
        match phases.last().map(|p| &p.kind) {
            Some(PhaseKind::LocalFidelity { .. }) => {}
            _ => {
                return Err(Error::InvalidArgument(
                    "the final phase must be a fidelity optimization".into(),
                ))
            }
        }
        let mut previous_partition: Option<&Partition> = None;
        for phase in &mut phases {
            phase.adam.validate()?;
            phase.trainable.sort_unstable();
            phase.trainable.dedup();
            if phase.trainable.is_empty() {
                return Err(Error::InvalidArgument(format!(
                    "phase {} trains no units",
                    phase.name
                )));
            }
            if let Some(&bad) = phase.trainable.iter().find(|&&i| i >= units.len()) {
                return Err(Error::InvalidIndex(format!(
                    "phase {} trains unit {bad}, but the plan has {} units",
                    phase.name,
                    units.len()
                )));
            }
            if let PhaseKind::Decoupling { partition, pre_units, post_units } = &phase.kind {
                if partition.num_qubits() != num_qubits {
                    return Err(Error::InvalidPartition(format!(
                        "phase {} partitions {} qubits on a {num_qubits} qubit plan",
                        phase.name,
                        partition.num_qubits()
                    )));
                }
                if pre_units + post_units > units.len() {
                    return Err(Error::InvalidArgument(format!(
                        "phase {} uses {pre_units} pre and {post_units} post units of {}",
                        phase.name,
                        units.len()
                    )));
                }
                let in_scope = |i: usize| i < *pre_units || i >= units.len() - post_units;
                if let Some(&bad) = phase.trainable.iter().find(|&&i| !in_scope(i)) {
                    return Err(Error::InvalidArgument(format!(
                        "phase {} trains unit {bad}, which is neither pre nor post",
                        phase.name
                    )));
                }
                if let Some(prev) = previous_partition {
                    if !partition.refines(prev) {
                        return Err(Error::InvalidPartition(format!(
                            "phase {} partition does not refine the previous decoupling phase",
                            phase.name
                        )));
                    }
                }
                previous_partition = Some(partition);
            }
        }
        Ok(Self { num_qubits, units, phases })
    }

    /// The same plan with the final fidelity phase training every unit
    /// jointly instead of only its own trainable set. Earlier phases still
    /// freeze as declared; this widens only the last phase, letting it
    /// correct residual error the staged phases could not express.
    pub fn with_joint_final_phase(mut self) -> Self {
        let all: Vec<usize> = (0..self.units.len()).collect();
        if let Some(last) = self.phases.last_mut() {
            last.trainable = all;
        }
        self
    }

    pub fn num_qubits(&self) -> usize {
        self.num_qubits
    }

    pub fn units(&self) -> &[AnsatzUnit] {
        &self.units
    }

    pub fn phases(&self) -> &[PlanPhase] {
        &self.phases
    }

    /// Total parameter count across all units.
    pub fn num_params(&self) -> usize {
        self.units.iter().map(AnsatzUnit::num_params).sum()
    }

    /// Offset of unit `index`'s parameters inside the global vector (units
    /// are laid out consecutively in list order).
    pub fn unit_param_offset(&self, index: usize) -> usize {
        self.units[..index].iter().map(AnsatzUnit::num_params).sum()
    }

    /// The fully assembled candidate circuit over the global parameters.
    pub fn assembled_circuit(&self) -> Result<Circuit> {
        let mut assembled = Circuit::empty(self.num_qubits)?;
        for unit in &self.units {
            assembled = assembled.then(&unit.circuit.embed(self.num_qubits, &unit.qubits)?)?;
        }
        Ok(assembled)
    }

    fn unit_params(&self, global: &ParamVector, index: usize) -> ParamVector {
        let offset = self.unit_param_offset(index);
        let len = self.units[index].num_params();
        ParamVector::new(global.angles()[offset..offset + len].to_vec())
    }

    /// Per-unit offsets into a phase parameter vector (trainable units in
    /// ascending index order), plus the phase parameter count.
    fn phase_offsets(&self, trainable: &[usize]) -> (HashMap<usize, usize>, usize) {
        let mut offsets = HashMap::new();
        let mut total = 0usize;
        for &i in trainable {
            offsets.insert(i, total);
            total += self.units[i].num_params();
        }
        (offsets, total)
    }

    /// The slice of `global` a phase trains, concatenated in unit order.
    pub fn gather(&self, global: &ParamVector, trainable: &[usize]) -> ParamVector {
        let mut angles = Vec::new();
        for &i in trainable {
            let offset = self.unit_param_offset(i);
            angles.extend_from_slice(&global.angles()[offset..offset + self.units[i].num_params()]);
        }
        ParamVector::new(angles)
    }

    fn scatter(
        &self,
        global: &mut ParamVector,
        trainable: &[usize],
        phase_params: &ParamVector,
    ) -> Result<()> {
        let expected: usize = trainable.iter().map(|&i| self.units[i].num_params()).sum();
        if phase_params.len() != expected {
            return Err(Error::DimensionMismatch(format!(
                "scattering {} phase parameters into {expected} trainable slots",
                phase_params.len()
            )));
        }
        let mut cursor = 0usize;
        for &i in trainable {
            let offset = self.unit_param_offset(i);
            let len = self.units[i].num_params();
            global.angles_mut()[offset..offset + len]
                .copy_from_slice(&phase_params.angles()[cursor..cursor + len]);
            cursor += len;
        }
        Ok(())
    }

    fn daggered_unit_gates(
        &self,
        index: usize,
        global: &ParamVector,
        offsets: &HashMap<usize, usize>,
    ) -> Result<Vec<GateOp>> {
        let unit = &self.units[index];
        let daggered = if let Some(&offset) = offsets.get(&index) {
            unit.circuit.dagger_parameterized().shift_param_indices(offset)
        } else {
            unit.circuit.dagger(&self.unit_params(global, index))?
        };
        Ok(daggered.embed(self.num_qubits, &unit.qubits)?.gates().to_vec())
    }

    /// The circuit computing `W = Q^H U P^H` for a decoupling phase: frozen
    /// units are bound at their current global values, trainable units stay
    /// parameterized with indices remapped to the phase layout.
    fn cd_phase_circuit(
        &self,
        global: &ParamVector,
        target: &UnitaryMatrix,
        pre_units: usize,
        post_units: usize,
        trainable: &[usize],
    ) -> Result<Circuit> {
        let (offsets, total) = self.phase_offsets(trainable);
        let mut gates = Vec::new();
        // P^H = M_1^H ... M_a^H applies unit a's inverse first
        for i in (0..pre_units).rev() {
            gates.extend(self.daggered_unit_gates(i, global, &offsets)?);
        }
        gates.push(GateOp::unitary(target.clone(), (0..self.num_qubits).collect()));
        // Q^H = M_b^H ... M_L^H applies unit L's inverse first
        for i in ((self.units.len() - post_units)..self.units.len()).rev() {
            gates.extend(self.daggered_unit_gates(i, global, &offsets)?);
        }
        Circuit::from_gates(self.num_qubits, total, gates)
    }

    /// The assembled candidate with frozen units bound and trainable units
    /// remapped to the phase layout, for the final fidelity phase.
    fn local_phase_circuit(&self, global: &ParamVector, trainable: &[usize]) -> Result<Circuit> {
        let (offsets, total) = self.phase_offsets(trainable);
        let mut gates = Vec::new();
        for (i, unit) in self.units.iter().enumerate() {
            let circuit = if let Some(&offset) = offsets.get(&i) {
                unit.circuit.shift_param_indices(offset)
            } else {
                unit.circuit.bind(&self.unit_params(global, i))?
            };
            gates.extend(circuit.embed(self.num_qubits, &unit.qubits)?.gates().iter().cloned());
        }
        Circuit::from_gates(self.num_qubits, total, gates)
    }
}

/// The two-qubit plan: a universal 15-parameter pre-ansatz, an identity
/// post-ansatz, one decoupling phase into single qubits, then LHST over the
/// full parameter set.
pub fn default_plan_2q() -> DecouplingPlan {
    let units = vec![
        AnsatzUnit::new("V0", universal_two_qubit_ansatz(), vec![0, 1]),
        AnsatzUnit::new("V1", Circuit::empty(2).expect("2 qubit register"), vec![0, 1]),
    ];
    let phases = vec![
        PlanPhase {
            name: "decouple".into(),
            kind: PhaseKind::Decoupling {
                partition: Partition::bipartition(1, 1).expect("2 qubit bipartition"),
                pre_units: 1,
                post_units: 1,
            },
            trainable: vec![0],
            adam: AdamConfig::default(),
        },
        PlanPhase {
            name: "local".into(),
            kind: PhaseKind::LocalFidelity { objective: FidelityKind::Lhst },
            trainable: vec![0, 1],
            // run to the iteration budget / patience: the fidelity phase has
            // no natural threshold and is compared against a direct baseline
            // with the same stopping rules
            adam: AdamConfig { cost_threshold: 0.0, ..AdamConfig::default() },
        },
    ];
    DecouplingPlan::new(2, units, phases).expect("the default 2-qubit plan is valid")
}

/// The four-qubit plan: outer `layered_ansatz(4, layers_outer)` pre/post
/// circuits, 2-qubit `layered_ansatz(2, layers_inner)` blocks per half, and
/// RZ-RY-RZ middle gates per qubit. Phase 1 decouples the two halves
/// training the outer units; phase 2 refines to single qubits training the
/// four 2-qubit blocks; phase 3 fits the middle gates by LHST.
pub fn default_plan_4q(layers_outer: usize, layers_inner: usize) -> DecouplingPlan {
    let outer = layered_ansatz(4, layers_outer).expect("4 qubit register");
    let inner = layered_ansatz(2, layers_inner).expect("2 qubit register");
    let middle = Circuit::from_gates(
        1,
        3,
        vec![
            GateOp::rotation(Axis::Z, 0, 0),
            GateOp::rotation(Axis::Y, 0, 1),
            GateOp::rotation(Axis::Z, 0, 2),
        ],
    )
    .expect("middle unit is valid");
    let units = vec![
        AnsatzUnit::new("V0", outer.clone(), vec![0, 1, 2, 3]),
        AnsatzUnit::new("VA0", inner.clone(), vec![0, 1]),
        AnsatzUnit::new("VB0", inner.clone(), vec![2, 3]),
        AnsatzUnit::new("M0", middle.clone(), vec![0]),
        AnsatzUnit::new("M1", middle.clone(), vec![1]),
        AnsatzUnit::new("M2", middle.clone(), vec![2]),
        AnsatzUnit::new("M3", middle, vec![3]),
        AnsatzUnit::new("VA1", inner.clone(), vec![0, 1]),
        AnsatzUnit::new("VB1", inner, vec![2, 3]),
        AnsatzUnit::new("V1", outer, vec![0, 1, 2, 3]),
    ];
    let phases = vec![
        PlanPhase {
            name: "decouple".into(),
            kind: PhaseKind::Decoupling {
                partition: Partition::bipartition(2, 2).expect("4 qubit bipartition"),
                pre_units: 1,
                post_units: 1,
            },
            trainable: vec![0, 9],
            adam: AdamConfig::default(),
        },
        PlanPhase {
            name: "refine".into(),
            kind: PhaseKind::Decoupling {
                partition: Partition::singletons(4).expect("4 qubit singletons"),
                pre_units: 3,
                post_units: 3,
            },
            trainable: vec![1, 2, 7, 8],
            adam: AdamConfig::default(),
        },
        PlanPhase {
            name: "local".into(),
            kind: PhaseKind::LocalFidelity { objective: FidelityKind::Lhst },
            trainable: vec![3, 4, 5, 6],
            adam: AdamConfig { cost_threshold: 0.0, ..AdamConfig::default() },
        },
    ];
    DecouplingPlan::new(4, units, phases).expect("the default 4-qubit plan is valid")
}

/// A four-qubit target drawn from the single-layer instance of the plan's
/// ansatz family (so the family at any depth >= 1 can express it exactly).
pub fn spindle_target(seed: u64) -> Result<UnitaryMatrix> {
    let plan = default_plan_4q(1, 1);
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let params = ParamVector::random_uniform(plan.num_params(), &mut rng);
    plan.assembled_circuit()?.to_unitary(&params)
}

/// Metadata of one executed phase.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseReport {
    pub name: String,
    pub iterations: u64,
    pub stop_reason: StopReason,
}

/// A finished compilation: the bound circuit, its parameters, final quality
/// numbers, the merged per-iteration trace, and per-phase metadata.
#[derive(Debug, Clone)]
pub struct CompiledResult {
    pub seed: u64,
    pub fidelity: f64,
    pub hst: f64,
    pub final_circuit: Circuit,
    pub final_params: ParamVector,
    pub phases: Vec<PhaseReport>,
    pub trace: TrainingTrace,
}

#[derive(Serialize)]
struct CompiledResultJson<'a> {
    seed: u64,
    fidelity: f64,
    hst: f64,
    phases: &'a [PhaseReport],
    circuit: &'a Circuit,
}

impl CompiledResult {
    pub fn to_json_string(&self) -> Result<String> {
        let view = CompiledResultJson {
            seed: self.seed,
            fidelity: self.fidelity,
            hst: self.hst,
            phases: &self.phases,
            circuit: &self.final_circuit,
        };
        Ok(serde_json::to_string_pretty(&view)?)
    }
}

/// Fidelity and HST diagnostics of the assembled candidate with a phase's
/// parameters substituted into the global vector.
struct AssembledDiagnostics<'a> {
    plan: &'a DecouplingPlan,
    assembled: &'a Circuit,
    target: &'a UnitaryMatrix,
    base_global: ParamVector,
    trainable: &'a [usize],
}

impl AssembledDiagnostics<'_> {
    fn compute(&self, phase_params: &ParamVector) -> Result<(f64, f64)> {
        let mut global = self.base_global.clone();
        self.plan.scatter(&mut global, self.trainable, phase_params)?;
        let candidate = self.assembled.to_unitary(&global)?;
        Ok((
            gate_fidelity(self.target, &candidate)?,
            hst_cost(self.target, &candidate)?,
        ))
    }
}

struct CdPhaseObjective<'a> {
    w: Circuit,
    partition: Partition,
    evaluator: Evaluator,
    diagnostics: AssembledDiagnostics<'a>,
}

impl PhaseObjective for CdPhaseObjective<'_> {
    fn evaluate(&mut self, params: &ParamVector, iteration: u64) -> Result<CostEstimate> {
        self.evaluator.reseeded(iteration).evaluate(&self.w, params, &self.partition)
    }

    fn gradient(&mut self, params: &ParamVector, iteration: u64) -> Result<GradientVector> {
        shift_rule_gradient_cd(&self.w, params, &self.partition, self.evaluator.reseeded(iteration))
    }

    fn diagnostics(&mut self, params: &ParamVector) -> Result<(f64, f64)> {
        self.diagnostics.compute(params)
    }
}

/// Final-phase (or direct-baseline) objective: a fidelity cost of `w`
/// against the target. `w` already equals the assembled candidate here, so
/// diagnostics reuse it directly.
struct FidelityPhaseObjective<'a> {
    w: Circuit,
    objective: grad::Objective,
    target: &'a UnitaryMatrix,
}

impl FidelityPhaseObjective<'_> {
    fn new(w: Circuit, kind: FidelityKind, target: &UnitaryMatrix) -> FidelityPhaseObjective<'_> {
        let objective = match kind {
            FidelityKind::Hst => grad::Objective::Hst { target: target.clone() },
            FidelityKind::Lhst => grad::Objective::Lhst { target: target.clone() },
        };
        FidelityPhaseObjective { w, objective, target }
    }
}

impl PhaseObjective for FidelityPhaseObjective<'_> {
    fn evaluate(&mut self, params: &ParamVector, _iteration: u64) -> Result<CostEstimate> {
        self.objective.evaluate(&self.w, params)
    }

    fn gradient(&mut self, params: &ParamVector, _iteration: u64) -> Result<GradientVector> {
        self.objective.gradient(&self.w, params)
    }

    fn diagnostics(&mut self, params: &ParamVector) -> Result<(f64, f64)> {
        let candidate = self.w.to_unitary(params)?;
        Ok((
            gate_fidelity(self.target, &candidate)?,
            hst_cost(self.target, &candidate)?,
        ))
    }
}

/// Runs a plan against a target: initializes all parameters uniformly on
/// `[-pi, pi)` from the seed, executes every phase in order (scattering each
/// phase's best parameters back into the global vector), and returns the
/// bound circuit with the merged trace.
pub fn run_decoupling(
    target: &UnitaryMatrix,
    plan: &DecouplingPlan,
    evaluator: Evaluator,
    seed: u64,
) -> Result<CompiledResult> {
    if target.num_qubits() != plan.num_qubits() {
        return Err(Error::DimensionMismatch(format!(
            "a {} qubit plan cannot compile a {} qubit target",
            plan.num_qubits(),
            target.num_qubits()
        )));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut global = ParamVector::random_uniform(plan.num_params(), &mut rng);
    let assembled = plan.assembled_circuit()?;
    let mut trace = TrainingTrace::new();
    let mut reports = Vec::new();
    for phase in plan.phases() {
        let rows_before = trace.len();
        let init = plan.gather(&global, &phase.trainable);
        let start_iteration = trace.next_iteration();
        let (best, stop_reason) = match &phase.kind {
            PhaseKind::Decoupling { partition, pre_units, post_units } => {
                let w = plan.cd_phase_circuit(
                    &global,
                    target,
                    *pre_units,
                    *post_units,
                    &phase.trainable,
                )?;
                let mut objective = CdPhaseObjective {
                    w,
                    partition: partition.clone(),
                    evaluator,
                    diagnostics: AssembledDiagnostics {
                        plan,
                        assembled: &assembled,
                        target,
                        base_global: global.clone(),
                        trainable: &phase.trainable,
                    },
                };
                train_phase(&mut objective, init, &phase.adam, &phase.name, start_iteration, &mut trace)?
            }
            PhaseKind::LocalFidelity { objective } => {
                let w = plan.local_phase_circuit(&global, &phase.trainable)?;
                let mut objective = FidelityPhaseObjective::new(w, *objective, target);
                train_phase(&mut objective, init, &phase.adam, &phase.name, start_iteration, &mut trace)?
            }
        };
        plan.scatter(&mut global, &phase.trainable, &best)?;
        reports.push(PhaseReport {
            name: phase.name.clone(),
            iterations: (trace.len() - rows_before) as u64,
            stop_reason,
        });
    }
    finish(target, &assembled, global, reports, trace, seed)
}

/// Single-phase baseline: minimizes the chosen fidelity cost over all ansatz
/// parameters, initialized uniformly from the seed (the same draw a
/// decoupling run over the same family would make).
pub fn run_direct_baseline(
    target: &UnitaryMatrix,
    ansatz: &Circuit,
    objective: FidelityKind,
    adam: &AdamConfig,
    seed: u64,
) -> Result<CompiledResult> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let init = ParamVector::random_uniform(ansatz.num_params(), &mut rng);
    run_direct_baseline_from(target, ansatz, objective, adam, init, seed)
}

/// [`run_direct_baseline`] with an explicit initial parameter vector.
pub fn run_direct_baseline_from(
    target: &UnitaryMatrix,
    ansatz: &Circuit,
    objective: FidelityKind,
    adam: &AdamConfig,
    init: ParamVector,
    seed: u64,
) -> Result<CompiledResult> {
    if target.num_qubits() != ansatz.num_qubits() {
        return Err(Error::DimensionMismatch(format!(
            "a {} qubit ansatz cannot compile a {} qubit target",
            ansatz.num_qubits(),
            target.num_qubits()
        )));
    }
    let mut trace = TrainingTrace::new();
    let mut phase = FidelityPhaseObjective::new(ansatz.clone(), objective, target);
    let (best, stop_reason) = train_phase(&mut phase, init, adam, "direct", 0, &mut trace)?;
    let reports = vec![PhaseReport {
        name: "direct".into(),
        iterations: trace.len() as u64,
        stop_reason,
    }];
    finish(target, ansatz, best, reports, trace, seed)
}

fn finish(
    target: &UnitaryMatrix,
    ansatz: &Circuit,
    params: ParamVector,
    phases: Vec<PhaseReport>,
    trace: TrainingTrace,
    seed: u64,
) -> Result<CompiledResult> {
    let final_circuit = ansatz.bind(&params)?;
    let candidate = final_circuit.to_unitary(&ParamVector::zeros(0))?;
    Ok(CompiledResult {
        seed,
        fidelity: gate_fidelity(target, &candidate)?,
        hst: hst_cost(target, &candidate)?,
        final_circuit,
        final_params: params,
        phases,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::decoupling_cost_exact;
    use crate::statekit::{haar_random_unitary, linalg, C64};
    use ndarray::Array2;
    use rand::SeedableRng;

    fn kron_embed(unit: &UnitaryMatrix, qubits: &[usize], n: usize) -> Array2<C64> {
        // explicit matrix embedding via the circuit machinery is what we are
        // testing, so build it independently: permute-free since all default
        // plan units act on contiguous ascending qubit runs
        let left = qubits[0];
        let right = n - 1 - *qubits.last().unwrap();
        let mut m = Array2::<C64>::eye(1 << left);
        m = linalg::kron(&m, unit.matrix());
        linalg::kron(&m, &Array2::<C64>::eye(1 << right))
    }

    #[test]
    fn two_qubit_plan_shape() {
        let plan = default_plan_2q();
        assert_eq!(plan.phases().len(), 2);
        assert_eq!(plan.num_params(), 15);
        match &plan.phases()[0].kind {
            PhaseKind::Decoupling { partition, pre_units, post_units } => {
                assert_eq!(partition.blocks(), &[vec![0], vec![1]]);
                assert_eq!(partition.scored(), &[0, 1]);
                assert_eq!((*pre_units, *post_units), (1, 1));
            }
            _ => panic!("phase 1 must decouple"),
        }
        assert!(matches!(
            plan.phases()[1].kind,
            PhaseKind::LocalFidelity { objective: FidelityKind::Lhst }
        ));
    }

    #[test]
    fn four_qubit_plan_shape_and_refinement() {
        let plan = default_plan_4q(4, 2);
        assert_eq!(plan.phases().len(), 3);
        assert_eq!(plan.num_params(), 204);
        let partitions: Vec<&Partition> = plan
            .phases()
            .iter()
            .filter_map(|p| match &p.kind {
                PhaseKind::Decoupling { partition, .. } => Some(partition),
                _ => None,
            })
            .collect();
        assert_eq!(partitions.len(), 2);
        assert!(partitions[1].refines(partitions[0]));
        assert!(!partitions[0].refines(partitions[1]));
    }

    #[test]
    fn assembled_circuit_matches_the_unit_matrix_product() {
        let plan = default_plan_4q(1, 1);
        let mut rng = ChaCha12Rng::seed_from_u64(31);
        let params = ParamVector::random_uniform(plan.num_params(), &mut rng);
        let assembled = plan.assembled_circuit().unwrap();
        assert_eq!(assembled.num_params(), plan.num_params());
        let got = assembled.to_unitary(&params).unwrap();
        let mut product = Array2::<C64>::eye(16);
        for (i, unit) in plan.units().iter().enumerate() {
            let u = unit.circuit.to_unitary(&plan.unit_params(&params, i)).unwrap();
            product = kron_embed(&u, &unit.qubits, 4).dot(&product);
        }
        assert!(linalg::max_abs_diff(got.matrix(), &product) < 1e-10);
    }

    #[test]
    fn plan_validation_rejects_malformed_inputs() {
        let unit = || AnsatzUnit::new("V0", universal_two_qubit_ansatz(), vec![0, 1]);
        let cd = |trainable: Vec<usize>| PlanPhase {
            name: "d".into(),
            kind: PhaseKind::Decoupling {
                partition: Partition::bipartition(1, 1).unwrap(),
                pre_units: 1,
                post_units: 0,
            },
            trainable,
            adam: AdamConfig::default(),
        };
        let local = |trainable: Vec<usize>| PlanPhase {
            name: "l".into(),
            kind: PhaseKind::LocalFidelity { objective: FidelityKind::Lhst },
            trainable,
            adam: AdamConfig::default(),
        };
        DecouplingPlan::new(2, vec![unit()], vec![cd(vec![0]), local(vec![0])]).unwrap();
        // final phase must be a fidelity phase
        assert!(DecouplingPlan::new(2, vec![unit()], vec![cd(vec![0])]).is_err());
        // trainable indices must exist
        assert!(DecouplingPlan::new(2, vec![unit()], vec![cd(vec![1]), local(vec![0])]).is_err());
        // a decoupling phase may only train pre/post units
        let two_units = vec![
            AnsatzUnit::new("V0", universal_two_qubit_ansatz(), vec![0, 1]),
            AnsatzUnit::new("V1", universal_two_qubit_ansatz(), vec![0, 1]),
        ];
        assert!(
            DecouplingPlan::new(2, two_units.clone(), vec![cd(vec![1]), local(vec![0])]).is_err()
        );
        // unit/qubit mismatches
        assert!(DecouplingPlan::new(
            2,
            vec![AnsatzUnit::new("V0", universal_two_qubit_ansatz(), vec![0])],
            vec![local(vec![0])]
        )
        .is_err());
        assert!(DecouplingPlan::new(
            2,
            vec![AnsatzUnit::new("V0", universal_two_qubit_ansatz(), vec![0, 2])],
            vec![local(vec![0])]
        )
        .is_err());
        // duplicate unit names
        assert!(DecouplingPlan::new(
            2,
            vec![
                AnsatzUnit::new("V0", universal_two_qubit_ansatz(), vec![0, 1]),
                AnsatzUnit::new("V0", Circuit::empty(2).unwrap(), vec![0, 1]),
            ],
            vec![local(vec![0])]
        )
        .is_err());
        // partitions must refine monotonically
        let plan4 = |second: Partition| {
            let outer = layered_ansatz(4, 1).unwrap();
            DecouplingPlan::new(
                4,
                vec![
                    AnsatzUnit::new("V0", outer.clone(), vec![0, 1, 2, 3]),
                    AnsatzUnit::new("V1", outer, vec![0, 1, 2, 3]),
                ],
                vec![
                    PlanPhase {
                        name: "d1".into(),
                        kind: PhaseKind::Decoupling {
                            partition: Partition::bipartition(2, 2).unwrap(),
                            pre_units: 1,
                            post_units: 1,
                        },
                        trainable: vec![0],
                        adam: AdamConfig::default(),
                    },
                    PlanPhase {
                        name: "d2".into(),
                        kind: PhaseKind::Decoupling {
                            partition: second,
                            pre_units: 1,
                            post_units: 1,
                        },
                        trainable: vec![1],
                        adam: AdamConfig::default(),
                    },
                    PlanPhase {
                        name: "l".into(),
                        kind: PhaseKind::LocalFidelity { objective: FidelityKind::Lhst },
                        trainable: vec![0, 1],
                        adam: AdamConfig::default(),
                    },
                ],
            )
        };
        assert!(plan4(Partition::singletons(4).unwrap()).is_ok());
        assert!(plan4(Partition::new(vec![vec![0, 2], vec![1, 3]], vec![0, 1]).unwrap()).is_err());
    }

    #[test]
    fn cd_phase_circuit_matches_matrix_algebra() {
        let mut rng = ChaCha12Rng::seed_from_u64(32);
        // 2-qubit phase 1: W = V1^H U V0^H with V1 = I, V0 trainable
        let plan = default_plan_2q();
        let target = haar_random_unitary(2, &mut rng).unwrap();
        let global = ParamVector::random_uniform(plan.num_params(), &mut rng);
        let w = plan.cd_phase_circuit(&global, &target, 1, 1, &[0]).unwrap();
        assert_eq!(w.num_params(), 15);
        let phase_params = plan.gather(&global, &[0]);
        let v0 = plan.units()[0].circuit.to_unitary(&phase_params).unwrap();
        let expected = target.matrix().dot(&v0.adjoint().matrix().to_owned());
        let got = w.to_unitary(&phase_params).unwrap();
        assert!(linalg::max_abs_diff(got.matrix(), &expected) < 1e-10);
        // 4-qubit phase 2: frozen outer units, trainable 2-qubit blocks
        let plan = default_plan_4q(1, 1);
        let target = haar_random_unitary(4, &mut rng).unwrap();
        let global = ParamVector::random_uniform(plan.num_params(), &mut rng);
        let trainable = [1usize, 2, 7, 8];
        let w = plan.cd_phase_circuit(&global, &target, 3, 3, &trainable).unwrap();
        let phase_params = plan.gather(&global, &trainable);
        assert_eq!(w.num_params(), phase_params.len());
        let unit_matrix = |i: usize| {
            let u = plan.units()[i]
                .circuit
                .to_unitary(&plan.unit_params(&global, i))
                .unwrap();
            kron_embed(&u, &plan.units()[i].qubits, 4)
        };
        // W = (VA1 VB1 V1)^H U (VB0 VA0 V0)^H, frozen and trainable alike
        // bound at the current global values
        let q = unit_matrix(9).dot(&unit_matrix(8)).dot(&unit_matrix(7));
        let p = unit_matrix(2).dot(&unit_matrix(1)).dot(&unit_matrix(0));
        let expected = linalg::adjoint(&q).dot(target.matrix()).dot(&linalg::adjoint(&p));
        let got = w.to_unitary(&phase_params).unwrap();
        assert!(linalg::max_abs_diff(got.matrix(), &expected) < 1e-10);
    }

    #[test]
    fn local_phase_circuit_binds_frozen_units() {
        let mut rng = ChaCha12Rng::seed_from_u64(33);
        let plan = default_plan_4q(1, 1);
        let global = ParamVector::random_uniform(plan.num_params(), &mut rng);
        let trainable = [3usize, 4, 5, 6];
        let w = plan.local_phase_circuit(&global, &trainable).unwrap();
        assert_eq!(w.num_params(), 12);
        // at the gathered phase parameters, the phase circuit must equal the
        // assembled candidate at the full global vector
        let phase_params = plan.gather(&global, &trainable);
        let got = w.to_unitary(&phase_params).unwrap();
        let assembled = plan.assembled_circuit().unwrap().to_unitary(&global).unwrap();
        assert!(linalg::max_abs_diff(got.matrix(), assembled.matrix()) < 1e-10);
    }

    #[test]
    fn planted_solutions_have_zero_phase_costs() {
        // a target drawn from the ansatz family itself decouples exactly at
        // the planted parameters, phase by phase
        let plan = default_plan_4q(1, 1);
        let mut rng = ChaCha12Rng::seed_from_u64(34);
        let planted = ParamVector::random_uniform(plan.num_params(), &mut rng);
        let target = plan.assembled_circuit().unwrap().to_unitary(&planted).unwrap();
        let w1 = plan.cd_phase_circuit(&planted, &target, 1, 1, &[0, 9]).unwrap();
        let p1 = Partition::bipartition(2, 2).unwrap();
        let c1 = decoupling_cost_exact(&w1, &plan.gather(&planted, &[0, 9]), &p1).unwrap();
        assert!(c1.value < 1e-10, "phase-1 cost {}", c1.value);
        let w2 = plan.cd_phase_circuit(&planted, &target, 3, 3, &[1, 2, 7, 8]).unwrap();
        let p2 = Partition::singletons(4).unwrap();
        let c2 = decoupling_cost_exact(&w2, &plan.gather(&planted, &[1, 2, 7, 8]), &p2).unwrap();
        assert!(c2.value < 1e-10, "phase-2 cost {}", c2.value);
        // spindle targets come from this same construction
        let u = spindle_target(7).unwrap();
        let uu = linalg::adjoint(u.matrix()).dot(u.matrix());
        assert!(linalg::max_abs_diff(&uu, &Array2::eye(16)) < 1e-10);
        let again = spindle_target(7).unwrap();
        assert_eq!(u.matrix(), again.matrix());
        let other = spindle_target(8).unwrap();
        assert!(linalg::max_abs_diff(u.matrix(), other.matrix()) > 1e-3);
    }

    #[test]
    fn identity_target_compiles_to_fidelity_one() {
        let target = UnitaryMatrix::identity(2).unwrap();
        let result =
            run_decoupling(&target, &default_plan_2q(), Evaluator::Exact, 5).unwrap();
        assert!(result.fidelity >= 1.0 - 1e-6, "fidelity {}", result.fidelity);
        assert_eq!(result.phases.len(), 2);
    }

    #[test]
    fn product_targets_compile_to_near_perfect_fidelity() {
        let mut rng = ChaCha12Rng::seed_from_u64(35);
        let ua = haar_random_unitary(1, &mut rng).unwrap();
        let ub = haar_random_unitary(1, &mut rng).unwrap();
        let target = ua.tensor(&ub).unwrap();
        let fidelities: Vec<f64> = (0..3)
            .map(|seed| {
                run_decoupling(&target, &default_plan_2q(), Evaluator::Exact, seed)
                    .unwrap()
                    .fidelity
            })
            .collect();
        let mut sorted = fidelities.clone();
        sorted.sort_by(f64::total_cmp);
        assert!(sorted[1] >= 1.0 - 1e-6, "fidelities {fidelities:?}");
    }

    #[test]
    fn compiled_result_contract() {
        let mut rng = ChaCha12Rng::seed_from_u64(36);
        let target = haar_random_unitary(2, &mut rng).unwrap();
        let result =
            run_decoupling(&target, &default_plan_2q(), Evaluator::Exact, 11).unwrap();
        // the stored fidelity matches the bound circuit
        assert_eq!(result.final_circuit.num_params(), 0);
        let candidate = result.final_circuit.to_unitary(&ParamVector::zeros(0)).unwrap();
        let recomputed = gate_fidelity(&target, &candidate).unwrap();
        assert!((result.fidelity - recomputed).abs() < 1e-12);
        // the bound circuit equals the assembled family at the final params
        let assembled = default_plan_2q()
            .assembled_circuit()
            .unwrap()
            .to_unitary(&result.final_params)
            .unwrap();
        assert!(linalg::max_abs_diff(candidate.matrix(), assembled.matrix()) < 1e-12);
        // trace: contiguous phases, strictly increasing iterations
        let rows = result.trace.rows();
        assert_eq!(
            rows.len() as u64,
            result.phases.iter().map(|p| p.iterations).sum::<u64>()
        );
        let boundary = result.phases[0].iterations as usize;
        assert!(rows[..boundary].iter().all(|r| r.phase == "decouple"));
        assert!(rows[boundary..].iter().all(|r| r.phase == "local"));
        for pair in rows.windows(2) {
            assert_eq!(pair[1].iteration, pair[0].iteration + 1);
        }
        // JSON view: fixed top-level shape, circuit round-trips
        let text = result.to_json_string().unwrap();
        let value: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(value["seed"], 11);
        assert!(value["fidelity"].is_f64());
        assert!(value["hst"].is_f64());
        assert_eq!(value["phases"].as_array().unwrap().len(), 2);
        assert!(value["phases"][0]["stop_reason"].is_string());
        let circuit_text = serde_json::to_string(&value["circuit"]).unwrap();
        let parsed = Circuit::from_json_str(&circuit_text).unwrap();
        let reparsed = parsed.to_unitary(&ParamVector::zeros(0)).unwrap();
        assert!(linalg::max_abs_diff(reparsed.matrix(), candidate.matrix()) < 1e-12);
    }

    #[test]
    fn runs_are_seed_deterministic() {
        let mut rng = ChaCha12Rng::seed_from_u64(37);
        let target = haar_random_unitary(2, &mut rng).unwrap();
        let a = run_decoupling(&target, &default_plan_2q(), Evaluator::Exact, 3).unwrap();
        let b = run_decoupling(&target, &default_plan_2q(), Evaluator::Exact, 3).unwrap();
        assert_eq!(a.fidelity, b.fidelity);
        assert_eq!(a.final_params.angles(), b.final_params.angles());
        assert_eq!(a.trace.len(), b.trace.len());
        for (ra, rb) in a.trace.rows().iter().zip(b.trace.rows()) {
            assert_eq!(ra.iteration, rb.iteration);
            assert_eq!(ra.phase, rb.phase);
            assert_eq!(ra.objective, rb.objective);
            assert_eq!(ra.fidelity, rb.fidelity);
        }
        let c = run_decoupling(&target, &default_plan_2q(), Evaluator::Exact, 4).unwrap();
        assert_ne!(a.final_params.angles(), c.final_params.angles());
    }

    #[test]
    fn direct_baseline_stops_immediately_on_a_reachable_target() {
        let ansatz = universal_two_qubit_ansatz();
        let zeros = ParamVector::zeros(ansatz.num_params());
        let target = ansatz.to_unitary(&zeros).unwrap();
        let result = run_direct_baseline_from(
            &target,
            &ansatz,
            FidelityKind::Hst,
            &AdamConfig::default(),
            zeros,
            0,
        )
        .unwrap();
        assert_eq!(result.trace.len(), 1);
        assert_eq!(result.phases[0].stop_reason, StopReason::ThresholdReached);
        assert!(result.trace.rows()[0].objective < 1e-8);
        assert!((result.fidelity - 1.0).abs() < 1e-10);
    }

    #[test]
    fn frozen_units_stay_bit_identical_across_phases() {
        // a custom plan that never trains V1: its random initialization must
        // survive both phases untouched
        let units = vec![
            AnsatzUnit::new("V0", universal_two_qubit_ansatz(), vec![0, 1]),
            AnsatzUnit::new("V1", universal_two_qubit_ansatz(), vec![0, 1]),
        ];
        let phases = vec![
            PlanPhase {
                name: "decouple".into(),
                kind: PhaseKind::Decoupling {
                    partition: Partition::bipartition(1, 1).unwrap(),
                    pre_units: 1,
                    post_units: 1,
                },
                trainable: vec![0],
                adam: AdamConfig { max_iters: 40, ..AdamConfig::default() },
            },
            PlanPhase {
                name: "local".into(),
                kind: PhaseKind::LocalFidelity { objective: FidelityKind::Lhst },
                trainable: vec![0],
                adam: AdamConfig { max_iters: 40, cost_threshold: 0.0, ..AdamConfig::default() },
            },
        ];
        let plan = DecouplingPlan::new(2, units, phases).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(38);
        let target = haar_random_unitary(2, &mut rng).unwrap();
        let seed = 9u64;
        let result = run_decoupling(&target, &plan, Evaluator::Exact, seed).unwrap();
        let mut init_rng = ChaCha12Rng::seed_from_u64(seed);
        let init = ParamVector::random_uniform(plan.num_params(), &mut init_rng);
        let offset = plan.unit_param_offset(1);
        assert_eq!(
            &result.final_params.angles()[offset..offset + 15],
            &init.angles()[offset..offset + 15]
        );
        assert_ne!(&result.final_params.angles()[..15], &init.angles()[..15]);
    }
}
