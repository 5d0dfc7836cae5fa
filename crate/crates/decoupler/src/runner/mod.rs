//! Declarative experiment runner behind the command-line interface: JSON
//! configs fan seeds out over a worker pool, and every run leaves a
//! reproducible paper trail (per-seed trace CSVs, a summary JSON with
//! per-iteration fidelity quartiles, and a training-curve SVG).
//!
//! Everything written to disk is a pure function of the config, so reruns
//! are bit-identical except for the wall-time column inside trace CSVs.

pub mod plot;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::circuit::{Circuit, ParamVector};
use crate::cost::{
    decoupling_cost_exact, decoupling_cost_sampled, derive_seed, CostEstimate, Evaluator,
    Partition,
};
use crate::decouple::{
    default_plan_2q, default_plan_4q, run_decoupling, run_direct_baseline, spindle_target,
    CompiledResult, DecouplingPlan, FidelityKind, PhaseReport, PlanPhase,
};
use crate::error::{Error, Result};
use crate::grad::{finite_difference_gradient, shift_rule_gradient_cd};
use crate::optimize::AdamConfig;
use crate::statekit::{haar_random_unitary, UnitaryMatrix};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Which target family an experiment compiles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    TwoQubitHaar,
    FourQubitHaar,
    FourQubitSpindle,
    /// Target loaded from a circuit JSON file (`target_circuit` in the
    /// config); the plan is picked by register width.
    Custom,
}

/// Which compilation pipeline runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Decoupling,
    DirectHst,
    DirectLhst,
}

/// Cost evaluation backend selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum EvaluatorConfig {
    Exact,
    Sampled { shots: u64 },
}

impl Default for EvaluatorConfig {
    fn default() -> Self {
        EvaluatorConfig::Exact
    }
}

/// Optional per-field overrides applied on top of every phase's optimizer
/// configuration (and the direct baseline's).
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamOverrides {
    pub alpha: Option<f64>,
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    pub epsilon: Option<f64>,
    pub max_iters: Option<u64>,
    pub cost_threshold: Option<f64>,
    pub patience: Option<u64>,
}

impl AdamOverrides {
    pub fn apply(&self, base: AdamConfig) -> AdamConfig {
        AdamConfig {
            alpha: self.alpha.unwrap_or(base.alpha),
            beta1: self.beta1.unwrap_or(base.beta1),
            beta2: self.beta2.unwrap_or(base.beta2),
            epsilon: self.epsilon.unwrap_or(base.epsilon),
            max_iters: self.max_iters.unwrap_or(base.max_iters),
            cost_threshold: self.cost_threshold.unwrap_or(base.cost_threshold),
            patience: self.patience.unwrap_or(base.patience),
        }
    }
}

/// Ansatz-depth and phase-structure overrides for the four-qubit plans.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlanOverrides {
    pub layers_outer: Option<usize>,
    pub layers_inner: Option<usize>,
    /// Train every unit in the final fidelity phase instead of only the
    /// middle single-qubit layers. Defaults to true for four-qubit plans,
    /// where the frozen outer blocks otherwise cap the reachable fidelity.
    pub joint_final: Option<bool>,
}

fn default_target_seed() -> u64 {
    1
}

fn default_share_target() -> bool {
    true
}

/// A complete experiment description; one JSON document drives one
/// `compile` invocation.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub seeds: Vec<u64>,
    pub method: Method,
    #[serde(default)]
    pub evaluator: EvaluatorConfig,
    #[serde(default)]
    pub adam: AdamOverrides,
    #[serde(default)]
    pub plan: PlanOverrides,
    /// Seed for drawing the target itself (independent of the run seeds).
    #[serde(default = "default_target_seed")]
    pub target_seed: u64,
    /// All run seeds share one target when true; otherwise each run draws
    /// its own target from (target_seed, run seed).
    #[serde(default = "default_share_target")]
    pub share_target: bool,
    /// Worker-pool size for the seed fan-out; defaults to the machine's
    /// available parallelism.
    #[serde(default)]
    pub workers: Option<usize>,
    /// Circuit JSON providing the target for `custom` experiments. The
    /// circuit must be fully bound (no free parameters).
    #[serde(default)]
    pub target_circuit: Option<PathBuf>,
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let config: ExperimentConfig = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_json_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::InvalidArgument("seeds must be nonempty".into()));
        }
        if let EvaluatorConfig::Sampled { shots } = self.evaluator {
            if shots == 0 {
                return Err(Error::InvalidArgument("sampled mode needs shots >= 1".into()));
            }
            if self.method != Method::Decoupling {
                return Err(Error::InvalidArgument(
                    "sampled evaluation applies to the decoupling cost; direct baselines \
                     evaluate their fidelity cost exactly"
                        .into(),
                ));
            }
        }
        if self.workers == Some(0) {
            return Err(Error::InvalidArgument("workers must be >= 1".into()));
        }
        if self.experiment == ExperimentKind::Custom && self.target_circuit.is_none() {
            return Err(Error::InvalidArgument(
                "custom experiments need target_circuit".into(),
            ));
        }
        Ok(())
    }

    fn plan(&self) -> Result<DecouplingPlan> {
        let base = match self.experiment {
            ExperimentKind::TwoQubitHaar => default_plan_2q(),
            ExperimentKind::FourQubitHaar => default_plan_4q(
                self.plan.layers_outer.unwrap_or(4),
                self.plan.layers_inner.unwrap_or(2),
            ),
            // spindle targets come from the single-layer family, so the
            // matching single-layer plan can express them exactly
            ExperimentKind::FourQubitSpindle => default_plan_4q(
                self.plan.layers_outer.unwrap_or(1),
                self.plan.layers_inner.unwrap_or(1),
            ),
            ExperimentKind::Custom => {
                let path = self.target_circuit.as_ref().expect("validated");
                let circuit = Circuit::from_json_str(&fs::read_to_string(path)?)?;
                match circuit.num_qubits() {
                    2 => default_plan_2q(),
                    4 => default_plan_4q(
                        self.plan.layers_outer.unwrap_or(4),
                        self.plan.layers_inner.unwrap_or(2),
                    ),
                    n => {
                        return Err(Error::InvalidArgument(format!(
                            "no default plan for {n} qubit targets (2 and 4 are supported)"
                        )))
                    }
                }
            }
        };
        let base = if self.plan.joint_final.unwrap_or(base.num_qubits() == 4) {
            base.with_joint_final_phase()
        } else {
            base
        };
        // apply optimizer overrides uniformly across phases
        let phases: Vec<PlanPhase> = base
            .phases()
            .iter()
            .map(|p| PlanPhase { adam: self.adam.apply(p.adam), ..p.clone() })
            .collect();
        DecouplingPlan::new(base.num_qubits(), base.units().to_vec(), phases)
    }

    fn target(&self, run_seed: u64) -> Result<UnitaryMatrix> {
        let seed = if self.share_target {
            self.target_seed
        } else {
            derive_seed(self.target_seed, run_seed)
        };
        match self.experiment {
            ExperimentKind::TwoQubitHaar => {
                haar_random_unitary(2, &mut ChaCha12Rng::seed_from_u64(seed))
            }
            ExperimentKind::FourQubitHaar => {
                haar_random_unitary(4, &mut ChaCha12Rng::seed_from_u64(seed))
            }
            ExperimentKind::FourQubitSpindle => spindle_target(seed),
            ExperimentKind::Custom => {
                let path = self.target_circuit.as_ref().expect("validated");
                let circuit = Circuit::from_json_str(&fs::read_to_string(path)?)?;
                if circuit.num_params() != 0 {
                    return Err(Error::InvalidArgument(
                        "target_circuit must be fully bound (no free parameters)".into(),
                    ));
                }
                circuit.to_unitary(&ParamVector::zeros(0))
            }
        }
    }

    fn evaluator(&self, run_seed: u64) -> Evaluator {
        match self.evaluator {
            EvaluatorConfig::Exact => Evaluator::Exact,
            EvaluatorConfig::Sampled { shots } => Evaluator::Sampled {
                shots,
                seed: derive_seed(run_seed, 0xE7A1),
            },
        }
    }
}

/// One seed's outcome inside [`RunSummary`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub fidelity: f64,
    pub hst: f64,
    pub iterations: u64,
    pub phases: Vec<PhaseReport>,
    pub trace_file: String,
}

/// Per-iteration fidelity quartiles across seeds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuartileRow {
    pub iteration: u64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
}

/// Everything `compile` learned, serialized as `summary.json`. Contains no
/// wall-clock information, so reruns produce identical bytes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub experiment: ExperimentKind,
    pub method: Method,
    pub evaluator: EvaluatorConfig,
    pub target_seed: u64,
    pub share_target: bool,
    pub seeds: Vec<u64>,
    pub median_final_fidelity: f64,
    pub results: Vec<SeedResult>,
    pub fidelity_quartiles: Vec<QuartileRow>,
}

fn median_of(mut values: Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    plot::quantile(&values, 0.5)
}

/// Per-iteration fidelity quartiles, padding shorter runs with their final
/// fidelity so late iterations still aggregate over every seed.
fn fidelity_quartiles(results: &[CompiledResult]) -> Vec<QuartileRow> {
    let len = results.iter().map(|r| r.trace.len()).max().unwrap_or(0);
    let mut rows = Vec::with_capacity(len);
    for t in 0..len {
        let mut values: Vec<f64> = results
            .iter()
            .map(|r| {
                let rows = r.trace.rows();
                rows.get(t).unwrap_or_else(|| rows.last().expect("nonempty trace")).fidelity
            })
            .collect();
        values.sort_by(f64::total_cmp);
        rows.push(QuartileRow {
            iteration: t as u64,
            q1: plot::quantile(&values, 0.25),
            median: plot::quantile(&values, 0.5),
            q3: plot::quantile(&values, 0.75),
        });
    }
    rows
}

fn run_one(config: &ExperimentConfig, plan: &DecouplingPlan, seed: u64) -> Result<CompiledResult> {
    let target = config.target(seed)?;
    match config.method {
        Method::Decoupling => run_decoupling(&target, plan, config.evaluator(seed), seed),
        Method::DirectHst | Method::DirectLhst => {
            let kind = if config.method == Method::DirectHst {
                FidelityKind::Hst
            } else {
                FidelityKind::Lhst
            };
            // same stopping rules as the plan's final phase, so comparisons
            // differ only in the objective being optimized
            let last = plan.phases().last().expect("plans have phases");
            run_direct_baseline(&target, &plan.assembled_circuit()?, kind, &last.adam, seed)
        }
    }
}

/// Runs every seed of an experiment over a bounded worker pool and writes
/// `trace_seed<k>.csv` per seed plus `summary.json` and `curves.svg`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunSummary> {
    config.validate()?;
    let plan = config.plan()?;
    let workers = config
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .min(config.seeds.len().max(1));
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("worker pool: {e}")))?;
    let results: Result<Vec<CompiledResult>> = pool.install(|| {
        use rayon::prelude::*;
        config.seeds.par_iter().map(|&seed| run_one(config, &plan, seed)).collect()
    });
    let results = results?;

    fs::create_dir_all(&config.output_dir)?;
    let mut seed_results = Vec::with_capacity(results.len());
    for result in &results {
        let trace_file = format!("trace_seed{}.csv", result.seed);
        fs::write(config.output_dir.join(&trace_file), result.trace.to_csv())?;
        seed_results.push(SeedResult {
            seed: result.seed,
            fidelity: result.fidelity,
            hst: result.hst,
            iterations: result.trace.len() as u64,
            phases: result.phases.clone(),
            trace_file,
        });
    }
    let summary = RunSummary {
        experiment: config.experiment,
        method: config.method,
        evaluator: config.evaluator,
        target_seed: config.target_seed,
        share_target: config.share_target,
        seeds: config.seeds.clone(),
        median_final_fidelity: median_of(results.iter().map(|r| r.fidelity).collect()),
        results: seed_results,
        fidelity_quartiles: fidelity_quartiles(&results),
    };
    let mut summary_text = serde_json::to_string_pretty(&summary)?;
    summary_text.push('\n');
    fs::write(config.output_dir.join("summary.json"), summary_text)?;

    let groups = plot::group_traces(results.into_iter().map(|r| r.trace).collect())?;
    fs::write(config.output_dir.join("curves.svg"), plot::render_svg(&groups)?)?;
    Ok(summary)
}

/// `compile` subcommand: load a config, run it, report the headline number.
pub fn cmd_compile(config_path: &Path, workers_flag: Option<usize>) -> Result<RunSummary> {
    let mut config = ExperimentConfig::from_file(config_path)?;
    if workers_flag.is_some() {
        config.workers = workers_flag;
    }
    let summary = run_experiment(&config)?;
    for result in &summary.results {
        println!(
            "seed {:>3}: fidelity {:.9}  ({} iterations)",
            result.seed, result.fidelity, result.iterations
        );
    }
    println!("median final fidelity: {:.9}", summary.median_final_fidelity);
    println!("outputs in {}", config.output_dir.display());
    Ok(summary)
}

fn parse_partition(spec: &str, circuit: &Circuit) -> Result<Partition> {
    let partition = Partition::parse(spec)?;
    if partition.num_qubits() != circuit.num_qubits() {
        return Err(Error::InvalidPartition(format!(
            "partition covers {} qubits but the circuit has {}",
            partition.num_qubits(),
            circuit.num_qubits()
        )));
    }
    Ok(partition)
}

/// How `cost-eval` should evaluate the decoupling cost.
pub enum CostEvalMode {
    Exact,
    Sampled { shots: u64, seed: u64 },
}

/// `cost-eval` subcommand: decoupling cost of a bound circuit under a
/// partition spec such as `"0,1;2,3"`. Parameterized circuits are evaluated
/// at all-zero angles.
pub fn cmd_cost_eval(
    circuit_path: &Path,
    partition_spec: &str,
    mode: CostEvalMode,
) -> Result<CostEstimate> {
    let circuit = Circuit::from_json_str(&fs::read_to_string(circuit_path)?)?;
    let partition = parse_partition(partition_spec, &circuit)?;
    let params = ParamVector::zeros(circuit.num_params());
    let estimate = match mode {
        CostEvalMode::Exact => decoupling_cost_exact(&circuit, &params, &partition)?,
        CostEvalMode::Sampled { shots, seed } => {
            decoupling_cost_sampled(&circuit, &params, &partition, shots, seed)?
        }
    };
    println!("{}", serde_json::to_string(&estimate)?);
    Ok(estimate)
}

/// `grad-check` subcommand: analytic shift-rule gradient of the decoupling
/// cost versus central finite differences at 5 random points. Returns true
/// when every component agrees within `tol`.
pub fn cmd_grad_check(
    circuit_path: &Path,
    partition_spec: Option<&str>,
    tol: f64,
    seed: u64,
) -> Result<bool> {
    let circuit = Circuit::from_json_str(&fs::read_to_string(circuit_path)?)?;
    let partition = match partition_spec {
        Some(spec) => parse_partition(spec, &circuit)?,
        None => Partition::singletons(circuit.num_qubits())?,
    };
    if circuit.num_params() == 0 {
        println!("circuit has no parameters; nothing to check");
        return Ok(true);
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut all_ok = true;
    for point in 0..5 {
        let params = ParamVector::random_uniform(circuit.num_params(), &mut rng);
        let analytic = shift_rule_gradient_cd(&circuit, &params, &partition, Evaluator::Exact)?;
        let numeric = finite_difference_gradient(
            |p| Ok(decoupling_cost_exact(&circuit, p, &partition)?.value),
            &params,
            1e-5,
        )?;
        let worst = analytic
            .partials
            .iter()
            .zip(&numeric.partials)
            .map(|(a, n)| (a - n).abs())
            .fold(0.0f64, f64::max);
        let ok = worst <= tol;
        all_ok &= ok;
        println!(
            "point {point}: max |shift - fd| = {worst:.3e}  {}",
            if ok { "ok" } else { "MISMATCH" }
        );
    }
    println!("{}", if all_ok { "gradient check passed" } else { "gradient check FAILED" });
    Ok(all_ok)
}

/// `plot` subcommand: aggregate trace CSVs into one SVG.
pub fn cmd_plot(trace_paths: &[PathBuf], output: &Path) -> Result<()> {
    if trace_paths.is_empty() {
        return Err(Error::InvalidArgument("no trace files given".into()));
    }
    let mut traces = Vec::with_capacity(trace_paths.len());
    for path in trace_paths {
        let trace = crate::optimize::TrainingTrace::from_csv(&fs::read_to_string(path)?)
            .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        traces.push(trace);
    }
    let groups = plot::group_traces(traces)?;
    fs::write(output, plot::render_svg(&groups)?)?;
    println!("wrote {}", output.display());
    Ok(())
}
