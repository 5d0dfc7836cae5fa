//! ADAM optimization with phase-aware training loops, stopping rules, and
//! CSV-serializable training traces.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::circuit::ParamVector;
use crate::cost::CostEstimate;
use crate::error::{Error, Result};
use crate::grad::GradientVector;

/// Smallest objective decrease that counts as progress for the patience rule.
pub const MIN_IMPROVEMENT: f64 = 1e-6;

/// ADAM hyper-parameters and the stopping rules of one training phase.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub max_iters: u64,
    pub cost_threshold: f64,
    pub patience: u64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            alpha: 0.01,
            beta1: 0.8,
            beta2: 0.9,
            epsilon: 1e-8,
            max_iters: 3000,
            cost_threshold: 1e-4,
            patience: 200,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) {
            return Err(Error::InvalidArgument(format!("alpha {} must be > 0", self.alpha)));
        }
        for (name, value) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0 < value && value < 1.0) {
                return Err(Error::InvalidArgument(format!("{name} {value} must be in (0, 1)")));
            }
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidArgument(format!("epsilon {} must be > 0", self.epsilon)));
        }
        Ok(())
    }
}

/// The optimizer's running moment estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
    step_count: u64,
}

impl AdamState {
    pub fn new(num_params: usize) -> Self {
        Self {
            first_moment: vec![0.0; num_params],
            second_moment: vec![0.0; num_params],
            step_count: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }
}

/// One bias-corrected ADAM update:
/// `m <- b1 m + (1-b1) g`, `v <- b2 v + (1-b2) g^2`,
/// `theta <- theta - alpha * m_hat / (sqrt(v_hat) + eps)` with
/// `m_hat = m/(1-b1^t)`, `v_hat = v/(1-b2^t)`.
pub fn adam_step(
    mut state: AdamState,
    params: &ParamVector,
    grad: &GradientVector,
    cfg: &AdamConfig,
) -> Result<(ParamVector, AdamState)> {
    cfg.validate()?;
    let n = params.len();
    if grad.len() != n || state.first_moment.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "adam step with {n} parameters, {} gradient entries, {} moment entries",
            grad.len(),
            state.first_moment.len()
        )));
    }
    state.step_count += 1;
    let t = state.step_count as i32;
    let m_corr = 1.0 - cfg.beta1.powi(t);
    let v_corr = 1.0 - cfg.beta2.powi(t);
    let mut updated = params.clone();
    for i in 0..n {
        let g = grad.partials[i];
        state.first_moment[i] = cfg.beta1 * state.first_moment[i] + (1.0 - cfg.beta1) * g;
        state.second_moment[i] = cfg.beta2 * state.second_moment[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = state.first_moment[i] / m_corr;
        let v_hat = state.second_moment[i] / v_corr;
        updated.angles_mut()[i] -= cfg.alpha * m_hat / (v_hat.sqrt() + cfg.epsilon);
    }
    Ok((updated, state))
}

/// Which stopping rule ended a training phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    ThresholdReached,
    PatienceExhausted,
    MaxIters,
}

impl std::fmt::Display for StopReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let text = match self {
            StopReason::ThresholdReached => "threshold_reached",
            StopReason::PatienceExhausted => "patience_exhausted",
            StopReason::MaxIters => "max_iters",
        };
        f.write_str(text)
    }
}

/// One recorded training iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub iteration: u64,
    pub phase: String,
    pub objective: f64,
    pub fidelity: f64,
    pub hst_cost: f64,
    pub wall_time_ms: f64,
}

const CSV_HEADER: &str = "iteration,phase,objective,fidelity,hst_cost,wall_time_ms";

/// An append-only training log with strictly increasing iteration numbers.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingTrace {
    rows: Vec<TraceRow>,
}

impl TrainingTrace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn rows(&self) -> &[TraceRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Iteration number the next phase should start from.
    pub fn next_iteration(&self) -> u64 {
        self.rows.last().map_or(0, |row| row.iteration + 1)
    }

    pub fn push(&mut self, row: TraceRow) -> Result<()> {
        if row.phase.contains(',') || row.phase.contains('\n') {
            return Err(Error::InvalidArgument(format!(
                "phase label {:?} cannot contain commas or newlines",
                row.phase
            )));
        }
        if let Some(last) = self.rows.last() {
            if row.iteration <= last.iteration {
                return Err(Error::InvalidArgument(format!(
                    "trace iterations must increase: {} after {}",
                    row.iteration, last.iteration
                )));
            }
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for row in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                row.iteration, row.phase, row.objective, row.fidelity, row.hst_cost,
                row.wall_time_ms
            ));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        match lines.next() {
            Some(header) if header.trim_end() == CSV_HEADER => {}
            other => {
                return Err(Error::Parse(format!(
                    "expected trace header {CSV_HEADER:?}, found {other:?}"
                )))
            }
        }
        let mut trace = Self::new();
        for (idx, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 6 {
                return Err(Error::Parse(format!(
                    "trace line {} has {} fields, expected 6",
                    idx + 2,
                    fields.len()
                )));
            }
            let number = |s: &str| -> Result<f64> {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Parse(format!("bad number {s:?} on trace line {}", idx + 2)))
            };
            trace.push(TraceRow {
                iteration: fields[0].trim().parse::<u64>().map_err(|_| {
                    Error::Parse(format!("bad iteration {:?} on trace line {}", fields[0], idx + 2))
                })?,
                phase: fields[1].trim().to_string(),
                objective: number(fields[2])?,
                fidelity: number(fields[3])?,
                hst_cost: number(fields[4])?,
                wall_time_ms: number(fields[5])?,
            })?;
        }
        Ok(trace)
    }
}

/// What a training phase needs from its objective: the cost, its gradient,
/// and fidelity diagnostics of the assembled candidate for the trace.
/// `iteration` is the global iteration number, which sampled evaluators fold
/// into their seeds so every iteration draws fresh shots deterministically.
pub trait PhaseObjective {
    fn evaluate(&mut self, params: &ParamVector, iteration: u64) -> Result<CostEstimate>;
    fn gradient(&mut self, params: &ParamVector, iteration: u64) -> Result<GradientVector>;
    /// `(gate_fidelity, hst_cost)` of the assembled candidate; recorded every
    /// iteration, never used as a stopping signal.
    fn diagnostics(&mut self, params: &ParamVector) -> Result<(f64, f64)>;
}

/// Runs ADAM on one phase objective until the cost drops below
/// `cost_threshold`, `patience` iterations pass without a [`MIN_IMPROVEMENT`]
/// decrease of the best value, or `max_iters` iterations complete. Appends
/// one trace row per iteration (numbered from `start_iteration`) and returns
/// the best parameters seen by objective value, plus the rule that fired.
pub fn train_phase<O: PhaseObjective + ?Sized>(
    objective: &mut O,
    params: ParamVector,
    cfg: &AdamConfig,
    phase_name: &str,
    start_iteration: u64,
    trace: &mut TrainingTrace,
) -> Result<(ParamVector, StopReason)> {
    cfg.validate()?;
    let started = Instant::now();
    let mut params = params;
    let mut state = AdamState::new(params.len());
    let mut best_params = params.clone();
    let mut best_value = f64::INFINITY;
    let mut stale_iterations = 0u64;
    for step in 0..cfg.max_iters {
        let iteration = start_iteration + step;
        let est = objective
            .evaluate(&params, iteration)
            .map_err(|e| with_iteration(e, iteration))?;
        let (fidelity, hst) = objective
            .diagnostics(&params)
            .map_err(|e| with_iteration(e, iteration))?;
        trace.push(TraceRow {
            iteration,
            phase: phase_name.to_string(),
            objective: est.value,
            fidelity,
            hst_cost: hst,
            wall_time_ms: started.elapsed().as_secs_f64() * 1e3,
        })?;
        if est.value < best_value {
            best_params = params.clone();
        }
        if est.value < best_value - MIN_IMPROVEMENT {
            stale_iterations = 0;
        } else {
            stale_iterations += 1;
        }
        best_value = best_value.min(est.value);
        if est.value < cfg.cost_threshold {
            return Ok((best_params, StopReason::ThresholdReached));
        }
        if stale_iterations >= cfg.patience {
            return Ok((best_params, StopReason::PatienceExhausted));
        }
        if step + 1 == cfg.max_iters {
            break;
        }
        let grad = objective
            .gradient(&params, iteration)
            .map_err(|e| with_iteration(e, iteration))?;
        (params, state) = adam_step(state, &params, &grad, cfg)?;
    }
    Ok((best_params, StopReason::MaxIters))
}

fn with_iteration(err: Error, iteration: u64) -> Error {
    match err {
        Error::NumericalFailure { message, .. } => Error::NumericalFailure { iteration, message },
        other => other,
    }
}
