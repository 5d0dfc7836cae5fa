//! Config-driven experiment runner: the same path the `decoupler compile`
//! subcommand takes, driven from code. Runs a trimmed two-qubit benchmark
//! over a few seeds and writes per-seed trace CSVs, a summary JSON, and an
//! SVG with median curves and interquartile bands.
//!
//! Usage: run_experiment [output_dir]

use decoupler::runner::{run_experiment, ExperimentConfig};

fn main() -> decoupler::Result<()> {
    let output_dir = std::env::args().nth(1).unwrap_or_else(|| "demo_output".into());
    let config = format!(
        r#"{{
            "experiment": "two_qubit_haar",
            "seeds": [0, 1, 2, 3, 4],
            "method": "decoupling",
            "evaluator": {{ "mode": "exact" }},
            "adam": {{ "max_iters": 400, "patience": 400 }},
            "target_seed": 7,
            "output_dir": {dir}
        }}"#,
        dir = serde_json::to_string(&output_dir).expect("string encodes"),
    );
    let config = ExperimentConfig::from_json_str(&config)?;
    let summary = run_experiment(&config)?;

    println!("experiment: two-qubit Haar target, {} seeds", summary.results.len());
    for result in &summary.results {
        println!(
            "  seed {}: fidelity {:.6} after {} iterations ({})",
            result.seed, result.fidelity, result.iterations, result.trace_file
        );
    }
    println!("median final fidelity: {:.6}", summary.median_final_fidelity);
    println!("artifacts in {output_dir}/: summary.json, trace_seed*.csv, curves.svg");
    Ok(())
}
