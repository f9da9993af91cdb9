//! Runs every method on a shipped experiment config over several seeds and
//! prints per-seed truth accuracy plus the mean.
//!
//! cargo run --release --example compare_methods -- configs/moon.toml 5 [first_seed]

use std::collections::BTreeMap;
use std::path::PathBuf;

use groupanno::eval::{run_experiment, ExperimentConfig, Method};

fn main() -> groupanno::Result<()> {
    let mut args = std::env::args().skip(1);
    let path = PathBuf::from(args.next().unwrap_or_else(|| "configs/circle.toml".into()));
    let seeds: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(5);
    let first: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);
    let base = ExperimentConfig::load(&path)?;

    let mut totals: BTreeMap<&str, f64> = BTreeMap::new();
    for seed in first..first + seeds {
        let report = run_experiment(&ExperimentConfig {
            seed,
            test_fraction: 0.0,
            ..base.clone()
        })?;
        print!("seed {seed:>2}");
        for m in Method::ALL {
            if let Some(r) = report.methods.get(m.name()) {
                print!("  {}={:.4}", m, r.truth_accuracy);
                *totals.entry(m.name()).or_default() += r.truth_accuracy;
            }
        }
        println!();
    }
    print!("mean   ");
    for m in Method::ALL {
        if let Some(t) = totals.get(m.name()) {
            print!("  {}={:.4}", m, t / seeds as f64);
        }
    }
    println!();
    Ok(())
}
