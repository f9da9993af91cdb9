//! Generates a synthetic dataset and writes annotations.csv,
//! annotators.csv, gold.csv and truth.json.
//!
//! cargo run --example generate_synthetic -- out/moon moon 400 7

use std::path::PathBuf;

use groupanno::io::write_bundle;
use groupanno::synth::{generate, Shape, SynthConfig};

fn main() -> groupanno::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "synthetic".into()));
    let shape = match args.next().as_deref() {
        Some("moon") => Shape::Moon,
        _ => Shape::Circle,
    };
    let per_class = args.next().and_then(|s| s.parse().ok()).unwrap_or(400);
    let seed = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);

    let config = SynthConfig {
        shape,
        instances_per_class: per_class,
        seed,
        ..SynthConfig::default()
    };
    let bundle = generate(&config)?;
    write_bundle(&bundle, &out)?;

    println!(
        "{} instances, {} annotations, {} annotators -> {}",
        bundle.dataset.len(),
        bundle.dataset.num_annotations(),
        bundle.table.annotators.len(),
        out.display()
    );
    for (p, cat) in bundle.table.categories.iter().enumerate() {
        let fmt = |v: Option<f64>| v.map_or("n/a".into(), |x| format!("{x:.3}"));
        println!(
            "{cat}: realized alpha {} / {}, beta {} / {}",
            fmt(bundle.realized_group_alpha[p][0]),
            fmt(bundle.realized_group_alpha[p][1]),
            fmt(bundle.realized_group_beta[p][0]),
            fmt(bundle.realized_group_beta[p][1]),
        );
    }
    Ok(())
}
