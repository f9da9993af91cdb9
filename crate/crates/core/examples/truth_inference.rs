//! Fits the group-bias EM model on a generated dataset and compares the
//! fitted group sensitivities/specificities with the rates realized by the
//! generator.
//!
//! cargo run --release --example truth_inference -- moon 0

use groupanno::classifier::FeatureMap;
use groupanno::em::{self, report_group_bias, EmConfig};
use groupanno::eval::evaluate;
use groupanno::synth::{generate, Shape, SynthConfig};

fn main() -> groupanno::Result<()> {
    let mut args = std::env::args().skip(1);
    let shape = match args.next().as_deref() {
        Some("moon") => Shape::Moon,
        _ => Shape::Circle,
    };
    let seed = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);
    let bundle = generate(&SynthConfig {
        shape,
        seed,
        ..SynthConfig::default()
    })?;
    let config = EmConfig {
        feature_map: match shape {
            Shape::Circle => FeatureMap::Quadratic,
            Shape::Moon => FeatureMap::Identity,
        },
        ..EmConfig::default()
    };
    let state = em::run(&bundle.dataset, &bundle.table, &config)?;
    let m = evaluate(&state.posteriors, &bundle.gold)?;
    println!("{shape:?} seed {seed}: accuracy {:.4}  f1 {:.4}", m.accuracy, m.f1);

    let fitted = report_group_bias(&state, &bundle.table);
    println!("{:<12} {:>5} {:>9} {:>9} {:>7}", "category", "group", "fitted", "realized", "error");
    let mut worst: f64 = 0.0;
    for (name, est, real) in [
        ("alpha", &fitted.alpha, &bundle.realized_group_alpha),
        ("beta", &fitted.beta, &bundle.realized_group_beta),
    ] {
        for (p, cat) in fitted.categories.iter().enumerate() {
            for g in 0..2 {
                let (Some(e), Some(r)) = (est[p][g], real[p][g]) else {
                    continue;
                };
                worst = worst.max((e - r).abs());
                println!("{:<12} {:>5} {:>9.4} {:>9.4} {:>7.4}", format!("{name} {cat}"), g, e, r, e - r);
            }
        }
    }
    println!("max |error| {worst:.4}");
    Ok(())
}
