//! Group positive rates and the two ANOVA tables on a generated dataset.
//! Both categories carry injected group effects, so expect stars.
//!
//! cargo run --release --example bias_analysis -- 5

use groupanno::analysis::analyze;
use groupanno::synth::{generate, SynthConfig};

fn main() -> groupanno::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let bundle = generate(&SynthConfig {
        seed,
        ..SynthConfig::default()
    })?;
    let a = analyze(&bundle.dataset, &bundle.table)?;
    println!("positive rates\n{}", a.positive_rate_table());
    println!("{}", a.anova_table());
    Ok(())
}
