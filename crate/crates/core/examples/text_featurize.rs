//! Loads comments from a text column, hashes them into bag-of-words vectors
//! and runs the group model on them. Uses the small fixture under tests/.
//!
//! cargo run --example text_featurize -- 64

use std::path::Path;

use groupanno::em::{self, report_group_bias, EmConfig};
use groupanno::io::{self, HashingFeaturizer};

fn main() -> groupanno::Result<()> {
    let buckets = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(64);
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/text");
    let featurizer = HashingFeaturizer {
        num_buckets: buckets,
        ..HashingFeaturizer::default()
    };
    let v = featurizer.transform("You are an IDIOT");
    println!("'You are an IDIOT' -> {} nonzero of {buckets}", v.iter().filter(|x| **x != 0.0).count());

    let mut ds = io::load_dataset(&dir.join("annotations.csv"), Some(&dir.join("instances.csv")), &featurizer)?;
    groupanno::eval::canonicalize(&mut ds);
    let table = io::read_annotators(&dir.join("annotators.csv"))?;
    let state = em::run(&ds, &table, &EmConfig::default())?;
    for (id, mu) in state.posteriors.instance_ids.iter().zip(&state.posteriors.mu).take(6) {
        println!("{id} {mu:.3}");
    }
    let g = report_group_bias(&state, &table);
    println!("{:?} alpha {:?} beta {:?}", g.categories, g.alpha, g.beta);
    Ok(())
}
