//! Trains the logistic classifier directly on gold labels of an experiment
//! config's data and reports held-out accuracy: the ceiling any truth
//! inference method can reach through the classifier.
//!
//! cargo run --release --example train_classifier -- configs/circle.toml

use std::collections::HashSet;
use std::path::PathBuf;

use groupanno::classifier::{fit, predict_proba};
use groupanno::eval::{binary_metrics, load_data, split_ids, ExperimentConfig};
use groupanno::types::PosteriorLabels;

fn main() -> groupanno::Result<()> {
    let path = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "configs/circle.toml".into()));
    let config = ExperimentConfig::load(&path)?;
    let data = load_data(&config)?;
    let mut train_cfg = config.methods_config.train.clone();
    train_cfg.feature_map = config.methods_config.em.feature_map;

    let ids: Vec<String> = data.dataset.instances.iter().map(|i| i.instance_id.clone()).collect();
    let (train_ids, _) = split_ids(&ids, config.test_fraction, config.seed);
    let train: HashSet<&str> = train_ids.iter().map(String::as_str).collect();

    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for inst in data.dataset.instances.iter().filter(|i| train.contains(i.instance_id.as_str())) {
        xs.push(inst.features.clone());
        ys.push(f64::from(data.gold[&inst.instance_id]));
    }
    let params = fit(&xs, &ys, &train_cfg)?;

    let (mut pred_train, mut gold_train, mut pred_test, mut gold_test) = (vec![], vec![], vec![], vec![]);
    for inst in &data.dataset.instances {
        let p = PosteriorLabels::hard_label(predict_proba(&params, &inst.features)?);
        let y = data.gold[&inst.instance_id];
        if train.contains(inst.instance_id.as_str()) {
            pred_train.push(p);
            gold_train.push(y);
        } else {
            pred_test.push(p);
            gold_test.push(y);
        }
    }
    let tr = binary_metrics(&pred_train, &gold_train);
    println!("feature map {:?}", train_cfg.feature_map);
    println!("train accuracy {:.4} ({} instances)", tr.accuracy, pred_train.len());
    if !pred_test.is_empty() {
        let te = binary_metrics(&pred_test, &gold_test);
        println!("test accuracy  {:.4} ({} instances), f1 {:.4}", te.accuracy, pred_test.len(), te.f1);
    }
    println!("weights {:?} intercept {:.4}", params.weights, params.intercept);
    Ok(())
}
