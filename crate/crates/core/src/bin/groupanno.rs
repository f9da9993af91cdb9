//! Command-line front end. Exit status: 0 on success, 2 when the input
//! fails validation, 1 on any other error.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use groupanno::analysis::analyze;
use groupanno::classifier::FeatureMap;
use groupanno::eval::{self, canonicalize, infer, write_inference, ExperimentConfig, Method, MethodConfigs};
use groupanno::io::{self, write_report, HashingFeaturizer};
use groupanno::synth::{self, Shape, SynthConfig};
use groupanno::{Error, Result};

#[derive(Parser)]
#[command(version, about = "Annotator group bias estimation and truth inference")]
struct Cli {
    /// Random seed for generation and the experiment split.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for the E-step (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Directory for every output file.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset: annotations.csv, annotators.csv, gold.csv, truth.json.
    Generate {
        #[arg(long, value_enum, default_value_t = ShapeArg::Circle)]
        shape: ShapeArg,
        /// TOML generator settings; flags below override it.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        instances_per_class: Option<usize>,
    },
    /// Group positive rates and ANOVA of annotator biases.
    Analyze {
        #[command(flatten)]
        input: Input,
        #[arg(long)]
        annotators: PathBuf,
    },
    /// Truth inference; writes posteriors.csv, bias.json, classifier.json, trace.csv.
    Infer {
        #[arg(long, value_enum)]
        method: MethodArg,
        #[command(flatten)]
        input: Input,
        /// Required for groupanno.
        #[arg(long)]
        annotators: Option<PathBuf>,
        /// TOML with [em], [zencrowd] and [train] tables.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the feature map of the config.
        #[arg(long, value_enum)]
        feature_map: Option<FeatureMapArg>,
    },
    /// Score posteriors against gold labels; writes metrics.json and metrics.txt.
    Evaluate {
        #[arg(long)]
        posteriors: PathBuf,
        #[arg(long)]
        gold: PathBuf,
    },
    /// Run an experiment config; writes report.json and report.txt.
    Experiment {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Args)]
struct Input {
    #[arg(long)]
    annotations: PathBuf,
    /// Separate features (`instance_id,feature_*` or `instance_id,text`).
    #[arg(long)]
    instances: Option<PathBuf>,
    /// Hash buckets for a text column.
    #[arg(long, default_value_t = 1024)]
    text_buckets: usize,
}

impl Input {
    fn load(&self) -> Result<groupanno::AnnotationDataset> {
        let featurizer = HashingFeaturizer {
            num_buckets: self.text_buckets,
            ..HashingFeaturizer::default()
        };
        let mut ds = io::load_dataset(&self.annotations, self.instances.as_deref(), &featurizer)?;
        canonicalize(&mut ds);
        Ok(ds)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ShapeArg {
    Circle,
    Moon,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Mv,
    Zencrowd,
    Lfc,
    Groupanno,
}

#[derive(Clone, Copy, ValueEnum)]
enum FeatureMapArg {
    Identity,
    Quadratic,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 2 } else { 1 })
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    let out = &cli.out_dir;
    match cli.command {
        Command::Generate {
            shape,
            config,
            instances_per_class,
        } => {
            let mut cfg: SynthConfig = match config {
                Some(p) => read_toml(&p)?,
                None => SynthConfig::default(),
            };
            cfg.shape = match shape {
                ShapeArg::Circle => Shape::Circle,
                ShapeArg::Moon => Shape::Moon,
            };
            if let Some(n) = instances_per_class {
                cfg.instances_per_class = n;
            }
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            let bundle = synth::generate(&cfg)?;
            io::write_bundle(&bundle, out)?;
            println!(
                "wrote {} instances and {} annotations to {}",
                bundle.dataset.len(),
                bundle.dataset.num_annotations(),
                out.display()
            );
        }
        Command::Analyze { input, annotators } => {
            let ds = input.load()?;
            let table = io::read_annotators(&annotators)?;
            let result = analyze(&ds, &table)?;
            write_report(&result, &out.join("analysis.json"))?;
            print!("{}", io::Tabular::to_table(&result));
        }
        Command::Infer {
            method,
            input,
            annotators,
            config,
            feature_map,
        } => {
            let ds = input.load()?;
            let table = annotators.as_deref().map(io::read_annotators).transpose()?;
            let mut configs: MethodConfigs = match config {
                Some(p) => read_toml(&p)?,
                None => MethodConfigs::default(),
            };
            if let Some(fm) = feature_map {
                configs.em.feature_map = match fm {
                    FeatureMapArg::Identity => FeatureMap::Identity,
                    FeatureMapArg::Quadratic => FeatureMap::Quadratic,
                };
            }
            configs.train.feature_map = configs.em.feature_map;
            let method = match method {
                MethodArg::Mv => Method::Mv,
                MethodArg::Zencrowd => Method::Zencrowd,
                MethodArg::Lfc => Method::Lfc,
                MethodArg::Groupanno => Method::Groupanno,
            };
            let output = infer(method, &ds, table.as_ref(), &configs)?;
            write_inference(&output, out)?;
            let positives = output.posteriors.hard().iter().filter(|&&y| y == 1).count();
            println!(
                "{method}: {} instances, {positives} labeled positive; outputs in {}",
                output.posteriors.len(),
                out.display()
            );
        }
        Command::Evaluate { posteriors, gold } => {
            let p = io::read_posteriors(&posteriors)?;
            let g = io::read_gold(&gold)?;
            let m = eval::evaluate(&p, &g)?;
            let metrics: BTreeMap<String, f64> = [
                ("accuracy", m.accuracy),
                ("f1", m.f1),
                ("precision", m.precision),
                ("recall", m.recall),
            ]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
            write_report(&metrics, &out.join("metrics.json"))?;
            print!("{}", io::Tabular::to_table(&metrics));
        }
        Command::Experiment { config } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            let report = eval::run_experiment(&cfg)?;
            write_report(&report, &out.join("report.json"))?;
            print!("{}", io::Tabular::to_table(&report));
        }
    }
    Ok(())
}

fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.into(),
        source: e,
    })?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}
