//! CSV and JSON ingestion and output.
//!
//! Annotations are long format, one row per annotation:
//! `instance_id,annotator_id,label[,feature_0..feature_{d-1} | text]`.
//! Features may instead live in `instances.csv`
//! (`instance_id,feature_0..` or `instance_id,text`). The annotator table is
//! `annotator_id,<category>...` with 0/1 cells, and gold labels live in
//! their own `instance_id,label` file.
//!
//! Floats are written in Rust's shortest round-trip form, so every value
//! reads back bit-identical.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::hash::Hasher;
use std::path::{Path, PathBuf};

use csv::{ReaderBuilder, StringRecord, Writer};
use fnv::FnvHasher;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synth::GroundTruthBundle;
use crate::types::{Annotation, AnnotationDataset, AnnotatorTable, Instance, Label, PosteriorLabels};

/// Bag-of-words features hashed into a fixed number of buckets.
///
/// Tokens are maximal runs of alphanumeric characters, hashed with 64-bit
/// FNV-1a over their UTF-8 bytes. Bucket counts are L2-normalized, so token
/// order never matters and the output norm is at most 1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct HashingFeaturizer {
    pub num_buckets: usize,
    pub lowercase: bool,
}

impl Default for HashingFeaturizer {
    fn default() -> Self {
        HashingFeaturizer {
            num_buckets: 1024,
            lowercase: true,
        }
    }
}

impl HashingFeaturizer {
    pub fn transform(&self, text: &str) -> Vec<f64> {
        let n = self.num_buckets.max(1);
        let mut v = vec![0.0; n];
        for token in text.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()) {
            let mut h = FnvHasher::default();
            if self.lowercase {
                h.write(token.to_lowercase().as_bytes());
            } else {
                h.write(token.as_bytes());
            }
            v[(h.finish() % n as u64) as usize] += 1.0;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        v
    }
}

/// Where feature values come from in a CSV with an id column.
enum FeatureSource {
    None,
    Columns(Vec<usize>),
    Text(usize),
}

fn feature_source(headers: &StringRecord, path: &Path) -> Result<FeatureSource> {
    let cols: Vec<usize> = headers
        .iter()
        .enumerate()
        .filter(|(_, h)| h.starts_with("feature_"))
        .map(|(i, _)| i)
        .collect();
    let text = headers.iter().position(|h| h == "text");
    match (cols.is_empty(), text) {
        (false, Some(_)) => Err(Error::Parse {
            path: path.into(),
            line: 1,
            message: "both feature_* and text columns present".into(),
        }),
        (false, None) => Ok(FeatureSource::Columns(cols)),
        (true, Some(t)) => Ok(FeatureSource::Text(t)),
        (true, None) => Ok(FeatureSource::None),
    }
}

impl FeatureSource {
    fn dim(&self, featurizer: &HashingFeaturizer) -> usize {
        match self {
            FeatureSource::None => 0,
            FeatureSource::Columns(c) => c.len(),
            FeatureSource::Text(_) => featurizer.num_buckets,
        }
    }

    fn read(
        &self,
        rec: &StringRecord,
        featurizer: &HashingFeaturizer,
        path: &Path,
        line: u64,
    ) -> Result<Vec<f64>> {
        match self {
            FeatureSource::None => Ok(Vec::new()),
            FeatureSource::Text(i) => Ok(featurizer.transform(&rec[*i])),
            FeatureSource::Columns(cols) => cols
                .iter()
                .map(|&i| {
                    let cell = rec[i].trim();
                    cell.parse::<f64>()
                        .ok()
                        .filter(|v| v.is_finite())
                        .ok_or_else(|| Error::Parse {
                            path: path.into(),
                            line,
                            message: format!("feature value {cell:?} is not a finite number"),
                        })
                })
                .collect(),
        }
    }
}

struct Table {
    path: PathBuf,
    headers: StringRecord,
    rows: Vec<(u64, StringRecord)>,
}

impl Table {
    fn read(path: &Path) -> Result<Table> {
        let mut rdr = ReaderBuilder::new()
            .has_headers(true)
            .from_path(path)
            .map_err(|e| csv_error(path, e))?;
        let headers = rdr
            .headers()
            .map_err(|e| csv_error(path, e))?
            .iter()
            .map(str::trim)
            .collect();
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| csv_error(path, e))?;
            let line = rec.position().map_or(0, |p| p.line());
            rows.push((line, rec));
        }
        Ok(Table {
            path: path.into(),
            headers,
            rows,
        })
    }

    fn column(&self, name: &str) -> Result<usize> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Parse {
                path: self.path.clone(),
                line: 1,
                message: format!("missing required column {name:?}"),
            })
    }

    fn label(&self, line: u64, cell: &str) -> Result<Label> {
        match cell.trim() {
            "0" => Ok(0),
            "1" => Ok(1),
            other => Err(Error::LabelOutOfDomain {
                path: self.path.clone(),
                line,
                value: other.to_string(),
            }),
        }
    }

    fn nonempty_id(&self, line: u64, cell: &str, what: &str) -> Result<String> {
        // Ids are opaque: kept verbatim, surrounding spaces included.
        if cell.is_empty() {
            return Err(Error::Parse {
                path: self.path.clone(),
                line,
                message: format!("empty {what}"),
            });
        }
        Ok(cell.to_string())
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::io(path, source),
        other => Error::Parse {
            path: path.into(),
            line,
            message: format!("{other:?}"),
        },
    }
}

/// Reads long-format annotations. Instances appear in order of first row;
/// features repeated on several rows of one instance must agree.
pub fn read_annotations(path: &Path, featurizer: &HashingFeaturizer) -> Result<AnnotationDataset> {
    let t = Table::read(path)?;
    let (c_inst, c_ann, c_label) = (
        t.column("instance_id")?,
        t.column("annotator_id")?,
        t.column("label")?,
    );
    let source = feature_source(&t.headers, path)?;
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut instances: Vec<Instance> = Vec::new();
    for (line, rec) in &t.rows {
        let line = *line;
        let id = t.nonempty_id(line, &rec[c_inst], "instance_id")?;
        let annotator_id = t.nonempty_id(line, &rec[c_ann], "annotator_id")?;
        let label = t.label(line, &rec[c_label])?;
        let features = source.read(rec, featurizer, path, line)?;
        let k = match index.get(&id) {
            Some(&k) => {
                if instances[k].features != features {
                    return Err(Error::Parse {
                        path: path.into(),
                        line,
                        message: format!("features of instance {id:?} differ from an earlier row"),
                    });
                }
                k
            }
            None => {
                index.insert(id.clone(), instances.len());
                instances.push(Instance {
                    instance_id: id,
                    features,
                    annotations: Vec::new(),
                });
                instances.len() - 1
            }
        };
        instances[k].annotations.push(Annotation { annotator_id, label });
    }
    Ok(AnnotationDataset {
        instances,
        feature_dim: source.dim(featurizer),
    })
}

/// Reads `instance_id` plus feature columns or a text column.
pub fn read_instances(
    path: &Path,
    featurizer: &HashingFeaturizer,
) -> Result<(BTreeMap<String, Vec<f64>>, usize)> {
    let t = Table::read(path)?;
    let c_inst = t.column("instance_id")?;
    let source = feature_source(&t.headers, path)?;
    let mut out = BTreeMap::new();
    for (line, rec) in &t.rows {
        let id = t.nonempty_id(*line, &rec[c_inst], "instance_id")?;
        let x = source.read(rec, featurizer, path, *line)?;
        if out.insert(id.clone(), x).is_some() {
            return Err(Error::Parse {
                path: path.into(),
                line: *line,
                message: format!("duplicate instance_id {id:?}"),
            });
        }
    }
    Ok((out, source.dim(featurizer)))
}

/// Replaces every instance's features with the entry from `features`.
pub fn attach_features(
    dataset: &mut AnnotationDataset,
    features: &BTreeMap<String, Vec<f64>>,
    dim: usize,
) -> Result<()> {
    for inst in &mut dataset.instances {
        inst.features = features
            .get(&inst.instance_id)
            .cloned()
            .ok_or_else(|| Error::Coverage(inst.instance_id.clone()))?;
    }
    dataset.feature_dim = dim;
    Ok(())
}

/// Reads annotations and, when given, features from a separate file.
pub fn load_dataset(
    annotations: &Path,
    instances: Option<&Path>,
    featurizer: &HashingFeaturizer,
) -> Result<AnnotationDataset> {
    let mut ds = read_annotations(annotations, featurizer)?;
    if let Some(p) = instances {
        let (features, dim) = read_instances(p, featurizer)?;
        attach_features(&mut ds, &features, dim)?;
    }
    Ok(ds)
}

pub fn read_annotators(path: &Path) -> Result<AnnotatorTable> {
    let t = Table::read(path)?;
    let c_id = t.column("annotator_id")?;
    let cat_cols: Vec<usize> = (0..t.headers.len()).filter(|&i| i != c_id).collect();
    let mut table = AnnotatorTable::new(cat_cols.iter().map(|&i| t.headers[i].to_string()).collect());
    for (line, rec) in &t.rows {
        let id = t.nonempty_id(*line, &rec[c_id], "annotator_id")?;
        let groups = cat_cols
            .iter()
            .map(|&i| match rec[i].trim() {
                "0" => Ok(0u8),
                "1" => Ok(1u8),
                v => Err(Error::NonBinaryGroup {
                    path: path.into(),
                    line: *line,
                    category: t.headers[i].to_string(),
                    value: v.to_string(),
                }),
            })
            .collect::<Result<Vec<u8>>>()?;
        if table.groups(&id).is_some() {
            return Err(Error::DuplicateAnnotator {
                path: path.into(),
                line: *line,
                id,
            });
        }
        table.insert(id, groups);
    }
    Ok(table)
}

pub fn read_gold(path: &Path) -> Result<BTreeMap<String, Label>> {
    let t = Table::read(path)?;
    let (c_inst, c_label) = (t.column("instance_id")?, t.column("label")?);
    let mut gold = BTreeMap::new();
    for (line, rec) in &t.rows {
        let id = t.nonempty_id(*line, &rec[c_inst], "instance_id")?;
        let y = t.label(*line, &rec[c_label])?;
        if gold.insert(id.clone(), y).is_some() {
            return Err(Error::Parse {
                path: path.into(),
                line: *line,
                message: format!("duplicate instance_id {id:?}"),
            });
        }
    }
    Ok(gold)
}

/// Reads `instance_id,mu[,hard]`; the hard column is derived and ignored.
pub fn read_posteriors(path: &Path) -> Result<PosteriorLabels> {
    let t = Table::read(path)?;
    let (c_inst, c_mu) = (t.column("instance_id")?, t.column("mu")?);
    let mut out = PosteriorLabels {
        instance_ids: Vec::new(),
        mu: Vec::new(),
    };
    for (line, rec) in &t.rows {
        let mu = rec[c_mu]
            .trim()
            .parse::<f64>()
            .ok()
            .filter(|m| (0.0..=1.0).contains(m))
            .ok_or_else(|| Error::Parse {
                path: path.into(),
                line: *line,
                message: format!("mu {:?} is not a probability", &rec[c_mu]),
            })?;
        out.instance_ids.push(t.nonempty_id(*line, &rec[c_inst], "instance_id")?);
        out.mu.push(mu);
    }
    Ok(out)
}

fn writer(path: &Path) -> Result<Writer<fs::File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Writer::from_path(path).map_err(|e| csv_error(path, e))
}

fn finish(mut w: Writer<fs::File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes long-format annotations with features inline as `feature_k`.
pub fn write_annotations(dataset: &AnnotationDataset, path: &Path) -> Result<()> {
    let mut w = writer(path)?;
    let mut header = vec!["instance_id".to_string(), "annotator_id".into(), "label".into()];
    header.extend((0..dataset.feature_dim).map(|k| format!("feature_{k}")));
    w.write_record(&header).map_err(|e| csv_error(path, e))?;
    for inst in &dataset.instances {
        if inst.features.len() != dataset.feature_dim {
            return Err(Error::Dimension {
                expected: dataset.feature_dim,
                found: inst.features.len(),
                context: format!("instance {:?}", inst.instance_id),
            });
        }
        let feats: Vec<String> = inst.features.iter().map(f64::to_string).collect();
        for a in &inst.annotations {
            let mut row = vec![inst.instance_id.clone(), a.annotator_id.clone(), a.label.to_string()];
            row.extend(feats.iter().cloned());
            w.write_record(&row).map_err(|e| csv_error(path, e))?;
        }
    }
    finish(w, path)
}

pub fn write_annotators(table: &AnnotatorTable, path: &Path) -> Result<()> {
    let mut w = writer(path)?;
    let mut header = vec!["annotator_id".to_string()];
    header.extend(table.categories.iter().cloned());
    w.write_record(&header).map_err(|e| csv_error(path, e))?;
    for (id, groups) in &table.annotators {
        let mut row = vec![id.clone()];
        row.extend(groups.iter().map(u8::to_string));
        w.write_record(&row).map_err(|e| csv_error(path, e))?;
    }
    finish(w, path)
}

pub fn write_gold(gold: &BTreeMap<String, Label>, path: &Path) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["instance_id", "label"]).map_err(|e| csv_error(path, e))?;
    for (id, y) in gold {
        w.write_record([id.as_str(), &y.to_string()]).map_err(|e| csv_error(path, e))?;
    }
    finish(w, path)
}

pub fn write_posteriors(posteriors: &PosteriorLabels, path: &Path) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["instance_id", "mu", "hard"]).map_err(|e| csv_error(path, e))?;
    for (id, &mu) in posteriors.instance_ids.iter().zip(&posteriors.mu) {
        let hard = PosteriorLabels::hard_label(mu).to_string();
        w.write_record([id.as_str(), &mu.to_string(), &hard])
            .map_err(|e| csv_error(path, e))?;
    }
    finish(w, path)
}

/// `epoch,objective` with epochs numbered from 1.
pub fn write_trace(trace: &[f64], path: &Path) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["epoch", "objective"]).map_err(|e| csv_error(path, e))?;
    for (k, v) in trace.iter().enumerate() {
        w.write_record([(k + 1).to_string(), v.to_string()])
            .map_err(|e| csv_error(path, e))?;
    }
    finish(w, path)
}

pub fn write_json<T: Serialize + ?Sized>(value: &T, path: &Path) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write_text(&s, path)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&s)?)
}

pub fn write_text(text: &str, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// True biases and realized group marginals of a synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub categories: Vec<String>,
    pub true_annot_alpha: BTreeMap<String, f64>,
    pub true_annot_beta: BTreeMap<String, f64>,
    pub realized_group_alpha: Vec<[Option<f64>; 2]>,
    pub realized_group_beta: Vec<[Option<f64>; 2]>,
}

impl Truth {
    pub fn of(bundle: &GroundTruthBundle) -> Truth {
        Truth {
            categories: bundle.table.categories.clone(),
            true_annot_alpha: bundle.true_annot_alpha.clone(),
            true_annot_beta: bundle.true_annot_beta.clone(),
            realized_group_alpha: bundle.realized_group_alpha.clone(),
            realized_group_beta: bundle.realized_group_beta.clone(),
        }
    }
}

/// Writes `annotations.csv`, `annotators.csv`, `gold.csv` and `truth.json`.
pub fn write_bundle(bundle: &GroundTruthBundle, dir: &Path) -> Result<()> {
    write_annotations(&bundle.dataset, &dir.join("annotations.csv"))?;
    write_annotators(&bundle.table, &dir.join("annotators.csv"))?;
    write_gold(&bundle.gold, &dir.join("gold.csv"))?;
    write_json(&Truth::of(bundle), &dir.join("truth.json"))
}

/// A result that can also render itself as a plain-text table.
pub trait Tabular {
    fn to_table(&self) -> String;
}

impl Tabular for BTreeMap<String, f64> {
    fn to_table(&self) -> String {
        self.iter().map(|(k, v)| format!("{k:<24} {v:.4}\n")).collect()
    }
}

/// Writes `results` as JSON to `path` and as a text table to the same path
/// with a `.txt` extension. Both files depend only on `results`.
pub fn write_report<T: Serialize + Tabular>(results: &T, path: &Path) -> Result<()> {
    write_json(results, path)?;
    write_text(&results.to_table(), &path.with_extension("txt"))
}
