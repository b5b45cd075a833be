//! End-to-end stages over a corpus: codebook, features, training,
//! prediction, evaluation and trend analysis, plus the files that pass
//! results between them.
//!
//! Parallel stages collect results in corpus order, so output never depends
//! on the number of worker threads.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::Config;
use crate::crf::{decode, fit_pairwise_partial, threshold, PairwisePotentials};
use crate::error::{Error, Result};
use crate::eval::{evaluate, train_test_split, AccuracyReport};
use crate::features::{
    dense_descriptors, extract_all, train_codebook, BodyFeatures, CacheEntry, Codebook, Descriptor, Raster,
};
use crate::ingest::{Corpus, ImageRecord, PartRegion, Source};
use crate::schema::AttributeSchema;
use crate::svm::{train_bundle, ModelBundle};
use crate::trend::{build_report, prevalence, CorpusTag, PrevalenceTable, TrendReport};

/// Runs `f` on a dedicated pool of `jobs` worker threads.
pub fn with_jobs<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if jobs == 0 {
        return Err(Error::InvalidParameter("--jobs must be at least 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::InvalidParameter(format!("cannot start {jobs} worker threads: {e}")))?;
    Ok(pool.install(f))
}

/// Hex SHA-256 of a byte string.
pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Hex SHA-256 of a file's contents.
pub fn file_fingerprint(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// An image skipped because it could not be read or decoded.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Failure {
    pub id: String,
    pub path: PathBuf,
    pub message: String,
}

enum Loaded {
    Ok(Raster, [PartRegion; 9]),
    Skipped(Failure),
}

fn load_image(record: &ImageRecord) -> Result<Loaded> {
    match Raster::load(&record.path) {
        Ok(raster) => {
            if let Some((w, h)) = record.size {
                if (w, h) != (raster.width(), raster.height()) {
                    return Err(Error::InvalidRecord {
                        id: record.id.clone(),
                        message: format!(
                            "manifest says {w}x{h} but the image is {}x{}",
                            raster.width(),
                            raster.height()
                        ),
                    });
                }
            }
            let regions = record.regions_for(raster.width(), raster.height()).map_err(|e| Error::InvalidRecord {
                id: record.id.clone(),
                message: e.to_string(),
            })?;
            Ok(Loaded::Ok(raster, regions))
        }
        Err(e @ (Error::Image { .. } | Error::Io { .. })) => Ok(Loaded::Skipped(Failure {
            id: record.id.clone(),
            path: record.path.clone(),
            message: e.to_string(),
        })),
        Err(e) => Err(e),
    }
}

fn split_loaded<T>(results: Vec<Result<std::result::Result<T, Failure>>>) -> Result<(Vec<T>, Vec<Failure>)> {
    let mut ok = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        match r? {
            Ok(v) => ok.push(v),
            Err(f) => failures.push(f),
        }
    }
    Ok((ok, failures))
}

fn id_seed(seed: u64, id: &str) -> u64 {
    let digest = Sha256::digest(id.as_bytes());
    seed ^ u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

/// Dense descriptors from every part region of every image, at most
/// `per_image` per image (a seeded subsample, kept in extraction order).
pub fn sample_descriptors(corpus: &Corpus, per_image: usize, seed: u64) -> Result<(Vec<Descriptor>, Vec<Failure>)> {
    let results: Vec<_> = corpus
        .records
        .par_iter()
        .map(|record| {
            let (raster, regions) = match load_image(record)? {
                Loaded::Ok(r, g) => (r, g),
                Loaded::Skipped(f) => return Ok(Err(f)),
            };
            let gray = raster.luma();
            let mut all = Vec::new();
            for region in &regions {
                all.extend(dense_descriptors(&raster, &gray, region)?);
            }
            if all.len() > per_image {
                let mut rng = ChaCha8Rng::seed_from_u64(id_seed(seed, &record.id));
                let mut keep = sample(&mut rng, all.len(), per_image).into_vec();
                keep.sort_unstable();
                all = keep.into_iter().map(|i| std::mem::take(&mut all[i])).collect();
            }
            Ok(Ok(all))
        })
        .collect();
    let (per_image_sets, failures) = split_loaded(results)?;
    Ok((per_image_sets.into_iter().flatten().collect(), failures))
}

/// Trains the visual-word codebook on descriptors sampled from the corpus.
pub fn build_codebook(corpus: &Corpus, config: &Config, seed: u64, trained_on: &str) -> Result<(Codebook, Vec<Failure>)> {
    let (descriptors, failures) = sample_descriptors(corpus, config.codebook_samples_per_image, seed)?;
    let codebook = train_codebook(
        &descriptors,
        config.codebook_k,
        seed,
        config.kmeans_options(),
        trained_on.to_string(),
    )?;
    Ok((codebook, failures))
}

/// 72-block features for every readable image, in corpus order.
pub fn extract_features(corpus: &Corpus, codebook: &Codebook) -> Result<(Vec<CacheEntry>, Vec<Failure>)> {
    let results: Vec<_> = corpus
        .records
        .par_iter()
        .map(|record| {
            Ok(match load_image(record)? {
                Loaded::Ok(raster, regions) => Ok(CacheEntry {
                    id: record.id.clone(),
                    features: extract_all(&raster, &regions, codebook).map_err(|e| Error::InvalidRecord {
                        id: record.id.clone(),
                        message: e.to_string(),
                    })?,
                }),
                Loaded::Skipped(f) => Err(f),
            })
        })
        .collect();
    split_loaded(results)
}

/// Seeded split of the labeled images into (train, test) ids, each in
/// corpus order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub seed: u64,
    pub train_fraction: f64,
    pub train: Vec<String>,
    pub test: Vec<String>,
}

pub const SPLIT_FORMAT: &str = "trendscope-split";
const SPLIT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SplitFile {
    format: String,
    version: u32,
    #[serde(flatten)]
    split: Split,
}

impl Split {
    pub fn labeled(corpus: &Corpus, train_fraction: f64, seed: u64) -> Result<Split> {
        let labeled: Vec<&str> = corpus
            .records
            .iter()
            .filter(|r| r.labels.is_some())
            .map(|r| r.id.as_str())
            .collect();
        let (tr, te) = train_test_split(labeled.len(), train_fraction, seed)?;
        Ok(Split {
            seed,
            train_fraction,
            train: tr.into_iter().map(|i| labeled[i].to_string()).collect(),
            test: te.into_iter().map(|i| labeled[i].to_string()).collect(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&SplitFile {
            format: SPLIT_FORMAT.into(),
            version: SPLIT_VERSION,
            split: self.clone(),
        })? + "\n";
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Split> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: SplitFile = serde_json::from_str(&text)?;
        if file.format != SPLIT_FORMAT || file.version != SPLIT_VERSION {
            return Err(Error::Format(format!("{} v{}", file.format, file.version)));
        }
        Ok(file.split)
    }
}

/// A trained model and, when enabled, the CRF potentials fitted on the same
/// training labels.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub bundle: ModelBundle,
    pub potentials: Option<PairwisePotentials>,
}

/// Trains on the listed images (all labeled images with features when
/// `train_ids` is `None`). Images without labels or features are skipped.
pub fn train(
    schema: &AttributeSchema,
    corpus: &Corpus,
    entries: &[CacheEntry],
    train_ids: Option<&[String]>,
    config: &Config,
    seed: u64,
) -> Result<TrainedModel> {
    let by_id: HashMap<&str, &BodyFeatures> = entries.iter().map(|e| (e.id.as_str(), &e.features)).collect();
    let ids: Vec<&str> = match train_ids {
        Some(ids) => ids.iter().map(String::as_str).collect(),
        None => corpus.records.iter().map(|r| r.id.as_str()).collect(),
    };
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for id in ids {
        let record = corpus
            .get(id)
            .ok_or_else(|| Error::InvalidRecord {
                id: id.to_string(),
                message: "training id is not in the corpus".into(),
            })?;
        let (Some(f), Some(l)) = (by_id.get(id), record.label_vector(schema)) else {
            continue;
        };
        features.push(Arc::new((*f).clone()));
        labels.push(l);
    }
    if features.is_empty() {
        return Err(Error::Empty("no labeled images with features to train on".into()));
    }
    let bundle = train_bundle(schema, &features, &labels, &config.train, seed)?;
    let potentials = if config.crf_enabled && schema.len() >= 2 {
        Some(fit_pairwise_partial(&labels, config.crf_alpha)?)
    } else {
        None
    };
    Ok(TrainedModel { bundle, potentials })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub id: String,
    /// Calibrated probabilities in schema order.
    pub probs: Vec<f64>,
    /// Per-attribute thresholding at 0.5.
    pub independent: Vec<bool>,
    /// Final decisions: CRF-decoded when potentials were given, otherwise
    /// equal to `independent`.
    pub decisions: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    pub schema_version: String,
    pub attribute_ids: Vec<String>,
    /// `independent`, `map` or `marginal_threshold`.
    pub decoder: String,
    pub rows: Vec<PredictionRow>,
}

pub const PREDICTIONS_FORMAT: &str = "trendscope-predictions";
const PREDICTIONS_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PredictionsHeader {
    format: String,
    version: u32,
    schema_version: String,
    attributes: Vec<String>,
    decoder: String,
}

impl Predictions {
    pub fn check_schema(&self, schema: &AttributeSchema) -> Result<()> {
        if self.schema_version != schema.version()
            || self.attribute_ids.len() != schema.len()
            || self.attribute_ids.iter().zip(schema.ids()).any(|(a, b)| a != b)
        {
            return Err(Error::SchemaMismatch(format!(
                "predictions were made under schema `{}`, active schema is `{}`",
                self.schema_version,
                schema.version()
            )));
        }
        Ok(())
    }

    /// (id, final decisions) pairs.
    pub fn decisions(&self) -> Vec<(String, Vec<bool>)> {
        self.rows.iter().map(|r| (r.id.clone(), r.decisions.clone())).collect()
    }

    /// (id, independent decisions) pairs.
    pub fn independent(&self) -> Vec<(String, Vec<bool>)> {
        self.rows.iter().map(|r| (r.id.clone(), r.independent.clone())).collect()
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = serde_json::to_string(&PredictionsHeader {
            format: PREDICTIONS_FORMAT.into(),
            version: PREDICTIONS_VERSION,
            schema_version: self.schema_version.clone(),
            attributes: self.attribute_ids.clone(),
            decoder: self.decoder.clone(),
        })?;
        out.push('\n');
        for r in &self.rows {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        w.write_all(self.to_jsonl()?.as_bytes())
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Predictions> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(file).lines();
        let parse_err = |line: usize, message: String| Error::Parse {
            context: path.display().to_string(),
            line,
            message,
        };
        let header_text = lines
            .next()
            .ok_or_else(|| parse_err(1, "missing header".into()))?
            .map_err(|e| Error::io(path, e))?;
        let header: PredictionsHeader = serde_json::from_str(&header_text).map_err(|e| parse_err(1, e.to_string()))?;
        if header.format != PREDICTIONS_FORMAT || header.version != PREDICTIONS_VERSION {
            return Err(Error::Format(format!("{} v{}", header.format, header.version)));
        }
        let n = header.attributes.len();
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let row: PredictionRow = serde_json::from_str(&line).map_err(|e| parse_err(i + 2, e.to_string()))?;
            if row.probs.len() != n || row.independent.len() != n || row.decisions.len() != n {
                return Err(parse_err(i + 2, format!("expected {n} values per field")));
            }
            rows.push(row);
        }
        Ok(Predictions {
            schema_version: header.schema_version,
            attribute_ids: header.attributes,
            decoder: header.decoder,
            rows,
        })
    }
}

/// Probabilities and decisions for every feature entry, in input order.
pub fn predict(
    schema: &AttributeSchema,
    bundle: &ModelBundle,
    potentials: Option<&PairwisePotentials>,
    entries: &[CacheEntry],
    config: &Config,
) -> Result<Predictions> {
    bundle.check_schema(schema)?;
    if let Some(p) = potentials {
        if p.n() != schema.len() {
            return Err(Error::SchemaMismatch(format!(
                "CRF potentials have {} nodes for {} attributes",
                p.n(),
                schema.len()
            )));
        }
    }
    let rows = entries
        .par_iter()
        .map(|e| {
            let probs = bundle.probabilities(&e.features)?;
            let independent = threshold(&probs);
            let decisions = match potentials {
                Some(p) => decode(&probs, p, &config.decode)?,
                None => independent.clone(),
            };
            Ok(PredictionRow {
                id: e.id.clone(),
                probs,
                independent,
                decisions,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let decoder = match (potentials, config.decode.mode) {
        (None, _) => "independent",
        (Some(_), crate::crf::DecodeMode::Map) => "map",
        (Some(_), crate::crf::DecodeMode::MarginalThreshold) => "marginal_threshold",
    };
    Ok(Predictions {
        schema_version: schema.version().to_string(),
        attribute_ids: schema.ids().map(String::from).collect(),
        decoder: decoder.into(),
        rows,
    })
}

/// Accuracy of the final and of the independent decisions over the listed
/// images (all predicted images when `ids` is `None`).
pub fn evaluate_predictions(
    predictions: &Predictions,
    corpus: &Corpus,
    schema: &AttributeSchema,
    ids: Option<&[String]>,
) -> Result<(AccuracyReport, AccuracyReport)> {
    predictions.check_schema(schema)?;
    let rows: Vec<&PredictionRow> = match ids {
        None => predictions.rows.iter().collect(),
        Some(ids) => {
            let by_id: HashMap<&str, &PredictionRow> = predictions.rows.iter().map(|r| (r.id.as_str(), r)).collect();
            ids.iter()
                .map(|id| {
                    by_id.get(id.as_str()).copied().ok_or_else(|| Error::InvalidRecord {
                        id: id.clone(),
                        message: "no prediction for this evaluation image".into(),
                    })
                })
                .collect::<Result<_>>()?
        }
    };
    let finals: Vec<(String, Vec<bool>)> = rows.iter().map(|r| (r.id.clone(), r.decisions.clone())).collect();
    let indep: Vec<(String, Vec<bool>)> = rows.iter().map(|r| (r.id.clone(), r.independent.clone())).collect();
    Ok((evaluate(&finals, corpus, schema)?, evaluate(&indep, corpus, schema)?))
}

/// One prevalence table per (source, year) present among the predictions,
/// in tag order.
pub fn prevalence_by_tag(
    predictions: &Predictions,
    corpus: &Corpus,
    schema: &AttributeSchema,
) -> Result<Vec<PrevalenceTable>> {
    predictions.check_schema(schema)?;
    let mut groups: BTreeMap<CorpusTag, Vec<Vec<bool>>> = BTreeMap::new();
    for row in &predictions.rows {
        let record = corpus.get(&row.id).ok_or_else(|| Error::InvalidRecord {
            id: row.id.clone(),
            message: "predicted image is not in the corpus".into(),
        })?;
        groups
            .entry(CorpusTag {
                source: record.source,
                year: record.year,
            })
            .or_default()
            .push(row.decisions.clone());
    }
    groups
        .into_iter()
        .map(|(tag, rows)| prevalence(&rows, tag, schema))
        .collect()
}

/// The show/street report for the configured pair of years.
pub fn report_from_tables(tables: &[PrevalenceTable], schema: &AttributeSchema, config: &Config) -> Result<TrendReport> {
    let find = |source: Source, year: i32| {
        tables
            .iter()
            .find(|t| t.tag == CorpusTag { source, year })
            .ok_or_else(|| Error::Empty(format!("missing prevalence table for {source}/{year}")))
    };
    let (y1, y2) = (config.trend_year1, config.trend_year2);
    build_report(
        find(Source::FashionShow, y1)?,
        find(Source::FashionShow, y2)?,
        find(Source::StreetChic, y1)?,
        find(Source::StreetChic, y2)?,
        schema,
        config.sign_threshold,
    )
}

/// Prevalence tables from ground-truth labels, for corpora labeled on every
/// attribute.
pub fn prevalence_from_labels(corpus: &Corpus, schema: &AttributeSchema) -> Result<Vec<PrevalenceTable>> {
    let mut groups: BTreeMap<CorpusTag, Vec<Vec<bool>>> = BTreeMap::new();
    for record in &corpus.records {
        let missing = || Error::InvalidRecord {
            id: record.id.clone(),
            message: "label-based prevalence needs every attribute labeled".into(),
        };
        let labels = record.label_vector(schema).ok_or_else(missing)?;
        let row = labels.into_iter().map(|l| l.ok_or_else(missing)).collect::<Result<Vec<bool>>>()?;
        groups
            .entry(CorpusTag {
                source: record.source,
                year: record.year,
            })
            .or_default()
            .push(row);
    }
    groups
        .into_iter()
        .map(|(tag, rows)| prevalence(&rows, tag, schema))
        .collect()
}

pub const CORPUS_STATS_FORMAT: &str = "trendscope-corpus-stats";

/// Image counts per (source, year), with how many of them carry labels.
pub fn corpus_stats_csv(corpus: &Corpus) -> Result<String> {
    let mut labeled: BTreeMap<(Source, i32), usize> = BTreeMap::new();
    for r in corpus.records.iter().filter(|r| r.labels.is_some()) {
        *labeled.entry((r.source, r.year)).or_insert(0) += 1;
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["source", "year", "images", "labeled"])?;
    for ((source, year), n) in crate::ingest::corpus_stats(corpus) {
        let l = labeled.get(&(source, year)).copied().unwrap_or(0);
        w.write_record([source.as_str().to_string(), year.to_string(), n.to_string(), l.to_string()])?;
    }
    let body = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    Ok(format!("# {CORPUS_STATS_FORMAT} v1\n") + &String::from_utf8(body).expect("csv output is UTF-8"))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputFingerprint {
    pub path: PathBuf,
    pub sha256: String,
}

pub const RUN_MANIFEST_FORMAT: &str = "trendscope-run";
const RUN_MANIFEST_VERSION: u32 = 1;

/// Provenance record written next to the outputs of every run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    pub version: u32,
    pub command: String,
    pub args: Vec<String>,
    pub seed: u64,
    pub jobs: usize,
    pub schema_version: String,
    pub config: BTreeMap<String, String>,
    pub inputs: Vec<InputFingerprint>,
    pub outputs: Vec<PathBuf>,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub decode_failures: usize,
    pub skipped: Vec<Failure>,
}

fn unix_now() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

impl RunManifest {
    pub fn new(command: &str, args: Vec<String>, seed: u64, jobs: usize, schema: &AttributeSchema, config: &Config) -> Self {
        RunManifest {
            format: RUN_MANIFEST_FORMAT.into(),
            version: RUN_MANIFEST_VERSION,
            command: command.into(),
            args,
            seed,
            jobs,
            schema_version: schema.version().into(),
            config: config.snapshot(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            started_unix: unix_now(),
            finished_unix: 0,
            decode_failures: 0,
            skipped: Vec::new(),
        }
    }

    /// Records the SHA-256 of an input file.
    pub fn input(&mut self, path: &Path) -> Result<()> {
        let sha256 = file_fingerprint(path)?;
        self.inputs.push(InputFingerprint {
            path: path.to_path_buf(),
            sha256,
        });
        Ok(())
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.to_path_buf());
    }

    /// Tallies images skipped because they could not be decoded. The same
    /// image failing in two stages counts once.
    pub fn skipped(&mut self, failures: &[Failure]) {
        for f in failures {
            if !self.skipped.iter().any(|s| s.id == f.id) {
                self.skipped.push(f.clone());
            }
        }
        self.decode_failures = self.skipped.len();
    }

    /// Path the manifest is written to: `<dir>/<command>.run.json`.
    pub fn path_in(&self, dir: &Path) -> PathBuf {
        dir.join(format!("{}.run.json", self.command))
    }

    /// Stamps the finish time and writes the manifest into `dir`.
    pub fn finish(mut self, dir: &Path) -> Result<PathBuf> {
        self.finished_unix = unix_now();
        let path = self.path_in(dir);
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let text = serde_json::to_string_pretty(&self)? + "\n";
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    pub fn load(path: &Path) -> Result<RunManifest> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: RunManifest = serde_json::from_str(&text)?;
        if m.format != RUN_MANIFEST_FORMAT || m.version != RUN_MANIFEST_VERSION {
            return Err(Error::Format(format!("{} v{}", m.format, m.version)));
        }
        Ok(m)
    }
}

/// File names used inside an output directory.
pub mod files {
    pub const CORPUS_STATS: &str = "corpus_stats.csv";
    pub const CODEBOOK: &str = "codebook.json";
    pub const FEATURES: &str = "features.jsonl";
    pub const SPLIT: &str = "split.json";
    pub const MODEL: &str = "model.json";
    pub const CRF: &str = "crf.json";
    pub const PREDICTIONS: &str = "predictions.jsonl";
    pub const EVAL: &str = "eval.csv";
    pub const EVAL_INDEPENDENT: &str = "eval_independent.csv";
    pub const PREVALENCE: &str = "prevalence.json";
    pub const REPORT_DIR: &str = "report";
}

/// What [`run_all`] produced.
#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub split: Split,
    /// Test-set accuracy of the final decisions.
    pub eval: AccuracyReport,
    /// Test-set accuracy of independent thresholding.
    pub eval_independent: AccuracyReport,
    /// `None` when the corpus lacks one of the four (source, year) tags the
    /// report compares.
    pub report: Option<TrendReport>,
    pub failures: Vec<Failure>,
}

/// Every stage in sequence, writing each stage's file into `out_dir` and
/// listing them in `manifest`: corpus statistics, codebook, features, split,
/// model (and CRF), predictions for all images, test-set evaluation,
/// prevalence, and the trend report when all four tags are present.
pub fn run_all(
    corpus: &Corpus,
    schema: &AttributeSchema,
    config: &Config,
    seed: u64,
    out_dir: &Path,
    manifest: &mut RunManifest,
) -> Result<PipelineRun> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let write = |manifest: &mut RunManifest, name: &str, text: String| -> Result<()> {
        let path = out_dir.join(name);
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        manifest.output(&path);
        Ok(())
    };
    write(manifest, files::CORPUS_STATS, corpus_stats_csv(corpus)?)?;

    let (codebook, failures) = build_codebook(corpus, config, seed, &format!("{} images", corpus.len()))?;
    manifest.skipped(&failures);
    write(manifest, files::CODEBOOK, codebook.to_json()?)?;

    let (entries, failures) = extract_features(corpus, &codebook)?;
    manifest.skipped(&failures);
    let path = out_dir.join(files::FEATURES);
    crate::features::write_cache(&path, codebook.fingerprint(), &entries)?;
    manifest.output(&path);

    let split = Split::labeled(corpus, config.train_fraction, seed)?;
    let path = out_dir.join(files::SPLIT);
    split.save(&path)?;
    manifest.output(&path);

    let model = train(schema, corpus, &entries, Some(&split.train), config, seed)?;
    let path = out_dir.join(files::MODEL);
    model.bundle.save(&path)?;
    manifest.output(&path);
    if let Some(p) = &model.potentials {
        let path = out_dir.join(files::CRF);
        p.save(&path)?;
        manifest.output(&path);
    }

    let predictions = predict(schema, &model.bundle, model.potentials.as_ref(), &entries, config)?;
    let path = out_dir.join(files::PREDICTIONS);
    predictions.save(&path)?;
    manifest.output(&path);

    let decoded: std::collections::HashSet<&str> = predictions.rows.iter().map(|r| r.id.as_str()).collect();
    let test_ids: Vec<String> = split.test.iter().filter(|id| decoded.contains(id.as_str())).cloned().collect();
    let (eval, eval_independent) = evaluate_predictions(&predictions, corpus, schema, Some(&test_ids))?;
    write(manifest, files::EVAL, eval.to_csv()?)?;
    write(manifest, files::EVAL_INDEPENDENT, eval_independent.to_csv()?)?;

    let tables = prevalence_by_tag(&predictions, corpus, schema)?;
    let path = out_dir.join(files::PREVALENCE);
    crate::trend::write_prevalence(&path, &tables)?;
    manifest.output(&path);

    let report = match report_from_tables(&tables, schema, config) {
        Ok(report) => {
            let written = crate::trend::write_report(&report, &out_dir.join(files::REPORT_DIR))?;
            for p in written.all() {
                manifest.output(p);
            }
            Some(report)
        }
        Err(Error::Empty(_)) => None,
        Err(e) => return Err(e),
    };

    Ok(PipelineRun {
        split,
        eval,
        eval_independent,
        report,
        failures: manifest.skipped.clone(),
    })
}
