//! `trendscope`: clothing attribute learning and fashion trend analysis.
//!
//! Each subcommand runs one pipeline stage, reads the files written by the
//! stages before it, writes its own outputs into `--out`, and records a run
//! manifest (`<command>.run.json`) next to them.
//!
//! Exit codes: 0 on success, 1 on data or model errors, 2 on usage errors.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use trendscope_core::config::Config;
use trendscope_core::crf::PairwisePotentials;
use trendscope_core::features::{read_cache, write_cache, CacheEntry, Codebook};
use trendscope_core::ingest::{load_manifest, Corpus};
use trendscope_core::pipeline::{self, files, Failure, Predictions, RunManifest, Split};
use trendscope_core::schema::{load_schema, AttributeSchema};
use trendscope_core::svm::ModelBundle;
use trendscope_core::synth;
use trendscope_core::trend::{self, pearson};

#[derive(Debug, Parser)]
#[command(name = "trendscope", version, about = "Clothing attribute classifiers and fashion trend statistics")]
struct Cli {
    /// Run configuration (line-oriented `key = value` file).
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Seed for every random choice (codebook, splits, cross-validation).
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Worker threads; results do not depend on this. Defaults to the
    /// number of available cores.
    #[arg(long, global = true, value_parser = clap::value_parser!(u64).range(1..1025))]
    jobs: Option<u64>,

    /// Attribute schema file; defaults to the built-in 60-attribute schema.
    #[arg(long, global = true, value_name = "FILE")]
    schema: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct ManifestArg {
    /// Image manifest (one JSON record per line).
    #[arg(long, value_name = "FILE")]
    manifest: PathBuf,
}

#[derive(Debug, Args)]
struct OutArg {
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Validate a manifest and write per-(source, year) image counts.
    Ingest {
        #[command(flatten)]
        manifest: ManifestArg,
        #[command(flatten)]
        out: OutArg,
    },
    /// Train the visual-word codebook on dense descriptors.
    Codebook {
        #[command(flatten)]
        manifest: ManifestArg,
        #[command(flatten)]
        out: OutArg,
    },
    /// Extract the 72-block features of every image.
    Extract {
        #[command(flatten)]
        manifest: ManifestArg,
        #[arg(long, value_name = "FILE")]
        codebook: PathBuf,
        #[command(flatten)]
        out: OutArg,
    },
    /// Train per-attribute classifiers and the CRF potentials.
    Train {
        #[command(flatten)]
        manifest: ManifestArg,
        #[arg(long, value_name = "FILE")]
        features: PathBuf,
        /// Train on every labeled image instead of a seeded train split.
        #[arg(long)]
        all: bool,
        #[command(flatten)]
        out: OutArg,
    },
    /// Predict attribute probabilities and decisions.
    Predict {
        #[arg(long, value_name = "FILE")]
        model: PathBuf,
        /// CRF potentials; without them decisions are thresholded
        /// independently.
        #[arg(long, value_name = "FILE")]
        crf: Option<PathBuf>,
        #[arg(long, value_name = "FILE")]
        features: PathBuf,
        #[command(flatten)]
        out: OutArg,
    },
    /// Per-attribute accuracy of predictions against manifest labels.
    Eval {
        #[command(flatten)]
        manifest: ManifestArg,
        #[arg(long, value_name = "FILE")]
        predictions: PathBuf,
        /// Evaluate only the test images of this split.
        #[arg(long, value_name = "FILE")]
        split: Option<PathBuf>,
        #[command(flatten)]
        out: OutArg,
    },
    /// Attribute prevalence per (source, year).
    Trend {
        #[command(flatten)]
        manifest: ManifestArg,
        /// Predicted decisions; without them the manifest labels are used.
        #[arg(long, value_name = "FILE")]
        predictions: Option<PathBuf>,
        #[command(flatten)]
        out: OutArg,
    },
    /// Show-versus-street trend report: delta and correlation CSVs, JSON
    /// summary and SVG chart.
    Report {
        #[arg(long, value_name = "FILE")]
        prevalence: PathBuf,
        #[command(flatten)]
        out: OutArg,
    },
    /// Run every stage from a manifest to the trend report.
    Pipeline {
        #[command(flatten)]
        manifest: ManifestArg,
        #[command(flatten)]
        out: OutArg,
    },
    /// Generate a synthetic labeled corpus with its own 8-attribute schema.
    Synth {
        /// Images per (source, year) tag.
        #[arg(long, default_value_t = 50)]
        images_per_tag: usize,
        /// Only one tag (street_chic/2014) instead of the four trend tags.
        #[arg(long)]
        single: bool,
        #[command(flatten)]
        out: OutArg,
    },
    /// Debug: Pearson correlation of two comma-separated series.
    Pearson {
        #[arg(long, value_parser = parse_series, allow_hyphen_values = true)]
        xs: Series,
        #[arg(long, value_parser = parse_series, allow_hyphen_values = true)]
        ys: Series,
    },
}

#[derive(Debug, Clone)]
struct Series(Vec<f64>);

fn parse_series(text: &str) -> std::result::Result<Series, String> {
    text.split(',')
        .map(|v| {
            let x: f64 = v.trim().parse().map_err(|_| format!("`{}` is not a number", v.trim()))?;
            if x.is_finite() {
                Ok(x)
            } else {
                Err(format!("`{}` is not finite", v.trim()))
            }
        })
        .collect::<std::result::Result<_, _>>()
        .map(Series)
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Ingest { .. } => "ingest",
            Command::Codebook { .. } => "codebook",
            Command::Extract { .. } => "extract",
            Command::Train { .. } => "train",
            Command::Predict { .. } => "predict",
            Command::Eval { .. } => "eval",
            Command::Trend { .. } => "trend",
            Command::Report { .. } => "report",
            Command::Pipeline { .. } => "pipeline",
            Command::Synth { .. } => "synth",
            Command::Pearson { .. } => "pearson",
        }
    }
}

/// Settings shared by every stage.
struct Session {
    argv: Vec<String>,
    seed: u64,
    jobs: usize,
    config: Config,
    config_path: Option<PathBuf>,
    schema: AttributeSchema,
    schema_path: Option<PathBuf>,
}

impl Session {
    fn manifest(&self, command: &str) -> Result<RunManifest> {
        let mut m = RunManifest::new(command, self.argv.clone(), self.seed, self.jobs, &self.schema, &self.config);
        for p in [&self.config_path, &self.schema_path].into_iter().flatten() {
            m.input(p)?;
        }
        Ok(m)
    }

    fn corpus(&self, path: &Path, run: &mut RunManifest) -> Result<Corpus> {
        run.input(path)?;
        load_manifest(path, &self.schema).with_context(|| format!("loading manifest {}", path.display()))
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn warn_skipped(failures: &[Failure]) {
    for f in failures {
        eprintln!("warning: skipped {} ({}): {}", f.id, f.path.display(), f.message);
    }
}

fn load_features(path: &Path, run: &mut RunManifest) -> Result<Vec<CacheEntry>> {
    run.input(path)?;
    let entries = read_cache(path, None)?.context("feature cache is unreadable")?;
    if entries.is_empty() {
        bail!("{}: feature cache holds no images", path.display());
    }
    Ok(entries)
}

fn finish(run: RunManifest, dir: &Path) -> Result<()> {
    let n = run.outputs.len();
    let skipped = run.decode_failures;
    let path = run.finish(dir)?;
    println!("wrote {n} file(s); run manifest {}", path.display());
    if skipped > 0 {
        println!("skipped {skipped} undecodable image(s)");
    }
    Ok(())
}

fn execute(cli: &Cli, ctx: &Session) -> Result<()> {
    let command = &cli.command;
    let name = command.name();
    match command {
        Command::Pearson { xs, ys } => {
            match pearson(&xs.0, &ys.0)? {
                Some(r) => println!("{r:?}"),
                None => println!("undefined (constant series)"),
            }
            Ok(())
        }
        Command::Synth {
            images_per_tag,
            single,
            out,
        } => {
            if *images_per_tag == 0 {
                bail!("--images-per-tag must be positive");
            }
            let mut run = ctx.manifest(name)?;
            let plans = if *single {
                synth::single_tag_plan(*images_per_tag)
            } else {
                synth::trend_plan(*images_per_tag)
            };
            let corpus = synth::generate_corpus(&out.out, &plans, ctx.seed)?;
            run.output(&corpus.manifest);
            run.output(&corpus.schema_path);
            for r in &corpus.corpus.records {
                run.output(&r.path);
            }
            println!(
                "generated {} images; pass --schema {} with --manifest {}",
                corpus.corpus.len(),
                corpus.schema_path.display(),
                corpus.manifest.display()
            );
            finish(run, &out.out)
        }
        Command::Ingest { manifest, out } => {
            let mut run = ctx.manifest(name)?;
            let corpus = ctx.corpus(&manifest.manifest, &mut run)?;
            create_dir(&out.out)?;
            let csv = pipeline::corpus_stats_csv(&corpus)?;
            let path = out.out.join(files::CORPUS_STATS);
            std::fs::write(&path, &csv).with_context(|| format!("writing {}", path.display()))?;
            run.output(&path);
            print!("{}", csv.lines().skip(1).map(|l| format!("{l}\n")).collect::<String>());
            finish(run, &out.out)
        }
        Command::Codebook { manifest, out } => {
            let mut run = ctx.manifest(name)?;
            let corpus = ctx.corpus(&manifest.manifest, &mut run)?;
            create_dir(&out.out)?;
            let trained_on = format!("{} images", corpus.len());
            let (codebook, failures) = pipeline::build_codebook(&corpus, &ctx.config, ctx.seed, &trained_on)?;
            warn_skipped(&failures);
            run.skipped(&failures);
            let path = out.out.join(files::CODEBOOK);
            codebook.save(&path)?;
            run.output(&path);
            finish(run, &out.out)
        }
        Command::Extract {
            manifest,
            codebook,
            out,
        } => {
            let mut run = ctx.manifest(name)?;
            let corpus = ctx.corpus(&manifest.manifest, &mut run)?;
            run.input(codebook)?;
            let codebook = Codebook::load(codebook)?;
            create_dir(&out.out)?;
            let (entries, failures) = pipeline::extract_features(&corpus, &codebook)?;
            warn_skipped(&failures);
            run.skipped(&failures);
            let path = out.out.join(files::FEATURES);
            write_cache(&path, codebook.fingerprint(), &entries)?;
            run.output(&path);
            finish(run, &out.out)
        }
        Command::Train {
            manifest,
            features,
            all,
            out,
        } => {
            let mut run = ctx.manifest(name)?;
            let corpus = ctx.corpus(&manifest.manifest, &mut run)?;
            let entries = load_features(features, &mut run)?;
            create_dir(&out.out)?;
            let split = if *all {
                None
            } else {
                let split = Split::labeled(&corpus, ctx.config.train_fraction, ctx.seed)?;
                let path = out.out.join(files::SPLIT);
                split.save(&path)?;
                run.output(&path);
                Some(split)
            };
            let model = pipeline::train(
                &ctx.schema,
                &corpus,
                &entries,
                split.as_ref().map(|s| s.train.as_slice()),
                &ctx.config,
                ctx.seed,
            )?;
            let path = out.out.join(files::MODEL);
            model.bundle.save(&path)?;
            run.output(&path);
            if let Some(p) = &model.potentials {
                let path = out.out.join(files::CRF);
                p.save(&path)?;
                run.output(&path);
            }
            finish(run, &out.out)
        }
        Command::Predict {
            model,
            crf,
            features,
            out,
        } => {
            let mut run = ctx.manifest(name)?;
            run.input(model)?;
            let bundle = ModelBundle::load(model)?;
            let potentials = match crf {
                Some(path) => {
                    run.input(path)?;
                    Some(PairwisePotentials::load(path)?)
                }
                None => None,
            };
            let entries = load_features(features, &mut run)?;
            create_dir(&out.out)?;
            let predictions = pipeline::predict(&ctx.schema, &bundle, potentials.as_ref(), &entries, &ctx.config)?;
            let path = out.out.join(files::PREDICTIONS);
            predictions.save(&path)?;
            run.output(&path);
            finish(run, &out.out)
        }
        Command::Eval {
            manifest,
            predictions,
            split,
            out,
        } => {
            let mut run = ctx.manifest(name)?;
            let corpus = ctx.corpus(&manifest.manifest, &mut run)?;
            run.input(predictions)?;
            let predictions = Predictions::load(predictions)?;
            let ids = match split {
                Some(path) => {
                    run.input(path)?;
                    Some(Split::load(path)?.test)
                }
                None => None,
            };
            create_dir(&out.out)?;
            let (finals, independent) =
                pipeline::evaluate_predictions(&predictions, &corpus, &ctx.schema, ids.as_deref())?;
            for (file, report) in [(files::EVAL, &finals), (files::EVAL_INDEPENDENT, &independent)] {
                let path = out.out.join(file);
                report.write_csv(&path)?;
                run.output(&path);
            }
            println!("{} ({})", finals.summary_line(), predictions.decoder);
            println!("{} (independent)", independent.summary_line());
            finish(run, &out.out)
        }
        Command::Trend {
            manifest,
            predictions,
            out,
        } => {
            let mut run = ctx.manifest(name)?;
            let corpus = ctx.corpus(&manifest.manifest, &mut run)?;
            let tables = match predictions {
                Some(path) => {
                    run.input(path)?;
                    pipeline::prevalence_by_tag(&Predictions::load(path)?, &corpus, &ctx.schema)?
                }
                None => pipeline::prevalence_from_labels(&corpus, &ctx.schema)?,
            };
            create_dir(&out.out)?;
            let path = out.out.join(files::PREVALENCE);
            trend::write_prevalence(&path, &tables)?;
            run.output(&path);
            for t in &tables {
                println!("{}: {} images", t.tag, t.images);
            }
            finish(run, &out.out)
        }
        Command::Report { prevalence, out } => {
            let mut run = ctx.manifest(name)?;
            run.input(prevalence)?;
            let tables = trend::read_prevalence(prevalence)?;
            let report = pipeline::report_from_tables(&tables, &ctx.schema, &ctx.config)?;
            let written = trend::write_report(&report, &out.out)?;
            for p in written.all() {
                run.output(p);
            }
            print_correlations(&report);
            finish(run, &out.out)
        }
        Command::Pipeline { manifest, out } => {
            let mut run = ctx.manifest(name)?;
            let corpus = ctx.corpus(&manifest.manifest, &mut run)?;
            let result = pipeline::run_all(&corpus, &ctx.schema, &ctx.config, ctx.seed, &out.out, &mut run)?;
            warn_skipped(&result.failures);
            println!("{} (test set)", result.eval.summary_line());
            println!("{} (test set, independent)", result.eval_independent.summary_line());
            match &result.report {
                Some(report) => print_correlations(report),
                None => println!(
                    "trend report skipped: the corpus lacks one of the {}/{} show and street tags",
                    ctx.config.trend_year1, ctx.config.trend_year2
                ),
            }
            finish(run, &out.out)
        }
    }
}

fn print_correlations(report: &trend::TrendReport) {
    for c in &report.categories {
        match c.correlation.r {
            Some(r) => println!("{}: r = {r:.4} (n = {})", c.group.as_str(), c.correlation.n),
            None => println!("{}: r undefined ({})", c.group.as_str(), c.correlation.status.as_str()),
        }
    }
}

fn session(cli: &Cli, argv: Vec<String>) -> Result<Session> {
    let config = match &cli.config {
        Some(path) => Config::load(path).with_context(|| format!("loading config {}", path.display()))?,
        None => Config::default(),
    };
    let schema = match &cli.schema {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading schema {}", path.display()))?;
            load_schema(&text).with_context(|| format!("parsing schema {}", path.display()))?
        }
        None => AttributeSchema::default_schema(),
    };
    let jobs = match cli.jobs {
        Some(j) => j as usize,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    Ok(Session {
        argv,
        seed: cli.seed,
        jobs,
        config,
        config_path: cli.config.clone(),
        schema,
        schema_path: cli.schema.clone(),
    })
}

/// The error and its causes, leaving out causes whose text the previous
/// message already includes.
fn describe(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if !out.contains(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
    }
    out
}

fn run(argv: Vec<String>) -> u8 {
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let result = session(&cli, argv).and_then(|ctx| {
        pipeline::with_jobs(ctx.jobs, || execute(&cli, &ctx)).map_err(anyhow::Error::from)?
    });
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            1
        }
    }
}

fn main() -> ExitCode {
    ExitCode::from(run(std::env::args().collect()))
}
