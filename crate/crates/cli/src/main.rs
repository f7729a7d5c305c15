// Copyright 2026 The Pipeforge Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

//! `pipeforge` command-line tool.

mod config;
mod report;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use pipeforge_core::corpus;
use pipeforge_core::data::{load_csv, load_csv_with_schema, DataError, Dataset, Metric};
use pipeforge_core::engine::{self, EngineError};
use pipeforge_core::metabase::{enumerate_corpus, MetaBase, MetaBaseError};
use pipeforge_core::steps::builtin_registry;

use config::{CliConfig, ConfigError};

#[derive(Debug, Parser)]
#[command(name = "pipeforge", version, about = "Pipeline search for tabular classification")]
struct Cli {
    /// Flat `key = value` configuration file; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Enumerate default pipelines over a corpus and train the prior model.
    BuildMetabase {
        /// Directory of CSV files, or `builtin` for the bundled corpus.
        #[arg(long)]
        corpus: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 3)]
        max_depth: usize,
        #[arg(long, env = "PIPEFORGE_SEED")]
        seed: Option<u64>,
        /// Target column of the corpus CSV files.
        #[arg(long)]
        target: Option<String>,
        #[arg(long)]
        metric: Option<Metric>,
    },
    /// Search pipelines on a CSV file and write a run directory.
    Fit {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        target: Option<String>,
        #[arg(long)]
        metric: Option<Metric>,
        /// Time budget in seconds.
        #[arg(long)]
        budget: Option<f64>,
        #[arg(long)]
        metabase: Option<PathBuf>,
        #[arg(long, env = "PIPEFORGE_SEED")]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Ignore the meta-base and use the uninformative prior.
        #[arg(long)]
        no_prior: bool,
        #[arg(long)]
        workers: Option<usize>,
        /// Stop after this many evaluations (makes runs reproducible).
        #[arg(long)]
        max_evaluations: Option<usize>,
        /// Intermediate-dataset cache budget in bytes.
        #[arg(long)]
        cache_budget: Option<usize>,
    },
    /// Apply a fitted model to a CSV file.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Name of a target column to ignore if present.
        #[arg(long)]
        target: Option<String>,
    },
    /// Summarize a run directory.
    Report {
        #[arg(long)]
        run: PathBuf,
        /// Also write the visited search tree as a Graphviz file.
        #[arg(long)]
        dot: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        top: usize,
    },
    /// Write a synthetic dataset as CSV.
    Generate {
        #[arg(long, value_enum)]
        kind: Kind,
        #[arg(long, default_value_t = 400)]
        rows: usize,
        #[arg(long, default_value_t = 5)]
        features: usize,
        #[arg(long, default_value_t = 2)]
        classes: usize,
        /// Fraction of feature cells to blank out.
        #[arg(long, default_value_t = 0.0)]
        missing: f64,
        #[arg(long, env = "PIPEFORGE_SEED")]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Kind {
    Blobs,
    Moons,
    Parity,
    ScalingPlanted,
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Empty(String),
    #[error("{0}")]
    Starved(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Empty(_) => 3,
            CliError::Starved(_) => 4,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<MetaBaseError> for CliError {
    fn from(e: MetaBaseError) -> Self {
        match e {
            MetaBaseError::NoRecords | MetaBaseError::EmptyCorpus => CliError::Empty(e.to_string()),
            other => CliError::Input(other.to_string()),
        }
    }
}

impl From<EngineError> for CliError {
    fn from(e: EngineError) -> Self {
        match &e {
            EngineError::NoSuccessfulEvaluation { failures } => {
                let mut msg = e.to_string();
                for f in failures.iter().take(5) {
                    msg.push_str(&format!("\n  {f}"));
                }
                CliError::Starved(msg)
            }
            _ => CliError::Input(e.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(p) => CliConfig::load(p)?,
        None => CliConfig::default(),
    };
    match cli.command {
        Command::BuildMetabase {
            corpus,
            out,
            max_depth,
            seed,
            target,
            metric,
        } => {
            if let Some(t) = target {
                cfg.target = t;
            }
            let seed = seed.unwrap_or(cfg.run.seed);
            let metric = metric.unwrap_or(cfg.run.metric);
            build_metabase(&corpus, &out, max_depth, seed, metric, &cfg)
        }
        Command::Fit {
            data,
            target,
            metric,
            budget,
            metabase,
            seed,
            out,
            no_prior,
            workers,
            max_evaluations,
            cache_budget,
        } => {
            let r = &mut cfg.run;
            if let Some(m) = metric {
                r.metric = m;
            }
            if let Some(b) = budget {
                r.policy.t_max = b;
            }
            if let Some(s) = seed {
                r.seed = s;
            }
            if let Some(w) = workers {
                r.worker_count = w;
            }
            if max_evaluations.is_some() {
                r.max_evaluations = max_evaluations;
            }
            if let Some(c) = cache_budget {
                r.cache_budget_bytes = c;
            }
            if metabase.is_some() {
                r.metabase = metabase;
            }
            r.no_prior |= no_prior;
            if let Some(t) = target {
                cfg.target = t;
            }
            fit(&data, &out, &cfg)
        }
        Command::Predict {
            model,
            data,
            out,
            target,
        } => {
            if let Some(t) = target {
                cfg.target = t;
            }
            predict(&model, &data, &out, &cfg)
        }
        Command::Report { run, dot, top } => report(&run, dot.as_deref(), top),
        Command::Generate {
            kind,
            rows,
            features,
            classes,
            missing,
            seed,
            out,
        } => {
            let seed = seed.unwrap_or(cfg.run.seed);
            let d = generate(kind, rows, features, classes, missing, seed)?;
            d.write_csv(&out, &cfg.target)?;
            println!("wrote {} rows x {} features to {}", d.n_rows(), d.n_cols(), out.display());
            Ok(())
        }
    }
}

fn load_corpus(spec: &str, cfg: &CliConfig, seed: u64) -> Result<Vec<(String, Dataset)>, CliError> {
    if spec == "builtin" {
        return Ok(corpus::builtin_corpus(seed));
    }
    let dir = Path::new(spec);
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::Input(format!("{}: {e}", dir.display())))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    files.sort();
    files
        .into_iter()
        .map(|p| {
            let id = p.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned());
            load_csv(&p, &cfg.target, &cfg.csv)
                .map(|d| (id, d))
                .map_err(|e| CliError::Input(format!("{}: {e}", p.display())))
        })
        .collect()
}

fn build_metabase(
    corpus: &str,
    out: &Path,
    max_depth: usize,
    seed: u64,
    metric: Metric,
    cfg: &CliConfig,
) -> Result<(), CliError> {
    let datasets = load_corpus(corpus, cfg, seed)?;
    let registry = builtin_registry();
    let report = enumerate_corpus(&datasets, &registry, max_depth, metric, cfg.run.valid_fraction, seed)?;
    eprintln!(
        "{} sequences attempted, {} classifier-terminated, {} failed, {} records",
        report.attempted,
        report.classifier_terminated,
        report.failures,
        report.records.len()
    );
    for (id, by_depth) in &report.per_dataset {
        let cells: Vec<String> = by_depth.iter().map(|(d, n)| format!("depth {d}: {n}")).collect();
        eprintln!("  {id}: {}", cells.join(", "));
    }
    let base = MetaBase::build(report.records, seed)?;
    base.save(out)?;
    eprintln!("meta-base written to {}", out.display());
    Ok(())
}

fn fit(data: &Path, out: &Path, cfg: &CliConfig) -> Result<(), CliError> {
    if cfg.run.policy.t_max.is_nan() || cfg.run.policy.t_max < 0.0 {
        return Err(CliError::Input(format!("budget must be non-negative, got {}", cfg.run.policy.t_max)));
    }
    let d = load_csv(data, &cfg.target, &cfg.csv)?;
    cfg.run.metric.check_target(d.n_classes())?;
    let base = match (&cfg.run.metabase, cfg.run.no_prior) {
        (Some(p), false) => Some(MetaBase::load(p)?),
        _ => None,
    };
    let registry = builtin_registry();
    let res = engine::fit(&d, &registry, &cfg.run, base.as_ref())?;
    res.save(out)?;
    println!(
        "incumbent_reward={:.4} ensemble_size={} evaluations={} incumbent={}",
        res.incumbent().reward,
        res.ensemble().len(),
        res.evaluations.len(),
        res.incumbent().candidate
    );
    Ok(())
}

fn predict(model_dir: &Path, data: &Path, out: &Path, cfg: &CliConfig) -> Result<(), CliError> {
    let model = engine::load_model(model_dir)?;
    let d = load_csv_with_schema(data, &model.schema, &cfg.target, &cfg.csv)?;
    let p = engine::predict(&model, &d)?;
    let io = |e: csv::Error| CliError::Input(format!("{}: {e}", out.display()));
    let mut w = csv::Writer::from_path(out).map_err(io)?;
    let mut header = vec!["row".to_string(), "label".to_string()];
    header.extend(model.schema.class_names.iter().map(|c| format!("p_{c}")));
    w.write_record(&header).map_err(io)?;
    for (i, label) in p.labels.iter().enumerate() {
        let mut rec = vec![i.to_string(), label.clone()];
        rec.extend(p.proba.row(i).iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(io)?;
    }
    w.flush().map_err(|e| CliError::Input(format!("{}: {e}", out.display())))?;
    eprintln!("wrote {} predictions to {}", p.labels.len(), out.display());
    Ok(())
}

fn report(run: &Path, dot: Option<&Path>, top: usize) -> Result<(), CliError> {
    let tree = engine::load_tree(run)?;
    let evaluations = engine::load_evaluations(run)?;
    print!("{}", report::build(&tree, &evaluations, top).render());
    if let Some(path) = dot {
        std::fs::write(path, report::dot(&tree)).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    }
    Ok(())
}

fn generate(kind: Kind, rows: usize, features: usize, classes: usize, missing: f64, seed: u64) -> Result<Dataset, CliError> {
    if classes < 2 {
        return Err(CliError::Input("need at least 2 classes".into()));
    }
    if !(0.0..1.0).contains(&missing) {
        return Err(CliError::Input(format!("missing fraction must lie in [0, 1), got {missing}")));
    }
    let d = match kind {
        Kind::Blobs => corpus::gaussian_blobs(rows, features.max(1), classes, 1.5, seed),
        Kind::Moons => corpus::moons(rows, classes, 0.15, seed),
        Kind::Parity => corpus::parity(rows, features.clamp(1, 8), 0, 0.1, seed),
        Kind::ScalingPlanted => corpus::scaling_planted(rows, seed),
    };
    Ok(if missing > 0.0 {
        corpus::inject_missing(&d, missing, seed)
    } else {
        d
    })
}
