//! Command-line front end: `train`, `evaluate`, `retrieve`, `gen-synthetic`
//! and `gradcheck`.
//!
//! Exit codes: 0 on success, 1 on a runtime failure (non-finite training, a
//! failed gradient check, an unexpected I/O error), 2 on a usage or
//! configuration error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::{seed_value, Overrides, RunConfig};
use crate::data_io::{gen_synthetic, write_bundle, DatasetBundle, FeatureFile, Split, SyntheticSpec};
use crate::emotion_space::{parse_label_list, Lexicon};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate_split, export_embeddings, retrieve, Metrics};
use crate::gradcheck::{run_gradcheck, GradcheckOptions};
use crate::numerics::{Checkpoint, Matrix};
use crate::objectives::Objective;
use crate::trainer::{self, load_nets, Nets, TrainReport};

#[derive(Debug, Parser)]
#[command(name = "emomatch", version, about = "Speech-to-music retrieval in a shared emotion embedding space")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the projection heads, then score the selected epoch on the eval split.
    Train(TrainArgs),
    /// Score a checkpoint with MRR, P@k, NDCG@k and label/embedding rank correlation.
    Evaluate(EvaluateArgs),
    /// Print the top-k music ids for one speech query, `id<TAB>score` per line.
    Retrieve(RetrieveArgs),
    /// Write a synthetic dataset bundle with a matching config.toml.
    GenSynthetic(GenArgs),
    /// Compare analytic and finite-difference gradients of every objective.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Run configuration (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// triplet, triplet-sp or triplet-emosim.
    #[arg(long)]
    pub objective: Option<Objective>,
    /// Single run seed.
    #[arg(long, conflicts_with = "seeds")]
    pub seed: Option<u64>,
    /// Comma-separated seed sweep; writes one checkpoint per seed and a mean ± std summary.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// Total epoch budget.
    #[arg(long)]
    pub max_epochs: Option<usize>,
    /// Epochs without validation-MRR improvement before stopping; 0 disables.
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// EmoSim weight for the triplet-emosim objective.
    #[arg(long)]
    pub emosim_lambda: Option<f64>,
    /// Checkpoint path; a sweep inserts `.seed<N>` before the extension.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Train report path.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Continue from the existing checkpoint(s) up to the epoch budget.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Defaults to the configured training checkpoint.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Cutoff for P@k and NDCG@k.
    #[arg(long)]
    pub k: Option<usize>,
    /// train, valid or test.
    #[arg(long)]
    pub split: Option<Split>,
    /// Keep noise music items in the corpus of non-neutral queries.
    #[arg(long)]
    pub include_noise: Option<bool>,
    /// Eval report path.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Also write joint-space embeddings of every item to this directory.
    #[arg(long)]
    pub export_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RetrieveArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Feature file holding the query record.
    #[arg(long)]
    pub query: PathBuf,
    /// Record id within the query file; required when it holds several.
    #[arg(long)]
    pub id: Option<String>,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    /// Restrict the corpus to one split's music items (default: all).
    #[arg(long)]
    pub split: Option<Split>,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Items per class and domain.
    #[arg(long)]
    pub per_class: Option<usize>,
    /// Feature dimension of both domains.
    #[arg(long)]
    pub dim: Option<usize>,
    /// Scale of class-anchor spread relative to unit noise.
    #[arg(long)]
    pub separation: Option<f64>,
    #[arg(long)]
    pub noise_std: Option<f64>,
    /// Comma-separated speech labels.
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    pub speech_labels: Option<Vec<String>>,
    /// Comma-separated music labels.
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    pub music_labels: Option<Vec<String>>,
    /// Tag word-vector dimension; 0 writes no tag file.
    #[arg(long)]
    pub tag_dim: Option<usize>,
    /// Dimension of a second speech modality; 0 writes none.
    #[arg(long)]
    pub text_dim: Option<usize>,
    /// Omit the noise music class.
    #[arg(long)]
    pub no_noise_class: bool,
    /// Valence-arousal lexicon (`word valence arousal` per line).
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Randomized configurations per objective.
    #[arg(long, default_value_t = 100)]
    pub configs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Largest accepted relative error.
    #[arg(long, default_value_t = 1e-6)]
    pub tolerance: f64,
}

/// Runs one command and maps its outcome to an exit code.
pub fn main_with(cli: Cli) -> ExitCode {
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_usage() { 2 } else { 1 })
        }
    }
}

pub fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Retrieve(a) => cmd_retrieve(a),
        Command::GenSynthetic(a) => cmd_gen_synthetic(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
    }
}

fn load_run(config: &Path, overrides: &Overrides) -> Result<(RunConfig, DatasetBundle)> {
    let run = RunConfig::load(config, overrides)?;
    run.check_inputs_exist()?;
    let bundle = DatasetBundle::load(&run.paths)?;
    Ok((run, bundle))
}

pub fn cmd_train(a: TrainArgs) -> Result<ExitCode> {
    let overrides = Overrides {
        objective: a.objective,
        seed: a.seed,
        seeds: a.seeds,
        max_epochs: a.max_epochs,
        patience: a.patience,
        lr: a.lr,
        batch_size: a.batch_size,
        emosim_lambda: a.emosim_lambda,
        checkpoint: a.checkpoint,
        train_report: a.report,
        ..Default::default()
    };
    let (run, bundle) = load_run(&a.config, &overrides)?;
    let space = bundle.emotion_space()?;
    let mut runs = Vec::new();
    let mut metrics = Vec::new();
    for &seed in &run.seeds {
        let path = run.checkpoint_for_seed(seed);
        let config = trainer::TrainConfig {
            seed,
            checkpoint: Some(path.clone()),
            ..run.train.clone()
        };
        let (nets, report) = if a.resume {
            trainer::resume(&Checkpoint::load(&path)?, &bundle, &config)?
        } else {
            trainer::train(&bundle, &config)?
        };
        let m = evaluate_split(&bundle, &space, &nets.speech, &nets.music, run.eval_split, config.eval)?;
        println!(
            "seed {seed}: selected epoch {} of {}, valid MRR {:.4}; {}",
            report.selected_epoch,
            report.epochs_completed,
            report.selected_valid_mrr,
            metrics_line(&m)
        );
        eprintln!("seed {seed}: wall clock {:.2} s", report.wall_clock.as_secs_f64());
        let mut table = run_table(&report, &path)?;
        table.insert(run.eval_split.name().into(), toml::Value::Table(metrics_table(&m)));
        runs.push(toml::Value::Table(table));
        metrics.push(m);
    }
    let mut out = toml::Table::new();
    out.insert("config".into(), toml::Value::Table(run.to_toml()));
    out.insert("runs".into(), toml::Value::Array(runs));
    if run.seeds.len() > 1 {
        let agg = aggregate(&metrics);
        for line in aggregate_lines(&agg) {
            println!("{line}");
        }
        out.insert("aggregate".into(), toml::Value::Table(agg));
    }
    write_report(&run.train_report, &out)?;
    Ok(ExitCode::SUCCESS)
}

pub fn cmd_evaluate(a: EvaluateArgs) -> Result<ExitCode> {
    let overrides = Overrides {
        k: a.k,
        split: a.split,
        include_noise: a.include_noise,
        eval_report: a.report,
        checkpoint: a.checkpoint,
        ..Default::default()
    };
    let (run, bundle) = load_run(&a.config, &overrides)?;
    let nets = load_checked(&run.checkpoint, &bundle)?;
    let space = bundle.emotion_space()?;
    let m = evaluate_split(&bundle, &space, &nets.speech, &nets.music, run.eval_split, run.train.eval)?;
    for line in metric_lines(&m) {
        println!("{line}");
    }
    let mut out = toml::Table::new();
    out.insert("config".into(), toml::Value::Table(run.to_toml()));
    out.insert("checkpoint".into(), toml::Value::String(run.checkpoint.display().to_string()));
    out.insert("metrics".into(), toml::Value::Table(metrics_table(&m)));
    write_report(&run.eval_report, &out)?;
    if let Some(dir) = &a.export_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        export_embeddings(&nets.speech, &nets.music, &bundle, dir)?;
    }
    Ok(ExitCode::SUCCESS)
}

pub fn cmd_retrieve(a: RetrieveArgs) -> Result<ExitCode> {
    let overrides = Overrides {
        checkpoint: a.checkpoint,
        ..Default::default()
    };
    let (run, bundle) = load_run(&a.config, &overrides)?;
    let nets = load_checked(&run.checkpoint, &bundle)?;
    let file = FeatureFile::read(&a.query)?;
    let record = match &a.id {
        Some(id) => file
            .records
            .iter()
            .find(|r| &r.id == id)
            .ok_or_else(|| Error::Config(format!("no record `{id}` in {}", a.query.display())))?,
        None if file.records.len() == 1 => &file.records[0],
        None => {
            return Err(Error::Config(format!(
                "{} holds {} records; pick one with --id",
                a.query.display(),
                file.records.len()
            )))
        }
    };
    if record.vector.len() != nets.speech.input_dim() {
        return Err(Error::Incompatible(format!(
            "query has {} features, the speech net expects {}",
            record.vector.len(),
            nets.speech.input_dim()
        )));
    }
    let corpus: Vec<usize> = match a.split {
        Some(s) => bundle.music_indices(s),
        None => (0..bundle.music.len()).collect(),
    };
    if corpus.is_empty() {
        return Err(Error::Config("the music corpus is empty".into()));
    }
    let query = nets.speech.apply(&Matrix::from_vec(1, record.vector.len(), record.vector.clone())?)?;
    let corpus_emb = nets.music.apply(&bundle.music_matrix(&corpus))?;
    let ids: Vec<String> = corpus.iter().map(|&j| bundle.music[j].id.clone()).collect();
    for hit in &retrieve(&query, &corpus_emb, &ids, a.k)?[0] {
        println!("{}\t{:.6}", ids[hit.index], hit.score);
    }
    Ok(ExitCode::SUCCESS)
}

pub fn cmd_gen_synthetic(a: GenArgs) -> Result<ExitCode> {
    let d = SyntheticSpec::default();
    let lexicon = match &a.lexicon {
        Some(p) => Lexicon::load(p)?,
        None => d.lexicon.clone(),
    };
    let labels = |given: Option<Vec<String>>, fallback: Vec<String>| match given {
        Some(v) => parse_label_list(&v.join("\n")),
        None => fallback,
    };
    let spec = SyntheticSpec {
        speech_labels: labels(a.speech_labels, d.speech_labels.clone()),
        music_labels: labels(a.music_labels, d.music_labels.clone()),
        lexicon,
        per_class: a.per_class.unwrap_or(d.per_class),
        dim: a.dim.unwrap_or(d.dim),
        separation: a.separation.unwrap_or(d.separation),
        noise_std: a.noise_std.unwrap_or(d.noise_std),
        tag_dim: a.tag_dim.unwrap_or(d.tag_dim),
        text_dim: a.text_dim.unwrap_or(d.text_dim),
        noise_class: !a.no_noise_class,
        ..d
    };
    let synth = gen_synthetic(&spec, a.seed)?;
    write_bundle(&a.out, &synth)?;
    println!(
        "wrote {} speech and {} music items to {}",
        synth.bundle.speech.len(),
        synth.bundle.music.len(),
        a.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

pub fn cmd_gradcheck(a: GradcheckArgs) -> Result<ExitCode> {
    let options = GradcheckOptions {
        configs: a.configs,
        seed: a.seed,
        tolerance: a.tolerance,
        ..Default::default()
    };
    let started = std::time::Instant::now();
    let results = run_gradcheck(&options)?;
    for r in &results {
        println!(
            "{}\tmax_rel_error {:.3e}\t{} derivatives\t{}",
            r.name,
            r.max_rel_error,
            r.checked,
            if r.passed { "ok" } else { "FAILED" }
        );
    }
    eprintln!("gradcheck: {:.2} s", started.elapsed().as_secs_f64());
    Ok(if results.iter().all(|r| r.passed) { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

/// Loads a checkpoint and checks its nets against the bundle's feature dims.
fn load_checked(path: &Path, bundle: &DatasetBundle) -> Result<Nets> {
    let nets = load_nets(&Checkpoint::load(path)?)?;
    for (name, net, dim) in [
        ("speech", &nets.speech, bundle.speech_dim()),
        ("music", &nets.music, bundle.music_dim()),
    ] {
        if net.input_dim() != dim {
            return Err(Error::Incompatible(format!(
                "{name} net takes {} features, the data has {dim}",
                net.input_dim()
            )));
        }
    }
    Ok(nets)
}

fn run_table(report: &TrainReport, checkpoint: &Path) -> Result<toml::Table> {
    let mut table = match toml::Value::try_from(report) {
        Ok(toml::Value::Table(t)) => t,
        Ok(_) => unreachable!("a struct serializes to a table"),
        Err(e) => return Err(Error::Config(format!("cannot encode the train report: {e}"))),
    };
    table.insert("seed".into(), seed_value(report.seed));
    table.insert("checkpoint".into(), toml::Value::String(checkpoint.display().to_string()));
    Ok(table)
}

fn metric_names(m: &Metrics) -> [(String, Option<f64>); 4] {
    [
        ("MRR".into(), Some(m.mrr)),
        (format!("P@{}", m.k), Some(m.precision.value)),
        (format!("NDCG@{}", m.k), Some(m.ndcg.value)),
        ("Spearman".into(), m.similarity_spearman),
    ]
}

fn metric_lines(m: &Metrics) -> Vec<String> {
    let mut lines: Vec<String> = metric_names(m)
        .into_iter()
        .map(|(name, v)| match v {
            Some(v) => format!("{name}\t{v:.6}"),
            None => format!("{name}\tundefined"),
        })
        .collect();
    if m.precision.truncated_queries > 0 {
        lines.push(format!(
            "note: {} queries had fewer than {} candidates",
            m.precision.truncated_queries, m.k
        ));
    }
    if m.ndcg.excluded_queries > 0 {
        lines.push(format!(
            "note: {} queries with no relevant item were left out of NDCG",
            m.ndcg.excluded_queries
        ));
    }
    lines
}

fn metrics_line(m: &Metrics) -> String {
    metric_names(m)
        .into_iter()
        .filter_map(|(name, v)| v.map(|v| format!("{} {name} {v:.4}", m.split)))
        .collect::<Vec<_>>()
        .join(", ")
}

fn metrics_table(m: &Metrics) -> toml::Table {
    let mut t = toml::Table::new();
    t.insert("split".into(), toml::Value::String(m.split.name().into()));
    t.insert("k".into(), toml::Value::Integer(m.k as i64));
    t.insert("queries".into(), toml::Value::Integer(m.queries as i64));
    t.insert("corpus".into(), toml::Value::Integer(m.corpus as i64));
    for (name, v) in metric_names(m) {
        if let Some(v) = v {
            t.insert(name, toml::Value::Float(v));
        }
    }
    t.insert(
        "truncated_queries".into(),
        toml::Value::Integer(m.precision.truncated_queries as i64),
    );
    t.insert("ndcg_excluded_queries".into(), toml::Value::Integer(m.ndcg.excluded_queries as i64));
    t
}

/// Mean and population standard deviation of each metric over the seeds.
fn aggregate(all: &[Metrics]) -> toml::Table {
    let mut t = toml::Table::new();
    t.insert("runs".into(), toml::Value::Integer(all.len() as i64));
    let names = metric_names(&all[0]);
    for (i, (name, _)) in names.iter().enumerate() {
        let values: Option<Vec<f64>> = all.iter().map(|m| metric_names(m)[i].1).collect();
        let Some(values) = values else { continue };
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        let mut entry = toml::Table::new();
        entry.insert("mean".into(), toml::Value::Float(mean));
        entry.insert("std".into(), toml::Value::Float(std));
        t.insert(name.clone(), toml::Value::Table(entry));
    }
    t
}

fn aggregate_lines(agg: &toml::Table) -> Vec<String> {
    agg.iter()
        .filter_map(|(name, v)| {
            let entry = v.as_table()?;
            let mean = entry.get("mean")?.as_float()?;
            let std = entry.get("std")?.as_float()?;
            Some(format!("{name}\t{mean:.4} ± {std:.4}"))
        })
        .collect()
}

fn write_report(path: &Path, table: &toml::Table) -> Result<()> {
    let text = toml::to_string(table).map_err(|e| Error::Config(format!("cannot encode report: {e}")))?;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
