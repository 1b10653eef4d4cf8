//! Run configuration: a TOML file with `[data]`, `[model]`, `[loss]`,
//! `[train]` and `[eval]` sections, merged with command-line overrides.
//!
//! Relative paths in the file resolve against the file's directory. Every
//! key is optional; unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data_io::{BundlePaths, Split};
use crate::error::{Error, Result};
use crate::evaluation::EvalOptions;
use crate::numerics::Activation;
use crate::objectives::{LossConfig, Objective};
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub loss: LossSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub eval: EvalSection,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// Directory in the generator's layout; the other keys override single files.
    pub bundle: Option<PathBuf>,
    /// One file per speech modality, late-fused in the listed order.
    pub speech_features: Option<Vec<PathBuf>>,
    pub music_features: Option<PathBuf>,
    pub tag_features: Option<PathBuf>,
    pub speech_taxonomy: Option<PathBuf>,
    pub music_taxonomy: Option<PathBuf>,
    pub lexicon: Option<PathBuf>,
    pub splits: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub hidden: Option<Vec<usize>>,
    pub output_dim: Option<usize>,
    pub activation: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossSection {
    pub objective: Option<String>,
    pub margin: Option<f64>,
    pub sp_weights: Option<[f64; 3]>,
    pub emosim_lambda: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub lr: Option<f64>,
    pub batch_size: Option<usize>,
    pub max_epochs: Option<usize>,
    pub patience: Option<usize>,
    pub seed: Option<u64>,
    pub seeds: Option<Vec<u64>>,
    pub checkpoint: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    pub eps: Option<f64>,
    pub weight_decay: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub k: Option<usize>,
    pub include_noise: Option<bool>,
    pub split: Option<String>,
    pub report: Option<PathBuf>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }
}

/// Command-line values that take precedence over the file. Paths here are
/// used as given (relative to the working directory).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub objective: Option<Objective>,
    pub seed: Option<u64>,
    pub seeds: Option<Vec<u64>>,
    pub max_epochs: Option<usize>,
    pub patience: Option<usize>,
    pub lr: Option<f64>,
    pub batch_size: Option<usize>,
    pub emosim_lambda: Option<f64>,
    pub checkpoint: Option<PathBuf>,
    pub train_report: Option<PathBuf>,
    pub k: Option<usize>,
    pub split: Option<Split>,
    pub include_noise: Option<bool>,
    pub eval_report: Option<PathBuf>,
}

/// Fully resolved configuration for one command.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub source: PathBuf,
    pub paths: BundlePaths,
    /// Template for every seed's run; `train.seed` is the first seed.
    pub train: TrainConfig,
    pub seeds: Vec<u64>,
    pub checkpoint: PathBuf,
    pub train_report: PathBuf,
    pub eval_split: Split,
    pub eval_report: PathBuf,
}

impl RunConfig {
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self> {
        let file = ConfigFile::load(path)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::resolve(&file, &base, path, overrides)
    }

    pub fn resolve(file: &ConfigFile, base: &Path, source: &Path, overrides: &Overrides) -> Result<Self> {
        let at = |p: &PathBuf| absolute(&base.join(p));
        let d = &file.data;
        let bundle_dir = d.bundle.as_ref().map(at);
        let from_bundle = bundle_dir.as_deref().map(BundlePaths::in_dir);
        let pick = |own: &Option<PathBuf>, fallback: Option<PathBuf>, key: &str| -> Result<PathBuf> {
            own.as_ref()
                .map(at)
                .or(fallback)
                .ok_or_else(|| Error::Config(format!("[data] needs `{key}` (or `bundle`)")))
        };
        let speech_features = match &d.speech_features {
            Some(list) if list.is_empty() => return Err(Error::Config("[data] speech_features is empty".into())),
            Some(list) => list.iter().map(at).collect(),
            None => from_bundle
                .as_ref()
                .map(|b| b.speech_features.clone())
                .ok_or_else(|| Error::Config("[data] needs `speech_features` (or `bundle`)".into()))?,
        };
        let tag_features = match &d.tag_features {
            Some(p) => Some(at(p)),
            // the generator's tag file is optional in a bundle directory
            None => from_bundle.as_ref().and_then(|b| b.tag_features.clone()).filter(|p| p.exists()),
        };
        let paths = BundlePaths {
            speech_features,
            music_features: pick(&d.music_features, from_bundle.as_ref().map(|b| b.music_features.clone()), "music_features")?,
            tag_features,
            speech_taxonomy: pick(&d.speech_taxonomy, from_bundle.as_ref().map(|b| b.speech_taxonomy.clone()), "speech_taxonomy")?,
            music_taxonomy: pick(&d.music_taxonomy, from_bundle.as_ref().map(|b| b.music_taxonomy.clone()), "music_taxonomy")?,
            lexicon: pick(&d.lexicon, from_bundle.as_ref().map(|b| b.lexicon.clone()), "lexicon")?,
            splits: pick(&d.splits, from_bundle.as_ref().map(|b| b.splits.clone()), "splits")?,
        };

        let defaults = TrainConfig::default();
        let default_loss = LossConfig::default();
        let objective = match (&overrides.objective, &file.loss.objective) {
            (Some(o), _) => *o,
            (None, Some(name)) => name.parse()?,
            (None, None) => default_loss.objective,
        };
        let loss = LossConfig {
            margin: file.loss.margin.unwrap_or(default_loss.margin),
            sp_weights: file.loss.sp_weights.unwrap_or(default_loss.sp_weights),
            emosim_lambda: overrides
                .emosim_lambda
                .or(file.loss.emosim_lambda)
                .unwrap_or(default_loss.emosim_lambda),
            objective,
        };
        let activation = match &file.model.activation {
            Some(name) => Activation::parse(name)
                .ok_or_else(|| Error::Config(format!("unknown activation `{name}` (expected identity, relu or tanh)")))?,
            None => defaults.hidden_activation,
        };
        let t = &file.train;
        let seeds = match (&overrides.seeds, overrides.seed, &t.seeds, t.seed) {
            (Some(list), _, _, _) => list.clone(),
            (None, Some(s), _, _) => vec![s],
            (None, None, Some(list), _) => list.clone(),
            (None, None, None, Some(s)) => vec![s],
            (None, None, None, None) => vec![defaults.seed],
        };
        if seeds.is_empty() {
            return Err(Error::Config("seed list is empty".into()));
        }
        let mut sorted = seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != seeds.len() {
            return Err(Error::Config("seed list repeats a seed".into()));
        }
        let e = &file.eval;
        let eval = EvalOptions {
            k: overrides.k.or(e.k).unwrap_or(defaults.eval.k),
            include_noise: overrides.include_noise.or(e.include_noise).unwrap_or(defaults.eval.include_noise),
        };
        let eval_split = match (overrides.split, &e.split) {
            (Some(s), _) => s,
            (None, Some(name)) => name.parse()?,
            (None, None) => Split::Test,
        };
        let checkpoint = overrides
            .checkpoint
            .as_ref()
            .map(|p| absolute(p))
            .unwrap_or_else(|| at(t.checkpoint.as_ref().unwrap_or(&PathBuf::from("model.ckpt"))));
        let train = TrainConfig {
            loss,
            lr: overrides.lr.or(t.lr).unwrap_or(defaults.lr),
            batch_size: overrides.batch_size.or(t.batch_size).unwrap_or(defaults.batch_size),
            max_epochs: overrides.max_epochs.or(t.max_epochs).unwrap_or(defaults.max_epochs),
            patience: overrides.patience.or(t.patience).unwrap_or(defaults.patience),
            seed: seeds[0],
            checkpoint: Some(checkpoint.clone()),
            hidden: file.model.hidden.clone().unwrap_or(defaults.hidden),
            output_dim: file.model.output_dim.unwrap_or(defaults.output_dim),
            hidden_activation: activation,
            beta1: t.beta1.unwrap_or(defaults.beta1),
            beta2: t.beta2.unwrap_or(defaults.beta2),
            eps: t.eps.unwrap_or(defaults.eps),
            weight_decay: t.weight_decay.unwrap_or(defaults.weight_decay),
            eval,
        };
        train.validate()?;
        Ok(Self {
            source: absolute(source),
            paths,
            train,
            seeds,
            checkpoint,
            train_report: overrides
                .train_report
                .as_ref()
                .map(|p| absolute(p))
                .unwrap_or_else(|| at(t.report.as_ref().unwrap_or(&PathBuf::from("train_report.toml")))),
            eval_split,
            eval_report: overrides
                .eval_report
                .as_ref()
                .map(|p| absolute(p))
                .unwrap_or_else(|| at(e.report.as_ref().unwrap_or(&PathBuf::from("eval_report.toml")))),
        })
    }

    /// Fails with the first input path that does not exist.
    pub fn check_inputs_exist(&self) -> Result<()> {
        for p in self.paths.all() {
            if !p.exists() {
                return Err(Error::io(
                    p,
                    std::io::Error::new(std::io::ErrorKind::NotFound, "input file not found"),
                ));
            }
        }
        Ok(())
    }

    /// Checkpoint path for one seed of a sweep: `model.ckpt` → `model.seed7.ckpt`.
    pub fn checkpoint_for_seed(&self, seed: u64) -> PathBuf {
        if self.seeds.len() == 1 {
            return self.checkpoint.clone();
        }
        let stem = self.checkpoint.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let name = match self.checkpoint.extension() {
            Some(ext) => format!("{stem}.seed{seed}.{}", ext.to_string_lossy()),
            None => format!("{stem}.seed{seed}"),
        };
        self.checkpoint.with_file_name(name)
    }

    /// Echo of every resolved setting, for reports.
    pub fn to_toml(&self) -> toml::Table {
        let path = |p: &Path| toml::Value::String(p.display().to_string());
        let mut data = toml::Table::new();
        data.insert(
            "speech_features".into(),
            toml::Value::Array(self.paths.speech_features.iter().map(|p| path(p)).collect()),
        );
        data.insert("music_features".into(), path(&self.paths.music_features));
        if let Some(t) = &self.paths.tag_features {
            data.insert("tag_features".into(), path(t));
        }
        data.insert("speech_taxonomy".into(), path(&self.paths.speech_taxonomy));
        data.insert("music_taxonomy".into(), path(&self.paths.music_taxonomy));
        data.insert("lexicon".into(), path(&self.paths.lexicon));
        data.insert("splits".into(), path(&self.paths.splits));

        let t = &self.train;
        let mut model = toml::Table::new();
        model.insert("hidden".into(), toml::Value::Array(t.hidden.iter().map(|&h| int(h)).collect()));
        model.insert("output_dim".into(), int(t.output_dim));
        model.insert("activation".into(), toml::Value::String(t.hidden_activation.name().into()));

        let mut loss = toml::Table::new();
        loss.insert("objective".into(), toml::Value::String(t.loss.objective.name().into()));
        loss.insert("margin".into(), toml::Value::Float(t.loss.margin));
        loss.insert(
            "sp_weights".into(),
            toml::Value::Array(t.loss.sp_weights.iter().map(|&w| toml::Value::Float(w)).collect()),
        );
        loss.insert("emosim_lambda".into(), toml::Value::Float(t.loss.emosim_lambda));

        let mut train = toml::Table::new();
        train.insert("lr".into(), toml::Value::Float(t.lr));
        train.insert("batch_size".into(), int(t.batch_size));
        train.insert("max_epochs".into(), int(t.max_epochs));
        train.insert("patience".into(), int(t.patience));
        train.insert("seeds".into(), toml::Value::Array(self.seeds.iter().map(|&s| seed_value(s)).collect()));
        train.insert("checkpoint".into(), path(&self.checkpoint));
        train.insert("report".into(), path(&self.train_report));
        train.insert("beta1".into(), toml::Value::Float(t.beta1));
        train.insert("beta2".into(), toml::Value::Float(t.beta2));
        train.insert("eps".into(), toml::Value::Float(t.eps));
        train.insert("weight_decay".into(), toml::Value::Float(t.weight_decay));

        let mut eval = toml::Table::new();
        eval.insert("k".into(), int(t.eval.k));
        eval.insert("include_noise".into(), toml::Value::Boolean(t.eval.include_noise));
        eval.insert("split".into(), toml::Value::String(self.eval_split.name().into()));
        eval.insert("report".into(), path(&self.eval_report));

        let mut out = toml::Table::new();
        out.insert("source".into(), path(&self.source));
        out.insert("data".into(), toml::Value::Table(data));
        out.insert("model".into(), toml::Value::Table(model));
        out.insert("loss".into(), toml::Value::Table(loss));
        out.insert("train".into(), toml::Value::Table(train));
        out.insert("eval".into(), toml::Value::Table(eval));
        out
    }
}

fn int(v: usize) -> toml::Value {
    toml::Value::Integer(i64::try_from(v).unwrap_or(i64::MAX))
}

/// TOML integers are signed; seeds beyond `i64::MAX` are echoed as strings.
pub(crate) fn seed_value(seed: u64) -> toml::Value {
    match i64::try_from(seed) {
        Ok(v) => toml::Value::Integer(v),
        Err(_) => toml::Value::String(seed.to_string()),
    }
}

fn absolute(p: &Path) -> PathBuf {
    std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf())
}
