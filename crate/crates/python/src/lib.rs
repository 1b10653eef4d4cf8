//! Python bindings: dataset loading, training, embedding, evaluation and
//! retrieval, plus a few loss and similarity helpers.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use emomatch_core::config::{Overrides, RunConfig};
use emomatch_core::data_io::{gen_synthetic, write_bundle, DatasetBundle, Split, SyntheticSpec};
use emomatch_core::emotion_space::VAPoint;
use emomatch_core::evaluation::{evaluate_split, retrieve, EvalOptions};
use emomatch_core::gradcheck::{run_gradcheck, GradcheckOptions};
use emomatch_core::numerics::{Checkpoint, Matrix};
use emomatch_core::objectives::{LossConfig, Objective};
use emomatch_core::trainer::{self, load_nets, Nets, TrainConfig};

fn py_err(e: emomatch_core::Error) -> PyErr {
    if e.is_usage() {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

fn parse_split(split: Option<&str>) -> PyResult<Option<Split>> {
    split.map(|s| s.parse().map_err(py_err)).transpose()
}

/// Feature files, taxonomies and splits of one dataset.
#[pyclass(module = "emomatch", frozen)]
struct Dataset {
    bundle: DatasetBundle,
}

#[pymethods]
impl Dataset {
    /// Loads the `[data]` section of a run configuration file.
    #[staticmethod]
    fn from_config(path: PathBuf) -> PyResult<Self> {
        let run = RunConfig::load(&path, &Overrides::default()).map_err(py_err)?;
        run.check_inputs_exist().map_err(py_err)?;
        Ok(Self {
            bundle: DatasetBundle::load(&run.paths).map_err(py_err)?,
        })
    }

    #[getter]
    fn speech_dim(&self) -> usize {
        self.bundle.speech_dim()
    }

    #[getter]
    fn music_dim(&self) -> usize {
        self.bundle.music_dim()
    }

    #[getter]
    fn speech_labels(&self) -> Vec<String> {
        self.bundle.speech_taxonomy.labels().to_vec()
    }

    #[getter]
    fn music_labels(&self) -> Vec<String> {
        self.bundle.music_taxonomy.labels().to_vec()
    }

    /// `(id, label, vector)` for the speech items, optionally of one split.
    #[pyo3(signature = (split=None))]
    fn speech_items(&self, split: Option<&str>) -> PyResult<Vec<(String, String, Vec<f64>)>> {
        let idx = match parse_split(split)? {
            Some(s) => self.bundle.speech_indices(s),
            None => (0..self.bundle.speech.len()).collect(),
        };
        Ok(idx
            .into_iter()
            .map(|i| {
                let r = &self.bundle.speech[i];
                (r.id.clone(), r.label.clone(), r.vector.clone())
            })
            .collect())
    }

    /// `(id, label, vector)` for the music items, optionally of one split.
    #[pyo3(signature = (split=None))]
    fn music_items(&self, split: Option<&str>) -> PyResult<Vec<(String, String, Vec<f64>)>> {
        let idx = match parse_split(split)? {
            Some(s) => self.bundle.music_indices(s),
            None => (0..self.bundle.music.len()).collect(),
        };
        Ok(idx
            .into_iter()
            .map(|j| {
                let r = &self.bundle.music[j];
                (r.id.clone(), r.label.clone(), r.vector.clone())
            })
            .collect())
    }

    /// Most similar music label for a speech label.
    fn mapped_label(&self, speech_label: &str) -> PyResult<String> {
        let space = self.bundle.emotion_space().map_err(py_err)?;
        space.mapped(speech_label).map(str::to_string).map_err(py_err)
    }

    fn __len__(&self) -> usize {
        self.bundle.speech.len() + self.bundle.music.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(speech={}x{}, music={}x{})",
            self.bundle.speech.len(),
            self.bundle.speech_dim(),
            self.bundle.music.len(),
            self.bundle.music_dim()
        )
    }
}

/// Trained projection heads.
#[pyclass(module = "emomatch", frozen)]
struct Model {
    nets: Nets,
}

fn matrix(rows: Vec<Vec<f64>>, width: usize, what: &str) -> PyResult<Matrix> {
    if rows.iter().any(|r| r.len() != width) {
        return Err(PyValueError::new_err(format!("{what} rows must have {width} features")));
    }
    let n = rows.len();
    Matrix::from_vec(n, width, rows.into_iter().flatten().collect()).map_err(py_err)
}

#[pymethods]
impl Model {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let ckpt = Checkpoint::load(&path).map_err(py_err)?;
        Ok(Self {
            nets: load_nets(&ckpt).map_err(py_err)?,
        })
    }

    #[getter]
    fn output_dim(&self) -> usize {
        self.nets.speech.output_dim()
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.nets.param_count()
    }

    fn embed_speech(&self, rows: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let x = matrix(rows, self.nets.speech.input_dim(), "speech")?;
        let z = self.nets.speech.apply(&x).map_err(py_err)?;
        Ok(z.iter_rows().map(<[f64]>::to_vec).collect())
    }

    fn embed_music(&self, rows: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let x = matrix(rows, self.nets.music.input_dim(), "music")?;
        let z = self.nets.music.apply(&x).map_err(py_err)?;
        Ok(z.iter_rows().map(<[f64]>::to_vec).collect())
    }

    /// MRR, P@k, NDCG@k and Spearman on one split.
    #[pyo3(signature = (dataset, split="test", k=5, include_noise=true))]
    fn evaluate<'py>(
        &self,
        py: Python<'py>,
        dataset: &Dataset,
        split: &str,
        k: usize,
        include_noise: bool,
    ) -> PyResult<Bound<'py, PyDict>> {
        let split: Split = split.parse().map_err(py_err)?;
        let b = &dataset.bundle;
        let space = b.emotion_space().map_err(py_err)?;
        let m = evaluate_split(b, &space, &self.nets.speech, &self.nets.music, split, EvalOptions { k, include_noise })
            .map_err(py_err)?;
        let d = PyDict::new(py);
        d.set_item("split", split.name())?;
        d.set_item("k", k)?;
        d.set_item("queries", m.queries)?;
        d.set_item("corpus", m.corpus)?;
        d.set_item("MRR", m.mrr)?;
        d.set_item(format!("P@{k}"), m.precision.value)?;
        d.set_item(format!("NDCG@{k}"), m.ndcg.value)?;
        d.set_item("Spearman", m.similarity_spearman)?;
        Ok(d)
    }

    /// Top-`k` `(music id, score)` pairs for one speech feature vector.
    #[pyo3(signature = (query, dataset, k=5, split=None))]
    fn retrieve(&self, query: Vec<f64>, dataset: &Dataset, k: usize, split: Option<&str>) -> PyResult<Vec<(String, f64)>> {
        let b = &dataset.bundle;
        let corpus: Vec<usize> = match parse_split(split)? {
            Some(s) => b.music_indices(s),
            None => (0..b.music.len()).collect(),
        };
        let q = self.nets.speech.apply(&matrix(vec![query], self.nets.speech.input_dim(), "query")?).map_err(py_err)?;
        let c = self.nets.music.apply(&b.music_matrix(&corpus)).map_err(py_err)?;
        let ids: Vec<String> = corpus.iter().map(|&j| b.music[j].id.clone()).collect();
        let hits = retrieve(&q, &c, &ids, k).map_err(py_err)?;
        Ok(hits[0].iter().map(|h| (ids[h.index].clone(), h.score)).collect())
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(speech_in={}, music_in={}, out={}, sp_head={})",
            self.nets.speech.input_dim(),
            self.nets.music.input_dim(),
            self.nets.speech.output_dim(),
            self.nets.tag.is_some()
        )
    }
}

/// Trains on `dataset` and returns `(model, report)`.
#[pyfunction]
#[pyo3(signature = (dataset, objective="triplet", seed=0, max_epochs=50, lr=1e-4, batch_size=64, patience=10, checkpoint=None))]
#[allow(clippy::too_many_arguments)]
fn train<'py>(
    py: Python<'py>,
    dataset: &Dataset,
    objective: &str,
    seed: u64,
    max_epochs: usize,
    lr: f64,
    batch_size: usize,
    patience: usize,
    checkpoint: Option<PathBuf>,
) -> PyResult<(Model, Bound<'py, PyDict>)> {
    let objective: Objective = objective.parse().map_err(py_err)?;
    let config = TrainConfig {
        loss: LossConfig {
            objective,
            ..Default::default()
        },
        seed,
        max_epochs,
        lr,
        batch_size,
        patience,
        checkpoint,
        ..Default::default()
    };
    let (nets, report) = trainer::train(&dataset.bundle, &config).map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("objective", report.objective.name())?;
    d.set_item("seed", report.seed)?;
    d.set_item("epochs_completed", report.epochs_completed)?;
    d.set_item("selected_epoch", report.selected_epoch)?;
    d.set_item("selected_valid_mrr", report.selected_valid_mrr)?;
    d.set_item("stopped_early", report.stopped_early)?;
    d.set_item("valid_mrr", report.history.iter().map(|r| r.valid_mrr).collect::<Vec<_>>())?;
    d.set_item(
        "train_loss",
        report.history.iter().filter_map(|r| r.train.map(|t| t.total)).collect::<Vec<_>>(),
    )?;
    Ok((Model { nets }, d))
}

/// Writes a synthetic bundle (with `config.toml`) to `out_dir`.
#[pyfunction]
#[pyo3(signature = (out_dir, seed=0, per_class=None, dim=None, separation=None))]
fn generate_synthetic(
    out_dir: PathBuf,
    seed: u64,
    per_class: Option<usize>,
    dim: Option<usize>,
    separation: Option<f64>,
) -> PyResult<()> {
    let d = SyntheticSpec::default();
    let spec = SyntheticSpec {
        per_class: per_class.unwrap_or(d.per_class),
        dim: dim.unwrap_or(d.dim),
        separation: separation.unwrap_or(d.separation),
        ..d
    };
    let synth = gen_synthetic(&spec, seed).map_err(py_err)?;
    write_bundle(&out_dir, &synth).map_err(py_err)
}

/// Valence-arousal similarity `1 − d/√2` of two `(valence, arousal)` points.
#[pyfunction]
fn va_similarity(a: (f64, f64), b: (f64, f64)) -> PyResult<f64> {
    let a = VAPoint::new(a.0, a.1).map_err(py_err)?;
    let b = VAPoint::new(b.0, b.1).map_err(py_err)?;
    Ok(emomatch_core::emotion_space::va_similarity(&a, &b))
}

/// Cosine triplet hinge `max(0, D(a, p) − D(a, n) + margin)`.
#[pyfunction]
#[pyo3(signature = (anchor, positive, negative, margin=0.4))]
fn triplet_loss(anchor: Vec<f64>, positive: Vec<f64>, negative: Vec<f64>, margin: f64) -> PyResult<f64> {
    Ok(emomatch_core::objectives::triplet_loss(&anchor, &positive, &negative, margin)
        .map_err(py_err)?
        .loss)
}

/// Finite-difference gradient checks; one dict per check.
#[pyfunction]
#[pyo3(signature = (configs=100, seed=0))]
fn gradcheck<'py>(py: Python<'py>, configs: usize, seed: u64) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let options = GradcheckOptions {
        configs,
        seed,
        ..Default::default()
    };
    run_gradcheck(&options)
        .map_err(py_err)?
        .into_iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("name", r.name)?;
            d.set_item("max_rel_error", r.max_rel_error)?;
            d.set_item("checked", r.checked)?;
            d.set_item("passed", r.passed)?;
            Ok(d)
        })
        .collect()
}

#[pymodule]
fn emomatch(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Dataset>()?;
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(generate_synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(va_similarity, m)?)?;
    m.add_function(wrap_pyfunction!(triplet_loss, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    Ok(())
}
