//! Python module `evmv`.

use pyo3::exceptions::{PyArithmeticError, PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use evmv_core::data::{self, LabeledDataset, SynthConfig};
use evmv_core::loss::{self, LabelVector};
use evmv_core::metrics;
use evmv_core::net::{self, ModelBundle, PredictionRecord, TrainConfig};
use evmv_core::perturb::{self, NoiseConfig};
use evmv_core::{special, DirichletParams, EvidenceVector, Opinion};

fn to_py(e: evmv_core::Error) -> PyErr {
    match e {
        evmv_core::Error::Io { .. } => PyOSError::new_err(e.to_string()),
        // Malformed constructor arguments are the caller's fault, not arithmetic.
        evmv_core::Error::InvalidOpinion(_) | evmv_core::Error::InvalidDirichlet(_) => {
            PyValueError::new_err(e.to_string())
        }
        e if e.is_numeric() => PyArithmeticError::new_err(e.to_string()),
        e => PyValueError::new_err(e.to_string()),
    }
}

trait IntoPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> IntoPy<T> for evmv_core::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(to_py)
    }
}

fn dirichlet(alpha: Vec<f64>) -> PyResult<DirichletParams> {
    DirichletParams::new(alpha).py()
}

#[pyclass(name = "Opinion", module = "evmv", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct PyOpinion(Opinion);

#[pymethods]
impl PyOpinion {
    #[new]
    fn new(beliefs: Vec<f64>, uncertainty: f64) -> PyResult<Self> {
        Ok(Self(Opinion::new(beliefs, uncertainty).py()?))
    }

    #[staticmethod]
    fn vacuous(num_classes: usize) -> Self {
        Self(Opinion::vacuous(num_classes))
    }

    #[getter]
    fn beliefs(&self) -> Vec<f64> {
        self.0.beliefs().to_vec()
    }

    #[getter]
    fn uncertainty(&self) -> f64 {
        self.0.uncertainty()
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.0.num_classes()
    }

    fn is_vacuous(&self) -> bool {
        self.0.is_vacuous()
    }

    /// Dirichlet parameters `α = b·K/u + 1`.
    fn to_dirichlet(&self) -> PyResult<Vec<f64>> {
        Ok(evmv_core::dirichlet_from_opinion(&self.0).py()?.alpha().to_vec())
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.0 == other.0
    }

    fn __repr__(&self) -> String {
        format!("Opinion(beliefs={:?}, uncertainty={})", self.0.beliefs(), self.0.uncertainty())
    }
}

/// Returns `(opinion, alpha)` for a non-negative evidence vector.
#[pyfunction]
fn opinion_from_evidence(evidence: Vec<f64>) -> PyResult<(PyOpinion, Vec<f64>)> {
    let (o, d) = evmv_core::opinion_from_evidence(&EvidenceVector::new(evidence).py()?);
    Ok((PyOpinion(o), d.alpha().to_vec()))
}

#[pyfunction]
fn dirichlet_from_opinion(opinion: &PyOpinion) -> PyResult<Vec<f64>> {
    opinion.to_dirichlet()
}

#[pyfunction]
fn expected_probs(alpha: Vec<f64>) -> PyResult<Vec<f64>> {
    Ok(evmv_core::expected_probs(&dirichlet(alpha)?))
}

/// Left-fold Dempster combination. Returns `(opinion, conflict, step_conflicts)`.
#[pyfunction]
fn combine(opinions: Vec<PyRef<'_, PyOpinion>>) -> PyResult<(PyOpinion, f64, Vec<f64>)> {
    let ops: Vec<Opinion> = opinions.iter().map(|o| o.0.clone()).collect();
    let out = evmv_core::combine_all(&ops).py()?;
    Ok((PyOpinion(out.opinion), out.conflict, out.step_conflicts))
}

#[pyfunction]
fn ln_gamma(x: f64) -> PyResult<f64> {
    special::ln_gamma(x).py()
}

#[pyfunction]
fn digamma(x: f64) -> PyResult<f64> {
    special::digamma(x).py()
}

#[pyfunction]
fn trigamma(x: f64) -> PyResult<f64> {
    special::trigamma(x).py()
}

fn label(class: usize, k: usize) -> PyResult<LabelVector> {
    LabelVector::new(class, k).py()
}

/// Returns `(loss, gradient wrt alpha)`.
#[pyfunction]
fn ace_loss(alpha: Vec<f64>, label_class: usize) -> PyResult<(f64, Vec<f64>)> {
    let d = dirichlet(alpha)?;
    let y = label(label_class, d.num_classes())?;
    loss::ace_loss(&d, &y).py()
}

#[pyfunction]
fn kl_to_uniform(alpha_tilde: Vec<f64>) -> PyResult<(f64, Vec<f64>)> {
    loss::kl_to_uniform(&alpha_tilde).py()
}

#[pyfunction]
fn anneal_coefficient(epoch: usize, anneal_epochs: usize) -> f64 {
    loss::anneal_coefficient(epoch, anneal_epochs)
}

/// Returns a dict with `total`, `ace`, `kl`, `lambda` and `grad_alpha`.
#[pyfunction]
fn sample_loss<'py>(py: Python<'py>, alpha: Vec<f64>, label_class: usize, lam: f64) -> PyResult<Bound<'py, PyDict>> {
    let d = dirichlet(alpha)?;
    let v = loss::sample_loss(&d, &label(label_class, d.num_classes())?, lam).py()?;
    let out = PyDict::new(py);
    out.set_item("total", v.total)?;
    out.set_item("ace", v.ace)?;
    out.set_item("kl", v.kl)?;
    out.set_item("lambda", v.lambda)?;
    out.set_item("grad_alpha", v.grad_alpha)?;
    Ok(out)
}

#[pyfunction]
fn accuracy(preds: Vec<usize>, labels: Vec<usize>) -> PyResult<f64> {
    metrics::accuracy(&preds, &labels).py()
}

#[pyfunction]
fn f1(preds: Vec<usize>, labels: Vec<usize>, num_classes: usize) -> PyResult<f64> {
    metrics::f1(&preds, &labels, num_classes).py()
}

#[pyfunction]
fn auroc(scores: Vec<f64>, labels: Vec<bool>) -> PyResult<f64> {
    metrics::auroc(&scores, &labels).py()
}

#[pyfunction]
fn auprc(scores: Vec<f64>, labels: Vec<bool>) -> PyResult<f64> {
    metrics::auprc(&scores, &labels).py()
}

#[pyfunction]
fn uncertainty_auroc(uncertainties: Vec<f64>, correct: Vec<bool>) -> PyResult<f64> {
    metrics::uncertainty_auroc(&uncertainties, &correct).py()
}

/// `(coverage, risk)` pairs, most confident samples first.
#[pyfunction]
fn risk_coverage(uncertainties: Vec<f64>, correct: Vec<bool>) -> PyResult<Vec<(f64, f64)>> {
    Ok(metrics::risk_coverage(&uncertainties, &correct)
        .py()?
        .into_iter()
        .map(|p| (p.coverage, p.risk))
        .collect())
}

/// `(threshold, misclassification_rate, rejection_rate)` triples.
#[pyfunction]
#[pyo3(signature = (uncertainties, correct, thresholds=None))]
fn selective_sweep(
    uncertainties: Vec<f64>,
    correct: Vec<bool>,
    thresholds: Option<Vec<f64>>,
) -> PyResult<Vec<(f64, f64, f64)>> {
    let t = thresholds.unwrap_or_else(metrics::default_thresholds);
    Ok(metrics::selective_sweep(&uncertainties, &correct, &t)
        .py()?
        .into_iter()
        .map(|p| (p.threshold, p.misclassification_rate, p.rejection_rate))
        .collect())
}

#[pyfunction]
#[pyo3(signature = (text, p, seed=42))]
fn perturb_text(text: &str, p: f64, seed: u64) -> PyResult<String> {
    perturb::perturb_text(text, &NoiseConfig::new(p, seed).py()?).py()
}

/// Perturbs a file line by line; returns the overall mutation rate.
#[pyfunction]
#[pyo3(signature = (input, output, p, seed=42))]
fn perturb_corpus(input: &str, output: &str, p: f64, seed: u64) -> PyResult<Option<f64>> {
    let report = perturb::perturb_corpus(input, output, &NoiseConfig::new(p, seed).py()?).py()?;
    Ok(report.total.mutation_rate())
}

#[pyclass(name = "Dataset", module = "evmv", frozen)]
pub struct PyDataset(LabeledDataset);

#[pymethods]
impl PyDataset {
    #[staticmethod]
    fn load(manifest: &str) -> PyResult<Self> {
        Ok(Self(data::load_dataset(manifest).py()?))
    }

    #[staticmethod]
    #[pyo3(signature = (num_classes=2, samples_per_class=1000, dims=None, informativeness=None, label_noise=0.1, seed=42))]
    fn synth(
        num_classes: usize,
        samples_per_class: usize,
        dims: Option<Vec<usize>>,
        informativeness: Option<Vec<f64>>,
        label_noise: f64,
        seed: u64,
    ) -> PyResult<Self> {
        let base = SynthConfig::default();
        let dims = dims.unwrap_or(base.dims);
        let cfg = SynthConfig {
            num_classes,
            samples_per_class,
            view_names: data::default_view_names(dims.len()),
            dims,
            informativeness: informativeness.unwrap_or(base.informativeness),
            label_noise,
            seed,
        };
        Ok(Self(data::synth_generate(&cfg).py()?))
    }

    /// Writes manifest, labels and view files; returns the manifest path.
    fn save(&self, dir: &str) -> PyResult<String> {
        Ok(self.0.save(dir).py()?.display().to_string())
    }

    /// Stratified `(train, val, test)` split.
    #[pyo3(signature = (fractions=(0.64, 0.16, 0.2), seed=42))]
    fn split(&self, fractions: (f64, f64, f64), seed: u64) -> PyResult<(Self, Self, Self)> {
        let (a, b, c) = data::stratified_split(&self.0, fractions, seed).py()?;
        Ok((Self(a), Self(b), Self(c)))
    }

    fn select_views(&self, names: Vec<String>) -> PyResult<Self> {
        Ok(Self(self.0.select_views(&names).py()?))
    }

    fn features(&self, index: usize) -> PyResult<Vec<Vec<f64>>> {
        if index >= self.0.len() {
            return Err(PyValueError::new_err(format!("index {index} out of range")));
        }
        Ok(self.0.features(index))
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.0.num_classes
    }

    #[getter]
    fn view_names(&self) -> Vec<String> {
        self.0.view_names()
    }

    #[getter]
    fn labels(&self) -> Vec<usize> {
        self.0.labels().to_vec()
    }

    #[getter]
    fn sample_ids(&self) -> Vec<String> {
        self.0.sample_ids().to_vec()
    }

    fn class_counts(&self) -> Vec<usize> {
        self.0.class_counts()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }
}

fn record_dict<'py>(py: Python<'py>, r: &PredictionRecord) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("sample_id", &r.sample_id)?;
    d.set_item("predicted_class", r.predicted_class)?;
    d.set_item("fused_probs", &r.fused_probs)?;
    d.set_item("fused_uncertainty", r.fused_uncertainty)?;
    d.set_item("fused_opinion", PyOpinion(r.fused_opinion.clone()))?;
    let views: Vec<PyOpinion> = r.per_view_opinions.iter().cloned().map(PyOpinion).collect();
    d.set_item("per_view_opinions", views)?;
    d.set_item("final_conflict", r.final_conflict)?;
    d.set_item("step_conflicts", &r.step_conflicts)?;
    Ok(d)
}

#[pyclass(name = "Model", module = "evmv", frozen)]
pub struct PyModel(ModelBundle);

fn train_config(
    learning_rate: f64,
    batch_size: usize,
    max_epochs: usize,
    anneal_epochs: usize,
    patience: usize,
    hidden_dim: usize,
    seed: u64,
) -> TrainConfig {
    TrainConfig {
        learning_rate,
        batch_size,
        max_epochs,
        anneal_epochs,
        patience,
        hidden_dim,
        seed,
        ..TrainConfig::default()
    }
}

#[pymethods]
impl PyModel {
    /// Untrained heads sized for `dataset`.
    #[staticmethod]
    #[pyo3(signature = (dataset, hidden_dim=64, seed=42))]
    fn init(dataset: &PyDataset, hidden_dim: usize, seed: u64) -> PyResult<Self> {
        let cfg = TrainConfig {
            hidden_dim,
            seed,
            ..TrainConfig::default()
        };
        Ok(Self(ModelBundle::for_dataset(&dataset.0, &cfg).py()?))
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self(ModelBundle::load(path).py()?.0))
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.0.save(path, None).py()
    }

    /// Trains a copy of this model; returns `(model, history, best_epoch)`
    /// where history rows are `(epoch, lambda, train_loss, val_loss)`.
    #[pyo3(signature = (train, val, learning_rate=1e-4, batch_size=12, max_epochs=15, anneal_epochs=10, patience=3, seed=42))]
    #[allow(clippy::too_many_arguments)]
    fn fit(
        &self,
        py: Python<'_>,
        train: &PyDataset,
        val: &PyDataset,
        learning_rate: f64,
        batch_size: usize,
        max_epochs: usize,
        anneal_epochs: usize,
        patience: usize,
        seed: u64,
    ) -> PyResult<(Self, Vec<(usize, f64, f64, f64)>, usize)> {
        let hidden = self.0.heads[0].config().hidden_dim;
        let cfg = train_config(learning_rate, batch_size, max_epochs, anneal_epochs, patience, hidden, seed);
        let out = py.detach(|| net::train(&self.0, &train.0, &val.0, &cfg)).py()?;
        let history = out
            .history
            .iter()
            .map(|h| (h.epoch, h.lambda, h.train_loss, h.val_loss))
            .collect();
        Ok((Self(out.bundle), history, out.best_epoch))
    }

    fn predict<'py>(&self, py: Python<'py>, dataset: &PyDataset) -> PyResult<Vec<Bound<'py, PyDict>>> {
        let records = net::predict_batch(&self.0, &dataset.0).py()?;
        records.iter().map(|r| record_dict(py, r)).collect()
    }

    /// Metrics dict as written by `evmv eval`.
    #[pyo3(signature = (dataset, thresholds=None))]
    fn evaluate(&self, dataset: &PyDataset, thresholds: Option<Vec<f64>>) -> PyResult<String> {
        let records = net::predict_batch(&self.0, &dataset.0).py()?;
        let t = thresholds.unwrap_or_else(metrics::default_thresholds);
        let report = metrics::EvalReport::from_predictions(&records, dataset.0.labels(), dataset.0.num_classes, &t).py()?;
        Ok(report.to_json())
    }

    fn without_view(&self, index: usize) -> PyResult<Self> {
        Ok(Self(self.0.without_view(index).py()?))
    }

    #[getter]
    fn view_names(&self) -> Vec<String> {
        self.0.view_names.clone()
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.0.num_classes
    }

    fn to_bytes(&self) -> Vec<u8> {
        self.0.to_bytes()
    }
}

#[pymodule]
fn evmv(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyOpinion>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(opinion_from_evidence, m)?)?;
    m.add_function(wrap_pyfunction!(dirichlet_from_opinion, m)?)?;
    m.add_function(wrap_pyfunction!(expected_probs, m)?)?;
    m.add_function(wrap_pyfunction!(combine, m)?)?;
    m.add_function(wrap_pyfunction!(ln_gamma, m)?)?;
    m.add_function(wrap_pyfunction!(digamma, m)?)?;
    m.add_function(wrap_pyfunction!(trigamma, m)?)?;
    m.add_function(wrap_pyfunction!(ace_loss, m)?)?;
    m.add_function(wrap_pyfunction!(kl_to_uniform, m)?)?;
    m.add_function(wrap_pyfunction!(anneal_coefficient, m)?)?;
    m.add_function(wrap_pyfunction!(sample_loss, m)?)?;
    m.add_function(wrap_pyfunction!(accuracy, m)?)?;
    m.add_function(wrap_pyfunction!(f1, m)?)?;
    m.add_function(wrap_pyfunction!(auroc, m)?)?;
    m.add_function(wrap_pyfunction!(auprc, m)?)?;
    m.add_function(wrap_pyfunction!(uncertainty_auroc, m)?)?;
    m.add_function(wrap_pyfunction!(risk_coverage, m)?)?;
    m.add_function(wrap_pyfunction!(selective_sweep, m)?)?;
    m.add_function(wrap_pyfunction!(perturb_text, m)?)?;
    m.add_function(wrap_pyfunction!(perturb_corpus, m)?)?;
    Ok(())
}
