//! Python bindings for `pvt-core`.
//!
//! Features are passed as lists of rows, variable ids as plain integers and
//! update deltas as `{id: [float]}` dicts.

use std::collections::{BTreeMap, BTreeSet};

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict};

use pvt_core::client::ClientUpdate;
use pvt_core::data::{self, Dataset};
use pvt_core::freezing::{self, FreezePlan, Scheme, SchemeConfig};
use pvt_core::harness::{self, ExperimentConfig, MetricsRow};
use pvt_core::nn::{self, Batch, ModelState};
use pvt_core::taxonomy::{self, FreezabilityPolicy, VarClass, VariableDescriptor};
use pvt_core::{cost, wire, VarId};

fn err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn flatten(rows: &[Vec<f64>], dim: usize) -> PyResult<Vec<f64>> {
    if let Some(r) = rows.iter().find(|r| r.len() != dim) {
        return Err(err(format!("feature row has {} values, expected {dim}", r.len())));
    }
    Ok(rows.concat())
}

fn ids(raw: &[u32]) -> BTreeSet<VarId> {
    raw.iter().map(|&i| VarId(i)).collect()
}

fn class_name(c: VarClass) -> &'static str {
    match c {
        VarClass::AdditiveVector => "additive_vector",
        VarClass::MultiplicativeVector => "multiplicative_vector",
        VarClass::MultiplicativeMatrix => "multiplicative_matrix",
    }
}

fn descriptor_dict<'py>(py: Python<'py>, d: &VariableDescriptor) -> PyResult<Bound<'py, PyDict>> {
    let out = PyDict::new(py);
    out.set_item("id", d.id.0)?;
    out.set_item("class", class_name(d.var_class))?;
    out.set_item("shape", d.shape.clone())?;
    out.set_item("param_count", d.param_count)?;
    out.set_item("block", d.block)?;
    Ok(out)
}

fn plan_of(model: &ModelState, trained: &[u32]) -> PyResult<FreezePlan> {
    FreezePlan::from_trained(0, 0, &model.variable_ids(), ids(trained)).map_err(err)
}

/// MLP of relu blocks with an identity output block.
#[pyclass(module = "pvt")]
pub struct Model {
    inner: ModelState,
}

impl Model {
    fn batch_data(&self, features: &[Vec<f64>]) -> PyResult<Vec<f64>> {
        flatten(features, self.inner.input_dim())
    }
}

#[pymethods]
impl Model {
    #[new]
    fn new(dims: Vec<usize>, seed: u64) -> PyResult<Self> {
        let inner = ModelState::init(&nn::mlp_specs(&dims), seed).map_err(err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn num_variables(&self) -> usize {
        self.inner.num_variables()
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.inner.param_count()
    }

    fn variable_ids(&self) -> Vec<u32> {
        self.inner.variable_ids().into_iter().map(|v| v.0).collect()
    }

    fn descriptors<'py>(&self, py: Python<'py>) -> PyResult<Vec<Bound<'py, PyDict>>> {
        taxonomy::classify(&self.inner)
            .iter()
            .map(|d| descriptor_dict(py, d))
            .collect()
    }

    /// Ids eligible for freezing; additive vectors are included only if asked.
    #[pyo3(signature = (include_additive = false))]
    fn freezable_ids(&self, include_additive: bool) -> Vec<u32> {
        let policy = if include_additive {
            FreezabilityPolicy::all()
        } else {
            FreezabilityPolicy::default()
        };
        taxonomy::freezable_ids(self.inner.descriptors(), &policy)
            .into_iter()
            .map(|v| v.0)
            .collect()
    }

    fn values(&self, id: u32) -> PyResult<Vec<f64>> {
        self.inner.values(VarId(id)).map(<[f64]>::to_vec).map_err(err)
    }

    fn set_values(&mut self, id: u32, values: Vec<f64>) -> PyResult<()> {
        let slot = self.inner.values_mut(VarId(id)).map_err(err)?;
        if slot.len() != values.len() {
            return Err(err(format!("variable v{id} has {} values, got {}", slot.len(), values.len())));
        }
        slot.copy_from_slice(&values);
        Ok(())
    }

    fn loss(&self, features: Vec<Vec<f64>>, labels: Vec<usize>) -> PyResult<f64> {
        let x = self.batch_data(&features)?;
        nn::loss(&self.inner, &Batch::new(&x, &labels)).map_err(err)
    }

    /// `(loss, accuracy)`.
    fn evaluate(&self, features: Vec<Vec<f64>>, labels: Vec<usize>) -> PyResult<(f64, f64)> {
        let x = self.batch_data(&features)?;
        nn::evaluate(&self.inner, &Batch::new(&x, &labels)).map_err(err)
    }

    /// `(grads, buffered_floats, loss)` for the given trained ids.
    fn gradients(
        &self,
        features: Vec<Vec<f64>>,
        labels: Vec<usize>,
        trained: Vec<u32>,
    ) -> PyResult<(BTreeMap<u32, Vec<f64>>, u64, f64)> {
        let x = self.batch_data(&features)?;
        let g = nn::backward_trained(&self.inner, &Batch::new(&x, &labels), &ids(&trained)).map_err(err)?;
        let grads = g.grads.into_iter().map(|(k, v)| (k.0, v)).collect();
        Ok((grads, g.buffered_floats, g.loss))
    }

    fn finite_diff(&self, features: Vec<Vec<f64>>, labels: Vec<usize>, id: u32) -> PyResult<Vec<f64>> {
        let x = self.batch_data(&features)?;
        nn::finite_diff_grad(&self.inner, &Batch::new(&x, &labels), VarId(id)).map_err(err)
    }

    /// Cost report for training `trained` at `batch_size`.
    fn costs<'py>(&self, py: Python<'py>, trained: Vec<u32>, batch_size: usize) -> PyResult<Bound<'py, PyDict>> {
        let plan = plan_of(&self.inner, &trained)?;
        let r = cost::measure(&plan, self.inner.descriptors(), &self.inner.specs(), batch_size);
        let out = PyDict::new(py);
        out.set_item("param_bytes", r.param_bytes)?;
        out.set_item("activation_buffer_bytes", r.activation_buffer_bytes)?;
        out.set_item("workspace_bytes", r.workspace_bytes)?;
        out.set_item("peak_memory_bytes", r.peak_memory_bytes)?;
        out.set_item("ctos_bytes", r.ctos_bytes)?;
        Ok(out)
    }

    fn __repr__(&self) -> String {
        let dims: Vec<String> = std::iter::once(self.inner.input_dim())
            .chain(self.inner.specs().iter().map(|s| s.out_dim))
            .map(|d| d.to_string())
            .collect();
        format!("Model([{}], params={})", dims.join(", "), self.inner.param_count())
    }
}

fn scheme_config(scheme: &str, freeze_fraction: f64, master_seed: u64) -> PyResult<SchemeConfig> {
    let scheme: Scheme = scheme.parse().map_err(err)?;
    let cfg = SchemeConfig::new(scheme, freeze_fraction, master_seed);
    cfg.validate().map_err(err)?;
    Ok(cfg)
}

/// `(frozen, trained)` id lists for one client in one round.
#[pyfunction]
#[pyo3(signature = (model, scheme, freeze_fraction, master_seed, round, client, include_additive = false))]
fn make_plan(
    model: &Model,
    scheme: &str,
    freeze_fraction: f64,
    master_seed: u64,
    round: u32,
    client: usize,
    include_additive: bool,
) -> PyResult<(Vec<u32>, Vec<u32>)> {
    let cfg = scheme_config(scheme, freeze_fraction, master_seed)?;
    let freezable: Vec<VarId> = model.freezable_ids(include_additive).into_iter().map(VarId).collect();
    let plan = freezing::make_plan(&cfg, &freezable, &model.inner.variable_ids(), round, client).map_err(err)?;
    let list = |s: &BTreeSet<VarId>| s.iter().map(|v| v.0).collect();
    Ok((list(&plan.frozen), list(&plan.trained)))
}

#[pyfunction]
fn expected_coverage(scheme: &str, freeze_fraction: f64, freezable_count: usize, clients_per_round: usize) -> PyResult<f64> {
    let cfg = scheme_config(scheme, freeze_fraction, 0)?;
    Ok(freezing::expected_coverage(&cfg, freezable_count, clients_per_round))
}

#[pyfunction]
fn encode<'py>(
    py: Python<'py>,
    client: u32,
    round: u32,
    sample_count: u32,
    deltas: BTreeMap<u32, Vec<f32>>,
) -> Bound<'py, PyBytes> {
    let update = ClientUpdate {
        client,
        round,
        sample_count,
        deltas: deltas.into_iter().map(|(k, v)| (VarId(k), v)).collect(),
    };
    PyBytes::new(py, &wire::encode(&update))
}

/// Decodes a frame into a dict with `client`, `round`, `sample_count` and `deltas`.
#[pyfunction]
fn decode<'py>(py: Python<'py>, frame: &[u8]) -> PyResult<Bound<'py, PyDict>> {
    let u = wire::decode(frame).map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("client", u.client)?;
    out.set_item("round", u.round)?;
    out.set_item("sample_count", u.sample_count)?;
    let deltas: BTreeMap<u32, Vec<f32>> = u.deltas.into_iter().map(|(k, v)| (k.0, v)).collect();
    out.set_item("deltas", deltas)?;
    Ok(out)
}

/// `(features, labels)` drawn from a Gaussian mixture, class-major.
#[pyfunction]
fn synth_gaussian(
    classes: usize,
    dim: usize,
    per_class: usize,
    separation: f64,
    seed: u64,
) -> PyResult<(Vec<Vec<f64>>, Vec<usize>)> {
    let ds = data::synth_gaussian(classes, dim, per_class, separation, seed).map_err(err)?;
    let rows = (0..ds.len()).map(|i| ds.row(i).to_vec()).collect();
    Ok((rows, ds.labels().to_vec()))
}

/// Splits examples across clients; iid unless `alpha` is given.
#[pyfunction]
#[pyo3(signature = (labels, classes, num_clients, seed, alpha = None))]
fn partition(
    labels: Vec<usize>,
    classes: usize,
    num_clients: usize,
    seed: u64,
    alpha: Option<f64>,
) -> PyResult<Vec<Vec<usize>>> {
    let features = vec![0.0; labels.len()];
    let ds = Dataset::new(features, labels, 1, classes).map_err(err)?;
    let p = match alpha {
        Some(a) => data::partition_noniid(&ds, num_clients, a, seed),
        None => data::partition_iid(&ds, num_clients, seed),
    }
    .map_err(err)?;
    Ok(p.shards)
}

fn row_dict<'py>(py: Python<'py>, r: &MetricsRow) -> PyResult<Bound<'py, PyDict>> {
    let out = PyDict::new(py);
    out.set_item("round", r.round)?;
    out.set_item("train_loss", r.train_loss)?;
    out.set_item("eval_loss", r.eval_loss)?;
    out.set_item("eval_accuracy", r.eval_accuracy)?;
    out.set_item("ctos_bytes_mean", r.ctos_bytes_mean)?;
    out.set_item("peak_memory_bytes", r.peak_memory_bytes)?;
    out.set_item("coverage_fraction", r.coverage_fraction)?;
    out.set_item("diverged_clients", r.diverged_clients)?;
    out.set_item("wall_ms", r.wall_ms)?;
    Ok(out)
}

/// Runs an experiment from config text and returns its metric rows.
/// Nothing is written to disk.
#[pyfunction]
fn run_config<'py>(py: Python<'py>, text: &str) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let cfg = ExperimentConfig::parse(text).map_err(err)?;
    let outcome = py.detach(|| harness::run_experiment(&cfg)).map_err(err)?;
    outcome.rows.iter().map(|r| row_dict(py, r)).collect()
}

/// Runs escalation from config text; returns the printable summary.
#[pyfunction]
fn escalate_config(py: Python<'_>, text: &str) -> PyResult<String> {
    let cfg = ExperimentConfig::parse(text).map_err(err)?;
    let e = py.detach(|| harness::escalate(&cfg)).map_err(err)?;
    Ok(harness::format_escalation(&e))
}

#[pymodule]
#[pyo3(name = "pvt")]
fn pvt_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(make_plan, m)?)?;
    m.add_function(wrap_pyfunction!(expected_coverage, m)?)?;
    m.add_function(wrap_pyfunction!(encode, m)?)?;
    m.add_function(wrap_pyfunction!(decode, m)?)?;
    m.add_function(wrap_pyfunction!(synth_gaussian, m)?)?;
    m.add_function(wrap_pyfunction!(partition, m)?)?;
    m.add_function(wrap_pyfunction!(run_config, m)?)?;
    m.add_function(wrap_pyfunction!(escalate_config, m)?)?;
    Ok(())
}
