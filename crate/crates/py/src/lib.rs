//! Python bindings.
//!
//! Templates cross the boundary as flat float sequences; groups are
//! normalized on the way in.

use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use slerpshield_core::attacks::{delta_theta_experiment, full_template_attack, NRConfig};
use slerpshield_core::evaluation::{
    self, accuracy_sweep, generate_population, revocability_study, unprotected_scores, LinkProtocol,
    SyntheticPopulation, ABLATION_ALPHAS,
};
use slerpshield_core::store::TemplateStore;
use slerpshield_core::template::group_normalize;
use slerpshield_core::{
    protection, DropoutMode, EnrollmentRecord, Error, GroupLayout, GroupWeights, ProtectionParams, Template,
};

create_exception!(slerpshield, SlerpShieldError, PyValueError);
create_exception!(slerpshield, DegenerateAngleError, SlerpShieldError);

fn err(e: Error) -> PyErr {
    match e {
        Error::DegenerateAngle { .. } => DegenerateAngleError::new_err(e.to_string()),
        other => SlerpShieldError::new_err(other.to_string()),
    }
}

fn template(values: &[f64], layout: GroupLayout) -> PyResult<Template> {
    group_normalize(values, layout).map_err(err)
}

/// Protection parameters: rotation amount, dropout ratio and group layout.
#[pyclass(name = "Params", module = "slerpshield", frozen, eq, skip_from_py_object)]
#[derive(Clone, PartialEq)]
pub struct PyParams(ProtectionParams);

#[pymethods]
impl PyParams {
    #[new]
    #[pyo3(signature = (alpha=0.9, beta=0.5, d=784, m=49, dropout="random"))]
    fn new(alpha: f64, beta: f64, d: usize, m: usize, dropout: &str) -> PyResult<Self> {
        let layout = GroupLayout::new(d, m).map_err(err)?;
        let mode: DropoutMode = dropout.parse().map_err(err)?;
        Ok(Self(ProtectionParams::new(alpha, beta, layout, mode).map_err(err)?))
    }

    #[getter]
    fn alpha(&self) -> f64 {
        self.0.alpha
    }

    #[getter]
    fn beta(&self) -> f64 {
        self.0.beta
    }

    #[getter]
    fn d(&self) -> usize {
        self.0.layout.d()
    }

    #[getter]
    fn m(&self) -> usize {
        self.0.layout.m()
    }

    #[getter]
    fn group_dim(&self) -> usize {
        self.0.layout.group_dim()
    }

    #[getter]
    fn dropout(&self) -> &'static str {
        self.0.dropout_mode.as_str()
    }

    #[getter]
    fn fingerprint(&self) -> u64 {
        self.0.fingerprint()
    }

    fn __repr__(&self) -> String {
        format!(
            "Params(alpha={}, beta={}, d={}, m={}, dropout='{}')",
            self.0.alpha,
            self.0.beta,
            self.0.layout.d(),
            self.0.layout.m(),
            self.0.dropout_mode.as_str()
        )
    }
}

/// An enrolled `{protected template, key}` pair.
#[pyclass(name = "Record", module = "slerpshield", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct PyRecord(EnrollmentRecord);

#[pymethods]
impl PyRecord {
    #[getter]
    fn label(&self) -> &str {
        &self.0.identity_label
    }

    #[getter]
    fn protected(&self) -> Vec<f64> {
        self.0.protected.values().to_vec()
    }

    #[getter]
    fn key(&self) -> Vec<f64> {
        self.0.key.values().to_vec()
    }

    /// `True` for coordinates that survived dropout.
    #[getter]
    fn kept(&self) -> Vec<bool> {
        self.0.protected.mask().kept().to_vec()
    }

    #[getter]
    fn weights(&self) -> Vec<f64> {
        self.0.protected.weights().as_slice().to_vec()
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.0 == other.0
    }

    fn __repr__(&self) -> String {
        format!(
            "Record(label='{}', d={})",
            self.0.identity_label,
            self.0.protected.layout().d()
        )
    }
}

#[pyclass(name = "MatchResult", module = "slerpshield", frozen, get_all)]
pub struct PyMatch {
    label: String,
    score: f64,
    accepted: bool,
    threshold: f64,
    failure: Option<String>,
}

impl From<slerpshield_core::MatchResult> for PyMatch {
    fn from(r: slerpshield_core::MatchResult) -> Self {
        Self {
            label: r.identity_label,
            score: r.score,
            accepted: r.accepted,
            threshold: r.threshold,
            failure: r.failure.map(|f| f.to_string()),
        }
    }
}

#[pymethods]
impl PyMatch {
    fn __repr__(&self) -> String {
        format!(
            "MatchResult(label='{}', score={:.6}, accepted={})",
            self.label, self.score, self.accepted
        )
    }
}

/// Group-normalizes `values` into `m` groups.
#[pyfunction]
fn normalize(values: Vec<f64>, m: usize) -> PyResult<Vec<f64>> {
    let layout = GroupLayout::new(values.len(), m).map_err(err)?;
    Ok(template(&values, layout)?.into_values())
}

/// Geodesic interpolation from unit `t` toward unit `k` by `alpha`.
#[pyfunction]
fn slerp(t: Vec<f64>, k: Vec<f64>, alpha: f64) -> PyResult<Vec<f64>> {
    protection::slerp(&t, &k, alpha).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (template_values, params, seed, label="", weights=None))]
fn protect(
    template_values: Vec<f64>,
    params: &PyParams,
    seed: u64,
    label: &str,
    weights: Option<Vec<f64>>,
) -> PyResult<PyRecord> {
    let p = &params.0;
    let t = template(&template_values, p.layout)?;
    let w = match weights {
        Some(w) => GroupWeights::normalized(w).map_err(err)?,
        None => GroupWeights::uniform(p.layout.m()),
    };
    let (protected, key) = slerpshield_core::protect(&t, p, &w, seed).map_err(err)?;
    Ok(PyRecord(EnrollmentRecord {
        identity_label: label.to_string(),
        protected,
        key,
    }))
}

#[pyfunction]
fn verify(query: Vec<f64>, record: &PyRecord, threshold: f64, params: &PyParams) -> PyResult<PyMatch> {
    let q = template(&query, params.0.layout)?;
    Ok(slerpshield_core::verify(&q, &record.0, threshold, &params.0)
        .map_err(err)?
        .into())
}

/// Ranks all records by descending score.
#[pyfunction]
fn identify(
    query: Vec<f64>,
    records: Vec<PyRef<'_, PyRecord>>,
    threshold: f64,
    params: &PyParams,
) -> PyResult<Vec<PyMatch>> {
    let q = template(&query, params.0.layout)?;
    let store: Vec<EnrollmentRecord> = records.iter().map(|r| r.0.clone()).collect();
    let ranked = slerpshield_core::identify(&q, &store, threshold, &params.0).map_err(err)?;
    Ok(ranked.into_iter().map(PyMatch::from).collect())
}

#[pyfunction]
#[pyo3(signature = (path, params, records, created_utc=0))]
fn save_store(path: PathBuf, params: &PyParams, records: Vec<PyRef<'_, PyRecord>>, created_utc: i64) -> PyResult<()> {
    let mut store = TemplateStore::new(&params.0, created_utc).map_err(err)?;
    for r in records {
        store.push(r.0.clone()).map_err(err)?;
    }
    store.save(&path).map_err(err)
}

#[pyfunction]
fn load_store(path: PathBuf) -> PyResult<(PyParams, Vec<PyRecord>)> {
    let store = TemplateStore::load(&path).map_err(err)?;
    let records = store.records().iter().cloned().map(PyRecord).collect();
    Ok((PyParams(*store.params()), records))
}

#[pyclass(name = "AttackSummary", module = "slerpshield", frozen, get_all)]
pub struct PyAttack {
    converged: bool,
    total_reruns: usize,
    mean_reruns: f64,
    /// Per-group rerun counts.
    reruns: Vec<usize>,
    log10_product_cost: f64,
    recovered: Option<Vec<f64>>,
    cosine_to_truth: Option<f64>,
}

/// Newton-Raphson inversion of every group of `record`.
#[pyfunction]
#[pyo3(signature = (record, params, seed=0, truth=None, max_reruns=10_000))]
fn nr_attack(
    py: Python<'_>,
    record: &PyRecord,
    params: &PyParams,
    seed: u64,
    truth: Option<Vec<f64>>,
    max_reruns: usize,
) -> PyResult<PyAttack> {
    let truth = truth.map(|t| template(&t, params.0.layout)).transpose()?;
    let cfg = NRConfig {
        max_reruns,
        ..NRConfig::default().with_seed(seed)
    };
    cfg.validate().map_err(err)?;
    let alpha = params.0.alpha;
    let rec = &record.0;
    let r = py
        .detach(|| full_template_attack(rec, alpha, &cfg, truth.as_ref()))
        .map_err(err)?;
    Ok(PyAttack {
        converged: r.converged,
        total_reruns: r.total_reruns,
        mean_reruns: r.mean_reruns,
        reruns: r.groups.iter().map(|g| g.reruns_used).collect(),
        log10_product_cost: r.log10_product_cost,
        recovered: r.recovered.map(Template::into_values),
        cosine_to_truth: r.cosine_to_truth,
    })
}

#[pyclass(name = "DeltaThetaRow", module = "slerpshield", frozen, get_all)]
pub struct PyDeltaTheta {
    d: usize,
    beta: f64,
    trials: usize,
    censored: usize,
    mean_reruns: f64,
    /// Radians; `None` when every trial was censored.
    min: Option<f64>,
    median: Option<f64>,
    max: Option<f64>,
}

#[pyfunction]
#[pyo3(signature = (d_values, beta=0.5, trials=1000, seed=0, alpha=0.9))]
fn delta_theta(
    py: Python<'_>,
    d_values: Vec<usize>,
    beta: f64,
    trials: usize,
    seed: u64,
    alpha: f64,
) -> PyResult<Vec<PyDeltaTheta>> {
    let cfg = NRConfig::default();
    let study = py
        .detach(|| delta_theta_experiment(&d_values, beta, trials, seed, alpha, &cfg))
        .map_err(err)?;
    Ok(study
        .rows
        .into_iter()
        .map(|r| PyDeltaTheta {
            d: r.d,
            beta: r.beta,
            trials: r.trials,
            censored: r.censored,
            mean_reruns: r.mean_reruns,
            min: r.min,
            median: r.median,
            max: r.max,
        })
        .collect())
}

/// A synthetic identity population with calibrated intra-class spread.
#[pyclass(name = "Population", module = "slerpshield", frozen)]
pub struct PyPopulation(evaluation::Population);

#[pymethods]
impl PyPopulation {
    #[new]
    #[pyo3(signature = (identities=50, samples=4, intra_deg=25.0, d=784, m=49, seed=0))]
    fn new(identities: usize, samples: usize, intra_deg: f64, d: usize, m: usize, seed: u64) -> PyResult<Self> {
        let cfg = SyntheticPopulation {
            identities,
            samples_per_identity: samples,
            layout: GroupLayout::new(d, m).map_err(err)?,
            intra_angle: intra_deg.to_radians(),
            seed,
        };
        Ok(Self(generate_population(&cfg).map_err(err)?))
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    #[getter]
    fn labels(&self) -> Vec<String> {
        self.0.samples.iter().map(|s| s.label.clone()).collect()
    }

    #[getter]
    fn identities(&self) -> Vec<usize> {
        self.0.samples.iter().map(|s| s.identity).collect()
    }

    #[getter]
    fn templates(&self) -> Vec<Vec<f64>> {
        self.0.samples.iter().map(|s| s.template.values().to_vec()).collect()
    }

    /// Mean angle between samples of one identity, radians.
    #[getter]
    fn mean_genuine_angle(&self) -> f64 {
        self.0.mean_genuine_angle
    }
}

#[pyclass(name = "AccuracySummary", module = "slerpshield", frozen, get_all)]
pub struct PyAccuracy {
    eer: f64,
    eer_threshold: f64,
    genuine_mean: f64,
    impostor_mean: f64,
    unprotected_eer: f64,
}

#[pyfunction]
#[pyo3(signature = (population, params, impostor_pairs=2000, seed=0))]
fn accuracy(
    py: Python<'_>,
    population: &PyPopulation,
    params: &PyParams,
    impostor_pairs: usize,
    seed: u64,
) -> PyResult<PyAccuracy> {
    let pop = &population.0;
    let p = &params.0;
    let (prot, base) = py
        .detach(|| -> slerpshield_core::Result<_> {
            let prot = accuracy_sweep(pop, p, &[], impostor_pairs, seed)?;
            let base = unprotected_scores(pop, impostor_pairs, seed)?.eer()?;
            Ok((prot, base))
        })
        .map_err(err)?;
    Ok(PyAccuracy {
        eer: prot.eer.eer,
        eer_threshold: prot.eer.threshold,
        genuine_mean: prot.scores.genuine_mean(),
        impostor_mean: prot.scores.impostor_mean(),
        unprotected_eer: base.eer,
    })
}

#[pyclass(name = "AblationRow", module = "slerpshield", frozen, get_all)]
pub struct PyAblation {
    /// `None` for the unprotected baseline.
    alpha: Option<f64>,
    genuine_mean: f64,
    impostor_mean: f64,
    gap: f64,
    eer: f64,
}

#[pyfunction]
#[pyo3(signature = (population, params, alphas=None, impostor_pairs=2000, seed=0))]
fn alpha_ablation(
    py: Python<'_>,
    population: &PyPopulation,
    params: &PyParams,
    alphas: Option<Vec<f64>>,
    impostor_pairs: usize,
    seed: u64,
) -> PyResult<Vec<PyAblation>> {
    let alphas = alphas.unwrap_or_else(|| ABLATION_ALPHAS.to_vec());
    let rows = py
        .detach(|| evaluation::alpha_ablation(&population.0, &alphas, &params.0, impostor_pairs, seed))
        .map_err(err)?;
    Ok(rows
        .into_iter()
        .map(|r| PyAblation {
            alpha: r.alpha,
            genuine_mean: r.genuine_mean,
            impostor_mean: r.impostor_mean,
            gap: r.gap,
            eer: r.eer,
        })
        .collect())
}

/// System-level linkability `d_sys` in `[0, 1]`.
#[pyfunction]
#[pyo3(signature = (population, params, protocol="protected", pairs=1000, bins=100, seed=0))]
fn sswl(
    py: Python<'_>,
    population: &PyPopulation,
    params: &PyParams,
    protocol: &str,
    pairs: usize,
    bins: usize,
    seed: u64,
) -> PyResult<f64> {
    let protocol: LinkProtocol = protocol.parse().map_err(err)?;
    let r = py
        .detach(|| evaluation::sswl(&population.0, &params.0, protocol, pairs, bins, seed))
        .map_err(err)?;
    Ok(r.d_sys)
}

#[pyclass(name = "RevocabilitySummary", module = "slerpshield", frozen, get_all)]
pub struct PyRevocability {
    ks_statistic: f64,
    ks_p_value: f64,
    genuine_acceptance: f64,
    cross_mean: f64,
    impostor_mean: f64,
    eer_threshold: f64,
}

#[pyfunction]
#[pyo3(signature = (population, params, templates=500, impostor_pairs=2000, seed=0))]
fn revocability(
    py: Python<'_>,
    population: &PyPopulation,
    params: &PyParams,
    templates: usize,
    impostor_pairs: usize,
    seed: u64,
) -> PyResult<PyRevocability> {
    let s = py
        .detach(|| revocability_study(&population.0, &params.0, templates, impostor_pairs, seed))
        .map_err(err)?;
    Ok(PyRevocability {
        ks_statistic: s.ks.statistic,
        ks_p_value: s.ks.p_value,
        genuine_acceptance: s.genuine_acceptance,
        cross_mean: s.cross_mean,
        impostor_mean: s.impostor_mean,
        eer_threshold: s.eer_threshold,
    })
}

#[pymodule]
fn slerpshield(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("SlerpShieldError", m.py().get_type::<SlerpShieldError>())?;
    m.add("DegenerateAngleError", m.py().get_type::<DegenerateAngleError>())?;
    m.add_class::<PyParams>()?;
    m.add_class::<PyRecord>()?;
    m.add_class::<PyMatch>()?;
    m.add_class::<PyAttack>()?;
    m.add_class::<PyDeltaTheta>()?;
    m.add_class::<PyPopulation>()?;
    m.add_class::<PyAccuracy>()?;
    m.add_class::<PyAblation>()?;
    m.add_class::<PyRevocability>()?;
    m.add_function(wrap_pyfunction!(normalize, m)?)?;
    m.add_function(wrap_pyfunction!(slerp, m)?)?;
    m.add_function(wrap_pyfunction!(protect, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    m.add_function(wrap_pyfunction!(identify, m)?)?;
    m.add_function(wrap_pyfunction!(save_store, m)?)?;
    m.add_function(wrap_pyfunction!(load_store, m)?)?;
    m.add_function(wrap_pyfunction!(nr_attack, m)?)?;
    m.add_function(wrap_pyfunction!(delta_theta, m)?)?;
    m.add_function(wrap_pyfunction!(accuracy, m)?)?;
    m.add_function(wrap_pyfunction!(alpha_ablation, m)?)?;
    m.add_function(wrap_pyfunction!(sswl, m)?)?;
    m.add_function(wrap_pyfunction!(revocability, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
