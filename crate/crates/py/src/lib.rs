//! Python bindings. Documents cross the boundary as JSON or CSV text.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use plantstruct::egrtr::{self, DecoderTrace, HeadConfig, RelationHeadState};
use plantstruct::fusion::match_codes as core_match_codes;
use plantstruct::ingest;
use plantstruct::optimizer::{anneal as core_anneal, brute_force as core_brute_force, SearchReport};
use plantstruct::pipeline;
use plantstruct::plant::validate_structure;
use plantstruct::report::{Header, Method, ResultDocument};
use plantstruct::{EnergyBreakdown, HierarchicalStructure, PlantInstance, PlausibilityModel, RunConfig};

fn value_error(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Scene-graph evidence for one diagram.
#[pyclass(frozen, name = "Plant")]
struct PyPlant(PlantInstance);

#[pymethods]
impl PyPlant {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        ingest::parse_scene_graph(text.as_bytes()).map(Self).map_err(value_error)
    }

    fn to_json(&self) -> String {
        ingest::write_scene_graph(&self.0)
    }

    #[getter]
    fn n(&self) -> usize {
        self.0.n()
    }

    #[getter]
    fn component_classes(&self) -> Vec<String> {
        self.0.vocab().component_classes().iter().map(|c| c.to_string()).collect()
    }

    #[getter]
    fn section_classes(&self) -> Vec<String> {
        self.0.vocab().section_classes().to_vec()
    }

    #[getter]
    fn line_classes(&self) -> Vec<String> {
        self.0.vocab().line_classes().to_vec()
    }

    fn __repr__(&self) -> String {
        format!("Plant(n={})", self.0.n())
    }
}

#[pyclass(frozen, name = "Rulebook")]
struct PyRulebook(plantstruct::Rulebook);

#[pymethods]
impl PyRulebook {
    /// Parses a regulations document against the plant's vocabularies.
    #[staticmethod]
    fn from_json(text: &str, plant: &PyPlant) -> PyResult<Self> {
        ingest::parse_regulations(text.as_bytes(), plant.0.vocab()).map(Self).map_err(value_error)
    }
}

/// Registry plausibility model.
#[pyclass(frozen, name = "Model")]
struct PyModel(PlausibilityModel);

#[pymethods]
impl PyModel {
    #[staticmethod]
    #[pyo3(signature = (registry_csv, plant, smoothing = 1.0))]
    fn fit(registry_csv: &str, plant: &PyPlant, smoothing: f64) -> PyResult<Self> {
        let records = ingest::parse_registry(registry_csv.as_bytes(), plant.0.vocab()).map_err(value_error)?;
        plantstruct::objective::fit_plausibility(&records, plant.0.vocab(), smoothing)
            .map(Self)
            .map_err(value_error)
    }

    #[staticmethod]
    fn from_json(text: &str, plant: &PyPlant) -> PyResult<Self> {
        ingest::parse_model(text.as_bytes(), plant.0.vocab()).map(Self).map_err(value_error)
    }

    fn to_json(&self, plant: &PyPlant) -> String {
        ingest::write_model(&self.0, plant.0.vocab())
    }
}

/// Objective weights and search settings; defaults when built without text.
#[pyclass(name = "Config", skip_from_py_object)]
#[derive(Clone)]
struct PyConfig(RunConfig);

#[pymethods]
impl PyConfig {
    #[new]
    fn new() -> Self {
        Self(RunConfig::default())
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        ingest::parse_config(text.as_bytes()).map(Self).map_err(value_error)
    }

    fn to_json(&self) -> String {
        ingest::write_config(&self.0)
    }

    #[getter]
    fn get_seed(&self) -> u64 {
        self.0.seed
    }

    #[setter]
    fn set_seed(&mut self, seed: u64) {
        self.0.seed = seed;
    }

    #[getter]
    fn get_lambdas(&self) -> [f64; 5] {
        self.0.lambdas
    }

    #[setter]
    fn set_lambdas(&mut self, lambdas: [f64; 5]) {
        self.0.lambdas = lambdas;
    }

    /// Sets iterations per restart and the number of restarts.
    fn set_search(&mut self, iters: usize, restarts: usize) {
        self.0.annealing.iters = iters;
        self.0.annealing.restarts = restarts;
    }
}

/// Three-level hierarchy over the components.
#[pyclass(frozen, name = "Structure", skip_from_py_object)]
#[derive(Clone)]
struct PyStructure(HierarchicalStructure);

#[pymethods]
impl PyStructure {
    #[new]
    fn new(
        section_of: Vec<usize>,
        line_of: Vec<usize>,
        component_class: Vec<usize>,
        section_class: Vec<usize>,
        line_class: Vec<usize>,
    ) -> Self {
        Self(HierarchicalStructure {
            section_of,
            line_of,
            component_class,
            section_class,
            line_class,
        })
    }

    #[getter]
    fn section_of(&self) -> Vec<usize> {
        self.0.section_of.clone()
    }

    #[getter]
    fn line_of(&self) -> Vec<usize> {
        self.0.line_of.clone()
    }

    #[getter]
    fn component_class(&self) -> Vec<usize> {
        self.0.component_class.clone()
    }

    #[getter]
    fn section_class(&self) -> Vec<usize> {
        self.0.section_class.clone()
    }

    #[getter]
    fn line_class(&self) -> Vec<usize> {
        self.0.line_class.clone()
    }

    fn sections(&self) -> Vec<Vec<usize>> {
        self.0.sections()
    }

    fn canonical(&self) -> Self {
        Self(self.0.canonicalize())
    }

    /// Violations as JSON strings; empty when the structure is valid.
    fn violations(&self, plant: &PyPlant) -> Vec<String> {
        match validate_structure(&self.0, &plant.0) {
            Ok(()) => Vec::new(),
            Err(vs) => vs.iter().map(|v| serde_json::to_string(v).expect("violations serialize")).collect(),
        }
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.0 == other.0
    }

    fn __repr__(&self) -> String {
        format!("Structure(sections={:?}, lines={:?})", self.0.sections(), self.0.lines())
    }
}

/// Outcome of a structure search.
#[pyclass(frozen, name = "Result")]
struct PySearchResult {
    structure: HierarchicalStructure,
    energy: EnergyBreakdown,
    document: String,
}

#[pymethods]
impl PySearchResult {
    #[getter]
    fn structure(&self) -> PyStructure {
        PyStructure(self.structure.clone())
    }

    #[getter]
    fn total(&self) -> f64 {
        self.energy.total
    }

    #[getter]
    fn energy(&self) -> Vec<(&'static str, f64)> {
        energy_items(&self.energy)
    }

    /// Full result document, as written by the command-line tool.
    fn to_json(&self) -> String {
        self.document.clone()
    }
}

fn energy_items(e: &EnergyBreakdown) -> Vec<(&'static str, f64)> {
    vec![
        ("e_node", e.e_node),
        ("e_edge", e.e_edge),
        ("e_struct", e.e_struct),
        ("e_norm", e.e_norm),
        ("e_reg", e.e_reg),
        ("total", e.total),
    ]
}

fn result(inst: &PlantInstance, config: &RunConfig, report: SearchReport, method: Method, matching: Option<plantstruct::fusion::CodeAssignment>) -> PySearchResult {
    let document = ResultDocument::new(Header::for_run(config, []), inst, &report, method, matching).to_json();
    PySearchResult {
        structure: report.best,
        energy: report.best_score,
        document,
    }
}

/// Fuses optional equipment/OCR evidence and anneals the structure.
#[pyfunction]
#[pyo3(signature = (plant, rulebook, model, config, equipment_csv = None, ocr_json = None))]
fn reconstruct(
    py: Python<'_>,
    plant: &PyPlant,
    rulebook: &PyRulebook,
    model: &PyModel,
    config: &PyConfig,
    equipment_csv: Option<&str>,
    ocr_json: Option<&str>,
) -> PyResult<PySearchResult> {
    let equipment = equipment_csv
        .map(|t| ingest::parse_equipment(t.as_bytes()))
        .transpose()
        .map_err(value_error)?
        .unwrap_or_default();
    let codes = ocr_json
        .map(|t| ingest::parse_ocr_codes(t.as_bytes()))
        .transpose()
        .map_err(value_error)?
        .unwrap_or_default();
    let rec = py
        .detach(|| pipeline::reconstruct(&plant.0, &codes, &equipment, &rulebook.0, &model.0, &config.0))
        .map_err(value_error)?;
    Ok(result(&rec.fused, &config.0, rec.report, Method::Anneal, Some(rec.assignment)))
}

/// Anneals on the plant as given, without evidence fusion.
#[pyfunction]
fn anneal(py: Python<'_>, plant: &PyPlant, rulebook: &PyRulebook, model: &PyModel, config: &PyConfig) -> PyResult<PySearchResult> {
    let report = py
        .detach(|| core_anneal(&plant.0, &rulebook.0, &model.0, &config.0))
        .map_err(value_error)?;
    Ok(result(&plant.0, &config.0, report, Method::Anneal, None))
}

/// Exact optimum by enumeration; raises for instances that are too large.
#[pyfunction]
fn brute_force(py: Python<'_>, plant: &PyPlant, rulebook: &PyRulebook, model: &PyModel, config: &PyConfig) -> PyResult<PySearchResult> {
    let report = py
        .detach(|| core_brute_force(&plant.0, &rulebook.0, &model.0, &config.0))
        .map_err(value_error)?;
    Ok(result(&plant.0, &config.0, report, Method::BruteForce, None))
}

/// Energy terms of a structure as `(name, value)` pairs.
#[pyfunction]
fn score(structure: &PyStructure, plant: &PyPlant, rulebook: &PyRulebook, model: &PyModel, config: &PyConfig) -> PyResult<Vec<(&'static str, f64)>> {
    validate_structure(&structure.0, &plant.0).map_err(|v| value_error(format!("invalid structure: {v:?}")))?;
    let e = plantstruct::score(&structure.0, &plant.0, &rulebook.0, &model.0, &config.0);
    Ok(energy_items(&e))
}

/// Code-to-detection pairs `(code, detection, distance)`.
#[pyfunction]
#[pyo3(signature = (ocr_json, plant, cutoff_factor = 1.5))]
fn match_codes(ocr_json: &str, plant: &PyPlant, cutoff_factor: f64) -> PyResult<Vec<(usize, usize, f64)>> {
    let codes = ingest::parse_ocr_codes(ocr_json.as_bytes()).map_err(value_error)?;
    let assignment = core_match_codes(&codes, &plant.0, cutoff_factor);
    Ok(assignment.pairs.iter().map(|p| (p.code, p.detection, p.distance)).collect())
}

type Nested2 = Vec<Vec<f64>>;
type Nested3 = Vec<Nested2>;

/// Seeded relational head over random decoder traces.
#[pyclass(frozen, name = "RelationHead")]
struct PyRelationHead(RelationHeadState);

#[pymethods]
impl PyRelationHead {
    #[new]
    #[pyo3(signature = (n, d_model, layers, rel_classes, seed = 0))]
    fn new(n: usize, d_model: usize, layers: usize, rel_classes: usize, seed: u64) -> PyResult<Self> {
        let config = HeadConfig::new(n, d_model, layers, rel_classes);
        egrtr::init_state(config, seed).map(Self).map_err(value_error)
    }

    #[getter]
    fn parameter_count(&self) -> usize {
        self.0.parameter_count()
    }

    /// Returns `(g_rel, g_conn)` as nested lists for a random trace.
    #[pyo3(signature = (enc_tokens, trace_seed = 0))]
    fn forward(&self, enc_tokens: usize, trace_seed: u64) -> PyResult<(Nested3, Nested2)> {
        let trace = DecoderTrace::random(&self.0.config, enc_tokens, trace_seed);
        let out = egrtr::forward(&trace, &self.0).map_err(value_error)?;
        let g_rel = out
            .g_rel
            .outer_iter()
            .map(|plane| plane.outer_iter().map(|row| row.to_vec()).collect())
            .collect();
        let g_conn = out.g_conn.outer_iter().map(|row| row.to_vec()).collect();
        Ok((g_rel, g_conn))
    }

    /// Maximum relative error between analytic and finite-difference gradients.
    #[pyo3(signature = (enc_tokens, trace_seed = 0, step = 1e-5))]
    fn gradient_check(&self, enc_tokens: usize, trace_seed: u64, step: f64) -> PyResult<f64> {
        let trace = DecoderTrace::random(&self.0.config, enc_tokens, trace_seed);
        egrtr::gradient_check(&trace, &self.0, step)
            .map(|c| c.max_relative_error)
            .map_err(value_error)
    }

    fn weights_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.0.to_document()).expect("weights serialize");
        s.push('\n');
        s
    }
}

#[pymodule]
#[pyo3(name = "plantstruct")]
pub fn plantstruct_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyPlant>()?;
    m.add_class::<PyRulebook>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyConfig>()?;
    m.add_class::<PyStructure>()?;
    m.add_class::<PySearchResult>()?;
    m.add_class::<PyRelationHead>()?;
    m.add_function(wrap_pyfunction!(reconstruct, m)?)?;
    m.add_function(wrap_pyfunction!(anneal, m)?)?;
    m.add_function(wrap_pyfunction!(brute_force, m)?)?;
    m.add_function(wrap_pyfunction!(score, m)?)?;
    m.add_function(wrap_pyfunction!(match_codes, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
