//! Python bindings. Vectors are lists of floats; matrices are lists of rows.

use ndarray::{Array1, Array2};
use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;

use structsparse::harness::formats;
use structsparse::modeling::{online_run, OnlineConfig};
use structsparse::training::{self, DescentConfig, LossKind, LossSpec};
use structsparse::{solvers, Error, ProblemInstance, SolverConfig, ThresholdPair, Tying};

fn py_err(e: Error) -> PyErr {
    let msg = format!("{}: {e}", e.kind());
    match e {
        Error::Io(_) => PyOSError::new_err(msg),
        _ => PyValueError::new_err(msg),
    }
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<Array2<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|row| row.len() != c) {
        return Err(PyValueError::new_err("dimension: rows differ in length"));
    }
    Array2::from_shape_vec((r, c), rows.into_iter().flatten().collect())
        .map_err(|e| PyValueError::new_err(e.to_string()))
}

fn rows(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn per_item(values: Vec<f64>, n: usize) -> Array1<f64> {
    if values.len() == 1 {
        Array1::from_elem(n, values[0])
    } else {
        Array1::from(values)
    }
}

#[pyclass(module = "structsparse_py", from_py_object)]
#[derive(Clone)]
struct Dictionary(structsparse::Dictionary);

#[pymethods]
impl Dictionary {
    /// m×p atoms given as m rows; `normalize` rescales every column to unit norm.
    #[new]
    #[pyo3(signature = (atoms, normalize = false))]
    fn new(atoms: Vec<Vec<f64>>, normalize: bool) -> PyResult<Self> {
        let a = matrix(atoms)?;
        let d = if normalize {
            structsparse::Dictionary::normalized(a)
        } else {
            structsparse::Dictionary::new(a)
        };
        d.map(Self).map_err(py_err)
    }

    #[getter]
    fn m(&self) -> usize {
        self.0.m()
    }

    #[getter]
    fn p(&self) -> usize {
        self.0.p()
    }

    fn atoms(&self) -> Vec<Vec<f64>> {
        rows(self.0.atoms())
    }

    fn save(&self, path: &str) -> PyResult<()> {
        formats::save_dictionary(path.as_ref(), &self.0).map_err(py_err)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        formats::load_dictionary(path.as_ref()).map(Self).map_err(py_err)
    }
}

#[pyclass(module = "structsparse_py", from_py_object)]
#[derive(Clone)]
struct GroupStructure(structsparse::GroupStructure);

#[pymethods]
impl GroupStructure {
    /// A partition of 0..p with per-coefficient λ and per-group μ; a
    /// single-element list is broadcast.
    #[new]
    fn new(groups: Vec<Vec<usize>>, lam: Vec<f64>, mu: Vec<f64>) -> PyResult<Self> {
        let p = groups.iter().map(Vec::len).sum();
        let k = groups.len();
        structsparse::GroupStructure::new(groups, per_item(lam, p), per_item(mu, k))
            .map(Self)
            .map_err(py_err)
    }

    #[staticmethod]
    fn singletons(p: usize, lam: f64) -> PyResult<Self> {
        structsparse::GroupStructure::singletons(p, lam)
            .map(Self)
            .map_err(py_err)
    }

    #[staticmethod]
    fn contiguous(sizes: Vec<usize>, lam: f64, mu: f64) -> PyResult<Self> {
        structsparse::GroupStructure::contiguous(&sizes, lam, mu)
            .map(Self)
            .map_err(py_err)
    }

    #[getter]
    fn p(&self) -> usize {
        self.0.p()
    }

    #[getter]
    fn n_groups(&self) -> usize {
        self.0.n_groups()
    }

    fn groups(&self) -> Vec<Vec<usize>> {
        self.0.groups().to_vec()
    }

    fn to_text(&self) -> String {
        formats::structure_to_string(&self.0)
    }

    #[staticmethod]
    fn from_text(text: &str) -> PyResult<Self> {
        formats::parse_structure(text).map(Self).map_err(py_err)
    }
}

#[pyclass(module = "structsparse_py", from_py_object)]
#[derive(Clone)]
struct Encoder(structsparse::EncoderParams);

#[pymethods]
impl Encoder {
    /// The unrolled network equal to `depth` BCoFB iterations; `alpha`
    /// overrides the step scale.
    #[staticmethod]
    #[pyo3(signature = (dictionary, structure, depth, tying = "tied", alpha = None))]
    fn from_dictionary(
        dictionary: &Dictionary,
        structure: &GroupStructure,
        depth: usize,
        tying: &str,
        alpha: Option<f64>,
    ) -> PyResult<Self> {
        let tying: Tying = tying.parse().map_err(py_err)?;
        match alpha {
            Some(a) => {
                structsparse::EncoderParams::init_with_alpha(&dictionary.0, &structure.0, a, depth, tying)
            }
            None => {
                structsparse::EncoderParams::init_from_dictionary(&dictionary.0, &structure.0, depth, tying)
            }
        }
        .map(Self)
        .map_err(py_err)
    }

    #[getter]
    fn depth(&self) -> usize {
        self.0.depth
    }

    #[getter]
    fn tying(&self) -> &'static str {
        self.0.tying.name()
    }

    fn structure(&self) -> GroupStructure {
        GroupStructure(self.0.structure.clone())
    }

    fn forward(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        self.0
            .forward(Array1::from(x).view())
            .map(|z| z.into_inner().to_vec())
            .map_err(py_err)
    }

    /// Codes of every column of the m×N data, as p rows.
    fn forward_batch(&self, data: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let x = matrix(data)?;
        self.0.forward_batch(x.view()).map(|z| rows(&z)).map_err(py_err)
    }

    /// Armijo-safeguarded training on the columns of `data`. Returns the
    /// trained encoder and the per-epoch losses.
    #[pyo3(signature = (data, dictionary, loss = "objective", epochs = 10, batch_size = 0, seed = 0, exact_codes = None))]
    #[allow(clippy::too_many_arguments)]
    fn train(
        &self,
        data: Vec<Vec<f64>>,
        dictionary: &Dictionary,
        loss: &str,
        epochs: usize,
        batch_size: usize,
        seed: u64,
        exact_codes: Option<Vec<Vec<f64>>>,
    ) -> PyResult<(Encoder, Vec<f64>)> {
        let kind: LossKind = loss.parse().map_err(py_err)?;
        let mut inst = ProblemInstance::new(matrix(data)?, dictionary.0.clone(), self.0.structure.clone())
            .map_err(py_err)?;
        match (kind, exact_codes) {
            (_, Some(z)) => inst = inst.with_exact_codes(matrix(z)?).map_err(py_err)?,
            (LossKind::Regression, None) => {
                let z =
                    solvers::exact_codes(inst.data(), &inst.dictionary, &inst.structure).map_err(py_err)?;
                inst = inst.with_exact_codes(z).map_err(py_err)?;
            }
            _ => {}
        }
        let cfg = DescentConfig {
            epochs,
            batch_size,
            seed,
            ..DescentConfig::default()
        };
        let out = training::train(&self.0, &inst, &LossSpec::new(kind), &cfg)
            .map_err(|e| py_err(e.into_error()))?;
        Ok((Encoder(out.params), out.history.iter().map(|h| h.loss).collect()))
    }

    fn save(&self, path: &str) -> PyResult<()> {
        formats::save_model(path.as_ref(), &self.0).map_err(py_err)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        formats::load_model(path.as_ref()).map(Self).map_err(py_err)
    }
}

/// Proximal operator of Σ t_j|u_j| + Σ s_r‖u_r‖.
#[pyfunction]
fn prox_hilasso(v: Vec<f64>, structure: &GroupStructure, t: Vec<f64>, s: Vec<f64>) -> PyResult<Vec<f64>> {
    let tp = ThresholdPair::new(Array1::from(t), Array1::from(s)).map_err(py_err)?;
    Ok(structsparse::prox_hilasso(Array1::from(v).view(), &structure.0, &tp).to_vec())
}

/// Exact code of one signal: (code, iterations, objective, converged).
#[pyfunction]
#[pyo3(signature = (x, dictionary, structure, solver = "bcofb", max_iter = None, tol = None))]
fn solve(
    x: Vec<f64>,
    dictionary: &Dictionary,
    structure: &GroupStructure,
    solver: &str,
    max_iter: Option<usize>,
    tol: Option<f64>,
) -> PyResult<(Vec<f64>, usize, f64, bool)> {
    let exact = SolverConfig::exact();
    let cfg = SolverConfig {
        max_iter: max_iter.unwrap_or(exact.max_iter),
        tol: tol.unwrap_or(exact.tol),
        record_history: false,
    };
    let run = match solver {
        "bcofb" => structsparse::bcofb_solve,
        "ista" => structsparse::ista_solve,
        other => return Err(PyValueError::new_err(format!("config: unknown solver '{other}'"))),
    };
    let r = run(Array1::from(x).view(), &dictionary.0, &structure.0, &cfg).map_err(py_err)?;
    Ok((
        r.code.into_inner().to_vec(),
        r.iterations,
        r.final_objective,
        r.converged,
    ))
}

#[pyfunction]
fn objective(x: Vec<f64>, z: Vec<f64>, dictionary: &Dictionary, structure: &GroupStructure) -> PyResult<f64> {
    structsparse::eval_objective(
        Array1::from(x).view(),
        Array1::from(z).view(),
        &dictionary.0,
        &structure.0,
    )
    .map_err(py_err)
}

/// Online modeling over the columns of `stream`: (encoder, dictionary,
/// per-window mean objectives).
#[pyfunction]
#[pyo3(signature = (stream, p, lam, depth, window = 1000, step = 500, forgetting = 0.99, seed = 0))]
#[allow(clippy::too_many_arguments)]
fn online(
    stream: Vec<Vec<f64>>,
    p: usize,
    lam: f64,
    depth: usize,
    window: usize,
    step: usize,
    forgetting: f64,
    seed: u64,
) -> PyResult<(Encoder, Dictionary, Vec<f64>)> {
    let cfg = OnlineConfig {
        window,
        step,
        forgetting,
        seed,
        ..OnlineConfig::default()
    };
    let x = matrix(stream)?;
    let out = online_run(x.view(), p, lam, depth, &cfg).map_err(py_err)?;
    Ok((
        Encoder(out.params),
        Dictionary(out.dictionary),
        out.metrics.iter().map(|w| w.mean_objective).collect(),
    ))
}

#[pymodule]
fn structsparse_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Dictionary>()?;
    m.add_class::<GroupStructure>()?;
    m.add_class::<Encoder>()?;
    m.add_function(wrap_pyfunction!(prox_hilasso, m)?)?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(objective, m)?)?;
    m.add_function(wrap_pyfunction!(online, m)?)?;
    Ok(())
}
