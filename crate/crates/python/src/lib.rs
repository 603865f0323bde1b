//! Python bindings: `import perturb_project`.
//!
//! Matrices cross the boundary as lists of rows, tensors as flat lists in
//! lexicographic index order.

use pnp_core::bench::{self, BoxShape, ComplexityTarget, MarginalGrid, NoiseModel};
use pnp_core::engine::EngineConfig;
use pnp_core::marginals::{self, BinaryDataset, MarginalTensor, ParityQuery, ReleaseMethod};
use pnp_core::projections::residual as set_residual;
use pnp_core::similarity::{self, SimilarityMode, UnitVectorSet};
use pnp_core::{ConvexSet, Error, RandomStream, SymMatrix};
use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io(io) => PyOSError::new_err(io.to_string()),
        e if e.is_numerical() => PyRuntimeError::new_err(e.to_string()),
        e => PyValueError::new_err(e.to_string()),
    }
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<SymMatrix> {
    SymMatrix::from_rows(rows).map_err(py_err)
}

fn parse_set(name: &str, param: Option<f64>) -> PyResult<ConvexSet> {
    let p = param.unwrap_or(1.0);
    let set = match name {
        "psd" => ConvexSet::PsdCone,
        "entry_clip" | "box" => ConvexSet::EntryClip(p),
        "diagonal_clip" => ConvexSet::DiagonalClip(p),
        "frobenius_ball" => ConvexSet::FrobeniusBall(p),
        "psd_trace" => ConvexSet::PsdTrace(p),
        "psd_ball" => ConvexSet::PsdBall(p),
        other => return Err(PyValueError::new_err(format!("unknown set {other:?}"))),
    };
    set.validate().map_err(py_err)?;
    Ok(set)
}

fn dataset(rows: Vec<Vec<u8>>, counts: Option<Vec<u64>>, sparsity: Option<usize>) -> PyResult<BinaryDataset> {
    let width = rows.first().map_or(0, Vec::len);
    let counts = match counts {
        Some(c) if c.len() != rows.len() => {
            return Err(PyValueError::new_err("counts must match rows in length"))
        }
        Some(c) => c,
        None => vec![1; rows.len()],
    };
    BinaryDataset::from_rows(width, rows.into_iter().zip(counts).collect(), sparsity).map_err(py_err)
}

/// `(epsilon, delta, sensitivity)` for a Gaussian release.
#[pyclass(frozen, from_py_object)]
#[derive(Clone, Copy)]
struct PrivacyParams {
    inner: pnp_core::PrivacyParams,
}

#[pymethods]
impl PrivacyParams {
    #[new]
    #[pyo3(signature = (epsilon, delta, sensitivity = 1.0))]
    fn new(epsilon: f64, delta: f64, sensitivity: f64) -> PyResult<Self> {
        let inner = pnp_core::PrivacyParams::new(epsilon, delta, sensitivity).map_err(py_err)?;
        Ok(PrivacyParams { inner })
    }

    #[getter]
    fn epsilon(&self) -> f64 {
        self.inner.epsilon()
    }

    #[getter]
    fn delta(&self) -> f64 {
        self.inner.delta()
    }

    #[getter]
    fn sensitivity(&self) -> f64 {
        self.inner.sensitivity()
    }

    fn sigma(&self) -> f64 {
        pnp_core::calibrate_sigma(&self.inner).sigma()
    }

    fn __repr__(&self) -> String {
        format!(
            "PrivacyParams(epsilon={}, delta={}, sensitivity={})",
            self.epsilon(),
            self.delta(),
            self.sensitivity()
        )
    }
}

#[pyfunction]
fn calibrate_sigma(params: PrivacyParams) -> f64 {
    params.sigma()
}

/// Euclidean projection of a symmetric matrix onto a named set.
#[pyfunction]
#[pyo3(signature = (m, set, param = None))]
fn project(m: Vec<Vec<f64>>, set: &str, param: Option<f64>) -> PyResult<Vec<Vec<f64>>> {
    let set = parse_set(set, param)?;
    Ok(set.project(&matrix(m)?).map_err(py_err)?.to_rows())
}

/// Frobenius distance from `m` to the set.
#[pyfunction]
#[pyo3(signature = (m, set, param = None))]
fn residual(m: Vec<Vec<f64>>, set: &str, param: Option<f64>) -> PyResult<f64> {
    let set = parse_set(set, param)?;
    set_residual(&set, &matrix(m)?).map_err(py_err)
}

#[pyfunction]
fn gram(vectors: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
    let v = UnitVectorSet::new(vectors).map_err(py_err)?;
    Ok(similarity::gram(&v).to_rows())
}

#[pyclass(frozen, get_all)]
struct SimilarityRelease {
    matrix: Vec<Vec<f64>>,
    mode: String,
    sigma: f64,
    iterations: usize,
    final_residuals: Vec<f64>,
    polish_iterations: Option<usize>,
}

/// Private cosine similarity matrix of unit-norm rows.
#[pyfunction]
#[pyo3(signature = (vectors, params, mode = "exact", iterations = None, seed = 0))]
fn release_cosine(
    vectors: Vec<Vec<f64>>,
    params: PrivacyParams,
    mode: &str,
    iterations: Option<usize>,
    seed: u64,
) -> PyResult<SimilarityRelease> {
    let v = UnitVectorSet::new(vectors).map_err(py_err)?;
    let stream = RandomStream::new(seed);
    let config = match iterations {
        Some(t) => EngineConfig::new(t, stream).map_err(py_err)?,
        None => EngineConfig::for_order(v.count(), stream),
    };
    let out = match mode {
        "exact" => similarity::release_cosine_exact(&v, &params.inner, &config),
        "practical" => similarity::release_cosine_practical(&v, &params.inner, &config),
        other => return Err(PyValueError::new_err(format!("unknown mode {other:?}"))),
    }
    .map_err(py_err)?;
    Ok(SimilarityRelease {
        matrix: out.matrix.to_rows(),
        mode: match out.mode {
            SimilarityMode::ExactSet => "exact",
            SimilarityMode::Practical => "practical",
        }
        .into(),
        sigma: out.sigma,
        iterations: out.iterations,
        final_residuals: out.final_residuals,
        polish_iterations: out.polish_iterations,
    })
}

/// Gaussian noise then entrywise clipping to [-1, 1].
#[pyfunction]
#[pyo3(signature = (vectors, params, seed = 0))]
fn gaussian_clip_baseline(vectors: Vec<Vec<f64>>, params: PrivacyParams, seed: u64) -> PyResult<Vec<Vec<f64>>> {
    let v = UnitVectorSet::new(vectors).map_err(py_err)?;
    Ok(similarity::gaussian_clip_baseline(&v, &params.inner, RandomStream::new(seed)).to_rows())
}

#[pyclass(frozen, name = "MarginalTensor", from_py_object)]
#[derive(Clone)]
struct PyTensor {
    inner: MarginalTensor,
}

#[pymethods]
impl PyTensor {
    #[getter]
    fn order(&self) -> usize {
        self.inner.order
    }

    #[getter]
    fn side(&self) -> usize {
        self.inner.side
    }

    /// Entries in raw count units.
    #[getter]
    fn values(&self) -> Vec<f64> {
        self.inner.raw_values()
    }

    fn get(&self, index: Vec<usize>) -> PyResult<f64> {
        let flat = self.inner.flat_index(&index).map_err(py_err)?;
        Ok(self.inner.raw_values()[flat])
    }

    /// Answer of the parity query over the 0-based feature set `alpha`.
    fn query(&self, alpha: Vec<usize>) -> PyResult<f64> {
        let q = ParityQuery::new(alpha).map_err(py_err)?;
        marginals::answer_parity_query(&self.inner, &q).map_err(py_err)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("MarginalTensor(order={}, side={})", self.inner.order, self.inner.side)
    }
}

#[pyclass(frozen, get_all)]
struct MarginalRelease {
    tensor: PyTensor,
    method: String,
    sensitivity: f64,
    sigma: f64,
    sigma_raw: f64,
}

#[pyfunction]
#[pyo3(signature = (rows, k, counts = None))]
fn parity_tensor(rows: Vec<Vec<u8>>, k: usize, counts: Option<Vec<u64>>) -> PyResult<PyTensor> {
    let data = dataset(rows, counts, None)?;
    let inner = marginals::parity_tensor(&data, k).map_err(py_err)?;
    Ok(PyTensor { inner })
}

/// Private order-k parity tensor of a binary dataset.
#[pyfunction]
#[pyo3(signature = (rows, k, params, method = "even-flatten", sparsity = None, counts = None, seed = 0))]
fn release_marginals(
    rows: Vec<Vec<u8>>,
    k: usize,
    params: PrivacyParams,
    method: &str,
    sparsity: Option<usize>,
    counts: Option<Vec<u64>>,
    seed: u64,
) -> PyResult<MarginalRelease> {
    let data = dataset(rows, counts, sparsity)?;
    let stream = RandomStream::new(seed);
    let out = match method {
        "even-flatten" => marginals::release_even_k(&data, k, &params.inner, stream),
        "gaussian" => marginals::release_gaussian_only(&data, k, &params.inner, stream),
        "threshold" => {
            let t = sparsity.ok_or_else(|| PyValueError::new_err("threshold needs sparsity"))?;
            marginals::release_threshold_baseline(&data, k, t, &params.inner, stream)
        }
        other => return Err(PyValueError::new_err(format!("unknown method {other:?}"))),
    }
    .map_err(py_err)?;
    Ok(MarginalRelease {
        method: match out.method {
            ReleaseMethod::EvenFlatten => "even-flatten",
            ReleaseMethod::Threshold => "threshold",
            ReleaseMethod::Gaussian => "gaussian",
        }
        .into(),
        sensitivity: out.params.sensitivity(),
        sigma: out.sigma,
        sigma_raw: out.sigma_raw,
        tensor: PyTensor { inner: out.tensor },
    })
}

/// Mean squared error over all index tuples, raw units.
#[pyfunction]
fn avg_query_sq_error(released: PyTensor, truth: PyTensor) -> PyResult<f64> {
    marginals::tensor_sq_error(&released.inner, &truth.inner).map_err(py_err)
}

/// Closed-form Gaussian complexity of the unit box in `R^n` or of `n × n`
/// symmetric matrices with entries in [-1, 1].
#[pyfunction]
#[pyo3(signature = (n, matrix = false))]
fn complexity_box(n: usize, matrix: bool) -> f64 {
    let shape = if matrix { BoxShape::SymMatrix(n) } else { BoxShape::Vector(n) };
    bench::complexity_box_closed_form(shape)
}

/// Monte Carlo Gaussian complexity; returns `(value, std_error)`.
#[pyfunction]
#[pyo3(signature = (set, n, radius = 1.0, noise = "symmetric", trials = 1000, seed = 0))]
fn complexity_monte_carlo(
    set: &str,
    n: usize,
    radius: f64,
    noise: &str,
    trials: usize,
    seed: u64,
) -> PyResult<(f64, f64)> {
    let target = if set == "vector_box" {
        ComplexityTarget::VectorBox { dim: n, bound: radius }
    } else {
        let noise = match noise {
            "symmetric" => NoiseModel::Symmetric,
            "dense" => NoiseModel::Dense,
            other => return Err(PyValueError::new_err(format!("unknown noise model {other:?}"))),
        };
        ComplexityTarget::Matrix { set: parse_set(set, Some(radius))?, order: n, noise }
    };
    let est = bench::complexity_monte_carlo(&target, trials, RandomStream::new(seed)).map_err(py_err)?;
    Ok((est.value, est.std_error))
}

/// Monte Carlo `E‖Π(A+W) − Π(A)‖²`; returns `(mean, std_error)`.
#[pyfunction]
#[pyo3(signature = (anchor, set = "box", param = None, trials = 1000, seed = 0))]
fn stability(
    anchor: Vec<Vec<f64>>,
    set: &str,
    param: Option<f64>,
    trials: usize,
    seed: u64,
) -> PyResult<(f64, f64)> {
    let set = parse_set(set, param)?;
    let est = bench::stability_experiment(&set, &matrix(anchor)?, trials, RandomStream::new(seed))
        .map_err(py_err)?;
    Ok((est.mean, est.std_error))
}

/// `(exponent, intercept, r2)` of a least-squares fit of `ln y` on `ln x`.
#[pyfunction]
fn fit_power_law(points: Vec<(f64, f64)>) -> PyResult<(f64, f64, f64)> {
    let fit = bench::fit_power_law(&points).map_err(py_err)?;
    Ok((fit.exponent, fit.intercept, fit.r2))
}

/// Cosine scaling experiment; returns the report as JSON.
#[pyfunction]
#[pyo3(signature = (sizes, params, trials = 30, seed = 0))]
fn cosine_scaling(sizes: Vec<usize>, params: PrivacyParams, trials: usize, seed: u64) -> PyResult<String> {
    let report = bench::scaling_experiment_cosine(&sizes, &params.inner, trials, RandomStream::new(seed))
        .map_err(py_err)?;
    serde_json::to_string(&report).map_err(|e| py_err(e.into()))
}

/// Marginal scaling experiment; returns the report as JSON.
#[pyfunction]
#[pyo3(signature = (sizes, k, records, params, sparsity = None, trials = 30, seed = 0))]
fn marginal_scaling(
    sizes: Vec<usize>,
    k: usize,
    records: usize,
    params: PrivacyParams,
    sparsity: Option<usize>,
    trials: usize,
    seed: u64,
) -> PyResult<String> {
    let grid = MarginalGrid { sizes, k, records, sparsity };
    let report = bench::scaling_experiment_marginals(&grid, &params.inner, trials, RandomStream::new(seed))
        .map_err(py_err)?;
    serde_json::to_string(&report).map_err(|e| py_err(e.into()))
}

#[pymodule]
fn perturb_project(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PrivacyParams>()?;
    m.add_class::<SimilarityRelease>()?;
    m.add_class::<PyTensor>()?;
    m.add_class::<MarginalRelease>()?;
    m.add_function(wrap_pyfunction!(calibrate_sigma, m)?)?;
    m.add_function(wrap_pyfunction!(project, m)?)?;
    m.add_function(wrap_pyfunction!(residual, m)?)?;
    m.add_function(wrap_pyfunction!(gram, m)?)?;
    m.add_function(wrap_pyfunction!(release_cosine, m)?)?;
    m.add_function(wrap_pyfunction!(gaussian_clip_baseline, m)?)?;
    m.add_function(wrap_pyfunction!(parity_tensor, m)?)?;
    m.add_function(wrap_pyfunction!(release_marginals, m)?)?;
    m.add_function(wrap_pyfunction!(avg_query_sq_error, m)?)?;
    m.add_function(wrap_pyfunction!(complexity_box, m)?)?;
    m.add_function(wrap_pyfunction!(complexity_monte_carlo, m)?)?;
    m.add_function(wrap_pyfunction!(stability, m)?)?;
    m.add_function(wrap_pyfunction!(fit_power_law, m)?)?;
    m.add_function(wrap_pyfunction!(cosine_scaling, m)?)?;
    m.add_function(wrap_pyfunction!(marginal_scaling, m)?)?;
    Ok(())
}
