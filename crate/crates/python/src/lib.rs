//! Python bindings. Matrices cross the boundary as lists of rows, or as
//! [`PyMatrix`] handles to avoid repeated conversion.

use std::sync::Arc;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use pqii_core::dataset::{self, SyntheticSpec};
use pqii_core::ivf::SearchParams;
use pqii_core::kmeans::{DEFAULT_MAX_ITERS, DEFAULT_TOL};
use pqii_core::{
    CodeMatrix, Codebook, Error, InvertedIndex, KMeansParams, Mode, PipelineConfig, PqParams,
    QueryResult, VectorMatrix,
};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

trait OrPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> OrPy<T> for pqii_core::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

/// Accepts a `Matrix` or a sequence of equal-length float sequences.
fn matrix_arg(obj: &Bound<'_, PyAny>) -> PyResult<VectorMatrix> {
    if let Ok(m) = obj.downcast::<PyMatrix>() {
        return Ok(m.borrow().inner.clone());
    }
    let rows: Vec<Vec<f32>> = obj.extract()?;
    VectorMatrix::from_rows(&rows).py()
}

fn codes_arg(obj: &Bound<'_, PyAny>, codebook: &Codebook) -> PyResult<CodeMatrix> {
    if let Ok(c) = obj.downcast::<PyCodes>() {
        return Ok(c.borrow().inner.clone());
    }
    let rows: Vec<Vec<usize>> = obj.extract()?;
    CodeMatrix::from_rows(codebook.m_subspaces(), codebook.ks(), &rows).py()
}

fn hits(result: QueryResult) -> Vec<(u64, f64)> {
    result.hits.into_iter().map(|h| (h.id, h.distance)).collect()
}

#[pyclass(name = "Matrix", module = "pqii", frozen)]
#[derive(Clone)]
struct PyMatrix {
    inner: VectorMatrix,
}

#[pymethods]
impl PyMatrix {
    #[new]
    fn new(rows: &Bound<'_, PyAny>) -> PyResult<Self> {
        Ok(Self {
            inner: matrix_arg(rows)?,
        })
    }

    /// Loads `.fvecs`, `.csv` or the native format, chosen by extension.
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: dataset::load_matrix(path).py()?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        dataset::save_matrix(&self.inner, path).py()
    }

    #[getter]
    fn shape(&self) -> (usize, usize) {
        (self.inner.n_rows(), self.inner.n_dims())
    }

    fn __len__(&self) -> usize {
        self.inner.n_rows()
    }

    fn row(&self, i: usize) -> PyResult<Vec<f32>> {
        if i >= self.inner.n_rows() {
            return Err(PyValueError::new_err(format!("row {i} out of range")));
        }
        Ok(self.inner.row(i).to_vec())
    }

    fn slice_rows(&self, start: usize, end: usize) -> PyResult<Self> {
        Ok(Self {
            inner: self.inner.slice_rows(start, end).py()?,
        })
    }

    fn to_list(&self) -> Vec<Vec<f32>> {
        self.inner.rows().map(<[f32]>::to_vec).collect()
    }

    fn __repr__(&self) -> String {
        format!("Matrix(shape=({}, {}))", self.inner.n_rows(), self.inner.n_dims())
    }
}

#[pyclass(name = "Codes", module = "pqii", frozen)]
#[derive(Clone)]
struct PyCodes {
    inner: CodeMatrix,
}

#[pymethods]
impl PyCodes {
    #[new]
    fn new(m: usize, ks: usize, rows: Vec<Vec<usize>>) -> PyResult<Self> {
        Ok(Self {
            inner: CodeMatrix::from_rows(m, ks, &rows).py()?,
        })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: CodeMatrix::load(path).py()?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save(path).py()
    }

    #[getter]
    fn shape(&self) -> (usize, usize) {
        (self.inner.n_rows(), self.inner.m_subspaces())
    }

    #[getter]
    fn ks(&self) -> usize {
        self.inner.ks()
    }

    fn __len__(&self) -> usize {
        self.inner.n_rows()
    }

    fn row(&self, i: usize) -> PyResult<Vec<usize>> {
        if i >= self.inner.n_rows() {
            return Err(PyValueError::new_err(format!("row {i} out of range")));
        }
        Ok(self.inner.row(i).to_vec())
    }

    fn to_list(&self) -> Vec<Vec<usize>> {
        self.inner.rows().map(|r| r.to_vec()).collect()
    }
}

#[pyclass(name = "Codebook", module = "pqii", frozen)]
struct PyCodebook {
    inner: Arc<Codebook>,
}

#[pymethods]
impl PyCodebook {
    #[staticmethod]
    #[pyo3(signature = (data, m, ks=256, max_iters=DEFAULT_MAX_ITERS, seed=0))]
    fn fit(
        py: Python<'_>,
        data: &Bound<'_, PyAny>,
        m: usize,
        ks: usize,
        max_iters: usize,
        seed: u64,
    ) -> PyResult<Self> {
        let data = matrix_arg(data)?;
        let params = PqParams::new(m, ks).with_max_iters(max_iters).with_seed(seed);
        let inner = py.allow_threads(|| Codebook::fit(&data, &params)).py()?;
        Ok(Self {
            inner: Arc::new(inner),
        })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: Arc::new(Codebook::load(path).py()?),
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save(path).py()
    }

    #[getter]
    fn m(&self) -> usize {
        self.inner.m_subspaces()
    }

    #[getter]
    fn ks(&self) -> usize {
        self.inner.ks()
    }

    #[getter]
    fn sub_dim(&self) -> usize {
        self.inner.sub_dim()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn codeword(&self, sub: usize, j: usize) -> PyResult<Vec<f32>> {
        if sub >= self.inner.m_subspaces() || j >= self.inner.ks() {
            return Err(PyValueError::new_err(format!("no codeword ({sub}, {j})")));
        }
        Ok(self.inner.codeword(sub, j).to_vec())
    }

    fn encode(&self, data: &Bound<'_, PyAny>) -> PyResult<PyCodes> {
        Ok(PyCodes {
            inner: self.inner.encode(&matrix_arg(data)?).py()?,
        })
    }

    fn encode_vector(&self, v: Vec<f32>) -> PyResult<Vec<usize>> {
        self.inner.encode_vector(&v).py()
    }

    fn decode(&self, codes: &Bound<'_, PyAny>) -> PyResult<PyMatrix> {
        let codes = codes_arg(codes, &self.inner)?;
        Ok(PyMatrix {
            inner: self.inner.decode(&codes).py()?,
        })
    }

    /// The `M × Ks` table of squared distances from `query` to every codeword.
    fn adc_table(&self, query: Vec<f32>) -> PyResult<Vec<Vec<f64>>> {
        let table = self.inner.adc_table(&query).py()?;
        Ok(table.entries().chunks(self.inner.ks()).map(<[f64]>::to_vec).collect())
    }

    /// ADC estimate of the squared distance between `query` and one code.
    fn adc_distance(&self, query: Vec<f32>, code: Vec<usize>) -> PyResult<f64> {
        let code = CodeMatrix::from_rows(self.inner.m_subspaces(), self.inner.ks(), &[code]).py()?;
        self.inner.adc_table(&query).py()?.lookup(code.row(0)).py()
    }

    fn reconstruction_rmse(&self, data: &Bound<'_, PyAny>) -> PyResult<f64> {
        self.inner.reconstruction_rmse(&matrix_arg(data)?).py()
    }
}

#[pyclass(name = "Index", module = "pqii", frozen)]
struct PyIndex {
    inner: InvertedIndex,
}

fn default_ids(ids: Option<Vec<u64>>, n: usize) -> Vec<u64> {
    ids.unwrap_or_else(|| (0..n as u64).collect())
}

#[pymethods]
impl PyIndex {
    /// Ids default to row positions; `nlist` defaults to `round(sqrt(n))`.
    #[staticmethod]
    #[pyo3(signature = (codebook, codes, ids=None, nlist=None, seed=0))]
    fn build(
        codebook: &PyCodebook,
        codes: &Bound<'_, PyAny>,
        ids: Option<Vec<u64>>,
        nlist: Option<usize>,
        seed: u64,
    ) -> PyResult<Self> {
        let codes = codes_arg(codes, &codebook.inner)?;
        let ids = default_ids(ids, codes.n_rows());
        let nlist = nlist.unwrap_or_else(|| pqii_core::ivf::default_nlist(ids.len()));
        let inner = InvertedIndex::build(codebook.inner.clone(), &codes, &ids, nlist, seed).py()?;
        Ok(Self { inner })
    }

    /// An index over the same codebook and coarse centroids, holding `codes`.
    /// Indexes made this way can be merged with this one.
    #[pyo3(signature = (codes, ids))]
    fn sibling(&self, codes: &Bound<'_, PyAny>, ids: Vec<u64>) -> PyResult<Self> {
        let codes = codes_arg(codes, self.inner.codebook())?;
        let inner = InvertedIndex::build_with_coarse(
            self.inner.codebook().clone(),
            self.inner.coarse_centroids().clone(),
            &codes,
            &ids,
        )
        .py()?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: InvertedIndex::load(path).py()?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save(path).py()
    }

    /// Returns a new index; `self` is unchanged.
    fn add(&self, codes: &Bound<'_, PyAny>, ids: Vec<u64>) -> PyResult<Self> {
        let codes = codes_arg(codes, self.inner.codebook())?;
        let mut inner = self.inner.clone();
        inner.add(&codes, &ids).py()?;
        Ok(Self { inner })
    }

    fn merge(&self, other: &PyIndex) -> PyResult<Self> {
        Ok(Self {
            inner: self.inner.merge(&other.inner).py()?,
        })
    }

    #[getter]
    fn nlist(&self) -> usize {
        self.inner.nlist()
    }

    #[getter]
    fn codebook(&self) -> PyCodebook {
        PyCodebook {
            inner: self.inner.codebook().clone(),
        }
    }

    fn __len__(&self) -> usize {
        self.inner.n_items()
    }

    fn __contains__(&self, id: u64) -> bool {
        self.inner.contains(id)
    }

    fn __eq__(&self, other: &PyIndex) -> bool {
        self.inner == other.inner
    }

    fn list_ids(&self, list: usize) -> PyResult<Vec<u64>> {
        if list >= self.inner.nlist() {
            return Err(PyValueError::new_err(format!("list {list} out of range")));
        }
        Ok(self.inner.list_ids(list).to_vec())
    }

    /// `(id, squared distance)` pairs, nearest first. `subset` must be
    /// sorted and unique; `nprobe` defaults to every list.
    #[pyo3(signature = (query, k=10, nprobe=None, subset=None, max_distance=None))]
    fn query(
        &self,
        query: Vec<f32>,
        k: usize,
        nprobe: Option<usize>,
        subset: Option<Vec<u64>>,
        max_distance: Option<f64>,
    ) -> PyResult<Vec<(u64, f64)>> {
        let params = SearchParams {
            subset: subset.as_deref(),
            max_distance,
            ..SearchParams::new(k, nprobe.unwrap_or(self.inner.nlist()))
        };
        Ok(hits(self.inner.search(&query, &params).py()?))
    }
}

#[pyclass(name = "KMeansResult", module = "pqii", frozen, get_all)]
struct PyKMeansResult {
    centroids: PyMatrix,
    assignments: Vec<usize>,
    inertia: f64,
    iterations_run: usize,
    inertia_trace: Vec<f64>,
}

#[pyfunction]
#[pyo3(signature = (points, k, max_iters=DEFAULT_MAX_ITERS, tol=DEFAULT_TOL, seed=0))]
fn kmeans_fit(points: &Bound<'_, PyAny>, k: usize, max_iters: usize, tol: f64, seed: u64) -> PyResult<PyKMeansResult> {
    let points = matrix_arg(points)?;
    let r = pqii_core::kmeans_fit(&points, k, &KMeansParams { max_iters, tol, seed }).py()?;
    Ok(PyKMeansResult {
        centroids: PyMatrix { inner: r.centroids },
        assignments: r.assignments,
        inertia: r.inertia,
        iterations_run: r.iterations_run,
        inertia_trace: r.inertia_trace,
    })
}

#[pyfunction]
#[pyo3(signature = (n_rows, n_dims, n_clusters=16, spread=1.0, seed=0))]
fn gen_synthetic(n_rows: usize, n_dims: usize, n_clusters: usize, spread: f64, seed: u64) -> PyResult<PyMatrix> {
    let spec = SyntheticSpec {
        n_rows,
        n_dims,
        n_clusters,
        spread,
        seed,
    };
    Ok(PyMatrix {
        inner: dataset::gen_synthetic(&spec).py()?,
    })
}

/// Half-open `(start, end)` row ranges.
#[pyfunction]
fn chunk_rows(n_rows: usize, n_chunks: usize) -> PyResult<Vec<(usize, usize)>> {
    Ok(pqii_core::chunk_rows(n_rows, n_chunks)
        .py()?
        .into_iter()
        .map(|r| (r.start, r.end))
        .collect())
}

#[pyfunction]
fn rmse(a: &Bound<'_, PyAny>, b: &Bound<'_, PyAny>) -> PyResult<f64> {
    pqii_core::rmse(&matrix_arg(a)?, &matrix_arg(b)?).py()
}

#[pyfunction]
#[pyo3(signature = (codebook, codes, query, k=10, ids=None))]
fn flat_scan(
    codebook: &PyCodebook,
    codes: &Bound<'_, PyAny>,
    query: Vec<f32>,
    k: usize,
    ids: Option<Vec<u64>>,
) -> PyResult<Vec<(u64, f64)>> {
    let codes = codes_arg(codes, &codebook.inner)?;
    let ids = default_ids(ids, codes.n_rows());
    Ok(hits(pqii_core::flat_scan(&codebook.inner, &codes, &ids, &query, k).py()?))
}

#[pyclass(name = "PipelineReport", module = "pqii", frozen, get_all)]
struct PyPipelineReport {
    mode: String,
    global_rmse: f64,
    single_rmse: Option<f64>,
    codebook: Py<PyCodebook>,
    /// `(phase, seconds)` pairs in execution order.
    phase_timings: Vec<(String, f64)>,
    index: Option<Py<PyIndex>>,
}

/// Runs `single`, `parallel_pq` or `parallel_pq_index` and returns the report.
#[pyfunction]
#[pyo3(signature = (
    data, m, ks=256, mode="parallel_pq", chunks=1, threads=1, nlist=None,
    iters=DEFAULT_MAX_ITERS, seed=0, measure_single=false,
))]
#[allow(clippy::too_many_arguments)]
fn run_pipeline(
    py: Python<'_>,
    data: &Bound<'_, PyAny>,
    m: usize,
    ks: usize,
    mode: &str,
    chunks: usize,
    threads: usize,
    nlist: Option<usize>,
    iters: usize,
    seed: u64,
    measure_single: bool,
) -> PyResult<PyPipelineReport> {
    let data = matrix_arg(data)?;
    let mode: Mode = mode.parse().py()?;
    let config = PipelineConfig {
        n_chunks: chunks,
        nlist,
        kmeans_iters: iters,
        seed,
        n_threads: threads,
        measure_single,
        ..PipelineConfig::new(mode, m, ks)
    };
    let report = py.allow_threads(|| pqii_core::run_pipeline(&data, &config)).py()?;
    let index = report
        .index
        .map(|inner| Py::new(py, PyIndex { inner }))
        .transpose()?;
    Ok(PyPipelineReport {
        mode: mode.to_string(),
        global_rmse: report.global_rmse,
        single_rmse: report.single_rmse,
        codebook: Py::new(
            py,
            PyCodebook {
                inner: Arc::new(report.global_codebook),
            },
        )?,
        phase_timings: report
            .phase_timings
            .into_iter()
            .map(|(p, s)| (p.as_str().to_string(), s))
            .collect(),
        index,
    })
}

#[pymodule]
fn pqii(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyMatrix>()?;
    m.add_class::<PyCodes>()?;
    m.add_class::<PyCodebook>()?;
    m.add_class::<PyIndex>()?;
    m.add_class::<PyKMeansResult>()?;
    m.add_class::<PyPipelineReport>()?;
    m.add_function(wrap_pyfunction!(gen_synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(chunk_rows, m)?)?;
    m.add_function(wrap_pyfunction!(kmeans_fit, m)?)?;
    m.add_function(wrap_pyfunction!(rmse, m)?)?;
    m.add_function(wrap_pyfunction!(flat_scan, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    Ok(())
}
