//! Python bindings: assembler, bundled guests, single runs and campaigns.
// pyo3 0.22 macro expansion trips this lint
#![allow(clippy::useless_conversion)]

use std::path::PathBuf;
use std::time::Duration;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict};

use vpfuzz::config::ConfigFile;
use vpfuzz::coverage::{self, CoverageMap};
use vpfuzz::fuzzer::{fuzz_campaign, CampaignOptions, ClockKind};
use vpfuzz::guest::{self, GuestBundle};
use vpfuzz::harness::{self, Deployment, ExecMode, Harness, RunResult, VpConfig};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Assembles RV32I source. Returns `(bytes, symbols)`.
#[pyfunction]
#[pyo3(signature = (source, base = 0x1000))]
fn assemble<'py>(py: Python<'py>, source: &str, base: u32) -> PyResult<(Bound<'py, PyBytes>, Bound<'py, PyDict>)> {
    let a = guest::assemble(source, base).map_err(value_err)?;
    let syms = PyDict::new_bound(py);
    for (k, v) in &a.symbols {
        syms.set_item(k, v)?;
    }
    Ok((PyBytes::new_bound(py, &a.bytes), syms))
}

#[pyfunction]
fn disassemble(image: &[u8]) -> Vec<String> {
    vpfuzz::isa::disassemble(image)
}

/// Shifts lowercase ASCII letters by `shift`; other bytes pass through.
#[pyfunction]
fn caesar<'py>(py: Python<'py>, text: &[u8], shift: u32) -> Bound<'py, PyBytes> {
    PyBytes::new_bound(py, &guest::caesar(text, shift))
}

#[pyfunction]
fn hash16(addr: u32) -> u16 {
    coverage::hash16(addr)
}

/// Bucketed copy of a raw coverage map (power-of-two length up to 64 KiB).
#[pyfunction]
fn classify<'py>(py: Python<'py>, map: &[u8]) -> PyResult<Bound<'py, PyBytes>> {
    if !map.len().is_power_of_two() || map.len() > coverage::MAP_SIZE {
        return Err(value_err(format!("map length {} is not a power of two up to {}", map.len(), coverage::MAP_SIZE)));
    }
    let mut m = CoverageMap::from_bytes(map.to_vec());
    coverage::classify_counts(&mut m);
    Ok(PyBytes::new_bound(py, m.as_bytes()))
}

#[pyfunction]
fn bundle_names() -> Vec<&'static str> {
    guest::BUNDLE_NAMES.to_vec()
}

/// A bundled guest image with its configuration.
#[pyclass(name = "Guest", module = "pyvpfuzz")]
struct PyGuest {
    inner: GuestBundle,
}

#[pymethods]
impl PyGuest {
    #[getter]
    fn name(&self) -> &str {
        &self.inner.name
    }

    #[getter]
    fn binary<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new_bound(py, &self.inner.binary)
    }

    #[getter]
    fn source(&self) -> &str {
        &self.inner.source
    }

    fn symbol(&self, name: &str) -> Option<u32> {
        self.inner.symbol(name)
    }

    fn config_text(&self) -> String {
        self.inner.config_text()
    }

    /// Writes `<name>.bin`, `.sym` and `.cfg`; returns the paths.
    fn write_to(&self, dir: PathBuf) -> PyResult<Vec<PathBuf>> {
        self.inner.write_to(&dir).map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }

    fn __repr__(&self) -> String {
        format!("Guest({:?}, {} bytes)", self.inner.name, self.inner.binary.len())
    }
}

#[pyfunction]
#[pyo3(signature = (name, password = "hello", shift = 1))]
fn build_guest(name: &str, password: &str, shift: u32) -> PyResult<PyGuest> {
    Ok(PyGuest { inner: guest::build(name, password, shift).map_err(value_err)? })
}

#[pyclass(name = "RunResult", module = "pyvpfuzz", get_all)]
struct PyRunResult {
    /// OK, CRASH, TIMEOUT or INPUT_EXHAUSTED.
    kind: String,
    /// Crash reason text, e.g. `return_value=1`.
    reason: Option<String>,
    instructions: u64,
    probe_reads: Option<u64>,
    exec_us: u64,
    coverage_digest: u64,
    edges: usize,
    coverage: Vec<u8>,
}

impl From<RunResult> for PyRunResult {
    fn from(r: RunResult) -> Self {
        let kind = match r.exit {
            harness::ExitKind::Ok => "OK",
            harness::ExitKind::Crash(_) => "CRASH",
            harness::ExitKind::Timeout => "TIMEOUT",
            harness::ExitKind::InputExhausted => "INPUT_EXHAUSTED",
        };
        PyRunResult {
            kind: kind.into(),
            reason: r.exit.crash_reason().map(|c| c.to_string()),
            instructions: r.instructions,
            probe_reads: r.probe_reads,
            exec_us: r.exec_us,
            coverage_digest: r.coverage.classified().digest(),
            edges: r.coverage.count_nonzero(),
            coverage: r.coverage.as_bytes().to_vec(),
        }
    }
}

#[pymethods]
impl PyRunResult {
    fn __repr__(&self) -> String {
        match &self.reason {
            Some(r) => format!("RunResult(CRASH {r}, instructions={})", self.instructions),
            None => format!("RunResult({}, instructions={})", self.kind, self.instructions),
        }
    }
}

/// An embedded virtual prototype in persistent mode.
#[pyclass(name = "Vp", module = "pyvpfuzz", unsendable)]
struct PyVp {
    vp: harness::Vp,
}

#[pymethods]
impl PyVp {
    /// Boots a VP for a bundled guest.
    #[new]
    fn new(guest: &PyGuest) -> PyResult<Self> {
        let (vp, _) = harness::Vp::boot(&guest.inner.config, &guest.inner.binary).map_err(value_err)?;
        Ok(PyVp { vp })
    }

    /// Boots a VP from a configuration file on disk.
    #[staticmethod]
    fn from_config(path: PathBuf) -> PyResult<Self> {
        let cf = ConfigFile::load(&path).map_err(value_err)?;
        let image = cf.load_image().map_err(value_err)?;
        let (vp, _) = harness::Vp::boot(&cf.vp, &image).map_err(value_err)?;
        Ok(PyVp { vp })
    }

    fn run(&mut self, input: &[u8]) -> PyRunResult {
        self.vp.run(input).into()
    }

    /// Reads guest RAM.
    fn read_memory<'py>(&self, py: Python<'py>, addr: u32, len: usize) -> PyResult<Bound<'py, PyBytes>> {
        let b = self.vp.memory().read_bytes(addr, len).ok_or_else(|| value_err("range outside RAM"))?;
        Ok(PyBytes::new_bound(py, b))
    }
}

fn parse_mode(mode: &str) -> PyResult<ExecMode> {
    mode.parse().map_err(PyValueError::new_err)
}

/// Runs a campaign against a bundled guest in embedded deployment and
/// returns the report as a dict.
#[pyfunction]
#[pyo3(signature = (guest, *, seeds = Vec::new(), max_execs = None, max_time = None, rng_seed = 0,
                    mode = "persistent", out_dir = None, force = false, stop_on_crash = false))]
#[allow(clippy::too_many_arguments)]
fn fuzz<'py>(
    py: Python<'py>,
    guest: &PyGuest,
    seeds: Vec<Vec<u8>>,
    max_execs: Option<u64>,
    max_time: Option<f64>,
    rng_seed: u64,
    mode: &str,
    out_dir: Option<PathBuf>,
    force: bool,
    stop_on_crash: bool,
) -> PyResult<Bound<'py, PyDict>> {
    if max_execs.is_none() && max_time.is_none() && !stop_on_crash {
        return Err(value_err("campaign needs max_execs, max_time or stop_on_crash"));
    }
    let max_time = match max_time {
        Some(t) if !(t.is_finite() && t >= 0.0) => return Err(value_err(format!("bad max_time {t}"))),
        t => t.map(Duration::from_secs_f64),
    };
    let config: VpConfig = guest.inner.config.clone();
    let mut h = Harness::new(config, guest.inner.binary.clone(), Deployment::Embedded, parse_mode(mode)?).map_err(value_err)?;
    let opts = CampaignOptions {
        rng_seed,
        max_execs,
        max_time,
        out_dir,
        force,
        stop_on_crash,
        clock: ClockKind::Virtual,
        stop: None,
    };
    let report = fuzz_campaign(&mut h, &seeds, &opts).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;

    let d = PyDict::new_bound(py);
    let s = &report.stats;
    d.set_item("total_execs", s.total_execs)?;
    d.set_item("execs_per_sec", s.execs_per_sec)?;
    d.set_item("queue_len", s.queue_len)?;
    d.set_item("crashes_unique", s.crashes_unique)?;
    d.set_item("stop", report.stop.to_string())?;
    d.set_item("first_crash_exec", report.first_crash.map(|c| c.0))?;
    let crashes: Vec<(Bound<'py, PyBytes>, String)> =
        report.crashes.iter().map(|c| (PyBytes::new_bound(py, &c.input), c.reason.to_string())).collect();
    d.set_item("crashes", crashes)?;
    d.set_item("report", report.to_text())?;
    Ok(d)
}

#[pymodule]
fn pyvpfuzz(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(assemble, m)?)?;
    m.add_function(wrap_pyfunction!(disassemble, m)?)?;
    m.add_function(wrap_pyfunction!(caesar, m)?)?;
    m.add_function(wrap_pyfunction!(hash16, m)?)?;
    m.add_function(wrap_pyfunction!(classify, m)?)?;
    m.add_function(wrap_pyfunction!(bundle_names, m)?)?;
    m.add_function(wrap_pyfunction!(build_guest, m)?)?;
    m.add_function(wrap_pyfunction!(fuzz, m)?)?;
    m.add_class::<PyGuest>()?;
    m.add_class::<PyRunResult>()?;
    m.add_class::<PyVp>()?;
    Ok(())
}
