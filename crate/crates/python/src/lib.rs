//! Python bindings: `Config`, `Histogram` and module-level functions over the
//! waveform, averaging, analysis, acquisition and fitting layers.

use pyo3::create_exception;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use photon_comb::acquisition::{histogram, sample_events, AcquisitionConfig, AcquisitionMode, EventHistogram};
use photon_comb::analysis::{bin_layout, bin_populations, dark_window_times, phase_difference, pulse_times};
use photon_comb::averaging::{averaged_exact, averaged_extrema, averaged_trace, ModelTag};
use photon_comb::fitting::{fit as run_fit, scan_optimal_p, FitData, FitParams, FreeMask, PARAM_NAMES};
use photon_comb::model::{default_config, parse_config, serialize_config, PhysicsConfig, Preset};
use photon_comb::numerics::QuadratureSpec;
use photon_comb::transmission::{exact_amplitude, improved_amplitude, probability_approx};

create_exception!(photon_comb, FitError, PyRuntimeError);

fn py_err(e: photon_comb::Error) -> PyErr {
    use photon_comb::Error as E;
    match e {
        E::Config(_) | E::Invalid(_) => PyValueError::new_err(e.to_string()),
        E::FitNonConvergence { .. } => FitError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn parse_mode(mode: &str) -> PyResult<AcquisitionMode> {
    mode.parse().map_err(py_err)
}

fn parse_model(model: &str) -> PyResult<ModelTag> {
    match model {
        "exact" => Ok(ModelTag::Exact),
        "approx" => Ok(ModelTag::Approx),
        "improved" => Ok(ModelTag::Improved),
        other => Err(PyValueError::new_err(format!("unknown model `{other}`"))),
    }
}

/// Physical parameters and the evaluation grid.
#[pyclass(name = "Config", module = "photon_comb", skip_from_py_object)]
#[derive(Clone)]
pub struct Config {
    inner: PhysicsConfig,
}

#[pymethods]
impl Config {
    /// Built-in parameter set by name (`fig1a` ... `fig8`).
    #[staticmethod]
    fn preset(name: &str) -> PyResult<Self> {
        let p: Preset = name.parse().map_err(|e: photon_comb::model::ConfigError| PyValueError::new_err(e.to_string()))?;
        Ok(Self { inner: default_config(p) })
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        let inner = parse_config(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok(Self { inner })
    }

    fn to_toml(&self) -> String {
        serialize_config(&self.inner)
    }

    /// Copy with one key overridden, e.g. `cfg.set("p", 2.5)`.
    fn set(&self, key: &str, value: f64) -> PyResult<Self> {
        let mut inner = self.inner;
        inner.apply(key, value).map_err(|e| PyValueError::new_err(e.to_string()))?;
        inner.validate().map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok(Self { inner })
    }

    #[getter]
    fn p(&self) -> f64 {
        self.inner.vibration.p
    }

    #[getter]
    fn phi(&self) -> f64 {
        self.inner.vibration.phi
    }

    #[getter]
    fn m(&self) -> i32 {
        self.inner.vibration.m
    }

    #[getter]
    fn omega_mhz(&self) -> f64 {
        self.inner.vibration.omega_mhz
    }

    #[getter]
    fn thickness(&self) -> f64 {
        self.inner.absorber.thickness
    }

    #[getter]
    fn dphi(&self) -> f64 {
        self.inner.phase_jitter
    }

    #[getter]
    fn period_ns(&self) -> f64 {
        self.inner.period_ns()
    }

    fn times(&self) -> Vec<f64> {
        self.inner.grid.times()
    }

    fn __repr__(&self) -> String {
        let v = &self.inner.vibration;
        format!(
            "Config(T_a={}, omega_mhz={}, m={}, p={}, phi={})",
            self.inner.absorber.thickness, v.omega_mhz, v.m, v.p, v.phi
        )
    }

    fn __eq__(&self, other: PyRef<'_, Config>) -> bool {
        self.inner == other.inner
    }
}

/// Channelled event counts.
#[pyclass(name = "Histogram", module = "photon_comb", skip_from_py_object)]
#[derive(Clone)]
pub struct Histogram {
    inner: EventHistogram,
}

#[pymethods]
impl Histogram {
    #[staticmethod]
    #[pyo3(signature = (text, mode = "coincidence", start_ns = 0.0, stop_ns = 600.0))]
    fn from_csv(text: &str, mode: &str, start_ns: f64, stop_ns: f64) -> PyResult<Self> {
        let template = AcquisitionConfig::new(parse_mode(mode)?, start_ns, stop_ns, 0, 0);
        let inner = EventHistogram::from_csv(text, &template).map_err(py_err)?;
        Ok(Self { inner })
    }

    fn to_csv(&self) -> String {
        self.inner.to_csv()
    }

    #[getter]
    fn edges(&self) -> Vec<f64> {
        self.inner.edges.clone()
    }

    #[getter]
    fn counts(&self) -> Vec<u64> {
        self.inner.counts.clone()
    }

    #[getter]
    fn total(&self) -> u64 {
        self.inner.total
    }

    #[getter]
    fn mode(&self) -> &'static str {
        self.inner.mode.name()
    }

    fn centers(&self) -> Vec<f64> {
        self.inner.centers()
    }

    fn __len__(&self) -> usize {
        self.inner.counts.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "Histogram(mode={}, channels={}, total={})",
            self.inner.mode.name(),
            self.inner.counts.len(),
            self.inner.total
        )
    }
}

/// Exact, approximate and improved detection probability on the config grid.
#[pyfunction]
fn waveform<'py>(py: Python<'py>, cfg: PyRef<'_, Config>) -> PyResult<Bound<'py, PyDict>> {
    let c = cfg.inner;
    let quad = QuadratureSpec::default();
    let (exact, improved, approx) = py
        .detach(|| -> photon_comb::Result<_> {
            let exact = exact_amplitude(&c.grid, &c, &quad)?.probability();
            let improved = improved_amplitude(&c.grid, &c, &quad)?.probability();
            let approx = c
                .grid
                .times()
                .iter()
                .map(|&t| probability_approx(t, &c))
                .collect::<photon_comb::Result<Vec<f64>>>()?;
            Ok((exact, improved, approx))
        })
        .map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("t_ns", c.grid.times())?;
    d.set_item("exact", exact)?;
    d.set_item("approx", approx)?;
    d.set_item("improved", improved)?;
    Ok(d)
}

/// Count rate averaged over the formation time for one model.
#[pyfunction]
#[pyo3(signature = (cfg, model = "exact"))]
fn averaged(py: Python<'_>, cfg: PyRef<'_, Config>, model: &str) -> PyResult<Vec<f64>> {
    let c = cfg.inner;
    let tag = parse_model(model)?;
    let quad = QuadratureSpec::default();
    py.detach(|| match tag {
        ModelTag::Exact => averaged_exact(&c.grid, &c, &quad),
        _ => averaged_trace(&c.grid, &c, tag, &quad),
    })
    .map(|t| t.values)
    .map_err(py_err)
}

/// Maximum, minimum and resonant baseline of the averaged rate.
#[pyfunction]
fn extrema<'py>(py: Python<'py>, m: i32, p: f64, thickness: f64) -> PyResult<Bound<'py, PyDict>> {
    let e = averaged_extrema(m, p, thickness);
    let d = PyDict::new(py);
    d.set_item("max", e.max)?;
    d.set_item("min", e.min)?;
    d.set_item("res", e.res)?;
    Ok(d)
}

/// Modulation index maximizing the `m`-th comb component.
#[pyfunction]
#[pyo3(signature = (m, p_min = 0.0, p_max = 8.0, step = 0.05))]
fn optimal_p(m: i32, p_min: f64, p_max: f64, step: f64) -> PyResult<f64> {
    scan_optimal_p(m, (p_min, p_max), step).map_err(py_err)
}

#[pyfunction]
fn phase(cfg: PyRef<'_, Config>, t_ns: Vec<f64>) -> Vec<f64> {
    t_ns.iter().map(|&t| phase_difference(t, &cfg.inner)).collect()
}

#[pyfunction]
#[pyo3(name = "pulse_times")]
fn py_pulse_times(cfg: PyRef<'_, Config>, periods: usize) -> PyResult<Vec<f64>> {
    pulse_times(&cfg.inner, periods).map_err(py_err)
}

#[pyfunction]
#[pyo3(name = "dark_window_times")]
fn py_dark_window_times(cfg: PyRef<'_, Config>, periods: usize) -> PyResult<Vec<f64>> {
    dark_window_times(&cfg.inner, periods).map_err(py_err)
}

/// Time-bin populations keyed by label.
#[pyfunction]
#[pyo3(signature = (cfg, dimension = 2, phi_lo = 0.0, model = "approx"))]
fn bins<'py>(py: Python<'py>, cfg: PyRef<'_, Config>, dimension: usize, phi_lo: f64, model: &str) -> PyResult<Bound<'py, PyDict>> {
    let c = cfg.inner;
    let tag = parse_model(model)?;
    let layout = bin_layout(dimension, c.vibration.omega_mhz, phi_lo).map_err(py_err)?;
    let pops = py
        .detach(|| {
            let trace = averaged_trace(&c.grid, &c, tag, &QuadratureSpec::default())?;
            bin_populations(&trace, &layout)
        })
        .map_err(py_err)?;
    let d = PyDict::new(py);
    for (l, v) in pops.labels.iter().zip(&pops.values) {
        d.set_item(l.to_string(), v)?;
    }
    Ok(d)
}

/// Monte Carlo event histogram over the config grid span.
#[pyfunction]
#[pyo3(signature = (cfg, events, seed = 0, mode = "coincidence", channel_ns = 8.0, window_ns = 0.0, dphi = None))]
#[allow(clippy::too_many_arguments)]
fn acquire(
    py: Python<'_>,
    cfg: PyRef<'_, Config>,
    events: u64,
    seed: u64,
    mode: &str,
    channel_ns: f64,
    window_ns: f64,
    dphi: Option<f64>,
) -> PyResult<Histogram> {
    let c = cfg.inner;
    let mut acq = AcquisitionConfig::new(parse_mode(mode)?, c.grid.start_ns, c.grid.stop_ns, events, seed);
    acq.channel_ns = channel_ns;
    acq.window_ns = window_ns;
    acq.dphi = dphi.unwrap_or(c.phase_jitter);
    let inner = py
        .detach(|| sample_events(&c, &acq).map(|ev| histogram(&ev, &acq)))
        .map_err(py_err)?;
    Ok(Histogram { inner })
}

/// Least-squares fit of a histogram; starting values come from `cfg`.
#[pyfunction]
#[pyo3(signature = (hist, cfg, free = vec!["p".to_string(), "phi".to_string(), "scale".to_string()]))]
fn fit<'py>(py: Python<'py>, hist: PyRef<'_, Histogram>, cfg: PyRef<'_, Config>, free: Vec<String>) -> PyResult<Bound<'py, PyDict>> {
    let c = cfg.inner;
    let mut mask = FreeMask::none();
    for name in &free {
        match name.as_str() {
            "p" => mask.p = true,
            "phi" => mask.phi = true,
            "dphi" => mask.dphi = true,
            "f_s" => mask.f_s = true,
            "T_a" | "t_a" => mask.t_a = true,
            "scale" => mask.scale = true,
            other => return Err(PyValueError::new_err(format!("unknown fit parameter `{other}`"))),
        }
    }
    let h = hist.inner.clone();
    let result = py
        .detach(|| {
            let data = FitData::from_histogram(&h, &c)?;
            run_fit(&data, &FitParams::from_config(&c), &mask, &c, h.mode)
        })
        .map_err(py_err)?;
    let values = [
        result.params.p,
        result.params.phi,
        result.params.dphi,
        result.params.f_s,
        result.params.t_a.unwrap_or(c.absorber.thickness),
        result.params.scale,
    ];
    let params = PyDict::new(py);
    let errors = PyDict::new(py);
    for (i, name) in PARAM_NAMES.iter().enumerate() {
        params.set_item(*name, values[i])?;
        errors.set_item(*name, result.errors[i])?;
    }
    let d = PyDict::new(py);
    d.set_item("params", params)?;
    d.set_item("errors", errors)?;
    d.set_item("chi2", result.chi2)?;
    d.set_item("dof", result.dof)?;
    d.set_item("iterations", result.iterations)?;
    Ok(d)
}

#[pymodule]
#[pyo3(name = "photon_comb")]
fn py_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add("FitError", m.py().get_type::<FitError>())?;
    m.add_class::<Config>()?;
    m.add_class::<Histogram>()?;
    m.add_function(wrap_pyfunction!(waveform, m)?)?;
    m.add_function(wrap_pyfunction!(averaged, m)?)?;
    m.add_function(wrap_pyfunction!(extrema, m)?)?;
    m.add_function(wrap_pyfunction!(optimal_p, m)?)?;
    m.add_function(wrap_pyfunction!(phase, m)?)?;
    m.add_function(wrap_pyfunction!(py_pulse_times, m)?)?;
    m.add_function(wrap_pyfunction!(py_dark_window_times, m)?)?;
    m.add_function(wrap_pyfunction!(bins, m)?)?;
    m.add_function(wrap_pyfunction!(acquire, m)?)?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    Ok(())
}
