//! Python bindings: simulation, correlation, fits, spectral analysis,
//! classification and the quantum-efficiency ratio.

use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use centerprint::classify::{self as cls, CriterionThresholds};
use centerprint::correlator as corr;
use centerprint::fitkit;
use centerprint::io;
use centerprint::photonsim::{self as sim, EmitterKind, SimConfig};
use centerprint::pipeline::{self, AcquisitionPlan, AnalysisOptions};
use centerprint::spectral;
use centerprint::units::{self, DecayHistogram, PolarizationScan, SaturationSeries, SpectrumTrace, TimeTag};

create_exception!(centerprint, CenterprintError, PyValueError, "Raised for every toolkit error.");

fn err(e: centerprint::Error) -> PyErr {
    CenterprintError::new_err(format!("{e} (code {})", e.exit_code()))
}

trait OrPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> OrPy<T> for centerprint::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(err)
    }
}

fn parse_kind(kind: &str) -> PyResult<EmitterKind> {
    kind.parse::<EmitterKind>().py()
}

/// Ground-truth emitter parameters.
#[pyclass(name = "EmitterModel", from_py_object)]
#[derive(Clone)]
struct PyEmitterModel {
    inner: sim::EmitterModel,
}

#[pymethods]
impl PyEmitterModel {
    #[getter]
    fn lifetime_ns(&self) -> f64 {
        self.inner.lifetime_ns
    }

    #[setter]
    fn set_lifetime_ns(&mut self, v: f64) {
        self.inner.lifetime_ns = v;
    }

    #[getter]
    fn quantum_efficiency(&self) -> f64 {
        self.inner.quantum_efficiency
    }

    #[setter]
    fn set_quantum_efficiency(&mut self, v: f64) {
        self.inner.quantum_efficiency = v;
    }

    #[getter]
    fn sat_power_uw(&self) -> f64 {
        self.inner.sat_power_uw
    }

    #[setter]
    fn set_sat_power_uw(&mut self, v: f64) {
        self.inner.sat_power_uw = v;
    }

    #[getter]
    fn sat_intensity_kcps(&self) -> f64 {
        self.inner.sat_intensity_kcps
    }

    #[setter]
    fn set_sat_intensity_kcps(&mut self, v: f64) {
        self.inner.sat_intensity_kcps = v;
    }

    #[getter]
    fn polar_visibility(&self) -> f64 {
        self.inner.polar_visibility
    }

    #[setter]
    fn set_polar_visibility(&mut self, v: f64) {
        self.inner.polar_visibility = v;
    }

    #[getter]
    fn polar_axis_deg(&self) -> f64 {
        self.inner.polar_axis_deg
    }

    #[setter]
    fn set_polar_axis_deg(&mut self, v: f64) {
        self.inner.polar_axis_deg = v;
    }

    #[getter]
    fn zpl_wavelength_nm(&self) -> f64 {
        self.inner.zpl_wavelength_nm
    }

    #[setter]
    fn set_zpl_wavelength_nm(&mut self, v: f64) {
        self.inner.zpl_wavelength_nm = v;
    }

    #[getter]
    fn zpl_fwhm_nm(&self) -> f64 {
        self.inner.zpl_fwhm_nm
    }

    #[setter]
    fn set_zpl_fwhm_nm(&mut self, v: f64) {
        self.inner.zpl_fwhm_nm = v;
    }

    #[getter]
    fn eline_relative_intensity(&self) -> f64 {
        self.inner.eline_relative_intensity
    }

    #[setter]
    fn set_eline_relative_intensity(&mut self, v: f64) {
        self.inner.eline_relative_intensity = v;
    }

    #[getter]
    fn background_rate_cps(&self) -> f64 {
        self.inner.background_rate_cps
    }

    #[setter]
    fn set_background_rate_cps(&mut self, v: f64) {
        self.inner.background_rate_cps = v;
    }

    /// Preset for `kind` ("g", "gstar" or "custom").
    #[new]
    #[pyo3(signature = (kind = "g"))]
    fn new(kind: &str) -> PyResult<Self> {
        Ok(Self {
            inner: sim::EmitterModel::preset(parse_kind(kind)?),
        })
    }

    /// Draw one emitter from the family's population.
    #[staticmethod]
    fn sample(kind: &str, seed: u64) -> PyResult<Self> {
        use rand::SeedableRng;
        let pop = match parse_kind(kind)? {
            EmitterKind::G => sim::EmitterPopulation::G,
            EmitterKind::Gstar => sim::EmitterPopulation::Gstar,
            EmitterKind::Custom => return Err(PyValueError::new_err("no population for custom emitters")),
        };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Ok(Self { inner: pop.sample(&mut rng) })
    }

    #[getter]
    fn kind(&self) -> String {
        self.inner.kind.to_string()
    }

    fn detected_rate_cps(&self, power_uw: f64) -> f64 {
        self.inner.detected_rate_cps(power_uw)
    }

    fn validate(&self) -> PyResult<()> {
        self.inner.validate().py()
    }

    fn __repr__(&self) -> String {
        format!("{:?}", self.inner)
    }
}

/// Two-channel photon time tags.
#[pyclass(name = "TimeTagStream")]
struct PyStream {
    inner: units::TimeTagStream,
}

#[pymethods]
impl PyStream {
    #[new]
    #[pyo3(signature = (timestamps_ps, channels, duration_ps, channel_count = 2))]
    fn new(timestamps_ps: Vec<u64>, channels: Vec<u8>, duration_ps: u64, channel_count: u32) -> PyResult<Self> {
        if timestamps_ps.len() != channels.len() {
            return Err(PyValueError::new_err("timestamps and channels differ in length"));
        }
        let tags = timestamps_ps
            .into_iter()
            .zip(channels)
            .map(|(timestamp_ps, channel)| TimeTag { timestamp_ps, channel })
            .collect();
        Ok(Self {
            inner: units::TimeTagStream::new(tags, duration_ps, channel_count).py()?,
        })
    }

    /// Read a TTG1 file; the duration defaults to the last timestamp.
    #[staticmethod]
    #[pyo3(signature = (path, duration_ps = None))]
    fn read(path: PathBuf, duration_ps: Option<u64>) -> PyResult<Self> {
        Ok(Self {
            inner: io::read_time_tags_with_duration(&path, duration_ps).py()?,
        })
    }

    fn write(&self, path: PathBuf) -> PyResult<()> {
        io::write_time_tags(&path, &self.inner).py()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn duration_s(&self) -> f64 {
        self.inner.duration_s()
    }

    #[getter]
    fn duration_ps(&self) -> u64 {
        self.inner.duration_ps()
    }

    fn timestamps_ps(&self) -> Vec<u64> {
        self.inner.tags().iter().map(|t| t.timestamp_ps).collect()
    }

    fn channels(&self) -> Vec<u8> {
        self.inner.tags().iter().map(|t| t.channel).collect()
    }
}

/// Normalized coincidence histogram.
#[pyclass(name = "CorrelationHistogram")]
struct PyHistogram {
    inner: corr::CorrelationHistogram,
}

#[pymethods]
impl PyHistogram {
    #[getter]
    fn bin_centers_ns(&self) -> Vec<f64> {
        self.inner.bin_centers_ns()
    }

    #[getter]
    fn coincidences(&self) -> Vec<u64> {
        self.inner.coincidences().to_vec()
    }

    #[getter]
    fn g2(&self) -> Vec<f64> {
        self.inner.normalized_g2().to_vec()
    }

    /// `(value, sigma)` of g2(0) averaged over `averaging_bins` central bins.
    #[pyo3(signature = (averaging_bins = 3))]
    fn g2_at_zero(&self, averaging_bins: usize) -> PyResult<(f64, f64)> {
        let m = corr::g2_at_zero(&self.inner, averaging_bins).py()?;
        Ok((m.value, m.sigma))
    }
}

/// Fitted parameters with uncertainties.
#[pyclass(name = "FitResult")]
struct PyFit {
    inner: fitkit::FitResult,
}

#[pymethods]
impl PyFit {
    #[getter]
    fn values(&self) -> BTreeMap<String, f64> {
        self.inner.parameters.iter().map(|p| (p.name.clone(), p.value)).collect()
    }

    #[getter]
    fn sigmas(&self) -> BTreeMap<String, f64> {
        self.inner.parameters.iter().map(|p| (p.name.clone(), p.sigma)).collect()
    }

    #[getter]
    fn converged(&self) -> bool {
        self.inner.converged
    }

    #[getter]
    fn reduced_chi_square(&self) -> f64 {
        self.inner.reduced_chi_square
    }

    #[getter]
    fn warnings(&self) -> Vec<String> {
        self.inner.warnings.iter().map(|w| format!("{w:?}")).collect()
    }

    fn __getitem__(&self, name: &str) -> PyResult<f64> {
        self.inner
            .param(name)
            .map(|p| p.value)
            .ok_or_else(|| PyValueError::new_err(format!("no parameter {name}")))
    }

    fn __repr__(&self) -> String {
        let parts: Vec<String> = self
            .inner
            .parameters
            .iter()
            .map(|p| format!("{}={:.6}+/-{:.2e}", p.name, p.value, p.sigma))
            .collect();
        format!("FitResult({})", parts.join(", "))
    }
}

/// Label, votes and per-criterion verdicts for one emitter.
#[pyclass(name = "ClassificationReport", get_all)]
struct PyReport {
    label: String,
    votes_g: usize,
    votes_gstar: usize,
    antibunched: bool,
    verdicts: BTreeMap<String, String>,
    derived_qe: Option<f64>,
    rationale: String,
    features: BTreeMap<String, Option<f64>>,
}

#[pymethods]
impl PyReport {
    fn __repr__(&self) -> String {
        format!("ClassificationReport(label={:?}, votes=({}, {}))", self.label, self.votes_g, self.votes_gstar)
    }
}

fn config(seed: u64, power_uw: f64) -> SimConfig {
    SimConfig {
        seed,
        excitation_power_uw: power_uw,
        ..SimConfig::default()
    }
}

/// CW photon stream split over two detectors.
#[pyfunction]
#[pyo3(signature = (model, duration_s, power_uw = None, seed = 0))]
fn simulate_cw_stream(model: &PyEmitterModel, duration_s: f64, power_uw: Option<f64>, seed: u64) -> PyResult<PyStream> {
    let c = SimConfig {
        duration_s,
        ..config(seed, power_uw.unwrap_or(model.inner.sat_power_uw))
    };
    Ok(PyStream {
        inner: sim::simulate_cw_stream(&model.inner, &c).py()?,
    })
}

/// Pulsed-excitation decay histogram as `(bin_edges_ns, counts, period_ns)`.
#[pyfunction]
#[pyo3(signature = (model, pulse_count = 10_000_000, pulse_period_ns = 200.0, seed = 0))]
fn simulate_pulsed_decay(
    model: &PyEmitterModel,
    pulse_count: u64,
    pulse_period_ns: f64,
    seed: u64,
) -> PyResult<(Vec<f64>, Vec<u64>, f64)> {
    let c = SimConfig {
        pulse_count,
        pulse_period_ns,
        ..SimConfig::default().with_seed(seed)
    };
    let h = sim::simulate_pulsed_decay(&model.inner, &c).py()?;
    Ok((h.bin_edges_ns().to_vec(), h.counts().to_vec(), h.pulse_period_ns()))
}

/// Spectrum as `(wavelengths_nm, counts)`.
#[pyfunction]
#[pyo3(signature = (model, range_nm = (1200.0, 1450.0), resolution_nm = 0.1, seed = 0, noiseless = false))]
fn simulate_spectrum(
    model: &PyEmitterModel,
    range_nm: (f64, f64),
    resolution_nm: f64,
    seed: u64,
    noiseless: bool,
) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let c = SimConfig {
        noiseless,
        ..SimConfig::default().with_seed(seed)
    };
    let s = sim::simulate_spectrum(&model.inner, range_nm, resolution_nm, &c).py()?;
    Ok(s.samples().iter().map(|p| (p.wavelength_nm, p.intensity)).unzip())
}

#[pyfunction]
#[pyo3(signature = (stream, window_ns = 100.0, bin_width_ns = 1.0, threads = 1))]
fn correlate(stream: &PyStream, window_ns: f64, bin_width_ns: f64, threads: usize) -> PyResult<PyHistogram> {
    Ok(PyHistogram {
        inner: corr::correlate_threaded(&stream.inner, window_ns, bin_width_ns, threads.max(1)).py()?,
    })
}

#[pyfunction]
#[pyo3(signature = (bin_width_ns, counts, pulse_period_ns))]
fn fit_lifetime(bin_width_ns: f64, counts: Vec<u64>, pulse_period_ns: f64) -> PyResult<PyFit> {
    let h = DecayHistogram::uniform(bin_width_ns, counts, pulse_period_ns).py()?;
    Ok(PyFit {
        inner: fitkit::fit_exponential_decay(&h).py()?,
    })
}

#[pyfunction]
#[pyo3(signature = (powers_uw, intensities_kcps, with_background = false))]
fn fit_saturation(powers_uw: Vec<f64>, intensities_kcps: Vec<f64>, with_background: bool) -> PyResult<PyFit> {
    let s = SaturationSeries::from_pairs(powers_uw.into_iter().zip(intensities_kcps)).py()?;
    Ok(PyFit {
        inner: fitkit::fit_saturation(&s, with_background).py()?,
    })
}

#[pyfunction]
fn fit_polarization(angles_deg: Vec<f64>, intensities: Vec<f64>) -> PyResult<PyFit> {
    let s = PolarizationScan::from_pairs(angles_deg.into_iter().zip(intensities)).py()?;
    Ok(PyFit {
        inner: fitkit::fit_polarization(&s).py()?,
    })
}

/// ZPL, E-line and sideband features of a spectrum as a dict.
#[pyfunction]
#[pyo3(signature = (wavelengths_nm, intensities, zpl_search_nm = (1240.0, 1320.0)))]
fn analyze_spectrum(
    wavelengths_nm: Vec<f64>,
    intensities: Vec<f64>,
    zpl_search_nm: (f64, f64),
) -> PyResult<BTreeMap<String, Option<f64>>> {
    let t = SpectrumTrace::from_pairs(wavelengths_nm.into_iter().zip(intensities)).py()?;
    let f = spectral::analyze_spectrum(&t, zpl_search_nm).py()?;
    let flag = |b: bool| Some(if b { 1.0 } else { 0.0 });
    Ok(BTreeMap::from([
        ("zpl_wavelength_nm".to_string(), Some(f.zpl_wavelength_nm)),
        ("zpl_energy_mev".to_string(), Some(f.zpl_energy_mev)),
        ("zpl_fwhm_nm".to_string(), Some(f.zpl_fwhm_nm)),
        ("eline_measured".to_string(), flag(f.eline_measured)),
        ("eline_present".to_string(), flag(f.eline_present)),
        ("eline_wavelength_nm".to_string(), f.eline_wavelength_nm),
        ("eline_snr".to_string(), Some(f.eline_snr)),
        ("sideband_energy_mev".to_string(), f.sideband_energy_mev),
    ]))
}

/// `eta_G` from saturation intensities, lifetimes and collection efficiencies.
#[pyfunction]
#[pyo3(signature = (isat_g_kcps = 7.9, isat_gstar_kcps = 68.0, tau_g_ns = 4.9, tau_gstar_ns = 33.4,
                    coll_g = 0.04, coll_gstar = 0.02, eta_gstar = 1.0))]
fn qe_ratio(
    isat_g_kcps: f64,
    isat_gstar_kcps: f64,
    tau_g_ns: f64,
    tau_gstar_ns: f64,
    coll_g: f64,
    coll_gstar: f64,
    eta_gstar: f64,
) -> PyResult<f64> {
    let r = cls::qe_ratio(&cls::QeInputs {
        eta_gstar,
        isat_g_kcps,
        isat_gstar_kcps,
        tau_g_ns,
        tau_gstar_ns,
        coll_g,
        coll_gstar,
    })
    .py()?;
    Ok(r.value)
}

/// Simulate a full bundle and write it to `path`.
#[pyfunction]
#[pyo3(signature = (model, path, seed = 0, emitter_id = None, stream_duration_s = None))]
fn simulate_bundle(
    model: &PyEmitterModel,
    path: PathBuf,
    seed: u64,
    emitter_id: Option<String>,
    stream_duration_s: Option<f64>,
) -> PyResult<()> {
    let plan = AcquisitionPlan {
        stream_duration_s,
        ..AcquisitionPlan::default()
    };
    let id = emitter_id.unwrap_or_else(|| format!("{}-{seed}", model.inner.kind));
    let b = pipeline::simulate_bundle(&id, &model.inner, &plan, seed).py()?;
    io::write_bundle(&path, &b).py()
}

/// Classify the bundle stored at `path`.
#[pyfunction]
#[pyo3(signature = (path, averaging_bins = 1, threads = 1))]
fn classify_bundle(path: PathBuf, averaging_bins: usize, threads: usize) -> PyResult<PyReport> {
    let b = io::read_bundle(&path).py()?;
    let o = AnalysisOptions {
        averaging_bins,
        threads: threads.max(1),
        ..AnalysisOptions::default()
    };
    let (x, r) = pipeline::classify_bundle(&b, &o, &CriterionThresholds::default()).py()?;
    let f = &x.features;
    let finite = |v: f64| v.is_finite().then_some(v);
    Ok(PyReport {
        label: r.label.to_string(),
        votes_g: r.votes.0,
        votes_gstar: r.votes.1,
        antibunched: r.antibunched,
        verdicts: r
            .criterion_verdicts
            .iter()
            .map(|(c, v)| (c.to_string(), v.to_string()))
            .collect(),
        derived_qe: r.derived_qe.map(|q| q.value),
        rationale: r.rationale,
        features: BTreeMap::from([
            ("g2_zero".to_string(), finite(f.g2_zero.value)),
            ("lifetime_ns".to_string(), finite(f.lifetime_ns.value)),
            ("polar_visibility".to_string(), finite(f.polar_visibility.value)),
            ("polar_axis_deg".to_string(), f.polar_axis_deg),
            ("sat_intensity_kcps".to_string(), f.sat_intensity_kcps),
            ("sat_power_uw".to_string(), f.sat_power_uw),
        ]),
    })
}

#[pyfunction]
fn nm_to_mev(nm: f64) -> PyResult<f64> {
    units::nm_to_mev(nm).py()
}

#[pyfunction]
fn mev_to_nm(mev: f64) -> PyResult<f64> {
    units::mev_to_nm(mev).py()
}

#[pymodule]
#[pyo3(name = "centerprint")]
fn centerprint_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("CenterprintError", m.py().get_type::<CenterprintError>())?;
    m.add_class::<PyEmitterModel>()?;
    m.add_class::<PyStream>()?;
    m.add_class::<PyHistogram>()?;
    m.add_class::<PyFit>()?;
    m.add_class::<PyReport>()?;
    m.add_function(wrap_pyfunction!(simulate_cw_stream, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_pulsed_decay, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_spectrum, m)?)?;
    m.add_function(wrap_pyfunction!(correlate, m)?)?;
    m.add_function(wrap_pyfunction!(fit_lifetime, m)?)?;
    m.add_function(wrap_pyfunction!(fit_saturation, m)?)?;
    m.add_function(wrap_pyfunction!(fit_polarization, m)?)?;
    m.add_function(wrap_pyfunction!(analyze_spectrum, m)?)?;
    m.add_function(wrap_pyfunction!(qe_ratio, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_bundle, m)?)?;
    m.add_function(wrap_pyfunction!(classify_bundle, m)?)?;
    m.add_function(wrap_pyfunction!(nm_to_mev, m)?)?;
    m.add_function(wrap_pyfunction!(mev_to_nm, m)?)?;
    m.add("HC_MEV_NM", units::HC_MEV_NM)?;
    Ok(())
}
