//! Monte Carlo generation of synthetic measurements from a parameterized emitter.
//!
//! Every function is a pure function of `(EmitterModel, SimConfig)`: the
//! random generator is seeded from `SimConfig::seed` inside each call, salted
//! per measurement type so that one seed yields independent noise across the
//! measurements of a bundle.

use crate::error::{Error, Result};
use crate::units::{
    mev_to_nm, nm_to_mev, DecayHistogram, PolarizationScan, SaturationSeries, SpectrumTrace,
    TimeTag, TimeTagStream, HC_MEV_NM, LVM_ENERGY_MEV, PHONON_REPLICA_ENERGY_MEV,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Exp, Gamma, Normal, Open01, Poisson};
use serde::{Deserialize, Serialize};

/// FWHM of the Gaussian phonon sideband, meV.
pub const SIDEBAND_FWHM_MEV: f64 = 10.0;

/// Default E-line amplitude relative to the zero-phonon line.
pub const DEFAULT_ELINE_RELATIVE_INTENSITY: f64 = 0.1;

const SALT_CW: u64 = 0x9e37_79b9_7f4a_7c15;
const SALT_PULSED: u64 = 0xbf58_476d_1ce4_e5b9;
const SALT_POLAR: u64 = 0x94d0_49bb_1331_11eb;
const SALT_SATURATION: u64 = 0xd6e8_feb8_6659_fd93;
const SALT_SPECTRUM: u64 = 0xa076_1d64_78bd_642f;

fn rng_for(seed: u64, salt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ salt)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmitterKind {
    G,
    Gstar,
    Custom,
}

impl std::fmt::Display for EmitterKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EmitterKind::G => "G",
            EmitterKind::Gstar => "Gstar",
            EmitterKind::Custom => "custom",
        })
    }
}

impl std::str::FromStr for EmitterKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "g" => Ok(EmitterKind::G),
            "gstar" | "g*" | "g-star" | "g★" => Ok(EmitterKind::Gstar),
            "custom" => Ok(EmitterKind::Custom),
            other => Err(Error::Domain(format!("unknown emitter kind {other:?}"))),
        }
    }
}

/// Ground-truth parameters of a simulated color center.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmitterModel {
    pub kind: EmitterKind,
    pub lifetime_ns: f64,
    pub quantum_efficiency: f64,
    pub sat_power_uw: f64,
    pub sat_intensity_kcps: f64,
    pub polar_visibility: f64,
    pub polar_axis_deg: f64,
    pub zpl_wavelength_nm: f64,
    pub zpl_fwhm_nm: f64,
    pub eline_relative_intensity: f64,
    pub sideband_energy_mev: f64,
    pub sideband_relative_intensity: f64,
    pub background_rate_cps: f64,
}

impl EmitterModel {
    /// Typical genuine single G center.
    pub fn g_center() -> Self {
        Self {
            kind: EmitterKind::G,
            lifetime_ns: 4.9,
            quantum_efficiency: 0.0085,
            sat_power_uw: 1.1,
            sat_intensity_kcps: 7.9,
            polar_visibility: 0.62,
            polar_axis_deg: 0.0,
            zpl_wavelength_nm: 1279.0,
            zpl_fwhm_nm: 0.5,
            eline_relative_intensity: DEFAULT_ELINE_RELATIVE_INTENSITY,
            sideband_energy_mev: PHONON_REPLICA_ENERGY_MEV,
            sideband_relative_intensity: 0.0,
            background_rate_cps: 0.0,
        }
    }

    /// Typical single G* center.
    pub fn gstar_center() -> Self {
        Self {
            kind: EmitterKind::Gstar,
            lifetime_ns: 33.4,
            quantum_efficiency: 0.5,
            sat_power_uw: 12.0,
            sat_intensity_kcps: 68.0,
            polar_visibility: 0.90,
            polar_axis_deg: 37.0,
            zpl_wavelength_nm: 1273.0,
            zpl_fwhm_nm: 1.0,
            eline_relative_intensity: 0.0,
            sideband_energy_mev: PHONON_REPLICA_ENERGY_MEV,
            sideband_relative_intensity: 0.15,
            background_rate_cps: 0.0,
        }
    }

    pub fn preset(kind: EmitterKind) -> Self {
        match kind {
            EmitterKind::G => Self::g_center(),
            EmitterKind::Gstar => Self::gstar_center(),
            EmitterKind::Custom => Self {
                kind: EmitterKind::Custom,
                ..Self::g_center()
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::Domain(format!("{name} must be positive, got {v}")))
            }
        };
        let non_negative = |name: &str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(Error::Domain(format!("{name} must be non-negative, got {v}")))
            }
        };
        positive("lifetime", self.lifetime_ns)?;
        positive("saturation power", self.sat_power_uw)?;
        positive("ZPL wavelength", self.zpl_wavelength_nm)?;
        positive("ZPL FWHM", self.zpl_fwhm_nm)?;
        non_negative("saturation intensity", self.sat_intensity_kcps)?;
        non_negative("E-line intensity", self.eline_relative_intensity)?;
        non_negative("sideband energy", self.sideband_energy_mev)?;
        non_negative("sideband intensity", self.sideband_relative_intensity)?;
        non_negative("background rate", self.background_rate_cps)?;
        if !(self.quantum_efficiency > 0.0 && self.quantum_efficiency <= 1.0) {
            return Err(Error::Domain(format!(
                "quantum efficiency must lie in (0, 1], got {}",
                self.quantum_efficiency
            )));
        }
        if !(0.0..=1.0).contains(&self.polar_visibility) {
            return Err(Error::Domain(format!(
                "visibility must lie in [0, 1], got {}",
                self.polar_visibility
            )));
        }
        if !self.polar_axis_deg.is_finite() {
            return Err(Error::Domain("polarization axis is not finite".into()));
        }
        match self.kind {
            EmitterKind::G if self.eline_relative_intensity <= 0.0 => Err(Error::Domain(
                "a G center must have a positive E-line intensity".into(),
            )),
            EmitterKind::Gstar if self.eline_relative_intensity != 0.0 => Err(Error::Domain(
                "a G* center has no E-line".into(),
            )),
            _ => Ok(()),
        }
    }

    /// Detected CW count rate `Isat P / (P + Psat)` plus background, counts/s.
    pub fn detected_rate_cps(&self, power_uw: f64) -> f64 {
        self.sat_intensity_kcps * 1e3 * power_uw / (power_uw + self.sat_power_uw) + self.background_rate_cps
    }

    /// Pump rate `P / (Psat tau)`, per ns.
    pub fn pump_rate_per_ns(&self, power_uw: f64) -> f64 {
        power_uw / (self.sat_power_uw * self.lifetime_ns)
    }

    /// Probability that a radiative cycle ends in a detection.
    pub fn detection_efficiency(&self) -> f64 {
        self.sat_intensity_kcps * 1e3 * self.lifetime_ns * 1e-9
    }
}

/// Acquisition settings shared by every simulated measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub seed: u64,
    /// CW acquisition time, s.
    pub duration_s: f64,
    pub pulse_count: u64,
    pub excitation_power_uw: f64,
    pub detector_jitter_sigma_ps: f64,
    /// Timestamp quantum and decay-histogram bin width, ps.
    pub timing_resolution_ps: u64,
    pub pulse_period_ns: f64,
    /// Probability that a laser pulse yields a detected photon.
    pub detection_probability: f64,
    /// Integration time per scan point, s.
    pub dwell_s: f64,
    /// ZPL peak height above the baseline in spectra, counts.
    pub spectrum_peak_counts: f64,
    pub spectrum_baseline_counts: f64,
    /// Disable shot noise on scans and spectra.
    pub noiseless: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            duration_s: 10.0,
            pulse_count: 10_000_000,
            excitation_power_uw: 1.0,
            detector_jitter_sigma_ps: 0.0,
            timing_resolution_ps: 100,
            pulse_period_ns: 200.0,
            detection_probability: 0.01,
            dwell_s: 1.0,
            spectrum_peak_counts: 1000.0,
            spectrum_baseline_counts: 20.0,
            noiseless: false,
        }
    }
}

impl SimConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

fn poisson_sample(rng: &mut impl Rng, mean: f64) -> f64 {
    if mean <= 0.0 {
        0.0
    } else {
        Poisson::new(mean).map(|d| d.sample(rng)).unwrap_or(mean)
    }
}

/// Two-detector HBT stream from a CW-pumped two-level emitter.
///
/// Excitation and relaxation times are exponential with rates `k(P)` and
/// `1/tau`. Each cycle is detected with the probability that makes the
/// asymptotic detected rate equal `Isat`; detected photons go to channel 0 or
/// 1 with equal probability. Background is Poisson, split likewise.
pub fn simulate_cw_stream(m: &EmitterModel, c: &SimConfig) -> Result<TimeTagStream> {
    m.validate()?;
    if !(c.excitation_power_uw.is_finite() && c.excitation_power_uw > 0.0) {
        return Err(Error::Domain(format!(
            "excitation power must be positive, got {}",
            c.excitation_power_uw
        )));
    }
    if !(c.duration_s.is_finite() && c.duration_s > 0.0) {
        return Err(Error::EmptyStream(format!(
            "acquisition duration must be positive, got {} s",
            c.duration_s
        )));
    }
    if !(c.detector_jitter_sigma_ps >= 0.0) {
        return Err(Error::Config("detector jitter must be non-negative".into()));
    }
    let p_det = m.detection_efficiency();
    if p_det > 1.0 {
        return Err(Error::Config(format!(
            "Isat * tau = {p_det:.3} detected photons per cycle exceeds one"
        )));
    }

    let duration_ps = (c.duration_s * 1e12).round() as u64;
    let horizon = duration_ps as f64;
    let mut rng = rng_for(c.seed, SALT_CW);
    let jitter = if c.detector_jitter_sigma_ps > 0.0 {
        Some(Normal::new(0.0, c.detector_jitter_sigma_ps).map_err(|e| Error::Config(e.to_string()))?)
    } else {
        None
    };
    let quantum = c.timing_resolution_ps.max(1);
    let tag = |rng: &mut ChaCha8Rng, t: f64| {
        let t = match &jitter {
            Some(j) => t + j.sample(rng),
            None => t,
        };
        let ps = t.clamp(0.0, horizon) as u64;
        TimeTag {
            timestamp_ps: ps - ps % quantum,
            channel: rng.random_range(0..2u8),
        }
    };
    let expected = m.detected_rate_cps(c.excitation_power_uw) * c.duration_s;
    let mut tags: Vec<TimeTag> = Vec::with_capacity((expected * 1.01) as usize + 16);

    if p_det > 0.0 {
        let tau_ps = m.lifetime_ns * 1e3;
        let pump_ps = m.pump_rate_per_ns(c.excitation_power_uw) * 1e-3;
        // Inverse-CDF geometric draw; much faster than rejection for tiny p.
        let ln_miss = (-p_det).ln_1p();
        let mut t = 0.0;
        loop {
            // Sum of n exponentials is Gamma(n); n is the number of cycles up to a detection.
            let n = if p_det >= 1.0 {
                1.0
            } else {
                let u: f64 = Open01.sample(&mut rng);
                (u.ln() / ln_miss).floor() + 1.0
            };
            let up = Gamma::new(n, 1.0 / pump_ps).map_err(|e| Error::Config(e.to_string()))?;
            let down = Gamma::new(n, tau_ps).map_err(|e| Error::Config(e.to_string()))?;
            t += up.sample(&mut rng) + down.sample(&mut rng);
            if t > horizon {
                break;
            }
            let v = tag(&mut rng, t);
            tags.push(v);
        }
    }
    if m.background_rate_cps > 0.0 {
        let gap = Exp::new(m.background_rate_cps * 1e-12).map_err(|e| Error::Config(e.to_string()))?;
        let mut t = 0.0;
        loop {
            t += gap.sample(&mut rng);
            if t > horizon {
                break;
            }
            let v = tag(&mut rng, t);
            tags.push(v);
        }
    }
    tags.sort_unstable();
    TimeTagStream::new(tags, duration_ps, 2)
}

/// Histogram of detection delays after pulsed excitation, folded modulo the
/// pulse period.
pub fn simulate_pulsed_decay(m: &EmitterModel, c: &SimConfig) -> Result<DecayHistogram> {
    m.validate()?;
    if !(c.pulse_period_ns > 5.0 * m.lifetime_ns) {
        return Err(Error::Config(format!(
            "pulse period {} ns must exceed 5 tau = {} ns",
            c.pulse_period_ns,
            5.0 * m.lifetime_ns
        )));
    }
    if c.pulse_count == 0 {
        return Err(Error::Config("pulse count must be positive".into()));
    }
    if !(0.0..=1.0).contains(&c.detection_probability) {
        return Err(Error::Config(format!(
            "detection probability must lie in [0, 1], got {}",
            c.detection_probability
        )));
    }
    if !(c.detector_jitter_sigma_ps >= 0.0) {
        return Err(Error::Config("detector jitter must be non-negative".into()));
    }
    let requested_width = c.timing_resolution_ps.max(1) as f64 * 1e-3;
    let n_bins = (c.pulse_period_ns / requested_width).round().max(1.0) as usize;
    let width = c.pulse_period_ns / n_bins as f64;

    let mut rng = rng_for(c.seed, SALT_PULSED);
    let detected = Binomial::new(c.pulse_count, c.detection_probability)
        .map_err(|e| Error::Config(e.to_string()))?
        .sample(&mut rng);
    let delay = Exp::new(1.0 / m.lifetime_ns).map_err(|e| Error::Config(e.to_string()))?;
    let jitter_ns = c.detector_jitter_sigma_ps * 1e-3;
    let jitter = Normal::new(0.0, jitter_ns).map_err(|e| Error::Config(e.to_string()))?;

    let mut counts = vec![0u64; n_bins];
    for _ in 0..detected {
        let mut t = delay.sample(&mut rng);
        if jitter_ns > 0.0 {
            t += jitter.sample(&mut rng);
        }
        let folded = t.rem_euclid(c.pulse_period_ns);
        let bin = ((folded / width) as usize).min(n_bins - 1);
        counts[bin] += 1;
    }
    DecayHistogram::uniform(width, counts, c.pulse_period_ns)
}

/// Noiseless diagram `I0 (1 - V + V cos^2(phi - phi0))`.
pub fn diagram_intensity(i0: f64, visibility: f64, axis_deg: f64, angle_deg: f64) -> f64 {
    let c = (angle_deg - axis_deg).to_radians().cos();
    i0 * (1.0 - visibility + visibility * c * c)
}

/// Emission intensity (counts/s) versus analyzer angle.
pub fn simulate_polarization_scan(m: &EmitterModel, angles_deg: &[f64], c: &SimConfig) -> Result<PolarizationScan> {
    m.validate()?;
    if angles_deg.is_empty() {
        return Err(Error::Domain("no analyzer angles given".into()));
    }
    if !(c.excitation_power_uw > 0.0) {
        return Err(Error::Domain("excitation power must be positive".into()));
    }
    if !c.noiseless && !(c.dwell_s > 0.0) {
        return Err(Error::Config("dwell time must be positive".into()));
    }
    let i0 = m.detected_rate_cps(c.excitation_power_uw) - m.background_rate_cps;
    let mut rng = rng_for(c.seed, SALT_POLAR);
    let points = angles_deg
        .iter()
        .map(|&a| {
            let mean = diagram_intensity(i0, m.polar_visibility, m.polar_axis_deg, a) + m.background_rate_cps;
            let v = if c.noiseless {
                mean
            } else {
                poisson_sample(&mut rng, mean * c.dwell_s) / c.dwell_s
            };
            (a, v)
        })
        .collect::<Vec<_>>();
    PolarizationScan::from_pairs(points)
}

/// Count rate (kcounts/s) versus CW excitation power.
pub fn simulate_saturation_series(m: &EmitterModel, powers_uw: &[f64], c: &SimConfig) -> Result<SaturationSeries> {
    m.validate()?;
    if let Some(p) = powers_uw.iter().find(|p| !(p.is_finite() && **p > 0.0)) {
        return Err(Error::Domain(format!("excitation power must be positive, got {p}")));
    }
    if !c.noiseless && !(c.dwell_s > 0.0) {
        return Err(Error::Config("dwell time must be positive".into()));
    }
    let mut rng = rng_for(c.seed, SALT_SATURATION);
    let points = powers_uw
        .iter()
        .map(|&p| {
            let mean_kcps = m.detected_rate_cps(p) * 1e-3;
            let v = if c.noiseless {
                mean_kcps
            } else {
                poisson_sample(&mut rng, mean_kcps * 1e3 * c.dwell_s) / (1e3 * c.dwell_s)
            };
            (p, v)
        })
        .collect::<Vec<_>>();
    SaturationSeries::from_pairs(points)
}

fn gaussian(x: f64, center: f64, fwhm: f64) -> f64 {
    let sigma = fwhm / (8.0 * std::f64::consts::LN_2).sqrt();
    let z = (x - center) / sigma;
    (-0.5 * z * z).exp()
}

/// Sample spacing equals `resolution_nm`; each line is broadened by a Gaussian
/// instrument response of the same FWHM.
pub fn simulate_spectrum(
    m: &EmitterModel,
    range_nm: (f64, f64),
    resolution_nm: f64,
    c: &SimConfig,
) -> Result<SpectrumTrace> {
    m.validate()?;
    if !(resolution_nm.is_finite() && resolution_nm > 0.0) {
        return Err(Error::Domain(format!("resolution must be positive, got {resolution_nm}")));
    }
    let (lo, hi) = range_nm;
    if !(lo > 0.0 && hi > lo) {
        return Err(Error::Domain(format!("invalid spectral range [{lo}, {hi}]")));
    }
    if !(lo..=hi).contains(&m.zpl_wavelength_nm) {
        return Err(Error::Domain(format!(
            "range [{lo}, {hi}] nm does not cover the ZPL at {} nm",
            m.zpl_wavelength_nm
        )));
    }
    let zpl_mev = nm_to_mev(m.zpl_wavelength_nm)?;
    let zpl_width_mev = HC_MEV_NM * m.zpl_fwhm_nm / m.zpl_wavelength_nm.powi(2);
    let broaden = |fwhm_nm: f64| (fwhm_nm * fwhm_nm + resolution_nm * resolution_nm).sqrt();

    // (center nm, FWHM nm, relative amplitude)
    let mut lines = vec![(m.zpl_wavelength_nm, broaden(m.zpl_fwhm_nm), 1.0)];
    if m.eline_relative_intensity > 0.0 {
        let w = mev_to_nm(zpl_mev - LVM_ENERGY_MEV)?;
        lines.push((w, broaden(zpl_width_mev * w * w / HC_MEV_NM), m.eline_relative_intensity));
    }
    if m.sideband_relative_intensity > 0.0 && m.sideband_energy_mev > 0.0 {
        let w = mev_to_nm(zpl_mev - m.sideband_energy_mev)?;
        lines.push((w, broaden(SIDEBAND_FWHM_MEV * w * w / HC_MEV_NM), m.sideband_relative_intensity));
    }

    let n = ((hi - lo) / resolution_nm + 1e-9).floor() as usize + 1;
    let mut rng = rng_for(c.seed, SALT_SPECTRUM);
    let samples = (0..n)
        .map(|i| {
            let w = lo + i as f64 * resolution_nm;
            let signal: f64 = lines.iter().map(|&(c0, f, a)| a * gaussian(w, c0, f)).sum();
            let mean = c.spectrum_baseline_counts + c.spectrum_peak_counts * signal;
            let v = if c.noiseless { mean } else { poisson_sample(&mut rng, mean) };
            (w, v)
        })
        .collect::<Vec<_>>();
    SpectrumTrace::from_pairs(samples)
}

/// Emitter-to-emitter parameter spread of a defect family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmitterPopulation {
    G,
    Gstar,
}

/// ZPL range bounds of each family, nm.
pub const G_ZPL_RANGE_NM: (f64, f64) = (1277.0, 1280.0);
pub const GSTAR_ZPL_RANGE_NM: (f64, f64) = (1253.0, 1303.0);

fn truncated_normal(rng: &mut impl Rng, mean: f64, sd: f64, lo: f64, hi: f64) -> f64 {
    let d = Normal::new(mean, sd).expect("valid normal");
    loop {
        let v = d.sample(rng);
        if (lo..=hi).contains(&v) {
            return v;
        }
    }
}

impl EmitterPopulation {
    pub fn kind(self) -> EmitterKind {
        match self {
            EmitterPopulation::G => EmitterKind::G,
            EmitterPopulation::Gstar => EmitterKind::Gstar,
        }
    }

    /// ZPL wavelength drawn from the family's inhomogeneous distribution.
    /// ZPL wavelength drawn from the family's normal distribution and
    /// clipped to its observed range.
    pub fn sample_zpl(self, rng: &mut impl Rng) -> f64 {
        let (mean, sd, (lo, hi)) = match self {
            EmitterPopulation::G => (1279.0, 0.5, G_ZPL_RANGE_NM),
            EmitterPopulation::Gstar => (1273.0, 12.0, GSTAR_ZPL_RANGE_NM),
        };
        Normal::<f64>::new(mean, sd).expect("valid normal").sample(rng).clamp(lo, hi)
    }

    /// A full emitter model with every parameter drawn around the family's
    /// typical values.
    pub fn sample(self, rng: &mut impl Rng) -> EmitterModel {
        let mut n = |mean: f64, sd: f64| truncated_normal(rng, mean, sd, 0.05 * mean, 2.0 * mean);
        match self {
            EmitterPopulation::G => {
                let mut m = EmitterModel::g_center();
                m.lifetime_ns = n(4.9, 0.3);
                m.sat_intensity_kcps = n(7.9, 0.1);
                m.sat_power_uw = n(1.1, 0.1);
                m.polar_visibility = n(0.62, 0.02);
                let axis = if rng.random_bool(0.5) { 0.0 } else { 90.0 };
                m.polar_axis_deg = axis + Normal::new(0.0, 3.0).unwrap().sample(rng);
                m.zpl_wavelength_nm = self.sample_zpl(rng);
                m
            }
            EmitterPopulation::Gstar => {
                let mut m = EmitterModel::gstar_center();
                m.lifetime_ns = n(33.4, 0.5);
                m.sat_intensity_kcps = n(68.0, 1.0);
                m.sat_power_uw = n(12.0, 1.0);
                m.polar_visibility = truncated_normal(rng, 0.90, 0.02, 0.80, 1.0);
                // Anywhere except within 15 deg of the crystal axes.
                let offset = rng.random_range(15.0..75.0);
                m.polar_axis_deg = if rng.random_bool(0.5) { offset } else { 90.0 + offset };
                m.zpl_wavelength_nm = self.sample_zpl(rng);
                m
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn noiseless() -> SimConfig {
        SimConfig {
            noiseless: true,
            ..SimConfig::default()
        }
    }

    #[test]
    fn presets_are_valid() {
        EmitterModel::g_center().validate().unwrap();
        EmitterModel::gstar_center().validate().unwrap();
        let mut bad = EmitterModel::gstar_center();
        bad.eline_relative_intensity = 0.1;
        assert!(bad.validate().is_err());
        let mut bad = EmitterModel::g_center();
        bad.eline_relative_intensity = 0.0;
        assert!(bad.validate().is_err());
        let mut bad = EmitterModel::g_center();
        bad.quantum_efficiency = 0.0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn cw_rate_at_psat() {
        let m = EmitterModel::g_center();
        let c = SimConfig {
            excitation_power_uw: m.sat_power_uw,
            duration_s: 20.0,
            seed: 11,
            ..SimConfig::default()
        };
        let s = simulate_cw_stream(&m, &c).unwrap();
        let expected = 0.5 * m.sat_intensity_kcps * 1e3 * c.duration_s;
        assert!((s.len() as f64 - expected).abs() < 3.0 * expected.sqrt(), "{} vs {expected}", s.len());
    }

    #[test]
    fn cw_rate_near_saturation() {
        let m = EmitterModel::gstar_center();
        let c = SimConfig {
            excitation_power_uw: 100.0 * m.sat_power_uw,
            duration_s: 5.0,
            seed: 5,
            ..SimConfig::default()
        };
        let s = simulate_cw_stream(&m, &c).unwrap();
        let expected = 68e3 * 100.0 / 101.0 * c.duration_s;
        assert!((s.len() as f64 - expected).abs() < 3.0 * expected.sqrt());
        assert!((s.mean_rate() / 1e3 - 67.3).abs() < 0.3);
    }

    #[test]
    fn cw_errors() {
        let m = EmitterModel::g_center();
        let zero = SimConfig {
            duration_s: 0.0,
            ..SimConfig::default()
        };
        assert!(matches!(simulate_cw_stream(&m, &zero), Err(Error::EmptyStream(_))));
        let off = SimConfig {
            excitation_power_uw: 0.0,
            ..SimConfig::default()
        };
        assert!(matches!(simulate_cw_stream(&m, &off), Err(Error::Domain(_))));
        let mut bright = EmitterModel::g_center();
        bright.kind = EmitterKind::Custom;
        bright.lifetime_ns = 1e6;
        assert!(matches!(simulate_cw_stream(&bright, &SimConfig::default()), Err(Error::Config(_))));
    }

    #[test]
    fn cw_determinism_and_channels() {
        let m = EmitterModel::gstar_center();
        let c = SimConfig {
            duration_s: 0.5,
            detector_jitter_sigma_ps: 50.0,
            seed: 99,
            ..SimConfig::default()
        };
        let a = simulate_cw_stream(&m, &c).unwrap();
        let b = simulate_cw_stream(&m, &c).unwrap();
        assert_eq!(a, b);
        let c2 = SimConfig { seed: 100, ..c };
        assert_ne!(a, simulate_cw_stream(&m, &c2).unwrap());
        let ch0 = a.channel_timestamps(0).len() as f64;
        let n = a.len() as f64;
        assert!((ch0 - n / 2.0).abs() < 4.0 * (n / 4.0).sqrt());
        assert!(a.tags().iter().all(|t| t.timestamp_ps % 100 == 0));
    }

    #[test]
    fn background_only_stream() {
        let mut m = EmitterModel::g_center();
        m.kind = EmitterKind::Custom;
        m.sat_intensity_kcps = 0.0;
        m.background_rate_cps = 1000.0;
        let c = SimConfig {
            duration_s: 100.0,
            ..SimConfig::default()
        };
        let s = simulate_cw_stream(&m, &c).unwrap();
        assert!((s.len() as f64 - 1e5).abs() < 3.0 * 1e5f64.sqrt());
    }

    #[test]
    fn pulsed_counts_and_errors() {
        let m = EmitterModel::g_center();
        let c = SimConfig {
            pulse_count: 100_000,
            detection_probability: 0.2,
            ..SimConfig::default()
        };
        let h = simulate_pulsed_decay(&m, &c).unwrap();
        assert!((h.total() as f64 - 20_000.0).abs() < 4.0 * (16_000.0f64).sqrt());
        assert_relative_eq!(*h.bin_edges_ns().last().unwrap(), 200.0, max_relative = 1e-12);

        let none = SimConfig {
            detection_probability: 0.0,
            ..c.clone()
        };
        assert_eq!(simulate_pulsed_decay(&m, &none).unwrap().total(), 0);

        let short = SimConfig {
            pulse_period_ns: 4.0,
            ..c.clone()
        };
        assert!(matches!(simulate_pulsed_decay(&m, &short), Err(Error::Config(_))));
        let marginal = SimConfig {
            pulse_period_ns: 20.0,
            ..c
        };
        assert!(matches!(simulate_pulsed_decay(&m, &marginal), Err(Error::Config(_))));
    }

    #[test]
    fn polarization_model_values() {
        assert!(diagram_intensity(1.0, 1.0, 0.0, 90.0).abs() < 1e-15);
        assert_relative_eq!(diagram_intensity(1.0, 0.62, 0.0, 90.0), 0.38, max_relative = 1e-12);
        assert_relative_eq!(diagram_intensity(1.0, 0.90, 45.0, 45.0), 1.0, max_relative = 1e-12);
    }

    #[test]
    fn noiseless_polarization_scan() {
        let mut m = EmitterModel::g_center();
        m.polar_visibility = 1.0;
        let angles: Vec<f64> = (0..12).map(|i| i as f64 * 30.0).collect();
        let scan = simulate_polarization_scan(&m, &angles, &noiseless()).unwrap();
        let i0 = m.detected_rate_cps(1.0);
        for p in scan.points() {
            assert_relative_eq!(p.intensity, diagram_intensity(i0, 1.0, 0.0, p.angle_deg), epsilon = 1e-9);
        }
        assert!(scan.points()[3].intensity.abs() < 1e-9);
        assert!(matches!(simulate_polarization_scan(&m, &[], &noiseless()), Err(Error::Domain(_))));
    }

    #[test]
    fn noiseless_saturation_series() {
        let m = EmitterModel::g_center();
        let s = simulate_saturation_series(&m, &[1e-6, 0.5, 1.1, 3.0, 10.0], &noiseless()).unwrap();
        assert_relative_eq!(s.points()[2].intensity_kcps, 3.95, max_relative = 1e-12);
        assert!(s.points()[0].intensity_kcps < 1e-5);
        let gs = EmitterModel::gstar_center();
        let s = simulate_saturation_series(&gs, &[1.0, 6.0, 12.0, 50.0], &noiseless()).unwrap();
        assert_relative_eq!(s.points()[2].intensity_kcps, 34.0, max_relative = 1e-12);
        assert!(matches!(
            simulate_saturation_series(&m, &[1.0, -1.0], &noiseless()),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn spectrum_lines() {
        let g = EmitterModel::g_center();
        let s = simulate_spectrum(&g, (1200.0, 1450.0), 0.1, &noiseless()).unwrap();
        let window = |lo: f64, hi: f64| {
            s.samples()
                .iter()
                .filter(|p| (lo..hi).contains(&p.wavelength_nm))
                .max_by(|a, b| a.intensity.total_cmp(&b.intensity))
                .unwrap()
                .wavelength_nm
        };
        assert!((window(1270.0, 1290.0) - 1279.0).abs() < 0.051);
        let eline = mev_to_nm(nm_to_mev(1279.0).unwrap() - LVM_ENERGY_MEV).unwrap();
        assert!((window(1370.0, 1395.0) - eline).abs() < 0.051, "{eline}");

        let gs = EmitterModel {
            zpl_wavelength_nm: 1279.0,
            ..EmitterModel::gstar_center()
        };
        let s = simulate_spectrum(&gs, (1200.0, 1450.0), 0.1, &noiseless()).unwrap();
        let max_eline = s
            .samples()
            .iter()
            .filter(|p| (1378.0..1385.0).contains(&p.wavelength_nm))
            .map(|p| p.intensity)
            .fold(0.0, f64::max);
        assert!((max_eline - 20.0).abs() < 1e-6);

        assert!(matches!(simulate_spectrum(&g, (1200.0, 1300.0), 0.0, &noiseless()), Err(Error::Domain(_))));
        assert!(simulate_spectrum(&g, (1300.0, 1400.0), 0.1, &noiseless()).is_err());
    }

    #[test]
    fn single_peak_spectrum() {
        let m = EmitterModel {
            kind: EmitterKind::Custom,
            eline_relative_intensity: 0.0,
            sideband_relative_intensity: 0.0,
            ..EmitterModel::g_center()
        };
        let s = simulate_spectrum(&m, (1250.0, 1420.0), 0.1, &noiseless()).unwrap();
        let ys: Vec<f64> = s.samples().iter().map(|p| p.intensity).collect();
        let local_maxima = ys.windows(3).filter(|w| w[1] > w[0] && w[1] >= w[2] && w[1] > 20.0 + 1e-9).count();
        assert_eq!(local_maxima, 1);
    }

    #[test]
    fn population_samples_valid() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            EmitterPopulation::G.sample(&mut rng).validate().unwrap();
            let gs = EmitterPopulation::Gstar.sample(&mut rng);
            gs.validate().unwrap();
            assert!((GSTAR_ZPL_RANGE_NM.0..=GSTAR_ZPL_RANGE_NM.1).contains(&gs.zpl_wavelength_nm));
        }
    }
}
