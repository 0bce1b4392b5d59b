//! Zero-phonon line and E-line detection, sideband displacement, and ZPL
//! population statistics.

use crate::error::{Error, Result};
use crate::fitkit::fit_gaussian_peak;
use crate::units::{mev_to_nm, nm_to_mev, SpectrumTrace, HC_MEV_NM, LVM_ENERGY_MEV};

/// Half-width of the E-line acceptance window, meV.
pub const ELINE_WINDOW_MEV: f64 = 2.0;

pub const ELINE_SNR_THRESHOLD: f64 = 3.0;

/// Minimum ZPL height in units of the baseline noise.
pub const ZPL_SNR_THRESHOLD: f64 = 3.0;

const FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949;
const MAD_TO_SIGMA: f64 = 1.482_602_218_505_602;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZplPeak {
    pub wavelength_nm: f64,
    pub fwhm_nm: f64,
    /// Height above the local baseline, counts.
    pub amplitude: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ELineDetection {
    pub present: bool,
    pub wavelength_nm: Option<f64>,
    pub snr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralFeatures {
    pub zpl_wavelength_nm: f64,
    pub zpl_energy_mev: f64,
    pub zpl_fwhm_nm: f64,
    /// False when the E-line window lies outside the trace.
    pub eline_measured: bool,
    pub eline_present: bool,
    pub eline_wavelength_nm: Option<f64>,
    pub eline_snr: f64,
    pub sideband_energy_mev: Option<f64>,
}

impl SpectralFeatures {
    pub fn eline_energy_mev(&self) -> Option<f64> {
        self.eline_wavelength_nm.and_then(|w| nm_to_mev(w).ok())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZplPopulationStats {
    pub n: usize,
    pub mean: f64,
    pub std_dev: f64,
    pub min: f64,
    pub max: f64,
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Robust baseline level and noise (median, scaled MAD).
fn baseline_stats(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let mut v = values.to_vec();
    let med = median(&mut v);
    let mut dev: Vec<f64> = values.iter().map(|x| (x - med).abs()).collect();
    (med, MAD_TO_SIGMA * median(&mut dev))
}

fn check_within(trace: &SpectrumTrace, lo: f64, hi: f64, what: &str) -> Result<()> {
    let (a, b) = trace.domain();
    if lo < a || hi > b || !(hi > lo) {
        return Err(Error::Coverage(format!(
            "{what} [{lo:.2}, {hi:.2}] nm is outside the trace [{a:.2}, {b:.2}] nm"
        )));
    }
    Ok(())
}

/// Index range of samples with wavelength in `[lo, hi]`.
fn index_range(trace: &SpectrumTrace, lo: f64, hi: f64) -> std::ops::Range<usize> {
    let s = trace.samples();
    let a = s.partition_point(|p| p.wavelength_nm < lo);
    let b = s.partition_point(|p| p.wavelength_nm <= hi);
    a..b
}

/// Gaussian matched filter: least-squares amplitude of a line of the given
/// width centred on each sample, and the per-sample gain `sqrt(sum k^2)` that
/// converts amplitude over noise into SNR.
struct MatchedFilter {
    kernel: Vec<f64>,
    half: usize,
}

impl MatchedFilter {
    fn new(fwhm_samples: f64) -> Self {
        let sigma = (fwhm_samples / FWHM_PER_SIGMA).max(0.3);
        let half = (3.0 * sigma).ceil() as usize;
        let kernel = (0..=2 * half)
            .map(|j| {
                let z = (j as f64 - half as f64) / sigma;
                (-0.5 * z * z).exp()
            })
            .collect();
        Self { kernel, half }
    }

    /// (amplitude estimate, gain) at index `i`.
    fn at(&self, ys: &[f64], baseline: f64, i: usize) -> (f64, f64) {
        let (mut num, mut den) = (0.0, 0.0);
        for (j, &k) in self.kernel.iter().enumerate() {
            let Some(idx) = (i + j).checked_sub(self.half) else { continue };
            if idx >= ys.len() {
                break;
            }
            num += k * (ys[idx] - baseline);
            den += k * k;
        }
        (num / den, den.sqrt())
    }

    /// Index, amplitude and gain of the filter maximum within `range`.
    fn best(&self, ys: &[f64], baseline: f64, range: std::ops::Range<usize>) -> Option<(usize, f64, f64)> {
        range
            .map(|i| {
                let (a, g) = self.at(ys, baseline, i);
                (i, a, g)
            })
            .max_by(|x, y| x.1.total_cmp(&y.1))
    }
}

fn mean_spacing(xs: &[f64]) -> f64 {
    if xs.len() > 1 {
        (xs[xs.len() - 1] - xs[0]) / (xs.len() - 1) as f64
    } else {
        1.0
    }
}

/// Raw sample with the largest value within `half` samples of `i`.
fn local_max(ys: &[f64], i: usize, half: usize, range: &std::ops::Range<usize>) -> usize {
    let a = i.saturating_sub(half).max(range.start);
    let b = (i + half + 1).min(range.end).max(a + 1);
    (a..b).max_by(|&x, &y| ys[x].total_cmp(&ys[y])).unwrap_or(i)
}

/// Half-maximum width around sample `i`, linearly interpolated.
fn half_max_width(xs: &[f64], ys: &[f64], i: usize, baseline: f64) -> f64 {
    let half = baseline + 0.5 * (ys[i] - baseline);
    let mut l = i;
    while l > 0 && ys[l] > half {
        l -= 1;
    }
    let mut r = i;
    while r + 1 < ys.len() && ys[r] > half {
        r += 1;
    }
    let interp = |a: usize, b: usize| {
        let (ya, yb) = (ys[a], ys[b]);
        if (yb - ya).abs() < f64::EPSILON {
            xs[a]
        } else {
            xs[a] + (half - ya) * (xs[b] - xs[a]) / (yb - ya)
        }
    };
    let left = if l < i { interp(l, l + 1) } else { xs[i] };
    let right = if r > i { interp(r - 1, r) } else { xs[i] };
    (right - left).max(0.0)
}

/// Sub-sample centre and width from a local Gaussian fit; falls back to a
/// three-point parabola when the fit is not usable.
fn refine(xs: &[f64], ys: &[f64], i: usize, baseline: f64) -> (f64, f64) {
    let spacing = mean_spacing(xs);
    let fwhm0 = half_max_width(xs, ys, i, baseline).max(spacing);
    let half_window = (3.0 * spacing).max(fwhm0);
    let lo = xs[i] - half_window;
    let hi = xs[i] + half_window;
    let a = xs.partition_point(|&x| x < lo);
    let b = xs.partition_point(|&x| x <= hi);

    let parabola = || {
        if i == 0 || i + 1 >= ys.len() {
            return xs[i];
        }
        let (y0, y1, y2) = (ys[i - 1], ys[i], ys[i + 1]);
        let d = y0 - 2.0 * y1 + y2;
        if d.abs() < f64::EPSILON {
            xs[i]
        } else {
            xs[i] + 0.5 * (y0 - y2) / d * (xs[i + 1] - xs[i])
        }
    };

    if b - a >= 5 {
        let init = [ys[i] - baseline, xs[i], fwhm0 / FWHM_PER_SIGMA, baseline];
        if let Ok(fit) = fit_gaussian_peak(&xs[a..b], &ys[a..b], init) {
            let mu = fit.value("mu");
            let fwhm = fit.value("sigma") * FWHM_PER_SIGMA;
            if fit.value("A") > 0.0 && (lo..=hi).contains(&mu) && fwhm.is_finite() && fwhm > 0.0 {
                return (mu, fwhm);
            }
        }
    }
    (parabola(), fwhm0)
}

fn columns(trace: &SpectrumTrace) -> (Vec<f64>, Vec<f64>) {
    trace
        .samples()
        .iter()
        .map(|s| (s.wavelength_nm, s.intensity))
        .unzip()
}

/// Kernel width of the ZPL matched filter, in samples.
const ZPL_KERNEL_FWHM_SAMPLES: f64 = 3.0;

/// Locate the strongest peak in `search_range_nm` and refine its centre.
///
/// The peak is the maximum of a three-sample matched filter; it counts as a
/// ZPL when its amplitude exceeds three times the per-sample baseline noise.
pub fn detect_zpl(trace: &SpectrumTrace, search_range_nm: (f64, f64)) -> Result<ZplPeak> {
    let (lo, hi) = search_range_nm;
    check_within(trace, lo, hi, "ZPL search range")?;
    let (xs, ys) = columns(trace);
    let range = index_range(trace, lo, hi);
    if range.len() < 3 {
        return Err(Error::InsufficientData("fewer than 3 samples in the ZPL search range".into()));
    }
    let (baseline, noise) = baseline_stats(&ys);
    let filter = MatchedFilter::new(ZPL_KERNEL_FWHM_SAMPLES);
    let (i, amp, _) = filter.best(&ys, baseline, range.clone()).expect("range is not empty");
    let floor = 1e-12 * ys.iter().fold(0.0f64, |m, &y| m.max((y - baseline).abs()));
    let noise = noise.max(floor);
    if !(amp > ZPL_SNR_THRESHOLD * noise) || amp <= 0.0 {
        return Err(Error::NoZpl(format!(
            "no peak above {ZPL_SNR_THRESHOLD} x baseline noise ({noise:.3}) in [{lo}, {hi}] nm"
        )));
    }
    let top = local_max(&ys, i, filter.half, &range);
    let (center, fwhm) = refine(&xs, &ys, top, baseline);
    Ok(ZplPeak {
        wavelength_nm: center,
        fwhm_nm: fwhm,
        amplitude: ys[top] - baseline,
    })
}

/// Expected E-line wavelength window for a given ZPL energy, nm (low, high).
pub fn eline_window_nm(zpl_energy_mev: f64) -> Result<(f64, f64)> {
    let target = zpl_energy_mev - LVM_ENERGY_MEV;
    Ok((
        mev_to_nm(target + ELINE_WINDOW_MEV)?,
        mev_to_nm(target - ELINE_WINDOW_MEV)?,
    ))
}

/// Search for the E-line `71.9 meV` below the ZPL within +/- 2 meV, using a
/// three-sample matched filter.
pub fn detect_e_line(trace: &SpectrumTrace, zpl_energy_mev: f64) -> Result<ELineDetection> {
    detect_e_line_matched(trace, zpl_energy_mev, None)
}

/// As [`detect_e_line`], with the filter matched to a line of
/// `line_fwhm_mev` (the E-line shares the ZPL's energy width).
pub fn detect_e_line_matched(
    trace: &SpectrumTrace,
    zpl_energy_mev: f64,
    line_fwhm_mev: Option<f64>,
) -> Result<ELineDetection> {
    let (lo, hi) = eline_window_nm(zpl_energy_mev)?;
    check_within(trace, lo, hi, "E-line window")?;
    let (xs, ys) = columns(trace);
    let window = index_range(trace, lo, hi);
    if window.is_empty() {
        return Err(Error::InsufficientData("no samples in the E-line window".into()));
    }

    // Local baseline: +/- 8 meV around the target, excluding the window itself.
    let target = zpl_energy_mev - LVM_ENERGY_MEV;
    let outer = index_range(trace, mev_to_nm(target + 8.0)?, mev_to_nm((target - 8.0).max(1.0))?);
    let mut side: Vec<f64> = outer.filter(|i| !window.contains(i)).map(|i| ys[i]).collect();
    if side.len() < 10 {
        side = (0..ys.len()).filter(|i| !window.contains(i)).map(|i| ys[i]).collect();
    }
    let (baseline, noise) = baseline_stats(&side);
    let spacing = mean_spacing(&xs);
    let fwhm_samples = match line_fwhm_mev {
        Some(w) if w > 0.0 => {
            let center = mev_to_nm(target)?;
            (w * center * center / HC_MEV_NM / spacing).max(ZPL_KERNEL_FWHM_SAMPLES)
        }
        _ => ZPL_KERNEL_FWHM_SAMPLES,
    };
    let filter = MatchedFilter::new(fwhm_samples);
    let (i, amp, gain) = filter.best(&ys, baseline, window.clone()).expect("window is not empty");
    let floor = 1e-12 * ys.iter().fold(0.0f64, |m, &y| m.max((y - baseline).abs()));
    let snr = amp * gain / noise.max(floor);
    if !(snr >= ELINE_SNR_THRESHOLD) {
        return Ok(ELineDetection {
            present: false,
            wavelength_nm: None,
            snr: if snr.is_finite() { snr } else { 0.0 },
        });
    }
    let top = local_max(&ys, i, filter.half, &window);
    let (center, _) = refine(&xs, &ys, top, baseline);
    let center = if (lo..=hi).contains(&center) { center } else { xs[top] };
    Ok(ELineDetection {
        present: true,
        wavelength_nm: Some(center),
        snr,
    })
}

/// Displacement of the phonon sideband below the ZPL, searched between 5 and
/// 40 meV with a filter matched to a 5 meV wide feature. Returns `None` when
/// nothing stands out of the noise.
pub fn detect_sideband(trace: &SpectrumTrace, zpl: &ZplPeak) -> Option<f64> {
    let zpl_mev = nm_to_mev(zpl.wavelength_nm).ok()?;
    let lo = mev_to_nm(zpl_mev - 5.0).ok()?.max(zpl.wavelength_nm + 3.0 * zpl.fwhm_nm);
    let hi = mev_to_nm(zpl_mev - 40.0).ok()?;
    let (xs, ys) = columns(trace);
    let range = index_range(trace, lo, hi);
    if range.len() < 5 {
        return None;
    }
    let spacing = mean_spacing(&xs);
    let filter = MatchedFilter::new(5.0 * zpl.wavelength_nm.powi(2) / HC_MEV_NM / spacing);
    let (baseline, noise) = baseline_stats(&ys);
    let (i, amp, gain) = filter.best(&ys, baseline, range.clone())?;
    let snr = amp * gain / noise.max(1e-12 * zpl.amplitude);
    // Only a true local maximum counts, not the rising ZPL tail at the edge.
    if !(snr >= ZPL_SNR_THRESHOLD) || i == range.start || i + 1 >= range.end {
        return None;
    }
    Some(zpl_mev - nm_to_mev(xs[i]).ok()?)
}

/// ZPL, E-line and sideband features of one spectrum.
pub fn analyze_spectrum(trace: &SpectrumTrace, zpl_search_range_nm: (f64, f64)) -> Result<SpectralFeatures> {
    let zpl = detect_zpl(trace, zpl_search_range_nm)?;
    let zpl_energy_mev = nm_to_mev(zpl.wavelength_nm)?;
    let fwhm_mev = HC_MEV_NM * zpl.fwhm_nm / zpl.wavelength_nm.powi(2);
    let (eline_measured, eline) = match detect_e_line_matched(trace, zpl_energy_mev, Some(fwhm_mev)) {
        Ok(e) => (true, e),
        Err(Error::Coverage(_)) => (
            false,
            ELineDetection {
                present: false,
                wavelength_nm: None,
                snr: 0.0,
            },
        ),
        Err(e) => return Err(e),
    };
    Ok(SpectralFeatures {
        zpl_wavelength_nm: zpl.wavelength_nm,
        zpl_energy_mev,
        zpl_fwhm_nm: zpl.fwhm_nm,
        eline_measured,
        eline_present: eline.present,
        eline_wavelength_nm: eline.wavelength_nm.filter(|_| eline.present),
        eline_snr: eline.snr,
        sideband_energy_mev: detect_sideband(trace, &zpl),
    })
}

/// Sample statistics of ZPL wavelengths (n - 1 denominator).
pub fn population_stats(wavelengths_nm: &[f64]) -> Result<ZplPopulationStats> {
    let n = wavelengths_nm.len();
    if n < 2 {
        return Err(Error::InsufficientPopulation(format!("need at least 2 emitters, got {n}")));
    }
    let mean = wavelengths_nm.iter().sum::<f64>() / n as f64;
    let var = wavelengths_nm.iter().map(|w| (w - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let min = wavelengths_nm.iter().copied().fold(f64::INFINITY, f64::min);
    let max = wavelengths_nm.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(ZplPopulationStats {
        n,
        mean: mean.clamp(min, max),
        std_dev: var.sqrt(),
        min,
        max,
    })
}

pub fn zpl_population_stats(features: &[SpectralFeatures]) -> Result<ZplPopulationStats> {
    let w: Vec<f64> = features.iter().map(|f| f.zpl_wavelength_nm).collect();
    population_stats(&w)
}
