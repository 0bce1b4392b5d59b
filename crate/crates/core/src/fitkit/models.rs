//! The parametric models used on measured data, and their fitting front-ends.

use super::solver::{solve_least_squares, FitModel, FitResult, FitWarning, Observation, SolverConfig};
use crate::error::{Error, Result};
use crate::units::{DecayHistogram, PolarizationScan, SaturationSeries};

/// `A exp(-t / tau) + B`.
#[derive(Debug, Clone, Copy, Default)]
pub struct ExponentialDecay;

impl FitModel for ExponentialDecay {
    fn parameter_names(&self) -> &[&'static str] {
        &["A", "tau", "B"]
    }

    fn value(&self, t: f64, p: &[f64]) -> f64 {
        p[0] * (-t / p[1]).exp() + p[2]
    }

    fn gradient(&self, t: f64, p: &[f64], g: &mut [f64]) {
        let e = (-t / p[1]).exp();
        g[0] = e;
        g[1] = p[0] * e * t / (p[1] * p[1]);
        g[2] = 1.0;
    }
}

/// `Isat * P / (P + Psat)`, optionally plus a constant background.
#[derive(Debug, Clone, Copy, Default)]
pub struct SaturationLaw {
    pub with_background: bool,
}

impl FitModel for SaturationLaw {
    fn parameter_names(&self) -> &[&'static str] {
        if self.with_background {
            &["Isat", "Psat", "background"]
        } else {
            &["Isat", "Psat"]
        }
    }

    fn value(&self, power: f64, p: &[f64]) -> f64 {
        let v = p[0] * power / (power + p[1]);
        if self.with_background {
            v + p[2]
        } else {
            v
        }
    }

    fn gradient(&self, power: f64, p: &[f64], g: &mut [f64]) {
        let d = power + p[1];
        g[0] = power / d;
        g[1] = -p[0] * power / (d * d);
        if self.with_background {
            g[2] = 1.0;
        }
    }
}

/// `I0 (1 - V + V cos^2(phi - phi0))` with angles in degrees.
#[derive(Debug, Clone, Copy, Default)]
pub struct PolarizationLaw;

impl FitModel for PolarizationLaw {
    fn parameter_names(&self) -> &[&'static str] {
        &["I0", "V", "phi0"]
    }

    fn value(&self, angle_deg: f64, p: &[f64]) -> f64 {
        let c = (angle_deg - p[2]).to_radians().cos();
        p[0] * (1.0 - p[1] + p[1] * c * c)
    }

    fn gradient(&self, angle_deg: f64, p: &[f64], g: &mut [f64]) {
        let (s, c) = (angle_deg - p[2]).to_radians().sin_cos();
        g[0] = 1.0 - p[1] + p[1] * c * c;
        g[1] = p[0] * (c * c - 1.0);
        g[2] = p[0] * p[1] * 2.0 * c * s * std::f64::consts::PI / 180.0;
    }
}

/// `A exp(-(x - mu)^2 / (2 sigma^2)) + c`.
#[derive(Debug, Clone, Copy, Default)]
pub struct GaussianPeak;

impl FitModel for GaussianPeak {
    fn parameter_names(&self) -> &[&'static str] {
        &["A", "mu", "sigma", "c"]
    }

    fn value(&self, x: f64, p: &[f64]) -> f64 {
        let z = (x - p[1]) / p[2];
        p[0] * (-0.5 * z * z).exp() + p[3]
    }

    fn gradient(&self, x: f64, p: &[f64], g: &mut [f64]) {
        let z = (x - p[1]) / p[2];
        let e = (-0.5 * z * z).exp();
        g[0] = e;
        g[1] = p[0] * e * z / p[2];
        g[2] = p[0] * e * z * z / p[2];
        g[3] = 1.0;
    }
}

/// Weight floor for rate data, relative to the largest value.
const RATE_WEIGHT_FLOOR: f64 = 1e-3;
const REWEIGHT_ROUNDS: usize = 10;
const MIN_MODEL_COUNTS: f64 = 0.05;

/// Mono-exponential fit of the decay tail (bins from the maximum onwards).
pub fn fit_exponential_decay(h: &DecayHistogram) -> Result<FitResult> {
    fit_exponential_decay_with(h, &SolverConfig::default())
}

pub fn fit_exponential_decay_with(h: &DecayHistogram, config: &SolverConfig) -> Result<FitResult> {
    if h.total() == 0 {
        return Err(Error::InsufficientData("decay histogram is empty".into()));
    }
    let centers = h.bin_centers_ns();
    let counts = h.counts();
    let peak_idx = counts
        .iter()
        .enumerate()
        .max_by_key(|&(i, &c)| (c, std::cmp::Reverse(i)))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let tail: Vec<Observation> = (peak_idx..counts.len())
        .map(|i| Observation::poisson(centers[i], counts[i] as f64))
        .collect();
    if tail.len() < 4 {
        return Err(Error::InsufficientData(format!(
            "only {} bins after the decay maximum",
            tail.len()
        )));
    }

    let init = decay_initial_guess(&tail, h.pulse_period_ns());
    let mut fit = solve_least_squares(&ExponentialDecay, &tail, &init, config)?;
    // Reweighting by the model prediction converges to the Poisson maximum
    // likelihood estimate; weights from the data bias sparse tails low.
    let mut data = tail;
    for _ in 0..REWEIGHT_ROUNDS {
        let p = fit.values();
        for o in data.iter_mut() {
            o.weight = 1.0 / ExponentialDecay.value(o.x, &p).max(MIN_MODEL_COUNTS);
        }
        let next = solve_least_squares(&ExponentialDecay, &data, &p, config)?;
        let moved = (next.value("tau") - fit.value("tau")).abs();
        fit = next;
        if moved <= 1e-9 * fit.value("tau").abs() {
            break;
        }
    }
    if !(fit.value("tau") > 0.0) {
        return Err(Error::DegenerateFit(format!(
            "fitted lifetime {} ns is not positive",
            fit.value("tau")
        )));
    }
    if fit.value("tau") > h.pulse_period_ns() {
        fit.warnings.push(FitWarning::IllConditioned(
            "fitted lifetime exceeds the pulse period".into(),
        ));
    }
    Ok(fit)
}

/// Lifetime from the log-count slope over the first decade of the tail.
fn decay_initial_guess(tail: &[Observation], period: f64) -> [f64; 3] {
    let n = tail.len();
    let tail_len = (n / 10).max(1);
    let mut late: Vec<f64> = tail[n - tail_len..].iter().map(|o| o.y).collect();
    late.sort_by(f64::total_cmp);
    let background = late[late.len() / 2];
    let peak = tail[0].y - background;
    let t0 = tail[0].x;

    let decade: Vec<(f64, f64)> = tail
        .iter()
        .map(|o| (o.x, o.y - background))
        .take_while(|&(_, y)| y >= 0.1 * peak)
        .filter(|&(_, y)| y > 0.0)
        .map(|(x, y)| (x, y.ln()))
        .collect();

    let mut tau = f64::NAN;
    if decade.len() >= 2 {
        let m = decade.len() as f64;
        let mx = decade.iter().map(|d| d.0).sum::<f64>() / m;
        let my = decade.iter().map(|d| d.1).sum::<f64>() / m;
        let sxy: f64 = decade.iter().map(|d| (d.0 - mx) * (d.1 - my)).sum();
        let sxx: f64 = decade.iter().map(|d| (d.0 - mx).powi(2)).sum();
        if sxx > 0.0 {
            tau = -sxx / sxy;
        }
    }
    if !(tau.is_finite() && tau > 0.0) {
        let w: f64 = tail.iter().map(|o| (o.y - background).max(0.0)).sum();
        tau = if w > 0.0 {
            tail.iter().map(|o| (o.y - background).max(0.0) * (o.x - t0)).sum::<f64>() / w
        } else {
            0.1 * period
        };
        tau = tau.max(1e-3 * period);
    }
    let amplitude = peak.max(1.0) * (t0 / tau).exp();
    [amplitude, tau, background]
}

/// Saturation-law fit. Emits an [`FitWarning::IllConditioned`] warning when every
/// power lies below 0.2 Psat.
pub fn fit_saturation(s: &SaturationSeries, with_background: bool) -> Result<FitResult> {
    let pts = s.points();
    let pmin = pts[0].power_uw;
    let pmax = pts[pts.len() - 1].power_uw;
    if pmax < 10.0 * pmin {
        return Err(Error::InsufficientData(format!(
            "powers span only a factor {:.2}, at least 10 is required",
            pmax / pmin
        )));
    }
    let imax = pts.iter().map(|p| p.intensity_kcps).fold(0.0, f64::max);
    let floor = RATE_WEIGHT_FLOOR * imax;
    let data: Vec<Observation> = pts
        .iter()
        .map(|p| Observation::proportional(p.power_uw, p.intensity_kcps, floor))
        .collect();
    let median_power = pts[pts.len() / 2].power_uw;
    let model = SaturationLaw { with_background };
    let init: Vec<f64> = if with_background {
        vec![1.5 * imax, median_power, 0.0]
    } else {
        vec![1.5 * imax, median_power]
    };
    let mut fit = solve_least_squares(&model, &data, &init, &SolverConfig::default())?;
    let (isat, psat) = (fit.value("Isat"), fit.value("Psat"));
    if !(isat > 0.0 && psat > 0.0) {
        return Err(Error::DegenerateFit(format!(
            "non-physical saturation parameters Isat = {isat}, Psat = {psat}"
        )));
    }
    if pmax < 0.2 * psat {
        fit.warnings.push(FitWarning::IllConditioned(format!(
            "all powers below 0.2 Psat ({:.3} uW)",
            0.2 * psat
        )));
    }
    Ok(fit)
}

/// Reduce to the canonical gauge: V >= 0 and phi0 in [0, 180).
fn canonical_polarization(i0: f64, v: f64, phi0: f64) -> (f64, f64, f64) {
    let (i0, v, phi0) = if v < 0.0 {
        // 1 - V + V c^2 with V < 0 equals a positive-visibility diagram rotated by 90 deg.
        let a = -v;
        (i0 * (1.0 + a), a / (1.0 + a), phi0 + 90.0)
    } else {
        (i0, v, phi0)
    };
    let phi0 = phi0.rem_euclid(180.0);
    (i0, v, if phi0 >= 180.0 { 0.0 } else { phi0 })
}

/// Largest angular extent covered by the scan, measured on the 360-degree circle.
fn circular_span(scan: &PolarizationScan) -> f64 {
    let mut a: Vec<f64> = scan.points().iter().map(|p| p.angle_deg).collect();
    a.sort_by(f64::total_cmp);
    a.dedup();
    let mut largest_gap = 360.0 - (a[a.len() - 1] - a[0]);
    for w in a.windows(2) {
        largest_gap = f64::max(largest_gap, w[1] - w[0]);
    }
    360.0 - largest_gap
}

/// Polarization-diagram fit. `phi0` is reported modulo 180 degrees and flagged
/// undefined when the visibility is indistinguishable from zero.
pub fn fit_polarization(scan: &PolarizationScan) -> Result<FitResult> {
    let span = circular_span(scan);
    if span < 180.0 - 1e-9 {
        return Err(Error::InsufficientData(format!(
            "polarization scan spans {span:.1} deg, at least 180 deg is required"
        )));
    }
    let floor = RATE_WEIGHT_FLOOR * scan.points().iter().map(|p| p.intensity).fold(0.0, f64::max);
    let data: Vec<Observation> = scan
        .points()
        .iter()
        .map(|p| Observation::proportional(p.angle_deg, p.intensity, floor))
        .collect();

    let (imin, imax, argmax) = data.iter().fold(
        (f64::INFINITY, f64::NEG_INFINITY, 0.0),
        |(lo, hi, arg), o| {
            if o.y > hi {
                (lo.min(o.y), o.y, o.x)
            } else {
                (lo.min(o.y), hi, arg)
            }
        },
    );

    if imax <= 0.0 || imax - imin <= 1e-9 * imax {
        let mean = data.iter().map(|o| o.y).sum::<f64>() / data.len() as f64;
        let spread = (data.iter().map(|o| (o.y - mean).powi(2)).sum::<f64>()
            / (data.len() as f64 - 1.0))
            .sqrt();
        return Ok(isotropic_result(mean, spread / (data.len() as f64).sqrt(), &data));
    }

    let init = [imax, (imax - imin) / imax, argmax];
    let config = SolverConfig::default();
    let first = solve_least_squares(&PolarizationLaw, &data, &init, &config)?;
    let (i0, v, phi0) = canonical_polarization(first.value("I0"), first.value("V"), first.value("phi0"));
    let mut fit = solve_least_squares(&PolarizationLaw, &data, &[i0, v, phi0], &config)?;
    fit.iterations += first.iterations;

    let (i0, v, phi0) = canonical_polarization(fit.value("I0"), fit.value("V"), fit.value("phi0"));
    set_value(&mut fit, "I0", i0);
    set_value(&mut fit, "phi0", phi0);
    if v > 1.0 {
        set_value(&mut fit, "V", 1.0);
        fit.warnings.push(FitWarning::VisibilityClamped);
    } else {
        set_value(&mut fit, "V", v);
    }
    let v = fit.value("V");
    if v < 1e-9 || v <= 2.0 * fit.sigma("V") {
        fit.warnings.push(FitWarning::Phi0Undefined);
    }
    Ok(fit)
}

fn set_value(fit: &mut FitResult, name: &str, value: f64) {
    if let Some(p) = fit.parameters.iter_mut().find(|p| p.name == name) {
        p.value = value;
    }
}

fn isotropic_result(mean: f64, sigma_mean: f64, data: &[Observation]) -> FitResult {
    use super::solver::FitParameter;
    let residual_norm = data
        .iter()
        .map(|o| o.weight * (o.y - mean).powi(2))
        .sum::<f64>()
        .sqrt();
    FitResult {
        parameters: vec![
            FitParameter {
                name: "I0".into(),
                value: mean,
                sigma: sigma_mean,
            },
            FitParameter {
                name: "V".into(),
                value: 0.0,
                sigma: 0.0,
            },
            FitParameter {
                name: "phi0".into(),
                value: 0.0,
                sigma: f64::INFINITY,
            },
        ],
        residual_norm,
        initial_residual_norm: residual_norm,
        converged: true,
        iterations: 0,
        gradient_norm: 0.0,
        reduced_chi_square: residual_norm.powi(2) / (data.len() as f64 - 1.0).max(1.0),
        residual_history: vec![residual_norm],
        warnings: vec![FitWarning::Phi0Undefined],
    }
}

/// Local Gaussian refinement of a spectral peak over `(x, y)` samples.
pub fn fit_gaussian_peak(xs: &[f64], ys: &[f64], init: [f64; 4]) -> Result<FitResult> {
    let data: Vec<Observation> = xs
        .iter()
        .zip(ys)
        .map(|(&x, &y)| Observation::poisson(x, y))
        .collect();
    let mut fit = solve_least_squares(&GaussianPeak, &data, &init, &SolverConfig::default())?;
    let s = fit.value("sigma").abs();
    set_value(&mut fit, "sigma", s);
    Ok(fit)
}
