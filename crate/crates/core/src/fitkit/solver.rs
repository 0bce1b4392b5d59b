//! Damped Gauss-Newton (Levenberg-Marquardt) weighted least squares.

use super::linalg::{invert_spd, solve_spd};
use crate::error::{Error, Result};

/// A parametric model `y = f(x; p)` with an analytic gradient in `p`.
pub trait FitModel {
    fn parameter_names(&self) -> &[&'static str];

    fn value(&self, x: f64, params: &[f64]) -> f64;

    /// Writes `df/dp_j` at `(x, params)` into `grad`.
    fn gradient(&self, x: f64, params: &[f64], grad: &mut [f64]);

    fn n_params(&self) -> usize {
        self.parameter_names().len()
    }
}

/// One data point with its statistical weight (inverse variance).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub x: f64,
    pub y: f64,
    pub weight: f64,
}

impl Observation {
    pub fn new(x: f64, y: f64, weight: f64) -> Self {
        Self { x, y, weight }
    }

    /// Photon-counting weight `1 / max(y, 1)`.
    pub fn poisson(x: f64, y: f64) -> Self {
        Self::new(x, y, 1.0 / y.max(1.0))
    }

    /// Shot-noise weight `1 / max(y, floor)` for data in arbitrary rate units.
    pub fn proportional(x: f64, y: f64, floor: f64) -> Self {
        Self::new(x, y, 1.0 / y.max(floor))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub max_iterations: usize,
    /// Bound on the scaled gradient `max_j |J_j . r| / (|J_j| |r|)`.
    pub gradient_tolerance: f64,
    /// Relative step size bound.
    pub step_tolerance: f64,
    pub initial_damping: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            gradient_tolerance: 1e-10,
            step_tolerance: 1e-12,
            initial_damping: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitParameter {
    pub name: String,
    pub value: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FitWarning {
    /// The data do not constrain the model well (e.g. no point near saturation).
    IllConditioned(String),
    /// Visibility too small for the polarization axis to mean anything.
    Phi0Undefined,
    /// Fitted visibility fell outside [0, 1] and was clamped.
    VisibilityClamped,
}

/// Estimated parameters with 1-sigma uncertainties and solver diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub parameters: Vec<FitParameter>,
    /// Weighted residual norm `sqrt(sum w r^2)` at the solution.
    pub residual_norm: f64,
    pub initial_residual_norm: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Scaled gradient at the solution.
    pub gradient_norm: f64,
    pub reduced_chi_square: f64,
    /// Residual norm after every accepted step, starting with the initial one.
    pub residual_history: Vec<f64>,
    pub warnings: Vec<FitWarning>,
}

impl FitResult {
    pub fn param(&self, name: &str) -> Option<&FitParameter> {
        self.parameters.iter().find(|p| p.name == name)
    }

    /// Value of a named parameter. Panics on unknown names.
    pub fn value(&self, name: &str) -> f64 {
        self.param(name)
            .unwrap_or_else(|| panic!("no fit parameter named {name}"))
            .value
    }

    pub fn sigma(&self, name: &str) -> f64 {
        self.param(name)
            .unwrap_or_else(|| panic!("no fit parameter named {name}"))
            .sigma
    }

    pub fn values(&self) -> Vec<f64> {
        self.parameters.iter().map(|p| p.value).collect()
    }

    pub fn has_warning(&self, w: &FitWarning) -> bool {
        self.warnings.contains(w)
    }
}

struct Linearization {
    cost: f64,
    /// Row-major normal matrix J^T W J.
    normal: Vec<f64>,
    /// J^T W r with r = y - f.
    gradient: Vec<f64>,
}

fn cost_at<M: FitModel + ?Sized>(model: &M, data: &[Observation], p: &[f64]) -> Option<f64> {
    let mut cost = 0.0;
    for o in data {
        let f = model.value(o.x, p);
        if !f.is_finite() {
            return None;
        }
        let r = o.y - f;
        cost += o.weight * r * r;
    }
    cost.is_finite().then_some(cost)
}

fn linearize<M: FitModel + ?Sized>(model: &M, data: &[Observation], p: &[f64]) -> Result<Linearization> {
    let n = p.len();
    let mut normal = vec![0.0; n * n];
    let mut gradient = vec![0.0; n];
    let mut grad = vec![0.0; n];
    let mut cost = 0.0;
    for o in data {
        let f = model.value(o.x, p);
        model.gradient(o.x, p, &mut grad);
        if !f.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Domain(format!(
                "model output not finite at x = {} with parameters {p:?}",
                o.x
            )));
        }
        let r = o.y - f;
        cost += o.weight * r * r;
        for i in 0..n {
            let wgi = o.weight * grad[i];
            gradient[i] += wgi * r;
            for j in 0..=i {
                normal[i * n + j] += wgi * grad[j];
            }
        }
    }
    for i in 0..n {
        for j in 0..i {
            normal[j * n + i] = normal[i * n + j];
        }
    }
    Ok(Linearization {
        cost,
        normal,
        gradient,
    })
}

fn scaled_gradient(lin: &Linearization, n: usize) -> f64 {
    let rnorm = lin.cost.sqrt();
    if rnorm == 0.0 {
        return 0.0;
    }
    (0..n)
        .map(|j| {
            let col = lin.normal[j * n + j].sqrt();
            if col == 0.0 {
                0.0
            } else {
                lin.gradient[j].abs() / (col * rnorm)
            }
        })
        .fold(0.0, f64::max)
}

/// Fit `model` to `data` starting from `init`.
///
/// Accepted steps never increase the weighted residual. The fit reports
/// `converged` when the scaled gradient falls below the tolerance, or when
/// the residual is at the rounding floor of the data (exact fits).
pub fn solve_least_squares<M: FitModel + ?Sized>(
    model: &M,
    data: &[Observation],
    init: &[f64],
    config: &SolverConfig,
) -> Result<FitResult> {
    let n = model.n_params();
    if init.len() != n {
        return Err(Error::Config(format!(
            "model has {n} parameters but {} initial values were given",
            init.len()
        )));
    }
    if data.len() < n {
        return Err(Error::InsufficientData(format!(
            "{} data points for {n} parameters",
            data.len()
        )));
    }
    if let Some(o) = data.iter().find(|o| !(o.weight > 0.0 && o.weight.is_finite())) {
        return Err(Error::Domain(format!("weight must be positive, got {}", o.weight)));
    }
    if data.iter().any(|o| !o.x.is_finite() || !o.y.is_finite()) {
        return Err(Error::Domain("data contain non-finite values".into()));
    }

    // Residuals this small relative to the data are rounding noise.
    let data_norm = data.iter().map(|o| o.weight * o.y * o.y).sum::<f64>().sqrt();
    let exact_floor = 1e-10 * data_norm.max(f64::MIN_POSITIVE);

    let mut p = init.to_vec();
    let mut lin = linearize(model, data, &p)?;
    let initial_residual_norm = lin.cost.sqrt();
    let mut history = vec![initial_residual_norm];
    let mut lambda = config.initial_damping;
    let mut iterations = 0;

    while iterations < config.max_iterations {
        if scaled_gradient(&lin, n) <= config.gradient_tolerance || lin.cost.sqrt() <= exact_floor {
            break;
        }
        iterations += 1;

        let mut accepted = None;
        while lambda < 1e16 {
            let mut damped = lin.normal.clone();
            for j in 0..n {
                let d = lin.normal[j * n + j].max(1e-300);
                damped[j * n + j] += lambda * d;
            }
            let step = match solve_spd(&damped, n, &lin.gradient) {
                Some(s) if s.iter().all(|v| v.is_finite()) => s,
                _ => {
                    lambda *= 10.0;
                    continue;
                }
            };
            let trial: Vec<f64> = p.iter().zip(&step).map(|(a, b)| a + b).collect();
            match cost_at(model, data, &trial) {
                Some(c) if c <= lin.cost => {
                    accepted = Some((trial, step, c));
                    break;
                }
                _ => lambda *= 10.0,
            }
        }

        let Some((trial, step, trial_cost)) = accepted else {
            break;
        };
        lambda = (lambda * 0.1).max(1e-15);
        let step_norm = step.iter().map(|s| s * s).sum::<f64>().sqrt();
        let p_norm = p.iter().map(|s| s * s).sum::<f64>().sqrt();
        let no_progress = trial_cost == lin.cost;
        p = trial;
        lin = linearize(model, data, &p)?;
        history.push(lin.cost.sqrt());
        if step_norm <= config.step_tolerance * (p_norm + config.step_tolerance) || no_progress {
            break;
        }
    }

    let gradient_norm = scaled_gradient(&lin, n);
    let residual_norm = lin.cost.sqrt();
    let converged = gradient_norm <= config.gradient_tolerance || residual_norm <= exact_floor;

    let covariance = invert_spd(&lin.normal, n).ok_or_else(|| {
        Error::DegenerateFit(format!(
            "normal matrix is singular at parameters {p:?}; the data do not determine every parameter"
        ))
    })?;
    let dof = data.len() - n;
    let reduced_chi_square = if dof > 0 { lin.cost / dof as f64 } else { 1.0 };
    let scale = if dof > 0 { reduced_chi_square } else { 1.0 };

    let parameters = model
        .parameter_names()
        .iter()
        .zip(&p)
        .enumerate()
        .map(|(j, (name, &value))| FitParameter {
            name: (*name).to_string(),
            value,
            sigma: (covariance[j * n + j] * scale).max(0.0).sqrt(),
        })
        .collect();

    Ok(FitResult {
        parameters,
        residual_norm,
        initial_residual_norm,
        converged,
        iterations,
        gradient_norm,
        reduced_chi_square,
        residual_history: history,
        warnings: Vec::new(),
    })
}
