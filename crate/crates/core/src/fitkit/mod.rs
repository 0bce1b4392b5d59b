//! Weighted nonlinear least squares and the fit models applied to measurements.

mod linalg;
mod models;
mod solver;

pub use models::{
    fit_exponential_decay, fit_exponential_decay_with, fit_gaussian_peak, fit_polarization,
    fit_saturation, ExponentialDecay, GaussianPeak, PolarizationLaw, SaturationLaw,
};
pub use solver::{
    solve_least_squares, FitModel, FitParameter, FitResult, FitWarning, Observation, SolverConfig,
};

use crate::error::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Pairs-bootstrap standard deviations of the parameters returned by `fit`.
///
/// Resamples that fail to fit are skipped; at least two must succeed.
pub fn bootstrap_sigmas<T, F>(items: &[T], resamples: usize, seed: u64, fit: F) -> Result<Vec<f64>>
where
    T: Clone,
    F: Fn(&[T]) -> Result<Vec<f64>>,
{
    if items.is_empty() || resamples < 2 {
        return Err(Error::InsufficientData("bootstrap needs data and at least 2 resamples".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draws: Vec<Vec<f64>> = Vec::with_capacity(resamples);
    let mut sample = Vec::with_capacity(items.len());
    for _ in 0..resamples {
        sample.clear();
        sample.extend((0..items.len()).map(|_| items[rng.random_range(0..items.len())].clone()));
        if let Ok(p) = fit(&sample) {
            draws.push(p);
        }
    }
    if draws.len() < 2 {
        return Err(Error::DegenerateFit("fewer than two bootstrap resamples could be fitted".into()));
    }
    let n = draws[0].len();
    let m = draws.len() as f64;
    Ok((0..n)
        .map(|j| {
            let mean = draws.iter().map(|d| d[j]).sum::<f64>() / m;
            (draws.iter().map(|d| (d[j] - mean).powi(2)).sum::<f64>() / (m - 1.0)).sqrt()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bootstrap_of_mean() {
        let xs: Vec<f64> = (0..200).map(|i| (i % 10) as f64).collect();
        let s = bootstrap_sigmas(&xs, 400, 3, |d| Ok(vec![d.iter().sum::<f64>() / d.len() as f64])).unwrap();
        // population std 2.87, standard error 0.203
        assert!((s[0] - 0.203).abs() < 0.03, "{}", s[0]);
        let again = bootstrap_sigmas(&xs, 400, 3, |d| Ok(vec![d.iter().sum::<f64>() / d.len() as f64])).unwrap();
        assert_eq!(s, again);
    }
}
