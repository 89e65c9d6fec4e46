//! Data densities of the observation panel under a (possibly truncated) log-normal mixture.
//!
//! With `ε_t = x_t ⊘ μ_t` the change of variables gives
//! `f(x_t) = Σ_j w_j logN_d(x_t; m_j + log μ_t, Σ_j)`, which is what these helpers compute.

use nalgebra::DVector;

use crate::error::{Result, VmemError};
use crate::kernels::{log_sum_exp, GaussianKernel, MixtureComponent};
use crate::model::{mean_recursion_into, MeanParams, SeriesMatrix};

/// Weighted log-normal mixture prepared for repeated evaluation.
#[derive(Debug, Clone)]
pub struct MixtureDensity {
    log_weights: Vec<f64>,
    kernels: Vec<GaussianKernel>,
}

impl MixtureDensity {
    /// Weights are used as given; a truncated mixture keeps its missing mass missing.
    pub fn new(weights: &[f64], components: &[MixtureComponent]) -> Result<Self> {
        if weights.len() != components.len() || weights.is_empty() {
            return Err(VmemError::Shape(format!(
                "{} weights for {} components",
                weights.len(),
                components.len()
            )));
        }
        let kernels = components
            .iter()
            .enumerate()
            .map(|(j, c)| {
                c.kernel().map_err(|e| VmemError::Cluster {
                    cluster: j,
                    source: Box::new(e),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(MixtureDensity {
            log_weights: weights.iter().map(|w| w.ln()).collect(),
            kernels,
        })
    }

    pub fn dim(&self) -> usize {
        self.kernels[0].dim()
    }

    /// Log density of `y = log ε` (Gaussian mixture, no Jacobian).
    pub fn log_density_log_scale(&self, y: &[f64], scratch: &mut Vec<f64>) -> f64 {
        scratch.clear();
        scratch.extend(
            self.log_weights
                .iter()
                .zip(&self.kernels)
                .map(|(lw, k)| lw + k.log_density(y)),
        );
        log_sum_exp(scratch)
    }

    /// Log density of a positive innovation vector `e`.
    pub fn log_density(&self, e: &[f64]) -> f64 {
        if e.iter().any(|v| !(*v > 0.0)) {
            return f64::NEG_INFINITY;
        }
        let y: Vec<f64> = e.iter().map(|v| v.ln()).collect();
        let jac: f64 = y.iter().sum();
        self.log_density_log_scale(&y, &mut Vec::new()) - jac
    }
}

/// Per-observation log densities `log f(x_t | η, mixture)`.
///
/// Returns `Err(NonPositiveMean)` if the recursion leaves the positive orthant.
pub fn observation_log_densities(
    eta: &MeanParams,
    mu1: &DVector<f64>,
    series: &SeriesMatrix,
    mixture: &MixtureDensity,
) -> Result<Vec<f64>> {
    let d = eta.dim();
    if series.dim() != d || mu1.len() != d || mixture.dim() != d {
        return Err(VmemError::Shape(format!(
            "d = {d}, series d = {}, initial mean length {}, mixture d = {}",
            series.dim(),
            mu1.len(),
            mixture.dim()
        )));
    }
    let mut means = Vec::new();
    if let Some(index) = mean_recursion_into(eta, series, mu1.as_slice(), &mut means) {
        return Err(VmemError::NonPositiveMean { index });
    }
    let mut y = vec![0.0; d];
    let mut scratch = Vec::new();
    Ok((0..series.len())
        .map(|t| {
            let x = series.row(t);
            let mu = &means[t * d..(t + 1) * d];
            let mut log_x = 0.0;
            for i in 0..d {
                let lx = x[i].ln();
                log_x += lx;
                y[i] = lx - mu[i].ln();
            }
            mixture.log_density_log_scale(&y, &mut scratch) - log_x
        })
        .collect())
}

/// `Σ_t log f(x_t)`, or `-inf` when a conditional mean is not positive.
pub fn series_log_likelihood(
    eta: &MeanParams,
    mu1: &DVector<f64>,
    series: &SeriesMatrix,
    mixture: &MixtureDensity,
) -> Result<f64> {
    match observation_log_densities(eta, mu1, series, mixture) {
        Ok(terms) => Ok(crate::kernels::compensated_sum(terms)),
        Err(VmemError::NonPositiveMean { .. }) => Ok(f64::NEG_INFINITY),
        Err(e) => Err(e),
    }
}
