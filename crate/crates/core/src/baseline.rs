//! Parametric comparator: the vMEM with a single unit-mean log-normal innovation,
//! `ε ~ logN(−diag(Σ)/2, Σ)`, fit by maximum a posteriori.
//!
//! The search runs over `θ = (η, vech L)` where `Σ = L Lᵀ` and the diagonal of `L`
//! is stored on the log scale. Standard errors come from the inverse of the
//! finite-difference Hessian of the log posterior at the mode.

use log::warn;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, VmemError};
use crate::evaluation::{lpml, lps};
use crate::kernels::{
    compensated_sum, isotropic_normal_log_density, pd_cholesky, pd_inverse, symmetrize,
    wishart_log_density, GaussianKernel, MixtureComponent, NwHyper,
};
use crate::model::{mean_recursion_into, MeanParams, SeriesMatrix};
use crate::optim::{hessian, minimize, SearchOptions};
use crate::postprocess::{IdentifiedDraw, TruncationReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ln1Config {
    pub nw_hyper: NwHyper,
    pub eta_prior_variance: f64,
    /// Number of starts; the first is the moment-based start, the rest are jittered.
    pub starts: usize,
    pub seed: u64,
    pub initial_mean: Option<Vec<f64>>,
    pub tolerance: f64,
    pub max_evaluations: usize,
}

impl Ln1Config {
    pub fn new(d: usize, seed: u64) -> Self {
        Ln1Config {
            nw_hyper: NwHyper::default_for_dim(d),
            eta_prior_variance: 20.0,
            starts: 5,
            seed,
            initial_mean: None,
            tolerance: 1e-8,
            max_evaluations: 400_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ln1Fit {
    pub eta: MeanParams,
    pub sigma: DMatrix<f64>,
    pub log_posterior: f64,
    /// Standard errors of `η` in `MeanParams::to_vec` order.
    pub std_errors: Vec<f64>,
    /// Laplace covariance of `η` (inverse negative Hessian block).
    pub eta_covariance: DMatrix<f64>,
    pub initial_mean: DVector<f64>,
    /// Whether the negative Hessian had to be lifted to positive definiteness.
    #[serde(default)]
    pub hessian_regularized: bool,
}

impl Ln1Fit {
    /// The fitted innovation law `logN(−diag(Σ)/2, Σ)`.
    pub fn innovation(&self) -> Result<MixtureComponent> {
        unit_mean_component(&self.sigma)
    }

    /// The fit as a single-component identified draw.
    pub fn as_draw(&self) -> Result<IdentifiedDraw> {
        let d = self.eta.dim();
        Ok(IdentifiedDraw {
            eta: self.eta.clone(),
            initial_mean: self.initial_mean.clone(),
            weights: vec![1.0],
            components: vec![self.innovation()?],
            mixture_mean: DVector::from_element(d, 1.0),
            truncation: TruncationReport {
                k: 1,
                residual_mass: 0.0,
            },
            active_components: 1,
            instantiated_components: 1,
        })
    }
}

pub fn unit_mean_component(sigma: &DMatrix<f64>) -> Result<MixtureComponent> {
    MixtureComponent::new(-sigma.diagonal() * 0.5, sigma.clone())
}

/// `Σ_t log logN_d(x_t; −diag(Σ)/2 + log μ_t, Σ)`; `-inf` if some `μ_t` is not positive.
pub fn ln1_loglik(
    eta: &MeanParams,
    sigma: &DMatrix<f64>,
    series: &SeriesMatrix,
    mu1: &[f64],
) -> Result<f64> {
    let kernel = GaussianKernel::new(&(-sigma.diagonal() * 0.5), sigma)?;
    let mut means = Vec::new();
    Ok(loglik_with(eta, &kernel, series, mu1, &mut means))
}

fn loglik_with(
    eta: &MeanParams,
    kernel: &GaussianKernel,
    series: &SeriesMatrix,
    mu1: &[f64],
    means: &mut Vec<f64>,
) -> f64 {
    if mean_recursion_into(eta, series, mu1, means).is_some() {
        return f64::NEG_INFINITY;
    }
    let d = series.dim();
    let mut y = vec![0.0; d];
    let terms = (0..series.len()).map(|t| {
        let x = series.row(t);
        let mut log_x = 0.0;
        for i in 0..d {
            let lx = x[i].ln();
            log_x += lx;
            y[i] = lx - means[t * d + i].ln();
        }
        kernel.log_density(&y) - log_x
    });
    compensated_sum(terms)
}

fn vech_len(d: usize) -> usize {
    d * (d + 1) / 2
}

/// Lower Cholesky factor from its row-major packed form with log diagonal.
fn unpack_chol(d: usize, packed: &[f64]) -> DMatrix<f64> {
    let mut l = DMatrix::zeros(d, d);
    let mut k = 0;
    for i in 0..d {
        for j in 0..=i {
            l[(i, j)] = if i == j { packed[k].exp() } else { packed[k] };
            k += 1;
        }
    }
    l
}

fn pack_chol(l: &DMatrix<f64>) -> Vec<f64> {
    let d = l.nrows();
    let mut out = Vec::with_capacity(vech_len(d));
    for i in 0..d {
        for j in 0..=i {
            out.push(if i == j { l[(i, j)].ln() } else { l[(i, j)] });
        }
    }
    out
}

/// Log posterior of the LN1 model up to a constant.
pub struct Ln1Posterior<'a> {
    series: &'a SeriesMatrix,
    mu1: Vec<f64>,
    hyper: NwHyper,
    eta_prior_variance: f64,
}

impl<'a> Ln1Posterior<'a> {
    pub fn new(series: &'a SeriesMatrix, mu1: Vec<f64>, config: &Ln1Config) -> Result<Self> {
        let d = series.dim();
        if mu1.len() != d || config.nw_hyper.dim() != d {
            return Err(VmemError::Shape(format!(
                "series d = {d}, initial mean length {}, prior d = {}",
                mu1.len(),
                config.nw_hyper.dim()
            )));
        }
        config.nw_hyper.validate()?;
        Ok(Ln1Posterior {
            series,
            mu1,
            hyper: config.nw_hyper.clone(),
            eta_prior_variance: config.eta_prior_variance,
        })
    }

    /// Log posterior at `(η, Σ)`.
    pub fn log_posterior(&self, eta: &MeanParams, sigma: &DMatrix<f64>) -> f64 {
        let Ok(kernel) = GaussianKernel::new(&(-sigma.diagonal() * 0.5), sigma) else {
            return f64::NEG_INFINITY;
        };
        let Ok(precision) = pd_inverse(sigma) else {
            return f64::NEG_INFINITY;
        };
        let Ok(prior_sigma) =
            wishart_log_density(&precision, self.hyper.degrees, &self.hyper.scale_matrix)
        else {
            return f64::NEG_INFINITY;
        };
        let ll = loglik_with(eta, &kernel, self.series, &self.mu1, &mut Vec::new());
        ll + isotropic_normal_log_density(&eta.to_vec(), self.eta_prior_variance) + prior_sigma
    }

    fn split(&self, theta: &[f64]) -> Option<(MeanParams, DMatrix<f64>)> {
        let d = self.series.dim();
        let m = MeanParams::param_count(d);
        let eta = MeanParams::from_slice(d, &theta[..m]).ok()?;
        let l = unpack_chol(d, &theta[m..]);
        Some((eta, &l * l.transpose()))
    }

    pub fn at_theta(&self, theta: &[f64]) -> f64 {
        match self.split(theta) {
            Some((eta, sigma)) => self.log_posterior(&eta, &sigma),
            None => f64::NEG_INFINITY,
        }
    }

    fn theta(eta: &MeanParams, sigma: &DMatrix<f64>) -> Result<Vec<f64>> {
        let l = pd_cholesky(sigma)?.unpack();
        let mut theta = eta.to_vec();
        theta.extend(pack_chol(&l));
        Ok(theta)
    }
}

/// Moment-based start: `B = 0.4 I`, `A = 0.3 I`, `ω = (I − B − A) x̄`, and `Σ` the
/// covariance of the implied log residuals.
pub fn moment_start(series: &SeriesMatrix, mu1: &[f64]) -> Result<(MeanParams, DMatrix<f64>)> {
    let d = series.dim();
    let b = DMatrix::identity(d, d) * 0.4;
    let a = DMatrix::identity(d, d) * 0.3;
    let omega = series.sample_mean() * 0.3;
    let eta = MeanParams::new(omega, b, a)?;
    let mut means = Vec::new();
    if let Some(index) = mean_recursion_into(&eta, series, mu1, &mut means) {
        return Err(VmemError::NonPositiveMean { index }.context("moment start"));
    }
    let t_len = series.len();
    let mut resid = DMatrix::zeros(t_len, d);
    for t in 0..t_len {
        for i in 0..d {
            resid[(t, i)] = (series.row(t)[i] / means[t * d + i]).ln();
        }
    }
    let mean = resid.row_mean();
    let centered = DMatrix::from_fn(t_len, d, |t, i| resid[(t, i)] - mean[i]);
    let cov =
        centered.transpose() * &centered / (t_len as f64 - 1.0) + DMatrix::identity(d, d) * 1e-6;
    Ok((eta, cov))
}

/// MAP fit with multiple jittered starts run concurrently; the best mode is kept.
pub fn ln1_map(series: &SeriesMatrix, config: &Ln1Config) -> Result<Ln1Fit> {
    let d = series.dim();
    let mu1: Vec<f64> = match &config.initial_mean {
        Some(m) => m.clone(),
        None => series.sample_mean().as_slice().to_vec(),
    };
    let post = Ln1Posterior::new(series, mu1.clone(), config)?;
    let (eta0, sigma0) = moment_start(series, &mu1)?;
    let theta0 = Ln1Posterior::theta(&eta0, &sigma0)?;
    let m = MeanParams::param_count(d);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut starts = vec![theta0.clone()];
    let mut attempts = 0;
    while starts.len() < config.starts.max(1) && attempts < 100 * config.starts.max(1) {
        attempts += 1;
        let mut theta = theta0.clone();
        for v in theta[d..m].iter_mut() {
            *v = (*v * (1.0 + 0.5 * rng.random_range(-1.0..1.0))).max(0.0);
        }
        for v in theta[m..].iter_mut() {
            *v += 0.1 * rng.random_range(-1.0..1.0);
        }
        let (eta, _) = post.split(&theta).expect("lengths agree");
        // keep ω on the implied stationary level
        let persistence = &eta.b + &eta.a;
        let omega = (DMatrix::identity(d, d) - persistence) * series.sample_mean();
        theta[..d].copy_from_slice(omega.as_slice());
        if post.at_theta(&theta).is_finite() {
            starts.push(theta);
        }
    }
    let opts = SearchOptions {
        tolerance: config.tolerance,
        max_evaluations: config.max_evaluations,
        initial_step: 0.05,
    };
    let results: Vec<_> = std::thread::scope(|scope| {
        let handles: Vec<_> = starts
            .iter()
            .map(|start| {
                let post = &post;
                scope.spawn(move || minimize(|th| -post.at_theta(th), start, opts))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("optimiser thread panicked"))
            .collect()
    });
    let best = results
        .into_iter()
        .filter(|r| r.value.is_finite())
        .min_by(|a, b| a.value.total_cmp(&b.value))
        .ok_or_else(|| {
            VmemError::Fit(
                "every LN1 start produced a non-positive conditional mean; try a different initial mean"
                    .into(),
            )
        })?;
    let (eta, sigma) = post.split(&best.x).expect("lengths agree");
    let (eta_covariance, hessian_regularized) = laplace_covariance(&post, &best.x, m)?;
    if hessian_regularized {
        warn!("LN1 negative Hessian is not positive definite at the mode; standard errors use a clipped spectrum");
    }
    let std_errors = eta_covariance.diagonal().iter().map(|v| v.sqrt()).collect();
    Ok(Ln1Fit {
        eta,
        sigma,
        log_posterior: -best.value,
        std_errors,
        eta_covariance,
        initial_mean: DVector::from_vec(mu1),
        hessian_regularized,
    })
}

fn laplace_covariance(
    post: &Ln1Posterior<'_>,
    theta: &[f64],
    m: usize,
) -> Result<(DMatrix<f64>, bool)> {
    let h = hessian(|th| -post.at_theta(th), theta, 1e-4);
    let n = theta.len();
    let info = DMatrix::from_fn(n, n, |i, j| h[i][j]);
    let (cov, regularized) = invert_information(&info)?;
    Ok((cov.view((0, 0), (m, m)).into_owned(), regularized))
}

/// Inverse of a symmetric information matrix. When it is not positive definite
/// the eigenvalues are floored at `1e-8·max(λ_max, 1)` first, and the flag is set.
pub fn invert_information(info: &DMatrix<f64>) -> Result<(DMatrix<f64>, bool)> {
    if info.iter().any(|v| !v.is_finite()) {
        return Err(VmemError::Fit(
            "log-posterior Hessian has non-finite entries at the mode".into(),
        ));
    }
    let sym = symmetrize(info);
    if let Ok(cov) = pd_inverse(&sym) {
        return Ok((cov, false));
    }
    let eig = SymmetricEigen::new(sym);
    let floor = 1e-8 * eig.eigenvalues.max().max(1.0);
    let inv = eig.eigenvalues.map(|l| 1.0 / l.max(floor));
    let cov = &eig.eigenvectors * DMatrix::from_diagonal(&inv) * eig.eigenvectors.transpose();
    Ok((symmetrize(&cov), true))
}

pub fn ln1_lps(fit: &Ln1Fit, series: &SeriesMatrix) -> Result<f64> {
    lps(&[fit.as_draw()?], series)
}

/// LPML over a collection of LN1 fits treated as posterior draws.
pub fn ln1_lpml(fits: &[Ln1Fit], series: &SeriesMatrix) -> Result<f64> {
    let draws = fits
        .iter()
        .map(Ln1Fit::as_draw)
        .collect::<Result<Vec<_>>>()?;
    lpml(&draws, series)
}
