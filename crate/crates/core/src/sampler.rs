//! Parameter-expanded slice sampler for the vMEM with Dirichlet-process log-normal
//! mixture innovations.
//!
//! The chain targets the unconstrained (parameter-expanded) model; every sweep
//!
//! 1. redraws slices `u_t ~ U(0, ξ(l_t))`,
//! 2. redraws the sticks in use from `Beta(1 + n_j, α + g_j)`,
//! 3. redraws `(m_j, Σ_j)` from their Normal–Wishart full conditionals on
//!    `y_t = log(x_t ⊘ μ_t)`,
//! 4. redraws labels over the finite candidate set `{k : ξ(k) > u_t}`,
//! 5. takes one adaptive random-walk Metropolis step on `η = vec([ω, B, A])`,
//! 6. post-processes the state to the identified model and feeds the identified
//!    `η` to the proposal adaptation.
//!
//! Labels are stored 0-based; `ξ` and the candidate bound use 1-based indices.
//! Sticks and components beyond the largest label are dropped at the start of each
//! sweep and redrawn from the prior when a later step needs them.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, VmemError};
use crate::kernels::{
    isotropic_normal_log_density, log_sum_exp, normal_wishart_posterior, normal_wishart_sample,
    pd_cholesky, sample_open_unit, symmetrize, GaussianKernel, MixtureComponent, NwHyper,
    StickState,
};
use crate::model::{mean_recursion_into, MeanParams, RowMatrix, SeriesMatrix};
use crate::postprocess::{eta_scaling, identify, truncation_level, IdentifiedDraw};

/// Floor added to the adapted proposal covariance.
pub const ADAPT_JITTER: f64 = 1e-6;

/// `ξ(k) = (1/α)(2α/(3+3α))^k` for a 1-based component index `k`.
pub fn xi(k: usize, alpha: f64) -> f64 {
    (xi_ratio(alpha).ln() * k as f64).exp() / alpha
}

fn xi_ratio(alpha: f64) -> f64 {
    2.0 * alpha / (3.0 + 3.0 * alpha)
}

/// `⌊log_{2α/(3+3α)}(α u)⌋`: labels above this bound have `ξ(k) ≤ u`.
pub fn label_bound(u: f64, alpha: f64) -> usize {
    let v = (alpha * u).ln() / xi_ratio(alpha).ln();
    if v.is_finite() {
        v.floor().max(0.0) as usize
    } else {
        usize::MAX
    }
}

/// Two-scale random-walk proposal constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProposalConfig {
    /// Probability of using the first scale.
    pub weight: f64,
    pub scale1: f64,
    pub scale2: f64,
}

impl Default for ProposalConfig {
    fn default() -> Self {
        ProposalConfig {
            weight: 0.9,
            scale1: 1.0,
            scale2: 21f64.sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    /// DP concentration `α`.
    pub alpha: f64,
    /// Residual stick mass tolerance for the mixture-mean truncation.
    pub eps_mean_trunc: f64,
    pub nw_hyper: NwHyper,
    /// Variance of the isotropic normal prior on `η`.
    pub eta_prior_variance: f64,
    pub proposal: ProposalConfig,
    pub seed: u64,
    /// Initial conditional mean; the sample mean of the series when absent.
    pub initial_mean: Option<Vec<f64>>,
    /// Optional starting guess for the identified-`η` covariance, entered into the
    /// adaptation as `weight` pseudo-draws centred at the initial `η`.
    pub adapt_seed: Option<AdaptSeed>,
    /// Metropolis updates of `η` per sweep.
    pub eta_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptSeed {
    pub covariance: DMatrix<f64>,
    pub weight: usize,
}

impl SamplerConfig {
    pub fn new(d: usize, seed: u64) -> Self {
        SamplerConfig {
            iterations: 30_000,
            burn_in: 5_000,
            thin: 10,
            alpha: 1.0,
            eps_mean_trunc: 1e-6,
            nw_hyper: NwHyper::default_for_dim(d),
            eta_prior_variance: 20.0,
            proposal: ProposalConfig::default(),
            seed,
            initial_mean: None,
            adapt_seed: None,
            eta_steps: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.burn_in >= self.iterations {
            return Err(VmemError::Config(format!(
                "burn-in {} must be below the iteration count {}",
                self.burn_in, self.iterations
            )));
        }
        if self.eta_steps == 0 {
            return Err(VmemError::Config("eta_steps must be at least 1".into()));
        }
        if self.thin == 0 {
            return Err(VmemError::Config("thin must be at least 1".into()));
        }
        if !(self.alpha > 0.0) {
            return Err(VmemError::Config(format!(
                "alpha = {} must be positive",
                self.alpha
            )));
        }
        if !(self.eps_mean_trunc > 0.0 && self.eps_mean_trunc < 1.0) {
            return Err(VmemError::Config(format!(
                "mean truncation tolerance {} outside (0, 1)",
                self.eps_mean_trunc
            )));
        }
        if !(self.eta_prior_variance > 0.0) {
            return Err(VmemError::Config(
                "eta prior variance must be positive".into(),
            ));
        }
        if let Some(seed) = &self.adapt_seed {
            let m = self.nw_hyper.dim() * (1 + 2 * self.nw_hyper.dim());
            if seed.covariance.nrows() != m || seed.covariance.ncols() != m || seed.weight < 2 {
                return Err(VmemError::Config(format!(
                    "adaptation seed must be {m}x{m} with weight at least 2"
                )));
            }
        }
        let p = &self.proposal;
        if !(p.weight >= 0.0 && p.weight <= 1.0 && p.scale1 >= 0.0 && p.scale2 >= 0.0) {
            return Err(VmemError::Config(format!(
                "invalid proposal constants {p:?}"
            )));
        }
        self.nw_hyper.validate()
    }

    /// Number of snapshots [`run`] emits.
    pub fn retained_draws(&self) -> usize {
        (self.burn_in + 1..=self.iterations)
            .filter(|it| (it - self.burn_in) % self.thin == 0)
            .count()
    }
}

/// Running moments of the post-processed `η` draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptState {
    pub running_mean: DVector<f64>,
    /// `Σ (η_i − mean)(η_i − mean)ᵀ`, updated one draw at a time.
    pub running_scatter: DMatrix<f64>,
    pub count: usize,
    pub mixture_weight: f64,
    pub scale1: f64,
    pub scale2: f64,
}

impl AdaptState {
    pub fn new(m: usize, proposal: ProposalConfig) -> Self {
        AdaptState {
            running_mean: DVector::zeros(m),
            running_scatter: DMatrix::zeros(m, m),
            count: 0,
            mixture_weight: proposal.weight,
            scale1: proposal.scale1,
            scale2: proposal.scale2,
        }
    }

    /// Start from `weight` pseudo-draws with mean `eta` and covariance `cov`.
    pub fn seeded(eta: &[f64], seed: &AdaptSeed, proposal: ProposalConfig) -> Self {
        let mut adapt = AdaptState::new(eta.len(), proposal);
        adapt.running_mean = DVector::from_column_slice(eta);
        adapt.running_scatter = symmetrize(&seed.covariance) * (seed.weight - 1) as f64;
        adapt.count = seed.weight;
        adapt
    }

    /// Empirical covariance `Σ̂_n`, once at least two draws have been seen.
    pub fn covariance(&self) -> Option<DMatrix<f64>> {
        (self.count >= 2).then(|| &self.running_scatter / (self.count - 1) as f64)
    }
}

/// Recursive mean/scatter update with one post-processed `η` draw.
pub fn update_adaptation(adapt: &mut AdaptState, eta: &[f64]) {
    let x = DVector::from_column_slice(eta);
    adapt.count += 1;
    let delta = &x - &adapt.running_mean;
    adapt.running_mean += &delta / adapt.count as f64;
    let delta2 = &x - &adapt.running_mean;
    adapt.running_scatter += &delta * delta2.transpose();
    // keep exact symmetry
    adapt.running_scatter = (&adapt.running_scatter + adapt.running_scatter.transpose()) * 0.5;
}

/// `Λ_n = Σ̂_n ⊘ C + 10⁻⁶ I` with `C = c cᵀ` and `c` the identification scaling at `m̄`.
pub fn proposal_cov(adapt: &AdaptState, mbar: &DVector<f64>) -> DMatrix<f64> {
    let m = adapt.running_mean.len();
    let jitter = DMatrix::identity(m, m) * ADAPT_JITTER;
    match adapt.covariance() {
        None => jitter,
        Some(cov) => {
            let c = eta_scaling(mbar);
            DMatrix::from_fn(m, m, |i, j| cov[(i, j)] / (c[i] * c[j])) + jitter
        }
    }
}

/// Metropolis acceptance for a symmetric proposal.
pub fn metropolis_accept<R: Rng + ?Sized>(log_ratio: f64, rng: &mut R) -> bool {
    if log_ratio.is_nan() {
        return false;
    }
    if log_ratio >= 0.0 {
        return true;
    }
    let u: f64 = rng.random();
    u.ln() < log_ratio
}

/// Full state of one chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainState {
    pub eta: MeanParams,
    /// Initial conditional mean of the expanded model (fixed for the run).
    pub mu1: DVector<f64>,
    pub sticks: StickState,
    pub components: Vec<MixtureComponent>,
    /// 0-based component labels.
    pub labels: Vec<usize>,
    pub slices: Vec<f64>,
    pub adapt: AdaptState,
    pub iteration: usize,
    pub accepted: usize,
}

impl ChainState {
    pub fn max_label(&self) -> usize {
        self.labels.iter().copied().max().unwrap_or(0)
    }

    pub fn active_components(&self) -> usize {
        let mut seen = vec![false; self.max_label() + 1];
        for &l in &self.labels {
            seen[l] = true;
        }
        seen.iter().filter(|s| **s).count()
    }

    /// Per-component counts `n_j` for `j ≤ max label`.
    pub fn label_counts(&self) -> Vec<usize> {
        let mut n = vec![0usize; self.max_label() + 1];
        for &l in &self.labels {
            n[l] += 1;
        }
        n
    }
}

/// Starting `η` when no parametric fit is available: `ω = 0.1·x̄`, `B = 0.4 I`, `A = 0.3 I`.
pub fn fallback_eta(series: &SeriesMatrix) -> MeanParams {
    let d = series.dim();
    MeanParams {
        omega: series.sample_mean() * 0.1,
        b: DMatrix::identity(d, d) * 0.4,
        a: DMatrix::identity(d, d) * 0.3,
    }
}

/// Executes sweeps on one chain.
pub struct Sampler<'a> {
    config: SamplerConfig,
    series: &'a SeriesMatrix,
    log_x: RowMatrix,
    state: ChainState,
    kernels: Vec<GaussianKernel>,
    /// `y_t = log x_t − log μ_t(η)` under the current `η`.
    log_resid: Vec<f64>,
    mean_buf: Vec<f64>,
    prop_resid: Vec<f64>,
    mbar: DVector<f64>,
    rng: ChaCha8Rng,
}

impl<'a> Sampler<'a> {
    /// Start a chain with every observation in one cluster.
    pub fn new(
        config: SamplerConfig,
        series: &'a SeriesMatrix,
        eta_init: MeanParams,
    ) -> Result<Self> {
        config.validate()?;
        let d = series.dim();
        if eta_init.dim() != d || config.nw_hyper.dim() != d {
            return Err(VmemError::Shape(format!(
                "series d = {d}, eta d = {}, prior d = {}",
                eta_init.dim(),
                config.nw_hyper.dim()
            )));
        }
        let mu1 = match &config.initial_mean {
            Some(m) if m.len() == d => DVector::from_column_slice(m),
            Some(m) => {
                return Err(VmemError::Config(format!(
                    "initial mean has length {}, expected {d}",
                    m.len()
                )))
            }
            None => series.sample_mean(),
        };
        let m = MeanParams::param_count(d);
        let adapt = match &config.adapt_seed {
            Some(seed) => AdaptState::seeded(&eta_init.to_vec(), seed, config.proposal),
            None => AdaptState::new(m, config.proposal),
        };
        let state = ChainState {
            eta: eta_init,
            mu1,
            sticks: StickState::new(config.alpha),
            components: Vec::new(),
            labels: vec![0; series.len()],
            slices: vec![0.0; series.len()],
            adapt,
            iteration: 0,
            accepted: 0,
        };
        let mut sampler = Self::from_state(config, series, state)?;
        sampler.step_sticks();
        sampler.step_components()?;
        sampler.step_slices();
        Ok(sampler)
    }

    /// Resume from an explicit state. Fails if `η` gives a non-positive mean.
    pub fn from_state(
        config: SamplerConfig,
        series: &'a SeriesMatrix,
        state: ChainState,
    ) -> Result<Self> {
        config.validate()?;
        let d = series.dim();
        if state.labels.len() != series.len() || state.slices.len() != series.len() {
            return Err(VmemError::Shape(
                "labels/slices do not match the series length".into(),
            ));
        }
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut sampler = Sampler {
            log_x: series.log_values(),
            series,
            kernels: Vec::new(),
            log_resid: Vec::new(),
            mean_buf: Vec::new(),
            prop_resid: Vec::new(),
            mbar: DVector::from_element(d, 1.0),
            rng,
            config,
            state,
        };
        let eta = sampler.state.eta.clone();
        let mut resid = Vec::new();
        if let Some(index) = sampler.log_residuals_into(&eta, &mut resid) {
            return Err(
                VmemError::NonPositiveMean { index }.context("initial eta of the slice sampler")
            );
        }
        sampler.log_resid = resid;
        sampler.kernels = sampler
            .state
            .components
            .iter()
            .map(|c| c.kernel())
            .collect::<Result<_>>()?;
        Ok(sampler)
    }

    pub fn state(&self) -> &ChainState {
        &self.state
    }

    pub fn config(&self) -> &SamplerConfig {
        &self.config
    }

    pub fn into_state(self) -> ChainState {
        self.state
    }

    /// Current `y_t` rows (row-major `T·d`).
    pub fn log_residuals(&self) -> &[f64] {
        &self.log_resid
    }

    /// Mixture mean from the most recent post-processing step.
    pub fn current_mixture_mean(&self) -> &DVector<f64> {
        &self.mbar
    }

    pub fn rng_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    fn dim(&self) -> usize {
        self.series.dim()
    }

    /// Fills `out` with `log x_t − log μ_t(η)`; returns the first non-positive mean index.
    fn log_residuals_into(&mut self, eta: &MeanParams, out: &mut Vec<f64>) -> Option<usize> {
        let mu1 = self.state.mu1.clone();
        if let Some(bad) = mean_recursion_into(eta, self.series, mu1.as_slice(), &mut self.mean_buf)
        {
            return Some(bad);
        }
        out.clear();
        out.extend(
            self.log_x
                .as_slice()
                .iter()
                .zip(&self.mean_buf)
                .map(|(lx, mu)| lx - mu.ln()),
        );
        None
    }

    fn push_prior_component(&mut self) -> Result<()> {
        let c = normal_wishart_sample(&self.config.nw_hyper, &mut self.rng)?;
        self.kernels.push(c.kernel()?);
        self.state.components.push(c);
        Ok(())
    }

    /// Make sure sticks and components exist for the first `n` indices.
    pub fn ensure_instantiated(&mut self, n: usize) -> Result<()> {
        while self.state.sticks.len() < n {
            self.state.sticks.push_prior(&mut self.rng);
        }
        while self.state.components.len() < n {
            self.push_prior_component()?;
        }
        Ok(())
    }

    /// `u_t ~ U(0, ξ(l_t))`.
    pub fn step_slices(&mut self) {
        let alpha = self.config.alpha;
        for (u, &l) in self.state.slices.iter_mut().zip(&self.state.labels) {
            let upper = xi(l + 1, alpha);
            // open interval: reject an exact zero
            let mut v: f64 = self.rng.random();
            while v == 0.0 {
                v = self.rng.random();
            }
            *u = v * upper;
        }
    }

    /// `v_j ~ Beta(1 + n_j, α + g_j)` for every `j` up to the largest label; sticks
    /// past it are dropped.
    pub fn step_sticks(&mut self) {
        let counts = self.state.label_counts();
        let alpha = self.config.alpha;
        let mut above: usize = counts.iter().sum();
        let mut sticks = Vec::with_capacity(counts.len());
        for &n in &counts {
            above -= n;
            let beta = Beta::new(1.0 + n as f64, alpha + above as f64)
                .expect("beta parameters are positive");
            sticks.push(sample_open_unit(&beta, &mut self.rng));
        }
        self.state.sticks = StickState::from_sticks(sticks, alpha).expect("sticks lie in (0, 1)");
    }

    /// Normal–Wishart full conditionals for every component up to the largest label.
    pub fn step_components(&mut self) -> Result<()> {
        let d = self.dim();
        let n_comp = self.state.max_label() + 1;
        let mut members: Vec<Vec<&[f64]>> = vec![Vec::new(); n_comp];
        for (t, &l) in self.state.labels.iter().enumerate() {
            members[l].push(&self.log_resid[t * d..(t + 1) * d]);
        }
        let mut comps = Vec::with_capacity(n_comp);
        let mut kernels = Vec::with_capacity(n_comp);
        for (j, data) in members.iter().enumerate() {
            let with_cluster = |e: VmemError| VmemError::Cluster {
                cluster: j,
                source: Box::new(e),
            };
            let post =
                normal_wishart_posterior(&self.config.nw_hyper, data).map_err(with_cluster)?;
            let c = normal_wishart_sample(&post, &mut self.rng).map_err(with_cluster)?;
            kernels.push(c.kernel().map_err(with_cluster)?);
            comps.push(c);
        }
        self.state.components = comps;
        self.kernels = kernels;
        Ok(())
    }

    /// Labels from `P(l_t = k) ∝ 𝟙(ξ(k) > u_t) (w_k/ξ(k)) N_d(y_t; m_k, Σ_k)`.
    pub fn step_labels(&mut self) -> Result<()> {
        let d = self.dim();
        let alpha = self.config.alpha;
        let bounds: Vec<usize> = self
            .state
            .slices
            .iter()
            .map(|&u| label_bound(u, alpha))
            .collect();
        let needed = bounds.iter().copied().max().unwrap_or(1).max(1);
        self.ensure_instantiated(needed)?;
        let log_xi: Vec<f64> = (1..=needed).map(|k| xi(k, alpha).ln()).collect();
        let log_w: Vec<f64> = self.state.sticks.weights[..needed]
            .iter()
            .map(|w| w.ln())
            .collect();
        let mut logp = Vec::with_capacity(needed);
        for t in 0..self.series.len() {
            let u = self.state.slices[t];
            let y = &self.log_resid[t * d..(t + 1) * d];
            logp.clear();
            for k in 0..bounds[t] {
                if log_xi[k] > u.ln() {
                    logp.push(log_w[k] - log_xi[k] + self.kernels[k].log_density(y));
                } else {
                    logp.push(f64::NEG_INFINITY);
                }
            }
            let norm = log_sum_exp(&logp);
            assert!(
                norm.is_finite(),
                "empty label support at t = {t} (u = {u}, previous label {})",
                self.state.labels[t] + 1
            );
            let mut r: f64 = self.rng.random::<f64>();
            let mut pick = None;
            for (k, lp) in logp.iter().enumerate() {
                let p = (lp - norm).exp();
                if r < p {
                    pick = Some(k);
                    break;
                }
                r -= p;
            }
            // rounding: fall back to the last candidate with positive mass
            let pick = pick.unwrap_or_else(|| {
                logp.iter()
                    .rposition(|lp| lp.is_finite())
                    .expect("support is non-empty")
            });
            self.state.labels[t] = pick;
        }
        Ok(())
    }

    /// Log full conditional of `η` up to a constant, given residual rows `y`.
    fn eta_log_target(&self, eta_vec: &[f64], resid: &[f64]) -> f64 {
        let d = self.dim();
        let prior = isotropic_normal_log_density(eta_vec, self.config.eta_prior_variance);
        let mut ll = 0.0;
        for (t, &l) in self.state.labels.iter().enumerate() {
            ll += self.kernels[l].log_density(&resid[t * d..(t + 1) * d]);
        }
        prior + ll
    }

    /// Current proposal covariance `Λ_n / m`, before the scale factor.
    pub fn proposal_base_cov(&self) -> DMatrix<f64> {
        let m = self.state.adapt.running_mean.len() as f64;
        proposal_cov(&self.state.adapt, &self.mbar) / m
    }

    /// One adaptive random-walk Metropolis step on `η`. Returns whether it moved.
    pub fn step_eta(&mut self) -> Result<bool> {
        let d = self.dim();
        let current = self.state.eta.to_vec();
        let base = self.proposal_base_cov();
        let scale = if self.rng.random::<f64>() < self.state.adapt.mixture_weight {
            self.state.adapt.scale1
        } else {
            self.state.adapt.scale2
        };
        let lower = pd_cholesky(&base)?.unpack() * scale;
        let z = DVector::from_fn(current.len(), |_, _| {
            self.rng.sample::<f64, _>(StandardNormal)
        });
        let step = lower * z;
        let proposal: Vec<f64> = current
            .iter()
            .zip(step.iter())
            .map(|(a, b)| a + b)
            .collect();
        let eta_prop = MeanParams::from_slice(d, &proposal)?;
        let mut resid = std::mem::take(&mut self.prop_resid);
        let bad = self.log_residuals_into(&eta_prop, &mut resid);
        // The uniform is drawn unconditionally so the stream does not depend on the branch.
        let u: f64 = self.rng.random();
        let accepted = if bad.is_some() {
            false
        } else {
            let log_ratio = self.eta_log_target(&proposal, &resid)
                - self.eta_log_target(&current, &self.log_resid);
            !log_ratio.is_nan() && (log_ratio >= 0.0 || u.ln() < log_ratio)
        };
        if accepted {
            self.state.eta = eta_prop;
            std::mem::swap(&mut self.log_resid, &mut resid);
            self.state.accepted += 1;
        }
        self.prop_resid = resid;
        Ok(accepted)
    }

    /// Post-process the current state and feed the identified `η` to the adaptation.
    pub fn step_adaptation(&mut self) -> Result<IdentifiedDraw> {
        let eps = self.config.eps_mean_trunc;
        let report = truncation_level(&mut self.state.sticks, eps, &mut self.rng)?;
        self.ensure_instantiated(report.k)?;
        let draw = identify(&self.state, eps)?;
        self.mbar = draw.mixture_mean.clone();
        update_adaptation(&mut self.state.adapt, &draw.eta.to_vec());
        Ok(draw)
    }

    /// One full sweep; returns the identified draw of the resulting state.
    pub fn sweep(&mut self) -> Result<IdentifiedDraw> {
        self.step_slices();
        self.step_sticks();
        self.step_components()?;
        self.step_labels()?;
        for _ in 0..self.config.eta_steps {
            self.step_eta()?;
        }
        let draw = self.step_adaptation()?;
        self.state.iteration += 1;
        Ok(draw)
    }

    /// Run the configured number of sweeps, calling `observer` on every retained
    /// (post burn-in, thinned) iteration with the raw state and its identified draw.
    pub fn run_with<F>(&mut self, mut observer: F) -> Result<()>
    where
        F: FnMut(&ChainState, IdentifiedDraw) -> Result<()>,
    {
        let (burn_in, thin) = (self.config.burn_in, self.config.thin);
        for _ in self.state.iteration..self.config.iterations {
            let draw = self.sweep()?;
            let it = self.state.iteration;
            if it > burn_in && (it - burn_in) % thin == 0 {
                observer(&self.state, draw)?;
            }
        }
        Ok(())
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.state.iteration == 0 {
            0.0
        } else {
            self.state.accepted as f64 / (self.state.iteration * self.config.eta_steps) as f64
        }
    }
}

/// Run a chain and collect the raw snapshots.
pub fn run(
    config: SamplerConfig,
    series: &SeriesMatrix,
    eta_init: MeanParams,
) -> Result<Vec<ChainState>> {
    let mut sampler = Sampler::new(config, series, eta_init)?;
    let mut out = Vec::new();
    sampler.run_with(|state, _| {
        out.push(state.clone());
        Ok(())
    })?;
    Ok(out)
}

/// Run a chain and collect the identified draws.
pub fn run_identified(
    config: SamplerConfig,
    series: &SeriesMatrix,
    eta_init: MeanParams,
) -> Result<(Vec<IdentifiedDraw>, f64)> {
    let mut sampler = Sampler::new(config, series, eta_init)?;
    let mut out = Vec::new();
    sampler.run_with(|_, draw| {
        out.push(draw);
        Ok(())
    })?;
    Ok((out, sampler.acceptance_rate()))
}
