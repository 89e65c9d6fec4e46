//! Predictive scores, predictive densities and MCMC diagnostics.
//!
//! LPS and LPML are both reported so that lower is better:
//! `LPS = −(1/T) Σ_t log[(1/N) Σ_n f_n(x_t)]` and
//! `LPML = −(1/T) Σ_t log CPO_t` with `CPO_t` the harmonic mean of `f_n(x_t)`.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Result, VmemError};
use crate::kernels::{compensated_sum, log_sum_exp};
use crate::likelihood::{observation_log_densities, MixtureDensity};
use crate::model::{univariate_logn_density, InnovationSpec, MeanParams, SeriesMatrix};
use crate::postprocess::IdentifiedDraw;

/// Density floor used by the harmonic-mean CPO estimator.
pub const CPO_FLOOR: f64 = 1e-300;

/// Average over draws of the retained mixture density at a positive innovation `e`.
pub fn predictive_innovation_density(draws: &[IdentifiedDraw], e: &[f64]) -> Result<f64> {
    if draws.is_empty() {
        return Err(VmemError::Shape("no draws".into()));
    }
    let mut terms = Vec::with_capacity(draws.len());
    for draw in draws {
        let mix = MixtureDensity::new(&draw.weights, &draw.components)?;
        terms.push(mix.log_density(e).exp());
    }
    Ok(compensated_sum(terms) / draws.len() as f64)
}

/// Per-draw marginal density of innovation coordinate `i` at `e > 0`.
pub fn draw_marginal_density(draw: &IdentifiedDraw, i: usize, e: f64) -> f64 {
    draw.weights
        .iter()
        .zip(&draw.components)
        .map(|(w, c)| w * univariate_logn_density(e, c.location[i], c.scale[(i, i)]))
        .sum()
}

/// Posterior predictive marginal density of coordinate `i` at `e`.
pub fn predictive_marginal_density(draws: &[IdentifiedDraw], i: usize, e: f64) -> f64 {
    let terms = draws.iter().map(|d| draw_marginal_density(d, i, e));
    compensated_sum(terms) / draws.len() as f64
}

/// `log f_n(x_t)` for every draw `n` (outer) and observation `t` (inner).
///
/// A draw whose conditional means leave the positive orthant contributes `-inf`
/// everywhere.
#[derive(Debug, Clone, PartialEq)]
pub struct LogDensityTable {
    pub values: Vec<Vec<f64>>,
    /// Draws that produced a non-positive conditional mean.
    pub invalid_draws: usize,
}

impl LogDensityTable {
    pub fn new(draws: &[IdentifiedDraw], series: &SeriesMatrix) -> Result<Self> {
        if draws.is_empty() {
            return Err(VmemError::Shape("no draws".into()));
        }
        let mut values = Vec::with_capacity(draws.len());
        let mut invalid = 0;
        for (n, draw) in draws.iter().enumerate() {
            let mix = MixtureDensity::new(&draw.weights, &draw.components)
                .map_err(|e| e.context(format!("draw {n}")))?;
            match observation_log_densities(&draw.eta, &draw.initial_mean, series, &mix) {
                Ok(v) => values.push(v),
                Err(VmemError::NonPositiveMean { index }) => {
                    warn!(
                        "draw {n}: non-positive conditional mean at t = {index}; density set to 0"
                    );
                    invalid += 1;
                    values.push(vec![f64::NEG_INFINITY; series.len()]);
                }
                Err(e) => return Err(e.context(format!("draw {n}"))),
            }
        }
        Ok(LogDensityTable {
            values,
            invalid_draws: invalid,
        })
    }

    fn observations(&self) -> usize {
        self.values[0].len()
    }

    fn column(&self, t: usize) -> Vec<f64> {
        self.values.iter().map(|row| row[t]).collect()
    }

    pub fn lps(&self) -> Result<f64> {
        let n = self.values.len() as f64;
        let t_len = self.observations();
        let mut terms = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let lse = log_sum_exp(&self.column(t));
            if !lse.is_finite() {
                return Err(VmemError::Fit(format!(
                    "every draw gives zero predictive density at t = {t}"
                )));
            }
            terms.push(lse - n.ln());
        }
        Ok(-compensated_sum(terms) / t_len as f64)
    }

    pub fn lpml(&self) -> f64 {
        let n = self.values.len() as f64;
        let t_len = self.observations();
        let floor = CPO_FLOOR.ln();
        let mut floored = 0usize;
        let mut terms = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let neg: Vec<f64> = self
                .column(t)
                .into_iter()
                .map(|v| {
                    if v < floor {
                        floored += 1;
                        -floor
                    } else {
                        -v
                    }
                })
                .collect();
            terms.push(n.ln() - log_sum_exp(&neg));
        }
        if floored > 0 {
            warn!("{floored} draw densities floored at {CPO_FLOOR:e} in the CPO estimator");
        }
        -compensated_sum(terms) / t_len as f64
    }
}

/// Log-predictive score; lower is better.
pub fn lps(draws: &[IdentifiedDraw], series: &SeriesMatrix) -> Result<f64> {
    LogDensityTable::new(draws, series)?.lps()
}

/// Log pseudo-marginal likelihood with the lower-is-better sign.
pub fn lpml(draws: &[IdentifiedDraw], series: &SeriesMatrix) -> Result<f64> {
    Ok(LogDensityTable::new(draws, series)?.lpml())
}

/// Sample autocorrelation at lags `0..=max_lag` (divisor `N`).
///
/// Returns `None` for a constant trace.
pub fn acf(trace: &[f64], max_lag: usize) -> Option<Vec<f64>> {
    let n = trace.len();
    let mean = compensated_sum(trace.iter().copied()) / n as f64;
    let centered: Vec<f64> = trace.iter().map(|x| x - mean).collect();
    let c0 = compensated_sum(centered.iter().map(|x| x * x));
    if !(c0 > 0.0) {
        return None;
    }
    let mut out = Vec::with_capacity(max_lag.min(n - 1) + 1);
    out.push(1.0);
    for k in 1..=max_lag.min(n.saturating_sub(1)) {
        out.push(autocov_sum(&centered, k) / c0);
    }
    Some(out)
}

fn autocov_sum(centered: &[f64], k: usize) -> f64 {
    compensated_sum(centered[k..].iter().zip(centered).map(|(a, b)| a * b))
}

/// Effective sample size and whether the trace was constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ess {
    pub value: f64,
    pub zero_variance: bool,
}

/// ESS with Geyer's initial positive sequence truncation, capped at `N`.
pub fn ess(trace: &[f64]) -> Result<Ess> {
    let n = trace.len();
    if n < 10 {
        return Err(VmemError::Shape(format!(
            "trace of length {n}; need at least 10"
        )));
    }
    let mean = compensated_sum(trace.iter().copied()) / n as f64;
    let centered: Vec<f64> = trace.iter().map(|x| x - mean).collect();
    let c0 = compensated_sum(centered.iter().map(|x| x * x));
    if !(c0 > 0.0) {
        return Ok(Ess {
            value: n as f64,
            zero_variance: true,
        });
    }
    let rho = |k: usize| autocov_sum(&centered, k) / c0;
    // τ = −1 + 2 Σ_m Γ_m with Γ_m = ρ_{2m} + ρ_{2m+1}, summed while positive
    let mut tau = -1.0;
    let mut m = 0;
    while 2 * m + 1 < n {
        let gamma = rho(2 * m) + rho(2 * m + 1);
        if gamma <= 0.0 {
            break;
        }
        tau += 2.0 * gamma;
        m += 1;
    }
    // antithetic traces give τ ≤ 1; ESS is capped at N
    let value = if tau <= 1.0 { n as f64 } else { n as f64 / tau };
    Ok(Ess {
        value,
        zero_variance: false,
    })
}

/// Type-7 empirical quantile of a sorted slice.
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Equal-tailed interval from type-7 quantiles.
pub fn credible_interval(trace: &[f64], level: f64) -> Result<(f64, f64)> {
    if trace.is_empty() || !(level > 0.0 && level < 1.0) {
        return Err(VmemError::Domain(format!(
            "credible interval at level {level} of {} values",
            trace.len()
        )));
    }
    let mut sorted = trace.to_vec();
    sorted.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    Ok((
        quantile_sorted(&sorted, tail),
        quantile_sorted(&sorted, 1.0 - tail),
    ))
}

/// Densities evaluated on a grid.
///
/// Marginal grids hold one axis and one value vector per coordinate. Joint grids
/// (`d = 2`) hold two axes and `values[i][j]` at `(axes[0][i], axes[1][j])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityGrid {
    pub axes: Vec<Vec<f64>>,
    pub values: Vec<Vec<f64>>,
    pub joint: bool,
}

/// Evenly spaced points on `[lo, hi]`.
pub fn linspace(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..points)
            .map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64)
            .collect(),
    }
}

/// Trapezoid rule on a (possibly uneven) axis.
pub fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    compensated_sum(
        x.windows(2)
            .zip(y.windows(2))
            .map(|(xs, ys)| 0.5 * (xs[1] - xs[0]) * (ys[0] + ys[1])),
    )
}

impl DensityGrid {
    pub fn marginal<F: Fn(usize, f64) -> f64>(d: usize, axis: &[f64], density: F) -> Self {
        DensityGrid {
            axes: vec![axis.to_vec(); d],
            values: (0..d)
                .map(|i| axis.iter().map(|&e| density(i, e)).collect())
                .collect(),
            joint: false,
        }
    }

    /// Posterior predictive marginals of an identified-draw sample.
    pub fn predictive(draws: &[IdentifiedDraw], axis: &[f64]) -> Self {
        let d = draws[0].dim();
        Self::marginal(d, axis, |i, e| predictive_marginal_density(draws, i, e))
    }

    /// Marginals of a known innovation mixture.
    pub fn truth(spec: &InnovationSpec, axis: &[f64]) -> Self {
        Self::marginal(spec.dim(), axis, |i, e| spec.marginal_density(i, e))
    }

    /// Joint predictive density for `d = 2`.
    pub fn predictive_joint(draws: &[IdentifiedDraw], x: &[f64], y: &[f64]) -> Result<Self> {
        if draws[0].dim() != 2 {
            return Err(VmemError::Shape("joint grids need d = 2".into()));
        }
        let mut values = Vec::with_capacity(x.len());
        for &a in x {
            let mut row = Vec::with_capacity(y.len());
            for &b in y {
                row.push(predictive_innovation_density(draws, &[a, b])?);
            }
            values.push(row);
        }
        Ok(DensityGrid {
            axes: vec![x.to_vec(), y.to_vec()],
            values,
            joint: true,
        })
    }

    /// Trapezoid integral of each marginal.
    pub fn marginal_integrals(&self) -> Vec<f64> {
        self.axes
            .iter()
            .zip(&self.values)
            .map(|(x, y)| trapezoid(x, y))
            .collect()
    }

    /// Trapezoid L1 distance to another marginal grid on the same axes, per coordinate.
    pub fn l1_distance(&self, other: &DensityGrid) -> Result<Vec<f64>> {
        if self.joint || other.joint || self.axes != other.axes {
            return Err(VmemError::Shape(
                "L1 distance needs marginal grids on equal axes".into(),
            ));
        }
        Ok(self
            .axes
            .iter()
            .zip(self.values.iter().zip(&other.values))
            .map(|(x, (a, b))| {
                let diff: Vec<f64> = a.iter().zip(b).map(|(u, v)| (u - v).abs()).collect();
                trapezoid(x, &diff)
            })
            .collect())
    }
}

/// Posterior summary of the conditional-mean parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub names: Vec<String>,
    pub posterior_means: Vec<f64>,
    pub credible_intervals: Vec<(f64, f64)>,
    pub ess_per_param: Vec<f64>,
    pub lps: f64,
    pub lpml: f64,
    pub draws: usize,
}

impl FitReport {
    pub fn from_draws(draws: &[IdentifiedDraw], series: &SeriesMatrix) -> Result<Self> {
        if draws.is_empty() {
            return Err(VmemError::Shape("no draws".into()));
        }
        let d = draws[0].dim();
        let traces = eta_traces(draws);
        let mut means = Vec::with_capacity(traces.len());
        let mut intervals = Vec::with_capacity(traces.len());
        let mut ess_values = Vec::with_capacity(traces.len());
        for trace in &traces {
            means.push(compensated_sum(trace.iter().copied()) / trace.len() as f64);
            intervals.push(credible_interval(trace, 0.95)?);
            ess_values.push(ess(trace)?.value);
        }
        let table = LogDensityTable::new(draws, series)?;
        Ok(FitReport {
            names: MeanParams::param_names(d),
            posterior_means: means,
            credible_intervals: intervals,
            ess_per_param: ess_values,
            lps: table.lps()?,
            lpml: table.lpml(),
            draws: draws.len(),
        })
    }

    /// Number of coordinates of `truth` inside their interval.
    pub fn coverage(&self, truth: &[f64]) -> usize {
        self.credible_intervals
            .iter()
            .zip(truth)
            .filter(|((lo, hi), v)| lo <= *v && *v <= hi)
            .count()
    }
}

/// One trace per `η` coordinate, in `MeanParams::to_vec` order.
pub fn eta_traces(draws: &[IdentifiedDraw]) -> Vec<Vec<f64>> {
    let m = draws[0].eta.to_vec().len();
    let mut traces = vec![Vec::with_capacity(draws.len()); m];
    for draw in draws {
        for (trace, v) in traces.iter_mut().zip(draw.eta.to_vec()) {
            trace.push(v);
        }
    }
    traces
}
