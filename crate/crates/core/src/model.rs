//! The vector multiplicative error model: `x_t = μ_t ⊙ ε_t` with
//! `μ_t = ω + B μ_{t−1} + A x_{t−1}`.
//!
//! Panels are stored row-major by time. The recursion runs in natural scale because
//! `B` and `A` may carry negative entries; a conditional mean that leaves the positive
//! orthant is reported, not clipped.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, VmemError};
use crate::kernels::{log_sum_exp, logn_sample, MixtureComponent};

/// Conditional-mean parameters `η = (ω, B, A)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanParams {
    pub omega: DVector<f64>,
    pub b: DMatrix<f64>,
    pub a: DMatrix<f64>,
}

impl MeanParams {
    pub fn new(omega: DVector<f64>, b: DMatrix<f64>, a: DMatrix<f64>) -> Result<Self> {
        let p = MeanParams { omega, b, a };
        p.validate()?;
        Ok(p)
    }

    pub fn zeros(d: usize) -> Self {
        MeanParams {
            omega: DVector::zeros(d),
            b: DMatrix::zeros(d, d),
            a: DMatrix::zeros(d, d),
        }
    }

    pub fn dim(&self) -> usize {
        self.omega.len()
    }

    /// Length of the flattened parameter vector, `d + 2d²`.
    pub fn param_count(d: usize) -> usize {
        d + 2 * d * d
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.omega.len();
        if d == 0 {
            return Err(VmemError::Shape("empty intercept".into()));
        }
        for (name, m) in [("B", &self.b), ("A", &self.a)] {
            if m.nrows() != d || m.ncols() != d {
                return Err(VmemError::Shape(format!(
                    "{name} is {}x{}, expected {d}x{d}",
                    m.nrows(),
                    m.ncols()
                )));
            }
        }
        let all = self.omega.iter().chain(self.b.iter()).chain(self.a.iter());
        if all.into_iter().any(|v| !v.is_finite()) {
            return Err(VmemError::Domain("non-finite mean parameter".into()));
        }
        Ok(())
    }

    /// `vec([ω, B, A])`: ω, then B and A column-major.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(Self::param_count(self.dim()));
        v.extend(self.omega.iter());
        v.extend(self.b.iter());
        v.extend(self.a.iter());
        v
    }

    pub fn from_slice(d: usize, v: &[f64]) -> Result<Self> {
        if v.len() != Self::param_count(d) {
            return Err(VmemError::Shape(format!(
                "parameter vector of length {} for d = {d}",
                v.len()
            )));
        }
        let dd = d * d;
        Ok(MeanParams {
            omega: DVector::from_column_slice(&v[..d]),
            b: DMatrix::from_column_slice(d, d, &v[d..d + dd]),
            a: DMatrix::from_column_slice(d, d, &v[d + dd..]),
        })
    }

    /// Human-readable names in `to_vec` order (1-based indices).
    pub fn param_names(d: usize) -> Vec<String> {
        let mut names: Vec<String> = (1..=d).map(|i| format!("omega_{i}")).collect();
        for block in ["beta", "alpha"] {
            for k in 1..=d {
                for i in 1..=d {
                    names.push(format!("{block}_{i}{k}"));
                }
            }
        }
        names
    }

    /// `1 − ρ(B + A)`; positive means the sufficient stationarity condition holds.
    pub fn stationarity_margin(&self) -> f64 {
        stationarity_margin(self)
    }
}

pub fn stationarity_margin(params: &MeanParams) -> f64 {
    let sum = &params.b + &params.a;
    let radius = sum
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max);
    1.0 - radius
}

/// Row-major `rows × cols` matrix of reals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowMatrix {
    data: Vec<f64>,
    rows: usize,
    cols: usize,
}

impl RowMatrix {
    pub fn from_flat(data: Vec<f64>, cols: usize) -> Result<Self> {
        if cols == 0 || data.len() % cols != 0 {
            return Err(VmemError::Shape(format!(
                "{} values do not fill rows of width {cols}",
                data.len()
            )));
        }
        Ok(RowMatrix {
            rows: data.len() / cols,
            data,
            cols,
        })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        RowMatrix {
            data: vec![0.0; rows * cols],
            rows,
            cols,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.cols..(t + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, t: usize) -> &mut [f64] {
        &mut self.data[t * self.cols..(t + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols)
    }

    pub fn column_means(&self) -> DVector<f64> {
        let mut m = DVector::zeros(self.cols);
        for r in self.iter_rows() {
            for (mi, v) in m.iter_mut().zip(r) {
                *mi += v;
            }
        }
        m / self.rows as f64
    }

    pub fn column(&self, i: usize) -> Vec<f64> {
        self.iter_rows().map(|r| r[i]).collect()
    }
}

/// Strictly positive `T × d` observation panel with optional row labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesMatrix {
    values: RowMatrix,
    labels: Option<Vec<String>>,
}

impl SeriesMatrix {
    pub fn new(values: RowMatrix, labels: Option<Vec<String>>) -> Result<Self> {
        if values.rows() < 2 {
            return Err(VmemError::Data(format!(
                "series needs at least 2 observations, got {}",
                values.rows()
            )));
        }
        if let Some(l) = &labels {
            if l.len() != values.rows() {
                return Err(VmemError::Shape(format!(
                    "{} labels for {} observations",
                    l.len(),
                    values.rows()
                )));
            }
        }
        if let Some(k) = values
            .as_slice()
            .iter()
            .position(|v| !(*v > 0.0) || !v.is_finite())
        {
            return Err(VmemError::Data(format!(
                "observation at row {}, column {} is not strictly positive",
                k / values.cols(),
                k % values.cols()
            )));
        }
        Ok(SeriesMatrix { values, labels })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != d) {
            return Err(VmemError::Shape("ragged rows".into()));
        }
        Self::new(RowMatrix::from_flat(rows.concat(), d)?, None)
    }

    pub fn len(&self) -> usize {
        self.values.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.values.cols()
    }

    #[inline]
    pub fn row(&self, t: usize) -> &[f64] {
        self.values.row(t)
    }

    pub fn values(&self) -> &RowMatrix {
        &self.values
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    /// Default initial conditional mean: the sample mean of each series.
    pub fn sample_mean(&self) -> DVector<f64> {
        self.values.column_means()
    }

    /// Element-wise `log x_t`, row-major.
    pub fn log_values(&self) -> RowMatrix {
        RowMatrix {
            data: self.values.as_slice().iter().map(|v| v.ln()).collect(),
            rows: self.values.rows(),
            cols: self.values.cols(),
        }
    }
}

/// Conditional means `μ_1..μ_T` and the first time index (0-based) where one
/// coordinate was not strictly positive.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalMeans {
    pub means: RowMatrix,
    pub first_non_positive: Option<usize>,
}

fn check_dims(params: &MeanParams, series: &SeriesMatrix, mu1: &[f64]) -> Result<()> {
    params.validate()?;
    let d = params.dim();
    if series.dim() != d || mu1.len() != d {
        return Err(VmemError::Shape(format!(
            "parameters have d = {d}, series d = {}, initial mean length {}",
            series.dim(),
            mu1.len()
        )));
    }
    Ok(())
}

/// Writes `μ_t` into `out` (row-major, `T·d`) and returns the first non-positive index.
///
/// This is the allocation-free inner loop shared by the likelihoods.
pub fn mean_recursion_into(
    params: &MeanParams,
    series: &SeriesMatrix,
    mu1: &[f64],
    out: &mut Vec<f64>,
) -> Option<usize> {
    let d = params.dim();
    let t_len = series.len();
    out.clear();
    out.resize(t_len * d, 0.0);
    out[..d].copy_from_slice(mu1);
    let mut first_bad = mu1.iter().any(|v| !(*v > 0.0)).then_some(0);
    let (b, a) = (params.b.as_slice(), params.a.as_slice());
    for t in 1..t_len {
        let (prev, cur) = out.split_at_mut(t * d);
        let mu_prev = &prev[(t - 1) * d..];
        let x_prev = series.row(t - 1);
        let cur = &mut cur[..d];
        cur.copy_from_slice(params.omega.as_slice());
        // column-major storage: entry (i, k) at k·d + i
        for k in 0..d {
            let (mk, xk) = (mu_prev[k], x_prev[k]);
            let bcol = &b[k * d..(k + 1) * d];
            let acol = &a[k * d..(k + 1) * d];
            for i in 0..d {
                cur[i] += bcol[i] * mk + acol[i] * xk;
            }
        }
        if first_bad.is_none() && cur.iter().any(|v| !(*v > 0.0)) {
            first_bad = Some(t);
        }
    }
    first_bad
}

/// Conditional means for the whole sample. Rows are returned even past a
/// non-positive mean; callers decide how to react to `first_non_positive`.
pub fn mean_recursion(
    params: &MeanParams,
    series: &SeriesMatrix,
    mu1: &[f64],
) -> Result<ConditionalMeans> {
    check_dims(params, series, mu1)?;
    let mut buf = Vec::new();
    let first_non_positive = mean_recursion_into(params, series, mu1, &mut buf);
    Ok(ConditionalMeans {
        means: RowMatrix::from_flat(buf, params.dim())?,
        first_non_positive,
    })
}

/// Residuals `ε̂_t = x_t ⊘ μ_t` and their logs.
#[derive(Debug, Clone, PartialEq)]
pub struct Residuals {
    pub ratios: RowMatrix,
    pub log_ratios: RowMatrix,
}

pub fn residuals(params: &MeanParams, series: &SeriesMatrix, mu1: &[f64]) -> Result<Residuals> {
    let cm = mean_recursion(params, series, mu1)?;
    if let Some(index) = cm.first_non_positive {
        return Err(VmemError::NonPositiveMean { index });
    }
    let ratios: Vec<f64> = series
        .values()
        .as_slice()
        .iter()
        .zip(cm.means.as_slice())
        .map(|(x, m)| x / m)
        .collect();
    let logs = ratios.iter().map(|r| r.ln()).collect();
    let d = params.dim();
    Ok(Residuals {
        ratios: RowMatrix::from_flat(ratios, d)?,
        log_ratios: RowMatrix::from_flat(logs, d)?,
    })
}

/// Finite mixture of log-normals used to generate innovations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InnovationSpec {
    pub weights: Vec<f64>,
    pub components: Vec<MixtureComponent>,
}

impl InnovationSpec {
    pub fn new(weights: Vec<f64>, components: Vec<MixtureComponent>) -> Result<Self> {
        if weights.is_empty() || weights.len() != components.len() {
            return Err(VmemError::Shape(format!(
                "{} weights for {} components",
                weights.len(),
                components.len()
            )));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-12
        {
            return Err(VmemError::Domain(
                "weights must be a probability vector".into(),
            ));
        }
        let d = components[0].dim();
        for c in &components {
            c.validate()?;
            if c.dim() != d {
                return Err(VmemError::Shape("components of different dimension".into()));
            }
        }
        Ok(InnovationSpec {
            weights,
            components,
        })
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }

    /// `E[ε] = Σ_j w_j exp(m_j + diag(Σ_j)/2)`.
    pub fn mean(&self) -> DVector<f64> {
        self.weights
            .iter()
            .zip(&self.components)
            .fold(DVector::zeros(self.dim()), |acc, (w, c)| {
                acc + c.mean() * *w
            })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<DVector<f64>> {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut pick = self.components.len() - 1;
        for (j, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                pick = j;
                break;
            }
        }
        logn_sample(&self.components[pick], rng)
    }

    /// Log density of the mixture at a positive vector.
    pub fn log_density(&self, e: &[f64]) -> Result<f64> {
        let terms = self
            .weights
            .iter()
            .zip(&self.components)
            .map(|(w, c)| Ok(w.ln() + crate::kernels::logn_log_density(e, c)?))
            .collect::<Result<Vec<f64>>>()?;
        Ok(log_sum_exp(&terms))
    }

    /// Marginal density of coordinate `i` at `e > 0`.
    pub fn marginal_density(&self, i: usize, e: f64) -> f64 {
        self.weights
            .iter()
            .zip(&self.components)
            .map(|(w, c)| w * univariate_logn_density(e, c.location[i], c.scale[(i, i)]))
            .sum()
    }
}

/// `logN(e; m, s2)` in one dimension.
pub fn univariate_logn_density(e: f64, m: f64, s2: f64) -> f64 {
    if !(e > 0.0) {
        return 0.0;
    }
    let z = e.ln() - m;
    (-0.5 * z * z / s2).exp() / (e * (2.0 * std::f64::consts::PI * s2).sqrt())
}

/// Output of [`simulate_with_innovations`].
#[derive(Debug, Clone)]
pub struct Simulation {
    pub series: SeriesMatrix,
    pub innovations: RowMatrix,
    pub means: RowMatrix,
}

/// Forward simulation of the model with i.i.d. innovations from `innov`.
pub fn simulate_with_innovations<R: Rng + ?Sized>(
    params: &MeanParams,
    innov: &InnovationSpec,
    t_len: usize,
    mu1: &[f64],
    rng: &mut R,
) -> Result<Simulation> {
    params.validate()?;
    let d = params.dim();
    if innov.dim() != d || mu1.len() != d {
        return Err(VmemError::Shape(format!(
            "parameters have d = {d}, innovations d = {}, initial mean length {}",
            innov.dim(),
            mu1.len()
        )));
    }
    if t_len < 2 {
        return Err(VmemError::Domain("simulate needs T >= 2".into()));
    }
    if mu1.iter().any(|v| !(*v > 0.0)) {
        return Err(VmemError::NonPositiveMean { index: 0 });
    }
    let margin = stationarity_margin(params);
    if margin <= 0.0 {
        log::warn!("simulating a non-stationary design (margin {margin:.4})");
    }
    let mut x = RowMatrix::zeros(t_len, d);
    let mut eps = RowMatrix::zeros(t_len, d);
    let mut mu = RowMatrix::zeros(t_len, d);
    mu.row_mut(0).copy_from_slice(mu1);
    for t in 0..t_len {
        if t > 0 {
            let prev_mu = DVector::from_column_slice(mu.row(t - 1));
            let prev_x = DVector::from_column_slice(x.row(t - 1));
            let next = &params.omega + &params.b * prev_mu + &params.a * prev_x;
            if next.iter().any(|v| !(*v > 0.0)) {
                return Err(VmemError::NonPositiveMean { index: t });
            }
            mu.row_mut(t).copy_from_slice(next.as_slice());
        }
        let e = innov.sample(rng)?;
        eps.row_mut(t).copy_from_slice(e.as_slice());
        for i in 0..d {
            x.row_mut(t)[i] = mu.row(t)[i] * e[i];
        }
    }
    Ok(Simulation {
        series: SeriesMatrix::new(x, None)?,
        innovations: eps,
        means: mu,
    })
}

pub fn simulate<R: Rng + ?Sized>(
    params: &MeanParams,
    innov: &InnovationSpec,
    t_len: usize,
    mu1: &[f64],
    rng: &mut R,
) -> Result<SeriesMatrix> {
    simulate_with_innovations(params, innov, t_len, mu1, rng).map(|s| s.series)
}

/// The trivariate simulation design: intercept, persistence matrices and a
/// two-component log-normal innovation mixture with unit mean.
pub mod design {
    use super::*;

    pub fn mean_params() -> MeanParams {
        MeanParams {
            omega: DVector::from_column_slice(&[0.35, 0.59, 0.43]),
            b: DMatrix::from_row_slice(
                3,
                3,
                &[0.36, 0.07, 0.18, 0.10, 0.24, 0.14, 0.01, 0.10, 0.41],
            ),
            a: DMatrix::from_row_slice(
                3,
                3,
                &[0.21, 0.14, 0.04, 0.13, 0.28, 0.09, 0.07, 0.08, 0.30],
            ),
        }
    }

    pub fn innovations() -> InnovationSpec {
        let c1 = MixtureComponent {
            location: DVector::from_column_slice(&[-0.200, -0.175, -0.150]),
            scale: DMatrix::from_row_slice(
                3,
                3,
                &[0.40, 0.30, 0.20, 0.30, 0.35, 0.25, 0.20, 0.25, 0.30],
            ),
        };
        let c2 = MixtureComponent {
            location: DVector::from_column_slice(&[-0.185, -0.195, -0.125]),
            scale: DMatrix::from_row_slice(
                3,
                3,
                &[0.37, 0.15, 0.24, 0.15, 0.39, 0.18, 0.24, 0.18, 0.25],
            ),
        };
        InnovationSpec::new(vec![0.7, 0.3], vec![c1, c2]).expect("design mixture is valid")
    }

    /// Unconditional mean `(I − B − A)⁻¹ ω` (the innovations have unit mean).
    pub fn fixed_point(params: &MeanParams) -> Option<DVector<f64>> {
        let d = params.dim();
        (DMatrix::identity(d, d) - &params.b - &params.a)
            .lu()
            .solve(&params.omega)
    }
}
