//! Maps draws of the parameter-expanded model (unconstrained mixture mean) onto the
//! identified model whose innovations have unit mean.
//!
//! With `D = diag(m̄)` and `m̄` the truncated mixture mean, the map is
//!
//! ```text
//! ω → D ω,   B → D B D⁻¹,   A → D A,   μ₁ → D μ₁,   m_j → m_j − log m̄,   Σ_j, w_j unchanged
//! ```
//!
//! and leaves the density of the observed panel unchanged. `B` only stays fixed when
//! all coordinates of `m̄` coincide.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, VmemError};
use crate::kernels::{log_sum_exp, MixtureComponent, StickState};
use crate::model::MeanParams;
use crate::sampler::ChainState;

/// Truncation of a stick sequence at residual mass below a tolerance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncationReport {
    /// Number of leading components retained (`K ≥ 1`).
    pub k: usize,
    /// `1 − Σ_{j≤K} w_j`.
    pub residual_mass: f64,
}

/// Smallest `K` with `1 − Σ_{j≤K} w_j < eps`, if the given weights reach it.
pub fn truncation_level_fixed(weights: &[f64], eps: f64) -> Option<TruncationReport> {
    let mut acc = 0.0;
    for (j, w) in weights.iter().enumerate() {
        acc += w;
        let residual = 1.0 - acc;
        if residual < eps {
            return Some(TruncationReport {
                k: j + 1,
                residual_mass: residual,
            });
        }
    }
    None
}

/// Truncation level of a stick sequence, appending prior sticks until the mass
/// condition holds.
pub fn truncation_level<R: Rng + ?Sized>(
    sticks: &mut StickState,
    eps: f64,
    rng: &mut R,
) -> Result<TruncationReport> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(VmemError::Domain(format!("tolerance {eps} outside (0, 1)")));
    }
    loop {
        if let Some(report) = truncation_level_fixed(&sticks.weights, eps) {
            return Ok(report);
        }
        sticks.push_prior(rng);
    }
}

/// `m̄ = Σ_{j≤K} w_j exp(m_j + diag(Σ_j)/2)`, accumulated in log space.
pub fn mixture_mean(
    weights: &[f64],
    components: &[MixtureComponent],
    k: usize,
) -> Result<DVector<f64>> {
    if k == 0 || k > weights.len() || k > components.len() {
        return Err(VmemError::Shape(format!(
            "truncation K = {k} with {} weights and {} components",
            weights.len(),
            components.len()
        )));
    }
    let d = components[0].dim();
    let mut out = DVector::zeros(d);
    let mut terms = Vec::with_capacity(k);
    for i in 0..d {
        terms.clear();
        for (j, (w, c)) in weights[..k].iter().zip(&components[..k]).enumerate() {
            let e = c.location[i] + 0.5 * c.scale[(i, i)];
            if !e.is_finite() || e > 700.0 {
                return Err(VmemError::Overflow { component: j });
            }
            terms.push(w.ln() + e);
        }
        let v = log_sum_exp(&terms).exp();
        if !v.is_finite() {
            let component = terms
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .map_or(0, |(j, _)| j);
            return Err(VmemError::Overflow { component });
        }
        out[i] = v;
    }
    Ok(out)
}

/// A draw of the identified model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentifiedDraw {
    pub eta: MeanParams,
    /// Initial conditional mean on the identified scale.
    pub initial_mean: DVector<f64>,
    /// Truncated weights `w_1..w_K`, not renormalised.
    pub weights: Vec<f64>,
    pub components: Vec<MixtureComponent>,
    /// The `m̄` used by the map.
    pub mixture_mean: DVector<f64>,
    pub truncation: TruncationReport,
    /// Number of distinct labels in use when the draw was taken.
    pub active_components: usize,
    /// Number of instantiated sticks when the draw was taken.
    pub instantiated_components: usize,
}

impl IdentifiedDraw {
    pub fn dim(&self) -> usize {
        self.eta.dim()
    }

    /// Mean of the retained innovation mixture; equals `ι` up to rounding.
    pub fn innovation_mean(&self) -> Result<DVector<f64>> {
        mixture_mean(&self.weights, &self.components, self.weights.len())
    }

    pub fn validate(&self) -> Result<()> {
        self.eta.validate()?;
        for c in &self.components {
            c.validate()?;
        }
        if self.weights.len() != self.components.len() || self.weights.len() != self.truncation.k {
            return Err(VmemError::Shape(
                "weights, components and K disagree".into(),
            ));
        }
        if self.mixture_mean.iter().any(|v| !(*v > 0.0)) {
            return Err(VmemError::Domain("non-positive mixture mean".into()));
        }
        Ok(())
    }
}

/// Apply the identification map to the mean-equation block.
pub fn identify_eta(eta: &MeanParams, mbar: &DVector<f64>) -> MeanParams {
    let d = eta.dim();
    MeanParams {
        omega: eta.omega.component_mul(mbar),
        b: DMatrix::from_fn(d, d, |i, k| eta.b[(i, k)] * mbar[i] / mbar[k]),
        a: DMatrix::from_fn(d, d, |i, k| eta.a[(i, k)] * mbar[i]),
    }
}

/// Per-coordinate scaling `c` with `vec(identify_eta(η, m̄)) = c ⊙ vec(η)`.
pub fn eta_scaling(mbar: &DVector<f64>) -> DVector<f64> {
    let d = mbar.len();
    let mut c = Vec::with_capacity(MeanParams::param_count(d));
    c.extend(mbar.iter());
    for k in 0..d {
        for i in 0..d {
            c.push(mbar[i] / mbar[k]);
        }
    }
    for _ in 0..d {
        c.extend(mbar.iter());
    }
    DVector::from_vec(c)
}

/// Identification map on explicit parts. `sticks` must already reach the tolerance
/// and `components` must cover the truncation level.
pub fn identify_parts(
    eta: &MeanParams,
    mu1: &DVector<f64>,
    sticks: &StickState,
    components: &[MixtureComponent],
    eps: f64,
) -> Result<IdentifiedDraw> {
    let truncation = truncation_level_fixed(&sticks.weights, eps).ok_or_else(|| {
        VmemError::Domain(format!(
            "stick sequence of length {} does not reach residual mass {eps}",
            sticks.len()
        ))
    })?;
    let k = truncation.k;
    let mbar = mixture_mean(&sticks.weights, components, k)?;
    assert!(
        mbar.iter().all(|v| *v > 0.0),
        "mixture mean must be positive"
    );
    let log_mbar = mbar.map(f64::ln);
    let components = components[..k]
        .iter()
        .map(|c| MixtureComponent {
            location: &c.location - &log_mbar,
            scale: c.scale.clone(),
        })
        .collect();
    Ok(IdentifiedDraw {
        eta: identify_eta(eta, &mbar),
        initial_mean: mu1.component_mul(&mbar),
        weights: sticks.weights[..k].to_vec(),
        components,
        mixture_mean: mbar,
        truncation,
        active_components: 0,
        instantiated_components: sticks.len(),
    })
}

/// Identification map applied to a raw chain snapshot.
pub fn identify(raw: &ChainState, eps: f64) -> Result<IdentifiedDraw> {
    let mut draw = identify_parts(&raw.eta, &raw.mu1, &raw.sticks, &raw.components, eps)?;
    draw.active_components = raw.active_components();
    Ok(draw)
}

/// Re-apply the map to an identified draw (its sticks are the retained weights).
pub fn reidentify(draw: &IdentifiedDraw) -> Result<IdentifiedDraw> {
    let k = draw.weights.len();
    let mbar = mixture_mean(&draw.weights, &draw.components, k)?;
    let log_mbar = mbar.map(f64::ln);
    Ok(IdentifiedDraw {
        eta: identify_eta(&draw.eta, &mbar),
        initial_mean: draw.initial_mean.component_mul(&mbar),
        weights: draw.weights.clone(),
        components: draw
            .components
            .iter()
            .map(|c| MixtureComponent {
                location: &c.location - &log_mbar,
                scale: c.scale.clone(),
            })
            .collect(),
        mixture_mean: mbar,
        truncation: draw.truncation,
        active_components: draw.active_components,
        instantiated_components: draw.instantiated_components,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{normal_wishart_sample, NwHyper};
    use crate::likelihood::{series_log_likelihood, MixtureDensity};
    use crate::model::{design, simulate};
    use proptest::prelude::{prop_assert, proptest};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn comp(m: &[f64], s: &[f64]) -> MixtureComponent {
        let d = m.len();
        MixtureComponent::new(
            DVector::from_column_slice(m),
            DMatrix::from_row_slice(d, d, s),
        )
        .unwrap()
    }

    #[test]
    fn truncation_strict_inequality() {
        let w = [0.7, 0.2, 0.05, 0.03, 0.02];
        let r = truncation_level_fixed(&w, 0.1).unwrap();
        assert_eq!(r.k, 3);
        assert_close!(r.residual_mass, 0.05, 1e-15);
    }

    #[test]
    fn truncation_degenerate_first_stick() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for eps in [1e-11, 1e-6, 0.5] {
            let mut s = StickState::from_sticks(vec![1.0 - 1e-12], 1.0).unwrap();
            assert_eq!(truncation_level(&mut s, eps, &mut rng).unwrap().k, 1);
        }
    }

    #[test]
    fn truncation_extends_from_prior() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut s = StickState::new(1.0);
        let r = truncation_level(&mut s, 1e-6, &mut rng).unwrap();
        assert_eq!(s.len(), r.k);
        assert!(r.residual_mass < 1e-6);
    }

    proptest! {
        #[test]
        fn truncation_monotone_in_tolerance(seed in 0u64..500, e1 in 1e-8f64..0.5, e2 in 1e-8f64..0.5) {
            let (small, large) = if e1 < e2 { (e1, e2) } else { (e2, e1) };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut s = StickState::new(1.0);
            let k_small = truncation_level(&mut s, small, &mut rng).unwrap().k;
            let k_large = truncation_level(&mut s, large, &mut rng).unwrap().k;
            prop_assert!(k_small >= k_large);
        }
    }

    #[test]
    fn mixture_mean_examples() {
        let c = comp(&[-0.15, -0.1], &[0.3, 0.1, 0.1, 0.2]);
        let m = mixture_mean(&[1.0], &[c], 1).unwrap();
        assert_close!(m[0], 1.0, 1e-15);
        assert_close!(m[1], 1.0, 1e-15);

        let a = comp(&[0.0], &[1e-300]);
        let b = comp(&[2f64.ln()], &[1e-300]);
        assert_close!(
            mixture_mean(&[0.5, 0.5], &[a, b], 2).unwrap()[0],
            1.5,
            1e-15
        );

        let spec = design::innovations();
        let m = mixture_mean(&spec.weights, &spec.components, 2).unwrap();
        for i in 0..3 {
            assert_close!(m[i], 1.0, 1e-15);
        }
    }

    #[test]
    fn mixture_mean_overflow_names_component() {
        let ok = comp(&[0.0], &[1.0]);
        let huge = comp(&[800.0], &[1.0]);
        assert!(matches!(
            mixture_mean(&[0.5, 0.5], &[ok, huge], 2),
            Err(VmemError::Overflow { component: 1 })
        ));
    }

    fn random_draw(
        rng: &mut ChaCha8Rng,
        d: usize,
    ) -> (MeanParams, DVector<f64>, StickState, Vec<MixtureComponent>) {
        let hyper = NwHyper::new(
            d as f64 + 2.0,
            DMatrix::identity(d, d) * 2.0,
            DVector::zeros(d),
            0.5,
        )
        .unwrap();
        let mut sticks = StickState::new(1.0);
        let report = truncation_level(&mut sticks, 1e-6, rng).unwrap();
        let comps: Vec<MixtureComponent> = (0..report.k)
            .map(|_| normal_wishart_sample(&hyper, rng).unwrap())
            .collect();
        let eta = MeanParams {
            omega: DVector::from_fn(d, |_, _| rng.random_range(0.1..1.0)),
            b: DMatrix::from_fn(d, d, |_, _| rng.random_range(0.0..0.3)),
            a: DMatrix::from_fn(d, d, |_, _| rng.random_range(0.0..0.15)),
        };
        let mu1 = DVector::from_fn(d, |_, _| rng.random_range(0.5..2.0));
        (eta, mu1, sticks, comps)
    }

    #[test]
    fn identity_when_mean_is_unit() {
        let spec = design::innovations();
        let sticks = StickState::from_sticks(vec![0.7, 1.0 - 1e-13], 1.0).unwrap();
        let eta = design::mean_params();
        let mu1 = DVector::from_element(3, 2.0);
        let draw = identify_parts(&eta, &mu1, &sticks, &spec.components, 1e-6).unwrap();
        assert!((identify_eta(&eta, &draw.mixture_mean).to_vec().iter())
            .zip(eta.to_vec())
            .all(|(a, b)| (a - b).abs() < 1e-12));
        for (c, orig) in draw.components.iter().zip(&spec.components) {
            assert!((&c.location - &orig.location).amax() < 1e-12);
        }
    }

    #[test]
    fn single_component_recentres_exactly() {
        let c = comp(&[0.8, -1.3], &[0.5, 0.2, 0.2, 0.4]);
        let sticks = StickState::from_sticks(vec![1.0 - 1e-12], 1.0).unwrap();
        let draw = identify_parts(
            &MeanParams::zeros(2),
            &DVector::from_element(2, 1.0),
            &sticks,
            &[c],
            1e-6,
        )
        .unwrap();
        let m = draw.innovation_mean().unwrap();
        assert_close!(m[0], 1.0, 1e-14);
        assert_close!(m[1], 1.0, 1e-14);
    }

    #[test]
    fn truncated_mean_within_bound_of_full_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let (eta, mu1, mut sticks, mut comps) = random_draw(&mut rng, 2);
            let draw = identify_parts(&eta, &mu1, &sticks, &comps, 1e-6).unwrap();
            // Oracle: extend to twice the truncation level and sum directly.
            let k2 = 2 * draw.truncation.k;
            while sticks.len() < k2 {
                sticks.push_prior(&mut rng);
            }
            let hyper =
                NwHyper::new(4.0, DMatrix::identity(2, 2) * 2.0, DVector::zeros(2), 0.5).unwrap();
            while comps.len() < k2 {
                comps.push(normal_wishart_sample(&hyper, &mut rng).unwrap());
            }
            let log_mbar = draw.mixture_mean.map(f64::ln);
            let mut full = DVector::<f64>::zeros(2);
            let mut bound: f64 = 0.0;
            for j in 0..k2 {
                let recentred = MixtureComponent {
                    location: &comps[j].location - &log_mbar,
                    scale: comps[j].scale.clone(),
                };
                full += recentred.mean() * sticks.weights[j];
                bound = bound.max(recentred.mean().amax());
            }
            let tol = draw.truncation.residual_mass * bound + 1e-12;
            assert!((full - DVector::from_element(2, 1.0)).amax() <= tol);
        }
    }

    #[test]
    fn identify_is_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let (eta, mu1, sticks, comps) = random_draw(&mut rng, 3);
            let once = identify_parts(&eta, &mu1, &sticks, &comps, 1e-6).unwrap();
            let twice = reidentify(&once).unwrap();
            let (a, b) = (once.eta.to_vec(), twice.eta.to_vec());
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-12 * x.abs().max(1.0));
            }
        }
    }

    #[test]
    fn likelihood_is_invariant_under_the_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let (eta, mu1, sticks, comps) = random_draw(&mut rng, 3);
            let s = simulate(
                &design::mean_params(),
                &design::innovations(),
                200,
                &[1.0, 1.0, 1.0],
                &mut rng,
            )
            .unwrap();
            let draw = identify_parts(&eta, &mu1, &sticks, &comps, 1e-6).unwrap();
            let k = draw.truncation.k;
            let raw_mix = MixtureDensity::new(&sticks.weights[..k], &comps[..k]).unwrap();
            let id_mix = MixtureDensity::new(&draw.weights, &draw.components).unwrap();
            let before = series_log_likelihood(&eta, &mu1, &s, &raw_mix).unwrap();
            let after = series_log_likelihood(&draw.eta, &draw.initial_mean, &s, &id_mix).unwrap();
            assert!(
                (before - after).abs() < 1e-10 * before.abs().max(1.0),
                "{before} vs {after}"
            );
        }
    }

    #[test]
    fn keeping_b_fixed_breaks_invariance() {
        // The literal "B unchanged" variant of the map changes the likelihood
        // whenever the coordinates of m̄ differ.
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (eta, mu1, sticks, comps) = random_draw(&mut rng, 3);
        let s = simulate(
            &design::mean_params(),
            &design::innovations(),
            200,
            &[1.0, 1.0, 1.0],
            &mut rng,
        )
        .unwrap();
        let draw = identify_parts(&eta, &mu1, &sticks, &comps, 1e-6).unwrap();
        let mut literal = draw.eta.clone();
        literal.b = eta.b.clone();
        let id_mix = MixtureDensity::new(&draw.weights, &draw.components).unwrap();
        let exact = series_log_likelihood(&draw.eta, &draw.initial_mean, &s, &id_mix).unwrap();
        let off = series_log_likelihood(&literal, &draw.initial_mean, &s, &id_mix).unwrap();
        assert!((exact - off).abs() > 1e-6);
    }

    #[test]
    fn eta_scaling_matches_map() {
        let mbar = DVector::from_column_slice(&[0.7, 1.9, 1.2]);
        let eta = design::mean_params();
        let direct = identify_eta(&eta, &mbar).to_vec();
        let scaled: Vec<f64> = eta
            .to_vec()
            .iter()
            .zip(eta_scaling(&mbar).iter())
            .map(|(a, c)| a * c)
            .collect();
        for (a, b) in direct.iter().zip(&scaled) {
            assert_close!(*a, *b, 1e-15);
        }
    }
}
