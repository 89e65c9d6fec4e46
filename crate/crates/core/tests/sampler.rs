use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use vmem_core::evaluation::ess;
use vmem_core::kernels::{normal_wishart_posterior, MixtureComponent, StickState};
use vmem_core::model::{MeanParams, RowMatrix, SeriesMatrix};
use vmem_core::sampler::{AdaptState, ChainState, ProposalConfig, Sampler, SamplerConfig};

/// Series whose log values are `rows`.
fn log_series(rows: &[Vec<f64>]) -> SeriesMatrix {
    let d = rows[0].len();
    let flat: Vec<f64> = rows.iter().flatten().map(|y| y.exp()).collect();
    SeriesMatrix::new(RowMatrix::from_flat(flat, d).unwrap(), None).unwrap()
}

/// Constant-mean model (`ω = 1`, `B = A = 0`, `μ₁ = 1`), so residuals are `log x_t`.
fn constant_mean_config(d: usize, seed: u64) -> (SamplerConfig, MeanParams) {
    let mut config = SamplerConfig::new(d, seed);
    config.initial_mean = Some(vec![1.0; d]);
    let eta = MeanParams::new(
        DVector::from_element(d, 1.0),
        DMatrix::zeros(d, d),
        DMatrix::zeros(d, d),
    )
    .unwrap();
    (config, eta)
}

fn frozen_sampler(
    series: &SeriesMatrix,
    sticks: StickState,
    components: Vec<MixtureComponent>,
    labels: Vec<usize>,
    seed: u64,
) -> Sampler<'_> {
    let d = series.dim();
    let (config, eta) = constant_mean_config(d, seed);
    let state = ChainState {
        eta,
        mu1: DVector::from_element(d, 1.0),
        sticks,
        components,
        labels,
        slices: vec![0.0; series.len()],
        adapt: AdaptState::new(MeanParams::param_count(d), ProposalConfig::default()),
        iteration: 0,
        accepted: 0,
    };
    Sampler::from_state(config, series, state).unwrap()
}

fn component(m: f64, v: f64) -> MixtureComponent {
    MixtureComponent::new(DVector::from_element(1, m), DMatrix::from_element(1, 1, v)).unwrap()
}

fn normal_density(y: f64, m: f64, v: f64) -> f64 {
    (-(y - m).powi(2) / (2.0 * v)).exp() / (2.0 * std::f64::consts::PI * v).sqrt()
}

/// Label indicator traces `[t][k]` over `sweeps` slice/label updates.
fn label_traces(sampler: &mut Sampler<'_>, k: usize, sweeps: usize) -> Vec<Vec<Vec<f64>>> {
    let t_len = sampler.state().labels.len();
    let mut traces = vec![vec![vec![0.0; sweeps]; k]; t_len];
    for s in 0..sweeps {
        sampler.step_slices();
        sampler.step_labels().unwrap();
        for (t, &l) in sampler.state().labels.iter().enumerate() {
            if l < k {
                traces[t][l][s] = 1.0;
            }
        }
    }
    traces
}

fn within_mc_error(trace: &[f64], p: f64) -> (bool, f64) {
    let freq = trace.iter().sum::<f64>() / trace.len() as f64;
    let se = (p * (1.0 - p) / ess(trace).unwrap().value).sqrt();
    ((freq - p).abs() <= 3.0 * se, freq)
}

#[test]
fn frozen_mixture_labels_match_responsibilities() {
    let ys = [-1.0, -0.5, 0.0, 0.4, 0.9, 1.4];
    let series = log_series(&ys.iter().map(|y| vec![*y]).collect::<Vec<_>>());
    let params = [(-0.8, 0.6), (0.0, 0.5), (0.9, 0.7)];
    let comps: Vec<_> = params.iter().map(|(m, v)| component(*m, *v)).collect();
    let sticks = StickState::from_sticks(vec![0.5, 0.6, 1.0 - 1e-13], 1.0).unwrap();
    let weights = sticks.weights.clone();
    let mut sampler = frozen_sampler(&series, sticks, comps, vec![0; 6], 21);
    let traces = label_traces(&mut sampler, 3, 10_000);
    for (t, y) in ys.iter().enumerate() {
        let dens: Vec<f64> = params
            .iter()
            .zip(&weights)
            .map(|((m, v), w)| w * normal_density(*y, *m, *v))
            .collect();
        let total: f64 = dens.iter().sum();
        for k in 0..3 {
            let p = dens[k] / total;
            let (ok, freq) = within_mc_error(&traces[t][k], p);
            assert!(ok, "y = {y}, component {k}: {freq} vs {p}");
        }
    }
}

#[test]
fn identical_equal_weight_components_split_evenly() {
    let series = log_series(&[vec![0.2], vec![-0.3]]);
    let comps = vec![component(0.0, 0.5), component(0.0, 0.5)];
    let sticks = StickState::from_sticks(vec![0.5, 1.0 - 1e-13], 1.0).unwrap();
    let mut sampler = frozen_sampler(&series, sticks, comps, vec![0; 2], 22);
    let traces = label_traces(&mut sampler, 2, 10_000);
    for t in 0..2 {
        let (ok, freq) = within_mc_error(&traces[t][0], 0.5);
        assert!(ok, "t = {t}: {freq}");
    }
}

#[test]
fn dominant_component_takes_the_label() {
    let series = log_series(&[vec![0.0], vec![0.1]]);
    let comps = vec![component(0.0, 0.1), component(3.0, 0.1)];
    let sticks = StickState::from_sticks(vec![1.0 - 1e-9, 0.5], 1.0).unwrap();
    let mut sampler = frozen_sampler(&series, sticks, comps, vec![0; 2], 23);
    let traces = label_traces(&mut sampler, 1, 2_000);
    for trace in &traces {
        let freq = trace[0].iter().sum::<f64>() / 2_000.0;
        assert!(freq > 0.99, "{freq}");
    }
}

#[test]
fn empty_cluster_draws_from_the_prior() {
    // Every observation in cluster 3, so clusters 1 and 2 carry no data.
    let series = log_series(&[vec![0.5, -0.2], vec![0.1, 0.3], vec![-0.4, 0.0]]);
    let sticks = StickState::from_sticks(vec![0.5, 0.5, 0.5], 1.0).unwrap();
    let mut sampler = frozen_sampler(&series, sticks, Vec::new(), vec![2; 3], 24);
    let hyper = sampler.config().nw_hyper.clone();
    let n = 20_000;
    let mut m_draws = Vec::with_capacity(n);
    let mut s_mean = DMatrix::zeros(2, 2);
    for _ in 0..n {
        sampler.step_components().unwrap();
        let c = &sampler.state().components[0];
        m_draws.push(c.location.clone());
        s_mean += &c.scale / n as f64;
    }
    // E[Σ] = W⁻¹ / (a − d − 1) for Σ⁻¹ ~ Wishart(a, W); E[m] = ν
    let expected = hyper.scale_matrix.clone().try_inverse().unwrap() / (hyper.degrees - 3.0);
    for i in 0..2 {
        let mean = m_draws.iter().map(|m| m[i]).sum::<f64>() / n as f64;
        let var = m_draws.iter().map(|m| (m[i] - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(
            (mean - hyper.prior_mean[i]).abs() < 3.0 * (var / n as f64).sqrt(),
            "m{i}: {mean}"
        );
    }
    assert!(
        (&s_mean - &expected).amax() < 0.02 * expected.amax(),
        "{s_mean} vs {expected}"
    );
}

#[test]
fn single_cluster_matches_conjugate_posterior() {
    // α → 0 keeps every observation in the first cluster; a zero-scale proposal
    // pins η, so (m, Σ) follow the conjugate posterior of the log residuals.
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    let rows: Vec<Vec<f64>> = (0..40)
        .map(|_| {
            let z0: f64 = rng.sample(StandardNormal);
            let z1: f64 = rng.sample(StandardNormal);
            vec![0.2 + 0.4 * z0, -0.1 + 0.2 * z0 + 0.3 * z1]
        })
        .collect();
    let series = log_series(&rows);
    let (mut config, eta) = constant_mean_config(2, 26);
    config.alpha = 1e-8;
    config.proposal = ProposalConfig {
        weight: 0.9,
        scale1: 0.0,
        scale2: 0.0,
    };
    let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
    let post = normal_wishart_posterior(&config.nw_hyper, &refs).unwrap();
    let mut sampler = Sampler::new(config, &series, eta).unwrap();
    let n = 20_000;
    let mut m_draws = Vec::with_capacity(n);
    let mut s_mean = DMatrix::zeros(2, 2);
    for _ in 0..n {
        sampler.sweep().unwrap();
        assert!(sampler.state().labels.iter().all(|&l| l == 0));
        let c = &sampler.state().components[0];
        m_draws.push(c.location.clone());
        s_mean += &c.scale / n as f64;
    }
    let expected_s = post.scale_matrix.clone().try_inverse().unwrap() / (post.degrees - 3.0);
    for i in 0..2 {
        let trace: Vec<f64> = m_draws.iter().map(|m| m[i]).collect();
        let mean = trace.iter().sum::<f64>() / n as f64;
        let var = trace.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(
            (mean - post.prior_mean[i]).abs() < 3.0 * (var / n as f64).sqrt(),
            "m{i}: {mean} vs {}",
            post.prior_mean[i]
        );
    }
    assert!(
        (&s_mean - &expected_s).amax() < 0.02 * expected_s.amax(),
        "{s_mean} vs {expected_s}"
    );
}

#[test]
fn large_single_cluster_concentrates_at_the_truth() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let truth = [0.4, -0.3];
    let rows: Vec<Vec<f64>> = (0..10_000)
        .map(|_| {
            truth
                .iter()
                .map(|m| m + 0.5 * rng.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect();
    let series = log_series(&rows);
    let (config, eta) = constant_mean_config(2, 28);
    let mut sampler = Sampler::new(config, &series, eta).unwrap();
    let n = 200;
    let draws: Vec<DVector<f64>> = (0..n)
        .map(|_| {
            sampler.step_components().unwrap();
            sampler.state().components[0].location.clone()
        })
        .collect();
    for i in 0..2 {
        let mean = draws.iter().map(|m| m[i]).sum::<f64>() / n as f64;
        let sd = (draws.iter().map(|m| (m[i] - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        assert!(sd < 0.01, "posterior s.d. {sd}");
        assert!(
            (mean - truth[i]).abs() < 3.0 * sd,
            "m{i}: {mean} vs {}",
            truth[i]
        );
    }
}
