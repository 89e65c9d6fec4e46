use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use vmem_core::baseline::{ln1_map, unit_mean_component, Ln1Config, Ln1Posterior};
use vmem_core::model::{design, simulate, InnovationSpec, MeanParams, SeriesMatrix};

fn ln1_series(eta: &MeanParams, sigma: &DMatrix<f64>, t: usize, seed: u64) -> SeriesMatrix {
    let spec = InnovationSpec::new(vec![1.0], vec![unit_mean_component(sigma).unwrap()]).unwrap();
    let mu1 = design::fixed_point(eta).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    simulate(eta, &spec, t, mu1.as_slice(), &mut rng).unwrap()
}

fn count_within(estimate: &[f64], truth: &[f64], se: &[f64]) -> usize {
    estimate
        .iter()
        .zip(truth)
        .zip(se)
        .filter(|((e, t), s)| (*e - *t).abs() <= 3.0 * *s)
        .count()
}

#[test]
fn recovers_ln1_generating_parameters() {
    let eta = design::mean_params();
    let sigma = design::innovations().components[0].scale.clone();
    let series = ln1_series(&eta, &sigma, 5000, 41);
    let config = Ln1Config::new(3, 41);
    let fit = ln1_map(&series, &config).unwrap();
    let truth = eta.to_vec();
    let within = count_within(&fit.eta.to_vec(), &truth, &fit.std_errors);
    assert!(within * 10 >= truth.len() * 9, "{within}/21 within 3 s.e.");
    assert!(fit.std_errors.iter().all(|s| *s > 0.0));

    // the returned mode beats the generating parameters
    let post =
        Ln1Posterior::new(&series, series.sample_mean().as_slice().to_vec(), &config).unwrap();
    let at_truth = post.log_posterior(&eta, &sigma);
    assert!(
        fit.log_posterior >= at_truth,
        "{} < {at_truth}",
        fit.log_posterior
    );
}

#[test]
fn static_process_has_no_dynamics() {
    let omega = DVector::from_column_slice(&[0.8, 1.5]);
    let eta = MeanParams::new(omega.clone(), DMatrix::zeros(2, 2), DMatrix::zeros(2, 2)).unwrap();
    let sigma = DMatrix::from_row_slice(2, 2, &[0.3, 0.1, 0.1, 0.2]);
    let series = ln1_series(&eta, &sigma, 3000, 42);
    let fit = ln1_map(&series, &Ln1Config::new(2, 42)).unwrap();
    let truth = eta.to_vec();
    let estimate = fit.eta.to_vec();
    for (i, name) in MeanParams::param_names(2).iter().enumerate() {
        assert!(
            (estimate[i] - truth[i]).abs() <= 3.0 * fit.std_errors[i],
            "{name}: {} vs {} (s.e. {})",
            estimate[i],
            truth[i],
            fit.std_errors[i]
        );
    }
}
