use nalgebra::DVector;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vmem_core::evaluation::{linspace, trapezoid, DensityGrid};
use vmem_core::io::{
    load_series, read_table, write_series, write_table, ArchiveHeader, DrawArchive,
};
use vmem_core::kernels::{normal_wishart_sample, NwHyper, StickState};
use vmem_core::model::{design, MeanParams, RowMatrix, SeriesMatrix};
use vmem_core::postprocess::{identify_parts, truncation_level, IdentifiedDraw};

fn random_draw(rng: &mut ChaCha8Rng, d: usize) -> IdentifiedDraw {
    let m = MeanParams::param_count(d);
    let eta = MeanParams::from_slice(
        d,
        &(0..m)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect::<Vec<_>>(),
    )
    .unwrap();
    let mu1 = DVector::from_fn(d, |_, _| rng.random_range(0.1..3.0));
    let mut sticks = StickState::new(rng.random_range(0.2..4.0));
    let k = truncation_level(&mut sticks, 1e-6, rng).unwrap().k;
    let hyper = NwHyper::default_for_dim(d);
    let comps: Vec<_> = (0..k)
        .map(|_| normal_wishart_sample(&hyper, rng).unwrap())
        .collect();
    let mut draw = identify_parts(&eta, &mu1, &sticks, &comps, 1e-6).unwrap();
    draw.active_components = rng.random_range(1..=k);
    draw
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn archive_round_trip_is_bit_exact(seed in any::<u64>(), d in 1usize..4, n in 0usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let archive = DrawArchive {
            header: ArchiveHeader {
                model: "dpmln-vmem".into(),
                d,
                t: rng.random_range(2..10_000),
                config_hash: format!("{seed:x}"),
                seed,
                chains: 1,
            },
            draws: (0..n).map(|_| random_draw(&mut rng, d)).collect(),
        };
        let mut bytes = Vec::new();
        archive.write_to(&mut bytes).unwrap();
        let back = DrawArchive::read_from(bytes.as_slice()).unwrap();
        prop_assert_eq!(&back, &archive);
        for (a, b) in back.draws.iter().zip(&archive.draws) {
            for (x, y) in a.eta.to_vec().iter().zip(b.eta.to_vec()) {
                prop_assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn numeric_tables_parse_back_exactly(values in prop::collection::vec(
        prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO, 1..60)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("table.csv");
        let rows: Vec<Vec<f64>> = values.chunks(3).map(|c| {
            let mut r = c.to_vec();
            r.resize(3, 0.5);
            r
        }).collect();
        let header = vec!["a".to_string(), "b".into(), "c".into()];
        write_table(&path, &header, &rows).unwrap();
        let (h, back) = read_table(&path).unwrap();
        prop_assert_eq!(h, header);
        prop_assert_eq!(back.len(), rows.len());
        for (r, s) in back.iter().zip(&rows) {
            for (x, y) in r.iter().zip(s) {
                prop_assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn series_files_round_trip(seed in any::<u64>(), t in 2usize..50, d in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let flat: Vec<f64> = (0..t * d).map(|_| rng.random_range(1e-8..1e4)).collect();
        let series = SeriesMatrix::new(RowMatrix::from_flat(flat, d).unwrap(), None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("series.csv");
        write_series(&path, &series).unwrap();
        let columns: Vec<String> = (1..=d).map(|i| format!("x{i}")).collect();
        let back = load_series(&path, &columns, false).unwrap();
        prop_assert_eq!(back.values().as_slice(), series.values().as_slice());
    }
}

#[test]
fn true_marginal_grids_integrate_to_one() {
    let axis = linspace(1e-3, 8.0, 400);
    let grid = DensityGrid::truth(&design::innovations(), &axis);
    for (i, integral) in grid.marginal_integrals().iter().enumerate() {
        assert!(
            (integral - 1.0).abs() <= 0.02,
            "marginal {}: {integral}",
            i + 1
        );
    }
    let direct: Vec<f64> = axis
        .iter()
        .map(|e| design::innovations().marginal_density(0, *e))
        .collect();
    assert!((trapezoid(&axis, &direct) - grid.marginal_integrals()[0]).abs() < 1e-12);
}

#[test]
fn annualized_file_scales_every_value() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("rv.csv");
    std::fs::write(&path, "date,rv\n2001-01-02,0.01\n2001-01-03,0.0004\n").unwrap();
    let series = load_series(&path, &["rv".to_string()], true).unwrap();
    let c = 100.0 * 252f64.sqrt();
    assert_eq!(series.row(0)[0], 0.01 * c);
    assert_eq!(series.row(1)[0], 0.0004 * c);
    assert!((series.row(0)[0] - 15.8745).abs() < 1e-4);
}
