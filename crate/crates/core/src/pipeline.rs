//! Run orchestration: simulate, fit, evaluate and diagnose, with artifacts on disk.
//!
//! A failed run leaves an `INVALID` file holding the error in the output directory.

use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baseline::{ln1_map, Ln1Config, Ln1Fit};
use crate::error::{Result, VmemError};
use crate::evaluation::{acf, ess, linspace, DensityGrid, FitReport, LogDensityTable};
use crate::io::{
    load_series, read_json, write_json, write_series, write_table, ArchiveHeader, DrawArchive,
    GridSection, Mode, RunConfig,
};
use crate::model::{
    design, simulate, univariate_logn_density, InnovationSpec, MeanParams, SeriesMatrix,
};
use crate::postprocess::IdentifiedDraw;
use crate::sampler::{fallback_eta, AdaptSeed, Sampler, SamplerConfig};

pub const INVALID_MARKER: &str = "INVALID";
pub const DPM_MODEL_TAG: &str = "dpmln-vmem";

/// Ground truth written next to a simulated series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub eta: MeanParams,
    pub innovations: InnovationSpec,
    pub initial_mean: Vec<f64>,
    pub seed: u64,
    pub length: usize,
}

/// A baseline fit with the hash of the configuration that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ln1Record {
    pub config_hash: String,
    pub fit: Ln1Fit,
}

/// Result of [`fit_dpm`].
#[derive(Debug, Clone)]
pub struct DpmFit {
    /// Baseline fit used to start the chains; absent if it failed.
    pub ln1: Option<Ln1Fit>,
    /// Identified draws of all chains, chain by chain.
    pub draws: Vec<IdentifiedDraw>,
    pub acceptance: Vec<f64>,
}

/// Fit the baseline, then run `chains` sampler chains from its mode.
///
/// Chain `c` uses seed `sampler.seed + c`. When `adapt_seed_weight > 0` the
/// baseline's Laplace covariance enters the adaptation with that many pseudo-draws.
pub fn fit_dpm(
    series: &SeriesMatrix,
    sampler: &SamplerConfig,
    ln1_config: &Ln1Config,
    adapt_seed_weight: usize,
    chains: usize,
) -> Result<DpmFit> {
    let ln1 = match ln1_map(series, ln1_config) {
        Ok(fit) => Some(fit),
        Err(e) => {
            warn!("baseline fit failed ({e}); starting from the fallback mean parameters");
            None
        }
    };
    let eta_init = match &ln1 {
        Some(fit) => fit.eta.clone(),
        None => fallback_eta(series),
    };
    let configs: Vec<SamplerConfig> = (0..chains.max(1))
        .map(|c| {
            let mut cfg = sampler.clone();
            cfg.seed = sampler.seed.wrapping_add(c as u64);
            if let (Some(fit), true) = (&ln1, adapt_seed_weight > 0) {
                cfg.adapt_seed = Some(AdaptSeed {
                    covariance: fit.eta_covariance.clone(),
                    weight: adapt_seed_weight,
                });
            }
            cfg
        })
        .collect();
    let results: Vec<Result<(Vec<IdentifiedDraw>, f64)>> = std::thread::scope(|scope| {
        let handles: Vec<_> = configs
            .into_iter()
            .enumerate()
            .map(|(c, cfg)| {
                let eta = eta_init.clone();
                scope.spawn(move || -> Result<(Vec<IdentifiedDraw>, f64)> {
                    let mut s = Sampler::new(cfg, series, eta)
                        .map_err(|e| e.context(format!("chain {c}")))?;
                    let mut draws = Vec::new();
                    s.run_with(|_, draw| {
                        draws.push(draw);
                        Ok(())
                    })
                    .map_err(|e| e.context(format!("chain {c}")))?;
                    Ok((draws, s.acceptance_rate()))
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("sampler thread panicked"))
            .collect()
    });
    let mut draws = Vec::new();
    let mut acceptance = Vec::new();
    for r in results {
        let (d, a) = r?;
        draws.extend(d);
        acceptance.push(a);
    }
    Ok(DpmFit {
        ln1,
        draws,
        acceptance,
    })
}

/// LN1 marginal density grid.
pub fn ln1_grid(fit: &Ln1Fit, axis: &[f64]) -> DensityGrid {
    let d = fit.eta.dim();
    DensityGrid::marginal(d, axis, |i, e| {
        let s2 = fit.sigma[(i, i)];
        univariate_logn_density(e, -0.5 * s2, s2)
    })
}

fn marginal_rows(grid: &DensityGrid) -> Vec<Vec<f64>> {
    let axis = &grid.axes[0];
    (0..axis.len())
        .map(|k| {
            let mut row = vec![axis[k]];
            row.extend(grid.values.iter().map(|v| v[k]));
            row
        })
        .collect()
}

fn marginal_header(d: usize) -> Vec<String> {
    let mut h = vec!["e".to_string()];
    h.extend((1..=d).map(|i| format!("density_{i}")));
    h
}

/// Write per-marginal grids for the DPM predictive, the baseline and the truth,
/// plus a joint DPM grid when `d = 2`.
pub fn export_density_grids(
    dir: &Path,
    draws: &[IdentifiedDraw],
    ln1: Option<&Ln1Fit>,
    truth: Option<&InnovationSpec>,
    spec: &GridSection,
) -> Result<Vec<PathBuf>> {
    if draws.is_empty() {
        return Err(VmemError::Shape("no draws to export".into()));
    }
    let d = draws[0].dim();
    let axis = linspace(spec.lower, spec.upper, spec.points);
    let mut written = Vec::new();
    let mut emit = |name: &str, grid: &DensityGrid| -> Result<()> {
        let path = dir.join(format!("grid_{name}.csv"));
        write_table(&path, &marginal_header(d), &marginal_rows(grid))?;
        written.push(path);
        Ok(())
    };
    emit("dpm", &DensityGrid::predictive(draws, &axis))?;
    if let Some(fit) = ln1 {
        emit("ln1", &ln1_grid(fit, &axis))?;
    }
    if let Some(spec_truth) = truth {
        emit("truth", &DensityGrid::truth(spec_truth, &axis))?;
    }
    if d == 2 {
        let joint_axis = linspace(spec.lower, spec.upper, spec.points.min(80));
        let grid = DensityGrid::predictive_joint(draws, &joint_axis, &joint_axis)?;
        let mut rows = Vec::with_capacity(joint_axis.len() * joint_axis.len());
        for (i, x) in joint_axis.iter().enumerate() {
            for (j, y) in joint_axis.iter().enumerate() {
                rows.push(vec![*x, *y, grid.values[i][j]]);
            }
        }
        let path = dir.join("grid_joint_dpm.csv");
        write_table(&path, &["e1".into(), "e2".into(), "density".into()], &rows)?;
        written.push(path);
    }
    Ok(written)
}

/// Files produced by a pipeline run.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutcome {
    pub mode: Mode,
    pub files: Vec<PathBuf>,
}

/// Run the configured mode; on failure leave an `INVALID` marker and return the error.
pub fn run_pipeline(config: &RunConfig) -> Result<PipelineOutcome> {
    config.validate()?;
    let mode = config.mode.expect("validated");
    let out = &config.output;
    fs::create_dir_all(out)?;
    let marker = out.join(INVALID_MARKER);
    if marker.exists() {
        fs::remove_file(&marker)?;
    }
    let result = match mode {
        Mode::Simulate => run_simulate(config).map_err(|e| e.context("simulate")),
        Mode::FitDpm => run_fit_dpm(config).map_err(|e| e.context("fit-dpm")),
        Mode::FitLn1 => run_fit_ln1(config).map_err(|e| e.context("fit-ln1")),
        Mode::Evaluate => run_evaluate(config).map_err(|e| e.context("evaluate")),
        Mode::Diagnose => run_diagnose(config).map_err(|e| e.context("diagnose")),
    };
    match result {
        Ok(files) => Ok(PipelineOutcome { mode, files }),
        Err(e) => {
            fs::write(&marker, format!("{e}\n"))?;
            Err(e)
        }
    }
}

fn run_simulate(config: &RunConfig) -> Result<Vec<PathBuf>> {
    let seed = config.seed.expect("validated");
    let eta = design::mean_params();
    let innovations = design::innovations();
    let mu1: Vec<f64> = match &config.simulate.initial_mean {
        Some(m) => m.clone(),
        None => design::fixed_point(&eta)
            .ok_or_else(|| VmemError::Domain("design has no positive fixed point".into()))?
            .as_slice()
            .to_vec(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let series = simulate(&eta, &innovations, config.simulate.length, &mu1, &mut rng)?;
    let series_path = config.output.join("series.csv");
    write_series(&series_path, &series)?;
    let truth_path = config.output.join("truth.json");
    write_json(
        &truth_path,
        &Truth {
            eta,
            innovations,
            initial_mean: mu1,
            seed,
            length: config.simulate.length,
        },
    )?;
    Ok(vec![series_path, truth_path])
}

fn load_config_series(config: &RunConfig) -> Result<SeriesMatrix> {
    let path = config.data_path();
    load_series(&path, &config.data.columns, config.data.annualize)
        .map_err(|e| e.context(format!("loading {}", path.display())))
}

fn write_report(path: &Path, report: &FitReport, truth: Option<&MeanParams>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| VmemError::Data(e.to_string()))?;
    let mut header = vec!["parameter", "mean", "q025", "q975", "ess"];
    if truth.is_some() {
        header.push("true");
    }
    w.write_record(&header)
        .map_err(|e| VmemError::Data(e.to_string()))?;
    let true_values = truth.map(MeanParams::to_vec);
    for (i, name) in report.names.iter().enumerate() {
        let mut rec = vec![
            name.clone(),
            format!("{:?}", report.posterior_means[i]),
            format!("{:?}", report.credible_intervals[i].0),
            format!("{:?}", report.credible_intervals[i].1),
            format!("{:?}", report.ess_per_param[i]),
        ];
        if let Some(t) = &true_values {
            rec.push(format!("{:?}", t[i]));
        }
        w.write_record(&rec)
            .map_err(|e| VmemError::Data(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Comparison table: one row per model with LPS and LPML (lower is better).
fn write_scores(path: &Path, rows: &[(&str, f64, f64)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| VmemError::Data(e.to_string()))?;
    w.write_record(["model", "lps", "lpml"])
        .map_err(|e| VmemError::Data(e.to_string()))?;
    for (model, lps, lpml) in rows {
        w.write_record([model.to_string(), format!("{lps:?}"), format!("{lpml:?}")])
            .map_err(|e| VmemError::Data(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

fn read_truth(config: &RunConfig) -> Option<Truth> {
    let path = config.output.join("truth.json");
    path.exists().then(|| read_json(&path).ok()).flatten()
}

fn run_fit_dpm(config: &RunConfig) -> Result<Vec<PathBuf>> {
    let series = load_config_series(config)?;
    let d = series.dim();
    let sampler = config.sampler_config(d)?;
    let ln1_config = config.ln1_config(d)?;
    let fit = fit_dpm(
        &series,
        &sampler,
        &ln1_config,
        config.sampler.adapt_seed_weight,
        config.sampler.chains,
    )?;
    info!(
        "{} draws retained; acceptance rates {:?}",
        fit.draws.len(),
        fit.acceptance
    );
    let hash = config.config_hash();
    let out = &config.output;
    let mut files = Vec::new();
    let archive = DrawArchive {
        header: ArchiveHeader {
            model: DPM_MODEL_TAG.into(),
            d,
            t: series.len(),
            config_hash: hash.clone(),
            seed: sampler.seed,
            chains: config.sampler.chains,
        },
        draws: fit.draws,
    };
    let archive_path = out.join("draws.bin");
    archive.save(&archive_path)?;
    files.push(archive_path);
    let report = FitReport::from_draws(&archive.draws, &series)?;
    let truth = read_truth(config);
    let report_path = out.join("report.csv");
    write_report(&report_path, &report, truth.as_ref().map(|t| &t.eta))?;
    files.push(report_path);
    let mut scores = vec![("DPMLN-vMEM", report.lps, report.lpml)];
    if let Some(ln1) = fit.ln1 {
        let table = LogDensityTable::new(&[ln1.as_draw()?], &series)?;
        let ln1_path = out.join("ln1.json");
        write_json(
            &ln1_path,
            &Ln1Record {
                config_hash: hash,
                fit: ln1,
            },
        )?;
        files.push(ln1_path);
        scores.push(("LN1-vMEM", table.lps()?, table.lpml()));
    }
    let scores_path = out.join("scores.csv");
    write_scores(&scores_path, &scores)?;
    files.push(scores_path);
    Ok(files)
}

fn run_fit_ln1(config: &RunConfig) -> Result<Vec<PathBuf>> {
    let series = load_config_series(config)?;
    let fit = ln1_map(&series, &config.ln1_config(series.dim())?)?;
    let path = config.output.join("ln1.json");
    write_json(
        &path,
        &Ln1Record {
            config_hash: config.config_hash(),
            fit,
        },
    )?;
    Ok(vec![path])
}

fn load_checked_archive(config: &RunConfig) -> Result<DrawArchive> {
    let archive = DrawArchive::load(&config.output.join("draws.bin"))?;
    let hash = config.config_hash();
    if archive.header.config_hash != hash {
        return Err(VmemError::Config(format!(
            "configuration hash {hash} does not match the archive's {}; refusing to mix runs",
            archive.header.config_hash
        )));
    }
    if archive.draws.is_empty() {
        return Err(VmemError::Archive("archive holds no draws".into()));
    }
    Ok(archive)
}

fn load_checked_ln1(config: &RunConfig) -> Result<Option<Ln1Fit>> {
    let path = config.output.join("ln1.json");
    if !path.exists() {
        return Ok(None);
    }
    let record: Ln1Record = read_json(&path)?;
    if record.config_hash != config.config_hash() {
        return Err(VmemError::Config(format!(
            "configuration hash does not match {}; refusing to mix runs",
            path.display()
        )));
    }
    Ok(Some(record.fit))
}

fn run_evaluate(config: &RunConfig) -> Result<Vec<PathBuf>> {
    let series = load_config_series(config)?;
    let archive = load_checked_archive(config)?;
    let ln1 = load_checked_ln1(config)?;
    let out = &config.output;
    let table = LogDensityTable::new(&archive.draws, &series)?;
    let mut scores = vec![("DPMLN-vMEM", table.lps()?, table.lpml())];
    if let Some(fit) = &ln1 {
        let t = LogDensityTable::new(&[fit.as_draw()?], &series)?;
        scores.push(("LN1-vMEM", t.lps()?, t.lpml()));
    }
    let scores_path = out.join("scores.csv");
    write_scores(&scores_path, &scores)?;
    let truth = read_truth(config);
    let mut files = vec![scores_path];
    files.extend(export_density_grids(
        out,
        &archive.draws,
        ln1.as_ref(),
        truth.as_ref().map(|t| &t.innovations),
        &config.grid,
    )?);
    Ok(files)
}

fn run_diagnose(config: &RunConfig) -> Result<Vec<PathBuf>> {
    let archive = load_checked_archive(config)?;
    let out = &config.output;
    let draws = &archive.draws;
    let d = archive.header.d;
    let names = MeanParams::param_names(d);
    let traces = crate::evaluation::eta_traces(draws);
    let mut files = Vec::new();
    for (name, trace) in names.iter().zip(&traces) {
        let path = out.join(format!("trace_{name}.csv"));
        let rows: Vec<Vec<f64>> = trace
            .iter()
            .enumerate()
            .map(|(n, v)| vec![n as f64, *v])
            .collect();
        write_table(&path, &["draw".into(), "value".into()], &rows)?;
        files.push(path);
    }
    let max_lag = 200.min(draws.len().saturating_sub(1));
    let acfs: Vec<Vec<f64>> = traces
        .iter()
        .map(|t| acf(t, max_lag).unwrap_or_else(|| vec![f64::NAN; max_lag + 1]))
        .collect();
    let acf_rows: Vec<Vec<f64>> = (0..=max_lag)
        .map(|k| {
            let mut row = vec![k as f64];
            row.extend(acfs.iter().map(|a| a[k]));
            row
        })
        .collect();
    let mut acf_header = vec!["lag".to_string()];
    acf_header.extend(names.iter().cloned());
    let acf_path = out.join("acf.csv");
    write_table(&acf_path, &acf_header, &acf_rows)?;
    files.push(acf_path);

    let mut w =
        csv::Writer::from_path(out.join("ess.csv")).map_err(|e| VmemError::Data(e.to_string()))?;
    w.write_record(["parameter", "ess", "zero_variance"])
        .map_err(|e| VmemError::Data(e.to_string()))?;
    for (name, trace) in names.iter().zip(&traces) {
        let e = ess(trace)?;
        w.write_record([
            name.clone(),
            format!("{:?}", e.value),
            e.zero_variance.to_string(),
        ])
        .map_err(|e| VmemError::Data(e.to_string()))?;
    }
    w.flush()?;
    files.push(out.join("ess.csv"));

    let rows: Vec<Vec<f64>> = draws
        .iter()
        .enumerate()
        .map(|(n, dr)| {
            vec![
                n as f64,
                dr.active_components as f64,
                dr.instantiated_components as f64,
                dr.truncation.k as f64,
            ]
        })
        .collect();
    let comp_path = out.join("components.csv");
    write_table(
        &comp_path,
        &[
            "draw".into(),
            "active".into(),
            "instantiated".into(),
            "truncation_k".into(),
        ],
        &rows,
    )?;
    files.push(comp_path);
    Ok(files)
}

/// Mean of the retained mixture for every draw, as a sanity summary.
pub fn innovation_means(draws: &[IdentifiedDraw]) -> Result<Vec<DVector<f64>>> {
    draws.iter().map(IdentifiedDraw::innovation_mean).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::read_table;

    fn small_config(dir: &Path, mode: Mode) -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.mode = Some(mode);
        cfg.seed = Some(11);
        cfg.output = dir.to_path_buf();
        cfg.data.columns = vec!["x1".into(), "x2".into(), "x3".into()];
        cfg.simulate.length = 150;
        cfg.sampler.iterations = 300;
        cfg.sampler.burn_in = 100;
        cfg.sampler.thin = 5;
        cfg.ln1.starts = 2;
        cfg.ln1.max_evaluations = 20_000;
        cfg.grid.points = 50;
        cfg
    }

    #[test]
    fn simulate_is_deterministic() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        run_pipeline(&small_config(a.path(), Mode::Simulate)).unwrap();
        run_pipeline(&small_config(b.path(), Mode::Simulate)).unwrap();
        for f in ["series.csv", "truth.json"] {
            assert_eq!(
                fs::read(a.path().join(f)).unwrap(),
                fs::read(b.path().join(f)).unwrap()
            );
        }
    }

    #[test]
    fn full_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        run_pipeline(&small_config(dir.path(), Mode::Simulate)).unwrap();
        run_pipeline(&small_config(dir.path(), Mode::FitDpm)).unwrap();
        let eval = run_pipeline(&small_config(dir.path(), Mode::Evaluate)).unwrap();
        assert!(eval.files.iter().any(|f| f.ends_with("grid_truth.csv")));
        let (header, rows) = read_table(&dir.path().join("grid_dpm.csv")).unwrap();
        assert_eq!(header, vec!["e", "density_1", "density_2", "density_3"]);
        assert_eq!(rows.len(), 50);
        run_pipeline(&small_config(dir.path(), Mode::Diagnose)).unwrap();
        assert!(dir.path().join("trace_beta_21.csv").exists());
        assert!(dir.path().join("components.csv").exists());
        assert!(!dir.path().join(INVALID_MARKER).exists());
    }

    #[test]
    fn hash_mismatch_is_refused_and_marked() {
        let dir = tempfile::tempdir().unwrap();
        run_pipeline(&small_config(dir.path(), Mode::Simulate)).unwrap();
        run_pipeline(&small_config(dir.path(), Mode::FitDpm)).unwrap();
        let mut other = small_config(dir.path(), Mode::Evaluate);
        other.sampler.iterations = 301;
        let err = run_pipeline(&other).unwrap_err();
        assert!(err.to_string().contains("hash"), "{err}");
        assert!(dir.path().join(INVALID_MARKER).exists());
        // a good run clears the marker
        run_pipeline(&small_config(dir.path(), Mode::Evaluate)).unwrap();
        assert!(!dir.path().join(INVALID_MARKER).exists());
    }

    #[test]
    fn missing_data_marks_output_invalid() {
        let dir = tempfile::tempdir().unwrap();
        let err = run_pipeline(&small_config(dir.path(), Mode::FitLn1)).unwrap_err();
        assert!(err.to_string().starts_with("fit-ln1"), "{err}");
        assert!(dir.path().join(INVALID_MARKER).exists());
    }
}
