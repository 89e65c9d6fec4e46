//! File formats: series CSV, run configuration, draw archives and numeric tables.
//!
//! Numbers are written with Rust's shortest round-trip representation, so every
//! emitted value parses back to the identical `f64`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baseline::Ln1Config;
use crate::error::{Result, VmemError};
use crate::kernels::{MixtureComponent, NwHyper};
use crate::model::{MeanParams, RowMatrix, SeriesMatrix};
use crate::postprocess::{IdentifiedDraw, TruncationReport};
use crate::sampler::{ProposalConfig, SamplerConfig};

/// `100·√252 = 1587.45078663875…`: daily volatility to annualized percentage points.
pub fn annualization_factor() -> f64 {
    100.0 * 252f64.sqrt()
}

/// Read a header-bearing CSV whose first column is a row label.
///
/// `columns` names the numeric columns to keep, in order. Rows with a missing,
/// unparsable or non-positive selected value are reported together.
pub fn load_series(path: &Path, columns: &[String], annualize: bool) -> Result<SeriesMatrix> {
    if columns.is_empty() {
        return Err(VmemError::Config("no data columns selected".into()));
    }
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| VmemError::Data(format!("{}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| VmemError::Data(format!("{}: {e}", path.display())))?
        .clone();
    let mut index = Vec::with_capacity(columns.len());
    for name in columns {
        match headers.iter().skip(1).position(|h| h == name) {
            Some(i) => index.push(i + 1),
            None => {
                return Err(VmemError::Config(format!(
                    "column '{name}' not found in {}",
                    path.display()
                )))
            }
        }
    }
    let scale = if annualize {
        annualization_factor()
    } else {
        1.0
    };
    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut bad_rows = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| VmemError::Data(format!("{}: {e}", path.display())))?;
        let mut ok = true;
        let mut parsed = Vec::with_capacity(index.len());
        for &i in &index {
            match record.get(i).and_then(|s| s.parse::<f64>().ok()) {
                Some(v) if v * scale > 0.0 && (v * scale).is_finite() => parsed.push(v * scale),
                _ => ok = false,
            }
        }
        // data rows are numbered from 1, after the header
        if !ok {
            bad_rows.push(row + 1);
            continue;
        }
        labels.push(record.get(0).unwrap_or_default().to_string());
        values.extend(parsed);
    }
    if !bad_rows.is_empty() {
        return Err(VmemError::Data(format!(
            "{}: missing or non-positive values in data rows {:?}",
            path.display(),
            bad_rows
        )));
    }
    let matrix = RowMatrix::from_flat(values, columns.len())?;
    SeriesMatrix::new(matrix, Some(labels))
}

/// Write a series as `t,x1..xd` (or its own labels when present).
pub fn write_series(path: &Path, series: &SeriesMatrix) -> Result<()> {
    let d = series.dim();
    let mut w = BufWriter::new(File::create(path)?);
    let names: Vec<String> = (1..=d).map(|i| format!("x{i}")).collect();
    writeln!(w, "t,{}", names.join(","))?;
    for t in 0..series.len() {
        let label = match series.labels() {
            Some(l) => l[t].clone(),
            None => (t + 1).to_string(),
        };
        writeln!(w, "{label},{}", join_numbers(series.row(t)))?;
    }
    w.flush()?;
    Ok(())
}

pub fn join_numbers(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| format!("{v:?}"))
        .collect::<Vec<_>>()
        .join(",")
}

/// Write a numeric table with a one-line header.
pub fn write_table(path: &Path, header: &[String], rows: &[Vec<f64>]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{}", header.join(","))?;
    for row in rows {
        writeln!(w, "{}", join_numbers(row))?;
    }
    w.flush()?;
    Ok(())
}

/// Read a table written by [`write_table`].
pub fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| VmemError::Data(format!("{}: {e}", path.display())))?;
    let header = reader
        .headers()
        .map_err(|e| VmemError::Data(e.to_string()))?
        .iter()
        .map(String::from)
        .collect();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| VmemError::Data(e.to_string()))?;
        let row = record
            .iter()
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|e| VmemError::Data(format!("{}: '{s}': {e}", path.display())))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok((header, rows))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| VmemError::Data(format!("serialising {}: {e}", path.display())))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| VmemError::Data(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| VmemError::Data(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Simulate,
    FitDpm,
    FitLn1,
    Evaluate,
    Diagnose,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Input CSV; defaults to `series.csv` in the output directory.
    pub path: Option<PathBuf>,
    pub columns: Vec<String>,
    pub annualize: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    pub length: usize,
    /// Starting conditional mean; the design's fixed point when absent.
    pub initial_mean: Option<Vec<f64>>,
}

impl Default for SimulateSection {
    fn default() -> Self {
        SimulateSection {
            length: 1000,
            initial_mean: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerSection {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub alpha: f64,
    pub eps_mean_trunc: f64,
    pub eta_prior_variance: f64,
    pub proposal_weight: f64,
    pub proposal_scale1: f64,
    pub proposal_scale2: f64,
    pub eta_steps: usize,
    /// Pseudo-draws given to the baseline's Laplace covariance in the adaptation; 0 disables.
    pub adapt_seed_weight: usize,
    pub chains: usize,
    pub initial_mean: Option<Vec<f64>>,
}

impl Default for SamplerSection {
    fn default() -> Self {
        let p = ProposalConfig::default();
        SamplerSection {
            iterations: 30_000,
            burn_in: 5_000,
            thin: 10,
            alpha: 1.0,
            eps_mean_trunc: 1e-6,
            eta_prior_variance: 20.0,
            proposal_weight: p.weight,
            proposal_scale1: p.scale1,
            proposal_scale2: p.scale2,
            eta_steps: 1,
            adapt_seed_weight: 0,
            chains: 1,
            initial_mean: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorSection {
    /// Wishart degrees; `10 + d` when absent.
    pub degrees: Option<f64>,
    /// Wishart scale `W = scale_diagonal · I`.
    pub scale_diagonal: f64,
    pub prior_mean: Option<Vec<f64>>,
    pub precision_scale: f64,
}

impl Default for PriorSection {
    fn default() -> Self {
        PriorSection {
            degrees: None,
            scale_diagonal: 1.0,
            prior_mean: None,
            precision_scale: 1.0,
        }
    }
}

impl PriorSection {
    pub fn hyper(&self, d: usize) -> Result<NwHyper> {
        NwHyper::new(
            self.degrees.unwrap_or(10.0 + d as f64),
            DMatrix::identity(d, d) * self.scale_diagonal,
            match &self.prior_mean {
                Some(m) => DVector::from_column_slice(m),
                None => DVector::zeros(d),
            },
            self.precision_scale,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ln1Section {
    pub starts: usize,
    pub tolerance: f64,
    pub max_evaluations: usize,
}

impl Default for Ln1Section {
    fn default() -> Self {
        Ln1Section {
            starts: 5,
            tolerance: 1e-8,
            max_evaluations: 400_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub points: usize,
    pub lower: f64,
    pub upper: f64,
}

impl Default for GridSection {
    fn default() -> Self {
        GridSection {
            points: 400,
            lower: 1e-3,
            upper: 8.0,
        }
    }
}

/// A run configuration, read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Option<Mode>,
    pub seed: Option<u64>,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub simulate: SimulateSection,
    #[serde(default)]
    pub sampler: SamplerSection,
    #[serde(default)]
    pub prior: PriorSection,
    #[serde(default)]
    pub ln1: Ln1Section,
    #[serde(default)]
    pub grid: GridSection,
}

fn default_output() -> PathBuf {
    PathBuf::from("output")
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            mode: None,
            seed: None,
            output: default_output(),
            data: DataSection::default(),
            simulate: SimulateSection::default(),
            sampler: SamplerSection::default(),
            prior: PriorSection::default(),
            ln1: Ln1Section::default(),
            grid: GridSection::default(),
        }
    }
}

/// The part of a configuration that determines a fit.
#[derive(Serialize)]
struct FitIdentity<'a> {
    seed: Option<u64>,
    data: &'a DataSection,
    sampler: &'a SamplerSection,
    prior: &'a PriorSection,
    ln1: &'a Ln1Section,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| VmemError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| VmemError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| e.context(path.display().to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| VmemError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let mode = self
            .mode
            .ok_or_else(|| VmemError::Config("mode is not set".into()))?;
        if matches!(mode, Mode::Simulate | Mode::FitDpm | Mode::FitLn1) && self.seed.is_none() {
            return Err(VmemError::Config(format!("{mode:?} needs a seed")));
        }
        if mode != Mode::Simulate && self.data.columns.is_empty() {
            return Err(VmemError::Config(
                "data.columns must list the series columns".into(),
            ));
        }
        if mode == Mode::Simulate && self.simulate.length < 2 {
            return Err(VmemError::Config(
                "simulate.length must be at least 2".into(),
            ));
        }
        if self.sampler.chains == 0 {
            return Err(VmemError::Config(
                "sampler.chains must be at least 1".into(),
            ));
        }
        if !(self.grid.points >= 2 && self.grid.lower > 0.0 && self.grid.upper > self.grid.lower) {
            return Err(VmemError::Config(format!("invalid grid {:?}", self.grid)));
        }
        Ok(())
    }

    /// SHA-256 over the fit-determining sections, hex encoded.
    pub fn config_hash(&self) -> String {
        let identity = FitIdentity {
            seed: self.seed,
            data: &self.data,
            sampler: &self.sampler,
            prior: &self.prior,
            ln1: &self.ln1,
        };
        let bytes = serde_json::to_vec(&identity).expect("config sections serialise");
        Sha256::digest(&bytes)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn data_path(&self) -> PathBuf {
        self.data
            .path
            .clone()
            .unwrap_or_else(|| self.output.join("series.csv"))
    }

    pub fn sampler_config(&self, d: usize) -> Result<SamplerConfig> {
        let s = &self.sampler;
        let mut cfg = SamplerConfig::new(d, self.seed.unwrap_or(0));
        cfg.iterations = s.iterations;
        cfg.burn_in = s.burn_in;
        cfg.thin = s.thin;
        cfg.alpha = s.alpha;
        cfg.eps_mean_trunc = s.eps_mean_trunc;
        cfg.eta_prior_variance = s.eta_prior_variance;
        cfg.proposal = ProposalConfig {
            weight: s.proposal_weight,
            scale1: s.proposal_scale1,
            scale2: s.proposal_scale2,
        };
        cfg.eta_steps = s.eta_steps;
        cfg.initial_mean = s.initial_mean.clone();
        cfg.nw_hyper = self.prior.hyper(d)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn ln1_config(&self, d: usize) -> Result<Ln1Config> {
        let mut cfg = Ln1Config::new(d, self.seed.unwrap_or(0));
        cfg.nw_hyper = self.prior.hyper(d)?;
        cfg.eta_prior_variance = self.sampler.eta_prior_variance;
        cfg.starts = self.ln1.starts;
        cfg.tolerance = self.ln1.tolerance;
        cfg.max_evaluations = self.ln1.max_evaluations;
        cfg.initial_mean = self.sampler.initial_mean.clone();
        Ok(cfg)
    }
}

const ARCHIVE_MAGIC: &[u8; 8] = b"VMEMDRAW";
const ARCHIVE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchiveHeader {
    pub model: String,
    pub d: usize,
    pub t: usize,
    pub config_hash: String,
    pub seed: u64,
    pub chains: usize,
}

/// Identified posterior draws with their provenance header.
#[derive(Debug, Clone, PartialEq)]
pub struct DrawArchive {
    pub header: ArchiveHeader,
    pub draws: Vec<IdentifiedDraw>,
}

fn archive_err(e: impl std::fmt::Display) -> VmemError {
    VmemError::Archive(e.to_string())
}

fn encode_draw(draw: &IdentifiedDraw) -> Result<Vec<u8>> {
    let d = draw.dim();
    let k = draw.weights.len();
    let mut buf = Vec::new();
    buf.write_u64::<LittleEndian>(d as u64)?;
    buf.write_u64::<LittleEndian>(k as u64)?;
    buf.write_u64::<LittleEndian>(draw.truncation.k as u64)?;
    buf.write_u64::<LittleEndian>(draw.active_components as u64)?;
    buf.write_u64::<LittleEndian>(draw.instantiated_components as u64)?;
    let mut floats = draw.eta.to_vec();
    floats.extend(draw.initial_mean.iter());
    floats.extend(draw.mixture_mean.iter());
    floats.push(draw.truncation.residual_mass);
    floats.extend(&draw.weights);
    for c in &draw.components {
        floats.extend(c.location.iter());
        floats.extend(c.scale.iter());
    }
    for v in floats {
        buf.write_u64::<LittleEndian>(v.to_bits())?;
    }
    Ok(buf)
}

fn decode_draw(bytes: &[u8]) -> Result<IdentifiedDraw> {
    let mut r = bytes;
    let mut next_usize = || r.read_u64::<LittleEndian>().map(|v| v as usize);
    let d = next_usize()?;
    let k = next_usize()?;
    let trunc_k = next_usize()?;
    let active = next_usize()?;
    let instantiated = next_usize()?;
    let m = MeanParams::param_count(d);
    let expected = 5 * 8 + 8 * (m + 2 * d + 1 + k + k * (d + d * d));
    if bytes.len() != expected {
        return Err(VmemError::Archive(format!(
            "draw record of {} bytes, expected {expected}",
            bytes.len()
        )));
    }
    let mut rest = &bytes[40..];
    let mut take = |n: usize| -> Result<Vec<f64>> {
        (0..n)
            .map(|_| Ok(f64::from_bits(rest.read_u64::<LittleEndian>()?)))
            .collect()
    };
    let eta = MeanParams::from_slice(d, &take(m)?)?;
    let initial_mean = DVector::from_vec(take(d)?);
    let mixture_mean = DVector::from_vec(take(d)?);
    let residual_mass = take(1)?[0];
    let weights = take(k)?;
    let mut components = Vec::with_capacity(k);
    for _ in 0..k {
        let location = DVector::from_vec(take(d)?);
        let scale = DMatrix::from_vec(d, d, take(d * d)?);
        components.push(MixtureComponent { location, scale });
    }
    Ok(IdentifiedDraw {
        eta,
        initial_mean,
        weights,
        components,
        mixture_mean,
        truncation: TruncationReport {
            k: trunc_k,
            residual_mass,
        },
        active_components: active,
        instantiated_components: instantiated,
    })
}

impl DrawArchive {
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let header = serde_json::to_vec(&self.header).map_err(archive_err)?;
        w.write_all(ARCHIVE_MAGIC)?;
        w.write_u32::<LittleEndian>(ARCHIVE_VERSION)?;
        w.write_u64::<LittleEndian>(header.len() as u64)?;
        w.write_all(&header)?;
        w.write_u64::<LittleEndian>(self.draws.len() as u64)?;
        for draw in &self.draws {
            let record = encode_draw(draw)?;
            w.write_u64::<LittleEndian>(record.len() as u64)?;
            w.write_all(&record)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)
            .map_err(|e| archive_err(format!("reading magic: {e}")))?;
        if &magic != ARCHIVE_MAGIC {
            return Err(VmemError::Archive("not a draw archive".into()));
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != ARCHIVE_VERSION {
            return Err(VmemError::Archive(format!(
                "unsupported archive version {version}"
            )));
        }
        let header_len = r.read_u64::<LittleEndian>()? as usize;
        let mut header = vec![0u8; header_len];
        r.read_exact(&mut header)?;
        let header: ArchiveHeader = serde_json::from_slice(&header).map_err(archive_err)?;
        let count = r.read_u64::<LittleEndian>()? as usize;
        let mut draws = Vec::with_capacity(count.min(1 << 20));
        for n in 0..count {
            let len = r.read_u64::<LittleEndian>()? as usize;
            let mut record = vec![0u8; len];
            r.read_exact(&mut record)
                .map_err(|e| archive_err(format!("draw {n}: {e}")))?;
            let draw = decode_draw(&record).map_err(|e| e.context(format!("draw {n}")))?;
            draw.validate()
                .map_err(|e| e.context(format!("draw {n}")))?;
            if draw.dim() != header.d {
                return Err(VmemError::Archive(format!(
                    "draw {n} has d = {}, header says {}",
                    draw.dim(),
                    header.d
                )));
            }
            draws.push(draw);
        }
        Ok(DrawArchive { header, draws })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| archive_err(format!("{}: {e}", path.display())))?;
        Self::read_from(BufReader::new(file))
    }
}
