//! File formats: dataset CSV, simulation sidecar, partition map, knot sets,
//! posterior summaries, the binary draw dump, predictions and surfaces.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use patchwork_core::mcmc::ParamSummary;
use patchwork_core::simulate::SimConfig;
use patchwork_core::{Family, Location, Matrix, SpatialDataset};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::DataConfig;
use crate::error::{Error, Result};

/// Column mapping of a dataset CSV.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schema {
    pub x: String,
    pub y: String,
    pub z: String,
    /// Empty: every other column, in file order.
    pub covariates: Vec<String>,
}

impl Default for Schema {
    fn default() -> Self {
        Self { x: "x".into(), y: "y".into(), z: "z".into(), covariates: Vec::new() }
    }
}

impl From<&DataConfig> for Schema {
    fn from(d: &DataConfig) -> Self {
        Self { x: d.x.clone(), y: d.y.clone(), z: d.z.clone(), covariates: d.covariates.clone() }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::output(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| Error::output(path, e))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::input(path, e))
}

fn csv_out_err(path: &Path, e: csv::Error) -> Error {
    Error::output(path, std::io::Error::other(e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::output(path, e.into()))?;
    w.write_all(b"\n").and_then(|_| w.flush()).map_err(|e| Error::output(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_reader(open(path)?).map_err(|e| Error::input(path, e))
}

/// Locations, responses and covariates from a headered CSV. When
/// `require_response` is false a missing response column yields zeros, for
/// prediction inputs.
fn read_table(path: &Path, schema: &Schema, require_response: bool) -> Result<(Vec<Location>, Vec<f64>, Matrix, Vec<String>)> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(open(path)?);
    let headers = rdr.headers().map_err(|e| Error::input(path, e))?.clone();
    let schema_err = |message: String| Error::Schema { path: path.to_path_buf(), message };
    let find = |name: &str| headers.iter().position(|h| h == name);
    let ix = find(&schema.x).ok_or_else(|| schema_err(format!("missing x column `{}`", schema.x)))?;
    let iy = find(&schema.y).ok_or_else(|| schema_err(format!("missing y column `{}`", schema.y)))?;
    let iz = find(&schema.z);
    if iz.is_none() && require_response {
        return Err(schema_err(format!("missing response column `{}`", schema.z)));
    }
    let (cov_idx, cov_names): (Vec<usize>, Vec<String>) = if schema.covariates.is_empty() {
        headers
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != ix && *i != iy && Some(*i) != iz)
            .map(|(i, h)| (i, h.to_string()))
            .unzip()
    } else {
        schema
            .covariates
            .iter()
            .map(|c| find(c).map(|i| (i, c.clone())).ok_or_else(|| schema_err(format!("missing covariate column `{c}`"))))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .unzip()
    };
    if cov_idx.is_empty() {
        return Err(schema_err("no covariate columns".into()));
    }

    let mut locs = Vec::new();
    let mut z = Vec::new();
    let mut cols: Vec<Vec<f64>> = vec![Vec::new(); cov_idx.len()];
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::input(path, e))?;
        let field = |i: usize, name: &str| -> Result<f64> {
            let raw = rec.get(i).unwrap_or("");
            let v: f64 = raw.parse().map_err(|_| Error::Core(patchwork_core::Error::Validation {
                row,
                reason: format!("column `{name}`: `{raw}` is not a number"),
            }))?;
            if !v.is_finite() {
                return Err(Error::Core(patchwork_core::Error::Validation { row, reason: format!("column `{name}` is not finite") }));
            }
            Ok(v)
        };
        locs.push(Location::new(field(ix, &schema.x)?, field(iy, &schema.y)?));
        z.push(match iz {
            Some(i) => field(i, &schema.z)?,
            None => 0.0,
        });
        for (c, (&i, name)) in cols.iter_mut().zip(cov_idx.iter().zip(&cov_names)) {
            c.push(field(i, name)?);
        }
    }
    let n = locs.len();
    Ok((locs, z, Matrix::from_columns(n, &cols), cov_names))
}

/// Read and validate a dataset. Rows with non-finite fields or responses
/// outside the family's support are rejected with their 0-based row index.
pub fn load_dataset(path: &Path, schema: &Schema, family: Family) -> Result<SpatialDataset> {
    let (locs, z, x, _) = read_table(path, schema, true)?;
    if locs.is_empty() {
        return Err(Error::Schema { path: path.to_path_buf(), message: "no data rows".into() });
    }
    Ok(SpatialDataset::new(locs, z, x, family)?)
}

/// Locations and covariates for prediction; the response column is optional.
pub fn load_prediction_points(path: &Path, schema: &Schema) -> Result<(Vec<Location>, Matrix)> {
    let (locs, _, x, _) = read_table(path, schema, false)?;
    Ok((locs, x))
}

/// Header `x,y,z,x1..xp`, the layout [`load_dataset`] reads by default.
pub fn write_dataset(path: &Path, data: &SpatialDataset) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    let p = data.n_covariates();
    let mut header = vec!["x".to_string(), "y".into(), "z".into()];
    header.extend((1..=p).map(|j| format!("x{j}")));
    w.write_record(&header).map_err(|e| csv_out_err(path, e))?;
    let x = data.covariates();
    for (i, (s, z)) in data.locations().iter().zip(data.responses()).enumerate() {
        let mut rec = vec![s.x.to_string(), s.y.to_string(), z.to_string()];
        rec.extend((0..p).map(|j| x.get(i, j).to_string()));
        w.write_record(&rec).map_err(|e| csv_out_err(path, e))?;
    }
    w.flush().map_err(|e| Error::output(path, e))
}

/// JSON sidecar of a simulated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSidecar {
    pub seed: u64,
    pub n: usize,
    pub layout: String,
    pub covariates: String,
    pub config: SimConfig,
}

#[derive(Debug, Serialize, Deserialize)]
struct MapRow {
    index: usize,
    x: f64,
    y: f64,
    partition: usize,
}

/// Partition map: observation index, location and 0-based label.
pub fn write_partition_map(path: &Path, locations: &[Location], labels: &[usize]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    for (index, (s, &partition)) in locations.iter().zip(labels).enumerate() {
        w.serialize(MapRow { index, x: s.x, y: s.y, partition }).map_err(|e| csv_out_err(path, e))?;
    }
    w.flush().map_err(|e| Error::output(path, e))
}

pub fn read_partition_map(path: &Path) -> Result<(Vec<Location>, Vec<usize>)> {
    let mut rdr = csv::Reader::from_reader(open(path)?);
    let mut locs = Vec::new();
    let mut labels = Vec::new();
    for (i, row) in rdr.deserialize::<MapRow>().enumerate() {
        let row = row.map_err(|e| Error::input(path, e))?;
        if row.index != i {
            return Err(Error::input(path, format!("row {i} carries index {}", row.index)));
        }
        locs.push(Location::new(row.x, row.y));
        labels.push(row.partition);
    }
    Ok((locs, labels))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KnotRecord {
    pub x: f64,
    pub y: f64,
    pub active: bool,
}

/// Candidate knots of one partition and which ones the lasso kept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnotFile {
    pub partition: usize,
    pub knots: Vec<KnotRecord>,
}

impl KnotFile {
    pub fn active_knots(&self) -> Vec<Location> {
        self.knots.iter().filter(|k| k.active).map(|k| Location::new(k.x, k.y)).collect()
    }
}

/// Posterior summary of one partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryFile {
    pub partition: usize,
    pub n: usize,
    pub m: usize,
    pub beta: Vec<ParamSummary>,
    pub delta: Vec<ParamSummary>,
    pub sigma2: ParamSummary,
    pub acceptance_rate: f64,
    pub burn_in_acceptance_rate: f64,
    pub iters: usize,
    pub burn_in: usize,
    pub lambda: f64,
    pub seed: u64,
    pub warning: Option<String>,
}

/// Draw dump: little-endian `u64` header `S, p, m`, then the `S x (p+m+1)`
/// draws row-major as `f64`.
pub fn write_draws(path: &Path, draws: &Matrix, p: usize, m: usize) -> Result<()> {
    if draws.ncols() != p + m + 1 {
        return Err(Error::Stage {
            stage: "persist".into(),
            message: format!("draw matrix has {} columns, expected {}", draws.ncols(), p + m + 1),
        });
    }
    let mut w = create(path)?;
    let mut buf = Vec::with_capacity(24 + 8 * draws.nrows() * draws.ncols());
    for h in [draws.nrows(), p, m] {
        buf.extend_from_slice(&(h as u64).to_le_bytes());
    }
    for r in 0..draws.nrows() {
        for c in 0..draws.ncols() {
            buf.extend_from_slice(&draws.get(r, c).to_le_bytes());
        }
    }
    w.write_all(&buf).and_then(|_| w.flush()).map_err(|e| Error::output(path, e))
}

/// Returns `(draws, p, m)`.
pub fn read_draws(path: &Path) -> Result<(Matrix, usize, usize)> {
    let mut bytes = Vec::new();
    open(path)?.read_to_end(&mut bytes).map_err(|e| Error::input(path, e))?;
    if bytes.len() < 24 {
        return Err(Error::input(path, "truncated header"));
    }
    let word = |i: usize| u64::from_le_bytes(bytes[8 * i..8 * i + 8].try_into().unwrap());
    let (s, p, m) = (word(0) as usize, word(1) as usize, word(2) as usize);
    let cols = p + m + 1;
    if bytes.len() != 24 + 8 * s * cols {
        return Err(Error::input(path, format!("expected {} bytes for {s} x {cols} draws, found {}", 24 + 8 * s * cols, bytes.len())));
    }
    let vals: Vec<f64> = bytes[24..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Ok((Matrix::from_fn(s, cols, |r, c| vals[r * cols + c]), p, m))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub index: usize,
    pub x: f64,
    pub y: f64,
    pub eta_mean: f64,
    pub response_mean: f64,
    pub lo95: Option<f64>,
    pub hi95: Option<f64>,
    pub home_partition: usize,
    pub fallback_flag: bool,
}

pub fn write_predictions(path: &Path, rows: &[PredictionRow]) -> Result<()> {
    write_rows(path, rows)
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRow>> {
    let mut rdr = csv::Reader::from_reader(open(path)?);
    rdr.deserialize().collect::<std::result::Result<_, _>>().map_err(|e| Error::input(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfacePoint {
    pub x: f64,
    pub y: f64,
    pub value: f64,
}

pub fn write_surface(path: &Path, points: &[SurfacePoint]) -> Result<()> {
    write_rows(path, points)
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    for r in rows {
        w.serialize(r).map_err(|e| csv_out_err(path, e))?;
    }
    w.flush().map_err(|e| Error::output(path, e))
}
