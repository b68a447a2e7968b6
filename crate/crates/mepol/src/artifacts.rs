//! CSV output. Every CSV gets a header row and a `<name>.csv.meta.json`
//! sidecar carrying the config hash, seed(s) and code version.

use std::path::{Path, PathBuf};

use mepol_core::{EpochRecord, TrainLog};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};
use crate::metrics::HeatmapGrid;

pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

pub const TRAIN_LOG_COLUMNS: [&str; 7] = [
    "epoch",
    "entropy_index",
    "inner_iters",
    "final_kl",
    "env_samples",
    "seconds",
    "seed",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub file: String,
    pub columns: Vec<String>,
    pub rows: usize,
    pub config_hash: Option<String>,
    pub seed: Option<u64>,
    #[serde(default)]
    pub seeds: Vec<u64>,
    pub code_version: String,
}

/// What goes into a sidecar besides the table shape.
#[derive(Debug, Clone, Default)]
pub struct Provenance {
    pub config_hash: Option<String>,
    pub seed: Option<u64>,
    pub seeds: Vec<u64>,
}

impl Provenance {
    pub fn run(config_hash: &str, seed: u64) -> Self {
        Provenance {
            config_hash: Some(config_hash.to_string()),
            seed: Some(seed),
            seeds: vec![seed],
        }
    }
}

pub fn sidecar_path(csv: &Path) -> PathBuf {
    let mut name = csv.file_name().unwrap_or_default().to_os_string();
    name.push(".meta.json");
    csv.with_file_name(name)
}

/// Writes `rows` under `header` plus the sidecar.
pub fn write_table<R, I>(path: &Path, header: &[&str], rows: I, provenance: &Provenance) -> Result<()>
where
    R: Serialize,
    I: IntoIterator<Item = R>,
{
    let file = std::fs::File::create(path).map_err(|e| HarnessError::io(path, e))?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
    w.write_record(header)?;
    let mut n = 0;
    for row in rows {
        w.serialize(row)?;
        n += 1;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))?;
    let meta = Sidecar {
        file: path.file_name().unwrap_or_default().to_string_lossy().into_owned(),
        columns: header.iter().map(|s| s.to_string()).collect(),
        rows: n,
        config_hash: provenance.config_hash.clone(),
        seed: provenance.seed,
        seeds: provenance.seeds.clone(),
        code_version: CODE_VERSION.to_string(),
    };
    let side = sidecar_path(path);
    let text = serde_json::to_string_pretty(&meta)?;
    std::fs::write(&side, text).map_err(|e| HarnessError::io(&side, e))
}

pub fn read_sidecar(csv: &Path) -> Result<Sidecar> {
    let side = sidecar_path(csv);
    let text = std::fs::read_to_string(&side).map_err(|e| HarnessError::io(&side, e))?;
    Ok(serde_json::from_str(&text)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRow {
    pub epoch: usize,
    pub entropy_index: f64,
    pub inner_iters: usize,
    pub final_kl: f64,
    pub env_samples: u64,
    pub seconds: f64,
    pub seed: u64,
}

impl From<&EpochRecord> for TrainLogRow {
    fn from(r: &EpochRecord) -> Self {
        TrainLogRow {
            epoch: r.epoch,
            entropy_index: r.entropy_index,
            inner_iters: r.inner_iters,
            final_kl: r.final_kl,
            env_samples: r.env_samples,
            seconds: r.seconds,
            seed: r.seed,
        }
    }
}

pub fn write_train_log(path: &Path, log: &TrainLog, provenance: &Provenance) -> Result<()> {
    write_table(
        path,
        &TRAIN_LOG_COLUMNS,
        log.records.iter().map(TrainLogRow::from),
        provenance,
    )
}

pub fn read_csv<R: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<R>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<Result<Vec<R>, _>>()?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub epoch: usize,
    pub mean_entropy_index: f64,
    pub ci95_half_width: f64,
    pub n_seeds: usize,
}

pub const AGGREGATE_COLUMNS: [&str; 4] = ["epoch", "mean_entropy_index", "ci95_half_width", "n_seeds"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapRow {
    pub ix: usize,
    pub iy: usize,
    pub x: f64,
    pub y: f64,
    pub count: u64,
    pub log_prob: f64,
}

pub const HEATMAP_COLUMNS: [&str; 6] = ["ix", "iy", "x", "y", "count", "log_prob"];

/// Long format, one row per cell; `x`, `y` are cell centers.
pub fn write_heatmap(path: &Path, grid: &HeatmapGrid, provenance: &Provenance) -> Result<()> {
    let rows = (0..grid.ny).flat_map(|iy| {
        (0..grid.nx).map(move |ix| {
            let [x, y] = grid.center(ix, iy);
            HeatmapRow {
                ix,
                iy,
                x,
                y,
                count: grid.count(ix, iy),
                log_prob: grid.log_prob(ix, iy),
            }
        })
    });
    write_table(path, &HEATMAP_COLUMNS, rows, provenance)
}
