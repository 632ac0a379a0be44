//! Append-only run store: `runs.csv` plus a `manifest.json` sidecar.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::param_space::ParameterSpace;
use crate::simulator::RunOutput;

pub const STORE_SCHEMA: u32 = 1;

/// One simulator execution.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    /// Run id and simulator seed.
    pub seed: u64,
    pub batch: String,
    pub point_id: usize,
    /// Input in unit-cube coordinates.
    pub unit: Vec<f64>,
    pub output: RunOutput,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    schema_version: u32,
    next_seed: u64,
    records: usize,
    batches: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunStore {
    dir: PathBuf,
    space: ParameterSpace,
    records: Vec<RunRecord>,
    manifest: Manifest,
}

const SERIES_COLUMNS: [&str; 3] = ["new_diagnoses", "new_deaths", "active_infections"];

fn join(v: &[u32]) -> String {
    v.iter().map(u32::to_string).collect::<Vec<_>>().join(";")
}

fn split(s: &str, path: &Path) -> Result<Vec<u32>> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(';')
        .map(|x| x.parse().map_err(|_| Error::StoreCorrupt(format!("{}: bad count `{x}`", path.display()))))
        .collect()
}

/// Writes `bytes` to `path` through a temporary file and a rename.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

impl RunStore {
    /// Opens the store in `dir`, creating an empty one if absent.
    pub fn open(dir: &Path, space: &ParameterSpace) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let manifest_path = dir.join("manifest.json");
        if !manifest_path.exists() {
            let csv = dir.join("runs.csv");
            if csv.exists() {
                log::warn!("removing runs.csv left without a manifest");
                std::fs::remove_file(&csv).map_err(|e| Error::io(&csv, e))?;
            }
            return Ok(RunStore {
                dir: dir.to_path_buf(),
                space: space.clone(),
                records: Vec::new(),
                manifest: Manifest {
                    schema_version: STORE_SCHEMA,
                    next_seed: 0,
                    records: 0,
                    batches: Vec::new(),
                },
            });
        }
        let text = std::fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        let manifest: Manifest =
            serde_json::from_str(&text).map_err(|e| Error::StoreCorrupt(format!("{}: {e}", manifest_path.display())))?;
        if manifest.schema_version != STORE_SCHEMA {
            return Err(Error::StoreCorrupt(format!(
                "schema version {} (expected {STORE_SCHEMA})",
                manifest.schema_version
            )));
        }
        let mut store = RunStore {
            dir: dir.to_path_buf(),
            space: space.clone(),
            records: Vec::new(),
            manifest,
        };
        store.records = store.read_records()?;
        if store.records.len() < store.manifest.records {
            return Err(Error::StoreCorrupt(format!(
                "manifest lists {} records but runs.csv holds {}",
                store.manifest.records,
                store.records.len()
            )));
        }
        if store.records.len() > store.manifest.records {
            log::warn!(
                "dropping {} uncommitted records from runs.csv",
                store.records.len() - store.manifest.records
            );
            store.records.truncate(store.manifest.records);
            let mut text = store.header();
            text.push_str(&store.render(&store.records)?);
            write_atomic(&store.csv_path(), text.as_bytes())?;
        }
        for (i, r) in store.records.iter().enumerate() {
            if r.seed != i as u64 {
                return Err(Error::StoreCorrupt(format!("record {i} has seed {}", r.seed)));
            }
        }
        if store.manifest.next_seed != store.records.len() as u64 {
            return Err(Error::StoreCorrupt("next_seed does not follow the last record".into()));
        }
        Ok(store)
    }

    fn csv_path(&self) -> PathBuf {
        self.dir.join("runs.csv")
    }

    fn read_records(&self) -> Result<Vec<RunRecord>> {
        let path = self.csv_path();
        if !path.exists() {
            return Ok(Vec::new());
        }
        let d = self.space.len();
        let mut rdr = csv::Reader::from_path(&path)?;
        let expected = 3 + 2 * d + SERIES_COLUMNS.len();
        let mut out = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            if rec.len() != expected {
                return Err(Error::StoreCorrupt(format!(
                    "{}: expected {expected} columns, found {}",
                    path.display(),
                    rec.len()
                )));
            }
            let bad = |what: &str| Error::StoreCorrupt(format!("{}: bad {what}", path.display()));
            let seed = rec[0].parse().map_err(|_| bad("seed"))?;
            let point_id = rec[2].parse().map_err(|_| bad("point_id"))?;
            let unit = (0..d)
                .map(|j| rec[3 + j].parse::<f64>().map_err(|_| bad("coordinate")))
                .collect::<Result<Vec<f64>>>()?;
            let base = 3 + 2 * d;
            let output = RunOutput::from_daily(
                split(&rec[base], &path)?,
                split(&rec[base + 1], &path)?,
                split(&rec[base + 2], &path)?,
            )?;
            out.push(RunRecord {
                seed,
                batch: rec[1].to_string(),
                point_id,
                unit,
                output,
            });
        }
        Ok(out)
    }

    fn header(&self) -> String {
        let mut line = String::from("seed,batch,point_id");
        for n in self.space.names() {
            line.push_str(&format!(",u_{n}"));
        }
        for n in self.space.names() {
            line.push_str(&format!(",{n}"));
        }
        for c in SERIES_COLUMNS {
            line.push(',');
            line.push_str(c);
        }
        line.push('\n');
        line
    }

    fn render(&self, records: &[RunRecord]) -> Result<String> {
        let mut out = String::new();
        for r in records {
            out.push_str(&format!("{},{},{}", r.seed, r.batch, r.point_id));
            for v in &r.unit {
                out.push_str(&format!(",{v}"));
            }
            for v in self.space.denormalize(&r.unit)? {
                out.push_str(&format!(",{v}"));
            }
            for s in [&r.output.new_diagnoses, &r.output.new_deaths, &r.output.active_infections] {
                out.push(',');
                out.push_str(&join(s));
            }
            out.push('\n');
        }
        Ok(out)
    }

    pub fn records(&self) -> &[RunRecord] {
        &self.records
    }

    pub fn next_seed(&self) -> u64 {
        self.manifest.next_seed
    }

    pub fn batches(&self) -> &[String] {
        &self.manifest.batches
    }

    pub fn has_batch(&self, batch: &str) -> bool {
        self.manifest.batches.iter().any(|b| b == batch)
    }

    pub fn batch(&self, batch: &str) -> impl Iterator<Item = &RunRecord> {
        let b = batch.to_string();
        self.records.iter().filter(move |r| r.batch == b)
    }

    /// Durably appends `records` as a new batch; seeds must continue the counter.
    pub fn append(&mut self, batch: &str, records: Vec<RunRecord>) -> Result<()> {
        if records.is_empty() {
            return Ok(());
        }
        if self.has_batch(batch) {
            return Err(Error::StoreCorrupt(format!("batch `{batch}` already stored")));
        }
        let d = self.space.len();
        for (i, r) in records.iter().enumerate() {
            let want = self.manifest.next_seed + i as u64;
            if r.seed != want {
                return Err(Error::StoreCorrupt(format!(
                    "seed collision: record {i} of `{batch}` carries seed {} but the next free seed is {want}",
                    r.seed
                )));
            }
            if r.batch != batch || r.unit.len() != d {
                return Err(Error::InvalidArgument(format!("record {i} does not belong to batch `{batch}`")));
            }
        }
        let path = self.csv_path();
        let mut text = if path.exists() { String::new() } else { self.header() };
        text.push_str(&self.render(&records)?);
        {
            let mut f = std::fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(&path)
                .map_err(|e| Error::io(&path, e))?;
            f.write_all(text.as_bytes()).map_err(|e| Error::io(&path, e))?;
            f.sync_all().map_err(|e| Error::io(&path, e))?;
        }
        let mut manifest = self.manifest.clone();
        manifest.next_seed += records.len() as u64;
        manifest.records += records.len();
        manifest.batches.push(batch.to_string());
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        write_atomic(&self.dir.join("manifest.json"), text.as_bytes())?;
        self.manifest = manifest;
        self.records.extend(records);
        Ok(())
    }
}
