//! Route database files: one CSV per journey plus a TOML manifest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{JourneyRecord, RouteDatabase};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.toml";
const HEADER: [&str; 4] = ["position_m", "velocity_mps", "gradient_rad", "time_s"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    /// Relative to the manifest's directory.
    pub file: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatabaseManifest {
    pub route_length_m: f64,
    /// Free-form provenance, e.g. generator and seed.
    #[serde(default)]
    pub description: String,
    pub journeys: Vec<ManifestEntry>,
}

fn data_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Data { path: path.to_owned(), reason: reason.into() }
}

pub fn read_journey_csv(path: &Path, id: &str) -> Result<JourneyRecord> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(path).map_err(|e| data_err(path, e.to_string()))?;
    let header = rdr.headers().map_err(|e| data_err(path, e.to_string()))?;
    if header.iter().map(str::trim).ne(HEADER) {
        return Err(data_err(path, format!("expected header {}", HEADER.join(","))));
    }
    let mut rec = JourneyRecord { id: id.to_owned(), position: vec![], velocity: vec![], gradient: vec![], time: vec![] };
    for (row, line) in rdr.records().enumerate() {
        let line = line.map_err(|e| data_err(path, e.to_string()))?;
        let field = |c: usize| -> Result<f64> {
            let s = line.get(c).ok_or_else(|| data_err(path, format!("row {}: missing column {}", row + 1, HEADER[c])))?;
            s.trim().parse().map_err(|_| data_err(path, format!("row {}: {} is not a number: {s:?}", row + 1, HEADER[c])))
        };
        rec.position.push(field(0)?);
        rec.velocity.push(field(1)?);
        rec.gradient.push(field(2)?);
        rec.time.push(field(3)?);
    }
    rec.validate().map_err(|e| data_err(path, e.to_string()))?;
    Ok(rec)
}

/// Values are written with the shortest representation that parses back to
/// the same `f64`, so a write/read round trip is exact.
pub fn write_journey_csv(path: &Path, rec: &JourneyRecord) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(HEADER)?;
    for i in 0..rec.position.len() {
        w.write_record([
            rec.position[i].to_string(),
            rec.velocity[i].to_string(),
            rec.gradient[i].to_string(),
            rec.time[i].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Load the database described by `dir/manifest.toml`.
pub fn ingest_route_db(dir: &Path) -> Result<RouteDatabase> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&manifest_path).map_err(|e| data_err(&manifest_path, e.to_string()))?;
    let manifest: DatabaseManifest = toml::from_str(&text).map_err(|e| data_err(&manifest_path, e.to_string()))?;
    if manifest.journeys.is_empty() {
        return Err(Error::NoScenarios(format!("{} lists no journeys", manifest_path.display())));
    }
    let journeys = manifest
        .journeys
        .iter()
        .map(|e| read_journey_csv(&dir.join(&e.file), &e.id))
        .collect::<Result<Vec<_>>>()?;
    let db = RouteDatabase::new(journeys).map_err(|e| data_err(&manifest_path, e.to_string()))?;
    if db.route_length != manifest.route_length_m {
        return Err(data_err(
            &manifest_path,
            format!("manifest says {} m but journeys cover {} m", manifest.route_length_m, db.route_length),
        ));
    }
    Ok(db)
}

/// Write `db` into the existing directory `dir`. Returns the written paths.
pub fn write_route_db(db: &RouteDatabase, dir: &Path, description: &str) -> Result<Vec<PathBuf>> {
    let mut written = Vec::with_capacity(db.journeys.len() + 1);
    let mut entries = Vec::with_capacity(db.journeys.len());
    for j in &db.journeys {
        let file = format!("{}.csv", j.id);
        let path = dir.join(&file);
        write_journey_csv(&path, j)?;
        written.push(path);
        entries.push(ManifestEntry { id: j.id.clone(), file });
    }
    let manifest = DatabaseManifest { route_length_m: db.route_length, description: description.to_owned(), journeys: entries };
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, toml::to_string(&manifest).expect("manifest serialises"))?;
    written.push(path);
    Ok(written)
}
