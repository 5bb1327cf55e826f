//! In-situ validation: station soundings are reduced to one surface value
//! per station and synoptic slot, joined with gridded products at the
//! station location, and scored with MAE and MSE.

use std::collections::HashMap;
use std::fs;
use std::io::Read;
use std::path::Path;

use chrono::{DateTime, Duration, NaiveDateTime, Timelike, Utc};
use serde::{Deserialize, Serialize};

use crate::datapipe::DatasetStore;
use crate::error::{Error, Result};
use crate::grids::{extract_gridpoint, wind_speed, Extraction, FieldSeries, Units};

pub const OBSERVATION_HEADER: [&str; 6] = [
    "station_id",
    "lat",
    "lon",
    "timestamp_iso",
    "pressure_hpa",
    "wind_ms",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StationObservation {
    pub station_id: String,
    pub lat: f64,
    pub lon: f64,
    pub timestamp: DateTime<Utc>,
    pub pressure_hpa: f64,
    pub wind_ms: f64,
}

/// A rejected CSV row; `line` is 1-based and counts the header.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowError {
    pub line: u64,
    pub reason: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParsedObservations {
    pub records: Vec<StationObservation>,
    pub errors: Vec<RowError>,
}

/// Accepts RFC 3339 or a zone-less `YYYY-MM-DDTHH:MM[:SS]` taken as UTC.
fn parse_timestamp(s: &str) -> std::result::Result<DateTime<Utc>, String> {
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Ok(t.with_timezone(&Utc));
    }
    for fmt in [
        "%Y-%m-%dT%H:%M:%S",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%d %H:%M:%S",
        "%Y-%m-%d %H:%M",
    ] {
        if let Ok(t) = NaiveDateTime::parse_from_str(s, fmt) {
            return Ok(t.and_utc());
        }
    }
    Err(format!("unparseable timestamp {s:?}"))
}

fn parse_row(row: &csv::StringRecord) -> std::result::Result<StationObservation, String> {
    if row.len() != OBSERVATION_HEADER.len() {
        return Err(format!("expected 6 fields, found {}", row.len()));
    }
    let num = |i: usize| -> std::result::Result<f64, String> {
        let v: f64 = row[i]
            .trim()
            .parse()
            .map_err(|_| format!("{} is not a number: {:?}", OBSERVATION_HEADER[i], &row[i]))?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(format!("{} is not finite", OBSERVATION_HEADER[i]))
        }
    };
    let station_id = row[0].trim().to_string();
    if station_id.is_empty() {
        return Err("empty station_id".into());
    }
    let (lat, lon) = (num(1)?, num(2)?);
    if !(-90.0..=90.0).contains(&lat) || !(-180.0..=360.0).contains(&lon) {
        return Err(format!("coordinates ({lat}, {lon}) out of range"));
    }
    let timestamp = parse_timestamp(row[3].trim())?;
    let pressure_hpa = num(4)?;
    if pressure_hpa <= 0.0 {
        return Err(format!("pressure must be positive, got {pressure_hpa}"));
    }
    let wind_ms = num(5)?;
    if wind_ms < 0.0 {
        return Err(format!("wind must be non-negative, got {wind_ms}"));
    }
    Ok(StationObservation {
        station_id,
        lat,
        lon,
        timestamp,
        pressure_hpa,
        wind_ms,
    })
}

/// Parses station CSV text. Malformed rows are reported, not fatal; a
/// result without any valid row is an [`Error::EmptyDataset`].
pub fn parse_observations_from(reader: impl Read, label: &str) -> Result<ParsedObservations> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let header = rdr.headers()?.clone();
    let names: Vec<&str> = header.iter().map(str::trim).collect();
    if names != OBSERVATION_HEADER {
        return Err(Error::Data(format!(
            "{label}: header must be {}, got {}",
            OBSERVATION_HEADER.join(","),
            names.join(",")
        )));
    }
    let mut out = ParsedObservations::default();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        match parse_row(&row) {
            Ok(r) => out.records.push(r),
            Err(reason) => out.errors.push(RowError { line, reason }),
        }
    }
    if out.records.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "{label}: no valid observations ({} rejected rows)",
            out.errors.len()
        )));
    }
    Ok(out)
}

pub fn parse_observations(path: &Path) -> Result<ParsedObservations> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_observations_from(f, &path.display().to_string())
}

/// Keeps the maximum-pressure level of each sounding, a sounding being all
/// records of one station sharing a launch timestamp. Ties keep the first
/// occurrence; soundings come out in order of first appearance.
pub fn select_surface(obs: &[StationObservation]) -> Vec<StationObservation> {
    let mut best: HashMap<(&str, DateTime<Utc>), usize> = HashMap::new();
    let mut order = Vec::new();
    for (i, o) in obs.iter().enumerate() {
        let key = (o.station_id.as_str(), o.timestamp);
        match best.get_mut(&key) {
            Some(b) => {
                if o.pressure_hpa > obs[*b].pressure_hpa {
                    *b = i;
                }
            }
            None => {
                best.insert(key, i);
                order.push(key);
            }
        }
    }
    order.into_iter().map(|k| obs[best[&k]].clone()).collect()
}

/// Which observations count towards the 00 and 12 UTC slots.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SlotRule {
    /// Length of the window preceding each slot mark.
    pub width_minutes: u32,
    /// Whether an observation exactly on the mark belongs to that slot.
    pub include_mark: bool,
}

impl Default for SlotRule {
    fn default() -> Self {
        SlotRule {
            width_minutes: 60,
            include_mark: false,
        }
    }
}

impl SlotRule {
    pub fn validate(&self) -> Result<()> {
        if self.width_minutes == 0 || self.width_minutes > 12 * 60 {
            return Err(Error::Config(format!(
                "slot width must be in 1..=720 minutes, got {}",
                self.width_minutes
            )));
        }
        Ok(())
    }

    pub fn accepts(&self, t: DateTime<Utc>) -> bool {
        let mark = slot_mark(t);
        if mark == t {
            return self.include_mark;
        }
        mark - t <= Duration::minutes(self.width_minutes as i64)
    }
}

/// The first 00 or 12 UTC mark at or after `t`.
pub fn slot_mark(t: DateTime<Utc>) -> DateTime<Utc> {
    let secs_into_half_day =
        (t.hour() % 12) as i64 * 3600 + t.minute() as i64 * 60 + t.second() as i64;
    let floor =
        t - Duration::seconds(secs_into_half_day) - Duration::nanoseconds(t.nanosecond() as i64);
    if floor == t {
        t
    } else {
        floor + Duration::hours(12)
    }
}

pub fn filter_slots(obs: &[StationObservation], rule: &SlotRule) -> Vec<StationObservation> {
    obs.iter()
        .filter(|o| rule.accepts(o.timestamp))
        .cloned()
        .collect()
}

/// Reduces the records of one station and slot to their mean wind stamped
/// at the slot mark. Position and pressure are averaged too.
pub fn collapse_hour(obs: &[StationObservation]) -> Result<StationObservation> {
    let first = obs
        .first()
        .ok_or_else(|| Error::Parameter("nothing to collapse".into()))?;
    let mark = slot_mark(first.timestamp);
    if obs
        .iter()
        .any(|o| o.station_id != first.station_id || slot_mark(o.timestamp) != mark)
    {
        return Err(Error::Parameter(format!(
            "records of {} mix stations or slots",
            first.station_id
        )));
    }
    let n = obs.len() as f64;
    let mean = |f: fn(&StationObservation) -> f64| obs.iter().map(f).sum::<f64>() / n;
    Ok(StationObservation {
        station_id: first.station_id.clone(),
        lat: mean(|o| o.lat),
        lon: mean(|o| o.lon),
        timestamp: mark,
        pressure_hpa: mean(|o| o.pressure_hpa),
        wind_ms: mean(|o| o.wind_ms),
    })
}

/// Groups by station and slot mark and collapses each group, in order of
/// first appearance.
pub fn collapse_slots(obs: &[StationObservation]) -> Result<Vec<StationObservation>> {
    let mut groups: Vec<Vec<StationObservation>> = Vec::new();
    let mut index: HashMap<(String, DateTime<Utc>), usize> = HashMap::new();
    for o in obs {
        let key = (o.station_id.clone(), slot_mark(o.timestamp));
        let g = *index.entry(key).or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[g].push(o.clone());
    }
    groups.iter().map(|g| collapse_hour(g)).collect()
}

/// Surface selection, slot filtering and collapsing, in that order.
pub fn prepare_observations(
    obs: &[StationObservation],
    rule: &SlotRule,
) -> Result<Vec<StationObservation>> {
    rule.validate()?;
    collapse_slots(&filter_slots(&select_surface(obs), rule))
}

/// A gridded product as a wind-speed series in m/s.
#[derive(Clone, Debug)]
pub struct Product {
    pub name: String,
    pub series: FieldSeries,
}

impl Product {
    pub fn new(name: impl Into<String>, series: FieldSeries) -> Result<Self> {
        if series.units() != Units::MetersPerSecond {
            return Err(Error::Parameter(
                "product series must be in m/s; use from_normalized".into(),
            ));
        }
        Ok(Product {
            name: name.into(),
            series,
        })
    }

    pub fn from_normalized(
        name: impl Into<String>,
        series: &FieldSeries,
        norm_max: f64,
    ) -> Result<Self> {
        let frames = series
            .frames()
            .iter()
            .map(|f| {
                Ok(f.map(|v| (v as f64 * norm_max) as f32)?
                    .with_units(Units::MetersPerSecond))
            })
            .collect::<Result<Vec<_>>>()?;
        Product::new(
            name,
            FieldSeries::new(series.t0(), series.step_hours(), frames)?,
        )
    }

    /// Wind speed from a store, denormalised through its sidecar.
    pub fn from_store(name: impl Into<String>, store: &DatasetStore) -> Result<Self> {
        let frames = (0..store.len())
            .map(|i| store.read_physical(i))
            .collect::<Result<Vec<_>>>()?;
        Product::new(
            name,
            FieldSeries::new(store.time_at(0), store.meta().step_hours, frames)?,
        )
    }

    /// Wind speed derived from separate u and v component stores.
    pub fn from_components(
        name: impl Into<String>,
        u: &DatasetStore,
        v: &DatasetStore,
    ) -> Result<Self> {
        if u.times() != v.times() {
            return Err(Error::Alignment(
                "u and v stores have different time axes".into(),
            ));
        }
        let frames = (0..u.len())
            .map(|i| wind_speed(&u.read_physical(i)?, &v.read_physical(i)?))
            .collect::<Result<Vec<_>>>()?;
        Product::new(
            name,
            FieldSeries::new(u.time_at(0), u.meta().step_hours, frames)?,
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationRecord {
    pub station_id: String,
    pub timestamp: DateTime<Utc>,
    pub lat: f64,
    pub lon: f64,
    pub observed: f64,
    /// One value per product, in product order.
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationSet {
    pub products: Vec<String>,
    pub records: Vec<ValidationRecord>,
    /// Observations whose timestamp is missing from at least one product.
    pub dropped_missing: usize,
    /// Observations outside the extent of at least one product.
    pub dropped_outside: usize,
}

/// Joins collapsed observations with every product at the station location.
pub fn build_validation_set(
    obs: &[StationObservation],
    products: &[Product],
    method: Extraction,
) -> Result<ValidationSet> {
    if products.is_empty() {
        return Err(Error::Parameter("no products to validate".into()));
    }
    let mut set = ValidationSet {
        products: products.iter().map(|p| p.name.clone()).collect(),
        records: Vec::new(),
        dropped_missing: 0,
        dropped_outside: 0,
    };
    'obs: for o in obs {
        if products
            .iter()
            .any(|p| !p.series.grid().geobox().contains(o.lat, o.lon))
        {
            set.dropped_outside += 1;
            continue;
        }
        let mut values = Vec::with_capacity(products.len());
        for p in products {
            match p.series.frame_at(o.timestamp) {
                Some(f) => values.push(extract_gridpoint(f, o.lat, o.lon, method)? as f64),
                None => {
                    set.dropped_missing += 1;
                    continue 'obs;
                }
            }
        }
        set.records.push(ValidationRecord {
            station_id: o.station_id.clone(),
            timestamp: o.timestamp,
            lat: o.lat,
            lon: o.lon,
            observed: o.wind_ms,
            values,
        });
    }
    if set.records.is_empty() {
        return Err(Error::Alignment(format!(
            "no observation matches all products ({} missing frames, {} outside extent)",
            set.dropped_missing, set.dropped_outside
        )));
    }
    Ok(set)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    #[serde(rename = "Model")]
    pub model: String,
    #[serde(rename = "MAE")]
    pub mae: f64,
    #[serde(rename = "MSE")]
    pub mse: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    pub rows: Vec<ScoreRow>,
    pub records: usize,
}

/// Per-product MAE (m/s) and MSE over all records, accumulated in record
/// order.
pub fn score(set: &ValidationSet) -> Result<ScoreTable> {
    if set.records.is_empty() {
        return Err(Error::Parameter(
            "cannot score an empty validation set".into(),
        ));
    }
    let n = set.records.len() as f64;
    let rows = set
        .products
        .iter()
        .enumerate()
        .map(|(p, name)| {
            let (mut abs, mut sq) = (0.0, 0.0);
            for r in &set.records {
                let d = r.values[p] - r.observed;
                abs += d.abs();
                sq += d * d;
            }
            ScoreRow {
                model: name.clone(),
                mae: abs / n,
                mse: sq / n,
            }
        })
        .collect();
    Ok(ScoreTable {
        rows,
        records: set.records.len(),
    })
}

impl ScoreTable {
    /// Published reference rows, used to check table formatting.
    pub fn reference_fixture() -> Self {
        let row = |m: &str, mae, mse| ScoreRow {
            model: m.into(),
            mae,
            mse,
        };
        ScoreTable {
            rows: vec![
                row("ERA5", 2.04, 8.45),
                row("CERRA", 1.86, 7.39),
                row("Ensemble", 1.87, 7.41),
            ],
            records: 0,
        }
    }

    /// Plain-text table with `Model`, `MAE` and `MSE` columns, two decimals.
    pub fn render(&self) -> String {
        let width = self
            .rows
            .iter()
            .map(|r| r.model.len())
            .chain(std::iter::once("Model".len()))
            .max()
            .unwrap_or(5);
        let mut out = format!("{:<width$}  {:>8}  {:>8}\n", "Model", "MAE", "MSE");
        for r in &self.rows {
            out.push_str(&format!(
                "{:<width$}  {:>8.2}  {:>8.2}\n",
                r.model, r.mae, r.mse
            ));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}
