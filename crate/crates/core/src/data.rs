//! Ingest pipeline: trip-record CSV parsing, grid rasterization, Max-Min
//! normalization, outlier masking, and the external weather/calendar table.

use std::path::Path;

use chrono::{Datelike, NaiveDate, NaiveDateTime, Timelike};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CHANNELS: usize = 2;
pub const EXTERNAL_DIM: usize = 15;
const WEATHER_FIELDS: usize = 7;

/// Sentinel for a missing cell-interval.
pub const MISSING: f64 = f64::NAN;

// ---------------------------------------------------------------------------
// Trip records
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct TripRecord {
    pub pickup_time: NaiveDateTime,
    pub dropoff_time: NaiveDateTime,
    pub pickup_lat: f64,
    pub pickup_lon: f64,
    pub dropoff_lat: f64,
    pub dropoff_lon: f64,
}

#[derive(Debug, Clone, Default)]
pub struct ParseStats {
    pub parsed: usize,
    pub malformed: usize,
}

fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S")
        .or_else(|_| NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M:%S"))
        .ok()
}

/// Parse a trip CSV with header columns pickup_datetime, dropoff_datetime,
/// pickup_latitude, pickup_longitude, dropoff_latitude, dropoff_longitude.
///
/// Malformed rows are counted and skipped; more than 50% malformed rows is a
/// format error.
pub fn parse_trips(path: &Path) -> Result<(Vec<TripRecord>, ParseStats)> {
    let mut reader = csv::Reader::from_path(path).map_err(csv_io)?;
    let headers = reader.headers().map_err(csv_io)?.clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Format(format!("trip CSV is missing column '{name}'")))
    };
    let c_pt = col("pickup_datetime")?;
    let c_dt = col("dropoff_datetime")?;
    let c_plat = col("pickup_latitude")?;
    let c_plon = col("pickup_longitude")?;
    let c_dlat = col("dropoff_latitude")?;
    let c_dlon = col("dropoff_longitude")?;

    let mut out = Vec::new();
    let mut stats = ParseStats::default();
    for row in reader.records() {
        let row = match row {
            Ok(r) => r,
            Err(_) => {
                stats.malformed += 1;
                continue;
            }
        };
        let parsed = (|| {
            let pickup_time = parse_timestamp(row.get(c_pt)?)?;
            let dropoff_time = parse_timestamp(row.get(c_dt)?)?;
            let pickup_lat: f64 = row.get(c_plat)?.parse().ok()?;
            let pickup_lon: f64 = row.get(c_plon)?.parse().ok()?;
            let dropoff_lat: f64 = row.get(c_dlat)?.parse().ok()?;
            let dropoff_lon: f64 = row.get(c_dlon)?.parse().ok()?;
            let finite = [pickup_lat, pickup_lon, dropoff_lat, dropoff_lon]
                .iter()
                .all(|v| v.is_finite());
            if !finite || dropoff_time < pickup_time {
                return None;
            }
            Some(TripRecord {
                pickup_time,
                dropoff_time,
                pickup_lat,
                pickup_lon,
                dropoff_lat,
                dropoff_lon,
            })
        })();
        match parsed {
            Some(r) => {
                stats.parsed += 1;
                out.push(r);
            }
            None => stats.malformed += 1,
        }
    }
    let total = stats.parsed + stats.malformed;
    if total > 0 && stats.malformed * 2 > total {
        return Err(Error::Format(format!(
            "{} of {} trip rows are malformed",
            stats.malformed, total
        )));
    }
    Ok((out, stats))
}

fn csv_io(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Format(format!("CSV error: {other:?}")),
    }
}

// ---------------------------------------------------------------------------
// Volume grid
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bbox {
    pub min_lat: f64,
    pub max_lat: f64,
    pub min_lon: f64,
    pub max_lon: f64,
}

impl Bbox {
    pub fn validate(&self) -> Result<()> {
        if !(self.min_lat < self.max_lat && self.min_lon < self.max_lon) {
            return Err(Error::Config(format!("degenerate bounding box {self:?}")));
        }
        Ok(())
    }
}

/// Dense [T × rows × cols × 2] grid of traffic volume. Channel 0 counts trip
/// starts, channel 1 trip ends. Values are raw counts after rasterization and
/// [0,1] floats after normalization; missing cell-intervals hold NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct VolumeGrid {
    pub values: Tensor,
    pub t0: NaiveDateTime,
    pub interval_minutes: u32,
    pub bbox: Option<Bbox>,
}

impl VolumeGrid {
    pub fn zeros(t: usize, rows: usize, cols: usize, t0: NaiveDateTime, interval_minutes: u32) -> Self {
        VolumeGrid {
            values: Tensor::zeros(vec![t, rows, cols, CHANNELS]),
            t0,
            interval_minutes,
            bbox: None,
        }
    }

    pub fn intervals(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn rows(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn cols(&self) -> usize {
        self.values.shape()[2]
    }

    fn idx(&self, t: usize, r: usize, c: usize, ch: usize) -> usize {
        ((t * self.rows() + r) * self.cols() + c) * CHANNELS + ch
    }

    pub fn get(&self, t: usize, r: usize, c: usize, ch: usize) -> f64 {
        self.values.data()[self.idx(t, r, c, ch)]
    }

    pub fn set(&mut self, t: usize, r: usize, c: usize, ch: usize, v: f64) {
        let i = self.idx(t, r, c, ch);
        self.values.data_mut()[i] = v;
    }

    pub fn time_of(&self, t: usize) -> NaiveDateTime {
        self.t0 + chrono::Duration::minutes(self.interval_minutes as i64 * t as i64)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RasterStats {
    pub pickups_binned: usize,
    pub pickups_dropped: usize,
    pub dropoffs_binned: usize,
    pub dropoffs_dropped: usize,
}

fn cell_index(coord: f64, min: f64, max: f64, dim: usize) -> Option<usize> {
    if coord < min || coord > max {
        return None;
    }
    let frac = (coord - min) / (max - min);
    // the max edge maps into the last cell instead of being dropped
    Some(((frac * dim as f64) as usize).min(dim - 1))
}

/// Bin trip pickups (channel 0) and dropoffs (channel 1) into grid cells by
/// 30-minute-style intervals. Events outside the bbox or time range are
/// dropped and counted.
pub fn rasterize(
    trips: &[TripRecord],
    bbox: Bbox,
    t0: NaiveDateTime,
    intervals: usize,
    interval_minutes: u32,
    rows: usize,
    cols: usize,
) -> Result<(VolumeGrid, RasterStats)> {
    bbox.validate()?;
    if intervals == 0 {
        return Err(Error::Config("rasterize needs at least one interval".into()));
    }
    let mut grid = VolumeGrid::zeros(intervals, rows, cols, t0, interval_minutes);
    grid.bbox = Some(bbox);
    let mut stats = RasterStats::default();

    let interval_of = |ts: NaiveDateTime| -> Option<usize> {
        let delta = ts.signed_duration_since(t0).num_minutes();
        if delta < 0 {
            return None;
        }
        let idx = (delta / interval_minutes as i64) as usize;
        (idx < intervals).then_some(idx)
    };

    for trip in trips {
        let pickup = (
            interval_of(trip.pickup_time),
            cell_index(trip.pickup_lat, bbox.min_lat, bbox.max_lat, rows),
            cell_index(trip.pickup_lon, bbox.min_lon, bbox.max_lon, cols),
        );
        match pickup {
            (Some(t), Some(r), Some(c)) => {
                let v = grid.get(t, r, c, 0);
                grid.set(t, r, c, 0, v + 1.0);
                stats.pickups_binned += 1;
            }
            _ => stats.pickups_dropped += 1,
        }
        let dropoff = (
            interval_of(trip.dropoff_time),
            cell_index(trip.dropoff_lat, bbox.min_lat, bbox.max_lat, rows),
            cell_index(trip.dropoff_lon, bbox.min_lon, bbox.max_lon, cols),
        );
        match dropoff {
            (Some(t), Some(r), Some(c)) => {
                let v = grid.get(t, r, c, 1);
                grid.set(t, r, c, 1, v + 1.0);
                stats.dropoffs_binned += 1;
            }
            _ => stats.dropoffs_dropped += 1,
        }
    }
    Ok((grid, stats))
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

/// Per-channel Max-Min scaler fit on the training time range only.
#[derive(Debug, Clone, PartialEq)]
pub struct Scaler {
    fitted: bool,
    pub min: [f64; CHANNELS],
    pub max: [f64; CHANNELS],
}

impl Default for Scaler {
    fn default() -> Self {
        Self::new()
    }
}

impl Scaler {
    pub fn new() -> Self {
        Scaler { fitted: false, min: [0.0; CHANNELS], max: [0.0; CHANNELS] }
    }

    pub fn from_bounds(min: [f64; CHANNELS], max: [f64; CHANNELS]) -> Self {
        Scaler { fitted: true, min, max }
    }

    /// Fit on intervals [0, train_end); NaN entries are ignored.
    pub fn fit(grid: &VolumeGrid, train_end: usize) -> Result<Self> {
        if train_end == 0 || train_end > grid.intervals() {
            return Err(Error::Config(format!(
                "scaler train_end {} out of range 1..={}",
                train_end,
                grid.intervals()
            )));
        }
        let mut min = [f64::INFINITY; CHANNELS];
        let mut max = [f64::NEG_INFINITY; CHANNELS];
        for t in 0..train_end {
            for r in 0..grid.rows() {
                for c in 0..grid.cols() {
                    for ch in 0..CHANNELS {
                        let v = grid.get(t, r, c, ch);
                        if v.is_finite() {
                            min[ch] = min[ch].min(v);
                            max[ch] = max[ch].max(v);
                        }
                    }
                }
            }
        }
        for ch in 0..CHANNELS {
            if !min[ch].is_finite() {
                return Err(Error::Numeric(format!(
                    "no finite training values in channel {ch}"
                )));
            }
        }
        Ok(Scaler { fitted: true, min, max })
    }

    pub fn normalize_value(&self, ch: usize, v: f64) -> Result<f64> {
        if !self.fitted {
            return Err(Error::State("scaler used before fit".into()));
        }
        if !v.is_finite() {
            return Ok(v); // missing sentinel passes through
        }
        let (lo, hi) = (self.min[ch], self.max[ch]);
        if hi == lo {
            return Ok(0.0);
        }
        Ok((v - lo) / (hi - lo))
    }

    pub fn denormalize_value(&self, ch: usize, v: f64) -> Result<f64> {
        if !self.fitted {
            return Err(Error::State("scaler used before fit".into()));
        }
        Ok(self.min[ch] + v * (self.max[ch] - self.min[ch]))
    }

    pub fn normalize(&self, grid: &VolumeGrid) -> Result<VolumeGrid> {
        let mut out = grid.clone();
        for t in 0..grid.intervals() {
            for r in 0..grid.rows() {
                for c in 0..grid.cols() {
                    for ch in 0..CHANNELS {
                        let v = self.normalize_value(ch, grid.get(t, r, c, ch))?;
                        out.set(t, r, c, ch, v);
                    }
                }
            }
        }
        Ok(out)
    }
}

// ---------------------------------------------------------------------------
// Mask
// ---------------------------------------------------------------------------

/// Per cell-interval validity: false iff missing or failing the outlier
/// predicate (value < 0 or > upper bound in normalized units) on either
/// channel.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskGrid {
    pub valid: Vec<bool>,
    pub intervals: usize,
    pub rows: usize,
    pub cols: usize,
}

impl MaskGrid {
    pub fn get(&self, t: usize, r: usize, c: usize) -> bool {
        self.valid[(t * self.rows + r) * self.cols + c]
    }

    pub fn set(&mut self, t: usize, r: usize, c: usize, v: bool) {
        self.valid[(t * self.rows + r) * self.cols + c] = v;
    }
}

pub const DEFAULT_MASK_UPPER: f64 = 0.5;

/// Mask predicate over a normalized grid: valid iff both channels are
/// present, >= 0, and <= `upper`.
pub fn build_mask(grid_normalized: &VolumeGrid, upper: f64) -> MaskGrid {
    let (t_n, rows, cols) = (
        grid_normalized.intervals(),
        grid_normalized.rows(),
        grid_normalized.cols(),
    );
    let mut mask = MaskGrid {
        valid: vec![false; t_n * rows * cols],
        intervals: t_n,
        rows,
        cols,
    };
    for t in 0..t_n {
        for r in 0..rows {
            for c in 0..cols {
                let ok = (0..CHANNELS).all(|ch| {
                    let v = grid_normalized.get(t, r, c, ch);
                    v.is_finite() && v >= 0.0 && v <= upper
                });
                mask.set(t, r, c, ok);
            }
        }
    }
    mask
}

// ---------------------------------------------------------------------------
// External features
// ---------------------------------------------------------------------------

/// Per-interval 15-dim feature vector: 7 normalized weather fields, 7-dim
/// day-of-week one-hot (Monday = 0), and a holiday flag.
#[derive(Debug, Clone, PartialEq)]
pub struct ExternalTable {
    pub features: Tensor, // [T, 15]
}

impl ExternalTable {
    pub fn dim(&self) -> usize {
        self.features.shape()[1]
    }

    pub fn row(&self, t: usize) -> Tensor {
        let d = self.dim();
        Tensor::vector(self.features.data()[t * d..(t + 1) * d].to_vec())
    }

    pub fn intervals(&self) -> usize {
        self.features.shape()[0]
    }
}

#[derive(Debug, Clone)]
pub struct WeatherRow {
    pub timestamp: NaiveDateTime,
    pub fields: [f64; WEATHER_FIELDS],
}

pub const WEATHER_COLUMNS: [&str; WEATHER_FIELDS] = [
    "temperature",
    "wind_speed",
    "humidity",
    "uv_index",
    "precip_probability",
    "pressure",
    "visibility",
];

pub fn parse_weather_csv(path: &Path) -> Result<Vec<WeatherRow>> {
    let mut reader = csv::Reader::from_path(path).map_err(csv_io)?;
    let headers = reader.headers().map_err(csv_io)?.clone();
    let ts_col = headers
        .iter()
        .position(|h| h == "timestamp")
        .ok_or_else(|| Error::Format("weather CSV is missing column 'timestamp'".into()))?;
    let mut cols = [0usize; WEATHER_FIELDS];
    for (i, name) in WEATHER_COLUMNS.iter().enumerate() {
        cols[i] = headers
            .iter()
            .position(|h| h == *name)
            .ok_or_else(|| Error::Format(format!("weather CSV is missing column '{name}'")))?;
    }
    let mut rows = Vec::new();
    for row in reader.records() {
        let row = row.map_err(csv_io)?;
        let ts = row
            .get(ts_col)
            .and_then(parse_timestamp)
            .ok_or_else(|| Error::Format("unparseable weather timestamp".into()))?;
        let mut fields = [0.0; WEATHER_FIELDS];
        for (i, &c) in cols.iter().enumerate() {
            fields[i] = row
                .get(c)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Format(format!("bad value in weather column '{}'", WEATHER_COLUMNS[i])))?;
        }
        rows.push(WeatherRow { timestamp: ts, fields });
    }
    rows.sort_by_key(|r| r.timestamp);
    Ok(rows)
}

pub fn parse_holidays_csv(path: &Path) -> Result<Vec<NaiveDate>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line == "date" || line.starts_with('#') {
            continue;
        }
        let d = NaiveDate::parse_from_str(line, "%Y-%m-%d")
            .map_err(|_| Error::Format(format!("bad holiday date '{line}'")))?;
        out.push(d);
    }
    Ok(out)
}

/// Assemble the external table: weather rows forward-filled onto the interval
/// grid (a row covers all intervals from its timestamp until the next row),
/// continuous fields Max-Min normalized over the training range, plus
/// calendar encodings.
pub fn build_external(
    weather: &[WeatherRow],
    holidays: &[NaiveDate],
    t0: NaiveDateTime,
    intervals: usize,
    interval_minutes: u32,
    train_end: usize,
) -> Result<ExternalTable> {
    let train_end = train_end.min(intervals).max(1);
    // Forward fill: raw weather value per interval.
    let mut raw = vec![[0.0f64; WEATHER_FIELDS]; intervals];
    let mut gaps = Vec::new();
    let mut cursor = 0usize;
    for (t, slot) in raw.iter_mut().enumerate() {
        let ts = t0 + chrono::Duration::minutes(interval_minutes as i64 * t as i64);
        while cursor + 1 < weather.len() && weather[cursor + 1].timestamp <= ts {
            cursor += 1;
        }
        let covered = !weather.is_empty() && weather[cursor].timestamp <= ts;
        if covered {
            *slot = weather[cursor].fields;
        } else {
            gaps.push(t);
        }
    }
    if !gaps.is_empty() {
        return Err(Error::Coverage { count: gaps.len(), first: gaps[0] });
    }

    // Max-Min over the training range per field.
    let mut lo = [f64::INFINITY; WEATHER_FIELDS];
    let mut hi = [f64::NEG_INFINITY; WEATHER_FIELDS];
    for slot in raw.iter().take(train_end) {
        for f in 0..WEATHER_FIELDS {
            lo[f] = lo[f].min(slot[f]);
            hi[f] = hi[f].max(slot[f]);
        }
    }

    let mut data = Vec::with_capacity(intervals * EXTERNAL_DIM);
    for (t, slot) in raw.iter().enumerate() {
        for f in 0..WEATHER_FIELDS {
            let v = if hi[f] == lo[f] {
                0.0
            } else {
                ((slot[f] - lo[f]) / (hi[f] - lo[f])).clamp(0.0, 1.0)
            };
            data.push(v);
        }
        let ts = t0 + chrono::Duration::minutes(interval_minutes as i64 * t as i64);
        let dow = ts.weekday().num_days_from_monday() as usize;
        for d in 0..7 {
            data.push(if d == dow { 1.0 } else { 0.0 });
        }
        let is_holiday = holidays.contains(&ts.date());
        data.push(if is_holiday { 1.0 } else { 0.0 });
    }
    Ok(ExternalTable {
        features: Tensor::new(vec![intervals, EXTERNAL_DIM], data)?,
    })
}

/// True for Saturday/Sunday.
pub fn is_weekend(ts: NaiveDateTime) -> bool {
    matches!(ts.weekday(), chrono::Weekday::Sat | chrono::Weekday::Sun)
}

/// Half-open daily clock ranges [start_minute, end_minute).
pub fn in_clock_windows(ts: NaiveDateTime, windows: &[(u32, u32)]) -> bool {
    let minute = ts.hour() * 60 + ts.minute();
    windows.iter().any(|&(s, e)| minute >= s && minute < e)
}
