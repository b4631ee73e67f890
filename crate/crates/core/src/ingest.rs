//! Readers for every external data source: soil sample tables, satellite
//! band patches, weather lookups with a persistent cache, crop-yield raster
//! sampling, and precomputed embedding tables.

use std::collections::BTreeMap;
use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use chrono::NaiveDate;
use thiserror::Error;

use crate::tabular::{Nutrient, SampleRecord, BANDS, WEATHER_COLUMNS};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("line {line}: {reason}")]
    ParseError { line: usize, reason: String },
    #[error("point {point_id}: coordinates out of range (lat {lat}, lon {lon})")]
    BoundsError { point_id: i64, lat: f64, lon: f64 },
    #[error("band {0} missing from patch set")]
    MissingBand(String),
    #[error("patch dimensions disagree: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(u32, u32, u32, u32),
    #[error("unknown band name {0:?}")]
    UnknownBand(String),
    #[error("patch width/height must be odd, got {0}x{1}")]
    EvenPatch(u32, u32),
    #[error("not a patch file (bad magic)")]
    BadMagic,
    #[error("point ({lat}, {lon}) outside raster {crop_code} bounds")]
    OutOfBounds {
        crop_code: String,
        lat: f64,
        lon: f64,
    },
    #[error("point {point_id}: expected 1024 embedding values, got {count}")]
    WrongArity { point_id: i64, count: usize },
    #[error("weather fetch failed for ({lat}, {lon}, {date}): {reason}")]
    FetchError {
        lat: f64,
        lon: f64,
        date: NaiveDate,
        reason: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

// ---------------------------------------------------------------------------
// Soil sample tables

/// Parses a delimited soil table. Header must contain `point_id`, `lat`,
/// `lon`, `date` and the five nutrient columns; nutrient values below the
/// detection limit get `below_lod` set. `NA` target cells are skipped.
pub fn read_soil_table<R: Read>(r: R) -> Result<Vec<SampleRecord>, IngestError> {
    let mut lines = BufReader::new(r).lines();
    let header = lines
        .next()
        .ok_or_else(|| IngestError::ParseError {
            line: 1,
            reason: "empty file".into(),
        })?
        .map_err(|e| IngestError::ParseError {
            line: 1,
            reason: e.to_string(),
        })?;
    let cols: Vec<&str> = header.split('\t').collect();
    let find = |name: &str| {
        cols.iter()
            .position(|c| *c == name)
            .ok_or_else(|| IngestError::ParseError {
                line: 1,
                reason: format!("missing column {name}"),
            })
    };
    let id_col = find("point_id")?;
    let lat_col = find("lat")?;
    let lon_col = find("lon")?;
    let date_col = find("date")?;
    let nutrients = [
        Nutrient::PhCaCl2,
        Nutrient::PhH2O,
        Nutrient::N,
        Nutrient::P,
        Nutrient::K,
    ];
    let mut nutrient_cols = Vec::new();
    for n in nutrients {
        nutrient_cols.push((n, find(n.name())?));
    }

    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let line = line.map_err(|e| IngestError::ParseError {
            line: line_no,
            reason: e.to_string(),
        })?;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != cols.len() {
            return Err(IngestError::ParseError {
                line: line_no,
                reason: format!("expected {} fields, got {}", cols.len(), fields.len()),
            });
        }
        let parse_f64 = |s: &str, what: &str| {
            s.parse::<f64>().map_err(|_| IngestError::ParseError {
                line: line_no,
                reason: format!("bad {what}: {s:?}"),
            })
        };
        let point_id = fields[id_col]
            .parse::<i64>()
            .map_err(|_| IngestError::ParseError {
                line: line_no,
                reason: format!("bad point_id: {:?}", fields[id_col]),
            })?;
        let lat = parse_f64(fields[lat_col], "lat")?;
        let lon = parse_f64(fields[lon_col], "lon")?;
        let date = NaiveDate::parse_from_str(fields[date_col], "%Y-%m-%d").map_err(|e| {
            IngestError::ParseError {
                line: line_no,
                reason: format!("bad date {:?}: {e}", fields[date_col]),
            }
        })?;
        let mut record = SampleRecord::new(point_id, lat, lon, date)
            .map_err(|_| IngestError::BoundsError { point_id, lat, lon })?;
        for (nutrient, col) in &nutrient_cols {
            let cell = fields[*col];
            if cell == "NA" {
                continue;
            }
            let v = parse_f64(cell, nutrient.name())?;
            record.targets.insert(*nutrient, v);
            if let Some(limit) = nutrient.lod().numeric() {
                if v < limit {
                    record.below_lod.insert(*nutrient, true);
                }
            }
        }
        out.push(record);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Satellite band patches (`SPX1` flat binary)

const PATCH_MAGIC: &[u8; 4] = b"SPX1";

/// One cropped reflectance patch for a single band, centered on a sample.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchFile {
    pub band_id: String,
    pub width: u32,
    pub height: u32,
    pub pixel_size_m: f64,
    /// (lat, lon) of the center pixel, i.e. the soil sample location.
    pub origin: (f64, f64),
    /// Row-major, `height x width`.
    pub values: Vec<u16>,
}

impl PatchFile {
    pub fn new(
        band_id: &str,
        width: u32,
        height: u32,
        pixel_size_m: f64,
        origin: (f64, f64),
        values: Vec<u16>,
    ) -> Result<Self, IngestError> {
        if !BANDS.contains(&band_id) {
            return Err(IngestError::UnknownBand(band_id.to_string()));
        }
        if width.is_multiple_of(2) || height.is_multiple_of(2) {
            return Err(IngestError::EvenPatch(width, height));
        }
        assert_eq!(values.len(), (width * height) as usize);
        Ok(PatchFile {
            band_id: band_id.to_string(),
            width,
            height,
            pixel_size_m,
            origin,
            values,
        })
    }

    pub fn center(&self) -> u16 {
        let (cx, cy) = (self.width / 2, self.height / 2);
        self.values[(cy * self.width + cx) as usize]
    }

    pub fn write<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(PATCH_MAGIC)?;
        let mut name = [0u8; 8];
        name[..self.band_id.len()].copy_from_slice(self.band_id.as_bytes());
        w.write_all(&name)?;
        w.write_all(&self.width.to_le_bytes())?;
        w.write_all(&self.height.to_le_bytes())?;
        w.write_all(&self.pixel_size_m.to_le_bytes())?;
        w.write_all(&self.origin.0.to_le_bytes())?;
        w.write_all(&self.origin.1.to_le_bytes())?;
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self, IngestError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != PATCH_MAGIC {
            return Err(IngestError::BadMagic);
        }
        let mut name = [0u8; 8];
        r.read_exact(&mut name)?;
        let band_id = std::str::from_utf8(&name)
            .map_err(|_| IngestError::BadMagic)?
            .trim_end_matches('\0')
            .to_string();
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        let width = u32::from_le_bytes(b4);
        r.read_exact(&mut b4)?;
        let height = u32::from_le_bytes(b4);
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8)?;
        let pixel_size_m = f64::from_le_bytes(b8);
        r.read_exact(&mut b8)?;
        let lat = f64::from_le_bytes(b8);
        r.read_exact(&mut b8)?;
        let lon = f64::from_le_bytes(b8);
        let mut values = Vec::with_capacity((width * height) as usize);
        let mut b2 = [0u8; 2];
        for _ in 0..width * height {
            r.read_exact(&mut b2)?;
            values.push(u16::from_le_bytes(b2));
        }
        PatchFile::new(&band_id, width, height, pixel_size_m, (lat, lon), values)
    }
}

/// Pulls pixel values from the 12 band patches of one sample.
/// `neighbors=false` takes the center pixel per band (12 values);
/// `neighbors=true` takes the 3x3 window, band-major then offset row-major
/// (108 values). Column names follow `FeatureSetConfig::band_column_names`.
pub fn extract_pixels(patches: &[PatchFile], neighbors: bool) -> Result<Vec<f64>, IngestError> {
    let mut by_band: HashMap<&str, &PatchFile> = HashMap::new();
    for p in patches {
        by_band.insert(p.band_id.as_str(), p);
    }
    let first = patches
        .first()
        .ok_or_else(|| IngestError::MissingBand(BANDS[0].to_string()))?;
    for p in patches {
        if p.width != first.width || p.height != first.height {
            return Err(IngestError::DimensionMismatch(
                first.width,
                first.height,
                p.width,
                p.height,
            ));
        }
    }
    let mut out = Vec::with_capacity(if neighbors { 108 } else { 12 });
    for band in BANDS {
        let p = by_band
            .get(band)
            .ok_or_else(|| IngestError::MissingBand(band.to_string()))?;
        let (cx, cy) = (p.width as i64 / 2, p.height as i64 / 2);
        if neighbors {
            for dy in -1..=1i64 {
                for dx in -1..=1i64 {
                    let (x, y) = (cx + dx, cy + dy);
                    if x < 0 || y < 0 || x >= p.width as i64 || y >= p.height as i64 {
                        return Err(IngestError::DimensionMismatch(p.width, p.height, 3, 3));
                    }
                    out.push(p.values[(y * p.width as i64 + x) as usize] as f64);
                }
            }
        } else {
            out.push(p.center() as f64);
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Weather

/// The 9 numeric weather features for one (location, date) key.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeatherObservation {
    pub values: [f64; 9],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct WeatherKey {
    /// Coordinates keyed at 1e-6 degree resolution to make the cache file
    /// key exact.
    pub lat_micro: i64,
    pub lon_micro: i64,
    pub date: NaiveDate,
}

impl WeatherKey {
    pub fn new(lat: f64, lon: f64, date: NaiveDate) -> Self {
        WeatherKey {
            lat_micro: (lat * 1e6).round() as i64,
            lon_micro: (lon * 1e6).round() as i64,
            date,
        }
    }

    pub fn lat(&self) -> f64 {
        self.lat_micro as f64 / 1e6
    }

    pub fn lon(&self) -> f64 {
        self.lon_micro as f64 / 1e6
    }
}

/// Pluggable weather lookup. The in-repo implementation is file-backed; a
/// networked client would implement the same trait.
pub trait WeatherFetcher {
    fn fetch(&mut self, key: &WeatherKey) -> Result<Option<WeatherObservation>, IngestError>;
}

/// Fixture fetcher backed by an in-memory map; counts invocations so tests
/// can assert the cache short-circuits lookups.
#[derive(Debug, Default)]
pub struct FixtureFetcher {
    pub table: BTreeMap<WeatherKey, WeatherObservation>,
    pub calls: usize,
}

impl WeatherFetcher for FixtureFetcher {
    fn fetch(&mut self, key: &WeatherKey) -> Result<Option<WeatherObservation>, IngestError> {
        self.calls += 1;
        Ok(self.table.get(key).copied())
    }
}

/// Append-only weather cache persisted as a delimited file.
#[derive(Debug, Default)]
pub struct WeatherCache {
    entries: BTreeMap<WeatherKey, WeatherObservation>,
}

impl WeatherCache {
    pub fn load(path: &Path) -> Result<Self, IngestError> {
        let mut cache = WeatherCache::default();
        if !path.exists() {
            return Ok(cache);
        }
        let reader = BufReader::new(std::fs::File::open(path)?);
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if i == 0 || line.is_empty() {
                continue; // header
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 12 {
                return Err(IngestError::ParseError {
                    line: i + 1,
                    reason: format!("expected 12 cache fields, got {}", fields.len()),
                });
            }
            let parse = |s: &str| {
                s.parse::<f64>().map_err(|_| IngestError::ParseError {
                    line: i + 1,
                    reason: format!("bad number {s:?}"),
                })
            };
            let date = NaiveDate::parse_from_str(fields[2], "%Y-%m-%d").map_err(|e| {
                IngestError::ParseError {
                    line: i + 1,
                    reason: e.to_string(),
                }
            })?;
            let key = WeatherKey::new(parse(fields[0])?, parse(fields[1])?, date);
            let mut values = [0.0; 9];
            for (j, v) in values.iter_mut().enumerate() {
                *v = parse(fields[3 + j])?;
            }
            cache.entries.insert(key, WeatherObservation { values });
        }
        Ok(cache)
    }

    pub fn save(&self, path: &Path) -> Result<(), IngestError> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        write!(w, "lat\tlon\tdate")?;
        for c in WEATHER_COLUMNS {
            write!(w, "\t{c}")?;
        }
        writeln!(w)?;
        for (key, obs) in &self.entries {
            write!(w, "{}\t{}\t{}", key.lat(), key.lon(), key.date)?;
            for v in obs.values {
                write!(w, "\t{v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn get(&self, key: &WeatherKey) -> Option<&WeatherObservation> {
        self.entries.get(key)
    }

    pub fn insert(&mut self, key: WeatherKey, obs: WeatherObservation) {
        self.entries.insert(key, obs);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

pub struct WeatherResult {
    /// point_id -> observation, for each resolvable sample.
    pub resolved: BTreeMap<i64, WeatherObservation>,
    /// Samples no source could answer; reported, never silently dropped.
    pub unresolved: Vec<i64>,
    pub fetch_calls: usize,
}

/// Resolves weather for every sample: cache first, then at most one fetcher
/// call per missing key; fetched rows are added to the cache.
pub fn fetch_weather(
    samples: &[SampleRecord],
    fetcher: &mut dyn WeatherFetcher,
    cache: &mut WeatherCache,
) -> Result<WeatherResult, IngestError> {
    let mut resolved = BTreeMap::new();
    let mut unresolved = Vec::new();
    let mut fetch_calls = 0;
    let mut misses_seen: BTreeMap<WeatherKey, Option<WeatherObservation>> = BTreeMap::new();
    for s in samples {
        let key = WeatherKey::new(s.lat, s.lon, s.sample_date);
        let obs = if let Some(obs) = cache.get(&key) {
            Some(*obs)
        } else if let Some(answer) = misses_seen.get(&key) {
            *answer
        } else {
            fetch_calls += 1;
            let answer = fetcher.fetch(&key)?;
            if let Some(obs) = answer {
                cache.insert(key, obs);
            }
            misses_seen.insert(key, answer);
            answer
        };
        match obs {
            Some(obs) => {
                resolved.insert(s.point_id, obs);
            }
            None => unresolved.push(s.point_id),
        }
    }
    Ok(WeatherResult {
        resolved,
        unresolved,
        fetch_calls,
    })
}

// ---------------------------------------------------------------------------
// Crop yield rasters

/// Plain-text yield grid; header lines give crop code, bounds, cell size
/// and the nodata sentinel, followed by `n_rows` lines of values (row 0 =
/// northernmost).
#[derive(Debug, Clone, PartialEq)]
pub struct YieldRaster {
    pub crop_code: String,
    /// (lat_min, lat_max, lon_min, lon_max)
    pub bounds: (f64, f64, f64, f64),
    pub cell_size_deg: f64,
    pub nodata: f64,
    pub n_rows: usize,
    pub n_cols: usize,
    pub values: Vec<f64>,
}

impl YieldRaster {
    pub fn read<R: Read>(r: R) -> Result<Self, IngestError> {
        let reader = BufReader::new(r);
        let mut crop_code = None;
        let mut bounds = None;
        let mut cell = None;
        let mut nodata = None;
        let mut values = Vec::new();
        let mut n_cols = None;
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let line_no = i + 1;
            if line.is_empty() {
                continue;
            }
            let bad = |reason: String| IngestError::ParseError {
                line: line_no,
                reason,
            };
            if let Some(rest) = line.strip_prefix("crop_code ") {
                crop_code = Some(rest.trim().to_string());
            } else if let Some(rest) = line.strip_prefix("bounds ") {
                let parts: Vec<f64> = rest
                    .split_whitespace()
                    .map(|s| s.parse::<f64>())
                    .collect::<Result<_, _>>()
                    .map_err(|e| bad(format!("bad bounds: {e}")))?;
                if parts.len() != 4 {
                    return Err(bad("bounds needs 4 numbers".into()));
                }
                bounds = Some((parts[0], parts[1], parts[2], parts[3]));
            } else if let Some(rest) = line.strip_prefix("cell_size_deg ") {
                cell = Some(rest.trim().parse::<f64>().map_err(|e| bad(e.to_string()))?);
            } else if let Some(rest) = line.strip_prefix("nodata ") {
                nodata = Some(rest.trim().parse::<f64>().map_err(|e| bad(e.to_string()))?);
            } else {
                let row: Vec<f64> = line
                    .split_whitespace()
                    .map(|s| s.parse::<f64>())
                    .collect::<Result<_, _>>()
                    .map_err(|e| bad(format!("bad value row: {e}")))?;
                match n_cols {
                    None => n_cols = Some(row.len()),
                    Some(w) if w != row.len() => {
                        return Err(bad(format!("row width {} != {w}", row.len())));
                    }
                    _ => {}
                }
                values.extend(row);
            }
        }
        let missing = |what: &str| IngestError::ParseError {
            line: 1,
            reason: format!("missing {what} header"),
        };
        let n_cols = n_cols.ok_or_else(|| missing("value rows"))?;
        Ok(YieldRaster {
            crop_code: crop_code.ok_or_else(|| missing("crop_code"))?,
            bounds: bounds.ok_or_else(|| missing("bounds"))?,
            cell_size_deg: cell.ok_or_else(|| missing("cell_size_deg"))?,
            nodata: nodata.ok_or_else(|| missing("nodata"))?,
            n_rows: values.len() / n_cols,
            n_cols,
            values,
        })
    }

    pub fn write<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "crop_code {}", self.crop_code)?;
        writeln!(
            w,
            "bounds {} {} {} {}",
            self.bounds.0, self.bounds.1, self.bounds.2, self.bounds.3
        )?;
        writeln!(w, "cell_size_deg {}", self.cell_size_deg)?;
        writeln!(w, "nodata {}", self.nodata)?;
        for r in 0..self.n_rows {
            let row = &self.values[r * self.n_cols..(r + 1) * self.n_cols];
            let text: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            writeln!(w, "{}", text.join(" "))?;
        }
        Ok(())
    }

    /// Nearest-cell lookup; nodata maps to NaN (the not-a-value sentinel).
    pub fn sample(&self, lat: f64, lon: f64) -> Result<f64, IngestError> {
        let (lat_min, lat_max, lon_min, lon_max) = self.bounds;
        if lat < lat_min || lat > lat_max || lon < lon_min || lon > lon_max {
            return Err(IngestError::OutOfBounds {
                crop_code: self.crop_code.clone(),
                lat,
                lon,
            });
        }
        // row 0 sits at the top (max latitude)
        let col = (((lon - lon_min) / self.cell_size_deg).floor() as usize).min(self.n_cols - 1);
        let row = (((lat_max - lat) / self.cell_size_deg).floor() as usize).min(self.n_rows - 1);
        let v = self.values[row * self.n_cols + col];
        Ok(if v == self.nodata { f64::NAN } else { v })
    }
}

/// Samples every raster at one point; one value per raster, raster order
/// preserved.
pub fn sample_yield(rasters: &[YieldRaster], lat: f64, lon: f64) -> Result<Vec<f64>, IngestError> {
    rasters.iter().map(|r| r.sample(lat, lon)).collect()
}

// ---------------------------------------------------------------------------
// Embeddings

/// Reads a delimited embedding table: point_id plus exactly 1024 values per
/// row. Returns (point_id -> embedding).
pub fn read_embeddings<R: Read>(r: R) -> Result<BTreeMap<i64, Vec<f64>>, IngestError> {
    const DIM: usize = crate::tabular::EMBEDDING_DIM;
    let mut lines = BufReader::new(r).lines();
    let _header = lines.next().transpose()?;
    let mut out = BTreeMap::new();
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let point_id = fields
            .next()
            .and_then(|s| s.parse::<i64>().ok())
            .ok_or_else(|| IngestError::ParseError {
                line: line_no,
                reason: "bad point_id".into(),
            })?;
        let values: Vec<f64> = fields
            .map(|s| {
                s.parse::<f64>().map_err(|_| IngestError::ParseError {
                    line: line_no,
                    reason: format!("bad value {s:?}"),
                })
            })
            .collect::<Result<_, _>>()?;
        if values.len() != DIM {
            return Err(IngestError::WrongArity {
                point_id,
                count: values.len(),
            });
        }
        out.insert(point_id, values);
    }
    Ok(out)
}
