//! Shared dataset model: samples, nutrients, feature tables and the
//! feature-set configuration that decides which source columns a table
//! carries.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The 12 usable Sentinel-2 Level-2A band names, in canonical column order.
pub const BANDS: [&str; 12] = [
    "B01", "B02", "B03", "B04", "B05", "B06", "B07", "B08", "B8A", "B09", "B11", "B12",
];

/// Weather feature column names, in canonical order (9 features).
pub const WEATHER_COLUMNS: [&str; 9] = [
    "OW_temp",
    "OW_feels_like",
    "OW_dew_point",
    "OW_humidity",
    "OW_pressure",
    "OW_wind_speed",
    "OW_clouds",
    "OW_sunrise_s",
    "OW_sunset_s",
];

/// Number of crop-yield columns an extended table carries.
pub const YIELD_COLUMN_COUNT: usize = 27;
/// Dimension of the ingested geospatial embeddings.
pub const EMBEDDING_DIM: usize = 1024;

/// Detection limit of a nutrient. pH is reported over a valid range rather
/// than a single threshold, so both forms exist.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Lod {
    Value(f64),
    Range(f64, f64),
}

impl Lod {
    /// The numeric limit below which a reading is flagged, when one exists.
    pub fn numeric(self) -> Option<f64> {
        match self {
            Lod::Value(v) => Some(v),
            Lod::Range(..) => None,
        }
    }
}

/// One of the five prediction targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Nutrient {
    PhCaCl2,
    PhH2O,
    N,
    P,
    K,
}

impl Nutrient {
    pub const ALL: [Nutrient; 5] = [
        Nutrient::PhCaCl2,
        Nutrient::PhH2O,
        Nutrient::N,
        Nutrient::P,
        Nutrient::K,
    ];

    /// Column / report name.
    pub fn name(self) -> &'static str {
        match self {
            Nutrient::PhCaCl2 => "pH_CaCl2",
            Nutrient::PhH2O => "pH_H2O",
            Nutrient::N => "N",
            Nutrient::P => "P",
            Nutrient::K => "K",
        }
    }

    pub fn unit(self) -> &'static str {
        match self {
            Nutrient::PhCaCl2 | Nutrient::PhH2O => "-",
            Nutrient::N => "g/kg",
            Nutrient::P | Nutrient::K => "mg/kg",
        }
    }

    /// Detection limit: pH is valid over 2-10, N 0.2 g/kg, P and K 10 mg/kg.
    pub fn lod(self) -> Lod {
        match self {
            Nutrient::PhCaCl2 | Nutrient::PhH2O => Lod::Range(2.0, 10.0),
            Nutrient::N => Lod::Value(0.2),
            Nutrient::P | Nutrient::K => Lod::Value(10.0),
        }
    }

    pub fn from_name(name: &str) -> Option<Nutrient> {
        Nutrient::ALL.iter().copied().find(|n| n.name() == name)
    }
}

impl fmt::Display for Nutrient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One georeferenced, timestamped soil sample with its target readings.
///
/// `below_lod` flags targets whose raw reading fell below the detection
/// limit; a flagged value stored in `targets` is always an imputed value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub point_id: i64,
    pub lat: f64,
    pub lon: f64,
    pub sample_date: NaiveDate,
    pub targets: HashMap<Nutrient, f64>,
    pub below_lod: HashMap<Nutrient, bool>,
}

impl SampleRecord {
    pub fn new(
        point_id: i64,
        lat: f64,
        lon: f64,
        sample_date: NaiveDate,
    ) -> Result<Self, TabularError> {
        if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
            return Err(TabularError::BoundsError { point_id, lat, lon });
        }
        Ok(SampleRecord {
            point_id,
            lat,
            lon,
            sample_date,
            targets: HashMap::new(),
            below_lod: HashMap::new(),
        })
    }
}

/// Which source groups compose the feature table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSetConfig {
    /// 3x3 neighbor pixels per band instead of the center pixel only.
    pub surr: bool,
    /// 9 weather features.
    pub wthr: bool,
    /// 27 crop-yield features.
    pub cry: bool,
    /// 1024 embedding features.
    pub clay: bool,
}

impl FeatureSetConfig {
    pub const BASE: FeatureSetConfig = FeatureSetConfig {
        surr: false,
        wthr: false,
        cry: false,
        clay: false,
    };

    /// Total feature columns: 12·(9 if surr else 1) + 9·wthr + 27·cry + 1024·clay.
    pub fn column_count(self) -> usize {
        12 * if self.surr { 9 } else { 1 }
            + if self.wthr { 9 } else { 0 }
            + if self.cry { YIELD_COLUMN_COUNT } else { 0 }
            + if self.clay { EMBEDDING_DIM } else { 0 }
    }

    /// Band column names in frozen order: band-major, then 3x3 offsets
    /// row-major when `surr` is set.
    pub fn band_column_names(self) -> Vec<String> {
        let mut names = Vec::new();
        for band in BANDS {
            if self.surr {
                for k in 0..9 {
                    names.push(format!("{band}_px{k}"));
                }
            } else {
                names.push(band.to_string());
            }
        }
        names
    }

    /// Report label used in the performance tables.
    pub fn label(self) -> &'static str {
        match (self.surr, self.wthr, self.cry, self.clay) {
            (false, false, false, false) => "BASE",
            (true, true, true, false) => "Previous+ SURR, WTHR, CRY",
            (true, true, true, true) => "Previous+ CLAY",
            _ => "CUSTOM",
        }
    }
}

/// Source columns joined from ingestion, grouped by origin so the assembly
/// step can order them deterministically: bands, weather, yield, embeddings.
#[derive(Debug, Clone, Default)]
pub struct SourceColumns {
    pub bands: Vec<(String, HashMap<i64, f64>)>,
    pub weather: Vec<(String, HashMap<i64, f64>)>,
    pub yields: Vec<(String, HashMap<i64, f64>)>,
    pub embeddings: Vec<(String, HashMap<i64, f64>)>,
}

impl SourceColumns {
    pub fn push_band(&mut self, name: impl Into<String>, values: HashMap<i64, f64>) {
        self.bands.push((name.into(), values));
    }
    pub fn push_weather(&mut self, name: impl Into<String>, values: HashMap<i64, f64>) {
        self.weather.push((name.into(), values));
    }
    pub fn push_yield(&mut self, name: impl Into<String>, values: HashMap<i64, f64>) {
        self.yields.push((name.into(), values));
    }
    pub fn push_embedding(&mut self, name: impl Into<String>, values: HashMap<i64, f64>) {
        self.embeddings.push((name.into(), values));
    }
}

/// Columnar matrix of named features. The raw view is immutable; a
/// normalized view, when present, is a separate same-shape matrix together
/// with the per-column extrema it was derived from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureTable {
    pub column_names: Vec<String>,
    pub row_keys: Vec<i64>,
    /// Row-major, `row_keys.len() x column_names.len()`.
    raw: Vec<f64>,
    normalized: Option<Vec<f64>>,
    pub col_min: Option<Vec<f64>>,
    pub col_max: Option<Vec<f64>>,
}

impl FeatureTable {
    pub fn from_rows(
        column_names: Vec<String>,
        row_keys: Vec<i64>,
        raw: Vec<f64>,
    ) -> Result<Self, TabularError> {
        assert_eq!(raw.len(), row_keys.len() * column_names.len());
        let mut seen_cols = HashSet::new();
        for c in &column_names {
            if !seen_cols.insert(c.as_str()) {
                return Err(TabularError::DuplicateColumn(c.clone()));
            }
        }
        let mut seen_keys = HashSet::new();
        for k in &row_keys {
            if !seen_keys.insert(*k) {
                return Err(TabularError::DuplicateKey(*k));
            }
        }
        Ok(FeatureTable {
            column_names,
            row_keys,
            raw,
            normalized: None,
            col_min: None,
            col_max: None,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.row_keys.len()
    }

    pub fn n_cols(&self) -> usize {
        self.column_names.len()
    }

    pub fn raw(&self) -> &[f64] {
        &self.raw
    }

    pub fn raw_row(&self, row: usize) -> &[f64] {
        let d = self.n_cols();
        &self.raw[row * d..(row + 1) * d]
    }

    pub fn normalized(&self) -> Option<&[f64]> {
        self.normalized.as_deref()
    }

    pub fn normalized_row(&self, row: usize) -> Option<&[f64]> {
        let d = self.n_cols();
        self.normalized
            .as_deref()
            .map(|m| &m[row * d..(row + 1) * d])
    }

    pub fn raw_column(&self, col: usize) -> Vec<f64> {
        let d = self.n_cols();
        self.raw.iter().skip(col).step_by(d).copied().collect()
    }

    pub fn row_index(&self, point_id: i64) -> Option<usize> {
        self.row_keys.iter().position(|&k| k == point_id)
    }

    /// Installs the normalized view. Used by the preprocessing stage only;
    /// callers must provide extrema consistent with the raw columns.
    pub fn set_normalized(&mut self, normalized: Vec<f64>, col_min: Vec<f64>, col_max: Vec<f64>) {
        assert_eq!(normalized.len(), self.raw.len());
        assert_eq!(col_min.len(), self.n_cols());
        assert_eq!(col_max.len(), self.n_cols());
        self.normalized = Some(normalized);
        self.col_min = Some(col_min);
        self.col_max = Some(col_max);
    }

    /// Writes a view as delimited text: header of column names with
    /// `point_id` first, tab separator, `.` decimal separator, `NA` for
    /// not-a-value entries. Finite values round-trip bit-identically.
    pub fn write_delimited<W: Write>(&self, mut w: W, normalized: bool) -> std::io::Result<()> {
        let data: &[f64] = if normalized {
            self.normalized.as_deref().expect("normalized view absent")
        } else {
            &self.raw
        };
        write!(w, "point_id")?;
        for c in &self.column_names {
            write!(w, "\t{c}")?;
        }
        writeln!(w)?;
        let d = self.n_cols();
        for (i, key) in self.row_keys.iter().enumerate() {
            write!(w, "{key}")?;
            for v in &data[i * d..(i + 1) * d] {
                if v.is_nan() {
                    write!(w, "\tNA")?;
                } else {
                    write!(w, "\t{v}")?;
                }
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn write_to_path(&self, path: &Path, normalized: bool) -> std::io::Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_delimited(std::io::BufWriter::new(f), normalized)
    }

    /// Parses a table previously written by [`FeatureTable::write_delimited`].
    pub fn read_delimited<R: Read>(r: R) -> Result<Self, TabularError> {
        let mut lines = BufReader::new(r).lines();
        let header = lines
            .next()
            .ok_or_else(|| TabularError::ParseError {
                line: 1,
                reason: "empty file".into(),
            })?
            .map_err(|e| TabularError::ParseError {
                line: 1,
                reason: e.to_string(),
            })?;
        let mut fields = header.split('\t');
        if fields.next() != Some("point_id") {
            return Err(TabularError::ParseError {
                line: 1,
                reason: "first column must be point_id".into(),
            });
        }
        let column_names: Vec<String> = fields.map(str::to_string).collect();
        let mut row_keys = Vec::new();
        let mut raw = Vec::new();
        for (idx, line) in lines.enumerate() {
            let lineno = idx + 2;
            let line = line.map_err(|e| TabularError::ParseError {
                line: lineno,
                reason: e.to_string(),
            })?;
            if line.is_empty() {
                continue;
            }
            let mut fields = line.split('\t');
            let key =
                fields
                    .next()
                    .unwrap()
                    .parse::<i64>()
                    .map_err(|e| TabularError::ParseError {
                        line: lineno,
                        reason: format!("bad point_id: {e}"),
                    })?;
            row_keys.push(key);
            let mut count = 0;
            for field in fields {
                let v = if field == "NA" {
                    f64::NAN
                } else {
                    field.parse::<f64>().map_err(|e| TabularError::ParseError {
                        line: lineno,
                        reason: format!("bad value {field:?}: {e}"),
                    })?
                };
                raw.push(v);
                count += 1;
            }
            if count != column_names.len() {
                return Err(TabularError::ParseError {
                    line: lineno,
                    reason: format!("expected {} values, got {count}", column_names.len()),
                });
            }
        }
        FeatureTable::from_rows(column_names, row_keys, raw)
    }

    pub fn read_from_path(path: &Path) -> Result<Self, TabularError> {
        let f = std::fs::File::open(path).map_err(|e| TabularError::ParseError {
            line: 0,
            reason: format!("{}: {e}", path.display()),
        })?;
        Self::read_delimited(f)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum TabularError {
    #[error("sample {point_id}: required source column {column} is absent")]
    MissingColumn { point_id: i64, column: String },
    #[error("duplicate point_id {0}")]
    DuplicateKey(i64),
    #[error("duplicate column name {0}")]
    DuplicateColumn(String),
    #[error("sample {point_id}: target {nutrient} is missing")]
    MissingTarget { point_id: i64, nutrient: Nutrient },
    #[error("sample {point_id}: lat/lon ({lat}, {lon}) out of bounds")]
    BoundsError { point_id: i64, lat: f64, lon: f64 },
    #[error("line {line}: {reason}")]
    ParseError { line: usize, reason: String },
    #[error("source group {group}: expected {expected} columns, got {got}")]
    WrongSourceArity {
        group: &'static str,
        expected: usize,
        got: usize,
    },
}

/// Joins source columns into one feature table. Rows follow the sample
/// order; column order is frozen: bands (with 3x3 offsets row-major when
/// `surr`), weather, yield, embeddings. No normalization is applied.
pub fn assemble_feature_table(
    samples: &[SampleRecord],
    sources: &SourceColumns,
    config: FeatureSetConfig,
) -> Result<FeatureTable, TabularError> {
    let expected_bands = 12 * if config.surr { 9 } else { 1 };
    if sources.bands.len() != expected_bands {
        return Err(TabularError::WrongSourceArity {
            group: "bands",
            expected: expected_bands,
            got: sources.bands.len(),
        });
    }
    let mut groups: Vec<&[(String, HashMap<i64, f64>)]> = vec![&sources.bands];
    if config.wthr {
        if sources.weather.len() != WEATHER_COLUMNS.len() {
            return Err(TabularError::WrongSourceArity {
                group: "weather",
                expected: WEATHER_COLUMNS.len(),
                got: sources.weather.len(),
            });
        }
        groups.push(&sources.weather);
    }
    if config.cry {
        if sources.yields.len() != YIELD_COLUMN_COUNT {
            return Err(TabularError::WrongSourceArity {
                group: "yield",
                expected: YIELD_COLUMN_COUNT,
                got: sources.yields.len(),
            });
        }
        groups.push(&sources.yields);
    }
    if config.clay {
        if sources.embeddings.len() != EMBEDDING_DIM {
            return Err(TabularError::WrongSourceArity {
                group: "embeddings",
                expected: EMBEDDING_DIM,
                got: sources.embeddings.len(),
            });
        }
        groups.push(&sources.embeddings);
    }

    let columns: Vec<&(String, HashMap<i64, f64>)> = groups.iter().flat_map(|g| g.iter()).collect();
    debug_assert_eq!(columns.len(), config.column_count());

    let mut seen = HashSet::new();
    let mut row_keys = Vec::with_capacity(samples.len());
    let mut raw = Vec::with_capacity(samples.len() * columns.len());
    for s in samples {
        if !seen.insert(s.point_id) {
            return Err(TabularError::DuplicateKey(s.point_id));
        }
        row_keys.push(s.point_id);
        for (name, values) in &columns {
            match values.get(&s.point_id) {
                Some(v) => raw.push(*v),
                None => {
                    return Err(TabularError::MissingColumn {
                        point_id: s.point_id,
                        column: name.clone(),
                    })
                }
            }
        }
    }
    let column_names = columns.iter().map(|(n, _)| n.clone()).collect();
    FeatureTable::from_rows(column_names, row_keys, raw)
}

/// Extracts the target vector for one nutrient, in sample order and on the
/// original scale. Targets are never normalized.
pub fn target_vector(
    samples: &[SampleRecord],
    nutrient: Nutrient,
) -> Result<Vec<f64>, TabularError> {
    samples
        .iter()
        .map(|s| {
            s.targets
                .get(&nutrient)
                .copied()
                .ok_or(TabularError::MissingTarget {
                    point_id: s.point_id,
                    nutrient,
                })
        })
        .collect()
}
