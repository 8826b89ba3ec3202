//! Loading, validation, masking and chronological splitting of MTS datasets.
//!
//! A dataset is a `T x N` matrix (time steps by variates) with an observation
//! mask of the same shape. Missing cells are stored as `0.0` with the mask
//! flag cleared, so downstream statistics can skip them without imputation.
//!
//! Two on-disk formats are supported: comma-separated text and the `.tsb`
//! binary cache described in [`write_cache`].

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::ops::Range;
use std::path::Path;

use chrono::{DateTime, Duration, NaiveDateTime};
use ndarray::{Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Observation flags, `true` where the cell was observed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObservationMask {
    flags: Array2<bool>,
}

impl ObservationMask {
    pub fn new(flags: Array2<bool>) -> Self {
        Self { flags }
    }

    pub fn all_observed(steps: usize, channels: usize) -> Self {
        Self {
            flags: Array2::from_elem((steps, channels), true),
        }
    }

    pub fn flags(&self) -> &Array2<bool> {
        &self.flags
    }

    pub fn is_observed(&self, t: usize, channel: usize) -> bool {
        self.flags[[t, channel]]
    }

    pub fn observed_count(&self) -> usize {
        self.flags.iter().filter(|&&f| f).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesDataset {
    name: String,
    values: Array2<f64>,
    mask: ObservationMask,
    start_time: NaiveDateTime,
    frequency: u64,
}

impl TimeSeriesDataset {
    /// Builds a dataset, zeroing masked cells and rejecting non-finite observed values.
    pub fn new(
        name: impl Into<String>,
        mut values: Array2<f64>,
        mask: ObservationMask,
        start_time: NaiveDateTime,
        frequency: u64,
    ) -> Result<Self> {
        let (steps, channels) = values.dim();
        if steps == 0 || channels == 0 {
            return Err(Error::EmptyDataset);
        }
        if mask.flags.dim() != values.dim() {
            return Err(Error::Shape(format!(
                "mask is {:?} but values are {:?}",
                mask.flags.dim(),
                values.dim()
            )));
        }
        if frequency == 0 {
            return Err(Error::Config("frequency must be positive".into()));
        }
        for ((idx, v), &observed) in values.indexed_iter_mut().zip(mask.flags.iter()) {
            if !observed {
                *v = 0.0;
            } else if !v.is_finite() {
                return Err(Error::Parse {
                    row: idx.0,
                    col: Some(idx.1),
                    message: format!("non-finite observed value {v}"),
                });
            }
        }
        Ok(Self {
            name: name.into(),
            values,
            mask,
            start_time,
            frequency,
        })
    }

    /// A fully observed dataset starting at the Unix epoch.
    pub fn from_values(name: impl Into<String>, values: Array2<f64>, frequency: u64) -> Result<Self> {
        let (t, n) = values.dim();
        Self::new(
            name,
            values,
            ObservationMask::all_observed(t, n),
            DateTime::UNIX_EPOCH.naive_utc(),
            frequency,
        )
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn mask(&self) -> &ObservationMask {
        &self.mask
    }

    pub fn start_time(&self) -> NaiveDateTime {
        self.start_time
    }

    /// Sampling interval in seconds.
    pub fn frequency(&self) -> u64 {
        self.frequency
    }

    pub fn n_steps(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_channels(&self) -> usize {
        self.values.ncols()
    }

    pub fn channel(&self, i: usize) -> ArrayView1<'_, f64> {
        self.values.column(i)
    }

    pub fn time_at(&self, t: usize) -> NaiveDateTime {
        self.start_time + Duration::seconds((t as u64 * self.frequency) as i64)
    }

    /// Keeps only the first `steps` rows.
    pub fn truncated(&self, steps: usize) -> Self {
        let steps = steps.min(self.n_steps()).max(1);
        Self {
            name: self.name.clone(),
            values: self.values.slice_axis(Axis(0), (0..steps).into()).to_owned(),
            mask: ObservationMask::new(
                self.mask.flags.slice_axis(Axis(0), (0..steps).into()).to_owned(),
            ),
            start_time: self.start_time,
            frequency: self.frequency,
        }
    }

    /// Applies `f(t, channel, value)` to every observed cell.
    pub fn map_observed(&self, mut f: impl FnMut(usize, usize, f64) -> f64) -> Self {
        let mut out = self.clone();
        for ((idx, v), &observed) in out.values.indexed_iter_mut().zip(self.mask.flags.iter()) {
            if observed {
                *v = f(idx.0, idx.1, *v);
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetFormat {
    Csv,
    BinaryCache,
}

impl DatasetFormat {
    /// `.tsb` files are binary caches, everything else is CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("tsb") => DatasetFormat::BinaryCache,
            _ => DatasetFormat::Csv,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsvOptions {
    pub has_header: bool,
    /// Cell text that marks a missing observation, in addition to empty cells.
    pub sentinel: String,
    /// Leading columns to drop, e.g. a timestamp column.
    pub skip_columns: usize,
}

impl Default for CsvOptions {
    fn default() -> Self {
        Self {
            has_header: false,
            sentinel: "NaN".to_string(),
            skip_columns: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadOptions {
    pub format: Option<DatasetFormat>,
    pub csv: CsvOptions,
    pub frequency: u64,
    pub start_time: NaiveDateTime,
    pub name: Option<String>,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            format: None,
            csv: CsvOptions::default(),
            frequency: 3600,
            start_time: DateTime::UNIX_EPOCH.naive_utc(),
            name: None,
        }
    }
}

/// Loads a dataset. For the binary cache, frequency, start time and name come
/// from the file header and the corresponding options are ignored.
pub fn load_dataset(path: &Path, opts: &LoadOptions) -> Result<TimeSeriesDataset> {
    let format = opts.format.unwrap_or_else(|| DatasetFormat::from_path(path));
    match format {
        DatasetFormat::BinaryCache => read_cache(path),
        DatasetFormat::Csv => {
            let file = File::open(path).map_err(|e| Error::io(path, e))?;
            let name = opts.name.clone().unwrap_or_else(|| {
                path.file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default()
            });
            parse_csv(
                BufReader::new(file),
                &opts.csv,
                name,
                opts.start_time,
                opts.frequency,
            )
        }
    }
}

/// Parses CSV text. Row numbers in errors are 1-based file lines.
pub fn parse_csv<R: Read>(
    reader: R,
    opts: &CsvOptions,
    name: impl Into<String>,
    start_time: NaiveDateTime,
    frequency: u64,
) -> Result<TimeSeriesDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let mut data: Vec<f64> = Vec::new();
    let mut flags: Vec<bool> = Vec::new();
    let mut width: Option<usize> = None;
    let mut steps = 0usize;

    for (i, record) in rdr.records().enumerate() {
        let line = i + 1;
        let record = record.map_err(|e| Error::Parse {
            row: line,
            col: None,
            message: e.to_string(),
        })?;
        if i == 0 && opts.has_header {
            continue;
        }
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        let fields = record.len().saturating_sub(opts.skip_columns);
        match width {
            None if fields == 0 => {
                return Err(Error::Parse {
                    row: line,
                    col: None,
                    message: "row has no value columns".into(),
                })
            }
            None => width = Some(fields),
            Some(w) if w != fields => {
                return Err(Error::Parse {
                    row: line,
                    col: None,
                    message: format!("expected {w} fields, found {fields}"),
                })
            }
            Some(_) => {}
        }
        for (j, cell) in record.iter().enumerate().skip(opts.skip_columns) {
            if cell.is_empty() || cell == opts.sentinel {
                data.push(0.0);
                flags.push(false);
                continue;
            }
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                row: line,
                col: Some(j + 1),
                message: format!("non-numeric cell {cell:?}"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row: line,
                    col: Some(j + 1),
                    message: format!("non-finite cell {cell:?}"),
                });
            }
            data.push(v);
            flags.push(true);
        }
        steps += 1;
    }

    let channels = width.ok_or(Error::EmptyDataset)?;
    let values = Array2::from_shape_vec((steps, channels), data)
        .map_err(|e| Error::Shape(e.to_string()))?;
    let flags = Array2::from_shape_vec((steps, channels), flags)
        .map_err(|e| Error::Shape(e.to_string()))?;
    TimeSeriesDataset::new(
        name,
        values,
        ObservationMask::new(flags),
        start_time,
        frequency,
    )
}

const CACHE_MAGIC: &[u8; 4] = b"MTSB";
const CACHE_VERSION: u16 = 1;

/// Writes the `.tsb` binary cache. All integers and floats are little-endian:
///
/// | field       | type            |
/// |-------------|-----------------|
/// | magic       | `b"MTSB"`       |
/// | version     | u16 (= 1)       |
/// | reserved    | u16 (= 0)       |
/// | steps T     | u64             |
/// | channels N  | u64             |
/// | frequency   | u64, seconds    |
/// | start_time  | i64, Unix secs  |
/// | start_nanos | u32             |
/// | name_len    | u32             |
/// | name        | UTF-8 bytes     |
/// | values      | T*N f64, row-major |
/// | mask        | ceil(T*N/8) bytes, row-major, LSB-first, 1 = observed |
pub fn write_cache(ds: &TimeSeriesDataset, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    encode_cache(ds, &mut w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

fn encode_cache<W: Write>(ds: &TimeSeriesDataset, w: &mut W) -> std::io::Result<()> {
    let start = ds.start_time.and_utc();
    w.write_all(CACHE_MAGIC)?;
    w.write_all(&CACHE_VERSION.to_le_bytes())?;
    w.write_all(&0u16.to_le_bytes())?;
    w.write_all(&(ds.n_steps() as u64).to_le_bytes())?;
    w.write_all(&(ds.n_channels() as u64).to_le_bytes())?;
    w.write_all(&ds.frequency.to_le_bytes())?;
    w.write_all(&start.timestamp().to_le_bytes())?;
    w.write_all(&start.timestamp_subsec_nanos().to_le_bytes())?;
    w.write_all(&(ds.name.len() as u32).to_le_bytes())?;
    w.write_all(ds.name.as_bytes())?;
    for v in ds.values.iter() {
        w.write_all(&v.to_le_bytes())?;
    }
    let mut byte = 0u8;
    let mut nbits = 0;
    for &f in ds.mask.flags.iter() {
        if f {
            byte |= 1 << nbits;
        }
        nbits += 1;
        if nbits == 8 {
            w.write_all(&[byte])?;
            byte = 0;
            nbits = 0;
        }
    }
    if nbits > 0 {
        w.write_all(&[byte])?;
    }
    Ok(())
}

pub fn read_cache(path: &Path) -> Result<TimeSeriesDataset> {
    let mut buf = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::io(path, e))?;
    decode_cache(&buf)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Cache("truncated file".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const K: usize>(&mut self) -> Result<[u8; K]> {
        Ok(self.take(K)?.try_into().expect("length checked"))
    }
}

fn decode_cache(buf: &[u8]) -> Result<TimeSeriesDataset> {
    let mut c = Cursor { buf, pos: 0 };
    if c.take(4)? != CACHE_MAGIC {
        return Err(Error::Cache("bad magic".into()));
    }
    let version = u16::from_le_bytes(c.array()?);
    if version != CACHE_VERSION {
        return Err(Error::Cache(format!("unsupported version {version}")));
    }
    let _reserved = u16::from_le_bytes(c.array()?);
    let steps = u64::from_le_bytes(c.array()?) as usize;
    let channels = u64::from_le_bytes(c.array()?) as usize;
    let frequency = u64::from_le_bytes(c.array()?);
    let secs = i64::from_le_bytes(c.array()?);
    let nanos = u32::from_le_bytes(c.array()?);
    let name_len = u32::from_le_bytes(c.array()?) as usize;
    let name = String::from_utf8(c.take(name_len)?.to_vec())
        .map_err(|_| Error::Cache("name is not UTF-8".into()))?;
    let start_time = DateTime::from_timestamp(secs, nanos)
        .ok_or_else(|| Error::Cache("start time out of range".into()))?
        .naive_utc();

    let cells = steps
        .checked_mul(channels)
        .ok_or_else(|| Error::Cache("dimensions overflow".into()))?;
    let raw = c.take(cells.checked_mul(8).ok_or_else(|| Error::Cache("dimensions overflow".into()))?)?;
    let values: Vec<f64> = raw
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("chunk of 8")))
        .collect();
    let bits = c.take(cells.div_ceil(8))?;
    let flags: Vec<bool> = (0..cells).map(|k| bits[k / 8] >> (k % 8) & 1 == 1).collect();
    if c.pos != buf.len() {
        return Err(Error::Cache("trailing bytes".into()));
    }

    let values = Array2::from_shape_vec((steps, channels), values)
        .map_err(|e| Error::Cache(e.to_string()))?;
    let flags = Array2::from_shape_vec((steps, channels), flags)
        .map_err(|e| Error::Cache(e.to_string()))?;
    TimeSeriesDataset::new(name, values, ObservationMask::new(flags), start_time, frequency)
}

/// Contiguous train / validation / test index ranges over `[0, T)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChronologicalSplit {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl SplitRatios {
    pub const fn new(train: f64, val: f64, test: f64) -> Self {
        Self { train, val, test }
    }

    /// 6:2:2 for ETT datasets, 7:1:2 for everything else.
    pub fn default_for(dataset_name: &str) -> Self {
        if dataset_name.to_ascii_uppercase().starts_with("ETT") {
            Self::new(0.6, 0.2, 0.2)
        } else {
            Self::new(0.7, 0.1, 0.2)
        }
    }
}

impl std::fmt::Display for SplitRatios {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{},{},{}", self.train, self.val, self.test)
    }
}

/// Train and validation lengths are `floor(ratio * T)`; test takes the rest.
pub fn chronological_split(steps: usize, ratios: SplitRatios) -> Result<ChronologicalSplit> {
    let parts = [ratios.train, ratios.val, ratios.test];
    if parts.iter().any(|r| !r.is_finite() || *r < 0.0) {
        return Err(Error::Split(format!("ratios must be non-negative, got {ratios}")));
    }
    let total: f64 = parts.iter().sum();
    if (total - 1.0).abs() > 1e-6 {
        return Err(Error::Split(format!("ratios must sum to 1, got {total}")));
    }
    // The small offset keeps products like 0.29 * 100 from flooring to 28.
    let len = |r: f64| (r * steps as f64 + 1e-9).floor() as usize;
    let train_len = len(ratios.train);
    let val_len = len(ratios.val);
    let test_len = steps.saturating_sub(train_len + val_len);
    if train_len == 0 || val_len == 0 || test_len == 0 {
        return Err(Error::Split(format!(
            "T={steps} with ratios {ratios} gives segment lengths {train_len}/{val_len}/{test_len}"
        )));
    }
    Ok(ChronologicalSplit {
        train: 0..train_len,
        val: train_len..train_len + val_len,
        test: train_len + val_len..steps,
    })
}
