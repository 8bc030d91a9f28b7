//! Channel files, the anomaly manifest and min-max normalization.
//!
//! A data directory is laid out as
//!
//! ```text
//! <dir>/train/<channel>.csv | <channel>.bin
//! <dir>/test/<channel>.csv  | <channel>.bin
//! <dir>/labeled_anomalies.csv
//! ```
//!
//! CSV matrices carry a header row naming the features and one row per
//! timestep. The binary matrix format is a 16-byte header
//! (`b"F64M"`, rows `u32` LE, cols `u32` LE, 4 reserved zero bytes)
//! followed by `rows * cols` row-major `f64` LE values.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use log::warn;

use crate::error::{Error, Result};
use crate::evaluation::{labels_from_segments, AnomalySegment};
use crate::numerics::Tensor;
use crate::thresholds::format_f64;

pub const MATRIX_MAGIC: [u8; 4] = *b"F64M";
pub const MANIFEST_FILE: &str = "labeled_anomalies.csv";

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::file(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::file(path, e))
}

/// Reads a header-plus-rows CSV matrix.
pub fn read_csv_matrix(path: &Path) -> Result<Tensor> {
    read_csv_matrix_from(open(path)?, path)
}

pub fn read_csv_matrix_from<R: Read>(input: R, path: &Path) -> Result<Tensor> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(input);
    let cols = rdr.headers()?.len();
    let mut data = Vec::new();
    let mut rows = 0;
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = rec.position().map_or(i + 2, |p| p.line() as usize);
        if rec.len() != cols {
            return Err(Error::RaggedRow {
                path: path.to_path_buf(),
                line,
                expected: cols,
                found: rec.len(),
            });
        }
        for (c, cell) in rec.iter().enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| Error::NonNumeric {
                path: path.to_path_buf(),
                line,
                column: c + 1,
                value: cell.to_string(),
            })?;
            data.push(v);
        }
        rows += 1;
    }
    Tensor::new(vec![rows, cols], data)
}

/// Writes a CSV matrix with header `f0,f1,...` (or the given names).
pub fn write_csv_matrix<W: Write>(out: W, x: &Tensor, names: Option<&[String]>) -> Result<()> {
    let (rows, cols) = x.dims2("write_csv_matrix")?;
    let mut w = csv::Writer::from_writer(out);
    match names {
        Some(n) if n.len() == cols => w.write_record(n)?,
        Some(n) => return Err(Error::dim("write_csv_matrix", format!("{} names for {cols} columns", n.len()))),
        None => w.write_record((0..cols).map(|c| format!("f{c}")))?,
    }
    for r in 0..rows {
        w.write_record(x.row(r).iter().map(|&v| format_f64(v)))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_binary_matrix(path: &Path) -> Result<Tensor> {
    read_binary_matrix_from(open(path)?, path)
}

pub fn read_binary_matrix_from<R: Read>(mut input: R, path: &Path) -> Result<Tensor> {
    let malformed = |msg: String| Error::Malformed {
        path: path.to_path_buf(),
        msg,
    };
    let mut header = [0u8; 16];
    input
        .read_exact(&mut header)
        .map_err(|_| malformed("truncated 16-byte header".into()))?;
    if header[..4] != MATRIX_MAGIC {
        return Err(malformed(format!("bad magic {:?}", &header[..4])));
    }
    let rows = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes).map_err(|e| Error::file(path, e))?;
    if bytes.len() != rows * cols * 8 {
        return Err(malformed(format!(
            "{rows}x{cols} header needs {} payload bytes, found {}",
            rows * cols * 8,
            bytes.len()
        )));
    }
    let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Tensor::new(vec![rows, cols], data)
}

pub fn write_binary_matrix<W: Write>(mut out: W, x: &Tensor) -> Result<()> {
    let (rows, cols) = x.dims2("write_binary_matrix")?;
    let as_u32 = |v: usize| u32::try_from(v).map_err(|_| Error::Parameter(format!("{v} does not fit the u32 header")));
    out.write_all(&MATRIX_MAGIC)?;
    out.write_all(&as_u32(rows)?.to_le_bytes())?;
    out.write_all(&as_u32(cols)?.to_le_bytes())?;
    out.write_all(&[0; 4])?;
    for v in x.data() {
        out.write_all(&v.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

/// Loads a matrix by extension: `.bin` is binary, anything else CSV.
pub fn read_matrix(path: &Path) -> Result<Tensor> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("bin") => read_binary_matrix(path),
        _ => read_csv_matrix(path),
    }
}

pub fn write_matrix(path: &Path, x: &Tensor) -> Result<()> {
    let out = create(path)?;
    match path.extension().and_then(|e| e.to_str()) {
        Some("bin") => write_binary_matrix(out, x),
        _ => write_csv_matrix(out, x, None),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub channel: String,
    pub spacecraft: String,
    pub segments: Vec<AnomalySegment>,
    pub num_values: Option<usize>,
}

/// Parses `[[a, b], [c, d]]` into inclusive segments.
pub fn parse_anomaly_sequences(raw: &str) -> std::result::Result<Vec<AnomalySegment>, String> {
    let numbers: Vec<usize> = raw
        .split(|c: char| c == '[' || c == ']' || c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| t.parse().map_err(|_| format!("bad index {t:?}")))
        .collect::<std::result::Result<_, _>>()?;
    if numbers.len() % 2 != 0 {
        return Err(format!("odd number of indices in {raw:?}"));
    }
    numbers
        .chunks_exact(2)
        .map(|p| AnomalySegment::new(p[0], p[1]).map_err(|e| e.to_string()))
        .collect()
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    read_manifest_from(open(path)?, path)
}

pub fn read_manifest_from<R: Read>(input: R, path: &Path) -> Result<Vec<ManifestEntry>> {
    let mut rdr = csv::Reader::from_reader(input);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let malformed = |msg: String| Error::Malformed {
        path: path.to_path_buf(),
        msg,
    };
    let (Some(ci), Some(ai)) = (col("chan_id"), col("anomaly_sequences")) else {
        return Err(malformed("manifest needs `chan_id` and `anomaly_sequences` columns".into()));
    };
    let si = col("spacecraft");
    let ni = col("num_values");
    let mut entries = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let segments = parse_anomaly_sequences(rec.get(ai).unwrap_or("")).map_err(|m| malformed(format!("line {line}: {m}")))?;
        let num_values = match ni.and_then(|n| rec.get(n)).map(str::trim) {
            None | Some("") => None,
            Some(v) => Some(v.parse().map_err(|_| Error::NonNumeric {
                path: path.to_path_buf(),
                line,
                column: ni.unwrap() + 1,
                value: v.to_string(),
            })?),
        };
        entries.push(ManifestEntry {
            channel: rec.get(ci).unwrap_or("").trim().to_string(),
            spacecraft: si.and_then(|s| rec.get(s)).unwrap_or("").trim().to_string(),
            segments,
            num_values,
        });
    }
    Ok(entries)
}

pub fn write_manifest<W: Write>(out: W, entries: &[ManifestEntry]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["chan_id", "spacecraft", "anomaly_sequences", "num_values"])?;
    for e in entries {
        let seqs = e.segments.iter().map(|s| format!("[{}, {}]", s.start, s.end)).collect::<Vec<_>>().join(", ");
        w.write_record([
            e.channel.clone(),
            e.spacecraft.clone(),
            format!("[{seqs}]"),
            e.num_values.map(|n| n.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Min-max statistics from training rows, per feature or one global pair.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizationStats {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    pub global: bool,
}

impl NormalizationStats {
    pub fn fit(train: &Tensor, global: bool) -> Result<Self> {
        let (rows, cols) = train.dims2("normalization")?;
        if rows == 0 {
            return Err(Error::EmptyDataset { rows, window: 0 });
        }
        let mut min = vec![f64::INFINITY; cols];
        let mut max = vec![f64::NEG_INFINITY; cols];
        for r in 0..rows {
            for (c, &v) in train.row(r).iter().enumerate() {
                min[c] = min[c].min(v);
                max[c] = max[c].max(v);
            }
        }
        if global {
            let lo = min.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = max.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            min.fill(lo);
            max.fill(hi);
        }
        Ok(Self { min, max, global })
    }

    pub fn features(&self) -> usize {
        self.min.len()
    }

    /// `(x - min) / (max - min)` per feature; constant features map to 0.
    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let (rows, cols) = x.dims2("normalize")?;
        if cols != self.features() {
            return Err(Error::dim("normalize", format!("stats for {} features, data has {cols}", self.features())));
        }
        for c in (0..cols).filter(|&c| self.max[c] == self.min[c]) {
            warn!("feature {c} is constant in the training data; it normalizes to 0");
        }
        let mut out = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for (c, &v) in x.row(r).iter().enumerate() {
                let span = self.max[c] - self.min[c];
                out.push(if span == 0.0 { 0.0 } else { (v - self.min[c]) / span });
            }
        }
        Tensor::new(vec![rows, cols], out)
    }
}

/// Convenience wrapper: `stats.apply(x)`.
pub fn normalize(x: &Tensor, stats: &NormalizationStats) -> Result<Tensor> {
    stats.apply(x)
}

/// One telemetry channel with its test-aligned anomaly segments.
#[derive(Clone, Debug)]
pub struct ChannelDataset {
    pub id: String,
    pub train: Tensor,
    pub test: Tensor,
    pub segments: Vec<AnomalySegment>,
    pub stats: NormalizationStats,
}

impl ChannelDataset {
    pub fn new(id: String, train: Tensor, test: Tensor, segments: Vec<AnomalySegment>, global_minmax: bool) -> Result<Self> {
        let (_, m_train) = train.dims2("channel")?;
        let (n_test, m_test) = test.dims2("channel")?;
        if m_train != m_test {
            return Err(Error::dim("channel", format!("{id}: train has {m_train} features, test has {m_test}")));
        }
        if let Some(s) = segments.iter().find(|s| s.end >= n_test) {
            return Err(Error::SegmentOutOfRange {
                start: s.start,
                end: s.end,
                len: n_test,
            });
        }
        let stats = NormalizationStats::fit(&train, global_minmax)?;
        Ok(Self {
            id,
            train,
            test,
            segments,
            stats,
        })
    }

    pub fn features(&self) -> usize {
        self.train.cols()
    }

    pub fn normalized_train(&self) -> Result<Tensor> {
        self.stats.apply(&self.train)
    }

    pub fn normalized_test(&self) -> Result<Tensor> {
        self.stats.apply(&self.test)
    }

    pub fn test_labels(&self) -> Result<Vec<bool>> {
        labels_from_segments(&self.segments, self.test.rows())
    }
}

pub fn load_channel(train: &Path, test: &Path, manifest: &Path, channel: &str, global_minmax: bool) -> Result<ChannelDataset> {
    let entry = read_manifest(manifest)?
        .into_iter()
        .find(|e| e.channel == channel)
        .ok_or_else(|| Error::MissingChannel(channel.to_string()))?;
    ChannelDataset::new(channel.to_string(), read_matrix(train)?, read_matrix(test)?, entry.segments, global_minmax)
}

/// Locates `<dir>/<split>/<channel>.{csv,bin}`.
pub fn channel_file(dir: &Path, split: &str, channel: &str) -> Result<PathBuf> {
    for ext in ["csv", "bin"] {
        let p = dir.join(split).join(format!("{channel}.{ext}"));
        if p.is_file() {
            return Ok(p);
        }
    }
    Err(Error::Malformed {
        path: dir.join(split),
        msg: format!("no {channel}.csv or {channel}.bin"),
    })
}

/// Channels with a training file in `<dir>/train`, sorted by id.
pub fn list_channels(dir: &Path) -> Result<Vec<String>> {
    let train = dir.join("train");
    let mut ids: Vec<String> = std::fs::read_dir(&train)
        .map_err(|e| Error::file(&train, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("csv" | "bin")))
        .filter_map(|p| p.file_stem().and_then(|s| s.to_str()).map(str::to_string))
        .collect();
    ids.sort();
    ids.dedup();
    Ok(ids)
}

pub fn load_channel_from_dir(dir: &Path, channel: &str, global_minmax: bool) -> Result<ChannelDataset> {
    load_channel(
        &channel_file(dir, "train", channel)?,
        &channel_file(dir, "test", channel)?,
        &dir.join(MANIFEST_FILE),
        channel,
        global_minmax,
    )
}

/// Writes a channel back out in the directory layout (CSV matrices).
pub fn write_channel_dir(dir: &Path, channels: &[(ChannelDataset, String)]) -> Result<()> {
    for split in ["train", "test"] {
        std::fs::create_dir_all(dir.join(split)).map_err(|e| Error::file(&dir.join(split), e))?;
    }
    let mut entries = Vec::new();
    for (ds, spacecraft) in channels {
        write_matrix(&dir.join("train").join(format!("{}.csv", ds.id)), &ds.train)?;
        write_matrix(&dir.join("test").join(format!("{}.csv", ds.id)), &ds.test)?;
        entries.push(ManifestEntry {
            channel: ds.id.clone(),
            spacecraft: spacecraft.clone(),
            segments: ds.segments.clone(),
            num_values: Some(ds.test.rows()),
        });
    }
    write_manifest(create(&dir.join(MANIFEST_FILE))?, &entries)
}
