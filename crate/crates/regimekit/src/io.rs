//! CSV and JSON artifacts.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use regimekit_core::concepts::WindowClustering;
use regimekit_core::data::{GroundTruth, SeriesSet};
use regimekit_core::drift::{Forecast, Trajectory};
use regimekit_core::segmentation::WindowScoreSet;
use serde::Serialize;

use crate::error::IoError;

fn create(path: &Path) -> Result<BufWriter<File>, IoError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| IoError::file(path, e))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>, IoError> {
    Ok(csv::WriterBuilder::new().from_writer(create(path)?))
}

fn parse_cell(text: &str, row: usize, col: usize) -> Result<f64, IoError> {
    text.trim().parse::<f64>().map_err(|_| IoError::Parse {
        row,
        col,
        text: text.to_string(),
    })
}

/// Reads one series per column and one time step per row. Row and column
/// numbers in errors are 1-based positions in the file.
pub fn read_series<R: Read>(reader: R, has_header: bool) -> Result<SeriesSet, IoError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .flexible(true)
        .from_reader(reader);
    let names: Option<Vec<String>> = if has_header {
        Some(rdr.headers()?.iter().map(|h| h.trim().to_string()).collect())
    } else {
        None
    };
    let mut width = names.as_ref().map(Vec::len);
    let mut data: Vec<f64> = Vec::new();
    let mut rows = 0;
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(rows + 1, |p| p.line() as usize);
        let expected = *width.get_or_insert(record.len());
        if record.len() != expected {
            return Err(IoError::Ragged {
                row: line,
                expected,
                found: record.len(),
            });
        }
        for (c, cell) in record.iter().enumerate() {
            data.push(parse_cell(cell, line, c + 1)?);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(IoError::Empty);
    }
    let width = width.unwrap_or(0);
    let values = DMatrix::from_row_slice(rows, width, &data);
    let names = names.unwrap_or_else(|| (0..width).map(|i| format!("s{i}")).collect());
    Ok(SeriesSet::new(values, names)?)
}

pub fn load_csv(path: &Path, has_header: bool) -> Result<SeriesSet, IoError> {
    let file = File::open(path).map_err(|e| IoError::file(path, e))?;
    read_series(file, has_header)
}

/// Series as CSV with a header of series names.
pub fn write_series_csv(path: &Path, series: &SeriesSet) -> Result<(), IoError> {
    let mut w = csv_writer(path)?;
    w.write_record(series.names())?;
    write_rows(&mut w, series.values())?;
    w.flush().map_err(|e| IoError::file(path, e))
}

fn write_rows<W: Write>(w: &mut csv::Writer<W>, m: &DMatrix<f64>) -> Result<(), IoError> {
    for r in 0..m.nrows() {
        w.write_record(m.row(r).iter().map(|x| x.to_string()))?;
    }
    Ok(())
}

/// Matrix as headerless CSV.
pub fn write_matrix_csv(path: &Path, m: &DMatrix<f64>) -> Result<(), IoError> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(create(path)?);
    write_rows(&mut w, m)?;
    w.flush().map_err(|e| IoError::file(path, e))
}

/// Columns `series,segment,label`, segments 1-based.
pub fn write_ground_truth_csv(path: &Path, truth: &GroundTruth) -> Result<(), IoError> {
    let mut w = csv_writer(path)?;
    w.write_record(["series", "segment", "label"])?;
    for (i, row) in truth.labels.iter().enumerate() {
        for (s, label) in row.iter().enumerate() {
            w.write_record([i.to_string(), (s + 1).to_string(), label.to_string()])?;
        }
    }
    w.flush().map_err(|e| IoError::file(path, e))
}

/// Reads `series,segment,label` rows back into a ground truth.
pub fn read_ground_truth_csv(path: &Path, segment_len: usize) -> Result<GroundTruth, IoError> {
    let file = File::open(path).map_err(|e| IoError::file(path, e))?;
    let mut rdr = csv::Reader::from_reader(file);
    let mut entries: Vec<(usize, usize, u8)> = Vec::new();
    for (r, record) in rdr.records().enumerate() {
        let record = record?;
        let field = |c: usize| -> Result<usize, IoError> {
            let text = record.get(c).unwrap_or("");
            text.trim().parse().map_err(|_| IoError::Parse {
                row: r + 2,
                col: c + 1,
                text: text.to_string(),
            })
        };
        let (series, segment, label) = (field(0)?, field(1)?, field(2)?);
        if segment == 0 || label > u8::MAX as usize {
            return Err(IoError::Invalid(format!("row {}: bad segment or label", r + 2)));
        }
        entries.push((series, segment - 1, label as u8));
    }
    if entries.is_empty() {
        return Err(IoError::Empty);
    }
    let n = entries.iter().map(|e| e.0).max().unwrap_or(0) + 1;
    let s = entries.iter().map(|e| e.1).max().unwrap_or(0) + 1;
    let mut labels = vec![vec![0u8; s]; n];
    for (i, seg, l) in entries {
        labels[i][seg] = l;
    }
    Ok(GroundTruth {
        segment_len,
        labels,
    })
}

/// Columns `series,local,global` for one window.
pub fn write_labels_csv(path: &Path, clustering: &WindowClustering, mapping: &[usize]) -> Result<(), IoError> {
    let mut w = csv_writer(path)?;
    w.write_record(["series", "local", "global"])?;
    for (i, &l) in clustering.labels.iter().enumerate() {
        w.write_record([i.to_string(), l.to_string(), mapping[l].to_string()])?;
    }
    w.flush().map_err(|e| IoError::file(path, e))
}

/// Global labels (third column) of a labels CSV.
pub fn read_labels_csv(path: &Path) -> Result<Vec<usize>, IoError> {
    let file = File::open(path).map_err(|e| IoError::file(path, e))?;
    let mut rdr = csv::Reader::from_reader(file);
    let mut out = Vec::new();
    for (r, record) in rdr.records().enumerate() {
        let record = record?;
        let text = record.get(2).unwrap_or("");
        out.push(text.trim().parse().map_err(|_| IoError::Parse {
            row: r + 2,
            col: 3,
            text: text.to_string(),
        })?);
    }
    Ok(out)
}

/// Columns `w,ws,b,max_count`.
pub fn write_scores_csv(path: &Path, scores: &WindowScoreSet) -> Result<(), IoError> {
    let mut w = csv_writer(path)?;
    w.write_record(["w", "ws", "b", "max_count"])?;
    for e in &scores.entries {
        w.write_record([
            e.w.to_string(),
            e.ws.to_string(),
            e.b.to_string(),
            e.max_count().to_string(),
        ])?;
    }
    w.flush().map_err(|e| IoError::file(path, e))
}

/// Columns `iteration,value`, iterations 1-based.
pub fn write_trace_csv(path: &Path, trace: &[f64]) -> Result<(), IoError> {
    let mut w = csv_writer(path)?;
    w.write_record(["iteration", "value"])?;
    for (i, v) in trace.iter().enumerate() {
        w.write_record([(i + 1).to_string(), v.to_string()])?;
    }
    w.flush().map_err(|e| IoError::file(path, e))
}

/// One row per series, one column per window.
pub fn write_trajectories_csv(path: &Path, trajectories: &[Trajectory]) -> Result<(), IoError> {
    let mut w = csv_writer(path)?;
    let b = trajectories.first().map_or(0, |t| t.labels.len());
    let mut header = vec!["series".to_string()];
    header.extend((1..=b).map(|p| format!("w{p}")));
    w.write_record(&header)?;
    for t in trajectories {
        let mut row = vec![t.series_index.to_string()];
        row.extend(t.labels.iter().map(|l| l.to_string()));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| IoError::file(path, e))
}

/// Forecast values in the input layout: one column per series, one row
/// per step.
pub fn write_forecasts_csv(path: &Path, names: &[String], forecasts: &[Forecast]) -> Result<(), IoError> {
    let mut w = csv_writer(path)?;
    w.write_record(forecasts.iter().map(|f| names[f.series_index].as_str()))?;
    let steps = forecasts.first().map_or(0, |f| f.predicted_values.len());
    for s in 0..steps {
        w.write_record(forecasts.iter().map(|f| f.predicted_values[s].to_string()))?;
    }
    w.flush().map_err(|e| IoError::file(path, e))
}

/// Pretty-printed JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")
        .and_then(|_| out.flush())
        .map_err(|e| IoError::file(path, e))
}

/// Splits a CSV stream of rows into `w`-row segments.
pub struct SegmentReader<R: Read> {
    rdr: csv::Reader<R>,
    w: usize,
    width: Option<usize>,
    names: Option<Vec<String>>,
}

impl<R: Read> SegmentReader<R> {
    pub fn new(reader: R, w: usize, has_header: bool) -> Result<Self, IoError> {
        if w == 0 {
            return Err(IoError::Invalid("segment length must be >= 1".into()));
        }
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(has_header)
            .flexible(true)
            .from_reader(reader);
        let names = if has_header {
            Some(rdr.headers()?.iter().map(|h| h.trim().to_string()).collect::<Vec<_>>())
        } else {
            None
        };
        Ok(SegmentReader {
            rdr,
            w,
            width: names.as_ref().map(Vec::len),
            names,
        })
    }

    pub fn names(&self) -> Option<&[String]> {
        self.names.as_deref()
    }

    /// Series count, known after the header or the first row.
    pub fn width(&self) -> Option<usize> {
        self.width
    }

    /// The next full segment, `None` at a clean end of stream.
    pub fn next_segment(&mut self) -> Result<Option<DMatrix<f64>>, IoError> {
        let mut data: Vec<f64> = Vec::new();
        let mut rows = 0;
        let mut record = csv::StringRecord::new();
        while rows < self.w {
            if !self.rdr.read_record(&mut record)? {
                if rows == 0 {
                    return Ok(None);
                }
                return Err(IoError::TruncatedSegment {
                    offset: self.rdr.position().byte(),
                    rows,
                    expected: self.w,
                });
            }
            let line = record.position().map_or(0, |p| p.line() as usize);
            let expected = *self.width.get_or_insert(record.len());
            if record.len() != expected {
                return Err(IoError::Ragged {
                    row: line,
                    expected,
                    found: record.len(),
                });
            }
            for (c, cell) in record.iter().enumerate() {
                data.push(parse_cell(cell, line, c + 1)?);
            }
            rows += 1;
        }
        Ok(Some(DMatrix::from_row_slice(
            self.w,
            self.width.unwrap_or(0),
            &data,
        )))
    }
}
