//! Tile-by-feature table and its CSV form.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use super::extract::{FeatureVector, TileFlags, TileQc};
use crate::dataset::Label;
use crate::error::{Error, Result};
use crate::table::num;

const ID_COLUMNS: [&str; 3] = ["tile_id", "patient_id", "label"];
const QC_COLUMNS: [&str; 2] = ["qc_roi_fraction", "qc_gray_variance"];

#[derive(Debug, Clone, PartialEq)]
pub struct MatrixRow {
    pub tile_id: String,
    pub patient_id: String,
    pub label: Label,
    pub values: Vec<f64>,
    pub flags: TileFlags,
    pub qc: TileQc,
}

impl MatrixRow {
    pub fn from_vector(v: FeatureVector, patient_id: &str, label: Label) -> Self {
        Self {
            tile_id: v.tile_id,
            patient_id: patient_id.to_string(),
            label,
            values: v.values,
            flags: v.flags,
            qc: v.qc,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub names: Vec<String>,
    pub rows: Vec<MatrixRow>,
}

impl FeatureMatrix {
    pub fn new(names: Vec<String>) -> Self {
        Self {
            names,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: MatrixRow) -> Result<()> {
        if row.values.len() != self.names.len() {
            return Err(Error::LengthMismatch {
                expected: self.names.len(),
                got: row.values.len(),
            });
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_features(&self) -> usize {
        self.names.len()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r.values[j]).collect()
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn labels(&self) -> Vec<Label> {
        self.rows.iter().map(|r| r.label).collect()
    }

    pub fn row_index(&self, tile_id: &str) -> Option<usize> {
        self.rows.iter().position(|r| r.tile_id == tile_id)
    }

    /// Rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            names: self.names.clone(),
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
        }
    }

    /// Writes the table, preceded by `# <comment>` when given.
    pub fn write_csv(&self, path: &Path, comment: Option<&str>) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = std::io::BufWriter::new(file);
        if let Some(c) = comment {
            writeln!(out, "# {c}").map_err(|e| Error::io(path, e))?;
        }
        let mut w = csv::Writer::from_writer(out);
        let header = ID_COLUMNS
            .iter()
            .copied()
            .chain(self.names.iter().map(String::as_str))
            .chain(TileFlags::NAMES)
            .chain(QC_COLUMNS);
        w.write_record(header).map_err(|e| csv_error(path, e))?;
        for r in &self.rows {
            let mut rec: Vec<String> = vec![r.tile_id.clone(), r.patient_id.clone(), r.label.to_string()];
            rec.extend(r.values.iter().map(|&v| num(v)));
            rec.extend(r.flags.to_array().iter().map(|&b| u8::from(b).to_string()));
            rec.push(num(r.qc.roi_fraction));
            rec.push(num(r.qc.gray_variance));
            w.write_record(&rec).map_err(|e| csv_error(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    /// Reads a table written by [`write_csv`](Self::write_csv). Returns the
    /// leading comment (without `# `) if present.
    pub fn read_csv(path: &Path) -> Result<(Self, Option<String>)> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = BufReader::new(file);
        let mut first = String::new();
        reader.read_line(&mut first).map_err(|e| Error::io(path, e))?;
        let (comment, rest): (Option<String>, Box<dyn Read>) = match first.strip_prefix('#') {
            Some(c) => (Some(c.trim().to_string()), Box::new(reader)),
            None => (None, Box::new(std::io::Cursor::new(first.into_bytes()).chain(reader))),
        };
        let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(rest);
        let header: Vec<String> = r
            .headers()
            .map_err(|e| csv_error(path, e))?
            .iter()
            .map(str::to_string)
            .collect();
        let n_tail = TileFlags::NAMES.len() + QC_COLUMNS.len();
        if header.len() < ID_COLUMNS.len() + n_tail || header[..3] != ID_COLUMNS {
            return Err(Error::Parse {
                row: 1,
                message: "feature table header must start with tile_id,patient_id,label".into(),
            });
        }
        let tail_start = header.len() - n_tail;
        let tail: Vec<&str> = header[tail_start..].iter().map(String::as_str).collect();
        let expected_tail: Vec<&str> = TileFlags::NAMES.iter().chain(QC_COLUMNS.iter()).copied().collect();
        if tail != expected_tail {
            return Err(Error::Parse {
                row: 1,
                message: "feature table header is missing flag/qc columns".into(),
            });
        }
        let names = header[3..tail_start].to_vec();
        let mut m = Self::new(names);
        let row_offset = if comment.is_some() { 3 } else { 2 };
        for (i, rec) in r.records().enumerate() {
            let row = i + row_offset;
            let rec = rec.map_err(|e| csv_error(path, e))?;
            if rec.len() != header.len() {
                return Err(Error::Parse {
                    row,
                    message: format!("expected {} columns, got {}", header.len(), rec.len()),
                });
            }
            let parse = |s: &str| -> Result<f64> {
                s.parse::<f64>().map_err(|_| Error::Parse {
                    row,
                    message: format!("not a number: {s:?}"),
                })
            };
            let label: Label = rec[2].parse().map_err(|message| Error::Parse { row, message })?;
            let values = (3..tail_start).map(|j| parse(&rec[j])).collect::<Result<Vec<_>>>()?;
            let mut flags = [false; 6];
            for (k, f) in flags.iter_mut().enumerate() {
                *f = rec[tail_start + k] == *"1";
            }
            let qc0 = tail_start + TileFlags::NAMES.len();
            m.rows.push(MatrixRow {
                tile_id: rec[0].to_string(),
                patient_id: rec[1].to_string(),
                label,
                values,
                flags: TileFlags::from_array(flags),
                qc: TileQc {
                    roi_fraction: parse(&rec[qc0])?,
                    gray_variance: parse(&rec[qc0 + 1])?,
                },
            });
        }
        Ok((m, comment))
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::Parse {
        row: e.position().map(|p| p.line() as usize).unwrap_or(0),
        message: format!("{}: {e}", path.display()),
    }
}
