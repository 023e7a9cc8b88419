//! Tabular datasets with missing cells, and their CSV form.
//!
//! CSV layout: a header row with variable names, one record per row, an empty
//! cell marks a missing value. A column named `label` (anywhere in the header)
//! carries the 1-based ground-truth component; it is not a variable.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const LABEL_COLUMN: &str = "label";

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    names: Vec<String>,
    rows: usize,
    cells: Vec<Option<f64>>,
    labels: Option<Vec<usize>>,
}

impl Dataset {
    /// `cells` is row-major with `names.len()` columns. Labels are 0-based.
    pub fn new(
        names: Vec<String>,
        cells: Vec<Option<f64>>,
        labels: Option<Vec<usize>>,
    ) -> Result<Self> {
        let cols = names.len();
        if cols == 0 {
            return Err(Error::InvalidArgument("dataset has no variables".into()));
        }
        if cells.len() % cols != 0 {
            return Err(Error::DimensionMismatch(format!(
                "{} cells do not fill rows of {cols} variables",
                cells.len()
            )));
        }
        let rows = cells.len() / cols;
        if rows == 0 {
            return Err(Error::InvalidArgument("dataset has no records".into()));
        }
        if let Some(v) = cells.iter().flatten().find(|v| !v.is_finite()) {
            return Err(Error::InvalidValue(format!("non-finite cell {v}")));
        }
        if let Some(l) = &labels {
            if l.len() != rows {
                return Err(Error::LengthMismatch {
                    left: l.len(),
                    right: rows,
                });
            }
        }
        Ok(Self {
            names,
            rows,
            cells,
            labels,
        })
    }

    /// Complete dataset from row vectors, variables named `x1..xN`.
    pub fn from_rows(rows: &[Vec<f64>], labels: Option<Vec<usize>>) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::DimensionMismatch("ragged rows".into()));
        }
        let names = default_names(cols);
        let cells = rows.iter().flatten().map(|v| Some(*v)).collect();
        Self::new(names, cells, labels)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn num_vars(&self) -> usize {
        self.names.len()
    }

    pub fn num_rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn get(&self, row: usize, var: usize) -> Option<f64> {
        self.cells[row * self.names.len() + var]
    }

    pub fn row(&self, row: usize) -> &[Option<f64>] {
        let n = self.names.len();
        &self.cells[row * n..(row + 1) * n]
    }

    /// 0-based ground-truth labels, when present.
    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    /// Observed values of one variable, in record order.
    pub fn observed(&self, var: usize) -> Vec<f64> {
        (0..self.rows).filter_map(|m| self.get(m, var)).collect()
    }

    pub fn observed_fraction(&self) -> f64 {
        self.cells.iter().filter(|c| c.is_some()).count() as f64 / self.cells.len() as f64
    }

    /// Rows with every variable observed.
    pub fn complete_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows)
            .filter_map(|m| self.row(m).iter().copied().collect::<Option<Vec<f64>>>())
            .collect()
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
        let label_col = header.iter().position(|h| h == LABEL_COLUMN);
        let names: Vec<String> = header
            .iter()
            .enumerate()
            .filter(|(i, _)| Some(*i) != label_col)
            .map(|(_, h)| h.clone())
            .collect();
        let mut cells = Vec::new();
        let mut labels = label_col.map(|_| Vec::new());
        for (line, record) in rdr.records().enumerate() {
            let record = record?;
            if record.len() != header.len() {
                return Err(Error::DimensionMismatch(format!(
                    "record {} has {} fields, header has {}",
                    line + 1,
                    record.len(),
                    header.len()
                )));
            }
            for (i, field) in record.iter().enumerate() {
                let field = field.trim();
                if Some(i) == label_col {
                    let label: usize = field.parse().map_err(|_| {
                        Error::InvalidValue(format!("label `{field}` on record {}", line + 1))
                    })?;
                    if label == 0 {
                        return Err(Error::InvalidValue(format!(
                            "labels are 1-based, found 0 on record {}",
                            line + 1
                        )));
                    }
                    labels.as_mut().unwrap().push(label - 1);
                } else if field.is_empty() {
                    cells.push(None);
                } else {
                    let v: f64 = field.parse().map_err(|_| {
                        Error::InvalidValue(format!("cell `{field}` on record {}", line + 1))
                    })?;
                    cells.push(Some(v));
                }
            }
        }
        Self::new(names, cells, labels)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header: Vec<&str> = self.names.iter().map(String::as_str).collect();
        if self.labels.is_some() {
            header.push(LABEL_COLUMN);
        }
        wtr.write_record(&header)?;
        let mut fields = Vec::with_capacity(header.len());
        for m in 0..self.rows {
            fields.clear();
            fields.extend(
                self.row(m)
                    .iter()
                    .map(|c| c.map(|v| v.to_string()).unwrap_or_default()),
            );
            if let Some(l) = &self.labels {
                fields.push((l[m] + 1).to_string());
            }
            wtr.write_record(&fields)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::io::BufWriter::new(std::fs::File::create(path)?))
    }
}

pub fn default_names(n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("x{i}")).collect()
}

/// Reads a one-column label file (header `label`, 1-based values) into 0-based labels.
pub fn read_labels<R: Read>(reader: R) -> Result<Vec<usize>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let mut out = Vec::new();
    for (line, record) in rdr.records().enumerate() {
        let record = record?;
        let field = record.get(0).unwrap_or("").trim();
        let label: usize = field
            .parse()
            .map_err(|_| Error::InvalidValue(format!("label `{field}` on line {}", line + 2)))?;
        if label == 0 {
            return Err(Error::InvalidValue("labels are 1-based".into()));
        }
        out.push(label - 1);
    }
    Ok(out)
}

/// Writes 0-based labels as a 1-based one-column CSV.
pub fn write_labels<W: Write>(writer: W, labels: &[usize]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record([LABEL_COLUMN])?;
    for l in labels {
        wtr.write_record([(l + 1).to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_with_missing_and_labels() {
        let text = "a,b,label,c\n1.5,,2,3\n-2,4e-1,1,\n";
        let ds = Dataset::read_csv(text.as_bytes()).unwrap();
        assert_eq!(ds.names(), ["a", "b", "c"]);
        assert_eq!(ds.num_rows(), 2);
        assert_eq!(ds.get(0, 1), None);
        assert_eq!(ds.get(1, 1), Some(0.4));
        assert_eq!(ds.labels(), Some(&[1, 0][..]));
        let mut out = Vec::new();
        ds.write_csv(&mut out).unwrap();
        let back = Dataset::read_csv(out.as_slice()).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn rejects_bad_cells() {
        assert!(Dataset::read_csv("a,b\n1,x\n".as_bytes()).is_err());
        assert!(Dataset::read_csv("a,label\n1,0\n".as_bytes()).is_err());
        assert!(Dataset::read_csv("a,b\n".as_bytes()).is_err());
    }

    #[test]
    fn label_file_round_trip() {
        let mut buf = Vec::new();
        write_labels(&mut buf, &[0, 2, 1]).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "label\n1\n3\n2\n");
        assert_eq!(read_labels(buf.as_slice()).unwrap(), vec![0, 2, 1]);
    }
}
