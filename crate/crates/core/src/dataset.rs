//! Point sets and their CSV interchange format (one sample per line, `d`
//! comma-separated float64 columns, no header).

use std::path::Path;

use ndarray::{Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};

/// A set of `d`-dimensional points stored row-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch(Array2<f64>);

impl SampleBatch {
    pub fn new(points: Array2<f64>) -> Self {
        Self(points)
    }

    pub fn zeros(n: usize, dim: usize) -> Self {
        Self(Array2::zeros((n, dim)))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        let mut out = Array2::zeros((rows.len(), dim));
        for (i, r) in rows.iter().enumerate() {
            if r.len() != dim {
                return Err(Error::Shape(format!("row {i} has {} columns, expected {dim}", r.len())));
            }
            out.row_mut(i).assign(&ArrayView1::from(r.as_slice()));
        }
        Ok(Self(out))
    }

    pub fn len(&self) -> usize {
        self.0.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.0.ncols()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.0.row(i)
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    pub fn points(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }

    /// Values of one coordinate across all samples.
    pub fn component(&self, c: usize) -> Vec<f64> {
        self.0.column(c).to_vec()
    }

    pub fn all_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| Error::format(path, e.to_string()))?;
        let mut rows = Vec::new();
        for (line, record) in reader.records().enumerate() {
            let record = record.map_err(|e| Error::format(path, e.to_string()))?;
            let row = record
                .iter()
                .map(|f| {
                    f.parse::<f64>().map_err(|e| {
                        Error::format(path, format!("line {}: `{f}`: {e}", line + 1))
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            rows.push(row);
        }
        if rows.is_empty() {
            return Err(Error::format(path, "no samples"));
        }
        Self::from_rows(&rows).map_err(|e| Error::format(path, e.to_string()))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut writer = csv::WriterBuilder::new()
            .has_headers(false)
            .from_path(path)
            .map_err(|e| Error::format(path, e.to_string()))?;
        for row in self.0.rows() {
            writer
                .write_record(row.iter().map(|v| v.to_string()))
                .map_err(|e| Error::format(path, e.to_string()))?;
        }
        writer.flush().map_err(|e| Error::io(path, e))
    }
}
