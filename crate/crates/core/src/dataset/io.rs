use std::path::Path;

use super::TimeSeriesDataset;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Reads `index,<state columns...>,<control columns...>` with a header row.
pub fn load_csv(path: impl AsRef<Path>, d_s: usize, a_s: usize) -> Result<TimeSeriesDataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(file);
    let n = d_s + a_s;
    let header = reader.headers()?.clone();
    if header.len() != n + 1 {
        return Err(Error::Shape(format!(
            "header has {} columns, expected index plus {n} data columns",
            header.len()
        )));
    }
    let names: Vec<String> = header.iter().skip(1).map(str::to_owned).collect();
    let mut data = Vec::new();
    let mut rows = 0;
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let row = i + 1;
        if record.len() != n + 1 {
            return Err(Error::Parse {
                row,
                column: "*".into(),
                message: format!("{} fields, expected {}", record.len(), n + 1),
            });
        }
        for (j, cell) in record.iter().enumerate().skip(1) {
            let column = names[j - 1].clone();
            let cell = cell.trim();
            if cell.is_empty() {
                return Err(Error::Parse {
                    row,
                    column,
                    message: "empty cell".into(),
                });
            }
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                row,
                column: column.clone(),
                message: format!("`{cell}` is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row,
                    column,
                    message: format!("`{cell}` is not finite"),
                });
            }
            data.push(v);
        }
        rows += 1;
    }
    TimeSeriesDataset::with_names(Matrix::from_vec(rows, n, data)?, d_s, a_s, names)
}

/// Writes the dataset with shortest round-trip decimal formatting and LF line endings.
pub fn write_csv(ds: &TimeSeriesDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(std::io::BufWriter::new(file));
    let mut header = vec!["index".to_string()];
    header.extend(ds.names().iter().cloned());
    writer.write_record(&header)?;
    let mut record = Vec::with_capacity(ds.width() + 1);
    for t in 0..ds.len() {
        record.clear();
        record.push(t.to_string());
        record.extend(ds.row(t).iter().map(|v| v.to_string()));
        writer.write_record(&record)?;
    }
    writer.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}
