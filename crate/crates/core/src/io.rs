//! File formats: CSV inputs, matrix and tensor outputs, JSON sidecars.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::marginals::{BinaryDataset, MarginalTensor, ReleaseMethod, TensorScale};
use crate::matrix::SymMatrix;
use crate::similarity::{SimilarityMode, UnitVectorSet};

fn csv_reader<R: Read>(input: R, header: bool) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(header)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(input)
}

fn record_line(record: &csv::StringRecord) -> usize {
    record.position().map_or(0, |p| p.line() as usize)
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn csv_err(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    parse_err(line, e.to_string())
}

/// One unit vector per row. Rows must already be normalised.
pub fn parse_unit_vectors<R: Read>(input: R, header: bool) -> Result<UnitVectorSet> {
    let mut rows = Vec::new();
    let mut lines = Vec::new();
    for record in csv_reader(input, header).records() {
        let record = record.map_err(csv_err)?;
        let line = record_line(&record);
        let row = record
            .iter()
            .enumerate()
            .map(|(col, field)| {
                field
                    .parse::<f64>()
                    .map_err(|_| parse_err(line, format!("column {}: `{field}` is not a number", col + 1)))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
        lines.push(line);
    }
    UnitVectorSet::new(rows).map_err(|e| match e {
        Error::InvalidRow { row, message } => parse_err(lines[row], message),
        other => other,
    })
}

pub fn read_unit_vectors(path: &Path, header: bool) -> Result<UnitVectorSet> {
    parse_unit_vectors(BufReader::new(File::open(path)?), header)
}

/// One record per row of 0/1 values. With a header, a column named `count`
/// holds each row's multiplicity; otherwise every row counts once.
pub fn parse_dataset<R: Read>(input: R, header: bool, sparsity: Option<usize>) -> Result<BinaryDataset> {
    let mut reader = csv_reader(input, header);
    let count_col = if header {
        let h = reader.headers().map_err(csv_err)?;
        h.iter().position(|name| name.eq_ignore_ascii_case("count"))
    } else {
        None
    };
    let mut rows = Vec::new();
    let mut lines = Vec::new();
    let mut width = None;
    for record in reader.records() {
        let record = record.map_err(csv_err)?;
        let line = record_line(&record);
        let mut bits = Vec::with_capacity(record.len());
        let mut count = 1u64;
        for (col, field) in record.iter().enumerate() {
            if Some(col) == count_col {
                count = field
                    .parse()
                    .map_err(|_| parse_err(line, format!("count `{field}` is not a nonnegative integer")))?;
            } else {
                match field {
                    "0" => bits.push(0u8),
                    "1" => bits.push(1u8),
                    _ => return Err(parse_err(line, format!("column {}: `{field}` is not 0 or 1", col + 1))),
                }
            }
        }
        match width {
            None => width = Some(bits.len()),
            Some(w) if w != bits.len() => {
                return Err(parse_err(line, format!("expected {w} features, found {}", bits.len())))
            }
            _ => {}
        }
        rows.push((bits, count));
        lines.push(line);
    }
    let n = width.ok_or_else(|| Error::InvalidInput("dataset has no rows".into()))?;
    BinaryDataset::from_rows(n, rows, sparsity).map_err(|e| match e {
        Error::InvalidRow { row, message } => parse_err(lines[row], message),
        Error::NotSparse { record, nonzeros, sparsity } => parse_err(
            lines[record],
            format!("{nonzeros} nonzeros exceed the declared sparsity {sparsity}"),
        ),
        other => other,
    })
}

pub fn read_dataset(path: &Path, header: bool, sparsity: Option<usize>) -> Result<BinaryDataset> {
    parse_dataset(BufReader::new(File::open(path)?), header, sparsity)
}

/// Row-major CSV with shortest round-trip float formatting.
pub fn write_matrix_csv<W: Write>(out: W, m: &SymMatrix) -> Result<()> {
    let mut out = BufWriter::new(out);
    for row in m.to_rows() {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(out, "{}", line.join(","))?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_matrix_csv(path: &Path) -> Result<SymMatrix> {
    let mut rows = Vec::new();
    for record in csv_reader(BufReader::new(File::open(path)?), false).records() {
        let record = record.map_err(csv_err)?;
        let line = record_line(&record);
        rows.push(
            record
                .iter()
                .map(|f| f.parse::<f64>().map_err(|_| parse_err(line, format!("`{f}` is not a number"))))
                .collect::<Result<Vec<f64>>>()?,
        );
    }
    SymMatrix::from_rows(rows)
}

/// Flat little-endian f64 values in lexicographic index order.
pub fn write_tensor_bin<W: Write>(out: W, tensor: &MarginalTensor) -> Result<()> {
    let mut out = BufWriter::new(out);
    for v in &tensor.values {
        out.write_all(&v.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_tensor_bin(path: &Path, order: usize, side: usize) -> Result<MarginalTensor> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    let mut tensor = MarginalTensor::zeros(order, side)?;
    if bytes.len() != tensor.len() * 8 {
        return Err(Error::ShapeMismatch(format!(
            "{} bytes cannot hold {} f64 values",
            bytes.len(),
            tensor.len()
        )));
    }
    for (v, chunk) in tensor.values.iter_mut().zip(bytes.chunks_exact(8)) {
        *v = f64::from_le_bytes(chunk.try_into().unwrap());
    }
    Ok(tensor)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorSidecar {
    pub order: usize,
    pub side: usize,
    /// Scale of the stored values; releases are always written in raw counts.
    pub scale: TensorScale,
    pub method: ReleaseMethod,
    pub epsilon: f64,
    pub delta: f64,
    /// Sensitivity in the units the noise was added in.
    pub sensitivity: f64,
    pub sigma: f64,
    pub sigma_raw: f64,
    pub seed: u64,
    pub noise_draws: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilaritySidecar {
    pub count: usize,
    pub dim: usize,
    pub mode: SimilarityMode,
    pub epsilon: f64,
    pub delta: f64,
    pub sensitivity: f64,
    pub sigma: f64,
    pub seed: u64,
    pub iterations: usize,
    pub polish_iterations: Option<usize>,
    pub final_residuals: Vec<f64>,
    pub noise_draws: Option<usize>,
}

/// Pretty JSON with a trailing newline.
pub fn write_json<W: Write, T: Serialize>(out: W, value: &T) -> Result<()> {
    let mut out = BufWriter::new(out);
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}
