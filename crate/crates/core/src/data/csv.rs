//! CSV dataset format: header `x0,...,x{p-1},label[,c0,...,c{C-1}]`, one
//! example per row.

use std::io::{Read, Write};

use super::LabeledDataset;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

fn parse_err(line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        location: format!("line {line}"),
        message: message.into(),
    }
}

/// Reads a dataset. The class count comes from the count columns when present,
/// otherwise from `num_classes` or, failing that, `max label + 1` (at least 2).
pub fn read_csv<R: Read>(reader: R, name: &str, num_classes: Option<usize>) -> Result<LabeledDataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = rdr.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    let label_col = header
        .iter()
        .position(|h| h == "label")
        .ok_or_else(|| parse_err(1, "missing `label` column"))?;
    for (j, h) in header.iter().take(label_col).enumerate() {
        if h != format!("x{j}") {
            return Err(parse_err(1, format!("expected column x{j}, found `{h}`")));
        }
    }
    let count_cols = header.len() - label_col - 1;
    for (j, h) in header.iter().skip(label_col + 1).enumerate() {
        if h != format!("c{j}") {
            return Err(parse_err(1, format!("expected column c{j}, found `{h}`")));
        }
    }

    let p = label_col;
    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut counts = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let line = i as u64 + 2;
        let record = record.map_err(|e| parse_err(line, e.to_string()))?;
        if record.len() != header.len() {
            return Err(parse_err(
                line,
                format!("expected {} fields, found {}", header.len(), record.len()),
            ));
        }
        for field in record.iter().take(p) {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| parse_err(line, format!("bad feature `{field}`")))?;
            if !v.is_finite() {
                return Err(parse_err(line, "non-finite feature"));
            }
            features.push(v);
        }
        let raw = &record[label_col];
        labels.push(
            raw.trim()
                .parse::<usize>()
                .map_err(|_| parse_err(line, format!("bad label `{raw}`")))?,
        );
        for field in record.iter().skip(label_col + 1) {
            let c: u64 = field
                .trim()
                .parse()
                .map_err(|_| parse_err(line, format!("bad count `{field}`")))?;
            counts.push(c as f64);
        }
    }
    let n = labels.len();
    let classes = if count_cols > 0 {
        count_cols
    } else {
        num_classes.unwrap_or_else(|| labels.iter().max().map_or(2, |m| (m + 1).max(2)))
    };
    if let Some((i, y)) = labels.iter().enumerate().find(|(_, &y)| y >= classes) {
        return Err(parse_err(i as u64 + 2, format!("label {y} outside [0, {classes})")));
    }
    let mut ds = LabeledDataset::new(name, Matrix::from_vec(n, p, features)?, labels, classes)?;
    if count_cols > 0 {
        let counts = Matrix::from_vec(n, count_cols, counts)?;
        if let Some(i) = counts.row_iter().position(|r| r.iter().sum::<f64>() < 1.0) {
            return Err(parse_err(i as u64 + 2, "counts sum to zero"));
        }
        ds = ds.with_counts(counts)?;
    }
    Ok(ds)
}

pub fn write_csv<W: Write>(writer: W, dataset: &LabeledDataset) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let p = dataset.dim();
    let mut header: Vec<String> = (0..p).map(|j| format!("x{j}")).collect();
    header.push("label".into());
    if dataset.counts.is_some() {
        header.extend((0..dataset.num_classes).map(|c| format!("c{c}")));
    }
    let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    wtr.write_record(&header).map_err(csv_err)?;
    for i in 0..dataset.len() {
        let mut row: Vec<String> = dataset.features.row(i).iter().map(|v| format!("{v:?}")).collect();
        row.push(dataset.labels[i].to_string());
        if let Some(c) = &dataset.counts {
            row.extend(c.row(i).iter().map(|v| format!("{}", *v as u64)));
        }
        wtr.write_record(&row).map_err(csv_err)?;
    }
    wtr.flush()?;
    Ok(())
}
