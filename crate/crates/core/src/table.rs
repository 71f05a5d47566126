//! Plain-text point tables.
//!
//! Comma-separated with a mandatory header row. Three layouts share the
//! format: point clouds (`label,w,x_1..x_d`), labeled datasets
//! (`label,x_1..x_d`) and unlabeled samples (`x_1..x_d`).

use std::io::Read;

use crate::error::{Error, Result};
use crate::pointcloud::LabeledPointCloud;

/// 17 significant digits, enough to round-trip any `f64`.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledRow {
    pub label: usize,
    pub weight: Option<f64>,
    pub coords: Vec<f64>,
}

/// A header whose first cell parses as a number is taken to be a data row.
fn check_header(header: &csv::StringRecord) -> Result<usize> {
    if header.iter().next().is_some_and(|c| c.parse::<f64>().is_ok()) {
        return Err(Error::Table {
            line: 1,
            message: "missing header row".into(),
        });
    }
    Ok(header.len())
}

pub fn read_labeled_table<R: Read>(reader: R, weighted: bool) -> Result<Vec<LabeledRow>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header_len = check_header(rdr.headers()?)?;
    let leading = if weighted { 2 } else { 1 };
    if header_len <= leading {
        return Err(Error::Table {
            line: 1,
            message: format!("header needs at least {} columns", leading + 1),
        });
    }
    let mut rows = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        let line = i + 2;
        let field = |j: usize| -> Result<f64> {
            record[j].parse::<f64>().map_err(|e| Error::Table {
                line,
                message: format!("column {}: {e}", j + 1),
            })
        };
        let label = record[0].parse::<usize>().map_err(|e| Error::Table {
            line,
            message: format!("label: {e}"),
        })?;
        let weight = if weighted { Some(field(1)?) } else { None };
        let coords = (leading..record.len()).map(field).collect::<Result<Vec<_>>>()?;
        rows.push(LabeledRow {
            label,
            weight,
            coords,
        });
    }
    Ok(rows)
}

pub fn read_point_table<R: Read>(reader: R) -> Result<Vec<Vec<f64>>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    check_header(rdr.headers()?)?;
    let mut rows = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        let row = record
            .iter()
            .enumerate()
            .map(|(j, v)| {
                v.parse::<f64>().map_err(|e| Error::Table {
                    line: i + 2,
                    message: format!("column {}: {e}", j + 1),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok(rows)
}

fn coord_header(dim: usize) -> impl Iterator<Item = String> {
    (1..=dim).map(|i| format!("x_{i}"))
}

fn join(fields: impl Iterator<Item = String>) -> String {
    fields.collect::<Vec<_>>().join(",")
}

pub fn write_cloud_table(cloud: &LabeledPointCloud) -> String {
    let mut out = join(["label".to_string(), "w".to_string()].into_iter().chain(coord_header(cloud.dim())));
    out.push('\n');
    for ((p, l), w) in cloud.points().iter().zip(cloud.labels()).zip(cloud.weights()) {
        let line = join(
            [l.to_string(), format_f64(*w)]
                .into_iter()
                .chain(p.iter().map(|v| format_f64(*v))),
        );
        out.push_str(&line);
        out.push('\n');
    }
    out
}

pub fn write_labeled_table<'a>(dim: usize, rows: impl Iterator<Item = (u8, &'a [f64])>) -> String {
    let mut out = join(std::iter::once("label".to_string()).chain(coord_header(dim)));
    out.push('\n');
    for (label, x) in rows {
        out.push_str(&join(std::iter::once(label.to_string()).chain(x.iter().map(|v| format_f64(*v)))));
        out.push('\n');
    }
    out
}

pub fn write_point_table<'a>(dim: usize, rows: impl Iterator<Item = &'a [f64]>) -> String {
    let mut out = join(coord_header(dim));
    out.push('\n');
    for x in rows {
        out.push_str(&join(x.iter().map(|v| format_f64(*v))));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_is_required() {
        let err = read_labeled_table("0,1.0,0.5\n".as_bytes(), true);
        assert!(err.is_err());
    }

    #[test]
    fn parses_cloud_rows() {
        let text = "label, w, x_1, x_2\n0, 0.25, 1.0, 0.0\n1, 0.75, -1.0, 0.5\n";
        let rows = read_labeled_table(text.as_bytes(), true).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[1].label, 1);
        assert_eq!(rows[1].weight, Some(0.75));
        assert_eq!(rows[1].coords, vec![-1.0, 0.5]);
    }

    #[test]
    fn bad_number_reports_line() {
        let text = "label,w,x_1\n0,0.5,1.0\n1,0.5,abc\n";
        match read_labeled_table(text.as_bytes(), true) {
            Err(Error::Table { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn seventeen_digits_round_trip() {
        for v in [0.1, 1.0 / 3.0, -2.718281828459045e-300, 6.02e23] {
            assert_eq!(format_f64(v).parse::<f64>().unwrap(), v);
        }
    }

    #[test]
    fn point_table_round_trip() {
        let rows = [vec![0.1, 0.2], vec![-3.0, 1e-9]];
        let text = write_point_table(2, rows.iter().map(|r| r.as_slice()));
        assert!(text.starts_with("x_1,x_2\n"));
        assert_eq!(read_point_table(text.as_bytes()).unwrap(), rows.to_vec());
    }
}
