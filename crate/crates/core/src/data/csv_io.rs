use super::{DataError, Dataset, PlanRecord, Provenance, Result, LABEL_COLUMN};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

/// Reads a plan CSV: a header with feature columns plus `gpr`, one plan per row.
pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_csv(file)
}

pub fn read_csv<R: Read>(reader: R) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let label_idx = headers
        .iter()
        .position(|h| h == LABEL_COLUMN)
        .ok_or_else(|| DataError::MissingColumn(LABEL_COLUMN.into()))?;
    let feature_idx: Vec<usize> = (0..headers.len()).filter(|&i| i != label_idx).collect();
    let feature_names: Vec<String> = feature_idx.iter().map(|&i| headers[i].to_string()).collect();

    let mut records = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row_no = i + 1;
        let row = row.map_err(|e| DataError::Row {
            row: row_no,
            message: e.to_string(),
        })?;
        if row.len() != headers.len() {
            return Err(DataError::Row {
                row: row_no,
                message: format!("expected {} cells, found {}", headers.len(), row.len()),
            });
        }
        let parse = |col: usize| -> Result<f64> {
            let cell = &row[col];
            cell.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| DataError::Row {
                    row: row_no,
                    message: format!("non-numeric value `{cell}` in column `{}`", &headers[col]),
                })
        };
        let gpr = parse(label_idx)?;
        if !(0.0..=100.0).contains(&gpr) {
            return Err(DataError::Row {
                row: row_no,
                message: format!("gpr {gpr} outside [0, 100]"),
            });
        }
        let features = feature_idx.iter().map(|&c| parse(c)).collect::<Result<Vec<_>>>()?;
        records.push(PlanRecord { features, gpr });
    }
    Dataset::new(feature_names, records, Provenance::Csv)
}

/// Writes features in schema order followed by `gpr`.
pub fn write_csv_to<W: Write>(dataset: &Dataset, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let header: Vec<&str> = dataset
        .feature_names
        .iter()
        .map(String::as_str)
        .chain(std::iter::once(LABEL_COLUMN))
        .collect();
    wtr.write_record(&header)?;
    for r in &dataset.records {
        let cells: Vec<String> = r
            .features
            .iter()
            .chain(std::iter::once(&r.gpr))
            .map(|v| v.to_string())
            .collect();
        wtr.write_record(&cells)?;
    }
    wtr.flush().map_err(|source| DataError::Io {
        path: "<csv writer>".into(),
        source,
    })?;
    Ok(())
}

pub fn write_csv(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    write_csv_to(dataset, std::io::BufWriter::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::CANONICAL_FEATURES;

    #[test]
    fn reads_canonical_schema() {
        let header = format!("{},gpr", CANONICAL_FEATURES.join(","));
        let row = |g: &str| format!("{},{g}", ["0.5"; 12].join(","));
        let text = format!("{header}\n{}\n{}\n", row("98.2"), row("93"));
        let d = read_csv(text.as_bytes()).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.feature_names, CANONICAL_FEATURES.map(String::from).to_vec());
        assert_eq!(d.labels(), vec![98.2, 93.0]);
    }

    #[test]
    fn label_column_may_appear_anywhere() {
        let d = read_csv("gpr,a,b\n99,1,2\n".as_bytes()).unwrap();
        assert_eq!(d.feature_names, vec!["a", "b"]);
        assert_eq!(d.records[0].features, vec![1.0, 2.0]);
    }

    #[test]
    fn out_of_range_label_names_row() {
        let err = read_csv("a,gpr\n1,99\n2,101\n".as_bytes()).unwrap_err();
        match err {
            DataError::Row { row, message } => {
                assert_eq!(row, 2);
                assert!(message.contains("101"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_numeric_and_missing_columns() {
        assert!(matches!(
            read_csv("a,gpr\nx,99\n".as_bytes()),
            Err(DataError::Row { row: 1, .. })
        ));
        assert!(matches!(
            read_csv("a,b\n1,2\n".as_bytes()),
            Err(DataError::MissingColumn(_))
        ));
    }
}
