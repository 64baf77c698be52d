//! CSV tables and TOML schema files.

use std::fs;
use std::io::Write;
use std::path::Path;

use margot::tabular::{Column, ColumnKind, Table, TableSchema};

use crate::error::{CliError, CliResult};

pub fn read_schema(path: &Path) -> CliResult<TableSchema> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let schema: TableSchema = toml::from_str(&text)
        .map_err(|e| CliError::Format(format!("{}: invalid schema: {e}", path.display())))?;
    schema.validate()?;
    Ok(schema)
}

pub fn schema_to_toml(schema: &TableSchema) -> String {
    toml::to_string(schema).expect("schema serializes")
}

fn parse_csv(bytes: &[u8], origin: &str) -> CliResult<(Vec<String>, Vec<csv::StringRecord>)> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(bytes);
    let header = rdr
        .headers()
        .map_err(|e| CliError::Format(format!("{origin}: {e}")))?
        .iter()
        .map(|s| s.trim().to_string())
        .collect();
    let rows = rdr
        .records()
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::Format(format!("{origin}: {e}")))?;
    Ok((header, rows))
}

/// Parses CSV bytes against `schema`, or as all-numeric when it is absent.
pub fn table_from_csv(
    bytes: &[u8],
    origin: &str,
    schema: Option<&TableSchema>,
) -> CliResult<Table> {
    let (header, rows) = parse_csv(bytes, origin)?;
    let kinds: Vec<ColumnKind> = match schema {
        Some(s) => {
            let expect = s.names();
            if header.iter().map(String::as_str).ne(expect.iter().copied()) {
                return Err(CliError::Core(margot::Error::Validation(format!(
                    "{origin}: header [{}] does not match schema columns [{}]",
                    header.join(", "),
                    expect.join(", ")
                ))));
            }
            s.columns.iter().map(|c| c.kind).collect()
        }
        None => vec![ColumnKind::Continuous; header.len()],
    };
    let mut columns = Vec::with_capacity(header.len());
    for (j, (name, kind)) in header.iter().zip(&kinds).enumerate() {
        let cells = rows.iter().map(|r| r.get(j).unwrap_or("").trim());
        let col = if kind.is_labelled() {
            Column::Labels(cells.map(str::to_string).collect())
        } else {
            let mut v = Vec::with_capacity(rows.len());
            for (i, cell) in cells.enumerate() {
                let x = cell.parse::<f64>().map_err(|_| {
                    margot::Error::Validation(format!(
                        "{origin}: column '{name}' row {}: cannot parse '{cell}' as a number",
                        i + 1
                    ))
                })?;
                v.push(x);
            }
            Column::Numeric(v)
        };
        columns.push(col);
    }
    Ok(Table::new(header, columns)?)
}

pub fn read_table(path: &Path, schema: Option<&TableSchema>) -> CliResult<(Table, Vec<u8>)> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    let t = table_from_csv(&bytes, &path.display().to_string(), schema)?;
    Ok((t, bytes))
}

pub fn table_to_csv(t: &Table) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&t.names).expect("in-memory write");
    let mut rec = Vec::with_capacity(t.n_cols());
    for i in 0..t.n_rows() {
        rec.clear();
        for c in &t.columns {
            rec.push(match c {
                Column::Numeric(v) => v[i].to_string(),
                Column::Labels(v) => v[i].clone(),
            });
        }
        w.write_record(&rec).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

/// Writes to `path`, or to stdout when it is `None`.
pub fn write_output(path: Option<&Path>, bytes: &[u8]) -> CliResult<()> {
    match path {
        Some(p) => fs::write(p, bytes).map_err(|e| CliError::io(p, e)),
        None => std::io::stdout()
            .write_all(bytes)
            .map_err(|e| CliError::io("<stdout>", e)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use margot::tabular::ColumnSpec;

    #[test]
    fn csv_round_trip_with_labels() {
        let schema = TableSchema::new(vec![
            ColumnSpec::continuous("x"),
            ColumnSpec::categorical("c", &["a", "b"]),
        ])
        .unwrap();
        let text = b"x,c\n1.5,a\n-2,b\n";
        let t = table_from_csv(text, "t", Some(&schema)).unwrap();
        assert_eq!(t.n_rows(), 2);
        assert_eq!(table_to_csv(&t), b"x,c\n1.5,a\n-2,b\n");
    }

    #[test]
    fn header_mismatch_and_bad_number() {
        let schema = TableSchema::continuous(&["x", "y"]);
        assert!(table_from_csv(b"x,z\n1,2\n", "t", Some(&schema)).is_err());
        let e = table_from_csv(b"x,y\n1,oops\n", "t", Some(&schema)).unwrap_err();
        assert!(e.to_string().contains("column 'y' row 1"));
        assert!(table_from_csv(b"x,y\n1,\n", "t", None).is_err());
    }

    #[test]
    fn schema_toml_round_trip() {
        let schema = TableSchema::new(vec![
            ColumnSpec::continuous("x"),
            ColumnSpec::ordinal("grade", &["lo", "mid", "hi"]),
        ])
        .unwrap();
        let text = schema_to_toml(&schema);
        let back: TableSchema = toml::from_str(&text).unwrap();
        assert_eq!(back, schema);
    }
}
