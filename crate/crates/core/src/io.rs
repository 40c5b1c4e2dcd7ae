//! Table ingestion from CSV and JSON text.
//!
//! CSV: exactly two records of J integer cells, no header; lines starting
//! with `#` are comments. JSON: `{"counts": [[...], [...]]}`.

use crate::error::{Error, Result};
use crate::table::ContingencyTable;

pub fn parse_csv(text: &str) -> Result<ContingencyTable> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());

    let mut rows: Vec<Vec<u64>> = Vec::new();
    let mut width: Option<usize> = None;
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            Error::Parse {
                line,
                column: 0,
                message: e.to_string(),
            }
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        if let Some(w) = width {
            if record.len() != w {
                return Err(Error::Parse {
                    line,
                    column: (record.len().min(w) + 1) as u64,
                    message: format!("ragged row: expected {w} cells, found {}", record.len()),
                });
            }
        }
        width = Some(record.len());
        let mut row = Vec::with_capacity(record.len());
        for (col, field) in record.iter().enumerate() {
            let v = field.parse::<u64>().map_err(|_| Error::Parse {
                line,
                column: col as u64 + 1,
                message: format!("expected a nonnegative integer count, found {field:?}"),
            })?;
            row.push(v);
        }
        rows.push(row);
    }

    if rows.is_empty() {
        return Err(Error::Parse {
            line: 1,
            column: 1,
            message: "empty input".into(),
        });
    }
    if rows.len() != 2 {
        return Err(Error::Parse {
            line: 0,
            column: 0,
            message: format!("exactly two treatment rows required, found {}", rows.len()),
        });
    }
    ContingencyTable::from_rows(rows)
}

pub fn parse_json(text: &str) -> Result<ContingencyTable> {
    if text.trim().is_empty() {
        return Err(Error::Parse {
            line: 1,
            column: 1,
            message: "empty input".into(),
        });
    }
    serde_json::from_str(text).map_err(|e| Error::Parse {
        line: e.line() as u64,
        column: e.column() as u64,
        message: e.to_string(),
    })
}

/// Parses either format, choosing JSON when the first non-blank byte is `{`.
pub fn parse_table(text: &str) -> Result<ContingencyTable> {
    if text.trim_start().starts_with('{') {
        parse_json(text)
    } else {
        parse_csv(text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_ref_table() {
        let t = parse_csv("# Doll and Pygott\n11,8,8,5\n6, 4, 10, 12\n").unwrap();
        assert_eq!(t.row(0), &[11, 8, 8, 5]);
        assert_eq!(t.row(1), &[6, 4, 10, 12]);
    }

    #[test]
    fn csv_errors_carry_positions() {
        match parse_csv("1,2,3\n4,x,6\n") {
            Err(Error::Parse { line, column, .. }) => assert_eq!((line, column), (2, 2)),
            other => panic!("unexpected {other:?}"),
        }
        match parse_csv("1,2,3\n4,5\n") {
            Err(Error::Parse { line, message, .. }) => {
                assert_eq!(line, 2);
                assert!(message.contains("ragged"));
            }
            other => panic!("unexpected {other:?}"),
        }
        let e = parse_csv("1,2\n3,4\n5,6\n").unwrap_err();
        assert!(e.to_string().contains("exactly two treatment rows required"));
        assert!(parse_csv("").is_err());
        assert!(parse_csv("1,-2\n3,4\n").is_err());
    }

    #[test]
    fn json_errors() {
        assert!(parse_json("").is_err());
        match parse_json("{\"counts\": [[1,2],\n[3 4]]}") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        let e = parse_json("{\"counts\": [[1,2],[3]]}").unwrap_err();
        assert!(matches!(e, Error::Parse { .. }));
        assert!(parse_table("{\"counts\": [[1,2],[3,4]]}").is_ok());
    }
}
