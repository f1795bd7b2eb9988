//! Result tables and their CSV form.
//!
//! A CSV file starts with `# key=value` provenance lines, then the header
//! row, then one line per row. `body_sha256` covers the header and rows, so
//! an edited body is caught on parse. Numbers use the shortest decimal form
//! that round-trips, with integral values written without a fraction.

use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    Num(f64),
    Text(String),
}

impl Cell {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Cell::Num(v) => Some(*v),
            Cell::Text(_) => None,
        }
    }

    pub fn as_text(&self) -> Option<&str> {
        match self {
            Cell::Num(_) => None,
            Cell::Text(s) => Some(s),
        }
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Num(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Num(v as f64)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Provenance {
    pub experiment: String,
    pub table: String,
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResultTable {
    pub provenance: Provenance,
    columns: Vec<String>,
    rows: Vec<Vec<Cell>>,
}

impl ResultTable {
    pub fn new(provenance: Provenance, columns: &[&str]) -> Result<Self> {
        if columns.is_empty() {
            return Err(Error::Precondition("a table needs at least one column".into()));
        }
        if let Some(c) = columns.iter().find(|c| c.is_empty() || c.contains(['\n', '\r', '"', ','])) {
            return Err(Error::Precondition(format!("invalid column name {c:?}")));
        }
        Ok(Self { provenance, columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() })
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn rows(&self) -> &[Vec<Cell>] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn push(&mut self, row: Vec<Cell>) -> Result<()> {
        if row.len() != self.columns.len() {
            return Err(Error::DimensionMismatch(format!(
                "row has {} cells, table has {} columns",
                row.len(),
                self.columns.len()
            )));
        }
        if row.iter().any(|c| matches!(c, Cell::Num(v) if v.is_nan())) {
            return Err(Error::Precondition("table cells must not be NaN".into()));
        }
        if row.iter().any(|c| matches!(c, Cell::Text(s) if s.contains(['\n', '\r']))) {
            return Err(Error::Precondition("text cells must be single-line".into()));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::Precondition(format!("no column named {name:?}")))
    }

    /// Values of a numeric column.
    pub fn column_f64(&self, name: &str) -> Result<Vec<f64>> {
        let i = self.column_index(name)?;
        self.rows
            .iter()
            .enumerate()
            .map(|(r, row)| {
                row[i].as_f64().ok_or_else(|| Error::Format(format!("row {r} of column {name:?} is not numeric")))
            })
            .collect()
    }

    fn body(&self) -> String {
        let mut out = String::new();
        out.push_str(&self.columns.join(","));
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(format_cell).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let body = self.body();
        let p = &self.provenance;
        let mut out = String::new();
        for (k, v) in [
            ("experiment", p.experiment.as_str()),
            ("table", p.table.as_str()),
            ("config_hash", p.config_hash.as_str()),
            ("seed", &p.seed.to_string()),
            ("version", p.version.as_str()),
            ("body_sha256", &sha256_hex(&body)),
        ] {
            let _ = writeln!(out, "# {k}={v}");
        }
        out.push_str(&body);
        out
    }

    /// Parses CSV text produced by [`ResultTable::to_csv`], checking the
    /// body digest.
    pub fn parse(text: &str) -> Result<Self> {
        let mut meta = std::collections::BTreeMap::new();
        let mut lines = text.split_inclusive('\n').peekable();
        while let Some(line) = lines.next_if(|l| l.starts_with('#')) {
            let kv = line.trim_end_matches(['\n', '\r']).trim_start_matches('#').trim_start();
            let (k, v) = kv.split_once('=').ok_or_else(|| Error::Format(format!("bad provenance line {line:?}")))?;
            meta.insert(k.to_string(), v.to_string());
        }
        let body: String = lines.collect();
        let get = |k: &str| meta.get(k).cloned().ok_or_else(|| Error::Format(format!("missing provenance key {k}")));
        let digest = get("body_sha256")?;
        if digest != sha256_hex(&body) {
            return Err(Error::Format("table body does not match its body_sha256".into()));
        }
        let seed = get("seed")?.parse().map_err(|_| Error::Format("seed is not an integer".into()))?;
        let provenance = Provenance {
            experiment: get("experiment")?,
            table: get("table")?,
            config_hash: get("config_hash")?,
            seed,
            version: get("version")?,
        };
        let mut records = body.lines();
        let header = records.next().ok_or_else(|| Error::Format("missing header row".into()))?;
        let columns: Vec<&str> = header.split(',').collect();
        let mut table = ResultTable::new(provenance, &columns)?;
        for (r, line) in records.enumerate() {
            let cells = split_record(line)?;
            let row: Vec<Cell> = cells.into_iter().map(parse_cell).collect();
            table.push(row).map_err(|e| Error::Format(format!("row {r}: {e}")))?;
        }
        Ok(table)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}

pub fn emit_csv(table: &ResultTable, path: &Path) -> Result<()> {
    table.write_csv(path)
}

fn sha256_hex(s: &str) -> String {
    Sha256::digest(s.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

/// Shortest round-trip decimal; integral values below 2^53 drop the `.0`
/// (except `-0`, which keeps its sign).
pub fn format_f64(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 9_007_199_254_740_992.0 && !(v == 0.0 && v.is_sign_negative()) {
        format!("{}", v as i64)
    } else {
        format!("{v:?}")
    }
}

fn format_cell(c: &Cell) -> String {
    match c {
        Cell::Num(v) => format_f64(*v),
        Cell::Text(s) if s.contains([',', '"']) || s.parse::<f64>().is_ok() => {
            format!("\"{}\"", s.replace('"', "\"\""))
        }
        Cell::Text(s) => s.clone(),
    }
}

/// A field is numeric when unquoted and parseable as `f64`.
fn parse_cell(field: Field) -> Cell {
    match field {
        Field::Quoted(s) => Cell::Text(s),
        Field::Bare(s) => match s.parse::<f64>() {
            Ok(v) => Cell::Num(v),
            Err(_) => Cell::Text(s),
        },
    }
}

enum Field {
    Bare(String),
    Quoted(String),
}

fn split_record(line: &str) -> Result<Vec<Field>> {
    let mut fields = Vec::new();
    let mut rest = line;
    loop {
        if let Some(after) = rest.strip_prefix('"') {
            let mut s = String::new();
            let mut chars = after.char_indices().peekable();
            let end = loop {
                match chars.next() {
                    Some((_, '"')) if chars.peek().map(|&(_, c)| c) == Some('"') => {
                        chars.next();
                        s.push('"');
                    }
                    Some((i, '"')) => break i + 1,
                    Some((_, c)) => s.push(c),
                    None => return Err(Error::Format(format!("unterminated quote in {line:?}"))),
                }
            };
            fields.push(Field::Quoted(s));
            rest = &after[end..];
            if rest.is_empty() {
                break;
            }
            rest = rest
                .strip_prefix(',')
                .ok_or_else(|| Error::Format(format!("unexpected text after quoted field in {line:?}")))?;
        } else if let Some(i) = rest.find(',') {
            fields.push(Field::Bare(rest[..i].to_string()));
            rest = &rest[i + 1..];
        } else {
            fields.push(Field::Bare(rest.to_string()));
            break;
        }
    }
    Ok(fields)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prov() -> Provenance {
        Provenance {
            experiment: "test".into(),
            table: "t".into(),
            config_hash: "abc".into(),
            seed: 3,
            version: "0.1.0".into(),
        }
    }

    #[test]
    fn one_by_one_round_trips() {
        let mut t = ResultTable::new(prov(), &["x"]).unwrap();
        t.push(vec![Cell::Num(0.1 + 0.2)]).unwrap();
        let back = ResultTable::parse(&t.to_csv()).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.column_f64("x").unwrap()[0].to_bits(), (0.1f64 + 0.2).to_bits());
    }

    #[test]
    fn header_is_verbatim() {
        let t = ResultTable::new(prov(), &["d_tilde", "sigma_tail", "frob_error"]).unwrap();
        let csv = t.to_csv();
        let header = csv.lines().find(|l| !l.starts_with('#')).unwrap();
        assert_eq!(header, "d_tilde,sigma_tail,frob_error");
        assert!(ResultTable::parse(&csv).unwrap().is_empty());
    }

    #[test]
    fn awkward_values_round_trip() {
        let mut t = ResultTable::new(prov(), &["family", "v"]).unwrap();
        for (s, v) in [
            ("plain", 1e-300),
            ("with,comma", -0.0),
            ("quote\"d", f64::INFINITY),
            ("12", 4.0),
            ("", f64::MIN_POSITIVE),
            ("tail", 123456789.125),
        ] {
            t.push(vec![Cell::from(s), Cell::Num(v)]).unwrap();
        }
        let back = ResultTable::parse(&t.to_csv()).unwrap();
        assert_eq!(back.rows().len(), t.rows().len());
        for (a, b) in back.rows().iter().zip(t.rows()) {
            assert_eq!(a[0], b[0]);
            assert_eq!(a[1].as_f64().unwrap().to_bits(), b[1].as_f64().unwrap().to_bits());
        }
    }

    #[test]
    fn tampering_is_detected() {
        let mut t = ResultTable::new(prov(), &["x"]).unwrap();
        t.push(vec![Cell::Num(1.5)]).unwrap();
        let csv = t.to_csv().replace("1.5", "1.25");
        assert!(matches!(ResultTable::parse(&csv), Err(Error::Format(_))));
    }

    #[test]
    fn rejects_ragged_and_nan_rows() {
        let mut t = ResultTable::new(prov(), &["a", "b"]).unwrap();
        assert!(t.push(vec![Cell::Num(1.0)]).is_err());
        assert!(t.push(vec![Cell::Num(1.0), Cell::Num(f64::NAN)]).is_err());
        assert!(ResultTable::new(prov(), &[]).is_err());
    }

    #[test]
    fn number_formatting() {
        assert_eq!(format_f64(4.0), "4");
        assert_eq!(format_f64(0.1), "0.1");
        assert_eq!(format_f64(1e-7), "1e-7");
        assert_eq!(format_f64(1e300), "1e300");
        assert_eq!(format_f64(f64::INFINITY), "inf");
    }
}
