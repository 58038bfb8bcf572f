//! Flat record files shared by every product: CSV with a header row or one
//! JSON object per line, same field names and order in both.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde_json::{Map, Number, Value};

use crate::error::{Error, Result};

/// On-disk layout of a record file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Format {
    Csv,
    /// One JSON object per line, `null` for missing values.
    JsonLines,
}

impl Format {
    /// Guesses from the extension: `.jsonl`/`.ndjson`/`.json` are line-JSON,
    /// anything else CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl" | "ndjson" | "json") => Format::JsonLines,
            _ => Format::Csv,
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::JsonLines => "jsonl",
        }
    }
}

impl std::str::FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "jsonl" | "json-lines" | "ndjson" => Ok(Format::JsonLines),
            other => Err(Error::contract(format!("unknown format {other:?} (csv or jsonl)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Field {
    Text(String),
    Int(i64),
    Num(f64),
    Missing,
}

impl Field {
    /// Missing for `NaN`.
    pub fn num(v: f64) -> Self {
        if v.is_nan() {
            Field::Missing
        } else {
            Field::Num(v)
        }
    }

    fn to_csv(&self) -> String {
        match self {
            Field::Text(s) => s.clone(),
            Field::Int(i) => i.to_string(),
            // `{}` on f64 prints the shortest string that parses back exactly
            Field::Num(v) => v.to_string(),
            Field::Missing => String::new(),
        }
    }

    fn to_json(&self) -> Result<Value> {
        Ok(match self {
            Field::Text(s) => Value::String(s.clone()),
            Field::Int(i) => Value::Number((*i).into()),
            Field::Num(v) => Value::Number(
                Number::from_f64(*v)
                    .ok_or_else(|| Error::data(format!("cannot write non-finite value {v}")))?,
            ),
            Field::Missing => Value::Null,
        })
    }
}

/// One parsed record, fields in header order.
#[derive(Debug, Clone)]
pub struct Record<'a> {
    pub line: u64,
    fields: Vec<Option<&'a str>>,
    json: Option<&'a Map<String, Value>>,
    columns: &'a [String],
    source: &'a str,
}

impl Record<'_> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::Parse {
            path: self.source.to_string(),
            line: self.line,
            message: message.into(),
        }
    }

    fn column(&self, name: &str) -> Result<usize> {
        self.columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| self.err(format!("no column {name:?}")))
    }

    /// The raw text of a field, `None` when empty or `null`.
    pub fn text(&self, name: &str) -> Result<Option<String>> {
        if let Some(obj) = self.json {
            return match obj.get(name) {
                None | Some(Value::Null) => Ok(None),
                Some(Value::String(s)) if s.is_empty() => Ok(None),
                Some(Value::String(s)) => Ok(Some(s.clone())),
                Some(Value::Number(n)) => Ok(Some(n.to_string())),
                Some(other) => Err(self.err(format!("field {name:?} has unexpected value {other}"))),
            };
        }
        let i = self.column(name)?;
        Ok(self.fields[i].filter(|s| !s.is_empty()).map(str::to_string))
    }

    pub fn required_text(&self, name: &str) -> Result<String> {
        self.text(name)?
            .ok_or_else(|| self.err(format!("field {name:?} is empty")))
    }

    /// A float, `None` when empty. Non-finite values are rejected.
    pub fn num(&self, name: &str) -> Result<Option<f64>> {
        let Some(s) = self.text(name)? else {
            return Ok(None);
        };
        let v: f64 = s
            .trim()
            .parse()
            .map_err(|_| self.err(format!("field {name:?}: {s:?} is not a number")))?;
        if !v.is_finite() {
            return Err(self.err(format!("field {name:?}: non-finite value {s}")));
        }
        Ok(Some(v))
    }

    pub fn required_num(&self, name: &str) -> Result<f64> {
        self.num(name)?
            .ok_or_else(|| self.err(format!("field {name:?} is empty")))
    }

    pub fn int(&self, name: &str) -> Result<i64> {
        let s = self.required_text(name)?;
        s.trim()
            .parse()
            .map_err(|_| self.err(format!("field {name:?}: {s:?} is not an integer")))
    }

    /// Error located at this record.
    pub fn error(&self, message: impl Into<String>) -> Error {
        self.err(message)
    }
}

/// Streams the records of `reader`, checking that every column in
/// `required` is present. `source` names the input in error messages.
pub fn for_each_record<R: Read>(
    reader: R,
    format: Format,
    source: &str,
    required: &[&str],
    mut f: impl FnMut(&Record<'_>) -> Result<()>,
) -> Result<()> {
    let parse_err = |line: u64, message: String| Error::Parse {
        path: source.to_string(),
        line,
        message,
    };
    match format {
        Format::Csv => {
            let mut rdr = csv::ReaderBuilder::new()
                .has_headers(true)
                .flexible(false)
                .from_reader(reader);
            let columns: Vec<String> = rdr
                .headers()
                .map_err(|e| parse_err(1, e.to_string()))?
                .iter()
                .map(|h| h.trim().to_string())
                .collect();
            check_columns(&columns, required).map_err(|m| parse_err(1, m))?;
            let mut rec = csv::StringRecord::new();
            loop {
                match rdr.read_record(&mut rec) {
                    Ok(false) => break,
                    Ok(true) => {}
                    Err(e) => {
                        let line = e.position().map_or(0, |p| p.line());
                        return Err(parse_err(line, e.to_string()));
                    }
                }
                let line = rec.position().map_or(0, |p| p.line());
                let record = Record {
                    line,
                    fields: rec.iter().map(Some).collect(),
                    json: None,
                    columns: &columns,
                    source,
                };
                f(&record)?;
            }
        }
        Format::JsonLines => {
            let columns: Vec<String> = required.iter().map(|s| s.to_string()).collect();
            for (i, line) in BufReader::new(reader).lines().enumerate() {
                let line_no = i as u64 + 1;
                let line = line.map_err(|e| parse_err(line_no, e.to_string()))?;
                if line.trim().is_empty() {
                    continue;
                }
                let value: Value = serde_json::from_str(&line)
                    .map_err(|e| parse_err(line_no, format!("invalid JSON: {e}")))?;
                let Value::Object(obj) = value else {
                    return Err(parse_err(line_no, "expected a JSON object".into()));
                };
                for c in required {
                    if !obj.contains_key(*c) {
                        return Err(parse_err(line_no, format!("missing field {c:?}")));
                    }
                }
                let record = Record {
                    line: line_no,
                    fields: vec![None; columns.len()],
                    json: Some(&obj),
                    columns: &columns,
                    source,
                };
                f(&record)?;
            }
        }
    }
    Ok(())
}

fn check_columns(columns: &[String], required: &[&str]) -> std::result::Result<(), String> {
    for c in required {
        if !columns.iter().any(|h| h == c) {
            return Err(format!("header lacks column {c:?} (has {})", columns.join(",")));
        }
    }
    Ok(())
}

/// Writes `rows` under `columns` with LF line endings.
pub fn write_records<W: Write>(
    writer: W,
    format: Format,
    columns: &[&str],
    rows: impl IntoIterator<Item = Vec<Field>>,
) -> Result<()> {
    let io_err = |e: std::io::Error| Error::io("<output>", e);
    let mut w = BufWriter::new(writer);
    match format {
        Format::Csv => {
            let mut wtr = csv::WriterBuilder::new()
                .terminator(csv::Terminator::Any(b'\n'))
                .from_writer(&mut w);
            wtr.write_record(columns).map_err(csv_err)?;
            for row in rows {
                check_width(&row, columns)?;
                wtr.write_record(row.iter().map(Field::to_csv)).map_err(csv_err)?;
            }
            wtr.flush().map_err(io_err)?;
        }
        Format::JsonLines => {
            for row in rows {
                check_width(&row, columns)?;
                // assembled by hand to pin the field order
                let mut line = String::from("{");
                for (i, (c, f)) in columns.iter().zip(&row).enumerate() {
                    if i > 0 {
                        line.push(',');
                    }
                    line.push_str(&Value::String(c.to_string()).to_string());
                    line.push(':');
                    line.push_str(&f.to_json()?.to_string());
                }
                line.push('}');
                writeln!(w, "{line}").map_err(io_err)?;
            }
        }
    }
    w.flush().map_err(io_err)
}

fn check_width(row: &[Field], columns: &[&str]) -> Result<()> {
    if row.len() != columns.len() {
        return Err(Error::contract(format!(
            "row has {} fields for {} columns",
            row.len(),
            columns.len()
        )));
    }
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Data(format!("csv write failed: {e}"))
}

pub(crate) fn create(path: &Path) -> Result<File> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    File::create(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}
