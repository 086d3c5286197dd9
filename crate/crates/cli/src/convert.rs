//! Label exports (CSV with a header, or JSON) to the one-label-per-line
//! sidecar format read by training.

use std::path::{Path, PathBuf};

use bilearn::data::parse_sidecar;
use serde_json::Value;

use crate::output::{guard_overwrite, write, Failure};

#[derive(clap::Args, Debug)]
pub struct Args {
    /// CSV (with header row) or JSON export.
    #[arg(long)]
    pub input: PathBuf,
    /// Sidecar file to write.
    #[arg(long)]
    pub output: PathBuf,
    /// Number of classes; labels are checked against it.
    #[arg(long)]
    pub num_classes: usize,
    /// Column (CSV header or JSON key) holding the labels. Optional when
    /// the export has a single label column.
    #[arg(long)]
    pub column: Option<String>,
    /// Column giving each row's dataset index; rows are reordered by it.
    #[arg(long, default_value = "index")]
    pub key: String,
    /// Input format; inferred from the extension when omitted.
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}

#[derive(clap::ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

fn infer_format(path: &Path) -> Result<Format, Failure> {
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .as_deref()
    {
        Some("csv") => Ok(Format::Csv),
        Some("json") => Ok(Format::Json),
        _ => Err(Failure::usage(format!(
            "cannot tell the format of {}; pass --format",
            path.display()
        ))),
    }
}

fn parse_label(raw: &str, row: usize) -> Result<usize, Failure> {
    let t = raw.trim();
    t.parse::<usize>()
        .ok()
        .or_else(|| {
            t.parse::<f64>()
                .ok()
                .filter(|f| f.fract() == 0.0 && *f >= 0.0)
                .map(|f| f as usize)
        })
        .ok_or_else(|| Failure::usage(format!("row {row}: `{t}` is not a class label")))
}

/// Pick the label column: the named one, or the only non-key column.
fn choose_column<'a>(names: &'a [String], column: Option<&str>, key: &str) -> Result<&'a str, Failure> {
    if let Some(c) = column {
        return names
            .iter()
            .find(|n| *n == c)
            .map(String::as_str)
            .ok_or_else(|| Failure::usage(format!("no column `{c}`; available: {}", names.join(", "))));
    }
    let candidates: Vec<&String> = names.iter().filter(|n| *n != key).collect();
    match candidates.as_slice() {
        [only] => Ok(only.as_str()),
        _ => Err(Failure::usage(format!(
            "several label columns ({}); choose one with --column",
            candidates.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", ")
        ))),
    }
}

/// `(key, label)` rows; the key is `None` when the export has no key column.
type Rows = Vec<(Option<usize>, usize)>;

fn read_csv(text: &str, column: Option<&str>, key: &str) -> Result<Rows, Failure> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| Failure::usage(format!("bad CSV header: {e}")))?
        .iter()
        .map(str::to_string)
        .collect();
    let label_col = choose_column(&headers, column, key)?;
    let li = headers
        .iter()
        .position(|h| h == label_col)
        .expect("chosen from headers");
    let ki = headers.iter().position(|h| h == key);
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| Failure::usage(format!("line {row}: {e}")))?;
        let field = |j: usize| {
            rec.get(j)
                .ok_or_else(|| Failure::usage(format!("line {row}: missing column")))
        };
        let k = ki.map(|j| field(j).and_then(|s| parse_label(s, row))).transpose()?;
        rows.push((k, parse_label(field(li)?, row)?));
    }
    Ok(rows)
}

fn json_label(v: &Value, row: usize) -> Result<usize, Failure> {
    match v {
        Value::Number(n) => parse_label(&n.to_string(), row),
        Value::String(s) => parse_label(s, row),
        other => Err(Failure::usage(format!("entry {row}: `{other}` is not a class label"))),
    }
}

/// Accepts a bare array of labels, an object of label arrays, or an array
/// of records.
fn read_json(text: &str, column: Option<&str>, key: &str) -> Result<Rows, Failure> {
    let value: Value = serde_json::from_str(text).map_err(|e| Failure::usage(format!("bad JSON: {e}")))?;
    match value {
        Value::Array(items) if items.iter().all(|v| !v.is_object()) => items
            .iter()
            .enumerate()
            .map(|(i, v)| Ok((None, json_label(v, i)?)))
            .collect(),
        Value::Array(items) => {
            let names: Vec<String> = items
                .first()
                .and_then(Value::as_object)
                .map(|o| o.keys().cloned().collect())
                .unwrap_or_default();
            let label_col = choose_column(&names, column, key)?.to_string();
            items
                .iter()
                .enumerate()
                .map(|(i, item)| {
                    let get = |name: &str| item.get(name);
                    let label =
                        get(&label_col).ok_or_else(|| Failure::usage(format!("record {i} has no `{label_col}`")))?;
                    let k = get(key).map(|v| json_label(v, i)).transpose()?;
                    Ok((k, json_label(label, i)?))
                })
                .collect()
        }
        Value::Object(map) => {
            let names: Vec<String> = map.keys().cloned().collect();
            let label_col = choose_column(&names, column, key)?;
            let labels = map[label_col]
                .as_array()
                .ok_or_else(|| Failure::usage(format!("`{label_col}` is not an array")))?;
            let keys = map.get(key).and_then(Value::as_array);
            if keys.is_some_and(|k| k.len() != labels.len()) {
                return Err(Failure::usage(format!("`{key}` and `{label_col}` differ in length")));
            }
            labels
                .iter()
                .enumerate()
                .map(|(i, v)| {
                    let k = keys.map(|ks| json_label(&ks[i], i)).transpose()?;
                    Ok((k, json_label(v, i)?))
                })
                .collect()
        }
        _ => Err(Failure::usage("JSON export must be an array or an object")),
    }
}

/// Labels in dataset order; keyed rows must cover `0..n` exactly once.
fn order(rows: Rows) -> Result<Vec<usize>, Failure> {
    let keyed = rows.iter().filter(|r| r.0.is_some()).count();
    if keyed == 0 {
        return Ok(rows.into_iter().map(|r| r.1).collect());
    }
    if keyed != rows.len() {
        return Err(Failure::usage("some rows lack an index"));
    }
    let n = rows.len();
    let mut out = vec![None; n];
    for (k, y) in rows {
        let k = k.expect("all keyed");
        match out.get_mut(k) {
            Some(slot @ None) => *slot = Some(y),
            Some(Some(_)) => return Err(Failure::usage(format!("index {k} appears twice"))),
            None => return Err(Failure::usage(format!("index {k} outside 0..{n}"))),
        }
    }
    Ok(out.into_iter().map(|y| y.expect("every index filled")).collect())
}

pub fn sidecar_text(labels: &[usize]) -> String {
    labels.iter().map(|y| format!("{y}\n")).collect()
}

pub fn cmd_convert(args: &Args, force: bool) -> Result<(), Failure> {
    guard_overwrite(std::slice::from_ref(&args.output), force)?;
    let format = match args.format {
        Some(f) => f,
        None => infer_format(&args.input)?,
    };
    let text = std::fs::read_to_string(&args.input)
        .map_err(|e| Failure::runtime(format!("reading {}: {e}", args.input.display())))?;
    let rows = match format {
        Format::Csv => read_csv(&text, args.column.as_deref(), &args.key)?,
        Format::Json => read_json(&text, args.column.as_deref(), &args.key)?,
    };
    let labels = order(rows)?;
    let out = sidecar_text(&labels);
    // Range-check through the same parser training uses.
    parse_sidecar(&out, args.num_classes, labels.len(), &args.input).map_err(|e| Failure::usage(e.to_string()))?;
    write(&args.output, out)?;
    println!("wrote {} labels to {}", labels.len(), args.output.display());
    Ok(())
}
