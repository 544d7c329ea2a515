//! File formats: stream/repository/groundtruth CSV, the rule grammar, and
//! the per-timestamp delta log.
//!
//! Stream CSV carries a `timestamp` column followed by the attribute
//! columns, with a literal `-` marking a missing value. Repository CSV is
//! the same without the timestamp column, and `-` is not allowed. Rules use
//! one line per rule: `detA:eps,detB:eps -> dep:eps`. A delta log holds
//! `t,+|-,ts_x,ts_y,probability` lines followed by a `key=value` summary
//! block.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::dd::DDRule;
use crate::engine::JoinDelta;
use crate::error::{Error, Result};
use crate::index::Repository;
use crate::model::{AttributeSchema, IncompleteObject, StreamId};

const MISSING_MARK: &str = "-";

pub fn read_stream_csv(path: &Path, stream: StreamId) -> Result<(AttributeSchema, Vec<IncompleteObject>)> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let headers = reader.headers()?.clone();
    if headers.is_empty() || !headers[0].eq_ignore_ascii_case("timestamp") {
        return Err(Error::Parse(format!(
            "{}: stream header must start with `timestamp`",
            path.display()
        )));
    }
    let schema = AttributeSchema::new(headers.iter().skip(1).map(str::to_string).collect())?;
    let mut objects = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != schema.len() + 1 {
            return Err(Error::Parse(format!(
                "{}: row {} has {} fields, expected {}",
                path.display(),
                line + 2,
                record.len(),
                schema.len() + 1
            )));
        }
        let timestamp: i64 = record[0]
            .trim()
            .parse()
            .map_err(|_| Error::Parse(format!("bad timestamp `{}` on row {}", &record[0], line + 2)))?;
        let mut values = Vec::with_capacity(schema.len());
        for field in record.iter().skip(1) {
            let field = field.trim();
            if field == MISSING_MARK {
                values.push(None);
            } else {
                let v: f64 = field.parse().map_err(|_| {
                    Error::Parse(format!("bad value `{field}` on row {}", line + 2))
                })?;
                values.push(Some(v));
            }
        }
        objects.push(IncompleteObject::new(stream, timestamp, values)?);
    }
    Ok((schema, objects))
}

pub fn write_stream_csv(path: &Path, schema: &AttributeSchema, objects: &[IncompleteObject]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    let mut header = vec!["timestamp".to_string()];
    header.extend(schema.names().iter().cloned());
    writer.write_record(&header)?;
    for obj in objects {
        let mut record = vec![obj.timestamp.to_string()];
        for v in obj.values() {
            record.push(match v {
                Some(v) => format!("{v}"),
                None => MISSING_MARK.to_string(),
            });
        }
        writer.write_record(&record)?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_repository_csv(path: &Path) -> Result<Repository> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let headers = reader.headers()?.clone();
    let schema = AttributeSchema::new(headers.iter().map(str::to_string).collect())?;
    let mut rows = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != schema.len() {
            return Err(Error::Parse(format!(
                "{}: row {} has {} fields, expected {}",
                path.display(),
                line + 2,
                record.len(),
                schema.len()
            )));
        }
        let mut row = Vec::with_capacity(schema.len());
        for field in record.iter() {
            let field = field.trim();
            if field == MISSING_MARK {
                return Err(Error::Parse(format!(
                    "{}: repository rows cannot have missing values (row {})",
                    path.display(),
                    line + 2
                )));
            }
            let v: f64 = field
                .parse()
                .map_err(|_| Error::Parse(format!("bad value `{field}` on row {}", line + 2)))?;
            row.push(v);
        }
        rows.push(row);
    }
    Repository::new(schema, rows)
}

pub fn write_repository_csv(path: &Path, schema: &AttributeSchema, rows: &[Vec<f64>]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(schema.names())?;
    for row in rows {
        let record: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        writer.write_record(&record)?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_groundtruth_csv(path: &Path) -> Result<Vec<(i64, i64)>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let mut pairs = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != 2 {
            return Err(Error::Parse(format!(
                "{}: row {} needs exactly two timestamps",
                path.display(),
                line + 2
            )));
        }
        let parse = |s: &str| -> Result<i64> {
            s.trim()
                .parse()
                .map_err(|_| Error::Parse(format!("bad timestamp `{s}` on row {}", line + 2)))
        };
        pairs.push((parse(&record[0])?, parse(&record[1])?));
    }
    Ok(pairs)
}

pub fn write_groundtruth_csv(path: &Path, pairs: &[(i64, i64)]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(["timestamp_x", "timestamp_y"])?;
    for &(l, r) in pairs {
        writer.write_record([l.to_string(), r.to_string()])?;
    }
    writer.flush()?;
    Ok(())
}

/// Parse the rule grammar: one rule per line in the form
/// `detA:eps,detB:eps -> dep:eps`, attribute names from the schema. Blank
/// lines and `#` comments are ignored.
pub fn parse_rules(text: &str, schema: &AttributeSchema) -> Result<Vec<DDRule>> {
    let mut rules = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (lhs, rhs) = line.split_once("->").ok_or_else(|| {
            Error::Parse(format!("rule line {}: missing `->`", lineno + 1))
        })?;
        let parse_term = |term: &str| -> Result<(usize, f64)> {
            let (name, eps) = term.trim().split_once(':').ok_or_else(|| {
                Error::Parse(format!("rule line {}: term `{term}` needs `name:eps`", lineno + 1))
            })?;
            let attr = schema.index_of(name.trim()).ok_or_else(|| {
                Error::Parse(format!("rule line {}: unknown attribute `{}`", lineno + 1, name.trim()))
            })?;
            let eps: f64 = eps.trim().parse().map_err(|_| {
                Error::Parse(format!("rule line {}: bad epsilon `{}`", lineno + 1, eps.trim()))
            })?;
            Ok((attr, eps))
        };
        let mut determinants = Vec::new();
        let mut determinant_eps = Vec::new();
        for term in lhs.split(',') {
            let (attr, eps) = parse_term(term)?;
            determinants.push(attr);
            determinant_eps.push(eps);
        }
        let (dependent, dependent_eps) = parse_term(rhs)?;
        rules.push(DDRule::new(determinants, determinant_eps, dependent, dependent_eps)?);
    }
    if rules.is_empty() {
        return Err(Error::Parse("rule file contains no rules".into()));
    }
    Ok(rules)
}

pub fn read_rules(path: &Path, schema: &AttributeSchema) -> Result<Vec<DDRule>> {
    let text = std::fs::read_to_string(path)?;
    parse_rules(&text, schema)
}

pub fn format_rules(rules: &[DDRule], schema: &AttributeSchema) -> String {
    let mut out = String::new();
    for rule in rules {
        let lhs: Vec<String> = rule
            .determinants()
            .iter()
            .zip(rule.determinant_eps())
            .map(|(&a, &e)| format!("{}:{}", schema.name(a), e))
            .collect();
        out.push_str(&format!(
            "{} -> {}:{}\n",
            lhs.join(","),
            schema.name(rule.dependent()),
            rule.dependent_eps()
        ));
    }
    out
}

pub fn write_rules(path: &Path, rules: &[DDRule], schema: &AttributeSchema) -> Result<()> {
    std::fs::write(path, format_rules(rules, schema))?;
    Ok(())
}

/// One line of a delta log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeltaRecord {
    pub timestamp: i64,
    pub added: bool,
    pub left_ts: i64,
    pub right_ts: i64,
    pub probability: f64,
}

/// Write delta lines (`t,+|-,ts_x,ts_y,probability`) followed by a
/// `key=value` summary block.
pub fn write_delta_log<W: Write>(
    mut out: W,
    deltas: &[JoinDelta],
    summary: &[(String, String)],
) -> Result<()> {
    for delta in deltas {
        for &(l, r, p) in &delta.added {
            writeln!(out, "{},+,{l},{r},{p}", delta.timestamp)?;
        }
        for &(l, r, p) in &delta.removed {
            writeln!(out, "{},-,{l},{r},{p}", delta.timestamp)?;
        }
    }
    for (key, value) in summary {
        writeln!(out, "{key}={value}")?;
    }
    Ok(())
}

/// Read a delta log back: returns the delta lines in file order plus the
/// summary map.
pub fn read_delta_log(path: &Path) -> Result<(Vec<DeltaRecord>, HashMap<String, String>)> {
    let file = BufReader::new(File::open(path)?);
    let mut records = Vec::new();
    let mut summary = HashMap::new();
    for (lineno, line) in file.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some((key, value)) = line.split_once('=') {
            if !line.contains(',') {
                summary.insert(key.to_string(), value.to_string());
                continue;
            }
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(Error::Parse(format!(
                "delta line {}: expected 5 fields, got {}",
                lineno + 1,
                fields.len()
            )));
        }
        let added = match fields[1] {
            "+" => true,
            "-" => false,
            other => {
                return Err(Error::Parse(format!(
                    "delta line {}: expected + or -, got `{other}`",
                    lineno + 1
                )))
            }
        };
        let parse_i = |s: &str| -> Result<i64> {
            s.parse().map_err(|_| Error::Parse(format!("delta line {}: bad integer `{s}`", lineno + 1)))
        };
        let probability: f64 = fields[4]
            .parse()
            .map_err(|_| Error::Parse(format!("delta line {}: bad probability", lineno + 1)))?;
        records.push(DeltaRecord {
            timestamp: parse_i(fields[0])?,
            added,
            left_ts: parse_i(fields[2])?,
            right_ts: parse_i(fields[3])?,
            probability,
        });
    }
    Ok((records, summary))
}

/// Apply a delta log in order and return the final live pair set.
pub fn replay_final_set(records: &[DeltaRecord]) -> std::collections::HashSet<(i64, i64)> {
    let mut live = std::collections::HashSet::new();
    for rec in records {
        if rec.added {
            live.insert((rec.left_ts, rec.right_ts));
        } else {
            live.remove(&(rec.left_ts, rec.right_ts));
        }
    }
    live
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema4() -> AttributeSchema {
        AttributeSchema::new(vec!["A".into(), "B".into(), "C".into(), "D".into()]).unwrap()
    }

    #[test]
    fn stream_csv_round_trip_with_missing_values() {
        let schema = schema4();
        let objects = vec![
            IncompleteObject::new(StreamId::Left, 1, vec![Some(0.25), Some(0.5), None, Some(1.0)])
                .unwrap(),
            IncompleteObject::new(StreamId::Left, 2, vec![None, Some(0.125), Some(0.0), None])
                .unwrap(),
        ];
        let dir = std::env::temp_dir().join(format!("joinids-io-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("stream.csv");
        write_stream_csv(&path, &schema, &objects).unwrap();
        let (schema2, objects2) = read_stream_csv(&path, StreamId::Left).unwrap();
        assert_eq!(schema, schema2);
        assert_eq!(objects, objects2);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("timestamp,A,B,C,D"));
        assert!(text.contains("1,0.25,0.5,-,1"));
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn repository_csv_rejects_missing_marks() {
        let dir = std::env::temp_dir().join(format!("joinids-io2-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("repo.csv");
        std::fs::write(&path, "A,B\n0.1,0.2\n0.3,-\n").unwrap();
        assert!(matches!(read_repository_csv(&path), Err(Error::Parse(_))));
        std::fs::write(&path, "A,B\n0.1,0.2\n0.3,0.4\n").unwrap();
        let repo = read_repository_csv(&path).unwrap();
        assert_eq!(repo.len(), 2);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn rule_grammar_round_trip() {
        let schema = schema4();
        let text = "A:0.1,B:0.05 -> C:0.2\n# comment\n\nD:0.3 -> A:0.15\n";
        let rules = parse_rules(text, &schema).unwrap();
        assert_eq!(rules.len(), 2);
        assert_eq!(rules[0].determinants(), &[0, 1]);
        assert_eq!(rules[0].determinant_eps(), &[0.1, 0.05]);
        assert_eq!(rules[0].dependent(), 2);
        assert_eq!(rules[0].dependent_eps(), 0.2);
        let formatted = format_rules(&rules, &schema);
        let reparsed = parse_rules(&formatted, &schema).unwrap();
        assert_eq!(rules, reparsed);
    }

    #[test]
    fn rule_grammar_rejects_garbage() {
        let schema = schema4();
        assert!(parse_rules("A:0.1 C:0.2", &schema).is_err());
        assert!(parse_rules("Z:0.1 -> C:0.2", &schema).is_err());
        assert!(parse_rules("A:x -> C:0.2", &schema).is_err());
        assert!(parse_rules("", &schema).is_err());
    }

    #[test]
    fn delta_log_round_trip_and_replay() {
        let deltas = vec![
            JoinDelta {
                timestamp: 1,
                added: vec![(1, 1, 1.0), (1, 2, 0.75)],
                removed: vec![],
                unimputable: vec![],
            },
            JoinDelta {
                timestamp: 3,
                added: vec![],
                removed: vec![(1, 1, 1.0)],
                unimputable: vec![],
            },
        ];
        let summary = vec![
            ("wall_clock_seconds".to_string(), "0.5".to_string()),
            ("timestamps".to_string(), "3".to_string()),
        ];
        let mut buffer = Vec::new();
        write_delta_log(&mut buffer, &deltas, &summary).unwrap();
        let dir = std::env::temp_dir().join(format!("joinids-io3-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("deltas.log");
        std::fs::write(&path, &buffer).unwrap();
        let (records, parsed_summary) = read_delta_log(&path).unwrap();
        assert_eq!(records.len(), 3);
        assert_eq!(parsed_summary.get("timestamps").map(String::as_str), Some("3"));
        let live = replay_final_set(&records);
        assert_eq!(live.len(), 1);
        assert!(live.contains(&(1, 2)));
        std::fs::remove_dir_all(&dir).ok();
    }
}
