//! Event sequences, the predicate catalog, and the JSONL corpus format.
//!
//! A corpus file holds one sequence per line:
//!
//! ```text
//! {"body":{"X1":[1.0],"X2":[2.0]},"target":[3.0],"horizon":5.0}
//! ```
//!
//! Predicate names are resolved against a [`PredicateCatalog`], whose body
//! predicates (every name except the target) define the column order used by
//! the rule-selection matrix.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ordered predicate names plus the position of the head predicate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "CatalogFile", into = "CatalogFile")]
pub struct PredicateCatalog {
    names: Vec<String>,
    target_index: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CatalogFile {
    predicates: Vec<String>,
    target: String,
}

impl TryFrom<CatalogFile> for PredicateCatalog {
    type Error = Error;

    fn try_from(file: CatalogFile) -> Result<Self> {
        let mut names = file.predicates;
        let target_index = match names.iter().position(|n| *n == file.target) {
            Some(i) => i,
            None => {
                names.push(file.target);
                names.len() - 1
            }
        };
        PredicateCatalog::new(names, target_index)
    }
}

impl From<PredicateCatalog> for CatalogFile {
    fn from(cat: PredicateCatalog) -> Self {
        CatalogFile {
            predicates: cat.body_names().map(str::to_owned).collect(),
            target: cat.target_name().to_owned(),
        }
    }
}

impl PredicateCatalog {
    pub fn new(names: Vec<String>, target_index: usize) -> Result<Self> {
        if target_index >= names.len() {
            return Err(Error::Catalog(format!(
                "target index {target_index} out of range for {} names",
                names.len()
            )));
        }
        let mut seen = HashSet::new();
        for name in &names {
            if name.is_empty() {
                return Err(Error::Catalog("empty predicate name".into()));
            }
            if !seen.insert(name.as_str()) {
                return Err(Error::Catalog(format!("duplicate predicate `{name}`")));
            }
        }
        Ok(PredicateCatalog {
            names,
            target_index,
        })
    }

    /// Body predicates `X1..Xn` followed by the target `Y`.
    pub fn with_body(body: &[&str], target: &str) -> Result<Self> {
        let mut names: Vec<String> = body.iter().map(|s| s.to_string()).collect();
        names.push(target.to_string());
        let target_index = names.len() - 1;
        Self::new(names, target_index)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn target_index(&self) -> usize {
        self.target_index
    }

    pub fn target_name(&self) -> &str {
        &self.names[self.target_index]
    }

    /// Number of body predicates (columns of the selection matrix before dummies).
    pub fn body_count(&self) -> usize {
        self.names.len() - 1
    }

    pub fn body_names(&self) -> impl Iterator<Item = &str> {
        self.names
            .iter()
            .enumerate()
            .filter(move |(i, _)| *i != self.target_index)
            .map(|(_, n)| n.as_str())
    }

    pub fn body_name(&self, column: usize) -> Option<&str> {
        self.body_names().nth(column)
    }

    /// Column of a body predicate, or `None` for the target or unknown names.
    pub fn body_index(&self, name: &str) -> Option<usize> {
        self.body_names().position(|n| n == name)
    }
}

/// One observed sample: body-predicate event times plus target event times.
#[derive(Debug, Clone, PartialEq)]
pub struct EventSequence {
    body_events: Vec<Vec<f64>>,
    target_times: Vec<f64>,
    horizon: f64,
}

impl EventSequence {
    /// Builds a validated sequence. `body_events[j]` holds the times of body
    /// column `j`; every list must be strictly increasing and within `[0, horizon]`.
    pub fn new(body_events: Vec<Vec<f64>>, target_times: Vec<f64>, horizon: f64) -> Result<Self> {
        if !horizon.is_finite() || horizon <= 0.0 {
            return Err(Error::validation(format!("horizon {horizon} must be positive and finite")));
        }
        for (j, times) in body_events.iter().enumerate() {
            check_times(times, horizon).map_err(|m| Error::validation(format!("body column {j}: {m}")))?;
        }
        if target_times.is_empty() {
            return Err(Error::validation("empty target list"));
        }
        check_times(&target_times, horizon).map_err(|m| Error::validation(format!("target: {m}")))?;
        Ok(EventSequence {
            body_events,
            target_times,
            horizon,
        })
    }

    pub fn body_events(&self) -> &[Vec<f64>] {
        &self.body_events
    }

    pub fn predicate_times(&self, column: usize) -> Option<&[f64]> {
        self.body_events.get(column).map(Vec::as_slice)
    }

    pub fn target_times(&self) -> &[f64] {
        &self.target_times
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn body_count(&self) -> usize {
        self.body_events.len()
    }

    /// Start of the inter-event interval ending at target event `i`.
    pub fn interval_start(&self, i: usize) -> f64 {
        if i == 0 {
            0.0
        } else {
            self.target_times[i - 1]
        }
    }

    /// Largest event time of `column` strictly before `t`.
    pub fn last_occurrence_before(&self, column: usize, t: f64) -> Result<Option<f64>> {
        let times = self.predicate_times(column).ok_or(Error::PredicateIndex(column))?;
        Ok(last_before(times, t))
    }

    /// Copy holding the same body history but only the first `n` target events.
    pub fn truncated(&self, n: usize) -> Result<Self> {
        EventSequence::new(
            self.body_events.clone(),
            self.target_times[..n.min(self.target_times.len())].to_vec(),
            self.horizon,
        )
    }
}

/// Binary search for the last element `< t` of a sorted slice.
pub fn last_before(times: &[f64], t: f64) -> Option<f64> {
    let idx = times.partition_point(|&x| x < t);
    if idx == 0 {
        None
    } else {
        Some(times[idx - 1])
    }
}

fn check_times(times: &[f64], horizon: f64) -> std::result::Result<(), String> {
    for (k, &t) in times.iter().enumerate() {
        if !t.is_finite() || t < 0.0 {
            return Err(format!("time {t} is negative or non-finite"));
        }
        if t > horizon {
            return Err(format!("time {t} exceeds horizon {horizon}"));
        }
        if k > 0 && times[k - 1] >= t {
            return Err(format!("times not strictly increasing at position {k}"));
        }
    }
    Ok(())
}

/// How ingestion treats unsorted or duplicated time lists.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LoadMode {
    /// Reject unsorted input.
    #[default]
    Strict,
    /// Sort (and de-duplicate) with a warning.
    Lenient,
}

#[derive(Debug, Serialize, Deserialize)]
struct SequenceRecord {
    body: BTreeMap<String, Vec<f64>>,
    target: Vec<f64>,
    horizon: f64,
}

fn normalize(times: &mut Vec<f64>, mode: LoadMode, what: &str, line: usize) -> Result<()> {
    let sorted = times.windows(2).all(|w| w[0] < w[1]);
    if sorted {
        return Ok(());
    }
    match mode {
        LoadMode::Strict => Err(Error::Validation {
            line: Some(line),
            message: format!("{what}: times not strictly increasing"),
        }),
        LoadMode::Lenient => {
            if times.iter().any(|t| t.is_nan()) {
                return Err(Error::Validation {
                    line: Some(line),
                    message: format!("{what}: NaN time"),
                });
            }
            log::warn!("line {line}: {what}: times unsorted, sorting");
            times.sort_by(f64::total_cmp);
            times.dedup();
            Ok(())
        }
    }
}

/// Parses one JSONL record against the catalog.
pub fn parse_sequence(text: &str, catalog: &PredicateCatalog, mode: LoadMode, line: usize) -> Result<EventSequence> {
    let record: SequenceRecord = serde_json::from_str(text).map_err(|e| Error::Validation {
        line: Some(line),
        message: format!("malformed record: {e}"),
    })?;
    let mut body = vec![Vec::new(); catalog.body_count()];
    for (name, mut times) in record.body {
        let column = catalog.body_index(&name).ok_or_else(|| Error::Validation {
            line: Some(line),
            message: format!("unknown predicate `{name}`"),
        })?;
        normalize(&mut times, mode, &name, line)?;
        body[column] = times;
    }
    let mut target = record.target;
    normalize(&mut target, mode, "target", line)?;
    EventSequence::new(body, target, record.horizon).map_err(|e| match e {
        Error::Validation { message, .. } => Error::Validation {
            line: Some(line),
            message,
        },
        other => other,
    })
}

/// Reads and validates a JSONL corpus. Blank lines are skipped.
pub fn load_sequences(path: &Path, catalog: &PredicateCatalog, mode: LoadMode) -> Result<Vec<EventSequence>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (k, line) in BufReader::new(file).lines().enumerate() {
        let line_no = k + 1;
        let text = line.map_err(|e| Error::io(path, e))?;
        if text.trim().is_empty() {
            continue;
        }
        let seq = parse_sequence(&text, catalog, mode, line_no).map_err(|e| match e {
            Error::Validation { line, message } if message.starts_with("malformed record") => Error::Parse {
                path: path.to_path_buf(),
                line: line.unwrap_or(line_no),
                message,
            },
            other => other,
        })?;
        out.push(seq);
    }
    Ok(out)
}

/// Serializes one sequence as a JSONL record (no trailing newline).
pub fn sequence_to_json(seq: &EventSequence, catalog: &PredicateCatalog) -> String {
    let body = seq
        .body_events
        .iter()
        .enumerate()
        .filter(|(_, t)| !t.is_empty())
        .map(|(j, t)| (catalog.body_name(j).unwrap_or_default().to_owned(), t.clone()))
        .collect();
    let record = SequenceRecord {
        body,
        target: seq.target_times.clone(),
        horizon: seq.horizon,
    };
    serde_json::to_string(&record).expect("sequence record serializes")
}

pub fn save_sequences(path: &Path, catalog: &PredicateCatalog, seqs: &[EventSequence]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for seq in seqs {
        writeln!(w, "{}", sequence_to_json(seq, catalog)).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
