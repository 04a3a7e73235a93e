//! File formats: long and wide trajectory CSV, component CSV, covariate
//! CSV, partition JSON and plain result tables.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::path::Path;

use serde::Serialize;
use trajcluster_core::data_model::{Arm, Covariates, Partition, Trajectory, TrajectorySet};
use trajcluster_core::preprocess::{ComponentRecord, ComponentTable};

use crate::error::{CliError, CliResult};
use crate::manifest::RunManifest;

pub const LONG_COLUMNS: [&str; 4] = ["subject_id", "arm", "time_months", "value"];

/// Result of reading a trajectory file.
#[derive(Debug)]
pub struct Ingested {
    pub set: TrajectorySet,
    pub rows: usize,
}

#[derive(Clone, Debug, Default)]
pub struct ReadOptions {
    /// Extra columns kept as per-subject covariates.
    pub covariates: Vec<String>,
    /// Visit schedule; defaults to every distinct time in the file.
    pub schedule: Option<Vec<f64>>,
}

fn open_reader(path: &Path) -> CliResult<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).flexible(false).from_reader(file))
}

fn csv_error(path: &Path, e: csv::Error) -> CliError {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(source) => CliError::io(path, source),
        kind => CliError::Format {
            path: path.display().to_string(),
            line,
            message: format!("{kind:?}"),
        },
    }
}

fn format_error(path: &Path, line: u64, message: impl Into<String>) -> CliError {
    CliError::Format {
        path: path.display().to_string(),
        line,
        message: message.into(),
    }
}

fn header_index(path: &Path, headers: &csv::StringRecord, name: &str) -> CliResult<usize> {
    headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| format_error(path, 1, format!("missing column `{name}`")))
}

fn parse_number(path: &Path, line: u64, what: &str, field: &str) -> CliResult<f64> {
    match field.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(format_error(path, line, format!("{what} `{field}` is not a finite number"))),
    }
}

/// Per-subject rows collected in order of first appearance.
struct SubjectRows {
    order: Vec<String>,
    arms: HashMap<String, String>,
    visits: HashMap<String, Vec<(f64, Option<f64>, u64)>>,
    covariates: HashMap<String, Vec<Option<String>>>,
}

impl SubjectRows {
    fn new() -> Self {
        SubjectRows {
            order: Vec::new(),
            arms: HashMap::new(),
            visits: HashMap::new(),
            covariates: HashMap::new(),
        }
    }

    fn subject(&mut self, path: &Path, line: u64, id: &str, arm: &str, ncov: usize) -> CliResult<()> {
        if id.is_empty() {
            return Err(format_error(path, line, "empty subject_id"));
        }
        match self.arms.get(id) {
            Some(a) if a != arm => {
                return Err(format_error(path, line, format!("subject `{id}` listed under arms `{a}` and `{arm}`")));
            }
            Some(_) => {}
            None => {
                self.order.push(id.to_string());
                self.arms.insert(id.to_string(), arm.to_string());
                self.covariates.insert(id.to_string(), vec![None; ncov]);
            }
        }
        Ok(())
    }

    fn covariate(&mut self, id: &str, col: usize, value: &str) {
        let slot = &mut self.covariates.get_mut(id).expect("subject registered")[col];
        if slot.is_none() && !value.is_empty() {
            *slot = Some(value.to_string());
        }
    }

    fn finish(mut self, path: &Path, names: Vec<String>, schedule: Option<Vec<f64>>) -> CliResult<TrajectorySet> {
        let schedule = match schedule {
            Some(s) => s,
            None => {
                let mut all: Vec<f64> = self.visits.values().flatten().map(|v| v.0).collect();
                all.sort_by(f64::total_cmp);
                all.dedup();
                all
            }
        };
        let mut trajectories = Vec::with_capacity(self.order.len());
        for id in &self.order {
            let mut visits = self.visits.remove(id).unwrap_or_default();
            visits.sort_by(|a, b| a.0.total_cmp(&b.0));
            if let Some(w) = visits.windows(2).find(|w| w[0].0 == w[1].0) {
                return Err(format_error(path, w[1].2, format!("subject `{id}` has two rows at time {}", w[1].0)));
            }
            trajectories.push(Trajectory::new(
                id.clone(),
                Arm::new(self.arms[id].clone()),
                visits.iter().map(|v| v.0).collect(),
                visits.iter().map(|v| v.1).collect(),
            ));
        }
        let covariates = Covariates {
            names,
            rows: self.covariates,
        };
        Ok(TrajectorySet::validate(schedule, trajectories, covariates)?)
    }
}

fn covariate_columns(path: &Path, headers: &csv::StringRecord, names: &[String]) -> CliResult<Vec<usize>> {
    names
        .iter()
        .map(|n| {
            headers
                .iter()
                .position(|h| h == n)
                .ok_or_else(|| CliError::Data(format!("{}: unknown covariate column `{n}`", path.display())))
        })
        .collect()
}

/// Reads one row per subject-visit with columns `subject_id, arm,
/// time_months, value`. An empty value is a missing measurement.
pub fn ingest_long_csv(path: &Path, opts: &ReadOptions) -> CliResult<Ingested> {
    let mut reader = open_reader(path)?;
    let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    let cols: Vec<usize> = LONG_COLUMNS
        .iter()
        .map(|c| header_index(path, &headers, c))
        .collect::<CliResult<_>>()?;
    let cov_cols = covariate_columns(path, &headers, &opts.covariates)?;
    let mut rows = SubjectRows::new();
    let mut count = 0;
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |i: usize| record.get(cols[i]).unwrap_or("");
        let id = field(0);
        rows.subject(path, line, id, field(1), cov_cols.len())?;
        let time = parse_number(path, line, "time", field(2))?;
        let value = match field(3) {
            "" | "NA" => None,
            v => Some(parse_number(path, line, "value", v)?),
        };
        rows.visits.entry(id.to_string()).or_default().push((time, value, line));
        for (c, &col) in cov_cols.iter().enumerate() {
            rows.covariate(id, c, record.get(col).unwrap_or(""));
        }
        count += 1;
    }
    let set = rows.finish(path, opts.covariates.clone(), opts.schedule.clone())?;
    Ok(Ingested { set, rows: count })
}

/// Parses a wide-format time header such as `6`, `t6`, `m6` or `month_6`.
fn wide_time(header: &str) -> Option<f64> {
    let digits = header.trim_start_matches(|c: char| c.is_ascii_alphabetic() || c == '_');
    digits.parse::<f64>().ok().filter(|t| t.is_finite())
}

/// Reads one row per subject: `subject_id, arm`, then one column per visit
/// time. Columns that are neither times nor listed covariates are ignored.
pub fn ingest_wide_csv(path: &Path, opts: &ReadOptions) -> CliResult<Ingested> {
    let mut reader = open_reader(path)?;
    let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    let id_col = header_index(path, &headers, "subject_id")?;
    let arm_col = header_index(path, &headers, "arm")?;
    let cov_cols = covariate_columns(path, &headers, &opts.covariates)?;
    let time_cols: Vec<(usize, f64)> = headers
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != id_col && *i != arm_col && !cov_cols.contains(i))
        .filter_map(|(i, h)| wide_time(h).map(|t| (i, t)))
        .collect();
    if time_cols.is_empty() {
        return Err(format_error(path, 1, "no visit-time columns found"));
    }
    let mut rows = SubjectRows::new();
    let mut count = 0;
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map_or(0, |p| p.line());
        let id = record.get(id_col).unwrap_or("");
        if rows.arms.contains_key(id) {
            return Err(format_error(path, line, format!("subject `{id}` appears twice")));
        }
        rows.subject(path, line, id, record.get(arm_col).unwrap_or(""), cov_cols.len())?;
        let mut visits = Vec::with_capacity(time_cols.len());
        for &(col, t) in &time_cols {
            let value = match record.get(col).unwrap_or("") {
                "" | "NA" => None,
                v => Some(parse_number(path, line, "value", v)?),
            };
            visits.push((t, value, line));
        }
        rows.visits.insert(id.to_string(), visits);
        for (c, &col) in cov_cols.iter().enumerate() {
            rows.covariate(id, c, record.get(col).unwrap_or(""));
        }
        count += 1;
    }
    let set = rows.finish(path, opts.covariates.clone(), opts.schedule.clone())?;
    Ok(Ingested { set, rows: count })
}

pub fn ingest(path: &Path, wide: bool, opts: &ReadOptions) -> CliResult<Ingested> {
    if wide {
        ingest_wide_csv(path, opts)
    } else {
        ingest_long_csv(path, opts)
    }
}

/// Shortest text that parses back to the same float.
/// Shortest round-trip text; scientific notation outside `[1e-4, 1e15)`.
pub fn fmt_f64(x: f64) -> String {
    let a = x.abs();
    if a != 0.0 && a.is_finite() && !(1e-4..1e15).contains(&a) {
        format!("{x:e}")
    } else {
        format!("{x}")
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

fn create(path: &Path) -> CliResult<File> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    File::create(path).map_err(|e| CliError::io(path, e))
}

/// Writes a header and rows as CSV.
pub fn write_table(path: &Path, header: &[String], rows: &[Vec<String>]) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    let io = |e: csv::Error| csv_error(path, e);
    w.write_record(header).map_err(io)?;
    for r in rows {
        w.write_record(r).map_err(io)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Long-format export: every scheduled visit of every subject, covariates
/// repeated on each row.
pub fn write_long_csv(path: &Path, set: &TrajectorySet) -> CliResult<()> {
    let cov = set.covariates();
    let mut header: Vec<String> = LONG_COLUMNS.iter().map(|s| s.to_string()).collect();
    header.extend(cov.names.iter().cloned());
    let mut rows = Vec::new();
    for t in set.trajectories() {
        for (time, value) in t.times.iter().zip(&t.values) {
            let mut row = vec![t.subject_id.clone(), t.arm.as_str().to_string(), fmt_f64(*time), fmt_opt(*value)];
            row.extend((0..cov.names.len()).map(|c| cov.get(&t.subject_id, c).unwrap_or("").to_string()));
            rows.push(row);
        }
    }
    write_table(path, &header, &rows)
}

/// Component scores in long format: `subject_id, arm, time_months` and one
/// column per named component.
pub fn read_component_csv(path: &Path, names: &[String], opts: &ReadOptions) -> CliResult<ComponentTable> {
    let mut reader = open_reader(path)?;
    let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    let base: Vec<usize> = LONG_COLUMNS[..3]
        .iter()
        .map(|c| header_index(path, &headers, c))
        .collect::<CliResult<_>>()?;
    let comp: Vec<usize> = names
        .iter()
        .map(|n| {
            headers
                .iter()
                .position(|h| h == n)
                .ok_or_else(|| CliError::Data(format!("{}: unknown component column `{n}`", path.display())))
        })
        .collect::<CliResult<_>>()?;
    let cov_cols = covariate_columns(path, &headers, &opts.covariates)?;
    let mut records = Vec::new();
    let mut cov_rows: HashMap<String, Vec<Option<String>>> = HashMap::new();
    let mut times = BTreeSet::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map_or(0, |p| p.line());
        let get = |i: usize| record.get(i).unwrap_or("");
        let id = get(base[0]).to_string();
        if id.is_empty() {
            return Err(format_error(path, line, "empty subject_id"));
        }
        let time = parse_number(path, line, "time", get(base[2]))?;
        let scores = comp
            .iter()
            .map(|&c| match get(c) {
                "" | "NA" => Ok(None),
                v => parse_number(path, line, "score", v).map(Some),
            })
            .collect::<CliResult<Vec<_>>>()?;
        let slots = cov_rows.entry(id.clone()).or_insert_with(|| vec![None; cov_cols.len()]);
        for (slot, &col) in slots.iter_mut().zip(&cov_cols) {
            if slot.is_none() && !get(col).is_empty() {
                *slot = Some(get(col).to_string());
            }
        }
        times.insert(time.to_bits());
        records.push(ComponentRecord {
            subject_id: id,
            arm: Arm::new(get(base[1])),
            time,
            scores,
        });
    }
    let schedule = opts.schedule.clone().unwrap_or_else(|| {
        let mut s: Vec<f64> = times.into_iter().map(f64::from_bits).collect();
        s.sort_by(f64::total_cmp);
        s
    });
    Ok(ComponentTable {
        schedule,
        names: names.to_vec(),
        records,
        covariates: Covariates {
            names: opts.covariates.clone(),
            rows: cov_rows,
        },
    })
}

/// Per-subject covariates: a `subject_id` column plus any others.
pub fn read_covariates_csv(path: &Path) -> CliResult<Covariates> {
    let mut reader = open_reader(path)?;
    let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    let id_col = header_index(path, &headers, "subject_id")?;
    let names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != id_col)
        .map(|(_, h)| h.to_string())
        .collect();
    let mut rows = HashMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map_or(0, |p| p.line());
        let id = record.get(id_col).unwrap_or("").to_string();
        let values = record
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != id_col)
            .map(|(_, v)| (!v.is_empty() && v != "NA").then(|| v.to_string()))
            .collect();
        if rows.insert(id.clone(), values).is_some() {
            return Err(format_error(path, line, format!("subject `{id}` appears twice")));
        }
    }
    Ok(Covariates { names, rows })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Data(e.to_string()))?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> CliResult<()> {
    use std::io::Write;
    let mut f = create(path)?;
    f.write_all(bytes).map_err(|e| CliError::io(path, e))
}

/// Partition document: `{method, params, groups, manifest}`.
pub fn write_partition(path: &Path, partition: &Partition, manifest: &RunManifest) -> CliResult<()> {
    let mut doc = serde_json::to_value(partition).map_err(|e| CliError::Data(e.to_string()))?;
    let manifest = serde_json::to_value(manifest).map_err(|e| CliError::Data(e.to_string()))?;
    doc.as_object_mut().expect("partition serializes to an object").insert("manifest".into(), manifest);
    write_json(path, &doc)
}

pub fn read_partition(path: &Path) -> CliResult<Partition> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| format_error(path, e.line() as u64, e.to_string()))
}
