//! CSV and JSON file formats.
//!
//! Cohorts live in a directory holding `longitudinal.csv`
//! (`subject_id,time,value`) and `survival.csv`
//! (`subject_id,observed_time,event,<covariates...>`, `event` in `{0, 1}`).
//! Reals are written in shortest round-trip form, so loading an emitted
//! cohort reproduces every value bit for bit.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use jdp_core::dataset::{Cohort, DataError, LongitudinalRecord, SurvivalRecord};
use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

pub const LONGITUDINAL_FILE: &str = "longitudinal.csv";
pub const SURVIVAL_FILE: &str = "survival.csv";

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: row {row}, column {column}: {message}")]
    Parse { path: PathBuf, row: u64, column: String, message: String },
    #[error("{path}: bad header: {message}")]
    Header { path: PathBuf, message: String },
    #[error("{path}: line {line}, column {column}: {message}")]
    Json { path: PathBuf, line: usize, column: usize, message: String },
    #[error(transparent)]
    Data(#[from] DataError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io { path: path.to_path_buf(), source }
}

fn csv_err(path: &Path, e: csv::Error) -> IoError {
    let row = e.position().map(|p| p.line()).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(source) => IoError::Io { path: path.to_path_buf(), source },
        kind => IoError::Parse { path: path.to_path_buf(), row, column: String::new(), message: format!("{kind:?}") },
    }
}

/// Formats a real in shortest round-trip form.
pub fn fmt_real(x: f64) -> String {
    format!("{x}")
}

fn parse_real(path: &Path, row: u64, column: &str, raw: &str) -> Result<f64, IoError> {
    raw.trim().parse::<f64>().map_err(|e| IoError::Parse {
        path: path.to_path_buf(),
        row,
        column: column.to_string(),
        message: format!("{raw:?} is not a number ({e})"),
    })
}

fn parse_event(path: &Path, row: u64, raw: &str) -> Result<bool, IoError> {
    match raw.trim() {
        "0" => Ok(false),
        "1" => Ok(true),
        other => Err(IoError::Parse {
            path: path.to_path_buf(),
            row,
            column: "event".into(),
            message: format!("{other:?} is not 0 or 1"),
        }),
    }
}

fn open_csv(path: &Path) -> Result<csv::Reader<fs::File>, IoError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    Ok(csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::Headers).from_reader(file))
}

fn expect_header(path: &Path, found: &csv::StringRecord, expected: &[&str]) -> Result<(), IoError> {
    let ok = found.len() >= expected.len() && expected.iter().zip(found.iter()).all(|(e, f)| e == &f);
    if ok {
        Ok(())
    } else {
        Err(IoError::Header {
            path: path.to_path_buf(),
            message: format!("expected leading columns {expected:?}, found {:?}", found.iter().collect::<Vec<_>>()),
        })
    }
}

pub fn read_longitudinal(path: &Path) -> Result<Vec<LongitudinalRecord>, IoError> {
    let mut rdr = open_csv(path)?;
    let header = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    expect_header(path, &header, &["subject_id", "time", "value"])?;
    if header.len() != 3 {
        return Err(IoError::Header { path: path.to_path_buf(), message: "expected exactly 3 columns".into() });
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let row = rec.position().map(|p| p.line()).unwrap_or(0);
        out.push(LongitudinalRecord {
            subject_id: rec[0].to_string(),
            time: parse_real(path, row, "time", &rec[1])?,
            value: parse_real(path, row, "value", &rec[2])?,
        });
    }
    Ok(out)
}

/// Survival records and the covariate names from the header.
pub fn read_survival(path: &Path) -> Result<(Vec<String>, Vec<SurvivalRecord>), IoError> {
    let mut rdr = open_csv(path)?;
    let header = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    expect_header(path, &header, &["subject_id", "observed_time", "event"])?;
    let names: Vec<String> = header.iter().skip(3).map(str::to_string).collect();
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let row = rec.position().map(|p| p.line()).unwrap_or(0);
        let covariates = names
            .iter()
            .enumerate()
            .map(|(j, name)| parse_real(path, row, name, &rec[3 + j]))
            .collect::<Result<Vec<_>, _>>()?;
        out.push(SurvivalRecord {
            subject_id: rec[0].to_string(),
            observed_time: parse_real(path, row, "observed_time", &rec[1])?,
            event: parse_event(path, row, &rec[2])?,
            covariates,
        });
    }
    Ok((names, out))
}

pub fn load_cohort(longitudinal: &Path, survival: &Path) -> Result<Cohort, IoError> {
    let (names, surv) = read_survival(survival)?;
    let long = read_longitudinal(longitudinal)?;
    Ok(Cohort::new(names, surv, long)?)
}

pub fn load_cohort_dir(dir: &Path) -> Result<Cohort, IoError> {
    load_cohort(&dir.join(LONGITUDINAL_FILE), &dir.join(SURVIVAL_FILE))
}

fn to_csv_bytes(header: &[String], rows: impl Iterator<Item = Vec<String>>) -> Vec<u8> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(header).expect("write to memory");
    for r in rows {
        w.write_record(&r).expect("write to memory");
    }
    w.into_inner().expect("flush to memory")
}

/// `(longitudinal.csv, survival.csv)` contents.
pub fn cohort_csv(cohort: &Cohort) -> (Vec<u8>, Vec<u8>) {
    let (surv, long) = cohort.to_records();
    let long_header: Vec<String> = ["subject_id", "time", "value"].iter().map(|s| s.to_string()).collect();
    let long_bytes = to_csv_bytes(
        &long_header,
        long.into_iter().map(|r| vec![r.subject_id, fmt_real(r.time), fmt_real(r.value)]),
    );
    let mut surv_header: Vec<String> = ["subject_id", "observed_time", "event"].iter().map(|s| s.to_string()).collect();
    surv_header.extend(cohort.covariate_names().iter().cloned());
    let surv_bytes = to_csv_bytes(
        &surv_header,
        surv.into_iter().map(|r| {
            let mut row = vec![r.subject_id, fmt_real(r.observed_time), if r.event { "1" } else { "0" }.to_string()];
            row.extend(r.covariates.into_iter().map(fmt_real));
            row
        }),
    );
    (long_bytes, surv_bytes)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_json(path, &text)
}

pub fn parse_json<T: DeserializeOwned>(path: &Path, text: &str) -> Result<T, IoError> {
    serde_json::from_str(text).map_err(|e| IoError::Json {
        path: path.to_path_buf(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

pub fn json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut v = serde_json::to_vec_pretty(value).expect("serializable value");
    v.push(b'\n');
    v
}

/// Files written together: nothing reaches its final path until every file
/// has been staged, and each lands by an atomic rename.
#[derive(Debug, Default)]
pub struct OutputSet {
    files: Vec<(PathBuf, Vec<u8>)>,
}

impl OutputSet {
    pub fn new() -> Self {
        OutputSet::default()
    }

    pub fn add(&mut self, path: PathBuf, bytes: Vec<u8>) {
        self.files.push((path, bytes));
    }

    pub fn paths(&self) -> impl Iterator<Item = &Path> {
        self.files.iter().map(|(p, _)| p.as_path())
    }

    pub fn commit(self) -> Result<Vec<PathBuf>, IoError> {
        let mut staged = Vec::with_capacity(self.files.len());
        for (path, bytes) in &self.files {
            let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
            fs::create_dir_all(dir).map_err(io_err(dir))?;
            let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err(dir))?;
            tmp.write_all(bytes).map_err(io_err(path))?;
            tmp.as_file().sync_all().map_err(io_err(path))?;
            staged.push((tmp, path.clone()));
        }
        let mut written = Vec::with_capacity(staged.len());
        for (tmp, path) in staged {
            tmp.persist(&path).map_err(|e| IoError::Io { path: path.clone(), source: e.error })?;
            written.push(path);
        }
        Ok(written)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn loads_a_small_cohort() {
        let dir = tempfile::tempdir().unwrap();
        let l = write(
            dir.path(),
            "l.csv",
            "subject_id,time,value\nA,0,1\nA,0.5,1.2\nA,1,1.1\nB,0,2\nB,1,2.5\nB,2,2.2\nC,0,0.3\nC,0.5,0.1\nC,1.5,0.4\n",
        );
        let s = write(dir.path(), "s.csv", "subject_id,observed_time,event,w1,w2\nA,4,1,0.1,0\nB,5,0,-0.2,1\nC,2,1,0.5,1\n");
        let c = load_cohort(&l, &s).unwrap();
        assert_eq!((c.len(), c.n_measurements()), (3, 9));
        assert_eq!(c.covariate_names(), ["w1", "w2"]);
    }

    #[test]
    fn reports_integrity_and_parse_errors() {
        let dir = tempfile::tempdir().unwrap();
        let s = write(dir.path(), "s.csv", "subject_id,observed_time,event,w\nA,4,1,0\n");
        let l = write(dir.path(), "l.csv", "subject_id,time,value\nA,0,1\nX9,0,1\n");
        let e = load_cohort(&l, &s).unwrap_err().to_string();
        assert!(e.contains("X9"), "{e}");

        let l = write(dir.path(), "l.csv", "subject_id,time,value\nA,5.0,1\n");
        assert!(matches!(load_cohort(&l, &s), Err(IoError::Data(DataError::Integrity { .. }))));

        let l = write(dir.path(), "l.csv", "subject_id,time,value\nA,0,1\nA,abc,2\n");
        match load_cohort(&l, &s) {
            Err(IoError::Parse { row, column, .. }) => assert_eq!((row, column.as_str()), (3, "time")),
            other => panic!("{other:?}"),
        }
        let bad_event = write(dir.path(), "s2.csv", "subject_id,observed_time,event,w\nA,4,2,0\n");
        assert!(matches!(read_survival(&bad_event), Err(IoError::Parse { .. })));
        let bad_header = write(dir.path(), "l2.csv", "id,time,value\nA,0,1\n");
        assert!(matches!(read_longitudinal(&bad_header), Err(IoError::Header { .. })));
    }

    #[test]
    fn malformed_json_reports_position() {
        let e = parse_json::<serde_json::Value>(Path::new("cfg.json"), "{\n  \"n\": 10,\n  oops\n}").unwrap_err();
        match e {
            IoError::Json { line, column, .. } => assert_eq!((line, column), (3, 3)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn output_set_writes_all_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = OutputSet::new();
        out.add(dir.path().join("a/x.txt"), b"x".to_vec());
        out.add(dir.path().join("y.txt"), b"y".to_vec());
        let written = out.commit().unwrap();
        assert_eq!(written.len(), 2);
        assert_eq!(fs::read(dir.path().join("a/x.txt")).unwrap(), b"x");
        let leftovers = fs::read_dir(dir.path()).unwrap().count();
        assert_eq!(leftovers, 2);
    }
}
