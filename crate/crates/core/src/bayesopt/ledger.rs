//! CSV ledger of a selection run. Wall-clock times go to a sidecar file so
//! the ledger itself is reproducible byte for byte.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use super::space::ConfigSpace;
use super::{Acquisition, TraceEntry};
use crate::error::{Error, Result};

fn join(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";")
}

fn split(s: &str) -> Result<Vec<f64>> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(';')
        .map(|t| t.parse::<f64>().map_err(|e| Error::Corruption(format!("bad number '{t}': {e}"))))
        .collect()
}

fn csv_err(e: csv::Error) -> Error {
    Error::Corruption(format!("ledger: {e}"))
}

pub fn timing_path(ledger: &Path) -> PathBuf {
    let mut s = ledger.as_os_str().to_owned();
    s.push(".timing.csv");
    PathBuf::from(s)
}

pub fn header(space: &ConfigSpace) -> Vec<String> {
    let mut h: Vec<String> = ["iteration", "acquisition", "status", "mean", "fold_maes"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    h.extend(space.dimensions.iter().map(|d| d.name.clone()));
    h.push("encoded".into());
    h.push("error".into());
    h
}

fn row(space: &ConfigSpace, e: &TraceEntry) -> Vec<String> {
    let mut r = vec![
        e.iteration.to_string(),
        e.acquisition.as_str().to_string(),
        if e.succeeded() { "ok" } else { "failed" }.to_string(),
        e.mean.to_string(),
        join(&e.fold_maes),
    ];
    r.extend(space.dimensions.iter().zip(&e.config).map(|(d, &i)| d.values[i].to_string()));
    r.push(join(&e.encoded));
    r.push(e.error.clone().unwrap_or_default());
    r
}

/// Appends trace entries to a ledger and its timing sidecar, writing the
/// header when the ledger is new.
pub struct LedgerWriter {
    space: ConfigSpace,
    csv: csv::Writer<File>,
    timing: File,
}

impl LedgerWriter {
    pub fn open(path: &Path, space: &ConfigSpace) -> Result<Self> {
        let fresh = !path.exists() || std::fs::metadata(path)?.len() == 0;
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        let mut csv = csv::WriterBuilder::new().has_headers(false).from_writer(file);
        let tpath = timing_path(path);
        let tfresh = !tpath.exists();
        let mut timing = OpenOptions::new().create(true).append(true).open(&tpath)?;
        if fresh {
            csv.write_record(header(space)).map_err(csv_err)?;
            csv.flush()?;
        }
        if tfresh {
            writeln!(timing, "iteration,wall_time_s")?;
        }
        Ok(Self {
            space: space.clone(),
            csv,
            timing,
        })
    }

    pub fn append(&mut self, e: &TraceEntry) -> Result<()> {
        self.csv.write_record(row(&self.space, e)).map_err(csv_err)?;
        self.csv.flush()?;
        writeln!(self.timing, "{},{}", e.iteration, e.wall_time_s)?;
        Ok(())
    }
}

/// Write a complete trace, replacing any existing ledger.
pub fn write_ledger(path: &Path, space: &ConfigSpace, trace: &[TraceEntry]) -> Result<()> {
    for p in [path.to_path_buf(), timing_path(path)] {
        if p.exists() {
            std::fs::remove_file(p)?;
        }
    }
    let mut w = LedgerWriter::open(path, space)?;
    for e in trace {
        w.append(e)?;
    }
    Ok(())
}

/// Read a ledger back into trace entries. Wall times come from the sidecar
/// when present and are zero otherwise.
pub fn read_ledger(path: &Path, space: &ConfigSpace) -> Result<Vec<TraceEntry>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(path).map_err(csv_err)?;
    let expected = header(space);
    let got: Vec<String> = rdr.headers().map_err(csv_err)?.iter().map(String::from).collect();
    if got != expected {
        return Err(Error::Contract(format!(
            "ledger columns {got:?} do not match the search space {expected:?}"
        )));
    }
    let n_dims = space.n_dims();
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let field = |i: usize| rec.get(i).unwrap_or("");
        let iteration = field(0)
            .parse()
            .map_err(|_| Error::Corruption(format!("bad iteration '{}'", field(0))))?;
        let acquisition = Acquisition::parse(field(1))
            .ok_or_else(|| Error::Corruption(format!("unknown acquisition '{}'", field(1))))?;
        let mean: f64 = field(3)
            .parse()
            .map_err(|_| Error::Corruption(format!("bad mean '{}'", field(3))))?;
        let fold_maes = split(field(4))?;
        let values = (0..n_dims)
            .map(|k| serde_json::from_str(field(5 + k)).map_err(Error::from))
            .collect::<Result<Vec<_>>>()?;
        let config = space.lookup(&values)?;
        let encoded = split(field(5 + n_dims))?;
        let err = field(6 + n_dims);
        let error = if field(2) == "ok" {
            None
        } else {
            Some(if err.is_empty() { "failed".to_string() } else { err.to_string() })
        };
        out.push(TraceEntry {
            iteration,
            acquisition,
            config,
            encoded,
            fold_maes,
            mean,
            error,
            wall_time_s: 0.0,
        });
    }
    let tpath = timing_path(path);
    if tpath.exists() {
        let mut t = csv::Reader::from_path(&tpath).map_err(csv_err)?;
        for rec in t.records() {
            let rec = rec.map_err(csv_err)?;
            if let (Some(Ok(i)), Some(Ok(w))) = (rec.get(0).map(str::parse::<usize>), rec.get(1).map(str::parse::<f64>)) {
                if let Some(e) = out.iter_mut().find(|e| e.iteration == i) {
                    e.wall_time_s = w;
                }
            }
        }
    }
    Ok(out)
}
