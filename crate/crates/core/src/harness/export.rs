use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::{CoverageTable, RunRecord};
use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct ExportFiles {
    pub coverage: PathBuf,
    pub lengths: PathBuf,
    pub regret: PathBuf,
    pub summary: PathBuf,
}

#[derive(Serialize)]
struct Summary<'a, C: Serialize, D: Serialize> {
    schema_version: u32,
    config: &'a C,
    successes: &'a std::collections::BTreeMap<String, usize>,
    failures: Vec<FailureEntry<'a>>,
    diagnostics: &'a D,
}

#[derive(Serialize)]
struct FailureEntry<'a> {
    scenario: &'a str,
    rep: usize,
    message: &'a str,
}

/// Files are staged under a temporary name and renamed once all of them
/// are written, so a failure leaves none of the targets behind.
pub(crate) struct Staged {
    pending: Vec<(PathBuf, PathBuf)>,
}

impl Staged {
    pub(crate) fn new() -> Self {
        Staged { pending: Vec::new() }
    }

    pub(crate) fn add(&mut self, dir: &Path, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let target = dir.join(name);
        let tmp = dir.join(format!(".{name}.partial"));
        let write = || -> std::io::Result<()> {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(bytes)?;
            f.sync_all()
        };
        if let Err(e) = write() {
            let _ = fs::remove_file(&tmp);
            self.abort();
            return Err(Error::io(&target, e));
        }
        self.pending.push((tmp, target.clone()));
        Ok(target)
    }

    pub(crate) fn commit(mut self) -> Result<()> {
        for (tmp, target) in std::mem::take(&mut self.pending) {
            fs::rename(&tmp, &target).map_err(|e| Error::io(&target, e))?;
        }
        Ok(())
    }

    fn abort(&mut self) {
        for (tmp, _) in self.pending.drain(..) {
            let _ = fs::remove_file(tmp);
        }
    }
}

impl Drop for Staged {
    fn drop(&mut self) {
        self.abort();
    }
}

pub(crate) fn csv_bytes<F>(header: &[&str], rows: F) -> Result<Vec<u8>>
where
    F: FnOnce(&mut csv::Writer<&mut Vec<u8>>) -> Result<()>,
{
    let mut buf = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(header)?;
        rows(&mut w)?;
        w.flush().map_err(|e| Error::io("csv buffer", e))?;
    }
    Ok(buf)
}

pub(crate) fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Writes coverage.csv, lengths.csv, regret.csv and summary.json into `dir`.
pub fn export<C: Serialize, D: Serialize>(table: &CoverageTable, config: &C, diagnostics: &D, dir: &Path) -> Result<ExportFiles> {
    if table.is_empty() {
        return Err(Error::State("refusing to export an empty table".into()));
    }
    ensure_dir(dir)?;
    let coverage = csv_bytes(&["scenario", "d", "sigma", "arm", "t", "kind", "rate", "se", "n"], |w| {
        for c in &table.coverage {
            w.write_record([
                c.scenario.clone(),
                c.d.to_string(),
                c.sigma.to_string(),
                c.arm.clone(),
                c.t.to_string(),
                c.kind.clone(),
                c.rate.to_string(),
                c.se.to_string(),
                c.n.to_string(),
            ])?;
        }
        Ok(())
    })?;
    let lengths = csv_bytes(&["scenario", "arm", "t", "method", "mean_length", "se", "n"], |w| {
        for c in &table.lengths {
            w.write_record([
                c.scenario.clone(),
                c.arm.clone(),
                c.t.to_string(),
                c.method.clone(),
                c.mean_length.to_string(),
                c.se.to_string(),
                c.n.to_string(),
            ])?;
        }
        Ok(())
    })?;
    let regret = csv_bytes(&["scenario", "t", "mean_avg_regret", "lo", "hi", "n"], |w| {
        for c in &table.regret {
            w.write_record([
                c.scenario.clone(),
                c.t.to_string(),
                c.mean_avg_regret.to_string(),
                c.lo.to_string(),
                c.hi.to_string(),
                c.n.to_string(),
            ])?;
        }
        Ok(())
    })?;
    let summary = Summary {
        schema_version: SCHEMA_VERSION,
        config,
        successes: &table.successes,
        failures: table
            .failures
            .iter()
            .map(|(s, r, m)| FailureEntry {
                scenario: s,
                rep: *r,
                message: m,
            })
            .collect(),
        diagnostics,
    };
    let mut json = serde_json::to_vec_pretty(&summary)?;
    json.push(b'\n');

    let mut staged = Staged::new();
    let files = ExportFiles {
        coverage: staged.add(dir, "coverage.csv", &coverage)?,
        lengths: staged.add(dir, "lengths.csv", &lengths)?,
        regret: staged.add(dir, "regret.csv", &regret)?,
        summary: staged.add(dir, "summary.json", &json)?,
    };
    staged.commit()?;
    Ok(files)
}

/// Per-replication tables for one scenario: `directional_<id>.csv`,
/// `pointwise_<id>.csv` and, for records that kept their log,
/// `audit_<id>_rep<r>.csv`.
pub fn write_run_tables(dir: &Path, scenario: &str, records: &[RunRecord]) -> Result<Vec<PathBuf>> {
    ensure_dir(dir)?;
    let directional = csv_bytes(&["rep", "arm", "t", "coord", "center", "lo", "hi", "covered"], |w| {
        for r in records {
            for m in &r.directional {
                w.write_record([
                    m.rep.to_string(),
                    m.arm.to_string(),
                    m.t.to_string(),
                    m.coord.to_string(),
                    m.center.to_string(),
                    m.lo.to_string(),
                    m.hi.to_string(),
                    m.covered.to_string(),
                ])?;
            }
        }
        Ok(())
    })?;
    let pointwise = csv_bytes(
        &["rep", "arm", "t", "method", "u", "center", "lo", "hi", "truth", "covered", "length"],
        |w| {
            for r in records {
                for p in &r.pointwise {
                    w.write_record([
                        p.rep.to_string(),
                        p.arm.to_string(),
                        p.t.to_string(),
                        p.method.to_string(),
                        p.u.to_string(),
                        p.center.to_string(),
                        p.lo.to_string(),
                        p.hi.to_string(),
                        p.truth.to_string(),
                        p.covered.to_string(),
                        p.length.to_string(),
                    ])?;
                }
            }
            Ok(())
        },
    )?;
    let mut staged = Staged::new();
    let mut paths = vec![
        staged.add(dir, &format!("directional_{scenario}.csv"), &directional)?,
        staged.add(dir, &format!("pointwise_{scenario}.csv"), &pointwise)?,
    ];
    for r in records {
        if let Some(log) = &r.log {
            let mut buf = Vec::new();
            crate::log::write_log(&mut buf, log)?;
            paths.push(staged.add(dir, &format!("audit_{scenario}_rep{}.csv", r.rep), &buf)?);
        }
    }
    staged.commit()?;
    Ok(paths)
}
