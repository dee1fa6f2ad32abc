//! Audit log of policy rounds: `t,x0..x{d−1},greedy_arm,pulled_arm,
//! propensity,reward,epsilon`. Floats are written in shortest round-trip
//! form, so a reload reproduces every value bit for bit.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::policy::RoundRecord;

const TAIL: [&str; 5] = ["greedy_arm", "pulled_arm", "propensity", "reward", "epsilon"];

pub fn header(d: usize) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    h.extend((0..d).map(|j| format!("x{j}")));
    h.extend(TAIL.iter().map(|s| s.to_string()));
    h
}

pub fn write_log<W: Write>(out: W, records: &[RoundRecord]) -> Result<()> {
    let d = records.first().map_or(0, |r| r.x.len());
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header(d))?;
    for r in records {
        if r.x.len() != d {
            return Err(Error::Schema(format!("round {} has {} coordinates, expected {d}", r.t, r.x.len())));
        }
        let mut row = Vec::with_capacity(d + 6);
        row.push(r.t.to_string());
        row.extend(r.x.iter().map(|v| v.to_string()));
        row.push(r.greedy_arm.to_string());
        row.push(r.pulled_arm.to_string());
        row.push(r.propensity.to_string());
        row.push(r.reward.to_string());
        row.push(r.epsilon.to_string());
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io("audit log", e))?;
    Ok(())
}

pub fn read_log<R: Read>(input: R) -> Result<Vec<RoundRecord>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if headers.len() < 7 {
        return Err(Error::Schema(format!(
            "audit log needs at least 7 columns, found {}",
            headers.len()
        )));
    }
    let d = headers.len() - 6;
    for (i, (got, want)) in headers.iter().zip(header(d)).enumerate() {
        if *got != want {
            return Err(Error::Schema(format!("column {i}: expected '{want}', found '{got}'")));
        }
    }
    let names = header(d);
    let mut out = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let field = |i: usize| -> Result<&str> {
            rec.get(i)
                .ok_or_else(|| Error::Schema(format!("row {}: missing column '{}'", line + 2, names[i])))
        };
        let num = |i: usize| -> Result<f64> {
            let raw = field(i)?;
            raw.parse()
                .map_err(|_| Error::Schema(format!("row {}, column '{}': '{raw}' is not a number", line + 2, names[i])))
        };
        let int = |i: usize| -> Result<usize> {
            let raw = field(i)?;
            raw.parse()
                .map_err(|_| Error::Schema(format!("row {}, column '{}': '{raw}' is not an integer", line + 2, names[i])))
        };
        out.push(RoundRecord {
            t: int(0)?,
            x: (1..=d).map(num).collect::<Result<_>>()?,
            greedy_arm: int(d + 1)?,
            pulled_arm: int(d + 2)?,
            propensity: num(d + 3)?,
            reward: num(d + 4)?,
            epsilon: num(d + 5)?,
        });
    }
    for (i, r) in out.iter().enumerate() {
        if r.t != i + 1 {
            return Err(Error::Schema(format!("column 't': row {} holds round {}, expected {}", i + 2, r.t, i + 1)));
        }
    }
    Ok(out)
}

pub fn read_log_file(path: &Path) -> Result<Vec<RoundRecord>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_log(std::io::BufReader::new(f))
}
