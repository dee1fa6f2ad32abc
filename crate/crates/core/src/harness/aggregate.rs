use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::RunRecord;
use crate::error::{Error, Result};
use crate::np_inference::CiMethod;

/// One coverage rate. `arm` is an arm id, `all` for the joint test or
/// `greedy` for intervals taken at each replication's greedy arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageCell {
    pub scenario: String,
    pub d: usize,
    pub sigma: f64,
    pub arm: String,
    pub t: usize,
    pub kind: String,
    pub rate: f64,
    pub se: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthCell {
    pub scenario: String,
    pub arm: String,
    pub t: usize,
    pub method: String,
    pub mean_length: f64,
    pub se: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretCell {
    pub scenario: String,
    pub t: usize,
    pub mean_avg_regret: f64,
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CoverageTable {
    pub coverage: Vec<CoverageCell>,
    pub lengths: Vec<LengthCell>,
    pub regret: Vec<RegretCell>,
    /// (scenario, rep, message) for every failed replication
    pub failures: Vec<(String, usize, String)>,
    /// successful replications per scenario
    pub successes: BTreeMap<String, usize>,
}

impl CoverageTable {
    pub fn is_empty(&self) -> bool {
        self.coverage.is_empty() && self.lengths.is_empty() && self.regret.is_empty()
    }

    pub fn merge(&mut self, other: CoverageTable) {
        self.coverage.extend(other.coverage);
        self.lengths.extend(other.lengths);
        self.regret.extend(other.regret);
        self.failures.extend(other.failures);
        self.successes.extend(other.successes);
    }

    pub fn coverage_rate(&self, scenario: &str, arm: &str, t: usize, kind: &str) -> Option<&CoverageCell> {
        self.coverage
            .iter()
            .find(|c| c.scenario == scenario && c.arm == arm && c.t == t && c.kind == kind)
    }

    pub fn mean_length(&self, scenario: &str, arm: &str, t: usize, method: &str) -> Option<&LengthCell> {
        self.lengths
            .iter()
            .find(|c| c.scenario == scenario && c.arm == arm && c.t == t && c.method == method)
    }

    pub fn regret_at(&self, scenario: &str, t: usize) -> Option<&RegretCell> {
        self.regret.iter().find(|c| c.scenario == scenario && c.t == t)
    }
}

pub const KIND_JOINT: &str = "ellipsoid_joint";
pub const KIND_ELLIPSOID: &str = "ellipsoid";
pub const KIND_MARGINAL: &str = "marginal";
pub const LENGTH_RATIO: &str = "ratio_AS_KSIEGE";

/// Binomial rate and its standard error sqrt(p̂(1−p̂)/N).
pub fn rate(hits: usize, n: usize) -> (f64, f64) {
    let p = hits as f64 / n as f64;
    (p, (p * (1.0 - p) / n as f64).sqrt())
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (m, 0.0);
    }
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}

/// Reduces the replications of one scenario. Failed replications are
/// listed and excluded from every rate.
pub fn aggregate(scenario: &str, d: usize, sigma: f64, records: &[RunRecord]) -> Result<CoverageTable> {
    let ok: Vec<&RunRecord> = records.iter().filter(|r| r.succeeded()).collect();
    if ok.is_empty() {
        return Err(Error::State(format!("scenario {scenario}: no successful replications to aggregate")));
    }
    let mut table = CoverageTable::default();
    table.failures = records
        .iter()
        .filter_map(|r| r.failure.as_ref().map(|m| (scenario.to_string(), r.rep, m.clone())))
        .collect();
    table.successes.insert(scenario.to_string(), ok.len());

    let cell = |arm: String, t: usize, kind: &str, hits: usize, n: usize| {
        let (rate, se) = rate(hits, n);
        CoverageCell {
            scenario: scenario.to_string(),
            d,
            sigma,
            arm,
            t,
            kind: kind.to_string(),
            rate,
            se,
            n,
        }
    };

    // joint: both arms covered
    let mut joint: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    let mut per_arm: BTreeMap<(usize, usize, &str), (usize, usize)> = BTreeMap::new();
    for r in &ok {
        let mut by_t: BTreeMap<usize, bool> = BTreeMap::new();
        for e in &r.ellipsoid {
            let j = by_t.entry(e.t).or_insert(true);
            *j &= e.covered;
            let c = per_arm.entry((e.arm, e.t, KIND_ELLIPSOID)).or_default();
            c.0 += e.covered as usize;
            c.1 += 1;
        }
        for (t, covered) in by_t {
            let c = joint.entry(t).or_default();
            c.0 += covered as usize;
            c.1 += 1;
        }
        for m in &r.directional {
            let c = per_arm.entry((m.arm, m.t, KIND_MARGINAL)).or_default();
            c.0 += m.covered as usize;
            c.1 += 1;
        }
    }
    for (t, (h, n)) in joint {
        table.coverage.push(cell("all".into(), t, KIND_JOINT, h, n));
    }
    for ((arm, t, kind), (h, n)) in per_arm {
        table.coverage.push(cell(arm.to_string(), t, kind, h, n));
    }

    let mut pw: BTreeMap<(usize, CiMethod), (usize, Vec<f64>)> = BTreeMap::new();
    for r in &ok {
        for p in &r.pointwise {
            let c = pw.entry((p.t, p.method)).or_default();
            c.0 += p.covered as usize;
            c.1.push(p.length);
        }
    }
    for (&(t, method), (h, lens)) in &pw {
        table.coverage.push(cell("greedy".into(), t, method.as_str(), *h, lens.len()));
        let (m, se) = mean_se(lens);
        table.lengths.push(LengthCell {
            scenario: scenario.to_string(),
            arm: "greedy".into(),
            t,
            method: method.as_str().into(),
            mean_length: m,
            se,
            n: lens.len(),
        });
    }
    let times: Vec<usize> = pw.keys().map(|k| k.0).collect::<std::collections::BTreeSet<_>>().into_iter().collect();
    for t in times {
        if let (Some((_, a)), Some((_, k))) = (pw.get(&(t, CiMethod::As)), pw.get(&(t, CiMethod::KSiege))) {
            let (ma, sa) = mean_se(a);
            let (mk, sk) = mean_se(k);
            let ratio = ma / mk;
            // delta method, covariance between the two means ignored
            let se = ratio * ((sa / ma).powi(2) + (sk / mk).powi(2)).sqrt();
            table.lengths.push(LengthCell {
                scenario: scenario.to_string(),
                arm: "greedy".into(),
                t,
                method: LENGTH_RATIO.into(),
                mean_length: ratio,
                se,
                n: a.len().min(k.len()),
            });
        }
    }

    let mut reg: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for r in &ok {
        for p in &r.regret {
            reg.entry(p.t).or_default().push(p.avg_regret);
        }
    }
    for (t, v) in reg {
        let (m, se) = mean_se(&v);
        table.regret.push(RegretCell {
            scenario: scenario.to_string(),
            t,
            mean_avg_regret: m,
            lo: m - 1.959_963_984_540_054 * se,
            hi: m + 1.959_963_984_540_054 * se,
            n: v.len(),
        });
    }
    Ok(table)
}
