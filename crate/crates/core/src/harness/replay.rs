//! Classification replay: seeded permutations of a labelled table, two
//! arms predicting the two classes, regret against the best fixed arm.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::export::{csv_bytes, ensure_dir, Staged};
use super::{stable_hash, RegretPoint, SCHEMA_VERSION};
use crate::environment::{fixed_arm_regret, ReplayEnv, ReplayTable};
use crate::error::{Error, Result};
use crate::infer::{self, InferenceSettings, ScoreSpec};
use crate::kernel_ridge::{DEFAULT_PAIR_CAP, DEFAULT_ZETA};
use crate::np_inference::BandParams;
use crate::numerics::Rng;
use crate::policy::{EpsilonSchedule, PolicyConfig, PolicyState, RefitCadence, RoundRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReplayScenario {
    pub horizon: usize,
    pub warm_start: usize,
    pub perms: usize,
    pub inference_times: Vec<usize>,
    pub alpha: f64,
    pub zeta: f64,
    pub lambda_beta: f64,
    pub p_min: f64,
    pub level: f64,
    pub schedule: EpsilonSchedule,
    pub refit: RefitCadence,
    pub pair_cap: usize,
}

impl Default for ReplayScenario {
    fn default() -> Self {
        let s = InferenceSettings::default();
        ReplayScenario {
            horizon: 1000,
            warm_start: 20,
            perms: 10,
            inference_times: (2..=9).map(|k| 100 * k).collect(),
            alpha: s.alpha,
            zeta: DEFAULT_ZETA,
            lambda_beta: s.lambda_beta,
            p_min: s.p_min,
            level: s.level,
            schedule: EpsilonSchedule::default(),
            refit: RefitCadence::default(),
            pair_cap: DEFAULT_PAIR_CAP,
        }
    }
}

impl ReplayScenario {
    pub fn validate(&self) -> Result<()> {
        if self.perms == 0 {
            return Err(Error::Config("perms must be at least 1".into()));
        }
        if self.warm_start < 2 || self.warm_start >= self.horizon {
            return Err(Error::Config(format!(
                "warm_start must lie in [2, horizon), got {} with horizon {}",
                self.warm_start, self.horizon
            )));
        }
        let mut prev = self.warm_start;
        for &t in &self.inference_times {
            if t <= prev || t > self.horizon {
                return Err(Error::Config(format!(
                    "inference_times must be strictly increasing within ({}, {}], got {t}",
                    self.warm_start, self.horizon
                )));
            }
            prev = t;
        }
        self.policy_config().validate()?;
        self.settings().validate()
    }

    pub fn settings(&self) -> InferenceSettings {
        InferenceSettings {
            arms: 2,
            alpha: self.alpha,
            zeta: self.zeta,
            lambda_beta: self.lambda_beta,
            p_min: self.p_min,
            level: self.level,
            band: BandParams::default(),
            score: ScoreSpec::Empirical,
            pair_cap: self.pair_cap,
            warm_start: self.warm_start,
            ..InferenceSettings::default()
        }
    }

    pub fn policy_config(&self) -> PolicyConfig {
        PolicyConfig {
            arms: 2,
            warm_start: self.warm_start,
            schedule: self.schedule,
            lambda_beta: self.lambda_beta,
            p_min: self.p_min,
            zeta: self.zeta,
            pair_cap: self.pair_cap,
            refit: self.refit,
        }
    }
}

/// Marginal direction interval on real data, where no truth is available.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayDirectionalRow {
    pub perm: usize,
    pub arm: usize,
    pub t: usize,
    pub coord: usize,
    pub center: f64,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayRecord {
    pub perm: usize,
    pub failure: Option<String>,
    /// source rows in trajectory order
    pub order: Vec<usize>,
    pub accuracy: f64,
    pub best_fixed_arm: usize,
    pub best_fixed_accuracy: f64,
    /// time-averaged fixed-arm regret proxy at each inference time and at T
    pub regret: Vec<RegretPoint>,
    pub directional: Vec<ReplayDirectionalRow>,
    #[serde(skip)]
    pub log: Option<Vec<RoundRecord>>,
}

fn replay_rng(seed: u64) -> Rng {
    Rng::new(seed).split(stable_hash("realdata"))
}

/// One permutation of `table`. Errors are recorded on the returned record.
pub fn run_replay(table: &ReplayTable, sc: &ReplayScenario, seed: u64, perm: usize, keep_log: bool) -> ReplayRecord {
    let mut rec = ReplayRecord {
        perm,
        failure: None,
        order: Vec::new(),
        accuracy: f64::NAN,
        best_fixed_arm: 0,
        best_fixed_accuracy: f64::NAN,
        regret: Vec::new(),
        directional: Vec::new(),
        log: None,
    };
    match replay_trajectory(table, sc, seed, perm, &mut rec) {
        Ok(log) if keep_log => rec.log = Some(log),
        Ok(_) => {}
        Err(e) => rec.failure = Some(e.to_string()),
    }
    rec
}

fn replay_trajectory(
    table: &ReplayTable,
    sc: &ReplayScenario,
    seed: u64,
    perm: usize,
    rec: &mut ReplayRecord,
) -> Result<Vec<RoundRecord>> {
    sc.validate()?;
    let stream = replay_rng(seed).split(perm as u64);
    let mut env = ReplayEnv::sample(table, sc.horizon, &mut stream.split(0))?;
    rec.order = env.order().to_vec();
    let settings = sc.settings();
    let mut policy = PolicyState::new(sc.policy_config(), settings.score.model(env.dim()), stream.split(1))?;
    let mut realized = Vec::with_capacity(sc.horizon);
    while let Some((x, label)) = env.next_round() {
        let x = x.to_vec();
        let d = policy.decide(&x)?;
        let y = ReplayEnv::reward(d.pulled_arm, label);
        policy.observe(d, &x, y)?;
        realized.push(y);
    }
    let per_arm: Vec<Vec<f64>> = (0..2)
        .map(|arm| env.labels().iter().map(|&l| ReplayEnv::reward(arm, l)).collect())
        .collect();
    let (path, best) = fixed_arm_regret(&per_arm, &realized);
    let n = sc.horizon as f64;
    rec.accuracy = realized.iter().sum::<f64>() / n;
    rec.best_fixed_arm = best;
    rec.best_fixed_accuracy = per_arm[best].iter().sum::<f64>() / n;

    let log = policy.into_log();
    for &t in &sc.inference_times {
        for arm in 0..2 {
            let par = infer::parametric(&log, t, arm, &settings)?;
            for m in infer::marginals(&par.report) {
                rec.directional.push(ReplayDirectionalRow {
                    perm,
                    arm,
                    t,
                    coord: m.coord,
                    center: m.center,
                    lo: m.lo,
                    hi: m.hi,
                });
            }
        }
    }
    let mut times = sc.inference_times.clone();
    if times.last() != Some(&sc.horizon) {
        times.push(sc.horizon);
    }
    rec.regret = times
        .into_iter()
        .map(|t| RegretPoint {
            t,
            avg_regret: path[t - 1] / t as f64,
        })
        .collect();
    Ok(log)
}

/// Runs every permutation, in parallel when `threads > 1`, ordered by index.
pub fn run_replays(
    table: &ReplayTable,
    sc: &ReplayScenario,
    seed: u64,
    threads: usize,
    keep_logs: bool,
) -> Result<Vec<ReplayRecord>> {
    sc.validate()?;
    let job = |perm: usize| run_replay(table, sc, seed, perm, keep_logs);
    if threads <= 1 {
        return Ok((0..sc.perms).map(job).collect());
    }
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(|| (0..sc.perms).into_par_iter().map(job).collect()))
}

#[derive(Serialize)]
struct ReplaySummary<'a, C: Serialize> {
    schema_version: u32,
    config: &'a C,
    successes: usize,
    failures: Vec<(usize, &'a str)>,
    mean_accuracy: f64,
    mean_best_fixed_accuracy: f64,
}

/// Writes accuracy.csv, regret_proxy.csv, directional.csv, summary.json and,
/// for records that kept their log, `audit_perm<p>.csv`.
pub fn export_replays<C: Serialize>(records: &[ReplayRecord], config: &C, dir: &Path) -> Result<Vec<PathBuf>> {
    let ok: Vec<&ReplayRecord> = records.iter().filter(|r| r.failure.is_none()).collect();
    if ok.is_empty() {
        let first = records.iter().find_map(|r| r.failure.as_deref()).unwrap_or("no permutations run");
        return Err(Error::State(format!("no successful permutation: {first}")));
    }
    ensure_dir(dir)?;
    let accuracy = csv_bytes(&["perm", "accuracy", "best_fixed_arm", "best_fixed_accuracy"], |w| {
        for r in &ok {
            w.write_record([
                r.perm.to_string(),
                r.accuracy.to_string(),
                r.best_fixed_arm.to_string(),
                r.best_fixed_accuracy.to_string(),
            ])?;
        }
        Ok(())
    })?;
    let regret = csv_bytes(&["perm", "t", "avg_regret"], |w| {
        for r in &ok {
            for p in &r.regret {
                w.write_record([r.perm.to_string(), p.t.to_string(), p.avg_regret.to_string()])?;
            }
        }
        Ok(())
    })?;
    let directional = csv_bytes(&["perm", "arm", "t", "coord", "center", "lo", "hi"], |w| {
        for r in &ok {
            for m in &r.directional {
                w.write_record([
                    m.perm.to_string(),
                    m.arm.to_string(),
                    m.t.to_string(),
                    m.coord.to_string(),
                    m.center.to_string(),
                    m.lo.to_string(),
                    m.hi.to_string(),
                ])?;
            }
        }
        Ok(())
    })?;
    let k = ok.len() as f64;
    let summary = ReplaySummary {
        schema_version: SCHEMA_VERSION,
        config,
        successes: ok.len(),
        failures: records
            .iter()
            .filter_map(|r| r.failure.as_deref().map(|m| (r.perm, m)))
            .collect(),
        mean_accuracy: ok.iter().map(|r| r.accuracy).sum::<f64>() / k,
        mean_best_fixed_accuracy: ok.iter().map(|r| r.best_fixed_accuracy).sum::<f64>() / k,
    };
    let mut json = serde_json::to_vec_pretty(&summary)?;
    json.push(b'\n');

    let mut staged = Staged::new();
    let mut paths = vec![
        staged.add(dir, "accuracy.csv", &accuracy)?,
        staged.add(dir, "regret_proxy.csv", &regret)?,
        staged.add(dir, "directional.csv", &directional)?,
        staged.add(dir, "summary.json", &json)?,
    ];
    for r in &ok {
        if let Some(log) = &r.log {
            let mut buf = Vec::new();
            crate::log::write_log(&mut buf, log)?;
            paths.push(staged.add(dir, &format!("audit_perm{}.csv", r.perm), &buf)?);
        }
    }
    staged.commit()?;
    Ok(paths)
}
