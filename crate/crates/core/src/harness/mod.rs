//! Monte-Carlo replication engine: seeded trajectories per scenario,
//! inference at a fixed time grid, aggregation and table export.

mod aggregate;
mod export;
mod replay;

use serde::{Deserialize, Serialize};

pub use aggregate::{aggregate, CoverageCell, CoverageTable, LengthCell, RegretCell};
pub use export::{export, write_run_tables, ExportFiles, SCHEMA_VERSION};
pub use replay::{export_replays, run_replay, run_replays, ReplayDirectionalRow, ReplayRecord, ReplayScenario};

use crate::environment::{LinkFamily, RegretLedger, SyntheticEnv};
use crate::error::{Error, Result};
use crate::infer::{self, ArmFit, InferenceSettings, ParametricInference, ScoreSpec};
use crate::index_inference::align_sign;
use crate::kernel_ridge::DEFAULT_PAIR_CAP;
use crate::np_inference::{BandParams, CiMethod};
use crate::numerics::Rng;
use crate::policy::{EpsilonSchedule, PolicyConfig, PolicyState, RefitCadence, RoundRecord};

pub const DEFAULT_INFERENCE_TIMES: [usize; 8] = [200, 314, 428, 542, 657, 771, 885, 999];

/// One synthetic experiment cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Scenario {
    pub d: usize,
    pub sigma: f64,
    pub horizon: usize,
    pub warm_start: usize,
    pub reps: usize,
    pub inference_times: Vec<usize>,
    pub alpha: f64,
    pub gamma: f64,
    pub zeta: f64,
    pub lambda_beta: f64,
    pub p_min: f64,
    pub level: f64,
    pub links: LinkFamily,
    pub schedule: EpsilonSchedule,
    pub band: BandParams,
    pub refit: RefitCadence,
    pub pair_cap: usize,
    pub burn_in: usize,
    /// compute the pointwise intervals at inference times
    pub pointwise: bool,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            d: 2,
            sigma: 0.05,
            horizon: 1000,
            warm_start: 50,
            reps: 100,
            inference_times: DEFAULT_INFERENCE_TIMES.to_vec(),
            alpha: infer::InferenceSettings::default().alpha,
            gamma: infer::InferenceSettings::default().gamma,
            zeta: infer::InferenceSettings::default().zeta,
            lambda_beta: infer::InferenceSettings::default().lambda_beta,
            p_min: infer::InferenceSettings::default().p_min,
            level: 0.95,
            links: LinkFamily::default(),
            schedule: EpsilonSchedule::default(),
            band: BandParams::default(),
            refit: RefitCadence::default(),
            pair_cap: DEFAULT_PAIR_CAP,
            burn_in: 0,
            pointwise: true,
        }
    }
}

impl Scenario {
    pub fn new(d: usize, sigma: f64) -> Self {
        Scenario {
            d,
            sigma,
            ..Scenario::default()
        }
    }

    /// Stable identifier, also the key the arm directions are derived from.
    pub fn id(&self) -> String {
        format!("d{}_sigma{}", self.d, self.sigma)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d < 2 {
            return Err(Error::Config(format!("d must be at least 2, got {}", self.d)));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::Config(format!("sigma must be nonnegative, got {}", self.sigma)));
        }
        if self.reps == 0 {
            return Err(Error::Config("reps must be positive".into()));
        }
        if self.horizon <= self.warm_start {
            return Err(Error::Config(format!(
                "horizon {} must exceed the warm start {}",
                self.horizon, self.warm_start
            )));
        }
        let mut prev = self.warm_start;
        for &t in &self.inference_times {
            if t <= prev || t > self.horizon {
                return Err(Error::Config(format!(
                    "inference times must increase strictly within ({}, {}], got {t}",
                    self.warm_start, self.horizon
                )));
            }
            prev = t;
        }
        self.settings().validate()?;
        self.policy_config().validate()
    }

    pub fn settings(&self) -> InferenceSettings {
        InferenceSettings {
            arms: self.links.arms(),
            alpha: self.alpha,
            gamma: self.gamma,
            zeta: self.zeta,
            lambda_beta: self.lambda_beta,
            p_min: self.p_min,
            level: self.level,
            band: self.band,
            score: ScoreSpec::StandardGaussian,
            pair_cap: self.pair_cap,
            burn_in: self.burn_in,
            warm_start: self.warm_start,
        }
    }

    pub fn policy_config(&self) -> PolicyConfig {
        PolicyConfig {
            arms: self.links.arms(),
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

/// FNV-1a, a fixed platform-independent hash for stream keys.
pub(crate) fn stable_hash(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// Root stream of a scenario; its child 0 draws the arm directions and
/// child 1 roots the replications.
pub fn scenario_rng(seed: u64, scenario: &Scenario) -> Rng {
    Rng::new(seed).split(stable_hash(&scenario.id()))
}

pub fn scenario_betas(seed: u64, scenario: &Scenario) -> Result<Vec<Vec<f64>>> {
    let env = SyntheticEnv::new(
        scenario.d,
        scenario.sigma,
        scenario.links,
        &mut scenario_rng(seed, scenario).split(0),
        Rng::new(0),
    )?;
    Ok(env.betas().to_vec())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionalRow {
    pub rep: usize,
    pub arm: usize,
    pub t: usize,
    pub coord: usize,
    pub center: f64,
    pub lo: f64,
    pub hi: f64,
    pub covered: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EllipsoidRow {
    pub rep: usize,
    pub arm: usize,
    pub t: usize,
    pub distance: f64,
    pub radius2: f64,
    pub covered: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointwiseRow {
    pub rep: usize,
    pub arm: usize,
    pub t: usize,
    pub method: CiMethod,
    pub u: f64,
    pub center: f64,
    pub lo: f64,
    pub hi: f64,
    pub truth: f64,
    pub covered: bool,
    pub length: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegretPoint {
    pub t: usize,
    pub avg_regret: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub clamped_d2: usize,
    pub degenerate_bandwidths: usize,
    /// λ_min(Σ w W Wᵀ / t) per (arm, inference time)
    pub gram_min_eigenvalues: Vec<(usize, usize, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub rep: usize,
    pub failure: Option<String>,
    pub ellipsoid: Vec<EllipsoidRow>,
    pub directional: Vec<DirectionalRow>,
    pub pointwise: Vec<PointwiseRow>,
    pub regret: Vec<RegretPoint>,
    pub diagnostics: Diagnostics,
    #[serde(skip)]
    pub log: Option<Vec<RoundRecord>>,
}

impl RunRecord {
    pub fn succeeded(&self) -> bool {
        self.failure.is_none()
    }

    /// Both arms inside their ellipsoids at time `t`.
    pub fn joint_covered(&self, t: usize) -> Option<bool> {
        let rows: Vec<&EllipsoidRow> = self.ellipsoid.iter().filter(|r| r.t == t).collect();
        if rows.is_empty() {
            None
        } else {
            Some(rows.iter().all(|r| r.covered))
        }
    }
}

/// One full trajectory. Errors inside the trajectory are recorded on the
/// returned record rather than propagated.
pub fn run_replication(scenario: &Scenario, seed: u64, rep: usize, keep_log: bool) -> RunRecord {
    let mut rec = RunRecord {
        rep,
        failure: None,
        ellipsoid: Vec::new(),
        directional: Vec::new(),
        pointwise: Vec::new(),
        regret: Vec::new(),
        diagnostics: Diagnostics::default(),
        log: None,
    };
    match trajectory(scenario, seed, rep, &mut rec) {
        Ok(log) => {
            if keep_log {
                rec.log = Some(log);
            }
        }
        Err(e) => {
            rec.failure = Some(e.to_string());
        }
    }
    rec
}

fn trajectory(sc: &Scenario, seed: u64, rep: usize, rec: &mut RunRecord) -> Result<Vec<RoundRecord>> {
    sc.validate()?;
    let root = scenario_rng(seed, sc);
    let rep_rng = root.split(1).split(rep as u64);
    let mut env = SyntheticEnv::new(sc.d, sc.sigma, sc.links, &mut root.split(0), rep_rng.split(0))?;
    let settings = sc.settings();
    let mut policy = PolicyState::new(sc.policy_config(), settings.score.model(sc.d), rep_rng.split(1))?;
    let mut ledger = RegretLedger::new();
    let mut grid = sc.inference_times.iter().copied().peekable();
    for t in 1..=sc.horizon {
        let round = env.draw_round();
        if grid.peek() == Some(&(t - 1)) {
            grid.next();
            inference_step(sc, &settings, &env, &mut policy, &round.x, &round.means, &ledger, rec)?;
        }
        let d = policy.decide(&round.x)?;
        let y = round.reward(d.pulled_arm, env.sigma());
        policy.observe(d, &round.x, y)?;
        ledger.update(round.means[d.pulled_arm], &round.means);
    }
    if grid.peek() == Some(&sc.horizon) {
        // the last grid point has no next context; only the parametric part applies
        let t = sc.horizon;
        let pars = parametric_all(&settings, policy.log(), t)?;
        record_parametric(rec, &env, &pars);
        rec.regret.push(RegretPoint {
            t,
            avg_regret: ledger.average(t),
        });
    }
    Ok(policy.into_log())
}

fn parametric_all(settings: &InferenceSettings, log: &[RoundRecord], t: usize) -> Result<Vec<ParametricInference>> {
    (0..settings.arms).map(|arm| infer::parametric(log, t, arm, settings)).collect()
}

fn record_parametric(rec: &mut RunRecord, env: &SyntheticEnv, pars: &[ParametricInference]) {
    let t = pars[0].t;
    for (arm, par) in pars.iter().enumerate() {
        let truth = align_sign(&env.betas()[arm], &par.report.direction);
        let dist = par.report.studentized_distance(&truth);
        rec.ellipsoid.push(EllipsoidRow {
            rep: rec.rep,
            arm,
            t,
            distance: dist,
            radius2: par.report.ellipsoid_radius2,
            covered: dist <= par.report.ellipsoid_radius2,
        });
        for m in infer::marginals(&par.report) {
            rec.directional.push(DirectionalRow {
                rep: rec.rep,
                arm,
                t,
                coord: m.coord,
                center: m.center,
                lo: m.lo,
                hi: m.hi,
                covered: m.lo <= truth[m.coord] && truth[m.coord] <= m.hi,
            });
        }
        rec.diagnostics
            .gram_min_eigenvalues
            .push((arm, t, crate::numerics::min_eigenvalue(&par.estimate.gram)));
    }
}

#[allow(clippy::too_many_arguments)]
fn inference_step(
    sc: &Scenario,
    settings: &InferenceSettings,
    env: &SyntheticEnv,
    policy: &mut PolicyState,
    x_next: &[f64],
    means_next: &[f64],
    ledger: &RegretLedger,
    rec: &mut RunRecord,
) -> Result<()> {
    let t = policy.rounds();
    let log = policy.log().to_vec();
    let pars = parametric_all(settings, &log, t)?;
    record_parametric(rec, env, &pars);
    let mut fits: Vec<ArmFit> = Vec::with_capacity(pars.len());
    for (arm, par) in pars.iter().enumerate() {
        let fit = infer::fit_arm(&log, t, arm, &par.report.direction, settings)?;
        if fit.bandwidth_degenerate {
            rec.diagnostics.degenerate_bandwidths += 1;
        }
        policy.install(arm, fit.model.clone(), fit.gram.clone())?;
        fits.push(fit);
    }
    if sc.pointwise {
        let arm = policy.greedy_arm(x_next);
        let pair = infer::pointwise(&log, t, &fits[arm], &pars[arm].report.direction, x_next, settings)?;
        let truth = means_next[arm];
        for ci in [pair.ksiege, pair.band] {
            if ci.clamped {
                rec.diagnostics.clamped_d2 += 1;
            }
            rec.pointwise.push(PointwiseRow {
                rep: rec.rep,
                arm,
                t,
                method: ci.method,
                u: ci.u,
                center: ci.center,
                lo: ci.lo,
                hi: ci.hi,
                truth,
                covered: ci.contains(truth),
                length: ci.length(),
            });
        }
    }
    rec.regret.push(RegretPoint {
        t,
        avg_regret: ledger.average(t),
    });
    Ok(())
}

/// Runs every replication of `scenario`, in parallel when `threads > 1`.
/// Output order is by replication index regardless of scheduling.
pub fn run_scenario(scenario: &Scenario, seed: u64, threads: usize, keep_logs: bool) -> Result<Vec<RunRecord>> {
    scenario.validate()?;
    let job = |rep: usize| run_replication(scenario, seed, rep, keep_logs);
    if threads <= 1 {
        return Ok((0..scenario.reps).map(job).collect());
    }
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(|| (0..scenario.reps).into_par_iter().map(job).collect()))
}
