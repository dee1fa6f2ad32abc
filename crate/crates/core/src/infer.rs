//! Inference recomputed from a round log alone: per-arm index estimate and
//! directional report, the arm's KRR refit on freshly projected support,
//! and the two pointwise intervals at an evaluation context. The harness
//! and the `infer` command both go through these functions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index::{ipw_weight, IndexAccumulator, IndexEstimate, DEFAULT_LAMBDA_BETA, DEFAULT_P_MIN};
use crate::index_inference::{infer_direction, DirectionalReport, WeightedRow, DEFAULT_ALPHA};
use crate::kernel_ridge::{
    median_bandwidth, ridge_schedule, GaussianKernel, Gram, KrrModel, SupportPoint, DEFAULT_PAIR_CAP, DEFAULT_ZETA,
};
use crate::np_inference::{
    as_band_ci, build_covariance, exploration_coefficient, pointwise_ci, BandParams, PointwiseCi, DEFAULT_GAMMA,
};
use crate::numerics::dot;
use crate::policy::RoundRecord;
use crate::score::{ScoreModel, Scorer};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ScoreSpec {
    /// S(x) = x
    #[default]
    StandardGaussian,
    /// whitening by the sample mean and covariance of all contexts so far
    Empirical,
}

impl ScoreSpec {
    pub fn model(self, dim: usize) -> ScoreModel {
        match self {
            ScoreSpec::StandardGaussian => ScoreModel::standard_gaussian(dim),
            ScoreSpec::Empirical => ScoreModel::empirical(dim, None),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InferenceSettings {
    pub arms: usize,
    /// influence scaling exponent
    pub alpha: f64,
    pub gamma: f64,
    pub zeta: f64,
    pub lambda_beta: f64,
    pub p_min: f64,
    /// nominal coverage of every interval and ellipsoid
    pub level: f64,
    pub band: BandParams,
    pub score: ScoreSpec,
    pub pair_cap: usize,
    /// rounds excluded from the KRR residual covariance
    pub burn_in: usize,
    /// forced-exploration rounds; inference needs t past them
    pub warm_start: usize,
}

impl Default for InferenceSettings {
    fn default() -> Self {
        InferenceSettings {
            arms: 2,
            alpha: DEFAULT_ALPHA,
            gamma: DEFAULT_GAMMA,
            zeta: DEFAULT_ZETA,
            lambda_beta: DEFAULT_LAMBDA_BETA,
            p_min: DEFAULT_P_MIN,
            level: 0.95,
            band: BandParams::default(),
            score: ScoreSpec::StandardGaussian,
            pair_cap: DEFAULT_PAIR_CAP,
            burn_in: 0,
            warm_start: 50,
        }
    }
}

impl InferenceSettings {
    pub fn validate(&self) -> Result<()> {
        if self.arms < 2 {
            return Err(Error::Config(format!("need at least 2 arms, got {}", self.arms)));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::Config(format!("level must lie in (0,1), got {}", self.level)));
        }
        if !(self.alpha.is_finite() && self.gamma.is_finite()) {
            return Err(Error::Config("alpha and gamma must be finite".into()));
        }
        if !(self.p_min > 0.0 && self.p_min <= 1.0) {
            return Err(Error::Config(format!("p_min must lie in (0,1], got {}", self.p_min)));
        }
        Ok(())
    }
}

/// The scorer implied by the first `t` contexts.
pub fn scorer_at(log: &[RoundRecord], t: usize, spec: ScoreSpec) -> Result<Scorer> {
    let dim = log.first().map_or(0, |r| r.x.len());
    let mut model = spec.model(dim);
    if let ScoreSpec::Empirical = spec {
        for r in &log[..t] {
            model.update(&r.x);
        }
    }
    model.scorer()
}

fn check_horizon(log: &[RoundRecord], t: usize) -> Result<()> {
    if log.is_empty() {
        return Err(Error::State("round log is empty".into()));
    }
    if t == 0 || t > log.len() {
        return Err(Error::State(format!("t = {t} outside the logged rounds 1..={}", log.len())));
    }
    Ok(())
}

fn check_past_warm_start(t: usize, s: &InferenceSettings) -> Result<()> {
    if t <= s.warm_start {
        return Err(Error::State(format!(
            "t = {t} lies inside the warm start (rounds 1..={})",
            s.warm_start
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParametricInference {
    pub arm: usize,
    pub t: usize,
    pub estimate: IndexEstimate,
    pub report: DirectionalReport,
}

/// Index estimate and directional report for `arm` from rounds 1..=t.
pub fn parametric(log: &[RoundRecord], t: usize, arm: usize, s: &InferenceSettings) -> Result<ParametricInference> {
    check_horizon(log, t)?;
    check_past_warm_start(t, s)?;
    let scorer = scorer_at(log, t, s.score)?;
    let dim = log[0].x.len();
    let mut acc = IndexAccumulator::new(arm, dim);
    let mut rows = Vec::new();
    for r in &log[..t] {
        let pulled = r.pulled_arm == arm;
        let w = scorer.score(&r.x)?;
        acc.observe(&w, r.reward, r.propensity, pulled, s.p_min)?;
        if pulled {
            rows.push(WeightedRow {
                w,
                y: r.reward,
                weight: ipw_weight(r.propensity, s.p_min),
            });
        }
    }
    if rows.is_empty() {
        return Err(Error::State(format!("arm {arm} was never pulled in rounds 1..={t}")));
    }
    let estimate = acc.estimate_beta(s.lambda_beta)?;
    let report = infer_direction(&rows, &estimate.beta_hat, &estimate.gram, t, s.alpha, 1.0 - s.level)?;
    Ok(ParametricInference { arm, t, estimate, report })
}

#[derive(Debug, Clone)]
pub struct ArmFit {
    pub arm: usize,
    pub model: KrrModel,
    pub gram: Gram,
    pub lambda: f64,
    pub bandwidth_degenerate: bool,
    /// rounds of the support points, in order
    pub rounds: Vec<usize>,
}

/// KRR for `arm` on rounds 1..=t with every support point projected on
/// `direction`.
pub fn fit_arm(log: &[RoundRecord], t: usize, arm: usize, direction: &[f64], s: &InferenceSettings) -> Result<ArmFit> {
    check_horizon(log, t)?;
    let mut support = Vec::new();
    let mut rounds = Vec::new();
    for r in log[..t].iter().filter(|r| r.pulled_arm == arm) {
        support.push(SupportPoint {
            u: dot(&r.x, direction),
            y: r.reward,
            w: ipw_weight(r.propensity, s.p_min),
        });
        rounds.push(r.t);
    }
    if support.len() < 2 {
        return Err(Error::State(format!("arm {arm} has {} pulls, need 2 for a kernel fit", support.len())));
    }
    let us: Vec<f64> = support.iter().map(|p| p.u).collect();
    let bw = median_bandwidth(&us, s.pair_cap)?;
    let kernel = GaussianKernel::new(bw.value)?;
    let gram = Gram::new(&kernel, &us);
    let lambda = ridge_schedule(t, s.zeta);
    let n = support.len();
    let model = KrrModel::fit_with_gram(support, &gram, lambda, kernel, n, None)?;
    Ok(ArmFit {
        arm,
        model,
        gram,
        lambda,
        bandwidth_degenerate: bw.degenerate,
        rounds,
    })
}

/// r̃ for `arm` over rounds 1..=t from the logged ε-greedy law.
pub fn exploration_at(log: &[RoundRecord], t: usize, arm: usize, arms: usize) -> Result<f64> {
    check_horizon(log, t)?;
    let p: Vec<f64> = log[..t].iter().map(|r| r.propensity_of(arm, arms)).collect();
    exploration_coefficient(&p)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointwisePair {
    pub ksiege: PointwiseCi,
    pub band: PointwiseCi,
}

/// Both pointwise intervals for the fitted arm at context `x`.
pub fn pointwise(
    log: &[RoundRecord],
    t: usize,
    fit: &ArmFit,
    direction: &[f64],
    x: &[f64],
    s: &InferenceSettings,
) -> Result<PointwisePair> {
    let burn = fit.rounds.iter().take_while(|&&r| r <= s.burn_in).count();
    let cov = build_covariance(&fit.model, Some(&fit.gram), s.gamma, fit.lambda, burn)?;
    let u = dot(x, direction);
    let ksiege = pointwise_ci(&fit.model, &cov, u, 1.0 - s.level, t)?;
    let r_tilde = exploration_at(log, t, fit.arm, s.arms)?;
    let band = as_band_ci(&fit.model, u, r_tilde, &s.band, t)?;
    Ok(PointwisePair { ksiege, band })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalInterval {
    pub coord: usize,
    pub center: f64,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferReport {
    pub arm: usize,
    pub t: usize,
    pub beta_hat: Vec<f64>,
    pub direction: Vec<f64>,
    pub v_dir: Vec<Vec<f64>>,
    pub ellipsoid_radius2: f64,
    pub level: f64,
    pub marginals: Vec<MarginalInterval>,
    pub lambda: f64,
    pub bandwidth: f64,
    pub support: usize,
    /// evaluation context; defaults to the context of round t + 1
    pub eval_x: Option<Vec<f64>>,
    pub pointwise: Option<PointwisePair>,
}

pub fn marginals(report: &DirectionalReport) -> Vec<MarginalInterval> {
    report
        .marginal_intervals()
        .into_iter()
        .enumerate()
        .map(|(coord, (lo, hi))| MarginalInterval {
            coord,
            center: report.direction[coord],
            lo,
            hi,
        })
        .collect()
}

/// Everything recoverable for `arm` at time `t` from the log.
pub fn infer(
    log: &[RoundRecord],
    t: usize,
    arm: usize,
    eval_x: Option<&[f64]>,
    s: &InferenceSettings,
) -> Result<InferReport> {
    s.validate()?;
    check_horizon(log, t)?;
    check_past_warm_start(t, s)?;
    if arm >= s.arms {
        return Err(Error::Domain(format!("arm {arm} out of range for {} arms", s.arms)));
    }
    let par = parametric(log, t, arm, s)?;
    let fit = fit_arm(log, t, arm, &par.report.direction, s)?;
    let eval: Option<Vec<f64>> = match eval_x {
        Some(x) if x.len() == log[0].x.len() => Some(x.to_vec()),
        Some(x) => {
            return Err(Error::Domain(format!(
                "evaluation context has {} coordinates, expected {}",
                x.len(),
                log[0].x.len()
            )))
        }
        None => log.get(t).map(|r| r.x.clone()),
    };
    let pointwise = match &eval {
        Some(x) => Some(pointwise(log, t, &fit, &par.report.direction, x, s)?),
        None => None,
    };
    let d = par.report.direction.len();
    Ok(InferReport {
        arm,
        t,
        beta_hat: par.estimate.beta_hat.clone(),
        direction: par.report.direction.clone(),
        v_dir: (0..d).map(|i| par.report.v_dir.row(i).to_vec()).collect(),
        ellipsoid_radius2: par.report.ellipsoid_radius2,
        level: par.report.level,
        marginals: marginals(&par.report),
        lambda: fit.lambda,
        bandwidth: fit.model.kernel.bandwidth(),
        support: fit.model.len(),
        eval_x: eval,
        pointwise,
    })
}
