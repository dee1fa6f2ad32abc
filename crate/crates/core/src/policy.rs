//! The ε-greedy decision loop: round-robin warm start, then greedy pulls
//! mixed with uniform exploration, logging the exact propensity of every
//! realized arm and updating only the pulled arm's estimators.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index::{ipw_weight, IndexAccumulator, IndexEstimate, DEFAULT_LAMBDA_BETA, DEFAULT_P_MIN};
use crate::kernel_ridge::{
    median_bandwidth, ridge_schedule, GaussianKernel, Gram, KrrModel, SupportPoint, DEFAULT_PAIR_CAP, DEFAULT_ZETA,
};
use crate::numerics::{dot, Rng};
use crate::score::ScoreModel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpsilonSchedule {
    pub floor: f64,
    pub cap: f64,
    pub coeff: f64,
    pub exponent: f64,
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        EpsilonSchedule {
            floor: 0.005,
            cap: 0.35,
            coeff: 0.15,
            exponent: 0.4,
        }
    }
}

impl EpsilonSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.floor > 0.0 && self.floor <= self.cap && self.cap < 1.0) {
            return Err(Error::Config(format!(
                "epsilon schedule needs 0 < floor <= cap < 1, got floor {} cap {}",
                self.floor, self.cap
            )));
        }
        if !(self.coeff.is_finite() && self.exponent.is_finite()) {
            return Err(Error::Config("epsilon schedule coefficients must be finite".into()));
        }
        Ok(())
    }

    /// ε_t = max{floor, min(cap, coeff·t^{−exponent})}.
    pub fn epsilon(&self, t: usize) -> f64 {
        let raw = self.coeff * (t.max(1) as f64).powf(-self.exponent);
        raw.min(self.cap).max(self.floor)
    }
}

/// Propensity of `arm` under the ε-greedy law with greedy arm `greedy`.
pub fn arm_propensity(arm: usize, greedy: usize, epsilon: f64, arms: usize) -> f64 {
    if arm == greedy {
        1.0 - epsilon
    } else {
        epsilon / (arms - 1) as f64
    }
}

/// ε that reproduces the uniform 1/L warm-start propensity through
/// [`arm_propensity`] when the pulled arm is recorded as greedy.
pub fn warm_start_epsilon(arms: usize) -> f64 {
    1.0 - 1.0 / arms as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RefitCadence {
    /// refit the KRR after every pull while the support is at most this size
    pub every_round_until: usize,
    /// afterwards, refit after this many new pulls
    pub every: usize,
}

impl Default for RefitCadence {
    fn default() -> Self {
        RefitCadence {
            every_round_until: 200,
            every: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub arms: usize,
    pub warm_start: usize,
    pub schedule: EpsilonSchedule,
    pub lambda_beta: f64,
    pub p_min: f64,
    pub zeta: f64,
    pub pair_cap: usize,
    pub refit: RefitCadence,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            arms: 2,
            warm_start: 50,
            schedule: EpsilonSchedule::default(),
            lambda_beta: DEFAULT_LAMBDA_BETA,
            p_min: DEFAULT_P_MIN,
            zeta: DEFAULT_ZETA,
            pair_cap: DEFAULT_PAIR_CAP,
            refit: RefitCadence::default(),
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.arms < 2 {
            return Err(Error::Config(format!("need at least 2 arms, got {}", self.arms)));
        }
        if self.warm_start < self.arms {
            return Err(Error::Config(format!(
                "warm start {} must pull each of the {} arms at least once",
                self.warm_start, self.arms
            )));
        }
        if !(self.lambda_beta >= 0.0 && self.lambda_beta.is_finite()) {
            return Err(Error::Config(format!("lambda_beta must be nonnegative, got {}", self.lambda_beta)));
        }
        if !(self.p_min > 0.0 && self.p_min <= 1.0) {
            return Err(Error::Config(format!("p_min must lie in (0,1], got {}", self.p_min)));
        }
        if !(self.zeta >= 0.0 && self.zeta.is_finite()) {
            return Err(Error::Config(format!("zeta must be nonnegative, got {}", self.zeta)));
        }
        if self.refit.every == 0 {
            return Err(Error::Config("refit cadence must be at least 1".into()));
        }
        self.schedule.validate()
    }
}

/// One logged round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub t: usize,
    pub x: Vec<f64>,
    pub greedy_arm: usize,
    pub pulled_arm: usize,
    pub propensity: f64,
    pub reward: f64,
    pub epsilon: f64,
}

impl RoundRecord {
    /// Propensity the policy assigned to `arm` in this round.
    pub fn propensity_of(&self, arm: usize, arms: usize) -> f64 {
        arm_propensity(arm, self.greedy_arm, self.epsilon, arms)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decision {
    pub t: usize,
    pub greedy_arm: usize,
    pub pulled_arm: usize,
    pub propensity: f64,
    pub epsilon: f64,
}

/// Per-arm state. Support abscissae are projected with the direction
/// current when each point arrived, until [`PolicyState::install`]
/// replaces them.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmState {
    pub acc: IndexAccumulator,
    pub estimate: Option<IndexEstimate>,
    pub model: Option<KrrModel>,
    support: Vec<SupportPoint>,
    abscissae: Vec<f64>,
    gram: Option<Gram>,
    kernel: Option<GaussianKernel>,
    /// support size when the bandwidth was last chosen
    bandwidth_size: usize,
    pulls_since_fit: usize,
}

impl ArmState {
    fn new(arm: usize, dim: usize) -> Self {
        ArmState {
            acc: IndexAccumulator::new(arm, dim),
            estimate: None,
            model: None,
            support: Vec::new(),
            abscissae: Vec::new(),
            gram: None,
            kernel: None,
            bandwidth_size: 0,
            pulls_since_fit: 0,
        }
    }

    pub fn support(&self) -> &[SupportPoint] {
        &self.support
    }

    pub fn direction(&self) -> Option<&[f64]> {
        self.estimate.as_ref().map(|e| e.direction.as_slice())
    }

    /// f̂_i(xᵀb̂_i); 0 before a model exists.
    pub fn predict(&self, x: &[f64]) -> f64 {
        match (&self.model, self.direction()) {
            (Some(m), Some(b)) => m.predict(dot(x, b)),
            _ => 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PolicyState {
    cfg: PolicyConfig,
    score: ScoreModel,
    arms: Vec<ArmState>,
    t: usize,
    rng: Rng,
    log: Vec<RoundRecord>,
}

impl PolicyState {
    pub fn new(cfg: PolicyConfig, score: ScoreModel, rng: Rng) -> Result<Self> {
        cfg.validate()?;
        let dim = score.dim();
        if dim == 0 {
            return Err(Error::Config("context dimension must be positive".into()));
        }
        let arms = (0..cfg.arms).map(|i| ArmState::new(i, dim)).collect();
        Ok(PolicyState {
            cfg,
            score,
            arms,
            t: 0,
            rng,
            log: Vec::new(),
        })
    }

    pub fn config(&self) -> &PolicyConfig {
        &self.cfg
    }

    pub fn dim(&self) -> usize {
        self.score.dim()
    }

    /// Rounds completed.
    pub fn rounds(&self) -> usize {
        self.t
    }

    pub fn arm(&self, i: usize) -> &ArmState {
        &self.arms[i]
    }

    pub fn arms(&self) -> &[ArmState] {
        &self.arms
    }

    pub fn log(&self) -> &[RoundRecord] {
        &self.log
    }

    pub fn into_log(self) -> Vec<RoundRecord> {
        self.log
    }

    pub fn in_warm_start(&self) -> bool {
        self.t < self.cfg.warm_start
    }

    /// argmax_i f̂_i(xᵀb̂_i), ties to the lowest id.
    pub fn greedy_arm(&self, x: &[f64]) -> usize {
        let mut best = 0;
        let mut best_v = f64::NEG_INFINITY;
        for (i, a) in self.arms.iter().enumerate() {
            let v = a.predict(x);
            if v > best_v {
                best = i;
                best_v = v;
            }
        }
        best
    }

    /// Chooses the arm for the next round. Consumes randomness only after
    /// the warm start.
    pub fn decide(&mut self, x: &[f64]) -> Result<Decision> {
        self.check_context(x)?;
        let t = self.t + 1;
        let l = self.cfg.arms;
        if self.in_warm_start() {
            let arm = (t - 1) % l;
            return Ok(Decision {
                t,
                greedy_arm: arm,
                pulled_arm: arm,
                propensity: 1.0 / l as f64,
                epsilon: warm_start_epsilon(l),
            });
        }
        let greedy = self.greedy_arm(x);
        let epsilon = self.cfg.schedule.epsilon(t);
        let pulled = if self.rng.uniform() < 1.0 - epsilon {
            greedy
        } else {
            let k = self.rng.below(l - 1);
            if k >= greedy {
                k + 1
            } else {
                k
            }
        };
        Ok(Decision {
            t,
            greedy_arm: greedy,
            pulled_arm: pulled,
            propensity: arm_propensity(pulled, greedy, epsilon, l),
            epsilon,
        })
    }

    /// Feeds the realized reward of `decision` back into the estimators.
    pub fn observe(&mut self, decision: Decision, x: &[f64], reward: f64) -> Result<&RoundRecord> {
        self.check_context(x)?;
        if decision.t != self.t + 1 {
            return Err(Error::State(format!(
                "decision is for round {} but the policy is at round {}",
                decision.t,
                self.t + 1
            )));
        }
        if !reward.is_finite() {
            return Err(Error::Domain(format!("reward must be finite, got {reward}")));
        }
        self.score.update(x);
        // an unready whitening contributes a zero feature
        let w = self.score.score(x).unwrap_or_else(|_| vec![0.0; x.len()]);
        let p_min = self.cfg.p_min;
        for (i, arm) in self.arms.iter_mut().enumerate() {
            arm.acc.observe(&w, reward, decision.propensity, i == decision.pulled_arm, p_min)?;
        }
        self.t += 1;
        let t = self.t;
        let lambda_beta = self.cfg.lambda_beta;
        let lambda = ridge_schedule(t, self.cfg.zeta);
        let cap = self.cfg.pair_cap;
        let cadence = self.cfg.refit;
        let arm = &mut self.arms[decision.pulled_arm];
        let est = arm.acc.estimate_beta(lambda_beta)?;
        let u = dot(x, &est.direction);
        arm.estimate = Some(est);
        let point = SupportPoint {
            u,
            y: reward,
            w: ipw_weight(decision.propensity, p_min),
        };
        if let (Some(g), Some(k)) = (arm.gram.as_mut(), arm.kernel.as_ref()) {
            g.push(k, &arm.abscissae, u);
        }
        arm.support.push(point);
        arm.abscissae.push(u);
        arm.pulls_since_fit += 1;
        let n = arm.support.len();
        if n >= 2 && (n <= cadence.every_round_until || arm.pulls_since_fit >= cadence.every || arm.model.is_none()) {
            refit(arm, lambda, cap)?;
        }
        self.log.push(RoundRecord {
            t,
            x: x.to_vec(),
            greedy_arm: decision.greedy_arm,
            pulled_arm: decision.pulled_arm,
            propensity: decision.propensity,
            reward,
            epsilon: decision.epsilon,
        });
        Ok(self.log.last().expect("just pushed"))
    }

    /// decide, query the environment for the pulled arm's reward, observe.
    pub fn step(&mut self, x: &[f64], reward: impl FnOnce(usize) -> f64) -> Result<RoundRecord> {
        let d = self.decide(x)?;
        let y = reward(d.pulled_arm);
        self.observe(d, x, y).cloned()
    }

    /// Replaces arm `i`'s support projections and model with a refit done
    /// elsewhere (at inference times). `model.support` must carry the arm's
    /// pulls in order.
    pub fn install(&mut self, i: usize, model: KrrModel, gram: Gram) -> Result<()> {
        let arm = self
            .arms
            .get_mut(i)
            .ok_or_else(|| Error::Domain(format!("arm {i} out of range")))?;
        if model.len() != arm.support.len() || gram.len() != model.len() {
            return Err(Error::State(format!(
                "installed model has {} points, arm {i} has {}",
                model.len(),
                arm.support.len()
            )));
        }
        arm.support = model.support.clone();
        arm.abscissae = model.abscissae();
        arm.kernel = Some(model.kernel);
        arm.bandwidth_size = model.len();
        arm.gram = Some(gram);
        arm.model = Some(model);
        arm.pulls_since_fit = 0;
        Ok(())
    }

    fn check_context(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::Domain(format!(
                "context has {} coordinates, expected {}",
                x.len(),
                self.dim()
            )));
        }
        crate::error::ensure_finite("context", x)
    }
}

fn refit(arm: &mut ArmState, lambda: f64, pair_cap: usize) -> Result<()> {
    let n = arm.support.len();
    if arm.kernel.is_none() || n >= 2 * arm.bandwidth_size {
        let bw = median_bandwidth(&arm.abscissae, pair_cap)?;
        let k = GaussianKernel::new(bw.value)?;
        arm.gram = Some(Gram::new(&k, &arm.abscissae));
        arm.kernel = Some(k);
        arm.bandwidth_size = n;
    }
    let (Some(gram), Some(kernel)) = (arm.gram.as_ref(), arm.kernel) else {
        unreachable!("kernel and Gram are set together");
    };
    let warm = arm.model.as_ref().map(|m| m.dual_coeffs.clone());
    let model = KrrModel::fit_with_gram(arm.support.clone(), gram, lambda, kernel, n, warm.as_deref())?;
    arm.model = Some(model);
    arm.pulls_since_fit = 0;
    Ok(())
}
