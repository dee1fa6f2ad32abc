use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{dot, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkParams {
    pub mu1: f64,
    pub mu2: f64,
    pub a: f64,
    pub k: f64,
}

impl Default for LinkParams {
    fn default() -> Self {
        LinkParams {
            mu1: 0.6,
            mu2: 0.4,
            a: 0.4,
            k: 1.0,
        }
    }
}

/// (g₁(z), g₂(z)) = (μ₁ + a·tanh(kz), μ₂ − a·tanh(kz)).
pub fn links(z: f64, p: &LinkParams) -> (f64, f64) {
    let s = p.a * (p.k * z).tanh();
    (p.mu1 + s, p.mu2 - s)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LinkFamily {
    /// two arms with the opposed tanh links
    Tanh(LinkParams),
    /// f_i(z) = z for every arm
    Linear { arms: usize },
}

impl Default for LinkFamily {
    fn default() -> Self {
        LinkFamily::Tanh(LinkParams::default())
    }
}

impl LinkFamily {
    pub fn arms(&self) -> usize {
        match self {
            LinkFamily::Tanh(_) => 2,
            LinkFamily::Linear { arms } => *arms,
        }
    }

    pub fn eval(&self, arm: usize, z: f64) -> f64 {
        match self {
            LinkFamily::Tanh(p) => {
                let (g1, g2) = links(z, p);
                if arm == 0 {
                    g1
                } else {
                    g2
                }
            }
            LinkFamily::Linear { .. } => z,
        }
    }
}

/// b ~ N(0, I_d), b₀ ← |b₀|, b ← b/‖b‖.
pub fn sample_direction(d: usize, rng: &mut Rng) -> Vec<f64> {
    loop {
        let mut b = rng.normal_vec(d);
        b[0] = b[0].abs();
        let norm = dot(&b, &b).sqrt();
        if norm > 0.0 && b[0] > 0.0 {
            return b.iter().map(|v| v / norm).collect();
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticRound {
    pub x: Vec<f64>,
    pub means: Vec<f64>,
    /// standard normal draw; the pulled arm sees mean + σ·noise
    pub noise: f64,
}

impl SyntheticRound {
    pub fn reward(&self, arm: usize, sigma: f64) -> f64 {
        self.means[arm] + sigma * self.noise
    }
}

/// Gaussian contexts, single-index arm means, homoscedastic noise.
#[derive(Debug, Clone)]
pub struct SyntheticEnv {
    d: usize,
    sigma: f64,
    betas: Vec<Vec<f64>>,
    family: LinkFamily,
    rng: Rng,
}

impl SyntheticEnv {
    /// `beta_rng` draws the arm directions; `rng` drives contexts and noise.
    pub fn new(d: usize, sigma: f64, family: LinkFamily, beta_rng: &mut Rng, rng: Rng) -> Result<Self> {
        let betas = (0..family.arms()).map(|_| sample_direction(d, beta_rng)).collect();
        Self::with_betas(sigma, family, betas, rng)
    }

    pub fn with_betas(sigma: f64, family: LinkFamily, betas: Vec<Vec<f64>>, rng: Rng) -> Result<Self> {
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::Config(format!("sigma must be nonnegative, got {sigma}")));
        }
        if betas.len() != family.arms() || family.arms() < 2 {
            return Err(Error::Config(format!(
                "link family has {} arms but {} directions were given",
                family.arms(),
                betas.len()
            )));
        }
        let d = betas[0].len();
        if d == 0 || betas.iter().any(|b| b.len() != d) {
            return Err(Error::Config("arm directions must share a positive dimension".into()));
        }
        Ok(SyntheticEnv {
            d,
            sigma,
            betas,
            family,
            rng,
        })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn arms(&self) -> usize {
        self.betas.len()
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn betas(&self) -> &[Vec<f64>] {
        &self.betas
    }

    pub fn family(&self) -> &LinkFamily {
        &self.family
    }

    /// g_i(xᵀβ_i) for every arm.
    pub fn means(&self, x: &[f64]) -> Vec<f64> {
        self.betas
            .iter()
            .enumerate()
            .map(|(i, b)| self.family.eval(i, dot(x, b)))
            .collect()
    }

    pub fn draw_round(&mut self) -> SyntheticRound {
        let x = self.rng.normal_vec(self.d);
        let noise = self.rng.normal();
        let means = self.means(&x);
        SyntheticRound { x, means, noise }
    }
}
