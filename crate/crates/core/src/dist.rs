//! Action distributions emitted by the policy heads.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::envs::ActionSpace;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Clone, Debug, PartialEq)]
pub enum ActionDistribution {
    Categorical {
        probs: Vec<f64>,
    },
    /// Diagonal Gaussian; samples are clamped to `[low, high]` before reaching the environment.
    Gaussian {
        mean: Vec<f64>,
        std: Vec<f64>,
        low: f64,
        high: f64,
    },
}

/// A sampled action. For continuous actions `raw` is the unclamped draw the
/// log-probability refers to and `clamped` is what the environment receives.
#[derive(Clone, Debug, PartialEq)]
pub enum Action {
    Discrete(usize),
    Continuous { raw: Vec<f64>, clamped: Vec<f64> },
}

impl ActionDistribution {
    pub fn sample(&self, rng: &mut impl Rng) -> Action {
        match self {
            ActionDistribution::Categorical { probs } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (i, p) in probs.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        return Action::Discrete(i);
                    }
                }
                // Rounding left `acc` just below 1: take the last action with mass.
                Action::Discrete(probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1))
            }
            ActionDistribution::Gaussian { mean, std, low, high } => {
                let raw: Vec<f64> = mean
                    .iter()
                    .zip(std)
                    .map(|(m, s)| {
                        let xi: f64 = StandardNormal.sample(rng);
                        m + s * xi
                    })
                    .collect();
                let clamped = raw.iter().map(|x| x.clamp(*low, *high)).collect();
                Action::Continuous { raw, clamped }
            }
        }
    }

    /// Most likely action.
    pub fn mode(&self) -> Action {
        match self {
            ActionDistribution::Categorical { probs } => {
                let best =
                    probs.iter().enumerate().fold((0, f64::NEG_INFINITY), |acc, (i, &p)| if p > acc.1 { (i, p) } else { acc });
                Action::Discrete(best.0)
            }
            ActionDistribution::Gaussian { mean, low, high, .. } => {
                Action::Continuous { raw: mean.clone(), clamped: mean.iter().map(|x| x.clamp(*low, *high)).collect() }
            }
        }
    }

    pub fn log_prob(&self, action: &Action) -> f64 {
        match (self, action) {
            (ActionDistribution::Categorical { probs }, Action::Discrete(a)) => probs[*a].ln(),
            (ActionDistribution::Gaussian { mean, std, .. }, Action::Continuous { raw, .. }) => mean
                .iter()
                .zip(std)
                .zip(raw)
                .map(|((m, s), x)| {
                    let z = (x - m) / s;
                    -0.5 * z * z - s.ln() - 0.5 * LN_2PI
                })
                .sum(),
            _ => panic!("action does not match distribution type"),
        }
    }

    /// Shannon entropy (categorical) or differential entropy (Gaussian).
    pub fn entropy(&self) -> f64 {
        match self {
            ActionDistribution::Categorical { probs } => -probs.iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>(),
            ActionDistribution::Gaussian { std, .. } => std.iter().map(|s| s.ln() + 0.5 * (LN_2PI + 1.0)).sum(),
        }
    }

    pub fn matches(&self, space: &ActionSpace) -> bool {
        match (self, space) {
            (ActionDistribution::Categorical { probs }, ActionSpace::Discrete(k)) => probs.len() == *k,
            (ActionDistribution::Gaussian { mean, .. }, ActionSpace::Continuous { dim, .. }) => mean.len() == *dim,
            _ => false,
        }
    }
}

pub(crate) fn ln_2pi() -> f64 {
    LN_2PI
}
