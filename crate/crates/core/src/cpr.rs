//! Communication pattern recognition.
//!
//! Each agent's message is mapped by the context estimator to a diagonal
//! Gaussian over a latent context. The per-agent Gaussians are multiplied
//! (precisions add, means are precision weighted), a context is drawn from
//! the product with the reparameterization `c = μ + σ ⊙ ξ`, and a recurrent
//! encoder turns the context history into the task vector `z` shared by all
//! agents and by the critic.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::nets::check_finite;
use crate::params::{Bound, Gru, Linear, ParamGroup};
use crate::tensor::Mat;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextInput {
    Messages,
    /// Previous-step `(o, a, r)` of each agent.
    Transitions,
    Both,
}

impl ContextInput {
    pub fn uses_messages(self) -> bool {
        matches!(self, ContextInput::Messages | ContextInput::Both)
    }

    pub fn uses_transitions(self) -> bool {
        matches!(self, ContextInput::Transitions | ContextInput::Both)
    }
}

/// Which posterior the information-bottleneck penalty applies to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KlTarget {
    PerMessage,
    Fused,
}

/// Which losses train the recognizer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientSource {
    Critic,
    Policy,
    Both,
}

impl GradientSource {
    pub fn from_critic(self) -> bool {
        matches!(self, GradientSource::Critic | GradientSource::Both)
    }

    pub fn from_policy(self) -> bool {
        matches!(self, GradientSource::Policy | GradientSource::Both)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CprConfig {
    pub enabled: bool,
    pub context_dim: usize,
    /// Width of the task vector `z`; the policy and critic keep this input
    /// (fed zeros) when the recognizer is disabled.
    pub task_dim: usize,
    pub hidden_dim: usize,
    /// Recurrent context encoder; a feedforward map of `c` otherwise.
    pub recurrent: bool,
    /// Sample `c`; use the fused mean otherwise.
    pub stochastic: bool,
    pub input: ContextInput,
    pub kl_target: KlTarget,
    pub gradient_source: GradientSource,
    pub variance_floor: f64,
    pub variance_cap: f64,
}

impl Default for CprConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            context_dim: 8,
            task_dim: 8,
            hidden_dim: 32,
            recurrent: true,
            stochastic: true,
            input: ContextInput::Messages,
            kl_target: KlTarget::PerMessage,
            gradient_source: GradientSource::Critic,
            variance_floor: 1e-4,
            variance_cap: 1e4,
        }
    }
}

impl CprConfig {
    pub fn validate(&self) -> Result<()> {
        if self.task_dim == 0 {
            return Err(Error::Config("arch.cpr.task_dim must be positive".into()));
        }
        if self.enabled && (self.context_dim == 0 || self.hidden_dim == 0) {
            return Err(Error::Config("arch.cpr.context_dim and arch.cpr.hidden_dim must be positive".into()));
        }
        if !(self.variance_floor > 0.0 && self.variance_cap > self.variance_floor) {
            return Err(Error::Config("arch.cpr variance floor/cap must satisfy 0 < floor < cap".into()));
        }
        Ok(())
    }
}

/// Diagonal Gaussian over the latent context.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianContext {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

impl GaussianContext {
    pub fn new(mean: Vec<f64>, variance: Vec<f64>) -> Result<Self> {
        let q = Self { mean, variance };
        q.validate()?;
        Ok(q)
    }

    pub fn standard(dim: usize) -> Self {
        Self { mean: vec![0.0; dim], variance: vec![1.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.mean.len() != self.variance.len() {
            return Err(Error::Contract("context mean and variance differ in length".into()));
        }
        check_finite("context mean", &self.mean)?;
        if let Some(v) = self.variance.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::Contract(format!("context variance {v} is not strictly positive")));
        }
        Ok(())
    }
}

/// Normalized product of diagonal Gaussians, accumulated in precision space
/// in list order.
pub fn fuse_contexts(contexts: &[GaussianContext]) -> Result<GaussianContext> {
    let first = contexts.first().ok_or_else(|| Error::Contract("cannot fuse an empty list of contexts".into()))?;
    let d = first.dim();
    let mut precision = vec![0.0; d];
    let mut weighted = vec![0.0; d];
    for q in contexts {
        q.validate()?;
        if q.dim() != d {
            return Err(Error::Contract("contexts differ in dimension".into()));
        }
        for k in 0..d {
            let p = 1.0 / q.variance[k];
            precision[k] += p;
            weighted[k] += q.mean[k] * p;
        }
    }
    let variance = precision.iter().map(|p| 1.0 / p).collect();
    let mean = weighted.iter().zip(&precision).map(|(w, p)| w / p).collect();
    Ok(GaussianContext { mean, variance })
}

/// `c = mean + sqrt(variance) ⊙ noise`.
pub fn sample_context_with(q: &GaussianContext, noise: &[f64]) -> Vec<f64> {
    q.mean.iter().zip(&q.variance).zip(noise).map(|((m, v), xi)| m + v.sqrt() * xi).collect()
}

pub fn draw_noise(dim: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

pub fn sample_context(q: &GaussianContext, rng: &mut impl Rng) -> Vec<f64> {
    let noise = draw_noise(q.dim(), rng);
    sample_context_with(q, &noise)
}

/// `KL(q || N(0, I)) = ½ Σ (μ² + σ² − 1 − ln σ²)`.
pub fn kl_to_prior(q: &GaussianContext) -> f64 {
    0.5 * q.mean.iter().zip(&q.variance).map(|(m, v)| m * m + v - 1.0 - v.ln()).sum::<f64>()
}

/// Graph form of [`kl_to_prior`], one value per row: `n × 1`.
pub fn kl_rows(g: &mut Graph, mean: Var, variance: Var) -> Var {
    let m2 = g.square(mean);
    let t = g.add(m2, variance);
    let lv = g.ln(variance);
    let t = g.sub(t, lv);
    let t = g.add_scalar(t, -1.0);
    let s = g.sum_cols(t);
    g.scale(s, 0.5)
}

/// Graph form of [`fuse_contexts`] over the rows of `mean`/`variance`.
pub fn fuse_rows(g: &mut Graph, mean: Var, variance: Var) -> (Var, Var) {
    let (n, d) = g.value(variance).shape();
    let ones = g.constant(Mat::filled(n, d, 1.0));
    let precision = g.div(ones, variance);
    let weighted = g.mul(mean, precision);
    let p_sum = g.sum_rows(precision);
    let w_sum = g.sum_rows(weighted);
    let one = g.constant(Mat::filled(1, d, 1.0));
    let fused_var = g.div(one, p_sum);
    let fused_mean = g.div(w_sum, p_sum);
    (fused_mean, fused_var)
}

/// Recurrent (or feedforward) state of the context encoder; one per environment.
#[derive(Clone, Debug, PartialEq)]
pub struct CprState {
    pub hidden: Vec<f64>,
}

#[derive(Clone, Debug)]
pub enum TaskEncoder {
    Recurrent(Gru),
    Feedforward(Linear),
}

/// Graph outputs of one recognizer step.
#[derive(Clone, Copy, Debug)]
pub struct CprStepVars {
    /// Per-agent posteriors, `n × d_c`.
    pub mean: Var,
    pub variance: Var,
    /// Fused posterior, `1 × d_c`.
    pub fused_mean: Var,
    pub fused_variance: Var,
    pub context: Var,
    /// `1 × d_z`.
    pub z: Var,
    pub hidden: Var,
}

#[derive(Clone, Debug)]
pub struct CprNet {
    pub config: CprConfig,
    pub input_dim: usize,
    pub trunk: Linear,
    pub mean_head: Linear,
    pub var_head: Linear,
    pub encoder: TaskEncoder,
    pub z_head: Linear,
}

impl CprNet {
    pub fn build(config: &CprConfig, input_dim: usize, group: &mut ParamGroup, rng: &mut impl Rng) -> Self {
        let h = config.hidden_dim;
        let trunk = Linear::new(group, "cpr.estimator.trunk", input_dim, h, 1.0, rng);
        let mean_head = Linear::new(group, "cpr.estimator.mean", h, config.context_dim, 1.0, rng);
        let var_head = Linear::new(group, "cpr.estimator.variance", h, config.context_dim, 1.0, rng);
        let encoder = if config.recurrent {
            TaskEncoder::Recurrent(Gru::new(group, "cpr.encoder", config.context_dim, h, rng))
        } else {
            TaskEncoder::Feedforward(Linear::new(group, "cpr.encoder", config.context_dim, h, 1.0, rng))
        };
        let z_head = Linear::new(group, "cpr.z_head", h, config.task_dim, 1.0, rng);
        Self { config: config.clone(), input_dim, trunk, mean_head, var_head, encoder, z_head }
    }

    /// Context estimator applied to every row: `(mean, variance)`, each `n × d_c`.
    pub fn posteriors(&self, g: &mut Graph, p: &Bound, input: Var) -> (Var, Var) {
        let h = self.trunk.forward(g, p, input);
        let h = g.tanh(h);
        let mean = self.mean_head.forward(g, p, h);
        let raw = self.var_head.forward(g, p, h);
        let var = g.softplus(raw);
        let var = g.add_scalar(var, self.config.variance_floor);
        let var = g.clamp_max(var, self.config.variance_cap);
        (mean, var)
    }

    /// Advances the context encoder: `(z, next hidden)`.
    pub fn encode(&self, g: &mut Graph, p: &Bound, context: Var, hidden: Var) -> (Var, Var) {
        let hidden = match &self.encoder {
            TaskEncoder::Recurrent(cell) => cell.forward(g, p, context, hidden),
            TaskEncoder::Feedforward(layer) => {
                let y = layer.forward(g, p, context);
                g.tanh(y)
            }
        };
        let z = self.z_head.forward(g, p, hidden);
        (g.tanh(z), hidden)
    }

    /// One full step from per-agent inputs (`n × input_dim`) and noise `ξ`.
    pub fn step(&self, g: &mut Graph, p: &Bound, input: Var, hidden: Var, noise: &Mat) -> CprStepVars {
        let (mean, variance) = self.posteriors(g, p, input);
        let (fused_mean, fused_variance) = fuse_rows(g, mean, variance);
        let context = if self.config.stochastic {
            let xi = g.constant(noise.clone());
            let sd = g.sqrt(fused_variance);
            let spread = g.mul(sd, xi);
            g.add(fused_mean, spread)
        } else {
            fused_mean
        };
        let (z, hidden) = self.encode(g, p, context, hidden);
        CprStepVars { mean, variance, fused_mean, fused_variance, context, z, hidden }
    }

    pub fn initial_state(&self) -> CprState {
        CprState { hidden: vec![0.0; self.config.hidden_dim] }
    }

    pub fn estimate_context(&self, params: &ParamGroup, input: &[f64]) -> Result<GaussianContext> {
        check_finite("message", input)?;
        if input.len() != self.input_dim {
            return Err(Error::Contract(format!("expected input of width {}, got {}", self.input_dim, input.len())));
        }
        let mut g = Graph::new();
        let p = params.bind(&mut g, false);
        let x = g.constant(Mat::row_vector(input.to_vec()));
        let (m, v) = self.posteriors(&mut g, &p, x);
        Ok(GaussianContext { mean: g.value(m).data.clone(), variance: g.value(v).data.clone() })
    }

    pub fn encode_task(&self, params: &ParamGroup, context: &[f64], state: &CprState) -> Result<(Vec<f64>, CprState)> {
        check_finite("context", context)?;
        let mut g = Graph::new();
        let p = params.bind(&mut g, false);
        let c = g.constant(Mat::row_vector(context.to_vec()));
        let h = g.constant(Mat::row_vector(state.hidden.clone()));
        let (z, h) = self.encode(&mut g, &p, c, h);
        Ok((g.value(z).data.clone(), CprState { hidden: g.value(h).data.clone() }))
    }
}
