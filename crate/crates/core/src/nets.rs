//! The shared recurrent communicating policy and the recurrent critic with
//! conditional normalization.
//!
//! Both networks are batched over agents (one row per agent) and contain no
//! tensor whose shape depends on the number of agents. Messages from the
//! other agents are encoded by `F` and averaged with [`Graph::mean_others`],
//! which sums in ascending agent order. The critic has its own observation
//! encoder so that its loss never reaches the policy parameters.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::cpr::CprConfig;
use crate::dist::{ln_2pi, ActionDistribution};
use crate::envs::ActionSpace;
use crate::error::{Error, Result};
use crate::params::{Bound, Gru, Linear, ParamGroup};
use crate::tensor::Mat;

pub const CN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriticNorm {
    /// Scale and offset generated from the task vector.
    Conditional,
    /// Learned scale and offset independent of the task vector.
    Plain,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArchConfig {
    /// Width of the observation and message encoders.
    pub embed_dim: usize,
    /// Hidden size of the policy and critic recurrent cells.
    pub hidden_dim: usize,
    pub message_dim: usize,
    /// Agents exchange messages.
    pub communication: bool,
    /// The critic sees the pooled observations of the other agents.
    pub centralized_critic: bool,
    pub critic_norm: CriticNorm,
    pub cpr: CprConfig,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            embed_dim: 64,
            hidden_dim: 64,
            message_dim: 16,
            communication: true,
            centralized_critic: true,
            critic_norm: CriticNorm::Conditional,
            cpr: CprConfig::default(),
        }
    }
}

impl ArchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.hidden_dim == 0 {
            return Err(Error::Config("arch.embed_dim and arch.hidden_dim must be positive".into()));
        }
        if self.communication && self.message_dim == 0 {
            return Err(Error::Config("arch.message_dim must be positive when communication is on".into()));
        }
        if self.cpr.enabled && !self.communication && self.cpr.input.uses_messages() {
            return Err(Error::Config("arch.cpr.input uses messages but arch.communication is off".into()));
        }
        self.cpr.validate()
    }

    /// Message width actually exchanged (zero without communication).
    pub fn effective_message_dim(&self) -> usize {
        if self.communication {
            self.message_dim
        } else {
            0
        }
    }
}

/// Policy head outputs on the graph.
#[derive(Clone, Copy, Debug)]
pub enum HeadVars {
    /// `n × |A|` log-probabilities.
    Discrete { log_probs: Var },
    /// `n × d` means and a `1 × d` standard deviation shared by all agents.
    Continuous { mean: Var, std: Var },
}

impl HeadVars {
    pub fn distributions(&self, g: &Graph, space: &ActionSpace) -> Vec<ActionDistribution> {
        match (*self, *space) {
            (HeadVars::Discrete { log_probs }, _) => {
                let lp = g.value(log_probs);
                (0..lp.rows)
                    .map(|r| ActionDistribution::Categorical { probs: lp.row(r).iter().map(|x| x.exp()).collect() })
                    .collect()
            }
            (HeadVars::Continuous { mean, std }, ActionSpace::Continuous { low, high, .. }) => {
                let m = g.value(mean);
                let s = g.value(std);
                (0..m.rows)
                    .map(|r| ActionDistribution::Gaussian { mean: m.row(r).to_vec(), std: s.data.clone(), low, high })
                    .collect()
            }
            (HeadVars::Continuous { .. }, ActionSpace::Discrete(_)) => panic!("continuous head with discrete space"),
        }
    }

    /// Per-agent log-probability (`n × 1`) of the taken actions.
    /// `actions` is one index per row (discrete) or `n × d` raw samples (continuous).
    pub fn log_prob(&self, g: &mut Graph, actions: &TakenActions) -> Var {
        match (*self, actions) {
            (HeadVars::Discrete { log_probs }, TakenActions::Discrete(a)) => g.gather(log_probs, a),
            (HeadVars::Continuous { mean, std }, TakenActions::Continuous(raw)) => {
                let n = raw.rows;
                let a = g.constant(raw.clone());
                let std_b = g.broadcast_rows(std, n);
                let diff = g.sub(a, mean);
                let z = g.div(diff, std_b);
                let z2 = g.square(z);
                let half = g.scale(z2, -0.5);
                let log_std = g.ln(std_b);
                let t = g.sub(half, log_std);
                let t = g.add_scalar(t, -0.5 * ln_2pi());
                g.sum_cols(t)
            }
            _ => panic!("taken actions do not match the policy head"),
        }
    }

    /// Per-agent entropy, `n × 1`.
    pub fn entropy(&self, g: &mut Graph, n: usize) -> Var {
        match *self {
            HeadVars::Discrete { log_probs } => {
                let p = g.exp(log_probs);
                let plp = g.mul(p, log_probs);
                let s = g.sum_cols(plp);
                g.scale(s, -1.0)
            }
            HeadVars::Continuous { std, .. } => {
                let ls = g.ln(std);
                let s = g.sum_cols(ls);
                let d = g.value(std).cols as f64;
                let s = g.add_scalar(s, 0.5 * (ln_2pi() + 1.0) * d);
                g.broadcast_rows(s, n)
            }
        }
    }
}

/// Actions as stored in the rollout buffer.
#[derive(Clone, Debug, PartialEq)]
pub enum TakenActions {
    Discrete(Vec<usize>),
    /// Unclamped samples, `n × d`.
    Continuous(Mat),
}

#[derive(Clone, Debug)]
pub struct PolicyStepVars {
    pub head: HeadVars,
    /// `n × d_m` messages for the next step, if communicating.
    pub message: Option<Var>,
    pub hidden: Var,
}

#[derive(Clone, Debug)]
pub struct PolicyNet {
    pub obs_encoder: Linear,
    pub msg_encoder: Option<Linear>,
    pub cell: Gru,
    pub action_head: Linear,
    /// Raw (pre-softplus) standard deviation for continuous actions.
    pub log_std: Option<usize>,
    pub message_head: Option<Linear>,
    pub space: ActionSpace,
    pub hidden_dim: usize,
    pub task_dim: usize,
}

/// Raw value whose softplus is 0.5.
const STD_INIT_RAW: f64 = -0.432_752_129_846_284_3;

impl PolicyNet {
    pub fn build(arch: &ArchConfig, obs_dim: usize, space: ActionSpace, group: &mut ParamGroup, rng: &mut impl Rng) -> Self {
        let e = arch.embed_dim;
        let task_dim = arch.cpr.task_dim;
        let obs_encoder = Linear::new(group, "policy.obs_encoder", obs_dim, e, 1.0, rng);
        let msg_encoder = arch.communication.then(|| Linear::new(group, "policy.msg_encoder", arch.message_dim, e, 1.0, rng));
        let input = e + if arch.communication { e } else { 0 } + task_dim;
        let cell = Gru::new(group, "policy.cell", input, arch.hidden_dim, rng);
        let (action_head, log_std) = match space {
            ActionSpace::Discrete(k) => (Linear::new(group, "policy.action_head", arch.hidden_dim, k, 0.01, rng), None),
            ActionSpace::Continuous { dim, .. } => {
                let head = Linear::new(group, "policy.action_head", arch.hidden_dim, dim, 0.01, rng);
                let raw = group.push("policy.std_raw", Mat::filled(1, dim, STD_INIT_RAW));
                (head, Some(raw))
            }
        };
        let message_head =
            arch.communication.then(|| Linear::new(group, "policy.message_head", arch.hidden_dim, arch.message_dim, 1.0, rng));
        Self { obs_encoder, msg_encoder, cell, action_head, log_std, message_head, space, hidden_dim: arch.hidden_dim, task_dim }
    }

    /// `G(o)` for every row.
    pub fn encode_obs(&self, g: &mut Graph, p: &Bound, obs: Var) -> Var {
        let y = self.obs_encoder.forward(g, p, obs);
        g.tanh(y)
    }

    /// `F(m)` for every row.
    pub fn encode_each_message(&self, g: &mut Graph, p: &Bound, messages: Var) -> Var {
        let enc = self.msg_encoder.expect("message encoder requires communication");
        let y = enc.forward(g, p, messages);
        g.tanh(y)
    }

    /// Row `i`: mean of `F(m_j)` over all `j != i`.
    pub fn fuse_messages(&self, g: &mut Graph, p: &Bound, messages: Var) -> Var {
        let enc = self.encode_each_message(g, p, messages);
        g.mean_others(enc)
    }

    /// One recurrent step from encoded observations, fused messages and the
    /// task vector (`1 × d_z`, shared by all rows).
    pub fn step(&self, g: &mut Graph, p: &Bound, obs_enc: Var, fused: Option<Var>, z: Var, hidden: Var) -> PolicyStepVars {
        let n = g.value(obs_enc).rows;
        let zb = g.broadcast_rows(z, n);
        let x = match fused {
            Some(f) => g.concat_cols(&[obs_enc, f, zb]),
            None => g.concat_cols(&[obs_enc, zb]),
        };
        let hidden = self.cell.forward(g, p, x, hidden);
        let head_out = self.action_head.forward(g, p, hidden);
        let head = match self.log_std {
            None => HeadVars::Discrete { log_probs: g.log_softmax(head_out) },
            Some(raw) => HeadVars::Continuous { mean: head_out, std: g.softplus(p.get(raw)) },
        };
        let message = self.message_head.map(|mh| {
            let m = mh.forward(g, p, hidden);
            g.tanh(m)
        });
        PolicyStepVars { head, message, hidden }
    }

    /// Fuses incoming `(sender index, message)` pairs for one agent: the mean
    /// of `F(m_j)`, summed in ascending sender order.
    pub fn encode_messages(&self, params: &ParamGroup, incoming: &[(usize, Vec<f64>)]) -> Result<Vec<f64>> {
        if incoming.is_empty() {
            return Err(Error::Contract("message fusion needs at least one incoming message".into()));
        }
        let mut sorted: Vec<&(usize, Vec<f64>)> = incoming.iter().collect();
        sorted.sort_by_key(|(idx, _)| *idx);
        let mut g = Graph::new();
        let p = params.bind(&mut g, false);
        let rows: Vec<&[f64]> = sorted.iter().map(|(_, m)| m.as_slice()).collect();
        let m = g.constant(Mat::from_rows(&rows));
        let enc = self.encode_each_message(&mut g, &p, m);
        let enc = g.value(enc);
        let mut acc = vec![0.0; enc.cols];
        for r in 0..enc.rows {
            for (a, x) in acc.iter_mut().zip(enc.row(r)) {
                *a += x;
            }
        }
        let denom = enc.rows as f64;
        Ok(acc.into_iter().map(|a| a / denom).collect())
    }

    /// Single-agent step on plain values.
    pub fn policy_step(
        &self,
        params: &ParamGroup,
        obs: &[f64],
        hidden: &[f64],
        fused: Option<&[f64]>,
        z: &[f64],
    ) -> Result<PolicyOutput> {
        check_finite("observation", obs)?;
        check_finite("hidden state", hidden)?;
        check_finite("task vector", z)?;
        if let Some(f) = fused {
            check_finite("fused messages", f)?;
        }
        let mut g = Graph::new();
        let p = params.bind(&mut g, false);
        let o = g.constant(Mat::row_vector(obs.to_vec()));
        let oe = self.encode_obs(&mut g, &p, o);
        let fv = fused.map(|f| g.constant(Mat::row_vector(f.to_vec())));
        let zv = g.constant(Mat::row_vector(z.to_vec()));
        let h = g.constant(Mat::row_vector(hidden.to_vec()));
        let out = self.step(&mut g, &p, oe, fv, zv, h);
        let dist = out.head.distributions(&g, &self.space).remove(0);
        Ok(PolicyOutput {
            dist,
            message: out.message.map(|m| g.value(m).data.clone()).unwrap_or_default(),
            next_hidden: g.value(out.hidden).data.clone(),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyOutput {
    pub dist: ActionDistribution,
    /// Message delivered to the other agents at the next step.
    pub message: Vec<f64>,
    pub next_hidden: Vec<f64>,
}

pub(crate) fn check_finite(what: &str, v: &[f64]) -> Result<()> {
    match v.iter().position(|x| !x.is_finite()) {
        Some(i) => Err(Error::Numeric(format!("non-finite {what} at index {i}"))),
        None => Ok(()),
    }
}

#[derive(Clone, Debug)]
pub enum Normalizer {
    /// `ω(z) → [scale | offset]`.
    Conditional(Linear),
    Plain {
        scale: usize,
        offset: usize,
    },
}

#[derive(Clone, Debug)]
pub struct CriticNet {
    pub obs_encoder: Linear,
    pub cell: Gru,
    pub norm: Normalizer,
    pub value_head: Linear,
    pub centralized: bool,
    pub hidden_dim: usize,
}

impl CriticNet {
    pub fn build(arch: &ArchConfig, obs_dim: usize, group: &mut ParamGroup, rng: &mut impl Rng) -> Self {
        let e = arch.embed_dim;
        let h = arch.hidden_dim;
        let obs_encoder = Linear::new(group, "critic.obs_encoder", obs_dim, e, 1.0, rng);
        let input = if arch.centralized_critic { 2 * e } else { e };
        let cell = Gru::new(group, "critic.cell", input, h, rng);
        let norm = match arch.critic_norm {
            CriticNorm::Conditional => {
                let gen = Linear::new(group, "critic.cn_generator", arch.cpr.task_dim, 2 * h, 0.1, rng);
                let bias = group.get_mut(gen.bias);
                for c in 0..h {
                    bias.set(0, c, 1.0);
                }
                Normalizer::Conditional(gen)
            }
            CriticNorm::Plain => Normalizer::Plain {
                scale: group.push("critic.norm_scale", Mat::filled(1, h, 1.0)),
                offset: group.push("critic.norm_offset", Mat::zeros(1, h)),
            },
        };
        let value_head = Linear::new(group, "critic.value_head", h, 1, 1.0, rng);
        Self { obs_encoder, cell, norm, value_head, centralized: arch.centralized_critic, hidden_dim: h }
    }

    pub fn encode_obs(&self, g: &mut Graph, p: &Bound, obs: Var) -> Var {
        let y = self.obs_encoder.forward(g, p, obs);
        g.tanh(y)
    }

    /// `(scale, offset)`, each `1 × d_h`.
    pub fn modulation(&self, g: &mut Graph, p: &Bound, z: Var) -> (Var, Var) {
        match &self.norm {
            Normalizer::Conditional(gen) => {
                let so = gen.forward(g, p, z);
                (g.slice_cols(so, 0, self.hidden_dim), g.slice_cols(so, self.hidden_dim, self.hidden_dim))
            }
            Normalizer::Plain { scale, offset } => (p.get(*scale), p.get(*offset)),
        }
    }

    /// Per-row standardization followed by `scale ⊙ x + offset`.
    pub fn cn_modulate(&self, g: &mut Graph, p: &Bound, features: Var, z: Var) -> Var {
        let normed = g.layer_norm(features, CN_EPS);
        let (scale, offset) = self.modulation(g, p, z);
        let y = g.mul_row(normed, scale);
        g.add_row(y, offset)
    }

    /// Values from encoded own observations and pooled encodings of the others.
    pub fn value_step(&self, g: &mut Graph, p: &Bound, own: Var, pooled: Option<Var>, hidden: Var, z: Var) -> (Var, Var) {
        let x = match pooled {
            Some(pooled) => g.concat_cols(&[own, pooled]),
            None => own,
        };
        let hidden = self.cell.forward(g, p, x, hidden);
        let modulated = self.cn_modulate(g, p, hidden, z);
        (self.value_head.forward(g, p, modulated), hidden)
    }

    /// Values for all agents of one environment (`n × 1`) and the next hidden state.
    pub fn step(&self, g: &mut Graph, p: &Bound, obs: Var, hidden: Var, z: Var) -> (Var, Var) {
        let enc = self.encode_obs(g, p, obs);
        let pooled = self.centralized.then(|| g.mean_others(enc));
        self.value_step(g, p, enc, pooled, hidden, z)
    }

    /// Single-agent value on plain values. `others_pooled` is the mean of the
    /// other agents' encoded observations (ignored by a decentralized critic).
    pub fn critic_value(
        &self,
        params: &ParamGroup,
        obs: &[f64],
        others_pooled: &[f64],
        hidden: &[f64],
        z: &[f64],
    ) -> Result<(f64, Vec<f64>)> {
        check_finite("observation", obs)?;
        check_finite("pooled observations", others_pooled)?;
        check_finite("hidden state", hidden)?;
        check_finite("task vector", z)?;
        let mut g = Graph::new();
        let p = params.bind(&mut g, false);
        let o = g.constant(Mat::row_vector(obs.to_vec()));
        let own = self.encode_obs(&mut g, &p, o);
        let pooled = self.centralized.then(|| g.constant(Mat::row_vector(others_pooled.to_vec())));
        let h = g.constant(Mat::row_vector(hidden.to_vec()));
        let zv = g.constant(Mat::row_vector(z.to_vec()));
        let (v, h) = self.value_step(&mut g, &p, own, pooled, h, zv);
        Ok((g.value(v).data[0], g.value(h).data.clone()))
    }

    /// Mean of the encoded observations of every agent except `i`.
    pub fn pool_others(&self, params: &ParamGroup, all_obs: &Mat, i: usize) -> Vec<f64> {
        let mut g = Graph::new();
        let p = params.bind(&mut g, false);
        let o = g.constant(all_obs.clone());
        let enc = self.encode_obs(&mut g, &p, o);
        let pooled = g.mean_others(enc);
        g.value(pooled).row(i).to_vec()
    }
}
