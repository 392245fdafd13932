//! The full agent: shared policy, critic and recognizer, wired for one
//! environment step on a graph.
//!
//! Gradient routing is structural. Inputs to the recognizer are constants
//! (stored messages or transitions), so nothing the recognizer computes
//! reaches the policy parameters. The task vector enters the policy and the
//! critic through [`Graph::detach`] unless the configured gradient source
//! names that consumer.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::cpr::{CprNet, CprStepVars};
use crate::envs::ActionSpace;
use crate::error::Result;
use crate::nets::{ArchConfig, CriticNet, HeadVars, PolicyNet};
use crate::params::{Bound, ParamGroup};
use crate::tensor::Mat;

/// θ (policy), μ (critic) and φ (recognizer). φ is empty without a recognizer.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AgentParams {
    pub policy: ParamGroup,
    pub critic: ParamGroup,
    pub cpr: ParamGroup,
}

impl AgentParams {
    pub fn groups(&self) -> [&ParamGroup; 3] {
        [&self.policy, &self.critic, &self.cpr]
    }

    pub fn groups_mut(&mut self) -> [&mut ParamGroup; 3] {
        [&mut self.policy, &mut self.critic, &mut self.cpr]
    }

    pub fn num_scalars(&self) -> usize {
        self.groups().iter().map(|g| g.num_scalars()).sum()
    }

    pub fn bind(&self, g: &mut Graph, track: bool) -> BoundParams {
        BoundParams { policy: self.policy.bind(g, track), critic: self.critic.bind(g, track), cpr: self.cpr.bind(g, track) }
    }
}

#[derive(Clone, Debug)]
pub struct BoundParams {
    pub policy: Bound,
    pub critic: Bound,
    pub cpr: Bound,
}

/// Recurrent state carried between steps of one environment.
#[derive(Clone, Copy, Debug)]
pub struct Carry {
    /// `n × d_h`.
    pub policy_h: Var,
    pub critic_h: Var,
    /// `1 × d_hz`; unused without a recognizer.
    pub cpr_h: Var,
    /// Messages emitted at the previous step, `n × d_m`.
    pub messages: Option<Var>,
}

/// Constant inputs of one step.
#[derive(Clone, Debug)]
pub struct StepInputs {
    /// `n × d_o`.
    pub obs: Mat,
    /// Per-agent recognizer input, `n × w`.
    pub cpr_input: Mat,
    /// `1 × d_c` standard-normal draw for the context sample.
    pub noise: Mat,
}

#[derive(Clone, Debug)]
pub struct StepVars {
    pub head: HeadVars,
    /// `n × 1`.
    pub values: Var,
    /// Undetached task vector, `1 × d_z`.
    pub z: Var,
    pub cpr: Option<CprStepVars>,
    pub carry: Carry,
}

#[derive(Clone, Debug)]
pub struct AgentModel {
    pub arch: ArchConfig,
    pub obs_dim: usize,
    pub space: ActionSpace,
    pub policy: PolicyNet,
    pub critic: CriticNet,
    pub cpr: Option<CprNet>,
}

impl AgentModel {
    pub fn build(arch: &ArchConfig, obs_dim: usize, space: ActionSpace, rng: &mut impl Rng) -> Result<(Self, AgentParams)> {
        arch.validate()?;
        let mut params = AgentParams::default();
        let policy = PolicyNet::build(arch, obs_dim, space, &mut params.policy, rng);
        let critic = CriticNet::build(arch, obs_dim, &mut params.critic, rng);
        let cpr = arch.cpr.enabled.then(|| {
            let width = cpr_input_width(arch, obs_dim, &space);
            CprNet::build(&arch.cpr, width, &mut params.cpr, rng)
        });
        Ok((Self { arch: arch.clone(), obs_dim, space, policy, critic, cpr }, params))
    }

    /// Rebuilds the structure for existing parameters (e.g. from a checkpoint).
    pub fn structure(arch: &ArchConfig, obs_dim: usize, space: ActionSpace) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        Ok(Self::build(arch, obs_dim, space, &mut rng)?.0)
    }

    pub fn task_dim(&self) -> usize {
        self.arch.cpr.task_dim
    }

    pub fn context_dim(&self) -> usize {
        self.cpr.as_ref().map_or(0, |c| c.config.context_dim)
    }

    pub fn cpr_hidden_dim(&self) -> usize {
        self.cpr.as_ref().map_or(1, |c| c.config.hidden_dim)
    }

    pub fn cpr_input_width(&self) -> usize {
        self.cpr.as_ref().map_or(0, |c| c.input_dim)
    }

    pub fn message_dim(&self) -> usize {
        self.arch.effective_message_dim()
    }

    /// Checks that `params` has the shapes this model expects.
    pub fn check_params(&self, params: &AgentParams) -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (_, fresh) = Self::build(&self.arch, self.obs_dim, self.space, &mut rng)?;
        for (a, b) in fresh.groups().iter().zip(params.groups()) {
            let same = a.params.len() == b.params.len()
                && a.params.iter().zip(&b.params).all(|(x, y)| x.name == y.name && x.value.shape() == y.value.shape());
            if !same {
                return Err(crate::Error::Contract("parameters do not match the architecture".into()));
            }
        }
        Ok(())
    }

    /// Zero recurrent state and zero placeholder messages for `n` agents.
    pub fn initial_carry(&self, g: &mut Graph, n: usize) -> Carry {
        let h = self.arch.hidden_dim;
        Carry {
            policy_h: g.constant(Mat::zeros(n, h)),
            critic_h: g.constant(Mat::zeros(n, h)),
            cpr_h: g.constant(Mat::zeros(1, self.cpr_hidden_dim())),
            messages: self.arch.communication.then(|| g.constant(Mat::zeros(n, self.arch.message_dim))),
        }
    }

    /// Recognizer step only: `(z, recognizer vars, next hidden)`.
    pub fn task_step(&self, g: &mut Graph, p: &BoundParams, inputs: &StepInputs, cpr_h: Var) -> (Var, Option<CprStepVars>, Var) {
        match &self.cpr {
            Some(net) => {
                let x = g.constant(inputs.cpr_input.clone());
                let vars = net.step(g, &p.cpr, x, cpr_h, &inputs.noise);
                (vars.z, Some(vars), vars.hidden)
            }
            None => (g.constant(Mat::zeros(1, self.task_dim())), None, cpr_h),
        }
    }

    pub fn step(&self, g: &mut Graph, p: &BoundParams, inputs: &StepInputs, carry: &Carry) -> StepVars {
        let (z, cpr, cpr_h) = self.task_step(g, p, inputs, carry.cpr_h);
        let source = self.arch.cpr.gradient_source;
        let z_policy = if source.from_policy() { z } else { g.detach(z) };
        let z_critic = if source.from_critic() { z } else { g.detach(z) };

        let obs = g.constant(inputs.obs.clone());
        let obs_enc = self.policy.encode_obs(g, &p.policy, obs);
        let fused = carry.messages.map(|m| self.policy.fuse_messages(g, &p.policy, m));
        let out = self.policy.step(g, &p.policy, obs_enc, fused, z_policy, carry.policy_h);
        let (values, critic_h) = self.critic.step(g, &p.critic, obs, carry.critic_h, z_critic);
        StepVars { head: out.head, values, z, cpr, carry: Carry { policy_h: out.hidden, critic_h, cpr_h, messages: out.message } }
    }

    /// Critic values on `obs` with a fresh recognizer step; used for bootstrapping.
    pub fn bootstrap_values(&self, g: &mut Graph, p: &BoundParams, inputs: &StepInputs, carry: &Carry) -> Var {
        let (z, _, _) = self.task_step(g, p, inputs, carry.cpr_h);
        let z = g.detach(z);
        let obs = g.constant(inputs.obs.clone());
        let (values, _) = self.critic.step(g, &p.critic, obs, carry.critic_h, z);
        g.detach(values)
    }
}

/// Width of one agent's recognizer input.
pub fn cpr_input_width(arch: &ArchConfig, obs_dim: usize, space: &ActionSpace) -> usize {
    let mut w = 0;
    if arch.cpr.input.uses_messages() {
        w += arch.message_dim;
    }
    if arch.cpr.input.uses_transitions() {
        w += obs_dim + space.encoded_dim() + 1;
    }
    w
}

/// Builds the `n × w` recognizer input from the previous step's messages and
/// transitions; `None` entries mean the first step (zeros).
pub fn build_cpr_input(
    arch: &ArchConfig,
    n: usize,
    width: usize,
    messages: Option<&Mat>,
    transition: Option<(&Mat, &Mat, &[f64])>,
) -> Mat {
    let mut out = Mat::zeros(n, width);
    if width == 0 {
        return out;
    }
    for i in 0..n {
        let row = out.row_mut(i);
        let mut at = 0;
        if arch.cpr.input.uses_messages() {
            let d = arch.message_dim;
            if let Some(m) = messages {
                row[at..at + d].copy_from_slice(m.row(i));
            }
            at += d;
        }
        if arch.cpr.input.uses_transitions() {
            if let Some((obs, act, rew)) = transition {
                let (od, ad) = (obs.cols, act.cols);
                row[at..at + od].copy_from_slice(obs.row(i));
                row[at + od..at + od + ad].copy_from_slice(act.row(i));
                row[at + od + ad] = rew[i];
            }
        }
    }
    out
}
