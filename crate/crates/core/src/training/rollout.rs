use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Graph;
use crate::cpr::draw_noise;
use crate::dist::Action;
use crate::envs::{make_env_with, ActionSpace, EnvParams, JointAction, TaskSpec};
use crate::error::{Error, Result};
use crate::model::{build_cpr_input, AgentModel, AgentParams, BoundParams, StepInputs, StepVars};
use crate::nets::TakenActions;
use crate::tensor::Mat;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RolloutMode {
    /// Stochastic actions; the graph is kept with tracked parameters for the update.
    Train,
    /// Stochastic actions, no gradient bookkeeping.
    Sample,
    /// Most likely actions, no gradient bookkeeping.
    Greedy,
}

/// One episode of one task. Per-step entries are time-aligned.
#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub task: TaskSpec,
    /// Parameter version that generated the episode.
    pub version: u64,
    /// `n × d_o` observation each step acted on.
    pub observations: Vec<Mat>,
    pub actions: Vec<TakenActions>,
    /// Actions as the environment saw them (one-hot or clamped), `n × d_a`.
    pub env_actions: Vec<Mat>,
    pub log_probs: Vec<Vec<f64>>,
    pub rewards: Vec<Vec<f64>>,
    /// Messages received at each step (emitted one step earlier, zeros first), `n × d_m`.
    pub messages: Vec<Mat>,
    pub cpr_inputs: Vec<Mat>,
    /// Context noise `ξ`, `1 × d_c`.
    pub noise: Vec<Mat>,
    pub z: Vec<Vec<f64>>,
    pub values: Vec<Vec<f64>>,
    /// Value after the last step per agent; zero when the episode terminated.
    pub bootstrap: Vec<f64>,
    pub terminated: bool,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn n_agents(&self) -> usize {
        self.task.n_agents
    }

    /// Mean over agents of the per-agent return `Σ_t γ^t r_t^i`.
    pub fn mean_agent_return(&self, discount: f64) -> f64 {
        let n = self.n_agents();
        let mut total = 0.0;
        let mut w = 1.0;
        for r in &self.rewards {
            total += w * r.iter().sum::<f64>();
            w *= discount;
        }
        total / n as f64
    }
}

/// The graph an episode was generated on, kept for the update.
pub struct EpisodeTrace {
    pub graph: Graph,
    pub params: BoundParams,
    pub steps: Vec<StepVars>,
}

fn taken_action_set(space: &ActionSpace, actions: &[Action]) -> (TakenActions, JointAction) {
    match space {
        ActionSpace::Discrete(_) => {
            let idx: Vec<usize> = actions
                .iter()
                .map(|a| match a {
                    Action::Discrete(i) => *i,
                    Action::Continuous { .. } => unreachable!("continuous action in a discrete space"),
                })
                .collect();
            (TakenActions::Discrete(idx.clone()), JointAction::Discrete(idx))
        }
        ActionSpace::Continuous { .. } => {
            let (raw, clamped): (Vec<Vec<f64>>, Vec<Vec<f64>>) = actions
                .iter()
                .map(|a| match a {
                    Action::Continuous { raw, clamped } => (raw.clone(), clamped.clone()),
                    Action::Discrete(_) => unreachable!("discrete action in a continuous space"),
                })
                .unzip();
            (TakenActions::Continuous(Mat::from_rows(&raw)), JointAction::Continuous(Mat::from_rows(&clamped)))
        }
    }
}

/// Runs one episode. The environment is seeded from `task.seed`; action and
/// context noise come from `rng`, context noise first at every step.
pub fn collect_episode(
    model: &AgentModel,
    params: &AgentParams,
    task: &TaskSpec,
    env_params: &EnvParams,
    rng: &mut impl Rng,
    mode: RolloutMode,
    version: u64,
) -> Result<(Episode, Option<EpisodeTrace>)> {
    let mut env = make_env_with(task, env_params)?;
    if env.obs_dim() != model.obs_dim || env.action_space() != model.space {
        return Err(Error::Contract("environment spaces do not match the model".into()));
    }
    let n = task.n_agents;
    let space = model.space;
    let width = model.cpr_input_width();
    let stochastic_context = model.cpr.as_ref().is_some_and(|c| c.config.stochastic);
    let d_c = model.context_dim();

    let mut g = Graph::new();
    let p = params.bind(&mut g, mode == RolloutMode::Train);
    let mut carry = model.initial_carry(&mut g, n);
    let mut obs = env.reset().0;

    let mut ep = Episode {
        task: *task,
        version,
        observations: Vec::new(),
        actions: Vec::new(),
        env_actions: Vec::new(),
        log_probs: Vec::new(),
        rewards: Vec::new(),
        messages: Vec::new(),
        cpr_inputs: Vec::new(),
        noise: Vec::new(),
        z: Vec::new(),
        values: Vec::new(),
        bootstrap: vec![0.0; n],
        terminated: false,
    };
    let mut steps = Vec::new();

    loop {
        let noise = if stochastic_context { Mat::row_vector(draw_noise(d_c, rng)) } else { Mat::zeros(1, d_c) };
        let received = match carry.messages {
            Some(m) => g.value(m).clone(),
            None => Mat::zeros(n, 0),
        };
        let last = ep.len().checked_sub(1);
        let cpr_input = build_cpr_input(
            &model.arch,
            n,
            width,
            carry.messages.is_some().then_some(&received),
            last.map(|t| (&ep.observations[t], &ep.env_actions[t], ep.rewards[t].as_slice())),
        );
        let inputs = StepInputs { obs: obs.clone(), cpr_input, noise };
        let sv = model.step(&mut g, &p, &inputs, &carry);

        let dists = sv.head.distributions(&g, &space);
        let actions: Vec<Action> =
            dists.iter().map(|d| if mode == RolloutMode::Greedy { d.mode() } else { d.sample(rng) }).collect();
        let log_probs: Vec<f64> = dists.iter().zip(&actions).map(|(d, a)| d.log_prob(a)).collect();
        let (taken, joint) = taken_action_set(&space, &actions);
        let result = env.step(&joint)?;

        ep.env_actions.push(joint.encode(&space));
        ep.observations.push(obs);
        ep.actions.push(taken);
        ep.log_probs.push(log_probs);
        ep.rewards.push(result.rewards);
        ep.messages.push(received);
        ep.cpr_inputs.push(inputs.cpr_input.clone());
        ep.noise.push(inputs.noise.clone());
        ep.z.push(g.value(sv.z).data.clone());
        ep.values.push(g.value(sv.values).data.clone());

        carry = sv.carry;
        steps.push(sv);
        obs = result.observation.0;
        if result.done {
            ep.terminated = result.terminated;
            break;
        }
    }

    if !ep.terminated {
        // Truncated: bootstrap from the critic on the final observation. The
        // recognizer uses its posterior mean here, so no noise is consumed.
        let t = ep.len() - 1;
        let messages = carry.messages.map(|m| g.value(m).clone());
        let cpr_input = build_cpr_input(
            &model.arch,
            n,
            width,
            messages.as_ref(),
            Some((&ep.observations[t], &ep.env_actions[t], ep.rewards[t].as_slice())),
        );
        let inputs = StepInputs { obs, cpr_input, noise: Mat::zeros(1, d_c) };
        let v = model.bootstrap_values(&mut g, &p, &inputs, &carry);
        ep.bootstrap = g.value(v).data.clone();
    }

    let trace = (mode == RolloutMode::Train).then_some(EpisodeTrace { graph: g, params: p, steps });
    Ok((ep, trace))
}

/// Runs `k` episodes of `n_agents` on fresh environment seeds. Each episode
/// draws an environment seed and an action-stream seed from `master`.
#[allow(clippy::too_many_arguments)]
pub fn collect_episodes(
    model: &AgentModel,
    params: &AgentParams,
    template: &TaskSpec,
    env_params: &EnvParams,
    k: usize,
    master: &mut ChaCha8Rng,
    mode: RolloutMode,
    version: u64,
) -> Result<Vec<(Episode, Option<EpisodeTrace>)>> {
    (0..k)
        .map(|e| {
            let task = TaskSpec { seed: master.random(), ..*template };
            let mut rng = ChaCha8Rng::seed_from_u64(master.random());
            collect_episode(model, params, &task, env_params, &mut rng, mode, version).map_err(|err| match err {
                Error::Contract(m) => Error::Contract(format!("episode {e}: {m}")),
                Error::Numeric(m) => Error::Numeric(format!("episode {e}: {m}")),
                other => other,
            })
        })
        .collect()
}

/// Recomputes the task vectors of an episode from its stored recognizer
/// inputs and noise.
pub fn replay_task_vectors(model: &AgentModel, params: &AgentParams, episode: &Episode) -> Vec<Vec<f64>> {
    let mut g = Graph::new();
    let p = params.bind(&mut g, false);
    let mut carry = model.initial_carry(&mut g, episode.n_agents());
    let mut out = Vec::with_capacity(episode.len());
    for t in 0..episode.len() {
        let inputs = StepInputs {
            obs: episode.observations[t].clone(),
            cpr_input: episode.cpr_inputs[t].clone(),
            noise: episode.noise[t].clone(),
        };
        let (z, _, h) = model.task_step(&mut g, &p, &inputs, carry.cpr_h);
        carry.cpr_h = h;
        out.push(g.value(z).data.clone());
    }
    out
}

/// Rebuilds the graph of a stored episode under `params`, holding the stored
/// observations, recognizer inputs and noise fixed. With the generating
/// parameters this reproduces the collection graph's values exactly.
pub fn replay_episode(model: &AgentModel, params: &AgentParams, episode: &Episode, track: bool) -> EpisodeTrace {
    let mut g = Graph::new();
    let p = params.bind(&mut g, track);
    let mut carry = model.initial_carry(&mut g, episode.n_agents());
    let mut steps = Vec::with_capacity(episode.len());
    for t in 0..episode.len() {
        let inputs = StepInputs {
            obs: episode.observations[t].clone(),
            cpr_input: episode.cpr_inputs[t].clone(),
            noise: episode.noise[t].clone(),
        };
        let sv = model.step(&mut g, &p, &inputs, &carry);
        carry = sv.carry;
        steps.push(sv);
    }
    EpisodeTrace { graph: g, params: p, steps }
}
