use serde::{Deserialize, Serialize};

use super::gae::compute_gae;
use super::rollout::{Episode, EpisodeTrace};
use super::TrainConfig;
use crate::autodiff::{Graph, Var};
use crate::cpr::{kl_rows, KlTarget};
use crate::envs::TaskSpec;
use crate::error::{Error, Result};
use crate::model::AgentParams;
use crate::tensor::Mat;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    Policy,
    Critic,
    Kl,
}

impl LossKind {
    pub const ALL: [LossKind; 3] = [LossKind::Policy, LossKind::Critic, LossKind::Kl];
}

/// Rollouts of one task (one agent count) for one update, with the graphs
/// they were generated on.
pub struct EpisodeBatch {
    pub task: TaskSpec,
    pub episodes: Vec<Episode>,
    pub traces: Vec<EpisodeTrace>,
}

impl EpisodeBatch {
    /// `(episode, step, agent)` entries.
    pub fn entries(&self) -> usize {
        self.episodes.iter().map(|e| e.len() * e.n_agents()).sum()
    }

    pub fn steps(&self) -> usize {
        self.episodes.iter().map(Episode::len).sum()
    }
}

/// Advantages and returns indexed `[batch][episode][step][agent]`.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchTargets {
    pub advantages: Vec<Vec<Vec<Vec<f64>>>>,
    pub returns: Vec<Vec<Vec<Vec<f64>>>>,
}

/// GAE per agent and episode; advantages optionally standardized over every
/// entry of the update.
pub fn prepare_targets(batches: &[Vec<&Episode>], gamma: f64, lambda: f64, normalize: bool) -> BatchTargets {
    let mut advantages = Vec::with_capacity(batches.len());
    let mut returns = Vec::with_capacity(batches.len());
    for episodes in batches {
        let mut ba = Vec::with_capacity(episodes.len());
        let mut br = Vec::with_capacity(episodes.len());
        for ep in episodes {
            let (t_max, n) = (ep.len(), ep.n_agents());
            let mut adv = vec![vec![0.0; n]; t_max];
            let mut ret = vec![vec![0.0; n]; t_max];
            for i in 0..n {
                let r: Vec<f64> = ep.rewards.iter().map(|x| x[i]).collect();
                let v: Vec<f64> = ep.values.iter().map(|x| x[i]).collect();
                let (a, g) = compute_gae(&r, &v, ep.bootstrap[i], gamma, lambda);
                for t in 0..t_max {
                    adv[t][i] = a[t];
                    ret[t][i] = g[t];
                }
            }
            ba.push(adv);
            br.push(ret);
        }
        advantages.push(ba);
        returns.push(br);
    }
    if normalize {
        let all = || advantages.iter().flatten().flatten().flatten();
        let count = all().count();
        if count > 1 {
            let mean = all().sum::<f64>() / count as f64;
            let var = all().map(|a| (a - mean) * (a - mean)).sum::<f64>() / count as f64;
            let sd = var.sqrt() + 1e-8;
            for a in advantages.iter_mut().flatten().flatten().flatten() {
                *a = (*a - mean) / sd;
            }
        }
    }
    BatchTargets { advantages, returns }
}

/// Loss terms of one episode, scaled so that summing over a task's episodes
/// yields that task's mean losses.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub policy: Var,
    pub critic: Var,
    pub kl: Var,
    pub entropy: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct LossScales {
    /// One over the task's `(episode, step, agent)` entries.
    pub per_entry: f64,
    /// λ over the number of posteriors the bottleneck averages.
    pub kl: f64,
}

pub fn loss_scales(batch: &EpisodeBatch, config: &TrainConfig) -> LossScales {
    let kl_count = match config.arch.cpr.kl_target {
        KlTarget::PerMessage => batch.entries(),
        KlTarget::Fused => batch.steps(),
    };
    LossScales { per_entry: 1.0 / batch.entries() as f64, kl: config.optim.kl_weight / kl_count as f64 }
}

fn accumulate(g: &mut Graph, acc: Option<Var>, term: Var) -> Option<Var> {
    Some(match acc {
        Some(a) => g.add(a, term),
        None => term,
    })
}

/// Builds the three losses of one episode on its own graph.
pub fn episode_losses(
    trace: &mut EpisodeTrace,
    episode: &Episode,
    advantages: &[Vec<f64>],
    returns: &[Vec<f64>],
    config: &TrainConfig,
    scales: LossScales,
) -> Result<LossVars> {
    let g = &mut trace.graph;
    let eta = config.optim.entropy_weight;
    let n = episode.n_agents();
    let (mut lp_sum, mut lc_sum, mut kl_sum, mut h_sum) = (None, None, None, None);
    for (t, step) in trace.steps.iter().enumerate() {
        if let Some(i) = episode.log_probs[t].iter().position(|x| !x.is_finite()) {
            return Err(Error::Numeric(format!("non-finite log-probability at step {t}, agent {i}")));
        }
        let lp = step.head.log_prob(g, &episode.actions[t]);
        let ent = step.head.entropy(g, n);
        let adv = g.constant(Mat::from_vec(n, 1, advantages[t].clone()));
        let weighted = g.mul(lp, adv);
        let pg = g.sum_all(weighted);
        let h = g.sum_all(ent);
        let pg = g.scale(pg, -1.0);
        let bonus = g.scale(h, -eta);
        let lp_term = g.add(pg, bonus);
        lp_sum = accumulate(g, lp_sum, lp_term);
        h_sum = accumulate(g, h_sum, h);

        let ret = g.constant(Mat::from_vec(n, 1, returns[t].clone()));
        let err = g.sub(step.values, ret);
        let sq = g.square(err);
        let lc_term = g.sum_all(sq);
        lc_sum = accumulate(g, lc_sum, lc_term);

        if let Some(c) = &step.cpr {
            let kl = match config.arch.cpr.kl_target {
                KlTarget::PerMessage => kl_rows(g, c.mean, c.variance),
                KlTarget::Fused => kl_rows(g, c.fused_mean, c.fused_variance),
            };
            let kl_term = g.sum_all(kl);
            kl_sum = accumulate(g, kl_sum, kl_term);
        }
    }
    let zero = || Mat::zeros(1, 1);
    let lp_sum = lp_sum.unwrap_or_else(|| g.constant(zero()));
    let lc_sum = lc_sum.unwrap_or_else(|| g.constant(zero()));
    let h_sum = h_sum.unwrap_or_else(|| g.constant(zero()));
    let kl_sum = kl_sum.unwrap_or_else(|| g.constant(zero()));
    Ok(LossVars {
        policy: g.scale(lp_sum, scales.per_entry),
        critic: g.scale(lc_sum, scales.per_entry),
        kl: g.scale(kl_sum, scales.kl),
        entropy: g.scale(h_sum, scales.per_entry),
    })
}

/// Gradients for θ, μ and φ.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupGrads {
    pub policy: Vec<Mat>,
    pub critic: Vec<Mat>,
    pub cpr: Vec<Mat>,
}

impl GroupGrads {
    pub fn zeros(params: &AgentParams) -> Self {
        Self { policy: params.policy.zeros_like(), critic: params.critic.zeros_like(), cpr: params.cpr.zeros_like() }
    }

    pub fn groups(&self) -> [&Vec<Mat>; 3] {
        [&self.policy, &self.critic, &self.cpr]
    }

    pub fn groups_mut(&mut self) -> [&mut Vec<Mat>; 3] {
        [&mut self.policy, &mut self.critic, &mut self.cpr]
    }

    pub fn norms(&self) -> [f64; 3] {
        self.groups().map(|g| super::optim::global_norm(g))
    }

    pub fn is_finite(&self) -> bool {
        self.groups().iter().all(|g| g.iter().all(Mat::is_finite))
    }
}

/// Adds the gradient of `root` on `trace` into `acc`.
pub fn accumulate_gradients(trace: &EpisodeTrace, root: Var, params: &AgentParams, acc: &mut GroupGrads) {
    let grads = trace.graph.backward(root);
    let parts = [
        (&trace.params.policy, &params.policy, &mut acc.policy),
        (&trace.params.critic, &params.critic, &mut acc.critic),
        (&trace.params.cpr, &params.cpr, &mut acc.cpr),
    ];
    for (bound, group, out) in parts {
        for (o, g) in out.iter_mut().zip(bound.grads(group, &grads)) {
            o.add_assign(&g);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskLoss {
    pub n_agents: usize,
    pub policy: f64,
    pub critic: f64,
    pub kl: f64,
    pub entropy: f64,
    /// Mean undiscounted per-agent return over the task's episodes.
    pub mean_return: f64,
    pub episodes: usize,
    pub steps: usize,
}

/// Loss totals are sums of the per-task losses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub policy: f64,
    pub critic: f64,
    pub kl: f64,
    /// Mean of the per-task mean entropies.
    pub entropy: f64,
    pub per_task: Vec<TaskLoss>,
}

impl LossReport {
    pub fn is_finite(&self) -> bool {
        [self.policy, self.critic, self.kl, self.entropy].iter().all(|x| x.is_finite())
    }
}

/// Losses of a whole update and the gradient of the sum of the requested
/// loss kinds with respect to every parameter group.
pub fn compute_losses(
    batches: &mut [EpisodeBatch],
    params: &AgentParams,
    config: &TrainConfig,
    kinds: &[LossKind],
) -> Result<(LossReport, GroupGrads)> {
    let views: Vec<Vec<&Episode>> = batches.iter().map(|b| b.episodes.iter().collect()).collect();
    let targets = prepare_targets(&views, config.optim.gamma, config.optim.gae_lambda, config.optim.normalize_advantages);
    let mut grads = GroupGrads::zeros(params);
    let mut per_task = Vec::with_capacity(batches.len());
    for (b, batch) in batches.iter_mut().enumerate() {
        let scales = loss_scales(batch, config);
        let (entries_steps, episodes_len) = (batch.steps(), batch.episodes.len());
        let mut task = TaskLoss {
            n_agents: batch.task.n_agents,
            policy: 0.0,
            critic: 0.0,
            kl: 0.0,
            entropy: 0.0,
            mean_return: batch.episodes.iter().map(|e| e.mean_agent_return(1.0)).sum::<f64>() / episodes_len as f64,
            episodes: episodes_len,
            steps: entries_steps,
        };
        for (e, (trace, episode)) in batch.traces.iter_mut().zip(&batch.episodes).enumerate() {
            let vars = episode_losses(trace, episode, &targets.advantages[b][e], &targets.returns[b][e], config, scales)?;
            let g = &mut trace.graph;
            task.policy += g.scalar(vars.policy);
            task.critic += g.scalar(vars.critic);
            task.kl += g.scalar(vars.kl);
            task.entropy += g.scalar(vars.entropy);
            let mut root = None;
            for kind in kinds {
                let v = match kind {
                    LossKind::Policy => vars.policy,
                    LossKind::Critic => vars.critic,
                    LossKind::Kl => vars.kl,
                };
                root = accumulate(g, root, v);
            }
            if let Some(root) = root {
                accumulate_gradients(trace, root, params, &mut grads);
            }
        }
        per_task.push(task);
    }
    let report = LossReport {
        policy: per_task.iter().map(|t| t.policy).sum(),
        critic: per_task.iter().map(|t| t.critic).sum(),
        kl: per_task.iter().map(|t| t.kl).sum(),
        entropy: per_task.iter().map(|t| t.entropy).sum::<f64>() / per_task.len().max(1) as f64,
        per_task,
    };
    Ok((report, grads))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalized_advantages_are_standardized() {
        let ep = |rewards: Vec<Vec<f64>>| Episode {
            task: TaskSpec { env_id: crate::envs::EnvId::ParticleSystem, n_agents: 2, episode_limit: 5, seed: 0 },
            version: 0,
            observations: vec![],
            actions: vec![],
            env_actions: vec![],
            log_probs: vec![],
            values: vec![vec![0.0, 0.1]; rewards.len()],
            rewards,
            messages: vec![],
            cpr_inputs: vec![],
            noise: vec![],
            z: vec![],
            bootstrap: vec![0.0; 2],
            terminated: true,
        };
        let a = ep(vec![vec![1.0, 0.0], vec![0.5, -1.0]]);
        let b = ep(vec![vec![2.0, 0.3]]);
        let t = prepare_targets(&[vec![&a], vec![&b]], 0.9, 0.8, true);
        let all: Vec<f64> = t.advantages.iter().flatten().flatten().flatten().copied().collect();
        let mean = all.iter().sum::<f64>() / all.len() as f64;
        let var = all.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / all.len() as f64;
        assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-6);
        let raw = prepare_targets(&[vec![&a]], 0.9, 0.8, false);
        assert_eq!(raw.returns[0][0][1][0], 0.5);
    }
}
