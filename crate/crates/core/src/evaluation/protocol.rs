use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::VariantName;
use crate::envs::{EnvId, TaskSpec};
use crate::error::{Error, Result};
use crate::model::{AgentModel, AgentParams};
use crate::training::{collect_episodes, config_hash, Checkpoint, Episode, RolloutMode};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    /// Episodes per agent count; at least one.
    pub episodes: usize,
    pub seed: u64,
    /// Most likely actions instead of sampling.
    pub greedy: bool,
    /// Discount for reported returns (1 reports undiscounted sums).
    pub discount: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { episodes: 20, seed: 0, greedy: false, discount: 1.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    /// Counts strictly above every trained count, never trained on.
    ZeroShot,
    /// Counts the checkpoint may have been trained on.
    InDistribution,
}

/// Raw returns of one checkpoint (one training seed) at one agent count.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub n_agents: usize,
    pub train_seed: u64,
    /// Per-episode mean per-agent return.
    pub returns: Vec<f64>,
}

impl EvalRow {
    pub fn mean(&self) -> f64 {
        mean(&self.returns)
    }

    pub fn std_error(&self) -> f64 {
        std_error(&self.returns)
    }
}

pub fn mean(x: &[f64]) -> f64 {
    if x.is_empty() {
        return f64::NAN;
    }
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sample standard deviation over `sqrt(len)`; zero for fewer than two values.
pub fn std_error(x: &[f64]) -> f64 {
    if x.len() < 2 {
        return 0.0;
    }
    let m = mean(x);
    let var = x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() - 1) as f64;
    (var / x.len() as f64).sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub variant: VariantName,
    pub env_id: EnvId,
    pub protocol: Protocol,
    pub train_counts: Vec<usize>,
    pub adapt_counts: Vec<usize>,
    pub greedy: bool,
    pub discount: f64,
    pub episodes: usize,
    pub eval_seed: u64,
    /// Config hashes of the evaluated checkpoints.
    pub config_hashes: Vec<String>,
    pub rows: Vec<EvalRow>,
}

impl EvalReport {
    /// Rows of one agent count across every merged seed.
    pub fn rows_for(&self, n: usize) -> impl Iterator<Item = &EvalRow> {
        self.rows.iter().filter(move |r| r.n_agents == n)
    }

    /// Pools reports of the same variant and protocol (e.g. several seeds).
    pub fn merge(reports: &[EvalReport]) -> Result<EvalReport> {
        let first = reports.first().ok_or_else(|| Error::Protocol("nothing to merge".into()))?;
        let mut out = first.clone();
        for r in &reports[1..] {
            if r.variant != first.variant
                || r.env_id != first.env_id
                || r.protocol != first.protocol
                || r.adapt_counts != first.adapt_counts
                || r.greedy != first.greedy
                || r.discount != first.discount
            {
                return Err(Error::Protocol("reports differ in variant or protocol".into()));
            }
            out.config_hashes.extend(r.config_hashes.iter().cloned());
            out.rows.extend(r.rows.iter().cloned());
            for n in &r.train_counts {
                if !out.train_counts.contains(n) {
                    out.train_counts.push(*n);
                }
            }
        }
        out.train_counts.sort_unstable();
        Ok(out)
    }

    pub fn to_jsonl(&self) -> String {
        serde_json::to_string(self).expect("report serializes") + "\n"
    }
}

/// SHA-256 over every parameter value, for asserting that evaluation leaves
/// parameters untouched.
pub fn params_checksum(params: &AgentParams) -> String {
    let mut h = Sha256::new();
    for group in params.groups() {
        for p in &group.params {
            h.update(p.name.as_bytes());
            for v in &p.value.data {
                h.update(v.to_le_bytes());
            }
        }
    }
    hex::encode(h.finalize())
}

/// Rollouts of a frozen model at the given counts. Each count uses its own
/// stream of the evaluation seed, so reports do not depend on which other
/// counts are requested.
pub fn rollout_counts(
    model: &AgentModel,
    params: &AgentParams,
    ckpt_config: &crate::training::TrainConfig,
    counts: &[usize],
    opts: &EvalOptions,
) -> Result<Vec<(usize, Vec<Episode>)>> {
    let mode = if opts.greedy { RolloutMode::Greedy } else { RolloutMode::Sample };
    let limit = ckpt_config.env.episode_limit();
    counts
        .iter()
        .map(|&n| {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            rng.set_stream(n as u64);
            let template = TaskSpec::new(ckpt_config.env.id, n, limit, 0)?;
            let eps = collect_episodes(model, params, &template, &ckpt_config.env.params, opts.episodes, &mut rng, mode, 0)?;
            Ok((n, eps.into_iter().map(|(e, _)| e).collect()))
        })
        .collect()
}

fn evaluate(ckpt: &Checkpoint, counts: &[usize], opts: &EvalOptions, protocol: Protocol) -> Result<EvalReport> {
    if opts.episodes == 0 {
        return Err(Error::Protocol("evaluation needs at least one episode".into()));
    }
    if counts.is_empty() {
        return Err(Error::Protocol("no agent counts to evaluate".into()));
    }
    ckpt.verify()?;
    if config_hash(&ckpt.config) != ckpt.config_hash {
        return Err(Error::Protocol("checkpoint config hash mismatch".into()));
    }
    let model = ckpt.model()?;
    let before = params_checksum(&ckpt.params);
    let rollouts = rollout_counts(&model, &ckpt.params, &ckpt.config, counts, opts)?;
    if before != params_checksum(&ckpt.params) {
        return Err(Error::Contract("parameters changed during evaluation".into()));
    }
    let rows = rollouts
        .into_iter()
        .map(|(n, eps)| EvalRow {
            n_agents: n,
            train_seed: ckpt.config.seed,
            returns: eps.iter().map(|e| e.mean_agent_return(opts.discount)).collect(),
        })
        .collect();
    Ok(EvalReport {
        variant: ckpt.config.variant,
        env_id: ckpt.config.env.id,
        protocol,
        train_counts: ckpt.config.training_counts(),
        adapt_counts: counts.to_vec(),
        greedy: opts.greedy,
        discount: opts.discount,
        episodes: opts.episodes,
        eval_seed: opts.seed,
        config_hashes: vec![ckpt.config_hash.clone()],
        rows,
    })
}

/// Zero-shot transfer: every evaluated count must exceed every count the
/// checkpoint was trained on.
pub fn evaluate_zero_shot(ckpt: &Checkpoint, adapt: &[usize], opts: &EvalOptions) -> Result<EvalReport> {
    let trained = ckpt.config.training_counts();
    let max_train = trained.iter().copied().max().unwrap_or(0);
    if let Some(n) = adapt.iter().find(|&&n| n <= max_train) {
        return Err(Error::Protocol(format!(
            "agent count {n} is not strictly above the trained counts {trained:?}; not a zero-shot evaluation"
        )));
    }
    evaluate(ckpt, adapt, opts, Protocol::ZeroShot)
}

/// Evaluation without the zero-shot restriction (oracle baselines, training sanity checks).
pub fn evaluate_counts(ckpt: &Checkpoint, counts: &[usize], opts: &EvalOptions) -> Result<EvalReport> {
    evaluate(ckpt, counts, opts, Protocol::InDistribution)
}
