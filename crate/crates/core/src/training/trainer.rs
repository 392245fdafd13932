use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::losses::{compute_losses, EpisodeBatch, LossKind, LossReport, TaskLoss};
use super::optim::{clip_grad_norm, Adam};
use super::rollout::{collect_episodes, RolloutMode};
use super::TrainConfig;
use crate::envs::TaskSpec;
use crate::error::{Error, Result};
use crate::model::{AgentModel, AgentParams};

pub const CHECKPOINT_FORMAT: &str = "metacpr-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Hex SHA-256 of the canonical JSON form of a config.
pub fn config_hash(config: &TrainConfig) -> String {
    let canonical = serde_json::to_string(config).expect("config serializes");
    hex::encode(Sha256::digest(canonical.as_bytes()))
}

/// One line of `metrics.jsonl`. Contains no wall-clock data, so identical
/// runs produce identical bytes; timings go to `timings.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub update: u64,
    pub env_steps: u64,
    pub config_hash: String,
    /// Mean undiscounted per-agent return, keyed by agent count.
    pub returns: BTreeMap<String, f64>,
    pub loss_policy: f64,
    pub loss_critic: f64,
    pub loss_kl: f64,
    pub entropy: f64,
    pub grad_norm_policy: f64,
    pub grad_norm_critic: f64,
    pub grad_norm_cpr: f64,
    pub per_task: Vec<TaskLoss>,
}

impl MetricsRecord {
    /// Return averaged over the trained agent counts.
    pub fn mean_return(&self) -> f64 {
        self.returns.values().sum::<f64>() / self.returns.len().max(1) as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config_hash: String,
    pub config: TrainConfig,
    pub update: u64,
    pub env_steps: u64,
    pub params: AgentParams,
    /// θ, μ, φ.
    pub optimizers: Vec<Adam>,
    pub rng: ChaCha8Rng,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).map_err(|e| Error::Serde(e.to_string()))?;
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ckpt: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::Serde(format!("{}: {e}", path.display())))?;
        ckpt.verify()?;
        Ok(ckpt)
    }

    /// Format, version and config hash are consistent.
    pub fn verify(&self) -> Result<()> {
        if self.format != CHECKPOINT_FORMAT || self.version != CHECKPOINT_VERSION {
            return Err(Error::Serde(format!("unsupported checkpoint {} v{}", self.format, self.version)));
        }
        if config_hash(&self.config) != self.config_hash {
            return Err(Error::Protocol("checkpoint config hash does not match its config".into()));
        }
        if self.optimizers.len() != 3 {
            return Err(Error::Serde("checkpoint must hold three optimizer states".into()));
        }
        Ok(())
    }

    pub fn model(&self) -> Result<AgentModel> {
        let (obs_dim, space) = self.config.env.spaces();
        let model = AgentModel::structure(&self.config.arch, obs_dim, space)?;
        model.check_params(&self.params)?;
        Ok(model)
    }
}

pub struct Trainer {
    pub config: TrainConfig,
    pub hash: String,
    pub model: AgentModel,
    pub params: AgentParams,
    pub optimizers: [Adam; 3],
    pub rng: ChaCha8Rng,
    pub update: u64,
    pub env_steps: u64,
}

impl Trainer {
    pub fn new(config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let (obs_dim, space) = config.env.spaces();
        let (model, params) = AgentModel::build(&config.arch, obs_dim, space, &mut rng)?;
        let o = &config.optim;
        let optimizers = [
            Adam::new(&params.policy, o.lr_policy, o.adam_beta1, o.adam_beta2, o.adam_eps),
            Adam::new(&params.critic, o.lr_critic, o.adam_beta1, o.adam_beta2, o.adam_eps),
            Adam::new(&params.cpr, o.lr_cpr, o.adam_beta1, o.adam_beta2, o.adam_eps),
        ];
        Ok(Self { hash: config_hash(config), config: config.clone(), model, params, optimizers, rng, update: 0, env_steps: 0 })
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        ckpt.verify()?;
        ckpt.config.validate()?;
        let model = ckpt.model()?;
        let [a, b, c]: [Adam; 3] = ckpt.optimizers.clone().try_into().expect("verified length");
        Ok(Self {
            config: ckpt.config.clone(),
            hash: ckpt.config_hash.clone(),
            model,
            params: ckpt.params.clone(),
            optimizers: [a, b, c],
            rng: ckpt.rng.clone(),
            update: ckpt.update,
            env_steps: ckpt.env_steps,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config_hash: self.hash.clone(),
            config: self.config.clone(),
            update: self.update,
            env_steps: self.env_steps,
            params: self.params.clone(),
            optimizers: self.optimizers.to_vec(),
            rng: self.rng.clone(),
        }
    }

    pub fn finished(&self) -> bool {
        self.update >= self.config.optim.total_updates || self.config.optim.max_env_steps.is_some_and(|m| self.env_steps >= m)
    }

    /// Collects `k` fresh episodes for every training count with the current parameters.
    pub fn collect(&mut self) -> Result<Vec<EpisodeBatch>> {
        let limit = self.config.env.episode_limit();
        let mut batches = Vec::new();
        for n in self.config.training_counts() {
            let template = TaskSpec::new(self.config.env.id, n, limit, 0)?;
            let (mut episodes, mut traces) = (Vec::new(), Vec::new());
            let collected = collect_episodes(
                &self.model,
                &self.params,
                &template,
                &self.config.env.params,
                self.config.optim.episodes_per_task,
                &mut self.rng,
                RolloutMode::Train,
                self.update,
            )?;
            for (ep, trace) in collected {
                episodes.push(ep);
                traces.push(trace.expect("training rollouts keep their graph"));
            }
            batches.push(EpisodeBatch { task: template, episodes, traces });
        }
        Ok(batches)
    }

    /// One iteration: collect, compute losses, route gradients, step the optimizers.
    pub fn update_once(&mut self) -> Result<MetricsRecord> {
        let index = self.update + 1;
        self.step_inner().map_err(|e| match e {
            Error::Numeric(m) => Error::Numeric(format!("update {index}: {m}")),
            Error::Contract(m) => Error::Contract(format!("update {index}: {m}")),
            other => other,
        })
    }

    fn step_inner(&mut self) -> Result<MetricsRecord> {
        let mut batches = self.collect()?;
        if batches.iter().flat_map(|b| &b.episodes).any(|e| e.version != self.update) {
            return Err(Error::Contract("stale episode in the update batch".into()));
        }
        let (report, mut grads) = compute_losses(&mut batches, &self.params, &self.config, &LossKind::ALL)?;
        if !report.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite loss (policy {}, critic {}, kl {})",
                report.policy, report.critic, report.kl
            )));
        }
        if !grads.is_finite() {
            let names = ["policy", "critic", "cpr"];
            let bad: Vec<&str> =
                grads.groups().iter().zip(names).filter(|(g, _)| !g.iter().all(|m| m.is_finite())).map(|(_, n)| n).collect();
            return Err(Error::Numeric(format!("non-finite gradient in {}", bad.join(", "))));
        }
        let clip = self.config.optim.grad_clip;
        let norms = grads.groups_mut().map(|g| clip_grad_norm(g, clip));
        let [gp, gc, gz] = grads.groups();
        let [op, oc, oz] = &mut self.optimizers;
        op.apply(&mut self.params.policy, gp);
        oc.apply(&mut self.params.critic, gc);
        oz.apply(&mut self.params.cpr, gz);

        let steps: u64 = batches.iter().map(|b| b.steps() as u64).sum();
        self.env_steps += steps;
        self.update += 1;
        Ok(self.record(&report, norms))
    }

    fn record(&self, report: &LossReport, norms: [f64; 3]) -> MetricsRecord {
        MetricsRecord {
            update: self.update,
            env_steps: self.env_steps,
            config_hash: self.hash.clone(),
            returns: report.per_task.iter().map(|t| (t.n_agents.to_string(), t.mean_return)).collect(),
            loss_policy: report.policy,
            loss_critic: report.critic,
            loss_kl: report.kl,
            entropy: report.entropy,
            grad_norm_policy: norms[0],
            grad_norm_critic: norms[1],
            grad_norm_cpr: norms[2],
            per_task: report.per_task.clone(),
        }
    }
}

/// Files of a run directory.
#[derive(Clone, Debug)]
pub struct RunArtifacts {
    pub dir: PathBuf,
    pub checkpoint: PathBuf,
    pub metrics: PathBuf,
    pub records: Vec<MetricsRecord>,
}

impl RunArtifacts {
    pub const CONFIG: &'static str = "config.toml";
    pub const HASH: &'static str = "config.sha256";
    pub const METRICS: &'static str = "metrics.jsonl";
    pub const TIMINGS: &'static str = "timings.jsonl";
    pub const CHECKPOINT: &'static str = "checkpoint.json";
    pub const CHECKPOINT_DIR: &'static str = "checkpoints";
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Keeps only metrics lines up to `update` (used when resuming).
fn truncate_metrics(path: &Path, update: u64) -> Result<()> {
    if !path.exists() {
        return Ok(());
    }
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut kept = String::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let rec: MetricsRecord = serde_json::from_str(&line).map_err(|e| Error::Serde(format!("{}: {e}", path.display())))?;
        if rec.update <= update {
            kept.push_str(&line);
            kept.push('\n');
        }
    }
    write_text(path, &kept)
}

/// Trains to completion (or `stop_after` updates in this call) and writes
/// the run directory. A trainer restored from a checkpoint continues the
/// same run in place.
pub fn train(mut trainer: Trainer, dir: &Path, stop_after: Option<u64>) -> Result<RunArtifacts> {
    fs::create_dir_all(dir.join(RunArtifacts::CHECKPOINT_DIR)).map_err(|e| Error::io(dir, e))?;
    let config_text = toml::to_string(&trainer.config).map_err(|e| Error::Serde(e.to_string()))?;
    write_text(&dir.join(RunArtifacts::CONFIG), &config_text)?;
    write_text(&dir.join(RunArtifacts::HASH), &format!("{}\n", trainer.hash))?;
    let metrics_path = dir.join(RunArtifacts::METRICS);
    let timings_path = dir.join(RunArtifacts::TIMINGS);
    let latest = dir.join(RunArtifacts::CHECKPOINT);
    let periodic = |u: u64| dir.join(RunArtifacts::CHECKPOINT_DIR).join(format!("update_{u:06}.json"));

    if trainer.update == 0 {
        write_text(&metrics_path, "")?;
        write_text(&timings_path, "")?;
        trainer.checkpoint().save(&periodic(0))?;
    } else {
        truncate_metrics(&metrics_path, trainer.update)?;
    }
    trainer.checkpoint().save(&latest)?;

    let open = |p: &Path| OpenOptions::new().create(true).append(true).open(p).map_err(|e| Error::io(p, e));
    let mut metrics = open(&metrics_path)?;
    let mut timings = open(&timings_path)?;
    let start = Instant::now();
    let mut records = Vec::new();
    let mut done_here = 0;
    while !trainer.finished() && stop_after.is_none_or(|s| done_here < s) {
        let rec = trainer.update_once()?;
        done_here += 1;
        let line = serde_json::to_string(&rec).map_err(|e| Error::Serde(e.to_string()))?;
        writeln!(metrics, "{line}").map_err(|e| Error::io(&metrics_path, e))?;
        let unix = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0);
        let timing = serde_json::json!({ "update": rec.update, "config_hash": rec.config_hash, "elapsed_s": start.elapsed().as_secs_f64(), "unix_time": unix });
        writeln!(timings, "{timing}").map_err(|e| Error::io(&timings_path, e))?;
        let every = trainer.config.logging.checkpoint_every;
        if every > 0 && rec.update % every == 0 {
            trainer.checkpoint().save(&periodic(rec.update))?;
        }
        records.push(rec);
    }
    trainer.checkpoint().save(&latest)?;
    Ok(RunArtifacts { dir: dir.to_path_buf(), checkpoint: latest, metrics: metrics_path, records })
}
