use rand::Rng;
use serde::{Deserialize, Serialize};

use super::EnvId;
use crate::error::{Error, Result};

/// One multi-agent task: environment, agent count, step limit and seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TaskSpec {
    pub env_id: EnvId,
    pub n_agents: usize,
    pub episode_limit: usize,
    pub seed: u64,
}

impl TaskSpec {
    pub fn new(env_id: EnvId, n_agents: usize, episode_limit: usize, seed: u64) -> Result<Self> {
        let t = Self { env_id, n_agents, episode_limit, seed };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_agents < 2 {
            return Err(Error::Config(format!("n_agents must be at least 2, got {}", self.n_agents)));
        }
        if self.episode_limit == 0 {
            return Err(Error::Config("episode_limit must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Adapt,
}

/// Training and adaptation agent counts. Every adaptation count is strictly
/// larger than every training count.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawTaskSets", into = "RawTaskSets")]
pub struct TaskSets {
    train: Vec<usize>,
    adapt: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTaskSets {
    train: Vec<usize>,
    adapt: Vec<usize>,
}

impl TryFrom<RawTaskSets> for TaskSets {
    type Error = Error;

    fn try_from(raw: RawTaskSets) -> Result<Self> {
        TaskSets::new(raw.train, raw.adapt)
    }
}

impl From<TaskSets> for RawTaskSets {
    fn from(s: TaskSets) -> Self {
        RawTaskSets { train: s.train, adapt: s.adapt }
    }
}

fn normalize(mut v: Vec<usize>, what: &str) -> Result<Vec<usize>> {
    v.sort_unstable();
    v.dedup();
    if v.is_empty() {
        return Err(Error::Config(format!("{what} agent-count set is empty")));
    }
    if v[0] < 2 {
        return Err(Error::Config(format!("{what} agent counts must be at least 2")));
    }
    Ok(v)
}

impl TaskSets {
    pub fn new(train: Vec<usize>, adapt: Vec<usize>) -> Result<Self> {
        let train = normalize(train, "train")?;
        let adapt = normalize(adapt, "adapt")?;
        let max_train = *train.last().unwrap();
        let min_adapt = adapt[0];
        if min_adapt <= max_train {
            return Err(Error::Config(format!(
                "every adaptation count must exceed every training count (adapt min {min_adapt} <= train max {max_train})"
            )));
        }
        Ok(Self { train, adapt })
    }

    /// Training counts `{3, 4, 5}`, adaptation counts `{8, 10}`.
    pub fn default_sets() -> Self {
        Self::new(vec![3, 4, 5], vec![8, 10]).expect("default sets are valid")
    }

    pub fn train(&self) -> &[usize] {
        &self.train
    }

    pub fn adapt(&self) -> &[usize] {
        &self.adapt
    }

    pub fn split(&self, split: Split) -> &[usize] {
        match split {
            Split::Train => &self.train,
            Split::Adapt => &self.adapt,
        }
    }

    /// Uniform draw of an agent count from one split.
    pub fn sample_count(&self, split: Split, rng: &mut impl Rng) -> usize {
        let counts = self.split(split);
        counts[rng.random_range(0..counts.len())]
    }
}

/// Draws a task for `split`; environment and step limit come from the run
/// config, the environment seed from `rng`.
pub fn sample_task(sets: &TaskSets, split: Split, env_id: EnvId, episode_limit: usize, rng: &mut impl Rng) -> Result<TaskSpec> {
    let n = sets.sample_count(split, rng);
    TaskSpec::new(env_id, n, episode_limit, rng.random())
}
