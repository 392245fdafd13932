//! Cooperative multi-agent environments whose observation and action spaces
//! do not depend on the number of agents.
//!
//! All three environments share one protocol: [`Environment::reset`] returns a
//! [`JointObservation`] with one row per agent and [`Environment::step`]
//! consumes a [`JointAction`] with one entry per agent. Each instance owns a
//! ChaCha stream seeded from [`TaskSpec::seed`], so a seed plus an action
//! sequence determines the whole trajectory.

mod harvest;
mod particle;
mod pushball;
mod task;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Mat;

pub use harvest::{HarvestParams, HarvestState, PopulationHarvest};
pub use particle::{ParticleParams, ParticleState, ParticleSystem};
pub use pushball::{PushBall, PushBallParams, PushBallState};
pub use task::{sample_task, Split, TaskSets, TaskSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvId {
    ParticleSystem,
    PopulationHarvest,
    PushBall,
}

impl EnvId {
    pub const ALL: [EnvId; 3] = [EnvId::ParticleSystem, EnvId::PopulationHarvest, EnvId::PushBall];

    pub fn as_str(self) -> &'static str {
        match self {
            EnvId::ParticleSystem => "particle_system",
            EnvId::PopulationHarvest => "population_harvest",
            EnvId::PushBall => "push_ball",
        }
    }

    pub fn default_episode_limit(self) -> usize {
        match self {
            EnvId::ParticleSystem => 50,
            EnvId::PopulationHarvest => 80,
            EnvId::PushBall => 100,
        }
    }
}

impl std::str::FromStr for EnvId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EnvId::ALL.into_iter().find(|id| id.as_str() == s).ok_or_else(|| Error::Config(format!("unknown env id `{s}`")))
    }
}

impl std::fmt::Display for EnvId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum ActionSpace {
    Discrete(usize),
    /// Box `[low, high]^dim`.
    Continuous {
        dim: usize,
        low: f64,
        high: f64,
    },
}

impl ActionSpace {
    /// Width of the action when one-hot (discrete) or raw (continuous) encoded.
    pub fn encoded_dim(&self) -> usize {
        match *self {
            ActionSpace::Discrete(k) => k,
            ActionSpace::Continuous { dim, .. } => dim,
        }
    }
}

/// One row per agent, every row of width `obs_dim`.
#[derive(Clone, Debug, PartialEq)]
pub struct JointObservation(pub Mat);

impl JointObservation {
    pub fn n_agents(&self) -> usize {
        self.0.rows
    }

    pub fn dim(&self) -> usize {
        self.0.cols
    }

    pub fn agent(&self, i: usize) -> &[f64] {
        self.0.row(i)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum JointAction {
    Discrete(Vec<usize>),
    /// `n_agents × dim`.
    Continuous(Mat),
}

impl JointAction {
    pub fn len(&self) -> usize {
        match self {
            JointAction::Discrete(a) => a.len(),
            JointAction::Continuous(m) => m.rows,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Per-agent encoding: one-hot for discrete actions, the action vector otherwise.
    pub fn encode(&self, space: &ActionSpace) -> Mat {
        match (self, space) {
            (JointAction::Discrete(a), ActionSpace::Discrete(k)) => {
                let mut m = Mat::zeros(a.len(), *k);
                for (i, &ai) in a.iter().enumerate() {
                    m.set(i, ai, 1.0);
                }
                m
            }
            (JointAction::Continuous(m), _) => m.clone(),
            (JointAction::Discrete(a), ActionSpace::Continuous { dim, .. }) => Mat::zeros(a.len(), *dim),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub observation: JointObservation,
    pub rewards: Vec<f64>,
    /// Episode over, either by the success condition or the step limit.
    pub done: bool,
    /// The success condition ended the episode (no bootstrapping past it).
    pub terminated: bool,
    /// Diagnostics; always contains `step`, the 1-based index of this step.
    pub info: BTreeMap<String, f64>,
}

pub trait Environment: Send {
    fn id(&self) -> EnvId;
    fn n_agents(&self) -> usize;
    fn obs_dim(&self) -> usize;
    fn action_space(&self) -> ActionSpace;
    fn episode_limit(&self) -> usize;
    fn reset(&mut self) -> JointObservation;
    fn step(&mut self, actions: &JointAction) -> Result<StepResult>;
    /// Steps taken since the last reset.
    fn elapsed(&self) -> usize;
}

/// Numeric rules of all environments. Every value is logged with a run's config.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvParams {
    pub particle: ParticleParams,
    pub harvest: HarvestParams,
    pub push_ball: PushBallParams,
}

pub fn make_env(task: &TaskSpec) -> Result<Box<dyn Environment>> {
    make_env_with(task, &EnvParams::default())
}

pub fn make_env_with(task: &TaskSpec, params: &EnvParams) -> Result<Box<dyn Environment>> {
    task.validate()?;
    Ok(match task.env_id {
        EnvId::ParticleSystem => Box::new(ParticleSystem::new(task, params.particle.clone())?),
        EnvId::PopulationHarvest => Box::new(PopulationHarvest::new(task, params.harvest.clone())?),
        EnvId::PushBall => Box::new(PushBall::new(task, params.push_ball.clone())?),
    })
}

/// Observation width and action space for an environment, independent of `n`.
pub fn spaces(env_id: EnvId, params: &EnvParams) -> (usize, ActionSpace) {
    let _ = params;
    match env_id {
        EnvId::ParticleSystem => (particle::OBS_DIM, ActionSpace::Discrete(5)),
        EnvId::PopulationHarvest => (harvest::OBS_DIM, ActionSpace::Discrete(5)),
        EnvId::PushBall => (pushball::OBS_DIM, ActionSpace::Continuous { dim: 2, low: -1.0, high: 1.0 }),
    }
}

pub(crate) fn check_discrete(actions: &JointAction, n: usize, k: usize) -> Result<&[usize]> {
    match actions {
        JointAction::Discrete(a) if a.len() == n => {
            if let Some(bad) = a.iter().find(|&&x| x >= k) {
                return Err(Error::Contract(format!("action {bad} outside [0, {k})")));
            }
            Ok(a)
        }
        JointAction::Discrete(a) => Err(Error::Contract(format!("expected {n} actions, got {}", a.len()))),
        JointAction::Continuous(_) => Err(Error::Contract("continuous action given to a discrete environment".into())),
    }
}

/// Grid moves shared by the two grid worlds: up, down, left, right, stay.
pub(crate) const GRID_MOVES: [(i64, i64); 5] = [(0, 1), (0, -1), (-1, 0), (1, 0), (0, 0)];

pub(crate) fn info(step: usize) -> BTreeMap<String, f64> {
    let mut m = BTreeMap::new();
    m.insert("step".to_string(), step as f64);
    m
}
