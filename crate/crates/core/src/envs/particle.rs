//! Grid navigation to per-agent landmarks with collision avoidance.
//!
//! Agent `i` observes only its own cell and the cell of landmark `i`, both
//! scaled to `[0, 1]`. Moves are simultaneous. Two agents targeting the same
//! cell, or swapping cells, have their moves rejected and both pay the
//! collision penalty; rejection repeats until no conflict is left, so the
//! outcome does not depend on agent order.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    check_discrete, info, ActionSpace, EnvId, Environment, JointAction, JointObservation, StepResult, TaskSpec, GRID_MOVES,
};
use crate::error::{Error, Result};
use crate::tensor::Mat;

pub(crate) const OBS_DIM: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ParticleParams {
    pub grid_size: usize,
    pub step_cost: f64,
    pub reach_bonus: f64,
    pub collision_penalty: f64,
}

impl Default for ParticleParams {
    fn default() -> Self {
        Self { grid_size: 8, step_cost: 0.05, reach_bonus: 1.0, collision_penalty: 0.5 }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParticleState {
    pub agents: Vec<(i64, i64)>,
    pub landmarks: Vec<(i64, i64)>,
    /// Whether agent `i` has already collected its landmark bonus.
    pub reached: Vec<bool>,
    pub t: usize,
}

pub struct ParticleSystem {
    task: TaskSpec,
    params: ParticleParams,
    rng: ChaCha8Rng,
    state: ParticleState,
}

impl ParticleSystem {
    pub fn new(task: &TaskSpec, params: ParticleParams) -> Result<Self> {
        task.validate()?;
        let cells = params.grid_size * params.grid_size;
        if params.grid_size < 2 || 2 * task.n_agents > cells {
            return Err(Error::Config(format!(
                "particle grid {0}x{0} cannot host {1} agents and {1} landmarks",
                params.grid_size, task.n_agents
            )));
        }
        let n = task.n_agents;
        Ok(Self {
            task: *task,
            params,
            rng: ChaCha8Rng::seed_from_u64(task.seed),
            state: ParticleState { agents: vec![(0, 0); n], landmarks: vec![(0, 0); n], reached: vec![false; n], t: 0 },
        })
    }

    pub fn state(&self) -> &ParticleState {
        &self.state
    }

    pub fn set_state(&mut self, state: ParticleState) {
        assert_eq!(state.agents.len(), self.task.n_agents);
        self.state = state;
    }

    pub fn params(&self) -> &ParticleParams {
        &self.params
    }

    pub fn observe(&self) -> JointObservation {
        let scale = (self.params.grid_size - 1) as f64;
        let rows: Vec<[f64; OBS_DIM]> = self
            .state
            .agents
            .iter()
            .zip(&self.state.landmarks)
            .map(|(a, l)| [a.0 as f64 / scale, a.1 as f64 / scale, l.0 as f64 / scale, l.1 as f64 / scale])
            .collect();
        JointObservation(Mat::from_rows(&rows))
    }

    fn in_grid(&self, c: (i64, i64)) -> bool {
        let g = self.params.grid_size as i64;
        (0..g).contains(&c.0) && (0..g).contains(&c.1)
    }

    fn all_on_landmarks(&self) -> bool {
        self.state.agents.iter().zip(&self.state.landmarks).all(|(a, l)| a == l)
    }
}

/// Resolves simultaneous moves; returns final cells and which agents collided.
pub(crate) fn resolve_moves(current: &[(i64, i64)], mut targets: Vec<(i64, i64)>) -> (Vec<(i64, i64)>, Vec<bool>) {
    let n = current.len();
    let mut collided = vec![false; n];
    loop {
        let mut changed = false;
        let mut by_cell: BTreeMap<(i64, i64), Vec<usize>> = BTreeMap::new();
        for (i, &t) in targets.iter().enumerate() {
            by_cell.entry(t).or_default().push(i);
        }
        for group in by_cell.values().filter(|g| g.len() > 1) {
            for &i in group {
                collided[i] = true;
                if targets[i] != current[i] {
                    targets[i] = current[i];
                    changed = true;
                }
            }
        }
        for i in 0..n {
            for j in (i + 1)..n {
                let moving = targets[i] != current[i] && targets[j] != current[j];
                if moving && targets[i] == current[j] && targets[j] == current[i] {
                    collided[i] = true;
                    collided[j] = true;
                    targets[i] = current[i];
                    targets[j] = current[j];
                    changed = true;
                }
            }
        }
        if !changed {
            return (targets, collided);
        }
    }
}

impl Environment for ParticleSystem {
    fn id(&self) -> EnvId {
        EnvId::ParticleSystem
    }

    fn n_agents(&self) -> usize {
        self.task.n_agents
    }

    fn obs_dim(&self) -> usize {
        OBS_DIM
    }

    fn action_space(&self) -> ActionSpace {
        ActionSpace::Discrete(GRID_MOVES.len())
    }

    fn episode_limit(&self) -> usize {
        self.task.episode_limit
    }

    fn elapsed(&self) -> usize {
        self.state.t
    }

    fn reset(&mut self) -> JointObservation {
        let n = self.task.n_agents;
        let g = self.params.grid_size;
        let cells = rand::seq::index::sample(&mut self.rng, g * g, 2 * n).into_vec();
        let to_cell = |c: usize| ((c % g) as i64, (c / g) as i64);
        self.state = ParticleState {
            agents: cells[..n].iter().map(|&c| to_cell(c)).collect(),
            landmarks: cells[n..].iter().map(|&c| to_cell(c)).collect(),
            reached: vec![false; n],
            t: 0,
        };
        self.observe()
    }

    fn step(&mut self, actions: &JointAction) -> Result<StepResult> {
        let n = self.task.n_agents;
        let actions = check_discrete(actions, n, GRID_MOVES.len())?.to_vec();
        let targets: Vec<(i64, i64)> = self
            .state
            .agents
            .iter()
            .zip(&actions)
            .map(|(&(x, y), &a)| {
                let (dx, dy) = GRID_MOVES[a];
                let next = (x + dx, y + dy);
                if self.in_grid(next) {
                    next
                } else {
                    (x, y)
                }
            })
            .collect();
        let (moved, collided) = resolve_moves(&self.state.agents, targets);
        self.state.agents = moved;
        self.state.t += 1;

        let p = &self.params;
        let mut rewards = vec![-p.step_cost; n];
        for i in 0..n {
            if collided[i] {
                rewards[i] -= p.collision_penalty;
            }
            if self.state.agents[i] == self.state.landmarks[i] && !self.state.reached[i] {
                self.state.reached[i] = true;
                rewards[i] += p.reach_bonus;
            }
        }
        let terminated = self.all_on_landmarks();
        let done = terminated || self.state.t >= self.task.episode_limit;
        let mut info = info(self.state.t);
        info.insert("collisions".into(), collided.iter().filter(|&&c| c).count() as f64);
        Ok(StepResult { observation: self.observe(), rewards, done, terminated, info })
    }
}
