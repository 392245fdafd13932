//! Apple collection: agents carry apples to a shared target cell.
//!
//! Agents may share cells. A non-carrying agent alone on an apple cell picks
//! it up; when several stand on the same apple after a move nobody picks it
//! up and every one of them that just moved in pays the conflict penalty.
//! Delivered apples respawn on a random free cell, in apple-index order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    check_discrete, info, ActionSpace, EnvId, Environment, JointAction, JointObservation, StepResult, TaskSpec, GRID_MOVES,
};
use crate::error::{Error, Result};
use crate::tensor::Mat;

pub(crate) const OBS_DIM: usize = 7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HarvestParams {
    pub grid_size: usize,
    pub delivery_reward: f64,
    pub conflict_penalty: f64,
}

impl Default for HarvestParams {
    fn default() -> Self {
        Self { grid_size: 10, delivery_reward: 1.0, conflict_penalty: 0.3 }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HarvestState {
    pub agents: Vec<(i64, i64)>,
    /// Apple index carried by each agent.
    pub carrying: Vec<Option<usize>>,
    /// Apple cells; `None` while carried.
    pub apples: Vec<Option<(i64, i64)>>,
    pub target: (i64, i64),
    pub t: usize,
}

pub struct PopulationHarvest {
    task: TaskSpec,
    params: HarvestParams,
    rng: ChaCha8Rng,
    state: HarvestState,
}

impl PopulationHarvest {
    pub fn new(task: &TaskSpec, params: HarvestParams) -> Result<Self> {
        task.validate()?;
        let n = task.n_agents;
        if params.grid_size < 2 || 2 * n + 1 > params.grid_size * params.grid_size {
            return Err(Error::Config(format!("harvest grid {0}x{0} too small for {n} agents", params.grid_size)));
        }
        Ok(Self {
            task: *task,
            params,
            rng: ChaCha8Rng::seed_from_u64(task.seed),
            state: HarvestState { agents: vec![(0, 0); n], carrying: vec![None; n], apples: vec![None; n], target: (0, 0), t: 0 },
        })
    }

    pub fn state(&self) -> &HarvestState {
        &self.state
    }

    pub fn set_state(&mut self, state: HarvestState) {
        assert_eq!(state.agents.len(), self.task.n_agents);
        self.state = state;
    }

    fn nearest_apple(&self, from: (i64, i64)) -> Option<(i64, i64)> {
        self.state.apples.iter().flatten().min_by_key(|a| (a.0 - from.0).abs() + (a.1 - from.1).abs()).copied()
    }

    pub fn observe(&self) -> JointObservation {
        let s = (self.params.grid_size - 1) as f64;
        let tgt = self.state.target;
        let rows: Vec<[f64; OBS_DIM]> = self
            .state
            .agents
            .iter()
            .zip(&self.state.carrying)
            .map(|(&a, c)| {
                let apple = self.nearest_apple(a).unwrap_or(a);
                [
                    a.0 as f64 / s,
                    a.1 as f64 / s,
                    apple.0 as f64 / s,
                    apple.1 as f64 / s,
                    tgt.0 as f64 / s,
                    tgt.1 as f64 / s,
                    if c.is_some() { 1.0 } else { 0.0 },
                ]
            })
            .collect();
        JointObservation(Mat::from_rows(&rows))
    }

    fn free_cells(&self) -> Vec<(i64, i64)> {
        let g = self.params.grid_size as i64;
        let mut cells = Vec::new();
        for y in 0..g {
            for x in 0..g {
                let c = (x, y);
                if c != self.state.target && !self.state.agents.contains(&c) && !self.state.apples.contains(&Some(c)) {
                    cells.push(c);
                }
            }
        }
        cells
    }
}

impl Environment for PopulationHarvest {
    fn id(&self) -> EnvId {
        EnvId::PopulationHarvest
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
        let cells = rand::seq::index::sample(&mut self.rng, g * g, 2 * n + 1).into_vec();
        let to_cell = |c: usize| ((c % g) as i64, (c / g) as i64);
        self.state = HarvestState {
            target: to_cell(cells[0]),
            agents: cells[1..=n].iter().map(|&c| to_cell(c)).collect(),
            carrying: vec![None; n],
            apples: cells[n + 1..].iter().map(|&c| Some(to_cell(c))).collect(),
            t: 0,
        };
        self.observe()
    }

    fn step(&mut self, actions: &JointAction) -> Result<StepResult> {
        let n = self.task.n_agents;
        let actions = check_discrete(actions, n, GRID_MOVES.len())?.to_vec();
        let g = self.params.grid_size as i64;
        let previous = self.state.agents.clone();
        for (pos, &a) in self.state.agents.iter_mut().zip(&actions) {
            let (dx, dy) = GRID_MOVES[a];
            let next = (pos.0 + dx, pos.1 + dy);
            if (0..g).contains(&next.0) && (0..g).contains(&next.1) {
                *pos = next;
            }
        }
        self.state.t += 1;

        let mut rewards = vec![0.0; n];
        let mut conflicts = 0usize;
        for k in 0..self.state.apples.len() {
            let Some(cell) = self.state.apples[k] else { continue };
            let contenders: Vec<usize> =
                (0..n).filter(|&i| self.state.carrying[i].is_none() && self.state.agents[i] == cell).collect();
            match contenders.len() {
                0 => {}
                1 => {
                    self.state.carrying[contenders[0]] = Some(k);
                    self.state.apples[k] = None;
                }
                _ => {
                    for &i in &contenders {
                        if previous[i] != cell {
                            rewards[i] -= self.params.conflict_penalty;
                            conflicts += 1;
                        }
                    }
                }
            }
        }

        let mut delivered = Vec::new();
        for (i, r) in rewards.iter_mut().enumerate() {
            if self.state.agents[i] == self.state.target {
                if let Some(k) = self.state.carrying[i].take() {
                    *r += self.params.delivery_reward;
                    delivered.push(k);
                }
            }
        }
        delivered.sort_unstable();
        for k in &delivered {
            let free = self.free_cells();
            let pick = free[self.rng.random_range(0..free.len())];
            self.state.apples[*k] = Some(pick);
        }

        let done = self.state.t >= self.task.episode_limit;
        let mut info = info(self.state.t);
        info.insert("deliveries".into(), delivered.len() as f64);
        info.insert("conflicts".into(), conflicts as f64);
        Ok(StepResult { observation: self.observe(), rewards, done, terminated: false, info })
    }
}
