//! Continuous cooperative pushing of a heavy ball in the unit square.
//!
//! A kinematic stand-in for a rigid-body simulation. Forces are clipped to
//! `[-1, 1]²` and then to unit length, so a single agent can never exceed
//! the force threshold needed to move the ball; at least two agents in
//! contact must push in roughly the same direction.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{info, ActionSpace, EnvId, Environment, JointAction, JointObservation, StepResult, TaskSpec};
use crate::error::{Error, Result};
use crate::tensor::Mat;

pub(crate) const OBS_DIM: usize = 6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PushBallParams {
    pub contact_radius: f64,
    /// Minimum net force magnitude that moves the ball.
    pub force_threshold: f64,
    pub ball_gain: f64,
    pub agent_speed: f64,
    pub success_radius: f64,
    pub success_bonus: f64,
}

impl Default for PushBallParams {
    fn default() -> Self {
        Self {
            contact_radius: 0.08,
            force_threshold: 1.2,
            ball_gain: 0.05,
            agent_speed: 0.05,
            success_radius: 0.05,
            success_bonus: 5.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PushBallState {
    pub agents: Vec<[f64; 2]>,
    pub ball: [f64; 2],
    pub target: [f64; 2],
    pub t: usize,
}

pub struct PushBall {
    task: TaskSpec,
    params: PushBallParams,
    rng: ChaCha8Rng,
    state: PushBallState,
}

fn clamp01(v: f64) -> f64 {
    v.clamp(0.0, 1.0)
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Box clip to `[-1, 1]²` followed by a cap at unit length.
pub(crate) fn clip_force(f: [f64; 2]) -> [f64; 2] {
    let f = [f[0].clamp(-1.0, 1.0), f[1].clamp(-1.0, 1.0)];
    let norm = (f[0] * f[0] + f[1] * f[1]).sqrt();
    if norm > 1.0 {
        [f[0] / norm, f[1] / norm]
    } else {
        f
    }
}

impl PushBall {
    pub fn new(task: &TaskSpec, params: PushBallParams) -> Result<Self> {
        task.validate()?;
        if params.force_threshold <= 0.0 || params.contact_radius <= 0.0 {
            return Err(Error::Config("push_ball force_threshold and contact_radius must be positive".into()));
        }
        let n = task.n_agents;
        Ok(Self {
            task: *task,
            params,
            rng: ChaCha8Rng::seed_from_u64(task.seed),
            state: PushBallState { agents: vec![[0.0; 2]; n], ball: [0.5; 2], target: [0.5; 2], t: 0 },
        })
    }

    pub fn state(&self) -> &PushBallState {
        &self.state
    }

    pub fn set_state(&mut self, state: PushBallState) {
        assert_eq!(state.agents.len(), self.task.n_agents);
        self.state = state;
    }

    pub fn observe(&self) -> JointObservation {
        let s = &self.state;
        let rows: Vec<[f64; OBS_DIM]> =
            s.agents.iter().map(|a| [a[0], a[1], s.ball[0], s.ball[1], s.target[0], s.target[1]]).collect();
        JointObservation(Mat::from_rows(&rows))
    }
}

impl Environment for PushBall {
    fn id(&self) -> EnvId {
        EnvId::PushBall
    }

    fn n_agents(&self) -> usize {
        self.task.n_agents
    }

    fn obs_dim(&self) -> usize {
        OBS_DIM
    }

    fn action_space(&self) -> ActionSpace {
        ActionSpace::Continuous { dim: 2, low: -1.0, high: 1.0 }
    }

    fn episode_limit(&self) -> usize {
        self.task.episode_limit
    }

    fn elapsed(&self) -> usize {
        self.state.t
    }

    fn reset(&mut self) -> JointObservation {
        let n = self.task.n_agents;
        let rng = &mut self.rng;
        let agents = (0..n).map(|_| [rng.random::<f64>(), rng.random::<f64>()]).collect();
        let ball = [rng.random_range(0.25..0.75), rng.random_range(0.25..0.75)];
        let mut target = [rng.random_range(0.1..0.9), rng.random_range(0.1..0.9)];
        while dist(ball, target) < 0.3 {
            target = [rng.random_range(0.1..0.9), rng.random_range(0.1..0.9)];
        }
        self.state = PushBallState { agents, ball, target, t: 0 };
        self.observe()
    }

    fn step(&mut self, actions: &JointAction) -> Result<StepResult> {
        let n = self.task.n_agents;
        let forces = match actions {
            JointAction::Continuous(m) if m.rows == n && m.cols == 2 => {
                if !m.is_finite() {
                    return Err(Error::Contract("non-finite force".into()));
                }
                (0..n).map(|i| clip_force([m.get(i, 0), m.get(i, 1)])).collect::<Vec<_>>()
            }
            JointAction::Continuous(m) => {
                return Err(Error::Contract(format!("expected {n}x2 forces, got {}x{}", m.rows, m.cols)));
            }
            JointAction::Discrete(_) => return Err(Error::Contract("discrete action given to push_ball".into())),
        };
        let p = &self.params;
        let s = &mut self.state;

        let mut net = [0.0, 0.0];
        let mut contacts = 0usize;
        for (a, f) in s.agents.iter().zip(&forces) {
            if dist(*a, s.ball) <= p.contact_radius {
                net[0] += f[0];
                net[1] += f[1];
                contacts += 1;
            }
        }
        let mag = (net[0] * net[0] + net[1] * net[1]).sqrt();
        if mag > p.force_threshold {
            // gain * (net - F_min * unit(net)); fully damped, so this is the whole displacement.
            let unit = [net[0] / mag, net[1] / mag];
            let v = [p.ball_gain * (net[0] - p.force_threshold * unit[0]), p.ball_gain * (net[1] - p.force_threshold * unit[1])];
            s.ball = [clamp01(s.ball[0] + v[0]), clamp01(s.ball[1] + v[1])];
        }
        for (a, f) in s.agents.iter_mut().zip(&forces) {
            *a = [clamp01(a[0] + p.agent_speed * f[0]), clamp01(a[1] + p.agent_speed * f[1])];
        }
        s.t += 1;

        let d = dist(s.ball, s.target);
        let terminated = d < p.success_radius;
        let shared = -d + if terminated { p.success_bonus } else { 0.0 };
        let done = terminated || s.t >= self.task.episode_limit;
        let mut info = info(s.t);
        info.insert("ball_distance".into(), d);
        info.insert("contacts".into(), contacts as f64);
        Ok(StepResult { observation: self.observe(), rewards: vec![shared; n], done, terminated, info })
    }
}
