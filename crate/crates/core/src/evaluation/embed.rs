use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::training::Episode;

/// One trajectory with its labels.
#[derive(Clone, Debug)]
pub struct LabeledEpisode<'a> {
    pub label: String,
    pub episode: &'a Episode,
}

/// Fixed-width trajectory vectors: time-major, then agent-major blocks of
/// `[o, a, r]`, zero-padded to `steps` and `agents`.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingMatrix {
    pub steps: usize,
    pub agents: usize,
    pub obs_dim: usize,
    pub action_dim: usize,
    pub labels: Vec<(String, usize)>,
    pub rows: Vec<Vec<f64>>,
}

/// One recovered transition block.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
}

impl EmbeddingMatrix {
    pub fn block(&self) -> usize {
        self.obs_dim + self.action_dim + 1
    }

    pub fn cols(&self) -> usize {
        self.steps * self.agents * self.block()
    }

    /// Splits a row back into `[t][agent]` transitions.
    pub fn unflatten(&self, row: usize) -> Vec<Vec<Transition>> {
        let r = &self.rows[row];
        let b = self.block();
        (0..self.steps)
            .map(|t| {
                (0..self.agents)
                    .map(|i| {
                        let at = (t * self.agents + i) * b;
                        Transition {
                            obs: r[at..at + self.obs_dim].to_vec(),
                            action: r[at + self.obs_dim..at + self.obs_dim + self.action_dim].to_vec(),
                            reward: r[at + b - 1],
                        }
                    })
                    .collect()
            })
            .collect()
    }

    /// Tab-separated table with a header row; the first two columns are labels.
    pub fn to_table(&self) -> String {
        let mut out = String::from("label\tn_agents");
        for t in 0..self.steps {
            for i in 0..self.agents {
                for k in 0..self.obs_dim {
                    let _ = write!(out, "\tt{t}_a{i}_o{k}");
                }
                for k in 0..self.action_dim {
                    let _ = write!(out, "\tt{t}_a{i}_u{k}");
                }
                let _ = write!(out, "\tt{t}_a{i}_r");
            }
        }
        out.push('\n');
        for ((label, n), row) in self.labels.iter().zip(&self.rows) {
            let _ = write!(out, "{label}\t{n}");
            for v in row {
                let _ = write!(out, "\t{v}");
            }
            out.push('\n');
        }
        out
    }
}

/// Flattens trajectories into fixed-width rows. `steps` is the padded length
/// (normally the episode limit); episodes longer than it are truncated.
pub fn export_trajectory_embeddings(episodes: &[LabeledEpisode<'_>], steps: usize) -> Result<EmbeddingMatrix> {
    let first = episodes.first().ok_or_else(|| Error::Contract("no episodes to embed".into()))?.episode;
    let obs_dim = first.observations.first().map_or(0, |o| o.cols);
    let action_dim = first.env_actions.first().map_or(0, |a| a.cols);
    let agents = episodes.iter().map(|e| e.episode.n_agents()).max().unwrap_or(0);
    let mut m = EmbeddingMatrix { steps, agents, obs_dim, action_dim, labels: Vec::new(), rows: Vec::new() };
    let b = m.block();
    for le in episodes {
        let ep = le.episode;
        if ep.observations.iter().any(|o| o.cols != obs_dim) || ep.env_actions.iter().any(|a| a.cols != action_dim) {
            return Err(Error::Contract("episodes differ in observation or action width".into()));
        }
        let mut row = vec![0.0; m.cols()];
        for t in 0..ep.len().min(steps) {
            for i in 0..ep.n_agents() {
                let at = (t * agents + i) * b;
                row[at..at + obs_dim].copy_from_slice(ep.observations[t].row(i));
                row[at + obs_dim..at + obs_dim + action_dim].copy_from_slice(ep.env_actions[t].row(i));
                row[at + b - 1] = ep.rewards[t][i];
            }
        }
        m.labels.push((le.label.clone(), ep.n_agents()));
        m.rows.push(row);
    }
    Ok(m)
}
