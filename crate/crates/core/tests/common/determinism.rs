//! Byte-level reproducibility of training runs and of resumption.

use std::fs;
use std::path::Path;

use metacpr::envs::{EnvId, TaskSets};
use metacpr::training::{train, Checkpoint, RunArtifacts, TrainConfig, Trainer};

pub fn small_run(env: EnvId, seed: u64, updates: u64) -> TrainConfig {
    let mut c = TrainConfig::new(env);
    c.seed = seed;
    c.env.episode_limit = Some(10);
    c.tasks = TaskSets::new(vec![2, 3], vec![5]).unwrap();
    c.arch.embed_dim = 16;
    c.arch.hidden_dim = 16;
    c.arch.message_dim = 8;
    c.arch.cpr.hidden_dim = 16;
    c.optim.total_updates = updates;
    c.logging.checkpoint_every = 5;
    c
}

fn metrics(dir: &Path) -> String {
    fs::read_to_string(dir.join(RunArtifacts::METRICS)).unwrap()
}

#[derive(Debug)]
pub struct Reproduction {
    pub env: EnvId,
    /// Two fresh runs wrote byte-identical metrics.
    pub repeat_identical: bool,
    /// Stopping after `stop` updates and resuming from the checkpoint wrote the same metrics.
    pub resume_identical: bool,
    /// Final checkpoints of the fresh and resumed runs hold identical parameters and RNG state.
    pub final_state_identical: bool,
    pub lines: usize,
}

pub fn reproduce(env: EnvId, root: &Path, updates: u64, stop: u64) -> metacpr::Result<Reproduction> {
    let config = small_run(env, 7, updates);
    let (a, b, c) = (root.join("a"), root.join("b"), root.join("c"));
    train(Trainer::new(&config)?, &a, None)?;
    train(Trainer::new(&config)?, &b, None)?;
    train(Trainer::new(&config)?, &c, Some(stop))?;
    let resumed = Checkpoint::load(&c.join(RunArtifacts::CHECKPOINT))?;
    assert_eq!(resumed.update, stop, "checkpoint written at the stop");
    train(Trainer::from_checkpoint(&resumed)?, &c, None)?;
    let full = metrics(&a);
    let fa = Checkpoint::load(&a.join(RunArtifacts::CHECKPOINT))?;
    let fc = Checkpoint::load(&c.join(RunArtifacts::CHECKPOINT))?;
    Ok(Reproduction {
        env,
        repeat_identical: full == metrics(&b),
        resume_identical: full == metrics(&c),
        final_state_identical: serde_json::to_string(&fa).unwrap() == serde_json::to_string(&fc).unwrap(),
        lines: full.lines().count(),
    })
}
