//! One parameter set rolled out, and differentiated, at many agent counts.

use metacpr::envs::{EnvId, TaskSpec};
use metacpr::training::{collect_episodes, compute_losses, EpisodeBatch, LossKind, RolloutMode, TrainConfig, Trainer};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const COUNTS: [usize; 4] = [2, 3, 8, 16];

#[derive(Debug)]
pub struct Sweep {
    pub env: EnvId,
    /// Scalar parameter count of a freshly built model per count in `COUNTS`.
    pub param_counts: Vec<usize>,
    /// Every observation, value, log-probability, reward, task vector, loss and gradient was finite.
    pub finite: bool,
    pub steps: usize,
}

pub fn sweep_config(env: EnvId) -> TrainConfig {
    let mut c = TrainConfig::new(env);
    c.env.episode_limit = Some(20);
    c.arch.embed_dim = 16;
    c.arch.hidden_dim = 16;
    c.arch.message_dim = 8;
    c.arch.cpr.hidden_dim = 16;
    c
}

pub fn agent_count_sweep(env: EnvId) -> metacpr::Result<Sweep> {
    let config = sweep_config(env);
    let trainer = Trainer::new(&config)?;
    let param_counts = COUNTS
        .iter()
        .map(|&n| {
            let mut c = config.clone();
            c.train_counts = Some(vec![n]);
            Trainer::new(&c).map(|t| t.params.num_scalars())
        })
        .collect::<metacpr::Result<_>>()?;
    let mut finite = true;
    let mut steps = 0;
    let mut master = ChaCha8Rng::seed_from_u64(99);
    for &n in &COUNTS {
        let template = TaskSpec::new(env, n, config.env.episode_limit(), 0)?;
        let mut batch = EpisodeBatch { task: template, episodes: Vec::new(), traces: Vec::new() };
        for (ep, trace) in collect_episodes(
            &trainer.model,
            &trainer.params,
            &template,
            &config.env.params,
            2,
            &mut master,
            RolloutMode::Train,
            0,
        )? {
            let all = |m: &[Vec<f64>]| m.iter().flatten().all(|x| x.is_finite());
            finite &= ep.observations.iter().all(|o| o.is_finite() && o.shape() == (n, trainer.model.obs_dim));
            finite &= all(&ep.values) && all(&ep.log_probs) && all(&ep.rewards) && all(&ep.z);
            finite &= ep.bootstrap.iter().all(|x| x.is_finite());
            steps += ep.len();
            batch.episodes.push(ep);
            batch.traces.push(trace.expect("training rollouts keep their graph"));
        }
        let (report, grads) = compute_losses(&mut [batch], &trainer.params, &config, &LossKind::ALL)?;
        finite &= report.is_finite() && grads.is_finite();
    }
    Ok(Sweep { env, param_counts, finite, steps })
}
