//! Gradient-routing probes: each loss is differentiated on its own and the
//! per-group gradients are inspected.

use metacpr::envs::{EnvId, TaskSets};
use metacpr::evaluation::{build_variant, VariantName};
use metacpr::tensor::Mat;
use metacpr::training::{compute_losses, GroupGrads, LossKind, TrainConfig, Trainer};

pub const ENVS: [EnvId; 3] = [EnvId::ParticleSystem, EnvId::PopulationHarvest, EnvId::PushBall];

/// Small but complete config: every component of the full method is present.
pub fn toy_config(env: EnvId, seed: u64) -> TrainConfig {
    let mut c = TrainConfig::new(env);
    c.seed = seed;
    c.env.episode_limit = Some(6);
    c.tasks = TaskSets::new(vec![2, 3], vec![5]).unwrap();
    c.arch.embed_dim = 12;
    c.arch.hidden_dim = 10;
    c.arch.message_dim = 6;
    c.arch.cpr.hidden_dim = 8;
    c.arch.cpr.context_dim = 4;
    c.arch.cpr.task_dim = 4;
    c.optim.episodes_per_task = 1;
    c
}

pub fn variant_config(env: EnvId, seed: u64, variant: VariantName) -> TrainConfig {
    build_variant(variant, &toy_config(env, seed)).unwrap().remove(0)
}

/// Gradient of one combination of losses on a fresh batch from `config`.
pub fn grads_for(config: &TrainConfig, kinds: &[LossKind]) -> GroupGrads {
    let mut trainer = Trainer::new(config).unwrap();
    let mut batches = trainer.collect().unwrap();
    compute_losses(&mut batches, &trainer.params, config, kinds).unwrap().1
}

/// Every loss separately on the same batch.
pub fn per_loss_grads(config: &TrainConfig) -> [GroupGrads; 3] {
    let mut trainer = Trainer::new(config).unwrap();
    let mut batches = trainer.collect().unwrap();
    LossKind::ALL.map(|k| compute_losses(&mut batches, &trainer.params, config, &[k]).unwrap().1)
}

pub fn exactly_zero(g: &[Mat]) -> bool {
    g.iter().all(|m| m.data.iter().all(|&x| x == 0.0))
}

pub fn norm(g: &[Mat]) -> f64 {
    g.iter().map(Mat::sq_norm).sum::<f64>().sqrt()
}

/// Outcome of one routing probe.
#[derive(Debug)]
pub struct Probe {
    pub env: EnvId,
    pub seed: u64,
    pub policy_to_cpr: f64,
    pub critic_to_cpr: f64,
    pub critic_kl_to_policy: f64,
    pub policy_exactly_zero_on_cpr: bool,
    pub critic_exactly_zero_on_cpr: bool,
    pub critic_kl_exactly_zero_on_policy: bool,
}

pub fn probe(env: EnvId, seed: u64, variant: VariantName) -> Probe {
    let config = variant_config(env, seed, variant);
    let [p, c, k] = per_loss_grads(&config);
    let ck: Vec<Mat> = c
        .policy
        .iter()
        .zip(&k.policy)
        .map(|(a, b)| {
            let mut s = a.clone();
            s.add_assign(b);
            s
        })
        .collect();
    Probe {
        env,
        seed,
        policy_to_cpr: norm(&p.cpr),
        critic_to_cpr: norm(&c.cpr),
        critic_kl_to_policy: norm(&ck),
        policy_exactly_zero_on_cpr: exactly_zero(&p.cpr),
        critic_exactly_zero_on_cpr: exactly_zero(&c.cpr),
        critic_kl_exactly_zero_on_policy: exactly_zero(&c.policy) && exactly_zero(&k.policy),
    }
}
