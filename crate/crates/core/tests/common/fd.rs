//! Central finite differences against the tape gradients.

use metacpr::autodiff::Graph;
use metacpr::cpr::{CprConfig, CprNet};
use metacpr::envs::{EnvId, TaskSets};
use metacpr::model::{AgentModel, AgentParams};
use metacpr::nets::{ArchConfig, CriticNet};
use metacpr::params::ParamGroup;
use metacpr::tensor::Mat;
use metacpr::training::{
    accumulate_gradients, episode_losses, loss_scales, prepare_targets, replay_episode, BatchTargets, Episode, EpisodeBatch,
    GroupGrads, LossKind, LossScales, TrainConfig, Trainer,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-4;

/// `|a - n| / max(|a|, |n|, 1e-6)`; the floor keeps vanishing entries from
/// turning rounding noise into large ratios.
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Maximum relative error between `analytic` and central differences of `f` at `x`.
pub fn max_rel_error(x: &[f64], analytic: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> f64 {
    assert_eq!(x.len(), analytic.len());
    let mut worst: f64 = 0.0;
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + STEP;
        let up = f(&probe);
        probe[i] = x[i] - STEP;
        let down = f(&probe);
        probe[i] = x[i];
        worst = worst.max(rel_error(analytic[i], (up - down) / (2.0 * STEP)));
    }
    worst
}

fn flat(m: &[Mat]) -> Vec<f64> {
    m.iter().flat_map(|x| x.data.iter().copied()).collect()
}

/// Tiny architecture with every component switched on.
pub fn tiny_config(env: EnvId, seed: u64) -> TrainConfig {
    let mut c = TrainConfig::new(env);
    c.seed = seed;
    c.env.episode_limit = Some(4);
    c.tasks = TaskSets::new(vec![2, 3], vec![4]).unwrap();
    c.arch.embed_dim = 3;
    c.arch.hidden_dim = 2;
    c.arch.message_dim = 2;
    c.arch.cpr.hidden_dim = 3;
    c.arch.cpr.context_dim = 2;
    c.arch.cpr.task_dim = 2;
    c.optim.episodes_per_task = 1;
    c.optim.kl_weight = 0.5;
    c
}

/// Fixed episodes and targets; losses are then functions of the parameters only.
pub struct LossFixture {
    pub config: TrainConfig,
    pub model: AgentModel,
    pub params: AgentParams,
    pub episodes: Vec<Vec<Episode>>,
    pub targets: BatchTargets,
    pub scales: Vec<LossScales>,
}

impl LossFixture {
    pub fn new(config: TrainConfig) -> Self {
        let mut trainer = Trainer::new(&config).unwrap();
        let batches: Vec<EpisodeBatch> = trainer.collect().unwrap();
        let scales = batches.iter().map(|b| loss_scales(b, &config)).collect();
        let episodes: Vec<Vec<Episode>> = batches.into_iter().map(|b| b.episodes).collect();
        let views: Vec<Vec<&Episode>> = episodes.iter().map(|e| e.iter().collect()).collect();
        let o = &config.optim;
        let targets = prepare_targets(&views, o.gamma, o.gae_lambda, o.normalize_advantages);
        Self { model: trainer.model, params: trainer.params, config, episodes, targets, scales }
    }

    /// Sum of the requested losses over all tasks, and optionally its gradients.
    fn eval(&self, params: &AgentParams, kinds: &[LossKind], track: bool) -> (f64, Option<GroupGrads>) {
        let mut total = 0.0;
        let mut grads = track.then(|| GroupGrads::zeros(params));
        for (b, eps) in self.episodes.iter().enumerate() {
            for (e, ep) in eps.iter().enumerate() {
                let mut trace = replay_episode(&self.model, params, ep, track);
                let adv = &self.targets.advantages[b][e];
                let ret = &self.targets.returns[b][e];
                let vars = episode_losses(&mut trace, ep, adv, ret, &self.config, self.scales[b]).unwrap();
                let g = &mut trace.graph;
                let mut root = g.constant(Mat::zeros(1, 1));
                for k in kinds {
                    let v = match k {
                        LossKind::Policy => vars.policy,
                        LossKind::Critic => vars.critic,
                        LossKind::Kl => vars.kl,
                    };
                    root = g.add(root, v);
                }
                total += g.scalar(root);
                if let Some(acc) = grads.as_mut() {
                    accumulate_gradients(&trace, root, params, acc);
                }
            }
        }
        (total, grads)
    }

    pub fn loss(&self, params: &AgentParams, kinds: &[LossKind]) -> f64 {
        self.eval(params, kinds, false).0
    }

    pub fn gradients(&self, kinds: &[LossKind]) -> GroupGrads {
        self.eval(&self.params, kinds, true).1.unwrap()
    }

    /// Finite-difference check of `kinds` with respect to parameter group `group` (0 θ, 1 μ, 2 φ).
    pub fn check(&self, kinds: &[LossKind], group: usize) -> (usize, f64) {
        let analytic = flat(self.gradients(kinds).groups()[group]);
        let x = self.params.groups()[group].flatten();
        assert!(analytic.iter().any(|g| g.abs() > 1e-8), "vanishing gradient for group {group}");
        let worst = max_rel_error(&x, &analytic, |v| {
            let mut p = self.params.clone();
            p.groups_mut()[group].set_flat(v);
            self.loss(&p, kinds)
        });
        (x.len(), worst)
    }
}

/// Value of a two-unit conditionally normalized critic with respect to the task vector.
pub fn critic_cn_wrt_z(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let arch = ArchConfig {
        embed_dim: 3,
        hidden_dim: 2,
        cpr: CprConfig { task_dim: 3, ..CprConfig::default() },
        ..ArchConfig::default()
    };
    let mut group = ParamGroup::new();
    let critic = CriticNet::build(&arch, 4, &mut group, &mut rng);
    // Move the generator away from its identity initialization so the z-path is generic.
    let mut noisy = group.flatten();
    for v in noisy.iter_mut() {
        *v += rng.random_range(-0.5..0.5);
    }
    group.set_flat(&noisy);
    let obs = Mat::from_vec(3, 4, (0..12).map(|_| rng.random_range(-1.0..1.0)).collect());
    let hidden = Mat::from_vec(3, 2, (0..6).map(|_| rng.random_range(-1.0..1.0)).collect());
    let weights = Mat::from_vec(3, 1, vec![0.7, -1.3, 0.4]);
    let z0: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
    let value = |z: &[f64], track: bool| {
        let mut g = Graph::new();
        let p = group.bind(&mut g, false);
        let zv = if track { g.param(Mat::row_vector(z.to_vec())) } else { g.constant(Mat::row_vector(z.to_vec())) };
        let o = g.constant(obs.clone());
        let h = g.constant(hidden.clone());
        let (v, _) = critic.step(&mut g, &p, o, h, zv);
        let w = g.constant(weights.clone());
        let y = g.mul(v, w);
        let root = g.sum_all(y);
        let grad = track.then(|| g.backward(root).get_or_zeros(zv, (1, 3)).data);
        (g.scalar(root), grad)
    };
    let analytic = value(&z0, true).1.unwrap();
    assert!(analytic.iter().any(|g| g.abs() > 1e-8));
    max_rel_error(&z0, &analytic, |z| value(z, false).0)
}

/// A weighted sum of three recurrent recognizer steps with respect to φ.
pub fn cpr_wrt_phi(seed: u64, recurrent: bool) -> (usize, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let config = CprConfig { context_dim: 2, task_dim: 2, hidden_dim: 3, recurrent, ..CprConfig::default() };
    let mut group = ParamGroup::new();
    let net = CprNet::build(&config, 3, &mut group, &mut rng);
    let inputs: Vec<Mat> = (0..3).map(|_| Mat::from_vec(4, 3, (0..12).map(|_| rng.random_range(-1.0..1.0)).collect())).collect();
    let noise: Vec<Mat> =
        (0..3).map(|_| Mat::row_vector(vec![rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5)])).collect();
    let weights = Mat::row_vector(vec![0.9, -0.6]);
    let run = |grp: &ParamGroup, track: bool| {
        let mut g = Graph::new();
        let p = grp.bind(&mut g, track);
        let mut h = g.constant(Mat::zeros(1, 3));
        let mut root = g.constant(Mat::zeros(1, 1));
        for (x, xi) in inputs.iter().zip(&noise) {
            let xv = g.constant(x.clone());
            let s = net.step(&mut g, &p, xv, h, xi);
            h = s.hidden;
            let w = g.constant(weights.clone());
            let y = g.mul(s.z, w);
            let y = g.sum_all(y);
            root = g.add(root, y);
        }
        let grads = track.then(|| flat(&p.grads(grp, &g.backward(root))));
        (g.scalar(root), grads)
    };
    let analytic = run(&group, true).1.unwrap();
    assert!(analytic.iter().any(|g| g.abs() > 1e-8));
    let x = group.flatten();
    let worst = max_rel_error(&x, &analytic, |v| {
        let mut grp = group.clone();
        grp.set_flat(v);
        run(&grp, false).0
    });
    (x.len(), worst)
}
