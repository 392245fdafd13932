//! Independent numeric oracles for the closed forms used in training.

use metacpr::autodiff::Graph;
use metacpr::cpr::{fuse_contexts, kl_to_prior, GaussianContext};
use metacpr::dist::ActionDistribution;
use metacpr::envs::EnvId;
use metacpr::model::{AgentModel, StepInputs};
use metacpr::nets::ArchConfig;
use metacpr::tensor::Mat;
use metacpr::training::{compute_gae, EnvConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub const GRID_POINTS: usize = 100_000;
pub const MC_SAMPLES: usize = 1_000_000;

fn random_context(rng: &mut impl Rng, d: usize) -> GaussianContext {
    let mean = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
    let var = (0..d).map(|_| rng.random_range(0.3..2.5)).collect();
    GaussianContext::new(mean, var).unwrap()
}

fn log_normal_pdf(x: f64, m: f64, v: f64) -> f64 {
    -0.5 * ((x - m) * (x - m) / v + (2.0 * std::f64::consts::PI * v).ln())
}

/// Mean and variance of the normalized pointwise product of 1-D Gaussian
/// densities, by trapezoidal quadrature on `GRID_POINTS` points over [-10, 10].
pub fn grid_product_moments(parts: &[(f64, f64)]) -> (f64, f64) {
    let h = 20.0 / (GRID_POINTS - 1) as f64;
    let xs: Vec<f64> = (0..GRID_POINTS).map(|i| -10.0 + i as f64 * h).collect();
    let log_d: Vec<f64> = xs.iter().map(|&x| parts.iter().map(|&(m, v)| log_normal_pdf(x, m, v)).sum()).collect();
    let top = log_d.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = log_d
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let edge = if i == 0 || i + 1 == GRID_POINTS { 0.5 } else { 1.0 };
            edge * (l - top).exp()
        })
        .collect();
    let z: f64 = w.iter().sum();
    let mean = w.iter().zip(&xs).map(|(w, x)| w * x).sum::<f64>() / z;
    let var = w.iter().zip(&xs).map(|(w, x)| w * (x - mean) * (x - mean)).sum::<f64>() / z;
    (mean, var)
}

/// Largest deviation between the precision-space fusion and the grid product,
/// over every dimension of `count` random 3-D posteriors.
pub fn fusion_vs_grid(seed: u64, count: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let qs: Vec<GaussianContext> = (0..count).map(|_| random_context(&mut rng, 3)).collect();
    let fused = fuse_contexts(&qs).unwrap();
    let mut worst: f64 = 0.0;
    for k in 0..3 {
        let parts: Vec<(f64, f64)> = qs.iter().map(|q| (q.mean[k], q.variance[k])).collect();
        let (m, v) = grid_product_moments(&parts);
        worst = worst.max((m - fused.mean[k]).abs()).max((v - fused.variance[k]).abs());
    }
    worst
}

/// `|closed form - Monte-Carlo estimate|` of KL(q || N(0, I)) for a random 4-D `q`.
pub fn kl_vs_monte_carlo(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q = random_context(&mut rng, 4);
    let mut acc = 0.0;
    for _ in 0..MC_SAMPLES {
        for k in 0..4 {
            let xi: f64 = StandardNormal.sample(&mut rng);
            let x = q.mean[k] + q.variance[k].sqrt() * xi;
            acc += log_normal_pdf(x, q.mean[k], q.variance[k]) - log_normal_pdf(x, 0.0, 1.0);
        }
    }
    (kl_to_prior(&q) - acc / MC_SAMPLES as f64).abs()
}

/// `A_t = Σ_{l ≥ 0} (γλ)^l δ_{t+l}` by explicit double summation.
pub fn brute_force_gae(rewards: &[f64], values: &[f64], bootstrap: f64, gamma: f64, lambda: f64) -> Vec<f64> {
    let t_max = rewards.len();
    let delta = |t: usize| {
        let next = if t + 1 < t_max { values[t + 1] } else { bootstrap };
        rewards[t] + gamma * next - values[t]
    };
    (0..t_max).map(|t| (t..t_max).map(|u| (gamma * lambda).powi((u - t) as i32) * delta(u)).sum()).collect()
}

/// Largest gap between the recursive estimator and the double sum on random episodes.
pub fn gae_vs_double_sum(seed: u64, episodes: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..episodes {
        let len = rng.random_range(1..=100);
        let r: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..len).map(|_| rng.random_range(-2.0..2.0)).collect();
        let boot = if rng.random_bool(0.5) { 0.0 } else { rng.random_range(-2.0..2.0) };
        let (gamma, lambda) = (rng.random_range(0.8..1.0), rng.random_range(0.0..1.0));
        let (adv, ret) = compute_gae(&r, &v, boot, gamma, lambda);
        for (t, b) in brute_force_gae(&r, &v, boot, gamma, lambda).into_iter().enumerate() {
            worst = worst.max((adv[t] - b).abs()).max((ret[t] - (b + v[t])).abs());
        }
    }
    worst
}

/// `-Σ p ln p` term by term.
pub fn categorical_entropy_sum(probs: &[f64]) -> f64 {
    let mut h = 0.0;
    for &p in probs {
        if p > 0.0 {
            h -= p * p.ln();
        }
    }
    h
}

/// `-∫ p ln p` of a 1-D Gaussian by trapezoidal quadrature on ±12σ.
pub fn gaussian_entropy_quadrature(std: f64) -> f64 {
    let steps = 24_000;
    let h = 24.0 * std / steps as f64;
    (0..=steps)
        .map(|i| {
            let x = -12.0 * std + i as f64 * h;
            let lp = log_normal_pdf(x, 0.0, std * std);
            let edge = if i == 0 || i == steps { 0.5 } else { 1.0 };
            -edge * lp.exp() * lp * h
        })
        .sum()
}

/// Largest gap between the policy heads' entropies (graph and distribution
/// forms) and direct summation, over random observations in every environment.
pub fn entropy_vs_direct(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for env in [EnvId::ParticleSystem, EnvId::PopulationHarvest, EnvId::PushBall] {
        let (obs_dim, space) = EnvConfig::new(env).spaces();
        let arch = ArchConfig { embed_dim: 8, hidden_dim: 8, message_dim: 4, ..ArchConfig::default() };
        let (model, params) = AgentModel::build(&arch, obs_dim, space, &mut rng).unwrap();
        let n = 5;
        let mut g = Graph::new();
        let p = params.bind(&mut g, false);
        let carry = model.initial_carry(&mut g, n);
        let inputs = StepInputs {
            obs: Mat::from_vec(n, obs_dim, (0..n * obs_dim).map(|_| rng.random_range(-3.0..3.0)).collect()),
            cpr_input: Mat::from_vec(
                n,
                model.cpr_input_width(),
                (0..n * model.cpr_input_width()).map(|_| rng.random_range(-1.0..1.0)).collect(),
            ),
            noise: Mat::row_vector((0..model.context_dim()).map(|_| rng.random_range(-1.0..1.0)).collect()),
        };
        let sv = model.step(&mut g, &p, &inputs, &carry);
        let ent = sv.head.entropy(&mut g, n);
        let graph_h = g.value(ent).clone();
        for (i, d) in sv.head.distributions(&g, &space).iter().enumerate() {
            let direct = match d {
                ActionDistribution::Categorical { probs } => categorical_entropy_sum(probs),
                ActionDistribution::Gaussian { std, .. } => std.iter().map(|&s| gaussian_entropy_quadrature(s)).sum(),
            };
            worst = worst.max((graph_h.get(i, 0) - direct).abs()).max((d.entropy() - direct).abs());
        }
    }
    worst
}
