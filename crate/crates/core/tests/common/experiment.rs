//! Desk-scale training runs on an 8×8 particle grid: train on {2, 3}
//! agents for 200k environment steps, transfer zero-shot to 6.

use std::fs;
use std::path::{Path, PathBuf};

use metacpr::envs::{EnvId, TaskSets};
use metacpr::evaluation::{
    build_variant, compare_runs, evaluate_counts, evaluate_zero_shot, mean, std_error, Comparison, EvalOptions, EvalReport,
    VariantName,
};
use metacpr::training::{train, Checkpoint, MetricsRecord, RunArtifacts, TrainConfig, Trainer};

pub const BUDGET: u64 = 200_000;
pub const ADAPT: usize = 6;
pub const EVAL_EPISODES: usize = 50;
pub const EVAL_SEED: u64 = 20_240;
pub const ALPHA: f64 = 0.05;

pub fn base_config(seed: u64) -> TrainConfig {
    let mut c = TrainConfig::new(EnvId::ParticleSystem);
    c.seed = seed;
    c.env.params.particle.grid_size = 8;
    c.tasks = TaskSets::new(vec![2, 3], vec![ADAPT]).unwrap();
    // The step budget ends every run; the update cap only has to stay out of the way.
    c.optim.total_updates = 1_000_000;
    c.optim.max_env_steps = Some(BUDGET);
    c.logging.checkpoint_every = 0;
    c
}

pub fn eval_options() -> EvalOptions {
    EvalOptions { episodes: EVAL_EPISODES, seed: EVAL_SEED, greedy: false, discount: 1.0 }
}

/// A finished run together with its random-initialization snapshot.
pub struct TrainedRun {
    pub variant: VariantName,
    pub seed: u64,
    pub dir: PathBuf,
    pub initial: Checkpoint,
    pub last: Checkpoint,
    pub records: Vec<MetricsRecord>,
}

impl TrainedRun {
    /// Every logged loss, entropy and gradient norm is finite.
    pub fn losses_finite(&self) -> bool {
        self.records.iter().all(|r| {
            [r.loss_policy, r.loss_critic, r.loss_kl, r.entropy, r.grad_norm_policy, r.grad_norm_critic, r.grad_norm_cpr]
                .iter()
                .all(|x| x.is_finite())
        })
    }

    /// Zero-shot report at the adaptation count; oracle baselines trained on
    /// that count are evaluated in distribution.
    pub fn adapt_report(&self) -> metacpr::Result<EvalReport> {
        if self.last.config.is_zero_shot_eligible() {
            evaluate_zero_shot(&self.last, &[ADAPT], &eval_options())
        } else {
            evaluate_counts(&self.last, &[ADAPT], &eval_options())
        }
    }
}

pub fn train_variant(root: &Path, variant: VariantName, seed: u64) -> metacpr::Result<TrainedRun> {
    let config = build_variant(variant, &base_config(seed))?.remove(0);
    let dir = root.join(variant.to_string()).join(format!("seed_{seed}"));
    if dir.exists() {
        fs::remove_dir_all(&dir).map_err(|e| metacpr::Error::io(&dir, e))?;
    }
    let trainer = Trainer::new(&config)?;
    let initial = trainer.checkpoint();
    let art = train(trainer, &dir, None)?;
    let last = Checkpoint::load(&dir.join(RunArtifacts::CHECKPOINT))?;
    Ok(TrainedRun { variant, seed, dir, initial, last, records: art.records })
}

/// Training-count returns of the trained and the frozen initial policy.
#[derive(Debug)]
pub struct Sanity {
    pub variant: VariantName,
    pub counts: Vec<usize>,
    pub trained: (f64, f64),
    pub baseline: (f64, f64),
    /// `(trained - baseline) / sqrt(se_t² + se_b²)`.
    pub z: f64,
    pub losses_finite: bool,
    pub env_steps: u64,
}

pub fn sanity(run: &TrainedRun) -> metacpr::Result<Sanity> {
    let counts = run.last.config.training_counts();
    let pooled = |ckpt: &Checkpoint| -> metacpr::Result<Vec<f64>> {
        let r = evaluate_counts(ckpt, &counts, &eval_options())?;
        Ok(r.rows.iter().flat_map(|row| row.returns.iter().copied()).collect())
    };
    let (t, b) = (pooled(&run.last)?, pooled(&run.initial)?);
    let (mt, st, mb, sb) = (mean(&t), std_error(&t), mean(&b), std_error(&b));
    Ok(Sanity {
        variant: run.variant,
        counts,
        trained: (mt, st),
        baseline: (mb, sb),
        z: (mt - mb) / (st * st + sb * sb).sqrt(),
        losses_finite: run.losses_finite(),
        env_steps: run.last.env_steps,
    })
}

/// Directional comparison of two variants at the adaptation count.
#[derive(Debug)]
pub struct Directional {
    pub a: VariantName,
    pub b: VariantName,
    pub seeds: usize,
    pub mean_a: f64,
    pub mean_b: f64,
    /// Standard errors across seed means.
    pub se_a: f64,
    pub se_b: f64,
    pub p_value: f64,
    pub significant: bool,
    pub comparison: Comparison,
}

impl Directional {
    pub fn gap(&self) -> f64 {
        self.mean_a - self.mean_b
    }

    /// Gap over the standard error of the difference of seed means.
    pub fn gap_in_se(&self) -> f64 {
        self.gap() / (self.se_a * self.se_a + self.se_b * self.se_b).sqrt()
    }

    /// Rank-test significance in the claimed direction.
    pub fn strong(&self) -> bool {
        self.significant && self.gap() > 0.0
    }

    /// The fallback: the claimed ordering of means holds.
    pub fn directional(&self) -> bool {
        self.gap() >= 0.0
    }

    pub fn describe(&self) -> String {
        format!(
            "{} {:.4}±{:.4} vs {} {:.4}±{:.4} over {} seeds; gap {:+.4} ({:+.2} SE), rank-test p={:.4}",
            self.a,
            self.mean_a,
            self.se_a,
            self.b,
            self.mean_b,
            self.se_b,
            self.seeds,
            self.gap(),
            self.gap_in_se(),
            self.p_value
        )
    }
}

pub fn directional(a: &[EvalReport], b: &[EvalReport]) -> metacpr::Result<Directional> {
    let all: Vec<EvalReport> = a.iter().chain(b).cloned().collect();
    let comparison = compare_runs(&all, ALPHA)?;
    let (va, vb) = (a[0].variant, b[0].variant);
    let sa = comparison.summary_for(va, ADAPT).expect("summary row");
    let sb = comparison.summary_for(vb, ADAPT).expect("summary row");
    let (p_value, significant) = match comparison.pair(ADAPT, va, vb).or_else(|| comparison.pair(ADAPT, vb, va)) {
        Some(p) => (p.test.p_value, p.significant),
        None => (1.0, false),
    };
    Ok(Directional {
        a: va,
        b: vb,
        seeds: sa.seeds.min(sb.seeds),
        mean_a: sa.mean,
        mean_b: sb.mean,
        se_a: sa.std_error,
        se_b: sb.std_error,
        p_value,
        significant,
        comparison,
    })
}
