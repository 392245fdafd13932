use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use metacpr::config::RunConfig;
use metacpr::evaluation::{
    build_variant, compare_runs, evaluate_counts, evaluate_zero_shot, export_trajectory_embeddings, mean, rollout_counts,
    std_error, EvalOptions, EvalReport, LabeledEpisode, VariantName,
};
use metacpr::training::{config_hash, train as run_training, Checkpoint, MetricsRecord, RunArtifacts, TrainConfig, Trainer};
use metacpr::{Error, Result};

use crate::plot::{bars_svg, curves_svg, Band, Bar};
use crate::{AblateArgs, EmbedArgs, EvalArgs, OutArg, PlotArgs, TrainArgs};

fn out_root(arg: &OutArg, cfg: &RunConfig) -> PathBuf {
    arg.out.clone().or_else(|| cfg.run.out_dir.clone()).unwrap_or_else(|| PathBuf::from("runs"))
}

/// Stamps an SVG with the config hashes behind it, right after the root tag.
fn stamp_svg(svg: String, hashes: &[String]) -> String {
    match svg.find('\n') {
        Some(i) => format!("{}\n<!-- config_hashes: {} -->{}", &svg[..i], hashes.join(" "), &svg[i..]),
        None => svg,
    }
}

fn hashes_of(runs: &[Vec<MetricsRecord>]) -> Vec<String> {
    let mut h: Vec<String> = runs.iter().flat_map(|r| r.iter().map(|m| m.config_hash.clone())).collect();
    h.sort();
    h.dedup();
    h
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// One training job: its config and run directory.
struct Job {
    config: TrainConfig,
    dir: PathBuf,
}

fn jobs(base: &TrainConfig, variant: Option<VariantName>, seeds: &[u64], root: &Path) -> Result<Vec<Job>> {
    let configs = match variant {
        Some(v) => build_variant(v, base)?,
        None => vec![base.clone()],
    };
    let mut out = Vec::new();
    for cfg in configs {
        for &seed in seeds {
            let mut name = format!("seed_{seed}");
            if cfg.variant == VariantName::OracleSingle {
                let counts: Vec<String> = cfg.training_counts().iter().map(|n| n.to_string()).collect();
                name += &format!("_n{}", counts.join("_"));
            }
            let dir = root.join(cfg.variant.as_str()).join(name);
            out.push(Job { config: TrainConfig { seed, ..cfg.clone() }, dir });
        }
    }
    Ok(out)
}

fn run_job(job: &Job, resume: bool, stop_after: Option<u64>) -> Result<RunArtifacts> {
    let latest = job.dir.join(RunArtifacts::CHECKPOINT);
    let trainer = if resume && latest.exists() {
        let ckpt = Checkpoint::load(&latest)?;
        if ckpt.config != job.config {
            return Err(Error::Config(format!("{} was trained with a different config", job.dir.display())));
        }
        Trainer::from_checkpoint(&ckpt)?
    } else {
        Trainer::new(&job.config)?
    };
    run_training(trainer, &job.dir, stop_after)
}

pub fn train(args: TrainArgs) -> Result<()> {
    let cfg = RunConfig::load(&args.config)?;
    let variant = args.variant.as_deref().map(str::parse).transpose()?;
    let seeds = if args.seeds.is_empty() { cfg.seeds() } else { args.seeds.clone() };
    let root = out_root(&args.out, &cfg);
    for job in jobs(&cfg.train, variant, &seeds, &root)? {
        let art = run_job(&job, args.resume, args.stop_after)?;
        let last = art.records.last();
        println!(
            "{}\tupdates={}\tenv_steps={}\treturn={}",
            art.dir.display(),
            last.map_or(0, |r| r.update),
            last.map_or(0, |r| r.env_steps),
            last.map_or("-".into(), |r| format!("{:.4}", r.mean_return()))
        );
    }
    Ok(())
}

fn print_report(report: &EvalReport) {
    for row in &report.rows {
        println!(
            "{}\tn={}\tseed={}\tmean={:.4}\tse={:.4}\tepisodes={}",
            report.variant,
            row.n_agents,
            row.train_seed,
            row.mean(),
            row.std_error(),
            row.returns.len()
        );
    }
}

pub fn eval(args: EvalArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&args.run.join(RunArtifacts::CHECKPOINT))?;
    let counts = if args.adapt.is_empty() { ckpt.config.tasks.adapt().to_vec() } else { args.adapt.clone() };
    let opts = EvalOptions { episodes: args.episodes, seed: args.seed, greedy: args.greedy, discount: args.discount };
    let report =
        if args.in_distribution { evaluate_counts(&ckpt, &counts, &opts)? } else { evaluate_zero_shot(&ckpt, &counts, &opts)? };
    let out = args.out.unwrap_or_else(|| args.run.join("eval.jsonl"));
    write(&out, &report.to_jsonl())?;
    print_report(&report);
    Ok(())
}

fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    BufReader::new(file)
        .lines()
        .map(|line| {
            let line = line.map_err(|e| Error::io(path, e))?;
            serde_json::from_str(&line).map_err(|e| Error::Serde(format!("{}: {e}", path.display())))
        })
        .collect()
}

fn moving_average(x: &[f64], window: usize) -> Vec<f64> {
    let w = window.max(1);
    (0..x.len()).map(|i| mean(&x[i.saturating_sub(w - 1)..=i])).collect()
}

/// Mean ± standard error across runs at each update index, after smoothing.
fn band(label: String, runs: &[Vec<MetricsRecord>], smooth: usize) -> Band {
    let len = runs.iter().map(Vec::len).min().unwrap_or(0);
    let smoothed: Vec<Vec<f64>> =
        runs.iter().map(|r| moving_average(&r.iter().map(MetricsRecord::mean_return).collect::<Vec<_>>(), smooth)).collect();
    let mut b = Band { label, x: Vec::new(), mean: Vec::new(), se: Vec::new() };
    for i in 0..len {
        let vals: Vec<f64> = smoothed.iter().map(|s| s[i]).collect();
        b.x.push(runs[0][i].update as f64);
        b.mean.push(mean(&vals));
        b.se.push(std_error(&vals));
    }
    b
}

fn variant_of(metrics: &Path) -> String {
    metrics
        .parent()
        .map(|d| d.join(RunArtifacts::CONFIG))
        .and_then(|p| fs::read_to_string(p).ok())
        .and_then(|t| RunConfig::parse(&t).ok())
        .map(|c| c.train.variant.to_string())
        .unwrap_or_else(|| metrics.display().to_string())
}

pub fn plot(args: PlotArgs) -> Result<()> {
    let mut groups: BTreeMap<String, Vec<Vec<MetricsRecord>>> = BTreeMap::new();
    for path in &args.metrics {
        groups.entry(variant_of(path)).or_default().push(read_metrics(path)?);
    }
    let hashes = hashes_of(&groups.values().flatten().cloned().collect::<Vec<_>>());
    let bands: Vec<Band> = groups.into_iter().map(|(label, runs)| band(label, &runs, args.smooth)).collect();
    let svg = curves_svg("Training return", "update", "mean per-agent return", &bands);
    write(&args.out, &stamp_svg(svg, &hashes))?;
    println!("{}", args.out.display());
    Ok(())
}

pub fn ablate(args: AblateArgs) -> Result<()> {
    let cfg = RunConfig::load(&args.config)?;
    let variants: Vec<VariantName> = if !args.variants.is_empty() {
        args.variants.iter().map(|v| v.parse()).collect::<Result<_>>()?
    } else if !cfg.run.variants.is_empty() {
        cfg.run.variants.clone()
    } else {
        vec![VariantName::MetaCpr, VariantName::GcnComm]
    };
    let seeds = if args.seeds.is_empty() { cfg.seeds() } else { args.seeds.clone() };
    let root = out_root(&args.out, &cfg);
    let episodes = args.episodes.or(cfg.run.eval_episodes).unwrap_or(20);
    let adapt = cfg.train.tasks.adapt().to_vec();

    let mut reports = Vec::new();
    let mut curves: BTreeMap<String, Vec<Vec<MetricsRecord>>> = BTreeMap::new();
    for &variant in &variants {
        let mut per_variant = Vec::new();
        for job in jobs(&cfg.train, Some(variant), &seeds, &root)? {
            let art = run_job(&job, true, None)?;
            curves.entry(variant.to_string()).or_default().push(read_metrics(&art.metrics)?);
            let ckpt = Checkpoint::load(&art.checkpoint)?;
            let opts = EvalOptions { episodes, seed: 0, greedy: args.greedy, discount: 1.0 };
            let report = if variant.is_oracle() {
                // Oracles are evaluated on the counts they were trained on.
                let mut r = evaluate_counts(&ckpt, &ckpt.config.training_counts(), &opts)?;
                r.adapt_counts = adapt.clone();
                r
            } else {
                evaluate_zero_shot(&ckpt, &adapt, &opts)?
            };
            print_report(&report);
            per_variant.push(report);
        }
        reports.push(EvalReport::merge(&per_variant)?);
    }

    let mut lines = String::new();
    for r in &reports {
        lines += &r.to_jsonl();
    }
    write(&root.join("reports.jsonl"), &lines)?;
    let cmp = compare_runs(&reports, args.alpha)?;
    let mut hashes: Vec<String> = reports.iter().flat_map(|r| r.config_hashes.iter().cloned()).collect();
    hashes.sort();
    hashes.dedup();
    write(&root.join("comparison.tsv"), &format!("# config_hashes: {}\n{}", hashes.join(" "), cmp.to_table()))?;
    let json = serde_json::json!({ "config_hashes": hashes, "comparison": cmp });
    write(&root.join("comparison.json"), &(serde_json::to_string_pretty(&json).expect("serializes") + "\n"))?;
    let bands: Vec<Band> = curves.into_iter().map(|(label, runs)| band(label, &runs, 10)).collect();
    let svg = curves_svg("Training return", "update", "mean per-agent return", &bands);
    write(&root.join("curves.svg"), &stamp_svg(svg, &hashes))?;
    for &n in &adapt {
        let bars: Vec<Bar> = cmp
            .summary
            .iter()
            .filter(|s| s.n_agents == n)
            .map(|s| Bar { label: s.variant.to_string(), mean: s.mean, se: s.std_error })
            .collect();
        let svg = bars_svg(&format!("Zero-shot return, n = {n}"), "mean per-agent return", &bars);
        write(&root.join(format!("zero_shot_n{n}.svg")), &stamp_svg(svg, &hashes))?;
    }
    print!("{}", cmp.to_table());
    Ok(())
}

pub fn embed(args: EmbedArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&args.run.join(RunArtifacts::CHECKPOINT))?;
    let model = ckpt.model()?;
    let opts = EvalOptions { episodes: args.episodes, seed: args.seed, greedy: args.greedy, discount: 1.0 };
    if opts.episodes == 0 {
        return Err(Error::Protocol("embedding needs at least one episode".into()));
    }
    let rollouts = rollout_counts(&model, &ckpt.params, &ckpt.config, &args.counts, &opts)?;
    let label = ckpt.config.variant.to_string();
    let labeled: Vec<LabeledEpisode<'_>> =
        rollouts.iter().flat_map(|(_, eps)| eps.iter().map(|e| LabeledEpisode { label: label.clone(), episode: e })).collect();
    let matrix = export_trajectory_embeddings(&labeled, ckpt.config.env.episode_limit())?;
    let out = args.out.unwrap_or_else(|| args.run.join("embeddings.tsv"));
    let hash = config_hash(&ckpt.config);
    write(&out, &format!("# config_hash: {hash}\n{}", matrix.to_table()))?;
    println!("{}\trows={}\tcols={}", out.display(), matrix.rows.len(), matrix.cols());
    Ok(())
}
