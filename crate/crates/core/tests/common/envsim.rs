//! A second, standalone simulator for the three environments, written from
//! the rule descriptions rather than from the library code. Initial states
//! and apple respawn cells are random draws; the simulator validates them
//! and adopts them, and recomputes everything else.

#![allow(clippy::needless_range_loop)]

use std::collections::HashMap;

use metacpr::envs::{
    EnvId, Environment, HarvestParams, HarvestState, JointAction, ParticleParams, ParticleState, ParticleSystem,
    PopulationHarvest, PushBall, PushBallParams, PushBallState, StepResult, TaskSpec,
};
use metacpr::tensor::Mat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Cell = (i64, i64);

const MOVES: [Cell; 5] = [(0, 1), (0, -1), (-1, 0), (1, 0), (0, 0)];

fn shift(c: Cell, a: usize, g: i64) -> Cell {
    let n = (c.0 + MOVES[a].0, c.1 + MOVES[a].1);
    if n.0 < 0 || n.1 < 0 || n.0 >= g || n.1 >= g {
        c
    } else {
        n
    }
}

/// Outcome of a whole simulated stretch of steps.
#[derive(Debug, Default)]
pub struct SimSummary {
    pub steps: usize,
    pub episodes: usize,
    pub collisions: usize,
    pub pickups: usize,
    pub deliveries: usize,
    pub ball_moves: usize,
    pub successes: usize,
}

fn check(cond: bool, what: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(what())
    }
}

fn check_common(r: &StepResult, rewards: &[f64], done: bool, terminated: bool, t: usize, at: usize) -> Result<(), String> {
    check(r.rewards == rewards, || format!("step {at}: rewards {:?} vs oracle {rewards:?}", r.rewards))?;
    check(r.done == done, || format!("step {at}: done {} vs oracle {done}", r.done))?;
    check(r.terminated == terminated, || format!("step {at}: terminated {} vs oracle {terminated}", r.terminated))?;
    check(r.info.get("step") == Some(&(t as f64)), || format!("step {at}: info step {:?} vs {t}", r.info.get("step")))
}

// ---------------------------------------------------------------- particle

fn particle_obs(s: &ParticleState, g: usize) -> Mat {
    let d = (g - 1) as f64;
    let rows: Vec<Vec<f64>> = s
        .agents
        .iter()
        .zip(&s.landmarks)
        .map(|(a, l)| vec![a.0 as f64 / d, a.1 as f64 / d, l.0 as f64 / d, l.1 as f64 / d])
        .collect();
    Mat::from_rows(&rows)
}

/// Moves that end in a shared cell or swap two agents are all rejected,
/// repeatedly, until no conflict remains. Every agent involved in a conflict
/// (including one that stayed put) is flagged.
fn particle_moves(cur: &[Cell], proposed: &[Cell]) -> (Vec<Cell>, Vec<bool>) {
    let n = cur.len();
    let mut dest = proposed.to_vec();
    let mut hit = vec![false; n];
    loop {
        let mut occupancy: HashMap<Cell, usize> = HashMap::new();
        for d in &dest {
            *occupancy.entry(*d).or_default() += 1;
        }
        let mut revert = vec![false; n];
        for i in 0..n {
            if occupancy[&dest[i]] > 1 {
                hit[i] = true;
                revert[i] = dest[i] != cur[i];
            }
            for j in 0..n {
                if j != i && dest[i] != cur[i] && dest[j] != cur[j] && dest[i] == cur[j] && dest[j] == cur[i] {
                    hit[i] = true;
                    revert[i] = true;
                }
            }
        }
        if !revert.iter().any(|&r| r) {
            return (dest, hit);
        }
        for i in 0..n {
            if revert[i] {
                dest[i] = cur[i];
            }
        }
    }
}

fn validate_particle_reset(s: &ParticleState, n: usize, g: i64) -> Result<(), String> {
    let mut cells: Vec<Cell> = s.agents.iter().chain(&s.landmarks).copied().collect();
    check(cells.len() == 2 * n, || "wrong number of agents or landmarks".into())?;
    check(cells.iter().all(|c| (0..g).contains(&c.0) && (0..g).contains(&c.1)), || "spawn outside grid".into())?;
    cells.sort();
    cells.dedup();
    check(cells.len() == 2 * n, || "overlapping spawn cells".into())?;
    check(s.reached.iter().all(|r| !r) && s.t == 0, || "reset state not fresh".into())
}

pub fn particle(n: usize, limit: usize, seed: u64, steps: usize) -> Result<SimSummary, String> {
    let p = ParticleParams::default();
    let g = p.grid_size as i64;
    let mut env = ParticleSystem::new(&TaskSpec::new(EnvId::ParticleSystem, n, limit, seed).unwrap(), p.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA11CE);
    let mut sum = SimSummary::default();
    let mut obs = env.reset();
    let mut s = env.state().clone();
    validate_particle_reset(&s, n, g)?;
    sum.episodes = 1;
    for at in 0..steps {
        check(obs.0 == particle_obs(&s, p.grid_size), || format!("step {at}: observation mismatch"))?;
        let actions: Vec<usize> = (0..n).map(|_| rng.random_range(0..5)).collect();
        let proposed: Vec<Cell> = s.agents.iter().zip(&actions).map(|(&c, &a)| shift(c, a, g)).collect();
        let (dest, hit) = particle_moves(&s.agents, &proposed);
        s.agents = dest;
        s.t += 1;
        let mut rewards = Vec::with_capacity(n);
        for i in 0..n {
            let mut r = -p.step_cost;
            if hit[i] {
                r -= p.collision_penalty;
                sum.collisions += 1;
            }
            if s.agents[i] == s.landmarks[i] && !s.reached[i] {
                s.reached[i] = true;
                r += p.reach_bonus;
            }
            rewards.push(r);
        }
        let all_on = (0..n).all(|i| s.agents[i] == s.landmarks[i]);
        let done = all_on || s.t >= limit;

        let r = env.step(&JointAction::Discrete(actions)).map_err(|e| e.to_string())?;
        check_common(&r, &rewards, done, all_on, s.t, at)?;
        check(env.state() == &s, || format!("step {at}: state {:?} vs oracle {s:?}", env.state()))?;
        obs = r.observation;
        sum.steps += 1;
        if done {
            sum.successes += all_on as usize;
            obs = env.reset();
            s = env.state().clone();
            validate_particle_reset(&s, n, g)?;
            sum.episodes += 1;
        }
    }
    Ok(sum)
}

// ----------------------------------------------------------------- harvest

fn harvest_obs(s: &HarvestState, g: usize) -> Mat {
    let d = (g - 1) as f64;
    let rows: Vec<Vec<f64>> = (0..s.agents.len())
        .map(|i| {
            let a = s.agents[i];
            // Closest present apple by Manhattan distance; lowest index wins ties.
            let mut best: Option<(i64, Cell)> = None;
            for c in s.apples.iter().flatten() {
                let dist = (c.0 - a.0).abs() + (c.1 - a.1).abs();
                if best.is_none_or(|(bd, _)| dist < bd) {
                    best = Some((dist, *c));
                }
            }
            let apple = best.map_or(a, |(_, c)| c);
            vec![
                a.0 as f64 / d,
                a.1 as f64 / d,
                apple.0 as f64 / d,
                apple.1 as f64 / d,
                s.target.0 as f64 / d,
                s.target.1 as f64 / d,
                if s.carrying[i].is_some() { 1.0 } else { 0.0 },
            ]
        })
        .collect();
    Mat::from_rows(&rows)
}

fn validate_harvest_reset(s: &HarvestState, n: usize, g: i64) -> Result<(), String> {
    check(s.apples.len() == n && s.apples.iter().all(Option::is_some), || "apples missing at reset".into())?;
    let mut cells: Vec<Cell> = s.agents.iter().copied().chain(s.apples.iter().flatten().copied()).collect();
    cells.push(s.target);
    check(cells.iter().all(|c| (0..g).contains(&c.0) && (0..g).contains(&c.1)), || "spawn outside grid".into())?;
    cells.sort();
    cells.dedup();
    check(cells.len() == 2 * n + 1, || "overlapping spawn cells".into())?;
    check(s.carrying.iter().all(Option::is_none) && s.t == 0, || "reset state not fresh".into())
}

pub fn harvest(n: usize, limit: usize, seed: u64, steps: usize) -> Result<SimSummary, String> {
    let p = HarvestParams::default();
    let g = p.grid_size as i64;
    let mut env = PopulationHarvest::new(&TaskSpec::new(EnvId::PopulationHarvest, n, limit, seed).unwrap(), p.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xB0B);
    let mut sum = SimSummary::default();
    let mut obs = env.reset();
    let mut s = env.state().clone();
    validate_harvest_reset(&s, n, g)?;
    sum.episodes = 1;
    for at in 0..steps {
        check(obs.0 == harvest_obs(&s, p.grid_size), || format!("step {at}: observation mismatch"))?;
        let actions: Vec<usize> = (0..n).map(|_| rng.random_range(0..5)).collect();
        let before = s.agents.clone();
        for i in 0..n {
            s.agents[i] = shift(s.agents[i], actions[i], g);
        }
        s.t += 1;
        let mut rewards = vec![0.0; n];
        for k in 0..n {
            let Some(cell) = s.apples[k] else { continue };
            let here: Vec<usize> = (0..n).filter(|&i| s.agents[i] == cell && s.carrying[i].is_none()).collect();
            if here.len() == 1 {
                s.carrying[here[0]] = Some(k);
                s.apples[k] = None;
                sum.pickups += 1;
            } else {
                for &i in here.iter().filter(|&&i| before[i] != cell) {
                    rewards[i] -= p.conflict_penalty;
                    sum.collisions += 1;
                }
            }
        }
        let mut freed = Vec::new();
        for i in 0..n {
            if s.agents[i] == s.target {
                if let Some(k) = s.carrying[i].take() {
                    rewards[i] += p.delivery_reward;
                    freed.push(k);
                }
            }
        }
        freed.sort();
        let done = s.t >= limit;

        let r = env.step(&JointAction::Discrete(actions)).map_err(|e| e.to_string())?;
        check_common(&r, &rewards, done, false, s.t, at)?;
        let actual = env.state();
        // Respawned apples: adopt the env's draw after checking it lands on a free cell.
        for &k in &freed {
            let c = actual.apples[k].ok_or_else(|| format!("step {at}: apple {k} not respawned"))?;
            let taken = c == s.target || s.agents.contains(&c) || s.apples.iter().flatten().any(|&o| o == c);
            check((0..g).contains(&c.0) && (0..g).contains(&c.1) && !taken, || {
                format!("step {at}: apple {k} respawned on {c:?}")
            })?;
            s.apples[k] = Some(c);
            sum.deliveries += 1;
        }
        check(actual == &s, || format!("step {at}: state {actual:?} vs oracle {s:?}"))?;
        obs = r.observation;
        sum.steps += 1;
        if done {
            obs = env.reset();
            s = env.state().clone();
            validate_harvest_reset(&s, n, g)?;
            sum.episodes += 1;
        }
    }
    Ok(sum)
}

// ---------------------------------------------------------------- pushball

fn euclid(a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (a[0] - b[0], a[1] - b[1]);
    (dx * dx + dy * dy).sqrt()
}

fn unit01(x: f64) -> f64 {
    x.clamp(0.0, 1.0)
}

fn validate_pushball_reset(s: &PushBallState, n: usize) -> Result<(), String> {
    check(s.agents.len() == n && s.t == 0, || "bad reset".into())?;
    check(s.agents.iter().flatten().all(|x| (0.0..=1.0).contains(x)), || "agent outside arena".into())?;
    check(s.ball.iter().all(|x| (0.25..=0.75).contains(x)), || "ball outside spawn box".into())?;
    check(s.target.iter().all(|x| (0.1..=0.9).contains(x)), || "target outside spawn box".into())?;
    check(euclid(s.ball, s.target) >= 0.3, || "target spawned too close to ball".into())
}

/// Bitwise equality; both simulators use IEEE arithmetic on the same formulas.
fn close(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}

pub fn push_ball(n: usize, limit: usize, seed: u64, steps: usize) -> Result<SimSummary, String> {
    let p = PushBallParams::default();
    let mut env = PushBall::new(&TaskSpec::new(EnvId::PushBall, n, limit, seed).unwrap(), p.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xBA11);
    let mut sum = SimSummary::default();
    let mut obs = env.reset();
    let mut s = env.state().clone();
    validate_pushball_reset(&s, n)?;
    sum.episodes = 1;
    for at in 0..steps {
        for i in 0..n {
            let row = [s.agents[i][0], s.agents[i][1], s.ball[0], s.ball[1], s.target[0], s.target[1]];
            check(close(obs.agent(i), &row), || format!("step {at}: observation mismatch for agent {i}"))?;
        }
        // Random forces, half of them aimed at the ball so that pushes happen; raw values exceed the box.
        let raw: Vec<[f64; 2]> = s
            .agents
            .iter()
            .map(|a| {
                if rng.random_bool(0.5) {
                    [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)]
                } else {
                    let k = rng.random_range(5.0..40.0);
                    [k * (s.ball[0] - a[0]) + rng.random_range(-0.3..0.3), k * (s.ball[1] - a[1]) + rng.random_range(-0.3..0.3)]
                }
            })
            .collect();
        let forces: Vec<[f64; 2]> = raw
            .iter()
            .map(|f| {
                let b = [f[0].clamp(-1.0, 1.0), f[1].clamp(-1.0, 1.0)];
                let m = (b[0] * b[0] + b[1] * b[1]).sqrt();
                if m > 1.0 {
                    [b[0] / m, b[1] / m]
                } else {
                    b
                }
            })
            .collect();
        let mut net = [0.0; 2];
        for (a, f) in s.agents.iter().zip(&forces) {
            if euclid(*a, s.ball) <= p.contact_radius {
                net = [net[0] + f[0], net[1] + f[1]];
            }
        }
        let m = (net[0] * net[0] + net[1] * net[1]).sqrt();
        if m > p.force_threshold {
            let unit = [net[0] / m, net[1] / m];
            let v = [p.ball_gain * (net[0] - p.force_threshold * unit[0]), p.ball_gain * (net[1] - p.force_threshold * unit[1])];
            s.ball = [unit01(s.ball[0] + v[0]), unit01(s.ball[1] + v[1])];
            sum.ball_moves += 1;
        }
        for (a, f) in s.agents.iter_mut().zip(&forces) {
            *a = [unit01(a[0] + p.agent_speed * f[0]), unit01(a[1] + p.agent_speed * f[1])];
        }
        s.t += 1;
        let d = euclid(s.ball, s.target);
        let success = d < p.success_radius;
        let reward = if success { p.success_bonus - d } else { -d };
        let done = success || s.t >= limit;

        let flat: Vec<f64> = raw.iter().flatten().copied().collect();
        let r = env.step(&JointAction::Continuous(Mat::from_vec(n, 2, flat))).map_err(|e| e.to_string())?;
        check(close(&r.rewards, &vec![reward; n]), || format!("step {at}: rewards {:?} vs oracle {reward}", r.rewards))?;
        check(r.done == done && r.terminated == success, || format!("step {at}: done/terminated mismatch"))?;
        let a = env.state();
        let agents_ok = a.agents.iter().zip(&s.agents).all(|(x, y)| close(x, y));
        check(agents_ok && close(&a.ball, &s.ball) && a.target == s.target && a.t == s.t, || {
            format!("step {at}: state {a:?} vs oracle {s:?}")
        })?;
        // Continue from the env's exact floats so rounding never compounds.
        s = a.clone();
        obs = r.observation;
        sum.steps += 1;
        if done {
            sum.successes += success as usize;
            obs = env.reset();
            s = env.state().clone();
            validate_pushball_reset(&s, n)?;
            sum.episodes += 1;
        }
    }
    Ok(sum)
}

pub fn run(env: EnvId, n: usize, seed: u64, steps: usize) -> Result<SimSummary, String> {
    match env {
        EnvId::ParticleSystem => particle(n, 50, seed, steps),
        EnvId::PopulationHarvest => harvest(n, 80, seed, steps),
        EnvId::PushBall => push_ball(n, 100, seed, steps),
    }
}
