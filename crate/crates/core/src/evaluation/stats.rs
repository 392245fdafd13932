use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::protocol::{mean, std_error, EvalReport};
use super::VariantName;
use crate::error::{Error, Result};

/// Two-sided Mann-Whitney rank test.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankTest {
    /// Number of pairs `(a_i, b_j)` with `a_i > b_j`, ties counting one half.
    pub u: f64,
    pub p_value: f64,
    /// Exact permutation distribution (no ties, small samples) rather than the normal approximation.
    pub exact: bool,
}

const EXACT_LIMIT: usize = 40;

pub fn mann_whitney(a: &[f64], b: &[f64]) -> RankTest {
    let (m, n) = (a.len(), b.len());
    if m == 0 || n == 0 {
        return RankTest { u: 0.0, p_value: 1.0, exact: true };
    }
    let mut u = 0.0;
    for x in a {
        for y in b {
            if x > y {
                u += 1.0;
            } else if x == y {
                u += 0.5;
            }
        }
    }
    let mut pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    pooled.sort_by(f64::total_cmp);
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < pooled.len() {
        let mut j = i;
        while j + 1 < pooled.len() && pooled[j + 1] == pooled[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        i = j + 1;
    }
    if tie_term == 0.0 && m <= EXACT_LIMIT && n <= EXACT_LIMIT {
        return RankTest { u, p_value: exact_two_sided(m, n, u), exact: true };
    }
    let (mf, nf) = (m as f64, n as f64);
    let big_n = mf + nf;
    let var = mf * nf / 12.0 * ((big_n + 1.0) - tie_term / (big_n * (big_n - 1.0)));
    if var <= 0.0 {
        return RankTest { u, p_value: 1.0, exact: false };
    }
    let dev = ((u - mf * nf / 2.0).abs() - 0.5).max(0.0);
    let z = dev / var.sqrt();
    let normal = Normal::standard();
    let p = (2.0 * (1.0 - normal.cdf(z))).min(1.0);
    RankTest { u, p_value: p, exact: false }
}

/// `P(|U - mn/2| >= |u - mn/2|)` under the null, from the exact distribution.
fn exact_two_sided(m: usize, n: usize, u: f64) -> f64 {
    let max_u = m * n;
    // counts[j][k]: arrangements of j values from a and the full b with U = k, built by adding a values.
    let mut f = vec![vec![vec![0.0f64; max_u + 1]; n + 1]; m + 1];
    for row in f[0].iter_mut() {
        row[0] = 1.0;
    }
    for i in 1..=m {
        f[i][0][0] = 1.0;
        for j in 1..=n {
            for k in 0..=i * j {
                // Largest element from a (beats all j of b) or from b.
                let from_a = if k >= j { f[i - 1][j][k - j] } else { 0.0 };
                f[i][j][k] = from_a + f[i][j - 1][k];
            }
        }
    }
    let dist = &f[m][n];
    let total: f64 = dist.iter().sum();
    let centre = (m * n) as f64 / 2.0;
    let dev = (u - centre).abs() - 1e-9;
    let tail: f64 = dist.iter().enumerate().filter(|(k, _)| (*k as f64 - centre).abs() >= dev).map(|(_, c)| c).sum();
    (tail / total).min(1.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub variant: VariantName,
    pub n_agents: usize,
    pub seeds: usize,
    /// Mean over seeds of each seed's mean return.
    pub mean: f64,
    /// Standard error across seeds.
    pub std_error: f64,
    pub seed_means: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairRow {
    pub n_agents: usize,
    pub a: VariantName,
    pub b: VariantName,
    /// `mean(a) - mean(b)`.
    pub mean_diff: f64,
    pub test: RankTest,
    pub significant: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub alpha: f64,
    pub summary: Vec<SummaryRow>,
    pub pairs: Vec<PairRow>,
}

impl Comparison {
    pub fn pair(&self, n: usize, a: VariantName, b: VariantName) -> Option<&PairRow> {
        self.pairs.iter().find(|p| p.n_agents == n && p.a == a && p.b == b)
    }

    pub fn summary_for(&self, variant: VariantName, n: usize) -> Option<&SummaryRow> {
        self.summary.iter().find(|s| s.variant == variant && s.n_agents == n)
    }

    /// Plain-text table.
    pub fn to_table(&self) -> String {
        let mut out = String::from("variant\tn\tseeds\tmean\tstd_error\n");
        for s in &self.summary {
            out += &format!("{}\t{}\t{}\t{:.6}\t{:.6}\n", s.variant, s.n_agents, s.seeds, s.mean, s.std_error);
        }
        out += "\na\tb\tn\tmean_diff\tU\tp_value\tsignificant\n";
        for p in &self.pairs {
            out += &format!(
                "{}\t{}\t{}\t{:.6}\t{}\t{:.6}\t{}\n",
                p.a, p.b, p.n_agents, p.mean_diff, p.test.u, p.test.p_value, p.significant
            );
        }
        out
    }
}

/// Per-seed mean returns of one report at one count, ordered by seed.
pub fn seed_means(report: &EvalReport, n: usize) -> Vec<f64> {
    let mut by_seed: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    for row in report.rows_for(n) {
        by_seed.entry(row.train_seed).or_default().extend(&row.returns);
    }
    by_seed.values().map(|r| mean(r)).collect()
}

/// Compares two reports at one count on their per-seed means.
pub fn compare_pair(a: &EvalReport, b: &EvalReport, n: usize, alpha: f64) -> PairRow {
    let (xa, xb) = (seed_means(a, n), seed_means(b, n));
    let test = mann_whitney(&xa, &xb);
    PairRow { n_agents: n, a: a.variant, b: b.variant, mean_diff: mean(&xa) - mean(&xb), test, significant: test.p_value < alpha }
}

/// Mean and standard error across seeds per `(variant, n)`, and pairwise rank
/// tests between variants. Reports of the same variant are pooled as seeds.
pub fn compare_runs(reports: &[EvalReport], alpha: f64) -> Result<Comparison> {
    let first = reports.first().ok_or_else(|| Error::Protocol("no reports to compare".into()))?;
    if reports.iter().any(|r| r.env_id != first.env_id || r.adapt_counts != first.adapt_counts || r.discount != first.discount) {
        return Err(Error::Protocol("reports use different environments, agent counts or discounts".into()));
    }
    let mut by_variant: BTreeMap<VariantName, Vec<EvalReport>> = BTreeMap::new();
    for r in reports {
        by_variant.entry(r.variant).or_default().push(r.clone());
    }
    let pooled: Vec<EvalReport> = by_variant.values().map(|rs| EvalReport::merge(rs)).collect::<Result<_>>()?;
    let mut summary = Vec::new();
    let mut pairs = Vec::new();
    for &n in &first.adapt_counts {
        for r in &pooled {
            let sm = seed_means(r, n);
            summary.push(SummaryRow {
                variant: r.variant,
                n_agents: n,
                seeds: sm.len(),
                mean: mean(&sm),
                std_error: std_error(&sm),
                seed_means: sm,
            });
        }
        for i in 0..pooled.len() {
            for j in i + 1..pooled.len() {
                pairs.push(compare_pair(&pooled[i], &pooled[j], n, alpha));
            }
        }
    }
    Ok(Comparison { alpha, summary, pairs })
}
