use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cpr::{ContextInput, GradientSource};
use crate::error::{Error, Result};
use crate::nets::CriticNorm;
use crate::training::TrainConfig;

/// The full method, its baselines and its ablations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantName {
    MetaCpr,
    GcnComm,
    IndepAc,
    OracleMt,
    OracleSingle,
    CprNoRecurrence,
    CprDeterministic,
    CriticNoCn,
    CprTrainWithPolicy,
    CprTrainWithBoth,
    ContextTransitions,
    ContextBoth,
}

impl VariantName {
    pub const ALL: [VariantName; 12] = [
        VariantName::MetaCpr,
        VariantName::GcnComm,
        VariantName::IndepAc,
        VariantName::OracleMt,
        VariantName::OracleSingle,
        VariantName::CprNoRecurrence,
        VariantName::CprDeterministic,
        VariantName::CriticNoCn,
        VariantName::CprTrainWithPolicy,
        VariantName::CprTrainWithBoth,
        VariantName::ContextTransitions,
        VariantName::ContextBoth,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            VariantName::MetaCpr => "meta_cpr",
            VariantName::GcnComm => "gcn_comm",
            VariantName::IndepAc => "indep_ac",
            VariantName::OracleMt => "oracle_mt",
            VariantName::OracleSingle => "oracle_single",
            VariantName::CprNoRecurrence => "cpr_no_recurrence",
            VariantName::CprDeterministic => "cpr_deterministic",
            VariantName::CriticNoCn => "critic_no_cn",
            VariantName::CprTrainWithPolicy => "cpr_train_with_policy",
            VariantName::CprTrainWithBoth => "cpr_train_with_both",
            VariantName::ContextTransitions => "context_transitions",
            VariantName::ContextBoth => "context_both",
        }
    }

    /// Config keys (dotted paths) the variant changes relative to the full
    /// method, besides `variant` itself.
    pub fn documented_keys(self) -> &'static [&'static str] {
        match self {
            VariantName::MetaCpr => &[],
            VariantName::GcnComm => &["arch.cpr.enabled"],
            VariantName::IndepAc => &["arch.communication", "arch.cpr.enabled", "arch.centralized_critic"],
            VariantName::OracleMt | VariantName::OracleSingle => &["arch.cpr.enabled", "train_counts"],
            VariantName::CprNoRecurrence => &["arch.cpr.recurrent"],
            VariantName::CprDeterministic => &["arch.cpr.stochastic", "optim.kl_weight"],
            VariantName::CriticNoCn => &["arch.critic_norm"],
            VariantName::CprTrainWithPolicy | VariantName::CprTrainWithBoth => &["arch.cpr.gradient_source"],
            VariantName::ContextTransitions | VariantName::ContextBoth => &["arch.cpr.input"],
        }
    }

    /// Trains on the adaptation counts rather than the training counts.
    pub fn is_oracle(self) -> bool {
        matches!(self, VariantName::OracleMt | VariantName::OracleSingle)
    }
}

impl fmt::Display for VariantName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for VariantName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        VariantName::ALL.into_iter().find(|v| v.as_str() == s).ok_or_else(|| Error::Config(format!("unknown variant `{s}`")))
    }
}

/// Derives a variant's training configs from the full method's config.
/// Every variant yields one config except `oracle_single`, which yields one
/// per adaptation count.
pub fn build_variant(name: VariantName, base: &TrainConfig) -> Result<Vec<TrainConfig>> {
    if base.variant != VariantName::MetaCpr {
        return Err(Error::Config(format!("variants derive from meta_cpr, not {}", base.variant)));
    }
    let mut c = base.clone();
    c.variant = name;
    let cpr = &mut c.arch.cpr;
    match name {
        VariantName::MetaCpr => {}
        VariantName::GcnComm => cpr.enabled = false,
        VariantName::IndepAc => {
            cpr.enabled = false;
            c.arch.communication = false;
            c.arch.centralized_critic = false;
        }
        VariantName::OracleMt => {
            cpr.enabled = false;
            c.train_counts = Some(base.tasks.adapt().to_vec());
        }
        VariantName::OracleSingle => {
            cpr.enabled = false;
            return Ok(base.tasks.adapt().iter().map(|&n| TrainConfig { train_counts: Some(vec![n]), ..c.clone() }).collect());
        }
        VariantName::CprNoRecurrence => cpr.recurrent = false,
        VariantName::CprDeterministic => {
            cpr.stochastic = false;
            c.optim.kl_weight = 0.0;
        }
        VariantName::CriticNoCn => c.arch.critic_norm = CriticNorm::Plain,
        VariantName::CprTrainWithPolicy => cpr.gradient_source = GradientSource::Policy,
        VariantName::CprTrainWithBoth => cpr.gradient_source = GradientSource::Both,
        VariantName::ContextTransitions => cpr.input = ContextInput::Transitions,
        VariantName::ContextBoth => cpr.input = ContextInput::Both,
    }
    c.validate()?;
    Ok(vec![c])
}

/// Dotted paths of leaf values that differ between two configs.
pub fn config_diff(a: &TrainConfig, b: &TrainConfig) -> Vec<String> {
    fn walk(prefix: &str, a: &serde_json::Value, b: &serde_json::Value, out: &mut Vec<String>) {
        use serde_json::Value;
        match (a, b) {
            (Value::Object(x), Value::Object(y)) => {
                let mut keys: Vec<&String> = x.keys().chain(y.keys()).collect();
                keys.sort();
                keys.dedup();
                for k in keys {
                    let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                    walk(&path, x.get(k).unwrap_or(&Value::Null), y.get(k).unwrap_or(&Value::Null), out);
                }
            }
            _ if a != b => out.push(prefix.to_string()),
            _ => {}
        }
    }
    let mut out = Vec::new();
    let to_value = |c: &TrainConfig| serde_json::to_value(c).expect("config serializes");
    walk("", &to_value(a), &to_value(b), &mut out);
    out
}
