//! Training configuration, named presets and `section.key=value` overrides.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{PorError, Result};
use crate::valuelearn::ValueObjective;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GuideObjective {
    /// Value ascent on guide samples, anchored to a fitted behaviour density.
    Explicit,
    /// Residual-weighted maximum likelihood of dataset next states.
    Weighted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepsConfig {
    /// Value and guide updates (the first loop).
    pub value_guide: u64,
    /// Execute-policy updates (the second loop).
    pub execute: u64,
    pub batch_size: usize,
    /// Loss averaging window for metrics rows.
    pub log_every: u64,
    /// Evaluation cadence during the execute loop; 0 disables it.
    pub eval_every: u64,
    pub eval_episodes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValueConfig {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub objective: ValueObjective,
    pub tau: f64,
    pub gamma: f64,
    pub polyak: f64,
    pub layer_norm: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GuideConfig {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub objective: GuideObjective,
    pub alpha: f64,
    /// Predict `s' - s` rather than `s'`.
    pub residual: bool,
    /// Train the explicit objective on the mean instead of samples.
    pub deterministic: bool,
    pub layer_norm: bool,
    /// Maximum-likelihood steps for the behaviour density (explicit
    /// objective only).
    pub density_steps: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExecuteConfig {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    /// Weight the likelihood by the clipped exponential residual.
    pub weighted: bool,
    pub layer_norm: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub steps: StepsConfig,
    pub value: ValueConfig,
    pub guide: GuideConfig,
    pub execute: ExecuteConfig,
}

/// Per-environment objective, tau, alpha and policy learning rate.
const TABLE4: &[(&str, GuideObjective, f64, f64, f64)] = &[
    ("antmaze-umaze-v2", GuideObjective::Weighted, 0.9, 10.0, 1e-3),
    ("antmaze-umaze-diverse-v2", GuideObjective::Weighted, 0.9, 10.0, 1e-3),
    ("antmaze-medium-play-v2", GuideObjective::Weighted, 0.9, 10.0, 1e-4),
    ("antmaze-medium-diverse-v2", GuideObjective::Weighted, 0.9, 10.0, 1e-4),
    ("antmaze-large-play-v2", GuideObjective::Weighted, 0.9, 10.0, 1e-4),
    ("antmaze-large-diverse-v2", GuideObjective::Weighted, 0.9, 10.0, 1e-4),
    ("halfcheetah-medium-v2", GuideObjective::Weighted, 0.5, 3.0, 1e-3),
    ("hopper-medium-v2", GuideObjective::Explicit, 0.7, 50.0, 1e-3),
    ("walker2d-medium-v2", GuideObjective::Weighted, 0.5, 3.0, 1e-3),
    ("halfcheetah-medium-replay-v2", GuideObjective::Weighted, 0.5, 3.0, 1e-3),
    ("hopper-medium-replay-v2", GuideObjective::Explicit, 0.7, 50.0, 1e-3),
    ("walker2d-medium-replay-v2", GuideObjective::Weighted, 0.5, 3.0, 1e-3),
    ("halfcheetah-medium-expert-v2", GuideObjective::Weighted, 0.5, 3.0, 1e-3),
    ("hopper-medium-expert-v2", GuideObjective::Explicit, 0.7, 5.0, 1e-3),
    ("walker2d-medium-expert-v2", GuideObjective::Weighted, 0.5, 3.0, 1e-3),
];

pub const PRESETS: &[&str] = &["table3", "table4-<env>", "table7", "fourroom"];

impl Default for TrainConfig {
    fn default() -> Self {
        Self::table3()
    }
}

impl TrainConfig {
    /// General defaults: 256x2 value and guide, 1024x2 execute, value
    /// learning rate 1e-4, batch 256, discount 0.99, target rate 0.05.
    pub fn table3() -> Self {
        TrainConfig {
            seed: 0,
            steps: StepsConfig {
                value_guide: 1_000_000,
                execute: 1_000_000,
                batch_size: 256,
                log_every: 5_000,
                eval_every: 5_000,
                eval_episodes: 10,
            },
            value: ValueConfig {
                hidden: vec![256, 256],
                learning_rate: 1e-4,
                objective: ValueObjective::Expectile,
                tau: 0.7,
                gamma: 0.99,
                polyak: 0.05,
                layer_norm: false,
            },
            guide: GuideConfig {
                hidden: vec![256, 256],
                learning_rate: 1e-3,
                objective: GuideObjective::Weighted,
                alpha: 3.0,
                residual: true,
                deterministic: false,
                layer_norm: false,
                density_steps: 100_000,
            },
            execute: ExecuteConfig {
                hidden: vec![1024, 1024],
                learning_rate: 1e-3,
                weighted: false,
                layer_norm: false,
            },
        }
    }

    pub fn table4(env: &str) -> Result<Self> {
        let &(_, objective, tau, alpha, lr) = TABLE4
            .iter()
            .find(|row| row.0 == env)
            .ok_or_else(|| PorError::Config(format!("no per-environment row for `{env}`")))?;
        let mut c = Self::table3();
        c.value.tau = tau;
        c.guide.objective = objective;
        c.guide.alpha = alpha;
        c.guide.learning_rate = lr;
        c.execute.learning_rate = lr;
        Ok(c)
    }

    /// Four-room settings: every network 64x2, every learning rate 1e-4,
    /// tau 0.9, alpha 10, residual-weighted guide.
    pub fn table7() -> Self {
        let mut c = Self::table3();
        c.steps.value_guide = 200_000;
        c.steps.execute = 200_000;
        c.value.hidden = vec![64, 64];
        c.value.tau = 0.9;
        c.guide.hidden = vec![64, 64];
        c.guide.learning_rate = 1e-4;
        c.guide.objective = GuideObjective::Weighted;
        c.guide.alpha = 10.0;
        c.execute.hidden = vec![64, 64];
        c.execute.learning_rate = 1e-4;
        c
    }

    /// Four-room settings with a residual temperature matched to the
    /// reward scale; see the README for why the tabled temperature gives
    /// near-uniform weights here.
    pub fn fourroom() -> Self {
        let mut c = Self::table7();
        c.guide.alpha = 0.001;
        c.guide.learning_rate = 1e-3;
        c.execute.learning_rate = 1e-3;
        c.value.learning_rate = 3e-4;
        c
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "table3" => Ok(Self::table3()),
            "table7" => Ok(Self::table7()),
            "fourroom" => Ok(Self::fourroom()),
            _ => match name.strip_prefix("table4-") {
                Some(env) => Self::table4(env),
                None => Err(PorError::Config(format!(
                    "unknown preset `{name}`; expected one of {}",
                    PRESETS.join(", ")
                ))),
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(PorError::Config(m));
        if self.steps.batch_size == 0 {
            return bad("steps.batch_size must be positive".into());
        }
        if self.steps.log_every == 0 {
            return bad("steps.log_every must be positive".into());
        }
        for (name, lr) in [
            ("value", self.value.learning_rate),
            ("guide", self.guide.learning_rate),
            ("execute", self.execute.learning_rate),
        ] {
            if !(lr > 0.0 && lr.is_finite()) {
                return bad(format!("{name}.learning_rate must be positive"));
            }
        }
        match self.value.objective {
            ValueObjective::Expectile if !(self.value.tau > 0.0 && self.value.tau < 1.0) => {
                return bad(format!("value.tau {} outside (0, 1)", self.value.tau));
            }
            ValueObjective::Sparse if !(self.value.tau > 0.0) => {
                return bad(format!("value.tau {} must be positive", self.value.tau));
            }
            _ => {}
        }
        if !(0.0..=1.0).contains(&self.value.gamma) || !(0.0..=1.0).contains(&self.value.polyak) {
            return bad("value.gamma and value.polyak must lie in [0, 1]".into());
        }
        match self.guide.objective {
            GuideObjective::Weighted if !(self.guide.alpha > 0.0) => bad("guide.alpha must be positive".into()),
            GuideObjective::Explicit if !(self.guide.alpha >= 0.0) => bad("guide.alpha must be non-negative".into()),
            _ => Ok(()),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let c: TrainConfig = toml::from_str(text).map_err(|e| PorError::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    /// Apply `section.key=value` (or `key=value` for top-level keys). The
    /// value is parsed as TOML, falling back to a bare string.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (path, raw) = assignment
            .split_once('=')
            .ok_or_else(|| PorError::Config(format!("override `{assignment}` is not key=value")))?;
        let path = path.trim();
        let raw = raw.trim();
        let value: toml::Value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
            .map(|mut t| t.remove("v").expect("key present"))
            .unwrap_or_else(|_| toml::Value::String(raw.to_string()));
        let mut root = toml::Value::try_from(&*self).expect("config serialises");
        let mut slot = &mut root;
        let keys: Vec<&str> = path.split('.').collect();
        for (i, k) in keys.iter().enumerate() {
            let table = slot
                .as_table_mut()
                .ok_or_else(|| PorError::Config(format!("`{path}` does not name a setting")))?;
            if !table.contains_key(*k) {
                return Err(PorError::Config(format!("unknown setting `{path}`")));
            }
            slot = table.get_mut(*k).unwrap();
            if i + 1 == keys.len() {
                // Integers given where floats are stored (and vice versa).
                *slot = match (&*slot, value.clone()) {
                    (toml::Value::Float(_), toml::Value::Integer(n)) => toml::Value::Float(n as f64),
                    (_, v) => v,
                };
            }
        }
        let updated: TrainConfig = root
            .try_into()
            .map_err(|e: toml::de::Error| PorError::Config(format!("override `{assignment}`: {e}")))?;
        updated.validate()?;
        *self = updated;
        Ok(())
    }

    /// Hex SHA-256 of the canonical TOML form.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table7_values() {
        let c = TrainConfig::table7();
        assert_eq!(c.value.tau, 0.9);
        assert_eq!(c.guide.alpha, 10.0);
        assert_eq!(c.value.gamma, 0.99);
        assert_eq!(c.steps.batch_size, 256);
        assert_eq!(c.value.polyak, 0.05);
        assert_eq!(c.guide.objective, GuideObjective::Weighted);
        for h in [&c.value.hidden, &c.guide.hidden, &c.execute.hidden] {
            assert_eq!(h, &vec![64, 64]);
        }
        for lr in [c.value.learning_rate, c.guide.learning_rate, c.execute.learning_rate] {
            assert_eq!(lr, 1e-4);
        }
    }

    #[test]
    fn table3_values() {
        let c = TrainConfig::table3();
        assert_eq!(c.value.hidden, vec![256, 256]);
        assert_eq!(c.guide.hidden, vec![256, 256]);
        assert_eq!(c.execute.hidden, vec![1024, 1024]);
        assert_eq!(c.value.learning_rate, 1e-4);
    }

    #[test]
    fn table4_rows() {
        let c = TrainConfig::preset("table4-hopper-medium-expert-v2").unwrap();
        assert_eq!((c.guide.objective, c.value.tau, c.guide.alpha), (GuideObjective::Explicit, 0.7, 5.0));
        assert!(TrainConfig::preset("table4-pong").is_err());
        assert!(TrainConfig::preset("nope").is_err());
    }

    #[test]
    fn toml_round_trip() {
        let c = TrainConfig::fourroom();
        assert_eq!(TrainConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn overrides() {
        let mut c = TrainConfig::table7();
        c.apply_override("guide.alpha=3").unwrap();
        assert_eq!(c.guide.alpha, 3.0);
        c.apply_override("value.objective=sparse").unwrap();
        assert_eq!(c.value.objective, ValueObjective::Sparse);
        c.apply_override("seed = 12").unwrap();
        assert_eq!(c.seed, 12);
        c.apply_override("execute.hidden=[32, 32]").unwrap();
        assert_eq!(c.execute.hidden, vec![32, 32]);
        assert!(c.apply_override("guide.nothing=1").is_err());
        assert!(c.apply_override("value.tau=1.5").is_err() || c.value.objective == ValueObjective::Sparse);
        assert!(c.apply_override("steps.batch_size=0").is_err());
        assert!(c.apply_override("noequals").is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = TrainConfig::table7();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
    }
}
