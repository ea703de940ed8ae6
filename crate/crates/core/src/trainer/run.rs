//! Run directories: `config`, `dataset_hash`, `value.ckpt`, `guide.ckpt`,
//! `execute.ckpt` and `metrics.csv`.

use std::fs;
use std::path::Path;

use super::{metrics_csv, TrainConfig, TrainOutcome};
use crate::approx::checkpoint::{load_bundle, load_mlp, save_bundle, save_mlp};
use crate::envs::fourroom::MAX_ACTION;
use crate::error::{PorError, Result};
use crate::policies::{ExecutePolicy, GuidePolicy, PorAgent, StateModel};

#[derive(Debug, Clone)]
pub struct RunFiles {
    pub config: TrainConfig,
    pub dataset_hash: String,
    pub agent: PorAgent,
    pub metrics_csv: String,
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| PorError::io(path, e))
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| PorError::io(path, e))
}

pub fn write_run(dir: impl AsRef<Path>, config: &TrainConfig, dataset_hash: &str, outcome: &TrainOutcome) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| PorError::io(dir, e))?;
    write(&dir.join("config"), config.to_toml())?;
    write(&dir.join("dataset_hash"), format!("{dataset_hash}\n"))?;
    let v = &outcome.value;
    save_bundle(&[&v.online[0], &v.online[1], &v.target[0], &v.target[1]], dir.join("value.ckpt"))?;
    save_mlp(outcome.agent.guide.net(), dir.join("guide.ckpt"))?;
    save_mlp(&outcome.agent.execute.net, dir.join("execute.ckpt"))?;
    write(&dir.join("metrics.csv"), metrics_csv(&outcome.metrics))
}

pub fn load_run(dir: impl AsRef<Path>) -> Result<RunFiles> {
    let dir = dir.as_ref();
    let config = TrainConfig::from_toml(&read(&dir.join("config"))?)?;
    let dataset_hash = read(&dir.join("dataset_hash"))?.trim().to_string();
    let guide = GuidePolicy {
        model: StateModel {
            net: load_mlp(dir.join("guide.ckpt"))?,
            residual: config.guide.residual,
        },
    };
    let execute = ExecutePolicy {
        net: load_mlp(dir.join("execute.ckpt"))?,
    };
    let act_dim = execute.act_dim();
    let agent = PorAgent::new(guide, execute, vec![-MAX_ACTION; act_dim], vec![MAX_ACTION; act_dim])?;
    let value = load_bundle(dir.join("value.ckpt"))?;
    if value.len() != 4 {
        return Err(PorError::Corrupt {
            offset: 0,
            reason: format!("value bundle holds {} networks, expected 4", value.len()),
        });
    }
    Ok(RunFiles {
        config,
        dataset_hash,
        agent,
        metrics_csv: read(&dir.join("metrics.csv"))?,
    })
}
