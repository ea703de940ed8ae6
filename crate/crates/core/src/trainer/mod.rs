//! The two-loop training procedure, evaluation and the transfer / mix
//! drivers.
//!
//! Loop one runs `steps.value_guide` iterations, each a value update
//! followed by a guide update on the same minibatch. Loop two runs
//! `steps.execute` execute-policy updates. Each loop draws minibatches from
//! its own random stream, so the execute-policy does not depend on what the
//! first loop saw.

mod config;
mod eval;
mod run;

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use config::{ExecuteConfig, GuideConfig, GuideObjective, StepsConfig, TrainConfig, ValueConfig, PRESETS};
pub use eval::{evaluate, EpisodeRecord, EvalReport, RandomPolicy, ScriptedController};
pub use run::{load_run, write_run, RunFiles};

use crate::approx::AdamState;
use crate::data::{Columns, TrajectoryDataset};
use crate::envs::fourroom::{FourRoomConfig, MAX_ACTION};
use crate::error::{PorError, Result};
use crate::policies::{
    exp_weights, execute_loss, fit_behavior_density, guide_loss_explicit, guide_loss_weighted, guide_noise,
    BehaviorGuideDensity, DensityFit, ExecutePolicy, GuidePolicy, PorAgent,
};
use crate::valuelearn::ValueEnsemble;

const INIT_STREAM: u64 = 0;
const VALUE_GUIDE_STREAM: u64 = 1;
const EXECUTE_STREAM: u64 = 2;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(id);
    r
}

pub const METRICS_HEADER: &str = "step,loss_v,loss_g,loss_pi,eval_return_mean,eval_return_std,eval_success_rate";

/// One line of the metrics stream. Columns a phase does not produce are
/// left empty.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsRow {
    pub step: u64,
    pub loss_v: Option<f64>,
    pub loss_g: Option<f64>,
    pub loss_pi: Option<f64>,
    pub eval_return_mean: Option<f64>,
    pub eval_return_std: Option<f64>,
    pub eval_success_rate: Option<f64>,
}

impl MetricsRow {
    pub fn to_csv(&self) -> String {
        let f = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{}",
            self.step,
            f(self.loss_v),
            f(self.loss_g),
            f(self.loss_pi),
            f(self.eval_return_mean),
            f(self.eval_return_std),
            f(self.eval_success_rate)
        )
    }
}

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        writeln!(out, "{}", r.to_csv()).unwrap();
    }
    out
}

/// Periodic evaluation while the execute-policy trains.
#[derive(Debug, Clone)]
pub struct EvalSpec {
    pub env: FourRoomConfig,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub agent: PorAgent,
    pub value: ValueEnsemble,
    pub behavior: Option<BehaviorGuideDensity>,
    pub metrics: Vec<MetricsRow>,
}

struct Averager {
    sum: f64,
    n: u64,
}

impl Averager {
    fn new() -> Self {
        Averager { sum: 0.0, n: 0 }
    }

    fn push(&mut self, v: f64) {
        self.sum += v;
        self.n += 1;
    }

    fn take(&mut self) -> Option<f64> {
        let out = (self.n > 0).then(|| self.sum / self.n as f64);
        *self = Averager::new();
        out
    }
}

fn action_box(act_dim: usize) -> (Vec<f64>, Vec<f64>) {
    (vec![-MAX_ACTION; act_dim], vec![MAX_ACTION; act_dim])
}

/// Networks for all three stages, initialised from the config seed in a
/// fixed order.
fn init_networks(obs_dim: usize, act_dim: usize, config: &TrainConfig) -> Result<(ValueEnsemble, GuidePolicy, ExecutePolicy)> {
    let mut rng = stream(config.seed, INIT_STREAM);
    let v = &config.value;
    let value = ValueEnsemble::new(
        obs_dim,
        &v.hidden,
        v.layer_norm,
        v.objective,
        v.tau,
        v.gamma,
        v.polyak,
        v.learning_rate,
        &mut rng,
    )?;
    let g = &config.guide;
    let guide = GuidePolicy::new(obs_dim, &g.hidden, g.layer_norm, g.residual, &mut rng)?;
    let e = &config.execute;
    let execute = ExecutePolicy::new(obs_dim, act_dim, &e.hidden, e.layer_norm, &mut rng)?;
    Ok((value, guide, execute))
}

/// Loop one: value and guide updates on `dataset`.
fn train_value_guide(
    dataset: &TrajectoryDataset,
    config: &TrainConfig,
    value: &mut ValueEnsemble,
    guide: &mut GuidePolicy,
    metrics: &mut Vec<MetricsRow>,
) -> Result<Option<BehaviorGuideDensity>> {
    let n = config.steps.value_guide;
    if n == 0 {
        return Ok(None);
    }
    let cols = Columns::new(dataset);
    let behavior = match config.guide.objective {
        GuideObjective::Explicit => Some(fit_behavior_density(
            dataset,
            &DensityFit {
                hidden: config.guide.hidden.clone(),
                steps: config.steps.value_guide.min(config.guide.density_steps) as usize,
                batch_size: config.steps.batch_size,
                learning_rate: config.guide.learning_rate,
                residual: config.guide.residual,
                seed: config.seed,
            },
        )?),
        GuideObjective::Weighted => None,
    };
    let mut rng = stream(config.seed, VALUE_GUIDE_STREAM);
    let mut guide_opt = AdamState::for_model(&guide.model.net, config.guide.learning_rate);
    let (mut lv, mut lg) = (Averager::new(), Averager::new());
    for step in 1..=n {
        let batch = cols.sample(&mut rng, config.steps.batch_size)?;
        let loss_v = value.update(&batch).map_err(|e| PorError::Diverged {
            step,
            reason: format!("value update: {e}"),
        })?;
        let (loss_g, grads) = match (&behavior, config.guide.objective) {
            (Some(b), GuideObjective::Explicit) => {
                let noise = if config.guide.deterministic {
                    ndarray::Array2::zeros(batch.states.dim())
                } else {
                    guide_noise(&mut rng, batch.len(), batch.obs_dim())
                };
                guide_loss_explicit(&batch, guide, value, b, config.guide.alpha, noise.view())?
            }
            _ => guide_loss_weighted(&batch, guide, value, config.guide.alpha)?,
        };
        if !loss_g.is_finite() {
            return Err(PorError::Diverged {
                step,
                reason: format!("guide loss {loss_g}"),
            });
        }
        guide_opt.step(&mut guide.model.net, &grads).map_err(|e| PorError::Diverged {
            step,
            reason: format!("guide update: {e}"),
        })?;
        lv.push(loss_v);
        lg.push(loss_g);
        if step % config.steps.log_every == 0 || step == n {
            let row = MetricsRow {
                step,
                loss_v: lv.take(),
                loss_g: lg.take(),
                ..MetricsRow::default()
            };
            log::info!("value/guide step {step}/{n}: loss_v {:?} loss_g {:?}", row.loss_v, row.loss_g);
            metrics.push(row);
        }
    }
    Ok(behavior)
}

/// Loop two: execute-policy updates on `dataset`, which must carry actions.
fn train_execute(
    dataset: &TrajectoryDataset,
    config: &TrainConfig,
    execute: &mut ExecutePolicy,
    value: &ValueEnsemble,
    guide: &GuidePolicy,
    eval: Option<&EvalSpec>,
    step_offset: u64,
    metrics: &mut Vec<MetricsRow>,
) -> Result<()> {
    let m = config.steps.execute;
    if m == 0 {
        return Ok(());
    }
    if !dataset.has_actions() {
        return Err(PorError::ActionFree(
            "execute-policy training needs a dataset with actions".into(),
        ));
    }
    let cols = Columns::new(dataset);
    let mut rng = stream(config.seed, EXECUTE_STREAM);
    let mut opt = AdamState::for_model(&execute.net, config.execute.learning_rate);
    let mut lp = Averager::new();
    let (low, high) = action_box(execute.act_dim());
    for step in 1..=m {
        let batch = cols.sample(&mut rng, config.steps.batch_size)?;
        let weights = if config.execute.weighted {
            Some(exp_weights(&value.residuals(&batch)?, config.guide.alpha)?)
        } else {
            None
        };
        let (loss, grads) = execute_loss(&batch, execute, weights.as_deref())?;
        if !loss.is_finite() {
            return Err(PorError::Diverged {
                step: step + step_offset,
                reason: format!("execute loss {loss}"),
            });
        }
        opt.step(&mut execute.net, &grads).map_err(|e| PorError::Diverged {
            step: step + step_offset,
            reason: format!("execute update: {e}"),
        })?;
        lp.push(loss);
        let eval_now = eval.is_some() && config.steps.eval_every > 0 && (step % config.steps.eval_every == 0 || step == m);
        if step % config.steps.log_every == 0 || step == m || eval_now {
            let mut row = MetricsRow {
                step: step + step_offset,
                loss_pi: lp.take(),
                ..MetricsRow::default()
            };
            if let (true, Some(spec)) = (eval_now, eval) {
                let agent = PorAgent::new(guide.clone(), execute.clone(), low.clone(), high.clone())?;
                let r = evaluate(&spec.env, &agent, config.steps.eval_episodes, spec.seed)?;
                row.eval_return_mean = Some(r.mean_return());
                row.eval_return_std = Some(r.std_return());
                row.eval_success_rate = Some(r.success_rate());
            }
            log::info!("execute step {step}/{m}: loss_pi {:?} success {:?}", row.loss_pi, row.eval_success_rate);
            metrics.push(row);
        }
    }
    Ok(())
}

/// Full two-loop training on one dataset.
pub fn train(dataset: &TrajectoryDataset, config: &TrainConfig, eval: Option<&EvalSpec>) -> Result<TrainOutcome> {
    train_split(dataset, dataset, config, eval)
}

/// Value and guide learn from `value_guide_data`; the execute-policy
/// learns from `execute_data` only.
pub fn train_split(
    value_guide_data: &TrajectoryDataset,
    execute_data: &TrajectoryDataset,
    config: &TrainConfig,
    eval: Option<&EvalSpec>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if value_guide_data.obs_dim() != execute_data.obs_dim() || execute_data.act_dim() == 0 {
        return Err(PorError::DimensionMismatch {
            context: "value/guide and execute datasets",
            expected: execute_data.obs_dim(),
            got: value_guide_data.obs_dim(),
        });
    }
    if config.steps.execute > 0 && !execute_data.has_actions() {
        return Err(PorError::ActionFree(
            "execute-policy training needs a dataset with actions".into(),
        ));
    }
    let obs_dim = value_guide_data.obs_dim();
    let (mut value, mut guide, mut execute) = init_networks(obs_dim, execute_data.act_dim(), config)?;
    let mut metrics = Vec::new();
    let behavior = train_value_guide(value_guide_data, config, &mut value, &mut guide, &mut metrics)?;
    train_execute(
        execute_data,
        config,
        &mut execute,
        &value,
        &guide,
        eval,
        config.steps.value_guide,
        &mut metrics,
    )?;
    let (low, high) = action_box(execute.act_dim());
    Ok(TrainOutcome {
        agent: PorAgent::new(guide, execute, low, high)?,
        value,
        behavior,
        metrics,
    })
}

/// Retrain value and guide from scratch on a new task's data while keeping
/// the execute-policy of `old` untouched.
pub fn transfer(old: &PorAgent, dataset: &TrajectoryDataset, config: &TrainConfig, eval: Option<&EvalSpec>) -> Result<TrainOutcome> {
    config.validate()?;
    if dataset.obs_dim() != old.execute.obs_dim() {
        return Err(PorError::DimensionMismatch {
            context: "transfer state dimension",
            expected: old.execute.obs_dim(),
            got: dataset.obs_dim(),
        });
    }
    let (mut value, mut guide, _) = init_networks(dataset.obs_dim(), old.execute.act_dim(), config)?;
    let mut metrics = Vec::new();
    let behavior = train_value_guide(dataset, config, &mut value, &mut guide, &mut metrics)?;
    let agent = PorAgent::new(guide, old.execute.clone(), old.action_low.clone(), old.action_high.clone())?;
    if let Some(spec) = eval {
        let r = evaluate(&spec.env, &agent, config.steps.eval_episodes, spec.seed)?;
        metrics.push(MetricsRow {
            step: config.steps.value_guide,
            eval_return_mean: Some(r.mean_return()),
            eval_return_std: Some(r.std_return()),
            eval_success_rate: Some(r.success_rate()),
            ..MetricsRow::default()
        });
    }
    debug_assert_eq!(agent.execute, old.execute);
    Ok(TrainOutcome {
        agent,
        value,
        behavior,
        metrics,
    })
}

/// Execute-policy from `d_e` alone; value and guide from `d_e` and `d_o`
/// together. `d_o` may lack actions.
pub fn mix_train(d_e: &TrajectoryDataset, d_o: &TrajectoryDataset, config: &TrainConfig, eval: Option<&EvalSpec>) -> Result<TrainOutcome> {
    if !d_e.has_actions() {
        return Err(PorError::ActionFree("the mix scheme needs actions in D_e".into()));
    }
    let combined = if d_o.is_empty() { d_e.clone() } else { d_e.merged(d_o)? };
    train_split(&combined, d_e, config, eval)
}
