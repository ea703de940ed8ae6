//! Greedy evaluation rollouts in the four-room environments.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::envs::collect::astar;
use crate::envs::fourroom::{FourRoomConfig, FourRoomEnv, MAX_ACTION};
use crate::error::Result;
use crate::policies::Policy;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeRecord {
    pub episode_return: f64,
    pub steps: usize,
    pub success: bool,
    pub river_entry: bool,
    /// The key was held before the goal was reached (always false for
    /// unsuccessful episodes).
    pub key_before_goal: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalReport {
    pub episodes: Vec<EpisodeRecord>,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

impl EvalReport {
    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn mean_return(&self) -> f64 {
        mean(self.episodes.iter().map(|e| e.episode_return))
    }

    /// Population standard deviation of episode returns.
    pub fn std_return(&self) -> f64 {
        let m = self.mean_return();
        mean(self.episodes.iter().map(|e| (e.episode_return - m).powi(2))).sqrt()
    }

    pub fn success_rate(&self) -> f64 {
        mean(self.episodes.iter().map(|e| e.success as u8 as f64))
    }

    pub fn river_rate(&self) -> f64 {
        mean(self.episodes.iter().map(|e| e.river_entry as u8 as f64))
    }

    /// Share of successful episodes that held the key before the goal;
    /// `None` without successes.
    pub fn key_before_goal_rate(&self) -> Option<f64> {
        let wins: Vec<&EpisodeRecord> = self.episodes.iter().filter(|e| e.success).collect();
        (!wins.is_empty()).then(|| mean(wins.iter().map(|e| e.key_before_goal as u8 as f64)))
    }

    pub fn mean_steps(&self) -> f64 {
        mean(self.episodes.iter().map(|e| e.steps as f64))
    }
}

/// Roll `policy` out greedily. The seed only drives start-state sampling.
pub fn evaluate(config: &FourRoomConfig, policy: &dyn Policy, episodes: usize, seed: u64) -> Result<EvalReport> {
    let mut env = FourRoomEnv::from_config(config.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = EvalReport::default();
    for _ in 0..episodes {
        let mut s = env.reset(&mut rng);
        let mut rec = EpisodeRecord {
            episode_return: 0.0,
            steps: 0,
            success: false,
            river_entry: false,
            key_before_goal: false,
        };
        loop {
            let a = policy.act(&s)?;
            let held_key = env.has_key();
            let o = env.step([a[0], a[1]]);
            rec.episode_return += o.reward;
            rec.steps += 1;
            rec.river_entry |= o.info.entered_river;
            if o.info.reached_goal {
                rec.success = true;
                rec.key_before_goal = held_key;
            }
            s = o.next_state;
            if o.done {
                break;
            }
        }
        report.episodes.push(rec);
    }
    Ok(report)
}

/// Plans a cell path to the goal with A* from wherever it stands and heads
/// for the next cell centre. Useful as an upper reference for evaluation.
pub struct ScriptedController {
    env: FourRoomEnv,
}

impl ScriptedController {
    pub fn new(config: &FourRoomConfig) -> Result<Self> {
        Ok(ScriptedController {
            env: FourRoomEnv::from_config(config.clone())?,
        })
    }
}

impl Policy for ScriptedController {
    fn act(&self, s: &[f64]) -> Result<Vec<f64>> {
        let map = self.env.map();
        let goal = self.env.config().goal;
        let p = [s[0], s[1]];
        let target = match (map.cell_of(p), map.cell_of(goal)) {
            (Some(from), Some(to)) => match astar(map, from, to) {
                Some(path) if path.len() > 2 => map.cell_center(path[1]),
                _ => goal,
            },
            _ => goal,
        };
        Ok(vec![
            (target[0] - p[0]).clamp(-MAX_ACTION, MAX_ACTION),
            (target[1] - p[1]).clamp(-MAX_ACTION, MAX_ACTION),
        ])
    }
}

/// Uniform random actions from a fixed-seed generator.
pub struct RandomPolicy {
    rng: std::cell::RefCell<ChaCha8Rng>,
}

impl RandomPolicy {
    pub fn new(seed: u64) -> Self {
        RandomPolicy {
            rng: std::cell::RefCell::new(ChaCha8Rng::seed_from_u64(seed)),
        }
    }
}

impl Policy for RandomPolicy {
    fn act(&self, _s: &[f64]) -> Result<Vec<f64>> {
        use rand::Rng;
        let mut r = self.rng.borrow_mut();
        Ok(vec![r.gen_range(-MAX_ACTION..MAX_ACTION), r.gen_range(-MAX_ACTION..MAX_ACTION)])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::TaskId;

    #[test]
    fn scripted_controller_always_succeeds() {
        let cfg = FourRoomConfig::builtin(TaskId::A);
        let r = evaluate(&cfg, &ScriptedController::new(&cfg).unwrap(), 20, 0).unwrap();
        assert_eq!(r.success_rate(), 1.0);
        assert_eq!(r.mean_return(), 1.0);
        assert_eq!(r.std_return(), 0.0);
    }

    #[test]
    fn random_policy_rarely_succeeds() {
        let cfg = FourRoomConfig::builtin(TaskId::A);
        let r = evaluate(&cfg, &RandomPolicy::new(1), 50, 0).unwrap();
        assert!(r.success_rate() <= 0.04, "{}", r.success_rate());
        assert!(r.episodes.iter().all(|e| e.steps <= 500));
    }

    #[test]
    fn zero_episodes() {
        let cfg = FourRoomConfig::builtin(TaskId::A);
        let r = evaluate(&cfg, &RandomPolicy::new(1), 0, 0).unwrap();
        assert!(r.is_empty());
        assert_eq!(r.success_rate(), 0.0);
        assert_eq!(r.key_before_goal_rate(), None);
    }
}
