#![allow(dead_code)]

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use por_core::data::Batch;
use por_core::envs::{GridWorld, ToyLayout};
use por_core::policies::{
    execute_loss, exp_weights, guide_loss_explicit, guide_loss_weighted, guide_noise, BehaviorGuideDensity, ExecutePolicy,
    GuidePolicy, StateModel,
};
use por_core::{ValueEnsemble, ValueObjective};

/// Outcome of comparing analytic gradients with central differences.
#[derive(Debug, Default, Clone, Copy)]
pub struct GradCheck {
    pub max_rel: f64,
    pub checked: usize,
    /// Coordinates where the difference quotient itself is unstable, i.e.
    /// the step straddles a ReLU kink.
    pub skipped: usize,
}

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-4;

/// Relative error with a floor proportional to the loss magnitude: at
/// step `h` the difference quotient carries rounding noise of order
/// `eps |L| / h`, so smaller gradients cannot be resolved.
fn rel(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Check `count` random coordinates (all of them when `count` exceeds
/// the parameter count) of `analytic` against central differences of
/// `loss`.
pub fn check_grad<R: Rng, F: FnMut(&[f64]) -> f64>(
    params: &[f64],
    analytic: &[f64],
    mut loss: F,
    count: usize,
    rng: &mut R,
) -> GradCheck {
    assert_eq!(params.len(), analytic.len());
    let idx: Vec<usize> = if count >= params.len() {
        (0..params.len()).collect()
    } else {
        (0..count).map(|_| rng.gen_range(0..params.len())).collect()
    };
    let mut out = GradCheck::default();
    let floor = 1e-6 * loss(params).abs().max(1.0);
    let mut p = params.to_vec();
    let mut central = |i: usize, h: f64| {
        p[i] = params[i] + h;
        let up = loss(&p);
        p[i] = params[i] - h;
        let down = loss(&p);
        p[i] = params[i];
        (up - down) / (2.0 * h)
    };
    for i in idx {
        let fd = central(i, FD_STEP);
        let r = rel(analytic[i], fd, floor);
        if r >= FD_TOL {
            let finer = central(i, FD_STEP / 10.0);
            if rel(fd, finer, floor) > FD_TOL {
                out.skipped += 1;
                continue;
            }
        }
        out.max_rel = out.max_rel.max(r);
        out.checked += 1;
    }
    out
}

pub fn random_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-scale..scale))
}

/// A batch of random transitions; roughly one in five is terminal.
pub fn random_batch<R: Rng>(rng: &mut R, rows: usize, obs_dim: usize, act_dim: usize) -> Batch {
    let states = random_matrix(rng, rows, obs_dim, 2.0);
    let next_states = &states + &random_matrix(rng, rows, obs_dim, 0.3);
    Batch {
        states,
        actions: Some(random_matrix(rng, rows, act_dim, 0.5)),
        rewards: (0..rows).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        next_states,
        dones: (0..rows).map(|_| rng.gen_bool(0.2)).collect(),
    }
}

/// A random gridworld layout: a few biased random walks from the start
/// that reach the goal, plus scattered single transitions.
pub fn random_layout(rng: &mut ChaCha8Rng) -> ToyLayout {
    let size = rng.gen_range(4..9);
    let world = GridWorld {
        width: size,
        height: size,
        start: (0, 0),
        goal: (size - 1, rng.gen_range(0..size)),
    };
    let mut trajectories = Vec::new();
    while trajectories.len() < rng.gen_range(1..4) {
        let mut s = world.start;
        let mut acts = Vec::new();
        while s != world.goal && acts.len() < 80 {
            let a = if rng.gen_bool(0.5) {
                rng.gen_range(0..8)
            } else {
                // Head roughly toward the goal along one axis.
                let (dx, dy) = (world.goal.0 - s.0, world.goal.1 - s.1);
                match (dx.signum(), dy.signum()) {
                    (1, 1) => 1,
                    (1, 0) => 2,
                    (1, -1) => 3,
                    (0, -1) => 4,
                    (-1, -1) => 5,
                    (-1, 0) => 6,
                    (-1, 1) => 7,
                    _ => 0,
                }
            };
            s = world.next_cell(s, a).unwrap();
            acts.push(a);
        }
        if s == world.goal {
            trajectories.push(acts);
        }
    }
    let random = (0..rng.gen_range(0..15))
        .map(|_| ((rng.gen_range(0..size), rng.gen_range(0..size)), rng.gen_range(0..8)))
        .collect();
    ToyLayout {
        world,
        trajectories,
        random,
    }
}


// Gradient cases shared by the gradient tests and the acceptance run.

pub const GRAD_SEEDS: u64 = 10;
pub const GRAD_BATCHES: [usize; 3] = [1, 7, 32];
const COORDS: usize = 60;
const OBS: usize = 3;
const ACT: usize = 2;

fn value(seed: u64, objective: ValueObjective, layer_norm: bool) -> ValueEnsemble {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = ValueEnsemble::new(OBS, &[12, 12], layer_norm, objective, 0.8, 0.99, 0.05, 1e-3, &mut rng).unwrap();
    // Targets differ from the online nets, as they do after training.
    let other = ValueEnsemble::new(OBS, &[12, 12], layer_norm, objective, 0.8, 0.99, 0.05, 1e-3, &mut rng).unwrap();
    v.target = other.online.clone();
    v
}

fn merge(a: GradCheck, b: GradCheck) -> GradCheck {
    GradCheck {
        max_rel: a.max_rel.max(b.max_rel),
        checked: a.checked + b.checked,
        skipped: a.skipped + b.skipped,
    }
}

/// Both online value networks under `objective`.
pub fn value_case(objective: ValueObjective, seed: u64, bs: usize) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
    let v = value(seed, objective, seed % 2 == 1);
    let batch = random_batch(&mut rng, bs, OBS, ACT);
    let analytic = v.loss_and_grads(&batch).unwrap();
    let mut out = GradCheck::default();
    for k in 0..2 {
        let c = check_grad(
            v.online[k].params(),
            analytic.grads[k].as_slice(),
            |p| {
                let mut w = v.clone();
                w.online[k].params_mut().copy_from_slice(p);
                w.loss_and_grads(&batch).unwrap().loss
            },
            COORDS,
            &mut rng,
        );
        out = merge(out, c);
    }
    out
}

fn guide(seed: u64, layer_norm: bool) -> GuidePolicy {
    let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
    GuidePolicy::new(OBS, &[12, 12], layer_norm, seed % 3 != 0, &mut rng).unwrap()
}

pub fn weighted_guide_case(seed: u64, bs: usize) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
    let v = value(seed, ValueObjective::Expectile, false);
    let g = guide(seed, seed % 2 == 0);
    let batch = random_batch(&mut rng, bs, OBS, ACT);
    // A small temperature makes some weights hit the clip.
    let alpha = if seed % 2 == 0 { 0.05 } else { 3.0 };
    let (_, grads) = guide_loss_weighted(&batch, &g, &v, alpha).unwrap();
    check_grad(
        g.net().params(),
        grads.as_slice(),
        |p| {
            let mut h = g.clone();
            h.model.net.params_mut().copy_from_slice(p);
            guide_loss_weighted(&batch, &h, &v, alpha).unwrap().0
        },
        COORDS,
        &mut rng,
    )
}

pub fn explicit_guide_case(seed: u64, bs: usize) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
    let v = value(seed, ValueObjective::Expectile, false);
    let g = guide(seed, false);
    let behavior = BehaviorGuideDensity {
        model: StateModel::new(OBS, &[10], seed % 2 == 0, true, &mut rng).unwrap(),
    };
    let batch = random_batch(&mut rng, bs, OBS, ACT);
    let noise = guide_noise(&mut rng, bs, OBS);
    let alpha = [0.0, 0.5, 5.0][seed as usize % 3];
    let (_, grads) = guide_loss_explicit(&batch, &g, &v, &behavior, alpha, noise.view()).unwrap();
    check_grad(
        g.net().params(),
        grads.as_slice(),
        |p| {
            let mut h = g.clone();
            h.model.net.params_mut().copy_from_slice(p);
            guide_loss_explicit(&batch, &h, &v, &behavior, alpha, noise.view()).unwrap().0
        },
        COORDS,
        &mut rng,
    )
}

/// Unweighted and residual-weighted execute likelihood.
pub fn execute_case(seed: u64, bs: usize) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(400 + seed);
    let e = ExecutePolicy::new(OBS, ACT, &[12, 12], seed % 2 == 1, &mut rng).unwrap();
    let batch = random_batch(&mut rng, bs, OBS, ACT);
    let v = value(seed, ValueObjective::Expectile, false);
    let weights = exp_weights(&v.residuals(&batch).unwrap(), 0.5).unwrap();
    let mut out = GradCheck::default();
    for w in [None, Some(weights.as_slice())] {
        let (_, grads) = execute_loss(&batch, &e, w).unwrap();
        let c = check_grad(
            e.net.params(),
            grads.as_slice(),
            |p| {
                let mut f = e.clone();
                f.net.params_mut().copy_from_slice(p);
                execute_loss(&batch, &f, w).unwrap().0
            },
            COORDS,
            &mut rng,
        );
        out = merge(out, c);
    }
    out
}

/// Gradient of `min V` with respect to the state.
pub fn value_input_case(seed: u64) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
    let v = value(seed, ValueObjective::Expectile, seed % 2 == 0);
    let states = random_matrix(&mut rng, 5, OBS, 2.0);
    let (_, g) = v.value_input_grad(states.view()).unwrap();
    let mut out = GradCheck::default();
    for r in 0..5 {
        let row = states.row(r).to_vec();
        let c = check_grad(&row, g.row(r).as_slice().unwrap(), |x| v.value(x).unwrap(), OBS, &mut rng);
        out = merge(out, c);
    }
    out
}

/// A check passes when every resolved coordinate is within tolerance and
/// at most a tenth were unresolvable kinks.
pub fn grad_ok(c: &GradCheck) -> bool {
    c.checked > 0 && c.skipped * 10 <= c.checked + c.skipped && c.max_rel < FD_TOL
}
