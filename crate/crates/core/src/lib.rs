//! Policy-guided offline reinforcement learning.
//!
//! Training is split into three supervised stages that never share
//! gradients:
//!
//! * a state value function fitted by expectile (or sparse) regression,
//! * a *guide* policy that proposes the next state to reach,
//! * an *execute* policy, an inverse-dynamics model mapping a
//!   `(state, next_state)` pair to the action that realises it.
//!
//! At evaluation time the agent asks the guide where to go and the execute
//! policy how to get there. Because the execute policy is task agnostic it
//! can be frozen and reused while the guide is retrained on new rewards or
//! on larger action-free datasets.
//!
//! The crate also ships the environments used to exercise the method (a
//! discrete gridworld and a continuous four-room family), exact tabular
//! machinery for the gridworld, and a harness that checks the single-step
//! optimality bound on a synthetic MDP with known inverse dynamics.

pub mod approx;
pub mod boundcheck;
pub mod data;
pub mod envs;
mod error;
pub mod policies;
pub mod tabular;
pub mod trainer;
pub mod valuelearn;

pub use approx::{AdamState, Gradients, Head, Mlp, MlpSpec};
pub use data::{SplitScheme, SplitSpec, TrajectoryDataset, Transition};
pub use envs::{FourRoomEnv, GridWorld, TaskId};
pub use error::{PorError, Result};
pub use policies::{ExecutePolicy, GuidePolicy, PorAgent};
pub use trainer::{EvalReport, TrainConfig};
pub use valuelearn::{ValueEnsemble, ValueObjective};
