//! Gridworld and continuous four-room environments with data collectors.

pub mod collect;
pub mod fourroom;
pub mod grid;
pub mod toy;

pub use collect::{astar, collect, CollectorSpec};
pub use fourroom::{FourRoomConfig, FourRoomEnv, StepInfo, StepOutcome, TaskId, WallMap};
pub use grid::{grid_step, GridWorld};
pub use toy::{build_toy_dataset, ToyLayout};
