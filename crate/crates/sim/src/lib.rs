//! Kinematic soccer-field and docking simulators for robot state machines.
//!
//! An episode runs a transition function in closed loop: each tick the
//! simulator observes its world into input and variable bindings, evaluates
//! the transition function, and runs the built-in controller for the
//! resulting state. [`grid`] aggregates episodes into success-rate heatmaps;
//! [`search`] has the exhaustive parameter-search baseline and
//! first-divergence correction generation.

pub mod attacker;
pub mod corpus;
pub mod docker;
pub mod episode;
pub mod fixtures;
pub mod geom;
pub mod grid;
pub mod search;
pub mod world;

pub use episode::{
    check_compatible, outcome, run_episode, Episode, Outcome, Scenario, SimError, Simulator, Task,
};
pub use world::WorldState;
