//! Path feasibility governor for linear MPC path tracking.
//!
//! The library couples a linear MPC tracker with a reference governor that
//! advances a path parameter only as far as the terminal set of the optimal
//! control problem allows, so that every auxiliary reference handed to the
//! controller keeps the problem recursively feasible. It ships a small
//! numerical kit (dense QP solver, Riccati solver), a quadrotor outer-loop
//! model, spherical-obstacle geometry, terminal-set synthesis, two path
//! planners, and a closed-loop simulation harness behind the `pathfg` CLI.

pub mod geometry;
pub mod governor;
pub mod model;
pub mod mpc;
pub mod numkit;
pub mod planner;
pub mod scenes;
pub mod sim;
pub mod terminal;
