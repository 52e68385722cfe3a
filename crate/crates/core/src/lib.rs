//! Switched sliding-mode control of FES-driven stationary cycling: rider
//! model, stimulation pattern, controller, hybrid simulation and stability
//! certification.

pub mod analysis;
pub mod controller;
pub mod dynamics;
pub mod kinematics;
pub mod numeric;
pub mod simulator;


pub use controller::{ControllerGains, TrajectorySpec};
pub use dynamics::{CrankState, DynamicsParams, PropertyConstants, Rider};
pub use kinematics::{AngleArc, Region, RegionMap, RiderGeometry, Side};
