//! Finite-element simulation and oblique-projection feedback stabilization
//! of 2D incompressible flow in vorticity form.

pub mod actuators;
pub mod cli;
pub mod control;
pub mod fem;
pub mod geometry;
pub mod mesh;
pub mod sim;
pub mod vorticity;
