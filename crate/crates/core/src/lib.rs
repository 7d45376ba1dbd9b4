//! Continuous Galerkin space-time finite elements for the transient
//! advection-diffusion equation
//!
//! ```text
//!   du/dt + (a . grad)u - nu * lap(u) = f      in U x (0,T]
//! ```
//!
//! discretised on hypercube meshes of the space-time cylinder: time is the
//! last coordinate axis and the whole problem is solved in one shot as a
//! (d+1)-dimensional boundary value problem with Dirichlet data on the
//! lateral boundary and on the initial slab. A Galerkin/least-squares term
//! stabilises the advective limit, a residual error estimator drives
//! adaptive isotropic refinement with 2:1 balancing and hanging-node
//! constraints, and a classical Crank-Nicolson time marcher is included as
//! a sequential reference for comparison studies.
//!
//! Modules follow the pipeline: [`mesh`] -> [`basis`] -> [`problem`] ->
//! [`assembly`] -> [`linsolve`] -> [`estimate`] -> [`adapt`], with
//! [`seqref`] on the side and [`report`]/[`vtk`] for output.

pub mod adapt;
pub mod assembly;
pub mod basis;
pub mod error;
pub mod estimate;
pub mod linsolve;
pub mod mesh;
pub mod problem;
pub mod report;
pub mod seqref;
pub mod vtk;

pub use error::{Error, Result};
