//! Finite element solver for stationary convective nanoparticle transport.
//!
//! The model couples a particle concentration `phi`, a temperature `T`, a
//! velocity `u` and a pressure `p` on a rectangular 2D domain. Concentration
//! is driven by Brownian diffusion and a thermophoretic drift from hot to
//! cold, temperature by conduction and convection, and momentum by buoyancy
//! with concentration-dependent viscosity. The discretization uses quadratic
//! Lagrange elements for the scalars and the P2/P1 Taylor-Hood pair for
//! velocity/pressure; the nonlinear system is solved by damped Newton with
//! the exact analytic Jacobian and a sparse direct linear solver.
//!
//! Module map:
//! - [`mesh`]: structured triangulations of rectangles with tagged boundaries
//! - [`fespace`]: Lagrange bases, dof maps, triangle quadrature
//! - [`model`]: nondimensional parameters, coefficient laws, flux, cut-off
//! - [`assembly`]: residual and Jacobian assembly with constraint rows
//! - [`solver`]: damped Newton, sparse LU, parameter continuation
//! - [`analysis`]: norms, manufactured solutions, convergence-order studies
//! - [`vtk`]: legacy ASCII VTK output
//! - [`driver`]: run orchestration shared by the CLI

pub mod analysis;
pub mod assembly;
pub mod driver;
pub mod fespace;
pub mod geom;
pub mod mesh;
pub mod model;
pub mod solver;
pub mod vtk;

pub(crate) mod exec;

pub use geom::{Mat2, Vec2};
