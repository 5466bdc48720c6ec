//! Stochastic transient analysis of on-chip power-distribution grids.
//!
//! The grid's electrical parameters (conductance, capacitance, drain
//! currents) vary with manufacturing: interconnect width and thickness drive
//! the conductance matrix, channel length drives the gate share of the
//! capacitance and the load currents. This crate expands the resulting random
//! node-voltage response in a Hermite polynomial basis of the underlying
//! Gaussian variables and solves one coupled (Galerkin-projected) linear
//! system for the expansion coefficients, instead of thousands of Monte Carlo
//! transients. Means, variances, higher moments, and voltage-drop
//! distributions then come straight from the coefficients.
//!
//! Pipeline:
//!
//! 1. [`netlist`] parses or generates the grid (resistors, node caps, PWL
//!    drain currents, supply pins with package resistance).
//! 2. [`mna`] stamps nominal and sensitivity MNA matrices.
//! 3. [`chaos`] builds the Hermite basis: multi-indices, norms, triple
//!    products.
//! 4. [`galerkin`] assembles the augmented block system coupling all
//!    coefficients, plus the decoupled shared-factorization path for
//!    stochastic-rhs grids.
//! 5. [`solver`] provides sparse LDL^T factorization and backward-Euler
//!    stepping.
//! 6. [`analysis`] runs the chaos engine plus the Monte Carlo and
//!    Gauss-Hermite quadrature reference engines, and extracts moments,
//!    histograms, and comparison reports.

pub mod analysis;
pub mod chaos;
pub mod error;
pub mod galerkin;
pub mod mna;
pub mod netlist;
pub mod solver;

pub use error::{Error, Result};
