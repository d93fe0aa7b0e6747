//! Effective conductivity of two-phase media with random unit-ball inclusions.
//!
//! The crate samples point processes on a periodic torus, rasterizes the
//! inclusions into a two-valued conductivity field, solves the periodic
//! corrector problem with an FFT Green-operator scheme, and compares the
//! resulting effective tensor with the dilute Clausius–Mossotti expansion.
//!
//! Numerical code is generic over [`Real`] (`f32`, `f64`); the closed-form
//! single-inclusion algebra also accepts exact rationals through [`Field`].

pub mod corrector;
pub mod error;
pub mod experiment;
pub mod extrapolation;
pub mod microstructure;
pub mod point_process;
pub mod scalar;
pub mod single_inclusion;
pub mod spatial;
pub mod spectral;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::{Field, Real};
pub use tensor::Tensor;

pub type Tensor64 = tensor::Tensor<f64>;
pub type Tensor32 = tensor::Tensor<f32>;
pub type PhaseModel64 = single_inclusion::PhaseModel<f64>;
pub type PhaseModel32 = single_inclusion::PhaseModel<f32>;
pub type PointSample64 = point_process::PointSample<f64>;
pub type PointSample32 = point_process::PointSample<f32>;
pub type ProcessSpec64 = point_process::ProcessSpec<f64>;
pub type GridField64 = microstructure::GridField<f64>;
pub type GridField32 = microstructure::GridField<f32>;
pub type SolverConfig64 = corrector::SolverConfig<f64>;
pub type CorrectorSolution64 = corrector::CorrectorSolution<f64>;
pub type SweepConfig64 = experiment::SweepConfig<f64>;
pub type DiluteSweepReport64 = experiment::DiluteSweepReport<f64>;
pub type GeometryReport64 = microstructure::GeometryReport<f64>;
