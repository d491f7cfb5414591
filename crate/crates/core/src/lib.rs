//! Pseudospectral simulation of the stochastic harmonic map flow
//! `du = (Δu + u|∇u|² + F_φ u) dt + u × dW` from the 2-torus into the unit
//! sphere, with energy diagnostics, local-energy monitoring and compensated
//! regularity probes.

pub mod bubble;
pub mod diagnostics;
pub mod field;
pub mod flow;
pub mod helein;
pub mod initial;
pub mod noise;

pub use bubble::{BallCover, BlowupEvent, MonitorConfig, WindowKernel, WindowMode, DEFAULT_DILATION};
pub use diagnostics::{energy, EnsembleSummary};
pub use field::{Grid, Norm, ScalarField, Spectrum, TensorField32, VectorField3};
pub use flow::{
    coupled_evolve, evolve, step, CoupledRecord, EvolveOptions, FlowError, FlowState, SchemeKind, StepScheme,
    TrajectoryRecord,
};
pub use helein::{GainSeries, HeleinSplit, WenteOperator};
pub use initial::{make_initial, perturb, InitialData, RandomSmoothParams};
pub use noise::{trajectory_rng, NoiseModel};
