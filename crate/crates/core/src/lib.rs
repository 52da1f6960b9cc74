//! Steady states of a two-host selection-mutation model with a nonlocal
//! mutation kernel: thresholds, endemic equilibria, their concentration as the
//! mutation scale vanishes, and their linear stability.

// `!(x < tol)` style checks deliberately treat NaN as failure.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod conv;
pub mod dynamics;
pub mod equilibrium;
pub mod error;
pub mod expr;
pub mod grid;
pub mod model;
pub mod operators;
pub mod output;
pub mod problem;
pub mod spectral;
pub mod stability;

pub use conv::{ConvMode, ConvolutionEngine};
pub use dynamics::{integrate, IntegrateOptions, Method, SystemState, Trajectory};
pub use equilibrium::{
    concentration_report, reconstruct, solve_coupled, solve_uncoupled, superposition_error,
    Classification, CoupledSolve, EquilibriumState, FixedPointOptions, UncoupledSolution,
};
pub use error::{Error, Result};
pub use grid::{Field, NodeRange, TraitGrid};
pub use model::{
    build_fitness, preset, validate_assumptions, BaseKernel, HostDerived, HostParams, HostSpec,
    ModelParams, ModelSpec, MutationKernel, Preset, Profile,
};
pub use operators::{LinearOp, OpKind};
pub use problem::{GridOptions, Problem};
pub use spectral::{power_iteration, spectral_gap, symmetric_spectrum, PowerOptions, SpectralResult};
pub use stability::{stability_spectrum, StabilityOptions, StabilityReport};
